#pragma once

#include <span>
#include <stdexcept>

#include <Eigen/Dense>

#include "ptet/core/grid.hpp"

namespace ptet::eval {

class TikhonovError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// One-step linearised reconstruction x = argmin ||J x - dv||^2 + lambda ||x||^2
// on the pixel basis. lambda = relative_lambda * trace(J^T J) / pixels.
class TikhonovReconstructor {
 public:
  TikhonovReconstructor(const Eigen::MatrixXd& jacobian, double relative_lambda = 1e-2, int map_size = 48);

  double lambda() const { return lambda_; }
  // Signed conductivity update, pre-normalisation.
  Eigen::VectorXd solve(std::span<const double> dv) const;
  // |x| scaled to [0, 1]; all-zero when x is zero.
  Grid2D<double> reconstruct(std::span<const double> dv) const;

 private:
  Eigen::MatrixXd operator_;  // pixels x measurements
  double lambda_ = 0;
  int map_size_ = 48;
};

}  // namespace ptet::eval
