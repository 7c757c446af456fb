#include "ptet/eval/tikhonov.hpp"

#include <cmath>

namespace ptet::eval {

TikhonovReconstructor::TikhonovReconstructor(const Eigen::MatrixXd& jacobian, double relative_lambda,
                                             int map_size)
    : map_size_(map_size) {
  if (!(relative_lambda > 0)) throw std::invalid_argument("tikhonov: lambda must be positive");
  if (jacobian.cols() != static_cast<Eigen::Index>(map_size) * map_size)
    throw std::invalid_argument("tikhonov: jacobian columns do not match the pixel grid");
  lambda_ = relative_lambda * jacobian.squaredNorm() / static_cast<double>(jacobian.cols());
  if (!(lambda_ > 0) || !std::isfinite(lambda_)) throw TikhonovError("tikhonov: degenerate jacobian");
  // Push-through identity: (J^T J + lI)^-1 J^T = J^T (J J^T + lI)^-1, which
  // only needs an m x m factorisation.
  Eigen::MatrixXd gram = jacobian * jacobian.transpose();
  gram.diagonal().array() += lambda_;
  Eigen::LLT<Eigen::MatrixXd> llt(gram);
  if (llt.info() != Eigen::Success) throw TikhonovError("tikhonov: regularised system is not positive definite");
  const Eigen::MatrixXd inv = llt.solve(Eigen::MatrixXd::Identity(gram.rows(), gram.cols()));
  operator_ = jacobian.transpose() * inv;
  if (!operator_.allFinite()) throw TikhonovError("tikhonov: ill-conditioned system for this lambda");
}

Eigen::VectorXd TikhonovReconstructor::solve(std::span<const double> dv) const {
  if (static_cast<Eigen::Index>(dv.size()) != operator_.cols())
    throw std::invalid_argument("tikhonov: frame length mismatch");
  return operator_ * Eigen::Map<const Eigen::VectorXd>(dv.data(), static_cast<Eigen::Index>(dv.size()));
}

Grid2D<double> TikhonovReconstructor::reconstruct(std::span<const double> dv) const {
  const Eigen::VectorXd x = solve(dv).cwiseAbs();
  Grid2D<double> img(map_size_, map_size_, 0.0);
  const double peak = x.maxCoeff();
  if (peak > 0)
    for (Eigen::Index i = 0; i < x.size(); ++i) img.values()[i] = x[i] / peak;
  return img;
}

}  // namespace ptet::eval
