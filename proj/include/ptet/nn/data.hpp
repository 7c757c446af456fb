#pragma once

#include <filesystem>
#include <string>

#include <torch/torch.h>

#include "json.hpp"
#include "ptet/codec/eim.hpp"

namespace ptet::nn {

enum class InputKind { e2im, eim, e2im_patch };
InputKind parse_input_kind(const std::string& s);
std::string to_string(InputKind k);

// Standardise raw difference frames and map them to model images. The codec
// is linear after standardisation, so it runs as one matrix product.
class InputEncoder {
 public:
  InputEncoder() = default;
  InputEncoder(codec::FrameStats stats, InputKind kind);

  // [N, 104] raw -> [N, 104] standardised.
  torch::Tensor normalize(const torch::Tensor& raw) const;
  // [B, 104] standardised -> [B, S, S].
  torch::Tensor images(const torch::Tensor& normalized) const;
  torch::Tensor operator()(const torch::Tensor& raw) const { return images(normalize(raw)); }

  int image_size() const { return size_; }
  InputKind kind() const { return kind_; }
  const codec::FrameStats& stats() const { return stats_; }

  nlohmann::json to_json() const;
  static InputEncoder from_json(const nlohmann::json& j);

 private:
  codec::FrameStats stats_;
  InputKind kind_ = InputKind::e2im;
  int size_ = 64;
  torch::Tensor mean_, inv_std_, op_;
};

// [104, S*S] linear image operator of the codec on standardised frames.
torch::Tensor codec_operator(InputKind kind);

struct TensorSplit {
  torch::Tensor frames;  // [N, 104] standardised
  torch::Tensor maps;    // [N, 48, 48]
  torch::Tensor ids;     // [N, 2] (subset, index)

  int64_t size() const { return frames.defined() ? frames.size(0) : 0; }
  TensorSplit select(const torch::Tensor& indices) const;
  TensorSplit head(int64_t n) const;
};

// Statistics of the training split (noisy voltages when requested).
codec::FrameStats training_stats(const std::filesystem::path& dataset, bool noisy = false);

TensorSplit load_tensor_split(const std::filesystem::path& dataset, const std::string& split,
                              const InputEncoder& encoder, bool noisy = false);

// Seeded random subset of n samples (label budgets).
TensorSplit label_subset(const TensorSplit& split, int64_t n, std::uint64_t seed);

}  // namespace ptet::nn
