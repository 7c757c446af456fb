#include "ptet/nn/data.hpp"

#include <stdexcept>

#include "ptet/data/dataset.hpp"
#include "ptet/nn/train.hpp"

namespace ptet::nn {

using nlohmann::json;

InputKind parse_input_kind(const std::string& s) {
  if (s == "e2im") return InputKind::e2im;
  if (s == "eim") return InputKind::eim;
  if (s == "e2im_patch") return InputKind::e2im_patch;
  throw std::invalid_argument("unknown input kind '" + s + "' (expected e2im, eim or e2im_patch)");
}

std::string to_string(InputKind k) {
  switch (k) {
    case InputKind::e2im: return "e2im";
    case InputKind::eim: return "eim";
    case InputKind::e2im_patch: return "e2im_patch";
  }
  return "e2im";
}

torch::Tensor codec_operator(InputKind kind) {
  const int size = kind == InputKind::eim ? codec::kEimSize : codec::kE2imSize;
  auto op = torch::zeros({codec::kFrameLength, size * size}, torch::kFloat64);
  auto acc = op.accessor<double, 2>();
  std::vector<double> unit(codec::kFrameLength, 0.0);
  for (int k = 0; k < codec::kFrameLength; ++k) {
    unit.assign(codec::kFrameLength, 0.0);
    unit[k] = 1.0;
    const auto eim = codec::build_eim(std::span<const double>(unit));
    const auto img = kind == InputKind::eim ? eim
                     : kind == InputKind::e2im ? codec::build_e2im(eim)
                                               : codec::build_e2im(eim, codec::UpsampleMode::patch_replicate);
    for (int i = 0; i < size * size; ++i) acc[k][i] = img.values()[i];
  }
  return op.to(torch::kFloat32);
}

InputEncoder::InputEncoder(codec::FrameStats stats, InputKind kind) : stats_(std::move(stats)), kind_(kind) {
  if (stats_.mean.size() != static_cast<std::size_t>(codec::kFrameLength) || stats_.std.size() != stats_.mean.size())
    throw std::invalid_argument("input encoder: statistics must cover 104 channels");
  size_ = kind == InputKind::eim ? codec::kEimSize : codec::kE2imSize;
  mean_ = torch::tensor(stats_.mean, torch::kFloat64);
  std::vector<double> inv(stats_.std.size());
  for (std::size_t i = 0; i < inv.size(); ++i) inv[i] = 1.0 / std::max(stats_.std[i], codec::FrameStats::kStdFloor);
  inv_std_ = torch::tensor(inv, torch::kFloat64);
  op_ = codec_operator(kind);
}

torch::Tensor InputEncoder::normalize(const torch::Tensor& raw) const {
  if (raw.dim() != 2 || raw.size(1) != codec::kFrameLength)
    throw std::invalid_argument("input encoder: expected [N, 104] frames");
  return ((raw.to(torch::kFloat64) - mean_) * inv_std_).to(torch::kFloat32);
}

torch::Tensor InputEncoder::images(const torch::Tensor& normalized) const {
  return torch::matmul(normalized, op_).reshape({normalized.size(0), size_, size_});
}

json InputEncoder::to_json() const {
  return {{"kind", to_string(kind_)}, {"mean", stats_.mean}, {"std", stats_.std}};
}

InputEncoder InputEncoder::from_json(const json& j) {
  codec::FrameStats s;
  s.mean = j.at("mean").get<std::vector<double>>();
  s.std = j.at("std").get<std::vector<double>>();
  return InputEncoder(std::move(s), parse_input_kind(j.at("kind")));
}

TensorSplit TensorSplit::select(const torch::Tensor& idx) const {
  return {frames.index_select(0, idx), maps.index_select(0, idx), ids.index_select(0, idx)};
}

TensorSplit TensorSplit::head(int64_t n) const {
  n = std::min(n, size());
  return {frames.narrow(0, 0, n), maps.narrow(0, 0, n), ids.narrow(0, 0, n)};
}

codec::FrameStats training_stats(const std::filesystem::path& dataset, bool noisy) {
  const auto d = data::load_split(dataset, "train");
  if (noisy && d.voltages_noisy.empty()) throw std::invalid_argument("dataset has no noisy voltages: " + dataset.string());
  return codec::FrameStats::compute(noisy ? d.voltages_noisy : d.voltages);
}

TensorSplit load_tensor_split(const std::filesystem::path& dataset, const std::string& split,
                              const InputEncoder& encoder, bool noisy) {
  auto d = data::load_split(dataset, split);
  if (noisy && d.voltages_noisy.empty()) throw std::invalid_argument("dataset has no noisy voltages: " + dataset.string());
  auto& v = noisy ? d.voltages_noisy : d.voltages;
  const int64_t n = d.count;
  TensorSplit t;
  t.frames = encoder.normalize(torch::from_blob(v.data(), {n, codec::kFrameLength}, torch::kFloat32));
  t.maps = torch::from_blob(d.maps.data(), {n, 48, 48}, torch::kFloat32).clone();
  t.ids = torch::from_blob(d.ids.data(), {n, 2}, torch::kInt32).clone();
  return t;
}

TensorSplit label_subset(const TensorSplit& split, int64_t n, std::uint64_t seed) {
  if (n <= 0) throw std::invalid_argument("label budget must be positive");
  if (n > split.size()) throw std::invalid_argument("label budget exceeds the training split");
  auto perm = torch::randperm(split.size(), make_generator(seed, 17), torch::kLong);
  return split.select(perm.narrow(0, 0, n));
}

}  // namespace ptet::nn
