#include "segbench/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "segbench/errors.hpp"
#include "segbench/rng.hpp"

namespace segbench::data {

TensorSet to_tensors(const synth::DatasetPartition& p, const prep::PreprocessConfig& cfg, bool with_masks) {
  cfg.validate();
  if (p.empty()) throw DataError("partition '" + p.domain + "' is empty");
  const auto n = static_cast<std::int64_t>(p.size());
  const int r = cfg.resolution;
  TensorSet out;
  out.images = torch::empty({n, 1, r, r}, torch::kFloat32);
  if (with_masks) out.masks = torch::empty({n, r, r}, torch::kUInt8);
  auto img_acc = out.images.accessor<float, 4>();
  for (std::int64_t i = 0; i < n; ++i) {
    const auto& s = p.samples[static_cast<std::size_t>(i)];
    const auto img = prep::preprocess_image(s.pixels, cfg);
    for (int y = 0; y < r; ++y)
      for (int x = 0; x < r; ++x) img_acc[i][0][y][x] = img(y, x);
    if (with_masks) {
      if (!s.mask) throw DataError("sample " + s.id + " has no mask");
      const auto m = prep::preprocess_mask(*s.mask, cfg);
      auto m_acc = out.masks.accessor<std::uint8_t, 3>();
      for (int y = 0; y < r; ++y)
        for (int x = 0; x < r; ++x) m_acc[i][y][x] = m(y, x);
    }
    out.ids.push_back(s.id);
    out.sexes.push_back(s.sex);
  }
  return out;
}

torch::Tensor index_tensor(const std::vector<std::int64_t>& idx) {
  return torch::tensor(idx, torch::TensorOptions().dtype(torch::kInt64));
}

TensorSet select(const TensorSet& s, const std::vector<std::int64_t>& idx) {
  TensorSet out;
  const auto t = index_tensor(idx);
  out.images = s.images.index_select(0, t);
  if (s.has_masks()) out.masks = s.masks.index_select(0, t);
  for (auto i : idx) {
    out.ids.push_back(s.ids[static_cast<std::size_t>(i)]);
    out.sexes.push_back(s.sexes[static_cast<std::size_t>(i)]);
  }
  return out;
}

TensorSet concat(const TensorSet& a, const TensorSet& b) {
  TensorSet out;
  out.images = torch::cat({a.images, b.images}, 0);
  if (a.has_masks() && b.has_masks()) out.masks = torch::cat({a.masks, b.masks}, 0);
  out.ids = a.ids;
  out.ids.insert(out.ids.end(), b.ids.begin(), b.ids.end());
  out.sexes = a.sexes;
  out.sexes.insert(out.sexes.end(), b.sexes.begin(), b.sexes.end());
  return out;
}

std::pair<TensorSet, TensorSet> split_validation(const TensorSet& s, double fraction, std::uint64_t seed) {
  const auto n = s.size();
  if (n < 2) throw DataError("need at least two samples to hold out a validation split");
  auto n_val = static_cast<std::int64_t>(std::llround(fraction * static_cast<double>(n)));
  n_val = std::clamp<std::int64_t>(n_val, 1, n - 1);
  std::vector<std::int64_t> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  Rng rng(mix_seed(seed, 0x7a11));
  rng.shuffle(order.begin(), order.end());
  std::vector<std::int64_t> val(order.begin(), order.begin() + n_val);
  std::vector<std::int64_t> train(order.begin() + n_val, order.end());
  std::sort(val.begin(), val.end());
  std::sort(train.begin(), train.end());
  return {select(s, train), select(s, val)};
}

BatchSampler::BatchSampler(std::int64_t n, std::int64_t batch, std::uint64_t seed) : n_(n), batch_(batch), seed_(seed) {
  if (n <= 0 || batch <= 0) throw std::invalid_argument("BatchSampler needs a non-empty set and a positive batch size");
  reshuffle();
}

void BatchSampler::reshuffle() {
  order_.resize(static_cast<std::size_t>(n_));
  std::iota(order_.begin(), order_.end(), 0);
  Rng rng(mix_seed(seed_, epoch_++));
  rng.shuffle(order_.begin(), order_.end());
  pos_ = 0;
}

std::vector<std::int64_t> BatchSampler::next() {
  std::vector<std::int64_t> out;
  out.reserve(static_cast<std::size_t>(batch_));
  if (batch_ >= n_) {
    while (static_cast<std::int64_t>(out.size()) < batch_) out.push_back(order_[out.size() % order_.size()]);
    reshuffle();
    return out;
  }
  if (pos_ + static_cast<std::size_t>(batch_) > order_.size()) reshuffle();
  out.assign(order_.begin() + static_cast<std::ptrdiff_t>(pos_), order_.begin() + static_cast<std::ptrdiff_t>(pos_ + batch_));
  pos_ += static_cast<std::size_t>(batch_);
  return out;
}

Mask to_mask(const torch::Tensor& m) {
  const auto c = m.to(torch::kUInt8).contiguous();
  if (c.dim() != 2) throw std::invalid_argument("to_mask expects [H,W]");
  Mask out(static_cast<int>(c.size(0)), static_cast<int>(c.size(1)));
  std::copy_n(c.data_ptr<std::uint8_t>(), out.values.size(), out.values.begin());
  return out;
}

Image to_image(const torch::Tensor& x) {
  auto c = x.to(torch::kFloat32).contiguous();
  if (c.dim() == 3) c = c.squeeze(0);
  if (c.dim() != 2) throw std::invalid_argument("to_image expects [H,W] or [1,H,W]");
  Image out(static_cast<int>(c.size(0)), static_cast<int>(c.size(1)));
  std::copy_n(c.data_ptr<float>(), out.values.size(), out.values.begin());
  return out;
}

}  // namespace segbench::data
