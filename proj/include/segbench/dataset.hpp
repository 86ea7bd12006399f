#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <torch/torch.h>

#include "segbench/preprocess.hpp"
#include "segbench/synthdata.hpp"

// Preprocessed partitions as tensors, plus deterministic batching.
namespace segbench::data {

struct TensorSet {
  torch::Tensor images;  // [N,1,R,R] float32 in [-1,1]
  torch::Tensor masks;   // [N,R,R] uint8 in {0,1}; undefined when masks are absent
  std::vector<std::string> ids;
  std::vector<synth::Sex> sexes;

  std::int64_t size() const { return images.defined() ? images.size(0) : 0; }
  bool has_masks() const { return masks.defined(); }
};

/// Runs the preprocessing pipeline on every sample. With `with_masks`, every
/// sample must carry a mask (DataError otherwise); without it masks are dropped.
TensorSet to_tensors(const synth::DatasetPartition& p, const prep::PreprocessConfig& cfg, bool with_masks);

TensorSet select(const TensorSet& s, const std::vector<std::int64_t>& idx);

/// Images of both sets; masks are kept only when both sets have them.
TensorSet concat(const TensorSet& a, const TensorSet& b);

/// Seeded split into (train, validation); validation gets round(fraction * n),
/// at least one sample, and train keeps at least one.
std::pair<TensorSet, TensorSet> split_validation(const TensorSet& s, double fraction, std::uint64_t seed);

/// Epoch-wise reshuffled index batches. Batches never straddle epochs; a
/// batch larger than the set is filled by repeating the permutation.
class BatchSampler {
 public:
  BatchSampler(std::int64_t n, std::int64_t batch, std::uint64_t seed);
  std::vector<std::int64_t> next();

 private:
  void reshuffle();
  std::int64_t n_, batch_;
  std::uint64_t seed_, epoch_ = 0;
  std::vector<std::int64_t> order_;
  std::size_t pos_ = 0;
};

torch::Tensor index_tensor(const std::vector<std::int64_t>& idx);

Mask to_mask(const torch::Tensor& m);  // [H,W] integer tensor -> Mask
Image to_image(const torch::Tensor& x);  // [H,W] or [1,H,W] tensor -> Image

}  // namespace segbench::data
