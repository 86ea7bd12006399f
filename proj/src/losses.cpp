#include "segbench/losses.hpp"

#include <cmath>
#include <stdexcept>

#include "segbench/errors.hpp"

namespace segbench::losses {
namespace F = torch::nn::functional;

namespace {

const double kLogFloorLn = std::log(kLogFloor);

void check_seg_inputs(const torch::Tensor& logits, const torch::Tensor& mask) {
  if (logits.dim() != 4 || logits.size(1) != 2) throw std::invalid_argument("segmentation logits must be [B,2,H,W]");
  if (mask.dim() != 3 || mask.size(0) != logits.size(0) || mask.size(1) != logits.size(2) || mask.size(2) != logits.size(3))
    throw std::invalid_argument("mask must be [B,H,W] matching the logits");
  if (!((mask == 0) | (mask == 1)).all().item<bool>()) throw std::invalid_argument("mask is not binary");
}

}  // namespace

void LossWeights::validate() const {
  if (!(lambda1 >= 0.0)) throw ConfigError("losses.lambda1 must be >= 0");
  if (!(r1_gamma >= 0.0)) throw ConfigError("losses.r1_gamma must be >= 0");
}

torch::Tensor log_d(const torch::Tensor& logits) { return F::logsigmoid(logits).clamp_min(kLogFloorLn); }

torch::Tensor log_one_minus_d(const torch::Tensor& logits) { return F::logsigmoid(-logits).clamp_min(kLogFloorLn); }

torch::Tensor loss_generator(const torch::Tensor& dr_logits, const torch::Tensor& dm_logits, bool nonsaturating) {
  if (nonsaturating) return -(log_d(dr_logits).mean() + log_d(dm_logits).mean());
  return log_one_minus_d(dr_logits).mean() + log_one_minus_d(dm_logits).mean();
}

torch::Tensor loss_dr(const torch::Tensor& real_logits, const torch::Tensor& fake_logits) {
  return -log_d(real_logits).mean() - log_one_minus_d(fake_logits).mean();
}

torch::Tensor loss_dm(const torch::Tensor& real_pair_logits, const torch::Tensor& fake_pair_logits) {
  return loss_dr(real_pair_logits, fake_pair_logits);
}

torch::Tensor loss_adv(const torch::Tensor& real_pair_logits, const torch::Tensor& pred_pair_logits) {
  return loss_dr(real_pair_logits, pred_pair_logits);
}

torch::Tensor loss_seg_adv(const torch::Tensor& pred_pair_logits, bool nonsaturating) {
  if (nonsaturating) return -log_d(pred_pair_logits).mean();
  return log_one_minus_d(pred_pair_logits).mean();
}

torch::Tensor r1_penalty(const torch::Tensor& logits, const std::vector<torch::Tensor>& inputs) {
  const auto grads = torch::autograd::grad({logits.sum()}, inputs, {}, /*retain_graph=*/true, /*create_graph=*/true);
  torch::Tensor total;
  for (const auto& g : grads) {
    const auto sq = g.pow(2).flatten(1).sum(1);
    total = total.defined() ? total + sq : sq;
  }
  return total.mean();
}

torch::Tensor perceptual_distance_per_sample(const torch::Tensor& x1, const torch::Tensor& x2,
                                             const models::FrozenFeatureExtractor& fx) {
  if (x1.sizes() != x2.sizes()) throw std::invalid_argument("perceptual_distance: shape mismatch");
  if (x1.dim() != 4 || x1.size(1) != 1) throw std::invalid_argument("perceptual_distance expects [B,1,H,W]");
  const auto f1 = fx.features(x1);
  const auto f2 = fx.features(x2);
  auto unit = [](const torch::Tensor& f) { return f * torch::rsqrt(f.pow(2).sum(1, true) + 1e-10); };
  torch::Tensor total;
  for (std::size_t l = 0; l < f1.size(); ++l) {
    const auto d = (unit(f1[l]) - unit(f2[l])).pow(2).sum(1).mean({1, 2});
    total = total.defined() ? total + d : d;
  }
  return total;
}

torch::Tensor perceptual_distance(const torch::Tensor& x1, const torch::Tensor& x2, const models::FrozenFeatureExtractor& fx) {
  return perceptual_distance_per_sample(x1, x2, fx).mean();
}

torch::Tensor loss_encoder_image(const torch::Tensor& x, const torch::Tensor& x_rec, const LossWeights& w,
                                 const models::FrozenFeatureExtractor& fx) {
  return perceptual_distance(x, x_rec, fx) + w.lambda1 * (x - x_rec).pow(2).mean();
}

torch::Tensor cross_entropy(const torch::Tensor& seg_logits, const torch::Tensor& mask) {
  check_seg_inputs(seg_logits, mask);
  const auto logp = F::log_softmax(seg_logits, F::LogSoftmaxFuncOptions(1));
  return -logp.gather(1, mask.to(torch::kLong).unsqueeze(1)).mean();
}

torch::Tensor dice_loss(const torch::Tensor& seg_logits, const torch::Tensor& mask) {
  check_seg_inputs(seg_logits, mask);
  const auto p = torch::softmax(seg_logits, 1).select(1, 1).flatten(1);
  const auto t = mask.to(seg_logits.scalar_type()).flatten(1);
  const auto dice = (2.0 * (p * t).sum(1) + kDiceSmooth) / (p.sum(1) + t.sum(1) + kDiceSmooth);
  return (1.0 - dice).mean();
}

torch::Tensor loss_encoder_seg(const torch::Tensor& seg_logits, const torch::Tensor& mask) {
  return cross_entropy(seg_logits, mask) + dice_loss(seg_logits, mask);
}

torch::Tensor loss_suponly(const torch::Tensor& seg_logits, const torch::Tensor& mask) {
  return loss_encoder_seg(seg_logits, mask);
}

}  // namespace segbench::losses
