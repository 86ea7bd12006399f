#pragma once

#include <torch/torch.h>

#include "segbench/models.hpp"

// Training objectives. Every function is differentiable and follows the dtype
// of its inputs, so the gradient checks can run in double precision.
// Logits are raw discriminator outputs; probabilities are sigmoid(logit).
namespace segbench::losses {

struct LossWeights {
  double lambda1 = 1.0;    // weight of the L2 term in the encoder reconstruction loss
  double r1_gamma = 10.0;  // discriminator gradient penalty, 0 disables it
  bool nonsaturating = false;

  void validate() const;  // throws ConfigError
};

inline constexpr double kLogFloor = 1e-12;
inline constexpr double kDiceSmooth = 1.0;

/// log(max(sigmoid(x), 1e-12)) and log(max(1 - sigmoid(x), 1e-12)), evaluated stably.
torch::Tensor log_d(const torch::Tensor& logits);
torch::Tensor log_one_minus_d(const torch::Tensor& logits);

/// mean[log(1 - D_r(x~)) + log(1 - D_m(x~, y~))]; with `nonsaturating`,
/// mean[-log D_r(x~) - log D_m(x~, y~)].
torch::Tensor loss_generator(const torch::Tensor& dr_logits, const torch::Tensor& dm_logits, bool nonsaturating = false);

/// -mean log D(real) - mean log(1 - D(fake)).
torch::Tensor loss_dr(const torch::Tensor& real_logits, const torch::Tensor& fake_logits);
torch::Tensor loss_dm(const torch::Tensor& real_pair_logits, const torch::Tensor& fake_pair_logits);
torch::Tensor loss_adv(const torch::Tensor& real_pair_logits, const torch::Tensor& pred_pair_logits);

/// mean log(1 - D_m(x, S(x))), or -mean log D_m(x, S(x)) when non-saturating.
torch::Tensor loss_seg_adv(const torch::Tensor& pred_pair_logits, bool nonsaturating = false);

/// mean over the batch of ||d sum(logits) / d inputs||^2. `inputs` must require grad
/// and `logits` must have been computed from them. The caller scales by gamma/2.
torch::Tensor r1_penalty(const torch::Tensor& logits, const std::vector<torch::Tensor>& inputs);

/// Per-sample perceptual distance [B]: sum over extractor layers of the spatial
/// mean of squared differences between channel-unit-normalised feature maps.
torch::Tensor perceptual_distance_per_sample(const torch::Tensor& x1, const torch::Tensor& x2,
                                             const models::FrozenFeatureExtractor& fx = models::default_feature_extractor());
/// Batch mean of the above. Throws std::invalid_argument on a shape mismatch.
torch::Tensor perceptual_distance(const torch::Tensor& x1, const torch::Tensor& x2,
                                  const models::FrozenFeatureExtractor& fx = models::default_feature_extractor());

/// perceptual_distance(x, x_rec) + lambda1 * mean squared error.
torch::Tensor loss_encoder_image(const torch::Tensor& x, const torch::Tensor& x_rec, const LossWeights& w,
                                 const models::FrozenFeatureExtractor& fx = models::default_feature_extractor());

/// Masks are [B,H,W] with values in {0,1} (any integer or floating dtype);
/// logits are [B,2,H,W]. Both throw std::invalid_argument on a non-binary mask or shape mismatch.
torch::Tensor cross_entropy(const torch::Tensor& seg_logits, const torch::Tensor& mask);
/// 1 - (2 sum p t + 1) / (sum p + sum t + 1) on the foreground softmax channel, per sample, averaged over the batch.
torch::Tensor dice_loss(const torch::Tensor& seg_logits, const torch::Tensor& mask);

torch::Tensor loss_encoder_seg(const torch::Tensor& seg_logits, const torch::Tensor& mask);
torch::Tensor loss_suponly(const torch::Tensor& seg_logits, const torch::Tensor& mask);

}  // namespace segbench::losses
