#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <torch/torch.h>

#include "segbench/dataset.hpp"
#include "segbench/losses.hpp"
#include "segbench/models.hpp"

namespace segbench::train {

struct TrainConfig {
  int steps_stage1 = 3000;
  int steps_stage2 = 2000;
  int steps_segmenter = 1500;  // SupOnly
  int steps_semantican = 1500;
  int batch_stage1 = 16;
  int batch_stage2 = 16;
  int batch_segmenter = 32;
  double lr_generator = 2e-3;
  double lr_discriminator = 2e-3;
  double lr_encoder = 1e-3;
  double lr_segmenter = 1e-3;   // SupOnly
  double lr_semantican = 2e-4;  // SemanticAN segmenter and its pair discriminator
  double weight_decay = 1e-4;   // SupOnly only
  double val_fraction = 0.15;
  int eval_every = 250;
  int fid_probe_size = 64;  // generated images per FID-like evaluation
  int r1_every = 4;         // lazy R1: penalty applied every k discriminator steps, scaled by k
  std::uint64_t seed = 0;
  losses::LossWeights loss;

  void validate() const;  // throws ConfigError
};

struct HistoryRecord {
  int step = 0;
  std::vector<std::pair<std::string, double>> values;
  std::optional<double> selection_score;
};

/// One record per optimisation step (step numbers start at 1). The untrained
/// state is scored separately as step 0 and written as the first JSONL line.
struct History {
  std::optional<double> initial_selection_score;
  std::vector<HistoryRecord> records;

  std::string to_jsonl() const;
  void write_jsonl(const std::filesystem::path& path) const;
  std::size_t size() const { return records.size(); }
  /// Steps where a selection score was computed, with the score.
  std::vector<std::pair<int, double>> selection_scores() const;
};

/// Fréchet distance between Gaussians N(mu1, s1) and N(mu2, s2). The trace
/// of the cross term uses sqrt(s1) s2 sqrt(s1), whose eigenvalues (and those
/// of s1) are symmetrised and clipped at zero.
double frechet_distance(const Eigen::VectorXd& mu1, const Eigen::MatrixXd& s1, const Eigen::VectorXd& mu2,
                        const Eigen::MatrixXd& s2);
/// Rows are samples. Unbiased covariance; needs at least two rows per side.
double frechet_distance_features(const Eigen::MatrixXd& f1, const Eigen::MatrixXd& f2);
/// FID-like score on pooled frozen-extractor features. Throws
/// std::invalid_argument with fewer than 32 images on either side.
double fid_like(const torch::Tensor& real_images, const torch::Tensor& generated_images);

struct Stage1Result {
  models::Generator generator{nullptr};
  models::ImageDiscriminator image_discriminator{nullptr};
  models::PairDiscriminator pair_discriminator{nullptr};
  History history;
  int best_step = 0;
  double best_score = 0.0;     // lowest FID-like score
  double initial_score = 0.0;  // FID-like score at step 0
};

/// Adversarial training of G, D_r (on unlabelled images) and D_m (on labelled pairs).
Stage1Result train_stage1(const data::TensorSet& labelled, const data::TensorSet& unlabelled,
                          const models::ModelConfig& mcfg, const TrainConfig& cfg);

struct Stage2Result {
  models::Encoder encoder{nullptr};
  History history;
  int best_step = 0;
  double best_score = 0.0;  // highest validation Dice of G_Y(E(x))
  double initial_score = 0.0;
  double probe_recon_initial = 0.0;  // reconstruction loss on a fixed probe image
  double probe_recon_best = 0.0;
  std::string generator_hash_before, generator_hash_after;
};

/// Trains E against a frozen G on all images (reconstruction) and labelled
/// images (segmentation). G is left bitwise unchanged.
Stage2Result train_stage2(models::Generator& generator, const data::TensorSet& labelled,
                          const data::TensorSet& unlabelled, const models::ModelConfig& mcfg, const TrainConfig& cfg);

struct SegmenterResult {
  std::shared_ptr<models::SegmenterNet> segmenter;
  models::PairDiscriminator pair_discriminator{nullptr};  // SemanticAN only
  History history;
  int best_step = 0;
  double best_score = 0.0;  // highest validation Dice
  double initial_score = 0.0;
};

SegmenterResult train_suponly(const data::TensorSet& labelled, models::SegArch arch, const models::ModelConfig& mcfg,
                              const TrainConfig& cfg);

/// Alternates labelled and unlabelled segmenter steps; labelled steps add the
/// supervised loss to the adversarial one.
SegmenterResult train_semantican(const data::TensorSet& labelled, const data::TensorSet& unlabelled, models::SegArch arch,
                                 const models::ModelConfig& mcfg, const TrainConfig& cfg);

/// argmax G_Y(E(x)) for [N,1,H,W] images, evaluated in batches: [N,H,W] uint8.
torch::Tensor predict_semanticgan(models::Generator& g, models::Encoder& e, const torch::Tensor& images);
torch::Tensor predict_segmenter(models::SegmenterNet& s, const torch::Tensor& images);

/// Mean Dice of predictions against masks, per sample, with the usual empty-mask conventions.
double mean_dice(const torch::Tensor& pred, const torch::Tensor& masks);

}  // namespace segbench::train
