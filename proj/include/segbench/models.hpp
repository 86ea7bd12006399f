#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <torch/torch.h>

// Network roles: style-based dual-branch generator G = (G_X, G_Y), image
// discriminator D_r, multi-scale patch pair discriminator D_m, encoder E into
// per-stage style space, discriminative segmenters (dilated-context "DL" and
// encoder-decoder "UN"), the downstream classifier and the frozen feature
// extractor shared by the perceptual distance and the FID-like score.
namespace segbench::models {

struct ModelConfig {
  int resolution = 64;
  int latent_dim = 64;
  int style_dim = 128;
  int mapping_layers = 3;
  int g_base_channels = 32;
  int g_max_channels = 256;
  int d_base_channels = 32;
  int d_max_channels = 256;
  int dm_channels = 64;
  int dm_scales = 2;
  int e_base_channels = 32;
  int e_max_channels = 256;
  int seg_channels = 32;
  int unet_channels = 16;
  int classifier_channels = 16;

  void validate() const;  // throws ConfigError
};

/// Synthesis stages from the 4x4 constant up to `resolution` (4 -> 1, 64 -> 5).
/// Throws ConfigError when the resolution is not 4 * 2^k.
int num_stages(int resolution);

/// Per-stage style vectors, shape [batch, stages, style_dim].
struct StyleCode {
  torch::Tensor w;

  std::int64_t batch() const { return w.size(0); }
  std::int64_t stages() const { return w.size(1); }
  torch::Tensor stage(std::int64_t i) const { return w.select(1, i); }
};

struct GeneratorOutput {
  torch::Tensor image;       // [B,1,H,W], tanh-bounded to [-1,1]
  torch::Tensor seg_logits;  // [B,2,H,W], channel 0 background, 1 lung
};

/// Convolution whose weights are scaled per input channel by an affine map of
/// the style vector, optionally demodulated to unit output variance.
class ModulatedConvImpl : public torch::nn::Module {
 public:
  ModulatedConvImpl(std::int64_t in_ch, std::int64_t out_ch, std::int64_t kernel, std::int64_t style_dim,
                    bool demodulate, bool upsample);
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& style);

 private:
  std::int64_t in_ch_, out_ch_, kernel_;
  bool demodulate_, upsample_;
  double scale_;
  torch::Tensor weight_, bias_;
  torch::nn::Linear affine_{nullptr};
};
TORCH_MODULE(ModulatedConv);

class MappingNetworkImpl : public torch::nn::Module {
 public:
  MappingNetworkImpl(int latent_dim, int style_dim, int layers);
  torch::Tensor forward(const torch::Tensor& z);  // [B,latent] -> [B,style]
  int latent_dim() const { return latent_dim_; }

 private:
  int latent_dim_;
  torch::nn::Sequential net_{nullptr};
};
TORCH_MODULE(MappingNetwork);

class GeneratorImpl : public torch::nn::Module {
 public:
  explicit GeneratorImpl(const ModelConfig& cfg);

  /// One style vector broadcast to every stage.
  StyleCode map_latent(const torch::Tensor& z);
  /// One latent per stage; throws std::invalid_argument unless there is exactly one per stage.
  StyleCode map_latent(std::span<const torch::Tensor> per_stage_z);

  /// Throws std::invalid_argument when the stage count or style width differ.
  GeneratorOutput generate(const StyleCode& code);
  GeneratorOutput forward(const torch::Tensor& z) { return generate(map_latent(z)); }

  /// Mean of mapped styles over `n` latents drawn from the current torch RNG.
  torch::Tensor mean_style(std::int64_t n);

  int stages() const { return stages_; }
  int style_dim() const { return cfg_.style_dim; }
  int latent_dim() const { return cfg_.latent_dim; }
  int resolution() const { return cfg_.resolution; }

 private:
  ModelConfig cfg_;
  int stages_;
  MappingNetwork mapping_{nullptr};
  torch::Tensor constant_;
  std::vector<ModulatedConv> convs_up_, convs_, to_image_, to_seg_;
};
TORCH_MODULE(Generator);

class ImageDiscriminatorImpl : public torch::nn::Module {
 public:
  explicit ImageDiscriminatorImpl(const ModelConfig& cfg);
  torch::Tensor forward(const torch::Tensor& x);  // [B,1,H,W] -> [B] logits

 private:
  int resolution_;
  torch::nn::Conv2d from_image_{nullptr};
  torch::nn::ModuleList blocks_{nullptr};
  torch::nn::Linear fc_{nullptr}, out_{nullptr};
};
TORCH_MODULE(ImageDiscriminator);

/// Patch discriminator over (image, 2-channel label) pairs applied at
/// `dm_scales` resolutions (full, half, ...).
class PairDiscriminatorImpl : public torch::nn::Module {
 public:
  explicit PairDiscriminatorImpl(const ModelConfig& cfg);
  /// Patch logit maps [B,1,h_s,w_s], one per scale, finest first.
  std::vector<torch::Tensor> forward(const torch::Tensor& x, const torch::Tensor& y);
  /// Mean over patches, then over scales: [B].
  torch::Tensor decision(const torch::Tensor& x, const torch::Tensor& y);
  int scales() const { return static_cast<int>(nets_.size()); }

 private:
  std::vector<torch::nn::Sequential> nets_;
};
TORCH_MODULE(PairDiscriminator);

/// Image -> per-stage style codes; codes are offsets from `latent_avg`.
class EncoderImpl : public torch::nn::Module {
 public:
  explicit EncoderImpl(const ModelConfig& cfg);
  StyleCode forward(const torch::Tensor& x);
  void set_latent_average(const torch::Tensor& w_avg);
  int stages() const { return stages_; }

 private:
  int stages_, style_dim_;
  torch::nn::Sequential features_{nullptr};
  torch::nn::Linear head_{nullptr};
  torch::Tensor latent_avg_;
};
TORCH_MODULE(Encoder);

enum class SegArch { DL, UN };
std::string_view to_string(SegArch a);
SegArch parse_arch(std::string_view s);  // throws std::invalid_argument

/// Discriminative segmenter interface: [B,1,H,W] -> [B,2,H,W] logits.
class SegmenterNet : public torch::nn::Module {
 public:
  virtual torch::Tensor forward(const torch::Tensor& x) = 0;
};

/// Strided encoder with a parallel dilated-convolution context block
/// (rates 1, 2, 4, 8, plus image pooling) and a bilinear upsampling head.
class DilatedContextSegmenter : public SegmenterNet {
 public:
  explicit DilatedContextSegmenter(const ModelConfig& cfg);
  torch::Tensor forward(const torch::Tensor& x) override;

 private:
  torch::nn::Sequential stem_{nullptr};
  std::vector<torch::nn::Sequential> branches_;
  torch::nn::Sequential pool_branch_{nullptr}, project_{nullptr}, head_{nullptr};
};

/// Symmetric encoder-decoder with skip concatenations.
class UNetSegmenter : public SegmenterNet {
 public:
  explicit UNetSegmenter(const ModelConfig& cfg);
  torch::Tensor forward(const torch::Tensor& x) override;

 private:
  std::vector<torch::nn::Sequential> down_, up_blocks_;
  std::vector<torch::nn::ConvTranspose2d> up_;
  torch::nn::Sequential bottleneck_{nullptr};
  torch::nn::Conv2d out_{nullptr};
};

std::shared_ptr<SegmenterNet> make_segmenter(SegArch arch, const ModelConfig& cfg);

/// Small convolutional binary classifier for the downstream task.
class ClassifierImpl : public torch::nn::Module {
 public:
  explicit ClassifierImpl(const ModelConfig& cfg);
  torch::Tensor forward(const torch::Tensor& x);  // [B,1,H,W] -> [B] logits

 private:
  torch::nn::Sequential features_{nullptr};
  torch::nn::Linear out_{nullptr};
};
TORCH_MODULE(Classifier);

/// Fixed random convolutional feature extractor. Weights are drawn from a
/// fixed-seed generator independent of the torch RNG, so features are stable
/// across runs and builds. Evaluates in the dtype of its input.
class FrozenFeatureExtractor {
 public:
  explicit FrozenFeatureExtractor(int layers = 3);
  std::vector<torch::Tensor> features(const torch::Tensor& x) const;
  /// Per-layer channel means concatenated: [B, sum of channels].
  torch::Tensor pooled_features(const torch::Tensor& x) const;
  int layers() const { return static_cast<int>(weights_.size()); }
  const std::vector<torch::Tensor>& weights() const { return weights_; }

 private:
  std::vector<torch::Tensor> weights_;  // float64
};

const FrozenFeatureExtractor& default_feature_extractor();

std::int64_t parameter_count(const torch::nn::Module& m);

/// One-hot encodes [B,H,W] integer masks to [B,2,H,W] in the given dtype.
torch::Tensor one_hot_masks(const torch::Tensor& masks, torch::Dtype dtype = torch::kFloat32);

/// argmax over the two channels: [B,2,H,W] -> [B,H,W] uint8.
torch::Tensor binarize_logits(const torch::Tensor& seg_logits);

}  // namespace segbench::models
