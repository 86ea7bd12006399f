#include "segbench/models.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "segbench/errors.hpp"
#include "segbench/rng.hpp"

namespace segbench::models {
namespace nn = torch::nn;
namespace F = torch::nn::functional;

namespace {

constexpr double kLeak = 0.2;

torch::Tensor leaky(const torch::Tensor& x) { return F::leaky_relu(x, F::LeakyReLUFuncOptions().negative_slope(kLeak)); }

torch::Tensor upsample2(const torch::Tensor& x) {
  return F::interpolate(x, F::InterpolateFuncOptions()
                               .scale_factor(std::vector<double>{2.0, 2.0})
                               .mode(torch::kBilinear)
                               .align_corners(false));
}

int channels_at(int res, int target, int base, int max_ch) {
  const long long ch = static_cast<long long>(base) * target / res;
  return static_cast<int>(std::min<long long>(ch, max_ch));
}

nn::Conv2d conv(std::int64_t in, std::int64_t out, std::int64_t k, std::int64_t stride = 1, std::int64_t dilation = 1) {
  return nn::Conv2d(nn::Conv2dOptions(in, out, k).stride(stride).padding(dilation * (k / 2)).dilation(dilation));
}

void add_conv_bn_relu(nn::Sequential& s, std::int64_t in, std::int64_t out, std::int64_t k, std::int64_t stride = 1,
                      std::int64_t dilation = 1) {
  s->push_back(nn::Conv2d(
      nn::Conv2dOptions(in, out, k).stride(stride).padding(dilation * (k / 2)).dilation(dilation).bias(false)));
  s->push_back(nn::BatchNorm2d(out));
  s->push_back(nn::ReLU());
}

nn::Sequential conv_bn_relu(std::int64_t in, std::int64_t out, std::int64_t k, std::int64_t stride = 1,
                            std::int64_t dilation = 1) {
  nn::Sequential s;
  add_conv_bn_relu(s, in, out, k, stride, dilation);
  return s;
}

nn::Sequential double_conv(std::int64_t in, std::int64_t out) {
  nn::Sequential s;
  add_conv_bn_relu(s, in, out, 3);
  add_conv_bn_relu(s, out, out, 3);
  return s;
}

}  // namespace

void ModelConfig::validate() const {
  num_stages(resolution);
  auto positive = [](int v, const char* name) {
    if (v <= 0) throw ConfigError(std::string("model.") + name + " must be positive");
  };
  positive(latent_dim, "latent_dim");
  positive(style_dim, "style_dim");
  positive(mapping_layers, "mapping_layers");
  positive(g_base_channels, "g_base_channels");
  positive(g_max_channels, "g_max_channels");
  positive(d_base_channels, "d_base_channels");
  positive(d_max_channels, "d_max_channels");
  positive(dm_channels, "dm_channels");
  positive(dm_scales, "dm_scales");
  positive(e_base_channels, "e_base_channels");
  positive(e_max_channels, "e_max_channels");
  positive(seg_channels, "seg_channels");
  positive(unet_channels, "unet_channels");
  positive(classifier_channels, "classifier_channels");
  if (resolution < 8 * (1 << (dm_scales - 1)))
    throw ConfigError("model.dm_scales too large for the resolution");
  if (resolution % 8 != 0) throw ConfigError("model.resolution must be divisible by 8");
}

int num_stages(int resolution) {
  int stages = 1;
  int r = 4;
  while (r < resolution) {
    r *= 2;
    ++stages;
  }
  if (r != resolution) throw ConfigError("resolution " + std::to_string(resolution) + " is not reachable by doubling from 4");
  return stages;
}

// ---------------------------------------------------------------------------
// Generator

ModulatedConvImpl::ModulatedConvImpl(std::int64_t in_ch, std::int64_t out_ch, std::int64_t kernel,
                                     std::int64_t style_dim, bool demodulate, bool upsample)
    : in_ch_(in_ch),
      out_ch_(out_ch),
      kernel_(kernel),
      demodulate_(demodulate),
      upsample_(upsample),
      scale_(1.0 / std::sqrt(static_cast<double>(in_ch * kernel * kernel))) {
  weight_ = register_parameter("weight", torch::randn({out_ch, in_ch, kernel, kernel}));
  bias_ = register_parameter("bias", torch::zeros({out_ch}));
  affine_ = register_module("affine", nn::Linear(style_dim, in_ch));
  torch::NoGradGuard no_grad;
  affine_->bias.fill_(1.0);
}

torch::Tensor ModulatedConvImpl::forward(const torch::Tensor& x_in, const torch::Tensor& style) {
  const auto batch = x_in.size(0);
  const auto s = affine_->forward(style).view({batch, 1, in_ch_, 1, 1});
  auto w = weight_.unsqueeze(0) * scale_ * s;
  if (demodulate_) w = w * torch::rsqrt(w.pow(2).sum({2, 3, 4}, true) + 1e-8);
  auto x = upsample_ ? upsample2(x_in) : x_in;
  const auto h = x.size(2), wd = x.size(3);
  x = x.reshape({1, batch * in_ch_, h, wd});
  w = w.reshape({batch * out_ch_, in_ch_, kernel_, kernel_});
  auto y = F::conv2d(x, w, F::Conv2dFuncOptions().padding(kernel_ / 2).groups(batch));
  return y.view({batch, out_ch_, h, wd}) + bias_.view({1, out_ch_, 1, 1});
}

MappingNetworkImpl::MappingNetworkImpl(int latent_dim, int style_dim, int layers) : latent_dim_(latent_dim) {
  net_ = nn::Sequential();
  int in = latent_dim;
  for (int i = 0; i < layers; ++i) {
    net_->push_back(nn::Linear(in, style_dim));
    net_->push_back(nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(kLeak)));
    in = style_dim;
  }
  register_module("net", net_);
}

torch::Tensor MappingNetworkImpl::forward(const torch::Tensor& z) {
  if (z.dim() != 2 || z.size(1) != latent_dim_)
    throw std::invalid_argument("latent must have shape [B," + std::to_string(latent_dim_) + "]");
  // Pixel norm.
  const auto zn = z * torch::rsqrt(z.pow(2).mean(1, true) + 1e-8);
  return net_->forward(zn);
}

GeneratorImpl::GeneratorImpl(const ModelConfig& cfg) : cfg_(cfg), stages_(num_stages(cfg.resolution)) {
  mapping_ = register_module("mapping", MappingNetwork(cfg.latent_dim, cfg.style_dim, cfg.mapping_layers));
  const int ch4 = channels_at(4, cfg.resolution, cfg.g_base_channels, cfg.g_max_channels);
  constant_ = register_parameter("constant", torch::randn({1, ch4, 4, 4}));
  int prev = ch4;
  for (int i = 0; i < stages_; ++i) {
    const int res = 4 << i;
    const int ch = channels_at(res, cfg.resolution, cfg.g_base_channels, cfg.g_max_channels);
    const auto tag = std::to_string(res);
    if (i > 0) convs_up_.push_back(register_module("conv_up" + tag, ModulatedConv(prev, ch, 3, cfg.style_dim, true, true)));
    convs_.push_back(register_module("conv" + tag, ModulatedConv(ch, ch, 3, cfg.style_dim, true, false)));
    to_image_.push_back(register_module("to_image" + tag, ModulatedConv(ch, 1, 1, cfg.style_dim, false, false)));
    to_seg_.push_back(register_module("to_seg" + tag, ModulatedConv(ch, 2, 1, cfg.style_dim, false, false)));
    prev = ch;
  }
}

StyleCode GeneratorImpl::map_latent(const torch::Tensor& z) {
  const auto w = mapping_->forward(z);
  return {w.unsqueeze(1).expand({w.size(0), stages_, w.size(1)})};
}

StyleCode GeneratorImpl::map_latent(std::span<const torch::Tensor> per_stage_z) {
  if (static_cast<int>(per_stage_z.size()) != stages_)
    throw std::invalid_argument("expected " + std::to_string(stages_) + " per-stage latents, got " +
                                std::to_string(per_stage_z.size()));
  std::vector<torch::Tensor> ws;
  ws.reserve(per_stage_z.size());
  for (const auto& z : per_stage_z) ws.push_back(mapping_->forward(z));
  return {torch::stack(ws, 1)};
}

GeneratorOutput GeneratorImpl::generate(const StyleCode& code) {
  if (!code.w.defined() || code.w.dim() != 3 || code.stages() != stages_ || code.w.size(2) != cfg_.style_dim)
    throw std::invalid_argument("style code must have shape [B," + std::to_string(stages_) + "," +
                                std::to_string(cfg_.style_dim) + "]");
  constexpr double gain = 1.4142135623730951;
  const auto batch = code.batch();
  auto x = constant_.expand({batch, constant_.size(1), 4, 4});
  torch::Tensor img, seg;
  for (int i = 0; i < stages_; ++i) {
    const auto w = code.stage(i);
    if (i > 0) x = leaky(convs_up_[static_cast<std::size_t>(i - 1)]->forward(x, w)) * gain;
    x = leaky(convs_[static_cast<std::size_t>(i)]->forward(x, w)) * gain;
    const auto di = to_image_[static_cast<std::size_t>(i)]->forward(x, w);
    const auto ds = to_seg_[static_cast<std::size_t>(i)]->forward(x, w);
    img = i == 0 ? di : upsample2(img) + di;
    seg = i == 0 ? ds : upsample2(seg) + ds;
  }
  return {torch::tanh(img), seg};
}

torch::Tensor GeneratorImpl::mean_style(std::int64_t n) {
  torch::NoGradGuard no_grad;
  const auto z = torch::randn({n, cfg_.latent_dim});
  return mapping_->forward(z).mean(0);
}

// ---------------------------------------------------------------------------
// Discriminators

ImageDiscriminatorImpl::ImageDiscriminatorImpl(const ModelConfig& cfg) : resolution_(cfg.resolution) {
  const int top = channels_at(cfg.resolution, cfg.resolution, cfg.d_base_channels, cfg.d_max_channels);
  from_image_ = register_module("from_image", nn::Conv2d(nn::Conv2dOptions(1, top, 1)));
  blocks_ = nn::ModuleList();
  for (int res = cfg.resolution; res > 4; res /= 2) {
    const int ch = channels_at(res, cfg.resolution, cfg.d_base_channels, cfg.d_max_channels);
    const int next = channels_at(res / 2, cfg.resolution, cfg.d_base_channels, cfg.d_max_channels);
    blocks_->push_back(nn::Sequential(conv(ch, ch, 3), nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(kLeak)),
                                      conv(ch, next, 3), nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(kLeak)),
                                      nn::AvgPool2d(2)));
  }
  register_module("blocks", blocks_);
  const int ch4 = channels_at(4, cfg.resolution, cfg.d_base_channels, cfg.d_max_channels);
  fc_ = register_module("fc", nn::Linear(ch4 * 16, ch4));
  out_ = register_module("out", nn::Linear(ch4, 1));
}

torch::Tensor ImageDiscriminatorImpl::forward(const torch::Tensor& x) {
  if (x.dim() != 4 || x.size(1) != 1 || x.size(2) != resolution_ || x.size(3) != resolution_)
    throw std::invalid_argument("D_r expects [B,1," + std::to_string(resolution_) + "," + std::to_string(resolution_) + "]");
  auto h = leaky(from_image_->forward(x));
  for (const auto& b : *blocks_) h = b->as<nn::Sequential>()->forward(h);
  h = leaky(fc_->forward(h.flatten(1)));
  return out_->forward(h).squeeze(1);
}

PairDiscriminatorImpl::PairDiscriminatorImpl(const ModelConfig& cfg) {
  const int c = cfg.dm_channels;
  for (int s = 0; s < cfg.dm_scales; ++s) {
    auto net = nn::Sequential(
        nn::Conv2d(nn::Conv2dOptions(3, c, 4).stride(2).padding(1)), nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(kLeak)),
        nn::Conv2d(nn::Conv2dOptions(c, 2 * c, 4).stride(2).padding(1)), nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(kLeak)),
        nn::Conv2d(nn::Conv2dOptions(2 * c, 1, 3).padding(1)));
    nets_.push_back(register_module("scale" + std::to_string(s), net));
  }
}

std::vector<torch::Tensor> PairDiscriminatorImpl::forward(const torch::Tensor& x, const torch::Tensor& y) {
  if (x.dim() != 4 || x.size(1) != 1 || y.dim() != 4 || y.size(1) != 2)
    throw std::invalid_argument("D_m expects an image [B,1,H,W] and a 2-channel label map [B,2,H,W]");
  if (x.size(0) != y.size(0) || x.size(2) != y.size(2) || x.size(3) != y.size(3))
    throw std::invalid_argument("D_m image and label shapes differ");
  auto xy = torch::cat({x, y}, 1);
  std::vector<torch::Tensor> out;
  for (std::size_t s = 0; s < nets_.size(); ++s) {
    if (s > 0) xy = F::avg_pool2d(xy, F::AvgPool2dFuncOptions(2));
    out.push_back(nets_[s]->forward(xy));
  }
  return out;
}

torch::Tensor PairDiscriminatorImpl::decision(const torch::Tensor& x, const torch::Tensor& y) {
  const auto maps = forward(x, y);
  auto total = maps[0].mean({1, 2, 3});
  for (std::size_t s = 1; s < maps.size(); ++s) total = total + maps[s].mean({1, 2, 3});
  return total / static_cast<double>(maps.size());
}

// ---------------------------------------------------------------------------
// Encoder

EncoderImpl::EncoderImpl(const ModelConfig& cfg) : stages_(num_stages(cfg.resolution)), style_dim_(cfg.style_dim) {
  features_ = nn::Sequential();
  int ch = channels_at(cfg.resolution, cfg.resolution, cfg.e_base_channels, cfg.e_max_channels);
  features_->push_back(conv(1, ch, 3));
  features_->push_back(nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(kLeak)));
  for (int res = cfg.resolution; res > 4; res /= 2) {
    const int next = channels_at(res / 2, cfg.resolution, cfg.e_base_channels, cfg.e_max_channels);
    features_->push_back(conv(ch, ch, 3));
    features_->push_back(nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(kLeak)));
    features_->push_back(conv(ch, next, 3, 2));
    features_->push_back(nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(kLeak)));
    ch = next;
  }
  register_module("features", features_);
  head_ = register_module("head", nn::Linear(ch * 16, stages_ * cfg.style_dim));
  {
    torch::NoGradGuard no_grad;
    head_->weight.mul_(0.1);
    head_->bias.zero_();
  }
  latent_avg_ = register_buffer("latent_avg", torch::zeros({cfg.style_dim}));
}

StyleCode EncoderImpl::forward(const torch::Tensor& x) {
  if (x.dim() != 4 || x.size(1) != 1) throw std::invalid_argument("encoder expects [B,1,H,W]");
  const auto h = features_->forward(x).flatten(1);
  const auto w = head_->forward(h).view({x.size(0), stages_, style_dim_});
  return {w + latent_avg_.view({1, 1, style_dim_})};
}

void EncoderImpl::set_latent_average(const torch::Tensor& w_avg) {
  torch::NoGradGuard no_grad;
  latent_avg_.copy_(w_avg.reshape({style_dim_}));
}

// ---------------------------------------------------------------------------
// Discriminative segmenters

std::string_view to_string(SegArch a) { return a == SegArch::DL ? "DL" : "UN"; }

SegArch parse_arch(std::string_view s) {
  if (s == "DL" || s == "dl") return SegArch::DL;
  if (s == "UN" || s == "un") return SegArch::UN;
  throw std::invalid_argument("unknown segmenter architecture '" + std::string(s) + "'");
}

DilatedContextSegmenter::DilatedContextSegmenter(const ModelConfig& cfg) {
  const int c = cfg.seg_channels;
  nn::Sequential stem;
  add_conv_bn_relu(stem, 1, c, 3);
  add_conv_bn_relu(stem, c, 2 * c, 3, 2);
  add_conv_bn_relu(stem, 2 * c, 2 * c, 3);
  stem_ = register_module("stem", stem);
  for (int rate : {1, 2, 4, 8})
    branches_.push_back(register_module("aspp" + std::to_string(rate), conv_bn_relu(2 * c, c, 3, 1, rate)));
  pool_branch_ = register_module("aspp_pool", nn::Sequential(nn::AdaptiveAvgPool2d(1), conv(2 * c, c, 1), nn::ReLU()));
  project_ = register_module("project", conv_bn_relu(5 * c, 2 * c, 1));
  auto head = conv_bn_relu(2 * c, 2 * c, 3);
  head->push_back(conv(2 * c, 2, 1));
  head_ = register_module("head", head);
}

torch::Tensor DilatedContextSegmenter::forward(const torch::Tensor& x) {
  if (x.dim() != 4 || x.size(1) != 1) throw std::invalid_argument("segmenter expects [B,1,H,W]");
  const auto f = stem_->forward(x);
  std::vector<torch::Tensor> parts;
  for (auto& b : branches_) parts.push_back(b->forward(f));
  parts.push_back(pool_branch_->forward(f).expand({f.size(0), -1, f.size(2), f.size(3)}));
  const auto logits = head_->forward(project_->forward(torch::cat(parts, 1)));
  return F::interpolate(logits, F::InterpolateFuncOptions()
                                    .size(std::vector<std::int64_t>{x.size(2), x.size(3)})
                                    .mode(torch::kBilinear)
                                    .align_corners(false));
}

UNetSegmenter::UNetSegmenter(const ModelConfig& cfg) {
  const int c = cfg.unet_channels;
  const int widths[3] = {c, 2 * c, 4 * c};
  int in = 1;
  for (int i = 0; i < 3; ++i) {
    down_.push_back(register_module("down" + std::to_string(i), double_conv(in, widths[i])));
    in = widths[i];
  }
  bottleneck_ = register_module("bottleneck", double_conv(4 * c, 8 * c));
  in = 8 * c;
  for (int i = 2; i >= 0; --i) {
    up_.push_back(register_module("up" + std::to_string(i),
                                  nn::ConvTranspose2d(nn::ConvTranspose2dOptions(in, widths[i], 2).stride(2))));
    up_blocks_.push_back(register_module("up_block" + std::to_string(i), double_conv(2 * widths[i], widths[i])));
    in = widths[i];
  }
  out_ = register_module("out", nn::Conv2d(nn::Conv2dOptions(c, 2, 1)));
}

torch::Tensor UNetSegmenter::forward(const torch::Tensor& x) {
  if (x.dim() != 4 || x.size(1) != 1) throw std::invalid_argument("segmenter expects [B,1,H,W]");
  std::vector<torch::Tensor> skips;
  auto h = x;
  for (auto& d : down_) {
    h = d->forward(h);
    skips.push_back(h);
    h = F::max_pool2d(h, F::MaxPool2dFuncOptions(2));
  }
  h = bottleneck_->forward(h);
  for (std::size_t i = 0; i < up_.size(); ++i) {
    h = up_[i]->forward(h);
    h = up_blocks_[i]->forward(torch::cat({skips[skips.size() - 1 - i], h}, 1));
  }
  return out_->forward(h);
}

std::shared_ptr<SegmenterNet> make_segmenter(SegArch arch, const ModelConfig& cfg) {
  if (arch == SegArch::DL) return std::make_shared<DilatedContextSegmenter>(cfg);
  return std::make_shared<UNetSegmenter>(cfg);
}

// ---------------------------------------------------------------------------
// Downstream classifier

ClassifierImpl::ClassifierImpl(const ModelConfig& cfg) {
  const int c = cfg.classifier_channels;
  features_ = register_module(
      "features", nn::Sequential(conv(1, c, 3, 2), nn::ReLU(), conv(c, 2 * c, 3, 2), nn::ReLU(), conv(2 * c, 4 * c, 3, 2),
                                 nn::ReLU(), conv(4 * c, 4 * c, 3, 2), nn::ReLU(), nn::AdaptiveAvgPool2d(1)));
  out_ = register_module("out", nn::Linear(4 * c, 1));
}

torch::Tensor ClassifierImpl::forward(const torch::Tensor& x) {
  return out_->forward(features_->forward(x).flatten(1)).squeeze(1);
}

// ---------------------------------------------------------------------------
// Frozen feature extractor

FrozenFeatureExtractor::FrozenFeatureExtractor(int layers) {
  if (layers < 1 || layers > 3) throw std::invalid_argument("feature extractor supports 1 to 3 layers");
  constexpr int widths[4] = {1, 16, 32, 64};
  Rng rng(0x5e6b'f00dULL);
  for (int l = 0; l < layers; ++l) {
    const int in = widths[l], out = widths[l + 1];
    const double std = std::sqrt(2.0 / (in * 9.0));
    std::vector<double> w(static_cast<std::size_t>(out) * in * 9);
    for (auto& v : w) v = std * rng.normal();
    weights_.push_back(torch::from_blob(w.data(), {out, in, 3, 3}, torch::kFloat64).clone());
  }
}

std::vector<torch::Tensor> FrozenFeatureExtractor::features(const torch::Tensor& x) const {
  std::vector<torch::Tensor> out;
  auto h = x;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    if (l > 0) h = F::avg_pool2d(h, F::AvgPool2dFuncOptions(2));
    h = torch::relu(F::conv2d(h, weights_[l].to(x.dtype()), F::Conv2dFuncOptions().padding(1)));
    out.push_back(h);
  }
  return out;
}

torch::Tensor FrozenFeatureExtractor::pooled_features(const torch::Tensor& x) const {
  std::vector<torch::Tensor> pooled;
  for (const auto& f : features(x)) pooled.push_back(f.mean({2, 3}));
  return torch::cat(pooled, 1);
}

const FrozenFeatureExtractor& default_feature_extractor() {
  static const FrozenFeatureExtractor extractor(3);
  return extractor;
}

std::int64_t parameter_count(const torch::nn::Module& m) {
  std::int64_t n = 0;
  for (const auto& p : m.parameters()) n += p.numel();
  return n;
}

torch::Tensor one_hot_masks(const torch::Tensor& masks, torch::Dtype dtype) {
  return F::one_hot(masks.to(torch::kLong), 2).permute({0, 3, 1, 2}).to(dtype);
}

torch::Tensor binarize_logits(const torch::Tensor& seg_logits) { return seg_logits.argmax(1).to(torch::kUInt8); }

}  // namespace segbench::models
