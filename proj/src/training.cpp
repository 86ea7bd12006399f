#include "segbench/training.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "json.hpp"

#include "segbench/checkpoint.hpp"
#include "segbench/errors.hpp"
#include "segbench/metrics.hpp"
#include "segbench/rng.hpp"

namespace segbench::train {
namespace F = torch::nn::functional;
using models::one_hot_masks;

namespace {

constexpr std::int64_t kEvalBatch = 64;
constexpr std::int64_t kMeanStyleSamples = 4096;
constexpr std::int64_t kFidRealCap = 512;

// Stream tags for per-purpose seeds.
enum : std::uint64_t { kSeedStage1 = 1, kSeedStage2, kSeedSupOnly, kSeedSemanticAN, kSeedFidProbe, kSeedSampler };

void set_requires_grad(torch::nn::Module& m, bool on) {
  for (auto& p : m.parameters()) p.set_requires_grad(on);
}

double checked(const torch::Tensor& loss, const char* name, int step) {
  const double v = loss.item<double>();
  if (!std::isfinite(v))
    throw DivergenceError(std::string("non-finite ") + name + " at step " + std::to_string(step));
  return v;
}

void check_gradients(const torch::nn::Module& m, const char* who, int step) {
  torch::NoGradGuard no_grad;
  torch::Tensor total;
  for (const auto& p : m.parameters()) {
    if (!p.grad().defined()) continue;
    const auto s = p.grad().abs().sum();
    total = total.defined() ? total + s : s;
  }
  if (total.defined() && !std::isfinite(total.item<double>()))
    throw DivergenceError(std::string("non-finite gradient in ") + who + " at step " + std::to_string(step));
}

torch::optim::Adam gan_adam(std::vector<torch::Tensor> params, double lr) {
  return torch::optim::Adam(std::move(params), torch::optim::AdamOptions(lr).betas({0.0, 0.99}));
}

bool is_eval_step(int step, int steps, int every) { return step % every == 0 || step == steps; }

Eigen::MatrixXd to_eigen(const torch::Tensor& t) {
  const auto c = t.to(torch::kFloat64).contiguous();
  using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  return Eigen::Map<const RowMajor>(c.data_ptr<double>(), c.size(0), c.size(1));
}

Eigen::MatrixXd pooled_features(const torch::Tensor& images) {
  torch::NoGradGuard no_grad;
  const auto& fx = models::default_feature_extractor();
  std::vector<torch::Tensor> parts;
  for (std::int64_t i = 0; i < images.size(0); i += kEvalBatch) {
    const auto batch = images.slice(0, i, std::min(images.size(0), i + kEvalBatch)).to(torch::kFloat64);
    parts.push_back(fx.pooled_features(batch));
  }
  return to_eigen(torch::cat(parts, 0));
}

Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m) {
  const Eigen::MatrixXd sym = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym);
  const Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

void moments(const Eigen::MatrixXd& f, Eigen::VectorXd& mu, Eigen::MatrixXd& cov) {
  if (f.rows() < 2) throw std::invalid_argument("Fréchet distance needs at least two samples per side");
  mu = f.colwise().mean().transpose();
  const Eigen::MatrixXd centred = f.rowwise() - mu.transpose();
  cov = centred.transpose() * centred / static_cast<double>(f.rows() - 1);
}

torch::Tensor generate_images(models::Generator& g, const torch::Tensor& z) {
  torch::NoGradGuard no_grad;
  std::vector<torch::Tensor> out;
  for (std::int64_t i = 0; i < z.size(0); i += kEvalBatch)
    out.push_back(g->forward(z.slice(0, i, std::min(z.size(0), i + kEvalBatch))).image);
  return torch::cat(out, 0);
}

torch::Tensor index_batch(const torch::Tensor& t, const std::vector<std::int64_t>& idx) {
  return t.index_select(0, data::index_tensor(idx));
}

// Selection bookkeeping shared by the trainers.
struct Selector {
  explicit Selector(bool maximise_) : maximise(maximise_) {}
  bool maximise;
  int best_step = 0;
  double best = 0.0;
  bool any = false;
  ckpt::TensorList best_state;

  bool offer(int step, double score, const torch::nn::Module& m) {
    const bool better = !any || (maximise ? score > best : score < best);
    if (!better) return false;
    any = true;
    best = score;
    best_step = step;
    best_state = ckpt::snapshot(m);
    return true;
  }
};

void record_selection(History& h, int step, double score) {
  if (step == 0)
    h.initial_selection_score = score;
  else
    h.records.back().selection_score = score;
}

void require_masks(const data::TensorSet& s, const char* what) {
  if (s.size() == 0) throw DataError(std::string(what) + " set is empty");
  if (!s.has_masks()) throw DataError(std::string(what) + " set has no masks");
}

}  // namespace

void TrainConfig::validate() const {
  auto positive = [](double v, const char* name) {
    if (!(v > 0.0)) throw ConfigError(std::string("train.") + name + " must be positive");
  };
  positive(steps_stage1, "steps_stage1");
  positive(steps_stage2, "steps_stage2");
  positive(steps_segmenter, "steps_segmenter");
  positive(steps_semantican, "steps_semantican");
  positive(batch_stage1, "batch_stage1");
  positive(batch_stage2, "batch_stage2");
  positive(batch_segmenter, "batch_segmenter");
  positive(lr_generator, "lr_generator");
  positive(lr_discriminator, "lr_discriminator");
  positive(lr_encoder, "lr_encoder");
  positive(lr_segmenter, "lr_segmenter");
  positive(lr_semantican, "lr_semantican");
  positive(eval_every, "eval_every");
  positive(r1_every, "r1_every");
  if (!(weight_decay >= 0.0)) throw ConfigError("train.weight_decay must be >= 0");
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) throw ConfigError("train.val_fraction must lie in (0,1)");
  if (fid_probe_size < 32) throw ConfigError("train.fid_probe_size must be at least 32");
  loss.validate();
}

std::string History::to_jsonl() const {
  std::ostringstream os;
  if (initial_selection_score) {
    nlohmann::ordered_json j;
    j["step"] = 0;
    j["selection_score"] = *initial_selection_score;
    os << j.dump() << '\n';
  }
  for (const auto& r : records) {
    nlohmann::ordered_json j;
    j["step"] = r.step;
    for (const auto& [k, v] : r.values) j[k] = v;
    if (r.selection_score) j["selection_score"] = *r.selection_score;
    os << j.dump() << '\n';
  }
  return os.str();
}

void History::write_jsonl(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw DataError("cannot write " + path.string());
  os << to_jsonl();
}

std::vector<std::pair<int, double>> History::selection_scores() const {
  std::vector<std::pair<int, double>> out;
  if (initial_selection_score) out.emplace_back(0, *initial_selection_score);
  for (const auto& r : records)
    if (r.selection_score) out.emplace_back(r.step, *r.selection_score);
  return out;
}

// ---------------------------------------------------------------------------
// FID-like score

double frechet_distance(const Eigen::VectorXd& mu1, const Eigen::MatrixXd& s1, const Eigen::VectorXd& mu2,
                        const Eigen::MatrixXd& s2) {
  if (mu1.size() != mu2.size() || s1.rows() != mu1.size() || s2.rows() != mu2.size() || s1.cols() != s1.rows() ||
      s2.cols() != s2.rows())
    throw std::invalid_argument("Fréchet distance: dimension mismatch");
  const Eigen::MatrixXd r1 = psd_sqrt(s1);
  const Eigen::MatrixXd inner = r1 * s2 * r1;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (inner + inner.transpose()), Eigen::EigenvaluesOnly);
  const double cross = es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  const double value = (mu1 - mu2).squaredNorm() + s1.trace() + s2.trace() - 2.0 * cross;
  return std::max(0.0, value);
}

double frechet_distance_features(const Eigen::MatrixXd& f1, const Eigen::MatrixXd& f2) {
  if (f1.cols() != f2.cols()) throw std::invalid_argument("Fréchet distance: feature widths differ");
  Eigen::VectorXd mu1, mu2;
  Eigen::MatrixXd c1, c2;
  moments(f1, mu1, c1);
  moments(f2, mu2, c2);
  return frechet_distance(mu1, c1, mu2, c2);
}

double fid_like(const torch::Tensor& real_images, const torch::Tensor& generated_images) {
  if (real_images.size(0) < 32 || generated_images.size(0) < 32)
    throw std::invalid_argument("fid_like needs at least 32 images per side");
  return frechet_distance_features(pooled_features(real_images), pooled_features(generated_images));
}

// ---------------------------------------------------------------------------
// Stage 1

Stage1Result train_stage1(const data::TensorSet& labelled, const data::TensorSet& unlabelled,
                          const models::ModelConfig& mcfg, const TrainConfig& cfg) {
  mcfg.validate();
  cfg.validate();
  require_masks(labelled, "labelled");
  if (unlabelled.size() == 0) throw DataError("unlabelled set is empty");
  if (unlabelled.images.size(2) != mcfg.resolution || labelled.images.size(2) != mcfg.resolution)
    throw ConfigError("image resolution does not match model.resolution");

  torch::manual_seed(mix_seed(cfg.seed, kSeedStage1));
  Stage1Result res;
  auto& G = res.generator = models::Generator(mcfg);
  auto& Dr = res.image_discriminator = models::ImageDiscriminator(mcfg);
  auto& Dm = res.pair_discriminator = models::PairDiscriminator(mcfg);
  auto opt_g = gan_adam(G->parameters(), cfg.lr_generator);
  auto opt_dr = gan_adam(Dr->parameters(), cfg.lr_discriminator);
  auto opt_dm = gan_adam(Dm->parameters(), cfg.lr_discriminator);

  const auto n_real = std::min<std::int64_t>(unlabelled.size(), kFidRealCap);
  const Eigen::MatrixXd real_features = pooled_features(unlabelled.images.slice(0, 0, n_real));
  auto probe_gen = at::detail::createCPUGenerator(mix_seed(cfg.seed, kSeedFidProbe));
  const auto z_probe = at::randn({cfg.fid_probe_size, mcfg.latent_dim}, probe_gen);
  auto score = [&] { return frechet_distance_features(real_features, pooled_features(generate_images(G, z_probe))); };

  data::BatchSampler su(unlabelled.size(), cfg.batch_stage1, mix_seed(cfg.seed, kSeedSampler));
  data::BatchSampler sl(labelled.size(), cfg.batch_stage1, mix_seed(cfg.seed, kSeedSampler + 1));
  const auto labelled_onehot = one_hot_masks(labelled.masks);

  Selector sel{false};
  res.initial_score = score();
  res.history.initial_selection_score = res.initial_score;
  sel.offer(0, res.initial_score, *G);

  const double r1_scale = 0.5 * cfg.loss.r1_gamma * cfg.r1_every;
  for (int step = 1; step <= cfg.steps_stage1; ++step) {
    const bool do_r1 = cfg.loss.r1_gamma > 0.0 && step % cfg.r1_every == 0;
    const auto z = torch::randn({cfg.batch_stage1, mcfg.latent_dim});
    auto fake = G->forward(z);
    const auto fake_img = fake.image.detach();
    const auto fake_seg = torch::softmax(fake.seg_logits, 1).detach();

    // (a) D_r on unlabelled reals.
    set_requires_grad(*Dr, true);
    set_requires_grad(*Dm, true);
    auto x_real = index_batch(unlabelled.images, su.next());
    if (do_r1) x_real.set_requires_grad(true);
    const auto dr_real = Dr->forward(x_real);
    auto l_dr = losses::loss_dr(dr_real, Dr->forward(fake_img));
    const double v_dr = checked(l_dr, "loss_dr", step);
    if (do_r1) l_dr = l_dr + r1_scale * losses::r1_penalty(dr_real, {x_real});
    opt_dr.zero_grad();
    l_dr.backward();
    check_gradients(*Dr, "D_r", step);
    opt_dr.step();

    // (b) D_m on labelled pairs.
    const auto idx_l = sl.next();
    auto xl = index_batch(labelled.images, idx_l);
    auto yl = index_batch(labelled_onehot, idx_l);
    if (do_r1) {
      xl.set_requires_grad(true);
      yl.set_requires_grad(true);
    }
    const auto dm_real = Dm->decision(xl, yl);
    auto l_dm = losses::loss_dm(dm_real, Dm->decision(fake_img, fake_seg));
    const double v_dm = checked(l_dm, "loss_dm", step);
    if (do_r1) l_dm = l_dm + r1_scale * losses::r1_penalty(dm_real, {xl, yl});
    opt_dm.zero_grad();
    l_dm.backward();
    check_gradients(*Dm, "D_m", step);
    opt_dm.step();

    // (c) G against both discriminators.
    set_requires_grad(*Dr, false);
    set_requires_grad(*Dm, false);
    const auto l_g = losses::loss_generator(Dr->forward(fake.image),
                                            Dm->decision(fake.image, torch::softmax(fake.seg_logits, 1)),
                                            cfg.loss.nonsaturating);
    const double v_g = checked(l_g, "loss_generator", step);
    opt_g.zero_grad();
    l_g.backward();
    check_gradients(*G, "G", step);
    opt_g.step();

    res.history.records.push_back({step, {{"loss_dr", v_dr}, {"loss_dm", v_dm}, {"loss_g", v_g}}, std::nullopt});
    if (is_eval_step(step, cfg.steps_stage1, cfg.eval_every)) {
      const double s = score();
      record_selection(res.history, step, s);
      sel.offer(step, s, *G);
    }
  }
  set_requires_grad(*Dr, true);
  set_requires_grad(*Dm, true);
  ckpt::restore(*G, sel.best_state);
  res.best_step = sel.best_step;
  res.best_score = sel.best;
  return res;
}

// ---------------------------------------------------------------------------
// Stage 2

torch::Tensor predict_semanticgan(models::Generator& g, models::Encoder& e, const torch::Tensor& images) {
  torch::NoGradGuard no_grad;
  g->eval();
  e->eval();
  std::vector<torch::Tensor> out;
  for (std::int64_t i = 0; i < images.size(0); i += kEvalBatch) {
    const auto x = images.slice(0, i, std::min(images.size(0), i + kEvalBatch));
    out.push_back(models::binarize_logits(g->generate(e->forward(x)).seg_logits));
  }
  return torch::cat(out, 0);
}

torch::Tensor predict_segmenter(models::SegmenterNet& s, const torch::Tensor& images) {
  torch::NoGradGuard no_grad;
  const bool was_training = s.is_training();
  s.eval();
  std::vector<torch::Tensor> out;
  for (std::int64_t i = 0; i < images.size(0); i += kEvalBatch)
    out.push_back(models::binarize_logits(s.forward(images.slice(0, i, std::min(images.size(0), i + kEvalBatch)))));
  s.train(was_training);
  return torch::cat(out, 0);
}

double mean_dice(const torch::Tensor& pred, const torch::Tensor& masks) {
  if (pred.sizes() != masks.sizes()) throw std::invalid_argument("mean_dice: shape mismatch");
  double total = 0.0;
  for (std::int64_t i = 0; i < pred.size(0); ++i) total += metrics::dice(data::to_mask(pred[i]), data::to_mask(masks[i]));
  return total / static_cast<double>(pred.size(0));
}

Stage2Result train_stage2(models::Generator& G, const data::TensorSet& labelled, const data::TensorSet& unlabelled,
                          const models::ModelConfig& mcfg, const TrainConfig& cfg) {
  mcfg.validate();
  cfg.validate();
  require_masks(labelled, "labelled");
  if (unlabelled.size() == 0) throw DataError("unlabelled set is empty");
  if (G->stages() != models::num_stages(mcfg.resolution) || G->style_dim() != mcfg.style_dim)
    throw ConfigError("generator does not match the model config");

  Stage2Result res;
  G->eval();
  set_requires_grad(*G, false);
  res.generator_hash_before = ckpt::parameter_hash(*G);

  torch::manual_seed(mix_seed(cfg.seed, kSeedStage2));
  auto& E = res.encoder = models::Encoder(mcfg);
  E->set_latent_average(G->mean_style(kMeanStyleSamples));
  auto opt = torch::optim::Adam(E->parameters(), torch::optim::AdamOptions(cfg.lr_encoder));

  const auto [ltrain, lval] = data::split_validation(labelled, cfg.val_fraction, cfg.seed);
  const auto all_images = torch::cat({ltrain.images, unlabelled.images}, 0);
  data::BatchSampler sa(all_images.size(0), cfg.batch_stage2, mix_seed(cfg.seed, kSeedSampler + 2));
  data::BatchSampler sl(ltrain.size(), cfg.batch_stage2, mix_seed(cfg.seed, kSeedSampler + 3));
  const auto probe = unlabelled.images.slice(0, 0, 1);

  auto probe_recon = [&] {
    torch::NoGradGuard no_grad;
    E->eval();
    const auto rec = G->generate(E->forward(probe)).image;
    E->train();
    return losses::loss_encoder_image(probe, rec, cfg.loss).item<double>();
  };
  auto val_dice = [&] {
    const double d = mean_dice(predict_semanticgan(G, E, lval.images), lval.masks);
    E->train();
    return d;
  };

  Selector sel{true};
  res.initial_score = val_dice();
  res.history.initial_selection_score = res.initial_score;
  res.probe_recon_initial = res.probe_recon_best = probe_recon();
  sel.offer(0, res.initial_score, *E);

  for (int step = 1; step <= cfg.steps_stage2; ++step) {
    const auto x = index_batch(all_images, sa.next());
    const auto l_u = losses::loss_encoder_image(x, G->generate(E->forward(x)).image, cfg.loss);

    const auto idx_l = sl.next();
    const auto xl = index_batch(ltrain.images, idx_l);
    const auto yl = index_batch(ltrain.masks, idx_l);
    const auto out_l = G->generate(E->forward(xl));
    const auto l_s = losses::loss_encoder_seg(out_l.seg_logits, yl);
    const auto loss = l_u + l_s;
    const double v_u = checked(l_u, "loss_u", step);
    const double v_s = checked(l_s, "loss_s", step);
    opt.zero_grad();
    loss.backward();
    check_gradients(*E, "E", step);
    opt.step();

    res.history.records.push_back({step, {{"loss_u", v_u}, {"loss_s", v_s}}, std::nullopt});
    if (is_eval_step(step, cfg.steps_stage2, cfg.eval_every)) {
      const double s = val_dice();
      record_selection(res.history, step, s);
      if (sel.offer(step, s, *E)) res.probe_recon_best = probe_recon();
    }
  }
  ckpt::restore(*E, sel.best_state);
  E->eval();
  res.best_step = sel.best_step;
  res.best_score = sel.best;
  res.generator_hash_after = ckpt::parameter_hash(*G);
  set_requires_grad(*G, true);
  if (res.generator_hash_after != res.generator_hash_before)
    throw std::logic_error("generator parameters changed during encoder training");
  return res;
}

// ---------------------------------------------------------------------------
// Discriminative baselines

SegmenterResult train_suponly(const data::TensorSet& labelled, models::SegArch arch, const models::ModelConfig& mcfg,
                              const TrainConfig& cfg) {
  mcfg.validate();
  cfg.validate();
  require_masks(labelled, "labelled");

  torch::manual_seed(mix_seed(cfg.seed, kSeedSupOnly));
  SegmenterResult res;
  auto net = res.segmenter = models::make_segmenter(arch, mcfg);
  auto opt = torch::optim::Adam(net->parameters(),
                                torch::optim::AdamOptions(cfg.lr_segmenter).weight_decay(cfg.weight_decay));
  const auto [ltrain, lval] = data::split_validation(labelled, cfg.val_fraction, cfg.seed);
  data::BatchSampler sl(ltrain.size(), cfg.batch_segmenter, mix_seed(cfg.seed, kSeedSampler + 4));
  auto val_dice = [&] { return mean_dice(predict_segmenter(*net, lval.images), lval.masks); };

  net->train();
  Selector sel{true};
  res.initial_score = val_dice();
  res.history.initial_selection_score = res.initial_score;
  sel.offer(0, res.initial_score, *net);

  for (int step = 1; step <= cfg.steps_segmenter; ++step) {
    const auto idx = sl.next();
    const auto loss = losses::loss_suponly(net->forward(index_batch(ltrain.images, idx)), index_batch(ltrain.masks, idx));
    const double v = checked(loss, "loss_suponly", step);
    opt.zero_grad();
    loss.backward();
    check_gradients(*net, "segmenter", step);
    opt.step();
    res.history.records.push_back({step, {{"loss_suponly", v}}, std::nullopt});
    if (is_eval_step(step, cfg.steps_segmenter, cfg.eval_every)) {
      const double s = val_dice();
      record_selection(res.history, step, s);
      sel.offer(step, s, *net);
    }
  }
  ckpt::restore(*net, sel.best_state);
  net->eval();
  res.best_step = sel.best_step;
  res.best_score = sel.best;
  return res;
}

SegmenterResult train_semantican(const data::TensorSet& labelled, const data::TensorSet& unlabelled, models::SegArch arch,
                                 const models::ModelConfig& mcfg, const TrainConfig& cfg) {
  mcfg.validate();
  cfg.validate();
  require_masks(labelled, "labelled");
  if (unlabelled.size() == 0) throw DataError("unlabelled set is empty");

  torch::manual_seed(mix_seed(cfg.seed, kSeedSemanticAN));
  SegmenterResult res;
  auto net = res.segmenter = models::make_segmenter(arch, mcfg);
  auto& Dm = res.pair_discriminator = models::PairDiscriminator(mcfg);
  auto opt_s = torch::optim::Adam(net->parameters(), torch::optim::AdamOptions(cfg.lr_semantican));
  auto opt_d = gan_adam(Dm->parameters(), cfg.lr_semantican);

  const auto [ltrain, lval] = data::split_validation(labelled, cfg.val_fraction, cfg.seed);
  const auto onehot = one_hot_masks(ltrain.masks);
  data::BatchSampler sl(ltrain.size(), cfg.batch_segmenter, mix_seed(cfg.seed, kSeedSampler + 5));
  data::BatchSampler sr(ltrain.size(), cfg.batch_segmenter, mix_seed(cfg.seed, kSeedSampler + 6));
  data::BatchSampler su(unlabelled.size(), cfg.batch_segmenter, mix_seed(cfg.seed, kSeedSampler + 7));
  auto val_dice = [&] { return mean_dice(predict_segmenter(*net, lval.images), lval.masks); };

  net->train();
  Selector sel{true};
  res.initial_score = val_dice();
  res.history.initial_selection_score = res.initial_score;
  sel.offer(0, res.initial_score, *net);

  const double r1_scale = 0.5 * cfg.loss.r1_gamma * cfg.r1_every;
  for (int step = 1; step <= cfg.steps_semantican; ++step) {
    // Odd steps draw the segmenter batch from the labelled set, even steps from the unlabelled set.
    const bool labelled_step = step % 2 == 1;
    const auto idx = labelled_step ? sl.next() : su.next();
    const auto x = index_batch(labelled_step ? ltrain.images : unlabelled.images, idx);
    const auto logits = net->forward(x);
    const auto pred = torch::softmax(logits, 1);

    // (a) D_m: real labelled pairs against predicted pairs.
    set_requires_grad(*Dm, true);
    const bool do_r1 = cfg.loss.r1_gamma > 0.0 && step % cfg.r1_every == 0;
    const auto idx_r = sr.next();
    auto xr = index_batch(ltrain.images, idx_r);
    auto yr = index_batch(onehot, idx_r);
    if (do_r1) {
      xr.set_requires_grad(true);
      yr.set_requires_grad(true);
    }
    const auto d_real = Dm->decision(xr, yr);
    auto l_adv = losses::loss_adv(d_real, Dm->decision(x, pred.detach()));
    const double v_adv = checked(l_adv, "loss_adv", step);
    if (do_r1) l_adv = l_adv + r1_scale * losses::r1_penalty(d_real, {xr, yr});
    opt_d.zero_grad();
    l_adv.backward();
    check_gradients(*Dm, "D_m", step);
    opt_d.step();

    // (b) segmenter.
    set_requires_grad(*Dm, false);
    auto loss = losses::loss_seg_adv(Dm->decision(x, pred), cfg.loss.nonsaturating);
    const double v_seg = checked(loss, "loss_seg", step);
    std::vector<std::pair<std::string, double>> values{{"loss_adv", v_adv}, {"loss_seg", v_seg}};
    if (labelled_step) {
      const auto l_sup = losses::loss_suponly(logits, index_batch(ltrain.masks, idx));
      values.emplace_back("loss_suponly", checked(l_sup, "loss_suponly", step));
      loss = loss + l_sup;
    }
    opt_s.zero_grad();
    loss.backward();
    check_gradients(*net, "segmenter", step);
    opt_s.step();

    res.history.records.push_back({step, std::move(values), std::nullopt});
    if (is_eval_step(step, cfg.steps_semantican, cfg.eval_every)) {
      const double s = val_dice();
      record_selection(res.history, step, s);
      sel.offer(step, s, *net);
    }
  }
  set_requires_grad(*Dm, true);
  ckpt::restore(*net, sel.best_state);
  net->eval();
  res.best_step = sel.best_step;
  res.best_score = sel.best;
  return res;
}

}  // namespace segbench::train
