#include "segbench/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>
#include <tuple>

#include "segbench/plot.hpp"

#include <Eigen/Dense>

#include "segbench/errors.hpp"
#include "segbench/rng.hpp"

namespace segbench::exp {
namespace F = torch::nn::functional;
using metrics::MetricName;
using metrics::MetricRecord;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string seed_id(std::uint64_t seed) { return "seed-" + std::to_string(seed); }

std::size_t count_sex(const synth::DatasetPartition& p, synth::Sex s) {
  return static_cast<std::size_t>(std::count_if(p.samples.begin(), p.samples.end(), [&](const auto& x) { return x.sex == s; }));
}

// Prefixes every JSONL line with run identification fields.
std::string tag_jsonl(const std::string& jsonl, const std::string& fields) {
  std::istringstream is(jsonl);
  std::ostringstream os;
  for (std::string line; std::getline(is, line);) {
    if (line.size() < 2) continue;
    os << '{' << fields << ',' << line.substr(1) << '\n';
  }
  return os.str();
}

}  // namespace

// ---------------------------------------------------------------------------
// Generalisation

std::vector<EvalSet> evaluation_sets(const synth::PartitionSet& parts, const prep::PreprocessConfig& pp) {
  return {{std::string(synth::kLabelledDomain), data::to_tensors(parts.labelled_test, pp, true)},
          {std::string(synth::kUnlabelledDomain), data::to_tensors(parts.annotated_subset, pp, true)},
          {std::string(synth::kOutOfDomain), data::to_tensors(parts.out_of_domain, pp, true)}};
}

NamedPredictor oracle_predictor(std::string name) {
  return {std::move(name), [](const data::TensorSet& s) {
            if (!s.has_masks()) throw DataError("oracle predictor needs ground-truth masks");
            return s.masks.clone();
          }};
}

NamedPredictor segmenter_predictor(std::string name, std::shared_ptr<models::SegmenterNet> net) {
  return {std::move(name), [net](const data::TensorSet& s) { return train::predict_segmenter(*net, s.images); }};
}

NamedPredictor semanticgan_predictor(std::string name, models::Generator g, models::Encoder e) {
  return {std::move(name), [g, e](const data::TensorSet& s) mutable { return train::predict_semanticgan(g, e, s.images); }};
}

std::vector<MetricRecord> segmentation_records(const std::string& model, const std::string& dataset,
                                               const data::TensorSet& set, const torch::Tensor& pred) {
  if (!set.has_masks()) throw DataError("dataset '" + dataset + "' has no ground truth");
  if (pred.sizes() != set.masks.sizes()) throw std::invalid_argument("prediction shape does not match '" + dataset + "'");
  std::vector<MetricRecord> out;
  for (std::int64_t i = 0; i < set.size(); ++i) {
    const auto p = data::to_mask(pred[i]);
    const auto t = data::to_mask(set.masks[i]);
    const auto ov = metrics::overlap(p, t);
    double asd = kNaN, hd = kNaN;
    try {
      const auto sd = metrics::surface_distances(p, t);
      asd = sd.asd;
      hd = sd.hausdorff;
    } catch (const UndefinedMetric&) {
    }
    const auto& id = set.ids[static_cast<std::size_t>(i)];
    const auto sex = set.sexes[static_cast<std::size_t>(i)];
    for (auto [m, v] : {std::pair{MetricName::dice, ov.dice}, std::pair{MetricName::precision, ov.precision},
                        std::pair{MetricName::recall, ov.recall}, std::pair{MetricName::asd, asd},
                        std::pair{MetricName::hausdorff, hd}})
      out.push_back({model, dataset, id, sex, m, v});
  }
  return out;
}

std::vector<MetricRecord> run_generalisation_eval(const std::vector<NamedPredictor>& predictors,
                                                  const std::vector<EvalSet>& datasets) {
  if (predictors.empty()) throw ConfigError("no models to evaluate");
  std::vector<MetricRecord> out;
  for (const auto& p : predictors) {
    if (!p.predict) throw ConfigError("model '" + p.model + "' has no checkpoint loaded");
    for (const auto& d : datasets) {
      const auto recs = segmentation_records(p.model, d.name, d.set, p.predict(d.set));
      out.insert(out.end(), recs.begin(), recs.end());
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Generator cache

std::shared_ptr<train::Stage1Result> GeneratorCache::get(const std::string& key) const {
  const auto it = entries_.find(key);
  return it == entries_.end() ? nullptr : it->second;
}

void GeneratorCache::put(const std::string& key, std::shared_ptr<train::Stage1Result> value) {
  entries_[key] = std::move(value);
}

// ---------------------------------------------------------------------------
// Bias suite

namespace {
constexpr std::array<std::pair<BiasConfig, std::string_view>, 6> kBiasNames = {{
    {BiasConfig::control, "control"},
    {BiasConfig::full_bias, "full_bias"},
    {BiasConfig::biased_G, "biased_G"},
    {BiasConfig::biased_E, "biased_E"},
    {BiasConfig::biased_Dl, "biased_Dl"},
    {BiasConfig::biased_Du, "biased_Du"},
}};
}  // namespace

std::string_view to_string(BiasConfig b) {
  for (const auto& [k, v] : kBiasNames)
    if (k == b) return v;
  return "?";
}

BiasConfig parse_bias_config(std::string_view s) {
  for (const auto& [k, v] : kBiasNames)
    if (v == s) return k;
  throw ConfigError("unknown bias configuration '" + std::string(s) + "'");
}

const std::vector<BiasConfig>& all_bias_configs() {
  static const std::vector<BiasConfig> all = {BiasConfig::control,  BiasConfig::full_bias, BiasConfig::biased_G,
                                              BiasConfig::biased_E, BiasConfig::biased_Dl, BiasConfig::biased_Du};
  return all;
}

BiasPopulation population(BiasConfig b) {
  switch (b) {
    case BiasConfig::control: return {false, false, false, false};
    case BiasConfig::full_bias: return {true, true, true, true};
    case BiasConfig::biased_G: return {true, true, false, false};
    case BiasConfig::biased_E: return {false, false, true, true};
    case BiasConfig::biased_Dl: return {false, true, false, true};
    case BiasConfig::biased_Du: return {true, false, true, false};
  }
  throw ConfigError("unknown bias configuration");
}

void ExperimentManifest::validate() const {
  if (name.empty()) throw ConfigError("manifest name is empty");
  if (seeds.empty()) throw ConfigError("manifest '" + name + "' has no seeds");
  preprocess.validate();
  model.validate();
  train.validate();
  if (preprocess.resolution != model.resolution)
    throw ConfigError("preprocess.resolution and model.resolution differ");
}

BiasRun run_bias_config(BiasConfig config, std::uint64_t seed, const synth::PartitionConfig& data_cfg,
                        const prep::PreprocessConfig& pp, const models::ModelConfig& mcfg, const train::TrainConfig& tcfg,
                        GeneratorCache& cache) {
  const auto parts = synth::build_partitions(data_cfg);
  const auto pop = population(config);
  auto pick = [](const synth::DatasetPartition& p, bool males) { return males ? synth::apply_bias_filter(p, synth::Sex::M) : p; };
  const auto g_unl = pick(parts.unlabelled, pop.g_unlabelled_males);
  const auto g_lab = pick(parts.labelled_train, pop.g_labelled_males);
  const auto e_unl = pick(parts.unlabelled, pop.e_unlabelled_males);
  const auto e_lab = pick(parts.labelled_train, pop.e_labelled_males);

  BiasRun run;
  run.config = config;
  run.seed = seed;
  run.audit = {config,
               seed,
               count_sex(g_unl, synth::Sex::F),
               count_sex(g_lab, synth::Sex::F),
               count_sex(e_unl, synth::Sex::F),
               count_sex(e_lab, synth::Sex::F),
               g_unl.size(),
               g_lab.size(),
               e_unl.size(),
               e_lab.size()};

  auto tc = tcfg;
  tc.seed = seed;
  const std::string key = "seed=" + std::to_string(seed) + ";Du=" + (pop.g_unlabelled_males ? "M" : "all") +
                          ";Dl=" + (pop.g_labelled_males ? "M" : "all");
  run.stage1 = cache.get(key);
  if (!run.stage1) {
    run.stage1 = std::make_shared<train::Stage1Result>(
        train::train_stage1(data::to_tensors(g_lab, pp, true), data::to_tensors(g_unl, pp, false), mcfg, tc));
    cache.put(key, run.stage1);
  }
  run.stage1_history = run.stage1->history;
  auto s2 = train::train_stage2(run.stage1->generator, data::to_tensors(e_lab, pp, true), data::to_tensors(e_unl, pp, false),
                                mcfg, tc);
  run.stage2_history = s2.history;
  run.encoder = s2.encoder;
  const auto pred = semanticgan_predictor(std::string(to_string(config)), run.stage1->generator, run.encoder);
  run.records = run_generalisation_eval({pred}, evaluation_sets(parts, pp));
  return run;
}

namespace {
bool same_evaluation_data(const ExperimentManifest& a, const ExperimentManifest& b) {
  const auto& x = a.data;
  const auto& y = b.data;
  return x.image_size == y.image_size && x.n_labelled_train == y.n_labelled_train &&
         x.n_labelled_test == y.n_labelled_test && x.n_unlabelled == y.n_unlabelled && x.n_annotated == y.n_annotated &&
         x.n_out_of_domain == y.n_out_of_domain && x.female_fraction == y.female_fraction &&
         x.pathology_prevalence == y.pathology_prevalence && x.in_domain == y.in_domain &&
         x.out_of_domain == y.out_of_domain && x.seed == y.seed &&
         a.preprocess.resolution == b.preprocess.resolution && a.preprocess.gamma == b.preprocess.gamma &&
         a.preprocess.equalize == b.preprocess.equalize;
}
}  // namespace

BiasSuiteResult run_bias_suite(const std::vector<ExperimentManifest>& manifests, GeneratorCache& cache) {
  if (manifests.empty()) throw ConfigError("bias suite needs at least one manifest");
  std::set<BiasConfig> seen;
  for (const auto& m : manifests) {
    m.validate();
    if (!seen.insert(m.bias_config).second)
      throw ConfigError("bias configuration '" + std::string(to_string(m.bias_config)) + "' appears twice");
    if (!same_evaluation_data(m, manifests.front()))
      throw ConfigError("manifest '" + m.name + "' evaluates on different data than '" + manifests.front().name + "'");
  }
  BiasSuiteResult res;
  for (const auto& m : manifests) {
    std::vector<MetricRecord> manifest_records;
    std::string history;
    for (auto seed : m.seeds) {
      auto run = run_bias_config(m.bias_config, seed, m.data, m.preprocess, m.model, m.train, cache);
      manifest_records.insert(manifest_records.end(), run.records.begin(), run.records.end());
      const std::string tag = "\"config\":\"" + std::string(to_string(m.bias_config)) + "\",\"seed\":" + std::to_string(seed);
      history += tag_jsonl(run.stage1_history.to_jsonl(), tag + ",\"stage\":1");
      history += tag_jsonl(run.stage2_history.to_jsonl(), tag + ",\"stage\":2");
      res.runs.push_back(std::move(run));
    }
    if (!m.outputs_dir.empty()) {
      std::filesystem::create_directories(m.outputs_dir);
      metrics::write_metrics_csv(m.outputs_dir / "metrics.csv", manifest_records);
      std::ofstream(m.outputs_dir / "history.jsonl", std::ios::trunc) << history;
      ReportLayout layout;
      layout.title = "Bias configuration " + std::string(to_string(m.bias_config));
      render_report_from_csv(m.outputs_dir / "metrics.csv", layout, m.outputs_dir);
    }
    res.records.insert(res.records.end(), manifest_records.begin(), manifest_records.end());
  }
  return res;
}

// ---------------------------------------------------------------------------
// Downstream classification

void DownstreamConfig::validate() const {
  if (n_train < 4 || n_test < 4) throw ConfigError("downstream.n_train and n_test must be at least 4");
  if (!(prevalence > 0.0 && prevalence < 1.0)) throw ConfigError("downstream.prevalence must lie in (0,1)");
  if (!(confound_agreement >= 0.0 && confound_agreement <= 1.0))
    throw ConfigError("downstream.confound_agreement must lie in [0,1]");
  if (classifier_steps < 1 || classifier_batch < 1) throw ConfigError("downstream classifier steps and batch must be positive");
  if (!(classifier_lr > 0.0)) throw ConfigError("downstream.classifier_lr must be positive");
  if (seeds.empty()) throw ConfigError("downstream.seeds is empty");
  if (corrupt_dilate < 0 || corrupt_shift < 0) throw ConfigError("downstream corruption sizes must be >= 0");
}

DownstreamData make_downstream_data(const DownstreamConfig& cfg, const synth::DomainSpec& spec,
                                    const prep::PreprocessConfig& pp) {
  cfg.validate();
  const int size = std::max(64, pp.resolution);
  auto build = [&](int n, std::uint64_t stream, std::vector<int>& labels, const char* prefix) {
    Rng rng(mix_seed(cfg.data_seed, stream));
    synth::DatasetPartition p;
    p.role = synth::Role::test;
    p.domain = "downstream";
    const int n_pos = static_cast<int>(std::lround(cfg.prevalence * n));
    std::vector<int> ys(static_cast<std::size_t>(n), 0);
    std::fill(ys.begin(), ys.begin() + n_pos, 1);
    rng.shuffle(ys.begin(), ys.end());
    for (int i = 0; i < n; ++i) {
      const int y = ys[static_cast<std::size_t>(i)];
      const bool agree = rng.uniform() < cfg.confound_agreement;
      synth::PathologyFlags flags{y == 1, agree ? y == 1 : y == 0};
      const auto sex = i % 2 == 0 ? synth::Sex::F : synth::Sex::M;
      auto s = synth::generate_sample(spec, sex, flags, mix_seed(cfg.data_seed, stream * 1000003ULL + static_cast<std::uint64_t>(i)),
                                      size, size);
      char id[32];
      std::snprintf(id, sizeof id, "%s-%05d", prefix, i);
      s.id = id;
      p.samples.push_back(std::move(s));
      labels.push_back(y);
    }
    return data::to_tensors(p, pp, true);
  };
  DownstreamData d;
  d.train = build(cfg.n_train, 11, d.train_labels, "dtrain");
  d.test = build(cfg.n_test, 12, d.test_labels, "dtest");
  return d;
}

torch::Tensor apply_mask(const torch::Tensor& images, const torch::Tensor& masks) {
  const auto m = masks.to(images.scalar_type()).unsqueeze(1);
  return images * m - (1.0 - m);
}

torch::Tensor corrupt_masks(const torch::Tensor& masks, int dilate, int shift) {
  auto m = masks.to(torch::kFloat32).unsqueeze(1);
  if (dilate > 0)
    m = F::max_pool2d(m, F::MaxPool2dFuncOptions(2 * dilate + 1).stride(1).padding(dilate));
  m = m.squeeze(1);
  if (shift > 0) {
    const auto h = m.size(1), w = m.size(2);
    auto out = torch::zeros_like(m);
    if (shift < h && shift < w)
      out.slice(1, shift, h).slice(2, shift, w).copy_(m.slice(1, 0, h - shift).slice(2, 0, w - shift));
    m = out;
  }
  return (m > 0.5).to(torch::kUInt8);
}

namespace {

std::vector<double> train_and_score(const torch::Tensor& train_x, const std::vector<int>& train_y, const torch::Tensor& test_x,
                                    std::uint64_t seed, const DownstreamConfig& cfg, const models::ModelConfig& mcfg) {
  torch::manual_seed(mix_seed(seed, 0xc1a55));
  models::Classifier clf(mcfg);
  auto opt = torch::optim::Adam(clf->parameters(), torch::optim::AdamOptions(cfg.classifier_lr));
  const auto y_all = torch::tensor(std::vector<float>(train_y.begin(), train_y.end()));
  data::BatchSampler sampler(train_x.size(0), cfg.classifier_batch, mix_seed(seed, 0xba7c));
  clf->train();
  for (int step = 1; step <= cfg.classifier_steps; ++step) {
    const auto idx = data::index_tensor(sampler.next());
    const auto loss =
        F::binary_cross_entropy_with_logits(clf->forward(train_x.index_select(0, idx)), y_all.index_select(0, idx));
    if (!std::isfinite(loss.item<double>()))
      throw DivergenceError("non-finite classifier loss at step " + std::to_string(step));
    opt.zero_grad();
    loss.backward();
    opt.step();
  }
  clf->eval();
  torch::NoGradGuard no_grad;
  const auto scores = torch::sigmoid(clf->forward(test_x)).to(torch::kFloat64).contiguous();
  return {scores.data_ptr<double>(), scores.data_ptr<double>() + scores.numel()};
}

void push_auroc(std::vector<MetricRecord>& out, const std::string& source, std::uint64_t seed,
                const std::vector<double>& scores, const std::vector<int>& labels, const std::vector<synth::Sex>& sexes) {
  out.push_back({source, "downstream", seed_id(seed), std::nullopt, MetricName::auroc, metrics::auroc(scores, labels)});
  for (auto sex : {synth::Sex::F, synth::Sex::M}) {
    std::vector<double> s;
    std::vector<int> l;
    for (std::size_t i = 0; i < scores.size(); ++i)
      if (sexes[i] == sex) {
        s.push_back(scores[i]);
        l.push_back(labels[i]);
      }
    double v = kNaN;
    try {
      v = metrics::auroc(s, l);
    } catch (const std::invalid_argument&) {
    }
    out.push_back({source, "downstream", seed_id(seed), sex, MetricName::auroc, v});
  }
}

}  // namespace

std::vector<MetricRecord> run_downstream_classification(const std::vector<std::string>& sources,
                                                        const std::vector<NamedPredictor>& model_sources,
                                                        const DownstreamData& d, const DownstreamConfig& cfg,
                                                        const models::ModelConfig& mcfg) {
  cfg.validate();
  auto both_classes = [](const std::vector<int>& y) {
    return std::find(y.begin(), y.end(), 0) != y.end() && std::find(y.begin(), y.end(), 1) != y.end();
  };
  if (!both_classes(d.train_labels) || !both_classes(d.test_labels))
    throw DataError("downstream labels contain a single class");

  std::vector<MetricRecord> out;
  for (const auto& source : sources) {
    torch::Tensor train_x, test_x;
    if (source == kUnmasked) {
      train_x = d.train.images;
      test_x = d.test.images;
    } else if (source == kOracle || source == kPermuted) {
      train_x = apply_mask(d.train.images, d.train.masks);
      test_x = apply_mask(d.test.images, d.test.masks);
    } else if (source == kCorrupted) {
      train_x = apply_mask(d.train.images, corrupt_masks(d.train.masks, cfg.corrupt_dilate, cfg.corrupt_shift));
      test_x = apply_mask(d.test.images, corrupt_masks(d.test.masks, cfg.corrupt_dilate, cfg.corrupt_shift));
    } else {
      const auto it = std::find_if(model_sources.begin(), model_sources.end(), [&](const auto& p) { return p.model == source; });
      if (it == model_sources.end()) throw ConfigError("unknown mask source '" + source + "'");
      train_x = apply_mask(d.train.images, it->predict(d.train));
      test_x = apply_mask(d.test.images, it->predict(d.test));
    }
    for (auto seed : cfg.seeds) {
      auto labels = d.train_labels;
      if (source == kPermuted) {
        Rng rng(mix_seed(seed, 0x9e7));
        rng.shuffle(labels.begin(), labels.end());
      }
      const auto scores = train_and_score(train_x, labels, test_x, seed, cfg, mcfg);
      push_auroc(out, source, seed, scores, d.test_labels, d.test.sexes);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// PCA probe

ScaleSweep make_scale_sweep(const synth::DomainSpec& base, int n, double scale_min, double scale_max, std::uint64_t seed,
                            const prep::PreprocessConfig& pp, int image_size) {
  if (n < 1) throw ConfigError("scale sweep needs at least one image");
  if (!(scale_min > 0.0 && scale_min <= scale_max)) throw ConfigError("scale sweep range is invalid");
  Rng rng(mix_seed(seed, 0x5ca1e));
  synth::DatasetPartition p;
  p.role = synth::Role::test;
  p.domain = "scale-sweep";
  ScaleSweep out;
  for (int i = 0; i < n; ++i) {
    auto spec = base;
    spec.scale = rng.uniform(scale_min, scale_max);
    auto s = synth::generate_sample(spec, synth::Sex::M, {}, mix_seed(seed, static_cast<std::uint64_t>(i)), image_size,
                                    image_size);
    s.id = "sweep-" + std::to_string(i);
    out.scales.push_back(spec.scale);
    p.samples.push_back(std::move(s));
  }
  out.set = data::to_tensors(p, pp, true);
  return out;
}

ProbeModel semanticgan_probe_model(models::Generator g, models::Encoder e) {
  return [g, e](const torch::Tensor& x) mutable {
    torch::NoGradGuard no_grad;
    g->eval();
    e->eval();
    const auto out = g->generate(e->forward(x));
    return ReconstructSegment{out.image, models::binarize_logits(out.seg_logits)};
  };
}

std::vector<PcaProbeResult> run_pca_probe(const ProbeModel& model, const torch::Tensor& images, int n_components,
                                          const std::optional<std::vector<double>>& covariate) {
  if (images.dim() != 4 || images.size(1) != 1) throw std::invalid_argument("PCA probe expects [N,1,H,W] images");
  const auto n = images.size(0);
  if (n_components < 1 || n <= n_components)
    throw std::invalid_argument("PCA probe needs more images than components");
  if (covariate && static_cast<std::int64_t>(covariate->size()) != n)
    throw std::invalid_argument("covariate length does not match the image count");
  const auto h = images.size(2), w = images.size(3);

  const auto flat = images.reshape({n, h * w}).to(torch::kFloat64).contiguous();
  using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const Eigen::MatrixXd x = Eigen::Map<const RowMajor>(flat.data_ptr<double>(), n, h * w);
  const Eigen::RowVectorXd mean = x.colwise().mean();
  const Eigen::MatrixXd xc = x.rowwise() - mean;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(xc * xc.transpose());
  const double total = es.eigenvalues().cwiseMax(0.0).sum();

  std::vector<PcaProbeResult> results;
  for (int k = 0; k < n_components; ++k) {
    const auto col = n - 1 - k;
    const double lambda = std::max(0.0, es.eigenvalues()(col));
    if (lambda <= 0.0) throw std::invalid_argument("image set has fewer non-trivial components than requested");
    Eigen::VectorXd v = xc.transpose() * es.eigenvectors().col(col) / std::sqrt(lambda);
    Eigen::VectorXd proj = xc * v;

    PcaProbeResult r;
    r.component_index = k + 1;
    r.sigma = std::sqrt(lambda / static_cast<double>(n - 1));
    r.explained_variance_ratio = total > 0.0 ? lambda / total : 0.0;
    r.covariate_correlation = kNaN;
    if (covariate) {
      const Eigen::Map<const Eigen::VectorXd> c(covariate->data(), n);
      const Eigen::VectorXd cc = c.array() - c.mean();
      const Eigen::VectorXd pc = proj.array() - proj.mean();
      const double denom = std::sqrt(cc.squaredNorm() * pc.squaredNorm());
      double corr = denom > 0.0 ? cc.dot(pc) / denom : 0.0;
      if (corr < 0.0) {
        v = -v;
        corr = -corr;
      }
      r.covariate_correlation = corr;
    } else {
      Eigen::Index arg = 0;
      v.cwiseAbs().maxCoeff(&arg);
      if (v(arg) < 0.0) v = -v;
    }

    r.offsets = {-2.0, -1.0, 0.0, 1.0, 2.0};
    std::vector<torch::Tensor> probes;
    for (double o : r.offsets) {
      Eigen::RowVectorXd p = mean + (o * r.sigma) * v.transpose();
      p = p.cwiseMax(-1.0).cwiseMin(1.0);
      probes.push_back(torch::from_blob(p.data(), {1, 1, h, w}, torch::kFloat64).to(torch::kFloat32).clone());
    }
    const auto batch = torch::cat(probes, 0);
    const auto out = model(batch);
    for (std::size_t i = 0; i < r.offsets.size(); ++i) {
      const auto ii = static_cast<std::int64_t>(i);
      r.probe_images.push_back(batch[ii].clone());
      r.reconstructions.push_back(out.images[ii].clone());
      r.segmentations.push_back(out.masks[ii].clone());
      r.areas.push_back(out.masks[ii].to(torch::kFloat64).sum().item<double>());
    }
    const double a0 = r.areas[2];
    for (std::size_t i = 0; i < r.areas.size(); ++i) {
      if (i == 2)
        r.area_delta_pct.push_back(0.0);
      else if (a0 > 0.0)
        r.area_delta_pct.push_back((r.areas[i] - a0) / a0 * 100.0);
      else
        r.area_delta_pct.push_back(r.areas[i] == 0.0 ? 0.0 : kNaN);
    }
    results.push_back(std::move(r));
  }
  return results;
}

void write_pca_figures(const std::vector<PcaProbeResult>& results, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (const auto& r : results) {
    const int h = static_cast<int>(r.probe_images.front().size(1));
    const int w = static_cast<int>(r.probe_images.front().size(2));
    const int scale = std::max(1, 96 / w);
    const int cell = w * scale + 8;
    plot::Canvas cv(20 + cell * 5, 40 + 3 * (h * scale + 8) + 20);
    cv.text(10, 8, "PC" + std::to_string(r.component_index) + " PROBES, RECONSTRUCTIONS, SEGMENTATIONS", {40, 40, 40});
    for (std::size_t i = 0; i < r.offsets.size(); ++i) {
      const int x = 10 + static_cast<int>(i) * cell;
      char label[48];
      std::snprintf(label, sizeof label, "%+.0fS %+.1f%%", r.offsets[i], r.area_delta_pct[i]);
      cv.text(x, 24, label, {40, 40, 40});
      cv.blit_gray(x, 36, data::to_image(r.probe_images[i]), scale, -1.0f, 1.0f);
      cv.blit_gray(x, 36 + (h * scale + 8), data::to_image(r.reconstructions[i]), scale, -1.0f, 1.0f);
      Image seg(h, w);
      const auto m = data::to_mask(r.segmentations[i]);
      for (std::size_t p = 0; p < seg.values.size(); ++p) seg.values[p] = m.values[p];
      cv.blit_gray(x, 36 + 2 * (h * scale + 8), seg, scale, 0.0f, 1.0f);
    }
    cv.write_png(dir / ("pca_component_" + std::to_string(r.component_index) + ".png"));
  }
}

std::string pca_summary_markdown(const std::vector<PcaProbeResult>& results) {
  std::ostringstream os;
  os << "| Component | Explained variance | Covariate corr. | -2σ | -1σ | 0 | +1σ | +2σ |\n";
  os << "|---|---|---|---|---|---|---|---|\n";
  char buf[64];
  for (const auto& r : results) {
    os << "| " << r.component_index << " | ";
    std::snprintf(buf, sizeof buf, "%.3f", r.explained_variance_ratio);
    os << buf << " | ";
    if (std::isnan(r.covariate_correlation))
      os << "NA";
    else {
      std::snprintf(buf, sizeof buf, "%.3f", r.covariate_correlation);
      os << buf;
    }
    for (std::size_t i = 0; i < r.offsets.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%.0f px (%+.1f%%)", r.areas[i], r.area_delta_pct[i]);
      os << " | " << buf;
    }
    os << " |\n";
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Reports

namespace {

struct Cell {
  std::vector<double> all, f, m, pooled;
  std::size_t missing = 0;
};

using CellKey = std::tuple<std::string, std::string, MetricName>;  // model, dataset, metric

template <typename T>
void push_unique(std::vector<T>& v, const T& x) {
  if (std::find(v.begin(), v.end(), x) == v.end()) v.push_back(x);
}

std::string fmt(const char* f, double v) {
  if (std::isnan(v)) return "NA";
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string mean_std(const std::vector<double>& v) {
  if (v.empty()) return "NA";
  return fmt("%.4f", metrics::mean(v)) + " ± " + fmt("%.4f", metrics::sample_std(v));
}

std::string file_safe(std::string_view s) {
  std::string out;
  for (char c : s) out += std::isalnum(static_cast<unsigned char>(c)) ? c : '_';
  return out;
}

double mean_or_nan(const std::vector<double>& v) { return v.empty() ? kNaN : metrics::mean(v); }
double std_or_nan(const std::vector<double>& v) { return v.empty() ? kNaN : metrics::sample_std(v); }

}  // namespace

RenderedReport render_report(const std::vector<MetricRecord>& records, const ReportLayout& layout,
                             const std::filesystem::path& out_dir) {
  if (records.empty()) throw std::invalid_argument("no metric records to report");
  std::vector<std::string> models, datasets;
  std::vector<MetricName> present;
  std::map<CellKey, Cell> cells;
  for (const auto& r : records) {
    push_unique(models, r.model);
    push_unique(datasets, r.dataset);
    push_unique(present, r.metric);
    auto& c = cells[{r.model, r.dataset, r.metric}];
    if (std::isnan(r.value)) {
      ++c.missing;
      continue;
    }
    c.pooled.push_back(r.value);
    if (!r.sex)
      c.all.push_back(r.value);
    else
      (*r.sex == synth::Sex::F ? c.f : c.m).push_back(r.value);
  }
  std::vector<MetricName> metric_order;
  for (auto m : {MetricName::dice, MetricName::precision, MetricName::recall, MetricName::asd, MetricName::hausdorff,
                 MetricName::auroc})
    if (std::find(present.begin(), present.end(), m) != present.end()) metric_order.push_back(m);
  auto overall = [](const Cell& c) -> const std::vector<double>& { return c.all.empty() ? c.pooled : c.all; };
  auto find = [&](const std::string& model, const std::string& ds, MetricName m) -> const Cell* {
    const auto it = cells.find({model, ds, m});
    return it == cells.end() ? nullptr : &it->second;
  };

  RenderedReport rep;
  std::ostringstream md;
  md << "# " << layout.title << "\n\n";
  md << "Mean ± standard deviation over samples (segmentation) or seeds (classification). Best value per column in bold.\n\n";

  md << "## Summary\n\n";
  for (const auto& ds : datasets) {
    md << "### " << ds << "\n\n| Model |";
    std::vector<MetricName> cols;
    for (auto m : metric_order) {
      bool any = false;
      for (const auto& model : models) any = any || find(model, ds, m);
      if (any) cols.push_back(m);
    }
    for (auto m : cols) md << ' ' << metrics::to_string(m) << " |";
    md << "\n|---|";
    for (std::size_t i = 0; i < cols.size(); ++i) md << "---|";
    md << '\n';
    std::map<MetricName, double> best;
    for (auto m : cols)
      for (const auto& model : models)
        if (const auto* c = find(model, ds, m); c && !overall(*c).empty()) {
          const double v = metrics::mean(overall(*c));
          const auto it = best.find(m);
          if (it == best.end() || (metrics::higher_is_better(m) ? v > it->second : v < it->second)) best[m] = v;
        }
    for (const auto& model : models) {
      bool row = false;
      for (auto m : cols) row = row || find(model, ds, m);
      if (!row) continue;
      md << "| " << model << " |";
      for (auto m : cols) {
        const auto* c = find(model, ds, m);
        if (!c || overall(*c).empty()) {
          md << " NA |";
          continue;
        }
        const bool is_best = metrics::mean(overall(*c)) == best[m];
        md << ' ' << (is_best ? "**" : "") << mean_std(overall(*c)) << (is_best ? "**" : "");
        if (c->missing) md << " (" << c->missing << " NA)";
        md << " |";
      }
      md << '\n';
    }
    md << '\n';
  }

  const auto strat = metrics::stratify(records);
  md << "## By sex\n\n";
  md << "Welch t-test between female and male samples; p < 0.05 marked with *.\n\n";
  for (const auto& ds : datasets) {
    md << "### " << ds << "\n\n| Model | Metric | F | M | F - M | t | p |\n|---|---|---|---|---|---|---|\n";
    for (const auto& model : models)
      for (auto m : metric_order) {
        const auto* c = find(model, ds, m);
        if (!c || (c->f.empty() && c->m.empty())) continue;
        md << "| " << model << " | " << metrics::to_string(m) << " | " << mean_std(c->f) << " (n=" << c->f.size()
           << ") | " << mean_std(c->m) << " (n=" << c->m.size() << ") | "
           << fmt("%+.4f", mean_or_nan(c->f) - mean_or_nan(c->m)) << " | ";
        const auto it = std::find_if(strat.comparisons.begin(), strat.comparisons.end(), [&](const auto& g) {
          return g.model == model && g.dataset == ds && g.metric == m;
        });
        if (it == strat.comparisons.end())
          md << "NA | NA |\n";
        else
          md << fmt("%.3f", it->welch.t) << " | " << fmt("%.4f", it->welch.p) << (it->welch.p < 0.05 ? "*" : "") << " |\n";
      }
    md << '\n';
  }

  std::filesystem::create_directories(out_dir / "figures");
  for (const auto& ds : datasets) {
    MetricName fm = metric_order.front();
    for (const auto& model : models)
      if (find(model, ds, MetricName::dice)) fm = MetricName::dice;
    if (fm != MetricName::dice)
      for (auto m : metric_order) {
        bool any = false;
        for (const auto& model : models) any = any || find(model, ds, m);
        if (any) {
          fm = m;
          break;
        }
      }
    plot::BarChart chart;
    chart.title = ds + " " + std::string(metrics::to_string(fm)) + " by sex";
    chart.series = {"F", "M"};
    for (const auto& model : models)
      if (const auto* c = find(model, ds, fm))
        chart.groups.push_back({model, {mean_or_nan(c->f), mean_or_nan(c->m)}, {std_or_nan(c->f), std_or_nan(c->m)}});
    if (chart.groups.empty()) continue;
    chart.zero_baseline = false;
    const auto rel = std::filesystem::path("figures") / ("stratified_" + file_safe(ds) + ".png");
    plot::write_bar_chart(out_dir / rel, chart, std::max(720, 120 + 110 * static_cast<int>(chart.groups.size())), 400);
    rep.figures.push_back(rel);
  }

  if (layout.control_model &&
      std::find(models.begin(), models.end(), *layout.control_model) != models.end()) {
    const auto& ctl = *layout.control_model;
    md << "## Differences from " << ctl << "\n\n";
    md << "Difference of means against " << ctl << ", absolute and relative to the " << ctl << " mean.\n\n";
    md << "| Model | Dataset | Metric | Group | Δ | Δ % |\n|---|---|---|---|---|---|\n";
    plot::BarChart chart;
    chart.title = "Relative dice change from " + ctl + " (%)";
    for (const auto& ds : datasets)
      for (const char* g : {"F", "M"}) chart.series.push_back(ds + " " + g);
    for (const auto& model : models) {
      if (model == ctl) continue;
      plot::BarGroup bar{model, {}, {}};
      for (const auto& ds : datasets) {
        for (auto m : metric_order) {
          const auto* a = find(model, ds, m);
          const auto* b = find(ctl, ds, m);
          if (!a || !b) continue;
          const std::pair<const char*, std::pair<const std::vector<double>*, const std::vector<double>*>> groups[] = {
              {"all", {&overall(*a), &overall(*b)}}, {"F", {&a->f, &b->f}}, {"M", {&a->m, &b->m}}};
          for (const auto& [g, vals] : groups) {
            if (vals.first->empty() || vals.second->empty()) continue;
            const double base = metrics::mean(*vals.second);
            const double d = metrics::mean(*vals.first) - base;
            const double pct = base != 0.0 ? d / std::abs(base) * 100.0 : kNaN;
            md << "| " << model << " | " << ds << " | " << metrics::to_string(m) << " | " << g << " | "
               << fmt("%+.4f", d) << " | " << fmt("%+.2f", pct) << " |\n";
          }
        }
        for (const auto* g : {"F", "M"}) {
          const auto* a = find(model, ds, MetricName::dice);
          const auto* b = find(ctl, ds, MetricName::dice);
          double pct = kNaN;
          if (a && b) {
            const auto& va = std::string(g) == "F" ? a->f : a->m;
            const auto& vb = std::string(g) == "F" ? b->f : b->m;
            if (!va.empty() && !vb.empty() && metrics::mean(vb) != 0.0)
              pct = (metrics::mean(va) - metrics::mean(vb)) / std::abs(metrics::mean(vb)) * 100.0;
          }
          bar.values.push_back(pct);
          bar.errors.push_back(0.0);
        }
      }
      chart.groups.push_back(std::move(bar));
    }
    md << '\n';
    const bool any = std::any_of(chart.groups.begin(), chart.groups.end(), [](const auto& g) {
      return std::any_of(g.values.begin(), g.values.end(), [](double v) { return std::isfinite(v); });
    });
    if (any) {
      const auto rel = std::filesystem::path("figures") / "bias_deltas.png";
      plot::write_bar_chart(out_dir / rel, chart, std::max(720, 120 + 40 * static_cast<int>(chart.groups.size() * chart.series.size())), 420);
      rep.figures.push_back(rel);
    }
  }

  if (!rep.figures.empty()) {
    md << "## Figures\n\n";
    for (const auto& f : rep.figures) md << "![" << f.stem().string() << "](" << f.generic_string() << ")\n\n";
  }
  rep.markdown = md.str();
  return rep;
}

RenderedReport render_report_from_csv(const std::filesystem::path& metrics_csv, const ReportLayout& layout,
                                      const std::filesystem::path& out_dir) {
  const auto records = metrics::read_metrics_csv(metrics_csv);
  if (records.empty()) throw DataError(metrics_csv.string() + " holds no records");
  auto rep = render_report(records, layout, out_dir);
  std::ofstream(out_dir / "report.md", std::ios::trunc) << rep.markdown;
  return rep;
}

}  // namespace segbench::exp
