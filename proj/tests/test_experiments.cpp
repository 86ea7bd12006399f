#include "support/doctest.hpp"

#include <fstream>
#include <sstream>

#include "segbench/errors.hpp"
#include "segbench/experiments.hpp"
#include "support/temp_dir.hpp"

using namespace segbench;
using metrics::MetricName;
using metrics::MetricRecord;

namespace {

synth::PartitionConfig tiny_data() {
  synth::PartitionConfig c;
  c.n_labelled_train = 12;
  c.n_labelled_test = 6;
  c.n_unlabelled = 12;
  c.n_annotated = 6;
  c.n_out_of_domain = 6;
  return c;
}

prep::PreprocessConfig pp16() {
  prep::PreprocessConfig p;
  p.resolution = 16;
  return p;
}

models::ModelConfig tiny_model() {
  models::ModelConfig c;
  c.resolution = 16;
  c.latent_dim = 8;
  c.style_dim = 16;
  c.g_base_channels = c.d_base_channels = c.e_base_channels = 8;
  c.g_max_channels = c.d_max_channels = c.e_max_channels = 16;
  c.dm_channels = 8;
  c.seg_channels = 8;
  c.classifier_channels = 4;
  return c;
}

train::TrainConfig tiny_train() {
  train::TrainConfig t;
  t.steps_stage1 = t.steps_stage2 = 2;
  t.batch_stage1 = t.batch_stage2 = 4;
  t.eval_every = 2;
  t.fid_probe_size = 32;
  return t;
}

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

std::vector<MetricRecord> fixture_records() {
  std::vector<MetricRecord> r;
  const double f_ctrl[] = {0.90, 0.92, 0.94}, m_ctrl[] = {0.95, 0.96, 0.97};
  const double f_bias[] = {0.80, 0.84, 0.82}, m_bias[] = {0.95, 0.97, 0.96};
  for (int i = 0; i < 3; ++i) {
    const auto id = [&](const char* s) { return std::string(s) + std::to_string(i); };
    r.push_back({"control", "in-domain-labelled", id("f"), synth::Sex::F, MetricName::dice, f_ctrl[i]});
    r.push_back({"control", "in-domain-labelled", id("m"), synth::Sex::M, MetricName::dice, m_ctrl[i]});
    r.push_back({"control", "in-domain-labelled", id("f"), synth::Sex::F, MetricName::asd, 1.0 + 0.5 * i});
    r.push_back({"control", "in-domain-labelled", id("m"), synth::Sex::M, MetricName::asd, 0.5 + 0.25 * i});
    r.push_back({"full_bias", "in-domain-labelled", id("f"), synth::Sex::F, MetricName::dice, f_bias[i]});
    r.push_back({"full_bias", "in-domain-labelled", id("m"), synth::Sex::M, MetricName::dice, m_bias[i]});
    r.push_back({"full_bias", "in-domain-labelled", id("f"), synth::Sex::F, MetricName::asd, 2.0 + 0.5 * i});
    r.push_back({"full_bias", "in-domain-labelled", id("m"), synth::Sex::M, MetricName::asd, i == 1 ? std::nan("") : 0.75});
  }
  return r;
}

}  // namespace

TEST_CASE("oracle predictions score perfectly on every evaluation set") {
  const auto parts = synth::build_partitions(tiny_data());
  const auto sets = exp::evaluation_sets(parts, pp16());
  REQUIRE(sets.size() == 3);
  CHECK(sets[0].name == synth::kLabelledDomain);
  CHECK(sets[2].name == synth::kOutOfDomain);
  const auto recs = exp::run_generalisation_eval({exp::oracle_predictor(), exp::oracle_predictor("again")}, sets);
  CHECK(recs.size() == 2 * (6 + 6 + 6) * 5);
  for (const auto& r : recs) {
    if (r.metric == MetricName::dice || r.metric == MetricName::precision || r.metric == MetricName::recall)
      CHECK(r.value == 1.0);
    if (r.metric == MetricName::asd || r.metric == MetricName::hausdorff) CHECK(r.value == 0.0);
    CHECK(r.sex.has_value());
  }
  CHECK_THROWS_AS(exp::run_generalisation_eval({}, sets), ConfigError);
  CHECK_THROWS_AS(exp::run_generalisation_eval({{"missing", nullptr}}, sets), ConfigError);
}

TEST_CASE("empty predictions produce NA surface distances") {
  const auto parts = synth::build_partitions(tiny_data());
  const auto set = data::to_tensors(parts.labelled_test, pp16(), true);
  const auto recs = exp::segmentation_records("empty", "d", set, torch::zeros_like(set.masks));
  for (const auto& r : recs) {
    if (r.metric == MetricName::asd) CHECK(std::isnan(r.value));
    if (r.metric == MetricName::dice) CHECK(r.value == 0.0);
  }
}

TEST_CASE("bias configurations follow the training-population table") {
  using B = exp::BiasConfig;
  using P = exp::BiasPopulation;
  CHECK(exp::population(B::control) == P{false, false, false, false});
  CHECK(exp::population(B::full_bias) == P{true, true, true, true});
  CHECK(exp::population(B::biased_G) == P{true, true, false, false});
  CHECK(exp::population(B::biased_E) == P{false, false, true, true});
  CHECK(exp::population(B::biased_Dl) == P{false, true, false, true});
  CHECK(exp::population(B::biased_Du) == P{true, false, true, false});
  CHECK(exp::all_bias_configs().size() == 6);
  for (auto b : exp::all_bias_configs()) CHECK(exp::parse_bias_config(exp::to_string(b)) == b);
  CHECK_THROWS_AS(exp::parse_bias_config("half_bias"), ConfigError);
}

TEST_CASE("bias runs filter training sets and share generators by population") {
  exp::GeneratorCache cache;
  const auto full = exp::run_bias_config(exp::BiasConfig::full_bias, 0, tiny_data(), pp16(), tiny_model(), tiny_train(), cache);
  CHECK(full.audit.g_unlabelled_f == 0);
  CHECK(full.audit.g_labelled_f == 0);
  CHECK(full.audit.e_unlabelled_f == 0);
  CHECK(full.audit.e_labelled_f == 0);
  CHECK(full.audit.g_labelled_n == 6);
  CHECK(cache.size() == 1);

  const auto bg = exp::run_bias_config(exp::BiasConfig::biased_G, 0, tiny_data(), pp16(), tiny_model(), tiny_train(), cache);
  CHECK(cache.size() == 1);
  CHECK(bg.stage1 == full.stage1);
  CHECK(bg.audit.e_labelled_f == 6);
  CHECK(bg.records.size() == 18 * 5);
  for (const auto& r : bg.records) CHECK(r.model == "biased_G");
}

TEST_CASE("bias suite rejects inconsistent manifests") {
  exp::ExperimentManifest m;
  m.name = "a";
  m.seeds = {0};
  m.data = tiny_data();
  m.preprocess = pp16();
  m.model = tiny_model();
  m.train = tiny_train();
  exp::GeneratorCache cache;
  CHECK_THROWS_AS(exp::run_bias_suite({m, m}, cache), ConfigError);
  auto other = m;
  other.bias_config = exp::BiasConfig::full_bias;
  other.data.seed = 9;
  CHECK_THROWS_AS(exp::run_bias_suite({m, other}, cache), ConfigError);
  auto no_seeds = m;
  no_seeds.seeds.clear();
  CHECK_THROWS_AS(no_seeds.validate(), ConfigError);
  CHECK_THROWS_AS(exp::run_bias_suite({}, cache), ConfigError);
}

TEST_CASE("downstream data and masking") {
  exp::DownstreamConfig cfg;
  cfg.n_train = 40;
  cfg.n_test = 20;
  const auto d = exp::make_downstream_data(cfg, {}, pp16());
  CHECK(d.train.size() == 40);
  CHECK(std::count(d.train_labels.begin(), d.train_labels.end(), 1) == 20);
  const auto again = exp::make_downstream_data(cfg, {}, pp16());
  CHECK(torch::equal(d.test.images, again.test.images));

  const auto masked = exp::apply_mask(d.train.images, d.train.masks);
  const auto outside = (d.train.masks == 0).unsqueeze(1);
  CHECK(masked.masked_select(outside).eq(-1).all().item<bool>());
  CHECK(torch::equal(masked.masked_select(~outside), d.train.images.masked_select(~outside)));

  auto m = torch::zeros({1, 8, 8}, torch::kUInt8);
  m[0][2][2] = 1;
  const auto c = exp::corrupt_masks(m, 1, 3);
  CHECK(c.sum().item<int>() == 9);
  CHECK(c[0][5][5].item<int>() == 1);
  CHECK(c[0][2][2].item<int>() == 0);

  auto bad = cfg;
  bad.prevalence = 1.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("downstream classification reports one AUROC per source and seed") {
  exp::DownstreamConfig cfg;
  cfg.n_train = 16;
  cfg.n_test = 8;
  cfg.classifier_steps = 2;
  cfg.classifier_batch = 8;
  cfg.seeds = {0, 1};
  const auto d = exp::make_downstream_data(cfg, {}, pp16());
  const auto recs = exp::run_downstream_classification({"unmasked", "oracle", "mine"}, {exp::oracle_predictor("mine")},
                                                        d, cfg, tiny_model());
  std::size_t overall = 0;
  for (const auto& r : recs) {
    CHECK(r.metric == MetricName::auroc);
    CHECK(r.dataset == "downstream");
    overall += !r.sex.has_value();
  }
  CHECK(overall == 3 * 2);
  CHECK_THROWS_AS(exp::run_downstream_classification({"nobody"}, {}, d, cfg, tiny_model()), ConfigError);
  auto one_class = d;
  std::fill(one_class.train_labels.begin(), one_class.train_labels.end(), 1);
  CHECK_THROWS_AS(exp::run_downstream_classification({"oracle"}, {}, one_class, cfg, tiny_model()), DataError);
}

TEST_CASE("PCA probe") {
  const auto sweep = exp::make_scale_sweep({}, 60, 0.8, 1.2, 3, pp16());
  // Thresholding stands in for a trained model: lungs are the brightest structures.
  const exp::ProbeModel threshold = [](const torch::Tensor& x) {
    return exp::ReconstructSegment{x.clone(), (x.squeeze(1) > 0.4).to(torch::kUInt8)};
  };
  const auto res = exp::run_pca_probe(threshold, sweep.set.images, 3, sweep.scales);
  REQUIRE(res.size() == 3);
  for (const auto& r : res) {
    CHECK(r.offsets.size() == 5);
    CHECK(r.area_delta_pct[2] == 0.0);
    CHECK(r.segmentations.size() == 5);
    for (double a : r.areas) CHECK(a >= 0.0);
    for (const auto& p : r.probe_images) CHECK(p.abs().max().item<float>() <= 1.0f);
  }
  CHECK(res[0].covariate_correlation > 0.5);
  CHECK(res[0].explained_variance_ratio >= res[1].explained_variance_ratio);

  const auto again = exp::run_pca_probe(threshold, sweep.set.images, 3, sweep.scales);
  CHECK(again[1].areas == res[1].areas);
  CHECK_THROWS_AS(exp::run_pca_probe(threshold, sweep.set.images.slice(0, 0, 3), 3), std::invalid_argument);

  test::TempDir tmp;
  exp::write_pca_figures(res, tmp.path());
  CHECK(std::filesystem::exists(tmp.path() / "pca_component_3.png"));
  CHECK(exp::pca_summary_markdown(res).find("| 3 |") != std::string::npos);
}

TEST_CASE("report rendering matches the golden file") {
  test::TempDir tmp;
  exp::ReportLayout layout;
  layout.title = "Fixture";
  layout.control_model = "control";
  const auto rep = exp::render_report(fixture_records(), layout, tmp.path());
  const auto golden = read_file(std::filesystem::path(SEGBENCH_TEST_DATA) / "report_fixture.md");
  CHECK(rep.markdown == golden);
  CHECK(rep.figures.size() == 2);
  for (const auto& f : rep.figures) CHECK(std::filesystem::exists(tmp.path() / f));

  test::TempDir tmp2;
  const auto rep2 = exp::render_report(fixture_records(), layout, tmp2.path());
  CHECK(rep2.markdown == rep.markdown);
  CHECK(read_file(tmp.path() / "figures" / "bias_deltas.png") == read_file(tmp2.path() / "figures" / "bias_deltas.png"));

  CHECK_THROWS_AS(exp::render_report({}, layout, tmp.path()), std::invalid_argument);
}

TEST_CASE("summary tables have one cell per model, dataset and metric") {
  test::TempDir tmp;
  auto recs = fixture_records();
  for (auto r : fixture_records()) {
    r.dataset = "out-of-domain";
    recs.push_back(r);
  }
  const auto md = exp::render_report(recs, {}, tmp.path()).markdown;
  const auto summary = md.substr(0, md.find("## By sex"));
  std::istringstream in(summary);
  std::size_t cells = 0;
  for (std::string line; std::getline(in, line);)
    if (line.rfind("| control", 0) == 0 || line.rfind("| full_bias", 0) == 0)
      cells += std::count(line.begin(), line.end(), '|') - 2;
  CHECK(cells == 2 * 2 * 2);
}

TEST_CASE("report renders from metrics.csv") {
  test::TempDir tmp;
  metrics::write_metrics_csv(tmp.path() / "metrics.csv", fixture_records());
  exp::ReportLayout layout;
  layout.title = "Fixture";
  layout.control_model = "control";
  exp::render_report_from_csv(tmp.path() / "metrics.csv", layout, tmp.path());
  CHECK(read_file(tmp.path() / "report.md") == read_file(std::filesystem::path(SEGBENCH_TEST_DATA) / "report_fixture.md"));
}
