#include "support/doctest.hpp"

#include <sstream>

#include "json.hpp"

#include "segbench/checkpoint.hpp"
#include "segbench/errors.hpp"
#include "segbench/training.hpp"
#include "support/oracles.hpp"

using namespace segbench;

namespace {

models::ModelConfig tiny() {
  models::ModelConfig c;
  c.resolution = 16;
  c.latent_dim = 8;
  c.style_dim = 16;
  c.g_base_channels = c.d_base_channels = c.e_base_channels = 8;
  c.g_max_channels = c.d_max_channels = c.e_max_channels = 16;
  c.dm_channels = 8;
  c.seg_channels = 8;
  c.unet_channels = 4;
  return c;
}

train::TrainConfig short_run(int steps) {
  train::TrainConfig t;
  t.steps_stage1 = t.steps_stage2 = t.steps_segmenter = t.steps_semantican = steps;
  t.batch_stage1 = t.batch_stage2 = t.batch_segmenter = 4;
  t.eval_every = 2;
  t.fid_probe_size = 32;
  return t;
}

data::TensorSet toy_set(int n, bool masks, std::uint64_t seed) {
  synth::PartitionConfig pc;
  pc.n_labelled_train = n;
  pc.n_labelled_test = pc.n_annotated = pc.n_out_of_domain = 1;
  pc.n_unlabelled = n;
  pc.seed = seed;
  const auto parts = synth::build_partitions(pc);
  prep::PreprocessConfig pp;
  pp.resolution = 16;
  return masks ? data::to_tensors(parts.labelled_train, pp, true) : data::to_tensors(parts.unlabelled, pp, false);
}

Eigen::MatrixXd gaussian_rows(Rng& rng, int n, const Eigen::Vector2d& mu, const Eigen::Matrix2d& chol) {
  Eigen::MatrixXd out(n, 2);
  for (int i = 0; i < n; ++i) {
    const Eigen::Vector2d z(rng.normal(), rng.normal());
    out.row(i) = (mu + chol * z).transpose();
  }
  return out;
}

}  // namespace

TEST_CASE("Fréchet distance matches the 2-D closed form") {
  Rng rng(1);
  for (int i = 0; i < 20; ++i) {
    Eigen::Matrix2d a, b;
    a << rng.uniform(0.2, 2), 0, rng.uniform(-1, 1), rng.uniform(0.2, 2);
    b << rng.uniform(0.2, 2), 0, rng.uniform(-1, 1), rng.uniform(0.2, 2);
    const Eigen::Matrix2d s1 = a * a.transpose(), s2 = b * b.transpose();
    const Eigen::Vector2d m1(rng.normal(), rng.normal()), m2(rng.normal(), rng.normal());
    const double mu1[2] = {m1(0), m1(1)}, mu2[2] = {m2(0), m2(1)};
    const double c1[4] = {s1(0, 0), s1(0, 1), s1(1, 0), s1(1, 1)}, c2[4] = {s2(0, 0), s2(0, 1), s2(1, 0), s2(1, 1)};
    CHECK(std::abs(train::frechet_distance(m1, s1, m2, s2) - oracle::frechet_2d(mu1, c1, mu2, c2)) < 1e-9);
  }
}

TEST_CASE("Fréchet distance of feature sets") {
  Rng rng(2);
  Eigen::Matrix2d chol;
  chol << 1.0, 0.0, 0.5, 0.8;
  const auto f = gaussian_rows(rng, 500, {0, 0}, chol);
  CHECK(train::frechet_distance_features(f, f) < 1e-6);
  const auto g = gaussian_rows(rng, 500, {3, 0}, chol);
  CHECK(train::frechet_distance_features(f, g) == doctest::Approx(9.0).epsilon(0.1));
  CHECK_THROWS_AS(train::frechet_distance_features(f.topRows(1), g), std::invalid_argument);
}

TEST_CASE("fid_like needs enough images and is zero on identical sets") {
  torch::manual_seed(3);
  const auto x = torch::rand({40, 1, 16, 16}) * 2 - 1;
  CHECK(train::fid_like(x, x) < 1e-6);
  CHECK(train::fid_like(x, torch::rand({40, 1, 16, 16}) * 0.2) > train::fid_like(x, torch::rand({40, 1, 16, 16}) * 2 - 1));
  CHECK_THROWS_AS(train::fid_like(x.slice(0, 0, 10), x), std::invalid_argument);
}

TEST_CASE("stage 2 leaves the generator untouched") {
  const auto lab = toy_set(12, true, 4);
  const auto unl = toy_set(12, false, 5);
  auto cfg = short_run(4);
  auto s1 = train::train_stage1(lab, unl, tiny(), cfg);
  CHECK(s1.history.size() == 4);
  CHECK(s1.history.initial_selection_score.has_value());
  const auto before = ckpt::parameter_hash(*s1.generator);
  auto s2 = train::train_stage2(s1.generator, lab, unl, tiny(), cfg);
  CHECK(ckpt::parameter_hash(*s1.generator) == before);
  CHECK(s2.generator_hash_before == s2.generator_hash_after);
  CHECK(s2.best_score >= s2.initial_score);
  const auto pred = train::predict_semanticgan(s1.generator, s2.encoder, lab.images);
  CHECK(pred.sizes() == lab.masks.sizes());
}

TEST_CASE("training is deterministic for a seed") {
  const auto lab = toy_set(12, true, 6);
  auto cfg = short_run(6);
  const auto a = train::train_suponly(lab, models::SegArch::DL, tiny(), cfg);
  const auto b = train::train_suponly(lab, models::SegArch::DL, tiny(), cfg);
  CHECK(ckpt::parameter_hash(*a.segmenter) == ckpt::parameter_hash(*b.segmenter));
  CHECK(a.history.to_jsonl() == b.history.to_jsonl());
  cfg.seed = 1;
  const auto c = train::train_suponly(lab, models::SegArch::DL, tiny(), cfg);
  CHECK(ckpt::parameter_hash(*a.segmenter) != ckpt::parameter_hash(*c.segmenter));
}

TEST_CASE("selection keeps the best validation score including the initial state") {
  const auto lab = toy_set(12, true, 7);
  const auto unl = toy_set(12, false, 8);
  const auto res = train::train_semantican(lab, unl, models::SegArch::UN, tiny(), short_run(6));
  double best = res.initial_score;
  for (const auto& [step, s] : res.history.selection_scores()) best = std::max(best, s);
  CHECK(res.best_score == best);
}

TEST_CASE("history JSONL starts with the step-0 line") {
  train::History h;
  h.initial_selection_score = 0.5;
  h.records.push_back({1, {{"loss", 0.25}}, std::nullopt});
  h.records.push_back({2, {{"loss", 0.125}}, 0.75});
  std::istringstream in(h.to_jsonl());
  std::string line;
  std::vector<nlohmann::json> lines;
  while (std::getline(in, line)) lines.push_back(nlohmann::json::parse(line));
  REQUIRE(lines.size() == 3);
  CHECK(lines[0]["step"] == 0);
  CHECK(lines[1]["loss"] == 0.25);
  CHECK(lines[2]["selection_score"] == 0.75);
  CHECK(h.selection_scores().size() == 2);
}

TEST_CASE("non-finite losses raise DivergenceError") {
  auto lab = toy_set(8, true, 9);
  lab.images = torch::full_like(lab.images, std::nan(""));
  CHECK_THROWS_AS(train::train_suponly(lab, models::SegArch::DL, tiny(), short_run(3)), DivergenceError);
}

TEST_CASE("train config validation") {
  auto cfg = short_run(3);
  cfg.steps_stage1 = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = short_run(3);
  cfg.val_fraction = 1.5;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("mean dice helper") {
  const auto m = torch::randint(0, 2, {3, 8, 8}, torch::kUInt8);
  CHECK(train::mean_dice(m, m) == 1.0);
}
