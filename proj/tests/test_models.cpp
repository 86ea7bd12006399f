#include "support/doctest.hpp"

#include <fstream>

#include "segbench/checkpoint.hpp"
#include "segbench/errors.hpp"
#include "segbench/models.hpp"
#include "support/temp_dir.hpp"

using namespace segbench;
using models::ModelConfig;

namespace {

ModelConfig tiny(int resolution = 32) {
  ModelConfig c;
  c.resolution = resolution;
  c.latent_dim = 16;
  c.style_dim = 32;
  c.g_base_channels = c.d_base_channels = c.e_base_channels = 8;
  c.g_max_channels = c.d_max_channels = c.e_max_channels = 32;
  c.dm_channels = 16;
  c.seg_channels = 8;
  c.unet_channels = 8;
  c.classifier_channels = 8;
  return c;
}

}  // namespace

TEST_CASE("stage count follows the resolution") {
  CHECK(models::num_stages(4) == 1);
  CHECK(models::num_stages(64) == 5);
  CHECK(models::num_stages(256) == 7);
  CHECK_THROWS_AS(models::num_stages(48), ConfigError);
}

TEST_CASE("generator outputs a bounded image and two-channel logits") {
  torch::manual_seed(0);
  models::Generator g(tiny());
  const auto out = g->forward(torch::randn({3, 16}));
  CHECK(out.image.sizes() == torch::IntArrayRef({3, 1, 32, 32}));
  CHECK(out.seg_logits.sizes() == torch::IntArrayRef({3, 2, 32, 32}));
  CHECK(out.image.abs().max().item<float>() <= 1.0f);

  const auto code = g->map_latent(torch::randn({2, 16}));
  CHECK(code.stages() == 4);
  CHECK(code.w.size(2) == 32);
  std::vector<torch::Tensor> per_stage(4, torch::randn({2, 16}));
  CHECK(g->map_latent(per_stage).stages() == 4);
  per_stage.pop_back();
  CHECK_THROWS_AS(g->map_latent(per_stage), std::invalid_argument);
  CHECK_THROWS_AS(g->generate({torch::randn({2, 3, 32})}), std::invalid_argument);
}

TEST_CASE("demodulated convolution has unit output variance per channel") {
  torch::manual_seed(1);
  models::ModulatedConv conv(64, 32, 3, 16, true, false);
  const auto x = torch::randn({4, 64, 32, 32});
  const auto y = conv->forward(x, torch::randn({4, 16}));
  // Bias is zero-initialised; demodulation normalises each filter's weight norm.
  CHECK(y.var().item<double>() == doctest::Approx(1.0).epsilon(0.15));
}

TEST_CASE("discriminators and encoder shapes") {
  torch::manual_seed(2);
  const auto cfg = tiny();
  models::ImageDiscriminator dr(cfg);
  CHECK(dr->forward(torch::randn({5, 1, 32, 32})).sizes() == torch::IntArrayRef({5}));
  models::PairDiscriminator dm(cfg);
  const auto maps = dm->forward(torch::randn({2, 1, 32, 32}), torch::rand({2, 2, 32, 32}));
  CHECK(maps.size() == 2);
  CHECK(maps[0].size(2) > maps[1].size(2));
  CHECK(dm->decision(torch::randn({2, 1, 32, 32}), torch::rand({2, 2, 32, 32})).sizes() == torch::IntArrayRef({2}));

  models::Encoder e(cfg);
  models::Generator g(cfg);
  const auto code = e->forward(torch::randn({2, 1, 32, 32}));
  CHECK(code.w.sizes() == torch::IntArrayRef({2, 4, 32}));
  const auto avg = g->mean_style(64);
  e->set_latent_average(avg);
  CHECK(g->generate(e->forward(torch::randn({2, 1, 32, 32}))).image.size(2) == 32);
}

TEST_CASE("segmenters and classifier shapes") {
  torch::manual_seed(3);
  const auto cfg = tiny();
  for (auto arch : {models::SegArch::DL, models::SegArch::UN}) {
    auto s = models::make_segmenter(arch, cfg);
    CHECK(s->forward(torch::randn({2, 1, 32, 32})).sizes() == torch::IntArrayRef({2, 2, 32, 32}));
  }
  CHECK(models::parse_arch("UN") == models::SegArch::UN);
  CHECK_THROWS_AS(models::parse_arch("resnet"), std::invalid_argument);
  models::Classifier clf(cfg);
  CHECK(clf->forward(torch::randn({3, 1, 32, 32})).sizes() == torch::IntArrayRef({3}));
}

TEST_CASE("desk-scale generator stays below five million parameters") {
  ModelConfig desk;
  models::Generator g(desk);
  CHECK(models::parameter_count(*g) < 5'000'000);
  models::Encoder e(desk);
  CHECK(models::parameter_count(*e) < 5'000'000);
}

TEST_CASE("frozen feature extractor is fixed and dtype-following") {
  const auto& fx = models::default_feature_extractor();
  models::FrozenFeatureExtractor other;
  REQUIRE(fx.layers() == other.layers());
  for (int i = 0; i < fx.layers(); ++i) CHECK(torch::equal(fx.weights()[i], other.weights()[i]));
  const auto x = torch::rand({2, 1, 16, 16}, torch::kFloat64);
  const auto f = fx.features(x);
  CHECK(f.size() == 3);
  CHECK((f[0].scalar_type() == torch::kFloat64));
  CHECK(fx.pooled_features(x).sizes() == torch::IntArrayRef({2, 16 + 32 + 64}));
}

TEST_CASE("one-hot and argmax helpers") {
  const auto m = torch::tensor({0, 1, 1, 0}, torch::kUInt8).reshape({1, 2, 2});
  const auto oh = models::one_hot_masks(m);
  CHECK(oh.sizes() == torch::IntArrayRef({1, 2, 2, 2}));
  CHECK(torch::equal(oh.sum(1), torch::ones({1, 2, 2})));
  CHECK(torch::equal(models::binarize_logits(oh), m));
}

TEST_CASE("model config validation") {
  auto c = tiny();
  c.dm_scales = 4;
  c.resolution = 16;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = tiny();
  c.style_dim = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("checkpoint round trip is exact") {
  test::TempDir tmp;
  torch::manual_seed(4);
  const auto cfg = tiny();
  models::Generator g(cfg);
  ckpt::CheckpointMeta meta;
  meta.component = ckpt::Component::G;
  meta.step = 17;
  meta.selection_score = 3.25;
  meta.config_hash = "abc";
  meta.extra = {{"resolution", 32}};
  ckpt::save(tmp.path() / "g.ckpt", *g, meta);

  torch::manual_seed(5);
  models::Generator g2(cfg);
  CHECK(ckpt::parameter_hash(*g) != ckpt::parameter_hash(*g2));
  const auto back = ckpt::load(tmp.path() / "g.ckpt", *g2, ckpt::Component::G);
  CHECK(ckpt::parameter_hash(*g) == ckpt::parameter_hash(*g2));
  CHECK(back.step == 17);
  CHECK(back.selection_score == 3.25);
  CHECK(back.config_hash == "abc");
  CHECK(back.extra["resolution"] == 32);
  CHECK(ckpt::read_meta(tmp.path() / "g.ckpt").component == ckpt::Component::G);

  models::Encoder e(cfg);
  CHECK_THROWS_AS(ckpt::load(tmp.path() / "g.ckpt", *e, ckpt::Component::E), DataError);
  CHECK_THROWS_AS(ckpt::load(tmp.path() / "g.ckpt", *e, ckpt::Component::G), DataError);
  auto wider = cfg;
  wider.g_max_channels = 64;
  wider.g_base_channels = 16;
  models::Generator g3(wider);
  CHECK_THROWS_AS(ckpt::load(tmp.path() / "g.ckpt", *g3, ckpt::Component::G), DataError);

  std::ofstream(tmp.path() / "junk.ckpt") << "not a checkpoint";
  CHECK_THROWS_AS(ckpt::read_meta(tmp.path() / "junk.ckpt"), DataError);
  CHECK_THROWS_AS(ckpt::read_meta(tmp.path() / "absent.ckpt"), DataError);
}

TEST_CASE("snapshots restore state") {
  torch::manual_seed(6);
  models::Encoder e(tiny());
  const auto before = ckpt::parameter_hash(*e);
  const auto snap = ckpt::snapshot(*e);
  {
    torch::NoGradGuard ng;
    for (auto& p : e->parameters()) p.add_(1.0);
  }
  CHECK(ckpt::parameter_hash(*e) != before);
  ckpt::restore(*e, snap);
  CHECK(ckpt::parameter_hash(*e) == before);
  CHECK(ckpt::fnv1a_hex("") == "cbf29ce484222325");
  CHECK(ckpt::parse_component("D_m") == ckpt::Component::D_m);
  CHECK_THROWS_AS(ckpt::parse_component("X"), DataError);
}
