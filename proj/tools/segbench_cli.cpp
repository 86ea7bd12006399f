// segbench command-line entry point. See docs/cli.md.

#include <sys/wait.h>
#include <unistd.h>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "segbench/checkpoint.hpp"
#include "segbench/config.hpp"
#include "segbench/dataset.hpp"
#include "segbench/errors.hpp"
#include "segbench/experiments.hpp"
#include "segbench/metrics.hpp"
#include "segbench/synthdata.hpp"
#include "segbench/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;
using namespace segbench;

namespace {

constexpr const char* kPartitionDirs[] = {"labelled_train", "labelled_test", "unlabelled", "annotated_subset",
                                          "out_of_domain"};

struct Common {
  std::optional<std::string> config_path;
  std::vector<std::string> overrides;
  bool dry_run = false;
  bool force = false;
  std::string out;

  config::RunConfig load() const {
    std::optional<fs::path> p;
    if (config_path) p = *config_path;
    return config::load(p, overrides);
  }
};

void add_common(CLI::App* cmd, Common& c, bool needs_out = true) {
  cmd->add_option("--config", c.config_path, "JSON run configuration")->check(CLI::ExistingFile);
  cmd->add_option("--set", c.overrides, "Override a config key: section.key=value (repeatable)");
  cmd->add_flag("--dry-run", c.dry_run, "Print the resolved plan and exit without side effects");
  cmd->add_flag("--force", c.force, "Overwrite a non-empty output directory");
  if (needs_out) cmd->add_option("--out", c.out, "Output directory")->required();
}

bool non_empty_dir(const fs::path& p) { return fs::exists(p) && (!fs::is_directory(p) || !fs::is_empty(p)); }

void prepare_out(const fs::path& out, bool force) {
  if (non_empty_dir(out)) {
    if (!force) throw ConfigError("output directory " + out.string() + " is not empty (use --force to overwrite)");
    fs::remove_all(out);
  }
  fs::create_directories(out);
}

void print_plan(const std::string& command, const config::RunConfig& cfg, const ordered_json& details) {
  ordered_json plan;
  plan["command"] = command;
  plan["config_hash"] = config::config_hash(cfg);
  for (const auto& [k, v] : details.items()) plan[k] = v;
  plan["config"] = config::to_json(cfg);
  std::cout << plan.dump(2) << '\n';
}

void write_json(const fs::path& path, const ordered_json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// Data directories

std::optional<synth::DatasetPartition> read_partition(const fs::path& data_dir, const char* name) {
  const auto dir = data_dir / name;
  if (!fs::exists(dir)) return std::nullopt;
  return synth::ingest_directory(dir);
}

synth::DatasetPartition require_partition(const fs::path& data_dir, const char* name, const std::string& why) {
  auto p = read_partition(data_dir, name);
  if (!p) throw DataError("data directory " + data_dir.string() + " has no '" + name + "' partition, required " + why);
  return std::move(*p);
}

// ---------------------------------------------------------------------------
// Trained model directories

struct ModelKind {
  std::string id;
  std::string display;
  bool generative;
  bool adversarial;
  models::SegArch arch;
};

const std::vector<ModelKind>& model_kinds() {
  static const std::vector<ModelKind> kinds = {
      {"semanticgan", std::string(exp::kSemanticGAN), true, false, models::SegArch::DL},
      {"suponly-dl", std::string(exp::kSupOnly), false, false, models::SegArch::DL},
      {"suponly-un", std::string(exp::kSupOnly) + "-UN", false, false, models::SegArch::UN},
      {"semantican-dl", std::string(exp::kSemanticAN), false, true, models::SegArch::DL},
      {"semantican-un", std::string(exp::kSemanticAN) + "-UN", false, true, models::SegArch::UN},
  };
  return kinds;
}

const ModelKind& model_kind(const std::string& id) {
  for (const auto& k : model_kinds())
    if (k.id == id) return k;
  throw ConfigError("unknown model '" + id + "'");
}

ckpt::CheckpointMeta meta_for(ckpt::Component c, int step, double score, const config::RunConfig& cfg) {
  ckpt::CheckpointMeta m;
  m.component = c;
  m.step = step;
  m.selection_score = score;
  m.config_hash = config::config_hash(cfg);
  m.extra = json::parse(config::to_json(cfg).at("model").dump());
  return m;
}

struct TrainedModel {
  std::string name;
  std::string kind;
  config::RunConfig cfg;
  models::Generator generator{nullptr};
  models::Encoder encoder{nullptr};
  std::shared_ptr<models::SegmenterNet> segmenter;

  exp::NamedPredictor predictor() const {
    if (generator) return exp::semanticgan_predictor(name, generator, encoder);
    return exp::segmenter_predictor(name, segmenter);
  }
};

TrainedModel load_model_dir(const fs::path& dir) {
  const auto info_path = dir / "model.json";
  std::ifstream in(info_path);
  if (!in) throw DataError("missing checkpoint: " + info_path.string() + " not found");
  json info;
  try {
    info = json::parse(in);
  } catch (const json::exception& e) {
    throw DataError("unreadable " + info_path.string() + ": " + e.what());
  }
  std::ifstream cin(dir / "config.json");
  if (!cin) throw DataError("missing " + (dir / "config.json").string());
  TrainedModel m;
  m.cfg = config::from_json(json::parse(cin));
  m.kind = info.at("model").get<std::string>();
  m.name = info.at("name").get<std::string>();
  const auto& kind = model_kind(m.kind);
  auto need = [&](const char* file) {
    const auto p = dir / file;
    if (!fs::exists(p)) throw DataError("missing checkpoint " + p.string());
    return p;
  };
  if (kind.generative) {
    m.generator = models::Generator(m.cfg.model);
    m.encoder = models::Encoder(m.cfg.model);
    ckpt::load(need("G.ckpt"), *m.generator, ckpt::Component::G);
    ckpt::load(need("E.ckpt"), *m.encoder, ckpt::Component::E);
  } else {
    m.segmenter = models::make_segmenter(kind.arch, m.cfg.model);
    const auto comp = kind.arch == models::SegArch::DL ? ckpt::Component::DL : ckpt::Component::UN;
    ckpt::load(need(kind.arch == models::SegArch::DL ? "DL.ckpt" : "UN.ckpt"), *m.segmenter, comp);
  }
  return m;
}

// ---------------------------------------------------------------------------
// Commands

int cmd_generate(const Common& c) {
  const auto cfg = c.load();
  const fs::path out = c.out;
  if (c.dry_run) {
    ordered_json d;
    d["out"] = out.string();
    d["partitions"] = ordered_json::array();
    for (const auto* n : kPartitionDirs) d["partitions"].push_back((out / n).string());
    print_plan("generate", cfg, d);
    return 0;
  }
  prepare_out(out, c.force);
  const auto parts = synth::build_partitions(cfg.data);
  synth::write_partition(parts.labelled_train, out / "labelled_train");
  synth::write_partition(parts.labelled_test, out / "labelled_test");
  synth::write_partition(parts.unlabelled, out / "unlabelled");
  synth::write_partition(parts.annotated_subset, out / "annotated_subset");
  synth::write_partition(parts.out_of_domain, out / "out_of_domain");
  config::write_resolved(cfg, out / "config.json");
  for (const auto& w : parts.warnings) std::cerr << "warning: " << w << '\n';
  std::cout << "wrote " << std::size(kPartitionDirs) << " partitions to " << out.string() << '\n';
  return 0;
}

int cmd_train(const Common& c, const std::string& model_id, const std::string& data_dir, const std::string& name) {
  const auto cfg = c.load();
  const auto& kind = model_kind(model_id);
  const fs::path out = c.out;
  const bool needs_unlabelled = kind.generative || kind.adversarial;
  if (c.dry_run) {
    ordered_json d;
    d["model"] = kind.id;
    d["name"] = name.empty() ? kind.display : name;
    d["data"] = data_dir;
    d["requires"] = needs_unlabelled ? ordered_json{"labelled_train", "unlabelled"} : ordered_json{"labelled_train"};
    d["out"] = out.string();
    print_plan("train", cfg, d);
    return 0;
  }
  const std::string why = "to train " + kind.id;
  const auto labelled_p = require_partition(data_dir, "labelled_train", why);
  std::optional<synth::DatasetPartition> unlabelled_p;
  if (needs_unlabelled) unlabelled_p = require_partition(data_dir, "unlabelled", why);
  const auto labelled = data::to_tensors(labelled_p, cfg.preprocess, true);
  data::TensorSet unlabelled;
  if (unlabelled_p) unlabelled = data::to_tensors(*unlabelled_p, cfg.preprocess, false);

  prepare_out(out, c.force);
  config::write_resolved(cfg, out / "config.json");
  ordered_json info;
  info["model"] = kind.id;
  info["name"] = name.empty() ? kind.display : name;
  info["config_hash"] = config::config_hash(cfg);
  info["data"] = data_dir;

  if (kind.generative) {
    auto s1 = train::train_stage1(labelled, unlabelled, cfg.model, cfg.train);
    auto s2 = train::train_stage2(s1.generator, labelled, unlabelled, cfg.model, cfg.train);
    ckpt::save(out / "G.ckpt", *s1.generator, meta_for(ckpt::Component::G, s1.best_step, s1.best_score, cfg));
    ckpt::save(out / "D_r.ckpt", *s1.image_discriminator, meta_for(ckpt::Component::D_r, s1.best_step, s1.best_score, cfg));
    ckpt::save(out / "D_m.ckpt", *s1.pair_discriminator, meta_for(ckpt::Component::D_m, s1.best_step, s1.best_score, cfg));
    ckpt::save(out / "E.ckpt", *s2.encoder, meta_for(ckpt::Component::E, s2.best_step, s2.best_score, cfg));
    s1.history.write_jsonl(out / "history_stage1.jsonl");
    s2.history.write_jsonl(out / "history_stage2.jsonl");
    info["stage1"] = {{"best_step", s1.best_step}, {"fid_like", s1.best_score}, {"initial_fid_like", s1.initial_score}};
    info["stage2"] = {{"best_step", s2.best_step}, {"val_dice", s2.best_score}, {"initial_val_dice", s2.initial_score}};
    info["generator_hash"] = s2.generator_hash_after;
  } else {
    auto res = kind.adversarial ? train::train_semantican(labelled, unlabelled, kind.arch, cfg.model, cfg.train)
                                : train::train_suponly(labelled, kind.arch, cfg.model, cfg.train);
    const auto comp = kind.arch == models::SegArch::DL ? ckpt::Component::DL : ckpt::Component::UN;
    ckpt::save(out / (std::string(ckpt::to_string(comp)) + ".ckpt"), *res.segmenter,
               meta_for(comp, res.best_step, res.best_score, cfg));
    if (res.pair_discriminator)
      ckpt::save(out / "D_m.ckpt", *res.pair_discriminator, meta_for(ckpt::Component::D_m, res.best_step, res.best_score, cfg));
    res.history.write_jsonl(out / "history.jsonl");
    info["best_step"] = res.best_step;
    info["val_dice"] = res.best_score;
    info["initial_val_dice"] = res.initial_score;
  }
  write_json(out / "model.json", info);
  std::cout << "trained " << kind.id << " into " << out.string() << '\n';
  return 0;
}

int cmd_eval(const Common& c, const std::vector<std::string>& checkpoints, const std::string& data_dir, bool oracle) {
  const auto cfg = c.load();
  const fs::path out = c.out;
  if (checkpoints.empty() && !oracle) throw ConfigError("eval needs at least one --checkpoint (or --oracle)");
  if (c.dry_run) {
    ordered_json d;
    d["checkpoints"] = checkpoints;
    d["oracle"] = oracle;
    d["data"] = data_dir;
    d["datasets"] = {"labelled_test", "annotated_subset", "out_of_domain"};
    d["outputs"] = {(out / "metrics.csv").string(), (out / "report.md").string()};
    print_plan("eval", cfg, d);
    return 0;
  }
  std::vector<TrainedModel> loaded;
  for (const auto& ck : checkpoints) loaded.push_back(load_model_dir(ck));
  const auto& pp = loaded.empty() ? cfg.preprocess : loaded.front().cfg.preprocess;
  for (const auto& m : loaded)
    if (m.cfg.preprocess.resolution != pp.resolution)
      throw ConfigError("checkpoints were trained at different resolutions");

  const std::pair<const char*, std::string_view> sets[] = {{"labelled_test", synth::kLabelledDomain},
                                                           {"annotated_subset", synth::kUnlabelledDomain},
                                                           {"out_of_domain", synth::kOutOfDomain}};
  std::vector<exp::EvalSet> datasets;
  for (const auto& [dir, name] : sets)
    if (auto p = read_partition(data_dir, dir)) datasets.push_back({std::string(name), data::to_tensors(*p, pp, true)});
  if (datasets.empty()) throw DataError("data directory " + data_dir + " has no evaluation partitions");

  std::vector<exp::NamedPredictor> predictors;
  for (const auto& m : loaded) predictors.push_back(m.predictor());
  if (oracle) predictors.push_back(exp::oracle_predictor());
  const auto records = exp::run_generalisation_eval(predictors, datasets);

  prepare_out(out, c.force);
  config::write_resolved(cfg, out / "config.json");
  metrics::write_metrics_csv(out / "metrics.csv", records);
  exp::ReportLayout layout;
  layout.title = "Generalisation";
  exp::render_report_from_csv(out / "metrics.csv", layout, out);
  std::cout << "wrote " << records.size() << " metric records to " << (out / "metrics.csv").string() << '\n';
  return 0;
}

std::vector<exp::ExperimentManifest> suite_manifests(const config::RunConfig& cfg, const std::vector<std::string>& names,
                                                     const fs::path& out) {
  std::vector<exp::ExperimentManifest> ms;
  for (const auto& n : names) {
    exp::ExperimentManifest m;
    m.bias_config = exp::parse_bias_config(n);
    m.name = cfg.experiment.name + "-" + n;
    m.seeds = cfg.experiment.seeds;
    m.data = cfg.data;
    m.preprocess = cfg.preprocess;
    m.model = cfg.model;
    m.train = cfg.train;
    m.outputs_dir = out / n;
    ms.push_back(std::move(m));
  }
  return ms;
}

ordered_json audit_json(const exp::TrainingPopulationAudit& a) {
  ordered_json j;
  j["config"] = std::string(exp::to_string(a.config));
  j["seed"] = a.seed;
  j["generator"] = {{"unlabelled_n", a.g_unlabelled_n}, {"unlabelled_f", a.g_unlabelled_f},
                    {"labelled_n", a.g_labelled_n},     {"labelled_f", a.g_labelled_f}};
  j["encoder"] = {{"unlabelled_n", a.e_unlabelled_n}, {"unlabelled_f", a.e_unlabelled_f},
                  {"labelled_n", a.e_labelled_n},     {"labelled_f", a.e_labelled_f}};
  return j;
}

int run_children(const std::string& self, const fs::path& cfg_file, const fs::path& out,
                 const std::vector<std::string>& names, int jobs) {
  std::size_t next = 0;
  int running = 0, failure = 0;
  while (next < names.size() || running > 0) {
    while (running < jobs && next < names.size()) {
      std::vector<std::string> args = {self, "bias-suite", "--config", cfg_file.string(), "--out", out.string(),
                                       "--only", names[next], "--child"};
      const pid_t pid = fork();
      if (pid < 0) throw std::runtime_error("fork failed");
      if (pid == 0) {
        std::vector<char*> argv;
        for (auto& a : args) argv.push_back(a.data());
        argv.push_back(nullptr);
        execv(self.c_str(), argv.data());
        _exit(127);
      }
      ++running;
      ++next;
    }
    int status = 0;
    if (wait(&status) > 0) {
      --running;
      const int code = WIFEXITED(status) ? WEXITSTATUS(status) : 1;
      if (code != 0 && failure == 0) failure = code;
    }
  }
  return failure;
}

int cmd_bias_suite(const Common& c, const std::vector<std::string>& only, int jobs, bool child, const std::string& self) {
  const auto cfg = c.load();
  const fs::path out = c.out;
  auto names = only.empty() ? cfg.experiment.bias_configs : only;
  for (const auto& n : names) exp::parse_bias_config(n);
  if (jobs < 1) throw ConfigError("--jobs must be at least 1");
  const auto manifests = suite_manifests(cfg, names, out);
  if (c.dry_run) {
    ordered_json d;
    d["jobs"] = jobs;
    d["manifests"] = ordered_json::array();
    for (const auto& m : manifests) {
      const auto pop = exp::population(m.bias_config);
      d["manifests"].push_back({{"name", m.name},
                                {"bias_config", std::string(exp::to_string(m.bias_config))},
                                {"seeds", m.seeds},
                                {"generator", {{"unlabelled", pop.g_unlabelled_males ? "M" : "all"},
                                               {"labelled", pop.g_labelled_males ? "M" : "all"}}},
                                {"encoder", {{"unlabelled", pop.e_unlabelled_males ? "M" : "all"},
                                             {"labelled", pop.e_labelled_males ? "M" : "all"}}},
                                {"outputs_dir", m.outputs_dir.string()}});
    }
    print_plan("bias-suite", cfg, d);
    return 0;
  }

  if (child) {
    for (const auto& m : manifests) {
      if (fs::exists(m.outputs_dir)) fs::remove_all(m.outputs_dir);
      fs::create_directories(m.outputs_dir);
    }
  } else {
    prepare_out(out, c.force);
    config::write_resolved(cfg, out / "config.json");
  }

  if (!child && jobs > 1 && manifests.size() > 1) {
    if (const int rc = run_children(self, out / "config.json", out, names, jobs); rc != 0) return rc;
  } else {
    for (const auto& m : manifests) {
      fs::create_directories(m.outputs_dir);
      config::write_resolved(cfg, m.outputs_dir / "manifest.json");
    }
    exp::GeneratorCache cache;
    const auto res = exp::run_bias_suite(manifests, cache);
    for (const auto& m : manifests) {
      ordered_json audits = ordered_json::array();
      for (const auto& r : res.runs)
        if (r.config == m.bias_config) audits.push_back(audit_json(r.audit));
      write_json(m.outputs_dir / "audit.json", audits);
    }
  }
  if (child) return 0;

  std::vector<metrics::MetricRecord> all;
  for (const auto& m : manifests) {
    const auto recs = metrics::read_metrics_csv(m.outputs_dir / "metrics.csv");
    all.insert(all.end(), recs.begin(), recs.end());
  }
  metrics::write_metrics_csv(out / "metrics.csv", all);
  exp::ReportLayout layout;
  layout.title = "Bias suite";
  if (std::find(names.begin(), names.end(), "control") != names.end()) layout.control_model = "control";
  exp::render_report_from_csv(out / "metrics.csv", layout, out);
  std::cout << "bias suite finished: " << manifests.size() << " configurations, " << all.size() << " records\n";
  return 0;
}

int cmd_downstream(const Common& c, const std::vector<std::string>& checkpoints) {
  const auto cfg = c.load();
  const fs::path out = c.out;
  std::vector<std::string> sources = {std::string(exp::kUnmasked), std::string(exp::kOracle),
                                      std::string(exp::kCorrupted), std::string(exp::kPermuted)};
  if (c.dry_run) {
    ordered_json d;
    d["sources"] = sources;
    d["checkpoints"] = checkpoints;
    d["outputs"] = {(out / "metrics.csv").string(), (out / "report.md").string()};
    print_plan("downstream", cfg, d);
    return 0;
  }
  std::vector<exp::NamedPredictor> preds;
  for (const auto& ck : checkpoints) {
    auto m = load_model_dir(ck);
    if (m.cfg.preprocess.resolution != cfg.preprocess.resolution)
      throw ConfigError("checkpoint " + ck + " was trained at a different resolution than the config");
    sources.push_back(m.name);
    preds.push_back(m.predictor());
  }
  const auto d = exp::make_downstream_data(cfg.downstream, cfg.data.in_domain, cfg.preprocess);
  const auto records = exp::run_downstream_classification(sources, preds, d, cfg.downstream, cfg.model);
  prepare_out(out, c.force);
  config::write_resolved(cfg, out / "config.json");
  metrics::write_metrics_csv(out / "metrics.csv", records);
  exp::ReportLayout layout;
  layout.title = "Downstream masked classification";
  exp::render_report_from_csv(out / "metrics.csv", layout, out);
  std::cout << "wrote " << records.size() << " AUROC records to " << (out / "metrics.csv").string() << '\n';
  return 0;
}

int cmd_pca_probe(const Common& c, const std::string& checkpoint, const std::string& data_dir) {
  const auto cfg = c.load();
  const fs::path out = c.out;
  if (c.dry_run) {
    ordered_json d;
    d["checkpoint"] = checkpoint;
    d["images"] = data_dir.empty() ? ordered_json("scale sweep") : ordered_json(data_dir);
    d["components"] = cfg.pca.components;
    print_plan("pca-probe", cfg, d);
    return 0;
  }
  auto m = load_model_dir(checkpoint);
  if (!m.generator) throw ConfigError("pca-probe needs a semanticgan checkpoint");
  const auto& pp = m.cfg.preprocess;
  torch::Tensor images;
  std::optional<std::vector<double>> covariate;
  if (data_dir.empty()) {
    auto sweep = exp::make_scale_sweep(cfg.data.in_domain, cfg.pca.images, cfg.pca.scale_min, cfg.pca.scale_max,
                                       cfg.pca.seed, pp, cfg.data.image_size);
    images = sweep.set.images;
    covariate = sweep.scales;
  } else {
    images = data::to_tensors(synth::ingest_directory(data_dir), pp, false).images;
  }
  const auto results = exp::run_pca_probe(exp::semanticgan_probe_model(m.generator, m.encoder), images,
                                          cfg.pca.components, covariate);
  prepare_out(out, c.force);
  config::write_resolved(cfg, out / "config.json");
  exp::write_pca_figures(results, out / "figures");
  std::ofstream(out / "pca.md", std::ios::trunc) << "# PCA consistency probe\n\n" << exp::pca_summary_markdown(results);
  ordered_json j = ordered_json::array();
  for (const auto& r : results)
    j.push_back({{"component", r.component_index},
                 {"offsets", r.offsets},
                 {"areas", r.areas},
                 {"area_delta_pct", r.area_delta_pct},
                 {"sigma", r.sigma},
                 {"explained_variance_ratio", r.explained_variance_ratio},
                 {"covariate_correlation", std::isnan(r.covariate_correlation) ? ordered_json(nullptr)
                                                                                : ordered_json(r.covariate_correlation)}});
  write_json(out / "pca.json", j);
  std::cout << "wrote PCA probe for " << results.size() << " components to " << out.string() << '\n';
  return 0;
}

int cmd_report(const Common& c, const std::string& csv, const std::string& title, const std::string& control) {
  const fs::path out = c.out;
  if (c.dry_run) {
    std::cout << ordered_json{{"command", "report"}, {"metrics", csv}, {"out", out.string()}}.dump(2) << '\n';
    return 0;
  }
  if (!fs::exists(csv)) throw DataError("metrics file " + csv + " not found");
  exp::ReportLayout layout;
  layout.title = title;
  if (!control.empty()) layout.control_model = control;
  fs::create_directories(out);
  exp::render_report_from_csv(csv, layout, out);
  std::cout << "wrote " << (out / "report.md").string() << '\n';
  return 0;
}

std::string self_path(const char* argv0) {
  std::error_code ec;
  const auto p = fs::read_symlink("/proc/self/exe", ec);
  return ec ? std::string(argv0) : p.string();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"segbench: semi-supervised segmentation benchmark"};
  app.require_subcommand(1);

  Common gen_c, train_c, eval_c, bias_c, down_c, pca_c, report_c;
  std::string model_id, data_dir, model_name, pca_ckpt, pca_data, report_csv, report_title = "Results", report_control;
  std::vector<std::string> eval_ckpts, down_ckpts, only;
  bool oracle = false, child = false;
  int jobs = 1;

  auto* gen = app.add_subcommand("generate", "Write the synthetic benchmark partitions");
  add_common(gen, gen_c);

  auto* tr = app.add_subcommand("train", "Train one model on a data directory");
  add_common(tr, train_c);
  tr->add_option("--model", model_id, "semanticgan, suponly-dl, suponly-un, semantican-dl or semantican-un")
      ->required()
      ->check(CLI::IsMember({"semanticgan", "suponly-dl", "suponly-un", "semantican-dl", "semantican-un"}));
  tr->add_option("--data", data_dir, "Data directory written by generate")->required();
  tr->add_option("--name", model_name, "Model name used in reports");

  auto* ev = app.add_subcommand("eval", "Evaluate trained models on the test partitions");
  add_common(ev, eval_c);
  ev->add_option("--checkpoint", eval_ckpts, "Trained model directory (repeatable)");
  ev->add_option("--data", data_dir, "Data directory written by generate")->required();
  ev->add_flag("--oracle", oracle, "Also evaluate ground-truth masks as a model");

  auto* bs = app.add_subcommand("bias-suite", "Train and evaluate the bias configurations");
  add_common(bs, bias_c);
  bs->add_option("--only", only, "Run only this configuration (repeatable)");
  bs->add_option("--jobs", jobs, "Parallel child processes");
  bs->add_flag("--child", child)->group("");

  auto* ds = app.add_subcommand("downstream", "Masked downstream classification");
  add_common(ds, down_c);
  ds->add_option("--checkpoint", down_ckpts, "Trained model directory used as a mask source (repeatable)");

  auto* pca = app.add_subcommand("pca-probe", "PCA consistency probe of a SemanticGAN model");
  add_common(pca, pca_c);
  pca->add_option("--checkpoint", pca_ckpt, "Trained semanticgan directory")->required();
  pca->add_option("--data", pca_data, "Partition directory of probe images (default: a scale sweep)");

  auto* rep = app.add_subcommand("report", "Render report.md and figures from a metrics.csv");
  rep->add_flag("--dry-run", report_c.dry_run, "Print the plan and exit");
  rep->add_option("--metrics", report_csv, "metrics.csv to render")->required();
  rep->add_option("--out", report_c.out, "Output directory")->required();
  rep->add_option("--title", report_title, "Report title");
  rep->add_option("--control", report_control, "Model compared against in a delta section");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*gen) return cmd_generate(gen_c);
    if (*tr) return cmd_train(train_c, model_id, data_dir, model_name);
    if (*ev) return cmd_eval(eval_c, eval_ckpts, data_dir, oracle);
    if (*bs) return cmd_bias_suite(bias_c, only, jobs, child, self_path(argv[0]));
    if (*ds) return cmd_downstream(down_c, down_ckpts);
    if (*pca) return cmd_pca_probe(pca_c, pca_ckpt, pca_data);
    if (*rep) return cmd_report(report_c, report_csv, report_title, report_control);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 3;
  } catch (const DivergenceError& e) {
    std::cerr << "training diverged: " << e.what() << '\n';
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
