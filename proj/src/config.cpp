#include "segbench/config.hpp"

#include <fstream>
#include <sstream>

#include "segbench/checkpoint.hpp"
#include "segbench/errors.hpp"

namespace segbench::config {
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

// Each struct's fields are listed once; the visitor either writes them to
// JSON or reads them back.
template <typename V>
void visit(V& v, synth::DomainSpec& s) {
  v("scale", s.scale);
  v("lateral_shift", s.lateral_shift);
  v("intensity_offset", s.intensity_offset);
  v("noise_std", s.noise_std);
  v("texture_seed", s.texture_seed);
}

template <typename V>
void visit(V& v, synth::PartitionConfig& c) {
  v("image_size", c.image_size);
  v("n_labelled_train", c.n_labelled_train);
  v("n_labelled_test", c.n_labelled_test);
  v("n_unlabelled", c.n_unlabelled);
  v("n_annotated", c.n_annotated);
  v("n_out_of_domain", c.n_out_of_domain);
  v("female_fraction", c.female_fraction);
  v("pathology_prevalence", c.pathology_prevalence);
  v("in_domain", c.in_domain);
  v("out_of_domain", c.out_of_domain);
  v("seed", c.seed);
}

template <typename V>
void visit(V& v, prep::PreprocessConfig& c) {
  v("resolution", c.resolution);
  v("gamma", c.gamma);
  v("equalize", c.equalize);
}

template <typename V>
void visit(V& v, models::ModelConfig& c) {
  v("resolution", c.resolution);
  v("latent_dim", c.latent_dim);
  v("style_dim", c.style_dim);
  v("mapping_layers", c.mapping_layers);
  v("g_base_channels", c.g_base_channels);
  v("g_max_channels", c.g_max_channels);
  v("d_base_channels", c.d_base_channels);
  v("d_max_channels", c.d_max_channels);
  v("dm_channels", c.dm_channels);
  v("dm_scales", c.dm_scales);
  v("e_base_channels", c.e_base_channels);
  v("e_max_channels", c.e_max_channels);
  v("seg_channels", c.seg_channels);
  v("unet_channels", c.unet_channels);
  v("classifier_channels", c.classifier_channels);
}

template <typename V>
void visit(V& v, train::TrainConfig& c) {
  v("steps_stage1", c.steps_stage1);
  v("steps_stage2", c.steps_stage2);
  v("steps_segmenter", c.steps_segmenter);
  v("steps_semantican", c.steps_semantican);
  v("batch_stage1", c.batch_stage1);
  v("batch_stage2", c.batch_stage2);
  v("batch_segmenter", c.batch_segmenter);
  v("lr_generator", c.lr_generator);
  v("lr_discriminator", c.lr_discriminator);
  v("lr_encoder", c.lr_encoder);
  v("lr_segmenter", c.lr_segmenter);
  v("lr_semantican", c.lr_semantican);
  v("weight_decay", c.weight_decay);
  v("val_fraction", c.val_fraction);
  v("eval_every", c.eval_every);
  v("fid_probe_size", c.fid_probe_size);
  v("r1_every", c.r1_every);
  v("seed", c.seed);
}

template <typename V>
void visit(V& v, losses::LossWeights& c) {
  v("lambda1", c.lambda1);
  v("r1_gamma", c.r1_gamma);
  v("nonsaturating", c.nonsaturating);
}

template <typename V>
void visit(V& v, ExperimentSettings& c) {
  v("name", c.name);
  v("seeds", c.seeds);
  v("arch", c.arch);
  v("bias_configs", c.bias_configs);
}

template <typename V>
void visit(V& v, exp::DownstreamConfig& c) {
  v("n_train", c.n_train);
  v("n_test", c.n_test);
  v("prevalence", c.prevalence);
  v("confound_agreement", c.confound_agreement);
  v("classifier_steps", c.classifier_steps);
  v("classifier_batch", c.classifier_batch);
  v("classifier_lr", c.classifier_lr);
  v("seeds", c.seeds);
  v("corrupt_dilate", c.corrupt_dilate);
  v("corrupt_shift", c.corrupt_shift);
  v("data_seed", c.data_seed);
}

template <typename V>
void visit(V& v, PcaSettings& c) {
  v("images", c.images);
  v("components", c.components);
  v("seed", c.seed);
  v("scale_min", c.scale_min);
  v("scale_max", c.scale_max);
}

template <typename V>
void visit(V& v, RunConfig& c) {
  v("preset", c.preset);
  v("data", c.data);
  v("preprocess", c.preprocess);
  v("model", c.model);
  v("train", c.train);
  v("loss", c.train.loss);
  v("experiment", c.experiment);
  v("downstream", c.downstream);
  v("pca", c.pca);
}

template <typename T>
concept Leaf = std::is_arithmetic_v<T> || std::is_same_v<T, std::string> ||
               std::is_same_v<T, std::vector<std::uint64_t>> || std::is_same_v<T, std::vector<std::string>>;

struct Writer {
  ordered_json out = ordered_json::object();

  template <typename T>
  void operator()(const char* key, T& field) {
    if constexpr (Leaf<T>) {
      out[key] = field;
    } else {
      Writer sub;
      visit(sub, field);
      out[key] = std::move(sub.out);
    }
  }
};

struct Reader {
  const json* in;
  std::string path;

  template <typename T>
  void operator()(const char* key, T& field) {
    const std::string at = path.empty() ? key : path + "." + key;
    const auto it = in->find(key);
    if (it == in->end()) return;
    if constexpr (Leaf<T>) {
      read_leaf(*it, field, at);
    } else {
      if (!it->is_object()) throw ConfigError("config key '" + at + "' must be an object");
      Reader sub{&*it, at};
      visit(sub, field);
    }
  }

  template <typename T>
  static void read_leaf(const json& j, T& field, const std::string& at) {
    if constexpr (std::is_same_v<T, bool>) {
      if (!j.is_boolean()) throw ConfigError("config key '" + at + "' must be a boolean");
      field = j.get<bool>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!j.is_number_integer()) throw ConfigError("config key '" + at + "' must be an integer");
      if (std::is_unsigned_v<T> && !j.is_number_unsigned())
        throw ConfigError("config key '" + at + "' must be non-negative");
      field = j.get<T>();
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!j.is_number()) throw ConfigError("config key '" + at + "' must be a number");
      field = j.get<T>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!j.is_string()) throw ConfigError("config key '" + at + "' must be a string");
      field = j.get<std::string>();
    } else {
      if (!j.is_array()) throw ConfigError("config key '" + at + "' must be an array");
      field.clear();
      for (std::size_t i = 0; i < j.size(); ++i) {
        typename T::value_type v{};
        read_leaf(j[i], v, at + "[" + std::to_string(i) + "]");
        field.push_back(std::move(v));
      }
    }
  }
};

// Rejects keys of `doc` that `reference` (a fully written config) does not have.
void check_keys(const json& doc, const ordered_json& reference, const std::string& path) {
  if (!doc.is_object()) throw ConfigError("config " + (path.empty() ? std::string("document") : "key '" + path + "'") + " must be an object");
  for (const auto& [key, value] : doc.items()) {
    const std::string at = path.empty() ? key : path + "." + key;
    const auto it = reference.find(key);
    if (it == reference.end()) throw ConfigError("unknown config key '" + at + "'");
    if (it->is_object()) check_keys(value, *it, at);
  }
}

void merge(json& base, const json& patch) {
  for (const auto& [key, value] : patch.items()) {
    if (value.is_object() && base.contains(key) && base[key].is_object())
      merge(base[key], value);
    else
      base[key] = value;
  }
}

}  // namespace

void RunConfig::validate() const {
  if (data.image_size < 16) throw ConfigError("data.image_size must be at least 16");
  for (int n : {data.n_labelled_train, data.n_labelled_test, data.n_unlabelled, data.n_annotated, data.n_out_of_domain})
    if (n < 2) throw ConfigError("data partition sizes must be at least 2");
  if (!(data.female_fraction >= 0.0 && data.female_fraction <= 1.0))
    throw ConfigError("data.female_fraction must lie in [0,1]");
  if (!(data.pathology_prevalence >= 0.0 && data.pathology_prevalence <= 1.0))
    throw ConfigError("data.pathology_prevalence must lie in [0,1]");
  try {
    data.in_domain.validate();
    data.out_of_domain.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("data: ") + e.what());
  }
  preprocess.validate();
  model.validate();
  train.validate();
  train.loss.validate();
  if (preprocess.resolution != model.resolution)
    throw ConfigError("preprocess.resolution (" + std::to_string(preprocess.resolution) +
                      ") must equal model.resolution (" + std::to_string(model.resolution) + ")");
  if (experiment.seeds.empty()) throw ConfigError("experiment.seeds is empty");
  try {
    models::parse_arch(experiment.arch);
  } catch (const std::invalid_argument&) {
    throw ConfigError("experiment.arch must be DL or UN, got '" + experiment.arch + "'");
  }
  if (experiment.bias_configs.empty()) throw ConfigError("experiment.bias_configs is empty");
  for (const auto& b : experiment.bias_configs) exp::parse_bias_config(b);
  downstream.validate();
  if (pca.components < 1 || pca.images <= pca.components)
    throw ConfigError("pca.images must exceed pca.components >= 1");
  if (!(pca.scale_min > 0.0 && pca.scale_min <= pca.scale_max))
    throw ConfigError("pca.scale_min must be positive and <= pca.scale_max");
}

RunConfig preset(std::string_view name) {
  RunConfig c;
  c.preset = std::string(name);
  if (name == "desk") return c;
  if (name == "ci") {
    c.preprocess.resolution = c.model.resolution = 32;
    c.model.latent_dim = 32;
    c.model.style_dim = 64;
    c.model.g_base_channels = c.model.d_base_channels = c.model.e_base_channels = 16;
    c.model.g_max_channels = c.model.d_max_channels = c.model.e_max_channels = 64;
    c.model.dm_channels = 32;
    c.model.seg_channels = 16;
    c.train.steps_stage1 = 800;
    c.train.steps_stage2 = 600;
    c.train.steps_segmenter = 300;
    c.train.steps_semantican = 300;
    c.train.batch_stage1 = 8;
    c.train.batch_stage2 = 8;
    c.train.eval_every = 100;
    c.train.loss.nonsaturating = true;
    c.pca.images = 120;
    return c;
  }
  if (name == "paper") {
    c.preprocess.resolution = c.model.resolution = 256;
    c.data.image_size = 256;
    c.train.steps_stage1 = 100000;
    c.train.steps_stage2 = 200000;
    c.train.steps_segmenter = 10000;
    c.train.steps_semantican = 50000;
    c.train.batch_stage1 = 8;
    c.train.batch_stage2 = 4;
    c.train.batch_segmenter = 32;
    c.train.lr_segmenter = 1e-5;
    c.train.weight_decay = 1e-4;
    c.train.lr_semantican = 2e-4;
    c.train.eval_every = 1000;
    return c;
  }
  throw ConfigError("unknown preset '" + std::string(name) + "' (expected desk, ci or paper)");
}

std::vector<std::string> preset_names() { return {"desk", "ci", "paper"}; }

ordered_json to_json(const RunConfig& cfg) {
  auto copy = cfg;
  Writer w;
  visit(w, copy);
  return w.out;
}

RunConfig from_json(const json& doc) {
  std::string name = "desk";
  if (doc.is_object() && doc.contains("preset")) {
    if (!doc["preset"].is_string()) throw ConfigError("config key 'preset' must be a string");
    name = doc["preset"].get<std::string>();
  }
  auto cfg = preset(name);
  check_keys(doc, to_json(cfg), "");
  Reader r{&doc, ""};
  visit(r, cfg);
  return cfg;
}

void apply_override(json& doc, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0)
    throw ConfigError("override '" + std::string(assignment) + "' is not of the form key.path=value");
  const std::string path(assignment.substr(0, eq));
  const std::string text(assignment.substr(eq + 1));
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;

  json* node = &doc;
  std::stringstream ss(path);
  std::vector<std::string> parts;
  for (std::string part; std::getline(ss, part, '.');) {
    if (part.empty()) throw ConfigError("override key '" + path + "' has an empty component");
    parts.push_back(part);
  }
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
    if (!node->is_object()) throw ConfigError("override key '" + path + "' descends into a non-object");
    node = &(*node)[parts[i]];
    if (node->is_null()) *node = json::object();
  }
  if (!node->is_object()) throw ConfigError("override key '" + path + "' descends into a non-object");
  (*node)[parts.back()] = std::move(value);
}

RunConfig load(const std::optional<std::filesystem::path>& path, const std::vector<std::string>& overrides) {
  json doc = json::object();
  if (path) {
    std::ifstream in(*path);
    if (!in) throw ConfigError("cannot read config file " + path->string());
    try {
      doc = json::parse(in);
    } catch (const json::parse_error& e) {
      throw ConfigError("config file " + path->string() + " is not valid JSON: " + e.what());
    }
    if (!doc.is_object()) throw ConfigError("config file " + path->string() + " must hold a JSON object");
  }
  json patch = json::object();
  for (const auto& o : overrides) apply_override(patch, o);
  merge(doc, patch);
  auto cfg = from_json(doc);
  cfg.validate();
  return cfg;
}

std::string config_hash(const RunConfig& cfg) { return ckpt::fnv1a_hex(to_json(cfg).dump()); }

void write_resolved(const RunConfig& cfg, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << to_json(cfg).dump(2) << '\n';
}

}  // namespace segbench::config
