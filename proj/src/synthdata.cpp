#include "segbench/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "segbench/errors.hpp"
#include "segbench/image_io.hpp"
#include "segbench/rng.hpp"

namespace segbench::synth {
namespace fs = std::filesystem;
using nlohmann::json;

std::string_view to_string(Sex s) { return s == Sex::F ? "F" : "M"; }

Sex parse_sex(std::string_view s) {
  if (s == "F") return Sex::F;
  if (s == "M") return Sex::M;
  throw DataError("sex must be F or M, got '" + std::string(s) + "'");
}

std::string_view to_string(Role r) {
  switch (r) {
    case Role::labelled: return "labelled";
    case Role::unlabelled: return "unlabelled";
    case Role::test: return "test";
  }
  return "labelled";
}

Role parse_role(std::string_view s) {
  if (s == "labelled") return Role::labelled;
  if (s == "unlabelled") return Role::unlabelled;
  if (s == "test") return Role::test;
  throw DataError("unknown partition role '" + std::string(s) + "'");
}

void DomainSpec::validate() const {
  if (!(scale > 0.0) || !std::isfinite(scale)) throw std::invalid_argument("DomainSpec.scale must be > 0");
  if (!(noise_std >= 0.0) || !std::isfinite(noise_std))
    throw std::invalid_argument("DomainSpec.noise_std must be >= 0");
  if (!std::isfinite(lateral_shift) || !std::isfinite(intensity_offset))
    throw std::invalid_argument("DomainSpec values must be finite");
}

DomainSpec default_out_of_domain() {
  DomainSpec s;
  s.scale = 1.25;
  s.intensity_offset = 0.15;
  s.lateral_shift = 4.0;
  s.texture_seed = 2;
  return s;
}

namespace {

// Lobed ellipse in normalised image coordinates (u across, v down).
struct Lobe {
  double cu, cv;  // centre
  double a, b;    // semi-axes
  double amp, phase;

  // Radius relative to the lobed boundary: <= 1 inside.
  double relative_radius(double u, double v) const {
    const double du = (u - cu) / a;
    const double dv = (v - cv) / b;
    const double rho = std::hypot(du, dv);
    const double theta = std::atan2(dv, du);
    return rho / (1.0 + amp * std::cos(3.0 * theta + phase));
  }
};

bool inside_ellipse(double u, double v, double cu, double cv, double a, double b) {
  const double du = (u - cu) / a;
  const double dv = (v - cv) / b;
  return du * du + dv * dv <= 1.0;
}

bool blob_fits(const Blob& b, const Mask& mask, bool want_inside) {
  const int h = mask.height, w = mask.width;
  const int r0 = static_cast<int>(std::floor(b.row - b.radius)), r1 = static_cast<int>(std::ceil(b.row + b.radius));
  const int c0 = static_cast<int>(std::floor(b.col - b.radius)), c1 = static_cast<int>(std::ceil(b.col + b.radius));
  if (r0 < 0 || c0 < 0 || r1 >= h || c1 >= w) return false;
  const double rr = b.radius * b.radius;
  bool any = false;
  for (int r = r0; r <= r1; ++r)
    for (int c = c0; c <= c1; ++c) {
      const double dr = r - b.row, dc = c - b.col;
      if (dr * dr + dc * dc > rr) continue;
      any = true;
      if ((mask(r, c) != 0) != want_inside) return false;
    }
  return any;
}

Blob place_blob(Rng& rng, const Mask& mask, bool inside, double width) {
  double radius = rng.uniform(kBlobRadiusMin, kBlobRadiusMax) * width;
  // Rejection sampling; the radius shrinks by 10% after every 400 failed draws
  // so narrow anatomy still receives a blob.
  while (radius >= 0.5) {
    for (int attempt = 0; attempt < 400; ++attempt) {
      Blob b{rng.uniform(0.0, mask.height - 1.0), rng.uniform(0.0, mask.width - 1.0), radius, inside};
      if (blob_fits(b, mask, inside)) return b;
    }
    radius *= 0.9;
  }
  throw std::runtime_error("could not place pathology blob");
}

}  // namespace

std::vector<std::pair<int, int>> blob_pixels(const Blob& b, int height, int width) {
  std::vector<std::pair<int, int>> out;
  const double rr = b.radius * b.radius;
  const int r0 = std::max(0, static_cast<int>(std::floor(b.row - b.radius)));
  const int r1 = std::min(height - 1, static_cast<int>(std::ceil(b.row + b.radius)));
  const int c0 = std::max(0, static_cast<int>(std::floor(b.col - b.radius)));
  const int c1 = std::min(width - 1, static_cast<int>(std::ceil(b.col + b.radius)));
  for (int r = r0; r <= r1; ++r)
    for (int c = c0; c <= c1; ++c) {
      const double dr = r - b.row, dc = c - b.col;
      if (dr * dr + dc * dc <= rr) out.emplace_back(r, c);
    }
  return out;
}

ImageSample generate_sample(const DomainSpec& spec, Sex sex, PathologyFlags flags, std::uint64_t seed,
                            int height, int width) {
  if (height <= 0 || width <= 0) throw std::invalid_argument("image dimensions must be positive");
  spec.validate();

  Rng rng(mix_seed(seed, 0x5e9d));
  const double s = spec.scale;
  const double sex_factor = sex == Sex::F ? kFemaleWidthFactor : 1.0;
  const double size_jitter = rng.uniform(0.92, 1.08);
  const double cu = 0.5 + spec.lateral_shift / width + rng.uniform(-0.02, 0.02);
  const double cv = 0.5 + rng.uniform(-0.02, 0.02);
  const double torso_level = rng.uniform(0.26, 0.34);
  const double lung_level = rng.uniform(0.50, 0.60);
  const double lobe_amp = rng.uniform(0.03, 0.07);

  const double lung_a = 0.14 * s * sex_factor * size_jitter;
  const double lung_b = 0.27 * s * size_jitter;
  const Lobe lungs[2] = {
      {cu - 0.19 * s, cv - 0.02, lung_a, lung_b, lobe_amp, rng.uniform(0.0, 2.0 * std::numbers::pi)},
      {cu + 0.19 * s, cv - 0.02, lung_a, lung_b, lobe_amp, rng.uniform(0.0, 2.0 * std::numbers::pi)},
  };

  // Smooth texture shared by the domain, varied per sample.
  Rng tex_rng(mix_seed(spec.texture_seed, seed));
  struct Wave { double fu, fv, phase; };
  Wave waves[3];
  for (auto& wv : waves) wv = {tex_rng.uniform(1.0, 6.0), tex_rng.uniform(1.0, 6.0), tex_rng.uniform(0.0, 2.0 * std::numbers::pi)};

  ImageSample out;
  out.seed = seed;
  out.sex = sex;
  out.pathology = flags;
  out.spec = spec;
  out.pixels = Image(height, width, 0.0f);
  Mask mask(height, width, 0);

  for (int r = 0; r < height; ++r) {
    for (int c = 0; c < width; ++c) {
      const double u = (c + 0.5) / width;
      const double v = (r + 0.5) / height;
      double value = 0.05;
      if (inside_ellipse(u, v, cu, cv + 0.05, 0.40 * s, 0.50 * s)) {
        value = torso_level;
        double tex = 0.0;
        for (const auto& wv : waves) tex += std::sin(2.0 * std::numbers::pi * (wv.fu * u + wv.fv * v) + wv.phase);
        value += 0.04 * tex / 3.0;
      }
      if (inside_ellipse(u, v, cu + 0.03 * s, cv + 0.17 * s, 0.09 * s, 0.07 * s)) value = 0.45;
      for (const auto& lobe : lungs) {
        const double rel = lobe.relative_radius(u, v);
        if (rel <= 1.0) {
          mask(r, c) = 1;
          value = rel >= 0.82 ? 0.85 : lung_level + 0.03 * std::sin(9.0 * u + 7.0 * v + lobe.phase);
        }
      }
      out.pixels(r, c) = static_cast<float>(value);
    }
  }

  if (flags.in_mask_signal) out.blobs.push_back(place_blob(rng, mask, true, width));
  if (flags.confound_signal) out.blobs.push_back(place_blob(rng, mask, false, width));
  for (const auto& b : out.blobs)
    for (auto [r, c] : blob_pixels(b, height, width)) out.pixels(r, c) += static_cast<float>(kBlobContrast);

  for (auto& p : out.pixels.values) {
    const double noisy = p + spec.noise_std * rng.normal() + spec.intensity_offset;
    p = static_cast<float>(std::clamp(noisy, 0.0, 1.0));
  }
  out.mask = std::move(mask);
  return out;
}

namespace {

std::vector<Sex> balanced_sexes(int n, double female_fraction, std::uint64_t seed) {
  const int n_female = static_cast<int>(std::lround(n * female_fraction));
  std::vector<Sex> sexes(static_cast<std::size_t>(n), Sex::M);
  std::fill_n(sexes.begin(), n_female, Sex::F);
  Rng rng(seed);
  rng.shuffle(sexes.begin(), sexes.end());
  return sexes;
}

DatasetPartition make_partition(const PartitionConfig& cfg, const DomainSpec& spec, Role role,
                                std::string_view domain, std::string_view prefix, int n, std::uint64_t tag) {
  DatasetPartition part;
  part.role = role;
  part.domain = std::string(domain);
  const auto sexes = balanced_sexes(n, cfg.female_fraction, mix_seed(cfg.seed, tag));
  Rng flag_rng(mix_seed(cfg.seed, tag + 1000));
  part.samples.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    PathologyFlags flags;
    flags.in_mask_signal = cfg.pathology_prevalence > 0.0 && flag_rng.uniform() < cfg.pathology_prevalence;
    const std::uint64_t seed = mix_seed(mix_seed(cfg.seed, tag), static_cast<std::uint64_t>(i));
    auto sample = generate_sample(spec, sexes[static_cast<std::size_t>(i)], flags, seed, cfg.image_size, cfg.image_size);
    char buf[64];
    std::snprintf(buf, sizeof buf, "%s-%05d", std::string(prefix).c_str(), i);
    sample.id = buf;
    sample.domain = part.domain;
    part.samples.push_back(std::move(sample));
  }
  return part;
}

}  // namespace

PartitionSet build_partitions(const PartitionConfig& cfg) {
  if (cfg.n_labelled_train < 1 || cfg.n_labelled_test < 1 || cfg.n_unlabelled < 1 || cfg.n_annotated < 1 ||
      cfg.n_out_of_domain < 1)
    throw ConfigError("all partition counts must be >= 1");
  if (cfg.image_size <= 0) throw ConfigError("image_size must be positive");
  if (!(cfg.female_fraction >= 0.0 && cfg.female_fraction <= 1.0))
    throw ConfigError("female_fraction must lie in [0,1]");
  try {
    cfg.in_domain.validate();
    cfg.out_of_domain.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }

  PartitionSet set;
  if (cfg.in_domain == cfg.out_of_domain)
    set.warnings.push_back("out-of-domain spec equals in-domain spec; out-of-domain results measure no shift");

  set.labelled_train = make_partition(cfg, cfg.in_domain, Role::labelled, kLabelledDomain, "ltrain", cfg.n_labelled_train, 1);
  set.labelled_test = make_partition(cfg, cfg.in_domain, Role::test, kLabelledDomain, "ltest", cfg.n_labelled_test, 2);

  // Unlabelled pool; the annotated subset is drawn uniformly at random from it.
  const int pool_n = cfg.n_unlabelled + cfg.n_annotated;
  auto pool = make_partition(cfg, cfg.in_domain, Role::unlabelled, kUnlabelledDomain, "unlab", pool_n, 3);
  std::vector<std::size_t> order(static_cast<std::size_t>(pool_n));
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng pick(mix_seed(cfg.seed, 4));
  pick.shuffle(order.begin(), order.end());
  std::vector<bool> annotated(order.size(), false);
  for (int i = 0; i < cfg.n_annotated; ++i) annotated[order[static_cast<std::size_t>(i)]] = true;

  set.unlabelled.role = Role::unlabelled;
  set.unlabelled.domain = std::string(kUnlabelledDomain);
  set.annotated_subset.role = Role::test;
  set.annotated_subset.domain = std::string(kUnlabelledDomain);
  for (std::size_t i = 0; i < order.size(); ++i) {
    auto& s = pool.samples[i];
    if (annotated[i]) {
      set.annotated_subset.samples.push_back(std::move(s));
    } else {
      s.mask.reset();
      set.unlabelled.samples.push_back(std::move(s));
    }
  }

  set.out_of_domain = make_partition(cfg, cfg.out_of_domain, Role::test, kOutOfDomain, "ood", cfg.n_out_of_domain, 5);
  return set;
}

DatasetPartition apply_bias_filter(const DatasetPartition& partition, Sex keep) {
  if (partition.empty()) throw DataError("cannot filter an empty partition");
  DatasetPartition out;
  out.role = partition.role;
  out.domain = partition.domain;
  for (const auto& s : partition.samples)
    if (s.sex == keep) out.samples.push_back(s);
  if (out.empty())
    throw DataError("bias filter keeping sex " + std::string(to_string(keep)) + " left the partition empty");
  return out;
}

json to_json(const DomainSpec& spec) {
  return json{{"scale", spec.scale},
              {"lateral_shift", spec.lateral_shift},
              {"intensity_offset", spec.intensity_offset},
              {"noise_std", spec.noise_std},
              {"texture_seed", spec.texture_seed}};
}

DomainSpec domain_spec_from_json(const json& j) {
  DomainSpec s;
  for (const auto& [key, value] : j.items()) {
    if (key == "scale") s.scale = value.get<double>();
    else if (key == "lateral_shift") s.lateral_shift = value.get<double>();
    else if (key == "intensity_offset") s.intensity_offset = value.get<double>();
    else if (key == "noise_std") s.noise_std = value.get<double>();
    else if (key == "texture_seed") s.texture_seed = value.get<std::uint64_t>();
    else throw ConfigError("unknown DomainSpec key '" + key + "'");
  }
  return s;
}

void write_partition(const DatasetPartition& partition, const fs::path& dir) {
  fs::create_directories(dir / "images");
  const bool any_mask = std::any_of(partition.samples.begin(), partition.samples.end(),
                                    [](const ImageSample& s) { return s.mask.has_value(); });
  if (any_mask) fs::create_directories(dir / "masks");

  std::ofstream meta(dir / "metadata.csv", std::ios::binary);
  if (!meta) throw DataError("cannot write metadata.csv in " + dir.string());
  meta << "id,sex,domain\n";

  json samples = json::array();
  for (const auto& s : partition.samples) {
    io::write_png_gray(dir / "images" / (s.id + ".png"), io::to_bytes(s.pixels));
    if (s.mask) io::write_png_gray(dir / "masks" / (s.id + ".png"), io::mask_to_bytes(*s.mask));
    meta << s.id << ',' << to_string(s.sex) << ',' << s.domain << '\n';
    samples.push_back(json{{"id", s.id},
                           {"seed", s.seed},
                           {"sex", to_string(s.sex)},
                           {"spec", to_json(s.spec)},
                           {"in_mask_signal", s.pathology.in_mask_signal},
                           {"confound_signal", s.pathology.confound_signal}});
  }
  json manifest{{"role", to_string(partition.role)},
                {"domain", partition.domain},
                {"count", partition.size()},
                {"samples", samples}};
  std::ofstream(dir / "generation.json", std::ios::binary) << manifest.dump(2) << '\n';
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

}  // namespace

DatasetPartition ingest_directory(const fs::path& dir) {
  const auto meta_path = dir / "metadata.csv";
  std::ifstream meta(meta_path);
  if (!meta) throw DataError("missing metadata.csv in " + dir.string());

  std::string line;
  if (!std::getline(meta, line)) throw DataError("empty metadata.csv in " + dir.string());
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "id,sex,domain") throw DataError("metadata.csv header must be 'id,sex,domain', got '" + line + "'");

  DatasetPartition part;
  bool all_masks = true;
  int row = 1;
  while (std::getline(meta, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = split_csv_line(line);
    const std::string where = meta_path.string() + " row " + std::to_string(row);
    if (fields.size() != 3) throw DataError(where + ": expected 3 fields");
    ImageSample s;
    s.id = fields[0];
    try {
      s.sex = parse_sex(fields[1]);
    } catch (const DataError& e) {
      throw DataError(where + ": " + e.what());
    }
    s.domain = fields[2];
    if (s.id.empty()) throw DataError(where + ": empty id");

    s.pixels = io::from_bytes(io::read_png_gray(dir / "images" / (s.id + ".png")));
    const auto mask_path = dir / "masks" / (s.id + ".png");
    if (fs::exists(mask_path)) {
      Mask m = io::mask_from_bytes(io::read_png_gray(mask_path));
      if (!m.same_shape(s.pixels))
        throw DataError(where + ": image " + std::to_string(s.pixels.height) + "x" + std::to_string(s.pixels.width) +
                        " and mask " + std::to_string(m.height) + "x" + std::to_string(m.width) +
                        " dimensions differ");
      s.mask = std::move(m);
    } else {
      all_masks = false;
    }
    if (part.samples.empty()) part.domain = s.domain;
    part.samples.push_back(std::move(s));
  }
  if (part.empty()) throw DataError("no samples listed in " + meta_path.string());

  part.role = all_masks ? Role::labelled : Role::unlabelled;
  const auto gen_path = dir / "generation.json";
  if (all_masks && fs::exists(gen_path)) {
    try {
      const auto gen = json::parse(std::ifstream(gen_path));
      if (gen.contains("role") && gen["role"] == "test") part.role = Role::test;
    } catch (const json::exception& e) {
      throw DataError("unreadable generation.json: " + std::string(e.what()));
    }
  }
  return part;
}

}  // namespace segbench::synth
