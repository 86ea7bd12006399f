#include "segbench/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>

#include "segbench/errors.hpp"

namespace segbench::ckpt {
namespace {

constexpr std::array<char, 8> kMagic = {'S', 'E', 'G', 'B', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

constexpr std::array<std::pair<Component, std::string_view>, 7> kComponents = {{
    {Component::G, "G"},
    {Component::D_r, "D_r"},
    {Component::D_m, "D_m"},
    {Component::E, "E"},
    {Component::DL, "DL"},
    {Component::UN, "UN"},
    {Component::classifier, "classifier"},
}};

std::string dtype_name(torch::Dtype t) {
  switch (t) {
    case torch::kFloat32: return "f32";
    case torch::kFloat64: return "f64";
    case torch::kInt64: return "i64";
    case torch::kInt32: return "i32";
    case torch::kUInt8: return "u8";
    default: throw DataError("checkpoint: unsupported tensor dtype");
  }
}

torch::Dtype dtype_from_name(const std::string& s) {
  if (s == "f32") return torch::kFloat32;
  if (s == "f64") return torch::kFloat64;
  if (s == "i64") return torch::kInt64;
  if (s == "i32") return torch::kInt32;
  if (s == "u8") return torch::kUInt8;
  throw DataError("checkpoint: unknown dtype '" + s + "'");
}

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!is) throw DataError("checkpoint: truncated file");
  return v;
}

struct Fnv {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  void feed(const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 0x100000001b3ULL;
    }
  }
  std::string hex() const {
    static constexpr char digits[] = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 0; i < 16; ++i) s[static_cast<std::size_t>(i)] = digits[(h >> (60 - 4 * i)) & 0xf];
    return s;
  }
};

nlohmann::json meta_json(const CheckpointMeta& m) {
  return {{"component", to_string(m.component)},
          {"step", m.step},
          {"selection_score", m.selection_score},
          {"config_hash", m.config_hash},
          {"extra", m.extra}};
}

CheckpointMeta meta_from_json(const nlohmann::json& j) {
  try {
    CheckpointMeta m;
    m.component = parse_component(j.at("component").get<std::string>());
    m.step = j.at("step").get<std::int64_t>();
    m.selection_score = j.at("selection_score").get<double>();
    m.config_hash = j.at("config_hash").get<std::string>();
    m.extra = j.value("extra", nlohmann::json::object());
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint: malformed header: ") + e.what());
  }
}

nlohmann::json read_header(std::istream& is, const std::filesystem::path& path) {
  std::array<char, 8> magic{};
  is.read(magic.data(), magic.size());
  if (!is || magic != kMagic) throw DataError("not a checkpoint file: " + path.string());
  const auto version = get<std::uint32_t>(is);
  if (version != kVersion) throw DataError("unsupported checkpoint version " + std::to_string(version));
  const auto len = get<std::uint64_t>(is);
  std::string text(len, '\0');
  is.read(text.data(), static_cast<std::streamsize>(len));
  if (!is) throw DataError("checkpoint: truncated header in " + path.string());
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("checkpoint: header is not JSON: " + std::string(e.what()));
  }
}

}  // namespace

std::string_view to_string(Component c) {
  for (const auto& [k, v] : kComponents)
    if (k == c) return v;
  return "?";
}

Component parse_component(std::string_view s) {
  for (const auto& [k, v] : kComponents)
    if (v == s) return k;
  throw DataError("unknown checkpoint component '" + std::string(s) + "'");
}

TensorList named_state(const torch::nn::Module& m) {
  TensorList out;
  for (const auto& p : m.named_parameters(true)) out.emplace_back(p.key(), p.value());
  for (const auto& b : m.named_buffers(true)) out.emplace_back(b.key(), b.value());
  return out;
}

TensorList snapshot(const torch::nn::Module& m) {
  torch::NoGradGuard no_grad;
  TensorList out;
  for (auto& [name, t] : named_state(m)) out.emplace_back(name, t.detach().clone());
  return out;
}

void restore(torch::nn::Module& m, const TensorList& state) {
  torch::NoGradGuard no_grad;
  auto live = named_state(m);
  if (live.size() != state.size())
    throw DataError("state has " + std::to_string(state.size()) + " tensors, module expects " + std::to_string(live.size()));
  for (std::size_t i = 0; i < live.size(); ++i) {
    const auto& [name, dst] = live[i];
    const auto& [sname, src] = state[i];
    if (name != sname) throw DataError("state tensor '" + sname + "' does not match module tensor '" + name + "'");
    if (dst.sizes() != src.sizes() || dst.scalar_type() != src.scalar_type())
      throw DataError("shape or dtype mismatch for tensor '" + name + "'");
  }
  for (std::size_t i = 0; i < live.size(); ++i) live[i].second.copy_(state[i].second);
}

void save_tensors(const std::filesystem::path& path, const TensorList& state, const CheckpointMeta& meta) {
  auto header = meta_json(meta);
  header["tensors"] = nlohmann::json::array();
  std::uint64_t offset = 0;
  std::vector<torch::Tensor> contiguous;
  for (const auto& [name, t] : state) {
    auto c = t.detach().cpu().contiguous();
    const std::uint64_t nbytes = static_cast<std::uint64_t>(c.numel()) * c.element_size();
    header["tensors"].push_back(
        {{"name", name}, {"dtype", dtype_name(c.scalar_type())}, {"shape", c.sizes().vec()}, {"offset", offset}, {"nbytes", nbytes}});
    offset += nbytes;
    contiguous.push_back(std::move(c));
  }
  const std::string text = header.dump();
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot write checkpoint " + path.string());
  os.write(kMagic.data(), kMagic.size());
  put<std::uint32_t>(os, kVersion);
  put<std::uint64_t>(os, text.size());
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& c : contiguous)
    os.write(static_cast<const char*>(c.data_ptr()), static_cast<std::streamsize>(c.numel() * c.element_size()));
  if (!os) throw DataError("failed writing checkpoint " + path.string());
}

void save(const std::filesystem::path& path, const torch::nn::Module& m, const CheckpointMeta& meta) {
  save_tensors(path, named_state(m), meta);
}

Loaded load_tensors(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint " + path.string());
  const auto header = read_header(is, path);
  Loaded out{meta_from_json(header), {}};
  const auto data_start = is.tellg();
  try {
    for (const auto& entry : header.at("tensors")) {
      const auto shape = entry.at("shape").get<std::vector<std::int64_t>>();
      const auto dtype = dtype_from_name(entry.at("dtype").get<std::string>());
      auto t = torch::empty(shape, torch::TensorOptions().dtype(dtype));
      const auto nbytes = entry.at("nbytes").get<std::uint64_t>();
      if (nbytes != static_cast<std::uint64_t>(t.numel()) * t.element_size())
        throw DataError("checkpoint: byte count mismatch for " + entry.at("name").get<std::string>());
      is.seekg(data_start + static_cast<std::streamoff>(entry.at("offset").get<std::uint64_t>()));
      is.read(static_cast<char*>(t.data_ptr()), static_cast<std::streamsize>(nbytes));
      if (!is) throw DataError("checkpoint: truncated tensor data in " + path.string());
      out.tensors.emplace_back(entry.at("name").get<std::string>(), std::move(t));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint: malformed tensor table: ") + e.what());
  }
  return out;
}

CheckpointMeta load(const std::filesystem::path& path, torch::nn::Module& m, Component expected) {
  auto loaded = load_tensors(path);
  if (loaded.meta.component != expected)
    throw DataError(path.string() + " holds a " + std::string(to_string(loaded.meta.component)) + " checkpoint, expected " +
                    std::string(to_string(expected)));
  restore(m, loaded.tensors);
  return loaded.meta;
}

CheckpointMeta read_meta(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint " + path.string());
  return meta_from_json(read_header(is, path));
}

std::string parameter_hash(const torch::nn::Module& m) {
  Fnv f;
  for (const auto& [name, t] : named_state(m)) {
    f.feed(name.data(), name.size());
    for (auto d : t.sizes()) f.feed(&d, sizeof d);
    const auto c = t.detach().cpu().contiguous();
    f.feed(c.data_ptr(), static_cast<std::size_t>(c.numel() * c.element_size()));
  }
  return f.hex();
}

std::string fnv1a_hex(std::string_view bytes) {
  Fnv f;
  f.feed(bytes.data(), bytes.size());
  return f.hex();
}

}  // namespace segbench::ckpt
