#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "segbench/grid.hpp"

// Procedural chest-radiograph stand-in: paired image/mask samples with a
// binary subgroup attribute, domain-shift knobs and optional pathology blobs.
namespace segbench::synth {

enum class Sex { F, M };

std::string_view to_string(Sex s);
Sex parse_sex(std::string_view s);  // throws DataError

// Female lungs are narrowed horizontally by this factor; the male geometry is the reference.
inline constexpr double kFemaleWidthFactor = 0.82;
// Pathology blob radius range as a fraction of image width, and added intensity.
inline constexpr double kBlobRadiusMin = 0.06;
inline constexpr double kBlobRadiusMax = 0.10;
inline constexpr double kBlobContrast = -0.3;  // dark lesion; lungs are the brightest class

struct PathologyFlags {
  bool in_mask_signal = false;
  bool confound_signal = false;
  bool operator==(const PathologyFlags&) const = default;
};

/// Acquisition/anatomy knobs of one domain.
struct DomainSpec {
  double scale = 1.0;            // anatomy size factor (patient closeness to the source)
  double lateral_shift = 0.0;    // horizontal anatomy offset, pixels
  double intensity_offset = 0.0;
  double noise_std = 0.02;
  std::uint64_t texture_seed = 1;

  void validate() const;  // throws std::invalid_argument
  bool operator==(const DomainSpec&) const = default;
};

// Out-of-domain defaults: larger, shifted and brighter anatomy.
DomainSpec default_out_of_domain();

struct Blob {
  double row = 0.0;  // centre, pixel coordinates
  double col = 0.0;
  double radius = 0.0;  // pixels; blob pixels satisfy dr^2 + dc^2 <= radius^2
  bool in_mask = false;
};

struct ImageSample {
  std::string id;
  Image pixels;               // raw intensities in [0,1]
  std::optional<Mask> mask;   // 1 = lung
  Sex sex = Sex::M;
  std::string domain;
  PathologyFlags pathology;
  std::uint64_t seed = 0;
  DomainSpec spec;
  std::vector<Blob> blobs;
};

/// Pure function of its arguments. Throws std::invalid_argument for
/// non-positive dimensions or an invalid spec.
ImageSample generate_sample(const DomainSpec& spec, Sex sex, PathologyFlags flags,
                            std::uint64_t seed, int height = 64, int width = 64);

// Pixels (row, col) covered by a blob and inside the image.
std::vector<std::pair<int, int>> blob_pixels(const Blob& b, int height, int width);

enum class Role { labelled, unlabelled, test };
std::string_view to_string(Role r);
Role parse_role(std::string_view s);

struct DatasetPartition {
  Role role = Role::labelled;
  std::string domain;
  std::vector<ImageSample> samples;

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }
};

struct PartitionConfig {
  int image_size = 64;
  int n_labelled_train = 200;
  int n_labelled_test = 60;
  int n_unlabelled = 600;
  int n_annotated = 60;
  int n_out_of_domain = 60;
  double female_fraction = 0.5;  // exact per partition after rounding
  double pathology_prevalence = 0.0;
  DomainSpec in_domain;
  DomainSpec out_of_domain = default_out_of_domain();
  std::uint64_t seed = 0;
};

inline constexpr std::string_view kLabelledDomain = "in-domain-labelled";
inline constexpr std::string_view kUnlabelledDomain = "in-domain-unlabelled";
inline constexpr std::string_view kOutOfDomain = "out-of-domain";

/// The five partitions of the benchmark: labelled train/test, the unlabelled
/// pool with its annotated subset, and the out-of-domain test set.
struct PartitionSet {
  DatasetPartition labelled_train;
  DatasetPartition labelled_test;
  DatasetPartition unlabelled;        // masks withheld
  DatasetPartition annotated_subset;  // same distribution as `unlabelled`, masks kept
  DatasetPartition out_of_domain;
  std::vector<std::string> warnings;
};

PartitionSet build_partitions(const PartitionConfig& config);

/// Keeps only samples of sex `keep`, preserving order. Throws DataError if
/// nothing survives or the input is empty.
DatasetPartition apply_bias_filter(const DatasetPartition& partition, Sex keep = Sex::M);

/// Loads `images/<id>.png`, optional `masks/<id>.png` and `metadata.csv`
/// (header `id,sex,domain`). Partitions with any missing mask are unlabelled.
DatasetPartition ingest_directory(const std::filesystem::path& dir);

/// Writes the directory layout read by ingest_directory plus a
/// `generation.json` manifest of specs and seeds.
void write_partition(const DatasetPartition& partition, const std::filesystem::path& dir);

nlohmann::json to_json(const DomainSpec& spec);
DomainSpec domain_spec_from_json(const nlohmann::json& j);

}  // namespace segbench::synth
