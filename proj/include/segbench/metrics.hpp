#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "segbench/grid.hpp"
#include "segbench/synthdata.hpp"

namespace segbench::metrics {

// Overlap conventions for empty sets: an empty prediction has precision 1
// (no false positives); an empty target has recall 1; two empty masks score
// 1 on all three. Otherwise a zero-size denominator yields 0.
struct OverlapScores {
  double dice = 0.0;
  double precision = 0.0;
  double recall = 0.0;
};

OverlapScores overlap(const Mask& pred, const Mask& truth);  // throws std::invalid_argument
double dice(const Mask& pred, const Mask& truth);
double precision(const Mask& pred, const Mask& truth);
double recall(const Mask& pred, const Mask& truth);

/// Foreground pixels with a 4-neighbour that is background or outside the image.
std::vector<std::pair<int, int>> boundary_pixels(const Mask& m);

struct SurfaceDistances {
  double asd = 0.0;        // mean of the two directed average boundary distances
  double hausdorff = 0.0;  // max of the two directed max-min boundary distances
};

/// Pixel units. Throws UndefinedMetric when either mask is empty.
SurfaceDistances surface_distances(const Mask& pred, const Mask& truth);

/// Mann-Whitney AUROC, ties count one half. Throws std::invalid_argument when
/// only one class is present or sizes differ.
double auroc(std::span<const double> scores, std::span<const int> labels);

struct TTestResult {
  double t = 0.0;
  double p = 1.0;
  double df = 0.0;
};

// Two-sided. Zero variance: p = 1 when the mean difference is zero, else p = 0.
TTestResult paired_ttest(std::span<const double> a, std::span<const double> b);
TTestResult welch_ttest(std::span<const double> a, std::span<const double> b);

double mean(std::span<const double> v);
double sample_std(std::span<const double> v);  // n-1 denominator; 0 for n < 2

enum class MetricName { dice, precision, recall, asd, hausdorff, auroc };
std::string_view to_string(MetricName m);
MetricName parse_metric(std::string_view s);
bool higher_is_better(MetricName m);

/// One row of metrics.csv. `sex` empty means the value is not stratified ("all").
/// A NaN value is a missing metric (written as NA).
struct MetricRecord {
  std::string model;
  std::string dataset;
  std::string sample_id;
  std::optional<synth::Sex> sex;
  MetricName metric = MetricName::dice;
  double value = 0.0;

  bool operator==(const MetricRecord&) const = default;
};

inline constexpr std::string_view kMetricsCsvHeader = "model,dataset,sample_id,sex,metric,value";

std::string format_metrics_csv(const std::vector<MetricRecord>& records);
void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricRecord>& records);
std::vector<MetricRecord> parse_metrics_csv(std::string_view text);
std::vector<MetricRecord> read_metrics_csv(const std::filesystem::path& path);

struct GroupSummary {
  std::string model;
  std::string dataset;
  MetricName metric = MetricName::dice;
  std::string group;  // "F", "M" or "all"
  double mean = 0.0;
  double std = 0.0;
  std::size_t n = 0;
};

struct GroupComparison {
  std::string model;
  std::string dataset;
  MetricName metric = MetricName::dice;
  TTestResult welch;  // F versus M
};

struct StratifiedReport {
  std::vector<GroupSummary> groups;
  std::vector<GroupComparison> comparisons;
};

/// Per-sex summaries for every (model, dataset, metric); a Welch test between
/// the sexes wherever both groups hold at least two non-missing values.
StratifiedReport stratify(const std::vector<MetricRecord>& records);

}  // namespace segbench::metrics
