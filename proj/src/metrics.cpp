#include "segbench/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <tuple>

#include <boost/math/distributions/students_t.hpp>

#include "segbench/errors.hpp"

namespace segbench::metrics {
namespace {

void check_pair(const Mask& a, const Mask& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("mask shapes differ");
  if (!is_binary(a) || !is_binary(b)) throw std::invalid_argument("masks must be binary");
}

constexpr double kFar = 1e20;

// Exact 1-D squared Euclidean distance transform (lower envelope of parabolas).
void edt_1d(const std::vector<double>& f, std::vector<double>& d, std::vector<int>& v, std::vector<double>& z) {
  const int n = static_cast<int>(f.size());
  auto intersect = [&](int q, int p) {
    return ((f[static_cast<std::size_t>(q)] + double(q) * q) - (f[static_cast<std::size_t>(p)] + double(p) * p)) /
           (2.0 * q - 2.0 * p);
  };
  std::size_t k = 0;
  v[0] = 0;
  z[0] = -std::numeric_limits<double>::infinity();
  z[1] = std::numeric_limits<double>::infinity();
  for (int q = 1; q < n; ++q) {
    double s = intersect(q, v[k]);
    while (s <= z[k]) {
      --k;
      s = intersect(q, v[k]);
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = std::numeric_limits<double>::infinity();
  }
  k = 0;
  for (int q = 0; q < n; ++q) {
    while (z[k + 1] < q) ++k;
    const int p = v[k];
    d[static_cast<std::size_t>(q)] = double(q - p) * (q - p) + f[static_cast<std::size_t>(p)];
  }
}

// Squared distance from every pixel to the nearest site.
std::vector<double> squared_distance_to(const std::vector<std::pair<int, int>>& sites, int h, int w) {
  std::vector<double> grid(static_cast<std::size_t>(h) * w, kFar);
  for (auto [r, c] : sites) grid[static_cast<std::size_t>(r) * w + c] = 0.0;
  const int n = std::max(h, w);
  std::vector<double> f(static_cast<std::size_t>(n)), d(static_cast<std::size_t>(n));
  std::vector<int> v(static_cast<std::size_t>(n));
  std::vector<double> z(static_cast<std::size_t>(n) + 1);
  // Columns, then rows.
  f.resize(static_cast<std::size_t>(h));
  d.resize(static_cast<std::size_t>(h));
  for (int c = 0; c < w; ++c) {
    for (int r = 0; r < h; ++r) f[static_cast<std::size_t>(r)] = grid[static_cast<std::size_t>(r) * w + c];
    edt_1d(f, d, v, z);
    for (int r = 0; r < h; ++r) grid[static_cast<std::size_t>(r) * w + c] = d[static_cast<std::size_t>(r)];
  }
  f.resize(static_cast<std::size_t>(w));
  d.resize(static_cast<std::size_t>(w));
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) f[static_cast<std::size_t>(c)] = grid[static_cast<std::size_t>(r) * w + c];
    edt_1d(f, d, v, z);
    for (int c = 0; c < w; ++c) grid[static_cast<std::size_t>(r) * w + c] = d[static_cast<std::size_t>(c)];
  }
  return grid;
}

struct Directed {
  double mean = 0.0;
  double max = 0.0;
};

Directed directed(const std::vector<std::pair<int, int>>& from, const std::vector<double>& sq_to, int w) {
  Directed out;
  double sum = 0.0;
  for (auto [r, c] : from) {
    const double dist = std::sqrt(sq_to[static_cast<std::size_t>(r) * w + c]);
    sum += dist;
    out.max = std::max(out.max, dist);
  }
  out.mean = sum / static_cast<double>(from.size());
  return out;
}

}  // namespace

OverlapScores overlap(const Mask& pred, const Mask& truth) {
  check_pair(pred, truth);
  std::size_t p = 0, t = 0, both = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    p += pred.values[i];
    t += truth.values[i];
    both += pred.values[i] & truth.values[i];
  }
  OverlapScores s;
  if (p == 0 && t == 0) return {1.0, 1.0, 1.0};
  s.dice = 2.0 * static_cast<double>(both) / static_cast<double>(p + t);
  s.precision = p == 0 ? 1.0 : static_cast<double>(both) / static_cast<double>(p);
  s.recall = t == 0 ? 1.0 : static_cast<double>(both) / static_cast<double>(t);
  return s;
}

double dice(const Mask& pred, const Mask& truth) { return overlap(pred, truth).dice; }
double precision(const Mask& pred, const Mask& truth) { return overlap(pred, truth).precision; }
double recall(const Mask& pred, const Mask& truth) { return overlap(pred, truth).recall; }

std::vector<std::pair<int, int>> boundary_pixels(const Mask& m) {
  std::vector<std::pair<int, int>> out;
  auto bg = [&](int r, int c) { return r < 0 || c < 0 || r >= m.height || c >= m.width || m(r, c) == 0; };
  for (int r = 0; r < m.height; ++r)
    for (int c = 0; c < m.width; ++c)
      if (m(r, c) && (bg(r - 1, c) || bg(r + 1, c) || bg(r, c - 1) || bg(r, c + 1))) out.emplace_back(r, c);
  return out;
}

SurfaceDistances surface_distances(const Mask& pred, const Mask& truth) {
  check_pair(pred, truth);
  const auto bp = boundary_pixels(pred);
  const auto bt = boundary_pixels(truth);
  if (bp.empty() || bt.empty()) throw UndefinedMetric("surface distance is undefined for an empty mask");
  const int h = pred.height, w = pred.width;
  const auto to_truth = squared_distance_to(bt, h, w);
  const auto to_pred = squared_distance_to(bp, h, w);
  const Directed pt = directed(bp, to_truth, w);
  const Directed tp = directed(bt, to_pred, w);
  return {0.5 * (pt.mean + tp.mean), std::max(pt.max, tp.max)};
}

double auroc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw std::invalid_argument("auroc: scores and labels differ in length");
  std::size_t n_pos = 0;
  for (int l : labels) {
    if (l != 0 && l != 1) throw std::invalid_argument("auroc: labels must be 0 or 1");
    n_pos += static_cast<std::size_t>(l);
  }
  const std::size_t n_neg = labels.size() - n_pos;
  if (n_pos == 0 || n_neg == 0) throw std::invalid_argument("auroc: both classes must be present");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k)
      if (labels[order[k]] == 1) rank_sum += avg_rank;
    i = j + 1;
  }
  const double u = rank_sum - 0.5 * static_cast<double>(n_pos) * static_cast<double>(n_pos + 1);
  return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

double mean(std::span<const double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double sample_std(std::span<const double> v) {
  if (v.size() < 2) return 0.0;
  const double m = mean(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

namespace {

double two_sided_p(double t, double df) {
  boost::math::students_t dist(df);
  return std::min(1.0, 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t))));
}

TTestResult degenerate(double diff, double df) {
  if (diff == 0.0) return {0.0, 1.0, df};
  return {diff > 0 ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity(), 0.0, df};
}

}  // namespace

TTestResult paired_ttest(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("paired t-test needs equal lengths");
  if (a.size() < 2) throw std::invalid_argument("paired t-test needs at least 2 pairs");
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  const double n = static_cast<double>(d.size());
  const double m = mean(d);
  const double sd = sample_std(d);
  if (sd == 0.0) return degenerate(m, n - 1.0);
  const double t = m / (sd / std::sqrt(n));
  return {t, two_sided_p(t, n - 1.0), n - 1.0};
}

TTestResult welch_ttest(std::span<const double> a, std::span<const double> b) {
  if (a.size() < 2 || b.size() < 2) throw std::invalid_argument("Welch t-test needs at least 2 values per group");
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  const double va = std::pow(sample_std(a), 2) / na;
  const double vb = std::pow(sample_std(b), 2) / nb;
  const double diff = mean(a) - mean(b);
  const double se2 = va + vb;
  if (se2 == 0.0) return degenerate(diff, na + nb - 2.0);
  const double df = se2 * se2 / (va * va / (na - 1.0) + vb * vb / (nb - 1.0));
  const double t = diff / std::sqrt(se2);
  return {t, two_sided_p(t, df), df};
}

std::string_view to_string(MetricName m) {
  switch (m) {
    case MetricName::dice: return "dice";
    case MetricName::precision: return "precision";
    case MetricName::recall: return "recall";
    case MetricName::asd: return "asd";
    case MetricName::hausdorff: return "hausdorff";
    case MetricName::auroc: return "auroc";
  }
  return "dice";
}

MetricName parse_metric(std::string_view s) {
  for (auto m : {MetricName::dice, MetricName::precision, MetricName::recall, MetricName::asd, MetricName::hausdorff,
                 MetricName::auroc})
    if (to_string(m) == s) return m;
  throw DataError("unknown metric '" + std::string(s) + "'");
}

bool higher_is_better(MetricName m) { return m != MetricName::asd && m != MetricName::hausdorff; }

std::string format_metrics_csv(const std::vector<MetricRecord>& records) {
  std::string out(kMetricsCsvHeader);
  out += '\n';
  char buf[64];
  for (const auto& r : records) {
    out += r.model;
    out += ',';
    out += r.dataset;
    out += ',';
    out += r.sample_id;
    out += ',';
    out += r.sex ? std::string(synth::to_string(*r.sex)) : std::string("all");
    out += ',';
    out += to_string(r.metric);
    out += ',';
    if (std::isnan(r.value)) {
      out += "NA";
    } else {
      std::snprintf(buf, sizeof buf, "%.17g", r.value);
      out += buf;
    }
    out += '\n';
  }
  return out;
}

void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricRecord>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << format_metrics_csv(records);
}

std::vector<MetricRecord> parse_metrics_csv(std::string_view text) {
  std::vector<MetricRecord> out;
  std::istringstream in{std::string(text)};
  std::string line;
  if (!std::getline(in, line) || line != kMetricsCsvHeader)
    throw DataError("metrics.csv header must be '" + std::string(kMetricsCsvHeader) + "'");
  int row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::istringstream ls(line);
    std::string field;
    while (std::getline(ls, field, ',')) f.push_back(field);
    if (f.size() != 6) throw DataError("metrics.csv row " + std::to_string(row) + ": expected 6 fields");
    MetricRecord r;
    r.model = f[0];
    r.dataset = f[1];
    r.sample_id = f[2];
    if (f[3] != "all") r.sex = synth::parse_sex(f[3]);
    r.metric = parse_metric(f[4]);
    if (f[5] == "NA") {
      r.value = std::numeric_limits<double>::quiet_NaN();
    } else {
      try {
        r.value = std::stod(f[5]);
      } catch (const std::exception&) {
        throw DataError("metrics.csv row " + std::to_string(row) + ": bad value '" + f[5] + "'");
      }
    }
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<MetricRecord> read_metrics_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_metrics_csv(ss.str());
}

StratifiedReport stratify(const std::vector<MetricRecord>& records) {
  using Key = std::tuple<std::string, std::string, int>;
  std::map<Key, std::map<std::string, std::vector<double>>> groups;
  for (const auto& r : records) {
    if (std::isnan(r.value)) continue;
    const std::string g = r.sex ? std::string(synth::to_string(*r.sex)) : std::string("all");
    groups[{r.model, r.dataset, static_cast<int>(r.metric)}][g].push_back(r.value);
  }
  StratifiedReport report;
  for (const auto& [key, by_group] : groups) {
    const auto& [model, dataset, metric] = key;
    for (const auto& [g, values] : by_group)
      report.groups.push_back({model, dataset, static_cast<MetricName>(metric), g, mean(values), sample_std(values),
                               values.size()});
    const auto f = by_group.find("F");
    const auto m = by_group.find("M");
    if (f != by_group.end() && m != by_group.end() && f->second.size() >= 2 && m->second.size() >= 2)
      report.comparisons.push_back({model, dataset, static_cast<MetricName>(metric), welch_ttest(f->second, m->second)});
  }
  return report;
}

}  // namespace segbench::metrics
