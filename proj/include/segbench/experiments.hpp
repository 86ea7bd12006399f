#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <torch/torch.h>

#include "segbench/dataset.hpp"
#include "segbench/metrics.hpp"
#include "segbench/models.hpp"
#include "segbench/preprocess.hpp"
#include "segbench/synthdata.hpp"
#include "segbench/training.hpp"

namespace segbench::exp {

// ---------------------------------------------------------------------------
// Evaluation datasets and predictors

inline constexpr std::string_view kSupOnly = "SupOnly";
inline constexpr std::string_view kSemanticAN = "SemanticAN";
inline constexpr std::string_view kSemanticGAN = "SemanticGAN";

struct EvalSet {
  std::string name;  // dataset column of metrics.csv
  data::TensorSet set;
};

/// The three test partitions: labelled test, annotated unlabelled subset, out-of-domain.
std::vector<EvalSet> evaluation_sets(const synth::PartitionSet& parts, const prep::PreprocessConfig& pp);

/// Returns [N,H,W] uint8 binary masks for every image of the set.
using Predictor = std::function<torch::Tensor(const data::TensorSet&)>;

struct NamedPredictor {
  std::string model;
  Predictor predict;
};

NamedPredictor oracle_predictor(std::string name = "oracle");
NamedPredictor segmenter_predictor(std::string name, std::shared_ptr<models::SegmenterNet> net);
NamedPredictor semanticgan_predictor(std::string name, models::Generator g, models::Encoder e);

/// Per-sample dice, precision, recall, asd and hausdorff for every predictor
/// and dataset. Undefined surface distances (empty masks) become NaN.
std::vector<metrics::MetricRecord> run_generalisation_eval(const std::vector<NamedPredictor>& predictors,
                                                           const std::vector<EvalSet>& datasets);

std::vector<metrics::MetricRecord> segmentation_records(const std::string& model, const std::string& dataset,
                                                        const data::TensorSet& set, const torch::Tensor& pred);

// ---------------------------------------------------------------------------
// Trained model bundles

/// Stage-1 runs keyed by their training population so configurations that
/// share a generator population reuse it.
class GeneratorCache {
 public:
  std::shared_ptr<train::Stage1Result> get(const std::string& key) const;
  void put(const std::string& key, std::shared_ptr<train::Stage1Result> value);
  std::size_t size() const { return entries_.size(); }

 private:
  std::map<std::string, std::shared_ptr<train::Stage1Result>> entries_;
};

// ---------------------------------------------------------------------------
// Bias suite

enum class BiasConfig { control, full_bias, biased_G, biased_E, biased_Dl, biased_Du };
std::string_view to_string(BiasConfig b);
BiasConfig parse_bias_config(std::string_view s);  // throws ConfigError
const std::vector<BiasConfig>& all_bias_configs();

/// Which training populations are restricted to males.
struct BiasPopulation {
  bool g_unlabelled_males = false;
  bool g_labelled_males = false;
  bool e_unlabelled_males = false;
  bool e_labelled_males = false;
  bool operator==(const BiasPopulation&) const = default;
};
BiasPopulation population(BiasConfig b);

struct ExperimentManifest {
  std::string name;
  BiasConfig bias_config = BiasConfig::control;
  std::vector<std::uint64_t> seeds;
  synth::PartitionConfig data;
  prep::PreprocessConfig preprocess;
  models::ModelConfig model;
  train::TrainConfig train;
  std::filesystem::path outputs_dir;

  void validate() const;  // throws ConfigError
};

struct TrainingPopulationAudit {
  BiasConfig config = BiasConfig::control;
  std::uint64_t seed = 0;
  // Female counts in the four training sets actually used.
  std::size_t g_unlabelled_f = 0, g_labelled_f = 0, e_unlabelled_f = 0, e_labelled_f = 0;
  std::size_t g_unlabelled_n = 0, g_labelled_n = 0, e_unlabelled_n = 0, e_labelled_n = 0;
};

struct BiasRun {
  BiasConfig config = BiasConfig::control;
  std::uint64_t seed = 0;
  std::vector<metrics::MetricRecord> records;  // model column = configuration name
  TrainingPopulationAudit audit;
  train::History stage1_history, stage2_history;
  std::shared_ptr<train::Stage1Result> stage1;
  models::Encoder encoder{nullptr};
};

/// Trains (or reuses from `cache`) the generator and trains the encoder for
/// one configuration and seed, then evaluates on the unbiased test sets.
BiasRun run_bias_config(BiasConfig config, std::uint64_t seed, const synth::PartitionConfig& data_cfg,
                        const prep::PreprocessConfig& pp, const models::ModelConfig& mcfg, const train::TrainConfig& tcfg,
                        GeneratorCache& cache);

struct BiasSuiteResult {
  std::vector<BiasRun> runs;
  std::vector<metrics::MetricRecord> records;
};

/// Runs every manifest for every seed. Manifests must be distinct bias configurations.
BiasSuiteResult run_bias_suite(const std::vector<ExperimentManifest>& manifests, GeneratorCache& cache);

// ---------------------------------------------------------------------------
// Downstream masked classification

struct DownstreamConfig {
  int n_train = 400;
  int n_test = 200;
  double prevalence = 0.5;              // fraction with the in-mask signal
  double confound_agreement = 0.75;     // P(confound flag == label)
  int classifier_steps = 300;
  int classifier_batch = 32;
  double classifier_lr = 1e-3;
  std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};
  int corrupt_dilate = 3;   // pixels at model resolution
  int corrupt_shift = 10;   // pixels, applied to rows and columns
  std::uint64_t data_seed = 1000;

  void validate() const;  // throws ConfigError
};

/// Builds the classification images: label = in-mask pathology signal, with a
/// confound blob outside the mask that agrees with the label at the configured rate.
struct DownstreamData {
  data::TensorSet train, test;
  std::vector<int> train_labels, test_labels;
};
DownstreamData make_downstream_data(const DownstreamConfig& cfg, const synth::DomainSpec& spec,
                                    const prep::PreprocessConfig& pp);

/// Mask sources. "unmasked" keeps whole images; "oracle" uses ground truth;
/// "corrupted-oracle" dilates and shifts ground truth; "permuted-label" uses
/// oracle masks with shuffled training labels. Any other name must be supplied
/// as a predictor.
inline constexpr std::string_view kUnmasked = "unmasked";
inline constexpr std::string_view kOracle = "oracle";
inline constexpr std::string_view kCorrupted = "corrupted-oracle";
inline constexpr std::string_view kPermuted = "permuted-label";

/// Zeroes intensities outside the mask (-1 after normalisation).
torch::Tensor apply_mask(const torch::Tensor& images, const torch::Tensor& masks);
torch::Tensor corrupt_masks(const torch::Tensor& masks, int dilate, int shift);

/// Trains one classifier per seed and source; one AUROC record per (source, seed)
/// with dataset "downstream" and sample_id "seed-<n>".
std::vector<metrics::MetricRecord> run_downstream_classification(const std::vector<std::string>& sources,
                                                                 const std::vector<NamedPredictor>& model_sources,
                                                                 const DownstreamData& data, const DownstreamConfig& cfg,
                                                                 const models::ModelConfig& mcfg);

// ---------------------------------------------------------------------------
// PCA probe

struct PcaProbeResult {
  int component_index = 1;  // 1-based
  std::vector<double> offsets;  // in standard deviations: -2,-1,0,1,2
  std::vector<torch::Tensor> probe_images;     // [1,H,W] each
  std::vector<torch::Tensor> reconstructions;  // [1,H,W]
  std::vector<torch::Tensor> segmentations;    // [H,W] uint8
  std::vector<double> areas;                   // foreground pixels
  std::vector<double> area_delta_pct;          // relative to the offset-0 area
  double sigma = 0.0;
  double explained_variance_ratio = 0.0;
  double covariate_correlation = 0.0;  // projection vs covariate, NaN when none given
};

struct ReconstructSegment {
  torch::Tensor images;  // [N,1,H,W]
  torch::Tensor masks;   // [N,H,W] uint8
};
using ProbeModel = std::function<ReconstructSegment(const torch::Tensor&)>;

/// Probe images whose main variation is anatomy scale: male geometry, scale
/// drawn uniformly from [scale_min, scale_max]. `scales` is the covariate.
struct ScaleSweep {
  data::TensorSet set;
  std::vector<double> scales;
};
ScaleSweep make_scale_sweep(const synth::DomainSpec& base, int n, double scale_min, double scale_max, std::uint64_t seed,
                            const prep::PreprocessConfig& pp, int image_size = 64);

ProbeModel semanticgan_probe_model(models::Generator g, models::Encoder e);

/// PCA of flattened images. Components are oriented so their projections
/// correlate positively with `covariate` when given, otherwise so the largest
/// absolute loading is positive. Throws std::invalid_argument with fewer images
/// than components.
std::vector<PcaProbeResult> run_pca_probe(const ProbeModel& model, const torch::Tensor& images, int n_components = 3,
                                          const std::optional<std::vector<double>>& covariate = std::nullopt);

void write_pca_figures(const std::vector<PcaProbeResult>& results, const std::filesystem::path& dir);
std::string pca_summary_markdown(const std::vector<PcaProbeResult>& results);

// ---------------------------------------------------------------------------
// Reports

struct ReportLayout {
  std::string title = "Results";
  std::optional<std::string> control_model;  // adds a delta section against this model
};

struct RenderedReport {
  std::string markdown;
  std::vector<std::filesystem::path> figures;  // relative to the output directory
};

/// Pure rendering: markdown tables plus figure files written into `out_dir/figures`.
/// Throws std::invalid_argument on an empty record set.
RenderedReport render_report(const std::vector<metrics::MetricRecord>& records, const ReportLayout& layout,
                             const std::filesystem::path& out_dir);

/// Reads metrics.csv and writes report.md plus figures next to it.
RenderedReport render_report_from_csv(const std::filesystem::path& metrics_csv, const ReportLayout& layout,
                                      const std::filesystem::path& out_dir);

}  // namespace segbench::exp
