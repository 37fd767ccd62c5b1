#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "adkd/data.hpp"
#include "adkd/distill.hpp"
#include "adkd/errors.hpp"
#include "adkd/metrics.hpp"
#include "adkd/model.hpp"

namespace adkd::trainer {

struct Dataset {
  data::Vocab vocab;
  data::TaskSchema schema;
  std::vector<data::Example> train;
  std::vector<data::Example> dev;
  std::vector<data::TokenSequence> train_tokens;
  std::vector<data::TokenSequence> dev_tokens;

  std::vector<double> train_labels() const;
  std::vector<double> dev_labels() const;
};

// Tokenizes both splits with `vocab` (built from train when not given).
Dataset encode(const data::TaskSchema& schema, std::vector<data::Example> train,
               std::vector<data::Example> dev, std::size_t max_len,
               std::optional<data::Vocab> vocab = std::nullopt);

struct OptimConfig {
  double learning_rate = 1e-3;
  std::size_t batch_size = 16;
  std::size_t epochs = 5;
  std::uint64_t seed = 1;
  double warmup_fraction = 0.1;
  double clip_norm = 1.0;

  void validate() const;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double ce = 0.0;
  double logit_kd = 0.0;
  double attr = 0.0;
  double loss = 0.0;
  double dev_metric = 0.0;
};

struct StepLog {
  std::size_t step = 0;
  distill::LossBreakdown loss;
};

struct TrainReport {
  std::string kind;  // teacher | ad_kd | vanilla_kd
  std::uint64_t seed = 0;
  metrics::Metric metric = metrics::Metric::accuracy;
  std::vector<EpochRecord> epochs;
  std::vector<double> step_losses;
  std::optional<double> best_dev_metric;
  std::optional<std::size_t> best_epoch;
  std::string best_checkpoint;
  std::size_t steps = 0;
  bool vanilla_kd_equivalent = false;
  std::size_t degenerate_views = 0;
  double wall_clock_seconds = 0.0;

  nlohmann::json to_json(bool include_wall_clock = true) const;
};

void write_report(const std::filesystem::path& path, const TrainReport& report);

// Raised when a loss or gradient stops being finite. Carries the report up to
// the failing step.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, TrainReport report)
      : Error(what), report_(std::move(report)) {}
  const TrainReport& report() const { return report_; }

 private:
  TrainReport report_;
};

struct RunOptions {
  // When set, the best-by-dev checkpoint is written here as model.ckpt.
  std::optional<std::filesystem::path> output_dir;
  std::optional<metrics::Metric> metric;  // default: accuracy, or spearman for regression
  std::function<void(const StepLog&)> on_step;
};

struct TrainResult {
  model::Model model;  // best-by-dev parameters (the initial ones for zero epochs)
  TrainReport report;
};

TrainResult train_teacher(const Dataset& data, const model::ModelConfig& config,
                          const OptimConfig& optim, const RunOptions& run = {});

// The student is initialised from student_config (its seed included) and the
// teacher is never modified.
TrainResult distill(const model::Model& teacher, const model::ModelConfig& student_config,
                    const Dataset& data, const distill::DistillConfig& config,
                    const RunOptions& run = {});

metrics::Metric default_metric(const data::TaskSchema& schema);
metrics::MetricResult evaluate(const model::Model& model,
                               std::span<const data::TokenSequence> tokens,
                               std::span<const double> labels, metrics::Metric metric);

// Attribution settings shared by the gap and the rationale diagnostics.
struct AttributionSettings {
  std::size_t top_k = 0;  // 0: all teacher dimensions
  std::size_t ig_steps = 1;
  distill::AttrLayer layer = distill::AttrLayer::input;
  attribution::Target target = attribution::Target::probability;

  static AttributionSettings from(const distill::DistillConfig& config);
};

// Mean attribution loss between teacher and student over the sequences.
double attribution_gap(const model::Model& teacher, const model::Model& student,
                       std::span<const data::TokenSequence> tokens,
                       const AttributionSettings& settings);

struct RationaleReport {
  double mean_spearman = 0.0;     // teacher vs student token scores
  double keyword_top2_rate = 0.0; // share of examples with a planted keyword in the student's top 2
  std::size_t examples = 0;
};

// Input-embedding attributions of the gold-label view over non-special
// tokens. Examples without a keyword are skipped for the top-2 rate.
RationaleReport rationale_report(const model::Model& teacher, const model::Model& student,
                                 const data::Vocab& vocab,
                                 std::span<const data::TokenSequence> tokens,
                                 std::span<const double> labels,
                                 const AttributionSettings& settings);

}  // namespace adkd::trainer
