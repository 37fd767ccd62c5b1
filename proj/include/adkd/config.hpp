#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include <json.hpp>

#include "adkd/data.hpp"
#include "adkd/distill.hpp"
#include "adkd/metrics.hpp"
#include "adkd/model.hpp"
#include "adkd/trainer.hpp"

namespace adkd::config {

// Output directories given as relative paths are resolved against this
// variable when it is set.
inline constexpr const char* kOutputRootEnv = "ADKD_OUTPUT_ROOT";

struct TaskConfig {
  data::TaskSchema schema;
  std::size_t max_len = 16;
  std::optional<std::filesystem::path> train_path;
  std::optional<std::filesystem::path> dev_path;
  std::optional<data::SyntheticSpec> synthetic;  // used when no paths are given
};

// Geometry of one model; vocab size, label count and seed come from the task.
struct ModelBlock {
  std::size_t num_layers = 2;
  std::size_t hidden_dim = 64;
  std::size_t num_heads = 4;
  std::size_t ffn_dim = 128;
  double init_std = 0.02;

  model::ModelConfig resolve(std::size_t vocab_size, std::size_t max_len,
                             std::size_t num_labels, std::uint64_t seed) const;
};

struct RunConfig {
  std::uint64_t seed = 1;
  std::filesystem::path output_dir = "runs";
  TaskConfig task;
  ModelBlock teacher{4, 64, 4, 128, 0.02};
  trainer::OptimConfig teacher_optim;
  ModelBlock student;
  distill::DistillConfig distill;
  std::optional<metrics::Metric> metric;
  std::optional<std::filesystem::path> teacher_checkpoint;

  // Every field-level invariant that does not need data or checkpoints.
  void validate() const;
  nlohmann::json to_json() const;
};

// Throws ConfigError with a dotted field path for any malformed or unknown
// field, and IoError when the file cannot be read.
RunConfig parse(const nlohmann::json& j);
RunConfig load(const std::filesystem::path& path);

std::filesystem::path resolve_output_dir(const std::filesystem::path& dir);

// Train/dev splits of the task: loaded TSVs or the synthetic generator
// (seeded by the run seed unless the synthetic block sets one).
data::SyntheticTask load_task(const RunConfig& config);

}  // namespace adkd::config
