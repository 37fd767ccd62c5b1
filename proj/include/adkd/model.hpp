#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "adkd/autodiff.hpp"
#include "adkd/data.hpp"
#include "adkd/tensor.hpp"

namespace adkd::model {

inline constexpr double kLayerNormEps = 1e-5;

struct ModelConfig {
  std::size_t num_layers = 2;
  std::size_t hidden_dim = 64;
  std::size_t num_heads = 4;
  std::size_t ffn_dim = 128;
  std::size_t vocab_size = 0;
  std::size_t max_len = 16;
  std::size_t num_labels = 2;  // 1 = regression
  std::uint64_t seed = 1;
  double init_std = 0.02;

  // Throws ConfigError naming the first offending field.
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

struct Parameter {
  std::string name;
  Tensor value;
};

// Post-LN transformer encoder with learned positions and a linear head on the
// first ([CLS]) position.
class Model {
 public:
  static Model init(const ModelConfig& config);

  const ModelConfig& config() const { return config_; }
  std::vector<Parameter>& parameters() { return params_; }
  const std::vector<Parameter>& parameters() const { return params_; }
  const Tensor& param(std::string_view name) const;
  std::size_t num_scalars() const;

  bool operator==(const Model&) const;

  // Construction from explicit arrays (checkpoint loading). Validates names
  // and shapes against the layout implied by config.
  static Model from_parameters(const ModelConfig& config, std::vector<Parameter> params);

 private:
  ModelConfig config_;
  std::vector<Parameter> params_;
};

std::vector<Parameter> parameter_layout(const ModelConfig& config);

// Student initialised from the teacher: embeddings, the first
// config.num_layers encoder layers and the head are copied. Widths, vocab and
// label count must match.
Model init_from_teacher(const Model& teacher, const ModelConfig& config);

// Model parameters recorded as leaves of a graph. Trainable bindings use
// input leaves (differentiable, rebindable); frozen ones use constants.
struct BoundModel {
  const Model* model = nullptr;
  std::vector<ad::Var> params;

  ad::Graph& graph() const { return params.front().graph(); }
  const ModelConfig& config() const { return model->config(); }
};

BoundModel bind(const Model& model, ad::Graph& graph, bool trainable);

// Rows: token embedding + position embedding. [PAD] positions are embedded too.
ad::Var embed(const BoundModel& m, const data::TokenSequence& tokens);
// n rows of the [PAD] input embedding (token + position).
ad::Var baseline_embeddings(const BoundModel& m, std::size_t n);

// Hidden state fed into encoder layer `layer`, computed from input embeddings.
// layer 0 is the input embedding itself; num_layers is the final encoder output.
ad::Var hidden_state(const BoundModel& m, ad::Var embeddings,
                     std::span<const unsigned char> mask, std::size_t layer);

// Logits (1×C). `layer` selects where `states` enters the network: 0 means
// they are input embeddings; ℓ ≥ 1 means they replace the input of encoder
// layer ℓ and everything before it is skipped. ℓ = num_layers leaves only the
// linear head.
ad::Var forward_from_embeddings(const BoundModel& m, ad::Var states,
                                std::span<const unsigned char> mask, std::size_t layer = 0);
ad::Var forward(const BoundModel& m, const data::TokenSequence& tokens);

// Convenience wrappers over a private frozen graph.
Tensor embed(const Model& model, const data::TokenSequence& tokens);
Tensor forward(const Model& model, const data::TokenSequence& tokens);
Tensor forward_from_embeddings(const Model& model, const Tensor& states,
                               std::span<const unsigned char> mask, std::size_t layer = 0);
std::vector<Tensor> forward_batch(const Model& model,
                                  std::span<const data::TokenSequence> batch);

// Checkpoint: one line of JSON header (format, version, config, array
// manifest with byte offsets, optional vocab) terminated by '\n', followed by
// the arrays as little-endian float64 in manifest order.
void save_checkpoint(const std::filesystem::path& path, const Model& model,
                     const data::Vocab* vocab = nullptr);

struct Checkpoint {
  Model model;
  std::optional<data::Vocab> vocab;
};

Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace adkd::model
