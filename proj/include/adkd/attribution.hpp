#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "adkd/autodiff.hpp"
#include "adkd/data.hpp"
#include "adkd/model.hpp"
#include "adkd/tensor.hpp"

// Integrated-Gradients attribution over input embeddings (or hidden states of
// a chosen layer) and the per-token maps built from it.
namespace adkd::attribution {

// Views with a smaller L2 norm are replaced by the uniform unit vector.
inline constexpr double kZeroNormGuard = 1e-12;

enum class Source { teacher, student };

// What F^c attributes: the post-softmax probability of label c (default) or
// its raw logit. Regression models always attribute their scalar output.
enum class Target { probability, logit };

struct IgOptions {
  std::size_t steps = 1;  // Riemann points m, right endpoints k = 1..m
  Target target = Target::probability;
  std::size_t layer = 0;  // 0 = input embeddings; ℓ = input of encoder layer ℓ
};

struct DimAttribution {
  Tensor scores;  // n×d, signed
  std::size_t label = 0;
  std::size_t ig_steps = 1;
};

struct AttributionMap {
  std::vector<double> scores;  // one per position with mask 1, >= 0
  std::size_t label = 0;
  Source source = Source::teacher;
};

struct MultiViewMap {
  std::vector<double> values;  // views concatenated in label order
  std::size_t views = 0;
  bool normalized = false;
  std::size_t degenerate_views = 0;  // views hit by the zero-norm guard

  std::size_t view_length() const { return views ? values.size() / views : 0; }
};

// Number of attributed labels: C, or 1 for regression.
std::size_t num_views(const model::ModelConfig& config);

// ---- graph level -------------------------------------------------------

// IG node (n×d) per requested label:
//   (states − baseline) ⊙ (1/m) Σ_k ∂F^c(baseline + k/m (states − baseline)) / ∂x.
// The forward passes are shared across labels. When the model is bound as
// trainable, the result is differentiable w.r.t. its parameters.
std::vector<ad::Var> integrated_gradients(const model::BoundModel& m, ad::Var states,
                                          ad::Var baseline, std::span<const unsigned char> mask,
                                          std::span<const std::size_t> labels,
                                          const IgOptions& options);

// States and [PAD] baseline at options.layer for a token sequence.
struct AttributionInputs {
  ad::Var states;
  ad::Var baseline;
};
AttributionInputs attribution_inputs(const model::BoundModel& m,
                                     const data::TokenSequence& tokens,
                                     const IgOptions& options);

// Student-side map: per position with mask 1, the L2 norm over all
// dimensions of the IG row; every view normalised; views stacked into a
// (C·n)×1 column. Differentiable end to end.
ad::Var student_multi_view(const model::BoundModel& m, const data::TokenSequence& tokens,
                           const IgOptions& options, std::size_t* degenerate_views = nullptr);

// ---- value level -------------------------------------------------------

Tensor baseline_embeddings(const model::Model& model, std::size_t n);

DimAttribution ig_attribution(const model::Model& model, const Tensor& states,
                              const Tensor& baseline, std::span<const unsigned char> mask,
                              std::size_t label, const IgOptions& options);

// IG for every label of a token sequence, computed on a frozen binding.
std::vector<DimAttribution> ig_all_labels(const model::Model& model,
                                          const data::TokenSequence& tokens,
                                          const IgOptions& options);

// Per position with mask 1: L2 norm of the k largest-magnitude IG values of
// that row (sign ignored, ties to the lower dimension).
AttributionMap token_scores(const DimAttribution& attr, std::size_t top_k,
                            std::span<const unsigned char> mask, Source source);

// Concatenates maps in the given (label) order, optionally normalising each.
MultiViewMap multi_view(std::span<const AttributionMap> maps, bool normalize);

// Teacher-side map: top-K token scores, normalised, multi-view.
MultiViewMap teacher_multi_view(const model::Model& teacher, const data::TokenSequence& tokens,
                                std::size_t top_k, const IgOptions& options);

// Value of student_multi_view for a frozen model.
MultiViewMap student_multi_view(const model::Model& student, const data::TokenSequence& tokens,
                                const IgOptions& options);

// Occlusion oracle: |P_c(x) − P_c(x with token i replaced by [PAD])| for each
// position with mask 1.
AttributionMap occlusion_attribution(const model::Model& model, const data::TokenSequence& tokens,
                                     std::size_t label);

}  // namespace adkd::attribution
