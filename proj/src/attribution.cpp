#include "adkd/attribution.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "adkd/errors.hpp"

namespace adkd::attribution {
namespace {

using ad::Var;

std::vector<std::size_t> kept_positions(std::span<const unsigned char> mask) {
  std::vector<std::size_t> kept;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i] != 0) kept.push_back(i);
  }
  return kept;
}

std::vector<std::size_t> all_labels(const model::ModelConfig& config) {
  std::vector<std::size_t> labels(num_views(config));
  std::iota(labels.begin(), labels.end(), std::size_t{0});
  return labels;
}

std::vector<double> normalized(std::span<const double> view, std::size_t& degenerate) {
  double sq = 0.0;
  for (double v : view) sq += v * v;
  const double norm = std::sqrt(sq);
  std::vector<double> out(view.size());
  if (norm < kZeroNormGuard) {
    ++degenerate;
    std::fill(out.begin(), out.end(), 1.0 / std::sqrt(static_cast<double>(view.size())));
  } else {
    for (std::size_t i = 0; i < view.size(); ++i) out[i] = view[i] / norm;
  }
  return out;
}

}  // namespace

std::size_t num_views(const model::ModelConfig& config) {
  return config.num_labels == 1 ? 1 : config.num_labels;
}

std::vector<Var> integrated_gradients(const model::BoundModel& m, Var states, Var baseline,
                                      std::span<const unsigned char> mask,
                                      std::span<const std::size_t> labels,
                                      const IgOptions& options) {
  if (options.steps == 0) throw ConfigError("ig_steps must be >= 1");
  if (states.shape() != baseline.shape()) {
    throw ShapeError("IG: states " + states.shape().str() + " vs baseline " +
                     baseline.shape().str());
  }
  const std::size_t classes = m.config().num_labels;
  for (std::size_t c : labels) {
    if (c >= num_views(m.config())) {
      throw ConfigError("IG: label " + std::to_string(c) + " out of range for " +
                        std::to_string(classes) + " labels");
    }
  }
  const double inv_m = 1.0 / static_cast<double>(options.steps);
  Var diff = states - baseline;
  std::vector<Var> summed(labels.size());
  for (std::size_t k = 1; k <= options.steps; ++k) {
    Var point = baseline + ad::scale(diff, static_cast<double>(k) * inv_m);
    Var logits = model::forward_from_embeddings(m, point, mask, options.layer);
    Var outputs = logits;
    if (classes > 1 && options.target == Target::probability) outputs = ad::softmax_rows(logits);
    for (std::size_t i = 0; i < labels.size(); ++i) {
      Var f = classes == 1 ? outputs : ad::col_slice(outputs, labels[i], 1);
      Var g = ad::gradient(f, point);
      summed[i] = summed[i].valid() ? summed[i] + g : g;
    }
  }
  std::vector<Var> result;
  result.reserve(labels.size());
  for (Var s : summed) {
    Var avg = options.steps == 1 ? s : ad::scale(s, inv_m);
    result.push_back(diff * avg);
  }
  return result;
}

AttributionInputs attribution_inputs(const model::BoundModel& m, const data::TokenSequence& tokens,
                                     const IgOptions& options) {
  Var e = model::embed(m, tokens);
  Var base = model::baseline_embeddings(m, tokens.size());
  if (options.layer == 0) return {e, base};
  return {model::hidden_state(m, e, tokens.mask, options.layer),
          model::hidden_state(m, base, tokens.mask, options.layer)};
}

Var student_multi_view(const model::BoundModel& m, const data::TokenSequence& tokens,
                       const IgOptions& options, std::size_t* degenerate_views) {
  const AttributionInputs in = attribution_inputs(m, tokens, options);
  const auto labels = all_labels(m.config());
  const auto igs = integrated_gradients(m, in.states, in.baseline, tokens.mask, labels, options);
  const auto kept = kept_positions(tokens.mask);
  if (kept.empty()) throw DataError("attribution: sequence has no unmasked position");
  const bool all_kept = kept.size() == tokens.size();

  std::vector<Var> views;
  views.reserve(igs.size());
  for (Var ig : igs) {
    Var rows = all_kept ? ig : ad::gather_rows(ig, kept);
    Var scores = ad::sqrt(ad::sum_cols(rows * rows));
    Var norm = ad::l2_norm(scores);
    if (norm.value().item() < kZeroNormGuard) {
      if (degenerate_views) ++*degenerate_views;
      views.push_back(m.graph().constant(
          Tensor(kept.size(), 1, 1.0 / std::sqrt(static_cast<double>(kept.size())))));
    } else {
      views.push_back(ad::div(scores, ad::broadcast_scalar(norm, scores.shape())));
    }
  }
  return views.size() == 1 ? views.front() : ad::concat_rows(views);
}

Tensor baseline_embeddings(const model::Model& model, std::size_t n) {
  ad::Graph g;
  return model::baseline_embeddings(model::bind(model, g, false), n).value();
}

DimAttribution ig_attribution(const model::Model& model, const Tensor& states,
                              const Tensor& baseline, std::span<const unsigned char> mask,
                              std::size_t label, const IgOptions& options) {
  ad::Graph g;
  const auto bm = model::bind(model, g, false);
  const std::size_t labels[] = {label};
  const auto igs =
      integrated_gradients(bm, g.constant(states), g.constant(baseline), mask, labels, options);
  return {igs.front().value(), label, options.steps};
}

std::vector<DimAttribution> ig_all_labels(const model::Model& model,
                                          const data::TokenSequence& tokens,
                                          const IgOptions& options) {
  ad::Graph g;
  const auto bm = model::bind(model, g, false);
  const AttributionInputs in = attribution_inputs(bm, tokens, options);
  const auto labels = all_labels(model.config());
  const auto igs = integrated_gradients(bm, in.states, in.baseline, tokens.mask, labels, options);
  std::vector<DimAttribution> out;
  out.reserve(igs.size());
  for (std::size_t i = 0; i < igs.size(); ++i) out.push_back({igs[i].value(), labels[i], options.steps});
  return out;
}

AttributionMap token_scores(const DimAttribution& attr, std::size_t top_k,
                            std::span<const unsigned char> mask, Source source) {
  const Tensor& s = attr.scores;
  if (top_k == 0 || top_k > s.cols()) {
    throw ConfigError("top-K " + std::to_string(top_k) + " outside [1, " +
                      std::to_string(s.cols()) + "]");
  }
  if (!mask.empty() && mask.size() != s.rows()) {
    throw ShapeError("token_scores: mask length " + std::to_string(mask.size()) + " for " +
                     s.shape().str());
  }
  AttributionMap map;
  map.label = attr.label;
  map.source = source;
  std::vector<std::size_t> order(s.cols());
  for (std::size_t r = 0; r < s.rows(); ++r) {
    if (!mask.empty() && mask[r] == 0) continue;
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return std::abs(s(r, a)) > std::abs(s(r, b));
    });
    double sq = 0.0;
    for (std::size_t k = 0; k < top_k; ++k) sq += s(r, order[k]) * s(r, order[k]);
    map.scores.push_back(std::sqrt(sq));
  }
  return map;
}

MultiViewMap multi_view(std::span<const AttributionMap> maps, bool normalize) {
  if (maps.empty()) throw ShapeError("multi_view: no maps");
  MultiViewMap out;
  out.views = maps.size();
  out.normalized = normalize;
  const std::size_t n = maps.front().scores.size();
  for (const AttributionMap& map : maps) {
    if (map.scores.size() != n || map.source != maps.front().source) {
      throw ShapeError("multi_view: maps differ in length or source");
    }
    if (normalize) {
      const auto unit = normalized(map.scores, out.degenerate_views);
      out.values.insert(out.values.end(), unit.begin(), unit.end());
    } else {
      out.values.insert(out.values.end(), map.scores.begin(), map.scores.end());
    }
  }
  return out;
}

MultiViewMap teacher_multi_view(const model::Model& teacher, const data::TokenSequence& tokens,
                                std::size_t top_k, const IgOptions& options) {
  const auto dims = ig_all_labels(teacher, tokens, options);
  std::vector<AttributionMap> maps;
  maps.reserve(dims.size());
  for (const auto& d : dims) maps.push_back(token_scores(d, top_k, tokens.mask, Source::teacher));
  return multi_view(maps, true);
}

MultiViewMap student_multi_view(const model::Model& student, const data::TokenSequence& tokens,
                                const IgOptions& options) {
  ad::Graph g;
  const auto bm = model::bind(student, g, false);
  MultiViewMap out;
  Var v = student_multi_view(bm, tokens, options, &out.degenerate_views);
  out.values.assign(v.value().values().begin(), v.value().values().end());
  out.views = num_views(student.config());
  out.normalized = true;
  return out;
}

AttributionMap occlusion_attribution(const model::Model& model, const data::TokenSequence& tokens,
                                     std::size_t label) {
  const std::size_t classes = model.config().num_labels;
  if (label >= num_views(model.config())) {
    throw ConfigError("occlusion: label " + std::to_string(label) + " out of range");
  }
  auto output = [&](const data::TokenSequence& seq) {
    const Tensor logits = model::forward(model, seq);
    if (classes == 1) return logits[0];
    ad::Graph g;
    return ad::softmax_rows(g.constant(logits)).value()[label];
  };
  const double full = output(tokens);
  AttributionMap map;
  map.label = label;
  map.source = Source::teacher;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens.mask[i] == 0) continue;
    data::TokenSequence erased = tokens;
    erased.ids[i] = data::kPadId;
    map.scores.push_back(std::abs(full - output(erased)));
  }
  return map;
}

}  // namespace adkd::attribution
