#include "adkd/heatmap.hpp"

#include <cmath>
#include <cstdio>

#include "adkd/attribution.hpp"
#include "adkd/errors.hpp"

namespace adkd::heatmap {
namespace {

std::string fixed(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

std::string escape_html(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      case '\'': out += "&#39;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

Heatmap compute(const model::Model& model, const data::Vocab& vocab, const data::Example& example,
                std::optional<std::size_t> label, std::size_t ig_steps) {
  if (vocab.size() != model.config().vocab_size) {
    throw ConfigError("vocabulary does not match the model");
  }
  const auto seq = data::tokenize(vocab, example, model.config().max_len).trimmed();
  Heatmap map;
  if (label) {
    if (*label >= attribution::num_views(model.config())) {
      throw ConfigError("label " + std::to_string(*label) + " out of range");
    }
    map.label = *label;
  } else if (model.config().num_labels > 1) {
    const Tensor logits = model::forward(model, seq);
    for (std::size_t c = 1; c < logits.size(); ++c) {
      if (logits[c] > logits[map.label]) map.label = c;
    }
  }
  attribution::IgOptions opts;
  opts.steps = ig_steps;
  const auto dims = attribution::ig_all_labels(model, seq, opts);
  const auto scores = attribution::token_scores(dims[map.label], model.config().hidden_dim,
                                                seq.mask, attribution::Source::student);
  double sq = 0.0;
  for (std::size_t i = 0; i < seq.size(); ++i) {
    if (!data::is_content(seq.ids[i])) continue;
    map.tokens.push_back({vocab.token(seq.ids[i]), scores.scores[i]});
    sq += scores.scores[i] * scores.scores[i];
  }
  const double norm = std::sqrt(sq);
  for (auto& t : map.tokens) {
    t.score = norm < attribution::kZeroNormGuard
                  ? 1.0 / std::sqrt(static_cast<double>(map.tokens.size()))
                  : t.score / norm;
  }
  return map;
}

std::string render_text(const Heatmap& map) {
  std::string out;
  for (std::size_t i = 0; i < map.tokens.size(); ++i) {
    if (i) out += ' ';
    out += map.tokens[i].token + ":" + fixed(map.tokens[i].score);
  }
  return out + "\n";
}

std::string render_html(const Heatmap& map) {
  std::string out =
      "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>attribution</title>\n"
      "<style>body{font-family:sans-serif;line-height:2}"
      "span{padding:2px 4px;margin:1px;border-radius:3px}</style></head>\n<body>\n"
      "<p>label " + std::to_string(map.label) + "</p>\n<p>";
  for (const auto& t : map.tokens) {
    out += "<span style=\"background:rgba(200,30,30," + fixed(t.score) + ")\" title=\"" +
           fixed(t.score) + "\">" + escape_html(t.token) + "</span> ";
  }
  return out + "</p>\n</body></html>\n";
}

}  // namespace adkd::heatmap
