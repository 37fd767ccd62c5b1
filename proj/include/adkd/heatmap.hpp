#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "adkd/data.hpp"
#include "adkd/model.hpp"

namespace adkd::heatmap {

struct TokenScore {
  std::string token;
  double score = 0.0;  // unit L2 norm over the word positions
};

struct Heatmap {
  std::size_t label = 0;
  std::vector<TokenScore> tokens;
};

// Input-embedding IG over all dimensions for `label` (the predicted label
// when absent), restricted to word positions and L2-normalised.
Heatmap compute(const model::Model& model, const data::Vocab& vocab, const data::Example& example,
                std::optional<std::size_t> label, std::size_t ig_steps);

// "token:score" pairs separated by spaces, one line.
std::string render_text(const Heatmap& map);
// Standalone HTML page; each token's background opacity equals its score.
std::string render_html(const Heatmap& map);

}  // namespace adkd::heatmap
