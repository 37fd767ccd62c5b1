#include "adkd/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "adkd/errors.hpp"

namespace adkd::metrics {
namespace {

void require_same_size(std::size_t a, std::size_t b) {
  if (a != b) throw ShapeError("metric inputs differ in length");
  if (a == 0) throw DataError("metric on an empty set");
}

struct Confusion {
  double tp = 0, tn = 0, fp = 0, fn = 0;
};

Confusion confusion(std::span<const int> pred, std::span<const int> labels) {
  require_same_size(pred.size(), labels.size());
  Confusion c;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (labels[i] < 0 || labels[i] > 1 || pred[i] < 0 || pred[i] > 1) {
      throw ConfigError("f1/matthews need binary labels");
    }
    if (pred[i] == 1 && labels[i] == 1) ++c.tp;
    if (pred[i] == 0 && labels[i] == 0) ++c.tn;
    if (pred[i] == 1 && labels[i] == 0) ++c.fp;
    if (pred[i] == 0 && labels[i] == 1) ++c.fn;
  }
  return c;
}

}  // namespace

std::string_view metric_name(Metric m) {
  switch (m) {
    case Metric::accuracy: return "accuracy";
    case Metric::f1: return "f1";
    case Metric::matthews: return "matthews";
    case Metric::spearman: return "spearman";
  }
  return "accuracy";
}

Metric parse_metric(std::string_view name) {
  for (Metric m : {Metric::accuracy, Metric::f1, Metric::matthews, Metric::spearman}) {
    if (metric_name(m) == name) return m;
  }
  throw ConfigError("unknown metric '" + std::string(name) + "'");
}

double accuracy(std::span<const int> predictions, std::span<const int> labels) {
  require_same_size(predictions.size(), labels.size());
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hits += predictions[i] == labels[i];
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

double f1(std::span<const int> predictions, std::span<const int> labels) {
  const Confusion c = confusion(predictions, labels);
  if (c.tp == 0) return 0.0;
  return 2 * c.tp / (2 * c.tp + c.fp + c.fn);
}

double matthews(std::span<const int> predictions, std::span<const int> labels) {
  const Confusion c = confusion(predictions, labels);
  const double denom = (c.tp + c.fp) * (c.tp + c.fn) * (c.tn + c.fp) * (c.tn + c.fn);
  if (denom == 0) return 0.0;
  return (c.tp * c.tn - c.fp * c.fn) / std::sqrt(denom);
}

std::vector<double> ranks(std::span<const double> values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> r(values.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && values[order[j + 1]] == values[order[i]]) ++j;
    const double mean_rank = (static_cast<double>(i + j) / 2.0) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[order[k]] = mean_rank;
    i = j + 1;
  }
  return r;
}

double pearson(std::span<const double> x, std::span<const double> y) {
  require_same_size(x.size(), y.size());
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0 || syy == 0) return 0.0;
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

double spearman(std::span<const double> x, std::span<const double> y) {
  require_same_size(x.size(), y.size());
  const auto rx = ranks(x);
  const auto ry = ranks(y);
  return pearson(rx, ry);
}

}  // namespace adkd::metrics
