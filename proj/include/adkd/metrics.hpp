#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace adkd::metrics {

enum class Metric { accuracy, f1, matthews, spearman };

std::string_view metric_name(Metric m);
Metric parse_metric(std::string_view name);  // throws ConfigError

struct MetricResult {
  Metric metric = Metric::accuracy;
  double value = 0.0;
};

double accuracy(std::span<const int> predictions, std::span<const int> labels);
// Binary F1 with class 1 as positive. 0 when there are no true positives.
double f1(std::span<const int> predictions, std::span<const int> labels);
// Matthews correlation on the 2×2 confusion matrix; 0 when a marginal is empty.
double matthews(std::span<const int> predictions, std::span<const int> labels);
// Fractional ranks (ties share the mean rank), 1-based.
std::vector<double> ranks(std::span<const double> values);
double pearson(std::span<const double> x, std::span<const double> y);
// Pearson on fractional ranks; 0 when either side is constant.
double spearman(std::span<const double> x, std::span<const double> y);

}  // namespace adkd::metrics
