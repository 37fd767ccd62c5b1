#include <doctest.h>

#include <cmath>
#include <vector>

#include "adkd/errors.hpp"
#include "adkd/metrics.hpp"

using namespace adkd::metrics;

TEST_CASE("perfect predictions") {
  const std::vector<int> y = {0, 1, 1, 0, 1};
  CHECK(accuracy(y, y) == 1.0);
  CHECK(matthews(y, y) == doctest::Approx(1.0));
  CHECK(f1(y, y) == 1.0);
}

TEST_CASE("constant predictions on a balanced set") {
  const std::vector<int> y = {0, 1, 0, 1};
  const std::vector<int> p = {1, 1, 1, 1};
  CHECK(matthews(p, y) == 0.0);
  CHECK(accuracy(p, y) == 0.5);
  CHECK(f1(p, y) == doctest::Approx(2.0 / 3.0));
}

TEST_CASE("hand-computed confusion matrix") {
  // tp 2, tn 1, fp 1, fn 1
  const std::vector<int> y = {1, 1, 1, 0, 0};
  const std::vector<int> p = {1, 1, 0, 1, 0};
  CHECK(f1(p, y) == doctest::Approx(4.0 / 6.0));
  CHECK(matthews(p, y) == doctest::Approx((2.0 * 1 - 1.0 * 1) / std::sqrt(3.0 * 3 * 2 * 2)));
}

TEST_CASE("spearman") {
  const std::vector<double> a = {1, 2, 3, 4};
  const std::vector<double> b = {10, 20, 30, 40};
  const std::vector<double> c = {4, 3, 2, 1};
  CHECK(spearman(a, b) == doctest::Approx(1.0));
  CHECK(spearman(a, c) == doctest::Approx(-1.0));
  CHECK(spearman(a, std::vector<double>{5, 5, 5, 5}) == 0.0);
  CHECK(ranks(std::vector<double>{3, 1, 3, 2}) == std::vector<double>{3.5, 1, 3.5, 2});
}

TEST_CASE("metric names and errors") {
  CHECK(parse_metric("matthews") == Metric::matthews);
  CHECK(metric_name(Metric::spearman) == "spearman");
  CHECK_THROWS_AS(parse_metric("auc"), adkd::ConfigError);
  CHECK_THROWS_AS(accuracy(std::vector<int>{1}, std::vector<int>{1, 0}), adkd::ShapeError);
  CHECK_THROWS_AS(f1(std::vector<int>{2}, std::vector<int>{1}), adkd::ConfigError);
}
