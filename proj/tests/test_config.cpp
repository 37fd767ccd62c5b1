#include <doctest.h>

#include <cstdlib>

#include "adkd/config.hpp"
#include "adkd/errors.hpp"

using namespace adkd;
using nlohmann::json;

namespace {

json minimal() {
  return json::parse(R"({"task": {"synthetic": {"num_train": 10, "num_dev": 5}}})");
}

}  // namespace

TEST_CASE("defaults fill a minimal config") {
  const auto c = config::parse(minimal());
  CHECK(c.task.schema.num_labels == 2);
  CHECK(c.teacher.num_layers == 4);
  CHECK(c.teacher.hidden_dim == 64);
  CHECK(c.distill.alpha == 0.9);
  CHECK(c.distill.beta == 10.0);
  CHECK(c.distill.tau == 4.0);
  CHECK(c.distill.ig_steps == 1);
  CHECK(c.distill.method == distill::Method::ad_kd);
  CHECK(c.distill.target == attribution::Target::probability);
}

TEST_CASE("the run seed reaches every block") {
  auto j = minimal();
  j["seed"] = 42;
  const auto c = config::parse(j);
  CHECK(c.distill.seed == 42);
  CHECK(c.teacher_optim.seed == 42);
  CHECK(c.task.synthetic->seed == 42);
  j["task"]["synthetic"]["seed"] = 5;
  CHECK(config::parse(j).task.synthetic->seed == 5);
}

TEST_CASE("resolved config survives a round trip") {
  auto j = minimal();
  j["distill"] = {{"beta", 1.0}, {"topk", 32}, {"attr_layer", "uniform"}, {"target", "logit"}};
  j["student"] = {{"num_layers", 3}};
  j["metric"] = "f1";
  const auto c = config::parse(j);
  const auto back = config::parse(c.to_json());
  CHECK(back.to_json() == c.to_json());
  CHECK(back.distill.top_k == 32);
  CHECK(back.distill.attr_layer == distill::AttrLayer::uniform);
  CHECK(back.distill.target == attribution::Target::logit);
  CHECK(back.student.num_layers == 3);
  CHECK(back.metric == metrics::Metric::f1);
}

TEST_CASE("field-level errors") {
  auto expect = [](json j, const std::string& fragment) {
    try {
      config::parse(j);
      FAIL("accepted: " << j.dump());
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find(fragment) != std::string::npos);
    }
  };
  auto j = minimal();
  j["distill"] = {{"bta", 1.0}};
  expect(j, "distill.bta");
  j = minimal();
  j["teacher"] = {{"hidden_dim", -4}};
  expect(j, "teacher.hidden_dim");
  j = minimal();
  j["metric"] = "spearman";
  expect(j, "metric");
  j = minimal();
  j["student"] = {{"num_layers", 1}};
  j["distill"] = {{"attr_layer", "first"}};
  expect(j, "distill.attr_layer");
  j = minimal();
  j["student"] = {{"hidden_dim", 32}};
  j["distill"] = {{"student_init", "teacher"}};
  expect(j, "student_init");
  j = minimal();
  j["task"]["train"] = "a.tsv";
  j["task"].erase("synthetic");
  expect(j, "task.dev");
  expect(json::parse("{}"), "task");
}

TEST_CASE("vanilla KD with a one-layer student needs no attribution layer") {
  auto j = minimal();
  j["student"] = {{"num_layers", 1}};
  j["distill"] = {{"attr_layer", "first"}, {"method", "vanilla_kd"}};
  CHECK_NOTHROW(config::parse(j));
}

TEST_CASE("relative output directories follow the root variable") {
  setenv(config::kOutputRootEnv, "/tmp/root", 1);
  CHECK(config::resolve_output_dir("runs/a") == "/tmp/root/runs/a");
  CHECK(config::resolve_output_dir("/abs/b") == "/abs/b");
  unsetenv(config::kOutputRootEnv);
  CHECK(config::resolve_output_dir("runs/a") == "runs/a");
}

TEST_CASE("loading from disk") {
  CHECK_THROWS_AS(config::load("/no/such/config.json"), ConfigError);
  const auto c = config::parse(minimal());
  const auto task = config::load_task(c);
  CHECK(task.train.size() == 10);
  CHECK(task.dev.size() == 5);
}
