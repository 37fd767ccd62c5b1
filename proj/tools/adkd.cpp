#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "adkd/config.hpp"
#include "adkd/errors.hpp"
#include "adkd/heatmap.hpp"
#include "adkd/model.hpp"
#include "adkd/trainer.hpp"

namespace fs = std::filesystem;
using namespace adkd;

namespace {

struct DistillOverrides {
  std::optional<double> alpha, beta, tau;
  std::optional<std::size_t> topk, ig_steps;
  std::optional<std::string> attr_layer, method;
};

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
}

void write_json(const fs::path& path, const nlohmann::json& j) { write_file(path, j.dump(2) + "\n"); }

void apply(const DistillOverrides& o, config::RunConfig& c) {
  if (o.alpha) c.distill.alpha = *o.alpha;
  if (o.beta) c.distill.beta = *o.beta;
  if (o.tau) c.distill.tau = *o.tau;
  if (o.topk) c.distill.top_k = *o.topk;
  if (o.ig_steps) c.distill.ig_steps = *o.ig_steps;
  if (o.attr_layer) c.distill.attr_layer = distill::parse_attr_layer(*o.attr_layer);
  if (o.method) {
    if (*o.method == "ad_kd") c.distill.method = distill::Method::ad_kd;
    else if (*o.method == "vanilla_kd") c.distill.method = distill::Method::vanilla_kd;
    else throw ConfigError("--method: unknown method '" + *o.method + "'");
  }
  c.validate();
}

trainer::Dataset dataset_for(const config::RunConfig& c, std::optional<data::Vocab> vocab) {
  auto task = config::load_task(c);
  return trainer::encode(c.task.schema, std::move(task.train), std::move(task.dev),
                         c.task.max_len, std::move(vocab));
}

model::Checkpoint load_checkpoint_or_usage(const fs::path& path) {
  if (!fs::exists(path)) throw ConfigError("checkpoint not found: " + path.string());
  return model::load_checkpoint(path);
}

data::Vocab require_vocab(const model::Checkpoint& ck, const fs::path& path) {
  if (!ck.vocab) throw ConfigError(path.string() + ": checkpoint carries no vocabulary");
  return *ck.vocab;
}

int cmd_train_teacher(const std::string& config_path) {
  const auto c = config::load(config_path);
  auto data = dataset_for(c, std::nullopt);
  const auto out = config::resolve_output_dir(c.output_dir) / "teacher";
  const auto mc =
      c.teacher.resolve(data.vocab.size(), c.task.max_len, c.task.schema.num_labels, c.seed);
  mc.validate();
  fs::create_directories(out);
  write_json(out / "config.json", c.to_json());
  trainer::RunOptions run;
  run.output_dir = out;
  run.metric = c.metric;
  try {
    auto result = trainer::train_teacher(data, mc, c.teacher_optim, run);
    trainer::write_report(out / "report.json", result.report);
  } catch (const trainer::DivergenceError& e) {
    trainer::write_report(out / "report.json", e.report());
    throw;
  }
  std::cout << "teacher written to " << out.string() << "\n";
  return 0;
}

int run_distill(config::RunConfig c, const fs::path& out) {
  const fs::path teacher_path =
      c.teacher_checkpoint.value_or(config::resolve_output_dir(c.output_dir) / "teacher" / "model.ckpt");
  const auto teacher = load_checkpoint_or_usage(teacher_path);
  auto data = dataset_for(c, require_vocab(teacher, teacher_path));
  const auto& tc = teacher.model.config();
  if (tc.num_labels != c.task.schema.num_labels) {
    throw ConfigError("teacher checkpoint has " + std::to_string(tc.num_labels) +
                      " labels, task has " + std::to_string(c.task.schema.num_labels));
  }
  if (tc.hidden_dim != c.teacher.hidden_dim || tc.num_layers != c.teacher.num_layers) {
    throw ConfigError("teacher checkpoint geometry differs from the teacher block");
  }
  const auto sc =
      c.student.resolve(tc.vocab_size, c.task.max_len, c.task.schema.num_labels, c.seed);
  sc.validate();
  c.teacher_checkpoint = teacher_path;

  fs::create_directories(out);
  write_json(out / "config.json", c.to_json());
  std::ofstream losses(out / "losses.jsonl");
  if (!losses) throw IoError("cannot write " + (out / "losses.jsonl").string());
  trainer::RunOptions run;
  run.output_dir = out;
  run.metric = c.metric;
  run.on_step = [&](const trainer::StepLog& s) {
    losses << nlohmann::json{{"step", s.step},
                             {"ce", s.loss.ce},
                             {"logit_kd", s.loss.logit_kd},
                             {"attr", s.loss.attr},
                             {"total", s.loss.total}}
                  .dump()
           << "\n";
  };
  try {
    auto result = trainer::distill(teacher.model, sc, data, c.distill, run);
    trainer::write_report(out / "report.json", result.report);
  } catch (const trainer::DivergenceError& e) {
    trainer::write_report(out / "report.json", e.report());
    throw;
  }
  std::cout << "student written to " << out.string() << "\n";
  return 0;
}

int cmd_distill(const std::string& config_path, const DistillOverrides& o,
                const std::string& run_name) {
  auto c = config::load(config_path);
  apply(o, c);
  return run_distill(c, config::resolve_output_dir(c.output_dir) / run_name);
}

int cmd_sweep(const std::string& config_path, const DistillOverrides& base,
              const std::string& param, const std::vector<std::string>& values) {
  auto c = config::load(config_path);
  apply(base, c);
  std::vector<std::pair<std::string, config::RunConfig>> runs;
  for (const auto& v : values) {
    DistillOverrides o;
    try {
      if (param == "beta") o.beta = std::stod(v);
      else if (param == "alpha") o.alpha = std::stod(v);
      else if (param == "tau") o.tau = std::stod(v);
      else if (param == "topk") o.topk = std::stoul(v);
      else if (param == "ig-steps") o.ig_steps = std::stoul(v);
      else if (param == "attr-layer") o.attr_layer = v;
      else throw ConfigError("--param: unknown sweep parameter '" + param + "'");
    } catch (const std::logic_error&) {
      throw ConfigError("--values: '" + v + "' is not valid for " + param);
    }
    auto rc = c;
    apply(o, rc);
    runs.emplace_back("sweep-" + param + "-" + v, rc);
  }
  for (auto& [name, rc] : runs) {
    run_distill(rc, config::resolve_output_dir(rc.output_dir) / name);
  }
  return 0;
}

int cmd_attribute(const std::string& checkpoint, const std::string& text,
                  const std::optional<std::string>& text_b, std::optional<std::size_t> label,
                  std::size_t ig_steps, const std::string& format,
                  const std::optional<std::string>& output) {
  if (format != "text" && format != "html") throw ConfigError("--format: expected text or html");
  if (ig_steps == 0) throw ConfigError("--ig-steps: must be >= 1");
  const auto ck = load_checkpoint_or_usage(checkpoint);
  const auto vocab = require_vocab(ck, checkpoint);
  const auto map = heatmap::compute(ck.model, vocab, {text, text_b, 0.0}, label, ig_steps);
  const std::string rendered = format == "html" ? heatmap::render_html(map) : heatmap::render_text(map);
  if (output) {
    write_file(*output, rendered);
  } else {
    std::cout << rendered;
  }
  return 0;
}

int cmd_evaluate(const std::string& checkpoint, const std::string& config_path,
                 const std::string& split) {
  if (split != "train" && split != "dev") throw ConfigError("--split: expected train or dev");
  const auto c = config::load(config_path);
  const auto ck = load_checkpoint_or_usage(checkpoint);
  const auto data = dataset_for(c, require_vocab(ck, checkpoint));
  const auto metric = c.metric.value_or(trainer::default_metric(c.task.schema));
  const bool dev = split == "dev";
  const auto labels = dev ? data.dev_labels() : data.train_labels();
  const auto r = trainer::evaluate(ck.model, dev ? data.dev_tokens : data.train_tokens, labels, metric);
  std::cout << nlohmann::json{{"split", split},
                              {"metric", metrics::metric_name(r.metric)},
                              {"value", r.value},
                              {"examples", labels.size()}}
                   .dump(2)
            << "\n";
  return 0;
}

int cmd_gap(const std::string& teacher_path, const std::string& student_path,
            const std::string& config_path, const std::optional<std::string>& output) {
  const auto c = config::load(config_path);
  const auto teacher = load_checkpoint_or_usage(teacher_path);
  const auto student = load_checkpoint_or_usage(student_path);
  const auto vocab = require_vocab(teacher, teacher_path);
  if (student.vocab && !(*student.vocab == vocab)) {
    throw ConfigError("teacher and student vocabularies differ");
  }
  const auto data = dataset_for(c, vocab);
  const auto settings = trainer::AttributionSettings::from(c.distill);
  const nlohmann::json j = {
      {"train", trainer::attribution_gap(teacher.model, student.model, data.train_tokens, settings)},
      {"dev", trainer::attribution_gap(teacher.model, student.model, data.dev_tokens, settings)},
      {"attr_layer", distill::attr_layer_name(settings.layer)},
      {"topk", settings.top_k == 0 ? teacher.model.config().hidden_dim : settings.top_k},
      {"ig_steps", settings.ig_steps}};
  if (output) write_json(*output, j);
  std::cout << j.dump(2) << "\n";
  return 0;
}

void add_distill_flags(CLI::App* cmd, DistillOverrides& o) {
  cmd->add_option("--alpha", o.alpha, "Weight of the logit loss");
  cmd->add_option("--beta", o.beta, "Weight of the attribution loss");
  cmd->add_option("--tau", o.tau, "Softmax temperature");
  cmd->add_option("--topk", o.topk, "Teacher dimensions kept per token (0 = all)");
  cmd->add_option("--ig-steps", o.ig_steps, "Integrated-Gradients steps");
  cmd->add_option("--attr-layer", o.attr_layer, "input|first|penultimate|uniform");
  cmd->add_option("--method", o.method, "ad_kd|vanilla_kd");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Attribution-driven knowledge distillation for small transformer classifiers"};
  app.require_subcommand(1);

  std::string config_path;
  auto* train = app.add_subcommand("train-teacher", "Train the teacher model");
  train->add_option("--config", config_path, "Run configuration (JSON)")->required();

  DistillOverrides overrides;
  std::string run_name = "student";
  auto* dist = app.add_subcommand("distill", "Distill a student from the trained teacher");
  dist->add_option("--config", config_path, "Run configuration (JSON)")->required();
  dist->add_option("--name", run_name, "Run directory name under the output directory");
  add_distill_flags(dist, overrides);

  std::string sweep_param;
  std::vector<std::string> sweep_values;
  auto* sweep = app.add_subcommand("sweep", "One distillation run per value of a parameter");
  sweep->add_option("--config", config_path, "Run configuration (JSON)")->required();
  sweep->add_option("--param", sweep_param, "beta|alpha|tau|topk|ig-steps|attr-layer")->required();
  sweep->add_option("--values", sweep_values, "Comma-separated values")->required()->delimiter(',');
  add_distill_flags(sweep, overrides);

  std::string checkpoint, text, format = "text";
  std::optional<std::string> text_b, output;
  std::optional<std::size_t> label;
  std::size_t ig_steps = 1;
  auto* attr = app.add_subcommand("attribute", "Token attribution heatmap for one input");
  attr->add_option("--checkpoint", checkpoint, "Model checkpoint")->required();
  attr->add_option("--text", text, "Input sentence")->required();
  attr->add_option("--text-b", text_b, "Second sentence of a pair");
  attr->add_option("--label", label, "Label to attribute (default: predicted)");
  attr->add_option("--ig-steps", ig_steps, "Integrated-Gradients steps");
  attr->add_option("--format", format, "text|html");
  attr->add_option("--output", output, "Write to this file instead of stdout");

  std::string split = "dev";
  auto* eval = app.add_subcommand("evaluate", "Evaluate a checkpoint on a split of the task");
  eval->add_option("--checkpoint", checkpoint, "Model checkpoint")->required();
  eval->add_option("--config", config_path, "Run configuration (JSON)")->required();
  eval->add_option("--split", split, "train|dev");

  std::string teacher_ckpt, student_ckpt;
  auto* gap = app.add_subcommand("gap", "Attribution gap between teacher and student");
  gap->add_option("--teacher", teacher_ckpt, "Teacher checkpoint")->required();
  gap->add_option("--student", student_ckpt, "Student checkpoint")->required();
  gap->add_option("--config", config_path, "Run configuration (JSON)")->required();
  gap->add_option("--output", output, "Also write the JSON here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*train) return cmd_train_teacher(config_path);
    if (*dist) return cmd_distill(config_path, overrides, run_name);
    if (*sweep) return cmd_sweep(config_path, overrides, sweep_param, sweep_values);
    if (*attr) return cmd_attribute(checkpoint, text, text_b, label, ig_steps, format, output);
    if (*eval) return cmd_evaluate(checkpoint, config_path, split);
    if (*gap) return cmd_gap(teacher_ckpt, student_ckpt, config_path, output);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
