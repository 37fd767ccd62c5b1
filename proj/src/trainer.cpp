#include "adkd/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <unordered_map>

#include "adkd/attribution.hpp"
#include "adkd/optim.hpp"

namespace adkd::trainer {
namespace {

using ad::Var;
using Clock = std::chrono::steady_clock;

std::vector<double> labels_of(const std::vector<data::Example>& examples) {
  std::vector<double> out;
  out.reserve(examples.size());
  for (const auto& e : examples) out.push_back(e.label);
  return out;
}

std::vector<data::TokenSequence> trimmed_all(std::span<const data::TokenSequence> tokens) {
  std::vector<data::TokenSequence> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) out.push_back(t.trimmed());
  return out;
}

std::vector<Tensor> zero_grads(const model::Model& m) {
  std::vector<Tensor> g;
  for (const auto& p : m.parameters()) g.emplace_back(p.value.shape());
  return g;
}

void accumulate(std::vector<Tensor>& acc, const std::vector<Var>& grads) {
  for (std::size_t i = 0; i < acc.size(); ++i) {
    auto dst = acc[i].values();
    auto src = grads[i].value().values();
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
  }
}

bool finite(const std::vector<Tensor>& grads) {
  return std::all_of(grads.begin(), grads.end(), [](const Tensor& t) { return t.all_finite(); });
}

std::size_t argmax(const Tensor& logits) {
  std::size_t best = 0;
  for (std::size_t c = 1; c < logits.size(); ++c) {
    if (logits[c] > logits[best]) best = c;
  }
  return best;
}

void require_data(const Dataset& data) {
  if (data.train_tokens.empty()) throw DataError("training split is empty");
  if (data.dev_tokens.empty()) throw DataError("dev split is empty");
  if (data.train_tokens.size() != data.train.size() || data.dev_tokens.size() != data.dev.size()) {
    throw DataError("dataset is not encoded");
  }
}

metrics::Metric resolve_metric(const RunOptions& run, const data::TaskSchema& schema) {
  return run.metric.value_or(default_metric(schema));
}

double elapsed(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

// Shared epoch/step/selection loop. `example_step` returns the per-example
// loss breakdown and adds that example's parameter gradients into `grads`.
template <typename ExampleStep>
TrainResult run_training(model::Model student, const Dataset& data, TrainReport report,
                         const OptimConfig& optim, const RunOptions& run,
                         ExampleStep&& example_step) {
  const auto start = Clock::now();
  const auto train = trimmed_all(data.train_tokens);
  const auto dev_labels = data.dev_labels();
  const std::size_t batches = (train.size() + optim.batch_size - 1) / optim.batch_size;
  optim::LinearSchedule schedule(optim.learning_rate, batches * optim.epochs,
                                 optim.warmup_fraction);
  optim::Adam adam(student.parameters());
  model::Model best = student;

  auto diverged = [&](const std::string& why) {
    report.wall_clock_seconds = elapsed(start);
    return DivergenceError("training diverged at step " + std::to_string(report.steps) + ": " +
                               why,
                           report);
  };

  for (std::size_t epoch = 0; epoch < optim.epochs; ++epoch) {
    const auto order = data::epoch_order(train.size(), optim.seed, epoch, true);
    EpochRecord record;
    record.epoch = epoch + 1;
    for (std::size_t b = 0; b < batches; ++b) {
      const std::size_t begin = b * optim.batch_size;
      const std::size_t end = std::min(begin + optim.batch_size, train.size());
      auto grads = zero_grads(student);
      distill::LossBreakdown sum;
      for (std::size_t i = begin; i < end; ++i) {
        const std::size_t idx = order[i];
        distill::LossBreakdown l;
        try {
          l = example_step(student, idx, train[idx], data.train[idx].label, grads);
        } catch (const NumericError& e) {
          throw diverged(e.what());
        }
        sum.ce += l.ce;
        sum.logit_kd += l.logit_kd;
        sum.attr += l.attr;
        sum.total += l.total;
        sum.alpha = l.alpha;
        sum.beta = l.beta;
        sum.tau = l.tau;
      }
      const double inv = 1.0 / static_cast<double>(end - begin);
      sum.ce *= inv;
      sum.logit_kd *= inv;
      sum.attr *= inv;
      sum.total *= inv;
      for (auto& g : grads) {
        for (double& v : g.values()) v *= inv;
      }
      if (!std::isfinite(sum.total) || !finite(grads)) throw diverged("non-finite loss or gradient");
      optim::clip_global_norm(grads, optim.clip_norm);
      adam.step(student.parameters(), grads, schedule.at(report.steps));
      ++report.steps;
      report.step_losses.push_back(sum.total);
      if (run.on_step) run.on_step({report.steps, sum});
      record.ce += sum.ce;
      record.logit_kd += sum.logit_kd;
      record.attr += sum.attr;
      record.loss += sum.total;
    }
    const double per_batch = 1.0 / static_cast<double>(batches);
    record.ce *= per_batch;
    record.logit_kd *= per_batch;
    record.attr *= per_batch;
    record.loss *= per_batch;
    record.dev_metric = evaluate(student, data.dev_tokens, dev_labels, report.metric).value;
    report.epochs.push_back(record);
    if (!report.best_dev_metric || record.dev_metric > *report.best_dev_metric) {
      report.best_dev_metric = record.dev_metric;
      report.best_epoch = record.epoch;
      best = student;
      if (run.output_dir) {
        const auto path = *run.output_dir / "model.ckpt";
        model::save_checkpoint(path, best, &data.vocab);
        report.best_checkpoint = path.string();
      }
    }
  }
  report.wall_clock_seconds = elapsed(start);
  return {std::move(best), std::move(report)};
}

attribution::IgOptions ig_options(const AttributionSettings& s, std::size_t layer) {
  return {s.ig_steps, s.target, layer};
}

std::vector<std::size_t> non_special_positions(const data::TokenSequence& seq) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < seq.size(); ++i) {
    if (seq.mask[i] != 0 && data::is_content(seq.ids[i])) out.push_back(i);
  }
  return out;
}

// Scores of the positions with mask 1, restricted to `positions`.
std::vector<double> pick(const attribution::AttributionMap& map, const data::TokenSequence& seq,
                         std::span<const std::size_t> positions) {
  std::vector<std::size_t> slot(seq.size(), 0);
  std::size_t k = 0;
  for (std::size_t i = 0; i < seq.size(); ++i) {
    if (seq.mask[i] != 0) slot[i] = k++;
  }
  std::vector<double> out;
  out.reserve(positions.size());
  for (std::size_t p : positions) out.push_back(map.scores[slot[p]]);
  return out;
}

}  // namespace

std::vector<double> Dataset::train_labels() const { return labels_of(train); }
std::vector<double> Dataset::dev_labels() const { return labels_of(dev); }

Dataset encode(const data::TaskSchema& schema, std::vector<data::Example> train,
               std::vector<data::Example> dev, std::size_t max_len,
               std::optional<data::Vocab> vocab) {
  Dataset d;
  d.schema = schema;
  d.vocab = vocab ? std::move(*vocab) : data::Vocab::build(train);
  d.train = std::move(train);
  d.dev = std::move(dev);
  for (const auto& e : d.train) d.train_tokens.push_back(data::tokenize(d.vocab, e, max_len));
  for (const auto& e : d.dev) d.dev_tokens.push_back(data::tokenize(d.vocab, e, max_len));
  return d;
}

void OptimConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw ConfigError("learning_rate must be > 0");
  }
  if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
  if (!(warmup_fraction >= 0.0 && warmup_fraction <= 1.0)) {
    throw ConfigError("warmup_fraction must be in [0, 1]");
  }
  if (!(clip_norm > 0.0)) throw ConfigError("clip_norm must be > 0");
}

nlohmann::json TrainReport::to_json(bool include_wall_clock) const {
  nlohmann::json epochs_json = nlohmann::json::array();
  for (const auto& e : epochs) {
    epochs_json.push_back({{"epoch", e.epoch},
                           {"loss", e.loss},
                           {"ce", e.ce},
                           {"logit_kd", e.logit_kd},
                           {"attr", e.attr},
                           {"dev_metric", e.dev_metric}});
  }
  nlohmann::json j = {{"kind", kind},
                      {"seed", seed},
                      {"metric", metrics::metric_name(metric)},
                      {"epochs", epochs_json},
                      {"step_losses", step_losses},
                      {"steps", steps},
                      {"vanilla_kd_equivalent", vanilla_kd_equivalent},
                      {"degenerate_views", degenerate_views},
                      {"best_checkpoint", best_checkpoint}};
  j["best_dev_metric"] = best_dev_metric ? nlohmann::json(*best_dev_metric) : nlohmann::json();
  j["best_epoch"] = best_epoch ? nlohmann::json(*best_epoch) : nlohmann::json();
  if (include_wall_clock) j["wall_clock_seconds"] = wall_clock_seconds;
  return j;
}

void write_report(const std::filesystem::path& path, const TrainReport& report) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << report.to_json().dump(2) << '\n';
}

metrics::Metric default_metric(const data::TaskSchema& schema) {
  return schema.regression() ? metrics::Metric::spearman : metrics::Metric::accuracy;
}

TrainResult train_teacher(const Dataset& data, const model::ModelConfig& config,
                          const OptimConfig& optim, const RunOptions& run) {
  config.validate();
  optim.validate();
  require_data(data);
  if (config.vocab_size != data.vocab.size()) {
    throw ConfigError("model vocab_size " + std::to_string(config.vocab_size) +
                      " differs from the dataset vocabulary (" +
                      std::to_string(data.vocab.size()) + ")");
  }
  TrainReport report;
  report.kind = "teacher";
  report.seed = optim.seed;
  report.metric = resolve_metric(run, data.schema);
  return run_training(model::Model::init(config), data, std::move(report), optim, run,
                      [](const model::Model& m, std::size_t, const data::TokenSequence& seq,
                         double label, std::vector<Tensor>& grads) {
                        ad::Graph g;
                        const auto bm = model::bind(m, g, true);
                        Var ce = distill::ce_loss(model::forward(bm, seq), label);
                        accumulate(grads, ad::gradient(ce, bm.params));
                        return distill::total_loss(ce.value().item(), 0.0, 0.0, 0.0, 0.0, 1.0);
                      });
}

TrainResult distill(const model::Model& teacher, const model::ModelConfig& student_config,
                    const Dataset& data, const distill::DistillConfig& config,
                    const RunOptions& run) {
  student_config.validate();
  const auto& tc = teacher.config();
  config.validate(tc.hidden_dim);
  require_data(data);
  if (student_config.vocab_size != tc.vocab_size || tc.vocab_size != data.vocab.size()) {
    throw ConfigError("teacher, student and dataset vocabularies differ in size");
  }
  if (student_config.num_labels != tc.num_labels) {
    throw ConfigError("teacher and student label counts differ");
  }
  const bool ad_kd = config.method == distill::Method::ad_kd;
  const auto pairs =
      ad_kd ? distill::attribution_layers(config.attr_layer, tc.num_layers, student_config.num_layers)
            : std::vector<distill::LayerPair>{};
  const std::size_t top_k = config.effective_top_k(tc.hidden_dim);

  OptimConfig optim;
  optim.learning_rate = config.learning_rate;
  optim.batch_size = config.batch_size;
  optim.epochs = config.epochs;
  optim.seed = config.seed;
  optim.warmup_fraction = config.warmup_fraction;
  optim.clip_norm = config.clip_norm;

  TrainReport report;
  report.kind = ad_kd ? "ad_kd" : "vanilla_kd";
  report.seed = config.seed;
  report.metric = resolve_metric(run, data.schema);
  report.vanilla_kd_equivalent = !ad_kd || config.beta == 0.0;

  struct TeacherView {
    Tensor logits;
    std::vector<attribution::MultiViewMap> maps;  // one per layer pair
  };
  std::unordered_map<std::size_t, TeacherView> cache;
  std::size_t degenerate = 0;

  auto teacher_view = [&](std::size_t idx, const data::TokenSequence& seq) {
    if (config.cache_teacher_maps) {
      if (auto it = cache.find(idx); it != cache.end()) return it->second;
    }
    TeacherView v;
    v.logits = model::forward(teacher, seq);
    for (const auto& p : pairs) {
      v.maps.push_back(attribution::teacher_multi_view(
          teacher, seq, top_k, {config.ig_steps, config.target, p.teacher}));
      degenerate += v.maps.back().degenerate_views;
    }
    if (config.cache_teacher_maps) cache.emplace(idx, v);
    return v;
  };

  model::Model student = config.student_init == distill::StudentInit::teacher
                             ? model::init_from_teacher(teacher, student_config)
                             : model::Model::init(student_config);
  auto result = run_training(
      std::move(student), data, std::move(report), optim, run,
      [&](const model::Model& m, std::size_t idx, const data::TokenSequence& seq, double label,
          std::vector<Tensor>& grads) {
        const TeacherView tv = teacher_view(idx, seq);
        ad::Graph g;
        const auto bm = model::bind(m, g, true);
        Var logits = model::forward(bm, seq);
        Var ce = distill::ce_loss(logits, label);
        Var kd = distill::logit_kd_loss(tv.logits, logits, config.tau);
        Var attr;
        for (std::size_t i = 0; i < pairs.size(); ++i) {
          Var s = attribution::student_multi_view(
              bm, seq, {config.ig_steps, config.target, pairs[i].student}, &degenerate);
          Var l = distill::attribution_loss(tv.maps[i], s);
          attr = attr.valid() ? attr + l : l;
        }
        Var total = distill::total_loss(ce, kd, attr, config.alpha, config.beta);
        accumulate(grads, ad::gradient(total, bm.params));
        return distill::total_loss(ce.value().item(), kd.value().item(),
                                   attr.valid() ? attr.value().item() : 0.0, config.alpha,
                                   config.beta, config.tau);
      });
  result.report.degenerate_views = degenerate;
  return result;
}

metrics::MetricResult evaluate(const model::Model& model,
                               std::span<const data::TokenSequence> tokens,
                               std::span<const double> labels, metrics::Metric metric) {
  if (tokens.size() != labels.size()) throw ShapeError("evaluate: tokens/labels length differ");
  const bool regression = model.config().num_labels == 1;
  if (regression != (metric == metrics::Metric::spearman)) {
    throw ConfigError(std::string("metric '") + std::string(metrics::metric_name(metric)) +
                      "' does not fit a " + (regression ? "regression" : "classification") +
                      " model");
  }
  if (regression) {
    std::vector<double> preds;
    preds.reserve(tokens.size());
    for (const auto& t : tokens) preds.push_back(model::forward(model, t.trimmed())[0]);
    return {metric, metrics::spearman(preds, labels)};
  }
  std::vector<int> preds, gold;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    preds.push_back(static_cast<int>(argmax(model::forward(model, tokens[i].trimmed()))));
    gold.push_back(static_cast<int>(labels[i]));
  }
  switch (metric) {
    case metrics::Metric::f1: return {metric, metrics::f1(preds, gold)};
    case metrics::Metric::matthews: return {metric, metrics::matthews(preds, gold)};
    default: return {metric, metrics::accuracy(preds, gold)};
  }
}

AttributionSettings AttributionSettings::from(const distill::DistillConfig& config) {
  return {config.top_k, config.ig_steps, config.attr_layer, config.target};
}

double attribution_gap(const model::Model& teacher, const model::Model& student,
                       std::span<const data::TokenSequence> tokens,
                       const AttributionSettings& settings) {
  if (tokens.empty()) throw DataError("attribution gap on an empty split");
  const auto pairs = distill::attribution_layers(settings.layer, teacher.config().num_layers,
                                                 student.config().num_layers);
  const std::size_t top_k = settings.top_k == 0 ? teacher.config().hidden_dim : settings.top_k;
  double total = 0.0;
  for (const auto& t : tokens) {
    const auto seq = t.trimmed();
    for (const auto& p : pairs) {
      const auto tm =
          attribution::teacher_multi_view(teacher, seq, top_k, ig_options(settings, p.teacher));
      const auto sm = attribution::student_multi_view(student, seq, ig_options(settings, p.student));
      total += distill::attribution_loss(tm, sm);
    }
  }
  return total / static_cast<double>(tokens.size());
}

RationaleReport rationale_report(const model::Model& teacher, const model::Model& student,
                                 const data::Vocab& vocab,
                                 std::span<const data::TokenSequence> tokens,
                                 std::span<const double> labels,
                                 const AttributionSettings& settings) {
  if (tokens.size() != labels.size()) throw ShapeError("rationale: tokens/labels length differ");
  const std::size_t top_k = settings.top_k == 0 ? teacher.config().hidden_dim : settings.top_k;
  const attribution::IgOptions opts = ig_options(settings, 0);
  RationaleReport r;
  double rho_sum = 0.0;
  std::size_t rho_count = 0, keyword_examples = 0, hits = 0;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const auto seq = tokens[i].trimmed();
    const auto positions = non_special_positions(seq);
    if (positions.empty()) continue;
    const std::size_t view = teacher.config().num_labels == 1 ? 0 : static_cast<std::size_t>(labels[i]);
    const auto t_dims = attribution::ig_all_labels(teacher, seq, opts);
    const auto s_dims = attribution::ig_all_labels(student, seq, opts);
    const auto t_map =
        attribution::token_scores(t_dims[view], top_k, seq.mask, attribution::Source::teacher);
    const auto s_map = attribution::token_scores(s_dims[view], student.config().hidden_dim,
                                                 seq.mask, attribution::Source::student);
    const auto t_scores = pick(t_map, seq, positions);
    const auto s_scores = pick(s_map, seq, positions);
    ++r.examples;
    if (positions.size() >= 2) {
      rho_sum += metrics::spearman(t_scores, s_scores);
      ++rho_count;
    }
    bool has_keyword = false;
    for (std::size_t p : positions) has_keyword |= data::is_keyword(vocab.token(seq.ids[p]));
    if (!has_keyword) continue;
    ++keyword_examples;
    std::vector<std::size_t> order(positions.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return s_scores[a] > s_scores[b]; });
    for (std::size_t k = 0; k < std::min<std::size_t>(2, order.size()); ++k) {
      if (data::is_keyword(vocab.token(seq.ids[positions[order[k]]]))) {
        ++hits;
        break;
      }
    }
  }
  r.mean_spearman = rho_count ? rho_sum / static_cast<double>(rho_count) : 0.0;
  r.keyword_top2_rate =
      keyword_examples ? static_cast<double>(hits) / static_cast<double>(keyword_examples) : 0.0;
  return r;
}

}  // namespace adkd::trainer
