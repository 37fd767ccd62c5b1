#include "adkd/distill.hpp"

#include <cmath>

#include "adkd/errors.hpp"
#include "adkd/kernels.hpp"

namespace adkd::distill {
namespace {

using ad::Var;

std::size_t class_index(double label, std::size_t classes) {
  if (!(label >= 0.0) || label != std::floor(label) || label >= static_cast<double>(classes)) {
    throw ConfigError("label " + std::to_string(label) + " outside [0, " +
                      std::to_string(classes) + ")");
  }
  return static_cast<std::size_t>(label);
}

Tensor scaled(const Tensor& t, double s) {
  Tensor out = t;
  for (double& v : out.values()) v *= s;
  return out;
}

}  // namespace

std::string_view attr_layer_name(AttrLayer layer) {
  switch (layer) {
    case AttrLayer::input: return "input";
    case AttrLayer::first: return "first";
    case AttrLayer::penultimate: return "penultimate";
    case AttrLayer::uniform: return "uniform";
  }
  return "input";
}

AttrLayer parse_attr_layer(std::string_view name) {
  for (AttrLayer l : {AttrLayer::input, AttrLayer::first, AttrLayer::penultimate,
                      AttrLayer::uniform}) {
    if (attr_layer_name(l) == name) return l;
  }
  throw ConfigError("unknown attribution layer '" + std::string(name) +
                    "' (input|first|penultimate|uniform)");
}

std::string_view student_init_name(StudentInit init) {
  return init == StudentInit::teacher ? "teacher" : "random";
}

StudentInit parse_student_init(std::string_view name) {
  if (name == "random") return StudentInit::random;
  if (name == "teacher") return StudentInit::teacher;
  throw ConfigError("unknown student_init '" + std::string(name) + "' (random|teacher)");
}

void DistillConfig::validate(std::size_t teacher_dim) const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("distill.alpha must be in [0, 1]");
  if (!(beta >= 0.0) || !std::isfinite(beta)) throw ConfigError("distill.beta must be >= 0");
  if (!(tau > 0.0) || !std::isfinite(tau)) throw ConfigError("distill.tau must be > 0");
  if (top_k > teacher_dim) {
    throw ConfigError("distill.topk must be in [1, " + std::to_string(teacher_dim) + "]");
  }
  if (ig_steps == 0) throw ConfigError("distill.ig_steps must be >= 1");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw ConfigError("distill.learning_rate must be > 0");
  }
  if (batch_size == 0) throw ConfigError("distill.batch_size must be >= 1");
  if (!(warmup_fraction >= 0.0 && warmup_fraction <= 1.0)) {
    throw ConfigError("distill.warmup_fraction must be in [0, 1]");
  }
  if (!(clip_norm > 0.0)) throw ConfigError("distill.clip_norm must be > 0");
}

DistillConfig mrpc_defaults() {
  DistillConfig c;
  c.learning_rate = 3e-5;
  c.batch_size = 16;
  c.alpha = 0.9;
  c.beta = 10.0;
  c.tau = 4.0;
  c.ig_steps = 1;
  return c;
}

std::vector<LayerPair> attribution_layers(AttrLayer layer, std::size_t teacher_layers,
                                          std::size_t student_layers) {
  auto need_depth = [&](const char* what) {
    if (teacher_layers < 2 || student_layers < 2) {
      throw ConfigError(std::string("attribution layer '") + what +
                        "' needs at least 2 encoder layers in teacher and student");
    }
  };
  switch (layer) {
    case AttrLayer::input:
      return {{0, 0}};
    case AttrLayer::first:
      need_depth("first");
      return {{1, 1}};
    case AttrLayer::penultimate:
      need_depth("penultimate");
      return {{teacher_layers - 1, student_layers - 1}};
    case AttrLayer::uniform: {
      need_depth("uniform");
      std::vector<LayerPair> pairs;
      for (std::size_t s = 1; s < student_layers; ++s) {
        pairs.push_back({s * teacher_layers / student_layers, s});
      }
      return pairs;
    }
  }
  return {{0, 0}};
}

double ce_loss(const Tensor& logits, double label) {
  if (logits.size() == 1) {
    const double d = logits[0] - label;
    return d * d;
  }
  const std::size_t y = class_index(label, logits.size());
  return -kernels::log_softmax_rows(logits)[y];
}

Var ce_loss(Var logits, double label) {
  ad::Graph& g = logits.graph();
  const std::size_t classes = logits.shape().cols;
  if (classes == 1) {
    Var d = logits - g.constant(Tensor::scalar(label));
    return d * d;
  }
  Tensor onehot(1, classes);
  onehot[class_index(label, classes)] = 1.0;
  return -ad::sum(ad::log_softmax_rows(logits) * g.constant(std::move(onehot)));
}

double logit_kd_loss(const Tensor& teacher_logits, const Tensor& student_logits, double tau) {
  if (teacher_logits.shape() != student_logits.shape()) {
    throw ShapeError("logit_kd_loss: teacher " + teacher_logits.shape().str() + " vs student " +
                     student_logits.shape().str());
  }
  if (teacher_logits.size() == 1) {
    const double d = teacher_logits[0] - student_logits[0];
    return d * d;
  }
  const Tensor log_p = kernels::log_softmax_rows(scaled(teacher_logits, 1.0 / tau));
  const Tensor log_q = kernels::log_softmax_rows(scaled(student_logits, 1.0 / tau));
  double kl = 0.0;
  for (std::size_t c = 0; c < log_p.size(); ++c) kl += std::exp(log_p[c]) * (log_p[c] - log_q[c]);
  return std::max(kl, 0.0);
}

Var logit_kd_loss(const Tensor& teacher_logits, Var student_logits, double tau) {
  ad::Graph& g = student_logits.graph();
  if (teacher_logits.shape() != student_logits.shape()) {
    throw ShapeError("logit_kd_loss: teacher " + teacher_logits.shape().str() + " vs student " +
                     student_logits.shape().str());
  }
  if (teacher_logits.size() == 1) {
    Var d = g.constant(teacher_logits) - student_logits;
    return d * d;
  }
  Tensor log_p = kernels::log_softmax_rows(scaled(teacher_logits, 1.0 / tau));
  Tensor p = log_p;
  for (double& v : p.values()) v = std::exp(v);
  Var log_q = ad::log_softmax_rows(ad::scale(student_logits, 1.0 / tau));
  return ad::sum(g.constant(std::move(p)) * (g.constant(std::move(log_p)) - log_q));
}

double attribution_loss(const attribution::MultiViewMap& teacher,
                        const attribution::MultiViewMap& student) {
  if (teacher.values.size() != student.values.size()) {
    throw ShapeError("attribution_loss: length " + std::to_string(teacher.values.size()) +
                     " vs " + std::to_string(student.values.size()));
  }
  if (!teacher.normalized || !student.normalized) {
    throw ConfigError("attribution_loss expects normalised maps");
  }
  double sq = 0.0;
  for (std::size_t i = 0; i < teacher.values.size(); ++i) {
    const double d = teacher.values[i] - student.values[i];
    sq += d * d;
  }
  return std::sqrt(sq);
}

Var attribution_loss(const attribution::MultiViewMap& teacher, Var student_column) {
  if (teacher.values.size() != student_column.value().size()) {
    throw ShapeError("attribution_loss: length " + std::to_string(teacher.values.size()) +
                     " vs " + std::to_string(student_column.value().size()));
  }
  if (!teacher.normalized) throw ConfigError("attribution_loss expects normalised maps");
  Var t = student_column.graph().constant(Tensor::column(teacher.values));
  return ad::l2_norm(t - student_column);
}

LossBreakdown total_loss(double ce, double logit_kd, double attr, double alpha, double beta,
                         double tau) {
  LossBreakdown b;
  b.ce = ce;
  b.logit_kd = logit_kd;
  b.attr = attr;
  b.alpha = alpha;
  b.beta = beta;
  b.tau = tau;
  b.total = (1.0 - alpha) * ce + alpha * logit_kd + beta * attr;
  return b;
}

Var total_loss(Var ce, Var logit_kd, Var attr, double alpha, double beta) {
  Var base = ad::scale(ce, 1.0 - alpha) + ad::scale(logit_kd, alpha);
  if (!attr.valid()) return base;
  return base + ad::scale(attr, beta);
}

}  // namespace adkd::distill
