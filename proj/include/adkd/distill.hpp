#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "adkd/attribution.hpp"
#include "adkd/autodiff.hpp"
#include "adkd/tensor.hpp"

// The three loss terms of attribution-driven distillation and their weighted
// combination total = (1 − α)·ce + α·logit_kd + β·attr.
namespace adkd::distill {

enum class AttrLayer { input, first, penultimate, uniform };

std::string_view attr_layer_name(AttrLayer layer);
AttrLayer parse_attr_layer(std::string_view name);  // throws ConfigError

enum class Method { ad_kd, vanilla_kd };

// random: fresh initialisation from the student seed. teacher: copy of the
// teacher's embeddings, lower layers and head.
enum class StudentInit { random, teacher };

std::string_view student_init_name(StudentInit init);
StudentInit parse_student_init(std::string_view name);  // throws ConfigError

struct DistillConfig {
  Method method = Method::ad_kd;
  double alpha = 0.9;
  double beta = 10.0;
  double tau = 4.0;
  std::size_t top_k = 0;  // 0: all teacher dimensions
  std::size_t ig_steps = 1;
  AttrLayer attr_layer = AttrLayer::input;
  attribution::Target target = attribution::Target::probability;
  double learning_rate = 3e-5;
  std::size_t batch_size = 16;
  std::size_t epochs = 3;
  std::uint64_t seed = 1;
  double warmup_fraction = 0.1;
  double clip_norm = 1.0;
  // Reuse teacher maps across epochs (keyed by example index).
  bool cache_teacher_maps = false;
  StudentInit student_init = StudentInit::random;

  // Throws ConfigError naming the offending field. teacher_dim bounds top_k.
  void validate(std::size_t teacher_dim) const;
  std::size_t effective_top_k(std::size_t teacher_dim) const {
    return top_k == 0 ? teacher_dim : top_k;
  }
};

// Settings for MRPC-sized paraphrase tasks: lr 3e-5, batch 16, alpha 0.9, beta 10, tau 4, m 1.
DistillConfig mrpc_defaults();

struct LayerPair {
  std::size_t teacher = 0;
  std::size_t student = 0;
};

// Hidden-state positions where attribution is taken. Index ℓ is the input of
// encoder layer ℓ (0 = embeddings). `uniform` maps every intermediate student
// position ℓ to teacher position ℓ·Lt/Ls; its losses are summed with equal
// weight.
std::vector<LayerPair> attribution_layers(AttrLayer layer, std::size_t teacher_layers,
                                          std::size_t student_layers);

struct LossBreakdown {
  double ce = 0.0;
  double logit_kd = 0.0;
  double attr = 0.0;
  double total = 0.0;
  double alpha = 0.0;
  double beta = 0.0;
  double tau = 0.0;
};

// Cross-entropy −log softmax(z)[y]; squared error when there is one output.
double ce_loss(const Tensor& logits, double label);
ad::Var ce_loss(ad::Var logits, double label);

// KL(softmax(z_t/τ) ‖ softmax(z_s/τ)), teacher as reference, no τ² factor.
// With one output (regression) the squared difference of the outputs.
double logit_kd_loss(const Tensor& teacher_logits, const Tensor& student_logits, double tau);
ad::Var logit_kd_loss(const Tensor& teacher_logits, ad::Var student_logits, double tau);

// ‖Ã_t − Ã_s‖₂ of normalised multi-view maps.
double attribution_loss(const attribution::MultiViewMap& teacher,
                        const attribution::MultiViewMap& student);
ad::Var attribution_loss(const attribution::MultiViewMap& teacher, ad::Var student_column);

LossBreakdown total_loss(double ce, double logit_kd, double attr, double alpha, double beta,
                         double tau);
ad::Var total_loss(ad::Var ce, ad::Var logit_kd, ad::Var attr, double alpha, double beta);

}  // namespace adkd::distill
