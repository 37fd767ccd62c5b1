// Acceptance run: one PASS/FAIL line per criterion A1-A9.
// Usage: acceptance [A1,A2,...]   (default: all)

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "../op_cases.hpp"
#include "adkd/attribution.hpp"
#include "adkd/distill.hpp"
#include "adkd/errors.hpp"
#include "adkd/trainer.hpp"

namespace fs = std::filesystem;
using namespace adkd;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(Clock::time_point t) {
  return std::chrono::duration<double>(Clock::now() - t).count();
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

std::string join(const std::vector<double>& v, const char* f = "%.3f") {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? " " : "") + fmt(f, v[i]);
  return out;
}

model::ModelConfig small_model(std::size_t layers, std::size_t d, std::size_t vocab,
                               std::size_t max_len, std::uint64_t seed, double init_std) {
  model::ModelConfig c;
  c.num_layers = layers;
  c.hidden_dim = d;
  c.num_heads = 2;
  c.ffn_dim = 2 * d;
  c.vocab_size = vocab;
  c.max_len = max_len;
  c.seed = seed;
  c.init_std = init_std;
  return c;
}

double probability(const model::Model& m, const Tensor& states, std::span<const unsigned char> mask,
                   std::size_t c) {
  const Tensor z = model::forward_from_embeddings(m, states, mask);
  double mx = z[0];
  for (double v : z.values()) mx = std::max(mx, v);
  double denom = 0.0;
  for (double v : z.values()) denom += std::exp(v - mx);
  return std::exp(z[c] - mx) / denom;
}

double total(const Tensor& t) {
  double s = 0.0;
  for (double v : t.values()) s += v;
  return s;
}

// A1: completeness of the discretised path integral.
Outcome a1() {
  const auto start = Clock::now();
  const auto m = model::Model::init(small_model(2, 16, 30, 6, 11, model::ModelConfig{}.init_std));
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<std::size_t> word(data::kNumSpecial, 29);
  std::vector<double> coarse, fine;
  for (int i = 0; i < 20; ++i) {
    data::TokenSequence s;
    s.ids = {data::kClsId, word(rng), word(rng), word(rng), word(rng), data::kSepId};
    s.mask.assign(6, 1);
    const Tensor e = model::embed(m, s);
    const Tensor b = attribution::baseline_embeddings(m, 6);
    const std::size_t c = i % 2;
    const double delta = probability(m, e, s.mask, c) - probability(m, b, s.mask, c);
    auto err = [&](std::size_t steps) {
      const auto ig = attribution::ig_attribution(
          m, e, b, s.mask, c, {steps, attribution::Target::probability, 0});
      return std::abs(total(ig.scores) - delta) / std::abs(delta);
    };
    coarse.push_back(err(1));
    fine.push_back(err(256));
  }
  const double mc = median(coarse), mf = median(fine), t = seconds_since(start);
  return {mf < 0.01 && mf < mc && t < 60.0,
          fmt("median rel. completeness error m=256 %.2e, m=1 %.2e (%.1fs)", mf, mc, t)};
}

// A2: on a linear function of the injected states IG is exact for any m.
Outcome a2() {
  auto cfg = small_model(2, 8, 12, 5, 3, 0.5);
  const auto m = model::Model::init(cfg);
  std::mt19937_64 rng(4);
  const Tensor states = testing::random_tensor(5, 8, rng);
  const Tensor base = testing::random_tensor(5, 8, rng);
  const std::vector<unsigned char> mask(5, 1);
  double worst = 0.0;
  for (std::size_t c = 0; c < 2; ++c) {
    ad::Graph g;
    const auto bm = model::bind(m, g, false);
    const ad::Var x = g.input(states);
    const ad::Var z = model::forward_from_embeddings(bm, x, mask, cfg.num_layers);
    const ad::Var zc = ad::col_slice(z, c, 1);
    const Tensor grad = ad::gradient(zc, x).value();
    for (std::size_t steps : {1, 7, 64}) {
      const auto ig = attribution::ig_attribution(m, states, base, mask, c,
                                                  {steps, attribution::Target::logit,
                                                   cfg.num_layers});
      for (std::size_t i = 0; i < states.size(); ++i) {
        const double expected = (states[i] - base[i]) * grad[i];
        worst = std::max(worst, std::abs(ig.scores[i] - expected));
      }
    }
  }
  return {worst <= 1e-10, fmt("max |IG - (E-E')*grad F| = %.2e over m in {1,7,64}", worst)};
}

// A3: first-order op audits and the attribution-loss path of a 1-layer student.
Outcome a3() {
  const auto start = Clock::now();
  std::mt19937_64 rng(2024);
  double worst_op = 0.0;
  std::string worst_name;
  std::set<ad::Op> seen;
  for (const auto& c : testing::registered_ops()) {
    for (int trial = 0; trial < 3; ++trial) {
      ad::Graph g;
      const auto p = testing::build_probe(g, c, rng);
      for (const ad::Var leaf : {p.x, p.y}) {
        if (!leaf.valid()) continue;
        const double e = ad::finite_difference_check(g, p.output, leaf, 1e-5).max_rel_error;
        if (!(e <= worst_op)) {
          worst_op = e;
          worst_name = c.name;
        }
      }
      if (c.second_order) {
        const ad::Var s = testing::second_order_probe(g, c, p, rng);
        ad::gradient(s, p.x);
      }
      testing::record_ops(g, seen);
    }
  }
  {
    ad::Graph g;
    ad::detach(g.input(Tensor(1, 1)));
    testing::record_ops(g, seen);
  }
  const std::size_t missing = testing::op_count() - seen.size();

  const auto vocab = 12;
  const auto teacher = model::Model::init(small_model(2, 8, vocab, 8, 1, 0.5));
  const auto student = model::Model::init(small_model(1, 8, vocab, 8, 2, 0.5));
  data::TokenSequence tokens;
  tokens.ids = {data::kClsId, 5, 7, 9, data::kSepId};
  tokens.mask.assign(5, 1);
  ad::Graph g;
  const auto bm = model::bind(student, g, true);
  const auto tmap = attribution::teacher_multi_view(teacher, tokens, 6, {});
  const ad::Var attr =
      distill::attribution_loss(tmap, attribution::student_multi_view(bm, tokens, {}));
  double worst_attr = 0.0;
  std::size_t zero_grads = 0;
  for (const auto& leaf : bm.params) {
    const auto r = ad::finite_difference_check(g, attr, leaf, 1e-5);
    // Parameters the loss does not depend on: both sides vanish.
    if (max_abs_diff(r.analytic, r.numeric) < 1e-9 && r.analytic.all_finite()) {
      double amax = 0.0;
      for (double v : r.analytic.values()) amax = std::max(amax, std::abs(v));
      if (amax < 1e-9) {
        ++zero_grads;
        continue;
      }
    }
    worst_attr = std::max(worst_attr, r.max_rel_error);
  }
  const double t = seconds_since(start);
  return {worst_op < 1e-4 && missing == 0 && worst_attr < 1e-3 && t < 120.0,
          fmt("ops: worst rel err %.2e (%s), %zu/%zu op kinds reached; L_attr path: worst rel err "
              "%.2e over %zu parameters (%zu with zero gradient) (%.1fs)",
              worst_op, worst_name.c_str(), seen.size(), testing::op_count(), worst_attr,
              bm.params.size() - zero_grads, zero_grads, t)};
}

// A4: algebraic identities on random rows.
Outcome a4() {
  std::mt19937_64 rng(17);
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double norm_err = 0.0, scale_err = 0.0, arith_err = 0.0, full_err = 0.0;
  bool bound_ok = true, monotone = true;
  for (int row = 0; row < 1000; ++row) {
    std::vector<double> v(6);
    for (double& x : v) x = std::abs(n(rng));
    const attribution::AttributionMap a{v, 0, attribution::Source::teacher};
    const auto unit = attribution::multi_view(std::span(&a, 1), true);
    double sq = 0.0;
    for (double x : unit.values) sq += x * x;
    norm_err = std::max(norm_err, std::abs(std::sqrt(sq) - 1.0));

    const double k = std::exp(n(rng) * 3.0);
    auto scaled = a;
    for (double& x : scaled.scores) x *= k;
    const auto unit2 = attribution::multi_view(std::span(&scaled, 1), true);
    for (std::size_t i = 0; i < 6; ++i) {
      scale_err = std::max(scale_err, std::abs(unit.values[i] - unit2.values[i]));
    }

    const std::size_t views = 1 + row % 3;
    std::vector<attribution::AttributionMap> xs, ys;
    for (std::size_t c = 0; c < views; ++c) {
      std::vector<double> p(6), q(6);
      for (std::size_t i = 0; i < 6; ++i) {
        p[i] = n(rng);
        q[i] = n(rng);
      }
      xs.push_back({p, c, attribution::Source::teacher});
      ys.push_back({q, c, attribution::Source::student});
    }
    const double l = distill::attribution_loss(attribution::multi_view(xs, true),
                                               attribution::multi_view(ys, true));
    bound_ok = bound_ok && l >= 0.0 && l <= 2.0 * std::sqrt(static_cast<double>(views)) + 1e-12;

    const double ce = u(rng) * 3, kd = u(rng), attr = u(rng) * 2, alpha = u(rng),
                 beta = u(rng) * 20;
    const auto b = distill::total_loss(ce, kd, attr, alpha, beta, 4.0);
    arith_err = std::max(arith_err, std::abs(b.total - ((1 - alpha) * ce + alpha * kd + beta * attr)));

    attribution::DimAttribution dims{Tensor(1, 10), 0, 1};
    for (double& x : dims.scores.values()) x = n(rng);
    double prev = 0.0;
    for (std::size_t kk = 1; kk <= 10; ++kk) {
      const double s = attribution::token_scores(dims, kk, {}, attribution::Source::teacher).scores[0];
      monotone = monotone && s >= prev;
      prev = s;
    }
    double full = 0.0;
    for (double x : dims.scores.values()) full += x * x;
    full_err = std::max(full_err, std::abs(prev - std::sqrt(full)));
  }
  const bool pass = norm_err <= 1e-9 && scale_err <= 1e-12 && bound_ok && arith_err <= 1e-12 &&
                    monotone && full_err <= 1e-12;
  return {pass, fmt("unit norm %.1e, scale invariance %.1e, bound %s, arithmetic %.1e, top-K "
                    "monotone %s, K=d vs full norm %.1e (1000 rows)",
                    norm_err, scale_err, bound_ok ? "ok" : "violated", arith_err,
                    monotone ? "yes" : "no", full_err)};
}

trainer::Dataset synthetic(std::size_t train, std::size_t dev, std::uint64_t seed) {
  data::SyntheticSpec spec;
  spec.num_train = train;
  spec.num_dev = dev;
  spec.seed = seed;
  auto task = data::make_synthetic_task(spec);
  return trainer::encode({false, 2}, std::move(task.train), std::move(task.dev), 16);
}

// A5: beta = 0 follows the vanilla-KD codepath step by step.
Outcome a5() {
  const auto d = synthetic(200, 20, 3);
  trainer::OptimConfig o;
  o.epochs = 1;
  o.seed = 3;
  const auto teacher =
      trainer::train_teacher(d, small_model(2, 16, d.vocab.size(), 16, 3, 0.02), o).model;
  auto cfg = distill::DistillConfig{};
  cfg.beta = 0.0;
  cfg.batch_size = 4;
  cfg.epochs = 1;
  cfg.learning_rate = 1e-3;
  cfg.seed = 8;
  const auto student = small_model(1, 16, d.vocab.size(), 16, 8, 0.02);
  cfg.method = distill::Method::ad_kd;
  const auto ad = trainer::distill(teacher, student, d, cfg);
  cfg.method = distill::Method::vanilla_kd;
  const auto van = trainer::distill(teacher, student, d, cfg);
  double worst = 0.0;
  const std::size_t steps = ad.report.step_losses.size();
  for (std::size_t i = 0; i < std::min(steps, van.report.step_losses.size()); ++i) {
    worst = std::max(worst, std::abs(ad.report.step_losses[i] - van.report.step_losses[i]));
  }
  const bool pass = steps == 50 && van.report.step_losses.size() == 50 && worst <= 1e-12 &&
                    ad.report.vanilla_kd_equivalent;
  return {pass, fmt("%zu steps, max per-step loss difference %.1e, students %s", steps, worst,
                    ad.model == van.model ? "identical" : "differ")};
}

struct SeedResult {
  double acc_ad = 0, acc_van = 0, acc_b1 = 0;
  double dev_gap_ad = 0, dev_gap_van = 0, dev_gap_b1 = 0;
  double train_gap_ad = 0, train_gap_van = 0, train_gap_b1 = 0;
  double rho_ad = 0, rho_van = 0, top2_ad = 0;
};

constexpr std::size_t kTrainGapExamples = 500;

SeedResult run_seed(std::uint64_t seed) {
  const auto d = synthetic(2000, 500, seed);
  auto tc = small_model(4, 64, d.vocab.size(), 16, seed, 0.02);
  tc.num_heads = 4;
  tc.ffn_dim = 128;
  trainer::OptimConfig o;
  o.epochs = 2;
  o.seed = seed;
  const auto teacher = trainer::train_teacher(d, tc, o).model;
  auto sc = tc;
  sc.num_layers = 2;

  auto cfg = distill::mrpc_defaults();
  cfg.seed = seed;
  cfg.epochs = 3;
  cfg.cache_teacher_maps = true;
  cfg.student_init = distill::StudentInit::teacher;
  const auto settings = trainer::AttributionSettings::from(cfg);
  const auto dev_labels = d.dev_labels();
  const std::span<const data::TokenSequence> train_part(d.train_tokens.data(), kTrainGapExamples);

  auto run = [&](distill::Method method, double beta, double& acc, double& dev_gap,
                 double& train_gap) {
    auto c = cfg;
    c.method = method;
    c.beta = beta;
    auto r = trainer::distill(teacher, sc, d, c);
    acc = trainer::evaluate(r.model, d.dev_tokens, dev_labels, metrics::Metric::accuracy).value;
    dev_gap = trainer::attribution_gap(teacher, r.model, d.dev_tokens, settings);
    train_gap = trainer::attribution_gap(teacher, r.model, train_part, settings);
    return r.model;
  };
  SeedResult s;
  const auto ad = run(distill::Method::ad_kd, 10.0, s.acc_ad, s.dev_gap_ad, s.train_gap_ad);
  const auto van = run(distill::Method::vanilla_kd, 0.0, s.acc_van, s.dev_gap_van, s.train_gap_van);
  run(distill::Method::ad_kd, 1.0, s.acc_b1, s.dev_gap_b1, s.train_gap_b1);
  const auto ra = trainer::rationale_report(teacher, ad, d.vocab, d.dev_tokens, dev_labels, settings);
  const auto rv = trainer::rationale_report(teacher, van, d.vocab, d.dev_tokens, dev_labels, settings);
  s.rho_ad = ra.mean_spearman;
  s.rho_van = rv.mean_spearman;
  s.top2_ad = ra.keyword_top2_rate;
  return s;
}

struct Experiment {
  std::vector<SeedResult> seeds;
  double seconds = 0.0;
};

const Experiment& experiment() {
  static const Experiment e = [] {
    Experiment x;
    const auto start = Clock::now();
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      x.seeds.push_back(run_seed(seed));
      std::fprintf(stderr, "  seed %llu done (%.0fs)\n", static_cast<unsigned long long>(seed),
                   seconds_since(start));
    }
    x.seconds = seconds_since(start);
    return x;
  }();
  return e;
}

std::vector<double> field(double SeedResult::*f) {
  std::vector<double> out;
  for (const auto& s : experiment().seeds) out.push_back(s.*f);
  return out;
}

Outcome a6() {
  const auto ad = field(&SeedResult::acc_ad), van = field(&SeedResult::acc_van);
  std::size_t wins = 0;
  for (std::size_t i = 0; i < ad.size(); ++i) wins += ad[i] >= van[i];
  const double t = experiment().seconds;
  return {mean(ad) >= mean(van) && wins >= 3 && t < 1800.0,
          fmt("dev accuracy AD-KD [%s] mean %.4f vs vanilla [%s] mean %.4f; AD-KD wins or ties "
              "%zu/5 (5 seeds incl. A7/A8 runs: %.0fs)",
              join(ad).c_str(), mean(ad), join(van).c_str(), mean(van), wins, t)};
}

int sign(double x) { return (x > 0) - (x < 0); }

Outcome a7() {
  const double d0 = mean(field(&SeedResult::dev_gap_van));
  const double d1 = mean(field(&SeedResult::dev_gap_b1));
  const double d10 = mean(field(&SeedResult::dev_gap_ad));
  const double t0 = mean(field(&SeedResult::train_gap_van));
  const double t1 = mean(field(&SeedResult::train_gap_b1));
  const double t10 = mean(field(&SeedResult::train_gap_ad));
  const bool lower = d10 < d0;
  const bool same = sign(d1 - d0) == sign(t1 - t0) && sign(d10 - d1) == sign(t10 - t1);
  return {lower && same,
          fmt("mean gap at beta 0/1/10: dev %.4f/%.4f/%.4f, train %.4f/%.4f/%.4f "
              "(train on first %zu examples)",
              d0, d1, d10, t0, t1, t10, kTrainGapExamples)};
}

Outcome a8() {
  const auto ra = field(&SeedResult::rho_ad), rv = field(&SeedResult::rho_van);
  const auto top2 = field(&SeedResult::top2_ad);
  return {mean(ra) > mean(rv) && mean(top2) >= 0.8,
          fmt("teacher/student Spearman AD-KD [%s] mean %.3f vs vanilla [%s] mean %.3f; keyword "
              "in AD-KD top-2 [%s] mean %.3f",
              join(ra).c_str(), mean(ra), join(rv).c_str(), mean(rv), join(top2).c_str(),
              mean(top2))};
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(ADKD_BIN) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

// A9: checkpoints, report determinism, CLI validation.
Outcome a9() {
  const auto dir = fs::temp_directory_path() / "adkd_acceptance";
  fs::remove_all(dir);
  fs::create_directories(dir);

  const auto d = synthetic(64, 16, 5);
  const auto cfg = small_model(2, 16, d.vocab.size(), 16, 5, 0.02);
  trainer::OptimConfig o;
  o.epochs = 2;
  o.seed = 5;
  const auto first = trainer::train_teacher(d, cfg, o);
  const auto second = trainer::train_teacher(d, cfg, o);
  const bool reports = first.report.to_json(false) == second.report.to_json(false);

  model::save_checkpoint(dir / "m.ckpt", first.model, &d.vocab);
  const auto back = model::load_checkpoint(dir / "m.ckpt");
  bool round_trip = back.model == first.model && back.vocab && *back.vocab == d.vocab;
  for (const auto& s : d.dev_tokens) {
    round_trip = round_trip && model::forward(back.model, s) == model::forward(first.model, s);
  }

  setenv("ADKD_OUTPUT_ROOT", (dir / "out").c_str(), 1);
  std::size_t fixtures = 0, rejected = 0;
  std::vector<fs::path> paths;
  for (const auto& e : fs::directory_iterator(fs::path(ADKD_FIXTURES) / "bad_configs")) {
    paths.push_back(e.path());
  }
  std::sort(paths.begin(), paths.end());
  std::string failed;
  for (const auto& p : paths) {
    ++fixtures;
    if (run_cli("train-teacher --config " + p.string()) == 2) {
      ++rejected;
    } else {
      failed += " " + p.filename().string();
    }
  }
  const bool nothing_written = !fs::exists(dir / "out");
  const bool cli = fixtures >= 10 && rejected == fixtures && nothing_written;
  return {round_trip && reports && cli,
          fmt("checkpoint round trip %s; repeated run reports %s; %zu/%zu malformed configs exit "
              "2%s%s",
              round_trip ? "bit-exact" : "differs", reports ? "identical" : "differ", rejected,
              fixtures, nothing_written ? "" : ", output written", failed.c_str())};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"A1", a1}, {"A2", a2}, {"A3", a3}, {"A4", a4}, {"A5", a5},
      {"A6", a6}, {"A7", a7}, {"A8", a8}, {"A9", a9}};
  std::set<std::string> only;
  if (argc > 1) {
    std::stringstream ss(argv[1]);
    std::string id;
    while (std::getline(ss, id, ',')) only.insert(id);
  }
  int failures = 0;
  for (const auto& [id, fn] : criteria) {
    if (!only.empty() && !only.contains(id)) continue;
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    failures += !o.pass;
    std::printf("%s %s  %s\n", id.c_str(), o.pass ? "PASS" : "FAIL", o.detail.c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
