#include "adkd/config.hpp"

#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include "adkd/errors.hpp"

namespace adkd::config {
namespace {

using nlohmann::json;

// Typed access to one JSON object; every key read is remembered so leftover
// (misspelt) keys can be rejected.
class Fields {
 public:
  Fields(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + "must be an object");
  }

  bool has(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key) && !j_.at(key).is_null();
  }

  std::size_t count(const std::string& key, std::size_t fallback) {
    if (!has(key)) return fallback;
    const json& v = j_.at(key);
    if (!v.is_number_integer() || v.get<std::int64_t>() < 0) {
      throw ConfigError(field(key) + ": must be a non-negative integer");
    }
    return v.get<std::size_t>();
  }

  double real(const std::string& key, double fallback) {
    if (!has(key)) return fallback;
    const json& v = j_.at(key);
    if (!v.is_number()) throw ConfigError(field(key) + ": must be a number");
    return v.get<double>();
  }

  bool boolean(const std::string& key, bool fallback) {
    if (!has(key)) return fallback;
    const json& v = j_.at(key);
    if (!v.is_boolean()) throw ConfigError(field(key) + ": must be true or false");
    return v.get<bool>();
  }

  std::optional<std::string> text(const std::string& key) {
    if (!has(key)) return std::nullopt;
    const json& v = j_.at(key);
    if (!v.is_string()) throw ConfigError(field(key) + ": must be a string");
    return v.get<std::string>();
  }

  std::optional<Fields> object(const std::string& key) {
    if (!has(key)) return std::nullopt;
    return Fields(j_.at(key), field(key));
  }

  template <typename Parse>
  auto parsed(const std::string& key, Parse&& parse) -> std::optional<decltype(parse(""))> {
    const auto s = text(key);
    if (!s) return std::nullopt;
    try {
      return parse(*s);
    } catch (const ConfigError& e) {
      throw ConfigError(field(key) + ": " + e.what());
    }
  }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.contains(key)) throw ConfigError(field(key) + ": unknown field");
    }
  }

  std::string field(const std::string& key) const {
    return path_.empty() ? key : path_ + "." + key;
  }

 private:
  std::string where() const { return path_.empty() ? "config " : path_ + ": "; }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

ModelBlock parse_model(Fields& f, ModelBlock m) {
  m.num_layers = f.count("num_layers", m.num_layers);
  m.hidden_dim = f.count("hidden_dim", m.hidden_dim);
  m.num_heads = f.count("num_heads", m.num_heads);
  m.ffn_dim = f.count("ffn_dim", m.ffn_dim);
  m.init_std = f.real("init_std", m.init_std);
  return m;
}

json model_json(const ModelBlock& m) {
  return {{"num_layers", m.num_layers}, {"hidden_dim", m.hidden_dim},
          {"num_heads", m.num_heads},   {"ffn_dim", m.ffn_dim},
          {"init_std", m.init_std}};
}

attribution::Target parse_target(std::string_view s) {
  if (s == "probability") return attribution::Target::probability;
  if (s == "logit") return attribution::Target::logit;
  throw ConfigError("unknown target '" + std::string(s) + "' (probability|logit)");
}

distill::Method parse_method(std::string_view s) {
  if (s == "ad_kd") return distill::Method::ad_kd;
  if (s == "vanilla_kd") return distill::Method::vanilla_kd;
  throw ConfigError("unknown method '" + std::string(s) + "' (ad_kd|vanilla_kd)");
}

template <typename Fn>
void prefixed(const std::string& prefix, Fn&& fn) {
  try {
    fn();
  } catch (const ConfigError& e) {
    throw ConfigError(prefix + ": " + e.what());
  }
}

}  // namespace

model::ModelConfig ModelBlock::resolve(std::size_t vocab_size, std::size_t max_len,
                                       std::size_t num_labels, std::uint64_t seed) const {
  model::ModelConfig c;
  c.num_layers = num_layers;
  c.hidden_dim = hidden_dim;
  c.num_heads = num_heads;
  c.ffn_dim = ffn_dim;
  c.init_std = init_std;
  c.vocab_size = vocab_size;
  c.max_len = max_len;
  c.num_labels = num_labels;
  c.seed = seed;
  return c;
}

void RunConfig::validate() const {
  const auto& t = task;
  if (t.schema.num_labels == 0) throw ConfigError("task.num_labels: must be >= 1");
  if (t.max_len < 3) throw ConfigError("task.max_len: must be >= 3");
  if (t.train_path || t.dev_path) {
    if (!t.train_path) throw ConfigError("task.train: missing (task.dev is set)");
    if (!t.dev_path) throw ConfigError("task.dev: missing (task.train is set)");
  } else if (t.synthetic) {
    const auto& s = *t.synthetic;
    if (t.schema.pair) throw ConfigError("task.pair: the synthetic task has single sentences");
    if (t.schema.num_labels != 2) throw ConfigError("task.num_labels: the synthetic task has 2");
    if (s.num_train == 0) throw ConfigError("task.synthetic.num_train: must be >= 1");
    if (s.num_dev == 0) throw ConfigError("task.synthetic.num_dev: must be >= 1");
    if (s.min_words < 2) throw ConfigError("task.synthetic.min_words: must be >= 2");
    if (s.max_words < s.min_words) {
      throw ConfigError("task.synthetic.max_words: must be >= min_words");
    }
    if (!(s.second_keyword_prob >= 0.0 && s.second_keyword_prob <= 1.0)) {
      throw ConfigError("task.synthetic.second_keyword_prob: must be in [0, 1]");
    }
  } else {
    throw ConfigError("task: needs train/dev paths or a synthetic block");
  }

  const auto tc = teacher.resolve(data::kNumSpecial, t.max_len, t.schema.num_labels, seed);
  const auto sc = student.resolve(data::kNumSpecial, t.max_len, t.schema.num_labels, seed);
  prefixed("teacher", [&] { tc.validate(); });
  prefixed("teacher", [&] { teacher_optim.validate(); });
  prefixed("student", [&] { sc.validate(); });
  distill.validate(teacher.hidden_dim);
  prefixed("distill.attr_layer", [&] {
    if (distill.method == distill::Method::ad_kd) {
      distill::attribution_layers(distill.attr_layer, teacher.num_layers, student.num_layers);
    }
  });
  if (distill.student_init == distill::StudentInit::teacher) {
    if (student.hidden_dim != teacher.hidden_dim || student.num_heads != teacher.num_heads ||
        student.ffn_dim != teacher.ffn_dim) {
      throw ConfigError("distill.student_init: 'teacher' needs equal widths in student and teacher");
    }
    if (student.num_layers > teacher.num_layers) {
      throw ConfigError("distill.student_init: student is deeper than the teacher");
    }
  }
  if (metric) {
    const bool regression = t.schema.regression();
    if (regression != (*metric == metrics::Metric::spearman)) {
      throw ConfigError("metric: '" + std::string(metrics::metric_name(*metric)) +
                        "' does not fit this task");
    }
    if (!regression && t.schema.num_labels != 2 && *metric != metrics::Metric::accuracy) {
      throw ConfigError("metric: f1/matthews need a binary task");
    }
  }
}

json RunConfig::to_json() const {
  json task_json = {{"num_labels", task.schema.num_labels},
                    {"pair", task.schema.pair},
                    {"max_len", task.max_len}};
  if (task.train_path) task_json["train"] = task.train_path->string();
  if (task.dev_path) task_json["dev"] = task.dev_path->string();
  if (task.synthetic) {
    const auto& s = *task.synthetic;
    task_json["synthetic"] = {{"num_train", s.num_train},
                              {"num_dev", s.num_dev},
                              {"seed", s.seed},
                              {"min_words", s.min_words},
                              {"max_words", s.max_words},
                              {"second_keyword_prob", s.second_keyword_prob}};
  }
  json teacher_json = model_json(teacher);
  teacher_json["learning_rate"] = teacher_optim.learning_rate;
  teacher_json["batch_size"] = teacher_optim.batch_size;
  teacher_json["epochs"] = teacher_optim.epochs;
  teacher_json["warmup_fraction"] = teacher_optim.warmup_fraction;
  teacher_json["clip_norm"] = teacher_optim.clip_norm;
  const auto& d = distill;
  json j = {
      {"seed", seed},
      {"output_dir", output_dir.string()},
      {"task", task_json},
      {"teacher", teacher_json},
      {"student", model_json(student)},
      {"distill",
       {{"method", d.method == distill::Method::ad_kd ? "ad_kd" : "vanilla_kd"},
        {"alpha", d.alpha},
        {"beta", d.beta},
        {"tau", d.tau},
        {"topk", d.top_k},
        {"ig_steps", d.ig_steps},
        {"attr_layer", distill::attr_layer_name(d.attr_layer)},
        {"target", d.target == attribution::Target::logit ? "logit" : "probability"},
        {"learning_rate", d.learning_rate},
        {"batch_size", d.batch_size},
        {"epochs", d.epochs},
        {"warmup_fraction", d.warmup_fraction},
        {"clip_norm", d.clip_norm},
        {"cache_teacher_maps", d.cache_teacher_maps},
        {"student_init", distill::student_init_name(d.student_init)}}},
  };
  if (metric) j["metric"] = metrics::metric_name(*metric);
  if (teacher_checkpoint) j["teacher_checkpoint"] = teacher_checkpoint->string();
  return j;
}

RunConfig parse(const json& j) {
  RunConfig c;
  Fields root(j, "");
  c.seed = root.count("seed", c.seed);
  if (auto out = root.text("output_dir")) c.output_dir = *out;
  if (auto ck = root.text("teacher_checkpoint")) c.teacher_checkpoint = *ck;
  c.metric = root.parsed("metric", metrics::parse_metric);

  if (auto task = root.object("task")) {
    c.task.schema.num_labels = task->count("num_labels", c.task.schema.num_labels);
    c.task.schema.pair = task->boolean("pair", c.task.schema.pair);
    c.task.max_len = task->count("max_len", c.task.max_len);
    if (auto p = task->text("train")) c.task.train_path = *p;
    if (auto p = task->text("dev")) c.task.dev_path = *p;
    if (auto syn = task->object("synthetic")) {
      data::SyntheticSpec s;
      s.seed = c.seed;
      s.num_train = syn->count("num_train", s.num_train);
      s.num_dev = syn->count("num_dev", s.num_dev);
      s.seed = syn->count("seed", s.seed);
      s.min_words = syn->count("min_words", s.min_words);
      s.max_words = syn->count("max_words", s.max_words);
      s.second_keyword_prob = syn->real("second_keyword_prob", s.second_keyword_prob);
      syn->finish();
      c.task.synthetic = s;
    }
    task->finish();
  } else {
    throw ConfigError("task: missing");
  }

  if (auto t = root.object("teacher")) {
    c.teacher_optim.learning_rate = t->real("learning_rate", c.teacher_optim.learning_rate);
    c.teacher_optim.batch_size = t->count("batch_size", c.teacher_optim.batch_size);
    c.teacher_optim.epochs = t->count("epochs", c.teacher_optim.epochs);
    c.teacher_optim.warmup_fraction = t->real("warmup_fraction", c.teacher_optim.warmup_fraction);
    c.teacher_optim.clip_norm = t->real("clip_norm", c.teacher_optim.clip_norm);
    c.teacher = parse_model(*t, c.teacher);
    t->finish();
  }
  c.teacher_optim.seed = c.seed;
  if (auto s = root.object("student")) {
    c.student = parse_model(*s, c.student);
    s->finish();
  }

  auto& d = c.distill;
  d.seed = c.seed;
  if (auto f = root.object("distill")) {
    if (auto m = f->parsed("method", parse_method)) d.method = *m;
    d.alpha = f->real("alpha", d.alpha);
    d.beta = f->real("beta", d.beta);
    d.tau = f->real("tau", d.tau);
    d.top_k = f->count("topk", d.top_k);
    d.ig_steps = f->count("ig_steps", d.ig_steps);
    if (auto l = f->parsed("attr_layer", distill::parse_attr_layer)) d.attr_layer = *l;
    if (auto t = f->parsed("target", parse_target)) d.target = *t;
    d.learning_rate = f->real("learning_rate", d.learning_rate);
    d.batch_size = f->count("batch_size", d.batch_size);
    d.epochs = f->count("epochs", d.epochs);
    d.warmup_fraction = f->real("warmup_fraction", d.warmup_fraction);
    d.clip_norm = f->real("clip_norm", d.clip_norm);
    d.cache_teacher_maps = f->boolean("cache_teacher_maps", d.cache_teacher_maps);
    if (auto i = f->parsed("student_init", distill::parse_student_init)) d.student_init = *i;
    f->finish();
  }
  root.finish();
  c.validate();
  return c;
}

RunConfig load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": invalid JSON: " + e.what());
  }
  return parse(j);
}

std::filesystem::path resolve_output_dir(const std::filesystem::path& dir) {
  if (dir.is_absolute()) return dir;
  if (const char* root = std::getenv(kOutputRootEnv); root && *root) {
    return std::filesystem::path(root) / dir;
  }
  return dir;
}

data::SyntheticTask load_task(const RunConfig& config) {
  const auto& t = config.task;
  if (t.train_path) {
    for (const auto& p : {*t.train_path, *t.dev_path}) {
      if (!std::filesystem::exists(p)) throw ConfigError("data file not found: " + p.string());
    }
    return {data::load_tsv(*t.train_path, t.schema), data::load_tsv(*t.dev_path, t.schema)};
  }
  return data::make_synthetic_task(*t.synthetic);
}

}  // namespace adkd::config
