#include "adkd/model.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <json.hpp>
#include <numbers>
#include <random>

#include "adkd/errors.hpp"

namespace adkd::model {
namespace {

using ad::Var;

constexpr std::size_t kEmbedParams = 4;
constexpr std::size_t kLayerParams = 16;
constexpr const char* kFormat = "adkd-checkpoint";
constexpr int kFormatVersion = 1;

// Offsets inside one encoder layer block.
enum LayerSlot : std::size_t {
  kWq, kBq, kWk, kBk, kWv, kBv, kWo, kBo,
  kLn1G, kLn1B, kW1, kB1, kW2, kB2, kLn2G, kLn2B
};

std::size_t layer_base(std::size_t layer) { return kEmbedParams + kLayerParams * layer; }
std::size_t head_base(const ModelConfig& c) { return layer_base(c.num_layers); }

std::vector<unsigned char> to_vector(std::span<const unsigned char> mask) {
  return {mask.begin(), mask.end()};
}

Var encoder_layer(const BoundModel& m, Var h, std::span<const unsigned char> mask,
                  std::size_t layer) {
  const ModelConfig& c = m.config();
  const auto p = [&](LayerSlot s) { return m.params[layer_base(layer) + s]; };
  const std::size_t head_dim = c.hidden_dim / c.num_heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(head_dim));

  Var q = ad::add_row(ad::matmul(h, p(kWq)), p(kBq));
  Var k = ad::add_row(ad::matmul(h, p(kWk)), p(kBk));
  Var v = ad::add_row(ad::matmul(h, p(kWv)), p(kBv));
  std::vector<Var> heads;
  heads.reserve(c.num_heads);
  for (std::size_t i = 0; i < c.num_heads; ++i) {
    const std::size_t off = i * head_dim;
    Var scores = ad::scale(
        ad::matmul_nt(ad::col_slice(q, off, head_dim), ad::col_slice(k, off, head_dim)), inv_sqrt);
    Var probs = ad::softmax_rows(scores, to_vector(mask));
    heads.push_back(ad::matmul(probs, ad::col_slice(v, off, head_dim)));
  }
  Var attended = c.num_heads == 1 ? heads.front() : ad::concat_cols(heads);
  Var attn = ad::add_row(ad::matmul(attended, p(kWo)), p(kBo));
  Var h1 = ad::layer_norm(h + attn, p(kLn1G), p(kLn1B), kLayerNormEps);
  Var ff = ad::add_row(
      ad::matmul(ad::gelu(ad::add_row(ad::matmul(h1, p(kW1)), p(kB1))), p(kW2)), p(kB2));
  return ad::layer_norm(h1 + ff, p(kLn2G), p(kLn2B), kLayerNormEps);
}

void check_mask(const BoundModel& m, Var states, std::span<const unsigned char> mask) {
  const Shape s = states.shape();
  if (s.cols != m.config().hidden_dim) {
    throw ShapeError("model expects hidden size " + std::to_string(m.config().hidden_dim) +
                     ", got " + s.str());
  }
  if (mask.size() != s.rows) {
    throw ShapeError("mask length " + std::to_string(mask.size()) + " for " +
                     std::to_string(s.rows) + " positions");
  }
  if (s.rows == 0 || s.rows > m.config().max_len) {
    throw ShapeError("sequence length " + std::to_string(s.rows) + " outside [1, max_len]");
  }
}

// Standard normal via Box-Muller on a standardised engine.
double normal(std::mt19937_64& rng) {
  const double u1 = (static_cast<double>(rng() >> 11) + 1.0) * 0x1.0p-53;
  const double u2 = static_cast<double>(rng() >> 11) * 0x1.0p-53;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t to_little_endian(std::uint64_t v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    std::uint64_t r = 0;
    for (int i = 0; i < 8; ++i) r |= ((v >> (8 * i)) & 0xffu) << (8 * (7 - i));
    return r;
  }
}

nlohmann::json config_to_json(const ModelConfig& c) {
  return {{"num_layers", c.num_layers}, {"hidden_dim", c.hidden_dim},
          {"num_heads", c.num_heads},   {"ffn_dim", c.ffn_dim},
          {"vocab_size", c.vocab_size}, {"max_len", c.max_len},
          {"num_labels", c.num_labels}, {"seed", c.seed},
          {"init_std", c.init_std}};
}

ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.num_layers = j.at("num_layers").get<std::size_t>();
  c.hidden_dim = j.at("hidden_dim").get<std::size_t>();
  c.num_heads = j.at("num_heads").get<std::size_t>();
  c.ffn_dim = j.at("ffn_dim").get<std::size_t>();
  c.vocab_size = j.at("vocab_size").get<std::size_t>();
  c.max_len = j.at("max_len").get<std::size_t>();
  c.num_labels = j.at("num_labels").get<std::size_t>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.init_std = j.at("init_std").get<double>();
  return c;
}

}  // namespace

void ModelConfig::validate() const {
  auto positive = [](std::size_t v, const char* name) {
    if (v == 0) throw ConfigError(std::string(name) + " must be positive");
  };
  positive(num_layers, "num_layers");
  positive(hidden_dim, "hidden_dim");
  positive(num_heads, "num_heads");
  positive(ffn_dim, "ffn_dim");
  positive(vocab_size, "vocab_size");
  positive(max_len, "max_len");
  positive(num_labels, "num_labels");
  if (hidden_dim % num_heads != 0) {
    throw ConfigError("num_heads (" + std::to_string(num_heads) + ") must divide hidden_dim (" +
                      std::to_string(hidden_dim) + ")");
  }
  if (vocab_size < data::kNumSpecial) throw ConfigError("vocab_size must include special tokens");
  if (!(init_std > 0.0) || !std::isfinite(init_std)) throw ConfigError("init_std must be > 0");
}

std::vector<Parameter> parameter_layout(const ModelConfig& c) {
  const std::size_t d = c.hidden_dim;
  const std::size_t f = c.ffn_dim;
  std::vector<Parameter> layout;
  auto add = [&](std::string name, std::size_t r, std::size_t cols) {
    layout.push_back({std::move(name), Tensor(r, cols)});
  };
  add("embeddings.token", c.vocab_size, d);
  add("embeddings.position", c.max_len, d);
  add("embeddings.ln.gamma", 1, d);
  add("embeddings.ln.beta", 1, d);
  for (std::size_t l = 0; l < c.num_layers; ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    add(p + "attn.wq", d, d);
    add(p + "attn.bq", 1, d);
    add(p + "attn.wk", d, d);
    add(p + "attn.bk", 1, d);
    add(p + "attn.wv", d, d);
    add(p + "attn.bv", 1, d);
    add(p + "attn.wo", d, d);
    add(p + "attn.bo", 1, d);
    add(p + "ln1.gamma", 1, d);
    add(p + "ln1.beta", 1, d);
    add(p + "ffn.w1", d, f);
    add(p + "ffn.b1", 1, f);
    add(p + "ffn.w2", f, d);
    add(p + "ffn.b2", 1, d);
    add(p + "ln2.gamma", 1, d);
    add(p + "ln2.beta", 1, d);
  }
  add("head.w", d, c.num_labels);
  add("head.b", 1, c.num_labels);
  return layout;
}

Model Model::init(const ModelConfig& config) {
  config.validate();
  Model m;
  m.config_ = config;
  m.params_ = parameter_layout(config);
  std::mt19937_64 rng(config.seed);
  for (Parameter& p : m.params_) {
    const bool gamma = p.name.ends_with(".gamma");
    const bool bias = p.value.rows() == 1 && !gamma;
    for (double& v : p.value.values()) {
      v = gamma ? 1.0 : bias ? 0.0 : config.init_std * normal(rng);
    }
  }
  return m;
}

Model init_from_teacher(const Model& teacher, const ModelConfig& config) {
  config.validate();
  if (config.num_layers > teacher.config().num_layers) {
    throw ConfigError("student has more layers than the teacher it is initialised from");
  }
  std::vector<Parameter> params = parameter_layout(config);
  for (Parameter& p : params) {
    const auto& src = [&]() -> const Tensor& {
      try {
        return teacher.param(p.name);
      } catch (const Error&) {
        throw ConfigError("teacher has no parameter " + p.name);
      }
    }();
    if (src.shape() != p.value.shape()) {
      throw ConfigError("cannot initialise " + p.name + " " + p.value.shape().str() +
                        " from teacher " + src.shape().str());
    }
    p.value = src;
  }
  return Model::from_parameters(config, std::move(params));
}

Model Model::from_parameters(const ModelConfig& config, std::vector<Parameter> params) {
  config.validate();
  const auto layout = parameter_layout(config);
  if (layout.size() != params.size()) {
    throw IoError("expected " + std::to_string(layout.size()) + " arrays, got " +
                  std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < layout.size(); ++i) {
    if (layout[i].name != params[i].name || layout[i].value.shape() != params[i].value.shape()) {
      throw IoError("array " + std::to_string(i) + " is " + params[i].name + " " +
                    params[i].value.shape().str() + ", expected " + layout[i].name + " " +
                    layout[i].value.shape().str());
    }
    if (!params[i].value.all_finite()) throw NumericError(params[i].name + ": non-finite values");
  }
  Model m;
  m.config_ = config;
  m.params_ = std::move(params);
  return m;
}

const Tensor& Model::param(std::string_view name) const {
  for (const Parameter& p : params_) {
    if (p.name == name) return p.value;
  }
  throw Error("no parameter named " + std::string(name));
}

std::size_t Model::num_scalars() const {
  std::size_t n = 0;
  for (const Parameter& p : params_) n += p.value.size();
  return n;
}

bool Model::operator==(const Model& other) const {
  if (!(config_ == other.config_) || params_.size() != other.params_.size()) return false;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (params_[i].name != other.params_[i].name || !(params_[i].value == other.params_[i].value)) {
      return false;
    }
  }
  return true;
}

BoundModel bind(const Model& model, ad::Graph& graph, bool trainable) {
  BoundModel bm;
  bm.model = &model;
  bm.params.reserve(model.parameters().size());
  for (const Parameter& p : model.parameters()) {
    bm.params.push_back(trainable ? graph.input(p.value) : graph.constant(p.value));
  }
  return bm;
}

Var embed(const BoundModel& m, const data::TokenSequence& tokens) {
  const ModelConfig& c = m.config();
  if (tokens.size() == 0 || tokens.size() > c.max_len) {
    throw ShapeError("sequence length " + std::to_string(tokens.size()) + " outside [1, " +
                     std::to_string(c.max_len) + "]");
  }
  for (std::size_t id : tokens.ids) {
    if (id >= c.vocab_size) {
      throw DataError("token id " + std::to_string(id) + " >= vocab_size " +
                      std::to_string(c.vocab_size));
    }
  }
  std::vector<std::size_t> positions(tokens.size());
  for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = i;
  return ad::gather_rows(m.params[0], tokens.ids) + ad::gather_rows(m.params[1], positions);
}

Var baseline_embeddings(const BoundModel& m, std::size_t n) {
  data::TokenSequence pads;
  pads.ids.assign(n, data::kPadId);
  pads.mask.assign(n, 0);
  return embed(m, pads);
}

Var hidden_state(const BoundModel& m, Var embeddings, std::span<const unsigned char> mask,
                 std::size_t layer) {
  check_mask(m, embeddings, mask);
  if (layer > m.config().num_layers) {
    throw ConfigError("hidden_state: layer " + std::to_string(layer) + " > num_layers");
  }
  if (layer == 0) return embeddings;
  Var h = ad::layer_norm(embeddings, m.params[2], m.params[3], kLayerNormEps);
  for (std::size_t l = 0; l < layer; ++l) h = encoder_layer(m, h, mask, l);
  return h;
}

Var forward_from_embeddings(const BoundModel& m, Var states, std::span<const unsigned char> mask,
                            std::size_t layer) {
  check_mask(m, states, mask);
  const ModelConfig& c = m.config();
  if (layer > c.num_layers) {
    throw ConfigError("injection layer " + std::to_string(layer) + " > num_layers " +
                      std::to_string(c.num_layers));
  }
  Var h = layer == 0 ? ad::layer_norm(states, m.params[2], m.params[3], kLayerNormEps) : states;
  for (std::size_t l = layer; l < c.num_layers; ++l) h = encoder_layer(m, h, mask, l);
  const std::size_t hb = head_base(c);
  return ad::add_row(ad::matmul(ad::row_slice(h, 0, 1), m.params[hb]), m.params[hb + 1]);
}

Var forward(const BoundModel& m, const data::TokenSequence& tokens) {
  return forward_from_embeddings(m, embed(m, tokens), tokens.mask, 0);
}

Tensor embed(const Model& model, const data::TokenSequence& tokens) {
  ad::Graph g;
  return embed(bind(model, g, false), tokens).value();
}

Tensor forward(const Model& model, const data::TokenSequence& tokens) {
  ad::Graph g;
  return forward(bind(model, g, false), tokens).value();
}

Tensor forward_from_embeddings(const Model& model, const Tensor& states,
                               std::span<const unsigned char> mask, std::size_t layer) {
  ad::Graph g;
  BoundModel bm = bind(model, g, false);
  return forward_from_embeddings(bm, g.constant(states), mask, layer).value();
}

std::vector<Tensor> forward_batch(const Model& model, std::span<const data::TokenSequence> batch) {
  std::vector<Tensor> out;
  out.reserve(batch.size());
  for (const auto& seq : batch) out.push_back(forward(model, seq));
  return out;
}

void save_checkpoint(const std::filesystem::path& path, const Model& model,
                     const data::Vocab* vocab) {
  nlohmann::json header;
  header["format"] = kFormat;
  header["version"] = kFormatVersion;
  header["config"] = config_to_json(model.config());
  nlohmann::json arrays = nlohmann::json::array();
  std::size_t offset = 0;
  for (const Parameter& p : model.parameters()) {
    arrays.push_back({{"name", p.name},
                      {"shape", {p.value.rows(), p.value.cols()}},
                      {"offset", offset}});
    offset += p.value.size() * sizeof(double);
  }
  header["arrays"] = std::move(arrays);
  header["payload_bytes"] = offset;
  if (vocab) header["vocab"] = vocab->tokens();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out << header.dump() << '\n';
  for (const Parameter& p : model.parameters()) {
    for (double v : p.value.values()) {
      const std::uint64_t bits = to_little_endian(std::bit_cast<std::uint64_t>(v));
      char bytes[8];
      std::memcpy(bytes, &bits, 8);
      out.write(bytes, 8);
    }
  }
  if (!out) throw IoError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw IoError(path.string() + ": missing header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path.string() + ": bad header: " + e.what());
  }
  try {
    if (header.at("format") != kFormat || header.at("version") != kFormatVersion) {
      throw IoError(path.string() + ": unsupported checkpoint format");
    }
    const ModelConfig config = config_from_json(header.at("config"));
    std::vector<char> payload(header.at("payload_bytes").get<std::size_t>());
    in.read(payload.data(), static_cast<std::streamsize>(payload.size()));
    if (static_cast<std::size_t>(in.gcount()) != payload.size()) {
      throw IoError(path.string() + ": truncated payload");
    }
    std::vector<Parameter> params;
    for (const auto& entry : header.at("arrays")) {
      const auto shape = entry.at("shape").get<std::vector<std::size_t>>();
      const auto offset = entry.at("offset").get<std::size_t>();
      if (shape.size() != 2) throw IoError(path.string() + ": arrays must be 2-D");
      Tensor t(shape[0], shape[1]);
      if (offset + t.size() * 8 > payload.size()) {
        throw IoError(path.string() + ": array exceeds payload");
      }
      for (std::size_t i = 0; i < t.size(); ++i) {
        std::uint64_t bits = 0;
        std::memcpy(&bits, payload.data() + offset + 8 * i, 8);
        t[i] = std::bit_cast<double>(to_little_endian(bits));
      }
      params.push_back({entry.at("name").get<std::string>(), std::move(t)});
    }
    Checkpoint ck{Model::from_parameters(config, std::move(params)), std::nullopt};
    if (header.contains("vocab")) {
      ck.vocab = data::Vocab::from_tokens(header.at("vocab").get<std::vector<std::string>>());
    }
    return ck;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path.string() + ": bad header: " + e.what());
  }
}

}  // namespace adkd::model
