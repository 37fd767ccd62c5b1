#include "adkd/data.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

#include "adkd/errors.hpp"

namespace adkd::data {
namespace {

// Uniform index in [0, n) from a standardised engine, so orders do not depend
// on the standard library's distribution implementation.
std::size_t draw_index(std::mt19937_64& rng, std::size_t n) {
  return static_cast<std::size_t>(rng() % n);
}

double draw_unit(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t tab = line.find('\t', start);
    fields.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
    if (tab == std::string::npos) break;
    start = tab + 1;
  }
  return fields;
}

std::string strip_cr(std::string s) {
  if (!s.empty() && s.back() == '\r') s.pop_back();
  return s;
}

const std::vector<std::string>& filler_words() {
  static const std::vector<std::string> words = {
      "seem",    "and",    "the",     "film",   "story",   "a",      "is",     "it",
      "this",    "movie",  "of",      "with",   "cast",    "plot",   "scenes", "its",
      "director", "some",  "about",   "every",  "was",     "feels",  "quite",  "rather",
      "at",      "times",  "ending",  "script", "actors",  "music",  "camera", "that",
      "then",    "still",  "mostly",  "one",    "two",     "hours",  "into",   "after",
      "before",  "while",  "city",    "family", "night",   "world",  "often",  "look",
      "seems",   "come",   "across",  "as",     "slightly", "also",  "more",   "less",
      "than",    "over",   "under",   "where",  "when",    "again",  "plays",  "role"};
  return words;
}

}  // namespace

std::size_t TokenSequence::length() const {
  std::size_t n = 0;
  while (n < mask.size() && mask[n] != 0) ++n;
  return n;
}

TokenSequence TokenSequence::trimmed() const {
  std::size_t end = mask.size();
  while (end > 0 && mask[end - 1] == 0) --end;
  TokenSequence out;
  out.ids.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(end));
  out.mask.assign(mask.begin(), mask.begin() + static_cast<std::ptrdiff_t>(end));
  return out;
}

TokenSequence TokenSequence::padded(std::size_t n) const {
  TokenSequence out = *this;
  if (n > out.ids.size()) {
    out.ids.resize(n, kPadId);
    out.mask.resize(n, 0);
  }
  return out;
}

bool is_special(std::size_t id) { return id < kNumSpecial; }
bool is_content(std::size_t id) { return id == kUnkId || !is_special(id); }

Vocab::Vocab() {
  for (std::string_view t : {kPad, kUnk, kCls, kSep}) {
    index_.emplace(std::string(t), tokens_.size());
    tokens_.emplace_back(t);
  }
}

Vocab Vocab::from_tokens(std::vector<std::string> tokens) {
  const std::string_view specials[] = {kPad, kUnk, kCls, kSep};
  if (tokens.size() < kNumSpecial) throw DataError("vocab: missing special tokens");
  for (std::size_t i = 0; i < kNumSpecial; ++i) {
    if (tokens[i] != specials[i]) {
      throw DataError("vocab: id " + std::to_string(i) + " must be " + std::string(specials[i]));
    }
  }
  Vocab v;
  v.tokens_.clear();
  v.index_.clear();
  for (auto& t : tokens) {
    if (!v.index_.emplace(t, v.tokens_.size()).second) {
      throw DataError("vocab: duplicate token '" + t + "'");
    }
    v.tokens_.push_back(std::move(t));
  }
  return v;
}

Vocab Vocab::build(std::span<const Example> examples) {
  std::map<std::string, std::size_t> counts;
  for (const Example& ex : examples) {
    for (auto& w : split_words(ex.text_a)) ++counts[w];
    if (ex.text_b) {
      for (auto& w : split_words(*ex.text_b)) ++counts[w];
    }
  }
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> tokens{std::string(kPad), std::string(kUnk), std::string(kCls),
                                  std::string(kSep)};
  for (auto& [word, count] : ranked) {
    if (word == kPad || word == kUnk || word == kCls || word == kSep) continue;
    tokens.push_back(word);
  }
  return from_tokens(std::move(tokens));
}

std::size_t Vocab::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnkId : it->second;
}

bool Vocab::contains(std::string_view token) const {
  return index_.contains(std::string(token));
}

const std::string& Vocab::token(std::size_t id) const {
  if (id >= tokens_.size()) throw DataError("vocab: id " + std::to_string(id) + " out of range");
  return tokens_[id];
}

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> words;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) words.push_back(std::move(current));
    current.clear();
  };
  for (char raw : text) {
    const auto ch = static_cast<unsigned char>(raw);
    if (std::isspace(ch)) {
      flush();
    } else if (std::ispunct(ch)) {
      flush();
      words.emplace_back(1, raw);
    } else {
      current.push_back(static_cast<char>(std::tolower(ch)));
    }
  }
  flush();
  return words;
}

TokenSequence tokenize(const Vocab& vocab, const Example& example, std::size_t max_len) {
  std::vector<std::string> a = split_words(example.text_a);
  std::vector<std::string> b;
  const bool pair = example.text_b.has_value();
  if (pair) b = split_words(*example.text_b);

  const std::size_t overhead = pair ? 3 : 2;
  const std::size_t budget = max_len > overhead ? max_len - overhead : 0;
  while (a.size() + b.size() > budget) {
    if (b.size() > a.size()) {
      b.pop_back();
    } else {
      a.pop_back();
    }
  }

  TokenSequence seq;
  seq.ids.push_back(kClsId);
  for (const auto& w : a) seq.ids.push_back(vocab.id(w));
  seq.ids.push_back(kSepId);
  if (pair) {
    for (const auto& w : b) seq.ids.push_back(vocab.id(w));
    seq.ids.push_back(kSepId);
  }
  seq.mask.assign(seq.ids.size(), 1);
  return seq.padded(max_len);
}

std::vector<Example> load_tsv(const std::filesystem::path& path, const TaskSchema& schema) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw DataError(path.string() + ": empty file, expected header");
  const auto header = split_tabs(strip_cr(line));
  auto column = [&](std::string_view name) -> std::size_t {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) {
      throw DataError(path.string() + ": missing column '" + std::string(name) + "'");
    }
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t col_a = column(schema.pair ? "sentence1" : "sentence");
  const std::size_t col_b = schema.pair ? column("sentence2") : 0;
  const std::size_t col_label = column("label");
  const std::size_t needed = std::max({col_a, col_b, col_label}) + 1;

  std::vector<Example> examples;
  std::vector<std::string> problems;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    line = strip_cr(line);
    if (line.empty()) continue;
    const auto fields = split_tabs(line);
    const std::string where = path.string() + ":" + std::to_string(line_no);
    if (fields.size() < needed) {
      problems.push_back(where + ": expected at least " + std::to_string(needed) + " columns");
      continue;
    }
    Example ex;
    ex.text_a = fields[col_a];
    if (schema.pair) ex.text_b = fields[col_b];
    const std::string& raw = fields[col_label];
    if (schema.regression()) {
      char* end = nullptr;
      const double v = std::strtod(raw.c_str(), &end);
      if (raw.empty() || end != raw.c_str() + raw.size() || !std::isfinite(v)) {
        problems.push_back(where + ": unparseable score '" + raw + "'");
        continue;
      }
      ex.label = v;
    } else {
      long long v = -1;
      const auto [ptr, ec] = std::from_chars(raw.data(), raw.data() + raw.size(), v);
      if (ec != std::errc() || ptr != raw.data() + raw.size()) {
        problems.push_back(where + ": unparseable label '" + raw + "'");
        continue;
      }
      if (v < 0 || static_cast<std::size_t>(v) >= schema.num_labels) {
        problems.push_back(where + ": label " + raw + " outside [0, " +
                           std::to_string(schema.num_labels) + ")");
        continue;
      }
      ex.label = static_cast<double>(v);
    }
    examples.push_back(std::move(ex));
  }
  if (!problems.empty()) {
    std::string msg = "malformed rows:";
    for (const auto& p : problems) msg += "\n  " + p;
    throw DataError(msg);
  }
  return examples;
}

void write_tsv(const std::filesystem::path& path, std::span<const Example> examples, bool pair) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << (pair ? "sentence1\tsentence2\tlabel\n" : "sentence\tlabel\n");
  for (const Example& ex : examples) {
    out << ex.text_a;
    if (pair) out << '\t' << ex.text_b.value_or("");
    std::ostringstream label;
    label.precision(17);
    label << ex.label;
    out << '\t' << label.str() << '\n';
  }
}

std::vector<std::size_t> epoch_order(std::size_t count, std::uint64_t seed, std::size_t epoch,
                                     bool shuffle) {
  std::vector<std::size_t> order(count);
  for (std::size_t i = 0; i < count; ++i) order[i] = i;
  if (shuffle && count > 1) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(epoch)};
    std::mt19937_64 rng(seq);
    for (std::size_t i = count - 1; i > 0; --i) std::swap(order[i], order[draw_index(rng, i + 1)]);
  }
  return order;
}

BatchIterator::BatchIterator(std::span<const TokenSequence> sequences, std::size_t batch_size,
                             std::uint64_t seed, bool shuffle, std::size_t epoch)
    : sequences_(sequences),
      batch_size_(batch_size),
      order_(epoch_order(sequences.size(), seed, epoch, shuffle)) {
  if (batch_size == 0) throw ConfigError("batch size must be >= 1");
}

std::size_t BatchIterator::num_batches() const {
  return (order_.size() + batch_size_ - 1) / batch_size_;
}

std::optional<Batch> BatchIterator::next() {
  if (cursor_ >= order_.size()) return std::nullopt;
  const std::size_t end = std::min(order_.size(), cursor_ + batch_size_);
  Batch batch;
  std::size_t longest = 0;
  for (std::size_t i = cursor_; i < end; ++i) {
    batch.indices.push_back(order_[i]);
    longest = std::max(longest, sequences_[order_[i]].length());
  }
  for (std::size_t idx : batch.indices) {
    batch.sequences.push_back(sequences_[idx].trimmed().padded(longest));
  }
  cursor_ = end;
  return batch;
}

const std::vector<std::string>& positive_keywords() {
  static const std::vector<std::string> words = {"moving", "charming", "witty",    "brilliant",
                                                 "warm",   "gripping", "clever",   "delightful"};
  return words;
}

const std::vector<std::string>& negative_keywords() {
  static const std::vector<std::string> words = {"weird",  "distanced", "dull",    "bland",
                                                 "hollow", "tedious",   "clumsy",  "messy"};
  return words;
}

bool is_keyword(std::string_view word) {
  auto has = [&](const std::vector<std::string>& list) {
    return std::find(list.begin(), list.end(), word) != list.end();
  };
  return has(positive_keywords()) || has(negative_keywords());
}

SyntheticTask make_synthetic_task(const SyntheticSpec& spec) {
  if (spec.min_words < 2 || spec.max_words < spec.min_words) {
    throw ConfigError("synthetic: need 2 <= min_words <= max_words");
  }
  std::mt19937_64 rng(spec.seed);
  const auto& fillers = filler_words();
  auto make = [&] {
    const std::size_t span = spec.max_words - spec.min_words + 1;
    const std::size_t len = spec.min_words + draw_index(rng, span);
    std::vector<std::string> words(len);
    for (auto& w : words) w = fillers[draw_index(rng, fillers.size())];
    const bool positive = draw_unit(rng) < 0.5;
    const auto& keys = positive ? positive_keywords() : negative_keywords();
    const std::size_t planted = draw_unit(rng) < spec.second_keyword_prob ? 2 : 1;
    std::vector<std::size_t> slots;
    while (slots.size() < planted) {
      const std::size_t pos = draw_index(rng, len);
      if (std::find(slots.begin(), slots.end(), pos) == slots.end()) slots.push_back(pos);
    }
    for (std::size_t pos : slots) words[pos] = keys[draw_index(rng, keys.size())];
    Example ex;
    for (std::size_t i = 0; i < words.size(); ++i) ex.text_a += (i ? " " : "") + words[i];
    ex.label = positive ? 1.0 : 0.0;
    return ex;
  };
  SyntheticTask task;
  for (std::size_t i = 0; i < spec.num_train; ++i) task.train.push_back(make());
  for (std::size_t i = 0; i < spec.num_dev; ++i) task.dev.push_back(make());
  return task;
}

}  // namespace adkd::data
