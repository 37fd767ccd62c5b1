#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace adkd::data {

inline constexpr std::size_t kPadId = 0;
inline constexpr std::size_t kUnkId = 1;
inline constexpr std::size_t kClsId = 2;
inline constexpr std::size_t kSepId = 3;
inline constexpr std::size_t kNumSpecial = 4;

inline constexpr std::string_view kPad = "[PAD]";
inline constexpr std::string_view kUnk = "[UNK]";
inline constexpr std::string_view kCls = "[CLS]";
inline constexpr std::string_view kSep = "[SEP]";

struct Example {
  std::string text_a;
  std::optional<std::string> text_b;
  double label = 0.0;  // class id for classification, score for regression
};

// num_labels == 1 denotes a regression task.
struct TaskSchema {
  bool pair = false;
  std::size_t num_labels = 2;

  bool regression() const { return num_labels == 1; }
};

struct TokenSequence {
  std::vector<std::size_t> ids;
  std::vector<unsigned char> mask;  // 0 exactly at [PAD]

  std::size_t size() const { return ids.size(); }
  // Number of leading positions with mask 1.
  std::size_t length() const;
  // Copy without trailing [PAD] positions.
  TokenSequence trimmed() const;
  // Copy padded with [PAD] up to n positions.
  TokenSequence padded(std::size_t n) const;

  bool operator==(const TokenSequence&) const = default;
};

bool is_special(std::size_t id);
// A word position: anything but [PAD], [CLS] and [SEP]. [UNK] stands for a word.
bool is_content(std::size_t id);

class Vocab {
 public:
  Vocab();
  // Specials first, then words of the given examples by (frequency desc,
  // lexicographic).
  static Vocab build(std::span<const Example> examples);
  // Tokens in id order; the first four must be the specials.
  static Vocab from_tokens(std::vector<std::string> tokens);

  std::size_t id(std::string_view token) const;  // [UNK] id when absent
  bool contains(std::string_view token) const;
  const std::string& token(std::size_t id) const;
  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  bool operator==(const Vocab& other) const { return tokens_ == other.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Lowercased split on whitespace; every punctuation character is a token.
std::vector<std::string> split_words(std::string_view text);

// [CLS] a [SEP] (b [SEP]) padded with [PAD] to max_len. Over-long inputs are
// truncated word by word (from the longer segment for pairs).
TokenSequence tokenize(const Vocab& vocab, const Example& example, std::size_t max_len);

// GLUE-style TSV with a header row. Columns are found by name: `sentence`
// (single) or `sentence1`/`sentence2` (pair), plus `label`.
std::vector<Example> load_tsv(const std::filesystem::path& path, const TaskSchema& schema);
void write_tsv(const std::filesystem::path& path, std::span<const Example> examples, bool pair);

// Example indices of one epoch: corpus order, or a Fisher–Yates shuffle
// seeded by (seed, epoch).
std::vector<std::size_t> epoch_order(std::size_t count, std::uint64_t seed, std::size_t epoch,
                                     bool shuffle);

struct Batch {
  std::vector<std::size_t> indices;
  std::vector<TokenSequence> sequences;  // padded to the longest member
};

// Single-consumer iterator over padded batches; the last batch may be short.
class BatchIterator {
 public:
  BatchIterator(std::span<const TokenSequence> sequences, std::size_t batch_size,
                std::uint64_t seed, bool shuffle, std::size_t epoch = 0);

  std::optional<Batch> next();
  std::size_t num_batches() const;

 private:
  std::span<const TokenSequence> sequences_;
  std::size_t batch_size_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

// Keyword-detection corpus: filler words plus one or two planted sentiment
// keywords of one polarity; the polarity is the label.
struct SyntheticSpec {
  std::size_t num_train = 2000;
  std::size_t num_dev = 500;
  std::uint64_t seed = 1;
  std::size_t min_words = 4;
  std::size_t max_words = 10;
  double second_keyword_prob = 0.3;
};

struct SyntheticTask {
  std::vector<Example> train;
  std::vector<Example> dev;
};

const std::vector<std::string>& positive_keywords();
const std::vector<std::string>& negative_keywords();
bool is_keyword(std::string_view word);

SyntheticTask make_synthetic_task(const SyntheticSpec& spec);

}  // namespace adkd::data
