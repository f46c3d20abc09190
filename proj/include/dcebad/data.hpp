#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "dcebad/tensor.hpp"

namespace dcebad::data {

inline constexpr std::size_t kPadId = 0;
inline constexpr std::size_t kUnkId = 1;
inline constexpr std::size_t kClsId = 2;
inline constexpr std::size_t kSepId = 3;
inline constexpr std::size_t kNumReserved = 4;

inline constexpr std::string_view kPadToken = "[PAD]";
inline constexpr std::string_view kUnkToken = "[UNK]";
inline constexpr std::string_view kClsToken = "[CLS]";
inline constexpr std::string_view kSepToken = "[SEP]";

/// Decodes UTF-8 into code points; nullopt on any malformed, overlong or surrogate sequence.
std::optional<std::u32string> decode_utf8(std::string_view text);
std::string encode_utf8(char32_t cp);
bool is_unicode_space(char32_t cp);

/// [CLS], one token per non-whitespace character, [SEP]. Throws IngestError on bad UTF-8.
std::vector<std::string> tokenize(std::string_view text);

struct Example {
  std::string text;
  std::size_t label = 0;
};

class Vocab {
 public:
  /// The four reserved tokens only.
  Vocab();

  /// Characters with frequency >= min_freq, ordered by (frequency desc, first occurrence asc).
  static Vocab build(const std::vector<Example>& examples, std::size_t min_freq = 1);
  /// Restores a vocabulary from its id-ordered token list (reserved tokens first).
  static Vocab from_tokens(std::vector<std::string> tokens);

  std::size_t size() const { return tokens_.size(); }
  std::size_t id(std::string_view token) const;
  const std::string& token(std::size_t id) const { return tokens_.at(id); }
  bool contains(std::string_view token) const;
  const std::vector<std::string>& tokens() const { return tokens_; }

  /// Concatenates the non-reserved tokens of `ids`.
  std::string decode(const std::vector<std::size_t>& ids) const;

  bool operator==(const Vocab& other) const { return tokens_ == other.tokens_; }

 private:
  struct Empty {};
  explicit Vocab(Empty) {}

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct EncodedRow {
  std::vector<std::size_t> ids;
  std::vector<std::uint8_t> mask;
};

/// Fixed-length encoding: truncation keeps the head, the last kept slot is always [SEP].
EncodedRow encode(std::string_view text, const Vocab& vocab, std::size_t text_size);

struct Corpus {
  std::vector<Example> examples;
  std::vector<std::string> labels;
};

/// `text<TAB>label` lines; label ids by first appearance.
Corpus load_tsv(const std::filesystem::path& path);
/// Same format, with label names resolved against a fixed inventory.
Corpus load_tsv(const std::filesystem::path& path, const std::vector<std::string>& labels);
void write_tsv(const std::filesystem::path& path, const Corpus& corpus);

struct Splits {
  std::vector<Example> train, val, test;
  std::vector<std::string> warnings;
};

/// Stratified split by class at the given ratios (default 18:1:1).
Splits split(const std::vector<Example>& examples, std::size_t num_classes,
             std::array<unsigned, 3> ratios = {18, 1, 1}, std::uint64_t seed = 0);

/// Encoded examples ready for batching.
struct Dataset {
  std::size_t text_size = 0;
  std::vector<EncodedRow> rows;
  std::vector<std::size_t> labels;

  std::size_t size() const { return rows.size(); }
};

Dataset encode_all(const std::vector<Example>& examples, const Vocab& vocab,
                   std::size_t text_size);

struct Batch {
  std::size_t size = 0;
  std::size_t text_size = 0;
  std::vector<std::size_t> ids;     // size * text_size, row-major
  std::vector<std::uint8_t> mask;   // 1 on non-[PAD]
  std::vector<std::size_t> labels;  // size
};

Batch make_batch(const Dataset& dataset, const std::vector<std::size_t>& indices);

/// Single-pass stream of batches; the permutation depends only on (seed, epoch).
class BatchIterator {
 public:
  BatchIterator(const Dataset& dataset, std::size_t batch_size, bool shuffle, std::uint64_t seed,
                std::uint64_t epoch = 0);

  std::optional<Batch> next();
  const std::vector<std::size_t>& order() const { return order_; }

 private:
  const Dataset* dataset_;
  std::size_t batch_size_;
  std::size_t cursor_ = 0;
  std::vector<std::size_t> order_;
};

struct EmbeddingHeader {
  std::size_t count = 0;
  std::size_t dim = 0;
};

/// Parses the `count dim` first line of a text embedding file.
EmbeddingHeader parse_embedding_header(std::string_view line);

struct PretrainedEmbeddings {
  EmbeddingHeader header;
  Tensor matrix;  // |vocab| x dim
  /// Covered non-reserved tokens over all non-reserved tokens.
  double coverage = 0.0;
  std::size_t rows_read = 0;
  std::vector<std::string> warnings;
};

/// Rows for vocabulary tokens found in the file are copied verbatim; all other rows,
/// and the reserved tokens, are drawn from N(0, 0.02).
PretrainedEmbeddings load_pretrained_embeddings(const std::filesystem::path& path,
                                                const Vocab& vocab, std::uint64_t seed = 0);

/// Synthetic headline corpus: each class owns a few marker characters mixed
/// into shared noise characters.
struct MarkerCorpusOptions {
  std::size_t classes = 4;
  std::size_t markers_per_class = 3;
  std::size_t train_per_class = 100;
  std::size_t val_per_class = 20;
  std::size_t test_per_class = 20;
  std::size_t min_len = 6;
  std::size_t max_len = 20;
  std::uint64_t seed = 7;
};

struct MarkerCorpus {
  Corpus train, val, test;
};

MarkerCorpus generate_marker_corpus(const MarkerCorpusOptions& options);

}  // namespace dcebad::data
