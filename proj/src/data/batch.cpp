#include <algorithm>
#include <numeric>
#include <random>

#include "dcebad/data.hpp"
#include "dcebad/errors.hpp"

namespace dcebad::data {

Dataset encode_all(const std::vector<Example>& examples, const Vocab& vocab,
                   std::size_t text_size) {
  Dataset ds;
  ds.text_size = text_size;
  ds.rows.reserve(examples.size());
  ds.labels.reserve(examples.size());
  for (const auto& ex : examples) {
    ds.rows.push_back(encode(ex.text, vocab, text_size));
    ds.labels.push_back(ex.label);
  }
  return ds;
}

Batch make_batch(const Dataset& dataset, const std::vector<std::size_t>& indices) {
  Batch b;
  b.size = indices.size();
  b.text_size = dataset.text_size;
  b.ids.reserve(b.size * b.text_size);
  b.mask.reserve(b.size * b.text_size);
  b.labels.reserve(b.size);
  for (std::size_t i : indices) {
    const EncodedRow& row = dataset.rows.at(i);
    b.ids.insert(b.ids.end(), row.ids.begin(), row.ids.end());
    b.mask.insert(b.mask.end(), row.mask.begin(), row.mask.end());
    b.labels.push_back(dataset.labels[i]);
  }
  return b;
}

BatchIterator::BatchIterator(const Dataset& dataset, std::size_t batch_size, bool shuffle,
                             std::uint64_t seed, std::uint64_t epoch)
    : dataset_(&dataset), batch_size_(batch_size), order_(dataset.size()) {
  if (batch_size == 0) throw ContractError("batch_iter: batch_size must be >= 1");
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  if (shuffle) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(epoch >> 32)};
    std::mt19937_64 rng(seq);
    std::shuffle(order_.begin(), order_.end(), rng);
  }
}

std::optional<Batch> BatchIterator::next() {
  if (cursor_ >= order_.size()) return std::nullopt;
  const std::size_t end = std::min(order_.size(), cursor_ + batch_size_);
  std::vector<std::size_t> idx(order_.begin() + static_cast<std::ptrdiff_t>(cursor_),
                               order_.begin() + static_cast<std::ptrdiff_t>(end));
  cursor_ = end;
  return make_batch(*dataset_, idx);
}

}  // namespace dcebad::data
