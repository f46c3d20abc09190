#include "dcebad/metrics.hpp"

#include <numeric>

#include "dcebad/errors.hpp"

namespace dcebad::train {

ConfusionMatrix::ConfusionMatrix(std::size_t classes) : k_(classes), counts_(classes * classes, 0) {}

void ConfusionMatrix::add(std::size_t truth, std::size_t predicted, std::uint64_t count) {
  if (truth >= k_ || predicted >= k_) {
    throw ContractError("confusion matrix: class index outside " + std::to_string(k_) + " classes");
  }
  counts_[truth * k_ + predicted] += count;
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.k_ != k_) throw ContractError("confusion matrix: merging different class counts");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

std::uint64_t ConfusionMatrix::total() const {
  return std::accumulate(counts_.begin(), counts_.end(), std::uint64_t{0});
}

std::uint64_t ConfusionMatrix::trace() const {
  std::uint64_t t = 0;
  for (std::size_t i = 0; i < k_; ++i) t += at(i, i);
  return t;
}

std::uint64_t ConfusionMatrix::row_sum(std::size_t truth) const {
  std::uint64_t s = 0;
  for (std::size_t j = 0; j < k_; ++j) s += at(truth, j);
  return s;
}

std::uint64_t ConfusionMatrix::col_sum(std::size_t predicted) const {
  std::uint64_t s = 0;
  for (std::size_t i = 0; i < k_; ++i) s += at(i, predicted);
  return s;
}

namespace {

double ratio(double num, double den, bool& degenerate) {
  if (den == 0.0) {
    degenerate = true;
    return 0.0;
  }
  return num / den;
}

}  // namespace

MetricsReport compute_metrics(const ConfusionMatrix& cm) {
  const std::uint64_t total = cm.total();
  if (cm.classes() == 0 || total == 0) throw ContractError("compute_metrics: empty confusion matrix");

  MetricsReport r;
  r.accuracy = static_cast<double>(cm.trace()) / static_cast<double>(total);
  r.per_class.resize(cm.classes());
  for (std::size_t k = 0; k < cm.classes(); ++k) {
    const auto tp = static_cast<double>(cm.at(k, k));
    const auto fp = static_cast<double>(cm.col_sum(k)) - tp;
    const auto fn = static_cast<double>(cm.row_sum(k)) - tp;
    bool degenerate = false;
    ClassScores& s = r.per_class[k];
    s.precision = ratio(tp, tp + fp, degenerate);
    s.recall = ratio(tp, tp + fn, degenerate);
    s.f1 = ratio(2.0 * s.precision * s.recall, s.precision + s.recall, degenerate);
    s.support = cm.row_sum(k);
    if (degenerate) r.degenerate_classes.push_back(k);
    r.macro_precision += s.precision;
    r.macro_recall += s.recall;
    r.macro_f1 += s.f1;
  }
  const auto k = static_cast<double>(cm.classes());
  r.macro_precision /= k;
  r.macro_recall /= k;
  r.macro_f1 /= k;
  return r;
}

double micro_precision(const ConfusionMatrix& cm) {
  std::uint64_t tp = 0, fp = 0;
  for (std::size_t k = 0; k < cm.classes(); ++k) {
    tp += cm.at(k, k);
    fp += cm.col_sum(k) - cm.at(k, k);
  }
  return tp + fp == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
}

double micro_recall(const ConfusionMatrix& cm) {
  std::uint64_t tp = 0, fn = 0;
  for (std::size_t k = 0; k < cm.classes(); ++k) {
    tp += cm.at(k, k);
    fn += cm.row_sum(k) - cm.at(k, k);
  }
  return tp + fn == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fn);
}

}  // namespace dcebad::train
