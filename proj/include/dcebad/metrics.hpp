#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace dcebad::train {

/// K x K counts; rows are the true class, columns the predicted class.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t classes = 0);

  std::size_t classes() const { return k_; }
  void add(std::size_t truth, std::size_t predicted, std::uint64_t count = 1);
  void merge(const ConfusionMatrix& other);

  std::uint64_t at(std::size_t truth, std::size_t predicted) const {
    return counts_[truth * k_ + predicted];
  }
  std::uint64_t total() const;
  std::uint64_t trace() const;
  std::uint64_t row_sum(std::size_t truth) const;
  std::uint64_t col_sum(std::size_t predicted) const;

  bool operator==(const ConfusionMatrix&) const = default;

 private:
  std::size_t k_;
  std::vector<std::uint64_t> counts_;
};

struct ClassScores {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::uint64_t support = 0;
};

/// Accuracy is trace/total; per-class scores are one-vs-rest; macro scores
/// are unweighted means over every class. 0/0 is taken as 0.
struct MetricsReport {
  double accuracy = 0.0;
  double macro_precision = 0.0;
  double macro_recall = 0.0;
  double macro_f1 = 0.0;
  std::vector<ClassScores> per_class;
  /// Classes for which a 0/0 ratio was resolved to 0.
  std::vector<std::size_t> degenerate_classes;
};

MetricsReport compute_metrics(const ConfusionMatrix& cm);

double micro_precision(const ConfusionMatrix& cm);
double micro_recall(const ConfusionMatrix& cm);

}  // namespace dcebad::train
