#pragma once

#include <string>
#include <vector>

#include "json.hpp"

#include "dcebad/cli/gradcheck_suite.hpp"
#include "dcebad/metrics.hpp"
#include "dcebad/train.hpp"

namespace dcebad::cli {

/// Scores plus the confusion matrix they came from. Precision, recall and F1
/// aggregates are macro averages and are labelled as such.
nlohmann::ordered_json metrics_to_json(const train::ConfusionMatrix& cm,
                                       const std::vector<std::string>& labels);

/// Overall scores followed by the per-class precision/recall/F1 table.
std::string format_metrics(const train::ConfusionMatrix& cm, const std::vector<std::string>& labels);

/// Evaluation points and per-batch losses. Wall time is kept in its own field.
nlohmann::ordered_json history_to_json(const train::TrainHistory& history, double wall_seconds);

struct BenchmarkRow {
  std::string variant;
  train::ConfusionMatrix confusion;
  std::size_t parameters = 0;
  std::size_t batches_trained = 0;
  std::size_t best_batch = 0;
  double wall_seconds = 0.0;
  std::string config_hash;
};

nlohmann::ordered_json benchmark_to_json(const std::vector<BenchmarkRow>& rows,
                                         const std::vector<std::string>& labels);

/// Comparison table (accuracy, macro precision, macro F1 per variant) and the
/// per-class F1 grid, one row per variant.
std::string format_benchmark(const std::vector<BenchmarkRow>& rows,
                             const std::vector<std::string>& labels);

nlohmann::ordered_json gradcheck_to_json(const GradcheckReport& report);
std::string format_gradcheck(const GradcheckReport& report);

/// Renders rows as space-separated columns padded to a common width. The
/// first column is left-aligned, the others right-aligned.
std::string align_columns(const std::vector<std::vector<std::string>>& rows);

std::string fixed(double value, int digits = 4);

}  // namespace dcebad::cli
