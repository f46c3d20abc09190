#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "dcebad/cli/config.hpp"
#include "dcebad/cli/gradcheck_suite.hpp"
#include "dcebad/cli/report.hpp"

namespace dcebad::cli {

/// Train/val/test sets encoded against a vocabulary built from the training split.
struct PreparedData {
  std::vector<std::string> labels;
  data::Vocab vocab;
  data::Corpus train_corpus, val_corpus, test_corpus;
  data::Dataset train, val, test;
  std::vector<std::string> warnings;
};

/// Loads `config.data` and either splits it or reads the explicit val/test files.
PreparedData prepare_data(const RunConfig& config);

/// Copies the loaded matrix into the model's token table.
data::PretrainedEmbeddings apply_embeddings(zoo::Model& model, const std::filesystem::path& path,
                        const data::Vocab& vocab, std::uint64_t seed);

struct TrainOutcome {
  train::TrainHistory history;
  train::ConfusionMatrix test_confusion;
  std::vector<std::string> labels;
};

/// Writes config.json, model.ckpt, history.json, metrics.json and splits/*.tsv
/// under config.out. Test metrics come from the checkpointed (32-bit) weights.
TrainOutcome cmd_train(const RunConfig& config, std::ostream& log);

/// Scores a checkpoint on a TSV file; writes eval_metrics.json when `out_dir` is set.
train::ConfusionMatrix cmd_eval(const std::filesystem::path& checkpoint,
                                const std::filesystem::path& dataset,
                                const std::optional<std::filesystem::path>& out_dir,
                                std::size_t batch_size, std::size_t threads, std::ostream& out);

/// One JSON line per text: label name, label id and the probability vector.
std::vector<zoo::Prediction> cmd_predict(const std::filesystem::path& checkpoint,
                                         const std::vector<std::string>& texts, std::ostream& out);

/// Trains and tests every variant on one shared split; writes benchmark.json and benchmark.txt.
std::vector<BenchmarkRow> cmd_benchmark(const RunConfig& config,
                                        const std::vector<zoo::Variant>& variants,
                                        std::ostream& log);

GradcheckReport cmd_gradcheck(const GradcheckOptions& options, std::ostream& out);

/// Full command-line entry point; returns the process exit code.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace dcebad::cli
