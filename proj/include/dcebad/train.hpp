#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "dcebad/data.hpp"
#include "dcebad/gradcheck.hpp"
#include "dcebad/metrics.hpp"
#include "dcebad/model.hpp"

namespace dcebad::train {

struct AdamConfig {
  double learning_rate = 5e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First and second moments per parameter.
struct AdamState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;

  static AdamState for_params(std::span<const Tensor> params);
};

/// One bias-corrected Adam update at step t >= 1, reading each parameter's gradient.
void adam_step(std::span<const Tensor> params, AdamState& state, std::size_t t,
               const AdamConfig& config);

struct TrainConfig {
  std::size_t batch_size = 128;
  double learning_rate = 5e-5;
  std::size_t epochs = 3;
  /// Batches without a strict validation-accuracy improvement before halting.
  std::size_t stop_go = 1000;
  std::size_t eval_every = 100;
  std::uint64_t seed = 1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t threads = 1;

  void validate() const;
  AdamConfig adam() const { return {learning_rate, beta1, beta2, adam_eps}; }
  bool operator==(const TrainConfig&) const = default;
};

/// Anything the training loop can optimise.
class Trainable {
 public:
  virtual ~Trainable() = default;
  virtual std::vector<Tensor> parameters() const = 0;
  virtual std::size_t num_classes() const = 0;
  virtual Tensor forward(Tape& tape, const data::Batch& batch, zoo::Mode mode,
                         std::mt19937_64* rng) const = 0;
  virtual std::vector<std::vector<double>> snapshot() const = 0;
  virtual void restore(const std::vector<std::vector<double>>& values) = 0;
};

class ModelTrainable final : public Trainable {
 public:
  explicit ModelTrainable(zoo::Model& model) : model_(&model) {}
  std::vector<Tensor> parameters() const override;
  std::size_t num_classes() const override { return model_->config().num_classes; }
  Tensor forward(Tape& tape, const data::Batch& batch, zoo::Mode mode,
                 std::mt19937_64* rng) const override {
    return model_->forward(tape, batch, mode, rng);
  }
  std::vector<std::vector<double>> snapshot() const override { return model_->snapshot(); }
  void restore(const std::vector<std::vector<double>>& values) override { model_->restore(values); }

 private:
  zoo::Model* model_;
};

struct EvalResult {
  ConfusionMatrix confusion;
  double mean_loss = 0.0;
  /// Predicted label per example, dataset order.
  std::vector<std::size_t> predictions;
};

/// Eval-mode pass over the dataset, sharded over `threads` workers with one tape each.
EvalResult evaluate_detailed(const Trainable& model, const data::Dataset& dataset,
                             std::size_t batch_size = 128, std::size_t threads = 1);
ConfusionMatrix evaluate(const Trainable& model, const data::Dataset& dataset,
                         std::size_t batch_size = 128, std::size_t threads = 1);

struct EvalPoint {
  std::size_t batch = 0;
  /// Mean training loss over the batches since the previous evaluation.
  std::optional<double> train_loss;
  double val_loss = 0.0;
  double val_accuracy = 0.0;
};

enum class StopReason { epochs_done, early_stop };

struct TrainHistory {
  std::vector<EvalPoint> points;
  std::vector<double> batch_losses;
  double best_val_accuracy = 0.0;
  std::size_t best_batch = 0;
  std::size_t batches_trained = 0;
  StopReason stop_reason = StopReason::epochs_done;
};

/// Trains with Adam and leaves `model` holding the best-validation snapshot.
///
/// Validation runs at batch 0 and every `eval_every` batches. At each such
/// boundary the loop halts, before evaluating, once more than `stop_go`
/// batches have passed since the best accuracy was reached.
TrainHistory train(Trainable& model, const data::Dataset& train_set, const data::Dataset& val_set,
                   const TrainConfig& config);

}  // namespace dcebad::train
