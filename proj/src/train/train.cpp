#include "dcebad/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <thread>

#include "dcebad/errors.hpp"

namespace dcebad::train {

AdamState AdamState::for_params(std::span<const Tensor> params) {
  AdamState s;
  for (const auto& p : params) {
    s.m.emplace_back(p.numel(), 0.0);
    s.v.emplace_back(p.numel(), 0.0);
  }
  return s;
}

void adam_step(std::span<const Tensor> params, AdamState& state, std::size_t t,
               const AdamConfig& config) {
  if (t == 0) throw ContractError("adam_step: step counter starts at 1");
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw DimensionError("adam_step: optimizer state holds " + std::to_string(state.m.size()) +
                         " slots for " + std::to_string(params.size()) + " parameters");
  }
  const double correction1 = 1.0 - std::pow(config.beta1, static_cast<double>(t));
  const double correction2 = 1.0 - std::pow(config.beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor p = params[i];
    auto& m = state.m[i];
    auto& v = state.v[i];
    if (m.size() != p.numel() || v.size() != p.numel()) {
      throw DimensionError("adam_step: state shape mismatch for parameter " + std::to_string(i));
    }
    auto values = p.mutable_values();
    auto grad = p.grad();
    for (std::size_t j = 0; j < values.size(); ++j) {
      const double g = grad[j];
      m[j] = config.beta1 * m[j] + (1.0 - config.beta1) * g;
      v[j] = config.beta2 * v[j] + (1.0 - config.beta2) * g * g;
      const double m_hat = m[j] / correction1;
      const double v_hat = v[j] / correction2;
      values[j] -= config.learning_rate * m_hat / (std::sqrt(v_hat) + config.eps);
    }
  }
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("train config: " + msg); };
  if (batch_size == 0) fail("batch_size must be positive");
  if (!(learning_rate > 0.0)) fail("learning_rate must be positive");
  if (stop_go == 0 || eval_every == 0) fail("stop_go and eval_every must be positive");
  if (stop_go < eval_every) fail("stop_go must be at least eval_every");
  if (!(beta1 > 0.0 && beta1 < 1.0 && beta2 > 0.0 && beta2 < 1.0)) fail("betas must lie in (0, 1)");
  if (!(adam_eps > 0.0)) fail("adam epsilon must be positive");
  if (threads == 0) fail("threads must be positive");
}

std::vector<Tensor> ModelTrainable::parameters() const {
  std::vector<Tensor> out;
  for (const auto& p : model_->parameters()) out.push_back(p.tensor);
  return out;
}

// ---------------------------------------------------------------------------

namespace {

double row_nll(std::span<const double> logits, std::size_t label) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double l : logits) z += std::exp(l - mx);
  return mx + std::log(z) - logits[label];
}

void evaluate_range(const Trainable& model, const data::Dataset& dataset, std::size_t begin,
                    std::size_t end, std::size_t batch_size, std::vector<double>& losses,
                    std::vector<std::size_t>& predictions) {
  for (std::size_t start = begin; start < end; start += batch_size) {
    const std::size_t stop = std::min(end, start + batch_size);
    std::vector<std::size_t> idx(stop - start);
    std::iota(idx.begin(), idx.end(), start);
    const data::Batch batch = data::make_batch(dataset, idx);
    Tape tape;
    const Tensor logits = model.forward(tape, batch, zoo::Mode::eval, nullptr);
    const std::size_t k = logits.cols();
    for (std::size_t b = 0; b < batch.size; ++b) {
      const auto row = logits.values().subspan(b * k, k);
      losses[start + b] = row_nll(row, batch.labels[b]);
      predictions[start + b] =
          static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
    }
  }
}

}  // namespace

EvalResult evaluate_detailed(const Trainable& model, const data::Dataset& dataset,
                             std::size_t batch_size, std::size_t threads) {
  if (dataset.size() == 0) throw ContractError("evaluate: empty dataset");
  if (batch_size == 0 || threads == 0) throw ContractError("evaluate: batch_size and threads must be positive");
  const std::size_t n = dataset.size();
  std::vector<double> losses(n);
  std::vector<std::size_t> predictions(n);

  const std::size_t workers = std::min(threads, n);
  if (workers == 1) {
    evaluate_range(model, dataset, 0, n, batch_size, losses, predictions);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(workers);
    const std::size_t chunk = (n + workers - 1) / workers;
    for (std::size_t w = 0; w < workers; ++w) {
      const std::size_t begin = w * chunk, end = std::min(n, begin + chunk);
      pool.emplace_back([&, w, begin, end] {
        try {
          evaluate_range(model, dataset, begin, end, batch_size, losses, predictions);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }

  EvalResult r{ConfusionMatrix(model.num_classes()), 0.0, std::move(predictions)};
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    r.confusion.add(dataset.labels[i], r.predictions[i]);
    total += losses[i];
  }
  r.mean_loss = total / static_cast<double>(n);
  return r;
}

ConfusionMatrix evaluate(const Trainable& model, const data::Dataset& dataset,
                         std::size_t batch_size, std::size_t threads) {
  return evaluate_detailed(model, dataset, batch_size, threads).confusion;
}

TrainHistory train(Trainable& model, const data::Dataset& train_set, const data::Dataset& val_set,
                   const TrainConfig& config) {
  config.validate();
  if (train_set.size() == 0 || val_set.size() == 0) {
    throw ContractError("train: training and validation sets must be nonempty");
  }
  TrainHistory history;
  if (config.epochs == 0) return history;

  const std::vector<Tensor> params = model.parameters();
  AdamState adam = AdamState::for_params(params);
  const AdamConfig adam_cfg = config.adam();
  std::mt19937_64 dropout_rng(config.seed ^ 0x9E3779B97F4A7C15ULL);

  auto validate_at = [&](std::size_t batch_index, std::optional<double> train_loss) {
    const EvalResult r = evaluate_detailed(model, val_set, config.batch_size, config.threads);
    const double acc = static_cast<double>(r.confusion.trace()) /
                       static_cast<double>(r.confusion.total());
    history.points.push_back({batch_index, train_loss, r.mean_loss, acc});
    return acc;
  };

  std::vector<std::vector<double>> best = model.snapshot();
  history.best_val_accuracy = validate_at(0, std::nullopt);
  history.best_batch = 0;

  std::size_t step = 0;
  double window_loss = 0.0;
  std::size_t window_count = 0;
  bool stopped = false;
  for (std::size_t epoch = 0; epoch < config.epochs && !stopped; ++epoch) {
    data::BatchIterator it(train_set, config.batch_size, true, config.seed, epoch);
    while (auto batch = it.next()) {
      for (Tensor p : params) p.zero_grad();
      {
        Tape tape;
        const Tensor logits = model.forward(tape, *batch, zoo::Mode::train, &dropout_rng);
        const Tensor loss = tape.cross_entropy(logits, batch->labels);
        if (!std::isfinite(loss.item())) throw NumericError("train: non-finite loss");
        if (loss.node_id()) tape.backward(loss);
        history.batch_losses.push_back(loss.item());
        window_loss += loss.item();
        ++window_count;
      }
      ++step;
      adam_step(params, adam, step, adam_cfg);

      if (step % config.eval_every == 0) {
        if (step - history.best_batch > config.stop_go) {
          history.stop_reason = StopReason::early_stop;
          stopped = true;
          break;
        }
        const double acc = validate_at(step, window_loss / static_cast<double>(window_count));
        window_loss = 0.0;
        window_count = 0;
        if (acc > history.best_val_accuracy) {
          history.best_val_accuracy = acc;
          history.best_batch = step;
          best = model.snapshot();
        }
      }
    }
  }
  if (!stopped && window_count > 0) {
    const double acc = validate_at(step, window_loss / static_cast<double>(window_count));
    if (acc > history.best_val_accuracy) {
      history.best_val_accuracy = acc;
      history.best_batch = step;
      best = model.snapshot();
    }
  }
  history.batches_trained = step;
  model.restore(best);
  return history;
}

}  // namespace dcebad::train
