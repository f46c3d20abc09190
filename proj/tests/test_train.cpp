#include <cmath>
#include <cstring>
#include <random>

#include "doctest.h"
#include "oracles.hpp"

#include "dcebad/errors.hpp"
#include "dcebad/metrics.hpp"
#include "dcebad/train.hpp"

using namespace dcebad;
using namespace dcebad::train;

namespace {

/// Logits do not depend on any parameter: the tape records nothing and Adam
/// sees zero gradients, so validation accuracy is fixed forever.
class FrozenStub final : public Trainable {
 public:
  explicit FrozenStub(std::vector<double> logits) : logits_(std::move(logits)) {}
  std::vector<Tensor> parameters() const override { return {param_}; }
  std::size_t num_classes() const override { return logits_.size(); }
  Tensor forward(Tape&, const data::Batch& batch, zoo::Mode, std::mt19937_64*) const override {
    ++forward_calls;
    std::vector<double> v;
    for (std::size_t b = 0; b < batch.size; ++b) v.insert(v.end(), logits_.begin(), logits_.end());
    return Tensor::from({batch.size, logits_.size()}, std::move(v));
  }
  std::vector<std::vector<double>> snapshot() const override {
    return {{param_.values().begin(), param_.values().end()}};
  }
  void restore(const std::vector<std::vector<double>>& values) override {
    ++restores;
    std::copy(values[0].begin(), values[0].end(), param_.mutable_values().begin());
  }

  Tensor param_ = Tensor::row({0.25, -0.5}, true);
  mutable std::size_t forward_calls = 0;
  std::size_t restores = 0;

 private:
  std::vector<double> logits_;
};

/// Mean of per-token class scores: a trainable bag-of-characters classifier.
class BagModel final : public Trainable {
 public:
  BagModel(std::size_t vocab, std::size_t classes, std::uint64_t seed)
      : table_(Tensor::zeros({vocab, classes}, true)) {
    std::mt19937_64 rng(seed);
    for (double& v : table_.mutable_values()) v = oracle::uniform(rng, -0.1, 0.1);
  }
  std::vector<Tensor> parameters() const override { return {table_}; }
  std::size_t num_classes() const override { return table_.cols(); }
  Tensor forward(Tape& tape, const data::Batch& batch, zoo::Mode, std::mt19937_64*) const override {
    const std::size_t T = batch.text_size;
    std::vector<double> avg(batch.size * batch.size * T, 0.0);
    for (std::size_t b = 0; b < batch.size; ++b) {
      double n = 0.0;
      for (std::size_t t = 0; t < T; ++t) n += batch.mask[b * T + t];
      for (std::size_t t = 0; t < T; ++t)
        avg[b * batch.size * T + b * T + t] = batch.mask[b * T + t] / n;
    }
    const Tensor rows = tape.gather_rows(table_, batch.ids);
    return tape.matmul(Tensor::from({batch.size, batch.size * T}, std::move(avg)), rows);
  }
  std::vector<std::vector<double>> snapshot() const override {
    return {{table_.values().begin(), table_.values().end()}};
  }
  void restore(const std::vector<std::vector<double>>& values) override {
    std::copy(values[0].begin(), values[0].end(), table_.mutable_values().begin());
  }

 private:
  Tensor table_;
};

data::Dataset constant_dataset(std::size_t n, std::size_t label) {
  data::Dataset ds;
  ds.text_size = 3;
  for (std::size_t i = 0; i < n; ++i) {
    ds.rows.push_back({{data::kClsId, 4, data::kSepId}, {1, 1, 1}});
    ds.labels.push_back(label);
  }
  return ds;
}

TrainConfig frozen_config(std::size_t stop_go, std::size_t eval_every, std::size_t epochs) {
  TrainConfig c;
  c.batch_size = 1;
  c.epochs = epochs;
  c.stop_go = stop_go;
  c.eval_every = eval_every;
  return c;
}

}  // namespace

TEST_CASE("confusion matrix") {
  ConfusionMatrix cm(3);
  cm.add(0, 0);
  cm.add(0, 2, 4);
  cm.add(2, 1);
  CHECK(cm.total() == 6);
  CHECK(cm.trace() == 1);
  CHECK(cm.row_sum(0) == 5);
  CHECK(cm.col_sum(2) == 4);
  ConfusionMatrix other(3);
  other.add(1, 1, 2);
  cm.merge(other);
  CHECK(cm.at(1, 1) == 2);
  CHECK_THROWS(cm.merge(ConfusionMatrix(2)));
}

TEST_CASE("metrics against the brute-force oracle") {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 1000; ++trial) {
    const ConfusionMatrix cm = oracle::random_confusion(rng);
    const MetricsReport r = compute_metrics(cm);
    const oracle::Scores want = oracle::brute_force_metrics(cm);
    CHECK(std::abs(r.accuracy - want.accuracy) < 1e-12);
    CHECK(std::abs(r.macro_precision - want.macro_precision) < 1e-12);
    CHECK(std::abs(r.macro_recall - want.macro_recall) < 1e-12);
    CHECK(std::abs(r.macro_f1 - want.macro_f1) < 1e-12);
    for (std::size_t k = 0; k < cm.classes(); ++k) {
      CHECK(std::abs(r.per_class[k].f1 - want.f1[k]) < 1e-12);
      const double p = r.per_class[k].precision, rc = r.per_class[k].recall;
      if (p + rc > 0) CHECK(std::abs(r.per_class[k].f1 - 2 * p * rc / (p + rc)) < 1e-12);
    }
    CHECK(r.accuracy == micro_precision(cm));
    CHECK(r.accuracy == micro_recall(cm));
  }
}

TEST_CASE("metrics edge cases") {
  ConfusionMatrix diag(4);
  for (std::size_t k = 0; k < 4; ++k) diag.add(k, k, k + 1);
  const MetricsReport perfect = compute_metrics(diag);
  CHECK(perfect.accuracy == 1.0);
  CHECK(perfect.macro_f1 == 1.0);
  for (const auto& s : perfect.per_class) CHECK(s.f1 == 1.0);

  // Positive class 0: one true positive, one false positive.
  ConfusionMatrix binary(2);
  binary.add(0, 0);
  binary.add(1, 0);
  const MetricsReport b = compute_metrics(binary);
  CHECK(b.per_class[0].precision == 0.5);
  CHECK(b.per_class[0].recall == 1.0);
  CHECK(std::abs(b.per_class[0].f1 - 2.0 / 3.0) < 1e-15);

  ConfusionMatrix absent(3);
  absent.add(0, 0, 3);
  absent.add(1, 0, 1);
  const MetricsReport a = compute_metrics(absent);
  CHECK(a.per_class[2].precision == 0.0);
  CHECK(a.per_class[2].recall == 0.0);
  CHECK(a.per_class[2].f1 == 0.0);
  CHECK(std::find(a.degenerate_classes.begin(), a.degenerate_classes.end(), 2) != a.degenerate_classes.end());
  CHECK(a.macro_f1 == doctest::Approx((2 * 0.75 / 1.75 + 0.0 + 0.0) / 3.0));
  CHECK_THROWS_AS(compute_metrics(ConfusionMatrix(3)), ContractError);
}

TEST_CASE("cross entropy") {
  Tape tape;
  const std::vector<std::size_t> label = {3};
  CHECK(std::abs(tape.cross_entropy(Tensor::filled({1, 10}, 0.7), label).item() - std::log(10.0)) < 1e-12);

  std::vector<double> sure(10, -50.0);
  sure[3] = 50.0;
  CHECK(tape.cross_entropy(Tensor::from({1, 10}, sure), label).item() < 1e-6);

  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    const Tensor logits = oracle::random_tensor(3, 4, rng, false, 4.0);
    const std::vector<std::size_t> labels = {rng() % 4, rng() % 4, rng() % 4};
    double want = 0.0;
    for (std::size_t b = 0; b < 3; ++b) {
      const auto row = logits.values().subspan(b * 4, 4);
      want += oracle::nll({row.begin(), row.end()}, labels[b]) / 3.0;
    }
    CHECK(std::abs(tape.cross_entropy(logits, labels).item() - want) < 1e-12);
  }
  CHECK_THROWS_AS(tape.cross_entropy(Tensor::zeros({2, 3}), label), DimensionError);
}

TEST_CASE("adam") {
  SUBCASE("zero gradients leave parameters unchanged") {
    const Tensor p = Tensor::row({0.5, -1.25, 3.0}, true);
    const std::vector<Tensor> params = {p};
    AdamState s = AdamState::for_params(params);
    for (std::size_t t = 1; t <= 100; ++t) {
      p.zero_grad();
      adam_step(params, s, t, {});
    }
    CHECK(std::vector<double>(p.values().begin(), p.values().end()) == std::vector<double>{0.5, -1.25, 3.0});
  }
  SUBCASE("constant gradients approach lr times the sign") {
    const Tensor p = Tensor::row({0.0, 0.0}, true);
    const std::vector<Tensor> params = {p};
    AdamState s = AdamState::for_params(params);
    const AdamConfig cfg{1e-3, 0.9, 0.999, 1e-8};
    std::vector<double> before;
    for (std::size_t t = 1; t <= 10000; ++t) {
      p.grad()[0] = 0.3;
      p.grad()[1] = -2.0;
      before.assign(p.values().begin(), p.values().end());
      adam_step(params, s, t, cfg);
    }
    CHECK(std::abs((p.value(0) - before[0]) + 1e-3) < 1e-9);
    CHECK(std::abs((p.value(1) - before[1]) - 1e-3) < 1e-9);
  }
  SUBCASE("step counter and state shape") {
    const std::vector<Tensor> params = {Tensor::row({1.0}, true)};
    AdamState s = AdamState::for_params(params);
    CHECK_THROWS_AS(adam_step(params, s, 0, {}), ContractError);
    AdamState wrong;
    CHECK_THROWS_AS(adam_step(params, wrong, 1, {}), DimensionError);
  }
}

TEST_CASE("train config validation") {
  TrainConfig c;
  CHECK_NOTHROW(c.validate());
  auto bad = c;
  bad.stop_go = 50;
  bad.eval_every = 100;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = c;
  bad.batch_size = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = c;
  bad.learning_rate = 0.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("early stopping with a frozen model") {
  const data::Dataset train_set = constant_dataset(1, 0), val = constant_dataset(4, 0);
  SUBCASE("stops at best + stop_go + eval_every") {
    FrozenStub stub({2.0, -1.0});
    const TrainHistory h = train::train(stub, train_set, val, frozen_config(50, 10, 1000));
    CHECK(h.stop_reason == StopReason::early_stop);
    CHECK(h.best_batch == 0);
    CHECK(h.best_val_accuracy == 1.0);
    CHECK(h.batches_trained == 0 + 50 + 10);
    CHECK(h.points.size() == 6);
    CHECK(stub.restores == 1);
    CHECK(stub.param_.value(0) == 0.25);
  }
  SUBCASE("at most eleven evaluations at 1000 / 100") {
    FrozenStub stub({2.0, -1.0});
    const TrainHistory h = train::train(stub, train_set, val, frozen_config(1000, 100, 5000));
    CHECK(h.points.size() == 11);
    CHECK(h.batches_trained == 1100);
    CHECK(h.batch_losses.size() == 1100);
  }
  SUBCASE("zero epochs") {
    FrozenStub stub({2.0, -1.0});
    const TrainHistory h = train::train(stub, train_set, val, frozen_config(50, 10, 0));
    CHECK(h.points.empty());
    CHECK(h.batches_trained == 0);
    CHECK(h.stop_reason == StopReason::epochs_done);
    CHECK(stub.forward_calls == 0);
  }
  SUBCASE("epochs run out before patience") {
    FrozenStub stub({2.0, -1.0});
    const TrainHistory h = train::train(stub, train_set, val, frozen_config(50, 10, 25));
    CHECK(h.stop_reason == StopReason::epochs_done);
    CHECK(h.batches_trained == 25);
    // Evaluations at 0, 10, 20 and a final one at 25.
    CHECK(h.points.size() == 4);
    CHECK(h.points.back().batch == 25);
  }
}

TEST_CASE("training keeps the best validation snapshot") {
  const auto corpus = data::generate_marker_corpus({});
  const auto vocab = data::Vocab::build(corpus.train.examples);
  const auto tr = data::encode_all(corpus.train.examples, vocab, 24);
  const auto va = data::encode_all(corpus.val.examples, vocab, 24);
  TrainConfig c;
  c.batch_size = 16;
  c.learning_rate = 0.05;
  c.epochs = 3;
  c.eval_every = 5;
  c.stop_go = 40;

  BagModel model(vocab.size(), 4, 3);
  const TrainHistory h = train::train(model, tr, va, c);
  const EvalResult after = evaluate_detailed(model, va, 16);
  const double acc = static_cast<double>(after.confusion.trace()) / static_cast<double>(after.confusion.total());
  CHECK(acc == h.best_val_accuracy);
  for (const auto& p : h.points) CHECK(p.val_accuracy <= h.best_val_accuracy);
  CHECK(h.best_val_accuracy > 0.5);
  CHECK(h.points.front().batch == 0);
  CHECK_FALSE(h.points.front().train_loss.has_value());

  BagModel again(vocab.size(), 4, 3);
  const TrainHistory h2 = train::train(again, tr, va, c);
  REQUIRE(h2.batch_losses.size() == h.batch_losses.size());
  CHECK(std::memcmp(h.batch_losses.data(), h2.batch_losses.data(), h.batch_losses.size() * sizeof(double)) == 0);
}

TEST_CASE("evaluate") {
  const auto corpus = data::generate_marker_corpus({});
  const auto vocab = data::Vocab::build(corpus.train.examples);
  const auto va = data::encode_all(corpus.val.examples, vocab, 24);

  SUBCASE("constant predictor fills column zero") {
    FrozenStub stub({1.0, 0.0, 0.0, 0.0});
    const ConfusionMatrix cm = evaluate(stub, va, 7);
    for (std::size_t k = 0; k < 4; ++k) {
      CHECK(cm.at(k, 0) == 20);
      CHECK(cm.col_sum(k) == (k == 0 ? 80 : 0));
    }
  }
  SUBCASE("perfect predictor is diagonal") {
    // Labels in this corpus cycle 0,1,2,3, so a per-position oracle is exact.
    class Cycler final : public Trainable {
     public:
      std::vector<Tensor> parameters() const override { return {}; }
      std::size_t num_classes() const override { return 4; }
      Tensor forward(Tape&, const data::Batch& b, zoo::Mode, std::mt19937_64*) const override {
        std::vector<double> v(b.size * 4, 0.0);
        for (std::size_t i = 0; i < b.size; ++i) v[i * 4 + b.labels[i]] = 1.0;
        return Tensor::from({b.size, 4}, std::move(v));
      }
      std::vector<std::vector<double>> snapshot() const override { return {}; }
      void restore(const std::vector<std::vector<double>>&) override {}
    } cycler;
    const ConfusionMatrix cm = evaluate(cycler, va, 9, 3);
    CHECK(cm.trace() == cm.total());
    CHECK(cm.at(2, 2) == 20);
  }
  SUBCASE("totals and thread invariance over random models") {
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
      BagModel m(vocab.size(), 4, seed);
      const EvalResult one = evaluate_detailed(m, va, 16, 1);
      const EvalResult three = evaluate_detailed(m, va, 5, 3);
      CHECK(one.confusion.total() == va.size());
      CHECK(one.confusion == three.confusion);
      CHECK(one.predictions == three.predictions);
      CHECK(std::abs(one.mean_loss - three.mean_loss) < 1e-12);
    }
  }
}
