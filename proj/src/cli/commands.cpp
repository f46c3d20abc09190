#include "dcebad/cli/commands.hpp"

#include <chrono>
#include <fstream>
#include <ostream>

#include "dcebad/cli/checkpoint.hpp"
#include "dcebad/errors.hpp"

namespace dcebad::cli {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

void write_json(const fs::path& path, const ordered_json& j) {
  write_file_atomic(path, j.dump(2) + "\n");
}

std::string config_hash(const zoo::ModelConfig& model, const train::TrainConfig& t) {
  ordered_json j;
  j["model"] = model_config_to_json(model);
  j["train"] = {{"batch_size", t.batch_size}, {"learning_rate", t.learning_rate},
                {"epochs", t.epochs},         {"stop_go", t.stop_go},
                {"eval_every", t.eval_every}, {"seed", t.seed},
                {"beta1", t.beta1},           {"beta2", t.beta2},
                {"adam_eps", t.adam_eps}};
  return fnv1a_hex(j.dump());
}

void log_history(const train::TrainHistory& h, std::ostream& log) {
  for (const auto& p : h.points) {
    log << "  batch " << p.batch;
    if (p.train_loss) log << "  train loss " << fixed(*p.train_loss);
    log << "  val loss " << fixed(p.val_loss) << "  val accuracy " << fixed(p.val_accuracy) << '\n';
  }
  log << "  stopped after " << h.batches_trained << " batches ("
      << (h.stop_reason == train::StopReason::early_stop ? "early stop" : "epochs done")
      << "); best val accuracy " << fixed(h.best_val_accuracy) << " at batch " << h.best_batch
      << '\n';
}

struct TrainedModel {
  zoo::Model model;
  train::TrainHistory history;
  train::ConfusionMatrix test_confusion;
  double seconds = 0.0;
};

/// Trains one variant, rounds it to checkpoint precision and scores the test set.
TrainedModel train_variant(const RunConfig& config, zoo::Variant variant, const PreparedData& d,
                           std::ostream& log) {
  const zoo::ModelConfig mc = config.model_for(variant, d.vocab.size(), d.labels.size());
  zoo::Model model = zoo::Model::build(mc);
  if (config.embeddings) {
    const auto emb = apply_embeddings(model, *config.embeddings, d.vocab, config.seed);
    for (const auto& w : emb.warnings) log << "warning: " << w << '\n';
    log << "pretrained embeddings: " << emb.rows_read << " rows read, vocabulary coverage "
        << fixed(emb.coverage) << '\n';
  }
  const train::TrainConfig tc = config.train_config();
  log << "training " << zoo::variant_name(variant) << ": " << model.parameter_count()
      << " parameters, " << d.train.size() << " train / " << d.val.size() << " val / "
      << d.test.size() << " test examples\n";

  const auto start = std::chrono::steady_clock::now();
  train::ModelTrainable trainable(model);
  train::TrainHistory history = train::train(trainable, d.train, d.val, tc);
  narrow_to_f32(model);
  train::ConfusionMatrix cm = train::evaluate(trainable, d.test, tc.batch_size, tc.threads);
  const double secs = seconds_since(start);
  log_history(history, log);
  return {std::move(model), std::move(history), std::move(cm), secs};
}

}  // namespace

PreparedData prepare_data(const RunConfig& config) {
  if (config.data.empty()) {
    throw ConfigError("no training data given (use --data or data.train in the config file)");
  }
  if (config.val_data.has_value() != config.test_data.has_value()) {
    throw ConfigError("validation and test files must be given together");
  }
  PreparedData d;
  data::Corpus full = data::load_tsv(config.data);
  d.labels = full.labels;
  if (config.val_data) {
    d.train_corpus = std::move(full);
    d.val_corpus = data::load_tsv(*config.val_data, d.labels);
    d.test_corpus = data::load_tsv(*config.test_data, d.labels);
  } else {
    data::Splits s = data::split(full.examples, d.labels.size(), config.split_ratios, config.seed);
    d.train_corpus = {std::move(s.train), d.labels};
    d.val_corpus = {std::move(s.val), d.labels};
    d.test_corpus = {std::move(s.test), d.labels};
    d.warnings = std::move(s.warnings);
  }
  d.vocab = data::Vocab::build(d.train_corpus.examples, config.min_freq);
  const std::size_t text_size = config.model.text_size;
  d.train = data::encode_all(d.train_corpus.examples, d.vocab, text_size);
  d.val = data::encode_all(d.val_corpus.examples, d.vocab, text_size);
  d.test = data::encode_all(d.test_corpus.examples, d.vocab, text_size);
  return d;
}

data::PretrainedEmbeddings apply_embeddings(zoo::Model& model, const fs::path& path,
                                            const data::Vocab& vocab, std::uint64_t seed) {
  data::PretrainedEmbeddings emb = data::load_pretrained_embeddings(path, vocab, seed);
  const Tensor table = *model.find("embed.token");
  if (emb.matrix.shape() != table.shape()) {
    throw ConfigError("embedding file '" + path.string() + "' has dimension " +
                      std::to_string(emb.header.dim) + " but the model uses d_model " +
                      std::to_string(table.cols()));
  }
  const auto src = emb.matrix.values();
  std::copy(src.begin(), src.end(), table.mutable_values().begin());
  return emb;
}

TrainOutcome cmd_train(const RunConfig& config, std::ostream& log) {
  const fs::path dir = config.out;
  write_json(dir / "config.json", to_json(config));
  const PreparedData d = prepare_data(config);
  for (const auto& w : d.warnings) log << "warning: " << w << '\n';

  TrainedModel t = train_variant(config, config.model.variant, d, log);
  save_checkpoint(dir / "model.ckpt", t.model, d.labels, d.vocab);
  write_json(dir / "history.json", history_to_json(t.history, t.seconds));
  write_json(dir / "metrics.json", metrics_to_json(t.test_confusion, d.labels));
  data::write_tsv(dir / "splits" / "train.tsv", d.train_corpus);
  data::write_tsv(dir / "splits" / "val.tsv", d.val_corpus);
  data::write_tsv(dir / "splits" / "test.tsv", d.test_corpus);

  log << "test set\n" << format_metrics(t.test_confusion, d.labels);
  log << "wrote " << (dir / "model.ckpt").string() << ", metrics.json, history.json, config.json\n";
  return {std::move(t.history), std::move(t.test_confusion), d.labels};
}

train::ConfusionMatrix cmd_eval(const fs::path& checkpoint, const fs::path& dataset,
                                const std::optional<fs::path>& out_dir, std::size_t batch_size,
                                std::size_t threads, std::ostream& out) {
  const Checkpoint ckpt = load_checkpoint(checkpoint);
  zoo::Model model = instantiate(ckpt);
  const data::Corpus corpus = data::load_tsv(dataset, ckpt.labels);
  if (corpus.examples.empty()) throw IngestError("dataset '" + dataset.string() + "' is empty");
  const data::Dataset ds = data::encode_all(corpus.examples, ckpt.vocab, ckpt.config.text_size);
  train::ModelTrainable trainable(model);
  train::ConfusionMatrix cm = train::evaluate(trainable, ds, batch_size, threads);
  out << format_metrics(cm, ckpt.labels);
  if (out_dir) write_json(*out_dir / "eval_metrics.json", metrics_to_json(cm, ckpt.labels));
  return cm;
}

std::vector<zoo::Prediction> cmd_predict(const fs::path& checkpoint,
                                         const std::vector<std::string>& texts, std::ostream& out) {
  const Checkpoint ckpt = load_checkpoint(checkpoint);
  const zoo::Model model = instantiate(ckpt);
  std::vector<zoo::Prediction> predictions;
  for (const auto& text : texts) {
    const auto row = data::encode(text, ckpt.vocab, ckpt.config.text_size);
    zoo::Prediction p = model.predict(row);
    ordered_json line;
    line["text"] = text;
    line["label"] = ckpt.labels.at(p.label);
    line["label_id"] = p.label;
    line["probabilities"] = p.probabilities;
    out << line.dump() << '\n';
    predictions.push_back(std::move(p));
  }
  return predictions;
}

std::vector<BenchmarkRow> cmd_benchmark(const RunConfig& config,
                                        const std::vector<zoo::Variant>& variants,
                                        std::ostream& log) {
  if (variants.empty()) throw ConfigError("benchmark needs at least one variant");
  const fs::path dir = config.out;
  write_json(dir / "config.json", to_json(config));
  const PreparedData d = prepare_data(config);
  for (const auto& w : d.warnings) log << "warning: " << w << '\n';

  std::vector<BenchmarkRow> rows;
  for (zoo::Variant v : variants) {
    TrainedModel t = train_variant(config, v, d, log);
    rows.push_back({std::string(zoo::variant_name(v)), t.test_confusion,
                    t.model.parameter_count(), t.history.batches_trained, t.history.best_batch,
                    t.seconds, config_hash(t.model.config(), config.train_config())});
  }
  const std::string table = format_benchmark(rows, d.labels);
  write_json(dir / "benchmark.json", benchmark_to_json(rows, d.labels));
  write_file_atomic(dir / "benchmark.txt", table);
  log << table;
  return rows;
}

GradcheckReport cmd_gradcheck(const GradcheckOptions& options, std::ostream& out) {
  GradcheckReport report = run_gradcheck(options);
  out << format_gradcheck(report);
  return report;
}

}  // namespace dcebad::cli
