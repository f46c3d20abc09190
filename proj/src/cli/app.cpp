#include <fstream>
#include <functional>
#include <ostream>

#include "CLI11.hpp"

#include "dcebad/cli/commands.hpp"
#include "dcebad/errors.hpp"

namespace dcebad::cli {

namespace {

/// Command-line overrides for a RunConfig. Each flag is applied only when given.
class RunFlags {
 public:
  void attach(CLI::App* app, bool many_variants) {
    app->add_option("--config", config_path_, "JSON run configuration")->check(CLI::ExistingFile);
    bind(app, "--data", "training TSV (split 18:1:1 unless val/test files are given)", &RunConfig::data);
    bind_optional(app, "--val-data", "validation TSV", &RunConfig::val_data);
    bind_optional(app, "--test-data", "test TSV", &RunConfig::test_data);
    bind_optional(app, "--embeddings", "pretrained embedding text file", &RunConfig::embeddings);
    bind(app, "--out", "output directory", &RunConfig::out);
    if (many_variants) {
      app->add_option("--variant", variants_, "model variant (repeatable; default all nine)");
    } else {
      app->add_option("--variant", variant_, "model variant");
    }
    bind(app, "--seed", "seed for splits, initialization, shuffling and dropout", &RunConfig::seed);
    bind_train(app, "--batch-size", "batch size", &train::TrainConfig::batch_size);
    bind_train(app, "--lr", "Adam learning rate", &train::TrainConfig::learning_rate);
    bind_train(app, "--epochs", "training epochs", &train::TrainConfig::epochs);
    bind_train(app, "--stop-go", "batches without improvement before stopping", &train::TrainConfig::stop_go);
    bind_train(app, "--eval-every", "batches between validation passes", &train::TrainConfig::eval_every);
    bind_train(app, "--threads", "evaluation worker threads", &train::TrainConfig::threads);
    bind_model(app, "--text-size", "tokens per encoded row", &zoo::ModelConfig::text_size);
    bind_model(app, "--d-model", "embedding and encoder width", &zoo::ModelConfig::d_model);
    bind_model(app, "--r-hidden", "LSTM hidden size per direction", &zoo::ModelConfig::r_hidden);
    bind_model(app, "--num-layers", "stacked (Bi)LSTM layers", &zoo::ModelConfig::num_layers);
    bind_model(app, "--num-filters", "DPCNN feature maps", &zoo::ModelConfig::num_filters);
    bind_model(app, "--cnn-filters", "CNN baseline filters per width", &zoo::ModelConfig::cnn_filters);
    bind_model(app, "--dropout", "dropout rate on the concatenated features", &zoo::ModelConfig::dropout);
    bind(app, "--encoder-blocks", "encoder blocks", &RunConfig::encoder_blocks);
    bind(app, "--encoder-heads", "attention heads per block", &RunConfig::encoder_heads);
    bind(app, "--min-freq", "minimum character frequency for the vocabulary", &RunConfig::min_freq);
  }

  /// Built-in defaults, then the config file, then flags.
  RunConfig resolve() const {
    RunConfig c = config_path_.empty() ? RunConfig{} : load_run_config(config_path_);
    for (const auto& apply : appliers_) apply(c);
    if (!variant_.empty()) c.model.variant = zoo::parse_variant(variant_);
    return c;
  }

  std::vector<zoo::Variant> variants() const {
    std::vector<zoo::Variant> out;
    for (const auto& name : variants_) out.push_back(zoo::parse_variant(name));
    if (out.empty()) out.assign(zoo::kAllVariants.begin(), zoo::kAllVariants.end());
    return out;
  }

 private:
  template <typename T>
  void add(CLI::App* app, const std::string& flag, const std::string& help,
           std::function<void(RunConfig&, const T&)> set) {
    auto value = std::make_shared<T>();
    CLI::Option* opt = app->add_option(flag, *value, help);
    appliers_.push_back([opt, value, set](RunConfig& c) {
      if (opt->count() > 0) set(c, *value);
    });
  }

  template <typename T>
  void bind(CLI::App* app, const std::string& flag, const std::string& help, T RunConfig::*field) {
    add<T>(app, flag, help, [field](RunConfig& c, const T& v) { c.*field = v; });
  }

  void bind_optional(CLI::App* app, const std::string& flag, const std::string& help,
                     std::optional<std::string> RunConfig::*field) {
    add<std::string>(app, flag, help, [field](RunConfig& c, const std::string& v) { c.*field = v; });
  }

  template <typename T>
  void bind_train(CLI::App* app, const std::string& flag, const std::string& help,
                  T train::TrainConfig::*field) {
    add<T>(app, flag, help, [field](RunConfig& c, const T& v) { c.train.*field = v; });
  }

  template <typename T>
  void bind_model(CLI::App* app, const std::string& flag, const std::string& help,
                  T zoo::ModelConfig::*field) {
    add<T>(app, flag, help, [field](RunConfig& c, const T& v) { c.model.*field = v; });
  }

  std::string config_path_;
  std::string variant_;
  std::vector<std::string> variants_;
  std::vector<std::function<void(RunConfig&)>> appliers_;
};

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestError("cannot open input file '" + path + "'");
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    // A TSV row contributes its text field.
    if (const auto tab = line.find('\t'); tab != std::string::npos) line.resize(tab);
    lines.push_back(line);
  }
  return lines;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Dual-channel text classifier: train, evaluate, predict, benchmark, gradcheck"};
  app.require_subcommand(1);

  RunFlags train_flags;
  auto* train_cmd = app.add_subcommand("train", "train one model and report test metrics");
  train_flags.attach(train_cmd, false);

  RunFlags bench_flags;
  auto* bench_cmd = app.add_subcommand("benchmark", "train and compare several variants on one split");
  bench_flags.attach(bench_cmd, true);

  std::string ckpt_path, eval_data, eval_out;
  std::size_t eval_batch = 128, eval_threads = 1;
  auto* eval_cmd = app.add_subcommand("eval", "score a checkpoint on a labelled TSV file");
  eval_cmd->add_option("--checkpoint", ckpt_path, "model checkpoint")->required();
  eval_cmd->add_option("--data", eval_data, "labelled TSV")->required();
  eval_cmd->add_option("--out", eval_out, "directory for eval_metrics.json");
  eval_cmd->add_option("--batch-size", eval_batch, "evaluation batch size");
  eval_cmd->add_option("--threads", eval_threads, "evaluation worker threads");

  std::vector<std::string> texts;
  std::string input_path;
  auto* predict_cmd = app.add_subcommand("predict", "classify texts, one JSON line each");
  predict_cmd->add_option("--checkpoint", ckpt_path, "model checkpoint")->required();
  auto* text_opt = predict_cmd->add_option("--text", texts, "text to classify (repeatable)");
  auto* input_opt =
      predict_cmd->add_option("--input", input_path, "file with one text (or TSV row) per line");
  text_opt->excludes(input_opt);

  GradcheckOptions gc;
  std::string gc_variant = "dc_ebad", gc_corrupt, gc_out;
  auto* gc_cmd = app.add_subcommand("gradcheck", "compare analytic and finite-difference gradients");
  gc_cmd->add_option("--variant", gc_variant, "model variant for the end-to-end check");
  gc_cmd->add_option("--d-model", gc.d_model, "width (at most 16)");
  gc_cmd->add_option("--seq-len", gc.seq_len, "sequence length (at most 8)");
  gc_cmd->add_option("--seeds", gc.seeds, "random instances per layer");
  gc_cmd->add_option("--eps", gc.eps, "central-difference step");
  gc_cmd->add_option("--corrupt-op", gc_corrupt, "scale this op's backward rule (negative control)");
  gc_cmd->add_option("--out", gc_out, "directory for gradcheck.json");

  data::MarkerCorpusOptions toy;
  std::string toy_out;
  auto* toy_cmd = app.add_subcommand("toy-corpus", "write the synthetic marker-character corpus");
  toy_cmd->add_option("--out", toy_out, "output directory")->required();
  toy_cmd->add_option("--seed", toy.seed, "generator seed");
  toy_cmd->add_option("--classes", toy.classes, "number of classes");
  toy_cmd->add_option("--train-per-class", toy.train_per_class, "training examples per class");
  toy_cmd->add_option("--val-per-class", toy.val_per_class, "validation examples per class");
  toy_cmd->add_option("--test-per-class", toy.test_per_class, "test examples per class");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    if (*train_cmd) {
      cmd_train(train_flags.resolve(), out);
    } else if (*bench_cmd) {
      cmd_benchmark(bench_flags.resolve(), bench_flags.variants(), out);
    } else if (*eval_cmd) {
      std::optional<std::filesystem::path> dir;
      if (!eval_out.empty()) dir = eval_out;
      cmd_eval(ckpt_path, eval_data, dir, eval_batch, eval_threads, out);
    } else if (*predict_cmd) {
      if (!input_path.empty()) texts = read_lines(input_path);
      if (text_opt->count() == 0 && input_path.empty()) {
        throw ConfigError("predict needs --text or --input");
      }
      cmd_predict(ckpt_path, texts, out);
    } else if (*gc_cmd) {
      gc.variant = zoo::parse_variant(gc_variant);
      if (!gc_corrupt.empty()) gc.corrupt_op = gc_corrupt;
      const GradcheckReport report = cmd_gradcheck(gc, out);
      if (!gc_out.empty()) {
        write_file_atomic(std::filesystem::path(gc_out) / "gradcheck.json",
                          gradcheck_to_json(report).dump(2) + "\n");
      }
      return report.passed ? 0 : 1;
    } else if (*toy_cmd) {
      const data::MarkerCorpus corpus = data::generate_marker_corpus(toy);
      const std::filesystem::path dir = toy_out;
      data::write_tsv(dir / "train.tsv", corpus.train);
      data::write_tsv(dir / "val.tsv", corpus.val);
      data::write_tsv(dir / "test.tsv", corpus.test);
      out << "wrote " << corpus.train.examples.size() << " / " << corpus.val.examples.size()
          << " / " << corpus.test.examples.size() << " examples to " << dir.string() << '\n';
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace dcebad::cli
