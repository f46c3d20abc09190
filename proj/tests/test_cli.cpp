#include <cstring>
#include <sstream>

#include "doctest.h"
#include "scratch.hpp"

#include "dcebad/cli/checkpoint.hpp"
#include "dcebad/cli/commands.hpp"
#include "dcebad/cli/config.hpp"
#include "dcebad/cli/report.hpp"
#include "dcebad/errors.hpp"

using namespace dcebad;
using namespace dcebad::cli;
using nlohmann::json;

namespace {

/// Writes a small two-class marker corpus as train/val/test TSV files.
void write_corpus(const ScratchDir& dir, std::size_t classes = 2) {
  data::MarkerCorpusOptions o;
  o.classes = classes;
  o.train_per_class = 24;
  o.val_per_class = 6;
  o.test_per_class = 6;
  const auto c = data::generate_marker_corpus(o);
  data::write_tsv(dir / "train.tsv", c.train);
  data::write_tsv(dir / "val.tsv", c.val);
  data::write_tsv(dir / "test.tsv", c.test);
}

RunConfig tiny_run(const ScratchDir& dir, const std::string& out) {
  RunConfig c;
  c.data = (dir / "train.tsv").string();
  c.val_data = (dir / "val.tsv").string();
  c.test_data = (dir / "test.tsv").string();
  c.out = (dir / out).string();
  c.model.d_model = 8;
  c.model.r_hidden = 4;
  c.model.num_layers = 1;
  c.model.num_filters = 8;
  c.model.cnn_filters = 4;
  c.model.text_size = 24;
  c.encoder_blocks = 1;
  c.encoder_heads = 2;
  c.train.batch_size = 8;
  c.train.learning_rate = 3e-3;
  c.train.epochs = 2;
  c.train.eval_every = 3;
  c.train.stop_go = 30;
  return c;
}

json read_json(const std::filesystem::path& p) { return json::parse(slurp(p)); }

int run(std::vector<std::string> args, std::string* out = nullptr, std::string* err = nullptr) {
  args.insert(args.begin(), "dcebad");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream o, e;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), o, e);
  if (out) *out = o.str();
  if (err) *err = e.str();
  return code;
}

zoo::ModelConfig small_model() {
  zoo::ModelConfig c;
  c = c.with_variant(zoo::Variant::dc_ebad, 1, 2);
  c.vocab_size = 9;
  c.d_model = 8;
  c.r_hidden = 4;
  c.num_layers = 1;
  c.num_filters = 6;
  c.num_classes = 3;
  c.text_size = 10;
  return c;
}

data::Batch fixed_batch() {
  data::Batch b;
  b.size = 2;
  b.text_size = 10;
  b.ids = {2, 4, 5, 6, 3, 0, 0, 0, 0, 0, 2, 8, 7, 6, 5, 4, 8, 1, 3, 0};
  for (std::size_t id : b.ids) b.mask.push_back(id == 0 ? 0 : 1);
  b.labels = {0, 2};
  return b;
}

std::vector<double> logits_of(const zoo::Model& m, const data::Batch& b) {
  Tape tape;
  const Tensor y = m.forward(tape, b, zoo::Mode::eval);
  return {y.values().begin(), y.values().end()};
}

bool bitwise_equal(const std::vector<double>& a, const std::vector<double>& b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

std::string checkpoint_error(const std::string& bytes) {
  try {
    parse_checkpoint(bytes, "ckpt");
  } catch (const CheckpointError& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST_CASE("run configuration") {
  RunConfig c;
  c.seed = 9;
  c.model.variant = zoo::Variant::enc_dpcnn;
  c.model.d_model = 16;
  c.encoder_heads = 4;
  c.train.learning_rate = 2e-4;
  c.data = "corpus.tsv";
  c.embeddings = "vectors.txt";
  c.split_ratios = {8, 1, 1};

  SUBCASE("echo round-trips") {
    CHECK(overlay(RunConfig{}, to_json(c)) == c);
    CHECK(to_json(overlay(RunConfig{}, to_json(c))).dump() == to_json(c).dump());
  }
  SUBCASE("partial overlay keeps the base") {
    const RunConfig r = overlay(c, json::parse(R"({"train": {"epochs": 7}, "data": {"embeddings": null}})"));
    CHECK(r.train.epochs == 7);
    CHECK(r.train.learning_rate == 2e-4);
    CHECK_FALSE(r.embeddings.has_value());
  }
  SUBCASE("unknown keys and bad types") {
    try {
      overlay(c, json::parse(R"({"model": {"hidden": 3}})"));
      FAIL("expected a config error");
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find("config.model: unknown key 'hidden'") != std::string::npos);
    }
    CHECK_THROWS_AS(overlay(c, json::parse(R"({"train": {"epochs": "many"}})")), ConfigError);
    CHECK_THROWS_AS(overlay(c, json::parse(R"({"model": {"variant": "ernie"}})")), ConfigError);
  }
  SUBCASE("model config json") {
    const zoo::ModelConfig m = c.model_for(zoo::Variant::dc_ebad, 40, 5);
    CHECK(m.encoder_heads == std::optional<std::size_t>(4));
    CHECK(m.seed == 9);
    CHECK(model_config_from_json(model_config_to_json(m)) == m);
    CHECK_FALSE(c.model_for(zoo::Variant::bilstm, 40, 5).encoder_blocks.has_value());
  }
  SUBCASE("file loading") {
    ScratchDir dir("cfg");
    const auto path = dir.write("run.json", R"({"seed": 4, "model": {"variant": "cnn"}})");
    const RunConfig r = load_run_config(path);
    CHECK(r.seed == 4);
    CHECK(r.model.variant == zoo::Variant::cnn);
    CHECK_THROWS_AS(load_run_config(dir.write("broken.json", "{ nope")), ConfigError);
  }
}

TEST_CASE("checkpoint") {
  auto model = zoo::Model::build(small_model());
  const std::vector<std::string> labels = {"x", "y", "z"};
  const data::Vocab vocab = data::Vocab::from_tokens({"[PAD]", "[UNK]", "[CLS]", "[SEP]", "a", "b", "c", "d", "e"});
  const std::string bytes = serialize_checkpoint(model, labels, vocab);

  SUBCASE("save, load, forward is bitwise stable") {
    ScratchDir dir("ckpt");
    save_checkpoint(dir / "m.ckpt", model, labels, vocab);
    const auto first = instantiate(load_checkpoint(dir / "m.ckpt"));
    const auto second = instantiate(load_checkpoint(dir / "m.ckpt"));
    CHECK(bitwise_equal(logits_of(first, fixed_batch()), logits_of(second, fixed_batch())));

    // Narrowing in memory gives exactly the loaded weights.
    narrow_to_f32(model);
    CHECK(bitwise_equal(logits_of(first, fixed_batch()), logits_of(model, fixed_batch())));

    const Checkpoint c = parse_checkpoint(bytes);
    CHECK(c.labels == labels);
    CHECK(c.vocab == vocab);
    CHECK(c.config == model.config());
    REQUIRE(c.tensors.size() == model.parameters().size());
    for (std::size_t i = 0; i < c.tensors.size(); ++i) {
      CHECK(c.tensors[i].name == model.parameters()[i].name);
      CHECK(c.tensors[i].tensor.shape() == model.parameters()[i].tensor.shape());
    }
  }
  SUBCASE("corrupt magic") {
    std::string bad = bytes;
    bad[0] = 'X';
    CHECK(checkpoint_error(bad).find("corrupt checkpoint") != std::string::npos);
  }
  SUBCASE("wrong version") {
    std::string bad = bytes;
    bad[4] = 7;
    CHECK(checkpoint_error(bad).find("version") != std::string::npos);
  }
  SUBCASE("truncation anywhere") {
    for (std::size_t cut : {std::size_t{0}, std::size_t{3}, std::size_t{6}, std::size_t{40}, bytes.size() / 2,
                            bytes.size() - 1}) {
      CAPTURE(cut);
      CHECK(checkpoint_error(bytes.substr(0, cut)).find("corrupt checkpoint") != std::string::npos);
    }
    CHECK(checkpoint_error(bytes.substr(0, bytes.size() - 1)).find("truncated") != std::string::npos);
  }
  SUBCASE("trailing bytes") {
    CHECK(checkpoint_error(bytes + "junk").find("corrupt checkpoint") != std::string::npos);
  }
  SUBCASE("missing file") {
    CHECK_THROWS_AS(load_checkpoint("/nonexistent/dir/m.ckpt"), CheckpointError);
  }
  CHECK(bytes.size() < 4 * model.parameter_count() + 4096);
}

TEST_CASE("train, eval and predict") {
  ScratchDir dir("cli");
  write_corpus(dir);
  const RunConfig config = tiny_run(dir, "run");
  std::ostringstream log;
  const TrainOutcome outcome = cmd_train(config, log);

  for (const char* f : {"config.json", "model.ckpt", "history.json", "metrics.json", "splits/train.tsv",
                        "splits/val.tsv", "splits/test.tsv"})
    CHECK(std::filesystem::exists(dir / "run" / f));
  const json metrics = read_json(dir / "run" / "metrics.json");
  CHECK(metrics["averaging"] == "macro");
  CHECK(metrics["examples"] == 12);
  CHECK(metrics["per_class"].size() == 2);
  CHECK(load_run_config(dir / "run" / "config.json") == config);

  SUBCASE("rerun is identical apart from wall time") {
    const RunConfig second = tiny_run(dir, "run2");
    cmd_train(second, log);
    CHECK(slurp(dir / "run" / "metrics.json") == slurp(dir / "run2" / "metrics.json"));
    CHECK(slurp(dir / "run" / "model.ckpt") == slurp(dir / "run2" / "model.ckpt"));
    json h1 = read_json(dir / "run" / "history.json"), h2 = read_json(dir / "run2" / "history.json");
    h1.erase("wall_time_seconds");
    h2.erase("wall_time_seconds");
    CHECK(h1 == h2);
  }
  SUBCASE("eval reproduces the training report") {
    std::ostringstream out;
    const auto cm = cmd_eval(dir / "run" / "model.ckpt", dir / "test.tsv", dir / "eval", 5, 2, out);
    CHECK(cm == outcome.test_confusion);
    CHECK(slurp(dir / "eval" / "eval_metrics.json") == slurp(dir / "run" / "metrics.json"));
  }
  SUBCASE("predict") {
    std::ostringstream out;
    const auto preds = cmd_predict(dir / "run" / "model.ckpt", {"", "some text"}, out);
    REQUIRE(preds.size() == 2);
    const json first = json::parse(out.str().substr(0, out.str().find('\n')));
    CHECK(first["text"] == "");
    CHECK(first["probabilities"].size() == 2);

    // Recounting predictions over the test file matches evaluate.
    const data::Corpus test = data::load_tsv(dir / "test.tsv", outcome.labels);
    std::vector<std::string> texts;
    for (const auto& ex : test.examples) texts.push_back(ex.text);
    std::ostringstream sink;
    const auto all = cmd_predict(dir / "run" / "model.ckpt", texts, sink);
    train::ConfusionMatrix recount(2);
    for (std::size_t i = 0; i < all.size(); ++i) recount.add(test.examples[i].label, all[i].label);
    CHECK(recount == outcome.test_confusion);
  }
  SUBCASE("unknown label in eval data") {
    const auto path = dir.write("odd.tsv", "text\tweather\n");
    std::ostringstream out;
    try {
      cmd_eval(dir / "run" / "model.ckpt", path, std::nullopt, 8, 1, out);
      FAIL("expected an ingest error");
    } catch (const IngestError& e) {
      CHECK(std::string(e.what()).find("'weather'") != std::string::npos);
    }
  }
}

TEST_CASE("split from a single file") {
  ScratchDir dir("split");
  write_corpus(dir);
  RunConfig c = tiny_run(dir, "run");
  c.val_data.reset();
  c.test_data.reset();
  c.split_ratios = {4, 1, 1};
  const PreparedData d = prepare_data(c);
  CHECK(d.train.size() == 32);
  CHECK(d.val.size() == 8);
  CHECK(d.test.size() == 8);
  c.val_data = (dir / "val.tsv").string();
  CHECK_THROWS_AS(prepare_data(c), ConfigError);
}

TEST_CASE("pretrained embeddings are installed") {
  ScratchDir dir("emb");
  write_corpus(dir);
  const RunConfig c = tiny_run(dir, "run");
  const PreparedData d = prepare_data(c);
  const std::string tok = d.vocab.token(4);
  const auto path = dir.write("vec.txt", "1 8\n" + tok + " 1 2 3 4 5 6 7 8\n");
  auto model = zoo::Model::build(c.model_for(zoo::Variant::dc_ebad, d.vocab.size(), 2));
  const auto emb = apply_embeddings(model, path, d.vocab, 1);
  CHECK(emb.coverage == 1.0 / static_cast<double>(d.vocab.size() - 4));
  CHECK(model.find("embed.token")->at(4, 7) == 8.0);
  const auto wrong = dir.write("vec4.txt", "1 4\n" + tok + " 1 2 3 4\n");
  CHECK_THROWS_AS(apply_embeddings(model, wrong, d.vocab, 1), ConfigError);
}

TEST_CASE("benchmark") {
  ScratchDir dir("bench");
  write_corpus(dir);
  std::ostringstream log;
  const auto rows = cmd_benchmark(tiny_run(dir, "b"), {zoo::Variant::bilstm, zoo::Variant::bilstm_at}, log);
  REQUIRE(rows.size() == 2);
  const json j = read_json(dir / "b" / "benchmark.json");
  REQUIRE(j["variants"].size() == 2);
  for (const auto& row : j["variants"]) {
    for (const char* key : {"variant", "accuracy", "precision", "recall", "f1", "per_class_f1", "parameters"})
      CHECK(row.contains(key));
    CHECK(row["per_class_f1"].size() == 2);
  }
  CHECK(j["variants"][1]["variant"] == "bilstm_at");
  const std::string table = slurp(dir / "b" / "benchmark.txt");
  CHECK(table.find("bilstm_at") != std::string::npos);
  CHECK(table.find("Per-class F1") != std::string::npos);

  const auto one = cmd_benchmark(tiny_run(dir, "c"), {zoo::Variant::cnn}, log);
  CHECK(one.size() == 1);
  CHECK(read_json(dir / "c" / "benchmark.json")["variants"].size() == 1);
  CHECK_THROWS_AS(cmd_benchmark(tiny_run(dir, "d"), {}, log), ConfigError);
}

TEST_CASE("gradcheck suite") {
  GradcheckOptions o;
  o.seeds = 2;
  const GradcheckReport ok = run_gradcheck(o);
  CHECK(ok.passed);
  CHECK(ok.layers.size() == gradcheck_layers().size());
  const auto census = zoo::Model::build(gradcheck_model_config(o)).parameters();
  REQUIRE(ok.model.tensors.size() == census.size());
  for (std::size_t i = 0; i < census.size(); ++i) CHECK(ok.model.tensors[i].name == census[i].name);
  const std::string text = format_gradcheck(ok);
  CHECK(text.find("all checks passed") != std::string::npos);

  o.corrupt_op = "relu";
  const GradcheckReport broken = run_gradcheck(o);
  CHECK_FALSE(broken.passed);
  const std::string failed = format_gradcheck(broken);
  CHECK(failed.find("FAILED") != std::string::npos);
  CHECK(failed.find("dpcnn_forward") != std::string::npos);

  GradcheckOptions big;
  big.d_model = 32;
  CHECK_THROWS_AS(run_gradcheck(big), ConfigError);
}

TEST_CASE("command line") {
  ScratchDir dir("argv");
  std::string out, err;
  SUBCASE("missing dataset") {
    CHECK(run({"train", "--data", (dir / "nope.tsv").string(), "--out", (dir / "r").string()}, &out, &err) != 0);
    CHECK(err.find("nope.tsv") != std::string::npos);
  }
  SUBCASE("unknown variant") {
    CHECK(run({"train", "--data", "x.tsv", "--variant", "ernie"}, &out, &err) != 0);
    CHECK(err.find("ernie") != std::string::npos);
  }
  SUBCASE("truncated checkpoint") {
    const auto ckpt = dir.write("m.ckpt", "DCEB\x01");
    const auto data = dir.write("d.tsv", "a\tx\n");
    CHECK(run({"eval", "--checkpoint", ckpt.string(), "--data", data.string()}, &out, &err) != 0);
    CHECK(err.find("corrupt checkpoint") != std::string::npos);
  }
  SUBCASE("toy corpus, flags over config file, then predict") {
    REQUIRE(run({"toy-corpus", "--out", dir.path().string(), "--classes", "2", "--train-per-class", "16",
                 "--val-per-class", "4", "--test-per-class", "4"}) == 0);
    CHECK(data::load_tsv(dir / "train.tsv").examples.size() == 32);
    const auto cfg = dir.write("run.json", R"({"seed": 3, "model": {"variant": "bilstm", "d_model": 8,
        "r_hidden": 4, "num_layers": 1, "text_size": 24}, "train": {"epochs": 1, "batch_size": 8,
        "eval_every": 2, "stop_go": 10}})");
    const std::string run_dir = (dir / "r").string();
    REQUIRE(run({"train", "--config", cfg.string(), "--data", (dir / "train.tsv").string(), "--val-data",
                 (dir / "val.tsv").string(), "--test-data", (dir / "test.tsv").string(), "--epochs", "2",
                 "--out", run_dir}, &out, &err) == 0);
    const json echo = read_json(dir / "r" / "config.json");
    CHECK(echo["seed"] == 3);
    CHECK(echo["model"]["variant"] == "bilstm");
    CHECK(echo["train"]["epochs"] == 2);
    CHECK(echo["train"]["batch_size"] == 8);
    CHECK(run({"predict", "--checkpoint", run_dir + "/model.ckpt", "--text", "abc", "--text", ""}, &out, &err) == 0);
    CHECK(std::count(out.begin(), out.end(), '\n') == 2);
    CHECK(run({"predict", "--checkpoint", run_dir + "/model.ckpt", "--input", (dir / "test.tsv").string()}, &out) == 0);
    CHECK(std::count(out.begin(), out.end(), '\n') == 8);
  }
  SUBCASE("gradcheck exit status") {
    CHECK(run({"gradcheck", "--seeds", "1", "--out", (dir / "g").string()}, &out) == 0);
    CHECK(read_json(dir / "g" / "gradcheck.json")["passed"] == true);
    CHECK(run({"gradcheck", "--seeds", "1", "--corrupt-op", "tanh"}, &out) == 1);
  }
  SUBCASE("no subcommand") { CHECK(run({}, &out, &err) != 0); }
}
