#include "dcebad/cli/config.hpp"

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "dcebad/errors.hpp"

namespace dcebad::cli {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

void reject_unknown(const json& j, std::initializer_list<const char*> known, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  const std::set<std::string> allowed(known.begin(), known.end());
  for (const auto& [key, value] : j.items()) {
    if (!allowed.count(key)) throw ConfigError(where + ": unknown key '" + key + "'");
  }
}

template <typename T>
void read(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

void read_optional_path(const json& j, const char* key, std::optional<std::string>& out,
                        const std::string& where) {
  if (!j.contains(key)) return;
  if (j.at(key).is_null()) {
    out.reset();
    return;
  }
  std::string s;
  read(j, key, s, where);
  out = s;
}

json optional_path(const std::optional<std::string>& p) { return p ? json(*p) : json(nullptr); }

}  // namespace

zoo::ModelConfig RunConfig::model_for(zoo::Variant variant, std::size_t vocab_size,
                                      std::size_t num_classes) const {
  zoo::ModelConfig c = model;
  c.encoder_blocks.reset();
  c.encoder_heads.reset();
  c = c.with_variant(variant, encoder_blocks, encoder_heads);
  c.vocab_size = vocab_size;
  c.num_classes = num_classes;
  c.seed = seed;
  return c;
}

train::TrainConfig RunConfig::train_config() const {
  train::TrainConfig t = train;
  t.seed = seed;
  return t;
}

ordered_json model_config_to_json(const zoo::ModelConfig& c) {
  ordered_json j;
  j["variant"] = std::string(zoo::variant_name(c.variant));
  j["vocab_size"] = c.vocab_size;
  j["d_model"] = c.d_model;
  j["r_hidden"] = c.r_hidden;
  j["num_layers"] = c.num_layers;
  j["num_filters"] = c.num_filters;
  j["kernel_size"] = c.kernel_size;
  j["encoder_blocks"] = c.encoder_blocks ? json(*c.encoder_blocks) : json(nullptr);
  j["encoder_heads"] = c.encoder_heads ? json(*c.encoder_heads) : json(nullptr);
  j["cnn_filters"] = c.cnn_filters;
  j["num_classes"] = c.num_classes;
  j["text_size"] = c.text_size;
  j["dropout"] = c.dropout;
  j["seed"] = c.seed;
  return j;
}

zoo::ModelConfig model_config_from_json(const json& j) {
  const std::string where = "model config";
  reject_unknown(j,
                 {"variant", "vocab_size", "d_model", "r_hidden", "num_layers", "num_filters",
                  "kernel_size", "encoder_blocks", "encoder_heads", "cnn_filters", "num_classes",
                  "text_size", "dropout", "seed"},
                 where);
  zoo::ModelConfig c;
  std::string variant = std::string(zoo::variant_name(c.variant));
  read(j, "variant", variant, where);
  c.variant = zoo::parse_variant(variant);
  read(j, "vocab_size", c.vocab_size, where);
  read(j, "d_model", c.d_model, where);
  read(j, "r_hidden", c.r_hidden, where);
  read(j, "num_layers", c.num_layers, where);
  read(j, "num_filters", c.num_filters, where);
  read(j, "kernel_size", c.kernel_size, where);
  for (const char* key : {"encoder_blocks", "encoder_heads"}) {
    if (j.contains(key) && !j.at(key).is_null()) {
      std::size_t v = 0;
      read(j, key, v, where);
      (std::string(key) == "encoder_blocks" ? c.encoder_blocks : c.encoder_heads) = v;
    }
  }
  read(j, "cnn_filters", c.cnn_filters, where);
  read(j, "num_classes", c.num_classes, where);
  read(j, "text_size", c.text_size, where);
  read(j, "dropout", c.dropout, where);
  read(j, "seed", c.seed, where);
  return c;
}

ordered_json to_json(const RunConfig& c) {
  ordered_json j;
  j["seed"] = c.seed;
  ordered_json m;
  m["variant"] = std::string(zoo::variant_name(c.model.variant));
  m["d_model"] = c.model.d_model;
  m["r_hidden"] = c.model.r_hidden;
  m["num_layers"] = c.model.num_layers;
  m["num_filters"] = c.model.num_filters;
  m["kernel_size"] = c.model.kernel_size;
  m["encoder_blocks"] = c.encoder_blocks;
  m["encoder_heads"] = c.encoder_heads;
  m["cnn_filters"] = c.model.cnn_filters;
  m["text_size"] = c.model.text_size;
  m["dropout"] = c.model.dropout;
  j["model"] = m;
  ordered_json t;
  t["batch_size"] = c.train.batch_size;
  t["learning_rate"] = c.train.learning_rate;
  t["epochs"] = c.train.epochs;
  t["stop_go"] = c.train.stop_go;
  t["eval_every"] = c.train.eval_every;
  t["beta1"] = c.train.beta1;
  t["beta2"] = c.train.beta2;
  t["adam_eps"] = c.train.adam_eps;
  t["threads"] = c.train.threads;
  j["train"] = t;
  ordered_json d;
  d["train"] = c.data;
  d["val"] = optional_path(c.val_data);
  d["test"] = optional_path(c.test_data);
  d["embeddings"] = optional_path(c.embeddings);
  d["split"] = c.split_ratios;
  d["min_freq"] = c.min_freq;
  j["data"] = d;
  j["out"] = c.out;
  return j;
}

RunConfig overlay(const RunConfig& base, const json& j) {
  RunConfig c = base;
  reject_unknown(j, {"seed", "model", "train", "data", "out"}, "config");
  read(j, "seed", c.seed, "config");
  read(j, "out", c.out, "config");
  if (j.contains("model")) {
    const json& m = j.at("model");
    const std::string w = "config.model";
    reject_unknown(m,
                   {"variant", "d_model", "r_hidden", "num_layers", "num_filters", "kernel_size",
                    "encoder_blocks", "encoder_heads", "cnn_filters", "text_size", "dropout"},
                   w);
    if (m.contains("variant")) {
      std::string v;
      read(m, "variant", v, w);
      c.model.variant = zoo::parse_variant(v);
    }
    read(m, "d_model", c.model.d_model, w);
    read(m, "r_hidden", c.model.r_hidden, w);
    read(m, "num_layers", c.model.num_layers, w);
    read(m, "num_filters", c.model.num_filters, w);
    read(m, "kernel_size", c.model.kernel_size, w);
    read(m, "encoder_blocks", c.encoder_blocks, w);
    read(m, "encoder_heads", c.encoder_heads, w);
    read(m, "cnn_filters", c.model.cnn_filters, w);
    read(m, "text_size", c.model.text_size, w);
    read(m, "dropout", c.model.dropout, w);
  }
  if (j.contains("train")) {
    const json& t = j.at("train");
    const std::string w = "config.train";
    reject_unknown(t,
                   {"batch_size", "learning_rate", "epochs", "stop_go", "eval_every", "beta1",
                    "beta2", "adam_eps", "threads"},
                   w);
    read(t, "batch_size", c.train.batch_size, w);
    read(t, "learning_rate", c.train.learning_rate, w);
    read(t, "epochs", c.train.epochs, w);
    read(t, "stop_go", c.train.stop_go, w);
    read(t, "eval_every", c.train.eval_every, w);
    read(t, "beta1", c.train.beta1, w);
    read(t, "beta2", c.train.beta2, w);
    read(t, "adam_eps", c.train.adam_eps, w);
    read(t, "threads", c.train.threads, w);
  }
  if (j.contains("data")) {
    const json& d = j.at("data");
    const std::string w = "config.data";
    reject_unknown(d, {"train", "val", "test", "embeddings", "split", "min_freq"}, w);
    read(d, "train", c.data, w);
    read_optional_path(d, "val", c.val_data, w);
    read_optional_path(d, "test", c.test_data, w);
    read_optional_path(d, "embeddings", c.embeddings, w);
    read(d, "split", c.split_ratios, w);
    read(d, "min_freq", c.min_freq, w);
  }
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path, const RunConfig& base) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw ConfigError("config file '" + path.string() + "': " + e.what());
  }
  return overlay(base, j);
}

void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write '" + tmp.string() + "'");
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw std::runtime_error("short write to '" + tmp.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path.string() + "'");
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

std::string fnv1a_hex(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace dcebad::cli
