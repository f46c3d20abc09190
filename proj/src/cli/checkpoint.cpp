#include "dcebad/cli/checkpoint.hpp"

#include <bit>
#include <cstring>

#include "json.hpp"

#include "dcebad/cli/config.hpp"
#include "dcebad/errors.hpp"

namespace dcebad::cli {

namespace {

static_assert(std::numeric_limits<float>::is_iec559, "checkpoints store IEEE-754 binary32");

template <typename U>
void put_le(std::string& out, U value) {
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    out.push_back(static_cast<char>((value >> (8 * i)) & 0xFF));
  }
}

class Reader {
 public:
  Reader(const std::string& bytes, const std::string& source) : bytes_(bytes), source_(source) {}

  template <typename U>
  U le() {
    need(sizeof(U), "integer");
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      v |= static_cast<U>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(U);
    return v;
  }

  std::string take(std::size_t n, const char* what) {
    need(n, what);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }
  std::size_t remaining() const { return bytes_.size() - pos_; }

  [[noreturn]] void fail(const std::string& msg) const {
    throw CheckpointError(source_ + ": corrupt checkpoint: " + msg);
  }

 private:
  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) {
      fail(std::string("truncated while reading ") + what + " at byte " + std::to_string(pos_));
    }
  }

  const std::string& bytes_;
  std::string source_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string serialize_checkpoint(const zoo::Model& model, const std::vector<std::string>& labels,
                                 const data::Vocab& vocab) {
  nlohmann::ordered_json header;
  header["config"] = model_config_to_json(model.config());
  header["labels"] = labels;
  header["vocab"] = vocab.tokens();
  const std::string header_text = header.dump();

  std::string out(kCheckpointMagic, kCheckpointMagic + 4);
  put_le<std::uint32_t>(out, kCheckpointVersion);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(header_text.size()));
  out += header_text;
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(model.parameters().size()));
  for (const auto& [name, tensor] : model.parameters()) {
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(tensor.rank()));
    for (std::size_t d : tensor.shape()) put_le<std::uint64_t>(out, d);
    for (double v : tensor.values()) {
      put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    }
  }
  return out;
}

Checkpoint parse_checkpoint(const std::string& bytes, const std::string& source) {
  Reader r(bytes, source);
  if (r.take(4, "magic") != std::string(kCheckpointMagic, 4)) r.fail("bad magic (expected DCEB)");
  const auto version = r.le<std::uint32_t>();
  if (version != kCheckpointVersion) {
    r.fail("unsupported format version " + std::to_string(version));
  }
  const auto header_len = r.le<std::uint32_t>();
  const std::string header_text = r.take(header_len, "header");

  Checkpoint ckpt;
  try {
    const auto header = nlohmann::json::parse(header_text);
    ckpt.config = model_config_from_json(header.at("config"));
    ckpt.labels = header.at("labels").get<std::vector<std::string>>();
    ckpt.vocab = data::Vocab::from_tokens(header.at("vocab").get<std::vector<std::string>>());
  } catch (const CheckpointError&) {
    throw;
  } catch (const std::exception& e) {
    r.fail(std::string("unreadable header: ") + e.what());
  }

  const auto count = r.le<std::uint32_t>();
  for (std::uint32_t t = 0; t < count; ++t) {
    const auto name_len = r.le<std::uint32_t>();
    std::string name = r.take(name_len, "tensor name");
    const auto rank = r.le<std::uint32_t>();
    if (rank == 0) r.fail("tensor '" + name + "' has rank 0");
    Shape shape;
    std::uint64_t numel = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      const auto extent = r.le<std::uint64_t>();
      if (extent != 0 && numel > r.remaining() / extent) r.fail("tensor '" + name + "' is oversized");
      numel *= extent;
      shape.push_back(static_cast<std::size_t>(extent));
    }
    if (numel > r.remaining() / 4) r.fail("truncated in values of tensor '" + name + "'");
    std::vector<double> values(numel);
    for (auto& v : values) v = static_cast<double>(std::bit_cast<float>(r.le<std::uint32_t>()));
    ckpt.tensors.push_back({std::move(name), Tensor::from(std::move(shape), std::move(values))});
  }
  if (!r.done()) r.fail(std::to_string(r.remaining()) + " trailing bytes");
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const zoo::Model& model,
                     const std::vector<std::string>& labels, const data::Vocab& vocab) {
  write_file_atomic(path, serialize_checkpoint(model, labels, vocab));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::string bytes;
  try {
    bytes = read_file(path);
  } catch (const std::runtime_error& e) {
    throw CheckpointError(e.what());
  }
  return parse_checkpoint(bytes, path.string());
}

zoo::Model instantiate(const Checkpoint& ckpt) {
  zoo::Model model = zoo::Model::build(ckpt.config);
  const auto& params = model.parameters();
  if (params.size() != ckpt.tensors.size()) {
    throw CheckpointError("checkpoint holds " + std::to_string(ckpt.tensors.size()) +
                          " tensors but the model has " + std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& [name, stored] = ckpt.tensors[i];
    if (name != params[i].name || stored.shape() != params[i].tensor.shape()) {
      throw CheckpointError("checkpoint tensor '" + name + "' " + shape_str(stored.shape()) +
                            " does not match model tensor '" + params[i].name + "' " +
                            shape_str(params[i].tensor.shape()));
    }
    auto dst = params[i].tensor.mutable_values();
    auto src = stored.values();
    std::copy(src.begin(), src.end(), dst.begin());
  }
  if (ckpt.vocab.size() != ckpt.config.vocab_size) {
    throw CheckpointError("checkpoint vocabulary size disagrees with its model config");
  }
  if (ckpt.labels.size() != ckpt.config.num_classes) {
    throw CheckpointError("checkpoint label inventory disagrees with its model config");
  }
  return model;
}

void narrow_to_f32(zoo::Model& model) {
  for (const auto& p : model.parameters()) {
    for (double& v : p.tensor.mutable_values()) v = static_cast<double>(static_cast<float>(v));
  }
}

}  // namespace dcebad::cli
