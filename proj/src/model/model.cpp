#include "dcebad/model.hpp"

#include <algorithm>
#include <cmath>

#include "dcebad/errors.hpp"

namespace dcebad::zoo {

namespace {

constexpr std::array<std::size_t, 3> kCnnWidths = {2, 3, 4};
constexpr double kEmbeddingStd = 0.02;

}  // namespace

std::string_view variant_name(Variant v) {
  switch (v) {
    case Variant::lstm: return "lstm";
    case Variant::cnn: return "cnn";
    case Variant::dpcnn: return "dpcnn";
    case Variant::bilstm: return "bilstm";
    case Variant::bilstm_at: return "bilstm_at";
    case Variant::bilstm_at_dpcnn: return "bilstm_at_dpcnn";
    case Variant::enc_bilstm_at: return "enc_bilstm_at";
    case Variant::enc_dpcnn: return "enc_dpcnn";
    case Variant::dc_ebad: return "dc_ebad";
  }
  return "?";
}

Variant parse_variant(std::string_view name) {
  for (Variant v : kAllVariants)
    if (variant_name(v) == name) return v;
  throw ConfigError("unknown variant '" + std::string(name) + "'");
}

bool uses_encoder(Variant v) {
  return v == Variant::enc_bilstm_at || v == Variant::enc_dpcnn || v == Variant::dc_ebad;
}

bool uses_bilstm_attention(Variant v) {
  return v == Variant::bilstm_at || v == Variant::bilstm_at_dpcnn || v == Variant::enc_bilstm_at ||
         v == Variant::dc_ebad;
}

bool uses_dpcnn(Variant v) {
  return v == Variant::dpcnn || v == Variant::bilstm_at_dpcnn || v == Variant::enc_dpcnn ||
         v == Variant::dc_ebad;
}

ModelConfig ModelConfig::defaults_for(Variant v) { return ModelConfig{}.with_variant(v); }

ModelConfig ModelConfig::with_variant(Variant v, std::size_t blocks, std::size_t heads) const {
  ModelConfig c = *this;
  c.variant = v;
  if (uses_encoder(v)) {
    if (!c.encoder_blocks) c.encoder_blocks = blocks;
    if (!c.encoder_heads) c.encoder_heads = heads;
  } else {
    c.encoder_blocks.reset();
    c.encoder_heads.reset();
  }
  return c;
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("model config: " + msg); };
  if (vocab_size < data::kNumReserved) fail("vocab_size must cover the 4 reserved tokens");
  if (d_model == 0 || r_hidden == 0 || num_layers == 0 || num_filters == 0 || cnn_filters == 0) {
    fail("d_model, r_hidden, num_layers, num_filters and cnn_filters must be positive");
  }
  if (kernel_size == 0 || kernel_size % 2 == 0) fail("kernel_size must be odd");
  if (num_classes < 2) fail("num_classes must be at least 2");
  if (text_size < 3) fail("text_size must be at least 3");
  if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout must lie in [0, 1)");
  const bool enc = uses_encoder(variant);
  if (enc) {
    if (!encoder_blocks || !encoder_heads) {
      fail("variant " + std::string(variant_name(variant)) +
           " requires encoder_blocks and encoder_heads");
    }
    if (*encoder_blocks == 0) fail("encoder_blocks must be positive");
    if (*encoder_heads == 0 || d_model % *encoder_heads != 0) {
      fail("encoder_heads must divide d_model");
    }
  } else if (encoder_blocks || encoder_heads) {
    fail("variant " + std::string(variant_name(variant)) + " does not use encoder fields");
  }
}

std::size_t ModelConfig::feature_width() const {
  switch (variant) {
    case Variant::lstm: return r_hidden;
    case Variant::cnn: return cnn_filters * kCnnWidths.size();
    case Variant::dpcnn:
    case Variant::enc_dpcnn: return num_filters;
    case Variant::bilstm:
    case Variant::bilstm_at:
    case Variant::enc_bilstm_at: return 2 * r_hidden;
    case Variant::bilstm_at_dpcnn:
    case Variant::dc_ebad: return 2 * r_hidden + num_filters;
  }
  return 0;
}

Prediction predict_from_logits(std::span<const double> logits) {
  Prediction p;
  p.probabilities.resize(logits.size());
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (std::size_t j = 0; j < logits.size(); ++j) {
    p.probabilities[j] = std::exp(logits[j] - mx);
    z += p.probabilities[j];
  }
  for (double& v : p.probabilities) v /= z;
  // max_element returns the first maximum, i.e. the lowest class index on ties.
  p.label = static_cast<std::size_t>(std::max_element(logits.begin(), logits.end()) -
                                     logits.begin());
  return p;
}

// ---------------------------------------------------------------------------

void Model::register_params(const std::vector<NamedTensor>& named) {
  params_.insert(params_.end(), named.begin(), named.end());
}

Model Model::build(const ModelConfig& config) {
  config.validate();
  Model m;
  m.config_ = config;
  std::mt19937_64 rng(config.seed);
  const Variant v = config.variant;
  const std::size_t d = config.d_model;

  m.token_embed_ = nn::normal_table(config.vocab_size, d, kEmbeddingStd, rng);
  m.register_params({{"embed.token", m.token_embed_}});
  if (uses_encoder(v)) {
    m.segment_embed_ = nn::normal_table(1, d, kEmbeddingStd, rng);
    m.position_embed_ = nn::normal_table(config.text_size, d, kEmbeddingStd, rng);
    m.register_params({{"embed.segment", m.segment_embed_}, {"embed.position", m.position_embed_}});
    for (std::size_t i = 0; i < *config.encoder_blocks; ++i) {
      m.encoder_.push_back(nn::EncoderBlockParams::init(d, *config.encoder_heads, 4 * d, rng));
      m.register_params(m.encoder_.back().named("encoder." + std::to_string(i)));
    }
  }

  const bool bidirectional = v == Variant::bilstm || uses_bilstm_attention(v);
  if (v == Variant::lstm || bidirectional) {
    const std::size_t width = bidirectional ? 2 * config.r_hidden : config.r_hidden;
    for (std::size_t layer = 0; layer < config.num_layers; ++layer) {
      const std::size_t in = layer == 0 ? d : width;
      const std::string prefix = "lstm." + std::to_string(layer);
      m.lstm_fwd_.push_back(nn::LstmParams::init(in, config.r_hidden, rng));
      m.register_params(m.lstm_fwd_.back().named(prefix + ".fwd"));
      if (bidirectional) {
        m.lstm_bwd_.push_back(nn::LstmParams::init(in, config.r_hidden, rng));
        m.register_params(m.lstm_bwd_.back().named(prefix + ".bwd"));
      }
    }
  }
  if (uses_bilstm_attention(v)) {
    m.attn_pool_ = nn::AttnPoolParams::init(2 * config.r_hidden, 2 * config.r_hidden, rng);
    m.register_params(m.attn_pool_->named("attn_pool"));
  }
  if (uses_dpcnn(v)) {
    m.dpcnn_ = nn::ConvStackParams::init(d, config.num_filters, config.kernel_size,
                                         config.text_size, rng);
    m.register_params(m.dpcnn_->named("dpcnn"));
  }
  if (v == Variant::cnn) {
    for (std::size_t w : kCnnWidths) {
      CnnBank bank{w, nn::xavier_uniform(w * d, config.cnn_filters, rng),
                   Tensor::zeros({1, config.cnn_filters}, true)};
      m.register_params({{"cnn.w" + std::to_string(w), bank.w}, {"cnn.b" + std::to_string(w), bank.b}});
      m.cnn_.push_back(std::move(bank));
    }
  }
  m.classifier_w_ = nn::xavier_uniform(config.feature_width(), config.num_classes, rng);
  m.classifier_b_ = Tensor::zeros({1, config.num_classes}, true);
  m.register_params({{"classifier.w", m.classifier_w_}, {"classifier.b", m.classifier_b_}});
  return m;
}

std::optional<Tensor> Model::find(std::string_view name) const {
  for (const auto& p : params_)
    if (p.name == name) return p.tensor;
  return std::nullopt;
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.tensor.numel();
  return n;
}

Tensor Model::input_embedding(Tape& tape, std::span<const std::size_t> ids,
                              std::size_t seq_len) const {
  if (seq_len == 0 || ids.size() % seq_len != 0) {
    throw DimensionError("input_embedding: " + std::to_string(ids.size()) +
                         " ids do not form rows of length " + std::to_string(seq_len));
  }
  for (std::size_t id : ids) {
    if (id >= config_.vocab_size) {
      throw DimensionError("input_embedding: token id " + std::to_string(id) +
                           " outside vocabulary of " + std::to_string(config_.vocab_size));
    }
  }
  const Tensor tokens = tape.gather_rows(token_embed_, ids);
  if (!uses_encoder(config_.variant)) return tokens;
  if (seq_len > position_embed_.rows()) {
    throw DimensionError("input_embedding: sequence length " + std::to_string(seq_len) +
                         " exceeds " + std::to_string(position_embed_.rows()) + " positions");
  }
  std::vector<std::size_t> segments(ids.size(), 0);
  std::vector<std::size_t> positions(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) positions[i] = i % seq_len;
  return tape.add(tape.add(tokens, tape.gather_rows(segment_embed_, segments)),
                  tape.gather_rows(position_embed_, positions));
}

Tensor Model::features(Tape& tape, const data::Batch& batch) const {
  const std::size_t t_len = batch.text_size;
  const std::size_t bsz = batch.size;
  if (batch.ids.size() != bsz * t_len || batch.mask.size() != bsz * t_len ||
      t_len != config_.text_size) {
    throw DimensionError("forward: batch of " + std::to_string(bsz) + " x " +
                         std::to_string(t_len) + " does not match model text_size " +
                         std::to_string(config_.text_size));
  }
  const Variant v = config_.variant;

  Tensor x = input_embedding(tape, batch.ids, t_len);
  if (uses_encoder(v)) x = nn::encoder_forward(tape, x, t_len, encoder_, batch.mask);

  // Row of the last real token ([SEP]) and of the first position, per sequence.
  std::vector<std::size_t> last_rows(bsz), first_rows(bsz);
  for (std::size_t b = 0; b < bsz; ++b) {
    std::size_t len = 0;
    for (std::size_t t = 0; t < t_len; ++t) len += batch.mask[b * t_len + t] ? 1 : 0;
    last_rows[b] = b * t_len + (len == 0 ? 0 : len - 1);
    first_rows[b] = b * t_len;
  }

  std::vector<Tensor> parts;
  if (v == Variant::lstm) {
    Tensor h = x;
    for (const auto& layer : lstm_fwd_) h = nn::lstm(tape, h, t_len, layer);
    parts.push_back(tape.gather_rows(h, last_rows));
  } else if (!lstm_bwd_.empty()) {
    Tensor h = x;
    for (std::size_t i = 0; i < lstm_fwd_.size(); ++i) {
      h = nn::bilstm(tape, h, t_len, lstm_fwd_[i], lstm_bwd_[i]);
    }
    const std::size_t hid = config_.r_hidden;
    if (attn_pool_) {
      parts.push_back(nn::attention_pool(tape, h, t_len, *attn_pool_, batch.mask).pooled);
    } else {
      // Forward state after the last real token, backward state after a full reversed pass.
      parts.push_back(tape.slice_cols(tape.gather_rows(h, last_rows), 0, hid));
      parts.push_back(tape.slice_cols(tape.gather_rows(h, first_rows), hid, 2 * hid));
    }
  }
  if (dpcnn_) parts.push_back(nn::dpcnn_forward(tape, x, t_len, *dpcnn_));
  for (const auto& bank : cnn_) {
    const Tensor conv =
        tape.conv1d(x, t_len, bank.w, bank.b, bank.width, (bank.width - 1) / 2, bank.width / 2);
    parts.push_back(tape.max_over_time(tape.relu(conv), t_len));
  }
  return parts.size() == 1 ? parts.front() : tape.concat_cols(parts);
}

Tensor Model::forward(Tape& tape, const data::Batch& batch, Mode mode,
                      std::mt19937_64* rng) const {
  Tensor feats = features(tape, batch);
  if (mode == Mode::train && config_.dropout > 0.0) {
    if (!rng) throw ContractError("forward: train mode needs a dropout RNG");
    feats = tape.dropout(feats, config_.dropout, *rng);
  }
  return tape.add(tape.matmul(feats, classifier_w_), classifier_b_);
}

std::vector<Prediction> Model::predict(const data::Batch& batch) const {
  Tape tape;
  const Tensor logits = forward(tape, batch, Mode::eval);
  std::vector<Prediction> out;
  out.reserve(batch.size);
  const std::size_t k = logits.cols();
  for (std::size_t b = 0; b < batch.size; ++b) {
    out.push_back(predict_from_logits(logits.values().subspan(b * k, k)));
  }
  return out;
}

Prediction Model::predict(const data::EncodedRow& row) const {
  data::Batch batch;
  batch.size = 1;
  batch.text_size = row.ids.size();
  batch.ids = row.ids;
  batch.mask = row.mask;
  batch.labels = {0};
  return predict(batch).front();
}

std::vector<std::vector<double>> Model::snapshot() const {
  std::vector<std::vector<double>> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.emplace_back(p.tensor.values().begin(), p.tensor.values().end());
  return out;
}

void Model::restore(const std::vector<std::vector<double>>& values) {
  if (values.size() != params_.size()) throw ContractError("restore: parameter count mismatch");
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor t = params_[i].tensor;
    if (values[i].size() != t.numel()) {
      throw DimensionError("restore: size mismatch for '" + params_[i].name + "'");
    }
    std::copy(values[i].begin(), values[i].end(), t.mutable_values().begin());
  }
}

}  // namespace dcebad::zoo
