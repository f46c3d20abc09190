#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dcebad/data.hpp"
#include "dcebad/layers.hpp"

namespace dcebad::zoo {

/// The nine comparison models. Encoder variants replace pretrained ERNIE with
/// a transformer encoder trained from scratch.
enum class Variant {
  lstm,
  cnn,
  dpcnn,
  bilstm,
  bilstm_at,
  bilstm_at_dpcnn,
  enc_bilstm_at,
  enc_dpcnn,
  dc_ebad,
};

inline constexpr std::array<Variant, 9> kAllVariants = {
    Variant::lstm,          Variant::cnn,           Variant::dpcnn,
    Variant::bilstm,        Variant::bilstm_at,     Variant::bilstm_at_dpcnn,
    Variant::enc_bilstm_at, Variant::enc_dpcnn,     Variant::dc_ebad};

std::string_view variant_name(Variant v);
/// Throws ConfigError for names outside the nine variants.
Variant parse_variant(std::string_view name);

bool uses_encoder(Variant v);
bool uses_bilstm_attention(Variant v);
bool uses_dpcnn(Variant v);

struct ModelConfig {
  Variant variant = Variant::dc_ebad;
  std::size_t vocab_size = data::kNumReserved;
  std::size_t d_model = 768;
  std::size_t r_hidden = 256;
  std::size_t num_layers = 2;
  std::size_t num_filters = 250;
  std::size_t kernel_size = 3;
  std::optional<std::size_t> encoder_blocks;
  std::optional<std::size_t> encoder_heads;
  /// Filters per width in the CNN baseline (widths 2, 3, 4).
  std::size_t cnn_filters = 100;
  std::size_t num_classes = 10;
  std::size_t text_size = 32;
  double dropout = 0.5;
  std::uint64_t seed = 1;

  /// Table-1 sized configuration; encoder fields (2 blocks, 12 heads) only for encoder variants.
  static ModelConfig defaults_for(Variant v);
  /// Copy switched to another variant, setting or clearing the encoder fields.
  ModelConfig with_variant(Variant v, std::size_t blocks = 2, std::size_t heads = 12) const;

  /// Throws ConfigError describing the first inconsistency.
  void validate() const;
  /// Width of the concatenated feature vector feeding the classifier.
  std::size_t feature_width() const;

  bool operator==(const ModelConfig&) const = default;
};

enum class Mode { train, eval };

struct Prediction {
  std::size_t label = 0;
  std::vector<double> probabilities;
};

/// Softmax of one logit row; label is the argmax with ties toward the lowest index.
Prediction predict_from_logits(std::span<const double> logits);

class Model {
 public:
  static Model build(const ModelConfig& config);

  const ModelConfig& config() const { return config_; }
  /// Every allocated parameter, in a fixed order.
  const std::vector<NamedTensor>& parameters() const { return params_; }
  std::optional<Tensor> find(std::string_view name) const;
  std::size_t parameter_count() const;

  /// Token + segment + position embeddings for B stacked rows of seq_len ids.
  Tensor input_embedding(Tape& tape, std::span<const std::size_t> ids, std::size_t seq_len) const;

  /// Logits (B x num_classes). `rng` drives dropout and is required in train mode.
  Tensor forward(Tape& tape, const data::Batch& batch, Mode mode,
                 std::mt19937_64* rng = nullptr) const;

  std::vector<Prediction> predict(const data::Batch& batch) const;
  Prediction predict(const data::EncodedRow& row) const;

  /// Copies of every parameter's values, in parameters() order.
  std::vector<std::vector<double>> snapshot() const;
  void restore(const std::vector<std::vector<double>>& values);

 private:
  Model() = default;
  void register_params(const std::vector<NamedTensor>& named);
  Tensor features(Tape& tape, const data::Batch& batch) const;

  ModelConfig config_;
  std::vector<NamedTensor> params_;

  Tensor token_embed_;
  Tensor segment_embed_;
  Tensor position_embed_;
  std::vector<nn::EncoderBlockParams> encoder_;
  std::vector<nn::LstmParams> lstm_fwd_;
  std::vector<nn::LstmParams> lstm_bwd_;
  std::optional<nn::AttnPoolParams> attn_pool_;
  std::optional<nn::ConvStackParams> dpcnn_;
  struct CnnBank {
    std::size_t width;
    Tensor w, b;
  };
  std::vector<CnnBank> cnn_;
  Tensor classifier_w_;
  Tensor classifier_b_;
};

}  // namespace dcebad::zoo
