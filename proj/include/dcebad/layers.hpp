#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "dcebad/gradcheck.hpp"
#include "dcebad/tape.hpp"

namespace dcebad::nn {

/// Glorot-uniform weight matrix.
Tensor xavier_uniform(std::size_t rows, std::size_t cols, std::mt19937_64& rng);
/// N(0, stddev) table.
Tensor normal_table(std::size_t rows, std::size_t cols, double stddev, std::mt19937_64& rng);

// ---------------------------------------------------------------------------
// LSTM

/// Gate weights act on the concatenation [h_{t-1}, x_t]; each is hidden x (hidden + input).
struct LstmParams {
  Tensor w_i, w_f, w_c, w_o;
  Tensor b_i, b_f, b_c, b_o;

  static LstmParams init(std::size_t input, std::size_t hidden, std::mt19937_64& rng);
  std::size_t hidden() const { return w_i.rows(); }
  std::size_t input() const { return w_i.cols() - w_i.rows(); }
  std::vector<NamedTensor> named(const std::string& prefix) const;
};

struct LstmState {
  Tensor h;
  Tensor c;
};

/// Gate weights transposed once per sequence so that every step is a row-major product.
struct LstmStepWeights {
  Tensor w_i_t, w_f_t, w_c_t, w_o_t;
  const LstmParams* params = nullptr;

  static LstmStepWeights prepare(Tape& tape, const LstmParams& p);
};

/// One cell step for a batch of rows: x_t is B x input, h/c are B x hidden.
LstmState lstm_step(Tape& tape, const Tensor& x_t, const LstmState& prev, const LstmStepWeights& w);
LstmState lstm_step(Tape& tape, const Tensor& x_t, const LstmState& prev, const LstmParams& p);

/// Unidirectional LSTM over B stacked sequences; returns (B*T) x hidden, row b*T + t.
Tensor lstm(Tape& tape, const Tensor& x, std::size_t seq_len, const LstmParams& p,
            bool reverse = false);

/// Forward and reversed-direction LSTM spliced per position: (B*T) x 2*hidden.
Tensor bilstm(Tape& tape, const Tensor& x, std::size_t seq_len, const LstmParams& fwd,
              const LstmParams& bwd);

// ---------------------------------------------------------------------------
// Attention pooling

struct AttnPoolParams {
  Tensor w_g;  // att x hidden
  Tensor b_g;  // 1 x att
  Tensor v;    // 1 x att

  static AttnPoolParams init(std::size_t hidden, std::size_t att, std::mt19937_64& rng);
  std::vector<NamedTensor> named(const std::string& prefix) const;
};

struct AttnPoolOutput {
  Tensor pooled;   // B x hidden
  Tensor weights;  // B x T
};

/// Additive attention pooling with a learned context vector. `mask`, when
/// non-empty, has B*T entries and excludes zero positions from the weights.
AttnPoolOutput attention_pool(Tape& tape, const Tensor& h, std::size_t seq_len,
                              const AttnPoolParams& p, std::span<const std::uint8_t> mask = {});

// ---------------------------------------------------------------------------
// Multi-head self-attention and encoder

/// Head i uses columns [i*d_k, (i+1)*d_k) of w_q/w_k/w_v.
struct MultiHeadParams {
  Tensor w_q, w_k, w_v;  // d_model x d_model
  Tensor w_o;            // d_model x d_model
  std::size_t heads = 1;

  static MultiHeadParams init(std::size_t d_model, std::size_t heads, std::mt19937_64& rng);
  std::size_t d_model() const { return w_q.rows(); }
  std::size_t d_k() const { return d_model() / heads; }
  std::vector<NamedTensor> named(const std::string& prefix) const;
};

/// Self-attention over B stacked sequences. `pad_mask` has B*T entries (1 = real token).
/// When `weights_out` is given, it receives one T x T weight matrix per (sequence, head),
/// ordered b*heads + h.
Tensor multi_head_self_attention(Tape& tape, const Tensor& x, std::size_t seq_len,
                                 const MultiHeadParams& p, std::span<const std::uint8_t> pad_mask,
                                 std::vector<Tensor>* weights_out = nullptr);

struct EncoderBlockParams {
  MultiHeadParams attn;
  Tensor ff_w1, ff_b1;  // d_model x d_ff, 1 x d_ff
  Tensor ff_w2, ff_b2;  // d_ff x d_model, 1 x d_model
  Tensor ln1_g, ln1_b;
  Tensor ln2_g, ln2_b;

  static EncoderBlockParams init(std::size_t d_model, std::size_t heads, std::size_t d_ff,
                                 std::mt19937_64& rng);
  std::vector<NamedTensor> named(const std::string& prefix) const;
};

Tensor encoder_block(Tape& tape, const Tensor& x, std::size_t seq_len,
                     const EncoderBlockParams& p, std::span<const std::uint8_t> pad_mask);

Tensor encoder_forward(Tape& tape, const Tensor& x, std::size_t seq_len,
                       std::span<const EncoderBlockParams> blocks,
                       std::span<const std::uint8_t> pad_mask);

// ---------------------------------------------------------------------------
// Convolution stack

/// Width-M convolution with (M-1)/2 zero rows on each side; output length equals input length.
Tensor equal_width_conv(Tape& tape, const Tensor& x, std::size_t seq_len, const Tensor& weight,
                        const Tensor& bias, std::size_t width = 3);

/// Window-3 stride-2 max pool; output length ceil(L/2).
Tensor halving_pool(Tape& tape, const Tensor& x, std::size_t seq_len);

/// Sequence lengths visited by the pyramid: L, ceil(L/2), ... until the length is <= 2.
std::vector<std::size_t> pyramid_lengths(std::size_t seq_len);

struct ConvBlockParams {
  Tensor w1, b1;
  Tensor w2, b2;
};

struct ConvStackParams {
  Tensor region_w, region_b;
  std::vector<ConvBlockParams> blocks;
  std::size_t width = 3;

  /// Allocates enough blocks for sequences up to `max_len`.
  static ConvStackParams init(std::size_t in_channels, std::size_t filters, std::size_t width,
                              std::size_t max_len, std::mt19937_64& rng);
  std::size_t filters() const { return region_w.cols(); }
  std::vector<NamedTensor> named(const std::string& prefix) const;
};

struct DpcnnTrace {
  /// Sequence length entering the region embedding and after every halving.
  std::vector<std::size_t> lengths;
  /// Output positions computed by all convolution layers.
  std::size_t conv_positions = 0;
};

/// Region embedding, then {halve, two pre-activation convolutions, shortcut}
/// while the length exceeds 2, then max over the remaining positions: B x filters.
Tensor dpcnn_forward(Tape& tape, const Tensor& x, std::size_t seq_len, const ConvStackParams& p,
                     DpcnnTrace* trace = nullptr);

}  // namespace dcebad::nn
