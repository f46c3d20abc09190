#include <cmath>

#include "dcebad/errors.hpp"
#include "dcebad/layers.hpp"

namespace dcebad::nn {

namespace {

std::size_t batch_of(const Tensor& x, std::size_t seq_len, const char* op) {
  if (seq_len == 0 || x.rows() == 0) throw ContractError(std::string(op) + ": empty sequence");
  if (x.rows() % seq_len != 0) {
    throw DimensionError(std::string(op) + ": " + std::to_string(x.rows()) +
                         " rows is not a multiple of sequence length " + std::to_string(seq_len));
  }
  return x.rows() / seq_len;
}

}  // namespace

AttnPoolParams AttnPoolParams::init(std::size_t hidden, std::size_t att, std::mt19937_64& rng) {
  return {xavier_uniform(att, hidden, rng), Tensor::zeros({1, att}, true),
          xavier_uniform(1, att, rng)};
}

std::vector<NamedTensor> AttnPoolParams::named(const std::string& prefix) const {
  return {{prefix + ".w_g", w_g}, {prefix + ".b_g", b_g}, {prefix + ".v", v}};
}

AttnPoolOutput attention_pool(Tape& tape, const Tensor& h, std::size_t seq_len,
                              const AttnPoolParams& p, std::span<const std::uint8_t> mask) {
  const std::size_t batch = batch_of(h, seq_len, "attention_pool");
  if (!mask.empty() && mask.size() != h.rows()) {
    throw DimensionError("attention_pool: mask length " + std::to_string(mask.size()) +
                         " != " + std::to_string(h.rows()));
  }
  const Tensor u = tape.tanh(tape.add(tape.matmul(h, tape.transpose(p.w_g)), p.b_g));
  const Tensor scores = tape.reshape(tape.matmul(u, tape.transpose(p.v)), {batch, seq_len});

  std::vector<Tensor> weights(batch);
  std::vector<Tensor> pooled(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    const Tensor row = tape.slice_rows(scores, b, b + 1);
    weights[b] = mask.empty() ? tape.softmax_rows(row)
                              : tape.masked_softmax_rows(row, mask.subspan(b * seq_len, seq_len));
    pooled[b] = tape.matmul(weights[b], tape.slice_rows(h, b * seq_len, (b + 1) * seq_len));
  }
  return {tape.concat_rows(pooled), tape.concat_rows(weights)};
}

MultiHeadParams MultiHeadParams::init(std::size_t d_model, std::size_t heads,
                                      std::mt19937_64& rng) {
  if (heads == 0 || d_model % heads != 0) {
    throw ContractError("multi-head attention: " + std::to_string(heads) +
                        " heads do not divide d_model " + std::to_string(d_model));
  }
  MultiHeadParams p;
  p.w_q = xavier_uniform(d_model, d_model, rng);
  p.w_k = xavier_uniform(d_model, d_model, rng);
  p.w_v = xavier_uniform(d_model, d_model, rng);
  p.w_o = xavier_uniform(d_model, d_model, rng);
  p.heads = heads;
  return p;
}

std::vector<NamedTensor> MultiHeadParams::named(const std::string& prefix) const {
  return {{prefix + ".w_q", w_q}, {prefix + ".w_k", w_k}, {prefix + ".w_v", w_v},
          {prefix + ".w_o", w_o}};
}

Tensor multi_head_self_attention(Tape& tape, const Tensor& x, std::size_t seq_len,
                                 const MultiHeadParams& p, std::span<const std::uint8_t> pad_mask,
                                 std::vector<Tensor>* weights_out) {
  const std::size_t batch = batch_of(x, seq_len, "multi_head_self_attention");
  const std::size_t d_model = p.d_model();
  if (p.heads == 0 || d_model % p.heads != 0) {
    throw ContractError("multi_head_self_attention: head count must divide d_model");
  }
  if (x.cols() != d_model) {
    throw DimensionError("multi_head_self_attention: input width " + std::to_string(x.cols()) +
                         " != d_model " + std::to_string(d_model));
  }
  if (pad_mask.size() != x.rows()) {
    throw DimensionError("multi_head_self_attention: mask length " +
                         std::to_string(pad_mask.size()) + " != sequence positions " +
                         std::to_string(x.rows()));
  }
  const std::size_t d_k = p.d_k();
  const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(d_k));

  const Tensor q = tape.matmul(x, p.w_q);
  const Tensor k = tape.matmul(x, p.w_k);
  const Tensor v = tape.matmul(x, p.w_v);

  std::vector<Tensor> per_sequence(batch);
  std::vector<Tensor> heads(p.heads);
  for (std::size_t b = 0; b < batch; ++b) {
    const std::size_t r0 = b * seq_len, r1 = r0 + seq_len;
    const Tensor qb = tape.slice_rows(q, r0, r1);
    const Tensor kb = tape.slice_rows(k, r0, r1);
    const Tensor vb = tape.slice_rows(v, r0, r1);
    const auto mask = pad_mask.subspan(r0, seq_len);
    for (std::size_t h = 0; h < p.heads; ++h) {
      const std::size_t c0 = h * d_k, c1 = c0 + d_k;
      const Tensor qh = tape.slice_cols(qb, c0, c1);
      const Tensor kh = tape.slice_cols(kb, c0, c1);
      const Tensor vh = tape.slice_cols(vb, c0, c1);
      const Tensor scores = tape.scale(tape.matmul(qh, tape.transpose(kh)), inv_sqrt_dk);
      const Tensor weights = tape.masked_softmax_rows(scores, mask);
      if (weights_out) weights_out->push_back(weights);
      heads[h] = tape.matmul(weights, vh);
    }
    per_sequence[b] = p.heads == 1 ? heads.front() : tape.concat_cols(heads);
  }
  return tape.matmul(tape.concat_rows(per_sequence), p.w_o);
}

EncoderBlockParams EncoderBlockParams::init(std::size_t d_model, std::size_t heads,
                                            std::size_t d_ff, std::mt19937_64& rng) {
  EncoderBlockParams p;
  p.attn = MultiHeadParams::init(d_model, heads, rng);
  p.ff_w1 = xavier_uniform(d_model, d_ff, rng);
  p.ff_b1 = Tensor::zeros({1, d_ff}, true);
  p.ff_w2 = xavier_uniform(d_ff, d_model, rng);
  p.ff_b2 = Tensor::zeros({1, d_model}, true);
  p.ln1_g = Tensor::filled({1, d_model}, 1.0, true);
  p.ln1_b = Tensor::zeros({1, d_model}, true);
  p.ln2_g = Tensor::filled({1, d_model}, 1.0, true);
  p.ln2_b = Tensor::zeros({1, d_model}, true);
  return p;
}

std::vector<NamedTensor> EncoderBlockParams::named(const std::string& prefix) const {
  auto out = attn.named(prefix + ".attn");
  const std::vector<NamedTensor> rest = {
      {prefix + ".ff_w1", ff_w1}, {prefix + ".ff_b1", ff_b1}, {prefix + ".ff_w2", ff_w2},
      {prefix + ".ff_b2", ff_b2}, {prefix + ".ln1_g", ln1_g}, {prefix + ".ln1_b", ln1_b},
      {prefix + ".ln2_g", ln2_g}, {prefix + ".ln2_b", ln2_b}};
  out.insert(out.end(), rest.begin(), rest.end());
  return out;
}

Tensor encoder_block(Tape& tape, const Tensor& x, std::size_t seq_len,
                     const EncoderBlockParams& p, std::span<const std::uint8_t> pad_mask) {
  const Tensor attended = multi_head_self_attention(tape, x, seq_len, p.attn, pad_mask);
  const Tensor x1 = tape.layer_norm(tape.add(x, attended), p.ln1_g, p.ln1_b);
  const Tensor inner = tape.relu(tape.add(tape.matmul(x1, p.ff_w1), p.ff_b1));
  const Tensor ff = tape.add(tape.matmul(inner, p.ff_w2), p.ff_b2);
  return tape.layer_norm(tape.add(x1, ff), p.ln2_g, p.ln2_b);
}

Tensor encoder_forward(Tape& tape, const Tensor& x, std::size_t seq_len,
                       std::span<const EncoderBlockParams> blocks,
                       std::span<const std::uint8_t> pad_mask) {
  if (blocks.empty()) throw ContractError("encoder_forward: at least one block is required");
  Tensor out = x;
  for (const auto& block : blocks) out = encoder_block(tape, out, seq_len, block, pad_mask);
  return out;
}

}  // namespace dcebad::nn
