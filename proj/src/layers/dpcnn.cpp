#include "dcebad/errors.hpp"
#include "dcebad/layers.hpp"

namespace dcebad::nn {

Tensor equal_width_conv(Tape& tape, const Tensor& x, std::size_t seq_len, const Tensor& weight,
                        const Tensor& bias, std::size_t width) {
  if (width % 2 == 0) throw ContractError("equal_width_conv: filter width must be odd");
  const std::size_t pad = (width - 1) / 2;
  return tape.conv1d(x, seq_len, weight, bias, width, pad, pad);
}

Tensor halving_pool(Tape& tape, const Tensor& x, std::size_t seq_len) {
  return tape.halving_pool(x, seq_len);
}

std::vector<std::size_t> pyramid_lengths(std::size_t seq_len) {
  std::vector<std::size_t> lengths{seq_len};
  while (lengths.back() > 2) lengths.push_back((lengths.back() + 1) / 2);
  return lengths;
}

ConvStackParams ConvStackParams::init(std::size_t in_channels, std::size_t filters,
                                      std::size_t width, std::size_t max_len,
                                      std::mt19937_64& rng) {
  ConvStackParams p;
  p.width = width;
  p.region_w = xavier_uniform(width * in_channels, filters, rng);
  p.region_b = Tensor::zeros({1, filters}, true);
  const std::size_t levels = pyramid_lengths(max_len).size() - 1;
  for (std::size_t i = 0; i < levels; ++i) {
    ConvBlockParams block;
    block.w1 = xavier_uniform(width * filters, filters, rng);
    block.b1 = Tensor::zeros({1, filters}, true);
    block.w2 = xavier_uniform(width * filters, filters, rng);
    block.b2 = Tensor::zeros({1, filters}, true);
    p.blocks.push_back(std::move(block));
  }
  return p;
}

std::vector<NamedTensor> ConvStackParams::named(const std::string& prefix) const {
  std::vector<NamedTensor> out = {{prefix + ".region_w", region_w},
                                  {prefix + ".region_b", region_b}};
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const std::string b = prefix + ".block" + std::to_string(i);
    out.push_back({b + ".w1", blocks[i].w1});
    out.push_back({b + ".b1", blocks[i].b1});
    out.push_back({b + ".w2", blocks[i].w2});
    out.push_back({b + ".b2", blocks[i].b2});
  }
  return out;
}

Tensor dpcnn_forward(Tape& tape, const Tensor& x, std::size_t seq_len, const ConvStackParams& p,
                     DpcnnTrace* trace) {
  if (seq_len == 0 || x.rows() == 0) throw ContractError("dpcnn_forward: empty sequence");
  std::size_t len = seq_len;
  DpcnnTrace local;
  local.lengths.push_back(len);

  Tensor z = equal_width_conv(tape, x, len, p.region_w, p.region_b, p.width);
  local.conv_positions += len;
  std::size_t level = 0;
  while (len > 2) {
    if (level >= p.blocks.size()) {
      throw DimensionError("dpcnn_forward: sequence length " + std::to_string(seq_len) +
                           " needs more than the " + std::to_string(p.blocks.size()) +
                           " allocated blocks");
    }
    const ConvBlockParams& block = p.blocks[level++];
    z = halving_pool(tape, z, len);
    len = (len + 1) / 2;
    local.lengths.push_back(len);
    // Pre-activation: conv(x) = W relu(x) + b.
    const Tensor c1 = equal_width_conv(tape, tape.relu(z), len, block.w1, block.b1, p.width);
    const Tensor c2 = equal_width_conv(tape, tape.relu(c1), len, block.w2, block.b2, p.width);
    local.conv_positions += 2 * len;
    z = tape.add(z, c2);
  }
  if (trace) *trace = std::move(local);
  return tape.max_over_time(z, len);
}

}  // namespace dcebad::nn
