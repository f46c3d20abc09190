#include "dcebad/errors.hpp"
#include "dcebad/layers.hpp"

namespace dcebad::nn {

LstmParams LstmParams::init(std::size_t input, std::size_t hidden, std::mt19937_64& rng) {
  LstmParams p;
  const std::size_t fan = hidden + input;
  p.w_i = xavier_uniform(hidden, fan, rng);
  p.w_f = xavier_uniform(hidden, fan, rng);
  p.w_c = xavier_uniform(hidden, fan, rng);
  p.w_o = xavier_uniform(hidden, fan, rng);
  p.b_i = Tensor::zeros({1, hidden}, true);
  p.b_f = Tensor::filled({1, hidden}, 1.0, true);
  p.b_c = Tensor::zeros({1, hidden}, true);
  p.b_o = Tensor::zeros({1, hidden}, true);
  return p;
}

std::vector<NamedTensor> LstmParams::named(const std::string& prefix) const {
  return {{prefix + ".w_i", w_i}, {prefix + ".w_f", w_f}, {prefix + ".w_c", w_c},
          {prefix + ".w_o", w_o}, {prefix + ".b_i", b_i}, {prefix + ".b_f", b_f},
          {prefix + ".b_c", b_c}, {prefix + ".b_o", b_o}};
}

LstmStepWeights LstmStepWeights::prepare(Tape& tape, const LstmParams& p) {
  return {tape.transpose(p.w_i), tape.transpose(p.w_f), tape.transpose(p.w_c),
          tape.transpose(p.w_o), &p};
}

LstmState lstm_step(Tape& tape, const Tensor& x_t, const LstmState& prev,
                    const LstmStepWeights& w) {
  const LstmParams& p = *w.params;
  if (x_t.cols() != p.input() || prev.h.cols() != p.hidden() || prev.c.cols() != p.hidden()) {
    throw DimensionError("lstm_step: input " + shape_str(x_t.shape()) + ", state " +
                         shape_str(prev.h.shape()) + " do not match parameters for input " +
                         std::to_string(p.input()) + ", hidden " + std::to_string(p.hidden()));
  }
  const Tensor z = tape.concat_last(prev.h, x_t);
  const Tensor i = tape.sigmoid(tape.add(tape.matmul(z, w.w_i_t), p.b_i));
  const Tensor f = tape.sigmoid(tape.add(tape.matmul(z, w.w_f_t), p.b_f));
  const Tensor c_tilde = tape.tanh(tape.add(tape.matmul(z, w.w_c_t), p.b_c));
  const Tensor c = tape.add(tape.hadamard(f, prev.c), tape.hadamard(i, c_tilde));
  const Tensor o = tape.sigmoid(tape.add(tape.matmul(z, w.w_o_t), p.b_o));
  const Tensor h = tape.hadamard(o, tape.tanh(c));
  return {h, c};
}

LstmState lstm_step(Tape& tape, const Tensor& x_t, const LstmState& prev, const LstmParams& p) {
  return lstm_step(tape, x_t, prev, LstmStepWeights::prepare(tape, p));
}

Tensor lstm(Tape& tape, const Tensor& x, std::size_t seq_len, const LstmParams& p, bool reverse) {
  if (seq_len == 0 || x.rows() == 0) throw ContractError("lstm: empty sequence");
  if (x.rows() % seq_len != 0) {
    throw DimensionError("lstm: " + std::to_string(x.rows()) +
                         " rows is not a multiple of sequence length " + std::to_string(seq_len));
  }
  const std::size_t batch = x.rows() / seq_len;
  const LstmStepWeights w = LstmStepWeights::prepare(tape, p);
  LstmState state{Tensor::zeros({batch, p.hidden()}), Tensor::zeros({batch, p.hidden()})};

  std::vector<Tensor> outputs(seq_len);
  std::vector<std::size_t> rows(batch);
  for (std::size_t step = 0; step < seq_len; ++step) {
    const std::size_t t = reverse ? seq_len - 1 - step : step;
    for (std::size_t b = 0; b < batch; ++b) rows[b] = b * seq_len + t;
    state = lstm_step(tape, tape.gather_rows(x, rows), state, w);
    outputs[t] = state.h;
  }
  // Stacked rows are ordered t*B + b; reorder to b*T + t.
  const Tensor stacked = tape.concat_rows(outputs);
  std::vector<std::size_t> order(batch * seq_len);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t t = 0; t < seq_len; ++t) order[b * seq_len + t] = t * batch + b;
  return tape.gather_rows(stacked, order);
}

Tensor bilstm(Tape& tape, const Tensor& x, std::size_t seq_len, const LstmParams& fwd,
              const LstmParams& bwd) {
  if (fwd.hidden() != bwd.hidden()) {
    throw DimensionError("bilstm: forward and backward hidden sizes differ");
  }
  return tape.concat_last(lstm(tape, x, seq_len, fwd, false), lstm(tape, x, seq_len, bwd, true));
}

}  // namespace dcebad::nn
