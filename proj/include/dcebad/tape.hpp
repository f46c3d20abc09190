#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dcebad/tensor.hpp"

namespace dcebad {

enum class EwiseKind { add, sub, hadamard, sigmoid, tanh, relu };

std::string_view ewise_name(EwiseKind kind);

/// Records differentiable operations in execution order and replays their
/// backward rules in reverse.
///
/// Every op runs eagerly. An op is recorded only when at least one input
/// requires a gradient; otherwise its output is a constant. A Tape and the
/// tensors it produces belong to a single thread.
///
/// Ops operate on rank-2 tensors (rows x cols) unless stated otherwise.
/// Batched sequence ops take `seq_len` and treat the input as B stacked
/// sequences of seq_len rows each.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  std::size_t size() const { return records_.size(); }
  std::vector<std::string_view> op_names() const;

  // Linear algebra
  Tensor matmul(const Tensor& a, const Tensor& b);
  Tensor transpose(const Tensor& a);

  // Elementwise. `add` also accepts a 1 x n bias row against an m x n matrix.
  Tensor ewise(EwiseKind kind, const Tensor& a, const std::optional<Tensor>& b = std::nullopt);
  Tensor add(const Tensor& a, const Tensor& b);
  Tensor sub(const Tensor& a, const Tensor& b);
  Tensor hadamard(const Tensor& a, const Tensor& b);
  Tensor sigmoid(const Tensor& a);
  Tensor tanh(const Tensor& a);
  Tensor relu(const Tensor& a);
  Tensor scale(const Tensor& a, double factor);

  // Reductions
  Tensor sum(const Tensor& a);
  /// sum(a ⊙ w) for a constant weight tensor of equal shape.
  Tensor weighted_sum(const Tensor& a, const Tensor& weights);

  // Normalisation
  Tensor softmax_rows(const Tensor& a);
  /// Row softmax where column j is excluded when key_mask[j] == 0.
  /// Excluded columns receive exactly zero probability.
  Tensor masked_softmax_rows(const Tensor& a, std::span<const std::uint8_t> key_mask);
  /// Per-row layer normalisation with gain/bias rows of width cols(a).
  Tensor layer_norm(const Tensor& a, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

  // Structural
  Tensor concat_last(const Tensor& a, const Tensor& b);
  Tensor concat_cols(std::span<const Tensor> parts);
  Tensor concat_rows(std::span<const Tensor> parts);
  Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end);
  Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end);
  /// Output row i is row indices[i] of `a` (embedding lookup, reordering).
  Tensor gather_rows(const Tensor& a, std::span<const std::size_t> indices);
  Tensor reshape(const Tensor& a, Shape shape);

  // Sequence ops over B stacked sequences of `seq_len` rows.
  /// 1-D convolution along the sequence axis. `weight` is (width*C_in) x C_out
  /// with row index tap*C_in + channel; `bias` is 1 x C_out. Each sequence is
  /// zero-padded by pad_left/pad_right rows.
  Tensor conv1d(const Tensor& x, std::size_t seq_len, const Tensor& weight, const Tensor& bias,
                std::size_t width, std::size_t pad_left, std::size_t pad_right);
  /// Max pool, window 3, stride 2, right-padded with -inf; output length ceil(L/2).
  Tensor halving_pool(const Tensor& x, std::size_t seq_len);
  /// Max over every position of each sequence; output B x C.
  Tensor max_over_time(const Tensor& x, std::size_t seq_len);

  /// Inverted dropout: kept entries are divided by (1 - rate).
  Tensor dropout(const Tensor& a, double rate, std::mt19937_64& rng);

  /// Mean over rows of -log softmax(logits)[label].
  Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> labels);

  /// Reverse-mode accumulation from a scalar tensor recorded on this tape.
  void backward(const Tensor& loss);

  /// Test hook: multiply the gradient flowing back through every op named
  /// `op` by `factor`. Used as a negative control for gradient checks.
  /// Smallest distance seen so far between a relu input and zero, or between
  /// the winner and runner-up of a max-pool window. Finite differences with a
  /// step below this margin do not cross a kink.
  double kink_margin() const { return kink_margin_; }

  void corrupt_backward(std::string op, double factor) {
    fault_op_ = std::move(op);
    fault_factor_ = factor;
  }

 private:
  using BackwardFn = std::function<void()>;

  struct Record {
    std::string_view op;
    std::vector<Tensor> inputs;
    Tensor output;
    BackwardFn backward;
  };

  static bool any_requires_grad(std::initializer_list<const Tensor*> inputs);
  Tensor make_output(Shape shape, std::vector<double> values, std::string_view op,
                     bool tracked);
  void push(std::string_view op, std::vector<Tensor> inputs, const Tensor& output,
            BackwardFn fn);

  std::vector<Record> records_;
  std::string fault_op_;
  double fault_factor_ = 1.0;
  double kink_margin_ = std::numeric_limits<double>::infinity();
};

}  // namespace dcebad
