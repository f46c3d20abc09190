#include "dcebad/tape.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "dcebad/errors.hpp"

namespace dcebad {

namespace {

void require_rank2(const Tensor& t, std::string_view op) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected rank-2 operand, got " + shape_str(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, std::string_view op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// c[m x n] += a[m x k] * b[k x n]
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    const double* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = ai[p];
      if (aip == 0.0) continue;
      const double* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
    }
  }
}

// c[m x k] += a[m x n] * b[k x n]^T
void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t n,
             std::size_t k) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * n;
    double* ci = c + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double* bp = b + p * n;
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) acc += ai[j] * bp[j];
      ci[p] += acc;
    }
  }
}

// c[k x n] += a[m x k]^T * b[m x n]
void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    const double* bi = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = ai[p];
      if (aip == 0.0) continue;
      double* cp = c + p * n;
      for (std::size_t j = 0; j < n; ++j) cp[j] += aip * bi[j];
    }
  }
}

void check_finite(std::span<const double> xs, std::string_view op, std::string_view phase) {
  for (double x : xs) {
    if (!std::isfinite(x)) {
      throw NumericError("non-finite value in " + std::string(phase) + " of op '" +
                         std::string(op) + "'");
    }
  }
}

std::size_t num_sequences(const Tensor& x, std::size_t seq_len, std::string_view op) {
  require_rank2(x, op);
  if (seq_len == 0) throw ContractError(std::string(op) + ": sequence length must be >= 1");
  if (x.rows() % seq_len != 0) {
    throw DimensionError(std::string(op) + ": " + std::to_string(x.rows()) +
                         " rows is not a multiple of sequence length " + std::to_string(seq_len));
  }
  return x.rows() / seq_len;
}

}  // namespace

std::string_view ewise_name(EwiseKind kind) {
  switch (kind) {
    case EwiseKind::add: return "add";
    case EwiseKind::sub: return "sub";
    case EwiseKind::hadamard: return "hadamard";
    case EwiseKind::sigmoid: return "sigmoid";
    case EwiseKind::tanh: return "tanh";
    case EwiseKind::relu: return "relu";
  }
  return "?";
}

std::vector<std::string_view> Tape::op_names() const {
  std::vector<std::string_view> names;
  names.reserve(records_.size());
  for (const auto& r : records_) names.push_back(r.op);
  return names;
}

bool Tape::any_requires_grad(std::initializer_list<const Tensor*> inputs) {
  return std::any_of(inputs.begin(), inputs.end(),
                     [](const Tensor* t) { return t->requires_grad(); });
}

Tensor Tape::make_output(Shape shape, std::vector<double> values, std::string_view op,
                         bool tracked) {
  check_finite(values, op, "forward");
  Tensor out = Tensor::from(std::move(shape), std::move(values), tracked);
  return out;
}

void Tape::push(std::string_view op, std::vector<Tensor> inputs, const Tensor& output,
                BackwardFn fn) {
  output.s_->node_id = records_.size();
  output.s_->tape = this;
  records_.push_back(Record{op, std::move(inputs), output, std::move(fn)});
}

// ---------------------------------------------------------------------------
// Linear algebra

Tensor Tape::matmul(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) {
    throw DimensionError("matmul: inner dimensions disagree for " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  }
  std::vector<double> out(m * n, 0.0);
  gemm_nn(a.values().data(), b.values().data(), out.data(), m, k, n);
  const bool tracked = any_requires_grad({&a, &b});
  Tensor y = make_output({m, n}, std::move(out), "matmul", tracked);
  if (tracked) {
    push("matmul", {a, b}, y, [a, b, y, m, k, n]() mutable {
      auto dy = y.grad();
      if (a.requires_grad()) gemm_nt(dy.data(), b.values().data(), a.grad().data(), m, n, k);
      if (b.requires_grad()) gemm_tn(a.values().data(), dy.data(), b.grad().data(), m, k, n);
    });
  }
  return y;
}

Tensor Tape::transpose(const Tensor& a) {
  require_rank2(a, "transpose");
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<double> out(m * n);
  auto av = a.values();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = av[i * n + j];
  const bool tracked = a.requires_grad();
  Tensor y = make_output({n, m}, std::move(out), "transpose", tracked);
  if (tracked) {
    push("transpose", {a}, y, [a, y, m, n]() mutable {
      auto dy = y.grad();
      auto da = a.grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) da[i * n + j] += dy[j * m + i];
    });
  }
  return y;
}

// ---------------------------------------------------------------------------
// Elementwise

Tensor Tape::ewise(EwiseKind kind, const Tensor& a, const std::optional<Tensor>& b) {
  const bool binary =
      kind == EwiseKind::add || kind == EwiseKind::sub || kind == EwiseKind::hadamard;
  if (binary != b.has_value()) {
    throw ContractError(std::string(ewise_name(kind)) +
                        (binary ? ": requires two operands" : ": takes one operand"));
  }
  switch (kind) {
    case EwiseKind::add: return add(a, *b);
    case EwiseKind::sub: return sub(a, *b);
    case EwiseKind::hadamard: return hadamard(a, *b);
    case EwiseKind::sigmoid: return sigmoid(a);
    case EwiseKind::tanh: return tanh(a);
    case EwiseKind::relu: return relu(a);
  }
  throw ContractError("unknown elementwise kind");
}

Tensor Tape::add(const Tensor& a, const Tensor& b) {
  const bool bias_row = a.shape() != b.shape() && a.rank() == 2 && b.rank() == 2 &&
                        b.rows() == 1 && b.cols() == a.cols();
  if (!bias_row) require_same_shape(a, b, "add");
  const std::size_t n = a.numel();
  const std::size_t width = bias_row ? a.cols() : n;
  std::vector<double> out(a.values().begin(), a.values().end());
  auto bv = b.values();
  if (bias_row) {
    for (std::size_t i = 0; i < n; ++i) out[i] += bv[i % width];
  } else {
    for (std::size_t i = 0; i < n; ++i) out[i] += bv[i];
  }
  const bool tracked = any_requires_grad({&a, &b});
  Tensor y = make_output(a.shape(), std::move(out), "add", tracked);
  if (tracked) {
    push("add", {a, b}, y, [a, b, y, n, width, bias_row]() mutable {
      auto dy = y.grad();
      if (a.requires_grad()) {
        auto da = a.grad();
        for (std::size_t i = 0; i < n; ++i) da[i] += dy[i];
      }
      if (b.requires_grad()) {
        auto db = b.grad();
        if (bias_row) {
          for (std::size_t i = 0; i < n; ++i) db[i % width] += dy[i];
        } else {
          for (std::size_t i = 0; i < n; ++i) db[i] += dy[i];
        }
      }
    });
  }
  return y;
}

Tensor Tape::sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  const std::size_t n = a.numel();
  std::vector<double> out(n);
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < n; ++i) out[i] = av[i] - bv[i];
  const bool tracked = any_requires_grad({&a, &b});
  Tensor y = make_output(a.shape(), std::move(out), "sub", tracked);
  if (tracked) {
    push("sub", {a, b}, y, [a, b, y, n]() mutable {
      auto dy = y.grad();
      if (a.requires_grad()) {
        auto da = a.grad();
        for (std::size_t i = 0; i < n; ++i) da[i] += dy[i];
      }
      if (b.requires_grad()) {
        auto db = b.grad();
        for (std::size_t i = 0; i < n; ++i) db[i] -= dy[i];
      }
    });
  }
  return y;
}

Tensor Tape::hadamard(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "hadamard");
  const std::size_t n = a.numel();
  std::vector<double> out(n);
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < n; ++i) out[i] = av[i] * bv[i];
  const bool tracked = any_requires_grad({&a, &b});
  Tensor y = make_output(a.shape(), std::move(out), "hadamard", tracked);
  if (tracked) {
    push("hadamard", {a, b}, y, [a, b, y, n]() mutable {
      auto dy = y.grad();
      if (a.requires_grad()) {
        auto da = a.grad();
        auto bv = b.values();
        for (std::size_t i = 0; i < n; ++i) da[i] += dy[i] * bv[i];
      }
      if (b.requires_grad()) {
        auto db = b.grad();
        auto av = a.values();
        for (std::size_t i = 0; i < n; ++i) db[i] += dy[i] * av[i];
      }
    });
  }
  return y;
}

Tensor Tape::sigmoid(const Tensor& a) {
  const std::size_t n = a.numel();
  std::vector<double> out(n);
  auto av = a.values();
  for (std::size_t i = 0; i < n; ++i) out[i] = stable_sigmoid(av[i]);
  const bool tracked = a.requires_grad();
  Tensor y = make_output(a.shape(), std::move(out), "sigmoid", tracked);
  if (tracked) {
    push("sigmoid", {a}, y, [a, y, n]() mutable {
      auto dy = y.grad();
      auto yv = y.values();
      auto da = a.grad();
      for (std::size_t i = 0; i < n; ++i) da[i] += dy[i] * yv[i] * (1.0 - yv[i]);
    });
  }
  return y;
}

Tensor Tape::tanh(const Tensor& a) {
  const std::size_t n = a.numel();
  std::vector<double> out(n);
  auto av = a.values();
  for (std::size_t i = 0; i < n; ++i) out[i] = std::tanh(av[i]);
  const bool tracked = a.requires_grad();
  Tensor y = make_output(a.shape(), std::move(out), "tanh", tracked);
  if (tracked) {
    push("tanh", {a}, y, [a, y, n]() mutable {
      auto dy = y.grad();
      auto yv = y.values();
      auto da = a.grad();
      for (std::size_t i = 0; i < n; ++i) da[i] += dy[i] * (1.0 - yv[i] * yv[i]);
    });
  }
  return y;
}

Tensor Tape::relu(const Tensor& a) {
  const std::size_t n = a.numel();
  std::vector<double> out(n);
  auto av = a.values();
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = av[i] > 0.0 ? av[i] : 0.0;
    kink_margin_ = std::min(kink_margin_, std::abs(av[i]));
  }
  const bool tracked = a.requires_grad();
  Tensor y = make_output(a.shape(), std::move(out), "relu", tracked);
  if (tracked) {
    push("relu", {a}, y, [a, y, n]() mutable {
      auto dy = y.grad();
      auto av = a.values();
      auto da = a.grad();
      for (std::size_t i = 0; i < n; ++i)
        if (av[i] > 0.0) da[i] += dy[i];
    });
  }
  return y;
}

Tensor Tape::scale(const Tensor& a, double factor) {
  const std::size_t n = a.numel();
  std::vector<double> out(n);
  auto av = a.values();
  for (std::size_t i = 0; i < n; ++i) out[i] = av[i] * factor;
  const bool tracked = a.requires_grad();
  Tensor y = make_output(a.shape(), std::move(out), "scale", tracked);
  if (tracked) {
    push("scale", {a}, y, [a, y, n, factor]() mutable {
      auto dy = y.grad();
      auto da = a.grad();
      for (std::size_t i = 0; i < n; ++i) da[i] += dy[i] * factor;
    });
  }
  return y;
}

// ---------------------------------------------------------------------------
// Reductions

Tensor Tape::sum(const Tensor& a) {
  double acc = 0.0;
  for (double v : a.values()) acc += v;
  const bool tracked = a.requires_grad();
  Tensor y = make_output({1}, {acc}, "sum", tracked);
  if (tracked) {
    push("sum", {a}, y, [a, y]() mutable {
      const double g = y.grad()[0];
      for (double& d : a.grad()) d += g;
    });
  }
  return y;
}

Tensor Tape::weighted_sum(const Tensor& a, const Tensor& weights) {
  require_same_shape(a, weights, "weighted_sum");
  const std::size_t n = a.numel();
  auto av = a.values();
  auto wv = weights.values();
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += av[i] * wv[i];
  const bool tracked = a.requires_grad();
  Tensor y = make_output({1}, {acc}, "weighted_sum", tracked);
  if (tracked) {
    push("weighted_sum", {a}, y, [a, weights, y, n]() mutable {
      const double g = y.grad()[0];
      auto da = a.grad();
      auto wv = weights.values();
      for (std::size_t i = 0; i < n; ++i) da[i] += g * wv[i];
    });
  }
  return y;
}

// ---------------------------------------------------------------------------
// Normalisation

namespace {

std::vector<double> softmax_forward(const Tensor& a, std::span<const std::uint8_t> key_mask,
                                    std::string_view op) {
  const std::size_t m = a.rows(), n = a.cols();
  if (n == 0) throw ContractError(std::string(op) + ": rows must have at least one column");
  const bool masked = !key_mask.empty();
  if (masked && key_mask.size() != n) {
    throw DimensionError(std::string(op) + ": mask length " + std::to_string(key_mask.size()) +
                         " != row width " + std::to_string(n));
  }
  if (masked && std::none_of(key_mask.begin(), key_mask.end(), [](auto v) { return v != 0; })) {
    throw ContractError(std::string(op) + ": every column is masked");
  }
  std::vector<double> out(m * n, 0.0);
  auto av = a.values();
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = av.data() + i * n;
    double* o = out.data() + i * n;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j)
      if (!masked || key_mask[j]) mx = std::max(mx, row[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (masked && !key_mask[j]) continue;
      o[j] = std::exp(row[j] - mx);
      z += o[j];
    }
    for (std::size_t j = 0; j < n; ++j) o[j] /= z;
  }
  return out;
}

}  // namespace

Tensor Tape::softmax_rows(const Tensor& a) { return masked_softmax_rows(a, {}); }

Tensor Tape::masked_softmax_rows(const Tensor& a, std::span<const std::uint8_t> key_mask) {
  require_rank2(a, "softmax_rows");
  const std::size_t m = a.rows(), n = a.cols();
  const bool tracked = a.requires_grad();
  Tensor y = make_output(a.shape(), softmax_forward(a, key_mask, "softmax_rows"), "softmax_rows",
                         tracked);
  if (tracked) {
    push("softmax_rows", {a}, y, [a, y, m, n]() mutable {
      auto dy = y.grad();
      auto yv = y.values();
      auto da = a.grad();
      for (std::size_t i = 0; i < m; ++i) {
        const double* yr = yv.data() + i * n;
        const double* gr = dy.data() + i * n;
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) dot += gr[j] * yr[j];
        for (std::size_t j = 0; j < n; ++j) da[i * n + j] += yr[j] * (gr[j] - dot);
      }
    });
  }
  return y;
}

Tensor Tape::layer_norm(const Tensor& a, const Tensor& gain, const Tensor& bias, double eps) {
  require_rank2(a, "layer_norm");
  const std::size_t m = a.rows(), n = a.cols();
  if (gain.numel() != n || bias.numel() != n) {
    throw DimensionError("layer_norm: gain/bias width must equal " + std::to_string(n) + ", got " +
                         shape_str(gain.shape()) + " and " + shape_str(bias.shape()));
  }
  std::vector<double> out(m * n);
  std::vector<double> xhat(m * n);
  std::vector<double> inv_std(m);
  auto av = a.values();
  auto gv = gain.values();
  auto bv = bias.values();
  for (std::size_t i = 0; i < m; ++i) {
    const double* x = av.data() + i * n;
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += x[j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (x[j] - mu) * (x[j] - mu);
    var /= static_cast<double>(n);
    const double inv = 1.0 / std::sqrt(var + eps);
    inv_std[i] = inv;
    for (std::size_t j = 0; j < n; ++j) {
      xhat[i * n + j] = (x[j] - mu) * inv;
      out[i * n + j] = gv[j] * xhat[i * n + j] + bv[j];
    }
  }
  const bool tracked = any_requires_grad({&a, &gain, &bias});
  Tensor y = make_output(a.shape(), std::move(out), "layer_norm", tracked);
  if (tracked) {
    push("layer_norm", {a, gain, bias}, y,
         [a, gain, bias, y, m, n, xhat = std::move(xhat), inv_std = std::move(inv_std)]() mutable {
           auto dy = y.grad();
           auto gv = gain.values();
           if (gain.requires_grad() || bias.requires_grad()) {
             auto dg = gain.grad();
             auto db = bias.grad();
             for (std::size_t i = 0; i < m; ++i)
               for (std::size_t j = 0; j < n; ++j) {
                 dg[j] += dy[i * n + j] * xhat[i * n + j];
                 db[j] += dy[i * n + j];
               }
           }
           if (a.requires_grad()) {
             auto da = a.grad();
             const double nn = static_cast<double>(n);
             std::vector<double> dxh(n);
             for (std::size_t i = 0; i < m; ++i) {
               double s1 = 0.0, s2 = 0.0;
               for (std::size_t j = 0; j < n; ++j) {
                 dxh[j] = dy[i * n + j] * gv[j];
                 s1 += dxh[j];
                 s2 += dxh[j] * xhat[i * n + j];
               }
               for (std::size_t j = 0; j < n; ++j) {
                 da[i * n + j] += inv_std[i] / nn * (nn * dxh[j] - s1 - xhat[i * n + j] * s2);
               }
             }
           }
         });
  }
  return y;
}

// ---------------------------------------------------------------------------
// Structural

Tensor Tape::concat_last(const Tensor& a, const Tensor& b) {
  if (a.rank() != b.rank() ||
      !std::equal(a.shape().begin(), a.shape().end() - 1, b.shape().begin())) {
    throw DimensionError("concat_last: leading dimensions differ for " + shape_str(a.shape()) +
                         " and " + shape_str(b.shape()));
  }
  const std::size_t wa = a.shape().back(), wb = b.shape().back();
  const std::size_t outer = wa + wb == 0 ? 0 : (a.numel() + b.numel()) / (wa + wb);
  std::vector<double> out;
  out.reserve(a.numel() + b.numel());
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t r = 0; r < outer; ++r) {
    out.insert(out.end(), av.begin() + r * wa, av.begin() + (r + 1) * wa);
    out.insert(out.end(), bv.begin() + r * wb, bv.begin() + (r + 1) * wb);
  }
  Shape shape = a.shape();
  shape.back() = wa + wb;
  const bool tracked = any_requires_grad({&a, &b});
  Tensor y = make_output(std::move(shape), std::move(out), "concat_last", tracked);
  if (tracked) {
    push("concat_last", {a, b}, y, [a, b, y, outer, wa, wb]() mutable {
      auto dy = y.grad();
      const std::size_t w = wa + wb;
      if (a.requires_grad()) {
        auto da = a.grad();
        for (std::size_t r = 0; r < outer; ++r)
          for (std::size_t j = 0; j < wa; ++j) da[r * wa + j] += dy[r * w + j];
      }
      if (b.requires_grad()) {
        auto db = b.grad();
        for (std::size_t r = 0; r < outer; ++r)
          for (std::size_t j = 0; j < wb; ++j) db[r * wb + j] += dy[r * w + wa + j];
      }
    });
  }
  return y;
}

Tensor Tape::concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw ContractError("concat_cols: no operands");
  const std::size_t m = parts.front().rows();
  std::size_t total = 0;
  bool tracked = false;
  for (const auto& p : parts) {
    require_rank2(p, "concat_cols");
    if (p.rows() != m) {
      throw DimensionError("concat_cols: row counts differ (" + shape_str(parts.front().shape()) +
                           " vs " + shape_str(p.shape()) + ")");
    }
    total += p.cols();
    tracked = tracked || p.requires_grad();
  }
  std::vector<double> out(m * total);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.cols();
    auto pv = p.values();
    for (std::size_t i = 0; i < m; ++i)
      std::copy_n(pv.data() + i * w, w, out.data() + i * total + offset);
    offset += w;
  }
  Tensor y = make_output({m, total}, std::move(out), "concat_cols", tracked);
  if (tracked) {
    std::vector<Tensor> inputs(parts.begin(), parts.end());
    push("concat_cols", inputs, y, [inputs, y, m, total]() mutable {
      auto dy = y.grad();
      std::size_t offset = 0;
      for (auto& p : inputs) {
        const std::size_t w = p.cols();
        if (p.requires_grad()) {
          auto dp = p.grad();
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < w; ++j) dp[i * w + j] += dy[i * total + offset + j];
        }
        offset += w;
      }
    });
  }
  return y;
}

Tensor Tape::concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw ContractError("concat_rows: no operands");
  const std::size_t n = parts.front().cols();
  std::size_t total = 0;
  bool tracked = false;
  for (const auto& p : parts) {
    require_rank2(p, "concat_rows");
    if (p.cols() != n) {
      throw DimensionError("concat_rows: column counts differ (" +
                           shape_str(parts.front().shape()) + " vs " + shape_str(p.shape()) + ")");
    }
    total += p.rows();
    tracked = tracked || p.requires_grad();
  }
  std::vector<double> out;
  out.reserve(total * n);
  for (const auto& p : parts) out.insert(out.end(), p.values().begin(), p.values().end());
  Tensor y = make_output({total, n}, std::move(out), "concat_rows", tracked);
  if (tracked) {
    std::vector<Tensor> inputs(parts.begin(), parts.end());
    push("concat_rows", inputs, y, [inputs, y]() mutable {
      auto dy = y.grad();
      std::size_t offset = 0;
      for (auto& p : inputs) {
        const std::size_t k = p.numel();
        if (p.requires_grad()) {
          auto dp = p.grad();
          for (std::size_t i = 0; i < k; ++i) dp[i] += dy[offset + i];
        }
        offset += k;
      }
    });
  }
  return y;
}

Tensor Tape::slice_cols(const Tensor& a, std::size_t begin, std::size_t end) {
  require_rank2(a, "slice_cols");
  const std::size_t m = a.rows(), n = a.cols();
  if (begin > end || end > n) {
    throw DimensionError("slice_cols: range [" + std::to_string(begin) + ", " +
                         std::to_string(end) + ") outside " + shape_str(a.shape()));
  }
  const std::size_t w = end - begin;
  std::vector<double> out(m * w);
  auto av = a.values();
  for (std::size_t i = 0; i < m; ++i) std::copy_n(av.data() + i * n + begin, w, out.data() + i * w);
  const bool tracked = a.requires_grad();
  Tensor y = make_output({m, w}, std::move(out), "slice_cols", tracked);
  if (tracked) {
    push("slice_cols", {a}, y, [a, y, m, n, w, begin]() mutable {
      auto dy = y.grad();
      auto da = a.grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < w; ++j) da[i * n + begin + j] += dy[i * w + j];
    });
  }
  return y;
}

Tensor Tape::slice_rows(const Tensor& a, std::size_t begin, std::size_t end) {
  require_rank2(a, "slice_rows");
  const std::size_t m = a.rows(), n = a.cols();
  if (begin > end || end > m) {
    throw DimensionError("slice_rows: range [" + std::to_string(begin) + ", " +
                         std::to_string(end) + ") outside " + shape_str(a.shape()));
  }
  auto av = a.values();
  std::vector<double> out(av.begin() + begin * n, av.begin() + end * n);
  const bool tracked = a.requires_grad();
  Tensor y = make_output({end - begin, n}, std::move(out), "slice_rows", tracked);
  if (tracked) {
    push("slice_rows", {a}, y, [a, y, n, begin]() mutable {
      auto dy = y.grad();
      auto da = a.grad();
      for (std::size_t i = 0; i < dy.size(); ++i) da[begin * n + i] += dy[i];
    });
  }
  return y;
}

Tensor Tape::gather_rows(const Tensor& a, std::span<const std::size_t> indices) {
  require_rank2(a, "gather_rows");
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<double> out(indices.size() * n);
  auto av = a.values();
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= m) {
      throw DimensionError("gather_rows: index " + std::to_string(indices[i]) +
                           " out of range for " + shape_str(a.shape()));
    }
    std::copy_n(av.data() + indices[i] * n, n, out.data() + i * n);
  }
  const bool tracked = a.requires_grad();
  Tensor y = make_output({indices.size(), n}, std::move(out), "gather_rows", tracked);
  if (tracked) {
    std::vector<std::size_t> idx(indices.begin(), indices.end());
    push("gather_rows", {a}, y, [a, y, n, idx = std::move(idx)]() mutable {
      auto dy = y.grad();
      auto da = a.grad();
      for (std::size_t i = 0; i < idx.size(); ++i)
        for (std::size_t j = 0; j < n; ++j) da[idx[i] * n + j] += dy[i * n + j];
    });
  }
  return y;
}

Tensor Tape::reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw DimensionError("reshape: cannot view " + shape_str(a.shape()) + " as " +
                         shape_str(shape));
  }
  std::vector<double> out(a.values().begin(), a.values().end());
  const bool tracked = a.requires_grad();
  Tensor y = make_output(std::move(shape), std::move(out), "reshape", tracked);
  if (tracked) {
    push("reshape", {a}, y, [a, y]() mutable {
      auto dy = y.grad();
      auto da = a.grad();
      for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i];
    });
  }
  return y;
}

// ---------------------------------------------------------------------------
// Sequence ops

Tensor Tape::conv1d(const Tensor& x, std::size_t seq_len, const Tensor& weight, const Tensor& bias,
                    std::size_t width, std::size_t pad_left, std::size_t pad_right) {
  const std::size_t batch = num_sequences(x, seq_len, "conv1d");
  require_rank2(weight, "conv1d");
  const std::size_t c_in = x.cols();
  const std::size_t c_out = weight.cols();
  if (width == 0 || weight.rows() != width * c_in) {
    throw DimensionError("conv1d: filter bank " + shape_str(weight.shape()) +
                         " does not match width " + std::to_string(width) + " over " +
                         std::to_string(c_in) + " input channels");
  }
  if (bias.numel() != c_out) {
    throw DimensionError("conv1d: bias " + shape_str(bias.shape()) + " for " +
                         std::to_string(c_out) + " output channels");
  }
  if (seq_len + pad_left + pad_right < width) {
    throw DimensionError("conv1d: padded length shorter than filter width");
  }
  const std::size_t l = seq_len;
  const std::size_t l_out = l + pad_left + pad_right - width + 1;
  std::vector<double> out(batch * l_out * c_out);
  auto xv = x.values();
  auto wv = weight.values();
  auto bv = bias.values();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t t = 0; t < l_out; ++t) {
      double* o = out.data() + (b * l_out + t) * c_out;
      std::copy_n(bv.data(), c_out, o);
      for (std::size_t k = 0; k < width; ++k) {
        const std::ptrdiff_t s = static_cast<std::ptrdiff_t>(t + k) -
                                 static_cast<std::ptrdiff_t>(pad_left);
        if (s < 0 || s >= static_cast<std::ptrdiff_t>(l)) continue;
        const double* xr = xv.data() + (b * l + static_cast<std::size_t>(s)) * c_in;
        for (std::size_t c = 0; c < c_in; ++c) {
          const double xc = xr[c];
          if (xc == 0.0) continue;
          const double* wr = wv.data() + (k * c_in + c) * c_out;
          for (std::size_t j = 0; j < c_out; ++j) o[j] += xc * wr[j];
        }
      }
    }
  }
  const bool tracked = any_requires_grad({&x, &weight, &bias});
  Tensor y = make_output({batch * l_out, c_out}, std::move(out), "conv1d", tracked);
  if (tracked) {
    push("conv1d", {x, weight, bias}, y,
         [x, weight, bias, y, batch, l, l_out, c_in, c_out, width, pad_left]() mutable {
           auto dy = y.grad();
           auto xv = x.values();
           auto wv = weight.values();
           const bool gx = x.requires_grad(), gw = weight.requires_grad();
           std::span<double> dx = gx ? x.grad() : std::span<double>{};
           std::span<double> dw = gw ? weight.grad() : std::span<double>{};
           if (bias.requires_grad()) {
             auto db = bias.grad();
             for (std::size_t r = 0; r < batch * l_out; ++r)
               for (std::size_t j = 0; j < c_out; ++j) db[j] += dy[r * c_out + j];
           }
           for (std::size_t b = 0; b < batch; ++b) {
             for (std::size_t t = 0; t < l_out; ++t) {
               const double* g = dy.data() + (b * l_out + t) * c_out;
               for (std::size_t k = 0; k < width; ++k) {
                 const std::ptrdiff_t s = static_cast<std::ptrdiff_t>(t + k) -
                                          static_cast<std::ptrdiff_t>(pad_left);
                 if (s < 0 || s >= static_cast<std::ptrdiff_t>(l)) continue;
                 const std::size_t row = b * l + static_cast<std::size_t>(s);
                 for (std::size_t c = 0; c < c_in; ++c) {
                   const std::size_t wrow = (k * c_in + c) * c_out;
                   if (gx) {
                     double acc = 0.0;
                     for (std::size_t j = 0; j < c_out; ++j) acc += g[j] * wv[wrow + j];
                     dx[row * c_in + c] += acc;
                   }
                   if (gw) {
                     const double xc = xv[row * c_in + c];
                     for (std::size_t j = 0; j < c_out; ++j) dw[wrow + j] += xc * g[j];
                   }
                 }
               }
             }
           }
         });
  }
  return y;
}

Tensor Tape::halving_pool(const Tensor& x, std::size_t seq_len) {
  const std::size_t batch = num_sequences(x, seq_len, "halving_pool");
  const std::size_t c = x.cols();
  const std::size_t l = seq_len;
  const std::size_t l_out = (l + 1) / 2;
  std::vector<double> out(batch * l_out * c);
  std::vector<std::size_t> argmax(out.size());
  auto xv = x.values();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t i = 0; i < l_out; ++i) {
      const std::size_t first = 2 * i;
      const std::size_t last = std::min(first + 2, l - 1);
      for (std::size_t ch = 0; ch < c; ++ch) {
        std::size_t best = b * l + first;
        for (std::size_t s = first + 1; s <= last; ++s) {
          const std::size_t row = b * l + s;
          if (xv[row * c + ch] > xv[best * c + ch]) best = row;
        }
        for (std::size_t s = first; s <= last; ++s) {
          const std::size_t row = b * l + s;
          if (row != best) {
            kink_margin_ = std::min(kink_margin_, xv[best * c + ch] - xv[row * c + ch]);
          }
        }
        const std::size_t o = (b * l_out + i) * c + ch;
        out[o] = xv[best * c + ch];
        argmax[o] = best * c + ch;
      }
    }
  }
  const bool tracked = x.requires_grad();
  Tensor y = make_output({batch * l_out, c}, std::move(out), "halving_pool", tracked);
  if (tracked) {
    push("halving_pool", {x}, y, [x, y, argmax = std::move(argmax)]() mutable {
      auto dy = y.grad();
      auto dx = x.grad();
      for (std::size_t i = 0; i < dy.size(); ++i) dx[argmax[i]] += dy[i];
    });
  }
  return y;
}

Tensor Tape::max_over_time(const Tensor& x, std::size_t seq_len) {
  const std::size_t batch = num_sequences(x, seq_len, "max_over_time");
  const std::size_t c = x.cols();
  std::vector<double> out(batch * c);
  std::vector<std::size_t> argmax(out.size());
  auto xv = x.values();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      std::size_t best = (b * seq_len) * c + ch;
      for (std::size_t s = 1; s < seq_len; ++s) {
        const std::size_t idx = (b * seq_len + s) * c + ch;
        if (xv[idx] > xv[best]) best = idx;
      }
      for (std::size_t s = 0; s < seq_len; ++s) {
        const std::size_t idx = (b * seq_len + s) * c + ch;
        if (idx != best) kink_margin_ = std::min(kink_margin_, xv[best] - xv[idx]);
      }
      out[b * c + ch] = xv[best];
      argmax[b * c + ch] = best;
    }
  }
  const bool tracked = x.requires_grad();
  Tensor y = make_output({batch, c}, std::move(out), "max_over_time", tracked);
  if (tracked) {
    push("max_over_time", {x}, y, [x, y, argmax = std::move(argmax)]() mutable {
      auto dy = y.grad();
      auto dx = x.grad();
      for (std::size_t i = 0; i < dy.size(); ++i) dx[argmax[i]] += dy[i];
    });
  }
  return y;
}

Tensor Tape::dropout(const Tensor& a, double rate, std::mt19937_64& rng) {
  if (rate < 0.0 || rate >= 1.0) throw ContractError("dropout: rate must lie in [0, 1)");
  if (rate == 0.0) return a;
  const std::size_t n = a.numel();
  const double keep = 1.0 - rate;
  std::bernoulli_distribution coin(keep);
  std::vector<double> mask(n);
  for (double& m : mask) m = coin(rng) ? 1.0 / keep : 0.0;
  std::vector<double> out(n);
  auto av = a.values();
  for (std::size_t i = 0; i < n; ++i) out[i] = av[i] * mask[i];
  const bool tracked = a.requires_grad();
  Tensor y = make_output(a.shape(), std::move(out), "dropout", tracked);
  if (tracked) {
    push("dropout", {a}, y, [a, y, mask = std::move(mask)]() mutable {
      auto dy = y.grad();
      auto da = a.grad();
      for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i] * mask[i];
    });
  }
  return y;
}

Tensor Tape::cross_entropy(const Tensor& logits, std::span<const std::size_t> labels) {
  require_rank2(logits, "cross_entropy");
  const std::size_t b = logits.rows(), k = logits.cols();
  if (labels.size() != b) {
    throw DimensionError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(b) + " rows");
  }
  if (b == 0 || k == 0) throw ContractError("cross_entropy: empty logits");
  auto lv = logits.values();
  std::vector<double> probs(b * k);
  double total = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    if (labels[i] >= k) {
      throw ContractError("cross_entropy: label " + std::to_string(labels[i]) +
                          " out of range for " + std::to_string(k) + " classes");
    }
    const double* row = lv.data() + i * k;
    const double mx = *std::max_element(row, row + k);
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) z += std::exp(row[j] - mx);
    const double lse = mx + std::log(z);
    total += lse - row[labels[i]];
    for (std::size_t j = 0; j < k; ++j) probs[i * k + j] = std::exp(row[j] - lse);
  }
  const double loss = total / static_cast<double>(b);
  const bool tracked = logits.requires_grad();
  Tensor y = make_output({1}, {loss}, "cross_entropy", tracked);
  if (tracked) {
    std::vector<std::size_t> lab(labels.begin(), labels.end());
    push("cross_entropy", {logits}, y,
         [logits, y, b, k, probs = std::move(probs), lab = std::move(lab)]() mutable {
           const double g = y.grad()[0] / static_cast<double>(b);
           auto dl = logits.grad();
           for (std::size_t i = 0; i < b; ++i) {
             for (std::size_t j = 0; j < k; ++j) {
               const double target = j == lab[i] ? 1.0 : 0.0;
               dl[i * k + j] += g * (probs[i * k + j] - target);
             }
           }
         });
  }
  return y;
}

// ---------------------------------------------------------------------------

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("backward: loss must be a scalar, got " +
                        (loss.defined() ? shape_str(loss.shape()) : std::string("undefined")));
  }
  if (loss.tape_owner() != this || !loss.node_id()) {
    throw ContractError("backward: loss was not recorded on this tape");
  }
  loss.grad()[0] += 1.0;
  for (std::size_t i = *loss.node_id() + 1; i-- > 0;) {
    Record& r = records_[i];
    if (!r.output.has_grad()) continue;
    if (!fault_op_.empty() && r.op == fault_op_) {
      for (double& g : r.output.grad()) g *= fault_factor_;
    }
    r.backward();
    for (const auto& in : r.inputs) {
      if (in.requires_grad() && in.has_grad()) check_finite(in.grad(), r.op, "backward");
    }
  }
}

}  // namespace dcebad
