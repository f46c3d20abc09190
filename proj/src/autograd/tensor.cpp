#include "dcebad/tensor.hpp"

#include <algorithm>
#include <functional>
#include <numeric>
#include <sstream>

#include "dcebad/errors.hpp"

namespace dcebad {

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ')';
  return os.str();
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return filled(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::filled(Shape shape, double value, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  return from(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  if (shape.empty()) throw DimensionError("tensor shape must have at least one extent");
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("shape " + shape_str(shape) + " does not hold " +
                         std::to_string(values.size()) + " values");
  }
  auto s = std::make_shared<Storage>();
  s->shape = std::move(shape);
  s->values = std::move(values);
  s->requires_grad = requires_grad;
  return Tensor(std::move(s));
}

Tensor Tensor::row(std::vector<double> values, bool requires_grad) {
  const std::size_t n = values.size();
  return from({1, n}, std::move(values), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({1}, {value}, requires_grad); }

std::size_t Tensor::rows() const {
  const auto& sh = s_->shape;
  if (sh.size() == 1) return 1;
  if (sh.size() != 2) throw DimensionError("expected a rank-2 tensor, got " + shape_str(sh));
  return sh[0];
}

std::size_t Tensor::cols() const {
  const auto& sh = s_->shape;
  if (sh.size() == 1) return sh[0];
  if (sh.size() != 2) throw DimensionError("expected a rank-2 tensor, got " + shape_str(sh));
  return sh[1];
}

double Tensor::item() const {
  if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
  return s_->values[0];
}

std::span<double> Tensor::grad() const {
  if (s_->grad.empty() && !s_->values.empty()) s_->grad.assign(s_->values.size(), 0.0);
  return s_->grad;
}


void Tensor::zero_grad() const { std::fill(s_->grad.begin(), s_->grad.end(), 0.0); }

Tensor Tensor::clone(bool requires_grad) const {
  return from(s_->shape, s_->values, requires_grad);
}

}  // namespace dcebad
