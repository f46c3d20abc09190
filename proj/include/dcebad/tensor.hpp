#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace dcebad {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Dense row-major array of doubles with a lazily allocated gradient slot.
///
/// A Tensor is a shared handle: copies alias the same storage. Values are
/// treated as immutable once a tensor has been used by a Tape; the only
/// sanctioned mutations are gradient accumulation during backward and
/// parameter updates between training steps.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor filled(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  /// Row vector (1 x n).
  static Tensor row(std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(s_); }

  const Shape& shape() const { return s_->shape; }
  std::size_t rank() const { return s_->shape.size(); }
  std::size_t numel() const { return s_->values.size(); }
  /// Rows/cols of a rank-2 tensor. Rank-1 tensors report one row.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> values() const { return s_->values; }
  std::span<double> mutable_values() const { return s_->values; }
  double value(std::size_t i) const { return s_->values[i]; }
  double at(std::size_t r, std::size_t c) const { return s_->values[r * cols() + c]; }
  /// Single entry of a one-element tensor.
  double item() const;

  bool requires_grad() const { return s_->requires_grad; }
  void set_requires_grad(bool on) { s_->requires_grad = on; }

  bool has_grad() const { return !s_->grad.empty(); }
  /// Gradient view; allocated (zeroed) on first access.
  std::span<double> grad() const;
  void zero_grad() const;

  std::optional<std::size_t> node_id() const { return s_->node_id; }
  const void* tape_owner() const { return s_->tape; }

  /// Deep copy of values only; the copy is a fresh leaf.
  Tensor clone(bool requires_grad = false) const;

  bool same_storage(const Tensor& other) const { return s_ == other.s_; }

 private:
  friend class Tape;

  struct Storage {
    Shape shape;
    std::vector<double> values;
    std::vector<double> grad;
    bool requires_grad = false;
    std::optional<std::size_t> node_id;
    const void* tape = nullptr;
  };

  explicit Tensor(std::shared_ptr<Storage> s) : s_(std::move(s)) {}

  std::shared_ptr<Storage> s_;
};

}  // namespace dcebad
