#pragma once

#include <optional>
#include <string>
#include <vector>

#include "dcebad/model.hpp"

namespace dcebad::cli {

struct GradcheckOptions {
  zoo::Variant variant = zoo::Variant::dc_ebad;
  std::size_t d_model = 8;
  std::size_t seq_len = 8;
  std::size_t seeds = 20;
  double eps = 1e-5;
  /// Per-layer bound on the relative error.
  double threshold = 1e-4;
  /// Bound for the whole-model check, whose deepest gradients are small
  /// enough for central-difference roundoff to matter.
  double model_threshold = 1e-3;
  /// Scales the backward rule of this tape op by 1.5 everywhere it runs.
  std::optional<std::string> corrupt_op;
};

struct TensorError {
  std::string name;
  double max_rel_error = 0.0;
};

struct LayerCheck {
  std::string layer;
  /// Worst error per checked tensor over all seeds.
  std::vector<TensorError> tensors;
  double max_rel_error = 0.0;
  bool passed = false;
};

struct GradcheckReport {
  GradcheckOptions options;
  std::vector<LayerCheck> layers;
  /// End-to-end check of the whole model, one entry per parameter tensor.
  LayerCheck model;
  bool passed = false;
};

/// Names of the per-layer checks, in report order.
const std::vector<std::string>& gradcheck_layers();

/// Throws ConfigError when the dimensions exceed desk scale (d_model <= 16, T <= 8).
GradcheckReport run_gradcheck(const GradcheckOptions& options);

/// Configuration of the model used by the end-to-end check.
zoo::ModelConfig gradcheck_model_config(const GradcheckOptions& options);

}  // namespace dcebad::cli
