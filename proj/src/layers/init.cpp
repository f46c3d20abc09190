#include <cmath>

#include "dcebad/layers.hpp"

namespace dcebad::nn {

Tensor xavier_uniform(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  std::uniform_real_distribution<double> dist(-limit, limit);
  std::vector<double> values(rows * cols);
  for (double& v : values) v = dist(rng);
  return Tensor::from({rows, cols}, std::move(values), true);
}

Tensor normal_table(std::size_t rows, std::size_t cols, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> values(rows * cols);
  for (double& v : values) v = dist(rng);
  return Tensor::from({rows, cols}, std::move(values), true);
}

}  // namespace dcebad::nn
