#include "dcebad/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "dcebad/errors.hpp"

namespace dcebad {

double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max(1e-8, std::abs(analytic) + std::abs(numeric));
}

namespace {

double evaluate(const ScalarFn& f) {
  Tape tape;
  Tensor out = f(tape);
  if (out.numel() != 1) throw ContractError("grad_check: function must return a scalar");
  return out.item();
}

}  // namespace

GradCheckResult grad_check(const ScalarFn& f, std::span<const Tensor> params, double eps) {
  if (!(eps > 0.0 && eps <= 1e-3)) throw ContractError("grad_check: eps must lie in (0, 1e-3]");
  for (const auto& p : params) {
    if (!p.requires_grad()) throw ContractError("grad_check: parameter does not require grad");
  }

  const double base = evaluate(f);
  if (evaluate(f) != base) throw OracleError("grad_check: function is not deterministic");

  for (Tensor p : params) p.zero_grad();
  {
    Tape tape;
    Tensor out = f(tape);
    if (out.node_id()) tape.backward(out);
  }

  GradCheckResult result;
  result.per_param.reserve(params.size());
  for (Tensor p : params) {
    std::vector<double> analytic(p.grad().begin(), p.grad().end());
    auto vals = p.mutable_values();
    double worst = 0.0;
    for (std::size_t i = 0; i < vals.size(); ++i) {
      const double saved = vals[i];
      vals[i] = saved + eps;
      const double up = evaluate(f);
      vals[i] = saved - eps;
      const double down = evaluate(f);
      vals[i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      worst = std::max(worst, relative_error(analytic[i], numeric));
    }
    result.per_param.push_back(worst);
    result.max_rel_error = std::max(result.max_rel_error, worst);
  }
  return result;
}

GradCheckResult grad_check(const ScalarFn& f, std::span<const NamedTensor> params, double eps) {
  std::vector<Tensor> tensors;
  tensors.reserve(params.size());
  for (const auto& p : params) tensors.push_back(p.tensor);
  return grad_check(f, tensors, eps);
}

}  // namespace dcebad
