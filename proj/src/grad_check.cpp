#include "cda/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace cda {

GradCheckReport grad_check(const std::function<ad::Node()>& f, std::span<const ad::Node> params,
                           const GradCheckOptions& options) {
  if (!(options.step > 0)) throw std::invalid_argument("grad_check: step must be positive");
  if (options.tolerance < 0) throw std::invalid_argument("grad_check: tolerance must be non-negative");

  for (const auto& p : params) {
    ad::Node n = p;
    n.zero_grad();
  }
  ad::backward(f());
  std::vector<Tensor> analytic;
  analytic.reserve(params.size());
  for (const auto& p : params) analytic.push_back(p.grad());

  auto eval = [&]() {
    const double v = f().item();
    if (!std::isfinite(v)) throw NumericError("grad_check: non-finite objective at perturbed point");
    return v;
  };

  GradCheckReport report;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    ad::Node p = params[pi];
    Tensor& w = p.mutable_value();
    const std::size_t n = w.size();
    const std::size_t stride =
        options.max_coords_per_param == 0 || n <= options.max_coords_per_param
            ? 1
            : (n + options.max_coords_per_param - 1) / options.max_coords_per_param;
    for (std::size_t i = 0; i < n; i += stride) {
      const double orig = w[i];
      w[i] = orig + options.step;
      const double fp = eval();
      w[i] = orig - options.step;
      const double fm = eval();
      w[i] = orig;
      const double numeric = (fp - fm) / (2.0 * options.step);
      const double a = analytic[pi][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), options.floor});
      const double rel = std::abs(a - numeric) / denom;
      ++report.checked;
      report.max_rel_error = std::max(report.max_rel_error, rel);
      if (!(rel < options.tolerance)) report.failures.push_back({pi, i, a, numeric, rel});
    }
  }
  report.pass = report.failures.empty();
  return report;
}

}  // namespace cda
