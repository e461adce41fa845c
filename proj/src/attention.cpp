#include "cda/attention.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

namespace cda::attention {

Window neighborhood(std::size_t t, std::size_t width) {
  if (width == 0) throw std::invalid_argument("attention window must be at least 1");
  return {t + 1 >= width ? t + 1 - width : 0, t};
}

ad::Node causal_score(const ad::Node& answer, std::span<const ad::Node> keys) {
  if (keys.empty()) throw std::invalid_argument("causal_score: empty neighborhood");
  const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(answer.cols()));
  std::vector<ad::Node> scores;
  scores.reserve(keys.size());
  for (const auto& k : keys) scores.push_back(ad::row_dot(answer, k));
  return ad::softmax(ad::scale(ad::concat_cols(scores), inv_sqrt_dk), 1);
}

ad::Node reconstruct(const ad::Node& alpha, std::span<const ad::Node> values) {
  if (values.empty() || alpha.cols() != values.size())
    throw ShapeError("reconstruct: alpha has " + std::to_string(alpha.cols()) + " columns for " +
                     std::to_string(values.size()) + " values");
  if (values.size() == 1) return ad::scale_rows(values[0], alpha);
  std::vector<ad::Node> terms;
  terms.reserve(values.size());
  for (std::size_t j = 0; j < values.size(); ++j)
    terms.push_back(ad::scale_rows(values[j], ad::slice_cols(alpha, j, j + 1)));
  return ad::add_n(terms);
}

}  // namespace cda::attention
