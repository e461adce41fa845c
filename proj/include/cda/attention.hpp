#pragma once

#include <cstddef>
#include <span>

#include "cda/autodiff.hpp"

namespace cda::attention {

/// Inclusive past-only neighborhood {t-w+1, ..., t} clipped at 0.
struct Window {
  std::size_t begin = 0;
  std::size_t end = 0;  // inclusive, equals t
  std::size_t size() const { return end - begin + 1; }
};

Window neighborhood(std::size_t t, std::size_t width);

/// Softmax over keys of <a, k_j> / sqrt(d_k). a and every key are [B x d_k];
/// the result is [B x n] with rows summing to one.
ad::Node causal_score(const ad::Node& answer, std::span<const ad::Node> keys);

/// R = sum_j alpha[:, j] * X_j for alpha [B x n] and n blocks X_j [B x d_x].
ad::Node reconstruct(const ad::Node& alpha, std::span<const ad::Node> values);

}  // namespace cda::attention
