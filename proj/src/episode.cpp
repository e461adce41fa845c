#include "cda/episode.hpp"

#include <cmath>
#include <stdexcept>

namespace cda {
namespace {

Tensor slice_rows(const Tensor& t, std::size_t begin, std::size_t end) {
  std::vector<double> data(t.data().begin() + static_cast<std::ptrdiff_t>(begin * t.cols()),
                           t.data().begin() + static_cast<std::ptrdiff_t>(end * t.cols()));
  return Tensor(end - begin, t.cols(), std::move(data));
}

}  // namespace

Episode Episode::slice(std::size_t begin, std::size_t end) const {
  if (begin >= end || end > length())
    throw std::out_of_range("Episode::slice: bad range for episode " + id);
  Episode out;
  out.id = id;
  out.first_month = first_month + static_cast<int>(begin);
  out.x = slice_rows(x, begin, end);
  out.z.assign(z.begin() + static_cast<std::ptrdiff_t>(begin), z.begin() + static_cast<std::ptrdiff_t>(end));
  out.y.assign(y.begin() + static_cast<std::ptrdiff_t>(begin), y.begin() + static_cast<std::ptrdiff_t>(end));
  out.u = u;
  if (noise) {
    NoiseTrace nt;
    nt.covariate = slice_rows(noise->covariate, begin, end);
    nt.outcome.assign(noise->outcome.begin() + static_cast<std::ptrdiff_t>(begin),
                      noise->outcome.begin() + static_cast<std::ptrdiff_t>(end));
    out.noise = std::move(nt);
  }
  return out;
}

void Episode::validate(std::size_t n_treatments) const {
  const std::size_t T = z.size();
  if (T < 2) throw std::invalid_argument("episode " + id + ": length must be at least 2");
  if (x.rows() != T || y.size() != T)
    throw std::invalid_argument("episode " + id + ": X, Z, Y lengths differ");
  for (int v : z)
    if (v < 0 || static_cast<std::size_t>(v) >= n_treatments)
      throw std::invalid_argument("episode " + id + ": treatment " + std::to_string(v) + " out of range");
  for (double v : y)
    if (!std::isfinite(v)) throw std::invalid_argument("episode " + id + ": non-finite outcome");
  if (!x.all_finite()) throw std::invalid_argument("episode " + id + ": non-finite covariate");
}

}  // namespace cda
