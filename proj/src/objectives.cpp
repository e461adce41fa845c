#include "cda/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>
#include <stdexcept>

#include "cda/rng.hpp"

namespace cda {
namespace {

std::span<const double> row_of(const Tensor& t, std::size_t i) { return t.data().subspan(i * t.cols(), t.cols()); }

Tensor gather_rows(const Tensor& t, std::span<const std::size_t> idx) {
  Tensor out(idx.size(), t.cols());
  for (std::size_t i = 0; i < idx.size(); ++i)
    for (std::size_t j = 0; j < t.cols(); ++j) out(i, j) = t(idx[i], j);
  return out;
}

void check_rows(const Tensor& t, std::size_t labels, const char* what) {
  if (t.rows() == 0) throw std::invalid_argument(std::string(what) + ": empty sample set");
  if (t.rows() != labels)
    throw std::invalid_argument(std::string(what) + ": " + std::to_string(t.rows()) + " rows but " +
                                std::to_string(labels) + " labels");
}

// Per-row weights realizing the mean of the class-conditional mean embeddings.
std::vector<double> conditional_weights(std::span<const int> z, Conditioning mode) {
  std::map<int, std::size_t> counts;
  for (int a : z) ++counts[a];
  const double n = static_cast<double>(z.size());
  const double classes = static_cast<double>(counts.size());
  std::vector<double> w(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double na = static_cast<double>(counts[z[i]]);
    const double class_weight = mode == Conditioning::kPooled ? na / n : 1.0 / classes;
    w[i] = class_weight / na;
  }
  return w;
}

Tensor condition_mask(std::span<const int> labels, const std::vector<int>& condition, std::size_t& count) {
  Tensor m(1, labels.size());
  count = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const bool in = condition.empty() || std::find(condition.begin(), condition.end(), labels[i]) != condition.end();
    if (in) {
      m(0, i) = 1.0;
      ++count;
    }
  }
  return m;
}

void check_samples(const DomainSamples& d, const char* side) {
  if (!d.x || !d.r) throw std::invalid_argument(std::string("domain loss: missing ") + side + " samples");
  if (d.x.rows() == 0) throw std::invalid_argument(std::string("domain loss: empty ") + side + " domain");
  if (d.x.rows() != d.r.rows() || d.x.cols() != d.r.cols() || d.labels.size() != d.x.rows())
    throw ShapeError(std::string("domain loss: ") + side + " X " + d.x.value().shape_str() + ", R " +
                     d.r.value().shape_str() + " and " + std::to_string(d.labels.size()) + " labels disagree");
}

}  // namespace

void KernelSpec::validate() const {
  if (kind == Kind::kRbf && !(bandwidth > 0 && std::isfinite(bandwidth)))
    throw std::invalid_argument("kernel: rbf bandwidth must be finite and positive");
}

double KernelSpec::operator()(std::span<const double> a, std::span<const double> b) const {
  if (kind == Kind::kLinear) return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
  double d2 = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d2 += (a[i] - b[i]) * (a[i] - b[i]);
  return std::exp(-d2 / (2.0 * bandwidth * bandwidth));
}

ad::Node seq_loss(const ad::Node& y_hist, const ad::Node& yhat_hist, const ad::Node& y_hor, const ad::Node& yhat_hor) {
  const bool has_hist = y_hist && y_hist.cols() > 0;
  const bool has_hor = y_hor && y_hor.cols() > 0;
  if (!has_hist && !has_hor) throw std::invalid_argument("seq_loss: history and horizon are both empty");
  std::vector<ad::Node> parts;
  if (has_hist)
    parts.push_back(ad::scale(ad::sum_all(ad::square(ad::sub(yhat_hist, y_hist))), 1.0 / static_cast<double>(y_hist.cols())));
  if (has_hor)
    parts.push_back(ad::scale(ad::sum_all(ad::square(ad::sub(yhat_hor, y_hor))), 1.0 / static_cast<double>(y_hor.cols())));
  return parts.size() == 1 ? parts[0] : ad::add(parts[0], parts[1]);
}

double weighted_mmd2(const Tensor& a, std::span<const double> wa, const Tensor& b, std::span<const double> wb,
                     const KernelSpec& kernel) {
  kernel.validate();
  if (a.rows() == 0 || b.rows() == 0) throw std::invalid_argument("mmd: empty sample set");
  if (a.cols() != b.cols()) throw ShapeError("mmd: sample widths differ: " + a.shape_str() + " vs " + b.shape_str());
  if (wa.size() != a.rows() || wb.size() != b.rows()) throw std::invalid_argument("mmd: weight count mismatch");
  if (kernel.kind == KernelSpec::Kind::kLinear) {
    std::vector<double> diff(a.cols(), 0.0);
    for (std::size_t i = 0; i < a.rows(); ++i)
      for (std::size_t j = 0; j < a.cols(); ++j) diff[j] += wa[i] * a(i, j);
    std::vector<double> mb(b.cols(), 0.0);
    for (std::size_t i = 0; i < b.rows(); ++i)
      for (std::size_t j = 0; j < b.cols(); ++j) mb[j] += wb[i] * b(i, j);
    double s = 0.0;
    for (std::size_t j = 0; j < diff.size(); ++j) s += (diff[j] - mb[j]) * (diff[j] - mb[j]);
    return s;
  }
  auto quad = [&](const Tensor& x, std::span<const double> wx, const Tensor& y, std::span<const double> wy) {
    double s = 0.0;
    for (std::size_t i = 0; i < x.rows(); ++i) {
      if (wx[i] == 0.0) continue;
      double inner = 0.0;
      for (std::size_t j = 0; j < y.rows(); ++j)
        if (wy[j] != 0.0) inner += wy[j] * kernel(row_of(x, i), row_of(y, j));
      s += wx[i] * inner;
    }
    return s;
  };
  const double v = quad(a, wa, a, wa) + quad(b, wb, b, wb) - 2.0 * quad(a, wa, b, wb);
  return std::max(0.0, v);
}

double mmd2(const Tensor& s, const Tensor& t, const KernelSpec& kernel) {
  if (s.rows() == 0 || t.rows() == 0) throw std::invalid_argument("mmd: empty sample set");
  const std::vector<double> ws(s.rows(), 1.0 / static_cast<double>(s.rows()));
  const std::vector<double> wt(t.rows(), 1.0 / static_cast<double>(t.rows()));
  return weighted_mmd2(s, ws, t, wt, kernel);
}

ad::Node mmd2_linear(const ad::Node& s, const ad::Node& t) {
  if (s.rows() == 0 || t.rows() == 0) throw std::invalid_argument("mmd: empty sample set");
  return ad::l2_norm_sq(ad::sub(ad::mean_axis(s, 0), ad::mean_axis(t, 0)));
}

double cmmd2(const Tensor& r_s, std::span<const int> z_s, const Tensor& r_t, std::span<const int> z_t,
             const KernelSpec& kernel, std::span<const int> condition, std::vector<std::string>* warnings) {
  check_rows(r_s, z_s.size(), "cmmd");
  check_rows(r_t, z_t.size(), "cmmd");
  const std::set<int> in_s(z_s.begin(), z_s.end()), in_t(z_t.begin(), z_t.end());
  std::set<int> levels(condition.begin(), condition.end());
  if (levels.empty()) {
    levels = in_s;
    levels.insert(in_t.begin(), in_t.end());
  }
  for (int a : levels) {
    if (in_s.count(a) != in_t.count(a) && warnings)
      warnings->push_back("cmmd: treatment " + std::to_string(a) + " present in the " +
                          (in_s.count(a) ? "source" : "target") + " domain only");
  }
  auto weights = [&](std::span<const int> z) {
    std::vector<double> w(z.size(), 0.0);
    for (std::size_t i = 0; i < z.size(); ++i)
      if (levels.count(z[i])) w[i] = 1.0 / static_cast<double>(z.size());
    return w;
  };
  return weighted_mmd2(r_s, weights(z_s), r_t, weights(z_t), kernel);
}

PermutationTest mmd_permutation_test(const Tensor& s, const Tensor& t, const KernelSpec& kernel,
                                     std::size_t permutations, std::uint64_t seed) {
  if (permutations == 0) throw std::invalid_argument("permutation test: need at least one permutation");
  if (s.cols() != t.cols()) throw ShapeError("permutation test: sample widths differ");
  PermutationTest out;
  out.observed = mmd2(s, t, kernel);
  const std::size_t n = s.rows() + t.rows();
  Tensor pool(n, s.cols());
  std::copy(s.data().begin(), s.data().end(), pool.storage().begin());
  std::copy(t.data().begin(), t.data().end(), pool.storage().begin() + static_cast<std::ptrdiff_t>(s.size()));
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed);
  std::vector<double> null;
  null.reserve(permutations);
  std::size_t exceed = 0;
  for (std::size_t p = 0; p < permutations; ++p) {
    std::shuffle(idx.begin(), idx.end(), rng);
    const std::span<const std::size_t> all(idx);
    const double v = mmd2(gather_rows(pool, all.first(s.rows())), gather_rows(pool, all.subspan(s.rows())), kernel);
    null.push_back(v);
    if (v >= out.observed) ++exceed;
  }
  std::sort(null.begin(), null.end());
  auto quantile = [&](double q) {
    const auto k = static_cast<std::size_t>(std::ceil(q * static_cast<double>(null.size())));
    return null[std::min(null.size() - 1, k == 0 ? 0 : k - 1)];
  };
  out.quantile95 = quantile(0.95);
  out.quantile99 = quantile(0.99);
  out.p_value = static_cast<double>(exceed + 1) / static_cast<double>(permutations + 1);
  return out;
}

double Theorem1Terms::rhs_appendix() const {
  return 0.25 * (cmmd_st * cmmd_st + cmmd_ss * cmmd_ss + cmmd_tt * cmmd_tt + mmd_st * mmd_st + 2.0 * cmmd_st * mmd_st);
}

double Theorem1Terms::rhs_statement() const {
  return 0.25 * (cmmd_st * cmmd_st + 2.0 * cmmd_tt * mmd_st + cmmd_ss * cmmd_ss + cmmd_tt * cmmd_tt + mmd_st * mmd_st);
}

Theorem1Terms theorem1_terms(const Tensor& s, std::span<const int> z_s, const Tensor& t, std::span<const int> z_t,
                             const KernelSpec& kernel, Conditioning conditioning) {
  check_rows(s, z_s.size(), "theorem1");
  check_rows(t, z_t.size(), "theorem1");
  const std::vector<double> us(s.rows(), 1.0 / static_cast<double>(s.rows()));
  const std::vector<double> ut(t.rows(), 1.0 / static_cast<double>(t.rows()));
  const std::vector<double> cs = conditional_weights(z_s, conditioning);
  const std::vector<double> ct = conditional_weights(z_t, conditioning);
  Theorem1Terms terms;
  terms.cmmd_st = std::sqrt(weighted_mmd2(s, cs, t, ct, kernel));
  terms.cmmd_ss = std::sqrt(weighted_mmd2(s, us, s, cs, kernel));
  terms.cmmd_tt = std::sqrt(weighted_mmd2(t, ut, t, ct, kernel));
  terms.mmd_st = std::sqrt(weighted_mmd2(s, us, t, ut, kernel));
  return terms;
}

Theorem1Report theorem1_check(const Tensor& s, std::span<const int> z_s, const Tensor& t, std::span<const int> z_t,
                              const KernelSpec& kernel, std::size_t n_trials, std::uint64_t seed, double tolerance) {
  if (n_trials == 0) throw std::invalid_argument("theorem1_check: n_trials must be at least 1");
  check_rows(s, z_s.size(), "theorem1");
  check_rows(t, z_t.size(), "theorem1");
  Theorem1Report report;
  report.tolerance = tolerance;
  Rng rng(seed);
  auto resample = [&](const Tensor& x, std::span<const int> z, Tensor& xo, std::vector<int>& zo) {
    std::uniform_int_distribution<std::size_t> pick(0, x.rows() - 1);
    std::vector<std::size_t> idx(x.rows());
    for (auto& i : idx) i = pick(rng);
    xo = gather_rows(x, idx);
    zo.resize(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) zo[i] = z[idx[i]];
  };
  Tensor rs, rt;
  std::vector<int> lz_s, lz_t;
  for (std::size_t trial = 0; trial < n_trials; ++trial) {
    resample(s, z_s, rs, lz_s);
    resample(t, z_t, rt, lz_t);
    const Theorem1Terms pooled = theorem1_terms(rs, lz_s, rt, lz_t, kernel, Conditioning::kPooled);
    const Theorem1Terms balanced = theorem1_terms(rs, lz_s, rt, lz_t, kernel, Conditioning::kBalanced);
    const double excess = pooled.lhs() - pooled.rhs_appendix();
    const bool finite = std::isfinite(pooled.lhs()) && std::isfinite(pooled.rhs_appendix()) &&
                        std::isfinite(pooled.rhs_statement()) && std::isfinite(balanced.rhs_appendix());
    report.all_finite = report.all_finite && finite;
    report.max_excess = trial == 0 ? excess : std::max(report.max_excess, excess);
    if (excess > tolerance) ++report.violations;
    if (pooled.lhs() - pooled.rhs_statement() > tolerance) ++report.violations_statement;
    if (balanced.lhs() - balanced.rhs_appendix() > tolerance) ++report.violations_balanced;
    ++report.trials;
  }
  return report;
}

DomainLossTerms domain_loss(const DomainSamples& s, const DomainSamples& t, const DomainLossOptions& o) {
  check_samples(s, "source");
  check_samples(t, "target");
  if (s.x.cols() != t.x.cols()) throw ShapeError("domain loss: source and target widths differ");
  std::size_t cs = 0, ct = 0;
  const Tensor ms = condition_mask(s.labels, o.condition, cs);
  const Tensor mt = condition_mask(t.labels, o.condition, ct);
  if (cs == 0 || ct == 0) throw std::invalid_argument("domain loss requires treated positions");
  const double ns = static_cast<double>(s.x.rows()), nt = static_cast<double>(t.x.rows());

  const ad::Node mean_xs = ad::mean_axis(s.x, 0);
  const ad::Node mean_xt = ad::mean_axis(t.x, 0);
  const ad::Node sum_rs = ad::matmul(ad::constant(ms), s.r);
  const ad::Node sum_rt = ad::matmul(ad::constant(mt), t.r);

  DomainLossTerms out;
  out.l1 = ad::scale(ad::l2_norm_sq(ad::sub(mean_xs, mean_xt)), o.beta1);
  out.l2 = ad::scale(ad::l2_norm_sq(ad::sub(ad::scale(sum_rs, 1.0 / ns), ad::scale(sum_rt, 1.0 / nt))), o.beta2);
  out.l3 = ad::scale(ad::l2_norm_sq(ad::sub(mean_xs, ad::scale(sum_rs, 1.0 / static_cast<double>(cs)))), o.beta3);
  out.l4 = ad::scale(ad::l2_norm_sq(ad::sub(mean_xt, ad::scale(sum_rt, 1.0 / static_cast<double>(ct)))), o.beta4);
  // sqrt is not differentiable at 0; the product's subgradient there is 0.
  if (o.gamma != 0.0 && out.l1.item() * out.l2.item() > 0.0)
    out.cross = ad::scale(ad::sqrt(ad::mul(out.l1, out.l2)), o.gamma);
  else
    out.cross = ad::constant(Tensor::scalar(0.0));
  const ad::Node parts[] = {out.l1, out.l2, out.l3, out.l4, out.cross};
  out.total = ad::add_n(parts);
  return out;
}

ad::Node domain_loss_unified(const DomainSamples& s, const DomainSamples& t, const DomainLossOptions& o) {
  check_samples(s, "source");
  check_samples(t, "target");
  std::size_t cs = 0, ct = 0;
  const Tensor ms = condition_mask(s.labels, o.condition, cs);
  const Tensor mt = condition_mask(t.labels, o.condition, ct);
  if (cs == 0 || ct == 0) throw std::invalid_argument("domain loss requires treated positions");
  const std::size_t ns = s.x.rows(), nt = t.x.rows();
  // Row k of V is the k-th difference vector; each is a linear combination of
  // the stacked X and R rows of both domains.
  Tensor ax_s(4, ns), ar_s(4, ns), ax_t(4, nt), ar_t(4, nt);
  for (std::size_t i = 0; i < ns; ++i) {
    ax_s(0, i) = 1.0 / static_cast<double>(ns);
    ar_s(1, i) = ms(0, i) / static_cast<double>(ns);
    ax_s(2, i) = 1.0 / static_cast<double>(ns);
    ar_s(2, i) = -ms(0, i) / static_cast<double>(cs);
  }
  for (std::size_t i = 0; i < nt; ++i) {
    ax_t(0, i) = -1.0 / static_cast<double>(nt);
    ar_t(1, i) = -mt(0, i) / static_cast<double>(nt);
    ax_t(3, i) = 1.0 / static_cast<double>(nt);
    ar_t(3, i) = -mt(0, i) / static_cast<double>(ct);
  }
  const ad::Node terms[] = {ad::matmul(ad::constant(ax_s), s.x), ad::matmul(ad::constant(ar_s), s.r),
                            ad::matmul(ad::constant(ax_t), t.x), ad::matmul(ad::constant(ar_t), t.r)};
  const ad::Node sq = ad::sum_axis(ad::square(ad::add_n(terms)), 1);  // [4 x 1]
  const ad::Node weighted = ad::mul(sq, ad::constant(Tensor(4, 1, {o.beta1, o.beta2, o.beta3, o.beta4})));
  ad::Node total = ad::sum_all(weighted);
  if (o.gamma != 0.0) {
    const ad::Node l1 = ad::matmul(ad::constant(Tensor(1, 4, {1.0, 0.0, 0.0, 0.0})), weighted);
    const ad::Node l2 = ad::matmul(ad::constant(Tensor(1, 4, {0.0, 1.0, 0.0, 0.0})), weighted);
    const ad::Node prod = ad::mul(l1, l2);
    if (prod.item() > 0.0) total = ad::add(total, ad::scale(ad::sqrt(prod), o.gamma));
  }
  return total;
}

double total_objective(const LossBreakdown& b, double lambda, ObjectiveView view) {
  if (!(lambda >= 0.0)) throw std::invalid_argument("total_objective: lambda must be non-negative");
  if (view == ObjectiveView::kDiscriminator) return lambda * b.l_disc.value_or(0.0);
  return b.l_seq_source + b.l_seq_target - lambda * b.l_dom;
}

ad::Node bce_with_logits(const ad::Node& logits, double label) {
  return ad::mean_all(ad::sub(ad::softplus(logits), ad::scale(logits, label)));
}

}  // namespace cda
