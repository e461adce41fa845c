#include "cda/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_set>

namespace cda::ad {
namespace {

thread_local std::size_t g_exp_clamps = 0;

std::string shapes(const Tensor& a, const Tensor& b) {
  return a.shape_str() + " vs " + b.shape_str();
}

Node make_node(Tensor value, const char* op, std::vector<Node> inputs, BackwardFn fn) {
  if (!value.all_finite()) {
    throw NumericError(std::string(op) + ": non-finite value in forward pass");
  }
  auto d = std::make_shared<NodeData>();
  d->value = std::move(value);
  d->op = op;
  d->leaf = false;
  for (const auto& in : inputs) d->requires_grad = d->requires_grad || in.requires_grad();
  if (d->requires_grad) {
    d->parents.reserve(inputs.size());
    for (const auto& in : inputs) d->parents.push_back(in.data());
    d->backward = std::move(fn);
  }
  return Node(std::move(d));
}

NodeData& parent(NodeData& self, std::size_t i) { return *self.parents[i]; }

// Elementwise binary broadcast rule: equal shapes, or one side has one row.
enum class Bcast { kNone, kLeftRow, kRightRow };

Bcast broadcast_kind(const char* op, const Tensor& a, const Tensor& b) {
  if (a.same_shape(b)) return Bcast::kNone;
  if (a.cols() == b.cols()) {
    if (b.rows() == 1) return Bcast::kRightRow;
    if (a.rows() == 1) return Bcast::kLeftRow;
  }
  throw ShapeError(std::string(op) + ": shape mismatch " + shapes(a, b));
}

// Accumulates g (shaped like the broadcast result) into target, summing rows if
// target has a single row.
void accumulate(NodeData& target, const Tensor& g, double factor = 1.0) {
  if (!target.requires_grad) return;
  Tensor& tg = target.grad_buffer();
  if (tg.same_shape(g)) {
    for (std::size_t i = 0; i < g.size(); ++i) tg[i] += factor * g[i];
    return;
  }
  // row broadcast
  for (std::size_t r = 0; r < g.rows(); ++r)
    for (std::size_t c = 0; c < g.cols(); ++c) tg(0, c) += factor * g(r, c);
}

template <typename F>
Tensor elementwise(const Tensor& a, const Tensor& b, Bcast kind, F f) {
  const std::size_t rows = std::max(a.rows(), b.rows());
  const std::size_t cols = a.cols();
  Tensor out(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t ra = kind == Bcast::kLeftRow ? 0 : r;
    const std::size_t rb = kind == Bcast::kRightRow ? 0 : r;
    for (std::size_t c = 0; c < cols; ++c) out(r, c) = f(a(ra, c), b(rb, c));
  }
  return out;
}

template <typename F>
Tensor map(const Tensor& a, F f) {
  Tensor out(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i]);
  return out;
}

// Unary op whose local derivative depends on (input, output).
template <typename Fwd, typename Deriv>
Node unary(const Node& a, const char* op, Fwd fwd, Deriv deriv) {
  Tensor out = map(a.value(), fwd);
  return make_node(std::move(out), op, {a}, [deriv](NodeData& self) {
    NodeData& p = parent(self, 0);
    if (!p.requires_grad) return;
    Tensor& pg = p.grad_buffer();
    for (std::size_t i = 0; i < self.value.size(); ++i)
      pg[i] += self.grad[i] * deriv(p.value[i], self.value[i]);
  });
}

void check_axis(const char* op, int axis) {
  if (axis != 0 && axis != 1) throw ShapeError(std::string(op) + ": axis must be 0 or 1");
}

}  // namespace

Tensor& NodeData::grad_buffer() {
  if (grad.empty() && !value.empty()) grad = Tensor(value.rows(), value.cols());
  return grad;
}

Tensor Node::grad() const {
  if (data_->grad.empty()) return Tensor(rows(), cols());
  return data_->grad;
}

Node constant(Tensor value) {
  if (!value.all_finite()) throw NumericError("constant: non-finite value");
  auto d = std::make_shared<NodeData>();
  d->value = std::move(value);
  d->op = "constant";
  return Node(std::move(d));
}

Node parameter(Tensor value) {
  if (!value.all_finite()) throw NumericError("parameter: non-finite value");
  auto d = std::make_shared<NodeData>();
  d->value = std::move(value);
  d->requires_grad = true;
  d->op = "parameter";
  return Node(std::move(d));
}

Node detach(const Node& x) { return constant(x.value()); }

Node matmul(const Node& a, const Node& b) {
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (A.cols() != B.rows()) throw ShapeError("matmul: inner dimensions differ " + shapes(A, B));
  const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
  Tensor out(m, n);
  for (std::size_t i = 0; i < m; ++i) {
    double* orow = &out(i, 0);
    for (std::size_t p = 0; p < k; ++p) {
      const double av = A(i, p);
      if (av == 0.0) continue;
      const double* brow = B.data().data() + p * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  return make_node(std::move(out), "matmul", {a, b}, [m, k, n](NodeData& self) {
    NodeData& pa = parent(self, 0);
    NodeData& pb = parent(self, 1);
    const Tensor& G = self.grad;
    if (pa.requires_grad) {
      Tensor& ga = pa.grad_buffer();
      const Tensor& Bv = pb.value;
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double s = 0.0;
          for (std::size_t j = 0; j < n; ++j) s += G(i, j) * Bv(p, j);
          ga(i, p) += s;
        }
    }
    if (pb.requires_grad) {
      Tensor& gb = pb.grad_buffer();
      const Tensor& Av = pa.value;
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double av = Av(i, p);
          if (av == 0.0) continue;
          for (std::size_t j = 0; j < n; ++j) gb(p, j) += av * G(i, j);
        }
    }
  });
}

Node add(const Node& a, const Node& b) {
  const Bcast kind = broadcast_kind("add", a.value(), b.value());
  Tensor out = elementwise(a.value(), b.value(), kind, [](double x, double y) { return x + y; });
  return make_node(std::move(out), "add", {a, b}, [](NodeData& self) {
    accumulate(parent(self, 0), self.grad);
    accumulate(parent(self, 1), self.grad);
  });
}

Node sub(const Node& a, const Node& b) {
  const Bcast kind = broadcast_kind("sub", a.value(), b.value());
  Tensor out = elementwise(a.value(), b.value(), kind, [](double x, double y) { return x - y; });
  return make_node(std::move(out), "sub", {a, b}, [](NodeData& self) {
    accumulate(parent(self, 0), self.grad);
    accumulate(parent(self, 1), self.grad, -1.0);
  });
}

Node mul(const Node& a, const Node& b) {
  const Bcast kind = broadcast_kind("mul", a.value(), b.value());
  Tensor out = elementwise(a.value(), b.value(), kind, [](double x, double y) { return x * y; });
  return make_node(std::move(out), "mul", {a, b}, [kind](NodeData& self) {
    NodeData& pa = parent(self, 0);
    NodeData& pb = parent(self, 1);
    const Tensor& G = self.grad;
    if (pa.requires_grad) {
      Tensor ga = elementwise(G, pb.value, kind == Bcast::kLeftRow ? Bcast::kNone : kind,
                              [](double g, double y) { return g * y; });
      accumulate(pa, ga);
    }
    if (pb.requires_grad) {
      Tensor gb = elementwise(G, pa.value, kind == Bcast::kRightRow ? Bcast::kNone
                                           : kind == Bcast::kLeftRow ? Bcast::kRightRow
                                                                     : Bcast::kNone,
                              [](double g, double x) { return g * x; });
      accumulate(pb, gb);
    }
  });
}

Node scale(const Node& a, double s) {
  Tensor out = map(a.value(), [s](double x) { return s * x; });
  return make_node(std::move(out), "scale", {a},
                   [s](NodeData& self) { accumulate(parent(self, 0), self.grad, s); });
}

Node add_scalar(const Node& a, double s) {
  Tensor out = map(a.value(), [s](double x) { return x + s; });
  return make_node(std::move(out), "add_scalar", {a},
                   [](NodeData& self) { accumulate(parent(self, 0), self.grad); });
}

Node neg(const Node& a) { return scale(a, -1.0); }

Node add_n(std::span<const Node> terms) {
  if (terms.empty()) throw ShapeError("add_n: no operands");
  Tensor out = terms[0].value();
  for (std::size_t i = 1; i < terms.size(); ++i) {
    const Tensor& t = terms[i].value();
    if (!t.same_shape(out)) throw ShapeError("add_n: shape mismatch " + shapes(out, t));
    for (std::size_t j = 0; j < t.size(); ++j) out[j] += t[j];
  }
  std::vector<Node> inputs(terms.begin(), terms.end());
  return make_node(std::move(out), "add_n", std::move(inputs), [](NodeData& self) {
    for (auto& p : self.parents) accumulate(*p, self.grad);
  });
}

Node tanh(const Node& a) {
  return unary(a, "tanh", [](double x) { return std::tanh(x); },
               [](double, double y) { return 1.0 - y * y; });
}

Node sigmoid(const Node& a) {
  return unary(
      a, "sigmoid",
      [](double x) {
        if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Node exp(const Node& a) {
  Tensor out(a.rows(), a.cols());
  std::vector<char> clamped(a.value().size(), 0);
  for (std::size_t i = 0; i < out.size(); ++i) {
    double x = a.value()[i];
    if (x > kExpClamp) {
      x = kExpClamp;
      clamped[i] = 1;
      ++g_exp_clamps;
    }
    out[i] = std::exp(x);
  }
  return make_node(std::move(out), "exp", {a}, [clamped = std::move(clamped)](NodeData& self) {
    NodeData& p = parent(self, 0);
    if (!p.requires_grad) return;
    Tensor& pg = p.grad_buffer();
    for (std::size_t i = 0; i < self.value.size(); ++i)
      if (!clamped[i]) pg[i] += self.grad[i] * self.value[i];
  });
}

Node log(const Node& a) {
  for (double x : a.value().data())
    if (!(x > 0.0)) throw NumericError("log: argument must be positive, got " + std::to_string(x));
  return unary(a, "log", [](double x) { return std::log(x); },
               [](double x, double) { return 1.0 / x; });
}

Node square(const Node& a) {
  return unary(a, "square", [](double x) { return x * x; },
               [](double x, double) { return 2.0 * x; });
}

Node sqrt(const Node& a) {
  for (double x : a.value().data())
    if (x < 0.0) throw NumericError("sqrt: negative argument " + std::to_string(x));
  return unary(a, "sqrt", [](double x) { return std::sqrt(x); }, [](double, double y) {
    if (y == 0.0) throw NumericError("sqrt: gradient undefined at zero");
    return 0.5 / y;
  });
}

Node softplus(const Node& a) {
  return unary(
      a, "softplus",
      [](double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); },
      [](double x, double) {
        if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      });
}

Node sum_axis(const Node& a, int axis) {
  check_axis("sum_axis", axis);
  const Tensor& A = a.value();
  Tensor out = axis == 0 ? Tensor(1, A.cols()) : Tensor(A.rows(), 1);
  for (std::size_t r = 0; r < A.rows(); ++r)
    for (std::size_t c = 0; c < A.cols(); ++c) {
      if (axis == 0)
        out(0, c) += A(r, c);
      else
        out(r, 0) += A(r, c);
    }
  return make_node(std::move(out), "sum_axis", {a}, [axis](NodeData& self) {
    NodeData& p = parent(self, 0);
    if (!p.requires_grad) return;
    Tensor& pg = p.grad_buffer();
    for (std::size_t r = 0; r < pg.rows(); ++r)
      for (std::size_t c = 0; c < pg.cols(); ++c)
        pg(r, c) += axis == 0 ? self.grad(0, c) : self.grad(r, 0);
  });
}

Node mean_axis(const Node& a, int axis) {
  check_axis("mean_axis", axis);
  const double n = static_cast<double>(axis == 0 ? a.rows() : a.cols());
  if (n == 0) throw ShapeError("mean_axis: empty axis");
  return scale(sum_axis(a, axis), 1.0 / n);
}

Node sum_all(const Node& a) {
  double s = 0.0;
  for (double x : a.value().data()) s += x;
  return make_node(Tensor::scalar(s), "sum_all", {a}, [](NodeData& self) {
    NodeData& p = parent(self, 0);
    if (!p.requires_grad) return;
    Tensor& pg = p.grad_buffer();
    const double g = self.grad[0];
    for (std::size_t i = 0; i < pg.size(); ++i) pg[i] += g;
  });
}

Node mean_all(const Node& a) {
  if (a.value().empty()) throw ShapeError("mean_all: empty tensor");
  return scale(sum_all(a), 1.0 / static_cast<double>(a.value().size()));
}

Node l2_norm_sq(const Node& a) {
  double s = 0.0;
  for (double x : a.value().data()) s += x * x;
  return make_node(Tensor::scalar(s), "l2_norm_sq", {a}, [](NodeData& self) {
    NodeData& p = parent(self, 0);
    if (!p.requires_grad) return;
    Tensor& pg = p.grad_buffer();
    const double g = self.grad[0];
    for (std::size_t i = 0; i < pg.size(); ++i) pg[i] += 2.0 * g * p.value[i];
  });
}

Node concat_cols(std::span<const Node> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no operands");
  const std::size_t rows = parts[0].rows();
  std::size_t cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows)
      throw ShapeError("concat_cols: row counts differ " + shapes(parts[0].value(), p.value()));
    cols += p.cols();
  }
  Tensor out(rows, cols);
  std::size_t off = 0;
  for (const auto& p : parts) {
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < p.cols(); ++c) out(r, off + c) = p.value()(r, c);
    off += p.cols();
  }
  std::vector<Node> inputs(parts.begin(), parts.end());
  return make_node(std::move(out), "concat_cols", std::move(inputs), [](NodeData& self) {
    std::size_t off = 0;
    for (auto& pp : self.parents) {
      NodeData& p = *pp;
      if (p.requires_grad) {
        Tensor& pg = p.grad_buffer();
        for (std::size_t r = 0; r < pg.rows(); ++r)
          for (std::size_t c = 0; c < pg.cols(); ++c) pg(r, c) += self.grad(r, off + c);
      }
      off += p.value.cols();
    }
  });
}

Node concat_rows(std::span<const Node> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no operands");
  const std::size_t cols = parts[0].cols();
  std::size_t rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != cols)
      throw ShapeError("concat_rows: column counts differ " + shapes(parts[0].value(), p.value()));
    rows += p.rows();
  }
  std::vector<double> data;
  data.reserve(rows * cols);
  for (const auto& p : parts) data.insert(data.end(), p.value().data().begin(), p.value().data().end());
  std::vector<Node> inputs(parts.begin(), parts.end());
  return make_node(Tensor(rows, cols, std::move(data)), "concat_rows", std::move(inputs),
                   [](NodeData& self) {
                     std::size_t off = 0;
                     for (auto& pp : self.parents) {
                       NodeData& p = *pp;
                       const std::size_t n = p.value.size();
                       if (p.requires_grad) {
                         Tensor& pg = p.grad_buffer();
                         for (std::size_t i = 0; i < n; ++i) pg[i] += self.grad[off + i];
                       }
                       off += n;
                     }
                   });
}

Node slice_cols(const Node& a, std::size_t begin, std::size_t end) {
  if (begin > end || end > a.cols()) {
    throw ShapeError("slice_cols: range [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") out of bounds for " + a.value().shape_str());
  }
  Tensor out(a.rows(), end - begin);
  for (std::size_t r = 0; r < a.rows(); ++r)
    for (std::size_t c = begin; c < end; ++c) out(r, c - begin) = a.value()(r, c);
  return make_node(std::move(out), "slice_cols", {a}, [begin](NodeData& self) {
    NodeData& p = parent(self, 0);
    if (!p.requires_grad) return;
    Tensor& pg = p.grad_buffer();
    for (std::size_t r = 0; r < self.grad.rows(); ++r)
      for (std::size_t c = 0; c < self.grad.cols(); ++c) pg(r, begin + c) += self.grad(r, c);
  });
}

Node scale_rows(const Node& a, const Node& s) {
  const Tensor& A = a.value();
  const Tensor& S = s.value();
  if (S.cols() != 1 || S.rows() != A.rows())
    throw ShapeError("scale_rows: expected [" + std::to_string(A.rows()) + "x1] scales, got " +
                     shapes(A, S));
  Tensor out(A.rows(), A.cols());
  for (std::size_t r = 0; r < A.rows(); ++r)
    for (std::size_t c = 0; c < A.cols(); ++c) out(r, c) = A(r, c) * S(r, 0);
  return make_node(std::move(out), "scale_rows", {a, s}, [](NodeData& self) {
    NodeData& pa = parent(self, 0);
    NodeData& ps = parent(self, 1);
    const Tensor& G = self.grad;
    if (pa.requires_grad) {
      Tensor& ga = pa.grad_buffer();
      for (std::size_t r = 0; r < G.rows(); ++r)
        for (std::size_t c = 0; c < G.cols(); ++c) ga(r, c) += G(r, c) * ps.value(r, 0);
    }
    if (ps.requires_grad) {
      Tensor& gs = ps.grad_buffer();
      for (std::size_t r = 0; r < G.rows(); ++r) {
        double acc = 0.0;
        for (std::size_t c = 0; c < G.cols(); ++c) acc += G(r, c) * pa.value(r, c);
        gs(r, 0) += acc;
      }
    }
  });
}

Node row_dot(const Node& a, const Node& b) {
  if (!a.value().same_shape(b.value())) throw ShapeError("row_dot: shape mismatch " + shapes(a.value(), b.value()));
  return sum_axis(mul(a, b), 1);
}

Node softmax(const Node& a, int axis) {
  check_axis("softmax", axis);
  const Tensor& A = a.value();
  Tensor out(A.rows(), A.cols());
  const std::size_t outer = axis == 1 ? A.rows() : A.cols();
  const std::size_t inner = axis == 1 ? A.cols() : A.rows();
  auto at = [axis](Tensor& t, std::size_t o, std::size_t i) -> double& {
    return axis == 1 ? t(o, i) : t(i, o);
  };
  auto cat = [axis](const Tensor& t, std::size_t o, std::size_t i) {
    return axis == 1 ? t(o, i) : t(i, o);
  };
  for (std::size_t o = 0; o < outer; ++o) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < inner; ++i) mx = std::max(mx, cat(A, o, i));
    double z = 0.0;
    for (std::size_t i = 0; i < inner; ++i) {
      const double e = std::exp(cat(A, o, i) - mx);
      at(out, o, i) = e;
      z += e;
    }
    for (std::size_t i = 0; i < inner; ++i) at(out, o, i) /= z;
  }
  return make_node(std::move(out), "softmax", {a}, [axis, outer, inner, at, cat](NodeData& self) {
    NodeData& p = parent(self, 0);
    if (!p.requires_grad) return;
    Tensor& pg = p.grad_buffer();
    for (std::size_t o = 0; o < outer; ++o) {
      double dot = 0.0;
      for (std::size_t i = 0; i < inner; ++i) dot += cat(self.grad, o, i) * cat(self.value, o, i);
      for (std::size_t i = 0; i < inner; ++i)
        at(pg, o, i) += cat(self.value, o, i) * (cat(self.grad, o, i) - dot);
    }
    (void)axis;
  });
}

Node grad_reverse(const Node& a, double factor) {
  return make_node(a.value(), "grad_reverse", {a}, [factor](NodeData& self) {
    accumulate(parent(self, 0), self.grad, -factor);
  });
}

Tensor one_hot(std::span<const int> labels, std::size_t k) {
  Tensor out(labels.size(), k);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int l = labels[i];
    if (l < 0 || static_cast<std::size_t>(l) >= k)
      throw ShapeError("one_hot: label " + std::to_string(l) + " outside [0," + std::to_string(k) + ")");
    out(i, static_cast<std::size_t>(l)) = 1.0;
  }
  return out;
}

void backward(const Node& root) {
  if (!root) throw std::invalid_argument("backward: null root");
  if (root.rows() != 1 || root.cols() != 1) {
    throw ShapeError("backward: root must be scalar [1x1], got " + root.value().shape_str());
  }
  if (!root.requires_grad()) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<NodeData*> order;
  std::unordered_set<NodeData*> seen;
  std::vector<std::pair<NodeData*, std::size_t>> stack;
  stack.emplace_back(root.data().get(), 0);
  seen.insert(root.data().get());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      NodeData* next = node->parents[idx++].get();
      if (next->requires_grad && seen.insert(next).second) stack.emplace_back(next, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (NodeData* n : order)
    if (!n->leaf) n->grad = Tensor();
  root.data()->grad_buffer()[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    NodeData* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
}

std::size_t exp_clamp_count() { return g_exp_clamps; }
void reset_exp_clamp_count() { g_exp_clamps = 0; }

}  // namespace cda::ad
