#include "adavit/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace adavit {

using detail::Node;

std::size_t numel(const Shape& s) {
  std::size_t n = 1;
  for (auto e : s) n *= e;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

namespace {

std::shared_ptr<Node> make_node(Shape shape, std::vector<double> value,
                                std::vector<std::shared_ptr<Node>> parents,
                                std::function<void(Node&)> backprop) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  for (const auto& p : parents) {
    if (p->requires_grad) {
      n->requires_grad = true;
      break;
    }
  }
  if (n->requires_grad) {
    n->parents = std::move(parents);
    n->backprop = std::move(backprop);
  }
  return n;
}

void check(bool ok, const std::string& msg) {
  if (!ok) throw DimensionError(msg);
}

}  // namespace

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  auto n = std::make_shared<Node>();
  n->value.assign(numel(shape), 0.0);
  n->shape = std::move(shape);
  n->requires_grad = requires_grad;
  return wrap(std::move(n));
}

Tensor Tensor::full(Shape shape, double v, bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  std::fill(t.mutable_data().begin(), t.mutable_data().end(), v);
  return t;
}

Tensor Tensor::from(Shape shape, std::vector<double> data, bool requires_grad) {
  check(numel(shape) == data.size(),
        "tensor data length " + std::to_string(data.size()) + " != numel" + shape_str(shape));
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(data);
  n->requires_grad = requires_grad;
  return wrap(std::move(n));
}

Tensor Tensor::scalar(double v, bool requires_grad) {
  return from({1}, {v}, requires_grad);
}

Tensor Tensor::randn(Shape shape, Rng& rng, double stddev, bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  for (auto& v : t.mutable_data()) v = rng.gaussian(0.0, stddev);
  return t;
}

double Tensor::item() const {
  check(n_->value.size() == 1, "item() on non-scalar " + shape_str(n_->shape));
  return n_->value[0];
}

Tensor Tensor::detach() const {
  auto n = std::make_shared<Node>();
  n->shape = n_->shape;
  n->value = n_->value;
  n->requires_grad = false;
  return wrap(std::move(n));
}

void Tensor::backward() const {
  check(n_->value.size() == 1, "backward() requires a scalar loss");
  // Iterative post-order topological sort over grad-requiring subgraph.
  std::vector<Node*> topo;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{n_.get(), 0}};
  seen.insert(n_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      topo.push_back(node);
      stack.pop_back();
    }
  }
  n_->ensure_grad()[0] = 1.0;
  for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
    Node* node = *it;
    if (node->backprop && !node->grad.empty()) node->backprop(*node);
  }
}

// --- elementwise -------------------------------------------------------------

namespace {

Tensor binary_same_shape(const Tensor& a, const Tensor& b, const char* name,
                         std::function<double(double, double)> f,
                         std::function<void(Node&, Node&, Node&)> bp) {
  check(a.shape() == b.shape(),
        std::string(name) + " shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  std::vector<double> out(a.size());
  const auto& av = a.data();
  const auto& bv = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(av[i], bv[i]);
  auto an = a.node();
  auto bn = b.node();
  return Tensor::wrap(make_node(a.shape(), std::move(out), {an, bn},
                                [an, bn, bp](Node& self) { bp(self, *an, *bn); }));
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_same_shape(
      a, b, "add", [](double x, double y) { return x + y; },
      [](Node& self, Node& pa, Node& pb) {
        if (pa.requires_grad) {
          auto& g = pa.ensure_grad();
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
        if (pb.requires_grad) {
          auto& g = pb.ensure_grad();
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
      });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_same_shape(
      a, b, "sub", [](double x, double y) { return x - y; },
      [](Node& self, Node& pa, Node& pb) {
        if (pa.requires_grad) {
          auto& g = pa.ensure_grad();
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
        if (pb.requires_grad) {
          auto& g = pb.ensure_grad();
          for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
        }
      });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_same_shape(
      a, b, "mul", [](double x, double y) { return x * y; },
      [](Node& self, Node& pa, Node& pb) {
        if (pa.requires_grad) {
          auto& g = pa.ensure_grad();
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb.value[i];
        }
        if (pb.requires_grad) {
          auto& g = pb.ensure_grad();
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa.value[i];
        }
      });
}

Tensor scale(const Tensor& a, double c) {
  std::vector<double> out(a.size());
  const auto& av = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * c;
  auto an = a.node();
  return Tensor::wrap(make_node(a.shape(), std::move(out), {an}, [an, c](Node& self) {
    auto& g = an->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * c;
  }));
}

Tensor add_scalar(const Tensor& a, double c) {
  std::vector<double> out(a.size());
  const auto& av = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + c;
  auto an = a.node();
  return Tensor::wrap(make_node(a.shape(), std::move(out), {an}, [an](Node& self) {
    auto& g = an->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  }));
}

Tensor square(const Tensor& x) { return mul(x, x); }

// --- matmul ------------------------------------------------------------------

namespace {

// C[m,n] += A[m,k] B[k,n]
void gemm_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
              std::size_t n) {
#pragma omp parallel for if (m * n * k > 16384)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(m); ++i) {
    double* crow = c + i * n;
    const double* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[m,n] += A[m,k] B[n,k]^T
void gemm_bt_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                 std::size_t n) {
#pragma omp parallel for if (m * n * k > 16384)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(m); ++i) {
    const double* arow = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const double* brow = b + j * k;
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      c[i * n + j] += acc;
    }
  }
}

// C[k,n] += A[m,k]^T B[m,n]
void gemm_at_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                 std::size_t n) {
#pragma omp parallel for if (m * n * k > 16384)
  for (std::ptrdiff_t p = 0; p < static_cast<std::ptrdiff_t>(k); ++p) {
    double* crow = c + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double av = a[i * k + p];
      const double* brow = b + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  check(a.rank() >= 2 && b.rank() >= 2, "matmul needs rank >= 2");
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  const std::size_t m = as[as.size() - 2], k = as[as.size() - 1];
  const std::size_t k2 = bs[bs.size() - 2], n = bs[bs.size() - 1];
  check(k == k2, "matmul inner dims " + shape_str(as) + " x " + shape_str(bs));

  Shape abatch(as.begin(), as.end() - 2), bbatch(bs.begin(), bs.end() - 2);
  check(abatch == bbatch || abatch.empty() || bbatch.empty(),
        "matmul batch dims mismatch " + shape_str(as) + " x " + shape_str(bs));
  const Shape batch = abatch.empty() ? bbatch : abatch;
  const std::size_t nb = numel(batch);
  const bool a_shared = abatch.empty() && !batch.empty();
  const bool b_shared = bbatch.empty() && !batch.empty();

  Shape os = batch;
  os.push_back(m);
  os.push_back(n);
  std::vector<double> out(numel(os), 0.0);
  const double* ap = a.data().data();
  const double* bp = b.data().data();
  for (std::size_t ib = 0; ib < nb; ++ib) {
    gemm_acc(ap + (a_shared ? 0 : ib * m * k), bp + (b_shared ? 0 : ib * k * n),
             out.data() + ib * m * n, m, k, n);
  }

  auto an = a.node();
  auto bn = b.node();
  return Tensor::wrap(make_node(std::move(os), std::move(out), {an, bn},
                                [an, bn, m, k, n, nb, a_shared, b_shared](Node& self) {
                                  const double* gp = self.grad.data();
                                  if (an->requires_grad) {
                                    auto& ga = an->ensure_grad();
                                    for (std::size_t ib = 0; ib < nb; ++ib) {
                                      gemm_bt_acc(gp + ib * m * n,
                                                  bn->value.data() + (b_shared ? 0 : ib * k * n),
                                                  ga.data() + (a_shared ? 0 : ib * m * k), m, n, k);
                                    }
                                  }
                                  if (bn->requires_grad) {
                                    auto& gb = bn->ensure_grad();
                                    for (std::size_t ib = 0; ib < nb; ++ib) {
                                      gemm_at_acc(an->value.data() + (a_shared ? 0 : ib * m * k),
                                                  gp + ib * m * n,
                                                  gb.data() + (b_shared ? 0 : ib * k * n), m, k, n);
                                    }
                                  }
                                }));
}

Tensor transpose_last2(const Tensor& x) {
  check(x.rank() >= 2, "transpose needs rank >= 2");
  const Shape& s = x.shape();
  const std::size_t m = s[s.size() - 2], n = s[s.size() - 1];
  Shape os = s;
  std::swap(os[os.size() - 2], os[os.size() - 1]);
  const std::size_t nb = x.size() / (m * n);
  std::vector<double> out(x.size());
  const auto& xv = x.data();
  for (std::size_t b = 0; b < nb; ++b)
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) out[b * m * n + j * m + i] = xv[b * m * n + i * n + j];
  auto xn = x.node();
  return Tensor::wrap(make_node(std::move(os), std::move(out), {xn}, [xn, m, n, nb](Node& self) {
    auto& g = xn->ensure_grad();
    for (std::size_t b = 0; b < nb; ++b)
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j)
          g[b * m * n + i * n + j] += self.grad[b * m * n + j * m + i];
  }));
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  check(x.rank() == 2 && w.rank() == 2 && b.rank() == 1, "linear expects [T,in],[in,out],[out]");
  check(x.extent(1) == w.extent(0) && w.extent(1) == b.extent(0), "linear shape mismatch");
  const std::size_t t = x.extent(0), in = x.extent(1), out_dim = w.extent(1);
  std::vector<double> out(t * out_dim);
  const auto& bv = b.data();
  for (std::size_t i = 0; i < t; ++i)
    std::copy(bv.begin(), bv.end(), out.begin() + i * out_dim);
  gemm_acc(x.data().data(), w.data().data(), out.data(), t, in, out_dim);
  auto xn = x.node();
  auto wn = w.node();
  auto bn = b.node();
  return Tensor::wrap(
      make_node({t, out_dim}, std::move(out), {xn, wn, bn}, [xn, wn, bn, t, in, out_dim](Node& self) {
        const double* gp = self.grad.data();
        if (xn->requires_grad) gemm_bt_acc(gp, wn->value.data(), xn->ensure_grad().data(), t, out_dim, in);
        if (wn->requires_grad) gemm_at_acc(xn->value.data(), gp, wn->ensure_grad().data(), t, in, out_dim);
        if (bn->requires_grad) {
          auto& gb = bn->ensure_grad();
          for (std::size_t i = 0; i < t; ++i)
            for (std::size_t j = 0; j < out_dim; ++j) gb[j] += gp[i * out_dim + j];
        }
      }));
}

// --- axis decomposition helpers ----------------------------------------------

namespace {

struct AxisView {
  std::size_t outer, len, inner;
};

AxisView axis_view(const Shape& s, std::size_t axis) {
  check(axis < s.size(), "axis out of range");
  AxisView v{1, s[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) v.outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) v.inner *= s[i];
  return v;
}

}  // namespace

Tensor softmax(const Tensor& x, int axis) {
  const std::size_t ax = axis < 0 ? x.rank() + axis : static_cast<std::size_t>(axis);
  const AxisView v = axis_view(x.shape(), ax);
  std::vector<double> out(x.size());
  const auto& xv = x.data();
  for (std::size_t o = 0; o < v.outer; ++o) {
    for (std::size_t in = 0; in < v.inner; ++in) {
      const std::size_t base = o * v.len * v.inner + in;
      double mx = xv[base];
      for (std::size_t l = 1; l < v.len; ++l) mx = std::max(mx, xv[base + l * v.inner]);
      double z = 0.0;
      for (std::size_t l = 0; l < v.len; ++l) {
        const double e = std::exp(xv[base + l * v.inner] - mx);
        out[base + l * v.inner] = e;
        z += e;
      }
      for (std::size_t l = 0; l < v.len; ++l) out[base + l * v.inner] /= z;
    }
  }
  auto xn = x.node();
  auto outn = make_node(x.shape(), std::move(out), {xn}, nullptr);
  Node* raw = outn.get();
  outn->backprop = [xn, v, raw](Node& self) {
    auto& g = xn->ensure_grad();
    for (std::size_t o = 0; o < v.outer; ++o) {
      for (std::size_t in = 0; in < v.inner; ++in) {
        const std::size_t base = o * v.len * v.inner + in;
        double dot = 0.0;
        for (std::size_t l = 0; l < v.len; ++l)
          dot += self.grad[base + l * v.inner] * raw->value[base + l * v.inner];
        for (std::size_t l = 0; l < v.len; ++l) {
          const std::size_t i = base + l * v.inner;
          g[i] += raw->value[i] * (self.grad[i] - dot);
        }
      }
    }
  };
  return Tensor::wrap(std::move(outn));
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  const std::size_t f = x.shape().back();
  check(gamma.rank() == 1 && gamma.extent(0) == f && beta.rank() == 1 && beta.extent(0) == f,
        "layer_norm affine shape mismatch");
  const std::size_t rows = x.size() / f;
  std::vector<double> out(x.size());
  std::vector<double> xhat(x.size());
  std::vector<double> inv_sigma(rows);
  const auto& xv = x.data();
  const auto& gv = gamma.data();
  const auto& bv = beta.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xv.data() + r * f;
    double mu = 0.0;
    for (std::size_t j = 0; j < f; ++j) mu += row[j];
    mu /= static_cast<double>(f);
    double var = 0.0;
    for (std::size_t j = 0; j < f; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(f);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_sigma[r] = is;
    for (std::size_t j = 0; j < f; ++j) {
      const double xh = (row[j] - mu) * is;
      xhat[r * f + j] = xh;
      out[r * f + j] = gv[j] * xh + bv[j];
    }
  }
  auto xn = x.node();
  auto gn = gamma.node();
  auto bn = beta.node();
  auto xh = std::make_shared<std::vector<double>>(std::move(xhat));
  auto is = std::make_shared<std::vector<double>>(std::move(inv_sigma));
  return Tensor::wrap(make_node(x.shape(), std::move(out), {xn, gn, bn},
                                [xn, gn, bn, xh, is, rows, f](Node& self) {
                                  const double* gp = self.grad.data();
                                  if (gn->requires_grad) {
                                    auto& gg = gn->ensure_grad();
                                    for (std::size_t r = 0; r < rows; ++r)
                                      for (std::size_t j = 0; j < f; ++j)
                                        gg[j] += gp[r * f + j] * (*xh)[r * f + j];
                                  }
                                  if (bn->requires_grad) {
                                    auto& gb = bn->ensure_grad();
                                    for (std::size_t r = 0; r < rows; ++r)
                                      for (std::size_t j = 0; j < f; ++j) gb[j] += gp[r * f + j];
                                  }
                                  if (xn->requires_grad) {
                                    auto& gx = xn->ensure_grad();
                                    const auto& gv = gn->value;
                                    for (std::size_t r = 0; r < rows; ++r) {
                                      double m1 = 0.0, m2 = 0.0;
                                      for (std::size_t j = 0; j < f; ++j) {
                                        const double dY = gp[r * f + j] * gv[j];
                                        m1 += dY;
                                        m2 += dY * (*xh)[r * f + j];
                                      }
                                      m1 /= static_cast<double>(f);
                                      m2 /= static_cast<double>(f);
                                      for (std::size_t j = 0; j < f; ++j) {
                                        const double dY = gp[r * f + j] * gv[j];
                                        gx[r * f + j] +=
                                            (*is)[r] * (dY - m1 - (*xh)[r * f + j] * m2);
                                      }
                                    }
                                  }
                                }));
}

Tensor gelu(const Tensor& x) {
  constexpr double inv_sqrt2 = std::numbers::sqrt2 / 2.0;
  const double inv_sqrt2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
  std::vector<double> out(x.size());
  const auto& xv = x.data();
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = 0.5 * xv[i] * (1.0 + std::erf(xv[i] * inv_sqrt2));
  auto xn = x.node();
  return Tensor::wrap(make_node(x.shape(), std::move(out), {xn}, [xn, inv_sqrt2pi](Node& self) {
    auto& g = xn->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double v = xn->value[i];
      const double cdf = 0.5 * (1.0 + std::erf(v * (std::numbers::sqrt2 / 2.0)));
      const double pdf = inv_sqrt2pi * std::exp(-0.5 * v * v);
      g[i] += self.grad[i] * (cdf + v * pdf);
    }
  }));
}

Tensor sigmoid(const Tensor& x) {
  std::vector<double> out(x.size());
  const auto& xv = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-xv[i]));
  auto xn = x.node();
  auto outn = make_node(x.shape(), std::move(out), {xn}, nullptr);
  Node* raw = outn.get();
  outn->backprop = [xn, raw](Node& self) {
    auto& g = xn->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double s = raw->value[i];
      g[i] += self.grad[i] * s * (1.0 - s);
    }
  };
  return Tensor::wrap(std::move(outn));
}

// --- conv --------------------------------------------------------------------

Tensor conv3d(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t stride,
              std::size_t pad) {
  check(x.rank() == 4 && w.rank() == 5 && b.rank() == 1, "conv3d expects x[C,X,Y,Z], w[O,C,k,k,k], b[O]");
  const std::size_t cin = x.extent(0), X = x.extent(1), Y = x.extent(2), Z = x.extent(3);
  const std::size_t cout = w.extent(0), k = w.extent(2);
  check(w.extent(1) == cin && w.extent(3) == k && w.extent(4) == k && b.extent(0) == cout,
        "conv3d weight shape mismatch");
  check(stride >= 1, "conv3d stride must be >= 1");
  const std::size_t px = X + 2 * pad, py = Y + 2 * pad, pz = Z + 2 * pad;
  check(px >= k && (px - k) % stride == 0 && py >= k && (py - k) % stride == 0 && pz >= k &&
            (pz - k) % stride == 0,
        "conv3d: stride/kernel do not divide extent " + shape_str(x.shape()));
  const std::size_t ox = (px - k) / stride + 1, oy = (py - k) / stride + 1,
                    oz = (pz - k) / stride + 1;

  std::vector<double> out(cout * ox * oy * oz);
  const auto& xv = x.data();
  const auto& wv = w.data();
  const auto& bv = b.data();
  const std::ptrdiff_t ip = static_cast<std::ptrdiff_t>(pad);

#pragma omp parallel for collapse(2)
  for (std::ptrdiff_t co = 0; co < static_cast<std::ptrdiff_t>(cout); ++co) {
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(ox); ++i) {
      for (std::size_t j = 0; j < oy; ++j) {
        for (std::size_t l = 0; l < oz; ++l) {
          double acc = bv[co];
          for (std::size_t ci = 0; ci < cin; ++ci) {
            const double* wb = wv.data() + ((co * cin + ci) * k) * k * k;
            for (std::size_t kx = 0; kx < k; ++kx) {
              const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(i * stride + kx) - ip;
              if (sx < 0 || sx >= static_cast<std::ptrdiff_t>(X)) continue;
              for (std::size_t ky = 0; ky < k; ++ky) {
                const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(j * stride + ky) - ip;
                if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(Y)) continue;
                for (std::size_t kz = 0; kz < k; ++kz) {
                  const std::ptrdiff_t sz = static_cast<std::ptrdiff_t>(l * stride + kz) - ip;
                  if (sz < 0 || sz >= static_cast<std::ptrdiff_t>(Z)) continue;
                  acc += xv[((ci * X + sx) * Y + sy) * Z + sz] * wb[(kx * k + ky) * k + kz];
                }
              }
            }
          }
          out[((static_cast<std::size_t>(co) * ox + i) * oy + j) * oz + l] = acc;
        }
      }
    }
  }

  auto xn = x.node();
  auto wn = w.node();
  auto bn = b.node();
  return Tensor::wrap(make_node(
      {cout, ox, oy, oz}, std::move(out), {xn, wn, bn},
      [xn, wn, bn, cin, cout, X, Y, Z, k, stride, pad, ox, oy, oz](Node& self) {
        const double* gp = self.grad.data();
        const std::ptrdiff_t ip = static_cast<std::ptrdiff_t>(pad);
        if (bn->requires_grad) {
          auto& gb = bn->ensure_grad();
          for (std::size_t co = 0; co < cout; ++co) {
            double acc = 0.0;
            const double* gc = gp + co * ox * oy * oz;
            for (std::size_t i = 0; i < ox * oy * oz; ++i) acc += gc[i];
            gb[co] += acc;
          }
        }
        if (wn->requires_grad) {
          auto& gw = wn->ensure_grad();
#pragma omp parallel for
          for (std::ptrdiff_t co = 0; co < static_cast<std::ptrdiff_t>(cout); ++co) {
            for (std::size_t ci = 0; ci < cin; ++ci) {
              for (std::size_t kx = 0; kx < k; ++kx)
                for (std::size_t ky = 0; ky < k; ++ky)
                  for (std::size_t kz = 0; kz < k; ++kz) {
                    double acc = 0.0;
                    for (std::size_t i = 0; i < ox; ++i) {
                      const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(i * stride + kx) - ip;
                      if (sx < 0 || sx >= static_cast<std::ptrdiff_t>(X)) continue;
                      for (std::size_t j = 0; j < oy; ++j) {
                        const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(j * stride + ky) - ip;
                        if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(Y)) continue;
                        for (std::size_t l = 0; l < oz; ++l) {
                          const std::ptrdiff_t sz =
                              static_cast<std::ptrdiff_t>(l * stride + kz) - ip;
                          if (sz < 0 || sz >= static_cast<std::ptrdiff_t>(Z)) continue;
                          acc += gp[((static_cast<std::size_t>(co) * ox + i) * oy + j) * oz + l] *
                                 xn->value[((ci * X + sx) * Y + sy) * Z + sz];
                        }
                      }
                    }
                    gw[(((static_cast<std::size_t>(co) * cin + ci) * k + kx) * k + ky) * k + kz] +=
                        acc;
                  }
            }
          }
        }
        if (xn->requires_grad) {
          auto& gx = xn->ensure_grad();
          // Gather form: for each input voxel collect contributing outputs.
#pragma omp parallel for collapse(2)
          for (std::ptrdiff_t ci = 0; ci < static_cast<std::ptrdiff_t>(cin); ++ci) {
            for (std::ptrdiff_t sx = 0; sx < static_cast<std::ptrdiff_t>(X); ++sx) {
              for (std::size_t sy = 0; sy < Y; ++sy) {
                for (std::size_t sz = 0; sz < Z; ++sz) {
                  double acc = 0.0;
                  for (std::size_t kx = 0; kx < k; ++kx) {
                    const std::ptrdiff_t num_x = sx + ip - static_cast<std::ptrdiff_t>(kx);
                    if (num_x < 0 || num_x % static_cast<std::ptrdiff_t>(stride) != 0) continue;
                    const std::size_t i = num_x / stride;
                    if (i >= ox) continue;
                    for (std::size_t ky = 0; ky < k; ++ky) {
                      const std::ptrdiff_t num_y = static_cast<std::ptrdiff_t>(sy) + ip -
                                                   static_cast<std::ptrdiff_t>(ky);
                      if (num_y < 0 || num_y % static_cast<std::ptrdiff_t>(stride) != 0) continue;
                      const std::size_t j = num_y / stride;
                      if (j >= oy) continue;
                      for (std::size_t kz = 0; kz < k; ++kz) {
                        const std::ptrdiff_t num_z = static_cast<std::ptrdiff_t>(sz) + ip -
                                                     static_cast<std::ptrdiff_t>(kz);
                        if (num_z < 0 || num_z % static_cast<std::ptrdiff_t>(stride) != 0) continue;
                        const std::size_t l = num_z / stride;
                        if (l >= oz) continue;
                        for (std::size_t co = 0; co < cout; ++co) {
                          acc += gp[((co * ox + i) * oy + j) * oz + l] *
                                 wn->value[(((co * cin + static_cast<std::size_t>(ci)) * k + kx) *
                                                k +
                                            ky) *
                                               k +
                                           kz];
                        }
                      }
                    }
                  }
                  gx[((static_cast<std::size_t>(ci) * X + sx) * Y + sy) * Z + sz] += acc;
                }
              }
            }
          }
        }
      }));
}

Tensor transposed_conv3d(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t stride) {
  check(x.rank() == 4 && w.rank() == 5 && b.rank() == 1,
        "transposed_conv3d expects x[C,gx,gy,gz], w[C,O,k,k,k], b[O]");
  const std::size_t cin = x.extent(0), gx = x.extent(1), gy = x.extent(2), gz = x.extent(3);
  const std::size_t cout = w.extent(1), k = w.extent(2);
  check(w.extent(0) == cin && w.extent(3) == k && w.extent(4) == k && b.extent(0) == cout,
        "transposed_conv3d weight shape mismatch");
  check(k == stride, "transposed_conv3d supports kernel == stride only");
  const std::size_t ox = gx * k, oy = gy * k, oz = gz * k;
  std::vector<double> out(cout * ox * oy * oz);
  const auto& xv = x.data();
  const auto& wv = w.data();
  const auto& bv = b.data();
#pragma omp parallel for collapse(2)
  for (std::ptrdiff_t co = 0; co < static_cast<std::ptrdiff_t>(cout); ++co) {
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(gx); ++i) {
      for (std::size_t j = 0; j < gy; ++j)
        for (std::size_t l = 0; l < gz; ++l)
          for (std::size_t kx = 0; kx < k; ++kx)
            for (std::size_t ky = 0; ky < k; ++ky)
              for (std::size_t kz = 0; kz < k; ++kz) {
                double acc = bv[co];
                for (std::size_t ci = 0; ci < cin; ++ci)
                  acc += xv[((ci * gx + i) * gy + j) * gz + l] *
                         wv[(((ci * cout + co) * k + kx) * k + ky) * k + kz];
                out[((static_cast<std::size_t>(co) * ox + i * k + kx) * oy + j * k + ky) * oz +
                    l * k + kz] = acc;
              }
    }
  }
  auto xn = x.node();
  auto wn = w.node();
  auto bn = b.node();
  return Tensor::wrap(make_node(
      {cout, ox, oy, oz}, std::move(out), {xn, wn, bn},
      [xn, wn, bn, cin, cout, gx, gy, gz, k, ox, oy, oz](Node& self) {
        const double* gp = self.grad.data();
        if (bn->requires_grad) {
          auto& gb = bn->ensure_grad();
          for (std::size_t co = 0; co < cout; ++co) {
            double acc = 0.0;
            const double* gc = gp + co * ox * oy * oz;
            for (std::size_t i = 0; i < ox * oy * oz; ++i) acc += gc[i];
            gb[co] += acc;
          }
        }
        if (xn->requires_grad) {
          auto& gxv = xn->ensure_grad();
#pragma omp parallel for
          for (std::ptrdiff_t ci = 0; ci < static_cast<std::ptrdiff_t>(cin); ++ci)
            for (std::size_t i = 0; i < gx; ++i)
              for (std::size_t j = 0; j < gy; ++j)
                for (std::size_t l = 0; l < gz; ++l) {
                  double acc = 0.0;
                  for (std::size_t co = 0; co < cout; ++co)
                    for (std::size_t kx = 0; kx < k; ++kx)
                      for (std::size_t ky = 0; ky < k; ++ky)
                        for (std::size_t kz = 0; kz < k; ++kz)
                          acc += gp[((co * ox + i * k + kx) * oy + j * k + ky) * oz + l * k + kz] *
                                 wn->value[(((static_cast<std::size_t>(ci) * cout + co) * k + kx) *
                                                k +
                                            ky) *
                                               k +
                                           kz];
                  gxv[((static_cast<std::size_t>(ci) * gx + i) * gy + j) * gz + l] += acc;
                }
        }
        if (wn->requires_grad) {
          auto& gw = wn->ensure_grad();
#pragma omp parallel for
          for (std::ptrdiff_t ci = 0; ci < static_cast<std::ptrdiff_t>(cin); ++ci)
            for (std::size_t co = 0; co < cout; ++co)
              for (std::size_t kx = 0; kx < k; ++kx)
                for (std::size_t ky = 0; ky < k; ++ky)
                  for (std::size_t kz = 0; kz < k; ++kz) {
                    double acc = 0.0;
                    for (std::size_t i = 0; i < gx; ++i)
                      for (std::size_t j = 0; j < gy; ++j)
                        for (std::size_t l = 0; l < gz; ++l)
                          acc += gp[((co * ox + i * k + kx) * oy + j * k + ky) * oz + l * k + kz] *
                                 xn->value[((static_cast<std::size_t>(ci) * gx + i) * gy + j) * gz +
                                           l];
                    gw[(((static_cast<std::size_t>(ci) * cout + co) * k + kx) * k + ky) * k + kz] +=
                        acc;
                  }
        }
      }));
}

// --- reductions ---------------------------------------------------------------

Tensor max_over_axis(const Tensor& x, std::size_t axis) {
  const AxisView v = axis_view(x.shape(), axis);
  Shape os;
  for (std::size_t i = 0; i < x.rank(); ++i)
    if (i != axis) os.push_back(x.extent(i));
  if (os.empty()) os.push_back(1);
  std::vector<double> out(v.outer * v.inner);
  auto argmax = std::make_shared<std::vector<std::size_t>>(v.outer * v.inner);
  const auto& xv = x.data();
  for (std::size_t o = 0; o < v.outer; ++o)
    for (std::size_t in = 0; in < v.inner; ++in) {
      const std::size_t base = o * v.len * v.inner + in;
      std::size_t best = 0;
      double mx = xv[base];
      for (std::size_t l = 1; l < v.len; ++l) {
        const double val = xv[base + l * v.inner];
        if (val > mx) {  // strict: ties go to the lowest index
          mx = val;
          best = l;
        }
      }
      out[o * v.inner + in] = mx;
      (*argmax)[o * v.inner + in] = base + best * v.inner;
    }
  auto xn = x.node();
  return Tensor::wrap(make_node(std::move(os), std::move(out), {xn}, [xn, argmax](Node& self) {
    auto& g = xn->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[(*argmax)[i]] += self.grad[i];
  }));
}

Tensor mean_over_axis(const Tensor& x, std::size_t axis) {
  const AxisView v = axis_view(x.shape(), axis);
  Shape os;
  for (std::size_t i = 0; i < x.rank(); ++i)
    if (i != axis) os.push_back(x.extent(i));
  if (os.empty()) os.push_back(1);
  std::vector<double> out(v.outer * v.inner, 0.0);
  const auto& xv = x.data();
  const double inv = 1.0 / static_cast<double>(v.len);
  for (std::size_t o = 0; o < v.outer; ++o)
    for (std::size_t l = 0; l < v.len; ++l)
      for (std::size_t in = 0; in < v.inner; ++in)
        out[o * v.inner + in] += xv[(o * v.len + l) * v.inner + in] * inv;
  auto xn = x.node();
  return Tensor::wrap(make_node(std::move(os), std::move(out), {xn}, [xn, v, inv](Node& self) {
    auto& g = xn->ensure_grad();
    for (std::size_t o = 0; o < v.outer; ++o)
      for (std::size_t l = 0; l < v.len; ++l)
        for (std::size_t in = 0; in < v.inner; ++in)
          g[(o * v.len + l) * v.inner + in] += self.grad[o * v.inner + in] * inv;
  }));
}

Tensor reshape(const Tensor& x, Shape shape) {
  check(numel(shape) == x.size(),
        "reshape " + shape_str(x.shape()) + " -> " + shape_str(shape) + " changes numel");
  auto xn = x.node();
  return Tensor::wrap(make_node(std::move(shape), x.data(), {xn}, [xn](Node& self) {
    auto& g = xn->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  }));
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  check(!parts.empty(), "concat_rows on empty list");
  Shape tail(parts[0].shape().begin() + 1, parts[0].shape().end());
  const std::size_t row = numel(tail);
  std::size_t total = 0;
  for (const auto& p : parts) {
    Shape t(p.shape().begin() + 1, p.shape().end());
    check(t == tail, "concat_rows trailing dims mismatch");
    total += p.extent(0);
  }
  Shape os = {total};
  os.insert(os.end(), tail.begin(), tail.end());
  std::vector<double> out;
  out.reserve(total * row);
  std::vector<std::shared_ptr<Node>> pn;
  for (const auto& p : parts) {
    out.insert(out.end(), p.data().begin(), p.data().end());
    pn.push_back(p.node());
  }
  return Tensor::wrap(make_node(std::move(os), std::move(out), pn, [pn](Node& self) {
    std::size_t off = 0;
    for (auto& p : pn) {
      if (p->requires_grad) {
        auto& g = p->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[off + i];
      }
      off += p->value.size();
    }
  }));
}

Tensor gather_rows(const Tensor& x, const std::vector<std::size_t>& rows) {
  check(x.rank() >= 1, "gather_rows needs rank >= 1");
  const std::size_t rowlen = x.size() / x.extent(0);
  for (auto r : rows) check(r < x.extent(0), "gather_rows index out of range");
  Shape os = x.shape();
  os[0] = rows.size();
  std::vector<double> out(rows.size() * rowlen);
  const auto& xv = x.data();
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy(xv.begin() + rows[i] * rowlen, xv.begin() + (rows[i] + 1) * rowlen,
              out.begin() + i * rowlen);
  auto xn = x.node();
  auto idx = std::make_shared<std::vector<std::size_t>>(rows);
  return Tensor::wrap(make_node(std::move(os), std::move(out), {xn}, [xn, idx, rowlen](Node& self) {
    auto& g = xn->ensure_grad();
    for (std::size_t i = 0; i < idx->size(); ++i)
      for (std::size_t j = 0; j < rowlen; ++j)
        g[(*idx)[i] * rowlen + j] += self.grad[i * rowlen + j];
  }));
}

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  auto xn = x.node();
  return Tensor::wrap(make_node({1}, {acc}, {xn}, [xn](Node& self) {
    auto& g = xn->ensure_grad();
    for (auto& v : g) v += self.grad[0];
  }));
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.size())); }

Tensor stack(const std::vector<Tensor>& parts) {
  check(!parts.empty(), "stack on empty list");
  for (const auto& p : parts) check(p.shape() == parts[0].shape(), "stack shape mismatch");
  Shape os = {parts.size()};
  os.insert(os.end(), parts[0].shape().begin(), parts[0].shape().end());
  std::vector<double> out;
  out.reserve(parts.size() * parts[0].size());
  std::vector<std::shared_ptr<Node>> pn;
  for (const auto& p : parts) {
    out.insert(out.end(), p.data().begin(), p.data().end());
    pn.push_back(p.node());
  }
  return Tensor::wrap(make_node(std::move(os), std::move(out), pn, [pn](Node& self) {
    std::size_t off = 0;
    for (auto& p : pn) {
      if (p->requires_grad) {
        auto& g = p->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[off + i];
      }
      off += p->value.size();
    }
  }));
}

Tensor divide(const Tensor& a, const Tensor& b) {
  return binary_same_shape(
      a, b, "divide", [](double x, double y) { return x / y; },
      [](Node& self, Node& pa, Node& pb) {
        if (pa.requires_grad) {
          auto& g = pa.ensure_grad();
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] / pb.value[i];
        }
        if (pb.requires_grad) {
          auto& g = pb.ensure_grad();
          for (std::size_t i = 0; i < g.size(); ++i)
            g[i] -= self.grad[i] * pa.value[i] / (pb.value[i] * pb.value[i]);
        }
      });
}

Tensor slice_cols(const Tensor& x, std::size_t c0, std::size_t c1) {
  check(x.rank() == 2 && c0 < c1 && c1 <= x.extent(1), "slice_cols bounds");
  const std::size_t t = x.extent(0), e = x.extent(1), w = c1 - c0;
  std::vector<double> out(t * w);
  const auto& xv = x.data();
  for (std::size_t i = 0; i < t; ++i)
    std::copy(xv.begin() + i * e + c0, xv.begin() + i * e + c1, out.begin() + i * w);
  auto xn = x.node();
  return Tensor::wrap(make_node({t, w}, std::move(out), {xn}, [xn, t, e, c0, w](Node& self) {
    auto& g = xn->ensure_grad();
    for (std::size_t i = 0; i < t; ++i)
      for (std::size_t j = 0; j < w; ++j) g[i * e + c0 + j] += self.grad[i * w + j];
  }));
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  check(!parts.empty(), "concat_cols on empty list");
  const std::size_t t = parts[0].extent(0);
  std::size_t total = 0;
  for (const auto& p : parts) {
    check(p.rank() == 2 && p.extent(0) == t, "concat_cols row count mismatch");
    total += p.extent(1);
  }
  std::vector<double> out(t * total);
  std::vector<std::shared_ptr<Node>> pn;
  std::size_t off = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.extent(1);
    for (std::size_t i = 0; i < t; ++i)
      std::copy(p.data().begin() + i * w, p.data().begin() + (i + 1) * w,
                out.begin() + i * total + off);
    off += w;
    pn.push_back(p.node());
  }
  return Tensor::wrap(make_node({t, total}, std::move(out), pn, [pn, t, total](Node& self) {
    std::size_t off = 0;
    for (auto& p : pn) {
      const std::size_t w = p->shape[1];
      if (p->requires_grad) {
        auto& g = p->ensure_grad();
        for (std::size_t i = 0; i < t; ++i)
          for (std::size_t j = 0; j < w; ++j) g[i * w + j] += self.grad[i * total + off + j];
      }
      off += w;
    }
  }));
}

Tensor add_rowvec(const Tensor& x, const Tensor& v) {
  check(x.rank() == 2 && v.rank() == 1 && v.extent(0) == x.extent(1), "add_rowvec shape mismatch");
  const std::size_t t = x.extent(0), e = x.extent(1);
  std::vector<double> out(x.size());
  const auto& xv = x.data();
  const auto& vv = v.data();
  for (std::size_t i = 0; i < t; ++i)
    for (std::size_t j = 0; j < e; ++j) out[i * e + j] = xv[i * e + j] + vv[j];
  auto xn = x.node();
  auto vn = v.node();
  return Tensor::wrap(make_node(x.shape(), std::move(out), {xn, vn}, [xn, vn, t, e](Node& self) {
    if (xn->requires_grad) {
      auto& g = xn->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (vn->requires_grad) {
      auto& g = vn->ensure_grad();
      for (std::size_t i = 0; i < t; ++i)
        for (std::size_t j = 0; j < e; ++j) g[j] += self.grad[i * e + j];
    }
  }));
}

Tensor scale_rows(const Tensor& x, const Tensor& s) {
  check(x.rank() >= 1 && s.rank() == 1 && s.extent(0) == x.extent(0), "scale_rows shape mismatch");
  const std::size_t t = x.extent(0), row = x.size() / t;
  std::vector<double> out(x.size());
  const auto& xv = x.data();
  const auto& sv = s.data();
  for (std::size_t i = 0; i < t; ++i)
    for (std::size_t j = 0; j < row; ++j) out[i * row + j] = xv[i * row + j] * sv[i];
  auto xn = x.node();
  auto sn = s.node();
  return Tensor::wrap(make_node(x.shape(), std::move(out), {xn, sn}, [xn, sn, t, row](Node& self) {
    if (xn->requires_grad) {
      auto& g = xn->ensure_grad();
      for (std::size_t i = 0; i < t; ++i)
        for (std::size_t j = 0; j < row; ++j)
          g[i * row + j] += self.grad[i * row + j] * sn->value[i];
    }
    if (sn->requires_grad) {
      auto& g = sn->ensure_grad();
      for (std::size_t i = 0; i < t; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < row; ++j) acc += self.grad[i * row + j] * xn->value[i * row + j];
        g[i] += acc;
      }
    }
  }));
}

// --- serialization -------------------------------------------------------------

namespace {
constexpr char kTensorMagic[6] = {'A', 'T', 'N', 'S', 'R', '1'};
}

void write_tensor(std::ostream& os, const Tensor& t, Dtype dtype) {
  os.write(kTensorMagic, 6);
  const std::uint8_t dt = static_cast<std::uint8_t>(dtype);
  os.write(reinterpret_cast<const char*>(&dt), 1);
  const std::uint8_t rank = static_cast<std::uint8_t>(t.rank());
  os.write(reinterpret_cast<const char*>(&rank), 1);
  for (auto e : t.shape()) {
    const std::uint64_t e64 = e;
    os.write(reinterpret_cast<const char*>(&e64), 8);
  }
  if (dtype == Dtype::f64) {
    os.write(reinterpret_cast<const char*>(t.data().data()),
             static_cast<std::streamsize>(t.size() * 8));
  } else {
    std::vector<float> f(t.size());
    for (std::size_t i = 0; i < f.size(); ++i) f[i] = static_cast<float>(t.data()[i]);
    os.write(reinterpret_cast<const char*>(f.data()), static_cast<std::streamsize>(f.size() * 4));
  }
}

Tensor read_tensor(std::istream& is) {
  char magic[6];
  is.read(magic, 6);
  if (!is || std::memcmp(magic, kTensorMagic, 6) != 0)
    throw std::runtime_error("bad tensor magic");
  std::uint8_t dt = 0, rank = 0;
  is.read(reinterpret_cast<char*>(&dt), 1);
  is.read(reinterpret_cast<char*>(&rank), 1);
  Shape shape(rank);
  for (auto& e : shape) {
    std::uint64_t e64 = 0;
    is.read(reinterpret_cast<char*>(&e64), 8);
    e = static_cast<std::size_t>(e64);
  }
  std::vector<double> data(numel(shape));
  if (static_cast<Dtype>(dt) == Dtype::f64) {
    is.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size() * 8));
  } else {
    std::vector<float> f(data.size());
    is.read(reinterpret_cast<char*>(f.data()), static_cast<std::streamsize>(f.size() * 4));
    for (std::size_t i = 0; i < f.size(); ++i) data[i] = f[i];
  }
  if (!is) throw std::runtime_error("truncated tensor blob");
  return Tensor::from(std::move(shape), std::move(data));
}

void save_tensor(const std::string& path, const Tensor& t, Dtype dtype) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path);
  write_tensor(os, t, dtype);
}

Tensor load_tensor(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path);
  return read_tensor(is);
}

// --- ParamStore -----------------------------------------------------------------

std::size_t ParamStore::index_of(const std::string& name) const {
  for (std::size_t i = 0; i < order_.size(); ++i)
    if (order_[i] == name) return i;
  throw std::runtime_error("unknown parameter: " + name);
}

Tensor& ParamStore::add(const std::string& name, Tensor t) {
  if (contains(name)) throw std::runtime_error("duplicate parameter: " + name);
  order_.push_back(name);
  tensors_.push_back(std::move(t));
  return tensors_.back();
}

bool ParamStore::contains(const std::string& name) const {
  return std::find(order_.begin(), order_.end(), name) != order_.end();
}

Tensor& ParamStore::get(const std::string& name) { return tensors_[index_of(name)]; }
const Tensor& ParamStore::get(const std::string& name) const { return tensors_[index_of(name)]; }

std::size_t ParamStore::total_params() const {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += t.size();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& t : tensors_) t.zero_grad();
}

}  // namespace adavit
