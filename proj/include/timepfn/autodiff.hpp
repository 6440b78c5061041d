#pragma once

#include <cmath>
#include <functional>
#include <utility>
#include <vector>

#include "timepfn/common.hpp"

namespace timepfn {

inline Index numel(const std::vector<Index>& shape) {
  Index n = 1;
  for (Index d : shape) n *= d;
  return n;
}

template <typename Scalar>
class Graph;

// Handle to a value node on a Graph tape. Data is flat, row-major; scalars
// have an empty shape.
template <typename Scalar>
class Tensor {
 public:
  Tensor() = default;
  Tensor(Graph<Scalar>* graph, int id) : graph_(graph), id_(id) {}

  Graph<Scalar>* graph() const { return graph_; }
  int id() const { return id_; }
  const std::vector<Index>& shape() const { return graph_->shape(id_); }
  Index size() const { return numel(shape()); }
  Index rank() const { return static_cast<Index>(shape().size()); }
  bool requires_grad() const { return graph_->requires_grad(id_); }

  const Eigen::Array<Scalar, Eigen::Dynamic, 1>& value() const {
    return graph_->value(id_);
  }
  bool has_grad() const { return graph_->has_grad(id_); }
  const Eigen::Array<Scalar, Eigen::Dynamic, 1>& grad() const {
    return graph_->grad(id_);
  }

  Matrix<Scalar> to_matrix() const {
    const auto& s = shape();
    if (s.size() != 2)
      throw ShapeMismatch("to_matrix on tensor of shape " + shape_string(s));
    return Eigen::Map<const RowMajorMatrix<Scalar>>(value().data(), s[0], s[1]);
  }

 private:
  Graph<Scalar>* graph_ = nullptr;
  int id_ = -1;
};

// Reverse-mode tape. Ops append nodes in execution order, so a reverse walk
// visits every node after all of its consumers. backward() consumes the
// tape; one Graph serves one forward/backward pass.
template <typename Scalar>
class Graph {
 public:
  using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
  // Called with (graph, own node id); reads its own grad and accumulates
  // into its inputs' grad buffers.
  using BackwardFn = std::function<void(Graph&, int)>;

  struct Node {
    std::vector<Index> shape;
    Array value;
    Array grad;  // allocated lazily during backward
    bool requires_grad = false;
    BackwardFn backward;
  };

  Tensor<Scalar> leaf(std::vector<Index> shape, Array value, bool requires_grad) {
    if (numel(shape) != value.size())
      throw ShapeMismatch("leaf: shape " + shape_string(shape) + " does not hold " +
                          std::to_string(value.size()) + " values");
    return make(std::move(shape), std::move(value), requires_grad, nullptr);
  }

  // Row-major flatten of a 2-D matrix.
  Tensor<Scalar> leaf(const Matrix<Scalar>& m, bool requires_grad) {
    Array flat(m.size());
    Eigen::Map<RowMajorMatrix<Scalar>>(flat.data(), m.rows(), m.cols()) = m;
    return leaf({m.rows(), m.cols()}, std::move(flat), requires_grad);
  }

  Tensor<Scalar> make(std::vector<Index> shape, Array value, bool requires_grad,
                      BackwardFn backward) {
    if (consumed_) throw Error("Graph: tape already consumed by backward()");
    Node n;
    n.shape = std::move(shape);
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Tensor<Scalar>(this, static_cast<int>(nodes_.size()) - 1);
  }

  const std::vector<Index>& shape(int id) const { return nodes_[id].shape; }
  const Array& value(int id) const { return nodes_[id].value; }
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }
  bool has_grad(int id) const { return nodes_[id].grad.size() > 0; }
  const Array& grad(int id) const {
    if (!has_grad(id)) throw Error("Graph: tensor has no gradient");
    return nodes_[id].grad;
  }

  // Accumulation target, zero-filled on first touch. Callers must not
  // request a buffer for nodes that do not require grad.
  Array& grad_buffer(int id) {
    Node& n = nodes_[id];
    if (n.grad.size() == 0) n.grad = Array::Zero(n.value.size());
    return n.grad;
  }

  void backward(const Tensor<Scalar>& loss) {
    if (consumed_) throw Error("Graph: tape already consumed by backward()");
    if (loss.size() != 1)
      throw NotScalarLoss("backward: loss has shape " + shape_string(loss.shape()));
    if (nodes_.empty()) throw Error("backward: empty tape");
    grad_buffer(loss.id())[0] = Scalar(1);
    for (int id = loss.id(); id >= 0; --id) {
      Node& n = nodes_[id];
      if (!n.requires_grad || !n.backward) continue;
      if (n.grad.size() == 0) continue;  // not reachable from the loss
      n.backward(*this, id);
    }
    consumed_ = true;
  }

  std::size_t node_count() const { return nodes_.size(); }

 private:
  std::vector<Node> nodes_;
  bool consumed_ = false;
};

namespace detail {

template <typename Scalar>
void check_same_shape(const char* op, const Tensor<Scalar>& a,
                      const Tensor<Scalar>& b) {
  if (a.graph() != b.graph()) throw Error("tensors belong to different graphs");
  if (a.shape() != b.shape())
    throw ShapeMismatch(std::string(op) + ": shapes " + shape_string(a.shape()) +
                        " vs " + shape_string(b.shape()));
}

// Adds expr into id's grad buffer iff that node participates in autodiff.
template <typename Scalar, typename Expr>
void accumulate(Graph<Scalar>& g, int id, const Expr& expr) {
  if (g.requires_grad(id)) g.grad_buffer(id) += expr;
}

}  // namespace detail

// ---- elementwise ----

template <typename Scalar>
Tensor<Scalar> add(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  detail::check_same_shape("add", a, b);
  Graph<Scalar>& g = *a.graph();
  const int ia = a.id(), ib = b.id();
  return g.make(a.shape(), a.value() + b.value(),
                a.requires_grad() || b.requires_grad(),
                [ia, ib](Graph<Scalar>& g, int self) {
                  const auto& go = g.grad(self);
                  detail::accumulate(g, ia, go);
                  detail::accumulate(g, ib, go);
                });
}

template <typename Scalar>
Tensor<Scalar> sub(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  detail::check_same_shape("sub", a, b);
  Graph<Scalar>& g = *a.graph();
  const int ia = a.id(), ib = b.id();
  return g.make(a.shape(), a.value() - b.value(),
                a.requires_grad() || b.requires_grad(),
                [ia, ib](Graph<Scalar>& g, int self) {
                  const auto& go = g.grad(self);
                  detail::accumulate(g, ia, go);
                  detail::accumulate(g, ib, -go);
                });
}

template <typename Scalar>
Tensor<Scalar> mul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  detail::check_same_shape("mul", a, b);
  Graph<Scalar>& g = *a.graph();
  const int ia = a.id(), ib = b.id();
  return g.make(a.shape(), a.value() * b.value(),
                a.requires_grad() || b.requires_grad(),
                [ia, ib](Graph<Scalar>& g, int self) {
                  const auto& go = g.grad(self);
                  detail::accumulate(g, ia, go * g.value(ib));
                  detail::accumulate(g, ib, go * g.value(ia));
                });
}

template <typename Scalar>
Tensor<Scalar> scale(const Tensor<Scalar>& a, Scalar c) {
  Graph<Scalar>& g = *a.graph();
  const int ia = a.id();
  return g.make(a.shape(), a.value() * c, a.requires_grad(),
                [ia, c](Graph<Scalar>& g, int self) {
                  detail::accumulate(g, ia, g.grad(self) * c);
                });
}

// x: (rows, cols) plus a length-cols row vector broadcast over rows.
template <typename Scalar>
Tensor<Scalar> add_rowvec(const Tensor<Scalar>& x, const Tensor<Scalar>& b) {
  if (x.rank() != 2 || b.rank() != 1 || x.shape()[1] != b.shape()[0])
    throw ShapeMismatch("add_rowvec: " + shape_string(x.shape()) + " + " +
                        shape_string(b.shape()));
  Graph<Scalar>& g = *x.graph();
  const Index rows = x.shape()[0], cols = x.shape()[1];
  typename Graph<Scalar>::Array out = x.value();
  for (Index r = 0; r < rows; ++r) out.segment(r * cols, cols) += b.value();
  const int ix = x.id(), ib = b.id();
  return g.make(x.shape(), std::move(out), x.requires_grad() || b.requires_grad(),
                [ix, ib, rows, cols](Graph<Scalar>& g, int self) {
                  const auto& go = g.grad(self);
                  detail::accumulate(g, ix, go);
                  if (g.requires_grad(ib)) {
                    auto& gb = g.grad_buffer(ib);
                    for (Index r = 0; r < rows; ++r)
                      gb += go.segment(r * cols, cols);
                  }
                });
}

template <typename Scalar>
Tensor<Scalar> gelu(const Tensor<Scalar>& x) {
  Graph<Scalar>& g = *x.graph();
  const auto& v = x.value();
  typename Graph<Scalar>::Array out(v.size());
  for (Index i = 0; i < v.size(); ++i) {
    const double xi = static_cast<double>(v[i]);
    out[i] = static_cast<Scalar>(0.5 * xi * (1.0 + std::erf(xi * M_SQRT1_2)));
  }
  const int ix = x.id();
  return g.make(x.shape(), std::move(out), x.requires_grad(),
                [ix](Graph<Scalar>& g, int self) {
                  if (!g.requires_grad(ix)) return;
                  const auto& go = g.grad(self);
                  const auto& v = g.value(ix);
                  auto& gx = g.grad_buffer(ix);
                  constexpr double inv_sqrt_2pi = 0.3989422804014327;
                  for (Index i = 0; i < v.size(); ++i) {
                    const double xi = static_cast<double>(v[i]);
                    const double cdf = 0.5 * (1.0 + std::erf(xi * M_SQRT1_2));
                    const double pdf = inv_sqrt_2pi * std::exp(-0.5 * xi * xi);
                    gx[i] += go[i] * static_cast<Scalar>(cdf + xi * pdf);
                  }
                });
}

// ---- matmul ----

// 2-D: (m,k)x(k,n). 3-D: batched with equal leading dimension.
template <typename Scalar>
Tensor<Scalar> matmul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (a.graph() != b.graph()) throw Error("tensors belong to different graphs");
  Graph<Scalar>& g = *a.graph();
  using CMap = Eigen::Map<const RowMajorMatrix<Scalar>>;
  using MMap = Eigen::Map<RowMajorMatrix<Scalar>>;

  const auto& sa = a.shape();
  const auto& sb = b.shape();
  const bool batched = sa.size() == 3;
  if (!((sa.size() == 2 && sb.size() == 2) || (sa.size() == 3 && sb.size() == 3)))
    throw ShapeMismatch("matmul: ranks " + shape_string(sa) + " x " + shape_string(sb));
  const Index batch = batched ? sa[0] : 1;
  const Index m = sa[batched ? 1 : 0], k = sa[batched ? 2 : 1];
  const Index kb = sb[batched ? 1 : 0], n = sb[batched ? 2 : 1];
  if (k != kb || (batched && sb[0] != batch))
    throw ShapeMismatch("matmul: " + shape_string(sa) + " x " + shape_string(sb));

  typename Graph<Scalar>::Array out(batch * m * n);
  for (Index t = 0; t < batch; ++t) {
    CMap ma(a.value().data() + t * m * k, m, k);
    CMap mb(b.value().data() + t * k * n, k, n);
    MMap mo(out.data() + t * m * n, m, n);
    mo.noalias() = ma * mb;
  }
  std::vector<Index> shape =
      batched ? std::vector<Index>{batch, m, n} : std::vector<Index>{m, n};
  const int ia = a.id(), ib = b.id();
  return g.make(std::move(shape), std::move(out),
                a.requires_grad() || b.requires_grad(),
                [ia, ib, batch, m, k, n](Graph<Scalar>& g, int self) {
                  const auto& go = g.grad(self);
                  for (Index t = 0; t < batch; ++t) {
                    CMap mgo(go.data() + t * m * n, m, n);
                    if (g.requires_grad(ia)) {
                      CMap mb(g.value(ib).data() + t * k * n, k, n);
                      MMap mga(g.grad_buffer(ia).data() + t * m * k, m, k);
                      mga.noalias() += mgo * mb.transpose();
                    }
                    if (g.requires_grad(ib)) {
                      CMap ma(g.value(ia).data() + t * m * k, m, k);
                      MMap mgb(g.grad_buffer(ib).data() + t * k * n, k, n);
                      mgb.noalias() += ma.transpose() * mgo;
                    }
                  }
                });
}

// ---- 1-D convolution (zero same-padding) ----

// x: (B, Cin, L), w: (Cout, Cin, K), bias: (Cout) -> (B, Cout, L).
// out[b,co,i] = bias[co] + sum_{ci,k} w[co,ci,k] * x[b,ci,i+k-pad], pad=(K-1)/2.
template <typename Scalar>
Tensor<Scalar> conv1d(const Tensor<Scalar>& x, const Tensor<Scalar>& w,
                      const Tensor<Scalar>& bias) {
  if (x.rank() != 3 || w.rank() != 3 || bias.rank() != 1)
    throw ShapeMismatch("conv1d: ranks " + shape_string(x.shape()) + ", " +
                        shape_string(w.shape()) + ", " + shape_string(bias.shape()));
  const Index B = x.shape()[0], Cin = x.shape()[1], L = x.shape()[2];
  const Index Cout = w.shape()[0], K = w.shape()[2];
  if (w.shape()[1] != Cin || bias.shape()[0] != Cout)
    throw ShapeMismatch("conv1d: x " + shape_string(x.shape()) + ", w " +
                        shape_string(w.shape()));
  const Index pad = (K - 1) / 2;
  Graph<Scalar>& g = *x.graph();

  typename Graph<Scalar>::Array out(B * Cout * L);
  const auto* xv = x.value().data();
  const auto* wv = w.value().data();
  for (Index b = 0; b < B; ++b)
    for (Index co = 0; co < Cout; ++co) {
      Eigen::Map<Eigen::Array<Scalar, Eigen::Dynamic, 1>> orow(
          out.data() + (b * Cout + co) * L, L);
      orow.setConstant(bias.value()[co]);
      for (Index ci = 0; ci < Cin; ++ci) {
        const auto* xrow = xv + (b * Cin + ci) * L;
        for (Index k = 0; k < K; ++k) {
          const Index shift = k - pad;
          const Index lo = std::max<Index>(0, -shift);
          const Index hi = std::min<Index>(L - 1, L - 1 - shift);
          if (lo > hi) continue;
          const Scalar wk = wv[(co * Cin + ci) * K + k];
          orow.segment(lo, hi - lo + 1) +=
              wk * Eigen::Map<const Eigen::Array<Scalar, Eigen::Dynamic, 1>>(
                       xrow + lo + shift, hi - lo + 1);
        }
      }
    }

  const int ix = x.id(), iw = w.id(), ib = bias.id();
  const bool rg = x.requires_grad() || w.requires_grad() || bias.requires_grad();
  return g.make({B, Cout, L}, std::move(out), rg,
                [ix, iw, ib, B, Cin, Cout, L, K, pad](Graph<Scalar>& g, int self) {
                  using AMap = Eigen::Map<Eigen::Array<Scalar, Eigen::Dynamic, 1>>;
                  using CAMap =
                      Eigen::Map<const Eigen::Array<Scalar, Eigen::Dynamic, 1>>;
                  const auto& go = g.grad(self);
                  const auto* wv = g.value(iw).data();
                  const auto* xv = g.value(ix).data();
                  for (Index b = 0; b < B; ++b)
                    for (Index co = 0; co < Cout; ++co) {
                      CAMap gorow(go.data() + (b * Cout + co) * L, L);
                      if (g.requires_grad(ib)) g.grad_buffer(ib)[co] += gorow.sum();
                      for (Index ci = 0; ci < Cin; ++ci)
                        for (Index k = 0; k < K; ++k) {
                          const Index shift = k - pad;
                          const Index lo = std::max<Index>(0, -shift);
                          const Index hi = std::min<Index>(L - 1, L - 1 - shift);
                          if (lo > hi) continue;
                          const Index len = hi - lo + 1;
                          if (g.requires_grad(ix)) {
                            AMap gxrow(g.grad_buffer(ix).data() + (b * Cin + ci) * L, L);
                            gxrow.segment(lo + shift, len) +=
                                wv[(co * Cin + ci) * K + k] * gorow.segment(lo, len);
                          }
                          if (g.requires_grad(iw)) {
                            CAMap xrow(xv + (b * Cin + ci) * L, L);
                            g.grad_buffer(iw)[(co * Cin + ci) * K + k] +=
                                (gorow.segment(lo, len) * xrow.segment(lo + shift, len))
                                    .sum();
                          }
                        }
                    }
                });
}

// ---- magnitude max pooling ----

// Selects, within each window, the element of maximum absolute value and
// returns it with its sign; earliest index wins ties. Padding positions are
// excluded from the selection. x: (B, C, L) -> (B, C, Lo).
template <typename Scalar>
Tensor<Scalar> magnitude_maxpool1d(const Tensor<Scalar>& x, Index window,
                                   Index stride) {
  if (x.rank() != 3)
    throw ShapeMismatch("magnitude_maxpool1d: rank " + shape_string(x.shape()));
  if (window < 1 || stride < 1)
    throw Error("magnitude_maxpool1d: window and stride must be >= 1");
  const Index B = x.shape()[0], C = x.shape()[1], L = x.shape()[2];
  const Index pad = (window - 1) / 2;
  const Index Lo = (L + 2 * pad - window) / stride + 1;
  if (Lo < 1) throw ShapeMismatch("magnitude_maxpool1d: empty output");
  Graph<Scalar>& g = *x.graph();

  typename Graph<Scalar>::Array out(B * C * Lo);
  auto sel = std::make_shared<std::vector<Index>>(B * C * Lo);
  const auto* xv = x.value().data();
  for (Index b = 0; b < B; ++b)
    for (Index c = 0; c < C; ++c) {
      const auto* row = xv + (b * C + c) * L;
      for (Index o = 0; o < Lo; ++o) {
        const Index start = o * stride - pad;
        const Index lo = std::max<Index>(0, start);
        const Index hi = std::min<Index>(L - 1, start + window - 1);
        Index best = lo;
        Scalar best_mag = std::abs(row[lo]);
        for (Index j = lo + 1; j <= hi; ++j) {
          const Scalar mag = std::abs(row[j]);
          if (mag > best_mag) {
            best_mag = mag;
            best = j;
          }
        }
        out[(b * C + c) * Lo + o] = row[best];
        (*sel)[(b * C + c) * Lo + o] = (b * C + c) * L + best;
      }
    }

  const int ix = x.id();
  return g.make({B, C, Lo}, std::move(out), x.requires_grad(),
                [ix, sel](Graph<Scalar>& g, int self) {
                  if (!g.requires_grad(ix)) return;
                  const auto& go = g.grad(self);
                  auto& gx = g.grad_buffer(ix);
                  for (Index i = 0; i < go.size(); ++i) gx[(*sel)[i]] += go[i];
                });
}

// ---- layer normalization over the last axis ----

template <typename Scalar>
Tensor<Scalar> layer_norm(const Tensor<Scalar>& x, const Tensor<Scalar>& gamma,
                          const Tensor<Scalar>& beta, Scalar eps) {
  if (x.rank() < 1 || gamma.rank() != 1 || beta.rank() != 1)
    throw ShapeMismatch("layer_norm: ranks " + shape_string(x.shape()));
  const Index D = x.shape().back();
  if (gamma.shape()[0] != D || beta.shape()[0] != D)
    throw ShapeMismatch("layer_norm: feature dim " + std::to_string(D) +
                        " vs gamma " + shape_string(gamma.shape()));
  if (!(eps > Scalar(0))) throw Error("layer_norm: eps must be > 0");
  const Index G = x.size() / D;
  Graph<Scalar>& g = *x.graph();

  typename Graph<Scalar>::Array out(x.size());
  auto xhat = std::make_shared<typename Graph<Scalar>::Array>(x.size());
  auto inv_std = std::make_shared<typename Graph<Scalar>::Array>(G);
  for (Index r = 0; r < G; ++r) {
    auto seg = x.value().segment(r * D, D);
    const Scalar mu = seg.mean();
    const Scalar var = (seg - mu).square().mean();
    const Scalar is = Scalar(1) / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    xhat->segment(r * D, D) = (seg - mu) * is;
    out.segment(r * D, D) = xhat->segment(r * D, D) * gamma.value() + beta.value();
  }

  const int ix = x.id(), ig = gamma.id(), ib = beta.id();
  const bool rg = x.requires_grad() || gamma.requires_grad() || beta.requires_grad();
  return g.make(x.shape(), std::move(out), rg,
                [ix, ig, ib, G, D, xhat, inv_std](Graph<Scalar>& g, int self) {
                  const auto& go = g.grad(self);
                  for (Index r = 0; r < G; ++r) {
                    auto gseg = go.segment(r * D, D);
                    auto xh = xhat->segment(r * D, D);
                    if (g.requires_grad(ig))
                      g.grad_buffer(ig) += gseg * xh;
                    if (g.requires_grad(ib)) g.grad_buffer(ib) += gseg;
                    if (g.requires_grad(ix)) {
                      // dL/dx = is/D * (D*dxhat - sum(dxhat) - xhat*sum(dxhat*xhat))
                      const auto dxhat = (gseg * g.value(ig)).eval();
                      const Scalar s1 = dxhat.sum();
                      const Scalar s2 = (dxhat * xh).sum();
                      g.grad_buffer(ix).segment(r * D, D) +=
                          (*inv_std)[r] / Scalar(D) *
                          (Scalar(D) * dxhat - s1 - xh * s2);
                    }
                  }
                });
}

// ---- softmax along an axis ----

template <typename Scalar>
Tensor<Scalar> softmax(const Tensor<Scalar>& x, int axis) {
  const int rank = static_cast<int>(x.rank());
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank)
    throw ShapeMismatch("softmax: axis " + std::to_string(axis) + " for shape " +
                        shape_string(x.shape()));
  const auto& s = x.shape();
  Index outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= s[i];
  for (int i = axis + 1; i < rank; ++i) inner *= s[i];
  const Index n = s[axis];
  Graph<Scalar>& g = *x.graph();

  typename Graph<Scalar>::Array out(x.size());
  const auto* xv = x.value().data();
  for (Index o = 0; o < outer; ++o)
    for (Index in = 0; in < inner; ++in) {
      Scalar mx = xv[(o * n) * inner + in];
      for (Index i = 1; i < n; ++i)
        mx = std::max(mx, xv[(o * n + i) * inner + in]);
      Scalar sum = 0;
      for (Index i = 0; i < n; ++i) {
        const Scalar e = std::exp(xv[(o * n + i) * inner + in] - mx);
        out[(o * n + i) * inner + in] = e;
        sum += e;
      }
      for (Index i = 0; i < n; ++i) out[(o * n + i) * inner + in] /= sum;
    }

  const int ix = x.id();
  return g.make(x.shape(), std::move(out), x.requires_grad(),
                [ix, outer, n, inner](Graph<Scalar>& g, int self) {
                  if (!g.requires_grad(ix)) return;
                  const auto& go = g.grad(self);
                  const auto& y = g.value(self);
                  auto& gx = g.grad_buffer(ix);
                  for (Index o = 0; o < outer; ++o)
                    for (Index in = 0; in < inner; ++in) {
                      Scalar dot = 0;
                      for (Index i = 0; i < n; ++i) {
                        const Index at = (o * n + i) * inner + in;
                        dot += go[at] * y[at];
                      }
                      for (Index i = 0; i < n; ++i) {
                        const Index at = (o * n + i) * inner + in;
                        gx[at] += y[at] * (go[at] - dot);
                      }
                    }
                });
}

// ---- shape ops ----

template <typename Scalar>
Tensor<Scalar> reshape(const Tensor<Scalar>& x, std::vector<Index> shape) {
  if (numel(shape) != x.size())
    throw ShapeMismatch("reshape: " + shape_string(x.shape()) + " -> " +
                        shape_string(shape));
  Graph<Scalar>& g = *x.graph();
  const int ix = x.id();
  return g.make(std::move(shape), x.value(), x.requires_grad(),
                [ix](Graph<Scalar>& g, int self) {
                  detail::accumulate(g, ix, g.grad(self));
                });
}

namespace detail {

// Visits (in_flat, out_flat) pairs of a permutation copy where
// out[i0,...,ir] = in at indices permuted by `perm` (out axis i draws from
// in axis perm[i]).
template <typename Visit>
void for_each_permuted(const std::vector<Index>& in_shape,
                       const std::vector<int>& perm, Visit&& visit) {
  const int rank = static_cast<int>(in_shape.size());
  std::vector<Index> in_strides(rank, 1);
  for (int i = rank - 2; i >= 0; --i)
    in_strides[i] = in_strides[i + 1] * in_shape[i + 1];
  std::vector<Index> out_shape(rank);
  for (int i = 0; i < rank; ++i) out_shape[i] = in_shape[perm[i]];

  std::vector<Index> idx(rank, 0);
  const Index total = numel(in_shape);
  for (Index out_flat = 0; out_flat < total; ++out_flat) {
    Index in_flat = 0;
    for (int i = 0; i < rank; ++i) in_flat += idx[i] * in_strides[perm[i]];
    visit(in_flat, out_flat);
    for (int i = rank - 1; i >= 0; --i) {
      if (++idx[i] < out_shape[i]) break;
      idx[i] = 0;
    }
  }
}

}  // namespace detail

// Axis permutation; out axis i takes in axis perm[i].
template <typename Scalar>
Tensor<Scalar> permute(const Tensor<Scalar>& x, std::vector<int> perm) {
  const int rank = static_cast<int>(x.rank());
  std::vector<bool> seen(rank, false);
  if (static_cast<int>(perm.size()) != rank)
    throw ShapeMismatch("permute: rank mismatch for " + shape_string(x.shape()));
  for (int p : perm) {
    if (p < 0 || p >= rank || seen[p]) throw Error("permute: invalid permutation");
    seen[p] = true;
  }
  Graph<Scalar>& g = *x.graph();
  const auto in_shape = x.shape();
  std::vector<Index> out_shape(rank);
  for (int i = 0; i < rank; ++i) out_shape[i] = in_shape[perm[i]];

  typename Graph<Scalar>::Array out(x.size());
  const auto& v = x.value();
  detail::for_each_permuted(in_shape, perm, [&](Index in_flat, Index out_flat) {
    out[out_flat] = v[in_flat];
  });
  const int ix = x.id();
  return g.make(std::move(out_shape), std::move(out), x.requires_grad(),
                [ix, in_shape, perm](Graph<Scalar>& g, int self) {
                  if (!g.requires_grad(ix)) return;
                  const auto& go = g.grad(self);
                  auto& gx = g.grad_buffer(ix);
                  detail::for_each_permuted(
                      in_shape, perm,
                      [&](Index in_flat, Index out_flat) { gx[in_flat] += go[out_flat]; });
                });
}

// Transpose of a 2-D tensor.
template <typename Scalar>
Tensor<Scalar> transpose(const Tensor<Scalar>& x) {
  if (x.rank() != 2)
    throw ShapeMismatch("transpose: rank " + shape_string(x.shape()));
  return permute(x, {1, 0});
}

template <typename Scalar>
Tensor<Scalar> concat(const std::vector<Tensor<Scalar>>& parts, int axis) {
  if (parts.empty()) throw Error("concat: no inputs");
  const int rank = static_cast<int>(parts[0].rank());
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank)
    throw ShapeMismatch("concat: axis " + std::to_string(axis));
  Graph<Scalar>& g = *parts[0].graph();

  std::vector<Index> out_shape = parts[0].shape();
  Index axis_total = 0;
  for (const auto& p : parts) {
    if (p.rank() != rank) throw ShapeMismatch("concat: rank mismatch");
    for (int i = 0; i < rank; ++i)
      if (i != axis && p.shape()[i] != out_shape[i])
        throw ShapeMismatch("concat: shapes " + shape_string(out_shape) + " vs " +
                            shape_string(p.shape()));
    axis_total += p.shape()[axis];
  }
  out_shape[axis] = axis_total;

  Index outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= out_shape[i];
  for (int i = axis + 1; i < rank; ++i) inner *= out_shape[i];

  typename Graph<Scalar>::Array out(numel(out_shape));
  std::vector<int> ids;
  std::vector<Index> axis_sizes;
  Index base = 0;
  bool rg = false;
  for (const auto& p : parts) {
    const Index np = p.shape()[axis];
    for (Index o = 0; o < outer; ++o)
      out.segment((o * axis_total + base) * inner, np * inner) =
          p.value().segment(o * np * inner, np * inner);
    ids.push_back(p.id());
    axis_sizes.push_back(np);
    base += np;
    rg = rg || p.requires_grad();
  }

  return g.make(std::move(out_shape), std::move(out), rg,
                [ids, axis_sizes, outer, inner, axis_total](Graph<Scalar>& g, int self) {
                  const auto& go = g.grad(self);
                  Index base = 0;
                  for (std::size_t p = 0; p < ids.size(); ++p) {
                    const Index np = axis_sizes[p];
                    if (g.requires_grad(ids[p])) {
                      auto& gp = g.grad_buffer(ids[p]);
                      for (Index o = 0; o < outer; ++o)
                        gp.segment(o * np * inner, np * inner) +=
                            go.segment((o * axis_total + base) * inner, np * inner);
                    }
                    base += np;
                  }
                });
}

// ---- patch extraction ----

// x: (B, R, L) -> (B, num_patches, R*P). Patch k of row r is
// x[b, r, k*S .. k*S+P-1] with indices past L-1 clamped to the last column
// (the repeat-right padding used by overlapping patching).
template <typename Scalar>
Tensor<Scalar> unfold1d(const Tensor<Scalar>& x, Index patch_len, Index stride,
                        Index num_patches) {
  if (x.rank() != 3)
    throw ShapeMismatch("unfold1d: rank " + shape_string(x.shape()));
  if (patch_len < 1 || stride < 1 || num_patches < 1)
    throw Error("unfold1d: patch_len, stride, num_patches must be >= 1");
  const Index B = x.shape()[0], R = x.shape()[1], L = x.shape()[2];
  if (patch_len > L)
    throw ShapeMismatch("unfold1d: patch " + std::to_string(patch_len) +
                        " longer than series " + std::to_string(L));
  Graph<Scalar>& g = *x.graph();

  typename Graph<Scalar>::Array out(B * num_patches * R * patch_len);
  const auto& v = x.value();
  for (Index b = 0; b < B; ++b)
    for (Index k = 0; k < num_patches; ++k)
      for (Index r = 0; r < R; ++r)
        for (Index p = 0; p < patch_len; ++p) {
          const Index col = std::min(k * stride + p, L - 1);
          out[((b * num_patches + k) * R + r) * patch_len + p] =
              v[(b * R + r) * L + col];
        }

  const int ix = x.id();
  return g.make({B, num_patches, R * patch_len}, std::move(out), x.requires_grad(),
                [ix, B, R, L, patch_len, stride, num_patches](Graph<Scalar>& g, int self) {
                  if (!g.requires_grad(ix)) return;
                  const auto& go = g.grad(self);
                  auto& gx = g.grad_buffer(ix);
                  for (Index b = 0; b < B; ++b)
                    for (Index k = 0; k < num_patches; ++k)
                      for (Index r = 0; r < R; ++r)
                        for (Index p = 0; p < patch_len; ++p) {
                          const Index col = std::min(k * stride + p, L - 1);
                          gx[(b * R + r) * L + col] +=
                              go[((b * num_patches + k) * R + r) * patch_len + p];
                        }
                });
}

// ---- reductions ----

template <typename Scalar>
Tensor<Scalar> mean(const Tensor<Scalar>& x) {
  Graph<Scalar>& g = *x.graph();
  const Index n = x.size();
  typename Graph<Scalar>::Array out(1);
  out[0] = x.value().sum() / Scalar(n);
  const int ix = x.id();
  return g.make({}, std::move(out), x.requires_grad(),
                [ix, n](Graph<Scalar>& g, int self) {
                  using Array = typename Graph<Scalar>::Array;
                  detail::accumulate(
                      g, ix,
                      Array::Constant(g.value(ix).size(), g.grad(self)[0] / Scalar(n)));
                });
}

template <typename Scalar>
Tensor<Scalar> mse_loss(const Tensor<Scalar>& prediction,
                        const Tensor<Scalar>& target) {
  detail::check_same_shape("mse_loss", prediction, target);
  auto diff = sub(prediction, target);
  return mean(mul(diff, diff));
}

}  // namespace timepfn
