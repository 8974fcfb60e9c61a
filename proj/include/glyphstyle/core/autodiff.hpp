#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "glyphstyle/core/tensor.hpp"

namespace glyphstyle {

// ---------------------------------------------------------------------------
// Reverse-mode autodiff over Tensor<T>. Define-by-run: every op builds a
// node holding its forward value and a closure that routes incoming gradient
// to its parents. backward() walks the graph once in reverse topological
// order. Stochasticity never lives inside ops; noise enters as explicit
// constant tensors.
// ---------------------------------------------------------------------------

template <class T>
struct Node;

template <class T>
using Var = std::shared_ptr<Node<T>>;

template <class T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;  // allocated on first accumulate
  bool requires_grad = false;
  bool has_grad = false;
  std::vector<Var<T>> parents;
  std::function<void(Node<T>&)> backward_fn;

  const std::vector<int>& shape() const { return value.shape(); }

  void accumulate(const Tensor<T>& g) {
    check(g.same_shape(value), "Node::accumulate: gradient shape mismatch");
    if (!has_grad) {
      grad = Tensor<T>(value.shape());
      has_grad = true;
    }
    T* dst = grad.data();
    const T* src = g.data();
    for (std::int64_t i = 0, n = g.size(); i < n; ++i) dst[i] += src[i];
  }

  void zero_grad() {
    if (has_grad) grad.fill(T(0));
  }
};

template <class T>
Var<T> make_leaf(Tensor<T> v, bool requires_grad) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(v);
  n->requires_grad = requires_grad;
  return n;
}

template <class T>
Var<T> constant(Tensor<T> v) {
  return make_leaf(std::move(v), false);
}

template <class T>
Var<T> make_node(Tensor<T> value, std::vector<Var<T>> parents,
                 std::function<void(Node<T>&)> backward_fn) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  n->parents = std::move(parents);
  for (const auto& p : n->parents) {
    if (p->requires_grad) {
      n->requires_grad = true;
      break;
    }
  }
  if (n->requires_grad) n->backward_fn = std::move(backward_fn);
  return n;
}

/// Runs reverse-mode accumulation from a scalar root. Grad buffers of leaf
/// nodes are *accumulated into*, not reset; call zero_grad between steps.
template <class T>
void backward(const Var<T>& root) {
  check(root->value.size() == 1, "backward: root must be scalar");
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  // Iterative post-order DFS over parents; `order` ends up topologically
  // sorted with parents before children.
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  stack.push_back({root.get(), 0});
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      Node<T>* p = node->parents[idx].get();
      ++idx;
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  root->accumulate(Tensor<T>::scalar(T(1)));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->has_grad && n->backward_fn) n->backward_fn(*n);
  }
}

// -------------------------------------------------------------------------
// Elementwise ops
// -------------------------------------------------------------------------

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  check(a->value.same_shape(b->value), "add: shape mismatch");
  Tensor<T> out = a->value;
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] += b->value[i];
  return make_node<T>(std::move(out), {a, b}, [](Node<T>& n) {
    if (n.parents[0]->requires_grad) n.parents[0]->accumulate(n.grad);
    if (n.parents[1]->requires_grad) n.parents[1]->accumulate(n.grad);
  });
}

template <class T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  check(a->value.same_shape(b->value), "sub: shape mismatch");
  Tensor<T> out = a->value;
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] -= b->value[i];
  return make_node<T>(std::move(out), {a, b}, [](Node<T>& n) {
    if (n.parents[0]->requires_grad) n.parents[0]->accumulate(n.grad);
    if (n.parents[1]->requires_grad) {
      Tensor<T> g = n.grad;
      for (std::int64_t i = 0; i < g.size(); ++i) g[i] = -g[i];
      n.parents[1]->accumulate(g);
    }
  });
}

template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  check(a->value.same_shape(b->value), "mul: shape mismatch");
  Tensor<T> out = a->value;
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] *= b->value[i];
  return make_node<T>(std::move(out), {a, b}, [](Node<T>& n) {
    if (n.parents[0]->requires_grad) {
      Tensor<T> g = n.grad;
      for (std::int64_t i = 0; i < g.size(); ++i) g[i] *= n.parents[1]->value[i];
      n.parents[0]->accumulate(g);
    }
    if (n.parents[1]->requires_grad) {
      Tensor<T> g = n.grad;
      for (std::int64_t i = 0; i < g.size(); ++i) g[i] *= n.parents[0]->value[i];
      n.parents[1]->accumulate(g);
    }
  });
}

template <class T>
Var<T> scale(const Var<T>& a, T c) {
  Tensor<T> out = a->value;
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] *= c;
  return make_node<T>(std::move(out), {a}, [c](Node<T>& n) {
    Tensor<T> g = n.grad;
    for (std::int64_t i = 0; i < g.size(); ++i) g[i] *= c;
    n.parents[0]->accumulate(g);
  });
}

template <class T>
Var<T> add_scalar(const Var<T>& a, T c) {
  Tensor<T> out = a->value;
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] += c;
  return make_node<T>(std::move(out), {a},
                      [](Node<T>& n) { n.parents[0]->accumulate(n.grad); });
}

template <class T>
Var<T> neg(const Var<T>& a) {
  return scale(a, T(-1));
}

template <class T>
Var<T> square(const Var<T>& a) {
  Tensor<T> out = a->value;
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] *= out[i];
  return make_node<T>(std::move(out), {a}, [](Node<T>& n) {
    Tensor<T> g = n.grad;
    for (std::int64_t i = 0; i < g.size(); ++i) g[i] *= T(2) * n.parents[0]->value[i];
    n.parents[0]->accumulate(g);
  });
}

template <class T>
Var<T> abs_val(const Var<T>& a) {
  Tensor<T> out = a->value;
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] = std::abs(out[i]);
  return make_node<T>(std::move(out), {a}, [](Node<T>& n) {
    Tensor<T> g = n.grad;
    for (std::int64_t i = 0; i < g.size(); ++i) {
      T x = n.parents[0]->value[i];
      g[i] *= (x > T(0)) ? T(1) : (x < T(0)) ? T(-1) : T(0);
    }
    n.parents[0]->accumulate(g);
  });
}

template <class T>
Var<T> log_val(const Var<T>& a) {
  Tensor<T> out = a->value;
  for (std::int64_t i = 0; i < out.size(); ++i) {
    check(out[i] > T(0), "log: requires strictly positive input");
    out[i] = std::log(out[i]);
  }
  return make_node<T>(std::move(out), {a}, [](Node<T>& n) {
    Tensor<T> g = n.grad;
    for (std::int64_t i = 0; i < g.size(); ++i) g[i] /= n.parents[0]->value[i];
    n.parents[0]->accumulate(g);
  });
}

template <class T>
Var<T> relu(const Var<T>& a) {
  Tensor<T> out = a->value;
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] = out[i] > T(0) ? out[i] : T(0);
  return make_node<T>(std::move(out), {a}, [](Node<T>& n) {
    Tensor<T> g = n.grad;
    for (std::int64_t i = 0; i < g.size(); ++i)
      if (n.parents[0]->value[i] <= T(0)) g[i] = T(0);
    n.parents[0]->accumulate(g);
  });
}

template <class T>
Var<T> leaky_relu(const Var<T>& a, T slope) {
  Tensor<T> out = a->value;
  for (std::int64_t i = 0; i < out.size(); ++i)
    out[i] = out[i] > T(0) ? out[i] : slope * out[i];
  return make_node<T>(std::move(out), {a}, [slope](Node<T>& n) {
    Tensor<T> g = n.grad;
    for (std::int64_t i = 0; i < g.size(); ++i)
      if (n.parents[0]->value[i] <= T(0)) g[i] *= slope;
    n.parents[0]->accumulate(g);
  });
}

template <class T>
Var<T> tanh_act(const Var<T>& a) {
  Tensor<T> out = a->value;
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] = std::tanh(out[i]);
  return make_node<T>(std::move(out), {a}, [](Node<T>& n) {
    Tensor<T> g = n.grad;
    for (std::int64_t i = 0; i < g.size(); ++i) {
      T y = n.value[i];
      g[i] *= (T(1) - y * y);
    }
    n.parents[0]->accumulate(g);
  });
}

namespace detail {
template <class T>
inline T softplus_scalar(T x) {
  // log(1+e^x) without overflow for large |x|
  return std::max(x, T(0)) + std::log1p(std::exp(-std::abs(x)));
}
template <class T>
inline T sigmoid_scalar(T x) {
  if (x >= T(0)) {
    T e = std::exp(-x);
    return T(1) / (T(1) + e);
  }
  T e = std::exp(x);
  return e / (T(1) + e);
}
}  // namespace detail

template <class T>
Var<T> softplus(const Var<T>& a) {
  Tensor<T> out = a->value;
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] = detail::softplus_scalar(out[i]);
  return make_node<T>(std::move(out), {a}, [](Node<T>& n) {
    Tensor<T> g = n.grad;
    for (std::int64_t i = 0; i < g.size(); ++i)
      g[i] *= detail::sigmoid_scalar(n.parents[0]->value[i]);
    n.parents[0]->accumulate(g);
  });
}

// -------------------------------------------------------------------------
// Reductions and structure ops
// -------------------------------------------------------------------------

template <class T>
Var<T> sum_all(const Var<T>& a) {
  T s = T(0);
  for (std::int64_t i = 0; i < a->value.size(); ++i) s += a->value[i];
  return make_node<T>(Tensor<T>::scalar(s), {a}, [](Node<T>& n) {
    Tensor<T> g(n.parents[0]->value.shape(), n.grad[0]);
    n.parents[0]->accumulate(g);
  });
}

template <class T>
Var<T> mean_all(const Var<T>& a) {
  return scale(sum_all(a), T(1) / static_cast<T>(a->value.size()));
}

template <class T>
Var<T> reshape(const Var<T>& a, std::vector<int> shape) {
  Tensor<T> out = a->value.reshaped(std::move(shape));
  return make_node<T>(std::move(out), {a}, [](Node<T>& n) {
    n.parents[0]->accumulate(n.grad.reshaped(n.parents[0]->value.shape()));
  });
}

/// Cuts the graph: result has the same value but no gradient path.
template <class T>
Var<T> detach(const Var<T>& a) {
  return constant(a->value);
}

/// Concatenate two NCHW tensors along the channel axis.
template <class T>
Var<T> concat_channels(const Var<T>& a, const Var<T>& b) {
  check(a->value.rank() == 4 && b->value.rank() == 4, "concat_channels: rank-4 inputs required");
  const auto& sa = a->value.shape();
  const auto& sb = b->value.shape();
  check(sa[0] == sb[0] && sa[2] == sb[2] && sa[3] == sb[3],
        "concat_channels: N/H/W mismatch " + Tensor<T>::shape_str(sa) + " vs " +
            Tensor<T>::shape_str(sb));
  const int n = sa[0], ca = sa[1], cb = sb[1], h = sa[2], w = sa[3];
  const std::int64_t hw = static_cast<std::int64_t>(h) * w;
  Tensor<T> out({n, ca + cb, h, w});
  for (int i = 0; i < n; ++i) {
    std::copy_n(a->value.data() + i * ca * hw, ca * hw, out.data() + i * (ca + cb) * hw);
    std::copy_n(b->value.data() + i * cb * hw, cb * hw,
                out.data() + i * (ca + cb) * hw + ca * hw);
  }
  return make_node<T>(std::move(out), {a, b}, [n, ca, cb, hw](Node<T>& n_) {
    if (n_.parents[0]->requires_grad) {
      Tensor<T> ga(n_.parents[0]->value.shape());
      for (int i = 0; i < n; ++i)
        std::copy_n(n_.grad.data() + i * (ca + cb) * hw, ca * hw, ga.data() + i * ca * hw);
      n_.parents[0]->accumulate(ga);
    }
    if (n_.parents[1]->requires_grad) {
      Tensor<T> gb(n_.parents[1]->value.shape());
      for (int i = 0; i < n; ++i)
        std::copy_n(n_.grad.data() + i * (ca + cb) * hw + ca * hw, cb * hw,
                    gb.data() + i * cb * hw);
      n_.parents[1]->accumulate(gb);
    }
  });
}

/// Broadcast a [N,D] matrix of vectors to a [N,D,h,w] feature map.
template <class T>
Var<T> tile_spatial(const Var<T>& z, int h, int w) {
  check(z->value.rank() == 2, "tile_spatial: rank-2 input required");
  const int n = z->value.dim(0), d = z->value.dim(1);
  Tensor<T> out({n, d, h, w});
  const std::int64_t hw = static_cast<std::int64_t>(h) * w;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) {
      T v = z->value[i * d + j];
      T* dst = out.data() + (i * d + j) * hw;
      std::fill_n(dst, hw, v);
    }
  return make_node<T>(std::move(out), {z}, [n, d, hw](Node<T>& n_) {
    Tensor<T> gz({n, d});
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < d; ++j) {
        const T* src = n_.grad.data() + (i * d + j) * hw;
        T s = T(0);
        for (std::int64_t k = 0; k < hw; ++k) s += src[k];
        gz[i * d + j] = s;
      }
    n_.parents[0]->accumulate(gz);
  });
}

/// Column slice of a [N,D] matrix: columns [off, off+len).
template <class T>
Var<T> slice_cols(const Var<T>& a, int off, int len) {
  check(a->value.rank() == 2, "slice_cols: rank-2 input required");
  const int n = a->value.dim(0), d = a->value.dim(1);
  check(off >= 0 && len > 0 && off + len <= d, "slice_cols: out of range");
  Tensor<T> out({n, len});
  for (int i = 0; i < n; ++i)
    std::copy_n(a->value.data() + i * d + off, len, out.data() + i * len);
  return make_node<T>(std::move(out), {a}, [n, d, off, len](Node<T>& n_) {
    Tensor<T> g({n, d});
    for (int i = 0; i < n; ++i)
      std::copy_n(n_.grad.data() + i * len, len, g.data() + i * d + off);
    n_.parents[0]->accumulate(g);
  });
}

// -------------------------------------------------------------------------
// Linear algebra ops (Eigen-backed)
// -------------------------------------------------------------------------

namespace detail {
template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatMap = Eigen::Map<RowMat<T>>;
template <class T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;
template <class T>
using VecMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>;
template <class T>
using ConstVecMap = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>;
}  // namespace detail

/// y = x W^T + b with x:[N,Din], W:[Dout,Din], b:[Dout].
template <class T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
  check(x->value.rank() == 2 && w->value.rank() == 2 && b->value.rank() == 1,
        "linear: bad ranks");
  const int n = x->value.dim(0), din = x->value.dim(1), dout = w->value.dim(0);
  check(w->value.dim(1) == din, "linear: weight/input dim mismatch");
  check(b->value.dim(0) == dout, "linear: bias dim mismatch");
  Tensor<T> out({n, dout});
  {
    detail::ConstMatMap<T> X(x->value.data(), n, din);
    detail::ConstMatMap<T> W(w->value.data(), dout, din);
    detail::ConstVecMap<T> B(b->value.data(), dout);
    detail::MatMap<T> Y(out.data(), n, dout);
    Y.noalias() = X * W.transpose();
    Y.rowwise() += B.transpose();
  }
  return make_node<T>(std::move(out), {x, w, b}, [n, din, dout](Node<T>& nd) {
    detail::ConstMatMap<T> G(nd.grad.data(), n, dout);
    detail::ConstMatMap<T> X(nd.parents[0]->value.data(), n, din);
    detail::ConstMatMap<T> W(nd.parents[1]->value.data(), dout, din);
    if (nd.parents[0]->requires_grad) {
      Tensor<T> gx({n, din});
      detail::MatMap<T>(gx.data(), n, din).noalias() = G * W;
      nd.parents[0]->accumulate(gx);
    }
    if (nd.parents[1]->requires_grad) {
      Tensor<T> gw({dout, din});
      detail::MatMap<T>(gw.data(), dout, din).noalias() = G.transpose() * X;
      nd.parents[1]->accumulate(gw);
    }
    if (nd.parents[2]->requires_grad) {
      Tensor<T> gb({dout});
      detail::VecMap<T>(gb.data(), dout) = G.colwise().sum().transpose();
      nd.parents[2]->accumulate(gb);
    }
  });
}

// -------------------------------------------------------------------------
// Convolutions. Geometry describes a forward convolution mapping a
// (C,H,W) source to a (*,Ho,Wo) grid; transposed convolution reuses the
// same mapping with source and destination roles swapped.
// -------------------------------------------------------------------------

namespace detail {

struct ConvGeom {
  int c, h, w;       // source feature map
  int k, stride, pad;
  int ho, wo;        // destination grid

  static ConvGeom forward(int c, int h, int w, int k, int stride, int pad) {
    ConvGeom g{c, h, w, k, stride, pad, 0, 0};
    g.ho = (h + 2 * pad - k) / stride + 1;
    g.wo = (w + 2 * pad - k) / stride + 1;
    check(g.ho > 0 && g.wo > 0, "conv: output would be empty");
    check((h + 2 * pad - k) % stride == 0 && (w + 2 * pad - k) % stride == 0,
          "conv: size/stride mismatch");
    return g;
  }
};

/// Writes one sample's patch matrix into a batch-wide column buffer: row r
/// of the conceptual (C*k*k, Ho*Wo) matrix lands at dst + r*rowstride, so a
/// caller can pack N samples side by side (rowstride = N*Ho*Wo).
template <class T>
void im2col_strided(const T* src, const ConvGeom& g, T* dst, std::int64_t rowstride) {
  for (int c = 0; c < g.c; ++c) {
    for (int u = 0; u < g.k; ++u) {
      for (int v = 0; v < g.k; ++v) {
        T* row = dst + ((static_cast<std::int64_t>(c) * g.k + u) * g.k + v) * rowstride;
        for (int oh = 0; oh < g.ho; ++oh) {
          const int ih = oh * g.stride - g.pad + u;
          if (ih < 0 || ih >= g.h) {
            std::fill_n(row + static_cast<std::int64_t>(oh) * g.wo, g.wo, T(0));
            continue;
          }
          const T* srow = src + (static_cast<std::int64_t>(c) * g.h + ih) * g.w;
          T* drow = row + static_cast<std::int64_t>(oh) * g.wo;
          for (int ow = 0; ow < g.wo; ++ow) {
            const int iw = ow * g.stride - g.pad + v;
            drow[ow] = (iw >= 0 && iw < g.w) ? srow[iw] : T(0);
          }
        }
      }
    }
  }
}

/// Adjoint of im2col_strided: scatter-add one sample's columns back into its
/// (C,H,W) map.
template <class T>
void col2im_add_strided(const T* src, std::int64_t rowstride, const ConvGeom& g, T* dst) {
  for (int c = 0; c < g.c; ++c) {
    for (int u = 0; u < g.k; ++u) {
      for (int v = 0; v < g.k; ++v) {
        const T* row = src + ((static_cast<std::int64_t>(c) * g.k + u) * g.k + v) * rowstride;
        for (int oh = 0; oh < g.ho; ++oh) {
          const int ih = oh * g.stride - g.pad + u;
          if (ih < 0 || ih >= g.h) continue;
          T* drow = dst + (static_cast<std::int64_t>(c) * g.h + ih) * g.w;
          const T* srow = row + static_cast<std::int64_t>(oh) * g.wo;
          for (int ow = 0; ow < g.wo; ++ow) {
            const int iw = ow * g.stride - g.pad + v;
            if (iw >= 0 && iw < g.w) drow[iw] += srow[ow];
          }
        }
      }
    }
  }
}

}  // namespace detail

/// 2-d convolution: x:[N,Cin,H,W], w:[Cout,Cin,k,k], b:[Cout].
template <class T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& b, int stride, int pad) {
  check(x->value.rank() == 4 && w->value.rank() == 4 && b->value.rank() == 1,
        "conv2d: bad ranks");
  const int n = x->value.dim(0), cin = x->value.dim(1), h = x->value.dim(2),
            wd = x->value.dim(3);
  const int cout = w->value.dim(0), k = w->value.dim(2);
  check(w->value.dim(1) == cin, "conv2d: channel mismatch (input " +
                                    std::to_string(cin) + ", weight expects " +
                                    std::to_string(w->value.dim(1)) + ")");
  check(w->value.dim(3) == k, "conv2d: non-square kernel");
  check(b->value.dim(0) == cout, "conv2d: bias size mismatch");
  const auto geom = detail::ConvGeom::forward(cin, h, wd, k, stride, pad);
  const std::int64_t l = static_cast<std::int64_t>(geom.ho) * geom.wo;
  const std::int64_t ck2 = static_cast<std::int64_t>(cin) * k * k;

  // One GEMM over the whole batch (columns grouped sample-major) so the
  // weight matrix streams from memory once per call instead of once per
  // sample; the deep low-resolution layers are weight-bound.
  Tensor<T> out({n, cout, geom.ho, geom.wo});
  {
    std::vector<T> col(static_cast<std::size_t>(ck2 * n * l));
    for (int i = 0; i < n; ++i)
      detail::im2col_strided(x->value.data() + static_cast<std::int64_t>(i) * cin * h * wd,
                             geom, col.data() + static_cast<std::int64_t>(i) * l, n * l);
    detail::ConstMatMap<T> W(w->value.data(), cout, ck2);
    detail::ConstVecMap<T> B(b->value.data(), cout);
    std::vector<T> ybuf(static_cast<std::size_t>(cout * n * l));
    detail::MatMap<T> Y(ybuf.data(), cout, n * l);
    Y.noalias() = W * detail::ConstMatMap<T>(col.data(), ck2, n * l);
    Y.colwise() += B;
    for (int i = 0; i < n; ++i)
      for (int co = 0; co < cout; ++co)
        std::copy_n(ybuf.data() + (static_cast<std::int64_t>(co) * n + i) * l, l,
                    out.data() + (static_cast<std::int64_t>(i) * cout + co) * l);
  }
  return make_node<T>(std::move(out), {x, w, b}, [n, cin, h, wd, cout, k, geom, l,
                                                  ck2](Node<T>& nd) {
    const bool need_x = nd.parents[0]->requires_grad;
    const bool need_w = nd.parents[1]->requires_grad;
    const bool need_b = nd.parents[2]->requires_grad;
    Tensor<T> gx, gw, gb;
    if (need_x) gx = Tensor<T>(nd.parents[0]->value.shape());
    if (need_w) gw = Tensor<T>(nd.parents[1]->value.shape());
    if (need_b) gb = Tensor<T>({cout});
    // gradient columns in the same sample-major grouping
    std::vector<T> gbuf(static_cast<std::size_t>(cout * n * l));
    for (int i = 0; i < n; ++i)
      for (int co = 0; co < cout; ++co)
        std::copy_n(nd.grad.data() + (static_cast<std::int64_t>(i) * cout + co) * l, l,
                    gbuf.data() + (static_cast<std::int64_t>(co) * n + i) * l);
    detail::ConstMatMap<T> G(gbuf.data(), cout, n * l);
    detail::ConstMatMap<T> W(nd.parents[1]->value.data(), cout, ck2);
    std::vector<T> col;
    if (need_w || need_x) {
      col.resize(static_cast<std::size_t>(ck2 * n * l));
      for (int i = 0; i < n; ++i)
        detail::im2col_strided(
            nd.parents[0]->value.data() + static_cast<std::int64_t>(i) * cin * h * wd, geom,
            col.data() + static_cast<std::int64_t>(i) * l, n * l);
    }
    if (need_w) {
      detail::MatMap<T>(gw.data(), cout, ck2).noalias() =
          G * detail::ConstMatMap<T>(col.data(), ck2, n * l).transpose();
    }
    if (need_b) detail::VecMap<T>(gb.data(), cout) = G.rowwise().sum();
    if (need_x) {
      std::vector<T> dcol(static_cast<std::size_t>(ck2 * n * l));
      detail::MatMap<T>(dcol.data(), ck2, n * l).noalias() = W.transpose() * G;
      for (int i = 0; i < n; ++i)
        detail::col2im_add_strided(dcol.data() + static_cast<std::int64_t>(i) * l, n * l,
                                   geom,
                                   gx.data() + static_cast<std::int64_t>(i) * cin * h * wd);
    }
    if (need_x) nd.parents[0]->accumulate(gx);
    if (need_w) nd.parents[1]->accumulate(gw);
    if (need_b) nd.parents[2]->accumulate(gb);
  });
}

/// Transposed 2-d convolution: x:[N,Cin,H,W], w:[Cin,Cout,k,k], b:[Cout].
/// Output is ((H-1)*stride - 2*pad + k) square.
template <class T>
Var<T> conv_transpose2d(const Var<T>& x, const Var<T>& w, const Var<T>& b, int stride,
                        int pad) {
  check(x->value.rank() == 4 && w->value.rank() == 4 && b->value.rank() == 1,
        "conv_transpose2d: bad ranks");
  const int n = x->value.dim(0), cin = x->value.dim(1), h = x->value.dim(2),
            wd = x->value.dim(3);
  check(w->value.dim(0) == cin, "conv_transpose2d: channel mismatch");
  const int cout = w->value.dim(1), k = w->value.dim(2);
  check(w->value.dim(3) == k, "conv_transpose2d: non-square kernel");
  check(b->value.dim(0) == cout, "conv_transpose2d: bias size mismatch");
  const int hout = (h - 1) * stride - 2 * pad + k;
  const int wout = (wd - 1) * stride - 2 * pad + k;
  check(hout > 0 && wout > 0, "conv_transpose2d: output would be empty");
  // Forward conv geometry from the *output* map back onto the input grid.
  const auto geom = detail::ConvGeom::forward(cout, hout, wout, k, stride, pad);
  check(geom.ho == h && geom.wo == wd, "conv_transpose2d: geometry mismatch");
  const std::int64_t lin = static_cast<std::int64_t>(h) * wd;
  const std::int64_t ck2 = static_cast<std::int64_t>(cout) * k * k;
  const std::int64_t osz = static_cast<std::int64_t>(cout) * hout * wout;

  Tensor<T> out({n, cout, hout, wout});
  {
    // pack x as [Cin, N*Lin] sample-major so the whole batch is one GEMM
    std::vector<T> xbuf(static_cast<std::size_t>(cin * n * lin));
    for (int i = 0; i < n; ++i)
      for (int c = 0; c < cin; ++c)
        std::copy_n(x->value.data() + (static_cast<std::int64_t>(i) * cin + c) * lin, lin,
                    xbuf.data() + (static_cast<std::int64_t>(c) * n + i) * lin);
    std::vector<T> tmp(static_cast<std::size_t>(ck2 * n * lin));
    detail::ConstMatMap<T> W(w->value.data(), cin, ck2);
    detail::MatMap<T>(tmp.data(), ck2, n * lin).noalias() =
        W.transpose() * detail::ConstMatMap<T>(xbuf.data(), cin, n * lin);
    for (int i = 0; i < n; ++i) {
      T* dst = out.data() + static_cast<std::int64_t>(i) * osz;
      detail::col2im_add_strided(tmp.data() + static_cast<std::int64_t>(i) * lin, n * lin,
                                 geom, dst);
      for (int c = 0; c < cout; ++c) {
        T bias = b->value[c];
        T* p = dst + static_cast<std::int64_t>(c) * hout * wout;
        for (std::int64_t j = 0; j < static_cast<std::int64_t>(hout) * wout; ++j)
          p[j] += bias;
      }
    }
  }
  return make_node<T>(std::move(out), {x, w, b}, [n, cin, cout, hout, wout, geom, lin, ck2,
                                                  osz](Node<T>& nd) {
    const bool need_x = nd.parents[0]->requires_grad;
    const bool need_w = nd.parents[1]->requires_grad;
    const bool need_b = nd.parents[2]->requires_grad;
    Tensor<T> gx, gw, gb;
    if (need_x) gx = Tensor<T>(nd.parents[0]->value.shape());
    if (need_w) gw = Tensor<T>(nd.parents[1]->value.shape());
    if (need_b) gb = Tensor<T>({cout});
    std::vector<T> dcol(static_cast<std::size_t>(ck2 * n * lin));
    for (int i = 0; i < n; ++i)
      detail::im2col_strided(nd.grad.data() + static_cast<std::int64_t>(i) * osz, geom,
                             dcol.data() + static_cast<std::int64_t>(i) * lin, n * lin);
    detail::ConstMatMap<T> DCOL(dcol.data(), ck2, n * lin);
    detail::ConstMatMap<T> W(nd.parents[1]->value.data(), cin, ck2);
    if (need_x) {
      std::vector<T> gxbuf(static_cast<std::size_t>(cin * n * lin));
      detail::MatMap<T>(gxbuf.data(), cin, n * lin).noalias() = W * DCOL;
      for (int i = 0; i < n; ++i)
        for (int c = 0; c < cin; ++c)
          std::copy_n(gxbuf.data() + (static_cast<std::int64_t>(c) * n + i) * lin, lin,
                      gx.data() + (static_cast<std::int64_t>(i) * cin + c) * lin);
    }
    if (need_w) {
      std::vector<T> xbuf(static_cast<std::size_t>(cin * n * lin));
      for (int i = 0; i < n; ++i)
        for (int c = 0; c < cin; ++c)
          std::copy_n(
              nd.parents[0]->value.data() + (static_cast<std::int64_t>(i) * cin + c) * lin,
              lin, xbuf.data() + (static_cast<std::int64_t>(c) * n + i) * lin);
      detail::MatMap<T>(gw.data(), cin, ck2).noalias() =
          detail::ConstMatMap<T>(xbuf.data(), cin, n * lin) * DCOL.transpose();
    }
    if (need_b) {
      for (int i = 0; i < n; ++i) {
        const T* gy = nd.grad.data() + static_cast<std::int64_t>(i) * osz;
        for (int c = 0; c < cout; ++c) {
          const T* p = gy + static_cast<std::int64_t>(c) * hout * wout;
          T s = T(0);
          for (std::int64_t j = 0; j < static_cast<std::int64_t>(hout) * wout; ++j)
            s += p[j];
          gb[c] += s;
        }
      }
    }
    if (need_x) nd.parents[0]->accumulate(gx);
    if (need_w) nd.parents[1]->accumulate(gw);
    if (need_b) nd.parents[2]->accumulate(gb);
  });
}

/// Instance normalization over spatial dims with affine parameters.
/// x:[N,C,H,W], gain:[C], bias:[C].
template <class T>
Var<T> instance_norm(const Var<T>& x, const Var<T>& gain, const Var<T>& bias,
                     T eps = T(1e-5)) {
  check(x->value.rank() == 4, "instance_norm: rank-4 input required");
  const int n = x->value.dim(0), c = x->value.dim(1), h = x->value.dim(2),
            w = x->value.dim(3);
  check(gain->value.dim(0) == c && bias->value.dim(0) == c,
        "instance_norm: affine size mismatch");
  const std::int64_t m = static_cast<std::int64_t>(h) * w;
  Tensor<T> out({n, c, h, w});
  auto stats = std::make_shared<std::vector<T>>(static_cast<std::size_t>(n) * c * 2);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < c; ++j) {
      const T* src = x->value.data() + (static_cast<std::int64_t>(i) * c + j) * m;
      T mu = T(0);
      for (std::int64_t t = 0; t < m; ++t) mu += src[t];
      mu /= static_cast<T>(m);
      T var = T(0);
      for (std::int64_t t = 0; t < m; ++t) {
        T d = src[t] - mu;
        var += d * d;
      }
      var /= static_cast<T>(m);
      T rstd = T(1) / std::sqrt(var + eps);
      (*stats)[(static_cast<std::size_t>(i) * c + j) * 2] = mu;
      (*stats)[(static_cast<std::size_t>(i) * c + j) * 2 + 1] = rstd;
      T g = gain->value[j], bb = bias->value[j];
      T* dst = out.data() + (static_cast<std::int64_t>(i) * c + j) * m;
      for (std::int64_t t = 0; t < m; ++t) dst[t] = g * (src[t] - mu) * rstd + bb;
    }
  }
  return make_node<T>(std::move(out), {x, gain, bias}, [n, c, m, stats](Node<T>& nd) {
    const bool need_x = nd.parents[0]->requires_grad;
    const bool need_g = nd.parents[1]->requires_grad;
    const bool need_b = nd.parents[2]->requires_grad;
    Tensor<T> gx, gg, gb;
    if (need_x) gx = Tensor<T>(nd.parents[0]->value.shape());
    if (need_g) gg = Tensor<T>(nd.parents[1]->value.shape());
    if (need_b) gb = Tensor<T>(nd.parents[2]->value.shape());
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < c; ++j) {
        const std::int64_t base = (static_cast<std::int64_t>(i) * c + j) * m;
        const T* src = nd.parents[0]->value.data() + base;
        const T* gy = nd.grad.data() + base;
        const T mu = (*stats)[(static_cast<std::size_t>(i) * c + j) * 2];
        const T rstd = (*stats)[(static_cast<std::size_t>(i) * c + j) * 2 + 1];
        const T g = nd.parents[1]->value[j];
        T sum_gy = T(0), sum_gy_xhat = T(0);
        for (std::int64_t t = 0; t < m; ++t) {
          T xhat = (src[t] - mu) * rstd;
          sum_gy += gy[t];
          sum_gy_xhat += gy[t] * xhat;
        }
        if (need_b) gb[j] += sum_gy;
        if (need_g) gg[j] += sum_gy_xhat;
        if (need_x) {
          T* dst = gx.data() + base;
          const T inv_m = T(1) / static_cast<T>(m);
          for (std::int64_t t = 0; t < m; ++t) {
            T xhat = (src[t] - mu) * rstd;
            dst[t] = g * rstd * (gy[t] - sum_gy * inv_m - xhat * sum_gy_xhat * inv_m);
          }
        }
      }
    }
    if (need_x) nd.parents[0]->accumulate(gx);
    if (need_g) nd.parents[1]->accumulate(gg);
    if (need_b) nd.parents[2]->accumulate(gb);
  });
}

/// Mean softmax cross-entropy over a batch of logits [N,K] with integer labels.
template <class T>
Var<T> softmax_cross_entropy(const Var<T>& logits, const std::vector<int>& labels) {
  check(logits->value.rank() == 2, "softmax_cross_entropy: rank-2 logits required");
  const int n = logits->value.dim(0), k = logits->value.dim(1);
  check(static_cast<int>(labels.size()) == n, "softmax_cross_entropy: label count mismatch");
  T loss = T(0);
  for (int i = 0; i < n; ++i) {
    check(labels[i] >= 0 && labels[i] < k, "softmax_cross_entropy: label out of range");
    const T* row = logits->value.data() + static_cast<std::int64_t>(i) * k;
    T mx = row[0];
    for (int j = 1; j < k; ++j) mx = std::max(mx, row[j]);
    T lse = T(0);
    for (int j = 0; j < k; ++j) lse += std::exp(row[j] - mx);
    lse = mx + std::log(lse);
    loss += lse - row[labels[i]];
  }
  loss /= static_cast<T>(n);
  return make_node<T>(Tensor<T>::scalar(loss), {logits}, [n, k, labels](Node<T>& nd) {
    Tensor<T> g({n, k});
    const T scale = nd.grad[0] / static_cast<T>(n);
    for (int i = 0; i < n; ++i) {
      const T* row = nd.parents[0]->value.data() + static_cast<std::int64_t>(i) * k;
      T* grow = g.data() + static_cast<std::int64_t>(i) * k;
      T mx = row[0];
      for (int j = 1; j < k; ++j) mx = std::max(mx, row[j]);
      T denom = T(0);
      for (int j = 0; j < k; ++j) denom += std::exp(row[j] - mx);
      for (int j = 0; j < k; ++j) grow[j] = std::exp(row[j] - mx) / denom * scale;
      grow[labels[i]] -= scale;
    }
    nd.parents[0]->accumulate(g);
  });
}

// Operator sugar (found via ADL on Node<T>).
template <class T>
Var<T> operator+(const Var<T>& a, const Var<T>& b) {
  return add(a, b);
}
template <class T>
Var<T> operator-(const Var<T>& a, const Var<T>& b) {
  return sub(a, b);
}
template <class T>
Var<T> operator*(const Var<T>& a, const Var<T>& b) {
  return mul(a, b);
}
template <class T>
Var<T> operator*(T c, const Var<T>& a) {
  return scale(a, c);
}

}  // namespace glyphstyle
