#include "wmmoe/nd/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace wmmoe::nd {

namespace {

template <typename T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapC = Eigen::Map<const MatR<T>>;
template <typename T>
using MapM = Eigen::Map<MatR<T>>;

// C[m x n] (+)= op(A) op(B). A is stored [m x k] (or [k x m] when ta), B is
// stored [k x n] (or [n x k] when tb).
template <typename T>
void gemm(bool ta, bool tb, Index m, Index n, Index k, const T* A, const T* B, T* C,
          bool accumulate) {
  MapM<T> c(C, m, n);
  MapC<T> a(A, ta ? k : m, ta ? m : k);
  MapC<T> b(B, tb ? n : k, tb ? k : n);
  if (!accumulate) c.setZero();
  if (!ta && !tb) c.noalias() += a * b;
  else if (ta && !tb) c.noalias() += a.transpose() * b;
  else if (!ta && tb) c.noalias() += a * b.transpose();
  else c.noalias() += a.transpose() * b.transpose();
}

// Maps an output flat index to an operand flat index under broadcasting.
struct IndexMap {
  enum Mode { kIdentity, kModulo, kTable } mode = kIdentity;
  Index modulo = 1;
  std::vector<Index> table;

  Index operator()(Index i) const {
    switch (mode) {
      case kIdentity: return i;
      case kModulo: return i % modulo;
      default: return table[static_cast<std::size_t>(i)];
    }
  }
};

IndexMap make_index_map(const Shape& in, const Shape& out) {
  IndexMap map;
  if (in == out) return map;
  const Index n_in = numel(in);
  const Index n_out = numel(out);
  // Suffix pattern: `in` (minus leading ones) equals the trailing dims of `out`.
  {
    std::size_t lead = 0;
    while (lead < in.size() && in[lead] == 1) ++lead;
    const std::size_t rest = in.size() - lead;
    bool suffix = rest <= out.size();
    for (std::size_t i = 0; suffix && i < rest; ++i) {
      suffix = in[lead + i] == out[out.size() - rest + i];
    }
    if (suffix) {
      map.mode = IndexMap::kModulo;
      map.modulo = n_in;
      return map;
    }
  }
  map.mode = IndexMap::kTable;
  map.table.resize(static_cast<std::size_t>(n_out));
  const std::size_t r = out.size();
  std::vector<Index> in_stride(r, 0);
  {
    Index s = 1;
    for (std::size_t i = 0; i < in.size(); ++i) {
      const std::size_t ai = in.size() - 1 - i;
      const std::size_t oi = r - 1 - i;
      in_stride[oi] = in[ai] == 1 ? 0 : s;
      s *= in[ai];
    }
  }
  std::vector<Index> counter(r, 0);
  Index off = 0;
  for (Index i = 0; i < n_out; ++i) {
    map.table[static_cast<std::size_t>(i)] = off;
    for (std::size_t d = r; d-- > 0;) {
      ++counter[d];
      off += in_stride[d];
      if (counter[d] < out[d]) break;
      off -= in_stride[d] * out[d];
      counter[d] = 0;
    }
  }
  return map;
}

// Calls fn(i, j, k) for every output index i with input indices j = ma(i),
// k = mb(i); the common identity/suffix cases avoid per-element dispatch.
template <typename Fn>
void visit_pairs(Index n, const IndexMap& ma, const IndexMap& mb, Fn&& fn) {
  using M = IndexMap;
  if (ma.mode == M::kIdentity && mb.mode == M::kIdentity) {
    for (Index i = 0; i < n; ++i) fn(i, i, i);
  } else if (ma.mode == M::kIdentity && mb.mode == M::kModulo) {
    const Index m = mb.modulo;
    for (Index base = 0; base < n; base += m)
      for (Index k = 0; k < m; ++k) fn(base + k, base + k, k);
  } else if (ma.mode == M::kModulo && mb.mode == M::kIdentity) {
    const Index m = ma.modulo;
    for (Index base = 0; base < n; base += m)
      for (Index j = 0; j < m; ++j) fn(base + j, j, base + j);
  } else {
    for (Index i = 0; i < n; ++i) fn(i, ma(i), mb(i));
  }
}

template <typename T, typename F, typename DA, typename DB>
Var<T> binary_op(const Var<T>& a, const Var<T>& b, F f, DA da, DB db) {
  Tape<T>& tape = a.tape();
  const Array<T> av = a.value();
  const Array<T> bv = b.value();
  const Shape out_shape = broadcast_shapes(av.shape(), bv.shape());
  const Index n = numel(out_shape);
  auto ma = std::make_shared<IndexMap>(make_index_map(av.shape(), out_shape));
  auto mb = std::make_shared<IndexMap>(make_index_map(bv.shape(), out_shape));
  std::vector<T> out(static_cast<std::size_t>(n));
  const T* pa = av.ptr();
  const T* pb = bv.ptr();
  visit_pairs(n, *ma, *mb, [&](Index i, Index j, Index k) { out[i] = f(pa[j], pb[k]); });
  const int ia = a.id(), ib = b.id();
  return tape.push(Array<T>(out_shape, std::move(out)), {ia, ib},
                   [=](Tape<T>& t, std::span<const T> g) {
                     const T* xa = av.ptr();
                     const T* xb = bv.ptr();
                     if (t.requires_grad(ia)) {
                       T* ga = t.grad_buffer(ia).data();
                       visit_pairs(n, *ma, *mb,
                                   [&](Index i, Index j, Index k) { ga[j] += g[i] * da(xa[j], xb[k]); });
                     }
                     if (t.requires_grad(ib)) {
                       T* gb = t.grad_buffer(ib).data();
                       visit_pairs(n, *ma, *mb,
                                   [&](Index i, Index j, Index k) { gb[k] += g[i] * db(xa[j], xb[k]); });
                     }
                   });
}

// Elementwise unary op; `d(x, y)` is dy/dx given input x and output y.
template <typename T, typename F, typename D>
Var<T> unary_op(const Var<T>& x, F f, D d) {
  Tape<T>& tape = x.tape();
  const Array<T> xv = x.value();
  const Index n = xv.size();
  std::vector<T> out(static_cast<std::size_t>(n));
  const T* px = xv.ptr();
  for (Index i = 0; i < n; ++i) out[i] = f(px[i]);
  Array<T> yv(xv.shape(), std::move(out));
  const int ix = x.id();
  return tape.push(yv, {ix}, [=](Tape<T>& t, std::span<const T> g) {
    auto gx = t.grad_buffer(ix);
    const T* a = xv.ptr();
    const T* y = yv.ptr();
    for (Index i = 0; i < n; ++i) gx[i] += g[i] * d(a[i], y[i]);
  });
}

struct AxisSplit {
  Index outer, n, inner;
};

AxisSplit split_axis(const Shape& s, Index axis) {
  AxisSplit r{1, s[static_cast<std::size_t>(axis)], 1};
  for (Index i = 0; i < axis; ++i) r.outer *= s[static_cast<std::size_t>(i)];
  for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

std::vector<Index> strides_of(const Shape& s) {
  std::vector<Index> st(s.size(), 1);
  for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
  return st;
}

// out[i] = in[src(i)] for a permutation of axes; returns the source index table.
std::vector<Index> permute_table(const Shape& in, const std::vector<Index>& axes, Shape& out) {
  const std::size_t r = in.size();
  out.resize(r);
  const auto in_st = strides_of(in);
  std::vector<Index> st(r);
  for (std::size_t i = 0; i < r; ++i) {
    out[i] = in[static_cast<std::size_t>(axes[i])];
    st[i] = in_st[static_cast<std::size_t>(axes[i])];
  }
  const Index n = numel(in);
  std::vector<Index> table(static_cast<std::size_t>(n));
  std::vector<Index> counter(r, 0);
  Index off = 0;
  for (Index i = 0; i < n; ++i) {
    table[static_cast<std::size_t>(i)] = off;
    for (std::size_t d = r; d-- > 0;) {
      ++counter[d];
      off += st[d];
      if (counter[d] < out[d]) break;
      off -= st[d] * out[d];
      counter[d] = 0;
    }
  }
  return table;
}

}  // namespace

Shape broadcast_shapes(const Shape& a, const Shape& b) {
  const std::size_t r = std::max(a.size(), b.size());
  Shape out(r);
  for (std::size_t i = 0; i < r; ++i) {
    const Index da = i < r - a.size() ? 1 : a[i - (r - a.size())];
    const Index db = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw DimensionError("cannot broadcast shapes " + to_string(a) + " and " + to_string(b));
    }
    out[i] = std::max(da, db);
  }
  return out;
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  return binary_op(
      a, b, [](T x, T y) { return x + y; }, [](T, T) { return T(1); }, [](T, T) { return T(1); });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  return binary_op(
      a, b, [](T x, T y) { return x - y; }, [](T, T) { return T(1); }, [](T, T) { return T(-1); });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  return binary_op(
      a, b, [](T x, T y) { return x * y; }, [](T, T y) { return y; }, [](T x, T) { return x; });
}

template <typename T>
Var<T> div(const Var<T>& a, const Var<T>& b) {
  return binary_op(
      a, b, [](T x, T y) { return x / y; }, [](T, T y) { return T(1) / y; },
      [](T x, T y) { return -x / (y * y); });
}

template <typename T>
Var<T> scale(const Var<T>& x, T factor) {
  return unary_op(x, [factor](T v) { return v * factor; }, [factor](T, T) { return factor; });
}

template <typename T>
Var<T> add_scalar(const Var<T>& x, T value) {
  return unary_op(x, [value](T v) { return v + value; }, [](T, T) { return T(1); });
}

template <typename T>
Var<T> neg(const Var<T>& x) {
  return unary_op(x, [](T v) { return -v; }, [](T, T) { return T(-1); });
}

template <typename T>
Var<T> exp(const Var<T>& x) {
  return unary_op(x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <typename T>
Var<T> log(const Var<T>& x) {
  return unary_op(x, [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; });
}

template <typename T>
Var<T> tanh(const Var<T>& x) {
  return unary_op(x, [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Var<T> sigmoid(const Var<T>& x) {
  return unary_op(
      x,
      [](T v) {
        if (v >= 0) return T(1) / (T(1) + std::exp(-v));
        const T e = std::exp(v);
        return e / (T(1) + e);
      },
      [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Var<T> relu(const Var<T>& x) {
  return unary_op(x, [](T v) { return v > 0 ? v : T(0); }, [](T v, T) { return v > 0 ? T(1) : T(0); });
}

template <typename T>
Var<T> leaky_relu(const Var<T>& x, T slope) {
  return unary_op(
      x, [slope](T v) { return v > 0 ? v : slope * v; },
      [slope](T v, T) { return v > 0 ? T(1) : slope; });
}

template <typename T>
Var<T> softplus(const Var<T>& x) {
  return unary_op(
      x, [](T v) { return v > T(20) ? v : std::log1p(std::exp(v)); },
      [](T v, T) {
        if (v >= 0) return T(1) / (T(1) + std::exp(-v));
        const T e = std::exp(v);
        return e / (T(1) + e);
      });
}

template <typename T>
Var<T> silu(const Var<T>& x) {
  return unary_op(
      x, [](T v) { return v / (T(1) + std::exp(-v)); },
      [](T v, T) {
        const T s = T(1) / (T(1) + std::exp(-v));
        return s * (T(1) + v * (T(1) - s));
      });
}

template <typename T>
Var<T> gelu(const Var<T>& x) {
  constexpr T c = T(0.7978845608028654);  // sqrt(2/pi)
  constexpr T a = T(0.044715);
  return unary_op(
      x, [](T v) { return T(0.5) * v * (T(1) + std::tanh(c * (v + a * v * v * v))); },
      [](T v, T) {
        const T u = c * (v + a * v * v * v);
        const T th = std::tanh(u);
        const T du = c * (T(1) + T(3) * a * v * v);
        return T(0.5) * (T(1) + th) + T(0.5) * v * (T(1) - th * th) * du;
      });
}

template <typename T>
Var<T> sqrt(const Var<T>& x) {
  return unary_op(x, [](T v) { return std::sqrt(v); }, [](T, T y) { return T(0.5) / y; });
}

template <typename T>
Var<T> square(const Var<T>& x) {
  return unary_op(x, [](T v) { return v * v; }, [](T v, T) { return T(2) * v; });
}

template <typename T>
Var<T> abs(const Var<T>& x) {
  return unary_op(
      x, [](T v) { return std::abs(v); },
      [](T v, T) { return v > 0 ? T(1) : (v < 0 ? T(-1) : T(0)); });
}

template <typename T>
Var<T> clamp_min(const Var<T>& x, T lo) {
  return unary_op(
      x, [lo](T v) { return v < lo ? lo : v; }, [lo](T v, T) { return v < lo ? T(0) : T(1); });
}

template <typename T>
Var<T> sum(const Var<T>& x) {
  const Array<T> xv = x.value();
  T acc = T(0);
  for (T v : xv.data()) acc += v;
  const int ix = x.id();
  const Index n = xv.size();
  return x.tape().push(Array<T>::scalar(acc), {ix}, [=](Tape<T>& t, std::span<const T> g) {
    auto gx = t.grad_buffer(ix);
    for (Index i = 0; i < n; ++i) gx[i] += g[0];
  });
}

template <typename T>
Var<T> mean(const Var<T>& x) {
  return scale(sum(x), T(1) / static_cast<T>(x.size()));
}

template <typename T>
Var<T> sum_axis(const Var<T>& x, Index axis, bool keepdim) {
  const Array<T> xv = x.value();
  const Index ax = normalize_axis(axis, xv.rank());
  const AxisSplit sp = split_axis(xv.shape(), ax);
  Shape out_shape = xv.shape();
  if (keepdim) out_shape[static_cast<std::size_t>(ax)] = 1;
  else out_shape.erase(out_shape.begin() + ax);
  std::vector<T> out(static_cast<std::size_t>(sp.outer * sp.inner), T(0));
  const T* px = xv.ptr();
  for (Index o = 0; o < sp.outer; ++o)
    for (Index k = 0; k < sp.n; ++k)
      for (Index i = 0; i < sp.inner; ++i) out[o * sp.inner + i] += px[(o * sp.n + k) * sp.inner + i];
  const int ix = x.id();
  return x.tape().push(Array<T>(out_shape, std::move(out)), {ix},
                       [=](Tape<T>& t, std::span<const T> g) {
                         auto gx = t.grad_buffer(ix);
                         for (Index o = 0; o < sp.outer; ++o)
                           for (Index k = 0; k < sp.n; ++k)
                             for (Index i = 0; i < sp.inner; ++i)
                               gx[(o * sp.n + k) * sp.inner + i] += g[o * sp.inner + i];
                       });
}

template <typename T>
Var<T> mean_axis(const Var<T>& x, Index axis, bool keepdim) {
  const Index n = x.dim(axis);
  return scale(sum_axis(x, axis, keepdim), T(1) / static_cast<T>(n));
}

template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape) {
  Index infer = -1;
  Index known = 1;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (shape[i] == -1) infer = static_cast<Index>(i);
    else known *= shape[i];
  }
  if (infer >= 0 && known > 0) shape[static_cast<std::size_t>(infer)] = x.size() / known;
  const Array<T> out = x.value().reshaped(shape);
  const int ix = x.id();
  const Index n = out.size();
  return x.tape().push(out, {ix}, [=](Tape<T>& t, std::span<const T> g) {
    auto gx = t.grad_buffer(ix);
    for (Index i = 0; i < n; ++i) gx[i] += g[i];
  });
}

template <typename T>
Var<T> permute(const Var<T>& x, const std::vector<Index>& axes) {
  const Array<T> xv = x.value();
  if (static_cast<Index>(axes.size()) != xv.rank()) {
    throw DimensionError("permute axes do not match shape " + to_string(xv.shape()));
  }
  std::vector<Index> ax(axes.size());
  for (std::size_t i = 0; i < axes.size(); ++i) ax[i] = normalize_axis(axes[i], xv.rank());
  Shape out_shape;
  auto table = std::make_shared<std::vector<Index>>(permute_table(xv.shape(), ax, out_shape));
  const Index n = xv.size();
  std::vector<T> out(static_cast<std::size_t>(n));
  const T* px = xv.ptr();
  for (Index i = 0; i < n; ++i) out[i] = px[(*table)[i]];
  const int ix = x.id();
  return x.tape().push(Array<T>(out_shape, std::move(out)), {ix},
                       [=](Tape<T>& t, std::span<const T> g) {
                         auto gx = t.grad_buffer(ix);
                         for (Index i = 0; i < n; ++i) gx[(*table)[i]] += g[i];
                       });
}

template <typename T>
Var<T> slice(const Var<T>& x, Index axis, Index start, Index length) {
  const Array<T> xv = x.value();
  const Index ax = normalize_axis(axis, xv.rank());
  const AxisSplit sp = split_axis(xv.shape(), ax);
  if (start < 0 || length <= 0 || start + length > sp.n) {
    throw DimensionError("slice [" + std::to_string(start) + ", " + std::to_string(start + length) +
                         ") out of range for axis of size " + std::to_string(sp.n));
  }
  Shape out_shape = xv.shape();
  out_shape[static_cast<std::size_t>(ax)] = length;
  std::vector<T> out(static_cast<std::size_t>(sp.outer * length * sp.inner));
  const T* px = xv.ptr();
  for (Index o = 0; o < sp.outer; ++o) {
    std::copy_n(px + (o * sp.n + start) * sp.inner, length * sp.inner,
                out.begin() + o * length * sp.inner);
  }
  const int ix = x.id();
  return x.tape().push(Array<T>(out_shape, std::move(out)), {ix},
                       [=](Tape<T>& t, std::span<const T> g) {
                         auto gx = t.grad_buffer(ix);
                         for (Index o = 0; o < sp.outer; ++o)
                           for (Index i = 0; i < length * sp.inner; ++i)
                             gx[(o * sp.n + start) * sp.inner + i] += g[o * length * sp.inner + i];
                       });
}

template <typename T>
Var<T> concat(const std::vector<Var<T>>& xs, Index axis) {
  if (xs.empty()) throw DimensionError("concat of zero arrays");
  const Shape& s0 = xs.front().shape();
  const Index ax = normalize_axis(axis, static_cast<Index>(s0.size()));
  std::vector<Array<T>> vals;
  std::vector<int> ids;
  Index total = 0;
  for (const auto& v : xs) {
    const Shape& s = v.shape();
    bool ok = s.size() == s0.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = static_cast<Index>(i) == ax || s[i] == s0[i];
    if (!ok) throw DimensionError("concat shape mismatch " + to_string(s0) + " vs " + to_string(s));
    vals.push_back(v.value());
    ids.push_back(v.id());
    total += s[static_cast<std::size_t>(ax)];
  }
  Shape out_shape = s0;
  out_shape[static_cast<std::size_t>(ax)] = total;
  const AxisSplit sp = split_axis(out_shape, ax);
  std::vector<T> out(static_cast<std::size_t>(numel(out_shape)));
  std::vector<Index> offsets;
  Index off = 0;
  for (const auto& v : vals) {
    const Index len = v.dim(ax);
    offsets.push_back(off);
    for (Index o = 0; o < sp.outer; ++o) {
      std::copy_n(v.ptr() + o * len * sp.inner, len * sp.inner,
                  out.begin() + (o * total + off) * sp.inner);
    }
    off += len;
  }
  std::vector<Index> lens;
  for (const auto& v : vals) lens.push_back(v.dim(ax));
  return xs.front().tape().push(
      Array<T>(out_shape, std::move(out)), ids, [=](Tape<T>& t, std::span<const T> g) {
        for (std::size_t k = 0; k < ids.size(); ++k) {
          if (!t.requires_grad(ids[k])) continue;
          auto gx = t.grad_buffer(ids[k]);
          for (Index o = 0; o < sp.outer; ++o)
            for (Index i = 0; i < lens[k] * sp.inner; ++i)
              gx[o * lens[k] * sp.inner + i] += g[(o * total + offsets[k]) * sp.inner + i];
        }
      });
}

template <typename T>
Var<T> broadcast_to(const Var<T>& x, const Shape& shape) {
  const Array<T> xv = x.value();
  if (broadcast_shapes(xv.shape(), shape) != shape) {
    throw DimensionError("cannot broadcast " + to_string(xv.shape()) + " to " + to_string(shape));
  }
  auto map = std::make_shared<IndexMap>(make_index_map(xv.shape(), shape));
  const Index n = numel(shape);
  std::vector<T> out(static_cast<std::size_t>(n));
  const T* px = xv.ptr();
  for (Index i = 0; i < n; ++i) out[i] = px[(*map)(i)];
  const int ix = x.id();
  return x.tape().push(Array<T>(shape, std::move(out)), {ix}, [=](Tape<T>& t, std::span<const T> g) {
    auto gx = t.grad_buffer(ix);
    for (Index i = 0; i < n; ++i) gx[(*map)(i)] += g[i];
  });
}

template <typename T>
Var<T> detach(const Var<T>& x) {
  return x.tape().constant(x.value());
}

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b, bool transpose_a, bool transpose_b) {
  const Array<T> av = a.value();
  const Array<T> bv = b.value();
  const Shape& sa = av.shape();
  const Shape& sb = bv.shape();
  auto fail = [&] {
    throw DimensionError("matmul shape mismatch: " + to_string(sa) + " x " + to_string(sb));
  };
  if (sa.size() < 2 || sb.size() < 2) fail();
  const Index ra = static_cast<Index>(sa.size());
  const Index rb = static_cast<Index>(sb.size());
  const Index m = transpose_a ? sa[ra - 1] : sa[ra - 2];
  const Index ka = transpose_a ? sa[ra - 2] : sa[ra - 1];
  const Index kb = transpose_b ? sb[rb - 1] : sb[rb - 2];
  const Index n = transpose_b ? sb[rb - 2] : sb[rb - 1];
  if (ka != kb) fail();
  const Index k = ka;
  Shape out_shape;
  Index batch = 1;
  bool shared_b = rb == 2;
  if (shared_b && !transpose_a) {
    // Flatten all leading dims of `a` into rows.
    out_shape.assign(sa.begin(), sa.end() - 1);
    out_shape.push_back(n);
  } else {
    if (ra != rb) fail();
    for (Index i = 0; i < ra - 2; ++i) {
      if (sa[i] != sb[i]) fail();
      batch *= sa[i];
    }
    out_shape.assign(sa.begin(), sa.end() - 2);
    out_shape.push_back(m);
    out_shape.push_back(n);
    shared_b = false;
  }
  std::vector<T> out(static_cast<std::size_t>(numel(out_shape)));
  if (shared_b) {
    const Index rows = av.size() / k;
    gemm<T>(false, transpose_b, rows, n, k, av.ptr(), bv.ptr(), out.data(), false);
  } else {
    for (Index bi = 0; bi < batch; ++bi) {
      gemm<T>(transpose_a, transpose_b, m, n, k, av.ptr() + bi * m * k, bv.ptr() + bi * k * n,
              out.data() + bi * m * n, false);
    }
  }
  const int ia = a.id(), ib = b.id();
  return a.tape().push(
      Array<T>(out_shape, std::move(out)), {ia, ib}, [=](Tape<T>& t, std::span<const T> g) {
        const bool need_a = t.requires_grad(ia);
        const bool need_b = t.requires_grad(ib);
        if (shared_b) {
          const Index rows = av.size() / k;
          if (need_a) {
            // dA = G op(B)^T
            gemm<T>(false, !transpose_b, rows, k, n, g.data(), bv.ptr(), t.grad_buffer(ia).data(),
                    true);
          }
          if (need_b) {
            if (!transpose_b) gemm<T>(true, false, k, n, rows, av.ptr(), g.data(), t.grad_buffer(ib).data(), true);
            else gemm<T>(true, false, n, k, rows, g.data(), av.ptr(), t.grad_buffer(ib).data(), true);
          }
          return;
        }
        for (Index bi = 0; bi < batch; ++bi) {
          const T* gb = g.data() + bi * m * n;
          const T* pa = av.ptr() + bi * m * k;
          const T* pb = bv.ptr() + bi * k * n;
          if (need_a) {
            T* da = t.grad_buffer(ia).data() + bi * m * k;
            if (!transpose_a) gemm<T>(false, !transpose_b, m, k, n, gb, pb, da, true);
            else gemm<T>(transpose_b, true, k, m, n, pb, gb, da, true);
          }
          if (need_b) {
            T* db = t.grad_buffer(ib).data() + bi * k * n;
            if (!transpose_b) gemm<T>(!transpose_a, false, k, n, m, pa, gb, db, true);
            else gemm<T>(true, transpose_a, n, k, m, gb, pa, db, true);
          }
        }
      });
}

template <typename T>
Var<T> softmax(const Var<T>& x, Index axis) {
  const Array<T> xv = x.value();
  if (xv.rank() == 0) throw DimensionError("softmax of a scalar");
  const Index ax = normalize_axis(axis, xv.rank());
  const AxisSplit sp = split_axis(xv.shape(), ax);
  std::vector<T> out(static_cast<std::size_t>(xv.size()));
  const T* px = xv.ptr();
  for (Index o = 0; o < sp.outer; ++o) {
    for (Index i = 0; i < sp.inner; ++i) {
      const Index base = o * sp.n * sp.inner + i;
      T mx = -std::numeric_limits<T>::infinity();
      for (Index k = 0; k < sp.n; ++k) mx = std::max(mx, px[base + k * sp.inner]);
      T s = T(0);
      for (Index k = 0; k < sp.n; ++k) {
        const T e = std::exp(px[base + k * sp.inner] - mx);
        out[base + k * sp.inner] = e;
        s += e;
      }
      for (Index k = 0; k < sp.n; ++k) out[base + k * sp.inner] /= s;
    }
  }
  Array<T> yv(xv.shape(), std::move(out));
  const int ix = x.id();
  return x.tape().push(yv, {ix}, [=](Tape<T>& t, std::span<const T> g) {
    auto gx = t.grad_buffer(ix);
    const T* y = yv.ptr();
    for (Index o = 0; o < sp.outer; ++o) {
      for (Index i = 0; i < sp.inner; ++i) {
        const Index base = o * sp.n * sp.inner + i;
        T dot = T(0);
        for (Index k = 0; k < sp.n; ++k) dot += g[base + k * sp.inner] * y[base + k * sp.inner];
        for (Index k = 0; k < sp.n; ++k) {
          const Index j = base + k * sp.inner;
          gx[j] += y[j] * (g[j] - dot);
        }
      }
    }
  });
}

template <typename T>
Var<T> log_softmax(const Var<T>& x, Index axis) {
  const Array<T> xv = x.value();
  const Index ax = normalize_axis(axis, xv.rank());
  const AxisSplit sp = split_axis(xv.shape(), ax);
  std::vector<T> out(static_cast<std::size_t>(xv.size()));
  const T* px = xv.ptr();
  for (Index o = 0; o < sp.outer; ++o) {
    for (Index i = 0; i < sp.inner; ++i) {
      const Index base = o * sp.n * sp.inner + i;
      T mx = -std::numeric_limits<T>::infinity();
      for (Index k = 0; k < sp.n; ++k) mx = std::max(mx, px[base + k * sp.inner]);
      T s = T(0);
      for (Index k = 0; k < sp.n; ++k) s += std::exp(px[base + k * sp.inner] - mx);
      const T lse = mx + std::log(s);
      for (Index k = 0; k < sp.n; ++k) out[base + k * sp.inner] = px[base + k * sp.inner] - lse;
    }
  }
  Array<T> yv(xv.shape(), std::move(out));
  const int ix = x.id();
  return x.tape().push(yv, {ix}, [=](Tape<T>& t, std::span<const T> g) {
    auto gx = t.grad_buffer(ix);
    const T* y = yv.ptr();
    for (Index o = 0; o < sp.outer; ++o) {
      for (Index i = 0; i < sp.inner; ++i) {
        const Index base = o * sp.n * sp.inner + i;
        T gs = T(0);
        for (Index k = 0; k < sp.n; ++k) gs += g[base + k * sp.inner];
        for (Index k = 0; k < sp.n; ++k) {
          const Index j = base + k * sp.inner;
          gx[j] += g[j] - std::exp(y[j]) * gs;
        }
      }
    }
  });
}

template <typename T>
Var<T> masked_softmax(const Var<T>& x, const Array<T>& mask) {
  const Array<T> xv = x.value();
  if (mask.shape() != xv.shape()) {
    throw DimensionError("mask shape " + to_string(mask.shape()) + " does not match " +
                         to_string(xv.shape()));
  }
  const Index n = xv.dim(-1);
  const Index rows = xv.size() / n;
  std::vector<T> out(static_cast<std::size_t>(xv.size()), T(0));
  const T* px = xv.ptr();
  const T* pm = mask.ptr();
  for (Index r = 0; r < rows; ++r) {
    const T* xr = px + r * n;
    const T* mr = pm + r * n;
    T mx = -std::numeric_limits<T>::infinity();
    for (Index k = 0; k < n; ++k)
      if (mr[k] != T(0)) mx = std::max(mx, xr[k]);
    if (mx == -std::numeric_limits<T>::infinity()) continue;
    T s = T(0);
    for (Index k = 0; k < n; ++k) {
      if (mr[k] == T(0)) continue;
      const T e = std::exp(xr[k] - mx);
      out[r * n + k] = e;
      s += e;
    }
    for (Index k = 0; k < n; ++k) out[r * n + k] /= s;
  }
  Array<T> yv(xv.shape(), std::move(out));
  const int ix = x.id();
  return x.tape().push(yv, {ix}, [=](Tape<T>& t, std::span<const T> g) {
    auto gx = t.grad_buffer(ix);
    const T* y = yv.ptr();
    for (Index r = 0; r < rows; ++r) {
      T dot = T(0);
      for (Index k = 0; k < n; ++k) dot += g[r * n + k] * y[r * n + k];
      for (Index k = 0; k < n; ++k) gx[r * n + k] += y[r * n + k] * (g[r * n + k] - dot);
    }
  });
}

template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gain, const Var<T>& bias, T eps) {
  const Array<T> xv = x.value();
  const Array<T> gv = gain.value();
  const Array<T> bv = bias.value();
  const Index d = xv.dim(-1);
  if (gv.size() != d || bv.size() != d) {
    throw DimensionError("layer_norm affine shape mismatch: x " + to_string(xv.shape()) + ", gain " +
                         to_string(gv.shape()) + ", bias " + to_string(bv.shape()));
  }
  if (!(eps > T(0))) throw ContractError("layer_norm eps must be positive");
  const Index rows = xv.size() / d;
  std::vector<T> out(static_cast<std::size_t>(xv.size()));
  auto xhat = std::make_shared<std::vector<T>>(static_cast<std::size_t>(xv.size()));
  auto rstd = std::make_shared<std::vector<T>>(static_cast<std::size_t>(rows));
  const T* px = xv.ptr();
  for (Index r = 0; r < rows; ++r) {
    const T* xr = px + r * d;
    T mu = T(0);
    for (Index k = 0; k < d; ++k) mu += xr[k];
    mu /= static_cast<T>(d);
    T var = T(0);
    for (Index k = 0; k < d; ++k) var += (xr[k] - mu) * (xr[k] - mu);
    var /= static_cast<T>(d);
    const T rs = T(1) / std::sqrt(var + eps);
    (*rstd)[r] = rs;
    for (Index k = 0; k < d; ++k) {
      const T h = (xr[k] - mu) * rs;
      (*xhat)[r * d + k] = h;
      out[r * d + k] = h * gv[k] + bv[k];
    }
  }
  const int ix = x.id(), ig = gain.id(), ib = bias.id();
  return x.tape().push(
      Array<T>(xv.shape(), std::move(out)), {ix, ig, ib}, [=](Tape<T>& t, std::span<const T> g) {
        const T* h = xhat->data();
        if (t.requires_grad(ig)) {
          auto gg = t.grad_buffer(ig);
          for (Index r = 0; r < rows; ++r)
            for (Index k = 0; k < d; ++k) gg[k] += g[r * d + k] * h[r * d + k];
        }
        if (t.requires_grad(ib)) {
          auto gb = t.grad_buffer(ib);
          for (Index r = 0; r < rows; ++r)
            for (Index k = 0; k < d; ++k) gb[k] += g[r * d + k];
        }
        if (t.requires_grad(ix)) {
          auto gx = t.grad_buffer(ix);
          const T inv_d = T(1) / static_cast<T>(d);
          for (Index r = 0; r < rows; ++r) {
            T s1 = T(0), s2 = T(0);
            for (Index k = 0; k < d; ++k) {
              const T dh = g[r * d + k] * gv[k];
              s1 += dh;
              s2 += dh * h[r * d + k];
            }
            const T rs = (*rstd)[r];
            for (Index k = 0; k < d; ++k) {
              const T dh = g[r * d + k] * gv[k];
              gx[r * d + k] += rs * (dh - inv_d * s1 - h[r * d + k] * inv_d * s2);
            }
          }
        }
      });
}

template <typename T>
Var<T> dropout(const Var<T>& x, T rate) {
  Tape<T>& tape = x.tape();
  if (!tape.training() || rate <= T(0)) return x;
  if (rate >= T(1)) throw ConfigError("dropout rate must be below 1");
  const Index n = x.size();
  std::vector<T> m(static_cast<std::size_t>(n));
  const T keep = T(1) - rate;
  for (Index i = 0; i < n; ++i) m[i] = tape.rng().uniform() < static_cast<double>(keep) ? T(1) / keep : T(0);
  return mul(x, tape.constant(Array<T>(x.shape(), std::move(m))));
}

ConvGeometry ConvGeometry::strided(Index h, Index w, Index kh, Index kw, Index stride, Index pad) {
  ConvGeometry g;
  g.stride_h = g.stride_w = stride;
  g.pad_top = g.pad_left = pad;
  g.out_h = (h + 2 * pad - (kh - 1) - 1) / stride + 1;
  g.out_w = (w + 2 * pad - (kw - 1) - 1) / stride + 1;
  return g;
}

ConvGeometry ConvGeometry::causal_1d(Index length, Index k, Index dilation) {
  ConvGeometry g;
  g.dilation_w = dilation;
  g.pad_left = dilation * (k - 1);
  g.out_h = 1;
  g.out_w = length;
  return g;
}

ConvGeometry ConvGeometry::same_2d(Index h, Index w, Index kh, Index kw, Index dil_h, Index dil_w) {
  ConvGeometry g;
  g.dilation_h = dil_h;
  g.dilation_w = dil_w;
  g.pad_top = dil_h * (kh - 1) / 2;
  g.pad_left = dil_w * (kw - 1) / 2;
  g.out_h = h;
  g.out_w = w;
  return g;
}

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& kernel, const ConvGeometry& geom) {
  const Array<T> xv = x.value();
  const Array<T> kv = kernel.value();
  if (xv.rank() != 4 || kv.rank() != 4 || xv.dim(3) != kv.dim(2)) {
    throw DimensionError("conv2d expects x [N,H,W,Cin] and kernel [kh,kw,Cin,Cout], got " +
                         to_string(xv.shape()) + " and " + to_string(kv.shape()));
  }
  const Index N = xv.dim(0), H = xv.dim(1), W = xv.dim(2), Ci = xv.dim(3);
  const Index KH = kv.dim(0), KW = kv.dim(1), Co = kv.dim(3);
  const ConvGeometry gm = geom;
  const Index extent_h = gm.dilation_h * (KH - 1) + 1;
  const Index extent_w = gm.dilation_w * (KW - 1) + 1;
  const Index padded_h = std::max(H + 2 * gm.pad_top, (gm.out_h - 1) * gm.stride_h + extent_h);
  const Index padded_w = std::max(W + 2 * gm.pad_left, (gm.out_w - 1) * gm.stride_w + extent_w);
  if (extent_h > H + 2 * gm.pad_top || extent_w > W + 2 * gm.pad_left || gm.out_h <= 0 ||
      gm.out_w <= 0) {
    (void)padded_h;
    (void)padded_w;
    throw DimensionError("conv2d kernel " + to_string(kv.shape()) + " larger than padded input " +
                         to_string(xv.shape()));
  }
  const Index OH = gm.out_h, OW = gm.out_w;
  const Index P = N * OH * OW;
  // Source row of input pixel for each (tap, output position); -1 when in padding.
  auto src = std::make_shared<std::vector<Index>>(static_cast<std::size_t>(KH * KW * P), -1);
  std::vector<bool> tap_live(static_cast<std::size_t>(KH * KW), false);
  for (Index i = 0; i < KH; ++i)
    for (Index j = 0; j < KW; ++j) {
      Index* s = src->data() + (i * KW + j) * P;
      for (Index n = 0; n < N; ++n)
        for (Index oy = 0; oy < OH; ++oy) {
          const Index iy = oy * gm.stride_h - gm.pad_top + i * gm.dilation_h;
          for (Index ox = 0; ox < OW; ++ox) {
            const Index ix = ox * gm.stride_w - gm.pad_left + j * gm.dilation_w;
            const Index p = (n * OH + oy) * OW + ox;
            if (iy >= 0 && iy < H && ix >= 0 && ix < W) {
              s[p] = (n * H + iy) * W + ix;
              tap_live[static_cast<std::size_t>(i * KW + j)] = true;
            }
          }
        }
    }
  auto live = std::make_shared<std::vector<bool>>(std::move(tap_live));
  std::vector<T> out(static_cast<std::size_t>(P * Co), T(0));
  std::vector<T> gathered(static_cast<std::size_t>(P * Ci));
  const T* px = xv.ptr();
  for (Index tap = 0; tap < KH * KW; ++tap) {
    if (!(*live)[tap]) continue;
    const Index* s = src->data() + tap * P;
    for (Index p = 0; p < P; ++p) {
      T* dst = gathered.data() + p * Ci;
      if (s[p] < 0) std::fill_n(dst, Ci, T(0));
      else std::copy_n(px + s[p] * Ci, Ci, dst);
    }
    gemm<T>(false, false, P, Co, Ci, gathered.data(), kv.ptr() + tap * Ci * Co, out.data(), true);
  }
  const int ixd = x.id(), ik = kernel.id();
  return x.tape().push(
      Array<T>(Shape{N, OH, OW, Co}, std::move(out)), {ixd, ik},
      [=](Tape<T>& t, std::span<const T> g) {
        const bool need_x = t.requires_grad(ixd);
        const bool need_k = t.requires_grad(ik);
        std::vector<T> buf(static_cast<std::size_t>(P * Ci));
        const T* px2 = xv.ptr();
        for (Index tap = 0; tap < KH * KW; ++tap) {
          if (!(*live)[tap]) continue;
          const Index* s = src->data() + tap * P;
          if (need_k) {
            for (Index p = 0; p < P; ++p) {
              T* dst = buf.data() + p * Ci;
              if (s[p] < 0) std::fill_n(dst, Ci, T(0));
              else std::copy_n(px2 + s[p] * Ci, Ci, dst);
            }
            gemm<T>(true, false, Ci, Co, P, buf.data(), g.data(),
                    t.grad_buffer(ik).data() + tap * Ci * Co, true);
          }
          if (need_x) {
            gemm<T>(false, true, P, Ci, Co, g.data(), kv.ptr() + tap * Ci * Co, buf.data(), false);
            auto gx = t.grad_buffer(ixd);
            for (Index p = 0; p < P; ++p) {
              if (s[p] < 0) continue;
              T* dst = gx.data() + s[p] * Ci;
              const T* from = buf.data() + p * Ci;
              for (Index c = 0; c < Ci; ++c) dst[c] += from[c];
            }
          }
        }
      });
}

template <typename T>
Var<T> dilated_conv(const Var<T>& x, const Var<T>& kernel, Index dilation, int rank) {
  if (dilation < 1) throw ConfigError("dilation must be >= 1");
  if (rank == 1) {
    if (x.rank() != 3 || kernel.rank() != 3) {
      throw DimensionError("rank-1 dilated_conv expects x [N,L,Cin] and kernel [k,Cin,Cout], got " +
                           to_string(x.shape()) + " and " + to_string(kernel.shape()));
    }
    const Index N = x.dim(0), L = x.dim(1), Ci = x.dim(2);
    const Index k = kernel.dim(0), Co = kernel.dim(2);
    auto x4 = reshape(x, {N, 1, L, Ci});
    auto k4 = reshape(kernel, {1, k, kernel.dim(1), Co});
    auto y = conv2d(x4, k4, ConvGeometry::causal_1d(L, k, dilation));
    return reshape(y, {N, L, Co});
  }
  if (rank == 2) {
    if (x.rank() != 4 || kernel.rank() != 4) {
      throw DimensionError("rank-2 dilated_conv expects x [N,H,W,Cin], got " + to_string(x.shape()));
    }
    return conv2d(x, kernel,
                  ConvGeometry::same_2d(x.dim(1), x.dim(2), kernel.dim(0), kernel.dim(1), dilation,
                                        dilation));
  }
  throw ConfigError("dilated_conv rank must be 1 or 2");
}

template <typename T>
Var<T> selective_scan(const Var<T>& u, const Var<T>& delta, const Var<T>& A, const Var<T>& B,
                      const Var<T>& C, const Var<T>& D) {
  const Array<T> uv = u.value(), dv = delta.value(), av = A.value(), bv = B.value(),
                 cv = C.value(), Dv = D.value();
  if (uv.rank() != 3 || dv.shape() != uv.shape() || av.rank() != 2 || av.dim(0) != uv.dim(2) ||
      bv.rank() != 3 || bv.dim(0) != uv.dim(0) || bv.dim(1) != uv.dim(1) || bv.dim(2) != av.dim(1) ||
      cv.shape() != bv.shape() || Dv.size() != uv.dim(2)) {
    throw DimensionError("selective_scan shape mismatch: u " + to_string(uv.shape()) + ", A " +
                         to_string(av.shape()) + ", B " + to_string(bv.shape()));
  }
  const Index R = uv.dim(0), L = uv.dim(1), E = uv.dim(2), S = av.dim(1);
  // States h_t for every step, kept for the reverse sweep.
  auto states = std::make_shared<std::vector<T>>(static_cast<std::size_t>(R * L * E * S));
  std::vector<T> out(static_cast<std::size_t>(R * L * E));
  for (Index r = 0; r < R; ++r) {
    for (Index t = 0; t < L; ++t) {
      const Index rt = r * L + t;
      const T* bt = bv.ptr() + rt * S;
      const T* ct = cv.ptr() + rt * S;
      for (Index e = 0; e < E; ++e) {
        const T ue = uv[rt * E + e];
        const T de = dv[rt * E + e];
        T* h = states->data() + (rt * E + e) * S;
        const T* hp = t > 0 ? states->data() + ((rt - 1) * E + e) * S : nullptr;
        T y = Dv[e] * ue;
        for (Index s = 0; s < S; ++s) {
          const T decay = std::exp(de * av[e * S + s]);
          h[s] = (hp ? decay * hp[s] : T(0)) + de * bt[s] * ue;
          y += ct[s] * h[s];
        }
        out[rt * E + e] = y;
      }
    }
  }
  const int iu = u.id(), idl = delta.id(), ia = A.id(), ib = B.id(), ic = C.id(), id = D.id();
  return u.tape().push(
      Array<T>(uv.shape(), std::move(out)), {iu, idl, ia, ib, ic, id},
      [=](Tape<T>& tp, std::span<const T> g) {
        std::vector<T> gu(static_cast<std::size_t>(R * L * E), T(0));
        std::vector<T> gd(static_cast<std::size_t>(R * L * E), T(0));
        std::vector<T> gA(static_cast<std::size_t>(E * S), T(0));
        std::vector<T> gB(static_cast<std::size_t>(R * L * S), T(0));
        std::vector<T> gC(static_cast<std::size_t>(R * L * S), T(0));
        std::vector<T> gD(static_cast<std::size_t>(E), T(0));
        std::vector<T> gh(static_cast<std::size_t>(E * S));
        for (Index r = 0; r < R; ++r) {
          std::fill(gh.begin(), gh.end(), T(0));
          for (Index t = L; t-- > 0;) {
            const Index rt = r * L + t;
            const T* bt = bv.ptr() + rt * S;
            const T* ct = cv.ptr() + rt * S;
            for (Index e = 0; e < E; ++e) {
              const T gy = g[rt * E + e];
              const T ue = uv[rt * E + e];
              const T de = dv[rt * E + e];
              const T* h = states->data() + (rt * E + e) * S;
              const T* hp = t > 0 ? states->data() + ((rt - 1) * E + e) * S : nullptr;
              T* ghe = gh.data() + e * S;
              gD[e] += gy * ue;
              T gue = gy * Dv[e];
              T gde = T(0);
              for (Index s = 0; s < S; ++s) {
                gC[rt * S + s] += gy * h[s];
                const T ghs = ghe[s] + gy * ct[s];
                const T a = av[e * S + s];
                const T decay = std::exp(de * a);
                const T hprev = hp ? hp[s] : T(0);
                const T g_decay = ghs * hprev;
                gde += g_decay * decay * a + ghs * bt[s] * ue;
                gA[e * S + s] += g_decay * decay * de;
                gB[rt * S + s] += ghs * de * ue;
                gue += ghs * de * bt[s];
                ghe[s] = ghs * decay;
              }
              gu[rt * E + e] += gue;
              gd[rt * E + e] += gde;
            }
          }
        }
        auto flush = [&tp](int node, const std::vector<T>& src) {
          if (!tp.requires_grad(node)) return;
          auto dst = tp.grad_buffer(node);
          for (std::size_t i = 0; i < src.size(); ++i) dst[i] += src[i];
        };
        flush(iu, gu);
        flush(idl, gd);
        flush(ia, gA);
        flush(ib, gB);
        flush(ic, gC);
        flush(id, gD);
      });
}

#define WMMOE_INSTANTIATE_OPS(T)                                                                 \
  template Var<T> add(const Var<T>&, const Var<T>&);                                            \
  template Var<T> sub(const Var<T>&, const Var<T>&);                                            \
  template Var<T> mul(const Var<T>&, const Var<T>&);                                            \
  template Var<T> div(const Var<T>&, const Var<T>&);                                            \
  template Var<T> scale(const Var<T>&, T);                                                      \
  template Var<T> add_scalar(const Var<T>&, T);                                                 \
  template Var<T> neg(const Var<T>&);                                                           \
  template Var<T> exp(const Var<T>&);                                                           \
  template Var<T> log(const Var<T>&);                                                           \
  template Var<T> tanh(const Var<T>&);                                                          \
  template Var<T> sigmoid(const Var<T>&);                                                       \
  template Var<T> relu(const Var<T>&);                                                          \
  template Var<T> leaky_relu(const Var<T>&, T);                                                 \
  template Var<T> softplus(const Var<T>&);                                                      \
  template Var<T> silu(const Var<T>&);                                                          \
  template Var<T> gelu(const Var<T>&);                                                          \
  template Var<T> sqrt(const Var<T>&);                                                          \
  template Var<T> square(const Var<T>&);                                                        \
  template Var<T> abs(const Var<T>&);                                                           \
  template Var<T> clamp_min(const Var<T>&, T);                                                  \
  template Var<T> sum(const Var<T>&);                                                           \
  template Var<T> mean(const Var<T>&);                                                          \
  template Var<T> sum_axis(const Var<T>&, Index, bool);                                         \
  template Var<T> mean_axis(const Var<T>&, Index, bool);                                        \
  template Var<T> reshape(const Var<T>&, Shape);                                                \
  template Var<T> permute(const Var<T>&, const std::vector<Index>&);                            \
  template Var<T> slice(const Var<T>&, Index, Index, Index);                                    \
  template Var<T> concat(const std::vector<Var<T>>&, Index);                                    \
  template Var<T> broadcast_to(const Var<T>&, const Shape&);                                    \
  template Var<T> detach(const Var<T>&);                                                        \
  template Var<T> matmul(const Var<T>&, const Var<T>&, bool, bool);                             \
  template Var<T> softmax(const Var<T>&, Index);                                                \
  template Var<T> log_softmax(const Var<T>&, Index);                                            \
  template Var<T> masked_softmax(const Var<T>&, const Array<T>&);                               \
  template Var<T> layer_norm(const Var<T>&, const Var<T>&, const Var<T>&, T);                   \
  template Var<T> dropout(const Var<T>&, T);                                                    \
  template Var<T> conv2d(const Var<T>&, const Var<T>&, const ConvGeometry&);                    \
  template Var<T> dilated_conv(const Var<T>&, const Var<T>&, Index, int);                       \
  template Var<T> selective_scan(const Var<T>&, const Var<T>&, const Var<T>&, const Var<T>&,    \
                                 const Var<T>&, const Var<T>&);

WMMOE_INSTANTIATE_OPS(float)
WMMOE_INSTANTIATE_OPS(double)

}  // namespace wmmoe::nd
