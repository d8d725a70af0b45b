#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "imt/tensor.hpp"

namespace imt {

namespace {

using Index = std::int64_t;

std::int64_t normalize_axis(std::int64_t axis, std::int64_t rank) {
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) throw Error(ErrorCode::InvalidAxis, "axis out of range");
  return axis;
}

Shape broadcast_shapes(const Shape& a, const Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    const Index da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    const Index db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw Error(ErrorCode::ShapeMismatch, "cannot broadcast " + shape_string(a) + " with " + shape_string(b));
    }
    out[i] = std::max(da, db);
  }
  return out;
}

// Maps each flat index of `out` to a flat index of `src` under broadcasting.
// Empty result means identity.
std::vector<Index> broadcast_index(const Shape& src, const Shape& out) {
  if (src == out) return {};
  const Index n_out = shape_numel(out);
  const Index n_src = shape_numel(src);
  std::vector<Index> idx(static_cast<std::size_t>(n_out));
  // Suffix case: src (ignoring leading ones) equals the trailing dims of out.
  std::size_t lead = 0;
  while (lead < src.size() && src[lead] == 1) ++lead;
  const Shape core(src.begin() + static_cast<std::ptrdiff_t>(lead), src.end());
  if (core.size() <= out.size() && std::equal(core.begin(), core.end(), out.end() - static_cast<std::ptrdiff_t>(core.size()))) {
    for (Index i = 0; i < n_out; ++i) idx[static_cast<std::size_t>(i)] = i % n_src;
    return idx;
  }
  const std::size_t rank = out.size();
  std::vector<Index> src_stride(rank, 0);
  Index stride = 1;
  for (std::size_t k = rank; k-- > 0;) {
    const std::size_t offset = rank - src.size();
    if (k >= offset) {
      const Index extent = src[k - offset];
      src_stride[k] = extent == 1 ? 0 : stride;
      stride *= extent;
    }
  }
  std::vector<Index> counter(rank, 0);
  Index s = 0;
  for (Index i = 0; i < n_out; ++i) {
    idx[static_cast<std::size_t>(i)] = s;
    for (std::size_t k = rank; k-- > 0;) {
      ++counter[k];
      s += src_stride[k];
      if (counter[k] < out[k]) break;
      s -= src_stride[k] * counter[k];
      counter[k] = 0;
    }
  }
  return idx;
}

inline Index at(const std::vector<Index>& idx, Index i) { return idx.empty() ? i : idx[static_cast<std::size_t>(i)]; }

// Reduce `grad` (shaped like the broadcast output) back to the source layout.
std::vector<double> reduce_to(const std::vector<double>& grad, const std::vector<Index>& idx, std::size_t src_numel) {
  if (idx.empty()) return grad;
  std::vector<double> out(src_numel, 0.0);
  for (std::size_t i = 0; i < grad.size(); ++i) out[static_cast<std::size_t>(idx[i])] += grad[i];
  return out;
}

// outer x n x inner decomposition around `axis`.
struct AxisLayout {
  Index outer = 1, n = 1, inner = 1;
};

AxisLayout layout_for(const Shape& shape, std::int64_t axis) {
  AxisLayout l;
  for (std::int64_t i = 0; i < axis; ++i) l.outer *= shape[static_cast<std::size_t>(i)];
  l.n = shape[static_cast<std::size_t>(axis)];
  for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < shape.size(); ++i) l.inner *= shape[i];
  return l;
}

Shape reduced_shape(const Shape& shape, std::int64_t axis, bool keepdim) {
  Shape out = shape;
  if (keepdim) {
    out[static_cast<std::size_t>(axis)] = 1;
  } else {
    out.erase(out.begin() + axis);
    if (out.empty()) out.push_back(1);
  }
  return out;
}

template <typename Fwd, typename Bwd>
Tensor unary(const Tensor& x, Fwd fwd, Bwd bwd) {
  const auto& xv = x.impl()->values;
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = fwd(xv[i]);
  Tensor y(x.shape(), std::move(out));
  if (autograd::should_record({&x})) {
    auto yi = y.impl();
    autograd::record(y, {x}, [x, yw = std::weak_ptr<TensorImpl>(yi), bwd](const std::vector<double>& g) {
      if (!x.requires_grad()) return;
      auto y_impl = yw.lock();
      const auto& xv = x.impl()->values;
      auto& gx = x.impl()->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * bwd(xv[i], y_impl->values[i]);
    });
  }
  return y;
}

enum class BinaryKind { Add, Sub, Mul, Div };

Tensor binary(const Tensor& a, const Tensor& b, BinaryKind kind) {
  const Shape out_shape = broadcast_shapes(a.shape(), b.shape());
  auto ia = broadcast_index(a.shape(), out_shape);
  auto ib = broadcast_index(b.shape(), out_shape);
  const auto& av = a.impl()->values;
  const auto& bv = b.impl()->values;
  const Index n = shape_numel(out_shape);
  std::vector<double> out(static_cast<std::size_t>(n));
  switch (kind) {
    case BinaryKind::Add:
      for (Index i = 0; i < n; ++i) out[i] = av[at(ia, i)] + bv[at(ib, i)];
      break;
    case BinaryKind::Sub:
      for (Index i = 0; i < n; ++i) out[i] = av[at(ia, i)] - bv[at(ib, i)];
      break;
    case BinaryKind::Mul:
      for (Index i = 0; i < n; ++i) out[i] = av[at(ia, i)] * bv[at(ib, i)];
      break;
    case BinaryKind::Div:
      for (Index i = 0; i < n; ++i) out[i] = av[at(ia, i)] / bv[at(ib, i)];
      break;
  }
  Tensor y(out_shape, std::move(out));
  if (autograd::should_record({&a, &b})) {
    autograd::record(y, {a, b}, [a, b, ia = std::move(ia), ib = std::move(ib), kind](const std::vector<double>& g) {
      const auto& av = a.impl()->values;
      const auto& bv = b.impl()->values;
      const Index n = static_cast<Index>(g.size());
      if (a.requires_grad()) {
        std::vector<double> ga(g.size());
        switch (kind) {
          case BinaryKind::Add:
          case BinaryKind::Sub: ga = g; break;
          case BinaryKind::Mul:
            for (Index i = 0; i < n; ++i) ga[i] = g[i] * bv[at(ib, i)];
            break;
          case BinaryKind::Div:
            for (Index i = 0; i < n; ++i) ga[i] = g[i] / bv[at(ib, i)];
            break;
        }
        autograd::accumulate(a, reduce_to(ga, ia, av.size()));
      }
      if (b.requires_grad()) {
        std::vector<double> gb(g.size());
        switch (kind) {
          case BinaryKind::Add: gb = g; break;
          case BinaryKind::Sub:
            for (Index i = 0; i < n; ++i) gb[i] = -g[i];
            break;
          case BinaryKind::Mul:
            for (Index i = 0; i < n; ++i) gb[i] = g[i] * av[at(ia, i)];
            break;
          case BinaryKind::Div:
            for (Index i = 0; i < n; ++i) {
              const double bi = bv[at(ib, i)];
              gb[i] = -g[i] * av[at(ia, i)] / (bi * bi);
            }
            break;
        }
        autograd::accumulate(b, reduce_to(gb, ib, bv.size()));
      }
    });
  }
  return y;
}

}  // namespace

// ---------------------------------------------------------------------------
// matmul

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() < 2 || b.rank() < 2) throw Error(ErrorCode::ShapeMismatch, "matmul needs rank >= 2 operands");
  const Index m = a.dim(-2), k = a.dim(-1), k2 = b.dim(-2), n = b.dim(-1);
  if (k != k2) {
    throw Error(ErrorCode::ShapeMismatch,
                "matmul inner extents differ: " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  }
  const Shape a_batch(a.shape().begin(), a.shape().end() - 2);
  const Shape b_batch(b.shape().begin(), b.shape().end() - 2);

  if (b_batch.empty()) {
    // [..., M, K] x [K, N]: a single GEMM over the flattened leading rows.
    const Index rows = a.numel() / k;
    Shape out_shape = a_batch;
    out_shape.push_back(m);
    out_shape.push_back(n);
    Tensor y(out_shape);
    MatrixMap(y.impl()->values.data(), rows, n).noalias() =
        ConstMatrixMap(a.impl()->values.data(), rows, k) * ConstMatrixMap(b.impl()->values.data(), k, n);
    if (autograd::should_record({&a, &b})) {
      autograd::record(y, {a, b}, [a, b, rows, k, n](const std::vector<double>& g) {
        ConstMatrixMap gm(g.data(), rows, n);
        if (a.requires_grad()) {
          MatrixMap(a.impl()->grad_buffer().data(), rows, k).noalias() +=
              gm * ConstMatrixMap(b.impl()->values.data(), k, n).transpose();
        }
        if (b.requires_grad()) {
          MatrixMap(b.impl()->grad_buffer().data(), k, n).noalias() +=
              ConstMatrixMap(a.impl()->values.data(), rows, k).transpose() * gm;
        }
      });
    }
    return y;
  }

  const Shape out_batch = broadcast_shapes(a_batch, b_batch);
  const auto ia = broadcast_index(a_batch.empty() ? Shape{1} : a_batch, out_batch);
  const auto ib = broadcast_index(b_batch, out_batch);
  const Index batches = shape_numel(out_batch);
  Shape out_shape = out_batch;
  out_shape.push_back(m);
  out_shape.push_back(n);
  Tensor y(out_shape);
  const double* ap = a.impl()->values.data();
  const double* bp = b.impl()->values.data();
  double* yp = y.impl()->values.data();
  for (Index s = 0; s < batches; ++s) {
    MatrixMap(yp + s * m * n, m, n).noalias() =
        ConstMatrixMap(ap + at(ia, s) * m * k, m, k) * ConstMatrixMap(bp + at(ib, s) * k * n, k, n);
  }
  if (autograd::should_record({&a, &b})) {
    autograd::record(y, {a, b}, [a, b, ia, ib, batches, m, k, n](const std::vector<double>& g) {
      const double* ap = a.impl()->values.data();
      const double* bp = b.impl()->values.data();
      double* gap = a.requires_grad() ? a.impl()->grad_buffer().data() : nullptr;
      double* gbp = b.requires_grad() ? b.impl()->grad_buffer().data() : nullptr;
      for (Index s = 0; s < batches; ++s) {
        ConstMatrixMap gm(g.data() + s * m * n, m, n);
        if (gap) {
          MatrixMap(gap + at(ia, s) * m * k, m, k).noalias() +=
              gm * ConstMatrixMap(bp + at(ib, s) * k * n, k, n).transpose();
        }
        if (gbp) {
          MatrixMap(gbp + at(ib, s) * k * n, k, n).noalias() +=
              ConstMatrixMap(ap + at(ia, s) * m * k, m, k).transpose() * gm;
        }
      }
    });
  }
  return y;
}

// ---------------------------------------------------------------------------
// elementwise

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::Add); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::Sub); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::Mul); }
Tensor div(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::Div); }

Tensor scale(const Tensor& x, double factor) {
  return unary(x, [factor](double v) { return v * factor; }, [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& x, double value) {
  return unary(x, [value](double v) { return v + value; }, [](double, double) { return 1.0; });
}

Tensor neg(const Tensor& x) { return scale(x, -1.0); }

Tensor sqrt(const Tensor& x) {
  return unary(x, [](double v) { return std::sqrt(v); }, [](double, double y) { return 0.5 / y; });
}

Tensor abs(const Tensor& x) {
  return unary(x, [](double v) { return std::abs(v); },
               [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

Tensor relu(const Tensor& x) {
  return unary(x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor gelu(const Tensor& x) {
  return unary(
      x, [](double v) { return 0.5 * v * (1.0 + std::erf(v * M_SQRT1_2)); },
      [](double v, double) { return 0.5 * (1.0 + std::erf(v * M_SQRT1_2)) + v * std::exp(-0.5 * v * v) * 0.5 * M_2_SQRTPI * M_SQRT1_2; });
}

Tensor exp(const Tensor& x) {
  return unary(x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
  return unary(x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

// ---------------------------------------------------------------------------
// reductions

Tensor sum(const Tensor& x) {
  const auto& xv = x.impl()->values;
  Tensor y = Tensor::scalar(std::accumulate(xv.begin(), xv.end(), 0.0));
  if (autograd::should_record({&x})) {
    autograd::record(y, {x}, [x](const std::vector<double>& g) {
      if (!x.requires_grad()) return;
      for (auto& v : x.impl()->grad_buffer()) v += g[0];
    });
  }
  return y;
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor sum(const Tensor& x, std::int64_t axis, bool keepdim) {
  axis = normalize_axis(axis, x.rank());
  const auto l = layout_for(x.shape(), axis);
  const auto& xv = x.impl()->values;
  std::vector<double> out(static_cast<std::size_t>(l.outer * l.inner), 0.0);
  for (Index o = 0; o < l.outer; ++o)
    for (Index j = 0; j < l.n; ++j)
      for (Index i = 0; i < l.inner; ++i) out[o * l.inner + i] += xv[(o * l.n + j) * l.inner + i];
  Tensor y(reduced_shape(x.shape(), axis, keepdim), std::move(out));
  if (autograd::should_record({&x})) {
    autograd::record(y, {x}, [x, l](const std::vector<double>& g) {
      if (!x.requires_grad()) return;
      auto& gx = x.impl()->grad_buffer();
      for (Index o = 0; o < l.outer; ++o)
        for (Index j = 0; j < l.n; ++j)
          for (Index i = 0; i < l.inner; ++i) gx[(o * l.n + j) * l.inner + i] += g[o * l.inner + i];
    });
  }
  return y;
}

Tensor mean(const Tensor& x, std::int64_t axis, bool keepdim) {
  const auto n = x.dim(axis);
  return scale(sum(x, axis, keepdim), 1.0 / static_cast<double>(n));
}

Tensor variance(const Tensor& x, std::int64_t axis, bool keepdim) {
  axis = normalize_axis(axis, x.rank());
  const auto l = layout_for(x.shape(), axis);
  const auto& xv = x.impl()->values;
  std::vector<double> mu(static_cast<std::size_t>(l.outer * l.inner), 0.0);
  std::vector<double> out(mu.size(), 0.0);
  const double inv_n = 1.0 / static_cast<double>(l.n);
  for (Index o = 0; o < l.outer; ++o)
    for (Index j = 0; j < l.n; ++j)
      for (Index i = 0; i < l.inner; ++i) mu[o * l.inner + i] += xv[(o * l.n + j) * l.inner + i] * inv_n;
  for (Index o = 0; o < l.outer; ++o)
    for (Index j = 0; j < l.n; ++j)
      for (Index i = 0; i < l.inner; ++i) {
        const double d = xv[(o * l.n + j) * l.inner + i] - mu[o * l.inner + i];
        out[o * l.inner + i] += d * d * inv_n;
      }
  Tensor y(reduced_shape(x.shape(), axis, keepdim), std::move(out));
  if (autograd::should_record({&x})) {
    autograd::record(y, {x}, [x, l, mu = std::move(mu), inv_n](const std::vector<double>& g) {
      if (!x.requires_grad()) return;
      const auto& xv = x.impl()->values;
      auto& gx = x.impl()->grad_buffer();
      for (Index o = 0; o < l.outer; ++o)
        for (Index j = 0; j < l.n; ++j)
          for (Index i = 0; i < l.inner; ++i) {
            const Index f = (o * l.n + j) * l.inner + i;
            gx[f] += g[o * l.inner + i] * 2.0 * inv_n * (xv[f] - mu[o * l.inner + i]);
          }
    });
  }
  return y;
}

Tensor max(const Tensor& x, std::int64_t axis, bool keepdim) {
  axis = normalize_axis(axis, x.rank());
  const auto l = layout_for(x.shape(), axis);
  const auto& xv = x.impl()->values;
  std::vector<double> out(static_cast<std::size_t>(l.outer * l.inner));
  std::vector<Index> arg(out.size());
  for (Index o = 0; o < l.outer; ++o)
    for (Index i = 0; i < l.inner; ++i) {
      Index best = 0;
      double best_v = xv[o * l.n * l.inner + i];
      for (Index j = 1; j < l.n; ++j) {
        const double v = xv[(o * l.n + j) * l.inner + i];
        if (v > best_v) {
          best_v = v;
          best = j;
        }
      }
      out[o * l.inner + i] = best_v;
      arg[o * l.inner + i] = (o * l.n + best) * l.inner + i;
    }
  Tensor y(reduced_shape(x.shape(), axis, keepdim), std::move(out));
  if (autograd::should_record({&x})) {
    autograd::record(y, {x}, [x, arg = std::move(arg)](const std::vector<double>& g) {
      if (!x.requires_grad()) return;
      auto& gx = x.impl()->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) gx[static_cast<std::size_t>(arg[i])] += g[i];
    });
  }
  return y;
}

// ---------------------------------------------------------------------------
// shape manipulation

Tensor concat(const std::vector<Tensor>& parts, std::int64_t axis) {
  if (parts.empty()) throw Error(ErrorCode::ShapeMismatch, "concat of nothing");
  axis = normalize_axis(axis, parts.front().rank());
  Shape out_shape = parts.front().shape();
  out_shape[static_cast<std::size_t>(axis)] = 0;
  for (const auto& p : parts) {
    if (p.rank() != parts.front().rank()) throw Error(ErrorCode::ShapeMismatch, "concat rank mismatch");
    for (std::int64_t d = 0; d < p.rank(); ++d) {
      if (d != axis && p.dim(d) != parts.front().dim(d)) throw Error(ErrorCode::ShapeMismatch, "concat extent mismatch");
    }
    out_shape[static_cast<std::size_t>(axis)] += p.dim(axis);
  }
  const auto lo = layout_for(out_shape, axis);
  std::vector<double> out(static_cast<std::size_t>(shape_numel(out_shape)));
  Index offset = 0;
  std::vector<Index> offsets;
  for (const auto& p : parts) {
    offsets.push_back(offset);
    const Index chunk = p.dim(axis) * lo.inner;
    const auto& pv = p.impl()->values;
    for (Index o = 0; o < lo.outer; ++o) {
      std::copy_n(pv.begin() + o * chunk, chunk, out.begin() + o * lo.n * lo.inner + offset * lo.inner);
    }
    offset += p.dim(axis);
  }
  Tensor y(out_shape, std::move(out));
  if (autograd::should_record(parts)) {
    autograd::record(y, parts, [parts, offsets, lo, axis](const std::vector<double>& g) {
      for (std::size_t k = 0; k < parts.size(); ++k) {
        const auto& p = parts[k];
        if (!p.requires_grad()) continue;
        const Index chunk = p.dim(axis) * lo.inner;
        auto& gp = p.impl()->grad_buffer();
        for (Index o = 0; o < lo.outer; ++o) {
          const double* src = g.data() + o * lo.n * lo.inner + offsets[k] * lo.inner;
          for (Index i = 0; i < chunk; ++i) gp[o * chunk + i] += src[i];
        }
      }
    });
  }
  return y;
}

Tensor reshape(const Tensor& x, Shape shape) {
  Index known = 1;
  int infer = -1;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (shape[i] == -1) {
      if (infer >= 0) throw Error(ErrorCode::ShapeMismatch, "reshape with two inferred extents");
      infer = static_cast<int>(i);
    } else {
      known *= shape[i];
    }
  }
  if (infer >= 0 && known > 0) shape[static_cast<std::size_t>(infer)] = x.numel() / known;
  if (shape_numel(shape) != x.numel()) {
    throw Error(ErrorCode::ShapeMismatch, "reshape " + shape_string(x.shape()) + " -> " + shape_string(shape));
  }
  Tensor y(std::move(shape), x.impl()->values);
  if (autograd::should_record({&x})) {
    autograd::record(y, {x}, [x](const std::vector<double>& g) { autograd::accumulate(x, g); });
  }
  return y;
}

Tensor permute(const Tensor& x, const std::vector<std::int64_t>& order) {
  const auto rank = x.rank();
  if (static_cast<std::int64_t>(order.size()) != rank) throw Error(ErrorCode::InvalidAxis, "permutation rank mismatch");
  std::vector<bool> seen(static_cast<std::size_t>(rank), false);
  Shape out_shape(static_cast<std::size_t>(rank));
  for (std::int64_t i = 0; i < rank; ++i) {
    const auto a = normalize_axis(order[static_cast<std::size_t>(i)], rank);
    if (seen[static_cast<std::size_t>(a)]) throw Error(ErrorCode::InvalidAxis, "repeated axis in permutation");
    seen[static_cast<std::size_t>(a)] = true;
    out_shape[static_cast<std::size_t>(i)] = x.dim(a);
  }
  std::vector<Index> in_stride(static_cast<std::size_t>(rank));
  Index stride = 1;
  for (auto k = rank; k-- > 0;) {
    in_stride[static_cast<std::size_t>(k)] = stride;
    stride *= x.dim(k);
  }
  // src[i] = flat input index of output element i.
  const Index n = x.numel();
  std::vector<Index> src(static_cast<std::size_t>(n));
  std::vector<Index> step(static_cast<std::size_t>(rank));
  for (std::int64_t i = 0; i < rank; ++i) {
    step[static_cast<std::size_t>(i)] = in_stride[static_cast<std::size_t>(normalize_axis(order[static_cast<std::size_t>(i)], rank))];
  }
  std::vector<Index> counter(static_cast<std::size_t>(rank), 0);
  Index s = 0;
  for (Index i = 0; i < n; ++i) {
    src[static_cast<std::size_t>(i)] = s;
    for (auto k = rank; k-- > 0;) {
      const auto ku = static_cast<std::size_t>(k);
      ++counter[ku];
      s += step[ku];
      if (counter[ku] < out_shape[ku]) break;
      s -= step[ku] * counter[ku];
      counter[ku] = 0;
    }
  }
  const auto& xv = x.impl()->values;
  std::vector<double> out(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) out[i] = xv[src[i]];
  Tensor y(out_shape, std::move(out));
  if (autograd::should_record({&x})) {
    autograd::record(y, {x}, [x, src = std::move(src)](const std::vector<double>& g) {
      if (!x.requires_grad()) return;
      auto& gx = x.impl()->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) gx[static_cast<std::size_t>(src[i])] += g[i];
    });
  }
  return y;
}

Tensor transpose(const Tensor& x) {
  if (x.rank() < 2) throw Error(ErrorCode::InvalidAxis, "transpose needs rank >= 2");
  std::vector<std::int64_t> order(static_cast<std::size_t>(x.rank()));
  std::iota(order.begin(), order.end(), 0);
  std::swap(order[order.size() - 1], order[order.size() - 2]);
  return permute(x, order);
}

Tensor embedding_lookup(const Tensor& table, std::span<const std::int32_t> ids, const Shape& ids_shape) {
  if (table.rank() != 2) throw Error(ErrorCode::ShapeMismatch, "embedding table must be [V, D]");
  if (shape_numel(ids_shape) != static_cast<Index>(ids.size())) {
    throw Error(ErrorCode::ShapeMismatch, "ids do not match ids_shape");
  }
  const Index vocab = table.dim(0), width = table.dim(1);
  for (auto id : ids) {
    if (id < 0 || id >= vocab) {
      throw Error(ErrorCode::TokenOutOfRange, "id " + std::to_string(id) + " outside table of " + std::to_string(vocab));
    }
  }
  Shape out_shape = ids_shape;
  out_shape.push_back(width);
  std::vector<double> out(ids.size() * static_cast<std::size_t>(width));
  const auto& tv = table.impl()->values;
  for (std::size_t r = 0; r < ids.size(); ++r) {
    std::copy_n(tv.begin() + ids[r] * width, width, out.begin() + static_cast<Index>(r) * width);
  }
  Tensor y(out_shape, std::move(out));
  if (autograd::should_record({&table})) {
    std::vector<std::int32_t> id_copy(ids.begin(), ids.end());
    autograd::record(y, {table}, [table, ids = std::move(id_copy), width](const std::vector<double>& g) {
      if (!table.requires_grad()) return;
      auto& gt = table.impl()->grad_buffer();
      for (std::size_t r = 0; r < ids.size(); ++r)
        for (Index c = 0; c < width; ++c) gt[ids[r] * width + c] += g[static_cast<Index>(r) * width + c];
    });
  }
  return y;
}

Tensor masked_fill(const Tensor& x, const Mask& mask, double value) {
  if (broadcast_shapes(mask.shape, x.shape()) != x.shape()) {
    throw Error(ErrorCode::ShapeMismatch, "mask " + shape_string(mask.shape) + " does not broadcast to " + shape_string(x.shape()));
  }
  auto im = broadcast_index(mask.shape, x.shape());
  const auto& xv = x.impl()->values;
  std::vector<double> out(xv.size());
  std::vector<std::uint8_t> filled(xv.size());
  for (Index i = 0; i < static_cast<Index>(xv.size()); ++i) {
    filled[i] = mask.bits[static_cast<std::size_t>(at(im, i))];
    out[i] = filled[i] ? value : xv[i];
  }
  Tensor y(x.shape(), std::move(out));
  if (autograd::should_record({&x})) {
    autograd::record(y, {x}, [x, filled = std::move(filled)](const std::vector<double>& g) {
      if (!x.requires_grad()) return;
      auto& gx = x.impl()->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i)
        if (!filled[i]) gx[i] += g[i];
    });
  }
  return y;
}

// ---------------------------------------------------------------------------
// fused ops

Tensor softmax(const Tensor& x, std::int64_t axis) {
  axis = normalize_axis(axis, x.rank());
  const auto l = layout_for(x.shape(), axis);
  const auto& xv = x.impl()->values;
  std::vector<double> out(xv.size());
  for (Index o = 0; o < l.outer; ++o)
    for (Index i = 0; i < l.inner; ++i) {
      const Index base = o * l.n * l.inner + i;
      double m = -std::numeric_limits<double>::infinity();
      for (Index j = 0; j < l.n; ++j) m = std::max(m, xv[base + j * l.inner]);
      double z = 0.0;
      for (Index j = 0; j < l.n; ++j) {
        const double e = std::exp(xv[base + j * l.inner] - m);
        out[base + j * l.inner] = e;
        z += e;
      }
      for (Index j = 0; j < l.n; ++j) out[base + j * l.inner] /= z;
    }
  Tensor y(x.shape(), std::move(out));
  if (autograd::should_record({&x})) {
    std::weak_ptr<TensorImpl> yw = y.impl();
    autograd::record(y, {x}, [x, yw, l](const std::vector<double>& g) {
      if (!x.requires_grad()) return;
      const auto& yv = yw.lock()->values;
      auto& gx = x.impl()->grad_buffer();
      for (Index o = 0; o < l.outer; ++o)
        for (Index i = 0; i < l.inner; ++i) {
          const Index base = o * l.n * l.inner + i;
          double dot = 0.0;
          for (Index j = 0; j < l.n; ++j) dot += g[base + j * l.inner] * yv[base + j * l.inner];
          for (Index j = 0; j < l.n; ++j) {
            const Index f = base + j * l.inner;
            gx[f] += yv[f] * (g[f] - dot);
          }
        }
    });
  }
  return y;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  const Index width = x.dim(-1);
  if (gain.numel() != width || bias.numel() != width) {
    throw Error(ErrorCode::ShapeMismatch, "layer_norm gain/bias must match the last extent");
  }
  const Index rows = x.numel() / width;
  const auto& xv = x.impl()->values;
  const auto& gv = gain.impl()->values;
  const auto& bv = bias.impl()->values;
  std::vector<double> xhat(xv.size()), inv_std(static_cast<std::size_t>(rows)), out(xv.size());
  for (Index r = 0; r < rows; ++r) {
    const double* row = xv.data() + r * width;
    double mu = 0.0;
    for (Index c = 0; c < width; ++c) mu += row[c];
    mu /= static_cast<double>(width);
    double var = 0.0;
    for (Index c = 0; c < width; ++c) var += (row[c] - mu) * (row[c] - mu);
    var /= static_cast<double>(width);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[r] = is;
    for (Index c = 0; c < width; ++c) {
      const double h = (row[c] - mu) * is;
      xhat[r * width + c] = h;
      out[r * width + c] = h * gv[c] + bv[c];
    }
  }
  Tensor y(x.shape(), std::move(out));
  if (autograd::should_record({&x, &gain, &bias})) {
    autograd::record(y, {x, gain, bias},
                     [x, gain, bias, rows, width, xhat = std::move(xhat), inv_std = std::move(inv_std)](
                         const std::vector<double>& g) {
                       const auto& gv = gain.impl()->values;
                       double* gx = x.requires_grad() ? x.impl()->grad_buffer().data() : nullptr;
                       double* gg = gain.requires_grad() ? gain.impl()->grad_buffer().data() : nullptr;
                       double* gb = bias.requires_grad() ? bias.impl()->grad_buffer().data() : nullptr;
                       const double inv_w = 1.0 / static_cast<double>(width);
                       for (Index r = 0; r < rows; ++r) {
                         const double* gr = g.data() + r * width;
                         const double* hr = xhat.data() + r * width;
                         double m1 = 0.0, m2 = 0.0;
                         for (Index c = 0; c < width; ++c) {
                           const double dh = gr[c] * gv[c];
                           m1 += dh;
                           m2 += dh * hr[c];
                           if (gg) gg[c] += gr[c] * hr[c];
                           if (gb) gb[c] += gr[c];
                         }
                         if (!gx) continue;
                         m1 *= inv_w;
                         m2 *= inv_w;
                         for (Index c = 0; c < width; ++c) {
                           gx[r * width + c] += inv_std[r] * (gr[c] * gv[c] - m1 - hr[c] * m2);
                         }
                       }
                     });
  }
  return y;
}

Tensor cross_entropy(const Tensor& logits, std::span<const std::int32_t> targets, std::int32_t pad_id) {
  const Index vocab = logits.dim(-1);
  const Index rows = logits.numel() / vocab;
  if (static_cast<Index>(targets.size()) != rows) {
    throw Error(ErrorCode::ShapeMismatch, "target count does not match logits rows");
  }
  const auto& lv = logits.impl()->values;
  std::vector<double> probs(lv.size());
  double total = 0.0;
  Index count = 0;
  for (Index r = 0; r < rows; ++r) {
    const auto t = targets[static_cast<std::size_t>(r)];
    if (t == pad_id) continue;
    if (t < 0 || t >= vocab) throw Error(ErrorCode::TokenOutOfRange, "target id " + std::to_string(t));
    const double* row = lv.data() + r * vocab;
    double m = row[0];
    for (Index c = 1; c < vocab; ++c) m = std::max(m, row[c]);
    double z = 0.0;
    for (Index c = 0; c < vocab; ++c) {
      const double e = std::exp(row[c] - m);
      probs[r * vocab + c] = e;
      z += e;
    }
    for (Index c = 0; c < vocab; ++c) probs[r * vocab + c] /= z;
    total += (m + std::log(z)) - row[t];
    ++count;
  }
  if (count == 0) throw Error(ErrorCode::DegenerateBatch, "every target position is padding");
  Tensor y = Tensor::scalar(total / static_cast<double>(count));
  if (autograd::should_record({&logits})) {
    std::vector<std::int32_t> tcopy(targets.begin(), targets.end());
    autograd::record(y, {logits}, [logits, probs = std::move(probs), t = std::move(tcopy), pad_id, vocab, rows, count](
                                      const std::vector<double>& g) {
      if (!logits.requires_grad()) return;
      auto& gl = logits.impl()->grad_buffer();
      const double s = g[0] / static_cast<double>(count);
      for (Index r = 0; r < rows; ++r) {
        if (t[static_cast<std::size_t>(r)] == pad_id) continue;
        for (Index c = 0; c < vocab; ++c) gl[r * vocab + c] += s * probs[r * vocab + c];
        gl[r * vocab + t[static_cast<std::size_t>(r)]] -= s;
      }
    });
  }
  return y;
}

Tensor dropout(const Tensor& x, double p, std::mt19937_64& rng) {
  if (p <= 0.0) return x;
  if (p >= 1.0) throw Error(ErrorCode::InvalidArgument, "dropout probability must be < 1");
  std::bernoulli_distribution keep(1.0 - p);
  Tensor m(x.shape());
  for (auto& v : m.mutable_values()) v = keep(rng) ? 1.0 / (1.0 - p) : 0.0;
  return mul(x, m);
}

}  // namespace imt
