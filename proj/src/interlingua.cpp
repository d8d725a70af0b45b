#include "imt/interlingua.hpp"

#include <cmath>

#include "imt/error.hpp"

namespace imt::il {

namespace {

constexpr double kVarianceFloor = 1e-8;

void check_pair(const Tensor& hx, const Tensor& hy) {
  if (hx.rank() != 2 || hy.rank() != 2) throw Error(ErrorCode::ShapeMismatch, "representations must be [B, D]");
  if (hx.shape() != hy.shape()) {
    throw Error(ErrorCode::BatchMismatch, shape_string(hx.shape()) + " vs " + shape_string(hy.shape()));
  }
}

struct DimensionStats {
  std::vector<double> mean_x, mean_y, sxx, syy, coeff;
  std::vector<bool> live;
};

DimensionStats dimension_stats(const Tensor& hx, const Tensor& hy) {
  check_pair(hx, hy);
  const auto b = hx.dim(0), dims = hx.dim(1);
  if (b < 2) throw Error(ErrorCode::BatchTooSmall, "correlation needs at least two rows");
  const auto x = hx.values(), y = hy.values();
  DimensionStats s;
  const auto n = static_cast<std::size_t>(dims);
  s.mean_x.assign(n, 0.0);
  s.mean_y.assign(n, 0.0);
  s.sxx.assign(n, 0.0);
  s.syy.assign(n, 0.0);
  s.coeff.assign(n, 0.0);
  s.live.assign(n, false);
  for (std::int64_t d = 0; d < dims; ++d) {
    double mx = 0.0, my = 0.0;
    for (std::int64_t i = 0; i < b; ++i) {
      mx += x[i * dims + d];
      my += y[i * dims + d];
    }
    mx /= static_cast<double>(b);
    my /= static_cast<double>(b);
    double sxx = 0.0, syy = 0.0, sxy = 0.0;
    for (std::int64_t i = 0; i < b; ++i) {
      const double dx = x[i * dims + d] - mx, dy = y[i * dims + d] - my;
      sxx += dx * dx;
      syy += dy * dy;
      sxy += dx * dy;
    }
    const auto k = static_cast<std::size_t>(d);
    s.mean_x[k] = mx;
    s.mean_y[k] = my;
    s.sxx[k] = sxx;
    s.syy[k] = syy;
    const double spread = std::sqrt((sxx / static_cast<double>(b)) * (syy / static_cast<double>(b)));
    if (spread >= kVarianceFloor) {
      s.live[k] = true;
      s.coeff[k] = sxy / std::sqrt(sxx * syy);
    }
  }
  return s;
}

}  // namespace

PooledRepresentation pool_representation(const Tensor& enc_out, const data::BoolMatrix& mask, std::string language,
                                         std::int64_t batch_id) {
  if (enc_out.rank() != 3 || enc_out.dim(0) != mask.rows() || enc_out.dim(1) != mask.cols()) {
    throw Error(ErrorCode::ShapeMismatch, "pooling expects [B, T, D] with a [B, T] mask");
  }
  const auto b = enc_out.dim(0), t = enc_out.dim(1);
  Tensor weights(Shape{b, t, 1});
  auto w = weights.mutable_values();
  for (std::int64_t i = 0; i < b; ++i) {
    const auto count = mask.row(i).count();
    if (count == 0) throw Error(ErrorCode::EmptyRow, "row " + std::to_string(i) + " has no tokens");
    for (std::int64_t j = 0; j < t; ++j) w[i * t + j] = mask(i, j) ? 1.0 / static_cast<double>(count) : 0.0;
  }
  return {sum(mul(enc_out, weights), 1), std::move(language), batch_id};
}

double correlation_coefficient(const Tensor& hx, const Tensor& hy) {
  const auto s = dimension_stats(hx, hy);
  double total = 0.0;
  for (double c : s.coeff) total += c;
  return total / static_cast<double>(s.coeff.size());
}

Tensor correlation_distance(const Tensor& hx, const Tensor& hy) {
  auto s = dimension_stats(hx, hy);
  const auto b = hx.dim(0), dims = hx.dim(1);
  double total = 0.0;
  for (double c : s.coeff) total += c;
  Tensor out = Tensor::scalar(1.0 - total / static_cast<double>(dims));
  if (!autograd::should_record({&hx, &hy})) return out;
  autograd::record(out, {hx, hy}, [hx, hy, s = std::move(s), b, dims](const std::vector<double>& g) {
    const double scale = -g[0] / static_cast<double>(dims);
    const auto x = hx.values(), y = hy.values();
    // dc/dx_i = (y_i - ybar) / sqrt(Sxx Syy) - c (x_i - xbar) / Sxx, and symmetrically for y.
    auto push = [&](const Tensor& target, std::span<const double> self, std::span<const double> other,
                    const std::vector<double>& mean_self, const std::vector<double>& mean_other,
                    const std::vector<double>& s_self) {
      if (!target.requires_grad()) return;
      std::vector<double> delta(static_cast<std::size_t>(b * dims), 0.0);
      for (std::int64_t d = 0; d < dims; ++d) {
        const auto k = static_cast<std::size_t>(d);
        if (!s.live[k]) continue;
        const double root = std::sqrt(s.sxx[k] * s.syy[k]);
        for (std::int64_t i = 0; i < b; ++i) {
          const auto at = static_cast<std::size_t>(i * dims + d);
          delta[at] = scale * ((other[at] - mean_other[k]) / root - s.coeff[k] * (self[at] - mean_self[k]) / s_self[k]);
        }
      }
      autograd::accumulate(target, delta);
    };
    push(hx, x, y, s.mean_x, s.mean_y, s.sxx);
    push(hy, y, x, s.mean_y, s.mean_x, s.syy);
  });
  return out;
}

Tensor max_distance(const Tensor& hx, const Tensor& hy) {
  check_pair(hx, hy);
  return max(mean(abs(sub(hx, hy)), 0), 0);
}

Tensor l1_distance(const Tensor& hx, const Tensor& hy) {
  check_pair(hx, hy);
  return mean(sum(abs(sub(hx, hy)), 1));
}

Tensor l2_distance(const Tensor& hx, const Tensor& hy) {
  check_pair(hx, hy);
  auto diff = sub(hx, hy);
  return mean(sqrt(add_scalar(sum(mul(diff, diff), 1), 1e-12)));
}

DistanceKind parse_distance_kind(std::string_view name) {
  if (name == "corr") return DistanceKind::Corr;
  if (name == "max") return DistanceKind::Max;
  if (name == "l1") return DistanceKind::L1;
  if (name == "l2") return DistanceKind::L2;
  if (name == "none") return DistanceKind::None;
  throw Error(ErrorCode::UnknownDistanceKind, std::string(name));
}

std::string_view to_string(DistanceKind kind) {
  switch (kind) {
    case DistanceKind::Corr: return "corr";
    case DistanceKind::Max: return "max";
    case DistanceKind::L1: return "l1";
    case DistanceKind::L2: return "l2";
    case DistanceKind::None: return "none";
  }
  return "none";
}

Tensor distance(DistanceKind kind, const Tensor& hx, const Tensor& hy) {
  switch (kind) {
    case DistanceKind::Corr: return correlation_distance(hx, hy);
    case DistanceKind::Max: return max_distance(hx, hy);
    case DistanceKind::L1: return l1_distance(hx, hy);
    case DistanceKind::L2: return l2_distance(hx, hy);
    case DistanceKind::None: break;
  }
  throw Error(ErrorCode::UnknownDistanceKind, "no distance for kind none");
}

LossBreakdown joint_loss(const Tensor& l_xx, const Tensor& l_yy, const Tensor& l_xy, const Tensor& l_yx,
                         const Tensor& hx, const Tensor& hy, DistanceKind kind, const LossWeights& weights) {
  for (double w : {weights.xx, weights.yy, weights.xy, weights.yx, weights.d}) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw Error(ErrorCode::InvalidArgument, "loss weights must be finite and >= 0");
  }
  LossBreakdown out;
  out.weights = weights;
  Tensor total = Tensor::scalar(0.0);
  auto add_term = [&](const Tensor& term, double w, std::optional<double>& slot) {
    if (!term.defined()) return;
    slot = term.item();
    if (w != 0.0) total = add(total, scale(term, w));
  };
  add_term(l_xx, weights.xx, out.l_xx);
  add_term(l_yy, weights.yy, out.l_yy);
  add_term(l_xy, weights.xy, out.l_xy);
  add_term(l_yx, weights.yx, out.l_yx);
  if (kind != DistanceKind::None) {
    const Tensor d = weights.d != 0.0 ? distance(kind, hx, hy) : distance(kind, hx.detach(), hy.detach());
    add_term(d, weights.d, out.d);
  }
  out.total = total;
  return out;
}

}  // namespace imt::il
