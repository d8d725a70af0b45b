#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include "imt/corpus.hpp"
#include "imt/tensor.hpp"

namespace imt::il {

/// Per-sentence vectors H [B, D]; row i belongs to sentence i of its batch.
struct PooledRepresentation {
  Tensor h;
  std::string language;
  std::int64_t batch_id = -1;
};

/// Masked mean over time of `enc_out` [B, T, D]. Throws EmptyRow when a
/// row has no non-pad position.
PooledRepresentation pool_representation(const Tensor& enc_out, const data::BoolMatrix& mask,
                                         std::string language = {}, std::int64_t batch_id = -1);

/// Per-dimension Pearson correlation over the batch, averaged over D.
/// Dimensions where sqrt(var_x * var_y) < 1e-8 contribute 0.
double correlation_coefficient(const Tensor& hx, const Tensor& hy);

/// 1 - correlation_coefficient, differentiable in both inputs.
Tensor correlation_distance(const Tensor& hx, const Tensor& hy);

/// max over dimensions of mean_i |hx[i,d] - hy[i,d]|.
Tensor max_distance(const Tensor& hx, const Tensor& hy);

/// Batch means of the L1 and L2 norms of hx - hy.
Tensor l1_distance(const Tensor& hx, const Tensor& hy);
Tensor l2_distance(const Tensor& hx, const Tensor& hy);

enum class DistanceKind { Corr, Max, L1, L2, None };

DistanceKind parse_distance_kind(std::string_view name);
std::string_view to_string(DistanceKind kind);

Tensor distance(DistanceKind kind, const Tensor& hx, const Tensor& hy);

struct LossWeights {
  double xx = 1.0, yy = 1.0, xy = 1.0, yx = 1.0, d = 1.0;
};

/// Scalar terms of one step. Absent terms are not applicable for the
/// schedule that produced them.
struct LossBreakdown {
  std::optional<double> l_xx, l_yy, l_xy, l_yx, d;
  LossWeights weights;
  Tensor total;

  double total_value() const { return total.item(); }
};

/// total = sum of weight * term over the present terms. Task losses that
/// are undefined tensors are treated as absent. `d` is computed for every
/// kind except None; with a zero weight it is reported but not
/// differentiated.
LossBreakdown joint_loss(const Tensor& l_xx, const Tensor& l_yy, const Tensor& l_xy, const Tensor& l_yx,
                         const Tensor& hx, const Tensor& hy, DistanceKind kind, const LossWeights& weights = {});

}  // namespace imt::il
