#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "imt/tensor.hpp"

namespace imt {

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::int64_t checked = 0;
  std::int64_t worst_tensor = -1;
  std::int64_t worst_index = -1;
  bool passed = false;
};

/// Compares reverse-mode gradients of the scalar function `f` at `x` with
/// central differences of step `h`. The relative error per coordinate is
/// |g_ad - g_fd| / max(|g_ad|, |g_fd|, 1e-8).
GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double h = 1e-5,
                           double tol = 1e-4);

/// Variant over several leaves that `f` closes over (e.g. model parameters).
/// Each leaf must already require grad. When `max_coords_per_tensor` is set,
/// that many coordinates per tensor are sampled with `seed`; otherwise every
/// coordinate is checked.
GradCheckReport grad_check_leaves(const std::function<Tensor()>& f, std::vector<Tensor> leaves, double h = 1e-5,
                                  double tol = 1e-4, std::optional<std::int64_t> max_coords_per_tensor = std::nullopt,
                                  std::uint64_t seed = 0);

}  // namespace imt
