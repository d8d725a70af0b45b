#include "imt/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace imt {

namespace {

double relative_error(double ad, double fd) {
  return std::abs(ad - fd) / std::max({std::abs(ad), std::abs(fd), 1e-8});
}

}  // namespace

GradCheckReport grad_check_leaves(const std::function<Tensor()>& f, std::vector<Tensor> leaves, double h, double tol,
                                  std::optional<std::int64_t> max_coords_per_tensor, std::uint64_t seed) {
  for (auto& leaf : leaves) leaf.zero_grad();
  {
    Tape tape;
    Tape::Scope scope(tape);
    Tensor loss = f();
    backward(loss);
  }
  std::vector<std::vector<double>> analytic;
  analytic.reserve(leaves.size());
  for (const auto& leaf : leaves) analytic.push_back(leaf.grad());

  auto evaluate = [&f] { return f().item(); };  // no active tape: inference mode

  GradCheckReport report;
  std::mt19937_64 rng(seed);
  for (std::size_t t = 0; t < leaves.size(); ++t) {
    auto values = leaves[t].mutable_values();
    std::vector<std::int64_t> coords(values.size());
    std::iota(coords.begin(), coords.end(), 0);
    if (max_coords_per_tensor && static_cast<std::int64_t>(coords.size()) > *max_coords_per_tensor) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(static_cast<std::size_t>(*max_coords_per_tensor));
    }
    for (auto i : coords) {
      const double saved = values[i];
      values[i] = saved + h;
      const double up = evaluate();
      values[i] = saved - h;
      const double down = evaluate();
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double err = relative_error(analytic[t][i], numeric);
      ++report.checked;
      if (err > report.max_relative_error || report.worst_tensor < 0) {
        report.max_relative_error = std::max(err, report.max_relative_error);
        if (err >= report.max_relative_error) {
          report.worst_tensor = static_cast<std::int64_t>(t);
          report.worst_index = i;
        }
      }
    }
  }
  for (auto& leaf : leaves) leaf.zero_grad();
  report.passed = report.max_relative_error < tol;
  return report;
}

GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double h, double tol) {
  Tensor leaf = x.detach();
  leaf.set_requires_grad(true);
  return grad_check_leaves([&] { return f(leaf); }, {leaf}, h, tol);
}

}  // namespace imt
