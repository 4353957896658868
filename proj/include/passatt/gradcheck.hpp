#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "passatt/error.hpp"
#include "passatt/random.hpp"
#include "passatt/tensor.hpp"

namespace passatt::nx {

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::string worst_param;
  Index worst_coordinate = -1;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t coordinates_checked = 0;
};

struct GradCheckOptions {
  double eps = 1e-5;
  /// Tensors larger than this are sub-sampled to exactly this many coordinates.
  std::size_t coords_per_tensor = 100;
  std::uint64_t seed = 7;
};

/// Central differences against backward(). Relative error per coordinate is
/// |a - n| / max(|a|, |n|, 1e-8).
inline GradCheckResult finite_difference_check(const std::function<Tensor<double>()>& loss_fn,
                                               std::vector<std::pair<std::string, Tensor<double>>> params,
                                               GradCheckOptions opt = {}) {
  if (!(opt.eps >= 1e-6 && opt.eps <= 1e-4)) throw Error("finite_difference_check: eps must lie in [1e-6, 1e-4]");
  if (opt.coords_per_tensor < 100) throw Error("finite_difference_check: need at least 100 coordinates per tensor");

  for (auto& [name, p] : params) p.zero_grad();
  Tensor<double> loss = loss_fn();
  if (!std::isfinite(loss.item())) throw Error("finite_difference_check: non-finite loss");
  backward(loss);

  auto eval = [&] {
    NoGradGuard guard;
    double v = loss_fn().item();
    if (!std::isfinite(v)) throw Error("finite_difference_check: non-finite loss under perturbation");
    return v;
  };

  GradCheckResult res;
  Rng rng(opt.seed);
  for (auto& [name, p] : params) {
    const Mat<double> analytic = p.grad();
    const Index n = p.size();
    std::vector<Index> coords;
    if (static_cast<std::size_t>(n) <= opt.coords_per_tensor) {
      for (Index i = 0; i < n; ++i) coords.push_back(i);
    } else {
      std::vector<Index> all(static_cast<std::size_t>(n));
      for (Index i = 0; i < n; ++i) all[static_cast<std::size_t>(i)] = i;
      shuffle(all, rng);
      coords.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(opt.coords_per_tensor));
      std::sort(coords.begin(), coords.end());
    }
    for (Index c : coords) {
      double& x = p.mutable_value().data()[c];
      const double saved = x;
      x = saved + opt.eps;
      const double up = eval();
      x = saved - opt.eps;
      const double down = eval();
      x = saved;
      const double numeric = (up - down) / (2 * opt.eps);
      const double a = analytic.data()[c];
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
      ++res.coordinates_checked;
      if (rel > res.max_relative_error || res.worst_coordinate < 0) {
        res.max_relative_error = std::max(res.max_relative_error, rel);
        if (rel >= res.max_relative_error) {
          res.worst_param = name;
          res.worst_coordinate = c;
          res.analytic = a;
          res.numeric = numeric;
        }
      }
    }
  }
  return res;
}

}  // namespace passatt::nx
