#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "l2p/ops.hpp"
#include "l2p/random.hpp"
#include "l2p/tensor.hpp"

namespace l2p::testing {

inline Tensord random_tensor(Shape shape, Rng& rng, bool requires_grad = true, double lo = -1.0,
                             double hi = 1.0) {
  Vector<double> v(shape_size(shape));
  for (Index i = 0; i < v.size(); ++i) v[i] = rng.uniform(lo, hi);
  return Tensord::from(std::move(shape), std::move(v), requires_grad);
}

/// sum(y * w): a scalar to which every output element contributes.
inline Tensord weighted_sum(const Tensord& y, const Tensord& w) { return sum(mul(y, w)); }

/// |a - n| / max(|a|, |n|, floor): relative error with a floor that keeps
/// near-zero gradient entries from dividing by rounding noise.
inline double relative_error(double analytic, double numeric, double floor = 1e-2) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Largest relative error between backprop gradients of `loss` and central
/// differences with step `h`, over every entry of every tensor in `params`.
inline double gradient_error(const std::function<Tensord()>& loss, std::vector<Tensord> params,
                             double h = 1e-3) {
  for (auto& p : params) p.clear_grad();
  loss().backward();
  std::vector<Vector<double>> analytic;
  for (auto& p : params)
    analytic.push_back(p.has_grad() ? p.grad() : Vector<double>::Zero(p.size()));
  double worst = 0.0;
  NoGradGuard guard;
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& values = params[k].mutable_values();
    for (Index i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + h;
      const double up = loss().item();
      values[i] = saved - h;
      const double down = loss().item();
      values[i] = saved;
      worst = std::max(worst, relative_error(analytic[k][i], (up - down) / (2.0 * h)));
    }
  }
  for (auto& p : params) p.clear_grad();
  return worst;
}

}  // namespace l2p::testing
