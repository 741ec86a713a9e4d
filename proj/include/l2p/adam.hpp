#pragma once

#include <cstdint>
#include <span>
#include <unordered_map>
#include <vector>

#include "l2p/tensor.hpp"

namespace l2p {

struct AdamOptions {
  double learning_rate = 0.03;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

template <typename Scalar>
struct AdamMoments {
  Vector<Scalar> first;
  Vector<Scalar> second;
  /// Number of updates this parameter has received; drives bias correction.
  std::int64_t updates = 0;
};

/// Adam with bias correction. Moments are kept per parameter tensor and
/// created on first use, so parameters that are skipped by a sparse update
/// keep both their values and their moment history untouched.
template <typename Scalar>
class Adam {
 public:
  explicit Adam(AdamOptions options = {}) : options_(options) {}

  /// Updates every tensor in `params` in place, then clears their gradients.
  /// Throws StateError if any parameter lacks a gradient; nothing is updated then.
  void step(std::span<const Tensor<Scalar>> params);
  void step(std::initializer_list<Tensor<Scalar>> params) {
    step(std::span<const Tensor<Scalar>>(params.begin(), params.size()));
  }

  const AdamOptions& options() const { return options_; }
  std::int64_t step_count() const { return step_count_; }

  /// Moments for `param`, or nullptr if it has never been updated.
  const AdamMoments<Scalar>* moments(const Tensor<Scalar>& param) const;

  /// Restores checkpointed state.
  void set_moments(const Tensor<Scalar>& param, AdamMoments<Scalar> moments);
  void set_step_count(std::int64_t count) { step_count_ = count; }

 private:
  AdamOptions options_;
  std::int64_t step_count_ = 0;
  std::unordered_map<const void*, AdamMoments<Scalar>> moments_;
};

extern template class Adam<float>;
extern template class Adam<double>;

}  // namespace l2p
