#include "l2p/adam.hpp"

#include <cmath>

namespace l2p {

template <typename Scalar>
void Adam<Scalar>::step(std::span<const Tensor<Scalar>> params) {
  for (const auto& p : params)
    if (!p.has_grad())
      throw StateError("adam: parameter '" + p.name() + "' has no gradient");

  const double b1 = options_.beta1, b2 = options_.beta2;
  for (auto p : params) {
    auto& state = moments_[p.node().get()];
    if (state.updates == 0) {
      state.first = Vector<Scalar>::Zero(p.size());
      state.second = Vector<Scalar>::Zero(p.size());
    }
    ++state.updates;
    const auto& g = p.grad();
    state.first = static_cast<Scalar>(b1) * state.first + static_cast<Scalar>(1 - b1) * g;
    state.second = static_cast<Scalar>(b2) * state.second +
                   static_cast<Scalar>(1 - b2) * g.cwiseProduct(g);
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.updates));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.updates));
    const auto lr = static_cast<Scalar>(options_.learning_rate);
    const auto eps = static_cast<Scalar>(options_.epsilon);
    auto& values = p.mutable_values();
    values.array() -= lr * (state.first.array() / static_cast<Scalar>(c1)) /
                      ((state.second.array() / static_cast<Scalar>(c2)).sqrt() + eps);
    p.clear_grad();
  }
  ++step_count_;
}

template <typename Scalar>
const AdamMoments<Scalar>* Adam<Scalar>::moments(const Tensor<Scalar>& param) const {
  auto it = moments_.find(param.node().get());
  return it == moments_.end() ? nullptr : &it->second;
}

template <typename Scalar>
void Adam<Scalar>::set_moments(const Tensor<Scalar>& param, AdamMoments<Scalar> moments) {
  if (moments.updates > 0 &&
      (moments.first.size() != param.size() || moments.second.size() != param.size()))
    throw DimensionError("adam: moments do not match parameter '" + param.name() + "'");
  moments_[param.node().get()] = std::move(moments);
}

template class Adam<float>;
template class Adam<double>;

}  // namespace l2p
