#pragma once

#include <cstdint>
#include <span>
#include <string_view>

#include "l2p/tensor.hpp"

namespace l2p {

/// FNV-1a accumulator; content digests for parameters and configs.
class Fnv1a {
 public:
  void update(const void* data, std::size_t bytes) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < bytes; ++i) {
      hash_ ^= p[i];
      hash_ *= 0x100000001b3ULL;
    }
  }
  void update(std::string_view s) { update(s.data(), s.size()); }
  template <typename T>
  void update_value(const T& v) { update(&v, sizeof(T)); }

  std::uint64_t value() const { return hash_; }

 private:
  std::uint64_t hash_ = 0xcbf29ce484222325ULL;
};

/// Digest over names, shapes and raw value bytes of the tensors, in order.
template <typename Scalar>
std::uint64_t parameter_digest(std::span<const Tensor<Scalar>> params) {
  Fnv1a h;
  for (const auto& p : params) {
    h.update(p.name());
    for (Index e : p.shape()) h.update_value(e);
    h.update(p.values().data(), static_cast<std::size_t>(p.size()) * sizeof(Scalar));
  }
  return h.value();
}

}  // namespace l2p
