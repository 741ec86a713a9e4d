#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "l2p/tensor.hpp"

namespace l2p {

/// Square images with `channels` planes of `side` x `side` pixels, stored
/// channel-major (all of channel 0, then channel 1, ...).
struct ImageShape {
  Index channels = 1;
  Index side = 16;

  Index pixels() const { return channels * side * side; }
  bool operator==(const ImageShape&) const = default;
};

struct Sample {
  std::vector<float> pixels;
  int label = 0;
  /// Stable identity of the underlying input; used to cache frozen features.
  std::uint64_t uid = 0;
};

using Dataset = std::vector<Sample>;

/// Contiguous block of images with labels, ready for a forward pass.
struct Batch {
  ImageShape shape;
  std::vector<float> pixels;
  std::vector<int> labels;
  std::vector<std::uint64_t> uids;

  Index size() const { return static_cast<Index>(labels.size()); }
  bool empty() const { return labels.empty(); }
  std::span<const float> image(Index i) const {
    return std::span<const float>(pixels).subspan(static_cast<std::size_t>(i * shape.pixels()),
                                                  static_cast<std::size_t>(shape.pixels()));
  }
};

/// Gathers `indices` of `data` into a batch; every sample must match `shape`.
Batch make_batch(const Dataset& data, std::span<const std::size_t> indices, ImageShape shape);
/// Whole-dataset batch.
Batch make_batch(const Dataset& data, ImageShape shape);
/// Concatenation of two batches with the same image shape.
Batch concat_batches(const Batch& a, const Batch& b);

}  // namespace l2p
