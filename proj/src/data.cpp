#include "l2p/data.hpp"

#include <numeric>
#include <string>

namespace l2p {

Batch make_batch(const Dataset& data, std::span<const std::size_t> indices, ImageShape shape) {
  Batch batch;
  batch.shape = shape;
  const auto n = static_cast<std::size_t>(shape.pixels());
  batch.pixels.reserve(indices.size() * n);
  batch.labels.reserve(indices.size());
  batch.uids.reserve(indices.size());
  for (std::size_t i : indices) {
    if (i >= data.size()) throw InputError("make_batch: index " + std::to_string(i) + " out of range");
    const Sample& s = data[i];
    if (s.pixels.size() != n)
      throw InputError("make_batch: sample " + std::to_string(i) + " has " +
                       std::to_string(s.pixels.size()) + " pixels, expected " + std::to_string(n));
    batch.pixels.insert(batch.pixels.end(), s.pixels.begin(), s.pixels.end());
    batch.labels.push_back(s.label);
    batch.uids.push_back(s.uid);
  }
  return batch;
}

Batch make_batch(const Dataset& data, ImageShape shape) {
  std::vector<std::size_t> all(data.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  return make_batch(data, all, shape);
}

Batch concat_batches(const Batch& a, const Batch& b) {
  if (a.empty()) return b;
  if (b.empty()) return a;
  if (!(a.shape == b.shape)) throw DimensionError("concat_batches: image shapes differ");
  Batch out = a;
  out.pixels.insert(out.pixels.end(), b.pixels.begin(), b.pixels.end());
  out.labels.insert(out.labels.end(), b.labels.begin(), b.labels.end());
  out.uids.insert(out.uids.end(), b.uids.begin(), b.uids.end());
  return out;
}

}  // namespace l2p
