#include "l2p/rehearsal.hpp"

#include <algorithm>
#include <numeric>

namespace l2p {

RehearsalBuffer::RehearsalBuffer(Index capacity_per_class) : capacity_(capacity_per_class) {
  if (capacity_ < 0) throw ConfigError("rehearsal.buffer_per_class must be nonnegative");
}

std::map<int, std::size_t> RehearsalBuffer::class_counts() const {
  std::map<int, std::size_t> out;
  for (const auto& s : samples_) ++out[s.label];
  return out;
}

Dataset RehearsalBuffer::draw(std::size_t n, Rng& rng) const {
  n = std::min(n, samples_.size());
  std::vector<std::size_t> idx(samples_.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  // Partial Fisher-Yates: the first n positions become the draw.
  for (std::size_t i = 0; i < n; ++i) {
    const auto j = i + static_cast<std::size_t>(rng.below(idx.size() - i));
    std::swap(idx[i], idx[j]);
  }
  Dataset out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(samples_[idx[i]]);
  return out;
}

void RehearsalBuffer::retain(const Dataset& task, Rng& rng) {
  std::map<int, Dataset> by_class;
  for (const auto& s : task) by_class[s.label].push_back(s);
  Dataset kept;
  for (const auto& s : samples_)
    if (!by_class.count(s.label)) kept.push_back(s);
  for (auto& [label, fresh] : by_class) {
    Dataset pool;
    for (const auto& s : samples_)
      if (s.label == label) pool.push_back(s);
    pool.insert(pool.end(), fresh.begin(), fresh.end());
    rng.shuffle(pool);
    if (static_cast<Index>(pool.size()) > capacity_) pool.resize(static_cast<std::size_t>(capacity_));
    kept.insert(kept.end(), pool.begin(), pool.end());
  }
  std::sort(kept.begin(), kept.end(), [](const Sample& a, const Sample& b) {
    return a.label < b.label || (a.label == b.label && a.uid < b.uid);
  });
  samples_ = std::move(kept);
}

}  // namespace l2p
