#pragma once

#include <map>
#include <vector>

#include "l2p/data.hpp"
#include "l2p/random.hpp"

namespace l2p {

/// Bounded per-class store of past samples.
class RehearsalBuffer {
 public:
  explicit RehearsalBuffer(Index capacity_per_class = 0);

  Index capacity_per_class() const { return capacity_; }
  std::size_t size() const { return samples_.size(); }
  bool empty() const { return samples_.empty(); }
  const Dataset& samples() const { return samples_; }
  std::map<int, std::size_t> class_counts() const;

  /// Up to `n` distinct stored samples drawn uniformly.
  Dataset draw(std::size_t n, Rng& rng) const;

  /// For every class in `task`, keeps a uniform random subset of (stored and
  /// new) samples of that class, at most capacity_per_class. Other classes are
  /// left untouched. Kept samples are ordered by (label, uid).
  void retain(const Dataset& task, Rng& rng);

  /// Checkpoint restore.
  void assign(Dataset samples) { samples_ = std::move(samples); }

 private:
  Index capacity_;
  Dataset samples_;
};

}  // namespace l2p
