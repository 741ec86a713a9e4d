#pragma once

#include <concepts>
#include <optional>
#include <cstdint>
#include <string>
#include <vector>

#include "l2p/data.hpp"
#include "l2p/synthetic.hpp"

namespace l2p {

enum class Setting { class_incremental, domain_incremental, task_agnostic };

std::string to_string(Setting s);
Setting parse_setting(const std::string& name);

struct Task {
  /// Generator class ids in this task (vocabulary labels are positions in
  /// TaskStream::vocabulary).
  std::vector<Index> classes;
  Dataset train;
  /// Empty when the stream has a single shared test set.
  Dataset test;
};

/// A sequence of tasks with known boundaries.
class TaskStream {
 public:
  Setting setting = Setting::class_incremental;
  ImageShape image;
  /// Generator class id of every vocabulary label.
  std::vector<Index> vocabulary;
  std::vector<Task> tasks;
  /// Pooled test set for settings without per-task test sets.
  Dataset shared_test;

  Index num_tasks() const { return static_cast<Index>(tasks.size()); }
  Index num_classes() const { return static_cast<Index>(vocabulary.size()); }
  bool has_shared_test() const { return !shared_test.empty(); }
  /// Checks the structural invariants of the setting; throws StateError.
  void validate() const;
};

struct ClassIncrementalOptions {
  Index num_tasks = 5;
  Index classes_per_task = 4;
  Index train_per_class = 40;
  Index test_per_class = 20;
  /// Generator classes below this id are reserved (for pretraining).
  Index first_class = 10;
  /// With a family-structured generator whose family size equals
  /// classes_per_task, each task takes one whole family.
  bool group_by_family = true;
  std::uint64_t seed = 0;
};

/// Disjoint class partition in seeded random order; labels are assigned in
/// task order so task t owns labels [t * k, (t + 1) * k).
TaskStream make_class_incremental(const SyntheticGenerator& generator,
                                  const ClassIncrementalOptions& options);

struct DomainIncrementalOptions {
  Index num_tasks = 4;
  Index num_classes = 10;
  Index train_per_class = 40;
  Index test_per_class = 10;
  /// Unseen domains pooled into the single test set.
  Index test_domains = 2;
  Index first_class = 10;
  std::uint64_t seed = 0;
};

/// Fixed class set; task t draws from domain t + 1. The test set pools
/// domains num_tasks + 1 ... num_tasks + test_domains, none used in training.
TaskStream make_domain_incremental(const SyntheticGenerator& generator,
                                   const DomainIncrementalOptions& options);

struct GaussianScheduleOptions {
  Index num_classes = 20;
  /// Classes sharing one presence peak; peaks are evenly spaced.
  Index classes_per_group = 4;
  Index total_steps = 100;
  /// Presence width in steps; unset selects half the spacing between peaks.
  std::optional<double> sigma;
  Index batch_size = 32;
  Index test_per_class = 20;
  Index first_class = 10;
  /// With a family-structured generator whose family size equals
  /// classes_per_group, each peak group is one whole family.
  bool group_by_family = true;
  std::uint64_t seed = 0;
};

/// Task-agnostic stream: class c is present at step s with weight
/// exp(-(s - mu_c)^2 / (2 sigma^2)). Batches are generated on demand, each
/// from fresh instances, and there is no notion of a task.
class GaussianStream {
 public:
  GaussianStream(const SyntheticGenerator& generator, GaussianScheduleOptions options);

  Index total_steps() const { return options_.total_steps; }
  Index num_classes() const { return static_cast<Index>(vocabulary_.size()); }
  ImageShape image() const { return generator_.image(); }
  double sigma() const { return sigma_; }
  const std::vector<Index>& vocabulary() const { return vocabulary_; }
  /// Peak step of each vocabulary label.
  const std::vector<double>& centers() const { return centers_; }

  /// Unnormalized presence weight of every label at `step`.
  std::vector<double> weights(Index step) const;
  /// Deterministic batch for `step` in [0, total_steps).
  Batch batch(Index step) const;
  const Dataset& test() const { return test_; }

 private:
  SyntheticGenerator generator_;
  GaussianScheduleOptions options_;
  double sigma_;
  std::vector<Index> vocabulary_;
  std::vector<double> centers_;
  Dataset test_;
};

/// Streams that announce task boundaries.
template <typename T>
concept BoundaryStream = requires(const T& s) {
  { s.tasks } -> std::convertible_to<std::vector<Task>>;
  { s.num_tasks() } -> std::convertible_to<Index>;
};

}  // namespace l2p
