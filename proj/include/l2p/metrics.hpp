#pragma once

#include <optional>
#include <vector>

#include "l2p/data.hpp"
#include "l2p/learner.hpp"
#include "l2p/streams.hpp"

namespace l2p {

/// a[t][i]: accuracy on task i after training through task t, for i <= t.
class AccuracyMatrix {
 public:
  explicit AccuracyMatrix(Index num_tasks = 0);

  Index num_tasks() const { return static_cast<Index>(rows_.size()); }
  /// Rows filled so far.
  Index completed() const;
  double at(Index t, Index i) const;
  void set(Index t, Index i, double accuracy);
  void set_row(Index t, const std::vector<double>& row);
  const std::vector<std::vector<double>>& rows() const { return rows_; }

  bool operator==(const AccuracyMatrix&) const = default;

 private:
  std::vector<std::vector<double>> rows_;
};

/// Mean of the final row.
double average_accuracy(const AccuracyMatrix& m);

/// Mean over tasks i < T of max_{t in [i, T-1)} a[t][i] - a[T-1][i]
/// (zero-based rows). Signed unless `clamp` is set. Not applicable (nullopt)
/// for a single task.
std::optional<double> forgetting(const AccuracyMatrix& m, bool clamp = false);

/// Fraction of correct predictions, evaluated in fixed chunks.
double accuracy(ContinualLearner& learner, const Dataset& data, Index chunk = 256);

/// Row t of the matrix: accuracy on each task test set 0..t.
std::vector<double> evaluate_row(ContinualLearner& learner, const TaskStream& stream, Index t);

struct StreamResult {
  AccuracyMatrix matrix;
  /// Accuracy on the shared test set after each task (shared-test settings).
  std::vector<double> shared_accuracy;
  std::vector<TrainReport> reports;
  double average_accuracy = 0.0;
  std::optional<double> forgetting;
};

/// Trains task by task, evaluating after each boundary. Rehearsal is used
/// when `buffer` is non-null.
StreamResult run_stream(ContinualLearner& learner, const TaskStream& stream, Index epochs,
                        RehearsalBuffer* buffer = nullptr);

struct AgnosticResult {
  double final_accuracy = 0.0;
  std::vector<double> step_losses;
  std::vector<std::uint64_t> selection_counts;
};

/// Single pass over the schedule, one update per batch, then a final test.
AgnosticResult run_agnostic(ContinualLearner& learner, const GaussianStream& stream);

/// Frozen backbone, no prompts, classifier trained sequentially.
StreamResult run_baseline_ftseq_frozen(const TaskStream& stream,
                                       std::shared_ptr<const Backbone<float>> backbone,
                                       const LearnerConfig& config);

}  // namespace l2p
