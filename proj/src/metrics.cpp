#include "l2p/metrics.hpp"

#include <algorithm>
#include <numeric>

namespace l2p {

AccuracyMatrix::AccuracyMatrix(Index num_tasks) {
  for (Index t = 0; t < num_tasks; ++t)
    rows_.emplace_back(static_cast<std::size_t>(t + 1), -1.0);
}

Index AccuracyMatrix::completed() const {
  Index n = 0;
  for (const auto& r : rows_) {
    if (std::any_of(r.begin(), r.end(), [](double v) { return v < 0.0; })) break;
    ++n;
  }
  return n;
}

double AccuracyMatrix::at(Index t, Index i) const {
  if (t < 0 || t >= num_tasks() || i < 0 || i > t)
    throw InputError("accuracy matrix: entry (" + std::to_string(t) + ", " + std::to_string(i) +
                     ") outside the lower triangle");
  return rows_[static_cast<std::size_t>(t)][static_cast<std::size_t>(i)];
}

void AccuracyMatrix::set(Index t, Index i, double accuracy) {
  if (t < 0 || t >= num_tasks() || i < 0 || i > t)
    throw InputError("accuracy matrix: entry (" + std::to_string(t) + ", " + std::to_string(i) +
                     ") outside the lower triangle");
  if (accuracy < 0.0 || accuracy > 1.0)
    throw InputError("accuracy matrix: value outside [0, 1]");
  rows_[static_cast<std::size_t>(t)][static_cast<std::size_t>(i)] = accuracy;
}

void AccuracyMatrix::set_row(Index t, const std::vector<double>& row) {
  if (static_cast<Index>(row.size()) != t + 1)
    throw DimensionError("accuracy matrix: row " + std::to_string(t) + " needs " +
                         std::to_string(t + 1) + " entries");
  for (Index i = 0; i <= t; ++i) set(t, i, row[static_cast<std::size_t>(i)]);
}

double average_accuracy(const AccuracyMatrix& m) {
  if (m.num_tasks() == 0 || m.completed() != m.num_tasks())
    throw StateError("average_accuracy: matrix incomplete");
  const auto& last = m.rows().back();
  // Extended accumulation keeps means of repeated values exact.
  const long double total = std::accumulate(last.begin(), last.end(), 0.0L);
  return static_cast<double>(total / static_cast<long double>(last.size()));
}

std::optional<double> forgetting(const AccuracyMatrix& m, bool clamp) {
  if (m.num_tasks() == 0 || m.completed() != m.num_tasks())
    throw StateError("forgetting: matrix incomplete");
  const Index T = m.num_tasks();
  if (T < 2) return std::nullopt;
  long double total = 0.0L;
  for (Index i = 0; i + 1 < T; ++i) {
    double best = m.at(i, i);
    for (Index t = i + 1; t + 1 < T; ++t) best = std::max(best, m.at(t, i));
    double drop = best - m.at(T - 1, i);
    if (clamp) drop = std::max(drop, 0.0);
    total += drop;
  }
  return static_cast<double>(total / static_cast<long double>(T - 1));
}

double accuracy(ContinualLearner& learner, const Dataset& data, Index chunk) {
  if (data.empty()) throw InputError("accuracy: empty dataset");
  Index correct = 0;
  const auto step = static_cast<std::size_t>(chunk);
  for (std::size_t start = 0; start < data.size(); start += step) {
    std::vector<std::size_t> idx(std::min(step, data.size() - start));
    std::iota(idx.begin(), idx.end(), start);
    const auto batch = make_batch(data, idx, learner.image_shape());
    const auto predicted = learner.predict(batch);
    for (std::size_t i = 0; i < predicted.size(); ++i)
      correct += predicted[i] == batch.labels[i];
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

std::vector<double> evaluate_row(ContinualLearner& learner, const TaskStream& stream, Index t) {
  std::vector<double> row;
  for (Index i = 0; i <= t; ++i)
    row.push_back(accuracy(learner, stream.tasks[static_cast<std::size_t>(i)].test));
  return row;
}

StreamResult run_stream(ContinualLearner& learner, const TaskStream& stream, Index epochs,
                        RehearsalBuffer* buffer) {
  StreamResult result;
  result.matrix = AccuracyMatrix(stream.num_tasks());
  for (Index t = 0; t < stream.num_tasks(); ++t) {
    const auto& task = stream.tasks[static_cast<std::size_t>(t)];
    result.reports.push_back(buffer ? learner.train_task_with_rehearsal(task.train, *buffer, epochs)
                                    : learner.train_task(task.train, epochs));
    if (stream.has_shared_test()) {
      const double acc = accuracy(learner, stream.shared_test);
      result.shared_accuracy.push_back(acc);
      for (Index i = 0; i <= t; ++i) result.matrix.set(t, i, acc);
    } else {
      result.matrix.set_row(t, evaluate_row(learner, stream, t));
    }
  }
  if (stream.has_shared_test()) {
    result.average_accuracy = result.shared_accuracy.back();
  } else {
    result.average_accuracy = average_accuracy(result.matrix);
    result.forgetting = forgetting(result.matrix);
  }
  return result;
}

AgnosticResult run_agnostic(ContinualLearner& learner, const GaussianStream& stream) {
  AgnosticResult result;
  TrainReport report;
  report.selection_counts.assign(static_cast<std::size_t>(learner.pool_size()), 0);
  for (Index step = 0; step < stream.total_steps(); ++step)
    result.step_losses.push_back(learner.train_step(stream.batch(step), report));
  result.selection_counts = report.selection_counts;
  result.final_accuracy = accuracy(learner, stream.test());
  return result;
}

StreamResult run_baseline_ftseq_frozen(const TaskStream& stream,
                                       std::shared_ptr<const Backbone<float>> backbone,
                                       const LearnerConfig& config) {
  LinearProbeLearner learner(std::move(backbone), stream.num_classes(), config);
  return run_stream(learner, stream, config.epochs);
}

}  // namespace l2p
