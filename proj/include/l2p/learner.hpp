#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "l2p/adam.hpp"
#include "l2p/backbone.hpp"
#include "l2p/data.hpp"
#include "l2p/prompt_pool.hpp"
#include "l2p/rehearsal.hpp"

namespace l2p {

/// Which parts of the prompt mechanism are active.
enum class Variant {
  full,          ///< key-value pool with optional diversified selection
  single_prompt, ///< one prompt shared by every input; no query
  mean_key,      ///< keys are the row-mean of their prompt, not learned
  no_diversify,  ///< diversified selection forced off
};

std::string to_string(Variant v);
Variant parse_variant(const std::string& name);

struct LearnerConfig {
  Index pool_size = 10;
  Index top_n = 5;
  Index prompt_length = 5;
  double lambda = 0.5;
  double learning_rate = 0.03;
  Index batch_size = 32;
  Index epochs = 5;
  bool diversified = false;
  /// Rehearsal capacity per class; 0 disables replay.
  Index buffer_per_class = 0;
  std::uint64_t seed = 0;
  Variant variant = Variant::full;

  void validate() const;
  /// Applies the variant: single_prompt forces M = N = 1, no_diversify clears
  /// the diversified flag.
  LearnerConfig resolved() const;
};

struct TrainReport {
  std::vector<double> epoch_losses;
  /// Per-prompt selection counts accumulated over the call.
  std::vector<std::uint64_t> selection_counts;
  Index steps = 0;
  Index samples = 0;
  bool operator==(const TrainReport&) const = default;
};

/// Shared sequencing of training over tasks; concrete learners provide the
/// per-batch update and prediction.
class ContinualLearner {
 public:
  explicit ContinualLearner(LearnerConfig config);
  virtual ~ContinualLearner() = default;

  const LearnerConfig& config() const { return config_; }

  /// Trains on one task with known boundaries for `epochs` passes.
  TrainReport train_task(const Dataset& task, Index epochs);
  /// As train_task, but each batch also replays an equal-size uniform draw
  /// from `buffer`; the buffer then retains a class-balanced sample of `task`.
  TrainReport train_task_with_rehearsal(const Dataset& task, RehearsalBuffer& buffer,
                                        Index epochs);

  /// One optimizer update on `batch`. Returns the batch loss.
  virtual double train_step(const Batch& batch, TrainReport& report) = 0;
  /// Predicted class per row; never mutates learnable state.
  virtual std::vector<int> predict(const Batch& batch) = 0;

  virtual Index num_classes() const = 0;
  virtual ImageShape image_shape() const = 0;
  /// Columns of the selection histogram (0 for learners without prompts).
  virtual Index pool_size() const { return 0; }
  /// Digest of the frozen backbone, checked after every task.
  virtual std::uint64_t backbone_digest() const = 0;
  /// Digest of every learnable tensor and optimizer counter.
  virtual std::uint64_t state_digest() const = 0;

  Index tasks_seen() const { return tasks_seen_; }
  void set_tasks_seen(Index n) { tasks_seen_ = n; }

 protected:
  virtual void on_task_begin() {}

  LearnerConfig config_;

 private:
  TrainReport run_task(const Dataset& task, Index epochs, RehearsalBuffer* buffer);
  Index tasks_seen_ = 0;
};

/// Linear head over pooled features, covering the whole class vocabulary.
template <typename Scalar>
struct Classifier {
  Classifier(Index features, Index classes, std::uint64_t seed);
  Tensor<Scalar> operator()(const Tensor<Scalar>& features) const;
  std::vector<Tensor<Scalar>> parameters() const { return {weight, bias}; }

  Tensor<Scalar> weight;  ///< [D x C]
  Tensor<Scalar> bias;    ///< [C]
};

/// Terms of the training objective for one batch.
template <typename Scalar>
struct LossTerms {
  Tensor<Scalar> loss;           ///< prediction + lambda * surrogate
  Tensor<Scalar> prediction;     ///< mean cross-entropy
  Tensor<Scalar> surrogate;      ///< mean over samples of summed key distances
  Tensor<Scalar> logits;         ///< [B x C]
  Tensor<Scalar> pooled;         ///< [B x D]
  std::vector<Selection> selections;
};

enum class Phase { train, eval };

/// Prompt-pool learner over a frozen backbone.
///
/// Per sample: the frozen query feature picks N prompts by key distance, the
/// prompts are prepended to the embedded input, the outputs at the N * L_p
/// prompt positions are averaged and classified. The loss adds lambda times
/// the summed distances between the query and the chosen keys; each update
/// touches only the chosen prompts, the chosen keys and the classifier.
template <typename Scalar>
class PromptLearner final : public ContinualLearner {
 public:
  PromptLearner(std::shared_ptr<const Backbone<Scalar>> backbone, Index num_classes,
                LearnerConfig config);

  LossTerms<Scalar> forward_loss(const Batch& batch, Phase phase = Phase::train);
  /// [B x C] logits with standard (non-diversified) selection and no graph.
  Tensor<Scalar> logits(const Batch& batch);

  double train_step(const Batch& batch, TrainReport& report) override;
  std::vector<int> predict(const Batch& batch) override;

  Index num_classes() const override { return num_classes_; }
  ImageShape image_shape() const override { return backbone_->config().image; }
  Index pool_size() const override { return pool_.size(); }
  std::uint64_t backbone_digest() const override { return backbone_->digest(); }
  std::uint64_t state_digest() const override;

  /// Query features [B x D_k], memoized per sample uid.
  Tensor<Scalar> queries(const Batch& batch);

  const Backbone<Scalar>& backbone() const { return *backbone_; }
  PromptPool<Scalar>& pool() { return pool_; }
  const PromptPool<Scalar>& pool() const { return pool_; }
  Classifier<Scalar>& classifier() { return classifier_; }
  const Classifier<Scalar>& classifier() const { return classifier_; }
  Adam<Scalar>& optimizer() { return adam_; }
  const Adam<Scalar>& optimizer() const { return adam_; }
  /// Counts accumulated over every training batch so far.
  FrequencyTable& running_table() { return running_; }
  /// Counts as of the end of the previous task; read by diversified selection
  /// whenever task boundaries have been announced.
  FrequencyTable& snapshot_table() { return snapshot_; }
  const FrequencyTable& running_table() const { return running_; }
  const FrequencyTable& snapshot_table() const { return snapshot_; }
  bool boundaries_known() const { return boundaries_known_; }
  void set_boundaries_known(bool known) { boundaries_known_ = known; }

  /// Every learnable tensor: prompts, keys (unless derived), classifier.
  std::vector<Tensor<Scalar>> parameters() const;
  /// For the mean-key variant, sets each key to the row-mean of its prompt.
  void refresh_derived_keys();

 protected:
  void on_task_begin() override;

 private:
  std::vector<Selection> choose(const Batch& batch, const Tensor<Scalar>& queries, Phase phase);

  std::shared_ptr<const Backbone<Scalar>> backbone_;
  Index num_classes_;
  PromptPool<Scalar> pool_;
  Classifier<Scalar> classifier_;
  Adam<Scalar> adam_;
  FrequencyTable running_;
  FrequencyTable snapshot_;
  bool boundaries_known_ = false;
  std::unordered_map<std::uint64_t, Vector<Scalar>> query_cache_;
};

/// Sequential fine-tuning of a classifier on frozen [class] features, with no
/// prompts.
class LinearProbeLearner final : public ContinualLearner {
 public:
  LinearProbeLearner(std::shared_ptr<const Backbone<float>> backbone, Index num_classes,
                     LearnerConfig config);

  double train_step(const Batch& batch, TrainReport& report) override;
  std::vector<int> predict(const Batch& batch) override;

  Index num_classes() const override { return num_classes_; }
  ImageShape image_shape() const override { return backbone_->config().image; }
  std::uint64_t backbone_digest() const override { return backbone_->digest(); }
  std::uint64_t state_digest() const override;

  Classifier<float>& classifier() { return classifier_; }
  Adam<float>& optimizer() { return adam_; }

 private:
  Tensor<float> features(const Batch& batch);

  std::shared_ptr<const Backbone<float>> backbone_;
  Index num_classes_;
  Classifier<float> classifier_;
  Adam<float> adam_;
  std::unordered_map<std::uint64_t, Vector<float>> cache_;
};

/// Row-wise argmax.
template <typename Scalar>
std::vector<int> argmax_rows(const Tensor<Scalar>& logits);

extern template struct Classifier<float>;
extern template struct Classifier<double>;
extern template class PromptLearner<float>;
extern template class PromptLearner<double>;

}  // namespace l2p
