#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "l2p/backbone.hpp"
#include "l2p/learner.hpp"
#include "l2p/metrics.hpp"
#include "l2p/streams.hpp"
#include "l2p/synthetic.hpp"

namespace l2p {

enum class Method { l2p, ftseq_frozen };

std::string to_string(Method m);
Method parse_method(const std::string& name);

struct PretrainSettings {
  Index train_per_class = 200;
  Index heldout_per_class = 20;
  Index epochs = 10;
  Index batch_size = 32;
  double learning_rate = 1e-3;
  bool operator==(const PretrainSettings&) const = default;
};

/// Stream shape for every setting; each setting reads the fields it needs.
struct StreamSettings {
  Index num_tasks = 5;
  Index classes_per_task = 4;
  Index train_per_class = 150;
  Index test_per_class = 20;
  bool group_by_family = true;
  /// Domain-incremental: class count and unseen test domains.
  Index num_classes = 10;
  Index test_domains = 2;
  /// Task-agnostic schedule.
  Index agnostic_classes = 20;
  Index classes_per_group = 4;
  Index total_steps = 400;
  std::optional<double> sigma;
  Index agnostic_batch_size = 32;
  /// Equal step segments of the task-agnostic run; one histogram row and one
  /// checkpoint per segment.
  Index segments = 5;
};

/// Everything a run depends on. A run is a pure function of this value.
struct ExperimentConfig {
  Setting setting = Setting::class_incremental;
  Method method = Method::l2p;
  std::uint64_t seed = 0;
  std::string output_dir = "runs/default";
  GeneratorConfig generator;
  BackboneConfig backbone;
  PretrainSettings pretrain;
  StreamSettings stream;
  LearnerConfig learner;

  ExperimentConfig();

  /// Throws ConfigError naming the offending field.
  void validate() const;
  /// Digest of the canonical JSON form, excluding output_dir.
  std::uint64_t digest() const;
  /// Digest of the fields the pretrained backbone depends on.
  std::uint64_t backbone_digest() const;

  nlohmann::ordered_json to_json() const;
  /// Missing fields keep their defaults; unknown fields and type mismatches
  /// raise ConfigError with the dotted field path.
  static ExperimentConfig from_json(const nlohmann::json& doc);
  static ExperimentConfig load(const std::filesystem::path& path);
};

std::string hex_digest(std::uint64_t value);

/// Generator with every seed derived from the experiment seed.
SyntheticGenerator make_generator(const ExperimentConfig& config);

struct PretrainedBackbone {
  std::shared_ptr<const Backbone<float>> backbone;
  PretrainReport report;
};

/// Pretrains on generator classes below backbone.pretrain_classes.
PretrainedBackbone pretrain_backbone(const ExperimentConfig& config);

/// Loads `dir`/backbone-<digest>.l2pw when present, else pretrains and stores it.
PretrainedBackbone cached_backbone(const ExperimentConfig& config,
                                   const std::filesystem::path& dir);

/// Task streams for the boundary settings.
TaskStream make_task_stream(const ExperimentConfig& config, const SyntheticGenerator& generator);
GaussianStream make_gaussian_stream(const ExperimentConfig& config,
                                    const SyntheticGenerator& generator);

/// Training progress for one task (or one task-agnostic segment).
struct TaskRecord {
  std::vector<double> losses;
  Index steps = 0;
  Index samples = 0;
  /// Accuracy on task 0..t after this task; the shared test set for
  /// single-test settings.
  std::vector<double> accuracies;
  std::vector<std::uint64_t> histogram;
  bool operator==(const TaskRecord&) const = default;
};

struct RunRecord {
  std::uint64_t config_digest = 0;
  std::uint64_t backbone_digest = 0;
  Setting setting = Setting::class_incremental;
  Method method = Method::l2p;
  Variant variant = Variant::full;
  std::uint64_t seed = 0;
  Index pool_size = 0;
  Index top_n = 0;
  double pretrain_accuracy = 0.0;
  std::vector<TaskRecord> tasks;
  AccuracyMatrix matrix;
  double average_accuracy = 0.0;
  std::optional<double> forgetting;
  double wall_clock_seconds = 0.0;

  /// T x M selection counts.
  std::vector<std::vector<std::uint64_t>> histogram() const;

  /// Stable field order. `with_timing` false drops the wall clock.
  nlohmann::ordered_json to_json(bool with_timing = true) const;
  static RunRecord from_json(const nlohmann::json& doc);
  static RunRecord load(const std::filesystem::path& path);
};

/// In-memory run, one task (or task-agnostic segment) per step. Checkpoints
/// can be taken between steps and restored into a fresh instance.
class Experiment {
 public:
  Experiment(ExperimentConfig config, PretrainedBackbone backbone);
  ~Experiment();

  const ExperimentConfig& config() const { return config_; }
  /// Tasks (or segments) in the run.
  Index num_units() const;
  Index completed() const { return static_cast<Index>(record_.tasks.size()); }
  const RunRecord& record() const { return record_; }
  ContinualLearner& learner();
  /// Seconds spent so far, carried through checkpoints.
  void set_wall_clock(double seconds) { record_.wall_clock_seconds = seconds; }

  /// Trains the next unit and evaluates.
  void step();
  /// Trains every remaining unit and fills the final metrics.
  RunRecord finish();

  /// Serialized learner, buffer and progress.
  std::vector<std::uint8_t> checkpoint() const;
  /// Restores from checkpoint bytes; throws StateError on digest mismatch and
  /// FormatError on malformed bytes.
  void restore(const std::vector<std::uint8_t>& bytes);

 private:
  struct State;
  ExperimentConfig config_;
  PretrainedBackbone backbone_;
  RunRecord record_;
  std::unique_ptr<State> state_;
};

/// Files written by a run inside its output directory.
struct RunPaths {
  std::filesystem::path dir;
  std::filesystem::path config() const { return dir / "config.json"; }
  std::filesystem::path record() const { return dir / "record.json"; }
  std::filesystem::path partial() const { return dir / "PARTIAL"; }
  std::filesystem::path checkpoint(Index unit) const;
};

/// Full run on disk: config copy, cached backbone, a checkpoint after every
/// unit, then the record. On failure a PARTIAL marker describes what was done.
RunRecord run_experiment(const ExperimentConfig& config, const std::filesystem::path& out_dir);

/// Continues a run from a checkpoint file. The run's config is read from
/// `config_path` if given, else from config.json next to the checkpoint
/// directory; a digest mismatch is a StateError.
RunRecord resume_experiment(const std::filesystem::path& checkpoint,
                            const std::optional<std::filesystem::path>& config_path = {});

/// Mean Jaccard overlap between the top-N most used prompts of every pair of
/// rows; 1 when there are fewer than two rows.
double mean_topn_jaccard(const std::vector<std::vector<std::uint64_t>>& histogram, Index top_n);

/// CSV of the histogram (header of prompt indices, one row per task),
/// followed by a blank line and the pairwise top-N Jaccard table.
void emit_histogram(const RunRecord& record, const std::filesystem::path& path);

}  // namespace l2p
