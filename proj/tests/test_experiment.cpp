#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "l2p/binary_io.hpp"
#include "l2p/experiment.hpp"

using namespace l2p;
namespace fs = std::filesystem;

namespace {

ExperimentConfig tiny_experiment() {
  ExperimentConfig c;
  c.generator.image = {1, 8};
  c.generator.num_classes = 12;
  c.generator.classes_per_family = 2;
  c.backbone.image = {1, 8};
  c.backbone.patch = 4;
  c.backbone.embed_dim = 8;
  c.backbone.key_dim = 8;
  c.backbone.depth = 1;
  c.backbone.heads = 2;
  c.backbone.pretrain_classes = 4;
  c.pretrain.train_per_class = 8;
  c.pretrain.heldout_per_class = 2;
  c.pretrain.epochs = 1;
  c.stream.num_tasks = 3;
  c.stream.classes_per_task = 2;
  c.stream.train_per_class = 6;
  c.stream.test_per_class = 4;
  c.stream.agnostic_classes = 4;
  c.stream.classes_per_group = 2;
  c.stream.total_steps = 6;
  c.stream.segments = 3;
  c.stream.agnostic_batch_size = 4;
  c.learner.pool_size = 4;
  c.learner.top_n = 2;
  c.learner.prompt_length = 2;
  c.learner.batch_size = 8;
  c.learner.epochs = 1;
  return c;
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("l2p_exp_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string text(const RunRecord& r) { return r.to_json(false).dump(); }

}  // namespace

TEST_CASE("config round-trips through json and reports fields") {
  const auto c = tiny_experiment();
  const auto back = ExperimentConfig::from_json(nlohmann::json::parse(c.to_json().dump()));
  CHECK(back.digest() == c.digest());
  CHECK(back.to_json() == c.to_json());

  auto other = c;
  other.output_dir = "elsewhere";
  CHECK(other.digest() == c.digest());
  other.learner.lambda = 0.25;
  CHECK(other.digest() != c.digest());

  auto doc = nlohmann::json::parse(c.to_json().dump());
  doc["learner"]["colour"] = 1;
  CHECK_THROWS_WITH_AS(ExperimentConfig::from_json(doc), doctest::Contains("learner.colour"),
                       ConfigError);
  doc = nlohmann::json::parse(c.to_json().dump());
  doc["learner"]["top_n"] = "two";
  CHECK_THROWS_WITH_AS(ExperimentConfig::from_json(doc), doctest::Contains("learner.top_n"),
                       ConfigError);
  doc["learner"]["top_n"] = 9;
  CHECK_THROWS_WITH_AS(ExperimentConfig::from_json(doc), doctest::Contains("learner.top_n"),
                       ConfigError);
  doc = nlohmann::json::parse(c.to_json().dump());
  doc["ablation"] = "no_keys";
  CHECK_THROWS_WITH_AS(ExperimentConfig::from_json(doc), doctest::Contains("ablation"),
                       ConfigError);
  CHECK(ExperimentConfig::from_json(nlohmann::json::object()).digest() ==
        ExperimentConfig{}.digest());
}

TEST_CASE("same config gives the same record") {
  const auto c = tiny_experiment();
  const auto backbone = pretrain_backbone(c);
  const auto a = Experiment(c, backbone).finish();
  const auto b = Experiment(c, pretrain_backbone(c)).finish();
  CHECK(text(a) == text(b));
  CHECK(a.matrix.completed() == 3);
  CHECK(a.forgetting.has_value());
  CHECK(RunRecord::from_json(nlohmann::json::parse(a.to_json().dump())).to_json() == a.to_json());
}

TEST_CASE("histogram rows count N selections per training sample") {
  for (auto variant : {Variant::full, Variant::single_prompt}) {
    auto c = tiny_experiment();
    c.learner.variant = variant;
    c.learner.buffer_per_class = variant == Variant::full ? 2 : 0;
    const auto r = Experiment(c, pretrain_backbone(c)).finish();
    const auto hist = r.histogram();
    REQUIRE(hist.size() == 3);
    for (std::size_t t = 0; t < hist.size(); ++t) {
      std::uint64_t total = 0;
      for (auto v : hist[t]) total += v;
      CHECK(total == static_cast<std::uint64_t>(r.tasks[t].samples * r.top_n));
    }
    if (variant == Variant::single_prompt) {
      CHECK(r.pool_size == 1);
      CHECK(hist[0].size() == 1);
      CHECK(r.to_json()["ablation"] == "single_prompt");
    }
  }
}

TEST_CASE("resume from a checkpoint reproduces the uninterrupted run") {
  for (auto setting : {Setting::class_incremental, Setting::task_agnostic}) {
    auto c = tiny_experiment();
    c.setting = setting;
    if (setting == Setting::class_incremental) c.learner.buffer_per_class = 2;
    const auto backbone = pretrain_backbone(c);
    Experiment full(c, backbone);
    const auto expected = full.finish();

    Experiment first(c, backbone);
    first.step();
    first.step();
    const auto bytes = first.checkpoint();
    Experiment second(c, backbone);
    second.restore(bytes);
    CHECK(second.checkpoint() == bytes);
    CHECK(text(second.finish()) == text(expected));
  }
}

TEST_CASE("restore refuses another config and malformed bytes") {
  const auto c = tiny_experiment();
  const auto backbone = pretrain_backbone(c);
  Experiment e(c, backbone);
  e.step();
  const auto bytes = e.checkpoint();

  auto altered = c;
  altered.learner.lambda = 0.1;
  Experiment other(altered, backbone);
  CHECK_THROWS_WITH_AS(other.restore(bytes), doctest::Contains("digest mismatch"), StateError);

  auto truncated = bytes;
  truncated.resize(truncated.size() - 5);
  CHECK_THROWS_WITH_AS(Experiment(c, backbone).restore(truncated), doctest::Contains("byte offset"),
                       FormatError);
  auto bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(Experiment(c, backbone).restore(bad), FormatError);
}

TEST_CASE("frequency tables survive a checkpoint exactly") {
  auto c = tiny_experiment();
  c.learner.diversified = true;
  const auto backbone = pretrain_backbone(c);
  Experiment e(c, backbone);
  e.step();
  auto& learner = dynamic_cast<PromptLearner<float>&>(e.learner());
  const auto running = learner.running_table().counts();
  Experiment copy(c, backbone);
  copy.restore(e.checkpoint());
  auto& restored = dynamic_cast<PromptLearner<float>&>(copy.learner());
  CHECK(restored.running_table().counts() == running);
  CHECK(restored.snapshot_table().counts() == learner.snapshot_table().counts());
  CHECK(restored.state_digest() == learner.state_digest());
}

TEST_CASE("run on disk writes record and checkpoints, resume matches") {
  const auto root = scratch("run");
  const auto c = tiny_experiment();
  const auto record = run_experiment(c, root / "a");
  CHECK(fs::exists(root / "a" / "record.json"));
  CHECK(fs::exists(root / "a" / "config.json"));
  CHECK_FALSE(fs::exists(root / "a" / "PARTIAL"));
  CHECK(fs::exists(root / "backbone-cache"));
  const RunPaths paths{root / "a"};
  for (Index t = 0; t < 3; ++t) CHECK(fs::exists(paths.checkpoint(t)));

  const auto loaded = RunRecord::load(paths.record());
  CHECK(text(loaded) == text(record));

  // Same config through the cache gives the same document.
  CHECK(text(run_experiment(c, root / "b")) == text(record));

  const auto resumed = resume_experiment(paths.checkpoint(0));
  CHECK(text(resumed) == text(record));

  auto altered = c;
  altered.learner.epochs = 2;
  std::ofstream(root / "altered.json") << altered.to_json().dump();
  CHECK_THROWS_WITH_AS(resume_experiment(paths.checkpoint(1), root / "altered.json"),
                       doctest::Contains("digest mismatch"), StateError);
  fs::remove_all(root);
}

TEST_CASE("mid-run failure leaves a partial marker") {
  const auto root = scratch("partial");
  fs::create_directories(root / "run");
  // A file where the checkpoint directory belongs makes the first save fail.
  std::ofstream(root / "run" / "checkpoints") << "x";
  CHECK_THROWS(run_experiment(tiny_experiment(), root / "run"));
  REQUIRE(fs::exists(root / "run" / "PARTIAL"));
  std::ifstream in(root / "run" / "PARTIAL");
  std::stringstream s;
  s << in.rdbuf();
  CHECK(s.str().find("completed_units") != std::string::npos);
  CHECK_FALSE(fs::exists(root / "run" / "record.json"));
  fs::remove_all(root);
}

TEST_CASE("top-N jaccard and histogram csv") {
  CHECK(mean_topn_jaccard({{5, 4, 0, 0}}, 2) == 1.0);
  CHECK(mean_topn_jaccard({{5, 4, 0, 0}, {0, 0, 3, 9}}, 2) == 0.0);
  CHECK(mean_topn_jaccard({{5, 4, 1, 0}, {4, 0, 5, 0}}, 2) == doctest::Approx(1.0 / 3.0));
  // Zero-count prompts never enter the top set.
  CHECK(mean_topn_jaccard({{5, 0, 0, 0}, {7, 0, 0, 0}}, 2) == 1.0);

  RunRecord r;
  r.pool_size = 3;
  r.top_n = 1;
  r.tasks.resize(2);
  r.tasks[0].histogram = {4, 0, 0};
  r.tasks[1].histogram = {0, 1, 3};
  const auto path = scratch("csv") / "h.csv";
  emit_histogram(r, path);
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  CHECK(line == "task,0,1,2");
  std::getline(in, line);
  CHECK(line == "0,4,0,0");
  std::getline(in, line);
  CHECK(line == "1,0,1,3");
  std::getline(in, line);
  CHECK(line.empty());
  std::getline(in, line);
  CHECK(line == "jaccard_top1,0,1");
  std::getline(in, line);
  CHECK(line == "0,1,0");
  fs::remove_all(path.parent_path());
}
