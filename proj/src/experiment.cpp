#include "l2p/experiment.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include "l2p/binary_io.hpp"
#include "l2p/digest.hpp"
#include "l2p/errors.hpp"

namespace l2p {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

constexpr char kCheckpointMagic[4] = {'L', '2', 'P', 'C'};
constexpr std::uint32_t kCheckpointVersion = 1;
constexpr const char* kVersion = "0.1.0";

/// Walks one JSON object, tracking which keys were read so leftovers can be
/// reported as unknown fields.
class Fields {
 public:
  Fields(const json& object, std::string path) : object_(object), path_(std::move(path)) {
    if (!object_.is_object()) throw ConfigError(where() + ": expected an object");
  }

  Fields child(const std::string& key) {
    seen_.insert(key);
    static const json empty = json::object();
    const auto it = object_.find(key);
    return Fields(it == object_.end() ? empty : *it, field(key));
  }

  void get(const std::string& key, Index& out) {
    if (const auto* v = find(key)) {
      if (!v->is_number_integer()) fail(key, "expected an integer");
      out = v->get<Index>();
    }
  }
  void get(const std::string& key, std::uint64_t& out) {
    if (const auto* v = find(key)) {
      if (!v->is_number_integer() || (v->is_number_integer() && !v->is_number_unsigned() &&
                                      v->get<std::int64_t>() < 0))
        fail(key, "expected a nonnegative integer");
      out = v->get<std::uint64_t>();
    }
  }
  void get(const std::string& key, double& out) {
    if (const auto* v = find(key)) {
      if (!v->is_number()) fail(key, "expected a number");
      out = v->get<double>();
    }
  }
  void get(const std::string& key, std::optional<double>& out) {
    if (const auto* v = find(key)) {
      if (v->is_null()) {
        out.reset();
        return;
      }
      if (!v->is_number()) fail(key, "expected a number or null");
      out = v->get<double>();
    }
  }
  void get(const std::string& key, bool& out) {
    if (const auto* v = find(key)) {
      if (!v->is_boolean()) fail(key, "expected true or false");
      out = v->get<bool>();
    }
  }
  void get(const std::string& key, std::string& out) {
    if (const auto* v = find(key)) {
      if (!v->is_string()) fail(key, "expected a string");
      out = v->get<std::string>();
    }
  }
  /// Enum fields go through their parser; its message gets the field path.
  template <typename E, typename Parse>
  void get_enum(const std::string& key, E& out, Parse parse) {
    std::string name;
    get(key, name);
    if (name.empty()) return;
    try {
      out = parse(name);
    } catch (const ConfigError& e) {
      fail(key, e.what());
    }
  }

  void finish() const {
    for (const auto& [key, value] : object_.items())
      if (!seen_.count(key)) throw ConfigError(field(key) + ": unknown field");
  }

 private:
  const json* find(const std::string& key) {
    seen_.insert(key);
    const auto it = object_.find(key);
    return it == object_.end() ? nullptr : &*it;
  }
  std::string field(const std::string& key) const {
    return path_.empty() ? key : path_ + "." + key;
  }
  std::string where() const { return path_.empty() ? "config" : path_; }
  [[noreturn]] void fail(const std::string& key, const std::string& what) const {
    throw ConfigError(field(key) + ": " + what);
  }

  const json& object_;
  std::string path_;
  std::set<std::string> seen_;
};

template <typename T>
void write_vector(ByteWriter& w, const std::vector<T>& v) {
  w.u32(static_cast<std::uint32_t>(v.size()));
  for (const auto& x : v) {
    if constexpr (std::is_same_v<T, double>) w.f64(x);
    else w.u64(x);
  }
}

template <typename T>
std::vector<T> read_vector(ByteReader& r) {
  const std::uint32_t n = r.u32();
  if (n > r.remaining() / 8) r.fail("vector length " + std::to_string(n) + " exceeds the file");
  std::vector<T> v(n);
  for (auto& x : v) {
    if constexpr (std::is_same_v<T, double>) x = r.f64();
    else x = r.u64();
  }
  return v;
}

void write_values(ByteWriter& w, const Vector<float>& v) {
  w.u32(static_cast<std::uint32_t>(v.size()));
  w.bytes(v.data(), static_cast<std::size_t>(v.size()) * sizeof(float));
}

void read_values(ByteReader& r, Vector<float>& out, const std::string& what) {
  const std::uint32_t n = r.u32();
  if (static_cast<Index>(n) != out.size())
    r.fail(what + " has " + std::to_string(n) + " values, expected " + std::to_string(out.size()));
  r.bytes(out.data(), static_cast<std::size_t>(n) * sizeof(float));
}

void write_tensor(ByteWriter& w, const Tensor<float>& t) { write_values(w, t.values()); }

void read_tensor(ByteReader& r, Tensor<float>& t) {
  read_values(r, t.mutable_values(), t.name().empty() ? "tensor" : t.name());
}

void write_adam(ByteWriter& w, const Adam<float>& adam, const std::vector<Tensor<float>>& params) {
  w.i64(adam.step_count());
  for (const auto& p : params) {
    const auto* m = adam.moments(p);
    w.u8(m != nullptr);
    if (!m) continue;
    write_values(w, m->first);
    write_values(w, m->second);
    w.i64(m->updates);
  }
}

void read_adam(ByteReader& r, Adam<float>& adam, const std::vector<Tensor<float>>& params) {
  adam.set_step_count(r.i64());
  for (const auto& p : params) {
    const auto present = r.u8();
    if (present > 1) r.fail("bad optimizer flag");
    if (!present) continue;
    AdamMoments<float> m;
    m.first = Vector<float>::Zero(p.size());
    m.second = Vector<float>::Zero(p.size());
    read_values(r, m.first, "optimizer moment");
    read_values(r, m.second, "optimizer moment");
    m.updates = r.i64();
    adam.set_moments(p, std::move(m));
  }
}

std::string versions_compiler() {
#ifdef __VERSION__
  return __VERSION__;
#else
  return "unknown";
#endif
}

}  // namespace

std::string to_string(Method m) { return m == Method::l2p ? "l2p" : "ftseq_frozen"; }

Method parse_method(const std::string& name) {
  if (name == "l2p") return Method::l2p;
  if (name == "ftseq_frozen") return Method::ftseq_frozen;
  throw ConfigError("method: unknown value '" + name + "' (expected l2p, ftseq_frozen)");
}

std::string hex_digest(std::uint64_t value) {
  std::ostringstream s;
  s << std::hex;
  s.width(16);
  s.fill('0');
  s << value;
  return s.str();
}

ExperimentConfig::ExperimentConfig() {
  generator.num_classes = 60;
  generator.classes_per_family = 4;
  generator.family_weight = 0.7;
  generator.noise = 0.15;
  learner.pool_size = 10;
  learner.top_n = 2;
  learner.diversified = true;
}

void ExperimentConfig::validate() const {
  generator.validate();
  backbone.validate();
  learner.validate();
  if (generator.image != backbone.image)
    throw ConfigError("backbone.image_side must equal generator.image_side");
  if (backbone.pretrain_classes >= generator.num_classes)
    throw ConfigError("backbone.pretrain_classes must leave generator classes for the stream");
  if (pretrain.train_per_class <= 0) throw ConfigError("pretrain.train_per_class must be positive");
  if (pretrain.heldout_per_class < 0)
    throw ConfigError("pretrain.heldout_per_class must be nonnegative");
  if (pretrain.epochs < 0) throw ConfigError("pretrain.epochs must be nonnegative");
  if (pretrain.batch_size <= 0) throw ConfigError("pretrain.batch_size must be positive");
  if (!(pretrain.learning_rate > 0.0)) throw ConfigError("pretrain.learning_rate must be positive");
  const auto& s = stream;
  if (s.num_tasks <= 0) throw ConfigError("stream.num_tasks must be positive");
  if (s.classes_per_task <= 0) throw ConfigError("stream.classes_per_task must be positive");
  if (s.train_per_class <= 0) throw ConfigError("stream.train_per_class must be positive");
  if (s.test_per_class <= 0) throw ConfigError("stream.test_per_class must be positive");
  if (s.segments <= 0 || s.segments > s.total_steps)
    throw ConfigError("stream.segments must lie in [1, stream.total_steps]");
  if (setting == Setting::domain_incremental && s.num_tasks < 2)
    throw ConfigError("stream.num_tasks must be at least 2 for domain_incremental");
  if (setting == Setting::task_agnostic && learner.buffer_per_class > 0)
    throw ConfigError("learner.buffer_per_class needs task boundaries");
  if (method == Method::ftseq_frozen && learner.variant != Variant::full)
    throw ConfigError("ablation applies only to method l2p");
  if (s.sigma && !(*s.sigma > 0.0)) throw ConfigError("stream.sigma must be positive");
}

ordered_json ExperimentConfig::to_json() const {
  ordered_json j;
  j["setting"] = to_string(setting);
  j["method"] = to_string(method);
  j["ablation"] = to_string(learner.variant);
  j["seed"] = seed;
  j["output_dir"] = output_dir;
  j["generator"] = {{"image_side", generator.image.side},
                    {"channels", generator.image.channels},
                    {"num_classes", generator.num_classes},
                    {"classes_per_family", generator.classes_per_family},
                    {"family_weight", generator.family_weight},
                    {"noise", generator.noise},
                    {"domain_kind", to_string(generator.domain_kind)}};
  j["backbone"] = {{"patch", backbone.patch},         {"embed_dim", backbone.embed_dim},
                   {"depth", backbone.depth},         {"heads", backbone.heads},
                   {"mlp_ratio", backbone.mlp_ratio}, {"pretrain_classes", backbone.pretrain_classes}};
  j["pretrain"] = {{"train_per_class", pretrain.train_per_class},
                   {"heldout_per_class", pretrain.heldout_per_class},
                   {"epochs", pretrain.epochs},
                   {"batch_size", pretrain.batch_size},
                   {"learning_rate", pretrain.learning_rate}};
  j["stream"] = {{"num_tasks", stream.num_tasks},
                 {"classes_per_task", stream.classes_per_task},
                 {"train_per_class", stream.train_per_class},
                 {"test_per_class", stream.test_per_class},
                 {"group_by_family", stream.group_by_family},
                 {"num_classes", stream.num_classes},
                 {"test_domains", stream.test_domains},
                 {"agnostic_classes", stream.agnostic_classes},
                 {"classes_per_group", stream.classes_per_group},
                 {"total_steps", stream.total_steps},
                 {"sigma", stream.sigma ? ordered_json(*stream.sigma) : ordered_json(nullptr)},
                 {"agnostic_batch_size", stream.agnostic_batch_size},
                 {"segments", stream.segments}};
  j["learner"] = {{"pool_size", learner.pool_size},
                  {"top_n", learner.top_n},
                  {"prompt_length", learner.prompt_length},
                  {"lambda", learner.lambda},
                  {"learning_rate", learner.learning_rate},
                  {"batch_size", learner.batch_size},
                  {"epochs", learner.epochs},
                  {"diversified", learner.diversified},
                  {"buffer_per_class", learner.buffer_per_class}};
  return j;
}

ExperimentConfig ExperimentConfig::from_json(const json& doc) {
  ExperimentConfig c;
  Fields top(doc, "");
  top.get_enum("setting", c.setting, parse_setting);
  top.get_enum("method", c.method, parse_method);
  top.get_enum("ablation", c.learner.variant, parse_variant);
  top.get("seed", c.seed);
  top.get("output_dir", c.output_dir);

  auto g = top.child("generator");
  g.get("image_side", c.generator.image.side);
  g.get("channels", c.generator.image.channels);
  g.get("num_classes", c.generator.num_classes);
  g.get("classes_per_family", c.generator.classes_per_family);
  g.get("family_weight", c.generator.family_weight);
  g.get("noise", c.generator.noise);
  g.get_enum("domain_kind", c.generator.domain_kind, parse_domain_kind);
  g.finish();
  c.backbone.image = c.generator.image;

  auto b = top.child("backbone");
  b.get("patch", c.backbone.patch);
  b.get("embed_dim", c.backbone.embed_dim);
  b.get("depth", c.backbone.depth);
  b.get("heads", c.backbone.heads);
  b.get("mlp_ratio", c.backbone.mlp_ratio);
  b.get("pretrain_classes", c.backbone.pretrain_classes);
  b.finish();
  c.backbone.key_dim = c.backbone.embed_dim;

  auto p = top.child("pretrain");
  p.get("train_per_class", c.pretrain.train_per_class);
  p.get("heldout_per_class", c.pretrain.heldout_per_class);
  p.get("epochs", c.pretrain.epochs);
  p.get("batch_size", c.pretrain.batch_size);
  p.get("learning_rate", c.pretrain.learning_rate);
  p.finish();

  auto s = top.child("stream");
  s.get("num_tasks", c.stream.num_tasks);
  s.get("classes_per_task", c.stream.classes_per_task);
  s.get("train_per_class", c.stream.train_per_class);
  s.get("test_per_class", c.stream.test_per_class);
  s.get("group_by_family", c.stream.group_by_family);
  s.get("num_classes", c.stream.num_classes);
  s.get("test_domains", c.stream.test_domains);
  s.get("agnostic_classes", c.stream.agnostic_classes);
  s.get("classes_per_group", c.stream.classes_per_group);
  s.get("total_steps", c.stream.total_steps);
  s.get("sigma", c.stream.sigma);
  s.get("agnostic_batch_size", c.stream.agnostic_batch_size);
  s.get("segments", c.stream.segments);
  s.finish();

  auto l = top.child("learner");
  l.get("pool_size", c.learner.pool_size);
  l.get("top_n", c.learner.top_n);
  l.get("prompt_length", c.learner.prompt_length);
  l.get("lambda", c.learner.lambda);
  l.get("learning_rate", c.learner.learning_rate);
  l.get("batch_size", c.learner.batch_size);
  l.get("epochs", c.learner.epochs);
  l.get("diversified", c.learner.diversified);
  l.get("buffer_per_class", c.learner.buffer_per_class);
  l.finish();
  top.finish();

  c.validate();
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return from_json(doc);
}

std::uint64_t ExperimentConfig::digest() const {
  auto j = to_json();
  j.erase("output_dir");
  Fnv1a h;
  h.update(j.dump());
  return h.value();
}

std::uint64_t ExperimentConfig::backbone_digest() const {
  const auto j = to_json();
  Fnv1a h;
  h.update(j["generator"].dump());
  h.update(j["backbone"].dump());
  h.update(j["pretrain"].dump());
  h.update_value(seed);
  return h.value();
}

SyntheticGenerator make_generator(const ExperimentConfig& config) {
  auto g = config.generator;
  g.seed = config.seed;
  return SyntheticGenerator(g);
}

PretrainedBackbone pretrain_backbone(const ExperimentConfig& config) {
  const auto generator = make_generator(config);
  Dataset train, heldout;
  const Index classes = config.backbone.pretrain_classes;
  for (Index c = 0; c < classes; ++c) {
    for (Index i = 0; i < config.pretrain.train_per_class; ++i) train.push_back(generator.sample(c, i));
    for (Index i = 0; i < config.pretrain.heldout_per_class; ++i)
      heldout.push_back(generator.sample(c, (Index{1} << 24) + i));
  }
  auto backbone = std::make_shared<Backbone<float>>(config.backbone, config.seed);
  PretrainOptions o;
  o.epochs = config.pretrain.epochs;
  o.batch_size = config.pretrain.batch_size;
  o.learning_rate = config.pretrain.learning_rate;
  o.seed = config.seed;
  auto report = pretrain(*backbone, train, heldout, o);
  return {std::move(backbone), std::move(report)};
}

PretrainedBackbone cached_backbone(const ExperimentConfig& config,
                                   const std::filesystem::path& dir) {
  const auto stem = "backbone-" + hex_digest(config.backbone_digest());
  const auto weights = dir / (stem + ".l2pw");
  const auto sidecar = dir / (stem + ".json");
  if (std::filesystem::exists(weights) && std::filesystem::exists(sidecar)) {
    std::ifstream in(sidecar);
    const auto j = json::parse(in);
    PretrainedBackbone out;
    out.backbone = std::make_shared<Backbone<float>>(load_weights(weights, &config.backbone));
    out.report.heldout_accuracy = j.at("heldout_accuracy").get<double>();
    out.report.train_accuracy = j.at("train_accuracy").get<double>();
    out.report.epoch_losses = j.at("epoch_losses").get<std::vector<double>>();
    out.report.num_classes = config.backbone.pretrain_classes;
    return out;
  }
  auto out = pretrain_backbone(config);
  std::filesystem::create_directories(dir);
  save_weights(*out.backbone, weights);
  ordered_json j;
  j["heldout_accuracy"] = out.report.heldout_accuracy;
  j["train_accuracy"] = out.report.train_accuracy;
  j["epoch_losses"] = out.report.epoch_losses;
  std::ofstream(sidecar) << j.dump(2) << "\n";
  return out;
}

TaskStream make_task_stream(const ExperimentConfig& config, const SyntheticGenerator& generator) {
  const auto& s = config.stream;
  if (config.setting == Setting::class_incremental) {
    ClassIncrementalOptions o;
    o.num_tasks = s.num_tasks;
    o.classes_per_task = s.classes_per_task;
    o.train_per_class = s.train_per_class;
    o.test_per_class = s.test_per_class;
    o.first_class = config.backbone.pretrain_classes;
    o.group_by_family = s.group_by_family;
    o.seed = config.seed;
    return make_class_incremental(generator, o);
  }
  if (config.setting == Setting::domain_incremental) {
    DomainIncrementalOptions o;
    o.num_tasks = s.num_tasks;
    o.num_classes = s.num_classes;
    o.train_per_class = s.train_per_class;
    o.test_per_class = s.test_per_class;
    o.test_domains = s.test_domains;
    o.first_class = config.backbone.pretrain_classes;
    o.seed = config.seed;
    return make_domain_incremental(generator, o);
  }
  throw ConfigError("setting: task_agnostic has no task stream");
}

GaussianStream make_gaussian_stream(const ExperimentConfig& config,
                                    const SyntheticGenerator& generator) {
  const auto& s = config.stream;
  GaussianScheduleOptions o;
  o.num_classes = s.agnostic_classes;
  o.classes_per_group = s.classes_per_group;
  o.total_steps = s.total_steps;
  o.sigma = s.sigma;
  o.batch_size = s.agnostic_batch_size;
  o.test_per_class = s.test_per_class;
  o.first_class = config.backbone.pretrain_classes;
  o.group_by_family = s.group_by_family;
  o.seed = config.seed;
  return GaussianStream(generator, o);
}

std::vector<std::vector<std::uint64_t>> RunRecord::histogram() const {
  std::vector<std::vector<std::uint64_t>> rows;
  for (const auto& t : tasks) rows.push_back(t.histogram);
  return rows;
}

ordered_json RunRecord::to_json(bool with_timing) const {
  ordered_json j;
  j["format"] = "l2p-run-record";
  j["format_version"] = 1;
  j["config_digest"] = hex_digest(config_digest);
  j["backbone_digest"] = hex_digest(backbone_digest);
  j["setting"] = to_string(setting);
  j["method"] = to_string(method);
  j["ablation"] = to_string(variant);
  j["seed"] = seed;
  j["pool_size"] = pool_size;
  j["top_n"] = top_n;
  j["pretrain_heldout_accuracy"] = pretrain_accuracy;
  auto tasks_json = ordered_json::array();
  for (std::size_t t = 0; t < tasks.size(); ++t)
    tasks_json.push_back({{"task", t},
                          {"steps", tasks[t].steps},
                          {"samples", tasks[t].samples},
                          {"losses", tasks[t].losses}});
  j["tasks"] = tasks_json;
  j["accuracy_matrix"] = matrix.rows();
  j["average_accuracy"] = average_accuracy;
  j["forgetting"] = forgetting ? ordered_json(*forgetting) : ordered_json(nullptr);
  j["histogram"] = histogram();
  if (with_timing) j["wall_clock_seconds"] = wall_clock_seconds;
  j["versions"] = {{"l2p", kVersion},
                   {"compiler", versions_compiler()},
                   {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." +
                                 std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                 std::to_string(EIGEN_MINOR_VERSION)},
                   {"json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                std::to_string(NLOHMANN_JSON_VERSION_PATCH)}};
  return j;
}

RunRecord RunRecord::from_json(const json& j) {
  try {
    if (j.at("format") != "l2p-run-record") throw FormatError("not a run record");
    RunRecord r;
    r.config_digest = std::stoull(j.at("config_digest").get<std::string>(), nullptr, 16);
    r.backbone_digest = std::stoull(j.at("backbone_digest").get<std::string>(), nullptr, 16);
    r.setting = parse_setting(j.at("setting").get<std::string>());
    r.method = parse_method(j.at("method").get<std::string>());
    r.variant = parse_variant(j.at("ablation").get<std::string>());
    r.seed = j.at("seed").get<std::uint64_t>();
    r.pool_size = j.at("pool_size").get<Index>();
    r.top_n = j.at("top_n").get<Index>();
    r.pretrain_accuracy = j.at("pretrain_heldout_accuracy").get<double>();
    const auto rows = j.at("accuracy_matrix").get<std::vector<std::vector<double>>>();
    const auto hist = j.at("histogram").get<std::vector<std::vector<std::uint64_t>>>();
    const auto& tasks = j.at("tasks");
    if (hist.size() != tasks.size()) throw FormatError("histogram rows do not match tasks");
    r.matrix = AccuracyMatrix(static_cast<Index>(rows.size()));
    for (std::size_t t = 0; t < rows.size(); ++t)
      if (!rows[t].empty()) r.matrix.set_row(static_cast<Index>(t), rows[t]);
    for (std::size_t t = 0; t < tasks.size(); ++t) {
      TaskRecord tr;
      tr.steps = tasks[t].at("steps").get<Index>();
      tr.samples = tasks[t].at("samples").get<Index>();
      tr.losses = tasks[t].at("losses").get<std::vector<double>>();
      if (t < rows.size()) tr.accuracies = rows[t];
      tr.histogram = hist[t];
      r.tasks.push_back(std::move(tr));
    }
    r.average_accuracy = j.at("average_accuracy").get<double>();
    if (!j.at("forgetting").is_null()) r.forgetting = j.at("forgetting").get<double>();
    if (j.contains("wall_clock_seconds")) r.wall_clock_seconds = j.at("wall_clock_seconds").get<double>();
    return r;
  } catch (const json::exception& e) {
    throw FormatError(std::string("run record: ") + e.what());
  }
}

RunRecord RunRecord::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open run record " + path.string());
  try {
    return from_json(json::parse(in));
  } catch (const json::parse_error& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

struct Experiment::State {
  SyntheticGenerator generator;
  std::optional<TaskStream> tasks;
  std::optional<GaussianStream> agnostic;
  std::unique_ptr<ContinualLearner> learner;
  PromptLearner<float>* prompt = nullptr;
  LinearProbeLearner* probe = nullptr;
  RehearsalBuffer buffer;

  explicit State(const ExperimentConfig& c)
      : generator(make_generator(c)), buffer(c.learner.buffer_per_class) {}
};

Experiment::Experiment(ExperimentConfig config, PretrainedBackbone backbone)
    : config_(std::move(config)), backbone_(std::move(backbone)) {
  config_.validate();
  if (!backbone_.backbone || !(backbone_.backbone->config() == config_.backbone))
    throw ConfigError("backbone does not match the experiment config");
  state_ = std::make_unique<State>(config_);
  auto& s = *state_;
  Index classes = 0;
  if (config_.setting == Setting::task_agnostic) {
    s.agnostic.emplace(make_gaussian_stream(config_, s.generator));
    classes = s.agnostic->num_classes();
  } else {
    s.tasks.emplace(make_task_stream(config_, s.generator));
    classes = s.tasks->num_classes();
  }
  auto lc = config_.learner;
  lc.seed = config_.seed;
  if (config_.method == Method::l2p) {
    auto learner = std::make_unique<PromptLearner<float>>(backbone_.backbone, classes, lc);
    s.prompt = learner.get();
    s.learner = std::move(learner);
  } else {
    auto learner = std::make_unique<LinearProbeLearner>(backbone_.backbone, classes, lc);
    s.probe = learner.get();
    s.learner = std::move(learner);
  }

  record_.config_digest = config_.digest();
  record_.backbone_digest = backbone_.backbone->digest();
  record_.setting = config_.setting;
  record_.method = config_.method;
  record_.variant = config_.learner.variant;
  record_.seed = config_.seed;
  record_.pool_size = s.learner->pool_size();
  record_.top_n = s.prompt ? s.learner->config().top_n : 0;
  record_.pretrain_accuracy = backbone_.report.heldout_accuracy;
  record_.matrix = AccuracyMatrix(num_units());
}

Experiment::~Experiment() = default;

ContinualLearner& Experiment::learner() { return *state_->learner; }

Index Experiment::num_units() const {
  return config_.setting == Setting::task_agnostic ? config_.stream.segments
                                                    : config_.stream.num_tasks;
}

void Experiment::step() {
  auto& s = *state_;
  const Index t = completed();
  if (t >= num_units()) throw StateError("experiment already complete");
  TaskRecord rec;
  if (s.agnostic) {
    const Index total = s.agnostic->total_steps();
    const Index begin = t * total / num_units(), end = (t + 1) * total / num_units();
    TrainReport report;
    report.selection_counts.assign(static_cast<std::size_t>(s.learner->pool_size()), 0);
    for (Index step = begin; step < end; ++step) {
      const auto batch = s.agnostic->batch(step);
      rec.losses.push_back(s.learner->train_step(batch, report));
      ++rec.steps;
      rec.samples += batch.size();
    }
    rec.histogram = report.selection_counts;
    rec.accuracies.assign(static_cast<std::size_t>(t + 1), accuracy(*s.learner, s.agnostic->test()));
  } else {
    const auto& task = s.tasks->tasks[static_cast<std::size_t>(t)];
    const auto report = config_.learner.buffer_per_class > 0
                            ? s.learner->train_task_with_rehearsal(task.train, s.buffer,
                                                                   config_.learner.epochs)
                            : s.learner->train_task(task.train, config_.learner.epochs);
    rec.losses = report.epoch_losses;
    rec.steps = report.steps;
    rec.samples = report.samples;
    rec.histogram = report.selection_counts;
    if (s.tasks->has_shared_test())
      rec.accuracies.assign(static_cast<std::size_t>(t + 1), accuracy(*s.learner, s.tasks->shared_test));
    else
      rec.accuracies = evaluate_row(*s.learner, *s.tasks, t);
  }
  record_.matrix.set_row(t, rec.accuracies);
  record_.tasks.push_back(std::move(rec));
}

RunRecord Experiment::finish() {
  while (completed() < num_units()) step();
  const bool per_task = state_->tasks && !state_->tasks->has_shared_test();
  if (per_task) {
    record_.average_accuracy = average_accuracy(record_.matrix);
    record_.forgetting = forgetting(record_.matrix);
  } else {
    record_.average_accuracy = record_.tasks.back().accuracies.back();
    record_.forgetting.reset();
  }
  return record_;
}

std::vector<std::uint8_t> Experiment::checkpoint() const {
  const auto& s = *state_;
  ByteWriter w;
  w.bytes(kCheckpointMagic, 4);
  w.u32(kCheckpointVersion);
  w.u64(record_.config_digest);
  w.u64(record_.backbone_digest);
  w.f64(record_.wall_clock_seconds);
  w.u32(static_cast<std::uint32_t>(record_.tasks.size()));
  for (const auto& t : record_.tasks) {
    write_vector(w, t.losses);
    w.i64(t.steps);
    w.i64(t.samples);
    write_vector(w, t.accuracies);
    write_vector(w, t.histogram);
  }
  w.u32(static_cast<std::uint32_t>(s.learner->tasks_seen()));
  if (s.prompt) {
    const auto& pool = s.prompt->pool();
    for (Index i = 0; i < pool.size(); ++i) {
      write_tensor(w, pool.prompt(i));
      write_tensor(w, pool.key(i));
    }
    write_tensor(w, s.prompt->classifier().weight);
    write_tensor(w, s.prompt->classifier().bias);
    write_adam(w, s.prompt->optimizer(), s.prompt->parameters());
    write_vector(w, s.prompt->running_table().counts());
    write_vector(w, s.prompt->snapshot_table().counts());
    w.u8(s.prompt->boundaries_known());
  } else {
    write_tensor(w, s.probe->classifier().weight);
    write_tensor(w, s.probe->classifier().bias);
    write_adam(w, s.probe->optimizer(), s.probe->classifier().parameters());
  }
  const auto& samples = s.buffer.samples();
  w.u32(static_cast<std::uint32_t>(samples.size()));
  for (const auto& sample : samples) {
    w.u32(static_cast<std::uint32_t>(sample.label));
    w.u64(sample.uid);
    w.u32(static_cast<std::uint32_t>(sample.pixels.size()));
    w.bytes(sample.pixels.data(), sample.pixels.size() * sizeof(float));
  }
  return w.buffer();
}

void Experiment::restore(const std::vector<std::uint8_t>& bytes) {
  auto& s = *state_;
  if (completed() != 0) throw StateError("restore needs a fresh experiment");
  ByteReader r(bytes);
  char magic[4];
  r.bytes(magic, 4);
  if (!std::equal(magic, magic + 4, kCheckpointMagic)) r.fail("not a checkpoint file");
  if (const auto v = r.u32(); v != kCheckpointVersion)
    r.fail("unsupported checkpoint version " + std::to_string(v));
  const auto config_digest = r.u64();
  if (config_digest != record_.config_digest)
    throw StateError("config digest mismatch: checkpoint was written for config " +
                     hex_digest(config_digest) + ", current config is " +
                     hex_digest(record_.config_digest));
  const auto backbone_digest = r.u64();
  if (backbone_digest != record_.backbone_digest)
    throw StateError("backbone digest mismatch: checkpoint " + hex_digest(backbone_digest) +
                     ", loaded backbone " + hex_digest(record_.backbone_digest));
  const double elapsed = r.f64();
  const auto units = r.u32();
  if (static_cast<Index>(units) > num_units()) r.fail("more completed tasks than the run has");
  std::vector<TaskRecord> tasks(units);
  for (auto& t : tasks) {
    t.losses = read_vector<double>(r);
    t.steps = r.i64();
    t.samples = r.i64();
    t.accuracies = read_vector<double>(r);
    t.histogram = read_vector<std::uint64_t>(r);
  }
  const auto seen = r.u32();
  if (s.prompt) {
    auto& pool = s.prompt->pool();
    for (Index i = 0; i < pool.size(); ++i) {
      read_tensor(r, pool.prompt(i));
      read_tensor(r, pool.key(i));
    }
    read_tensor(r, s.prompt->classifier().weight);
    read_tensor(r, s.prompt->classifier().bias);
    read_adam(r, s.prompt->optimizer(), s.prompt->parameters());
    auto running = read_vector<std::uint64_t>(r);
    auto snapshot = read_vector<std::uint64_t>(r);
    if (static_cast<Index>(running.size()) != pool.size() ||
        static_cast<Index>(snapshot.size()) != pool.size())
      r.fail("frequency table size does not match the pool");
    s.prompt->running_table().set_counts(std::move(running));
    s.prompt->snapshot_table().set_counts(std::move(snapshot));
    const auto known = r.u8();
    if (known > 1) r.fail("bad boundary flag");
    s.prompt->set_boundaries_known(known == 1);
  } else {
    read_tensor(r, s.probe->classifier().weight);
    read_tensor(r, s.probe->classifier().bias);
    read_adam(r, s.probe->optimizer(), s.probe->classifier().parameters());
  }
  const auto count = r.u32();
  Dataset samples;
  for (std::uint32_t i = 0; i < count; ++i) {
    Sample sample;
    sample.label = static_cast<int>(r.u32());
    sample.uid = r.u64();
    const auto n = r.u32();
    if (n > r.remaining() / sizeof(float)) r.fail("buffer sample exceeds the file");
    sample.pixels.resize(n);
    r.bytes(sample.pixels.data(), n * sizeof(float));
    samples.push_back(std::move(sample));
  }
  if (!r.at_end()) r.fail("trailing bytes after checkpoint");

  s.buffer.assign(std::move(samples));
  s.learner->set_tasks_seen(static_cast<Index>(seen));
  record_.wall_clock_seconds = elapsed;
  for (auto& t : tasks) {
    record_.matrix.set_row(static_cast<Index>(record_.tasks.size()), t.accuracies);
    record_.tasks.push_back(std::move(t));
  }
}

std::filesystem::path RunPaths::checkpoint(Index unit) const {
  return dir / "checkpoints" / ("unit-" + std::to_string(unit) + ".l2pc");
}

namespace {

std::filesystem::path backbone_cache_dir(const std::filesystem::path& out_dir) {
  const auto abs = std::filesystem::absolute(out_dir).lexically_normal();
  const auto parent = abs.has_filename() ? abs.parent_path() : abs.parent_path().parent_path();
  return parent / "backbone-cache";
}

RunRecord drive(Experiment& e, const RunPaths& paths) {
  using clock = std::chrono::steady_clock;
  const auto start = clock::now();
  const double before = e.record().wall_clock_seconds;
  auto elapsed = [&] { return before + std::chrono::duration<double>(clock::now() - start).count(); };
  try {
    std::filesystem::create_directories(paths.checkpoint(0).parent_path());
    while (e.completed() < e.num_units()) {
      e.step();
      e.set_wall_clock(elapsed());
      const auto bytes = e.checkpoint();
      ByteWriter w;
      w.bytes(bytes.data(), bytes.size());
      w.write_file(paths.checkpoint(e.completed() - 1));
    }
    auto record = e.finish();
    record.wall_clock_seconds = elapsed();
    std::ofstream(paths.record()) << record.to_json().dump(2) << "\n";
    std::filesystem::remove(paths.partial());
    return record;
  } catch (const std::exception& ex) {
    std::ofstream out(paths.partial());
    out << "error: " << ex.what() << "\n"
        << "completed_units: " << e.completed() << " of " << e.num_units() << "\n";
    if (e.completed() > 0)
      out << "last_checkpoint: " << paths.checkpoint(e.completed() - 1).string() << "\n";
    throw;
  }
}

}  // namespace

RunRecord run_experiment(const ExperimentConfig& config, const std::filesystem::path& out_dir) {
  config.validate();
  const RunPaths paths{out_dir};
  std::filesystem::create_directories(paths.dir);
  std::ofstream(paths.config()) << config.to_json().dump(2) << "\n";
  std::filesystem::remove(paths.record());
  auto backbone = cached_backbone(config, backbone_cache_dir(out_dir));
  Experiment e(config, std::move(backbone));
  return drive(e, paths);
}

RunRecord resume_experiment(const std::filesystem::path& checkpoint,
                            const std::optional<std::filesystem::path>& config_path) {
  const auto dir = std::filesystem::absolute(checkpoint).parent_path().parent_path();
  const RunPaths paths{dir};
  const auto config = ExperimentConfig::load(config_path.value_or(paths.config()));
  auto bytes = ByteReader::from_file(checkpoint);
  std::vector<std::uint8_t> data(bytes.remaining());
  bytes.bytes(data.data(), data.size());
  auto backbone = cached_backbone(config, backbone_cache_dir(dir));
  Experiment e(config, std::move(backbone));
  e.restore(data);
  return drive(e, paths);
}

double mean_topn_jaccard(const std::vector<std::vector<std::uint64_t>>& histogram, Index top_n) {
  std::vector<std::set<std::size_t>> tops;
  for (const auto& row : histogram) {
    std::vector<std::size_t> order(row.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return row[a] > row[b]; });
    std::set<std::size_t> top;
    for (std::size_t i = 0; i < order.size() && static_cast<Index>(top.size()) < top_n; ++i)
      if (row[order[i]] > 0) top.insert(order[i]);
    tops.push_back(std::move(top));
  }
  if (tops.size() < 2) return 1.0;
  double total = 0.0;
  Index pairs = 0;
  for (std::size_t a = 0; a < tops.size(); ++a)
    for (std::size_t b = a + 1; b < tops.size(); ++b) {
      std::size_t common = 0;
      for (auto i : tops[a]) common += tops[b].count(i);
      const auto joined = tops[a].size() + tops[b].size() - common;
      total += joined == 0 ? 1.0 : static_cast<double>(common) / static_cast<double>(joined);
      ++pairs;
    }
  return total / static_cast<double>(pairs);
}

void emit_histogram(const RunRecord& record, const std::filesystem::path& path) {
  const auto hist = record.histogram();
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  out << "task";
  for (Index m = 0; m < record.pool_size; ++m) out << "," << m;
  out << "\n";
  for (std::size_t t = 0; t < hist.size(); ++t) {
    out << t;
    for (auto c : hist[t]) out << "," << c;
    out << "\n";
  }
  out << "\njaccard_top" << record.top_n;
  for (std::size_t t = 0; t < hist.size(); ++t) out << "," << t;
  out << "\n";
  for (std::size_t a = 0; a < hist.size(); ++a) {
    out << a;
    for (std::size_t b = 0; b < hist.size(); ++b)
      out << "," << mean_topn_jaccard({hist[a], hist[b]}, record.top_n);
    out << "\n";
  }
}

}  // namespace l2p
