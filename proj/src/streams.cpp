#include "l2p/streams.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>

#include "l2p/random.hpp"

namespace l2p {

std::string to_string(Setting s) {
  switch (s) {
    case Setting::class_incremental: return "class_incremental";
    case Setting::domain_incremental: return "domain_incremental";
    case Setting::task_agnostic: return "task_agnostic";
  }
  return "class_incremental";
}

Setting parse_setting(const std::string& name) {
  if (name == "class_incremental") return Setting::class_incremental;
  if (name == "domain_incremental") return Setting::domain_incremental;
  if (name == "task_agnostic") return Setting::task_agnostic;
  throw ConfigError("setting: unknown value '" + name +
                    "' (expected class_incremental, domain_incremental, task_agnostic)");
}

void TaskStream::validate() const {
  if (tasks.empty()) throw StateError("stream has no tasks");
  if (setting == Setting::class_incremental) {
    std::set<Index> seen;
    std::size_t total = 0;
    for (const auto& t : tasks) {
      for (Index c : t.classes)
        if (!seen.insert(c).second)
          throw StateError("class-incremental tasks share class " + std::to_string(c));
      total += t.classes.size();
    }
    std::set<Index> vocab(vocabulary.begin(), vocabulary.end());
    if (vocab != seen || total != vocabulary.size())
      throw StateError("task classes do not partition the vocabulary");
  } else if (setting == Setting::domain_incremental) {
    for (const auto& t : tasks)
      if (t.classes != tasks.front().classes)
        throw StateError("domain-incremental tasks must share one class set");
  }
}

namespace {

Sample relabel(Sample s, int label) {
  s.label = label;
  return s;
}

std::vector<Index> candidate_classes(const SyntheticGenerator& g, Index first_class) {
  std::vector<Index> out;
  for (Index c = std::max<Index>(first_class, 0); c < g.num_classes(); ++c) out.push_back(c);
  return out;
}

/// `count` disjoint groups of `size` classes from `available`. Whole families
/// are used when the generator's family size equals `size`.
std::vector<std::vector<Index>> partition_classes(const SyntheticGenerator& generator,
                                                  const std::vector<Index>& available, Index count,
                                                  Index size, bool by_family, Rng& rng) {
  std::vector<std::vector<Index>> groups;
  if (by_family && generator.config().classes_per_family == size) {
    std::map<Index, std::vector<Index>> families;
    for (Index c : available) families[generator.family(c)].push_back(c);
    for (auto& [f, members] : families)
      if (static_cast<Index>(members.size()) == size) groups.push_back(members);
    if (static_cast<Index>(groups.size()) < count)
      throw ConfigError("stream needs " + std::to_string(count) +
                        " complete families above first_class, generator offers " +
                        std::to_string(groups.size()));
    rng.shuffle(groups);
    groups.resize(static_cast<std::size_t>(count));
    for (auto& g : groups) rng.shuffle(g);
  } else {
    auto order = available;
    rng.shuffle(order);
    for (Index t = 0; t < count; ++t)
      groups.emplace_back(order.begin() + t * size, order.begin() + (t + 1) * size);
  }
  return groups;
}

}  // namespace

TaskStream make_class_incremental(const SyntheticGenerator& generator,
                                  const ClassIncrementalOptions& o) {
  if (o.num_tasks <= 0 || o.classes_per_task <= 0)
    throw ConfigError("stream.num_tasks and stream.classes_per_task must be positive");
  if (o.train_per_class <= 0 || o.test_per_class <= 0)
    throw ConfigError("stream.train_per_class and stream.test_per_class must be positive");
  Rng rng = Rng::derive(o.seed, {0xC1A55});
  const auto available = candidate_classes(generator, o.first_class);
  const Index needed = o.num_tasks * o.classes_per_task;
  if (needed > static_cast<Index>(available.size()))
    throw ConfigError("stream needs " + std::to_string(needed) + " classes, generator offers " +
                      std::to_string(available.size()) + " above first_class");

  const auto groups = partition_classes(generator, available, o.num_tasks, o.classes_per_task,
                                        o.group_by_family, rng);

  TaskStream stream;
  stream.setting = Setting::class_incremental;
  stream.image = generator.image();
  for (const auto& g : groups) {
    Task task;
    task.classes = g;
    for (Index c : g) {
      const int label = static_cast<int>(stream.vocabulary.size());
      stream.vocabulary.push_back(c);
      for (Index i = 0; i < o.train_per_class; ++i)
        task.train.push_back(relabel(generator.sample(c, i), label));
      for (Index i = 0; i < o.test_per_class; ++i)
        task.test.push_back(relabel(generator.sample(c, o.train_per_class + i), label));
    }
    stream.tasks.push_back(std::move(task));
  }
  stream.validate();
  return stream;
}

TaskStream make_domain_incremental(const SyntheticGenerator& generator,
                                   const DomainIncrementalOptions& o) {
  if (o.num_tasks < 2) throw ConfigError("stream.num_tasks must be at least 2 for domain shifts");
  if (o.test_domains <= 0) throw ConfigError("stream.test_domains must be positive");
  if (o.num_classes <= 0 || o.train_per_class <= 0 || o.test_per_class <= 0)
    throw ConfigError("stream class and sample counts must be positive");
  auto available = candidate_classes(generator, o.first_class);
  if (o.num_classes > static_cast<Index>(available.size()))
    throw ConfigError("stream.num_classes exceeds the generator classes above first_class");
  Rng rng = Rng::derive(o.seed, {0xD0A1});
  rng.shuffle(available);
  available.resize(static_cast<std::size_t>(o.num_classes));

  TaskStream stream;
  stream.setting = Setting::domain_incremental;
  stream.image = generator.image();
  stream.vocabulary = available;
  for (Index t = 0; t < o.num_tasks; ++t) {
    Task task;
    task.classes = available;
    for (std::size_t label = 0; label < available.size(); ++label)
      for (Index i = 0; i < o.train_per_class; ++i)
        task.train.push_back(
            relabel(generator.sample(available[label], t * o.train_per_class + i, t + 1),
                    static_cast<int>(label)));
    stream.tasks.push_back(std::move(task));
  }
  const Index test_offset = o.num_tasks * o.train_per_class;
  for (Index d = 0; d < o.test_domains; ++d)
    for (std::size_t label = 0; label < available.size(); ++label)
      for (Index i = 0; i < o.test_per_class; ++i)
        stream.shared_test.push_back(relabel(
            generator.sample(available[label], test_offset + d * o.test_per_class + i,
                             o.num_tasks + 1 + d),
            static_cast<int>(label)));
  stream.validate();
  return stream;
}

GaussianStream::GaussianStream(const SyntheticGenerator& generator, GaussianScheduleOptions o)
    : generator_(generator), options_(o) {
  if (o.num_classes <= 0 || o.classes_per_group <= 0 || o.total_steps <= 0 || o.batch_size <= 0 ||
      o.test_per_class <= 0)
    throw ConfigError("gaussian schedule counts must be positive");
  if (o.sigma && !(*o.sigma > 0.0)) throw ConfigError("stream.sigma must be positive");
  auto available = candidate_classes(generator, o.first_class);
  if (o.num_classes > static_cast<Index>(available.size()))
    throw ConfigError("stream.num_classes exceeds the generator classes above first_class");
  Rng rng = Rng::derive(o.seed, {0x6A55});
  if (o.group_by_family && o.num_classes % o.classes_per_group == 0) {
    for (const auto& g : partition_classes(generator, available, o.num_classes / o.classes_per_group,
                                           o.classes_per_group, true, rng))
      vocabulary_.insert(vocabulary_.end(), g.begin(), g.end());
  } else {
    rng.shuffle(available);
    available.resize(static_cast<std::size_t>(o.num_classes));
    vocabulary_ = available;
  }

  const Index groups = (o.num_classes + o.classes_per_group - 1) / o.classes_per_group;
  const double spacing = static_cast<double>(o.total_steps) / static_cast<double>(groups);
  sigma_ = o.sigma.value_or(spacing / 2.0);
  for (Index label = 0; label < o.num_classes; ++label)
    centers_.push_back((static_cast<double>(label / o.classes_per_group) + 0.5) * spacing);

  for (std::size_t label = 0; label < vocabulary_.size(); ++label)
    for (Index i = 0; i < o.test_per_class; ++i)
      test_.push_back(relabel(generator_.sample(vocabulary_[label], (Index{1} << 26) + i),
                              static_cast<int>(label)));
}

std::vector<double> GaussianStream::weights(Index step) const {
  std::vector<double> w(centers_.size());
  const auto s = static_cast<double>(step);
  for (std::size_t c = 0; c < centers_.size(); ++c) {
    const double d = s - centers_[c];
    w[c] = std::exp(-d * d / (2.0 * sigma_ * sigma_));
  }
  // Far from every peak all weights can underflow; fall back to the nearest.
  if (std::all_of(w.begin(), w.end(), [](double v) { return v == 0.0; })) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < centers_.size(); ++c)
      if (std::abs(s - centers_[c]) < std::abs(s - centers_[best])) best = c;
    w[best] = 1.0;
  }
  return w;
}

Batch GaussianStream::batch(Index step) const {
  if (step < 0 || step >= options_.total_steps)
    throw InputError("gaussian stream: step " + std::to_string(step) + " out of range");
  Rng rng = Rng::derive(options_.seed, {0xBA7C, static_cast<std::uint64_t>(step)});
  const auto w = weights(step);
  Dataset samples;
  for (Index slot = 0; slot < options_.batch_size; ++slot) {
    const auto label = rng.categorical(w);
    samples.push_back(relabel(
        generator_.sample(vocabulary_[label], step * options_.batch_size + slot),
        static_cast<int>(label)));
  }
  return make_batch(samples, generator_.image());
}

}  // namespace l2p
