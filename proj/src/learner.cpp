#include "l2p/learner.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "l2p/digest.hpp"
#include "l2p/ops.hpp"

namespace l2p {

std::string to_string(Variant v) {
  switch (v) {
    case Variant::full: return "none";
    case Variant::single_prompt: return "single_prompt";
    case Variant::mean_key: return "mean_key";
    case Variant::no_diversify: return "no_diversify";
  }
  return "none";
}

Variant parse_variant(const std::string& name) {
  if (name == "none" || name == "full") return Variant::full;
  if (name == "single_prompt") return Variant::single_prompt;
  if (name == "mean_key") return Variant::mean_key;
  if (name == "no_diversify") return Variant::no_diversify;
  throw ConfigError("ablation: unknown variant '" + name +
                    "' (expected none, single_prompt, mean_key, no_diversify)");
}

void LearnerConfig::validate() const {
  if (lambda < 0.0) throw ConfigError("learner.lambda must be nonnegative");
  if (!(learning_rate > 0.0)) throw ConfigError("learner.learning_rate must be positive");
  if (batch_size <= 0) throw ConfigError("learner.batch_size must be positive");
  if (epochs < 0) throw ConfigError("learner.epochs must be nonnegative");
  if (buffer_per_class < 0) throw ConfigError("learner.buffer_per_class must be nonnegative");
  if (pool_size <= 0) throw ConfigError("learner.pool_size must be positive");
  if (prompt_length <= 0) throw ConfigError("learner.prompt_length must be positive");
  if (top_n <= 0 || top_n > pool_size)
    throw ConfigError("learner.top_n must lie in [1, learner.pool_size]");
}

LearnerConfig LearnerConfig::resolved() const {
  LearnerConfig c = *this;
  if (c.variant == Variant::single_prompt) {
    c.pool_size = 1;
    c.top_n = 1;
    c.diversified = false;
  }
  if (c.variant == Variant::no_diversify) c.diversified = false;
  c.validate();
  return c;
}

ContinualLearner::ContinualLearner(LearnerConfig config) : config_(config.resolved()) {}

TrainReport ContinualLearner::train_task(const Dataset& task, Index epochs) {
  return run_task(task, epochs, nullptr);
}

TrainReport ContinualLearner::train_task_with_rehearsal(const Dataset& task,
                                                        RehearsalBuffer& buffer, Index epochs) {
  if (buffer.capacity_per_class() <= 0)
    throw ConfigError("train_task_with_rehearsal: buffer capacity per class must be positive");
  return run_task(task, epochs, &buffer);
}

TrainReport ContinualLearner::run_task(const Dataset& task, Index epochs,
                                       RehearsalBuffer* buffer) {
  if (epochs < 0) throw ConfigError("epochs must be nonnegative");
  if (task.empty()) throw InputError("train_task: empty task");
  const auto task_index = static_cast<std::uint64_t>(tasks_seen_);
  const std::uint64_t digest_before = backbone_digest();
  on_task_begin();

  TrainReport report;
  report.selection_counts.assign(static_cast<std::size_t>(pool_size()), 0);
  const auto batch_size = static_cast<std::size_t>(config_.batch_size);
  std::vector<std::size_t> order(task.size());
  for (Index epoch = 0; epoch < epochs; ++epoch) {
    Rng rng = Rng::derive(config_.seed, {0x7A5C, task_index, static_cast<std::uint64_t>(epoch)});
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(order);
    double total = 0.0;
    Index steps = 0;
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
      const auto count = std::min(batch_size, order.size() - start);
      Batch batch = make_batch(task, std::span(order).subspan(start, count), image_shape());
      if (buffer && !buffer->empty())
        batch = concat_batches(batch, make_batch(buffer->draw(count, rng), image_shape()));
      total += train_step(batch, report);
      ++steps;
    }
    report.epoch_losses.push_back(total / static_cast<double>(steps));
  }
  if (buffer) {
    Rng rng = Rng::derive(config_.seed, {0xB0FF, task_index});
    buffer->retain(task, rng);
  }
  if (backbone_digest() != digest_before)
    throw StateError("backbone parameters changed during training");
  ++tasks_seen_;
  return report;
}

template <typename Scalar>
std::vector<int> argmax_rows(const Tensor<Scalar>& logits) {
  ConstMatrixMap<Scalar> z(logits.values().data(), logits.dim(0), logits.dim(1));
  std::vector<int> out(static_cast<std::size_t>(z.rows()));
  for (Index r = 0; r < z.rows(); ++r) {
    Index arg = 0;
    for (Index c = 1; c < z.cols(); ++c)
      if (z(r, c) > z(r, arg)) arg = c;
    out[static_cast<std::size_t>(r)] = static_cast<int>(arg);
  }
  return out;
}

template <typename Scalar>
Classifier<Scalar>::Classifier(Index features, Index classes, std::uint64_t seed) {
  if (classes <= 0) throw ConfigError("classifier: class count must be positive");
  Rng rng = Rng::derive(seed, {0xC1A5});
  weight = Tensor<Scalar>::zeros({features, classes}, true);
  weight.set_name("classifier.weight");
  bias = Tensor<Scalar>::zeros({classes}, true);
  bias.set_name("classifier.bias");
  const double bound = std::sqrt(6.0 / static_cast<double>(features + classes));
  for (Index i = 0; i < weight.size(); ++i)
    weight.mutable_values()[i] = static_cast<Scalar>(rng.uniform(-bound, bound));
}

template <typename Scalar>
Tensor<Scalar> Classifier<Scalar>::operator()(const Tensor<Scalar>& features) const {
  return linear(features, weight, bias);
}

namespace {

Batch single(const Batch& batch, Index i) {
  Batch one;
  one.shape = batch.shape;
  const auto img = batch.image(i);
  one.pixels.assign(img.begin(), img.end());
  one.labels.push_back(batch.labels[static_cast<std::size_t>(i)]);
  one.uids.push_back(batch.uids.empty() ? 0 : batch.uids[static_cast<std::size_t>(i)]);
  return one;
}

// Each query is computed from a batch of one, so its bits do not depend on
// which other samples happened to share a batch.
template <typename Scalar>
Tensor<Scalar> cached_queries(const Backbone<Scalar>& backbone, const Batch& batch,
                              std::unordered_map<std::uint64_t, Vector<Scalar>>& cache) {
  const Index width = backbone.config().embed_dim;
  Vector<Scalar> out(batch.size() * width);
  NoGradGuard no_grad;
  for (Index i = 0; i < batch.size(); ++i) {
    const std::uint64_t uid = batch.uids.empty() ? 0 : batch.uids[static_cast<std::size_t>(i)];
    if (uid != 0) {
      if (auto it = cache.find(uid); it != cache.end()) {
        out.segment(i * width, width) = it->second;
        continue;
      }
    }
    Vector<Scalar> q = backbone.query_feature(single(batch, i)).values();
    out.segment(i * width, width) = q;
    if (uid != 0) cache.emplace(uid, std::move(q));
  }
  return Tensor<Scalar>::from({batch.size(), width}, std::move(out));
}

}  // namespace

template <typename Scalar>
PromptLearner<Scalar>::PromptLearner(std::shared_ptr<const Backbone<Scalar>> backbone,
                                     Index num_classes, LearnerConfig config)
    : ContinualLearner(config),
      backbone_(std::move(backbone)),
      num_classes_(num_classes),
      pool_(PoolConfig{.pool_size = config_.pool_size,
                       .prompt_length = config_.prompt_length,
                       .top_n = config_.top_n,
                       .embed_dim = backbone_->config().embed_dim,
                       .key_dim = backbone_->config().key_dim},
            config_.seed),
      classifier_(backbone_->config().embed_dim, num_classes, config_.seed),
      adam_({.learning_rate = config_.learning_rate}),
      running_(config_.pool_size),
      snapshot_(config_.pool_size) {
  if (!backbone_->frozen()) throw StateError("prompt learner needs a frozen backbone");
  if (config_.variant == Variant::mean_key) {
    if (backbone_->config().key_dim != backbone_->config().embed_dim)
      throw ConfigError("mean_key variant needs key_dim == embed_dim");
    for (Index i = 0; i < pool_.config().pool_size; ++i) pool_.key(i).set_requires_grad(false);
    refresh_derived_keys();
  }
}

template <typename Scalar>
void PromptLearner<Scalar>::refresh_derived_keys() {
  if (config_.variant != Variant::mean_key) return;
  for (Index i = 0; i < pool_.size(); ++i) {
    const auto& p = pool_.prompt(i);
    ConstMatrixMap<Scalar> rows(p.values().data(), p.dim(0), p.dim(1));
    pool_.key(i).mutable_values() = rows.colwise().mean().transpose();
  }
}

template <typename Scalar>
std::vector<Tensor<Scalar>> PromptLearner<Scalar>::parameters() const {
  std::vector<Tensor<Scalar>> out = pool_.prompts();
  if (config_.variant != Variant::mean_key)
    out.insert(out.end(), pool_.keys().begin(), pool_.keys().end());
  out.push_back(classifier_.weight);
  out.push_back(classifier_.bias);
  return out;
}

template <typename Scalar>
std::uint64_t PromptLearner<Scalar>::state_digest() const {
  auto tensors = pool_.parameters();
  tensors.push_back(classifier_.weight);
  tensors.push_back(classifier_.bias);
  Fnv1a h;
  h.update_value(parameter_digest<Scalar>(tensors));
  h.update_value(adam_.step_count());
  for (auto c : running_.counts()) h.update_value(c);
  for (auto c : snapshot_.counts()) h.update_value(c);
  return h.value();
}

template <typename Scalar>
Tensor<Scalar> PromptLearner<Scalar>::queries(const Batch& batch) {
  return cached_queries(*backbone_, batch, query_cache_);
}

template <typename Scalar>
std::vector<Selection> PromptLearner<Scalar>::choose(const Batch& batch,
                                                     const Tensor<Scalar>& queries, Phase phase) {
  if (config_.variant == Variant::single_prompt)
    return std::vector<Selection>(static_cast<std::size_t>(batch.size()),
                                  Selection{.indices = {0}, .scores = {0.0}});
  if (phase == Phase::train && config_.diversified)
    return select_batch(pool_, queries, config_.top_n, SelectionMode::diversified,
                        boundaries_known_ ? &snapshot_ : &running_);
  return select_batch(pool_, queries, config_.top_n, SelectionMode::standard);
}

template <typename Scalar>
LossTerms<Scalar> PromptLearner<Scalar>::forward_loss(const Batch& batch, Phase phase) {
  if (batch.empty()) throw InputError("forward_loss: empty batch");
  for (std::size_t i = 0; i < batch.labels.size(); ++i)
    if (batch.labels[i] < 0 || batch.labels[i] >= num_classes_)
      throw InputError("forward_loss: label " + std::to_string(batch.labels[i]) + " in row " +
                       std::to_string(i) + " outside the class vocabulary of " +
                       std::to_string(num_classes_));
  LossTerms<Scalar> terms;
  const bool has_query = config_.variant != Variant::single_prompt;
  Tensor<Scalar> q = has_query ? queries(batch) : Tensor<Scalar>();
  terms.selections = choose(batch, q, phase);

  auto prompted = prepend_batch<Scalar>(pool_, terms.selections, backbone_->embed(batch));
  auto hidden = backbone_->forward_features(prompted);
  terms.pooled = mean_tokens(hidden, 0, config_.top_n * config_.prompt_length);
  terms.logits = classifier_(terms.pooled);
  terms.prediction = cross_entropy(terms.logits, std::span<const int>(batch.labels));

  if (has_query) {
    const Index width = q.dim(1);
    std::vector<Tensor<Scalar>> distances;
    for (Index b = 0; b < batch.size(); ++b) {
      auto qb = Tensor<Scalar>::from({width}, Vector<Scalar>(q.values().segment(b * width, width)));
      for (Index i : terms.selections[static_cast<std::size_t>(b)].indices)
        distances.push_back(cosine_distance(qb, pool_.key(i)));
    }
    terms.surrogate =
        scale(add_n<Scalar>(distances), Scalar(1) / static_cast<Scalar>(batch.size()));
  } else {
    terms.surrogate = Tensor<Scalar>::scalar(Scalar(0));
  }
  terms.loss = add(terms.prediction, scale(terms.surrogate, static_cast<Scalar>(config_.lambda)));
  return terms;
}

template <typename Scalar>
double PromptLearner<Scalar>::train_step(const Batch& batch, TrainReport& report) {
  for (auto p : parameters()) p.clear_grad();
  auto terms = forward_loss(batch, Phase::train);
  terms.loss.backward();

  std::set<Index> chosen;
  for (const auto& s : terms.selections) chosen.insert(s.indices.begin(), s.indices.end());
  std::vector<Tensor<Scalar>> update;
  for (Index i : chosen) update.push_back(pool_.prompt(i));
  if (config_.variant == Variant::full || config_.variant == Variant::no_diversify)
    for (Index i : chosen) update.push_back(pool_.key(i));
  update.push_back(classifier_.weight);
  update.push_back(classifier_.bias);
  adam_.step(update);
  for (auto p : parameters()) p.clear_grad();

  update_frequency(running_, terms.selections);
  if (report.selection_counts.size() != static_cast<std::size_t>(pool_.size()))
    report.selection_counts.assign(static_cast<std::size_t>(pool_.size()), 0);
  for (const auto& s : terms.selections)
    for (Index i : s.indices) ++report.selection_counts[static_cast<std::size_t>(i)];
  ++report.steps;
  report.samples += batch.size();
  refresh_derived_keys();
  return static_cast<double>(terms.loss.item());
}

template <typename Scalar>
Tensor<Scalar> PromptLearner<Scalar>::logits(const Batch& batch) {
  NoGradGuard no_grad;
  const bool has_query = config_.variant != Variant::single_prompt;
  Tensor<Scalar> q = has_query ? queries(batch) : Tensor<Scalar>();
  const auto selections = choose(batch, q, Phase::eval);
  auto prompted = prepend_batch<Scalar>(pool_, selections, backbone_->embed(batch));
  auto hidden = backbone_->forward_features(prompted);
  return classifier_(mean_tokens(hidden, 0, config_.top_n * config_.prompt_length));
}

template <typename Scalar>
std::vector<int> PromptLearner<Scalar>::predict(const Batch& batch) {
  if (batch.empty()) return {};
  return argmax_rows(logits(batch));
}

template <typename Scalar>
void PromptLearner<Scalar>::on_task_begin() {
  snapshot_ = running_;
  boundaries_known_ = true;
}

LinearProbeLearner::LinearProbeLearner(std::shared_ptr<const Backbone<float>> backbone,
                                       Index num_classes, LearnerConfig config)
    : ContinualLearner(config),
      backbone_(std::move(backbone)),
      num_classes_(num_classes),
      classifier_(backbone_->config().embed_dim, num_classes, config_.seed),
      adam_({.learning_rate = config_.learning_rate}) {
  if (!backbone_->frozen()) throw StateError("linear probe needs a frozen backbone");
}

Tensor<float> LinearProbeLearner::features(const Batch& batch) {
  return cached_queries(*backbone_, batch, cache_);
}

double LinearProbeLearner::train_step(const Batch& batch, TrainReport& report) {
  if (batch.empty()) throw InputError("train_step: empty batch");
  auto loss = cross_entropy(classifier_(features(batch)), std::span<const int>(batch.labels));
  loss.backward();
  adam_.step({classifier_.weight, classifier_.bias});
  ++report.steps;
  report.samples += batch.size();
  return static_cast<double>(loss.item());
}

std::vector<int> LinearProbeLearner::predict(const Batch& batch) {
  if (batch.empty()) return {};
  NoGradGuard no_grad;
  return argmax_rows(classifier_(features(batch)));
}

std::uint64_t LinearProbeLearner::state_digest() const {
  auto tensors = classifier_.parameters();
  Fnv1a h;
  h.update_value(parameter_digest<float>(tensors));
  h.update_value(adam_.step_count());
  return h.value();
}

template std::vector<int> argmax_rows(const Tensor<float>&);
template std::vector<int> argmax_rows(const Tensor<double>&);
template struct Classifier<float>;
template struct Classifier<double>;
template class PromptLearner<float>;
template class PromptLearner<double>;

}  // namespace l2p
