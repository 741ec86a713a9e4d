#include "l2p/prompt_pool.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "l2p/ops.hpp"
#include "l2p/random.hpp"

namespace l2p {

void PoolConfig::validate() const {
  if (pool_size <= 0) throw ConfigError("pool.pool_size must be positive");
  if (prompt_length <= 0) throw ConfigError("pool.prompt_length must be positive");
  if (top_n <= 0) throw ConfigError("pool.top_n must be positive");
  if (embed_dim <= 0) throw ConfigError("pool.embed_dim must be positive");
  if (key_dim <= 0) throw ConfigError("pool.key_dim must be positive");
  if (top_n > pool_size)
    throw ConfigError("pool.top_n (" + std::to_string(top_n) + ") exceeds pool.pool_size (" +
                      std::to_string(pool_size) + ")");
}

std::uint64_t FrequencyTable::total() const {
  return std::accumulate(counts_.begin(), counts_.end(), std::uint64_t{0});
}

std::vector<double> FrequencyTable::normalized() const {
  ++reads_;
  std::vector<double> h(counts_.size(), 0.0);
  const auto t = total();
  if (t == 0) return h;
  for (std::size_t i = 0; i < counts_.size(); ++i)
    h[i] = static_cast<double>(counts_[i]) / static_cast<double>(t);
  return h;
}

void FrequencyTable::record(const Selection& selection) {
  for (Index i : selection.indices) {
    if (i < 0 || i >= size())
      throw InputError("frequency table: index " + std::to_string(i) + " out of range");
    ++counts_[static_cast<std::size_t>(i)];
  }
}

void update_frequency(FrequencyTable& table, std::span<const Selection> selections) {
  for (const auto& s : selections) table.record(s);
}

std::vector<Index> top_n_indices(std::span<const double> scores, Index n) {
  const auto m = static_cast<Index>(scores.size());
  if (n < 1 || n > m)
    throw ConfigError("top_n " + std::to_string(n) + " outside [1, " + std::to_string(m) + "]");
  std::vector<Index> order(scores.size());
  std::iota(order.begin(), order.end(), Index{0});
  std::partial_sort(order.begin(), order.begin() + n, order.end(), [&](Index a, Index b) {
    const double sa = scores[static_cast<std::size_t>(a)], sb = scores[static_cast<std::size_t>(b)];
    return sa < sb || (sa == sb && a < b);
  });
  order.resize(static_cast<std::size_t>(n));
  return order;
}

std::vector<double> penalized_scores(std::span<const double> scores, std::span<const double> h) {
  if (scores.size() != h.size())
    throw DimensionError("penalized_scores: " + std::to_string(scores.size()) + " scores, " +
                         std::to_string(h.size()) + " frequencies");
  std::vector<double> out(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) out[i] = scores[i] * h[i];
  return out;
}

template <typename Scalar>
PromptPool<Scalar>::PromptPool(PoolConfig config, std::uint64_t seed) : config_(config) {
  config_.validate();
  Rng rng = Rng::derive(seed, {0x9001});
  for (Index i = 0; i < config_.pool_size; ++i) {
    auto p = Tensor<Scalar>::zeros({config_.prompt_length, config_.embed_dim}, true);
    p.set_name("prompt" + std::to_string(i));
    for (Index j = 0; j < p.size(); ++j)
      p.mutable_values()[j] = static_cast<Scalar>(rng.uniform(-1.0, 1.0));
    prompts_.push_back(std::move(p));
  }
  for (Index i = 0; i < config_.pool_size; ++i) {
    auto k = Tensor<Scalar>::zeros({config_.key_dim}, true);
    k.set_name("key" + std::to_string(i));
    for (Index j = 0; j < k.size(); ++j)
      k.mutable_values()[j] = static_cast<Scalar>(rng.uniform(-1.0, 1.0));
    keys_.push_back(std::move(k));
  }
}

template <typename Scalar>
std::vector<Tensor<Scalar>> PromptPool<Scalar>::parameters() const {
  std::vector<Tensor<Scalar>> out = prompts_;
  out.insert(out.end(), keys_.begin(), keys_.end());
  return out;
}

template <typename Scalar>
Index PromptPool<Scalar>::parameter_count() const {
  Index n = 0;
  for (const auto& p : parameters()) n += p.size();
  return n;
}

template <typename Scalar>
std::vector<double> PromptPool<Scalar>::key_distances(std::span<const Scalar> query) const {
  if (static_cast<Index>(query.size()) != config_.key_dim)
    throw DimensionError("select: query length " + std::to_string(query.size()) +
                         " does not match key_dim " + std::to_string(config_.key_dim));
  double qn = 0.0;
  for (Scalar v : query) qn += static_cast<double>(v) * static_cast<double>(v);
  qn = std::sqrt(qn);
  if (!(qn > 1e-12)) throw DegenerateInputError("select: zero query vector");
  std::vector<double> out;
  out.reserve(keys_.size());
  for (const auto& key : keys_) {
    double dot = 0.0, kn = 0.0;
    for (Index j = 0; j < key.size(); ++j) {
      const auto kv = static_cast<double>(key.values()[j]);
      dot += kv * static_cast<double>(query[static_cast<std::size_t>(j)]);
      kn += kv * kv;
    }
    kn = std::sqrt(kn);
    if (!(kn > 1e-12)) throw DegenerateInputError("select: zero key vector " + key.name());
    out.push_back(1.0 - dot / (qn * kn));
  }
  return out;
}

namespace {

Selection make_selection(const std::vector<double>& distances, std::vector<Index> indices) {
  Selection s;
  s.scores.reserve(indices.size());
  for (Index i : indices) s.scores.push_back(distances[static_cast<std::size_t>(i)]);
  s.indices = std::move(indices);
  return s;
}

}  // namespace

template <typename Scalar>
Selection select(const PromptPool<Scalar>& pool, std::span<const Scalar> query, Index n) {
  const auto d = pool.key_distances(query);
  return make_selection(d, top_n_indices(d, n));
}

template <typename Scalar>
Selection select_diversified(const PromptPool<Scalar>& pool, std::span<const Scalar> query,
                             Index n, const FrequencyTable& table) {
  if (table.size() != pool.size())
    throw DimensionError("select_diversified: table has " + std::to_string(table.size()) +
                         " entries for a pool of " + std::to_string(pool.size()));
  const auto d = pool.key_distances(query);
  const auto h = table.normalized();
  return make_selection(d, top_n_indices(penalized_scores(d, h), n));
}

template <typename Scalar>
std::vector<Selection> select_batch(const PromptPool<Scalar>& pool, const Tensor<Scalar>& queries,
                                    Index n, SelectionMode mode, const FrequencyTable* table) {
  if (queries.rank() != 2 || queries.dim(1) != pool.config().key_dim)
    throw DimensionError("select_batch: queries " + shape_string(queries.shape()) +
                         " must be [B x " + std::to_string(pool.config().key_dim) + "]");
  if (mode == SelectionMode::diversified && table == nullptr)
    throw StateError("select_batch: diversified mode needs a frequency table");
  const Index width = queries.dim(1);
  std::vector<Selection> out;
  out.reserve(static_cast<std::size_t>(queries.dim(0)));
  for (Index b = 0; b < queries.dim(0); ++b) {
    std::span<const Scalar> q(queries.values().data() + b * width, static_cast<std::size_t>(width));
    try {
      out.push_back(mode == SelectionMode::diversified ? select_diversified(pool, q, n, *table)
                                                       : select(pool, q, n));
    } catch (const DegenerateInputError& e) {
      throw DegenerateInputError("row " + std::to_string(b) + ": " + e.what());
    }
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> prepend(const PromptPool<Scalar>& pool, const Selection& selection,
                       const Tensor<Scalar>& embedded) {
  if (embedded.rank() != 2 || embedded.dim(1) != pool.config().embed_dim)
    throw DimensionError("prepend: embedded input " + shape_string(embedded.shape()) +
                         " must be [L x " + std::to_string(pool.config().embed_dim) + "]");
  std::vector<Tensor<Scalar>> parts;
  for (Index i : selection.indices) {
    if (i < 0 || i >= pool.size())
      throw InputError("prepend: prompt index " + std::to_string(i) + " out of range");
    parts.push_back(pool.prompt(i));
  }
  parts.push_back(embedded);
  return concat_tokens<Scalar>(parts);
}

template <typename Scalar>
Tensor<Scalar> prepend_batch(const PromptPool<Scalar>& pool, std::span<const Selection> selections,
                             const Tensor<Scalar>& embedded) {
  if (embedded.rank() != 3 || embedded.dim(2) != pool.config().embed_dim ||
      embedded.dim(0) != static_cast<Index>(selections.size()))
    throw DimensionError("prepend_batch: embedded " + shape_string(embedded.shape()) + " for " +
                         std::to_string(selections.size()) + " selections");
  std::vector<Tensor<Scalar>> blocks;
  blocks.reserve(selections.size());
  for (const auto& s : selections) {
    std::vector<Tensor<Scalar>> parts;
    for (Index i : s.indices) {
      if (i < 0 || i >= pool.size())
        throw InputError("prepend: prompt index " + std::to_string(i) + " out of range");
      parts.push_back(pool.prompt(i));
    }
    blocks.push_back(concat_tokens<Scalar>(parts));
  }
  return concat_tokens<Scalar>({stack<Scalar>(blocks), embedded});
}

#define L2P_INSTANTIATE_POOL(S)                                                                 \
  template class PromptPool<S>;                                                                 \
  template Selection select(const PromptPool<S>&, std::span<const S>, Index);                   \
  template Selection select_diversified(const PromptPool<S>&, std::span<const S>, Index,        \
                                        const FrequencyTable&);                                 \
  template std::vector<Selection> select_batch(const PromptPool<S>&, const Tensor<S>&, Index,   \
                                               SelectionMode, const FrequencyTable*);           \
  template Tensor<S> prepend(const PromptPool<S>&, const Selection&, const Tensor<S>&);         \
  template Tensor<S> prepend_batch(const PromptPool<S>&, std::span<const Selection>,            \
                                   const Tensor<S>&);

L2P_INSTANTIATE_POOL(float)
L2P_INSTANTIATE_POOL(double)

}  // namespace l2p
