#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "l2p/tensor.hpp"

namespace l2p {

struct PoolConfig {
  Index pool_size = 10;     ///< M
  Index prompt_length = 5;  ///< L_p
  Index top_n = 5;          ///< N
  Index embed_dim = 64;     ///< D
  Index key_dim = 64;       ///< D_k

  /// M * L_p * D + M * D_k.
  Index parameter_count() const { return pool_size * prompt_length * embed_dim + pool_size * key_dim; }
  void validate() const;
};

/// N distinct prompt indices in selection order, with the cosine distances
/// between the query and each selected key.
struct Selection {
  std::vector<Index> indices;
  std::vector<double> scores;

  bool operator==(const Selection&) const = default;
};

/// Per-prompt selection counts. The normalized view divides by the total
/// count, so entries lie in [0, 1] and an empty table normalizes to zeros.
class FrequencyTable {
 public:
  FrequencyTable() = default;
  explicit FrequencyTable(Index pool_size) : counts_(static_cast<std::size_t>(pool_size), 0) {}

  Index size() const { return static_cast<Index>(counts_.size()); }
  const std::vector<std::uint64_t>& counts() const { return counts_; }
  std::uint64_t total() const;

  /// h_i = count_i / sum_j count_j. Each call is counted in reads().
  std::vector<double> normalized() const;
  std::uint64_t reads() const { return reads_; }

  void record(const Selection& selection);
  void set_counts(std::vector<std::uint64_t> counts) { counts_ = std::move(counts); }

  bool operator==(const FrequencyTable& o) const { return counts_ == o.counts_; }

 private:
  std::vector<std::uint64_t> counts_;
  mutable std::uint64_t reads_ = 0;
};

/// Adds one count per selected index, for every selection in order.
void update_frequency(FrequencyTable& table, std::span<const Selection> selections);

/// Indices of the `n` smallest scores, ascending by (score, index).
/// Choosing them minimizes the summed score over all n-subsets.
std::vector<Index> top_n_indices(std::span<const double> scores, Index n);

/// score_i * h_i.
std::vector<double> penalized_scores(std::span<const double> scores, std::span<const double> h);

enum class SelectionMode { standard, diversified };

/// Learnable prompt memory: M prompts of shape [L_p x D], each paired with a
/// learnable key of length D_k.
template <typename Scalar>
class PromptPool {
 public:
  PromptPool(PoolConfig config, std::uint64_t seed);

  const PoolConfig& config() const { return config_; }
  Index size() const { return config_.pool_size; }

  const Tensor<Scalar>& prompt(Index i) const { return prompts_.at(static_cast<std::size_t>(i)); }
  const Tensor<Scalar>& key(Index i) const { return keys_.at(static_cast<std::size_t>(i)); }
  Tensor<Scalar>& prompt(Index i) { return prompts_.at(static_cast<std::size_t>(i)); }
  Tensor<Scalar>& key(Index i) { return keys_.at(static_cast<std::size_t>(i)); }
  const std::vector<Tensor<Scalar>>& prompts() const { return prompts_; }
  const std::vector<Tensor<Scalar>>& keys() const { return keys_; }

  /// Prompts then keys, in index order.
  std::vector<Tensor<Scalar>> parameters() const;
  Index parameter_count() const;

  /// Cosine distance of `query` to every key, in double precision.
  std::vector<double> key_distances(std::span<const Scalar> query) const;

 private:
  PoolConfig config_;
  std::vector<Tensor<Scalar>> prompts_;
  std::vector<Tensor<Scalar>> keys_;
};

/// Top-N keys by cosine distance to `query`.
template <typename Scalar>
Selection select(const PromptPool<Scalar>& pool, std::span<const Scalar> query, Index n);

/// Top-N keys by cosine distance scaled by the normalized selection frequency.
template <typename Scalar>
Selection select_diversified(const PromptPool<Scalar>& pool, std::span<const Scalar> query,
                             Index n, const FrequencyTable& table);

/// Row-wise selection over queries [B x D_k]. `table` is required (and only
/// read) in diversified mode.
template <typename Scalar>
std::vector<Selection> select_batch(const PromptPool<Scalar>& pool, const Tensor<Scalar>& queries,
                                    Index n, SelectionMode mode,
                                    const FrequencyTable* table = nullptr);

/// [P_s1; ...; P_sN; x_e] for one embedded input x_e of shape [L x D].
template <typename Scalar>
Tensor<Scalar> prepend(const PromptPool<Scalar>& pool, const Selection& selection,
                       const Tensor<Scalar>& embedded);

/// Batched form: embedded is [B x L x D] with one selection per row.
template <typename Scalar>
Tensor<Scalar> prepend_batch(const PromptPool<Scalar>& pool, std::span<const Selection> selections,
                             const Tensor<Scalar>& embedded);

extern template class PromptPool<float>;
extern template class PromptPool<double>;

}  // namespace l2p
