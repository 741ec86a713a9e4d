#include <doctest.h>

#include <cmath>

#include "l2p/ops.hpp"
#include "l2p/prompt_pool.hpp"
#include "subset_oracle.hpp"
#include "support.hpp"

using namespace l2p;
using l2p::testing::brute_force_subset;
using l2p::testing::random_tensor;

namespace {

/// Pool whose keys sit at the given cosine distances from the query [1, 0].
PromptPool<double> planar_pool(const std::vector<double>& distances) {
  PoolConfig c{.pool_size = static_cast<Index>(distances.size()), .prompt_length = 1,
               .top_n = 1, .embed_dim = 2, .key_dim = 2};
  PromptPool<double> pool(c, 0);
  for (std::size_t i = 0; i < distances.size(); ++i) {
    const double cosine = 1.0 - distances[i];
    auto& k = pool.key(static_cast<Index>(i)).mutable_values();
    k[0] = cosine;
    k[1] = std::sqrt(std::max(0.0, 1.0 - cosine * cosine));
  }
  return pool;
}

const double kQuery[] = {1.0, 0.0};

}  // namespace

TEST_CASE("parameter counts at paper dimensions") {
  PoolConfig small{.pool_size = 10, .prompt_length = 5, .top_n = 5, .embed_dim = 768,
                   .key_dim = 768};
  CHECK(small.parameter_count() == 46080);
  CHECK(PromptPool<float>(small, 0).parameter_count() == 46080);
  PoolConfig large = small;
  large.pool_size = 20;
  CHECK(large.parameter_count() == 92160);
  CHECK(PromptPool<float>(large, 0).parameter_count() == 92160);
}

TEST_CASE("pool construction") {
  PoolConfig c;
  c.top_n = 11;
  CHECK_THROWS_AS(PromptPool<float>(c, 0), ConfigError);
  c.top_n = 5;
  PromptPool<float> a(c, 3), b(c, 3);
  for (Index i = 0; i < c.pool_size; ++i) {
    CHECK(a.prompt(i).values() == b.prompt(i).values());
    CHECK(a.key(i).values() == b.key(i).values());
    CHECK(a.prompt(i).requires_grad());
    CHECK(a.key(i).requires_grad());
    CHECK(a.key(i).values().cwiseAbs().maxCoeff() <= 1.0f);
  }
  CHECK(a.parameters().size() == 20);
}

TEST_CASE("select picks the smallest distances with index tie-break") {
  const auto pool = planar_pool({0.9, 0.1, 0.5});
  const auto s = select<double>(pool, kQuery, 2);
  CHECK(s.indices == std::vector<Index>{1, 2});
  CHECK(s.scores[0] == doctest::Approx(0.1));
  CHECK(s.scores[1] == doctest::Approx(0.5));
  CHECK(brute_force_subset({0.9, 0.1, 0.5}, 2) == std::vector<Index>{1, 2});

  CHECK(select<double>(pool, kQuery, 3).indices.size() == 3);

  const auto tied = planar_pool({0.5, 0.5, 0.5, 0.5});
  CHECK(select<double>(tied, kQuery, 2).indices == std::vector<Index>{0, 1});

  const double zero[] = {0.0, 0.0};
  CHECK_THROWS_AS(select<double>(pool, zero, 1), DegenerateInputError);
}

TEST_CASE("a query equal to one key ranks it first") {
  PoolConfig c{.pool_size = 10, .prompt_length = 1, .top_n = 3, .embed_dim = 10, .key_dim = 10};
  PromptPool<double> pool(c, 0);
  for (Index i = 0; i < 10; ++i) {
    auto& k = pool.key(i).mutable_values();
    k.setZero();
    k[i] = 1.0;
  }
  const auto& k7 = pool.key(7).values();
  const auto s = select<double>(pool, std::span<const double>(k7.data(), 10), 3);
  CHECK(s.indices.front() == 7);
  CHECK(s.scores.front() == 0.0);
}

TEST_CASE("diversified selection") {
  const auto pool = planar_pool({0.2, 0.3});
  FrequencyTable table(2);
  table.set_counts({4, 0});
  CHECK(select_diversified<double>(pool, kQuery, 1, table).indices == std::vector<Index>{1});

  const auto six = planar_pool({0.4, 0.9, 0.1, 0.7, 0.2, 0.6});
  FrequencyTable equal(6);
  equal.set_counts({3, 3, 3, 3, 3, 3});
  CHECK(select_diversified<double>(six, kQuery, 3, equal).indices ==
        select<double>(six, kQuery, 3).indices);

  for (int seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    std::vector<double> d;
    std::vector<std::uint64_t> counts;
    for (int i = 0; i < 6; ++i) {
      d.push_back(rng.uniform(0.0, 2.0));
      counts.push_back(rng.below(5));
    }
    const auto p = planar_pool(d);
    FrequencyTable t(6);
    t.set_counts(counts);
    const auto h = t.normalized();
    const auto distances = p.key_distances(kQuery);
    std::vector<double> penalized;
    for (int i = 0; i < 6; ++i) penalized.push_back(distances[static_cast<std::size_t>(i)] * h[static_cast<std::size_t>(i)]);
    auto got = select_diversified<double>(p, kQuery, 3, t).indices;
    std::sort(got.begin(), got.end());
    CHECK(got == brute_force_subset(penalized, 3));
  }
}

TEST_CASE("scaling penalized scores keeps the selection") {
  Rng rng(5);
  std::vector<double> s;
  for (int i = 0; i < 8; ++i) s.push_back(rng.uniform());
  std::vector<double> scaled;
  for (double v : s) scaled.push_back(v * 3.5);
  CHECK(top_n_indices(s, 4) == top_n_indices(scaled, 4));
}

TEST_CASE("frequency table normalization and updates") {
  FrequencyTable t(5);
  CHECK(t.normalized() == std::vector<double>(5, 0.0));
  update_frequency(t, std::span<const Selection>{});
  CHECK(t.total() == 0);
  const Selection s{{1, 2}, {0.0, 0.0}};
  update_frequency(t, std::span<const Selection>(&s, 1));
  CHECK(t.normalized() == std::vector<double>{0, 0.5, 0.5, 0, 0});

  FrequencyTable a(5), b(5), both(5);
  const std::vector<Selection> first{{{0, 1}, {}}, {{1, 4}, {}}}, second{{{3, 1}, {}}};
  update_frequency(a, first);
  update_frequency(b, second);
  update_frequency(both, first);
  update_frequency(both, second);
  for (std::size_t i = 0; i < 5; ++i) CHECK(both.counts()[i] == a.counts()[i] + b.counts()[i]);
}

TEST_CASE("batched selection equals the per-row loop") {
  PoolConfig c{.pool_size = 6, .prompt_length = 2, .top_n = 2, .embed_dim = 4, .key_dim = 4};
  PromptPool<double> pool(c, 2);
  Rng rng(3);
  auto q = random_tensor({5, 4}, rng, false);
  // Rows 3 and 4 duplicate row 0.
  q.mutable_values().segment(12, 4) = q.values().head(4);
  q.mutable_values().segment(16, 4) = q.values().head(4);
  const auto batch = select_batch(pool, q, 2, SelectionMode::standard);
  for (Index b = 0; b < 5; ++b)
    CHECK(batch[static_cast<std::size_t>(b)] ==
          select<double>(pool, std::span<const double>(q.values().data() + b * 4, 4), 2));
  CHECK(batch[3] == batch[0]);
  CHECK(batch[4] == batch[0]);
  CHECK_THROWS_AS(select_batch(pool, q, 2, SelectionMode::diversified), StateError);

  auto with_zero = q.clone();
  with_zero.mutable_values().segment(8, 4).setZero();
  CHECK_THROWS_WITH_AS(select_batch(pool, with_zero, 2, SelectionMode::standard),
                       doctest::Contains("row 2"), DegenerateInputError);
}

TEST_CASE("prepend places prompts first in selection order") {
  PoolConfig c{.pool_size = 10, .prompt_length = 5, .top_n = 5, .embed_dim = 4, .key_dim = 4};
  PromptPool<double> pool(c, 1);
  Rng rng(4);
  auto x = random_tensor({17, 4}, rng);
  const Selection five{{3, 1, 4, 0, 9}, {}};
  const auto out = prepend(pool, five, x);
  CHECK(out.shape() == Shape{42, 4});
  CHECK(out.values().head(20) == pool.prompt(3).values());
  CHECK(out.values().segment(20, 20) == pool.prompt(1).values());
  CHECK(out.values().tail(68) == x.values());

  PoolConfig one{.pool_size = 3, .prompt_length = 1, .top_n = 1, .embed_dim = 4, .key_dim = 4};
  PromptPool<double> small(one, 1);
  const auto y = prepend(small, Selection{{2}, {}}, x);
  CHECK(y.shape() == Shape{18, 4});
  CHECK(y.values().head(4) == small.prompt(2).values());

  // A loss on prompt rows alone reaches only the chosen prompt.
  auto w = Tensord::zeros({18, 4});
  w.mutable_values().head(4).setOnes();
  sum(mul(y, w)).backward();
  CHECK(small.prompt(2).has_grad());
  CHECK_FALSE(small.prompt(0).has_grad());
  CHECK(x.grad().cwiseAbs().maxCoeff() == 0.0);

  auto xb = random_tensor({2, 17, 4}, rng);
  const std::vector<Selection> sels{{{0, 1}, {}}, {{2, 0}, {}}};
  PoolConfig two{.pool_size = 3, .prompt_length = 1, .top_n = 2, .embed_dim = 4, .key_dim = 4};
  PromptPool<double> pool2(two, 6);
  const auto batched = prepend_batch<double>(pool2, sels, xb);
  CHECK(batched.shape() == Shape{2, 19, 4});
  const auto row1 = prepend(pool2, sels[1], reshape(concat_tokens<double>({xb}), {2 * 17, 4}));
  CHECK(batched.values().segment(19 * 4, 8) == row1.values().head(8));
}
