#include <doctest.h>

#include <cmath>
#include <numbers>

#include "l2p/adam.hpp"
#include "l2p/ops.hpp"
#include "support.hpp"

using namespace l2p;
using l2p::testing::gradient_error;
using l2p::testing::random_tensor;
using l2p::testing::weighted_sum;

namespace {

constexpr int kSeeds = 20;
constexpr double kTolerance = 1e-4;

}  // namespace

TEST_CASE("matmul values and gradients") {
  const auto eye = Tensord::from({2, 2}, {1, 0, 0, 1});
  const auto b = Tensord::from({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(matmul(eye, b).values() == b.values());
  CHECK(matmul(Tensord::from({1, 2}, {1, 2}), Tensord::from({2, 1}, {3, 4})).item() == 11.0);
  CHECK_THROWS_AS(matmul(b, b), DimensionError);

  for (int seed = 0; seed < kSeeds; ++seed) {
    Rng rng(seed);
    auto x = random_tensor({3, 4}, rng), y = random_tensor({4, 2}, rng);
    CHECK(gradient_error([&] { return sum(matmul(x, y)); }, {x, y}) < kTolerance);
  }
}

TEST_CASE("elementwise ops and reductions pass gradient checks") {
  for (int seed = 0; seed < kSeeds; ++seed) {
    Rng rng(100 + seed);
    auto a = random_tensor({3, 5}, rng), b = random_tensor({3, 5}, rng);
    auto w = random_tensor({3, 5}, rng, false);
    CHECK(gradient_error([&] { return weighted_sum(add(a, b), w); }, {a, b}) < kTolerance);
    CHECK(gradient_error([&] { return weighted_sum(sub(a, b), w); }, {a, b}) < kTolerance);
    CHECK(gradient_error([&] { return weighted_sum(mul(a, b), w); }, {a, b}) < kTolerance);
    CHECK(gradient_error([&] { return weighted_sum(scale(a, 1.7), w); }, {a}) < kTolerance);
    CHECK(gradient_error([&] { return mean(mul(a, a)); }, {a}) < kTolerance);
    auto w2 = random_tensor({5, 3}, rng, false);
    CHECK(gradient_error([&] { return weighted_sum(reshape(a, {5, 3}), w2); }, {a}) < kTolerance);
    std::vector<Tensord> parts{a, b, a};
    CHECK(gradient_error([&] { return weighted_sum(add_n<double>(parts), w); }, {a, b}) <
          kTolerance);
  }
}

TEST_CASE("linear and batched matmul pass gradient checks") {
  for (int seed = 0; seed < kSeeds; ++seed) {
    Rng rng(200 + seed);
    auto x = random_tensor({2, 3, 4}, rng), W = random_tensor({4, 5}, rng),
         bias = random_tensor({5}, rng);
    auto w = random_tensor({2, 3, 5}, rng, false);
    CHECK(gradient_error([&] { return weighted_sum(linear(x, W, bias), w); }, {x, W, bias}) <
          kTolerance);

    auto a = random_tensor({2, 3, 4}, rng), b = random_tensor({2, 4, 2}, rng),
         bt = random_tensor({2, 2, 4}, rng);
    auto w3 = random_tensor({2, 3, 2}, rng, false);
    CHECK(gradient_error([&] { return weighted_sum(batched_matmul(a, b), w3); }, {a, b}) <
          kTolerance);
    CHECK(gradient_error([&] { return weighted_sum(batched_matmul(a, bt, true), w3); }, {a, bt}) <
          kTolerance);
  }
}

TEST_CASE("softmax is stable and differentiable") {
  const auto u = softmax(Tensord::from({3}, {0, 0, 0}));
  for (Index i = 0; i < 3; ++i) CHECK(u[i] == doctest::Approx(1.0 / 3.0));
  const auto big = softmax(Tensord::from({2}, {1000, 0}));
  CHECK(std::isfinite(big[0]));
  CHECK(big[0] == doctest::Approx(1.0));
  CHECK(big[1] == doctest::Approx(0.0));

  for (int seed = 0; seed < kSeeds; ++seed) {
    Rng rng(300 + seed);
    auto v = random_tensor({5}, rng, true, -3.0, 3.0);
    auto wv = random_tensor({5}, rng, false);
    CHECK(gradient_error([&] { return weighted_sum(softmax(v), wv); }, {v}) < kTolerance);
    auto m = random_tensor({3, 4, 2}, rng, true, -3.0, 3.0);
    auto wm = random_tensor({3, 4, 2}, rng, false);
    for (Index axis : {0, 1, 2})
      CHECK(gradient_error([&] { return weighted_sum(softmax(m, axis), wm); }, {m}) < kTolerance);
  }
}

TEST_CASE("layer norm examples and gradients") {
  const auto one = Tensord::full({2}, 1.0), zero = Tensord::zeros({2});
  const auto flat = layer_norm(Tensord::from({1, 2}, {3, 3}), one, zero);
  CHECK(flat[0] == 0.0);
  CHECK(flat[1] == 0.0);
  const auto unit = layer_norm(Tensord::from({1, 2}, {1, -1}), one, zero, 1e-12);
  CHECK(unit[0] == doctest::Approx(1.0));
  CHECK(unit[1] == doctest::Approx(-1.0));
  CHECK_THROWS_AS(layer_norm(Tensord::from({1, 2}, {1, -1}), one, zero, 0.0), ConfigError);

  for (int seed = 0; seed < kSeeds; ++seed) {
    Rng rng(400 + seed);
    auto x = random_tensor({4, 8}, rng, true, -2.0, 2.0);
    auto g = random_tensor({8}, rng), b = random_tensor({8}, rng);
    auto w = random_tensor({4, 8}, rng, false);
    CHECK(gradient_error([&] { return weighted_sum(layer_norm(x, g, b), w); }, {x, g, b}) <
          kTolerance);
  }
}

TEST_CASE("gelu uses the tanh form and differentiates") {
  const auto y = gelu(Tensord::from({3}, {-1.0, 0.0, 2.0}));
  auto reference = [](double x) {
    return 0.5 * x * (1.0 + std::tanh(std::sqrt(2.0 / std::numbers::pi) * (x + 0.044715 * x * x * x)));
  };
  CHECK(y[0] == doctest::Approx(reference(-1.0)));
  CHECK(y[1] == 0.0);
  CHECK(y[2] == doctest::Approx(reference(2.0)));
  for (int seed = 0; seed < kSeeds; ++seed) {
    Rng rng(500 + seed);
    auto x = random_tensor({6}, rng, true, -3.0, 3.0);
    auto w = random_tensor({6}, rng, false);
    CHECK(gradient_error([&] { return weighted_sum(gelu(x), w); }, {x}) < kTolerance);
  }
}

TEST_CASE("token concatenation routes gradients to the source parts") {
  Rng rng(7);
  auto a = random_tensor({3, 4}, rng), b = random_tensor({4, 4}, rng);
  const auto single = concat_tokens<double>({a});
  CHECK(single.values() == a.values());
  const auto both = concat_tokens<double>({a, b});
  CHECK(both.shape() == Shape{7, 4});
  CHECK(both.values().head(12) == a.values());
  CHECK_THROWS_AS(concat_tokens<double>({a, random_tensor({2, 3}, rng)}), DimensionError);

  // A loss over rows 0-2 only reaches the first part.
  auto first_rows = random_tensor({7, 4}, rng, false);
  first_rows.mutable_values().tail(16).setZero();
  auto loss = weighted_sum(concat_tokens<double>({a, b}), first_rows);
  loss.backward();
  CHECK(a.has_grad());
  CHECK(b.grad().cwiseAbs().maxCoeff() == 0.0);
  a.clear_grad();
  b.clear_grad();

  for (int seed = 0; seed < kSeeds; ++seed) {
    Rng r(600 + seed);
    auto p = random_tensor({2, 3, 4}, r), q = random_tensor({2, 1, 4}, r);
    auto w = random_tensor({2, 4, 4}, r, false);
    CHECK(gradient_error([&] { return weighted_sum(concat_tokens<double>({p, q}), w); }, {p, q}) <
          kTolerance);
  }
}

TEST_CASE("token shape ops pass gradient checks") {
  for (int seed = 0; seed < kSeeds; ++seed) {
    Rng rng(700 + seed);
    auto x = random_tensor({2, 5, 6}, rng), v = random_tensor({6}, rng);
    auto u = random_tensor({5, 6}, rng);
    std::vector<Tensord> parts{u, u, random_tensor({5, 6}, rng)};
    auto w_stack = random_tensor({3, 5, 6}, rng, false);
    CHECK(gradient_error([&] { return weighted_sum(stack<double>(parts), w_stack); },
                         {u, parts[2]}) < kTolerance);
    auto w_b = random_tensor({3, 6}, rng, false);
    CHECK(gradient_error([&] { return weighted_sum(broadcast_batch(v, 3), w_b); }, {v}) <
          kTolerance);
    auto w_h = random_tensor({6, 5, 2}, rng, false);
    CHECK(gradient_error([&] { return weighted_sum(split_heads(x, 3), w_h); }, {x}) < kTolerance);
    auto w_x = random_tensor({2, 5, 6}, rng, false);
    CHECK(gradient_error([&] { return weighted_sum(merge_heads(split_heads(x, 3), 3), w_x); },
                         {x}) < kTolerance);
    auto w_r = random_tensor({2, 6}, rng, false);
    CHECK(gradient_error([&] { return weighted_sum(mean_tokens(x, 1, 4), w_r); }, {x}) <
          kTolerance);
    CHECK(gradient_error([&] { return weighted_sum(select_token(x, 2), w_r); }, {x}) < kTolerance);
    auto y = random_tensor({3, 6}, rng);
    auto w_v = random_tensor({6}, rng, false);
    CHECK(gradient_error([&] { return weighted_sum(row(y, 1), w_v); }, {y}) < kTolerance);
  }
}

TEST_CASE("split and merge heads are inverse") {
  Rng rng(3);
  auto x = random_tensor({2, 3, 8}, rng, false);
  CHECK(merge_heads(split_heads(x, 4), 4).values() == x.values());
}

TEST_CASE("cross entropy examples and gradients") {
  const int labels[] = {0, 2};
  const auto saturated = Tensord::from({2, 3}, {1000, 0, 0, 0, 0, 1000});
  CHECK(cross_entropy<double>(saturated, labels).item() == doctest::Approx(0.0));
  const int label4[] = {3};
  CHECK(cross_entropy<double>(Tensord::zeros({1, 4}), label4).item() ==
        doctest::Approx(std::log(4.0)));
  const int bad[] = {0, 3};
  try {
    cross_entropy<double>(saturated, bad);
    FAIL("expected an input error");
  } catch (const InputError& e) {
    CHECK(std::string(e.what()).find("row 1") != std::string::npos);
  }
  for (int seed = 0; seed < kSeeds; ++seed) {
    Rng rng(800 + seed);
    auto logits = random_tensor({2, 3}, rng, true, -2.0, 2.0);
    const int lab[] = {static_cast<int>(rng.below(3)), static_cast<int>(rng.below(3))};
    CHECK(gradient_error([&] { return cross_entropy<double>(logits, lab); }, {logits}) <
          kTolerance);
  }
}

TEST_CASE("cosine distance examples, invariance and gradients") {
  const auto e0 = Tensord::from({2}, {1, 0}), e1 = Tensord::from({2}, {0, 1}),
             neg = Tensord::from({2}, {-1, 0});
  CHECK(cosine_distance(e0, e1).item() == doctest::Approx(1.0));
  CHECK(cosine_distance(e0, neg).item() == doctest::Approx(2.0));
  CHECK_THROWS_AS(cosine_distance(e0, Tensord::zeros({2})), DegenerateInputError);
  for (int seed = 0; seed < kSeeds; ++seed) {
    Rng rng(900 + seed);
    auto u = random_tensor({6}, rng), v = random_tensor({6}, rng);
    CHECK(std::abs(cosine_distance(u, u).item()) < 1e-12);
    const double alpha = rng.uniform(0.1, 10.0), beta = rng.uniform(0.1, 10.0);
    CHECK(std::abs(cosine_distance(scale(u, alpha), scale(v, beta)).item() -
                   cosine_distance(u, v).item()) < 1e-9);
    CHECK(gradient_error([&] { return cosine_distance(u, v); }, {u, v}) < kTolerance);
  }
}

TEST_CASE("reused tensors accumulate gradients") {
  auto x = Tensord::from({2}, {1.5, -2.0}, true);
  sum(add(mul(x, x), x)).backward();
  CHECK(x.grad()[0] == doctest::Approx(2 * 1.5 + 1));
  CHECK(x.grad()[1] == doctest::Approx(2 * -2.0 + 1));
}

TEST_CASE("frozen tensors never receive gradients and ops do not mutate inputs") {
  Rng rng(11);
  auto frozen = random_tensor({3, 3}, rng, false);
  auto learned = random_tensor({3, 3}, rng);
  const Vector<double> before = frozen.values();
  const Vector<double> learned_before = learned.values();
  sum(gelu(matmul(frozen, learned))).backward();
  CHECK_FALSE(frozen.has_grad());
  CHECK(learned.has_grad());
  CHECK(frozen.values() == before);
  CHECK(learned.values() == learned_before);
  CHECK_THROWS_AS(frozen.grad(), StateError);
}

TEST_CASE("graph order lists consumers before producers") {
  auto a = Tensord::from({2}, {1, 2}, true);
  auto b = mul(a, a);
  auto c = sum(add(b, a));
  const auto g = Graph<double>::from_root(c);
  std::vector<const detail::Node<double>*> order(g.order().begin(), g.order().end());
  auto pos = [&](const Tensord& t) {
    return std::find(order.begin(), order.end(), t.node().get()) - order.begin();
  };
  CHECK(pos(c) == 0);
  CHECK(pos(b) < pos(a));
}

TEST_CASE("no graph is recorded under NoGradGuard") {
  auto a = Tensord::from({2}, {1, 2}, true);
  NoGradGuard guard;
  auto y = sum(mul(a, a));
  CHECK_FALSE(y.requires_grad());
  CHECK(y.is_leaf());
}

TEST_CASE("adam single step, zero gradient and closed-form moments") {
  Adam<double> adam;
  auto p = Tensord::scalar(1.0, true);
  p.set_name("p");
  sum(p).backward();  // grad 1
  adam.step({p});
  CHECK(p.item() == doctest::Approx(1.0 - 0.03).epsilon(1e-6));
  CHECK_FALSE(p.has_grad());

  auto z = Tensord::from({2}, {0.5, -0.5}, true);
  scale(sum(z), 0.0).backward();
  Adam<double> other;
  other.step({z});
  CHECK(z[0] == 0.5);
  CHECK(z[1] == -0.5);

  // Two identical steps: m = (1 - b1^2) g, v = (1 - b2^2) g^2.
  Adam<double> twice;
  auto q = Tensord::scalar(0.0, true);
  const double g = 0.7;
  for (int i = 0; i < 2; ++i) {
    scale(sum(q), g).backward();
    twice.step({q});
  }
  CHECK(twice.step_count() == 2);
  const auto* m = twice.moments(q);
  REQUIRE(m != nullptr);
  CHECK(m->first[0] == doctest::Approx((1 - 0.9 * 0.9) * g));
  CHECK(m->second[0] == doctest::Approx((1 - 0.999 * 0.999) * g * g));
  CHECK(m->updates == 2);
}

TEST_CASE("adam refuses a step when a gradient is missing") {
  Adam<double> adam;
  auto a = Tensord::scalar(1.0, true), b = Tensord::scalar(2.0, true);
  b.set_name("orphan");
  sum(a).backward();
  try {
    adam.step({a, b});
    FAIL("expected a state error");
  } catch (const StateError& e) {
    CHECK(std::string(e.what()).find("orphan") != std::string::npos);
  }
  CHECK(a.item() == 1.0);
  CHECK(adam.step_count() == 0);
}
