#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "l2p/backbone.hpp"
#include "l2p/ops.hpp"
#include "l2p/synthetic.hpp"
#include "support.hpp"

using namespace l2p;
using l2p::testing::gradient_error;
using l2p::testing::random_tensor;
using l2p::testing::weighted_sum;

namespace {

Batch random_batch(ImageShape shape, Index count, std::uint64_t seed) {
  Rng rng(seed);
  Dataset data;
  for (Index i = 0; i < count; ++i) {
    Sample s;
    for (Index p = 0; p < shape.pixels(); ++p) s.pixels.push_back(static_cast<float>(rng.uniform()));
    s.uid = static_cast<std::uint64_t>(i + 1);
    data.push_back(std::move(s));
  }
  return make_batch(data, shape);
}

BackboneConfig tiny_config() {
  BackboneConfig c;
  c.image = {1, 8};
  c.patch = 4;
  c.embed_dim = 8;
  c.key_dim = 8;
  c.depth = 1;
  c.heads = 2;
  return c;
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("l2p_test_" + name);
}

}  // namespace

TEST_CASE("token length counts patches plus the class token") {
  BackboneConfig c;
  CHECK(c.token_length() == 17);
  Backbone<float> b16(c, 1);
  CHECK(b16.embed(random_batch(c.image, 2, 1)).shape() == Shape{2, 17, 64});

  BackboneConfig m;
  m.image = {1, 28};
  m.patch = 7;
  CHECK(m.token_length() == 17);
  Backbone<float> b28(m, 1);
  CHECK(b28.embed(random_batch(m.image, 1, 2)).shape() == Shape{1, 17, 64});
}

TEST_CASE("config validation names the field") {
  BackboneConfig c;
  c.patch = 5;
  CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("backbone.patch"), ConfigError);
  c = {};
  c.heads = 3;
  CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("backbone.heads"), ConfigError);
}

TEST_CASE("zero image embeds to patch bias plus position") {
  const auto c = tiny_config();
  Backbone<double> b(c, 3);
  const auto params = b.parameters();
  const auto& bias = params[1];
  const auto& cls = params[2];
  const auto& pos = params[3];
  Dataset zero(1);
  zero[0].pixels.assign(static_cast<std::size_t>(c.image.pixels()), 0.0f);
  const auto e = b.embed(make_batch(zero, c.image));
  const Index d = c.embed_dim;
  for (Index j = 0; j < d; ++j) CHECK(e[j] == doctest::Approx(cls[j] + pos[j]));
  for (Index t = 1; t < c.token_length(); ++t)
    for (Index j = 0; j < d; ++j) CHECK(e[t * d + j] == doctest::Approx(bias[j] + pos[t * d + j]));
}

TEST_CASE("embedding rejects mismatched images") {
  Backbone<float> b(BackboneConfig{}, 0);
  CHECK_THROWS_AS(b.embed(random_batch({1, 8}, 1, 0)), InputError);
  CHECK_THROWS_AS(b.forward_features(Tensorf::zeros({1, 17, 32})), InputError);
}

TEST_CASE("forward features preserves shape for any token length") {
  BackboneConfig c;
  Backbone<float> b(c, 4);
  const auto tokens = b.embed(random_batch(c.image, 2, 5));
  CHECK(b.forward_features(tokens).shape() == tokens.shape());
  Rng rng(1);
  auto longer = concat_tokens<float>({Tensorf::full({2, 25, 64}, 0.1f), tokens});
  CHECK(b.forward_features(longer).shape() == Shape{2, 42, 64});
}

TEST_CASE("depth zero is the identity") {
  auto c = tiny_config();
  c.depth = 0;
  Backbone<double> b(c, 0);
  Rng rng(2);
  auto x = random_tensor({2, 5, 8}, rng, false);
  CHECK(b.forward_features(x).values() == x.values());
}

TEST_CASE("backbone gradients match finite differences") {
  // Layer norm over the near-constant class row is strongly curved, so the
  // composite check needs a finer step than the per-op checks.
  const auto c = tiny_config();
  for (int seed = 0; seed < 3; ++seed) {
    Backbone<double> b(c, static_cast<std::uint64_t>(seed));
    const auto batch = random_batch(c.image, 2, static_cast<std::uint64_t>(seed));
    Rng rng(seed);
    auto w = random_tensor({2, 5, 8}, rng, false);
    CHECK(gradient_error([&] { return weighted_sum(b.forward_features(b.embed(batch)), w); },
                         b.parameters(), 1e-5) < 1e-4);
  }
}

TEST_CASE("query feature is the detached class row of a full forward pass") {
  BackboneConfig c;
  Backbone<float> b(c, 6);
  const auto batch = random_batch(c.image, 3, 7);
  const auto q = b.query_feature(batch);
  CHECK(q.shape() == Shape{3, 64});
  CHECK(q.is_leaf());
  CHECK_FALSE(q.requires_grad());
  const auto full = select_token(b.forward_features(b.embed(batch)), 0);
  CHECK(q.values() == full.values());

  Dataset twice;
  for (int i = 0; i < 2; ++i) {
    Sample s;
    s.pixels.assign(batch.pixels.begin(), batch.pixels.begin() + c.image.pixels());
    twice.push_back(s);
  }
  const auto q2 = b.query_feature(make_batch(twice, c.image));
  CHECK(q2.values().head(64) == q2.values().tail(64));
}

TEST_CASE("freezing clears requires_grad and training cannot reach the backbone") {
  Backbone<float> b(BackboneConfig{}, 8);
  b.freeze();
  for (const auto& p : b.parameters()) CHECK_FALSE(p.requires_grad());
  const auto before = b.digest();
  const auto batch = random_batch(b.config().image, 2, 9);
  auto prompt = Tensorf::full({2, 3, 64}, 0.5f, true);
  auto out = b.forward_features(concat_tokens<float>({prompt, b.embed(batch)}));
  sum(out).backward();
  CHECK(prompt.has_grad());
  for (const auto& p : b.parameters()) CHECK_FALSE(p.has_grad());
  CHECK(b.digest() == before);
}

TEST_CASE("pretraining is deterministic and beats chance") {
  GeneratorConfig g;
  g.num_classes = 4;
  g.noise = 0.2;
  SyntheticGenerator gen(g);
  Dataset train, held;
  for (Index c = 0; c < 4; ++c) {
    for (Index i = 0; i < 24; ++i) train.push_back(gen.sample(c, i));
    for (Index i = 24; i < 32; ++i) held.push_back(gen.sample(c, i));
  }
  BackboneConfig c;
  c.embed_dim = 16;
  c.key_dim = 16;
  c.depth = 1;
  c.heads = 2;
  c.pretrain_classes = 4;
  PretrainOptions o;
  o.epochs = 4;
  o.seed = 5;
  Backbone<float> a(c, 1), b(c, 1);
  const auto ra = pretrain(a, train, held, o);
  const auto rb = pretrain(b, train, held, o);
  CHECK(a.digest() == b.digest());
  CHECK(ra.epoch_losses == rb.epoch_losses);
  CHECK(a.frozen());
  for (const auto& p : a.parameters()) CHECK_FALSE(p.requires_grad());
  CHECK(ra.heldout_accuracy >= 3.0 * 0.25);
  CHECK_THROWS_AS(pretrain(a, Dataset{}, held, o), InputError);
}

TEST_CASE("weight files round-trip and reject corruption") {
  const auto c = tiny_config();
  Backbone<float> b(c, 10);
  const auto path = temp_path("weights.l2pw");
  save_weights(b, path);
  const auto loaded = load_weights(path, &c);
  CHECK(loaded.digest() == b.digest());
  CHECK(loaded.frozen());

  auto other = c;
  other.depth = 2;
  CHECK_THROWS_WITH_AS(load_weights(path, &other), doctest::Contains("depth"), ConfigError);

  const auto size = std::filesystem::file_size(path);
  std::filesystem::resize_file(path, size - 3);
  CHECK_THROWS_WITH_AS(load_weights(path), doctest::Contains("byte offset"), FormatError);

  save_weights(b, path);
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(4);
    const char bad_version[4] = {9, 0, 0, 0};
    f.write(bad_version, 4);
  }
  CHECK_THROWS_WITH_AS(load_weights(path), doctest::Contains("version"), FormatError);

  save_weights(b, path);
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.write("XXXX", 4);
  }
  CHECK_THROWS_AS(load_weights(path), FormatError);
  std::filesystem::remove(path);
}
