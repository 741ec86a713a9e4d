#include "l2p/backbone.hpp"

#include <cmath>
#include <numeric>

#include "l2p/adam.hpp"
#include "l2p/binary_io.hpp"
#include "l2p/digest.hpp"
#include "l2p/ops.hpp"
#include "l2p/random.hpp"

namespace l2p {

void BackboneConfig::validate() const {
  auto positive = [](Index v, const char* field) {
    if (v <= 0) throw ConfigError(std::string("backbone.") + field + " must be positive");
  };
  positive(image.channels, "channels");
  positive(image.side, "image_side");
  positive(patch, "patch");
  positive(embed_dim, "embed_dim");
  positive(key_dim, "key_dim");
  positive(heads, "heads");
  positive(mlp_ratio, "mlp_ratio");
  if (depth < 0) throw ConfigError("backbone.depth must be nonnegative");
  if (image.side % patch != 0)
    throw ConfigError("backbone.patch must divide backbone.image_side");
  if (embed_dim % heads != 0) throw ConfigError("backbone.heads must divide backbone.embed_dim");
  if (key_dim != embed_dim)
    throw ConfigError("backbone.key_dim must equal backbone.embed_dim (query is the [class] row)");
}

namespace {

template <typename S>
Tensor<S> param(Shape shape, std::string name) {
  auto t = Tensor<S>::zeros(std::move(shape), true);
  t.set_name(std::move(name));
  return t;
}

template <typename S>
void fill_uniform(Tensor<S>& t, Rng& rng, double bound) {
  for (Index i = 0; i < t.size(); ++i)
    t.mutable_values()[i] = static_cast<S>(rng.uniform(-bound, bound));
}

template <typename S>
void xavier(Tensor<S>& w, Rng& rng) {
  fill_uniform(w, rng, std::sqrt(6.0 / static_cast<double>(w.dim(0) + w.dim(1))));
}

}  // namespace

template <typename Scalar>
Backbone<Scalar>::Backbone(BackboneConfig config, std::uint64_t seed) : config_(config) {
  config_.validate();
  Rng rng = Rng::derive(seed, {0xBACC});
  const Index d = config_.embed_dim, hidden = d * config_.mlp_ratio;
  patch_w_ = param<Scalar>({config_.patch_width(), d}, "patch.weight");
  patch_b_ = param<Scalar>({d}, "patch.bias");
  class_token_ = param<Scalar>({d}, "class_token");
  positions_ = param<Scalar>({config_.token_length(), d}, "positions");
  xavier(patch_w_, rng);
  fill_uniform(class_token_, rng, 0.02 * std::sqrt(3.0));
  fill_uniform(positions_, rng, 0.02 * std::sqrt(3.0));
  for (Index i = 0; i < config_.depth; ++i) {
    const std::string p = "block" + std::to_string(i) + ".";
    Block b;
    b.norm1_gain = Tensor<Scalar>::full({d}, Scalar(1), true);
    b.norm1_gain.set_name(p + "norm1.gain");
    b.norm1_bias = param<Scalar>({d}, p + "norm1.bias");
    b.query_w = param<Scalar>({d, d}, p + "attn.query.weight");
    b.query_b = param<Scalar>({d}, p + "attn.query.bias");
    b.key_w = param<Scalar>({d, d}, p + "attn.key.weight");
    b.key_b = param<Scalar>({d}, p + "attn.key.bias");
    b.value_w = param<Scalar>({d, d}, p + "attn.value.weight");
    b.value_b = param<Scalar>({d}, p + "attn.value.bias");
    b.out_w = param<Scalar>({d, d}, p + "attn.out.weight");
    b.out_b = param<Scalar>({d}, p + "attn.out.bias");
    b.norm2_gain = Tensor<Scalar>::full({d}, Scalar(1), true);
    b.norm2_gain.set_name(p + "norm2.gain");
    b.norm2_bias = param<Scalar>({d}, p + "norm2.bias");
    b.mlp_in_w = param<Scalar>({d, hidden}, p + "mlp.in.weight");
    b.mlp_in_b = param<Scalar>({hidden}, p + "mlp.in.bias");
    b.mlp_out_w = param<Scalar>({hidden, d}, p + "mlp.out.weight");
    b.mlp_out_b = param<Scalar>({d}, p + "mlp.out.bias");
    for (auto* w : {&b.query_w, &b.key_w, &b.value_w, &b.out_w, &b.mlp_in_w, &b.mlp_out_w})
      xavier(*w, rng);
    blocks_.push_back(std::move(b));
  }
  final_gain_ = Tensor<Scalar>::full({d}, Scalar(1), true);
  final_gain_.set_name("final_norm.gain");
  final_bias_ = param<Scalar>({d}, "final_norm.bias");
}

template <typename Scalar>
std::vector<Tensor<Scalar>> Backbone<Scalar>::parameters() const {
  std::vector<Tensor<Scalar>> out{patch_w_, patch_b_, class_token_, positions_};
  for (const auto& b : blocks_)
    out.insert(out.end(), {b.norm1_gain, b.norm1_bias, b.query_w, b.query_b, b.key_w, b.key_b,
                           b.value_w, b.value_b, b.out_w, b.out_b, b.norm2_gain, b.norm2_bias,
                           b.mlp_in_w, b.mlp_in_b, b.mlp_out_w, b.mlp_out_b});
  if (config_.depth > 0) out.insert(out.end(), {final_gain_, final_bias_});
  return out;
}

template <typename Scalar>
std::uint64_t Backbone<Scalar>::digest() const {
  const auto params = parameters();
  return parameter_digest<Scalar>(params);
}

template <typename Scalar>
void Backbone<Scalar>::freeze() {
  for (auto p : parameters()) p.set_requires_grad(false);
  frozen_ = true;
}

template <typename Scalar>
void Backbone<Scalar>::unfreeze() {
  for (auto p : parameters()) p.set_requires_grad(true);
  frozen_ = false;
}

template <typename Scalar>
void Backbone<Scalar>::assign(const std::vector<Tensor<Scalar>>& values) {
  auto params = parameters();
  if (values.size() != params.size())
    throw ConfigError("backbone: expected " + std::to_string(params.size()) + " parameters, got " +
                      std::to_string(values.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (values[i].name() != params[i].name() || values[i].shape() != params[i].shape())
      throw ConfigError("backbone: parameter '" + values[i].name() + "' " +
                        shape_string(values[i].shape()) + " does not match '" + params[i].name() +
                        "' " + shape_string(params[i].shape()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) params[i].mutable_values() = values[i].values();
}

template <typename Scalar>
Tensor<Scalar> Backbone<Scalar>::embed(const Batch& batch) const {
  if (!(batch.shape == config_.image))
    throw InputError("embed: image " + std::to_string(batch.shape.channels) + "x" +
                     std::to_string(batch.shape.side) + " does not match backbone " +
                     std::to_string(config_.image.channels) + "x" +
                     std::to_string(config_.image.side));
  if (batch.empty()) throw InputError("embed: empty batch");
  const Index b_count = batch.size(), grid = config_.patches_per_side(), s = config_.patch;
  const Index side = config_.image.side, channels = config_.image.channels;
  const Index width = config_.patch_width(), patches = config_.num_patches();
  Vector<Scalar> patch_values(b_count * patches * width);
  Index at = 0;
  for (Index b = 0; b < b_count; ++b) {
    const auto img = batch.image(b);
    for (Index py = 0; py < grid; ++py)
      for (Index px = 0; px < grid; ++px)
        for (Index c = 0; c < channels; ++c)
          for (Index dy = 0; dy < s; ++dy)
            for (Index dx = 0; dx < s; ++dx)
              patch_values[at++] = static_cast<Scalar>(
                  img[static_cast<std::size_t>((c * side + py * s + dy) * side + px * s + dx)]);
  }
  auto flat = Tensor<Scalar>::from({b_count, patches, width}, std::move(patch_values));
  auto projected = linear(flat, patch_w_, patch_b_);
  auto cls = broadcast_batch(reshape(class_token_, {1, config_.embed_dim}), b_count);
  auto tokens = concat_tokens<Scalar>({cls, projected});
  return add(tokens, broadcast_batch(positions_, b_count));
}

template <typename Scalar>
Tensor<Scalar> Backbone<Scalar>::attention(const Block& block, const Tensor<Scalar>& x) const {
  const Index heads = config_.heads;
  const auto head_dim = static_cast<double>(config_.embed_dim / heads);
  auto q = split_heads(linear(x, block.query_w, block.query_b), heads);
  auto k = split_heads(linear(x, block.key_w, block.key_b), heads);
  auto v = split_heads(linear(x, block.value_w, block.value_b), heads);
  auto scores = scale(batched_matmul(q, k, true), static_cast<Scalar>(1.0 / std::sqrt(head_dim)));
  auto mixed = merge_heads(batched_matmul(softmax(scores, -1), v), heads);
  return linear(mixed, block.out_w, block.out_b);
}

template <typename Scalar>
Tensor<Scalar> Backbone<Scalar>::forward_features(const Tensor<Scalar>& tokens) const {
  if (tokens.rank() != 3 || tokens.dim(2) != config_.embed_dim)
    throw InputError("forward_features: tokens " + shape_string(tokens.shape()) +
                     " do not have width " + std::to_string(config_.embed_dim));
  if (blocks_.empty()) return tokens;
  Tensor<Scalar> x = tokens;
  for (const auto& b : blocks_) {
    x = add(x, attention(b, layer_norm(x, b.norm1_gain, b.norm1_bias)));
    auto h = layer_norm(x, b.norm2_gain, b.norm2_bias);
    x = add(x, linear(gelu(linear(h, b.mlp_in_w, b.mlp_in_b)), b.mlp_out_w, b.mlp_out_b));
  }
  return layer_norm(x, final_gain_, final_bias_);
}

template <typename Scalar>
Tensor<Scalar> Backbone<Scalar>::query_feature(const Batch& batch) const {
  return select_token(forward_features(embed(batch)), 0).detach();
}

template class Backbone<float>;
template class Backbone<double>;

PretrainReport pretrain(Backbone<float>& backbone, const Dataset& train, const Dataset& heldout,
                        const PretrainOptions& options) {
  if (train.empty()) throw InputError("pretrain: empty training set");
  if (options.batch_size <= 0) throw ConfigError("pretrain.batch_size must be positive");
  const auto& cfg = backbone.config();
  const Index classes = cfg.pretrain_classes;
  for (const auto& s : train)
    if (s.label < 0 || s.label >= classes)
      throw InputError("pretrain: label " + std::to_string(s.label) + " outside [0, " +
                       std::to_string(classes) + ")");

  backbone.unfreeze();
  Rng rng = Rng::derive(options.seed, {0x9E7});
  auto head_w = Tensor<float>::zeros({cfg.embed_dim, classes}, true);
  head_w.set_name("pretrain_head.weight");
  auto head_b = Tensor<float>::zeros({classes}, true);
  head_b.set_name("pretrain_head.bias");
  const double bound = std::sqrt(6.0 / static_cast<double>(cfg.embed_dim + classes));
  for (Index i = 0; i < head_w.size(); ++i)
    head_w.mutable_values()[i] = static_cast<float>(rng.uniform(-bound, bound));

  auto params = backbone.parameters();
  params.push_back(head_w);
  params.push_back(head_b);
  Adam<float> adam({.learning_rate = options.learning_rate});

  auto logits_of = [&](const Batch& b) {
    return linear(select_token(backbone.forward_features(backbone.embed(b)), 0), head_w, head_b);
  };
  auto accuracy = [&](const Dataset& data) {
    if (data.empty()) return 0.0;
    Index correct = 0;
    for (std::size_t start = 0; start < data.size(); start += 256) {
      std::vector<std::size_t> idx(std::min<std::size_t>(256, data.size() - start));
      std::iota(idx.begin(), idx.end(), start);
      auto batch = make_batch(data, idx, cfg.image);
      auto logits = logits_of(batch).detach();
      ConstMatrixMap<float> z(logits.values().data(), batch.size(), classes);
      for (Index r = 0; r < batch.size(); ++r) {
        Index arg = 0;
        z.row(r).maxCoeff(&arg);
        correct += (arg == batch.labels[static_cast<std::size_t>(r)]);
      }
    }
    return static_cast<double>(correct) / static_cast<double>(data.size());
  };

  PretrainReport report;
  report.num_classes = classes;
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (Index epoch = 0; epoch < options.epochs; ++epoch) {
    rng.shuffle(order);
    double total = 0.0;
    Index steps = 0;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(options.batch_size)) {
      const auto end = std::min(order.size(), start + static_cast<std::size_t>(options.batch_size));
      auto batch = make_batch(train, std::span(order).subspan(start, end - start), cfg.image);
      auto loss = cross_entropy(logits_of(batch), std::span<const int>(batch.labels));
      loss.backward();
      adam.step(params);
      total += loss.item();
      ++steps;
    }
    report.epoch_losses.push_back(total / static_cast<double>(steps));
  }
  backbone.freeze();
  report.train_accuracy = accuracy(train);
  report.heldout_accuracy = accuracy(heldout);
  return report;
}

namespace {
constexpr char kWeightMagic[4] = {'L', '2', 'P', 'W'};
}

void save_weights(const Backbone<float>& backbone, const std::filesystem::path& path) {
  const auto& c = backbone.config();
  ByteWriter w;
  w.bytes(kWeightMagic, 4);
  w.u32(kWeightFormatVersion);
  for (Index v : {c.image.side, c.image.channels, c.patch, c.embed_dim, c.key_dim, c.depth,
                  c.heads, c.mlp_ratio, c.pretrain_classes})
    w.u32(static_cast<std::uint32_t>(v));
  const auto params = backbone.parameters();
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    w.str(p.name());
    w.u32(static_cast<std::uint32_t>(p.rank()));
    for (Index e : p.shape()) w.u32(static_cast<std::uint32_t>(e));
    for (Index i = 0; i < p.size(); ++i) w.f32(p.values()[i]);
  }
  w.write_file(path);
}

Backbone<float> load_weights(const std::filesystem::path& path, const BackboneConfig* expected) {
  auto r = ByteReader::from_file(path);
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, kWeightMagic, 4) != 0) r.fail("bad magic, not a weight file");
  if (const auto version = r.u32(); version != kWeightFormatVersion)
    r.fail("unsupported weight format version " + std::to_string(version));
  BackboneConfig c;
  c.image.side = r.u32();
  c.image.channels = r.u32();
  c.patch = r.u32();
  c.embed_dim = r.u32();
  c.key_dim = r.u32();
  c.depth = r.u32();
  c.heads = r.u32();
  c.mlp_ratio = r.u32();
  c.pretrain_classes = r.u32();
  if (expected) {
    auto check = [](Index got, Index want, const char* field) {
      if (got != want)
        throw ConfigError(std::string("weight file backbone.") + field + " = " +
                          std::to_string(got) + ", config expects " + std::to_string(want));
    };
    check(c.image.side, expected->image.side, "image_side");
    check(c.image.channels, expected->image.channels, "channels");
    check(c.patch, expected->patch, "patch");
    check(c.embed_dim, expected->embed_dim, "embed_dim");
    check(c.key_dim, expected->key_dim, "key_dim");
    check(c.depth, expected->depth, "depth");
    check(c.heads, expected->heads, "heads");
    check(c.mlp_ratio, expected->mlp_ratio, "mlp_ratio");
    check(c.pretrain_classes, expected->pretrain_classes, "pretrain_classes");
  }
  try {
    c.validate();
  } catch (const ConfigError& e) {
    r.fail(std::string("invalid config in header: ") + e.what());
  }
  Backbone<float> backbone(c, 0);
  const auto reference = backbone.parameters();
  const auto count = r.u32();
  if (count != reference.size())
    r.fail("parameter count " + std::to_string(count) + " does not match config");
  std::vector<Tensor<float>> loaded;
  for (const auto& ref : reference) {
    const std::string name = r.str(4096);
    if (name != ref.name()) r.fail("expected parameter '" + ref.name() + "', found '" + name + "'");
    const auto rank = r.u32();
    if (rank > 8) r.fail("parameter rank too large");
    Shape shape;
    for (std::uint32_t i = 0; i < rank; ++i) shape.push_back(r.u32());
    if (shape != ref.shape()) r.fail("parameter '" + name + "' has shape " + shape_string(shape));
    Vector<float> values(ref.size());
    for (Index i = 0; i < ref.size(); ++i) values[i] = r.f32();
    auto t = Tensor<float>::from(shape, std::move(values));
    t.set_name(name);
    loaded.push_back(std::move(t));
  }
  if (!r.at_end()) r.fail("trailing bytes after last parameter");
  backbone.assign(loaded);
  backbone.freeze();
  return backbone;
}

}  // namespace l2p
