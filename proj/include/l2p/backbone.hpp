#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "l2p/data.hpp"
#include "l2p/tensor.hpp"

namespace l2p {

struct BackboneConfig {
  ImageShape image{1, 16};
  Index patch = 4;
  Index embed_dim = 64;
  /// Width of the query feature; the query is the [class] output row, so this
  /// must equal embed_dim.
  Index key_dim = 64;
  Index depth = 3;
  Index heads = 4;
  Index mlp_ratio = 2;
  Index pretrain_classes = 10;

  Index patches_per_side() const { return image.side / patch; }
  Index num_patches() const { return patches_per_side() * patches_per_side(); }
  /// Patches plus the [class] token.
  Index token_length() const { return num_patches() + 1; }
  Index patch_width() const { return image.channels * patch * patch; }

  /// Throws ConfigError naming the offending field.
  void validate() const;
  bool operator==(const BackboneConfig&) const = default;
};

/// Small vision transformer: patch embedding with a learned [class] token and
/// learned positional embeddings, followed by pre-norm self-attention blocks
/// and a final layer norm. Positions are added once at embedding time, so
/// extra tokens prepended later carry no positional information.
template <typename Scalar>
class Backbone {
 public:
  explicit Backbone(BackboneConfig config, std::uint64_t seed = 0);

  const BackboneConfig& config() const { return config_; }

  /// Image batch -> [B x L x D] token embeddings.
  Tensor<Scalar> embed(const Batch& batch) const;

  /// [B x L' x D] -> [B x L' x D] through the block stack; any L' is accepted.
  Tensor<Scalar> forward_features(const Tensor<Scalar>& tokens) const;

  /// [class] output row of the unprompted model, [B x D]; carries no graph.
  Tensor<Scalar> query_feature(const Batch& batch) const;

  void freeze();
  void unfreeze();
  bool frozen() const { return frozen_; }

  /// All parameters in declaration order.
  std::vector<Tensor<Scalar>> parameters() const;
  std::uint64_t digest() const;

  /// Overwrites parameter values; names and shapes must match.
  void assign(const std::vector<Tensor<Scalar>>& values);

 private:
  struct Block {
    Tensor<Scalar> norm1_gain, norm1_bias;
    Tensor<Scalar> query_w, query_b, key_w, key_b, value_w, value_b, out_w, out_b;
    Tensor<Scalar> norm2_gain, norm2_bias;
    Tensor<Scalar> mlp_in_w, mlp_in_b, mlp_out_w, mlp_out_b;
  };

  Tensor<Scalar> attention(const Block& block, const Tensor<Scalar>& x) const;

  BackboneConfig config_;
  Tensor<Scalar> patch_w_, patch_b_, class_token_, positions_;
  std::vector<Block> blocks_;
  Tensor<Scalar> final_gain_, final_bias_;
  bool frozen_ = false;
};

extern template class Backbone<float>;
extern template class Backbone<double>;

struct PretrainOptions {
  Index epochs = 10;
  Index batch_size = 32;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
};

struct PretrainReport {
  std::vector<double> epoch_losses;
  double train_accuracy = 0.0;
  double heldout_accuracy = 0.0;
  Index num_classes = 0;
};

/// Trains the backbone with a throwaway linear head on the [class] output and
/// freezes it. Labels must lie in [0, config.pretrain_classes).
PretrainReport pretrain(Backbone<float>& backbone, const Dataset& train, const Dataset& heldout,
                        const PretrainOptions& options);

/// Little-endian weight file: "L2PW", u32 version, the config fields as u32,
/// u32 parameter count, then per parameter: u32 name length, name bytes,
/// u32 rank, u32 extents, float32 values.
inline constexpr std::uint32_t kWeightFormatVersion = 1;
void save_weights(const Backbone<float>& backbone, const std::filesystem::path& path);
/// Returns a frozen backbone. Throws FormatError on malformed input and
/// ConfigError when `expected` is given and disagrees with the file.
Backbone<float> load_weights(const std::filesystem::path& path,
                             const BackboneConfig* expected = nullptr);

}  // namespace l2p
