#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "l2p/data.hpp"

namespace l2p {

enum class DomainKind { identity, permutation, rotation };

std::string to_string(DomainKind kind);
DomainKind parse_domain_kind(const std::string& name);

struct GeneratorConfig {
  ImageShape image{1, 16};
  Index num_classes = 60;
  /// Consecutive class ids are grouped into families of this size; 0 disables.
  Index classes_per_family = 0;
  /// Weight of the shared family pattern in each class prototype, in [0, 1].
  double family_weight = 0.0;
  /// Standard deviation of per-pixel Gaussian noise added to the prototype.
  double noise = 0.35;
  DomainKind domain_kind = DomainKind::permutation;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Class-prototype image generator. A sample is its class prototype plus
/// Gaussian noise, optionally passed through a per-domain pixel transform.
/// Prototypes are uniform [0, 1] patterns, blended with a family pattern when
/// families are enabled. Every sample is a pure function of
/// (seed, class, index, domain).
class SyntheticGenerator {
 public:
  explicit SyntheticGenerator(GeneratorConfig config);

  const GeneratorConfig& config() const { return config_; }
  Index num_classes() const { return config_.num_classes; }
  ImageShape image() const { return config_.image; }

  const std::vector<float>& prototype(Index cls) const;
  /// Family of a class, or -1 without family structure.
  Index family(Index cls) const;

  /// Sample `index` of generator class `cls` under `domain`. Domain 0 is the
  /// untransformed input; domain d > 0 applies transform d of the configured
  /// kind. The returned label is `cls`; streams relabel into their vocabulary.
  Sample sample(Index cls, Index index, Index domain = 0) const;

  /// Applies the pixel transform of `domain` to an image.
  std::vector<float> transform(const std::vector<float>& pixels, Index domain) const;

 private:
  std::vector<Index> permutation(Index domain) const;

  GeneratorConfig config_;
  std::vector<std::vector<float>> prototypes_;
};

/// Stable identity of (class, index, domain); never zero.
std::uint64_t sample_uid(Index cls, Index index, Index domain);

}  // namespace l2p
