#include "l2p/synthetic.hpp"

#include <numeric>

#include "l2p/random.hpp"

namespace l2p {

std::string to_string(DomainKind kind) {
  switch (kind) {
    case DomainKind::identity: return "identity";
    case DomainKind::permutation: return "permutation";
    case DomainKind::rotation: return "rotation";
  }
  return "identity";
}

DomainKind parse_domain_kind(const std::string& name) {
  if (name == "identity") return DomainKind::identity;
  if (name == "permutation") return DomainKind::permutation;
  if (name == "rotation") return DomainKind::rotation;
  throw ConfigError("generator.domain_kind: unknown kind '" + name + "'");
}

void GeneratorConfig::validate() const {
  if (image.channels <= 0 || image.side <= 0) throw ConfigError("generator.image must be positive");
  if (num_classes <= 0) throw ConfigError("generator.num_classes must be positive");
  if (classes_per_family < 0) throw ConfigError("generator.classes_per_family must be nonnegative");
  if (family_weight < 0.0 || family_weight > 1.0)
    throw ConfigError("generator.family_weight must lie in [0, 1]");
  if (noise < 0.0) throw ConfigError("generator.noise must be nonnegative");
}

std::uint64_t sample_uid(Index cls, Index index, Index domain) {
  return (static_cast<std::uint64_t>(domain + 1) << 48) ^
         (static_cast<std::uint64_t>(cls) << 28) ^ static_cast<std::uint64_t>(index + 1);
}

SyntheticGenerator::SyntheticGenerator(GeneratorConfig config) : config_(config) {
  config_.validate();
  const auto n = static_cast<std::size_t>(config_.image.pixels());
  std::vector<std::vector<float>> families;
  if (config_.classes_per_family > 0) {
    const Index count = (config_.num_classes + config_.classes_per_family - 1) /
                        config_.classes_per_family;
    for (Index f = 0; f < count; ++f) {
      Rng rng = Rng::derive(config_.seed, {0xFA, static_cast<std::uint64_t>(f)});
      std::vector<float> base(n);
      for (auto& v : base) v = static_cast<float>(rng.uniform());
      families.push_back(std::move(base));
    }
  }
  for (Index c = 0; c < config_.num_classes; ++c) {
    Rng rng = Rng::derive(config_.seed, {0xC1, static_cast<std::uint64_t>(c)});
    std::vector<float> proto(n);
    for (auto& v : proto) v = static_cast<float>(rng.uniform());
    if (!families.empty()) {
      const auto& base = families[static_cast<std::size_t>(family(c))];
      const auto w = static_cast<float>(config_.family_weight);
      for (std::size_t i = 0; i < n; ++i) proto[i] = w * base[i] + (1.0f - w) * proto[i];
    }
    prototypes_.push_back(std::move(proto));
  }
}

const std::vector<float>& SyntheticGenerator::prototype(Index cls) const {
  if (cls < 0 || cls >= config_.num_classes)
    throw InputError("generator: class " + std::to_string(cls) + " out of range");
  return prototypes_[static_cast<std::size_t>(cls)];
}

Index SyntheticGenerator::family(Index cls) const {
  if (config_.classes_per_family <= 0) return -1;
  return cls / config_.classes_per_family;
}

std::vector<Index> SyntheticGenerator::permutation(Index domain) const {
  std::vector<Index> perm(static_cast<std::size_t>(config_.image.pixels()));
  std::iota(perm.begin(), perm.end(), Index{0});
  Rng rng = Rng::derive(config_.seed, {0xD0, static_cast<std::uint64_t>(domain)});
  rng.shuffle(perm);
  return perm;
}

std::vector<float> SyntheticGenerator::transform(const std::vector<float>& pixels,
                                                 Index domain) const {
  switch (config_.domain_kind) {
    case DomainKind::identity: return pixels;
    case DomainKind::permutation: {
      const auto perm = permutation(domain);
      std::vector<float> out(pixels.size());
      for (std::size_t i = 0; i < perm.size(); ++i)
        out[i] = pixels[static_cast<std::size_t>(perm[i])];
      return out;
    }
    case DomainKind::rotation: {
      const Index side = config_.image.side, turns = ((domain % 4) + 4) % 4;
      std::vector<float> out = pixels;
      for (Index t = 0; t < turns; ++t) {
        std::vector<float> next(out.size());
        for (Index c = 0; c < config_.image.channels; ++c)
          for (Index y = 0; y < side; ++y)
            for (Index x = 0; x < side; ++x)
              next[static_cast<std::size_t>((c * side + x) * side + (side - 1 - y))] =
                  out[static_cast<std::size_t>((c * side + y) * side + x)];
        out = std::move(next);
      }
      return out;
    }
  }
  return pixels;
}

Sample SyntheticGenerator::sample(Index cls, Index index, Index domain) const {
  const auto& proto = prototype(cls);
  Rng rng = Rng::derive(config_.seed, {0x5A, static_cast<std::uint64_t>(cls),
                                       static_cast<std::uint64_t>(index)});
  std::vector<float> pixels(proto.size());
  for (std::size_t i = 0; i < proto.size(); ++i)
    pixels[i] = proto[i] + static_cast<float>(config_.noise * rng.normal());
  Sample s;
  s.pixels = domain == 0 ? std::move(pixels) : transform(pixels, domain);
  s.label = static_cast<int>(cls);
  s.uid = sample_uid(cls, index, domain);
  return s;
}

}  // namespace l2p
