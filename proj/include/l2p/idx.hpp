#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "l2p/data.hpp"

namespace l2p {

/// Raw contents of an IDX image file (magic 0x00000803, big-endian extents).
struct IdxImages {
  std::uint32_t count = 0;
  std::uint32_t rows = 0;
  std::uint32_t cols = 0;
  std::vector<std::uint8_t> pixels;
};

IdxImages read_idx_images(const std::filesystem::path& path);
/// Labels file, magic 0x00000801.
std::vector<std::uint8_t> read_idx_labels(const std::filesystem::path& path);

void write_idx_images(const std::filesystem::path& path, const IdxImages& images);
void write_idx_labels(const std::filesystem::path& path, const std::vector<std::uint8_t>& labels);

/// Images scaled to [0, 1] and resized (bilinear) to `side` x `side` when it
/// differs from the stored size; `side` 0 keeps the stored size. Images must be
/// square. Sample uids are 1 + the file position. Throws FormatError, with the
/// byte offset, on bad magic, extents, or truncation; nothing is returned then.
Dataset load_idx_images(const std::filesystem::path& images, const std::filesystem::path& labels,
                        Index side = 0);

}  // namespace l2p
