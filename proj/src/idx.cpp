#include "l2p/idx.hpp"

#include <algorithm>
#include <cmath>

#include "l2p/binary_io.hpp"

namespace l2p {

namespace {
constexpr std::uint32_t kImageMagic = 0x00000803;
constexpr std::uint32_t kLabelMagic = 0x00000801;
}  // namespace

IdxImages read_idx_images(const std::filesystem::path& path) {
  auto r = ByteReader::from_file(path);
  if (const auto magic = r.u32(true); magic != kImageMagic)
    r.fail("bad IDX image magic " + std::to_string(magic));
  IdxImages out;
  out.count = r.u32(true);
  out.rows = r.u32(true);
  out.cols = r.u32(true);
  if (out.rows == 0 || out.cols == 0) r.fail("zero image extent");
  const std::uint64_t total = std::uint64_t{out.count} * out.rows * out.cols;
  if (total != r.remaining())
    r.fail("image payload is " + std::to_string(r.remaining()) + " bytes, header implies " +
           std::to_string(total));
  out.pixels.resize(static_cast<std::size_t>(total));
  r.bytes(out.pixels.data(), out.pixels.size());
  return out;
}

std::vector<std::uint8_t> read_idx_labels(const std::filesystem::path& path) {
  auto r = ByteReader::from_file(path);
  if (const auto magic = r.u32(true); magic != kLabelMagic)
    r.fail("bad IDX label magic " + std::to_string(magic));
  const auto count = r.u32(true);
  if (count != r.remaining())
    r.fail("label payload is " + std::to_string(r.remaining()) + " bytes, header implies " +
           std::to_string(count));
  std::vector<std::uint8_t> labels(count);
  r.bytes(labels.data(), labels.size());
  return labels;
}

void write_idx_images(const std::filesystem::path& path, const IdxImages& images) {
  if (images.pixels.size() != std::size_t{images.count} * images.rows * images.cols)
    throw InputError("write_idx_images: pixel count does not match extents");
  ByteWriter w;
  w.u32(kImageMagic, true);
  w.u32(images.count, true);
  w.u32(images.rows, true);
  w.u32(images.cols, true);
  w.bytes(images.pixels.data(), images.pixels.size());
  w.write_file(path);
}

void write_idx_labels(const std::filesystem::path& path, const std::vector<std::uint8_t>& labels) {
  ByteWriter w;
  w.u32(kLabelMagic, true);
  w.u32(static_cast<std::uint32_t>(labels.size()), true);
  w.bytes(labels.data(), labels.size());
  w.write_file(path);
}

namespace {

std::vector<float> resize_bilinear(const std::uint8_t* src, Index from, Index to) {
  std::vector<float> out(static_cast<std::size_t>(to * to));
  const double scale = static_cast<double>(from) / static_cast<double>(to);
  auto at = [&](Index y, Index x) {
    return static_cast<double>(src[y * from + x]) / 255.0;
  };
  for (Index y = 0; y < to; ++y)
    for (Index x = 0; x < to; ++x) {
      const double sy = std::clamp((static_cast<double>(y) + 0.5) * scale - 0.5, 0.0,
                                   static_cast<double>(from - 1));
      const double sx = std::clamp((static_cast<double>(x) + 0.5) * scale - 0.5, 0.0,
                                   static_cast<double>(from - 1));
      const auto y0 = static_cast<Index>(sy), x0 = static_cast<Index>(sx);
      const Index y1 = std::min(y0 + 1, from - 1), x1 = std::min(x0 + 1, from - 1);
      const double fy = sy - static_cast<double>(y0), fx = sx - static_cast<double>(x0);
      const double v = (1 - fy) * ((1 - fx) * at(y0, x0) + fx * at(y0, x1)) +
                       fy * ((1 - fx) * at(y1, x0) + fx * at(y1, x1));
      out[static_cast<std::size_t>(y * to + x)] = static_cast<float>(v);
    }
  return out;
}

}  // namespace

Dataset load_idx_images(const std::filesystem::path& images_path,
                        const std::filesystem::path& labels_path, Index side) {
  const auto images = read_idx_images(images_path);
  const auto labels = read_idx_labels(labels_path);
  if (labels.size() != images.count)
    throw FormatError("label file has " + std::to_string(labels.size()) + " entries for " +
                      std::to_string(images.count) + " images");
  if (images.rows != images.cols) throw FormatError("IDX images must be square");
  if (side < 0) throw ConfigError("idx.side must be nonnegative");
  const Index from = images.rows, to = side == 0 ? from : side;
  Dataset out;
  out.reserve(images.count);
  const std::size_t stride = std::size_t{images.rows} * images.cols;
  for (std::uint32_t i = 0; i < images.count; ++i) {
    const std::uint8_t* src = images.pixels.data() + i * stride;
    Sample s;
    if (to == from) {
      s.pixels.resize(stride);
      for (std::size_t j = 0; j < stride; ++j) s.pixels[j] = static_cast<float>(src[j]) / 255.0f;
    } else {
      s.pixels = resize_bilinear(src, from, to);
    }
    s.label = labels[i];
    s.uid = std::uint64_t{i} + 1;
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace l2p
