#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace stnerf {

// RGB, interleaved, values nominally in [0, 1].
struct Image {
  int width = 0;
  int height = 0;
  std::vector<float> rgb;

  Image() = default;
  Image(int w, int h, float fill = 0.0f) : width(w), height(h), rgb(static_cast<std::size_t>(w) * h * 3, fill) {}

  float* at(int x, int y) { return rgb.data() + (static_cast<std::size_t>(y) * width + x) * 3; }
  const float* at(int x, int y) const { return rgb.data() + (static_cast<std::size_t>(y) * width + x) * 3; }
  bool operator==(const Image&) const = default;
};

struct LabelMap {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> labels;

  LabelMap() = default;
  LabelMap(int w, int h) : width(w), height(h), labels(static_cast<std::size_t>(w) * h, 0) {}
  std::uint8_t at(int x, int y) const { return labels[static_cast<std::size_t>(y) * width + x]; }
  bool operator==(const LabelMap&) const = default;
};

// Per-pixel z-depth in meters; 0 marks "no surface".
struct DepthMap {
  int width = 0;
  int height = 0;
  std::vector<float> depth;

  DepthMap() = default;
  DepthMap(int w, int h) : width(w), height(h), depth(static_cast<std::size_t>(w) * h, 0.0f) {}
  float at(int x, int y) const { return depth[static_cast<std::size_t>(y) * width + x]; }
  bool operator==(const DepthMap&) const = default;
};

// Rounds every channel to the nearest multiple of 1/255 (the values an
// 8-bit PNG can hold), clamped to [0, 1].
void quantize_to_8bit(Image& image);

std::vector<std::uint8_t> encode_png(const Image& image);
std::vector<std::uint8_t> encode_png(const LabelMap& labels);
void write_png(const std::filesystem::path& path, const Image& image);
void write_png(const std::filesystem::path& path, const LabelMap& labels);
Image read_png_image(const std::filesystem::path& path);
LabelMap read_png_labels(const std::filesystem::path& path);

// Raw little-endian tensor: "STNT" magic, u32 dtype (1 = float32), u32 rank,
// u32 dims[rank], then the values.
void write_tensor(const std::filesystem::path& path, const std::vector<std::uint32_t>& dims,
                  const std::vector<float>& values);
std::vector<float> read_tensor(const std::filesystem::path& path, std::vector<std::uint32_t>& dims);

void write_depth(const std::filesystem::path& path, const DepthMap& depth);
DepthMap read_depth(const std::filesystem::path& path);

}  // namespace stnerf
