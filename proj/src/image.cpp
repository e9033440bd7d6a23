#include "stnerf/image.hpp"

#include <png.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>

#include "stnerf/error.hpp"

namespace stnerf {

static_assert(std::endian::native == std::endian::little, "file formats assume a little-endian host");

void quantize_to_8bit(Image& image) {
  for (float& v : image.rgb) v = std::round(std::clamp(v, 0.0f, 1.0f) * 255.0f) / 255.0f;
}

namespace {

std::uint8_t to_byte(float v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)); }

struct PngWriteBuffer {
  std::vector<std::uint8_t> bytes;
};

void png_write_to_vector(png_structp png, png_bytep data, png_size_t length) {
  auto* buffer = static_cast<PngWriteBuffer*>(png_get_io_ptr(png));
  buffer->bytes.insert(buffer->bytes.end(), data, data + length);
}

void png_flush_noop(png_structp) {}

// Errors surface as exceptions; keep libpng from printing to stderr.
void png_error_quiet(png_structp png, png_const_charp) { png_longjmp(png, 1); }
void png_warning_quiet(png_structp, png_const_charp) {}

std::vector<std::uint8_t> encode_raw(int width, int height, int channels, const std::vector<std::uint8_t>& pixels) {
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (png == nullptr) throw Error("png: cannot create write struct");
  png_infop info = png_create_info_struct(png);
  PngWriteBuffer buffer;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error("png: encoding failed");
  }
  png_set_write_fn(png, &buffer, png_write_to_vector, png_flush_noop);
  png_set_IHDR(png, info, width, height, 8, channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  // Fixed settings so identical pixels always give identical bytes.
  png_set_compression_level(png, 6);
  png_write_info(png, info);
  for (int y = 0; y < height; ++y) {
    png_write_row(png, const_cast<png_bytep>(pixels.data() + static_cast<std::size_t>(y) * width * channels));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return std::move(buffer.bytes);
}

void write_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

// Decodes to 8-bit with the requested channel count.
std::vector<std::uint8_t> decode_raw(const std::filesystem::path& path, int channels, int& width, int& height) {
  std::unique_ptr<FILE, int (*)(FILE*)> file(std::fopen(path.string().c_str(), "rb"), &std::fclose);
  if (!file) throw ParseError(path.string() + ": cannot open");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_quiet, png_warning_quiet);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw ParseError(path.string() + ": not a readable PNG");
  }
  png_init_io(png, file.get());
  png_read_info(png, info);
  width = static_cast<int>(png_get_image_width(png, info));
  height = static_cast<int>(png_get_image_height(png, info));
  const int color_type = png_get_color_type(png, info);
  if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
  if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color_type & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  const bool gray = (color_type & PNG_COLOR_MASK_COLOR) == 0 && color_type != PNG_COLOR_TYPE_PALETTE;
  if (channels == 3 && gray) png_set_gray_to_rgb(png);
  if (channels == 1 && !gray) throw ParseError(path.string() + ": expected a single-channel label image");
  png_read_update_info(png, info);
  std::vector<std::uint8_t> pixels(static_cast<std::size_t>(width) * height * channels);
  for (int y = 0; y < height; ++y) png_read_row(png, pixels.data() + static_cast<std::size_t>(y) * width * channels, nullptr);
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return pixels;
}

}  // namespace

std::vector<std::uint8_t> encode_png(const Image& image) {
  std::vector<std::uint8_t> px(image.rgb.size());
  std::transform(image.rgb.begin(), image.rgb.end(), px.begin(), to_byte);
  return encode_raw(image.width, image.height, 3, px);
}

std::vector<std::uint8_t> encode_png(const LabelMap& labels) {
  return encode_raw(labels.width, labels.height, 1, labels.labels);
}

void write_png(const std::filesystem::path& path, const Image& image) { write_bytes(path, encode_png(image)); }
void write_png(const std::filesystem::path& path, const LabelMap& labels) { write_bytes(path, encode_png(labels)); }

Image read_png_image(const std::filesystem::path& path) {
  int w = 0, h = 0;
  const auto px = decode_raw(path, 3, w, h);
  Image img(w, h);
  for (std::size_t i = 0; i < px.size(); ++i) img.rgb[i] = static_cast<float>(px[i]) / 255.0f;
  return img;
}

LabelMap read_png_labels(const std::filesystem::path& path) {
  int w = 0, h = 0;
  LabelMap m;
  m.labels = decode_raw(path, 1, w, h);
  m.width = w;
  m.height = h;
  return m;
}

void write_tensor(const std::filesystem::path& path, const std::vector<std::uint32_t>& dims,
                  const std::vector<float>& values) {
  std::size_t count = 1;
  for (auto d : dims) count *= d;
  if (count != values.size()) throw ShapeError("write_tensor: dims do not match value count");
  std::vector<std::uint8_t> bytes(4 + 8 + 4 * dims.size() + 4 * values.size());
  std::uint8_t* p = bytes.data();
  std::memcpy(p, "STNT", 4);
  const std::uint32_t dtype = 1;
  const auto rank = static_cast<std::uint32_t>(dims.size());
  std::memcpy(p + 4, &dtype, 4);
  std::memcpy(p + 8, &rank, 4);
  std::memcpy(p + 12, dims.data(), 4 * dims.size());
  std::memcpy(p + 12 + 4 * dims.size(), values.data(), 4 * values.size());
  write_bytes(path, bytes);
}

std::vector<float> read_tensor(const std::filesystem::path& path, std::vector<std::uint32_t>& dims) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError(path.string() + ": cannot open");
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "STNT", 4) != 0) throw ParseError(path.string() + ": bad magic");
  std::uint32_t dtype = 0, rank = 0;
  std::memcpy(&dtype, bytes.data() + 4, 4);
  std::memcpy(&rank, bytes.data() + 8, 4);
  if (dtype != 1) throw ParseError(path.string() + ": dtype " + std::to_string(dtype) + " unsupported");
  if (rank > 8 || bytes.size() < 12 + 4 * rank) throw ParseError(path.string() + ": bad rank");
  dims.resize(rank);
  std::memcpy(dims.data(), bytes.data() + 12, 4 * rank);
  std::size_t count = 1;
  for (auto d : dims) count *= d;
  const std::size_t offset = 12 + 4 * rank;
  if (bytes.size() != offset + 4 * count) throw ParseError(path.string() + ": payload size does not match dims");
  std::vector<float> values(count);
  std::memcpy(values.data(), bytes.data() + offset, 4 * count);
  return values;
}

void write_depth(const std::filesystem::path& path, const DepthMap& depth) {
  write_tensor(path, {static_cast<std::uint32_t>(depth.height), static_cast<std::uint32_t>(depth.width)}, depth.depth);
}

DepthMap read_depth(const std::filesystem::path& path) {
  std::vector<std::uint32_t> dims;
  DepthMap d;
  d.depth = read_tensor(path, dims);
  if (dims.size() != 2) throw ParseError(path.string() + ": depth tensor must have rank 2");
  d.height = static_cast<int>(dims[0]);
  d.width = static_cast<int>(dims[1]);
  return d;
}

}  // namespace stnerf
