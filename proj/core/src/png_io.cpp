#include "erpgs/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <memory>
#include <vector>

#include <png.h>

#include "erpgs/error.hpp"

namespace erpgs {
namespace {

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::filesystem::path& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) throw LoadError(path.string(), "", mode[0] == 'r' ? "cannot open for reading" : "cannot open for writing");
  return f;
}

[[noreturn]] void png_error_fn(png_structp png, png_const_charp) { std::longjmp(png_jmpbuf(png), 1); }
void png_warning_fn(png_structp, png_const_charp) {}

class PngReader {
 public:
  explicit PngReader(const std::filesystem::path& path) : path_(path), file_(open_file(path, "rb")) {
    png_ = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_fn, png_warning_fn);
    info_ = png_ ? png_create_info_struct(png_) : nullptr;
    if (!info_) throw LoadError(path.string(), "", "libpng initialization failed");
  }
  ~PngReader() { png_destroy_read_struct(&png_, &info_, nullptr); }

  png_structp png() { return png_; }
  png_infop info() { return info_; }
  std::FILE* file() { return file_.get(); }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  FilePtr file_;
  png_structp png_ = nullptr;
  png_infop info_ = nullptr;
};

PngInfo header_info(png_structp png, png_infop info) {
  PngInfo out;
  out.width = static_cast<int>(png_get_image_width(png, info));
  out.height = static_cast<int>(png_get_image_height(png, info));
  out.bit_depth = png_get_bit_depth(png, info) == 16 ? 16 : 8;
  const int ct = png_get_color_type(png, info);
  out.channels = (ct & PNG_COLOR_MASK_COLOR) ? 3 : 1;
  png_textp text = nullptr;
  int n = 0;
  png_get_text(png, info, &text, &n);
  for (int i = 0; i < n; ++i) out.text[text[i].key] = text[i].text ? text[i].text : "";
  return out;
}

}  // namespace

double quantize(double x, int bit_depth) {
  const double levels = bit_depth == 16 ? 65535.0 : 255.0;
  return std::round(std::clamp(x, 0.0, 1.0) * levels) / levels;
}

Image quantize(const Image& image, int bit_depth) {
  Image out = image;
  for (double& x : out.data()) x = quantize(x, bit_depth);
  return out;
}

PngInfo read_png_info(const std::filesystem::path& path) {
  PngReader r(path);
  if (setjmp(png_jmpbuf(r.png()))) throw LoadError(path.string(), "", "not a valid PNG file");
  png_init_io(r.png(), r.file());
  png_read_info(r.png(), r.info());
  return header_info(r.png(), r.info());
}

Image read_png(const std::filesystem::path& path, int channels, PngInfo* info_out) {
  if (channels != 1 && channels != 3) throw std::invalid_argument("read_png: channels must be 1 or 3");
  PngReader r(path);
  png_structp png = r.png();
  png_infop info = r.info();
  std::vector<png_bytep> rows;
  std::vector<unsigned char> buffer;
  if (setjmp(png_jmpbuf(png))) throw LoadError(path.string(), "", "not a valid PNG file");
  png_init_io(png, r.file());
  png_read_info(png, info);
  const PngInfo hdr = header_info(png, info);

  const int ct = png_get_color_type(png, info);
  if (ct == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (ct == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (ct & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png), png_set_strip_alpha(png);
  const bool color = (ct & PNG_COLOR_MASK_COLOR) || ct == PNG_COLOR_TYPE_PALETTE;
  if (channels == 3 && !color) png_set_gray_to_rgb(png);
  if (channels == 1 && color) png_set_rgb_to_gray_fixed(png, 1, 21268, 71514);
  const bool wide = png_get_bit_depth(png, info) == 16;
  png_read_update_info(png, info);

  const int W = hdr.width, H = hdr.height;
  const std::size_t rowbytes = png_get_rowbytes(png, info);
  buffer.resize(rowbytes * H);
  rows.resize(H);
  for (int v = 0; v < H; ++v) rows[v] = buffer.data() + rowbytes * v;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);

  Image out(W, H, channels);
  auto d = out.data();
  const std::size_t n = static_cast<std::size_t>(W) * H * channels;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t row = i / (static_cast<std::size_t>(W) * channels);
    const std::size_t col = i % (static_cast<std::size_t>(W) * channels);
    const unsigned char* p = rows[row];
    d[i] = wide ? ((p[2 * col] << 8) | p[2 * col + 1]) / 65535.0 : p[col] / 255.0;
  }
  if (info_out) *info_out = hdr;
  return out;
}

void write_png(const std::filesystem::path& path, const Image& image, int bit_depth,
               const std::map<std::string, std::string>& text) {
  if (bit_depth != 8 && bit_depth != 16) throw std::invalid_argument("write_png: bit depth must be 8 or 16");
  if (image.channels() != 1 && image.channels() != 3) {
    throw std::invalid_argument("write_png: only 1- or 3-channel images are supported");
  }
  const int W = image.width(), H = image.height(), C = image.channels();
  const int bytes = bit_depth / 8;
  std::vector<unsigned char> buffer(static_cast<std::size_t>(W) * H * C * bytes);
  const auto d = image.data();
  for (std::size_t i = 0; i < d.size(); ++i) {
    const double levels = bit_depth == 16 ? 65535.0 : 255.0;
    const auto q = static_cast<unsigned>(std::lround(std::clamp(d[i], 0.0, 1.0) * levels));
    if (bytes == 2) {
      buffer[2 * i] = static_cast<unsigned char>(q >> 8);
      buffer[2 * i + 1] = static_cast<unsigned char>(q & 0xff);
    } else {
      buffer[i] = static_cast<unsigned char>(q);
    }
  }

  FilePtr file = open_file(path, "wb");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_fn, png_warning_fn);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw LoadError(path.string(), "", "libpng initialization failed");
  }
  std::vector<png_bytep> rows(H);
  std::vector<png_text> chunks;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw LoadError(path.string(), "", "PNG encoding failed");
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, W, H, bit_depth, C == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  for (const auto& [k, v] : text) {
    png_text t{};
    t.compression = PNG_TEXT_COMPRESSION_NONE;
    t.key = const_cast<char*>(k.c_str());
    t.text = const_cast<char*>(v.c_str());
    chunks.push_back(t);
  }
  if (!chunks.empty()) png_set_text(png, info, chunks.data(), static_cast<int>(chunks.size()));
  png_write_info(png, info);
  const std::size_t stride = static_cast<std::size_t>(W) * C * bytes;
  for (int v = 0; v < H; ++v) rows[v] = buffer.data() + stride * v;
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace erpgs
