#pragma once

#include <algorithm>
#include <cassert>
#include <cstddef>
#include <span>
#include <vector>

namespace erpgs {

/// Dense row-major H×W×C raster of doubles. Used for color, normal, depth,
/// weight and mask maps alike.
class Image {
 public:
  Image() = default;
  Image(int width, int height, int channels, double fill = 0.0)
      : width_(width),
        height_(height),
        channels_(channels),
        data_(static_cast<std::size_t>(width) * height * channels, fill) {}

  int width() const { return width_; }
  int height() const { return height_; }
  int channels() const { return channels_; }
  std::size_t pixel_count() const { return static_cast<std::size_t>(width_) * height_; }
  bool empty() const { return data_.empty(); }

  std::size_t index(int u, int v, int c = 0) const {
    assert(u >= 0 && u < width_ && v >= 0 && v < height_ && c >= 0 && c < channels_);
    return (static_cast<std::size_t>(v) * width_ + u) * channels_ + c;
  }

  double& at(int u, int v, int c = 0) { return data_[index(u, v, c)]; }
  double at(int u, int v, int c = 0) const { return data_[index(u, v, c)]; }

  double* pixel(int u, int v) { return data_.data() + index(u, v); }
  const double* pixel(int u, int v) const { return data_.data() + index(u, v); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }

  bool same_shape(const Image& o) const {
    return width_ == o.width_ && height_ == o.height_ && channels_ == o.channels_;
  }

  void fill(double value) { std::fill(data_.begin(), data_.end(), value); }

  friend bool operator==(const Image&, const Image&) = default;

 private:
  int width_ = 0;
  int height_ = 0;
  int channels_ = 0;
  std::vector<double> data_;
};

}  // namespace erpgs
