#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

namespace patchmap {

/// Dense row-major image grid indexed (u, v) = (column, row).
template <typename T>
class Grid {
 public:
  Grid() = default;
  Grid(int width, int height, T fill = T{})
      : width_(width), height_(height),
        data_(static_cast<size_t>(width) * height, fill) {
    if (width < 0 || height < 0) throw std::invalid_argument("Grid: negative size");
  }

  int width() const { return width_; }
  int height() const { return height_; }
  bool empty() const { return data_.empty(); }

  bool in_bounds(int u, int v) const {
    return u >= 0 && u < width_ && v >= 0 && v < height_;
  }

  T& at(int u, int v) { return data_[static_cast<size_t>(v) * width_ + u]; }
  const T& at(int u, int v) const {
    return data_[static_cast<size_t>(v) * width_ + u];
  }

  const std::vector<T>& data() const { return data_; }
  std::vector<T>& data() { return data_; }

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<T> data_;
};

/// Depth image, z in meters; values <= 0 or non-finite mean "no return".
using DepthImage = Grid<double>;

using Mask = Grid<uint8_t>;

}  // namespace patchmap
