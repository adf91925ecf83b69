#pragma once

#include <cstdint>
#include <vector>

#include "uwseg/errors.hpp"

namespace uwseg {

/// Dense row-major H×W grid; element (r, c) lives at r * width + c.
template <typename T>
class Grid2D {
public:
    Grid2D() = default;

    Grid2D(int height, int width, T fill = T{})
        : height_(height), width_(width),
          data_(static_cast<std::size_t>(check_dims(height, width)) , fill) {}

    Grid2D(int height, int width, std::vector<T> data)
        : height_(height), width_(width), data_(std::move(data)) {
        require(data_.size() == check_dims(height, width),
                "Grid2D: data length does not equal height * width");
    }

    int height() const { return height_; }
    int width() const { return width_; }
    std::size_t size() const { return data_.size(); }

    T& at(int r, int c) { return data_[static_cast<std::size_t>(r) * width_ + c]; }
    const T& at(int r, int c) const { return data_[static_cast<std::size_t>(r) * width_ + c]; }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    std::vector<T>& data() { return data_; }
    const std::vector<T>& data() const { return data_; }

    bool same_shape(const Grid2D& other) const {
        return height_ == other.height_ && width_ == other.width_;
    }

    friend bool operator==(const Grid2D& a, const Grid2D& b) {
        return a.height_ == b.height_ && a.width_ == b.width_ && a.data_ == b.data_;
    }

private:
    static std::size_t check_dims(int height, int width) {
        require(height > 0 && width > 0, "Grid2D: dimensions must be positive");
        return static_cast<std::size_t>(height) * static_cast<std::size_t>(width);
    }

    int height_ = 0;
    int width_ = 0;
    std::vector<T> data_;
};

/// Reserved label excluded from loss, metrics and instance extraction.
inline constexpr std::uint8_t kIgnoreLabel = 255;

/// H×W class identifiers in {0..C-1} plus kIgnoreLabel.
using LabelMask = Grid2D<std::uint8_t>;

/// H×W non-negative scalars in nats.
using UncertaintyMap = Grid2D<double>;

inline void check_labels(const LabelMask& mask, int classes) {
    for (std::uint8_t v : mask.data()) {
        require(v == kIgnoreLabel || v < classes,
                "LabelMask: label out of range for declared class count");
    }
}

}  // namespace uwseg
