#pragma once

#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

#include "uwseg/errors.hpp"
#include "uwseg/grid.hpp"

namespace uwseg {

/// Dense row-major C×H×W tensor of doubles. Used for logits, per-pixel class
/// scores and multi-channel image features. Files store values as f32; all
/// in-memory arithmetic is double.
class ChwTensor {
public:
    ChwTensor() = default;

    ChwTensor(int classes, int height, int width, double fill = 0.0)
        : classes_(classes), height_(height), width_(width),
          data_(check_dims(classes, height, width), fill) {}

    ChwTensor(int classes, int height, int width, std::vector<double> data)
        : classes_(classes), height_(height), width_(width), data_(std::move(data)) {
        require(data_.size() == check_dims(classes, height, width),
                "ChwTensor: data length does not equal classes * height * width");
    }

    int classes() const { return classes_; }
    int height() const { return height_; }
    int width() const { return width_; }
    std::size_t size() const { return data_.size(); }
    std::size_t plane() const { return static_cast<std::size_t>(height_) * width_; }

    double& at(int c, int r, int col) {
        return data_[(static_cast<std::size_t>(c) * height_ + r) * width_ + col];
    }
    const double& at(int c, int r, int col) const {
        return data_[(static_cast<std::size_t>(c) * height_ + r) * width_ + col];
    }

    double* channel(int c) { return data_.data() + static_cast<std::size_t>(c) * plane(); }
    const double* channel(int c) const { return data_.data() + static_cast<std::size_t>(c) * plane(); }

    std::vector<double>& data() { return data_; }
    const std::vector<double>& data() const { return data_; }

    bool same_shape(const ChwTensor& o) const {
        return classes_ == o.classes_ && height_ == o.height_ && width_ == o.width_;
    }

    bool all_finite() const {
        for (double v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    friend bool operator==(const ChwTensor& a, const ChwTensor& b) {
        return a.classes_ == b.classes_ && a.height_ == b.height_ &&
               a.width_ == b.width_ && a.data_ == b.data_;
    }

private:
    static std::size_t check_dims(int classes, int height, int width) {
        require(classes > 0 && height > 0 && width > 0,
                "ChwTensor: dimensions must be positive");
        return static_cast<std::size_t>(classes) * height * width;
    }

    int classes_ = 0;
    int height_ = 0;
    int width_ = 0;
    std::vector<double> data_;
};

/// Tensor of predicted logits (finite reals).
using LogitMap = ChwTensor;

/// Per-pixel class distribution: values in [0,1], channel sums within 1e-6 of 1.
class ProbabilityMap {
public:
    ProbabilityMap() = default;

    explicit ProbabilityMap(ChwTensor t) : t_(std::move(t)) { validate(t_); }

    /// For callers that produce distributions by construction (softmax, means).
    static ProbabilityMap unchecked(ChwTensor t) {
        ProbabilityMap p;
        p.t_ = std::move(t);
        return p;
    }

    static void validate(const ChwTensor& t) {
        const int C = t.classes();
        const std::size_t plane = t.plane();
        for (std::size_t p = 0; p < plane; ++p) {
            double sum = 0.0;
            for (int c = 0; c < C; ++c) {
                double v = t.data()[static_cast<std::size_t>(c) * plane + p];
                require(v >= 0.0 && v <= 1.0, "ProbabilityMap: value outside [0, 1]");
                sum += v;
            }
            require(std::fabs(sum - 1.0) <= 1e-6,
                    "ProbabilityMap: channel sum deviates from 1 by more than 1e-6");
        }
    }

    const ChwTensor& tensor() const { return t_; }
    int classes() const { return t_.classes(); }
    int height() const { return t_.height(); }
    int width() const { return t_.width(); }

    const double& at(int c, int r, int col) const { return t_.at(c, r, col); }

    friend bool operator==(const ProbabilityMap& a, const ProbabilityMap& b) {
        return a.t_ == b.t_;
    }

private:
    ChwTensor t_;
};

}  // namespace uwseg
