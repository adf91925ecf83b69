#pragma once

#include <cstdint>
#include <vector>

#include "uwseg/errors.hpp"
#include "uwseg/grid.hpp"

namespace uwseg {

/// Per-class TP/FP/FN tallies; merging across batches is a plain sum.
class ConfusionAccumulator {
public:
    explicit ConfusionAccumulator(int classes)
        : classes_(classes), tp_(check(classes), 0), fp_(tp_.size(), 0), fn_(tp_.size(), 0) {}

    int classes() const { return classes_; }
    std::int64_t tp(int c) const { return tp_[static_cast<std::size_t>(c)]; }
    std::int64_t fp(int c) const { return fp_[static_cast<std::size_t>(c)]; }
    std::int64_t fn(int c) const { return fn_[static_cast<std::size_t>(c)]; }
    std::int64_t support(int c) const { return tp(c) + fp(c) + fn(c); }

    void add(const LabelMask& pred, const LabelMask& gt) {
        require(pred.same_shape(gt), "confusion: pred and gt shapes differ");
        for (std::size_t i = 0; i < pred.size(); ++i) {
            const std::uint8_t g = gt[i], p = pred[i];
            if (g == kIgnoreLabel) continue;
            require(p != kIgnoreLabel, "confusion: prediction contains the ignore label");
            require(p < classes_ && g < classes_, "confusion: label out of range");
            if (p == g) {
                ++tp_[p];
            } else {
                ++fp_[p];
                ++fn_[g];
            }
        }
    }

    void merge(const ConfusionAccumulator& other) {
        require(other.classes_ == classes_, "confusion: class counts differ");
        for (std::size_t c = 0; c < tp_.size(); ++c) {
            tp_[c] += other.tp_[c];
            fp_[c] += other.fp_[c];
            fn_[c] += other.fn_[c];
        }
    }

private:
    static std::size_t check(int classes) {
        require(classes > 0, "confusion: class count must be positive");
        return static_cast<std::size_t>(classes);
    }

    int classes_;
    std::vector<std::int64_t> tp_, fp_, fn_;
};

inline double iou(const ConfusionAccumulator& conf, int c) {
    require(c >= 0 && c < conf.classes(), "iou: class out of range");
    const std::int64_t denom = conf.support(c);
    require(denom > 0, "iou: class has no pixels in pred or gt");
    return static_cast<double>(conf.tp(c)) / static_cast<double>(denom);
}

struct MiouResult {
    double value = 0.0;
    std::vector<int> excluded;  // classes with no support, left out of the mean
};

/// Mean IoU over classes with any support; absent classes are reported, not
/// averaged in as zeros.
inline MiouResult miou(const ConfusionAccumulator& conf) {
    MiouResult r;
    double sum = 0.0;
    int counted = 0;
    for (int c = 0; c < conf.classes(); ++c) {
        if (conf.support(c) > 0) {
            sum += iou(conf, c);
            ++counted;
        } else {
            r.excluded.push_back(c);
        }
    }
    require(counted > 0, "miou: no class has support");
    r.value = sum / counted;
    return r;
}

struct PavpuConfig {
    int window = 4;
    double acc_threshold = 0.5;    // patch is accurate iff correct fraction > this
    double cert_threshold = 0.0;   // patch is certain iff mean uncertainty < this
};

struct PavpuResult {
    double score = 0.0;
    std::int64_t n_ac = 0;  // accurate & certain
    std::int64_t n_au = 0;  // accurate & uncertain
    std::int64_t n_ic = 0;  // inaccurate & certain
    std::int64_t n_iu = 0;  // inaccurate & uncertain

    std::int64_t total() const { return n_ac + n_au + n_ic + n_iu; }
};

/// Patch accuracy vs patch uncertainty over non-overlapping w×w tiles anchored
/// at (0,0); partial border tiles are discarded. Accuracy and mean uncertainty
/// are taken over non-ignored pixels; fully ignored tiles are skipped.
inline PavpuResult pavpu(const LabelMask& pred, const LabelMask& gt, const UncertaintyMap& unc,
                         const PavpuConfig& cfg) {
    require(pred.same_shape(gt), "pavpu: pred and gt shapes differ");
    require(gt.height() == unc.height() && gt.width() == unc.width(),
            "pavpu: uncertainty map shape differs");
    require(cfg.window > 0, "pavpu: window must be positive");
    require(cfg.acc_threshold > 0.0 && cfg.acc_threshold <= 1.0,
            "pavpu: accuracy threshold must be in (0, 1]");
    require(cfg.cert_threshold >= 0.0, "pavpu: certainty threshold must be non-negative");
    const int w = cfg.window;
    const int ny = gt.height() / w, nx = gt.width() / w;
    require(ny > 0 && nx > 0, "pavpu: window larger than the image leaves no complete patch");

    PavpuResult r;
    for (int py = 0; py < ny; ++py) {
        for (int px = 0; px < nx; ++px) {
            int valid = 0, correct = 0;
            double usum = 0.0;
            for (int y = py * w; y < (py + 1) * w; ++y) {
                for (int x = px * w; x < (px + 1) * w; ++x) {
                    if (gt.at(y, x) == kIgnoreLabel) continue;
                    ++valid;
                    if (pred.at(y, x) == gt.at(y, x)) ++correct;
                    usum += unc.at(y, x);
                }
            }
            if (valid == 0) continue;
            const bool accurate = static_cast<double>(correct) / valid > cfg.acc_threshold;
            const bool certain = usum / valid < cfg.cert_threshold;
            if (accurate && certain) ++r.n_ac;
            else if (accurate) ++r.n_au;
            else if (certain) ++r.n_ic;
            else ++r.n_iu;
        }
    }
    require(r.total() > 0, "pavpu: every patch was fully ignored");
    r.score = static_cast<double>(r.n_ac + r.n_iu) / static_cast<double>(r.total());
    return r;
}

/// Pixel-weighted mean over all maps; the recommended certainty threshold.
inline double mean_train_uncertainty(const std::vector<UncertaintyMap>& maps) {
    require(!maps.empty(), "mean_train_uncertainty: empty map list");
    double sum = 0.0;
    std::size_t count = 0;
    for (const auto& m : maps) {
        for (double v : m.data()) sum += v;
        count += m.size();
    }
    return sum / static_cast<double>(count);
}

inline std::vector<std::int64_t> class_histogram(const std::vector<LabelMask>& masks,
                                                 int classes) {
    require(classes > 0, "class_histogram: class count must be positive");
    std::vector<std::int64_t> counts(static_cast<std::size_t>(classes), 0);
    for (const auto& m : masks) {
        for (std::uint8_t v : m.data()) {
            if (v == kIgnoreLabel) continue;
            require(v < classes, "class_histogram: label out of range");
            ++counts[v];
        }
    }
    return counts;
}

}  // namespace uwseg
