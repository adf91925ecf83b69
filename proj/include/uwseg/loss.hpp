#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "uwseg/errors.hpp"
#include "uwseg/grid.hpp"
#include "uwseg/tensor.hpp"

namespace uwseg {

enum class LossMode { Plain, ClassProportion, InstanceUncertainty };
enum class Reduction { Mean, Sum };

struct LossConfig {
    LossMode mode = LossMode::Plain;
    Reduction reduction = Reduction::Mean;
    std::vector<double> class_weights;  // required iff mode == ClassProportion
    double iu_exponent = 2.0;           // the power applied to (1 + IU)
};

struct LossResult {
    double value = 0.0;
    ChwTensor grad_logits;  // same shape as the input logits, zero at ignored pixels
};

/// Per-pixel weighted cross entropy and its gradient with respect to the logits.
/// Weights: 1 (Plain), class_weights[y] (ClassProportion) or (1 + IU)^e
/// (InstanceUncertainty). The IU mask is a constant: no gradient flows through it.
inline LossResult weighted_ce(const LogitMap& logits, const LabelMask& target,
                              const UncertaintyMap* iu, const LossConfig& cfg) {
    const int C = logits.classes();
    const std::size_t plane = logits.plane();
    require(logits.height() == target.height() && logits.width() == target.width(),
            "weighted_ce: logits and target shapes differ");

    if (cfg.mode == LossMode::InstanceUncertainty) {
        require(iu != nullptr, "weighted_ce: IU mask required in instance-uncertainty mode");
        require(iu->height() == target.height() && iu->width() == target.width(),
                "weighted_ce: IU mask shape differs from target");
        for (double v : iu->data())
            require(v >= 0.0, "weighted_ce: IU values must be non-negative");
    } else {
        require(iu == nullptr, "weighted_ce: IU mask only valid in instance-uncertainty mode");
    }
    if (cfg.mode == LossMode::ClassProportion) {
        require(static_cast<int>(cfg.class_weights.size()) == C,
                "weighted_ce: class_weights length must equal class count");
        for (double w : cfg.class_weights)
            require(std::isfinite(w) && w >= 0.0, "weighted_ce: class weights must be finite and >= 0");
    } else {
        require(cfg.class_weights.empty(),
                "weighted_ce: class_weights only valid in class-proportion mode");
    }

    // First pass: count pixels that participate in the reduction.
    std::int64_t n = 0;
    for (std::size_t p = 0; p < plane; ++p)
        if (target.data()[p] != kIgnoreLabel) ++n;
    require(n > 0, "weighted_ce: target is fully ignored, mean undefined");

    const double scale = cfg.reduction == Reduction::Mean ? 1.0 / static_cast<double>(n) : 1.0;
    const bool square = cfg.iu_exponent == 2.0;

    LossResult res;
    res.grad_logits = ChwTensor(C, logits.height(), logits.width(), 0.0);
    std::vector<double> ex(static_cast<std::size_t>(C));

    double total = 0.0;
    for (std::size_t p = 0; p < plane; ++p) {
        const std::uint8_t y = target.data()[p];
        if (y == kIgnoreLabel) continue;
        require(y < C, "weighted_ce: target label out of range");

        double mx = logits.data()[p];
        for (int c = 1; c < C; ++c)
            mx = std::max(mx, logits.data()[static_cast<std::size_t>(c) * plane + p]);
        require(std::isfinite(mx), "weighted_ce: non-finite logit");

        double sum = 0.0;
        for (int c = 0; c < C; ++c) {
            double e = std::exp(logits.data()[static_cast<std::size_t>(c) * plane + p] - mx);
            ex[static_cast<std::size_t>(c)] = e;
            sum += e;
        }
        const double ce = mx + std::log(sum) - logits.data()[static_cast<std::size_t>(y) * plane + p];

        double w = 1.0;
        if (cfg.mode == LossMode::ClassProportion) {
            w = cfg.class_weights[y];
        } else if (cfg.mode == LossMode::InstanceUncertainty) {
            const double b = 1.0 + iu->data()[p];
            w = square ? b * b : std::pow(b, cfg.iu_exponent);
        }

        total += w * ce;
        const double g = w * scale;
        for (int c = 0; c < C; ++c) {
            double soft = ex[static_cast<std::size_t>(c)] / sum;
            res.grad_logits.data()[static_cast<std::size_t>(c) * plane + p] =
                g * (soft - (c == y ? 1.0 : 0.0));
        }
    }
    res.value = total * scale;
    return res;
}

struct ClassWeights {
    std::vector<double> weights;       // mean-normalized inverse class frequency
    std::vector<int> absent_classes;   // classes with no pixels anywhere, weight 0
};

/// weight[c] = total_non_ignored / (C * count[c]); absent classes get weight 0.
inline ClassWeights class_proportion_weights(const std::vector<LabelMask>& masks, int classes) {
    require(!masks.empty(), "class_proportion_weights: empty mask list");
    require(classes > 0, "class_proportion_weights: class count must be positive");

    std::vector<std::int64_t> counts(static_cast<std::size_t>(classes), 0);
    std::int64_t total = 0;
    for (const auto& m : masks) {
        for (std::uint8_t v : m.data()) {
            if (v == kIgnoreLabel) continue;
            require(v < classes, "class_proportion_weights: label out of range");
            ++counts[v];
            ++total;
        }
    }
    require(total > 0, "class_proportion_weights: no non-ignored pixels");

    ClassWeights out;
    out.weights.resize(static_cast<std::size_t>(classes), 0.0);
    for (int c = 0; c < classes; ++c) {
        if (counts[static_cast<std::size_t>(c)] == 0) {
            out.absent_classes.push_back(c);
        } else {
            out.weights[static_cast<std::size_t>(c)] =
                static_cast<double>(total) /
                (static_cast<double>(classes) * static_cast<double>(counts[static_cast<std::size_t>(c)]));
        }
    }
    return out;
}

}  // namespace uwseg
