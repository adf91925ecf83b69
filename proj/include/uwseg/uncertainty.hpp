#pragma once

#include <cmath>
#include <utility>
#include <vector>

#include "uwseg/errors.hpp"
#include "uwseg/grid.hpp"
#include "uwseg/tensor.hpp"

namespace uwseg {

/// Softmax outputs of the M ensemble members, all with identical shape.
using EnsembleOutput = std::vector<ProbabilityMap>;

/// Per-pixel softmax with max subtraction; stable for arbitrarily large logits.
inline ProbabilityMap softmax(const LogitMap& logits) {
    require(logits.all_finite(), "softmax: logits must be finite");
    const int C = logits.classes();
    const std::size_t plane = logits.plane();
    ChwTensor out(C, logits.height(), logits.width());
    std::vector<double> ex(static_cast<std::size_t>(C));
    for (std::size_t p = 0; p < plane; ++p) {
        double mx = logits.data()[p];
        for (int c = 1; c < C; ++c)
            mx = std::max(mx, logits.data()[static_cast<std::size_t>(c) * plane + p]);
        double sum = 0.0;
        for (int c = 0; c < C; ++c) {
            double e = std::exp(logits.data()[static_cast<std::size_t>(c) * plane + p] - mx);
            ex[static_cast<std::size_t>(c)] = e;
            sum += e;
        }
        for (int c = 0; c < C; ++c)
            out.data()[static_cast<std::size_t>(c) * plane + p] = ex[static_cast<std::size_t>(c)] / sum;
    }
    return ProbabilityMap::unchecked(std::move(out));
}

/// Arithmetic mean of the member distributions (the ensemble predictive distribution).
inline ProbabilityMap fuse_ensemble(const EnsembleOutput& members) {
    require(!members.empty(), "fuse_ensemble: at least one member required");
    const ChwTensor& first = members.front().tensor();
    for (const auto& m : members)
        require(m.tensor().same_shape(first), "fuse_ensemble: member shape mismatch");

    ChwTensor out(first.classes(), first.height(), first.width());
    const double inv_m = 1.0 / static_cast<double>(members.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        double sum = 0.0;
        for (const auto& m : members) sum += m.tensor().data()[i];
        out.data()[i] = sum * inv_m;
    }
    return ProbabilityMap::unchecked(std::move(out));
}

/// Shannon entropy per pixel, in nats, with the 0 * ln 0 = 0 convention.
inline UncertaintyMap entropy_map(const ProbabilityMap& probs) {
    const int C = probs.classes();
    const std::size_t plane = probs.tensor().plane();
    UncertaintyMap out(probs.height(), probs.width());
    for (std::size_t p = 0; p < plane; ++p) {
        double h = 0.0;
        for (int c = 0; c < C; ++c) {
            double v = probs.tensor().data()[static_cast<std::size_t>(c) * plane + p];
            if (v > 0.0) h -= v * std::log(v);
        }
        out[p] = h;
    }
    return out;
}

/// Softmax each member, average into one distribution, take its entropy.
inline std::pair<ProbabilityMap, UncertaintyMap> pixel_uncertainty(
    const std::vector<LogitMap>& members) {
    require(!members.empty(), "pixel_uncertainty: at least one member required");
    for (const auto& m : members)
        require(m.same_shape(members.front()), "pixel_uncertainty: member shape mismatch");
    EnsembleOutput probs;
    probs.reserve(members.size());
    for (const auto& m : members) probs.push_back(softmax(m));
    ProbabilityMap fused = fuse_ensemble(probs);
    UncertaintyMap pu = entropy_map(fused);
    return {std::move(fused), std::move(pu)};
}

/// Most probable class per pixel; ties break toward the lower class id.
inline LabelMask argmax_labels(const ChwTensor& scores) {
    const int C = scores.classes();
    require(C <= 255, "argmax_labels: more than 255 classes");
    const std::size_t plane = scores.plane();
    LabelMask out(scores.height(), scores.width());
    for (std::size_t p = 0; p < plane; ++p) {
        int best = 0;
        double best_v = scores.data()[p];
        for (int c = 1; c < C; ++c) {
            double v = scores.data()[static_cast<std::size_t>(c) * plane + p];
            if (v > best_v) {
                best_v = v;
                best = c;
            }
        }
        out[p] = static_cast<std::uint8_t>(best);
    }
    return out;
}

}  // namespace uwseg
