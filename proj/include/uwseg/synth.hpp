#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "uwseg/dataset.hpp"
#include "uwseg/errors.hpp"
#include "uwseg/grid.hpp"
#include "uwseg/rng.hpp"
#include "uwseg/tensor.hpp"
#include "uwseg/tensor_io.hpp"

namespace uwseg {

/// Imbalanced shape scenes: class 0 is background, classes 1..C-1 appear as
/// small rectangles and ellipses whose total area tracks the target proportions.
struct SyntheticDatasetSpec {
    int images = 100;
    int height = 64;
    int width = 64;
    int classes = 4;
    std::vector<double> proportions = {0.90, 0.06, 0.03, 0.01};
    double noise_std = 0.10;
    std::uint64_t seed = 1;
    bool shift = false;  // brighter, noisier appearance; identical masks
};

namespace detail {

inline constexpr double kShiftBrightness = 0.25;
inline constexpr double kShiftNoiseScale = 2.0;

// Class base colors; the rarest classes sit closest to the background hue so
// they stay genuinely hard to segment under noise.
inline std::array<double, 3> class_color(int c) {
    static constexpr std::array<std::array<double, 3>, 8> palette = {{
        {0.20, 0.20, 0.25},  // background
        {0.70, 0.30, 0.25},
        {0.25, 0.60, 0.30},
        {0.35, 0.35, 0.55},
        {0.60, 0.55, 0.25},
        {0.55, 0.25, 0.55},
        {0.25, 0.55, 0.55},
        {0.60, 0.40, 0.40},
    }};
    if (c < static_cast<int>(palette.size())) return palette[static_cast<std::size_t>(c)];
    Rng rng(mix64(0x636f6c6f72ull, static_cast<std::uint64_t>(c)));
    return {rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8)};
}

// Paint a shape of roughly `area` pixels of class c, only over background.
// Returns the number of pixels painted.
inline int paint_shape(LabelMask& mask, Rng& rng, int c, int area) {
    const int H = mask.height(), W = mask.width();
    const double aspect = rng.uniform(0.6, 1.6);
    const bool ellipse = rng.uniform() < 0.5;

    double ry, rx;
    if (ellipse) {
        ry = std::sqrt(static_cast<double>(area) * aspect / 3.14159265358979323846);
        rx = static_cast<double>(area) / (3.14159265358979323846 * ry);
    } else {
        ry = std::sqrt(static_cast<double>(area) * aspect) / 2.0;
        rx = static_cast<double>(area) / (4.0 * ry);
    }
    ry = std::max(1.0, ry);
    rx = std::max(1.0, rx);

    const int cy = static_cast<int>(rng.below(static_cast<std::uint64_t>(H)));
    const int cx = static_cast<int>(rng.below(static_cast<std::uint64_t>(W)));
    const int y0 = std::max(0, cy - static_cast<int>(ry));
    const int y1 = std::min(H - 1, cy + static_cast<int>(ry));
    const int x0 = std::max(0, cx - static_cast<int>(rx));
    const int x1 = std::min(W - 1, cx + static_cast<int>(rx));

    int painted = 0;
    for (int y = y0; y <= y1; ++y) {
        for (int x = x0; x <= x1; ++x) {
            if (ellipse) {
                const double dy = (y - cy) / ry, dx = (x - cx) / rx;
                if (dy * dy + dx * dx > 1.0) continue;
            }
            if (mask.at(y, x) == 0) {
                mask.at(y, x) = static_cast<std::uint8_t>(c);
                ++painted;
            }
        }
    }
    return painted;
}

}  // namespace detail

inline void validate_spec(const SyntheticDatasetSpec& spec) {
    require(spec.images > 0, "synthetic spec: images must be positive");
    require(spec.height >= 8 && spec.width >= 8, "synthetic spec: images must be at least 8x8");
    require(spec.classes >= 1 && spec.classes < 255, "synthetic spec: classes must be in [1, 254]");
    require(static_cast<int>(spec.proportions.size()) == spec.classes,
            "synthetic spec: need one proportion per class");
    require(spec.noise_std >= 0.0, "synthetic spec: noise stddev must be non-negative");
    double sum = 0.0;
    for (double p : spec.proportions) {
        require(p >= 0.0, "synthetic spec: proportions must be non-negative");
        sum += p;
    }
    require(std::abs(sum - 1.0) < 1e-6, "synthetic spec: proportions must sum to 1");

    const double total = static_cast<double>(spec.height) * spec.width;
    double foreground = 0.0;
    for (std::size_t c = 1; c < spec.proportions.size(); ++c) {
        require(spec.proportions[c] * total >= 4.0,
                "synthetic spec: proportion too small to form a shape at this image size");
        foreground += spec.proportions[c];
    }
    require(foreground <= 0.5,
            "synthetic spec: foreground proportions above 0.5 leave no room for placement");
}

/// One deterministic scene: mask geometry depends only on (seed, index); the
/// image appearance additionally honors noise_std and the shift flag.
inline Sample generate_sample(const SyntheticDatasetSpec& spec, std::size_t index) {
    const int H = spec.height, W = spec.width;
    Rng geom(mix64(mix64(spec.seed, static_cast<std::uint64_t>(index)), 1));
    Rng appear(mix64(mix64(spec.seed, static_cast<std::uint64_t>(index)), 2));

    LabelMask mask(H, W, 0);
    const double total = static_cast<double>(H) * W;
    for (int c = 1; c < spec.classes; ++c) {
        const int target = static_cast<int>(std::lround(spec.proportions[static_cast<std::size_t>(c)] * total));
        const int area_min = std::max(4, target / 6);
        const int area_max = std::max(area_min + 2, target / 2);
        int painted = 0;
        int attempts = 0;
        while (painted < target && attempts < 200) {
            ++attempts;
            int area = geom.range(area_min, area_max);
            area = std::min(area, std::max(area_min, target - painted));
            const int got = detail::paint_shape(mask, geom, c, area);
            painted += got;
        }
        if (painted == 0)
            throw ContractError("synthetic generation: could not place any class " +
                                std::to_string(c) + " shape in image " + std::to_string(index));
    }

    const double brightness = spec.shift ? detail::kShiftBrightness : 0.0;
    const double noise = spec.noise_std * (spec.shift ? detail::kShiftNoiseScale : 1.0);
    ChwTensor image(3, H, W);
    for (std::size_t i = 0; i < mask.size(); ++i) {
        const auto color = detail::class_color(mask[i]);
        for (int ch = 0; ch < 3; ++ch) {
            double v = color[static_cast<std::size_t>(ch)] + brightness + noise * appear.normal();
            image.data()[static_cast<std::size_t>(ch) * image.plane() + i] =
                std::clamp(v, 0.0, 1.0);
        }
    }
    quantize_to_f32(image.data());

    Sample s;
    s.name = sample_name(index);
    s.image = std::move(image);
    s.mask = std::move(mask);
    return s;
}

inline Dataset generate_dataset(const SyntheticDatasetSpec& spec) {
    validate_spec(spec);
    Dataset ds;
    ds.classes = spec.classes;
    ds.samples.reserve(static_cast<std::size_t>(spec.images));
    for (int i = 0; i < spec.images; ++i)
        ds.samples.push_back(generate_sample(spec, static_cast<std::size_t>(i)));
    return ds;
}

inline KeyValueMap spec_metadata(const SyntheticDatasetSpec& spec) {
    KeyValueMap kv;
    kv["height"] = std::to_string(spec.height);
    kv["width"] = std::to_string(spec.width);
    kv["seed"] = std::to_string(spec.seed);
    kv["noise_std"] = std::to_string(spec.noise_std);
    kv["shift"] = spec.shift ? "1" : "0";
    std::string props;
    for (std::size_t c = 0; c < spec.proportions.size(); ++c) {
        if (c) props += " ";
        props += std::to_string(spec.proportions[c]);
    }
    kv["proportions"] = props;
    return kv;
}

/// gen-data entry point: deterministic directory of tensors + masks.
inline Dataset gen_data(const SyntheticDatasetSpec& spec, const std::string& out_dir) {
    Dataset ds = generate_dataset(spec);
    write_dataset(ds, spec_metadata(spec), out_dir);
    return ds;
}

}  // namespace uwseg
