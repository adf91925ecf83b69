#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "uwseg/errors.hpp"
#include "uwseg/grid.hpp"
#include "uwseg/tensor.hpp"
#include "uwseg/uncertainty.hpp"

namespace uwseg {

/// Pixel adjacency used when growing instances.
enum class Connectivity { Four, Eight };

inline constexpr std::int32_t kNoInstance = -1;

struct InstanceInfo {
    std::int32_t id;
    std::uint8_t class_id;
    std::int64_t pixel_count;
};

/// Result of decomposing a label mask into maximal connected same-class regions.
/// Ignored pixels carry kNoInstance; ids follow raster order of first appearance.
struct InstanceMap {
    Grid2D<std::int32_t> instance_id;
    std::vector<InstanceInfo> instances;

    int height() const { return instance_id.height(); }
    int width() const { return instance_id.width(); }
};

namespace detail {

// Union-find over provisional labels, path halving + union by size.
class DisjointSets {
public:
    std::int32_t make() {
        parent_.push_back(static_cast<std::int32_t>(parent_.size()));
        size_.push_back(1);
        return parent_.back();
    }

    std::int32_t find(std::int32_t x) {
        while (parent_[x] != x) {
            parent_[x] = parent_[parent_[x]];
            x = parent_[x];
        }
        return x;
    }

    void unite(std::int32_t a, std::int32_t b) {
        a = find(a);
        b = find(b);
        if (a == b) return;
        if (size_[a] < size_[b]) std::swap(a, b);
        parent_[b] = a;
        size_[a] += size_[b];
    }

private:
    std::vector<std::int32_t> parent_;
    std::vector<std::int32_t> size_;
};

}  // namespace detail

/// Two-pass connected-component labeling: pixels share an instance iff they
/// share a class label and are connected under `conn` through same-class pixels.
inline InstanceMap label_instances(const LabelMask& mask, Connectivity conn) {
    const int H = mask.height();
    const int W = mask.width();

    detail::DisjointSets sets;
    Grid2D<std::int32_t> provisional(H, W, kNoInstance);

    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            const std::uint8_t cls = mask.at(y, x);
            if (cls == kIgnoreLabel) continue;

            std::int32_t label = kNoInstance;
            auto merge_neighbor = [&](int ny, int nx) {
                if (ny < 0 || nx < 0 || nx >= W) return;
                if (mask.at(ny, nx) != cls) return;
                std::int32_t n = provisional.at(ny, nx);
                if (label == kNoInstance)
                    label = n;
                else
                    sets.unite(label, n);
            };
            merge_neighbor(y, x - 1);
            merge_neighbor(y - 1, x);
            if (conn == Connectivity::Eight) {
                merge_neighbor(y - 1, x - 1);
                merge_neighbor(y - 1, x + 1);
            }
            if (label == kNoInstance) label = sets.make();
            provisional.at(y, x) = label;
        }
    }

    // Second pass: final ids in raster order of first appearance per root.
    InstanceMap out{Grid2D<std::int32_t>(H, W, kNoInstance), {}};
    std::vector<std::int32_t> root_to_id;
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            std::int32_t p = provisional.at(y, x);
            if (p == kNoInstance) continue;
            std::int32_t root = sets.find(p);
            if (root >= static_cast<std::int32_t>(root_to_id.size()))
                root_to_id.resize(static_cast<std::size_t>(root) + 1, kNoInstance);
            std::int32_t id = root_to_id[static_cast<std::size_t>(root)];
            if (id == kNoInstance) {
                id = static_cast<std::int32_t>(out.instances.size());
                root_to_id[static_cast<std::size_t>(root)] = id;
                out.instances.push_back({id, mask.at(y, x), 0});
            }
            out.instance_id.at(y, x) = id;
            ++out.instances[static_cast<std::size_t>(id)].pixel_count;
        }
    }
    return out;
}

/// Spread the mean pixel uncertainty of each instance over all of its pixels.
/// Pixels outside every instance (ignored) get 0.
inline UncertaintyMap instance_uncertainty_mask(const InstanceMap& inst,
                                                const UncertaintyMap& pu) {
    require(inst.height() == pu.height() && inst.width() == pu.width(),
            "instance_uncertainty_mask: shape mismatch");

    std::vector<double> sums(inst.instances.size(), 0.0);
    for (std::size_t i = 0; i < pu.size(); ++i) {
        std::int32_t id = inst.instance_id[i];
        if (id != kNoInstance) sums[static_cast<std::size_t>(id)] += pu[i];
    }
    std::vector<double> means(inst.instances.size());
    for (std::size_t k = 0; k < means.size(); ++k)
        means[k] = sums[k] / static_cast<double>(inst.instances[k].pixel_count);

    UncertaintyMap out(pu.height(), pu.width(), 0.0);
    for (std::size_t i = 0; i < pu.size(); ++i) {
        std::int32_t id = inst.instance_id[i];
        if (id != kNoInstance) out[i] = means[static_cast<std::size_t>(id)];
    }
    return out;
}

/// Full instance-wise uncertainty mask from member logits: fuse + entropy,
/// extract instances of `regions_from`, then average entropy per instance.
inline UncertaintyMap build_iu_mask(const std::vector<LogitMap>& members,
                                    const LabelMask& regions_from, Connectivity conn) {
    require(!members.empty(), "build_iu_mask: at least one member required");
    require(members.front().height() == regions_from.height() &&
                members.front().width() == regions_from.width(),
            "build_iu_mask: logits and region mask shapes differ");
    auto [fused, pu] = pixel_uncertainty(members);
    (void)fused;
    InstanceMap inst = label_instances(regions_from, conn);
    return instance_uncertainty_mask(inst, pu);
}

}  // namespace uwseg
