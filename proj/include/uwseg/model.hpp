#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <sstream>
#include <string>
#include <vector>

#include "uwseg/errors.hpp"
#include "uwseg/rng.hpp"
#include "uwseg/tensor.hpp"
#include "uwseg/tensor_io.hpp"

namespace uwseg {

/// Small stride-1 zero-padded conv net: input_channels -> hidden... -> classes,
/// ReLU between layers, spatial size preserved.
struct ToyModelSpec {
    int input_channels = 3;
    std::vector<int> hidden = {16, 16};
    int kernel = 3;
    int classes = 0;

    std::vector<int> channel_chain() const {
        std::vector<int> chain;
        chain.push_back(input_channels);
        chain.insert(chain.end(), hidden.begin(), hidden.end());
        chain.push_back(classes);
        return chain;
    }
};

struct ConvLayer {
    int in_ch = 0;
    int out_ch = 0;
    int k = 0;
    std::vector<double> w;  // [out][in][ky][kx]
    std::vector<double> b;  // [out]
};

struct ToyModelParams {
    ToyModelSpec spec;
    std::vector<ConvLayer> layers;
    std::uint64_t seed = 0;
};

/// Parameter-shaped arrays (gradients, momentum buffers).
struct ModelTensors {
    std::vector<std::vector<double>> w;
    std::vector<std::vector<double>> b;

    static ModelTensors zeros_like(const ToyModelParams& p) {
        ModelTensors t;
        for (const auto& l : p.layers) {
            t.w.emplace_back(l.w.size(), 0.0);
            t.b.emplace_back(l.b.size(), 0.0);
        }
        return t;
    }
};

/// Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) weights, zero biases; deterministic in (spec, seed).
inline ToyModelParams init_params(const ToyModelSpec& spec, std::uint64_t seed) {
    require(spec.classes > 0, "init_params: classes must be positive");
    require(spec.input_channels > 0, "init_params: input_channels must be positive");
    require(spec.kernel > 0 && spec.kernel % 2 == 1, "init_params: kernel must be odd");
    for (int h : spec.hidden) require(h > 0, "init_params: hidden widths must be positive");

    ToyModelParams params;
    params.spec = spec;
    params.seed = seed;
    Rng rng(seed);

    const std::vector<int> chain = spec.channel_chain();
    for (std::size_t l = 0; l + 1 < chain.size(); ++l) {
        ConvLayer layer;
        layer.in_ch = chain[l];
        layer.out_ch = chain[l + 1];
        layer.k = spec.kernel;
        const int fan_in = layer.in_ch * spec.kernel * spec.kernel;
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        layer.w.resize(static_cast<std::size_t>(layer.out_ch) * fan_in);
        for (double& v : layer.w) v = rng.uniform(-bound, bound);
        layer.b.assign(static_cast<std::size_t>(layer.out_ch), 0.0);
        params.layers.push_back(std::move(layer));
    }
    return params;
}

namespace detail {

// out[oc] = b[oc] + sum_ic conv(in[ic], w[oc][ic]); stride 1, zero pad k/2.
inline void conv_forward(const ConvLayer& layer, const ChwTensor& in, ChwTensor& out) {
    const int H = in.height(), W = in.width(), K = layer.k, P = K / 2;
    for (int oc = 0; oc < layer.out_ch; ++oc) {
        double* op = out.channel(oc);
        std::fill(op, op + out.plane(), layer.b[static_cast<std::size_t>(oc)]);
        for (int ic = 0; ic < layer.in_ch; ++ic) {
            const double* ip = in.channel(ic);
            const double* wk =
                layer.w.data() + (static_cast<std::size_t>(oc) * layer.in_ch + ic) * K * K;
            for (int ky = 0; ky < K; ++ky) {
                const int y0 = std::max(0, P - ky), y1 = std::min(H, H + P - ky);
                for (int kx = 0; kx < K; ++kx) {
                    const double wv = wk[ky * K + kx];
                    const int x0 = std::max(0, P - kx), x1 = std::min(W, W + P - kx);
                    const int dx = kx - P;
                    for (int y = y0; y < y1; ++y) {
                        double* orow = op + static_cast<std::size_t>(y) * W;
                        const double* irow = ip + static_cast<std::size_t>(y + ky - P) * W + dx;
                        for (int x = x0; x < x1; ++x) orow[x] += wv * irow[x];
                    }
                }
            }
        }
    }
}

// gw[oc][ic][ky][kx] = sum_{y,x} gout[oc][y][x] * in[ic][y+ky-P][x+kx-P]
inline void conv_backward_weights(const ConvLayer& layer, const ChwTensor& in,
                                  const ChwTensor& gout, std::vector<double>& gw,
                                  std::vector<double>& gb) {
    const int H = in.height(), W = in.width(), K = layer.k, P = K / 2;
    for (int oc = 0; oc < layer.out_ch; ++oc) {
        const double* gp = gout.channel(oc);
        double bsum = 0.0;
        for (std::size_t i = 0; i < gout.plane(); ++i) bsum += gp[i];
        gb[static_cast<std::size_t>(oc)] = bsum;
        for (int ic = 0; ic < layer.in_ch; ++ic) {
            const double* ip = in.channel(ic);
            double* wk = gw.data() + (static_cast<std::size_t>(oc) * layer.in_ch + ic) * K * K;
            for (int ky = 0; ky < K; ++ky) {
                const int y0 = std::max(0, P - ky), y1 = std::min(H, H + P - ky);
                for (int kx = 0; kx < K; ++kx) {
                    const int x0 = std::max(0, P - kx), x1 = std::min(W, W + P - kx);
                    const int dx = kx - P;
                    double acc = 0.0;
                    for (int y = y0; y < y1; ++y) {
                        const double* grow = gp + static_cast<std::size_t>(y) * W;
                        const double* irow = ip + static_cast<std::size_t>(y + ky - P) * W + dx;
                        for (int x = x0; x < x1; ++x) acc += grow[x] * irow[x];
                    }
                    wk[ky * K + kx] = acc;
                }
            }
        }
    }
}

// gin[ic][iy][ix] = sum_{oc,ky,kx} w[oc][ic][ky][kx] * gout[oc][iy-ky+P][ix-kx+P]
inline void conv_backward_input(const ConvLayer& layer, const ChwTensor& gout, ChwTensor& gin) {
    const int H = gout.height(), W = gout.width(), K = layer.k, P = K / 2;
    std::fill(gin.data().begin(), gin.data().end(), 0.0);
    for (int oc = 0; oc < layer.out_ch; ++oc) {
        const double* gp = gout.channel(oc);
        for (int ic = 0; ic < layer.in_ch; ++ic) {
            double* ip = gin.channel(ic);
            const double* wk =
                layer.w.data() + (static_cast<std::size_t>(oc) * layer.in_ch + ic) * K * K;
            for (int ky = 0; ky < K; ++ky) {
                const int y0 = std::max(0, P - ky), y1 = std::min(H, H + P - ky);
                for (int kx = 0; kx < K; ++kx) {
                    const double wv = wk[ky * K + kx];
                    const int x0 = std::max(0, P - kx), x1 = std::min(W, W + P - kx);
                    const int dx = kx - P;
                    for (int y = y0; y < y1; ++y) {
                        const double* grow = gp + static_cast<std::size_t>(y) * W;
                        double* irow = ip + static_cast<std::size_t>(y + ky - P) * W + dx;
                        for (int x = x0; x < x1; ++x) irow[x] += wv * grow[x];
                    }
                }
            }
        }
    }
}

}  // namespace detail

/// Activations recorded by forward() for the matching backward() call.
struct ForwardCache {
    std::vector<ChwTensor> inputs;  // inputs[l]: activation entering layer l
    std::vector<ChwTensor> pre;     // pre[l]: conv output of layer l, before ReLU

    const LogitMap& logits() const { return pre.back(); }
};

inline ForwardCache forward(const ToyModelParams& params, const ChwTensor& image) {
    require(!params.layers.empty(), "forward: uninitialized model");
    require(image.classes() == params.spec.input_channels,
            "forward: image channel count does not match the model spec");

    ForwardCache cache;
    const std::size_t L = params.layers.size();
    cache.inputs.reserve(L);
    cache.pre.reserve(L);

    ChwTensor current = image;
    for (std::size_t l = 0; l < L; ++l) {
        const ConvLayer& layer = params.layers[l];
        ChwTensor z(layer.out_ch, current.height(), current.width());
        detail::conv_forward(layer, current, z);
        cache.inputs.push_back(std::move(current));
        if (l + 1 < L) {
            current = z;
            for (double& v : current.data()) v = v > 0.0 ? v : 0.0;
        }
        cache.pre.push_back(std::move(z));
    }
    return cache;
}

inline ModelTensors backward(const ToyModelParams& params, const ForwardCache& cache,
                             const ChwTensor& grad_logits) {
    const std::size_t L = params.layers.size();
    require(cache.inputs.size() == L && cache.pre.size() == L,
            "backward: cache does not match this model");
    for (std::size_t l = 0; l < L; ++l) {
        require(cache.inputs[l].classes() == params.layers[l].in_ch &&
                    cache.pre[l].classes() == params.layers[l].out_ch,
                "backward: stale cache, layer shapes differ from params");
    }
    require(grad_logits.same_shape(cache.pre.back()), "backward: grad shape mismatch");

    ModelTensors grads = ModelTensors::zeros_like(params);
    ChwTensor g = grad_logits;
    for (std::size_t l = L; l-- > 0;) {
        detail::conv_backward_weights(params.layers[l], cache.inputs[l], g, grads.w[l], grads.b[l]);
        if (l > 0) {
            ChwTensor gin(params.layers[l].in_ch, g.height(), g.width());
            detail::conv_backward_input(params.layers[l], g, gin);
            const ChwTensor& z = cache.pre[l - 1];
            for (std::size_t i = 0; i < gin.size(); ++i)
                if (z.data()[i] <= 0.0) gin.data()[i] = 0.0;
            g = std::move(gin);
        }
    }
    return grads;
}

/// Momentum SGD: v <- momentum * v + g; p <- p - lr * v.
inline void sgd_step(ToyModelParams& params, const ModelTensors& grads, ModelTensors& velocity,
                     double lr, double momentum) {
    require(lr > 0.0, "sgd_step: learning rate must be positive");
    require(momentum >= 0.0 && momentum < 1.0, "sgd_step: momentum must be in [0, 1)");
    require(grads.w.size() == params.layers.size() && velocity.w.size() == params.layers.size(),
            "sgd_step: tensor set does not match model");
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
        auto& w = params.layers[l].w;
        auto& b = params.layers[l].b;
        require(grads.w[l].size() == w.size() && grads.b[l].size() == b.size(),
                "sgd_step: gradient shapes differ from params");
        for (std::size_t i = 0; i < w.size(); ++i) {
            velocity.w[l][i] = momentum * velocity.w[l][i] + grads.w[l][i];
            w[i] -= lr * velocity.w[l][i];
        }
        for (std::size_t i = 0; i < b.size(); ++i) {
            velocity.b[l][i] = momentum * velocity.b[l][i] + grads.b[l][i];
            b[i] -= lr * velocity.b[l][i];
        }
    }
}

inline bool params_finite(const ToyModelParams& params) {
    for (const auto& layer : params.layers) {
        for (double v : layer.w)
            if (!std::isfinite(v)) return false;
        for (double v : layer.b)
            if (!std::isfinite(v)) return false;
    }
    return true;
}

// Checkpoints: a text index followed by one tensor blob per parameter array.
// Weights are stored as (out, in, k*k) tensors, biases as (1, out) grids.

inline void save_checkpoint(const ToyModelParams& params, const std::string& path) {
    std::ostringstream head;
    head << "UWSEGCKPT 1\n";
    head << "seed " << params.seed << "\n";
    head << "input_channels " << params.spec.input_channels << "\n";
    head << "kernel " << params.spec.kernel << "\n";
    head << "classes " << params.spec.classes << "\n";
    head << "hidden " << params.spec.hidden.size();
    for (int h : params.spec.hidden) head << " " << h;
    head << "\n";

    std::vector<std::string> blobs;
    std::ostringstream index;
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
        const ConvLayer& layer = params.layers[l];
        blobs.push_back(detail::tensor_bytes(
            {static_cast<std::uint32_t>(layer.out_ch), static_cast<std::uint32_t>(layer.in_ch),
             static_cast<std::uint32_t>(layer.k * layer.k)}, layer.w));
        index << "layer" << l << ".w " << blobs.back().size() << "\n";
        blobs.push_back(detail::tensor_bytes(
            {1u, static_cast<std::uint32_t>(layer.out_ch)}, layer.b));
        index << "layer" << l << ".b " << blobs.back().size() << "\n";
    }
    head << "arrays " << blobs.size() << "\n" << index.str() << "END\n";

    std::string out = head.str();
    for (const auto& blob : blobs) out += blob;
    detail::write_file(path, out);
}

inline ToyModelParams load_checkpoint(const std::string& path) {
    const std::string bytes = detail::read_file(path);
    std::istringstream in(bytes);
    std::string tag;
    int version = 0;
    in >> tag >> version;
    if (tag != "UWSEGCKPT" || version != 1)
        throw FormatError("not a checkpoint file: " + path);

    ToyModelSpec spec;
    std::uint64_t seed = 0;
    std::size_t hidden_count = 0, array_count = 0;
    in >> tag >> seed;
    if (tag != "seed") throw FormatError("malformed checkpoint header: " + path);
    in >> tag >> spec.input_channels;
    if (tag != "input_channels") throw FormatError("malformed checkpoint header: " + path);
    in >> tag >> spec.kernel;
    if (tag != "kernel") throw FormatError("malformed checkpoint header: " + path);
    in >> tag >> spec.classes;
    if (tag != "classes") throw FormatError("malformed checkpoint header: " + path);
    in >> tag >> hidden_count;
    if (tag != "hidden") throw FormatError("malformed checkpoint header: " + path);
    spec.hidden.resize(hidden_count);
    for (auto& h : spec.hidden) in >> h;
    in >> tag >> array_count;
    if (tag != "arrays" || array_count != 2 * (hidden_count + 1))
        throw FormatError("malformed checkpoint header: " + path);

    std::vector<std::size_t> blob_sizes;
    for (std::size_t i = 0; i < array_count; ++i) {
        std::size_t len = 0;
        in >> tag >> len;
        if (!in) throw CorruptFileError("truncated checkpoint index: " + path);
        blob_sizes.push_back(len);
    }
    in >> tag;
    if (tag != "END") throw FormatError("malformed checkpoint index: " + path);
    in.get();  // newline after END

    ToyModelParams params;
    params.spec = spec;
    params.seed = seed;
    std::size_t pos = static_cast<std::size_t>(in.tellg());

    const std::vector<int> chain = spec.channel_chain();
    for (std::size_t l = 0; l + 1 < chain.size(); ++l) {
        ConvLayer layer;
        layer.in_ch = chain[l];
        layer.out_ch = chain[l + 1];
        layer.k = spec.kernel;
        for (int part = 0; part < 2; ++part) {
            const std::size_t len = blob_sizes[2 * l + static_cast<std::size_t>(part)];
            if (pos + len > bytes.size())
                throw CorruptFileError("truncated checkpoint payload: " + path);
            const std::string blob = bytes.substr(pos, len);
            pos += len;
            detail::ByteReader r(blob, path);
            r.u32();  // magic (validated below)
            if (std::memcmp(blob.data(), kTensorMagic, 4) != 0 || r.u16() != kTensorVersion ||
                r.u8() != kDtypeF32)
                throw CorruptFileError("bad tensor blob in checkpoint: " + path);
            const int ndim = r.u8();
            std::uint64_t total = 1;
            for (int d = 0; d < ndim; ++d) total *= r.u32();
            std::vector<double> values(static_cast<std::size_t>(total));
            for (auto& v : values) v = static_cast<double>(r.f32());
            if (part == 0) {
                if (values.size() != static_cast<std::size_t>(layer.out_ch) * layer.in_ch *
                                         layer.k * layer.k)
                    throw CorruptFileError("weight shape mismatch in checkpoint: " + path);
                layer.w = std::move(values);
            } else {
                if (values.size() != static_cast<std::size_t>(layer.out_ch))
                    throw CorruptFileError("bias shape mismatch in checkpoint: " + path);
                layer.b = std::move(values);
            }
        }
        params.layers.push_back(std::move(layer));
    }
    return params;
}

}  // namespace uwseg
