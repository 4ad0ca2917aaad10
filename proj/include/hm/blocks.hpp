#pragma once

#include <array>
#include <iostream>
#include <optional>

#include "hm/spectral.hpp"

namespace hm {

// ---------------------------------------------------------------------------
// MS-Fusion: three parallel depthwise-separable branches (k = 1, 3, 5),
// concatenated, merged by 1x1 conv, plus the residual input.

template <typename T>
struct MSFusionBranch {
    Conv2dParams<T> pw1;  // 1x1 C -> C
    Conv2dParams<T> dw1;  // k x k depthwise, pad k/2
    Conv2dParams<T> pw2;
    Conv2dParams<T> dw2;
};

template <typename T>
struct MSFusionParams {
    int64_t channels = 0;
    std::array<MSFusionBranch<T>, 3> branch;  // kernel sizes 1, 3, 5
    Conv2dParams<T> merge;                    // 1x1 3C -> C, zero-init
};

template <typename T>
Tensor<T> ms_fusion(const Tensor<T>& x, const MSFusionParams<T>& p) {
    if (x.ndim() != 4) throw std::invalid_argument("ms_fusion: expected N x C x H x W");
    if (x.dim(1) != p.channels)
        throw std::invalid_argument("ms_fusion: input channels " + std::to_string(x.dim(1)) +
                                    " != block channels " + std::to_string(p.channels));
    std::array<Tensor<T>, 3> outs;
    for (size_t k = 0; k < 3; ++k) {
        const MSFusionBranch<T>& br = p.branch[k];
        Tensor<T> y = conv2d(x, br.pw1);
        y = conv2d(y, br.dw1);
        y = silu(y);
        y = conv2d(y, br.pw2);
        y = conv2d(y, br.dw2);
        outs[k] = y;
    }
    Tensor<T> cat = concat_channels(concat_channels(outs[0], outs[1]), outs[2]);
    return add(conv2d(cat, p.merge), x);
}

// ---------------------------------------------------------------------------
// Background light prior: mean color of the brightest-luminance pixels
// (top 0.1%, at least 10). Stands in for the pre-trained color-constancy
// estimator; degenerate images fall back to the global per-channel mean.

template <typename T>
std::array<T, 3> estimate_background_light(const Tensor<T>& image) {
    if (image.ndim() != 3 || image.dim(0) != 3)
        throw std::invalid_argument("estimate_background_light: expected 3 x H x W image");
    const int64_t P = image.dim(1) * image.dim(2);
    const T* r = image.data();
    const T* g = image.data() + P;
    const T* b = image.data() + 2 * P;

    auto mean_over = [&](const std::vector<int64_t>& idx) {
        std::array<T, 3> acc{T(0), T(0), T(0)};
        for (int64_t i : idx) {
            acc[0] += r[i];
            acc[1] += g[i];
            acc[2] += b[i];
        }
        for (auto& v : acc) v = std::min(T(1), std::max(T(0), v / T(idx.size())));
        return acc;
    };

    std::vector<int64_t> order(static_cast<size_t>(P));
    std::iota(order.begin(), order.end(), 0);
    if (P < 10) return mean_over(order);

    std::vector<T> luma(static_cast<size_t>(P));
    for (int64_t i = 0; i < P; ++i)
        luma[size_t(i)] = T(0.299) * r[i] + T(0.587) * g[i] + T(0.114) * b[i];
    const int64_t k = std::max<int64_t>(10, (P + 999) / 1000);
    std::nth_element(order.begin(), order.begin() + (k - 1), order.end(),
                     [&](int64_t a, int64_t c) { return luma[size_t(a)] > luma[size_t(c)]; });
    order.resize(size_t(k));
    return mean_over(order);
}

// ---------------------------------------------------------------------------
// ColorFusion: blends encoder features toward a background-light prior via a
// learned transmission-like gate, c = f (.) t' + B' (.) (1 - t').

template <typename T>
struct ColorFusionParams {
    int64_t channels = 0;
    Tensor<T> b_l;               // learnable prior correction, {3}
    Conv2dParams<T> prior_proj;  // 1x1 3 -> C
    Conv2dParams<T> bf_head;     // 3x3 C -> C
    Conv2dParams<T> tp_head;     // 3x3 C -> C
    Tensor<T> omega_raw;         // {1}; omega = sigmoid(omega_raw)
};

template <typename T>
T color_fusion_omega(const ColorFusionParams<T>& p) {
    return detail::stable_sigmoid(p.omega_raw.data()[0]);
}

// b_e: N x 3 per-image background light estimates, treated as constant input.
template <typename T>
Tensor<T> color_fusion(const Tensor<T>& f, const Tensor<T>& b_e, const ColorFusionParams<T>& p) {
    if (f.ndim() != 4) throw std::invalid_argument("color_fusion: expected N x C x H x W");
    if (f.dim(1) != p.channels)
        throw std::invalid_argument("color_fusion: input channels " + std::to_string(f.dim(1)) +
                                    " != block channels " + std::to_string(p.channels));
    if (b_e.ndim() != 2 || b_e.dim(0) != f.dim(0) || b_e.dim(1) != 3)
        throw std::invalid_argument("color_fusion: b_e must be N x 3");

    Tensor<T> be = b_e;
    bool out_of_range = false;
    for (int64_t i = 0; i < be.numel(); ++i)
        if (be.data()[i] < T(0) || be.data()[i] > T(1)) out_of_range = true;
    if (out_of_range) {
        std::cerr << "color_fusion: b_e outside [0,1], clamping\n";
        Tensor<T> clamped(be.shape());
        for (int64_t i = 0; i < be.numel(); ++i)
            clamped.data()[i] = std::min(T(1), std::max(T(0), be.data()[i]));
        be = clamped;
    }

    const int64_t N = f.dim(0), H = f.dim(2), W = f.dim(3);
    Tensor<T> prior = add(be, row_broadcast(p.b_l, N));
    Tensor<T> b_p = conv2d(spatial_broadcast(prior, H, W), p.prior_proj);
    Tensor<T> b_f = sigmoid(conv2d(f, p.bf_head));
    Tensor<T> t_p = sigmoid(conv2d(f, p.tp_head));

    Tensor<T> omega = sigmoid(p.omega_raw);
    Tensor<T> one_minus_omega = add_scalar(neg(omega), T(1));
    Tensor<T> b_prime = add(mul_scalar_tensor(b_f, omega), mul_scalar_tensor(b_p, one_minus_omega));

    Tensor<T> one_minus_t = add_scalar(neg(t_p), T(1));
    return add(mul(f, t_p), mul(b_prime, one_minus_t));
}

// ---------------------------------------------------------------------------
// Encoder / decoder stages

// shape-preserving stand-in for a disabled SS2D block: x + conv3x3(x)
template <typename T>
struct ConvResidual {
    Conv2dParams<T> conv;
};

template <typename T>
Tensor<T> conv_residual(const Tensor<T>& x, const ConvResidual<T>& p) {
    return add(conv2d(x, p.conv), x);
}

template <typename T>
struct EncoderStageParams {
    Conv2dParams<T> down;  // 3x3 stride-2 pad-1, C_{i-1} -> C_i
    std::optional<SS2DBlockParams<T>> ss2d;
    std::optional<ConvResidual<T>> mixer;  // used when SS2D is ablated
    std::optional<MSFusionParams<T>> fusion;
};

template <typename T>
Tensor<T> encoder_stage(const Tensor<T>& x, const EncoderStageParams<T>& p) {
    if (x.ndim() != 4) throw std::invalid_argument("encoder_stage: expected N x C x H x W");
    if (x.dim(2) % 2 != 0 || x.dim(3) % 2 != 0)
        throw std::invalid_argument("encoder_stage: spatial dims " + std::to_string(x.dim(2)) +
                                    "x" + std::to_string(x.dim(3)) + " must be even");
    Tensor<T> y = conv2d(x, p.down);
    if (p.ss2d)
        y = ss2d_layer(y, *p.ss2d);
    else if (p.mixer)
        y = conv_residual(y, *p.mixer);
    if (p.fusion) y = ms_fusion(y, *p.fusion);
    return y;
}

template <typename T>
struct DecoderStageParams {
    Conv2dParams<T> conv1;  // 3x3 pad-1, (C_prev + C_skip) -> C_out
    BatchNorm2dParams<T> bn;
    Conv2dParams<T> conv2;  // 3x3 pad-1, C_out -> C_out
};

template <typename T>
Tensor<T> decoder_stage(const Tensor<T>& d, const Tensor<T>& skip, DecoderStageParams<T>& p,
                        bool training) {
    if (d.ndim() != 4 || skip.ndim() != 4)
        throw std::invalid_argument("decoder_stage: expected 4-d tensors");
    if (d.dim(2) != skip.dim(2) || d.dim(3) != skip.dim(3))
        throw std::invalid_argument(
            "decoder_stage: decoder feature " + std::to_string(d.dim(2)) + "x" +
            std::to_string(d.dim(3)) + " does not match skip " + std::to_string(skip.dim(2)) +
            "x" + std::to_string(skip.dim(3)));
    Tensor<T> z = concat_channels(d, skip);
    z = upsample_nearest2x(z);
    z = conv2d(z, p.conv1);
    z = batch_norm2d(z, p.bn, training);
    z = conv2d(z, p.conv2);
    return silu(z);
}

}  // namespace hm
