#pragma once

#include "hm/ssm.hpp"

namespace hm {

template <typename T>
struct ComplexSpectrum {
    int64_t height = 0;
    int64_t width = 0;
    std::vector<T> re;
    std::vector<T> im;
};

namespace detail {

inline bool is_pow2(int64_t n) { return n >= 1 && (n & (n - 1)) == 0; }

// Stage twiddle tables for an iterative radix-2 transform of size n.
template <typename T>
struct FftPlan {
    int64_t n = 0;
    std::vector<T> wre, wim;        // concatenated per-stage tables (forward sign)
    std::vector<size_t> stage_off;  // offset of each stage's table

    explicit FftPlan(int64_t size) : n(size) {
        if (!is_pow2(n)) throw std::invalid_argument("fft: size must be a power of two, got " +
                                                     std::to_string(n));
        for (int64_t len = 2; len <= n; len <<= 1) {
            stage_off.push_back(wre.size());
            const double ang = -6.283185307179586476925286766559 / double(len);
            for (int64_t j = 0; j < len / 2; ++j) {
                wre.push_back(T(std::cos(ang * double(j))));
                wim.push_back(T(std::sin(ang * double(j))));
            }
        }
    }

    void transform(T* re, T* im, bool inverse) const {
        // bit-reversal permutation
        for (int64_t i = 1, j = 0; i < n; ++i) {
            int64_t bit = n >> 1;
            for (; j & bit; bit >>= 1) j ^= bit;
            j |= bit;
            if (i < j) {
                std::swap(re[i], re[j]);
                std::swap(im[i], im[j]);
            }
        }
        size_t stage = 0;
        for (int64_t len = 2; len <= n; len <<= 1, ++stage) {
            const T* wr = wre.data() + stage_off[stage];
            const T* wi = wim.data() + stage_off[stage];
            const int64_t half = len / 2;
            for (int64_t i = 0; i < n; i += len) {
                for (int64_t j = 0; j < half; ++j) {
                    const T cr = wr[j];
                    const T ci = inverse ? -wi[j] : wi[j];
                    const T vr = re[i + j + half] * cr - im[i + j + half] * ci;
                    const T vi = re[i + j + half] * ci + im[i + j + half] * cr;
                    const T ur = re[i + j], ui = im[i + j];
                    re[i + j] = ur + vr;
                    im[i + j] = ui + vi;
                    re[i + j + half] = ur - vr;
                    im[i + j + half] = ui - vi;
                }
            }
        }
    }
};

// in-place 2-d transform of row-major H x W planes
template <typename T>
void fft2_inplace(std::vector<T>& re, std::vector<T>& im, int64_t H, int64_t W, bool inverse) {
    FftPlan<T> row_plan(W);
    for (int64_t h = 0; h < H; ++h) row_plan.transform(&re[size_t(h * W)], &im[size_t(h * W)], inverse);
    FftPlan<T> col_plan(H);
    std::vector<T> cre(static_cast<size_t>(H)), cim(static_cast<size_t>(H));
    for (int64_t w = 0; w < W; ++w) {
        for (int64_t h = 0; h < H; ++h) {
            cre[size_t(h)] = re[size_t(h * W + w)];
            cim[size_t(h)] = im[size_t(h * W + w)];
        }
        col_plan.transform(cre.data(), cim.data(), inverse);
        for (int64_t h = 0; h < H; ++h) {
            re[size_t(h * W + w)] = cre[size_t(h)];
            im[size_t(h * W + w)] = cim[size_t(h)];
        }
    }
}

}  // namespace detail

// Unnormalized forward 2-d DFT of a real H x W plane (radix-2 sizes only).
template <typename T>
ComplexSpectrum<T> fft2(const Tensor<T>& plane) {
    if (plane.ndim() != 2) throw std::invalid_argument("fft2: expected H x W tensor");
    const int64_t H = plane.dim(0), W = plane.dim(1);
    for (int64_t i = 0; i < plane.numel(); ++i)
        if (!std::isfinite(plane.data()[i]))
            throw NumericError("fft2: non-finite input at flat index " + std::to_string(i));
    ComplexSpectrum<T> spec;
    spec.height = H;
    spec.width = W;
    spec.re.assign(plane.data(), plane.data() + plane.numel());
    spec.im.assign(size_t(H * W), T(0));
    detail::fft2_inplace(spec.re, spec.im, H, W, false);
    return spec;
}

template <typename T>
Tensor<T> ifft2(const ComplexSpectrum<T>& spec) {
    std::vector<T> re = spec.re, im = spec.im;
    detail::fft2_inplace(re, im, spec.height, spec.width, true);
    const T inv = T(1) / T(spec.height * spec.width);
    Tensor<T> out({spec.height, spec.width});
    for (int64_t i = 0; i < out.numel(); ++i) out.data()[i] = re[size_t(i)] * inv;
    return out;
}

// Spectral representation of an RGB image: centered normalized log-amplitude
// and centered phase of the luminance plane's DFT. Not differentiable; the
// result enters the network as a fixed input feature.
template <typename T>
Tensor<T> spectral_channels(const Tensor<T>& image) {
    if (image.ndim() != 3 || image.dim(0) != 3)
        throw std::invalid_argument("spectral_channels: expected 3 x H x W image, got " +
                                    shape_str(image.shape()));
    NoGradGuard no_grad;
    const int64_t H = image.dim(1), W = image.dim(2);
    Tensor<T> luma({H, W});
    const T* r = image.data();
    const T* g = image.data() + H * W;
    const T* b = image.data() + 2 * H * W;
    for (int64_t i = 0; i < H * W; ++i) {
        auto clamp01 = [](T v) { return std::min(T(1), std::max(T(0), v)); };
        luma.data()[i] =
            T(0.299) * clamp01(r[i]) + T(0.587) * clamp01(g[i]) + T(0.114) * clamp01(b[i]);
    }
    ComplexSpectrum<T> spec = fft2(luma);

    std::vector<T> amp(static_cast<size_t>(H * W)), phase(static_cast<size_t>(H * W));
    T max_amp = 0;
    for (int64_t i = 0; i < H * W; ++i) {
        const T a = std::hypot(spec.re[size_t(i)], spec.im[size_t(i)]);
        amp[size_t(i)] = a;
        max_amp = std::max(max_amp, a);
        phase[size_t(i)] = std::atan2(spec.im[size_t(i)], spec.re[size_t(i)]) /
                           T(3.14159265358979323846264338328);
    }
    const T denom = max_amp > T(0) ? std::log1p(max_amp) : T(1);

    Tensor<T> out({2, H, W});
    // shift DC to the spatial center
    for (int64_t h = 0; h < H; ++h)
        for (int64_t w = 0; w < W; ++w) {
            const int64_t sh = (h + H / 2) % H;
            const int64_t sw = (w + W / 2) % W;
            out.data()[sh * W + sw] = std::log1p(amp[size_t(h * W + w)]) / denom;
            out.data()[H * W + sh * W + sw] = phase[size_t(h * W + w)];
        }
    return out;
}

// Dual-domain stem (single image, 3 x H x W -> 5 x H x W):
// spatial SS2D on RGB concatenated with SS2D over the spectral channels.
template <typename T>
Tensor<T> build_initial_features(const Tensor<T>& image, const SS2DBlockParams<T>& stem_spatial,
                                 const SS2DBlockParams<T>& stem_spectral) {
    if (image.ndim() != 3 || image.dim(0) != 3)
        throw std::invalid_argument("build_initial_features: expected 3 x H x W image");
    const int64_t H = image.dim(1), W = image.dim(2);
    Tensor<T> x4 = reshape(image, {1, 3, H, W});
    Tensor<T> spatial = ss2d_layer(x4, stem_spatial);
    Tensor<T> is = spectral_channels(image);
    Tensor<T> is4 = reshape(is, {1, 2, H, W});
    Tensor<T> spectral = ss2d_layer(is4, stem_spectral);
    Tensor<T> cat = concat_channels(spatial, spectral);
    return reshape(cat, {5, H, W});
}

}  // namespace hm
