#pragma once

#include "hm/spectral.hpp"

namespace hm {

namespace detail {

// Kovesi-style phase congruency over a 4-scale / 4-orientation log-Abor bank
// with per-orientation noise compensation. Returns one PC map (sum over
// orientations), values >= 0.
inline std::vector<double> phase_congruency(const std::vector<double>& gray, int64_t H, int64_t W) {
    constexpr int kScales = 4;
    constexpr int kOrients = 4;
    constexpr double kMinWavelength = 6.0;
    constexpr double kMult = 2.0;
    constexpr double kSigmaOnf = 0.55;
    constexpr double kDThetaOnSigma = 1.2;
    constexpr double kNoiseK = 2.0;
    constexpr double kEps = 1e-4;

    const int64_t P = H * W;
    std::vector<double> fre(gray.begin(), gray.end()), fim(static_cast<size_t>(P), 0.0);
    fft2_inplace(fre, fim, H, W, false);

    // normalized frequency grid in fft layout (DC at [0,0])
    std::vector<double> radius(static_cast<size_t>(P)), theta(static_cast<size_t>(P));
    for (int64_t h = 0; h < H; ++h) {
        const double fy = (h <= H / 2 ? double(h) : double(h - H)) / double(H);
        for (int64_t w = 0; w < W; ++w) {
            const double fx = (w <= W / 2 ? double(w) : double(w - W)) / double(W);
            radius[size_t(h * W + w)] = std::sqrt(fx * fx + fy * fy);
            theta[size_t(h * W + w)] = std::atan2(-fy, fx);
        }
    }
    radius[0] = 1.0;  // avoid log(0) at DC; the filters zero it anyway

    std::vector<std::vector<double>> log_gabor(kScales, std::vector<double>(size_t(P)));
    const double log_sig = std::log(kSigmaOnf);
    for (int s = 0; s < kScales; ++s) {
        const double wavelength = kMinWavelength * std::pow(kMult, s);
        const double f0 = 1.0 / wavelength;
        for (int64_t i = 0; i < P; ++i) {
            const double r = radius[size_t(i)];
            const double lg = std::exp(-(std::log(r / f0) * std::log(r / f0)) /
                                       (2.0 * log_sig * log_sig));
            // 15th-order butterworth lowpass, cutoff 0.45
            const double lp = 1.0 / (1.0 + std::pow(r / 0.45, 30.0));
            log_gabor[size_t(s)][size_t(i)] = lg * lp;
        }
        log_gabor[size_t(s)][0] = 0.0;
    }

    const double theta_sigma = 3.14159265358979323846 / kOrients / kDThetaOnSigma;
    std::vector<double> pc(static_cast<size_t>(P), 0.0);
    std::vector<double> e(static_cast<size_t>(P)), o(static_cast<size_t>(P));
    std::vector<std::vector<double>> es(kScales, std::vector<double>(size_t(P)));
    std::vector<std::vector<double>> os_(kScales, std::vector<double>(size_t(P)));

    for (int ori = 0; ori < kOrients; ++ori) {
        const double angle = ori * 3.14159265358979323846 / kOrients;
        std::vector<double> spread(static_cast<size_t>(P));
        for (int64_t i = 0; i < P; ++i) {
            const double ds = std::sin(theta[size_t(i)]) * std::cos(angle) -
                              std::cos(theta[size_t(i)]) * std::sin(angle);
            const double dc = std::cos(theta[size_t(i)]) * std::cos(angle) +
                              std::sin(theta[size_t(i)]) * std::sin(angle);
            const double dtheta = std::fabs(std::atan2(ds, dc));
            spread[size_t(i)] = std::exp(-(dtheta * dtheta) / (2.0 * theta_sigma * theta_sigma));
        }

        std::vector<double> sum_e(static_cast<size_t>(P), 0.0), sum_o(static_cast<size_t>(P), 0.0), sum_an(static_cast<size_t>(P), 0.0);
        double tau = 0.0;
        for (int s = 0; s < kScales; ++s) {
            for (int64_t i = 0; i < P; ++i) {
                const double f = log_gabor[size_t(s)][size_t(i)] * spread[size_t(i)];
                e[size_t(i)] = fre[size_t(i)] * f;
                o[size_t(i)] = fim[size_t(i)] * f;
            }
            fft2_inplace(e, o, H, W, true);
            const double inv = 1.0 / double(P);
            for (int64_t i = 0; i < P; ++i) {
                es[size_t(s)][size_t(i)] = e[size_t(i)] * inv;
                os_[size_t(s)][size_t(i)] = o[size_t(i)] * inv;
                sum_e[size_t(i)] += es[size_t(s)][size_t(i)];
                sum_o[size_t(i)] += os_[size_t(s)][size_t(i)];
                sum_an[size_t(i)] += std::hypot(es[size_t(s)][size_t(i)], os_[size_t(s)][size_t(i)]);
            }
            if (s == 0) {
                std::vector<double> amp(static_cast<size_t>(P));
                for (int64_t i = 0; i < P; ++i)
                    amp[size_t(i)] = std::hypot(es[0][size_t(i)], os_[0][size_t(i)]);
                std::nth_element(amp.begin(), amp.begin() + P / 2, amp.end());
                tau = amp[size_t(P / 2)] / std::sqrt(std::log(4.0));
            }
        }

        // weighted phase deviation energy
        std::vector<double> energy(static_cast<size_t>(P), 0.0);
        for (int64_t i = 0; i < P; ++i) {
            const double xe = std::sqrt(sum_e[size_t(i)] * sum_e[size_t(i)] +
                                        sum_o[size_t(i)] * sum_o[size_t(i)]) +
                              kEps;
            const double me = sum_e[size_t(i)] / xe;
            const double mo = sum_o[size_t(i)] / xe;
            double acc = 0.0;
            for (int s = 0; s < kScales; ++s) {
                const double ev = es[size_t(s)][size_t(i)];
                const double ov = os_[size_t(s)][size_t(i)];
                acc += ev * me + ov * mo - std::fabs(ev * mo - ov * me);
            }
            energy[size_t(i)] = acc;
        }

        // noise threshold estimated from the smallest-scale response
        const double total_tau = tau * (1.0 - std::pow(1.0 / kMult, kScales)) / (1.0 - 1.0 / kMult);
        const double noise_mean = total_tau * std::sqrt(3.14159265358979323846 / 2.0);
        const double noise_sigma = total_tau * std::sqrt((4.0 - 3.14159265358979323846) / 2.0);
        const double thresh = (noise_mean + kNoiseK * noise_sigma) / 1.7;

        for (int64_t i = 0; i < P; ++i)
            pc[size_t(i)] += std::max(energy[size_t(i)] - thresh, 0.0) / (sum_an[size_t(i)] + kEps);
    }
    return pc;
}

inline void scharr_gradient(const std::vector<double>& img, int64_t H, int64_t W,
                            std::vector<double>& gm) {
    // Scharr 3x3 / 16, replicated border
    gm.assign(size_t(H * W), 0.0);
    auto at = [&](int64_t h, int64_t w) {
        h = std::clamp<int64_t>(h, 0, H - 1);
        w = std::clamp<int64_t>(w, 0, W - 1);
        return img[size_t(h * W + w)];
    };
    for (int64_t h = 0; h < H; ++h)
        for (int64_t w = 0; w < W; ++w) {
            const double gx = (3.0 * at(h - 1, w - 1) + 10.0 * at(h, w - 1) + 3.0 * at(h + 1, w - 1) -
                               3.0 * at(h - 1, w + 1) - 10.0 * at(h, w + 1) - 3.0 * at(h + 1, w + 1)) /
                              16.0;
            const double gy = (3.0 * at(h - 1, w - 1) + 10.0 * at(h - 1, w) + 3.0 * at(h - 1, w + 1) -
                               3.0 * at(h + 1, w - 1) - 10.0 * at(h + 1, w) - 3.0 * at(h + 1, w + 1)) /
                              16.0;
            gm[size_t(h * W + w)] = std::sqrt(gx * gx + gy * gy);
        }
}

// grayscale in [0,255], downsampled per the usual FSIM rule
template <typename T>
std::vector<double> fsim_gray(const Tensor<T>& img, int64_t& H, int64_t& W) {
    std::vector<double> g;
    if (img.ndim() == 2) {
        H = img.dim(0);
        W = img.dim(1);
        g.resize(size_t(H * W));
        for (int64_t i = 0; i < H * W; ++i) g[size_t(i)] = 255.0 * double(img.data()[i]);
    } else if (img.ndim() == 3 && img.dim(0) == 3) {
        H = img.dim(1);
        W = img.dim(2);
        g.resize(size_t(H * W));
        const T* r = img.data();
        const T* gr = img.data() + H * W;
        const T* b = img.data() + 2 * H * W;
        for (int64_t i = 0; i < H * W; ++i)
            g[size_t(i)] = 255.0 * (0.299 * double(r[i]) + 0.587 * double(gr[i]) +
                                    0.114 * double(b[i]));
    } else {
        throw std::invalid_argument("fsim: expected H x W or 3 x H x W image");
    }
    const int64_t f = std::max<int64_t>(1, (std::min(H, W) + 128) / 256);
    if (f > 1) {
        const int64_t Hd = H / f, Wd = W / f;
        std::vector<double> ds(static_cast<size_t>(Hd * Wd), 0.0);
        for (int64_t h = 0; h < Hd; ++h)
            for (int64_t w = 0; w < Wd; ++w) {
                double s = 0;
                for (int64_t a = 0; a < f; ++a)
                    for (int64_t b2 = 0; b2 < f; ++b2) s += g[size_t((h * f + a) * W + w * f + b2)];
                ds[size_t(h * Wd + w)] = s / double(f * f);
            }
        g = std::move(ds);
        H = Hd;
        W = Wd;
    }
    return g;
}

// reflect-pad a plane up to pow2 dims for the FFT-based filtering
inline std::vector<double> reflect_pad_pow2(const std::vector<double>& img, int64_t H, int64_t W,
                                            int64_t& Hp, int64_t& Wp) {
    Hp = 1;
    while (Hp < H) Hp <<= 1;
    Wp = 1;
    while (Wp < W) Wp <<= 1;
    if (Hp == H && Wp == W) return img;
    std::vector<double> out(static_cast<size_t>(Hp * Wp));
    for (int64_t h = 0; h < Hp; ++h) {
        int64_t sh = h < H ? h : 2 * H - 2 - h;
        sh = std::clamp<int64_t>(sh, 0, H - 1);
        for (int64_t w = 0; w < Wp; ++w) {
            int64_t sw = w < W ? w : 2 * W - 2 - w;
            sw = std::clamp<int64_t>(sw, 0, W - 1);
            out[size_t(h * Wp + w)] = img[size_t(sh * W + sw)];
        }
    }
    return out;
}

}  // namespace detail

// Feature similarity index: phase congruency + gradient magnitude similarity,
// weighted by the pointwise max of the two PC maps. Returns a value in [0,1].
template <typename T>
double fsim(const Tensor<T>& x, const Tensor<T>& y) {
    int64_t H1 = 0, W1 = 0, H2 = 0, W2 = 0;
    std::vector<double> g1 = detail::fsim_gray(x, H1, W1);
    std::vector<double> g2 = detail::fsim_gray(y, H2, W2);
    if (H1 != H2 || W1 != W2) throw std::invalid_argument("fsim: image sizes differ");
    if (H1 < 32 || W1 < 32)
        throw std::invalid_argument("fsim: image too small (" + std::to_string(H1) + "x" +
                                    std::to_string(W1) + ", need >= 32)");

    int64_t Hp = 0, Wp = 0;
    std::vector<double> p1 = detail::reflect_pad_pow2(g1, H1, W1, Hp, Wp);
    std::vector<double> p2 = detail::reflect_pad_pow2(g2, H1, W1, Hp, Wp);
    std::vector<double> pc1p = detail::phase_congruency(p1, Hp, Wp);
    std::vector<double> pc2p = detail::phase_congruency(p2, Hp, Wp);

    std::vector<double> gm1, gm2;
    detail::scharr_gradient(g1, H1, W1, gm1);
    detail::scharr_gradient(g2, H1, W1, gm2);

    constexpr double T1 = 0.85;   // PC similarity constant
    constexpr double T2 = 160.0;  // gradient similarity constant ([0,255] scale)
    double num = 0.0, den = 0.0;
    for (int64_t h = 0; h < H1; ++h)
        for (int64_t w = 0; w < W1; ++w) {
            const double pc1 = pc1p[size_t(h * Wp + w)];
            const double pc2 = pc2p[size_t(h * Wp + w)];
            const double gv1 = gm1[size_t(h * W1 + w)];
            const double gv2 = gm2[size_t(h * W1 + w)];
            const double s_pc = (2.0 * pc1 * pc2 + T1) / (pc1 * pc1 + pc2 * pc2 + T1);
            const double s_g = (2.0 * gv1 * gv2 + T2) / (gv1 * gv1 + gv2 * gv2 + T2);
            const double pcm = std::max(pc1, pc2);
            num += s_pc * s_g * pcm;
            den += pcm;
        }
    if (den <= 1e-12) return 1.0;  // featureless pair, similarity degenerates
    return num / den;
}

}  // namespace hm
