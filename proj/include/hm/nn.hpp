#pragma once

#include "hm/ops.hpp"

namespace hm {

template <typename T>
struct Conv2dParams {
    Tensor<T> weight;  // out_ch x (in_ch/groups) x kH x kW
    Tensor<T> bias;    // {out_ch}, may be undefined
    int stride = 1;
    int padding = 0;
    int groups = 1;
};

namespace detail {

template <typename T>
void conv2d_check(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, int stride,
                  int padding, int groups) {
    if (x.ndim() != 4) throw std::invalid_argument("conv2d: input must be N x C x H x W");
    if (w.ndim() != 4) throw std::invalid_argument("conv2d: weight must be 4-d");
    if (stride < 1 || padding < 0 || groups < 1)
        throw std::invalid_argument("conv2d: bad stride/padding/groups");
    int64_t cin = x.dim(1), cout = w.dim(0), cig = w.dim(1);
    if (cin % groups != 0)
        throw std::invalid_argument("conv2d: in_channels " + std::to_string(cin) +
                                    " not divisible by groups " + std::to_string(groups));
    if (cout % groups != 0)
        throw std::invalid_argument("conv2d: out_channels " + std::to_string(cout) +
                                    " not divisible by groups " + std::to_string(groups));
    if (cig != cin / groups)
        throw std::invalid_argument("conv2d: weight in_channels/groups " + std::to_string(cig) +
                                    " != input channels/groups " + std::to_string(cin / groups));
    if (b.defined() && b.numel() != cout)
        throw std::invalid_argument("conv2d: bias length " + std::to_string(b.numel()) +
                                    " != out_channels " + std::to_string(cout));
    int64_t H = x.dim(2), W = x.dim(3), kH = w.dim(2), kW = w.dim(3);
    if ((H + 2 * padding - kH) < 0 || (W + 2 * padding - kW) < 0)
        throw std::invalid_argument("conv2d: kernel " + std::to_string(kH) + "x" +
                                    std::to_string(kW) + " larger than padded input " +
                                    std::to_string(H + 2 * padding) + "x" +
                                    std::to_string(W + 2 * padding));
}

}  // namespace detail

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, int stride,
                 int padding, int groups) {
    detail::conv2d_check(x, weight, bias, stride, padding, groups);
    const int64_t N = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int64_t Cout = weight.dim(0), kH = weight.dim(2), kW = weight.dim(3);
    const int64_t Cig = Cin / groups, Cog = Cout / groups;
    const int64_t Ho = (H + 2 * padding - kH) / stride + 1;
    const int64_t Wo = (W + 2 * padding - kW) / stride + 1;

    Tensor<T> out({N, Cout, Ho, Wo});
    const T* xd = x.data();
    const T* wd = weight.data();
    T* od = out.data();

    for (int64_t n = 0; n < N; ++n) {
        for (int64_t oc = 0; oc < Cout; ++oc) {
            const int64_t g = oc / Cog;
            T* ochan = od + (n * Cout + oc) * Ho * Wo;
            const T bv = bias.defined() ? bias.data()[oc] : T(0);
            std::fill_n(ochan, Ho * Wo, bv);
            for (int64_t icg = 0; icg < Cig; ++icg) {
                const int64_t ic = g * Cig + icg;
                const T* xchan = xd + (n * Cin + ic) * H * W;
                const T* wk = wd + (oc * Cig + icg) * kH * kW;
                if (stride == 1) {
                    for (int64_t kh = 0; kh < kH; ++kh) {
                        for (int64_t oy = 0; oy < Ho; ++oy) {
                            const int64_t iy = oy - padding + kh;
                            if (iy < 0 || iy >= H) continue;
                            T* orow = ochan + oy * Wo;
                            const T* xrow = xchan + iy * W;
                            for (int64_t kw = 0; kw < kW; ++kw) {
                                const T wv = wk[kh * kW + kw];
                                if (wv == T(0)) continue;
                                const int64_t ox0 = std::max<int64_t>(0, padding - kw);
                                const int64_t ox1 = std::min<int64_t>(Wo, W + padding - kw);
                                if (ox1 > ox0)
                                    simd::fma_row(orow + ox0, xrow + ox0 - padding + kw, wv,
                                                  size_t(ox1 - ox0));
                            }
                        }
                    }
                } else {
                    for (int64_t oy = 0; oy < Ho; ++oy) {
                        T* orow = ochan + oy * Wo;
                        for (int64_t kh = 0; kh < kH; ++kh) {
                            const int64_t iy = oy * stride - padding + kh;
                            if (iy < 0 || iy >= H) continue;
                            const T* xrow = xchan + iy * W;
                            for (int64_t kw = 0; kw < kW; ++kw) {
                                const T wv = wk[kh * kW + kw];
                                for (int64_t ox = 0; ox < Wo; ++ox) {
                                    const int64_t ix = ox * stride - padding + kw;
                                    if (ix >= 0 && ix < W) orow[ox] += wv * xrow[ix];
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    if (grad_enabled() && (x.tracked() || weight.tracked() || (bias.defined() && bias.tracked()))) {
        Tensor<T> xx = x, ww = weight, bb = bias, oo = out;
        if (xx.tracked()) xx.ensure_grad();
        if (ww.tracked()) ww.ensure_grad();
        if (bb.defined() && bb.tracked()) bb.ensure_grad();
        oo.ensure_grad();
        Tape<T>::get().record([xx, ww, bb, oo, N, Cin, H, W, Cout, kH, kW, Cig, Cog, Ho, Wo,
                               stride, padding]() mutable {
            const T* og = oo.grad();
            const T* xd = xx.data();
            const T* wd = ww.data();
            if (bb.defined() && bb.has_grad()) {
                T* bg = bb.grad();
                for (int64_t n = 0; n < N; ++n)
                    for (int64_t oc = 0; oc < Cout; ++oc) {
                        const T* gchan = og + (n * Cout + oc) * Ho * Wo;
                        T s = 0;
                        for (int64_t i = 0; i < Ho * Wo; ++i) s += gchan[i];
                        bg[oc] += s;
                    }
            }
            for (int64_t n = 0; n < N; ++n) {
                for (int64_t oc = 0; oc < Cout; ++oc) {
                    const int64_t g = oc / Cog;
                    const T* gchan = og + (n * Cout + oc) * Ho * Wo;
                    for (int64_t icg = 0; icg < Cig; ++icg) {
                        const int64_t ic = g * Cig + icg;
                        const T* xchan = xd + (n * Cin + ic) * H * W;
                        T* gxchan = xx.has_grad() ? xx.grad() + (n * Cin + ic) * H * W : nullptr;
                        const T* wk = wd + (oc * Cig + icg) * kH * kW;
                        T* gwk = ww.has_grad() ? ww.grad() + (oc * Cig + icg) * kH * kW : nullptr;
                        if (stride == 1) {
                            for (int64_t kh = 0; kh < kH; ++kh) {
                                for (int64_t oy = 0; oy < Ho; ++oy) {
                                    const int64_t iy = oy - padding + kh;
                                    if (iy < 0 || iy >= H) continue;
                                    const T* grow = gchan + oy * Wo;
                                    for (int64_t kw = 0; kw < kW; ++kw) {
                                        const int64_t ox0 = std::max<int64_t>(0, padding - kw);
                                        const int64_t ox1 = std::min<int64_t>(Wo, W + padding - kw);
                                        if (ox1 <= ox0) continue;
                                        const int64_t ix0 = ox0 - padding + kw;
                                        if (gxchan != nullptr)
                                            simd::fma_row(gxchan + iy * W + ix0, grow + ox0,
                                                          wk[kh * kW + kw], size_t(ox1 - ox0));
                                        if (gwk != nullptr)
                                            gwk[kh * kW + kw] += simd::dot(
                                                grow + ox0, xchan + iy * W + ix0, size_t(ox1 - ox0));
                                    }
                                }
                            }
                        } else {
                            for (int64_t oy = 0; oy < Ho; ++oy) {
                                const T* grow = gchan + oy * Wo;
                                for (int64_t kh = 0; kh < kH; ++kh) {
                                    const int64_t iy = oy * stride - padding + kh;
                                    if (iy < 0 || iy >= H) continue;
                                    for (int64_t kw = 0; kw < kW; ++kw) {
                                        const T wv = wk[kh * kW + kw];
                                        for (int64_t ox = 0; ox < Wo; ++ox) {
                                            const int64_t ix = ox * stride - padding + kw;
                                            if (ix < 0 || ix >= W) continue;
                                            if (gxchan != nullptr)
                                                gxchan[iy * W + ix] += wv * grow[ox];
                                            if (gwk != nullptr)
                                                gwk[kh * kW + kw] +=
                                                    grow[ox] * xchan[iy * W + ix];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Conv2dParams<T>& p) {
    return conv2d(x, p.weight, p.bias, p.stride, p.padding, p.groups);
}

// ---------------------------------------------------------------------------

template <typename T>
struct BatchNorm2dParams {
    Tensor<T> gamma;  // {C}
    Tensor<T> beta;   // {C}
    std::vector<T> running_mean;
    std::vector<T> running_var;
    T momentum = T(0.1);
    T eps = T(1e-5);
};

template <typename T>
Tensor<T> batch_norm2d(const Tensor<T>& x, BatchNorm2dParams<T>& p, bool training) {
    if (x.ndim() != 4) throw std::invalid_argument("batch_norm2d: input must be N x C x H x W");
    const int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (p.gamma.numel() != C || p.beta.numel() != C)
        throw std::invalid_argument("batch_norm2d: gamma/beta length " +
                                    std::to_string(p.gamma.numel()) + " != channels " +
                                    std::to_string(C));
    if (!(p.eps > T(0))) throw std::invalid_argument("batch_norm2d: eps must be > 0");
    if (int64_t(p.running_mean.size()) != C) {
        p.running_mean.assign(size_t(C), T(0));
        p.running_var.assign(size_t(C), T(1));
    }

    const int64_t M = N * H * W;
    const int64_t plane = H * W;
    Tensor<T> out(x.shape());
    std::vector<T> mean(static_cast<size_t>(C)), inv_std(static_cast<size_t>(C));

    if (training) {
        for (int64_t c = 0; c < C; ++c) {
            T s = 0;
            for (int64_t n = 0; n < N; ++n) {
                const T* ch = x.data() + (n * C + c) * plane;
                for (int64_t i = 0; i < plane; ++i) s += ch[i];
            }
            T m = s / T(M);
            T v = 0;
            for (int64_t n = 0; n < N; ++n) {
                const T* ch = x.data() + (n * C + c) * plane;
                for (int64_t i = 0; i < plane; ++i) {
                    T d = ch[i] - m;
                    v += d * d;
                }
            }
            v /= T(M);
            mean[size_t(c)] = m;
            inv_std[size_t(c)] = T(1) / std::sqrt(v + p.eps);
            T v_unbiased = M > 1 ? v * T(M) / T(M - 1) : v;
            p.running_mean[size_t(c)] = (T(1) - p.momentum) * p.running_mean[size_t(c)] + p.momentum * m;
            p.running_var[size_t(c)] = (T(1) - p.momentum) * p.running_var[size_t(c)] + p.momentum * v_unbiased;
        }
    } else {
        for (int64_t c = 0; c < C; ++c) {
            mean[size_t(c)] = p.running_mean[size_t(c)];
            inv_std[size_t(c)] = T(1) / std::sqrt(p.running_var[size_t(c)] + p.eps);
        }
    }

    for (int64_t n = 0; n < N; ++n)
        for (int64_t c = 0; c < C; ++c) {
            const T* src = x.data() + (n * C + c) * plane;
            T* dst = out.data() + (n * C + c) * plane;
            const T m = mean[size_t(c)], is = inv_std[size_t(c)];
            const T g = p.gamma.data()[c], b = p.beta.data()[c];
            for (int64_t i = 0; i < plane; ++i) dst[i] = g * (src[i] - m) * is + b;
        }

    if (grad_enabled() && (x.tracked() || p.gamma.tracked() || p.beta.tracked())) {
        Tensor<T> xx = x, gg = p.gamma, bb = p.beta, oo = out;
        if (xx.tracked()) xx.ensure_grad();
        if (gg.tracked()) gg.ensure_grad();
        if (bb.tracked()) bb.ensure_grad();
        oo.ensure_grad();
        Tape<T>::get().record([xx, gg, bb, oo, mean, inv_std, N, C, plane, M,
                               training]() mutable {
            const T* og = oo.grad();
            const T* xd = xx.data();
            for (int64_t c = 0; c < C; ++c) {
                const T m = mean[size_t(c)], is = inv_std[size_t(c)];
                T sum_g = 0, sum_gx = 0;
                for (int64_t n = 0; n < N; ++n) {
                    const T* gch = og + (n * C + c) * plane;
                    const T* xch = xd + (n * C + c) * plane;
                    for (int64_t i = 0; i < plane; ++i) {
                        sum_g += gch[i];
                        sum_gx += gch[i] * (xch[i] - m) * is;
                    }
                }
                if (gg.has_grad()) gg.grad()[c] += sum_gx;
                if (bb.has_grad()) bb.grad()[c] += sum_g;
                if (xx.has_grad()) {
                    const T gv = gg.data()[c];
                    T* gx = xx.grad();
                    if (training) {
                        const T mg = sum_g / T(M), mgx = sum_gx / T(M);
                        for (int64_t n = 0; n < N; ++n) {
                            const T* gch = og + (n * C + c) * plane;
                            const T* xch = xd + (n * C + c) * plane;
                            T* gxch = gx + (n * C + c) * plane;
                            for (int64_t i = 0; i < plane; ++i) {
                                T xhat = (xch[i] - m) * is;
                                gxch[i] += gv * is * (gch[i] - mg - xhat * mgx);
                            }
                        }
                    } else {
                        for (int64_t n = 0; n < N; ++n) {
                            const T* gch = og + (n * C + c) * plane;
                            T* gxch = gx + (n * C + c) * plane;
                            for (int64_t i = 0; i < plane; ++i) gxch[i] += gv * is * gch[i];
                        }
                    }
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------

// Layer-style normalization across channels at each spatial position.
template <typename T>
Tensor<T> channel_layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                             T eps = T(1e-5)) {
    if (x.ndim() != 4) throw std::invalid_argument("channel_layer_norm: input must be 4-d");
    const int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (gamma.numel() != C || beta.numel() != C)
        throw std::invalid_argument("channel_layer_norm: gamma/beta length mismatch with C=" +
                                    std::to_string(C));
    const int64_t plane = H * W;
    Tensor<T> out(x.shape());
    std::vector<T> mean(static_cast<size_t>(N * plane)), inv_std(static_cast<size_t>(N * plane));

    for (int64_t n = 0; n < N; ++n) {
        for (int64_t i = 0; i < plane; ++i) {
            T s = 0;
            for (int64_t c = 0; c < C; ++c) s += x.data()[(n * C + c) * plane + i];
            T m = s / T(C);
            T v = 0;
            for (int64_t c = 0; c < C; ++c) {
                T d = x.data()[(n * C + c) * plane + i] - m;
                v += d * d;
            }
            v /= T(C);
            T is = T(1) / std::sqrt(v + eps);
            mean[size_t(n * plane + i)] = m;
            inv_std[size_t(n * plane + i)] = is;
            for (int64_t c = 0; c < C; ++c)
                out.data()[(n * C + c) * plane + i] =
                    gamma.data()[c] * (x.data()[(n * C + c) * plane + i] - m) * is +
                    beta.data()[c];
        }
    }

    if (grad_enabled() && (x.tracked() || gamma.tracked() || beta.tracked())) {
        Tensor<T> xx = x, gg = gamma, bb = beta, oo = out;
        if (xx.tracked()) xx.ensure_grad();
        if (gg.tracked()) gg.ensure_grad();
        if (bb.tracked()) bb.ensure_grad();
        oo.ensure_grad();
        Tape<T>::get().record([xx, gg, bb, oo, mean, inv_std, N, C, plane]() mutable {
            const T* og = oo.grad();
            const T* xd = xx.data();
            for (int64_t n = 0; n < N; ++n) {
                for (int64_t i = 0; i < plane; ++i) {
                    const T m = mean[size_t(n * plane + i)], is = inv_std[size_t(n * plane + i)];
                    T sum_h = 0, sum_hx = 0;
                    for (int64_t c = 0; c < C; ++c) {
                        const int64_t off = (n * C + c) * plane + i;
                        T xhat = (xd[off] - m) * is;
                        T hval = og[off] * gg.data()[c];
                        sum_h += hval;
                        sum_hx += hval * xhat;
                        if (gg.has_grad()) gg.grad()[c] += og[off] * xhat;
                        if (bb.has_grad()) bb.grad()[c] += og[off];
                    }
                    if (xx.has_grad()) {
                        const T mh = sum_h / T(C), mhx = sum_hx / T(C);
                        for (int64_t c = 0; c < C; ++c) {
                            const int64_t off = (n * C + c) * plane + i;
                            T xhat = (xd[off] - m) * is;
                            xx.grad()[off] += is * (og[off] * gg.data()[c] - mh - xhat * mhx);
                        }
                    }
                }
            }
        });
    }
    return out;
}

}  // namespace hm
