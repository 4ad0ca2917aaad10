#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>

#include "hm/rng.hpp"
#include "hm/simd.hpp"
#include "hm/tensor.hpp"

namespace hm {

namespace detail {

template <typename T>
void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
    if (a.shape() != b.shape())
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                    " vs " + shape_str(b.shape()));
}

template <typename T>
T stable_sigmoid(T x) {
    if (x >= T(0)) {
        T e = std::exp(-x);
        return T(1) / (T(1) + e);
    }
    T e = std::exp(x);
    return e / (T(1) + e);
}

template <typename T>
T stable_softplus(T x) {
    if (x > T(20)) return x;
    if (x < T(-20)) return std::exp(x);
    return std::log1p(std::exp(x));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise binary

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    detail::check_same_shape(a, b, "add");
    Tensor<T> out(a.shape());
    simd::add(out.data(), a.data(), b.data(), size_t(a.numel()));
    if (grad_enabled() && (a.tracked() || b.tracked())) {
        Tensor<T> aa = a, bb = b, oo = out;
        if (aa.tracked()) aa.ensure_grad();
        if (bb.tracked()) bb.ensure_grad();
        oo.ensure_grad();
        Tape<T>::get().record([aa, bb, oo]() mutable {
            size_t n = size_t(oo.numel());
            if (aa.has_grad()) simd::accumulate(aa.grad(), oo.grad(), n);
            if (bb.has_grad()) simd::accumulate(bb.grad(), oo.grad(), n);
        });
    }
    return out;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    detail::check_same_shape(a, b, "sub");
    Tensor<T> out(a.shape());
    simd::sub(out.data(), a.data(), b.data(), size_t(a.numel()));
    if (grad_enabled() && (a.tracked() || b.tracked())) {
        Tensor<T> aa = a, bb = b, oo = out;
        if (aa.tracked()) aa.ensure_grad();
        if (bb.tracked()) bb.ensure_grad();
        oo.ensure_grad();
        Tape<T>::get().record([aa, bb, oo]() mutable {
            size_t n = size_t(oo.numel());
            if (aa.has_grad()) simd::accumulate(aa.grad(), oo.grad(), n);
            if (bb.has_grad()) simd::fma_row(bb.grad(), oo.grad(), T(-1), n);
        });
    }
    return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    detail::check_same_shape(a, b, "mul");
    Tensor<T> out(a.shape());
    simd::mul(out.data(), a.data(), b.data(), size_t(a.numel()));
    if (grad_enabled() && (a.tracked() || b.tracked())) {
        Tensor<T> aa = a, bb = b, oo = out;
        if (aa.tracked()) aa.ensure_grad();
        if (bb.tracked()) bb.ensure_grad();
        oo.ensure_grad();
        Tape<T>::get().record([aa, bb, oo]() mutable {
            size_t n = size_t(oo.numel());
            const T* og = oo.grad();
            if (aa.has_grad()) {
                const T* bd = bb.data();
                T* ag = aa.grad();
                for (size_t i = 0; i < n; ++i) ag[i] += og[i] * bd[i];
            }
            if (bb.has_grad()) {
                const T* ad = aa.data();
                T* bg = bb.grad();
                for (size_t i = 0; i < n; ++i) bg[i] += og[i] * ad[i];
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
    detail::check_same_shape(a, b, "div");
    Tensor<T> out(a.shape());
    simd::div(out.data(), a.data(), b.data(), size_t(a.numel()));
    if (grad_enabled() && (a.tracked() || b.tracked())) {
        Tensor<T> aa = a, bb = b, oo = out;
        if (aa.tracked()) aa.ensure_grad();
        if (bb.tracked()) bb.ensure_grad();
        oo.ensure_grad();
        Tape<T>::get().record([aa, bb, oo]() mutable {
            size_t n = size_t(oo.numel());
            const T* og = oo.grad();
            const T* bd = bb.data();
            if (aa.has_grad()) {
                T* ag = aa.grad();
                for (size_t i = 0; i < n; ++i) ag[i] += og[i] / bd[i];
            }
            if (bb.has_grad()) {
                const T* od = oo.data();
                T* bg = bb.grad();
                for (size_t i = 0; i < n; ++i) bg[i] -= og[i] * od[i] / bd[i];
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// scalar-immediate ops

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T c) {
    Tensor<T> out(a.shape());
    const T* ad = a.data();
    T* od = out.data();
    for (int64_t i = 0; i < a.numel(); ++i) od[i] = ad[i] + c;
    if (grad_enabled() && a.tracked()) {
        Tensor<T> aa = a, oo = out;
        aa.ensure_grad();
        oo.ensure_grad();
        Tape<T>::get().record(
            [aa, oo]() mutable { simd::accumulate(aa.grad(), oo.grad(), size_t(oo.numel())); });
    }
    return out;
}

template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& a, T c) {
    Tensor<T> out(a.shape());
    const T* ad = a.data();
    T* od = out.data();
    for (int64_t i = 0; i < a.numel(); ++i) od[i] = ad[i] * c;
    if (grad_enabled() && a.tracked()) {
        Tensor<T> aa = a, oo = out;
        aa.ensure_grad();
        oo.ensure_grad();
        Tape<T>::get().record(
            [aa, oo, c]() mutable { simd::fma_row(aa.grad(), oo.grad(), c, size_t(oo.numel())); });
    }
    return out;
}

template <typename T>
Tensor<T> neg(const Tensor<T>& a) {
    return mul_scalar(a, T(-1));
}

// broadcast multiply by a single-element tensor (both operands get grads)
template <typename T>
Tensor<T> mul_scalar_tensor(const Tensor<T>& x, const Tensor<T>& s) {
    if (s.numel() != 1) throw std::invalid_argument("mul_scalar_tensor: scalar operand numel != 1");
    Tensor<T> out(x.shape());
    const T sv = s.data()[0];
    const T* xd = x.data();
    T* od = out.data();
    for (int64_t i = 0; i < x.numel(); ++i) od[i] = xd[i] * sv;
    if (grad_enabled() && (x.tracked() || s.tracked())) {
        Tensor<T> xx = x, ss = s, oo = out;
        if (xx.tracked()) xx.ensure_grad();
        if (ss.tracked()) ss.ensure_grad();
        oo.ensure_grad();
        Tape<T>::get().record([xx, ss, oo]() mutable {
            size_t n = size_t(oo.numel());
            const T* og = oo.grad();
            if (xx.has_grad()) simd::fma_row(xx.grad(), og, ss.data()[0], n);
            if (ss.has_grad()) ss.grad()[0] += simd::dot(og, xx.data(), n);
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// elementwise unary

template <typename T>
Tensor<T> exp(const Tensor<T>& x) {
    Tensor<T> out(x.shape());
    const T* xd = x.data();
    T* od = out.data();
    for (int64_t i = 0; i < x.numel(); ++i) od[i] = std::exp(xd[i]);
    if (grad_enabled() && x.tracked()) {
        Tensor<T> xx = x, oo = out;
        xx.ensure_grad();
        oo.ensure_grad();
        Tape<T>::get().record([xx, oo]() mutable {
            const T* og = oo.grad();
            const T* od = oo.data();
            T* xg = xx.grad();
            for (int64_t i = 0; i < oo.numel(); ++i) xg[i] += og[i] * od[i];
        });
    }
    return out;
}

template <typename T>
Tensor<T> abs(const Tensor<T>& x) {
    Tensor<T> out(x.shape());
    const T* xd = x.data();
    T* od = out.data();
    for (int64_t i = 0; i < x.numel(); ++i) od[i] = std::fabs(xd[i]);
    if (grad_enabled() && x.tracked()) {
        Tensor<T> xx = x, oo = out;
        xx.ensure_grad();
        oo.ensure_grad();
        Tape<T>::get().record([xx, oo]() mutable {
            const T* og = oo.grad();
            const T* xd = xx.data();
            T* xg = xx.grad();
            // subgradient 0 at ties
            for (int64_t i = 0; i < oo.numel(); ++i)
                xg[i] += og[i] * (xd[i] > T(0) ? T(1) : (xd[i] < T(0) ? T(-1) : T(0)));
        });
    }
    return out;
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
    Tensor<T> out(x.shape());
    const T* xd = x.data();
    T* od = out.data();
    for (int64_t i = 0; i < x.numel(); ++i) od[i] = detail::stable_sigmoid(xd[i]);
    if (grad_enabled() && x.tracked()) {
        Tensor<T> xx = x, oo = out;
        xx.ensure_grad();
        oo.ensure_grad();
        Tape<T>::get().record([xx, oo]() mutable {
            const T* og = oo.grad();
            const T* od = oo.data();
            T* xg = xx.grad();
            for (int64_t i = 0; i < oo.numel(); ++i) xg[i] += og[i] * od[i] * (T(1) - od[i]);
        });
    }
    return out;
}

template <typename T>
Tensor<T> silu(const Tensor<T>& x) {
    Tensor<T> out(x.shape());
    const T* xd = x.data();
    T* od = out.data();
    for (int64_t i = 0; i < x.numel(); ++i) od[i] = xd[i] * detail::stable_sigmoid(xd[i]);
    if (grad_enabled() && x.tracked()) {
        Tensor<T> xx = x, oo = out;
        xx.ensure_grad();
        oo.ensure_grad();
        Tape<T>::get().record([xx, oo]() mutable {
            const T* og = oo.grad();
            const T* xd = xx.data();
            T* xg = xx.grad();
            for (int64_t i = 0; i < oo.numel(); ++i) {
                T s = detail::stable_sigmoid(xd[i]);
                xg[i] += og[i] * s * (T(1) + xd[i] * (T(1) - s));
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> softplus(const Tensor<T>& x) {
    Tensor<T> out(x.shape());
    const T* xd = x.data();
    T* od = out.data();
    for (int64_t i = 0; i < x.numel(); ++i) od[i] = detail::stable_softplus(xd[i]);
    if (grad_enabled() && x.tracked()) {
        Tensor<T> xx = x, oo = out;
        xx.ensure_grad();
        oo.ensure_grad();
        Tape<T>::get().record([xx, oo]() mutable {
            const T* og = oo.grad();
            const T* xd = xx.data();
            T* xg = xx.grad();
            for (int64_t i = 0; i < oo.numel(); ++i)
                xg[i] += og[i] * detail::stable_sigmoid(xd[i]);
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// reductions

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
    T total = 0;
    const T* xd = x.data();
    for (int64_t i = 0; i < x.numel(); ++i) total += xd[i];
    Tensor<T> out = Tensor<T>::scalar(total);
    if (grad_enabled() && x.tracked()) {
        Tensor<T> xx = x, oo = out;
        xx.ensure_grad();
        oo.ensure_grad();
        Tape<T>::get().record([xx, oo]() mutable {
            T g = oo.grad()[0];
            T* xg = xx.grad();
            for (int64_t i = 0; i < xx.numel(); ++i) xg[i] += g;
        });
    }
    return out;
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
    T total = 0;
    const T* xd = x.data();
    for (int64_t i = 0; i < x.numel(); ++i) total += xd[i];
    T inv = T(1) / T(x.numel());
    Tensor<T> out = Tensor<T>::scalar(total * inv);
    if (grad_enabled() && x.tracked()) {
        Tensor<T> xx = x, oo = out;
        xx.ensure_grad();
        oo.ensure_grad();
        Tape<T>::get().record([xx, oo, inv]() mutable {
            T g = oo.grad()[0] * inv;
            T* xg = xx.grad();
            for (int64_t i = 0; i < xx.numel(); ++i) xg[i] += g;
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// structural ops

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape new_shape) {
    if (shape_numel(new_shape) != x.numel())
        throw std::invalid_argument("reshape: numel mismatch " + shape_str(x.shape()) + " -> " +
                                    shape_str(new_shape));
    Tensor<T> out = Tensor<T>::from_data(std::move(new_shape), x.vec());
    if (grad_enabled() && x.tracked()) {
        Tensor<T> xx = x, oo = out;
        xx.ensure_grad();
        oo.ensure_grad();
        Tape<T>::get().record(
            [xx, oo]() mutable { simd::accumulate(xx.grad(), oo.grad(), size_t(oo.numel())); });
    }
    return out;
}

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.ndim() != 4 || b.ndim() != 4)
        throw std::invalid_argument("concat_channels: expected 4-d tensors");
    if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3))
        throw std::invalid_argument("concat_channels: batch/spatial mismatch " +
                                    shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    int64_t N = a.dim(0), Ca = a.dim(1), Cb = b.dim(1), H = a.dim(2), W = a.dim(3);
    Tensor<T> out({N, Ca + Cb, H, W});
    int64_t plane = H * W;
    for (int64_t n = 0; n < N; ++n) {
        std::copy_n(a.data() + n * Ca * plane, Ca * plane, out.data() + n * (Ca + Cb) * plane);
        std::copy_n(b.data() + n * Cb * plane, Cb * plane,
                    out.data() + (n * (Ca + Cb) + Ca) * plane);
    }
    if (grad_enabled() && (a.tracked() || b.tracked())) {
        Tensor<T> aa = a, bb = b, oo = out;
        if (aa.tracked()) aa.ensure_grad();
        if (bb.tracked()) bb.ensure_grad();
        oo.ensure_grad();
        Tape<T>::get().record([aa, bb, oo, N, Ca, Cb, plane]() mutable {
            const T* og = oo.grad();
            for (int64_t n = 0; n < N; ++n) {
                if (aa.has_grad())
                    simd::accumulate(aa.grad() + n * Ca * plane, og + n * (Ca + Cb) * plane,
                                     size_t(Ca * plane));
                if (bb.has_grad())
                    simd::accumulate(bb.grad() + n * Cb * plane,
                                     og + (n * (Ca + Cb) + Ca) * plane, size_t(Cb * plane));
            }
        });
    }
    return out;
}

// channels [c0, c1) of a NCHW tensor
template <typename T>
Tensor<T> slice_channels(const Tensor<T>& x, int64_t c0, int64_t c1) {
    if (x.ndim() != 4) throw std::invalid_argument("slice_channels: expected 4-d tensor");
    int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (c0 < 0 || c1 > C || c0 >= c1)
        throw std::invalid_argument("slice_channels: range [" + std::to_string(c0) + "," +
                                    std::to_string(c1) + ") invalid for C=" + std::to_string(C));
    int64_t Cs = c1 - c0, plane = H * W;
    Tensor<T> out({N, Cs, H, W});
    for (int64_t n = 0; n < N; ++n)
        std::copy_n(x.data() + (n * C + c0) * plane, Cs * plane, out.data() + n * Cs * plane);
    if (grad_enabled() && x.tracked()) {
        Tensor<T> xx = x, oo = out;
        xx.ensure_grad();
        oo.ensure_grad();
        Tape<T>::get().record([xx, oo, N, C, c0, Cs, plane]() mutable {
            const T* og = oo.grad();
            for (int64_t n = 0; n < N; ++n)
                simd::accumulate(xx.grad() + (n * C + c0) * plane, og + n * Cs * plane,
                                 size_t(Cs * plane));
        });
    }
    return out;
}

template <typename T>
Tensor<T> upsample_nearest2x(const Tensor<T>& x) {
    if (x.ndim() != 4) throw std::invalid_argument("upsample_nearest2x: expected 4-d tensor");
    int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    Tensor<T> out({N, C, H * 2, W * 2});
    for (int64_t nc = 0; nc < N * C; ++nc) {
        const T* src = x.data() + nc * H * W;
        T* dst = out.data() + nc * 4 * H * W;
        for (int64_t h = 0; h < H; ++h) {
            T* row0 = dst + (2 * h) * 2 * W;
            T* row1 = dst + (2 * h + 1) * 2 * W;
            for (int64_t w = 0; w < W; ++w) {
                T v = src[h * W + w];
                row0[2 * w] = v;
                row0[2 * w + 1] = v;
                row1[2 * w] = v;
                row1[2 * w + 1] = v;
            }
        }
    }
    if (grad_enabled() && x.tracked()) {
        Tensor<T> xx = x, oo = out;
        xx.ensure_grad();
        oo.ensure_grad();
        Tape<T>::get().record([xx, oo, N, C, H, W]() mutable {
            const T* og = oo.grad();
            T* xg = xx.grad();
            for (int64_t nc = 0; nc < N * C; ++nc) {
                const T* gsrc = og + nc * 4 * H * W;
                T* gdst = xg + nc * H * W;
                for (int64_t h = 0; h < H; ++h) {
                    const T* row0 = gsrc + (2 * h) * 2 * W;
                    const T* row1 = gsrc + (2 * h + 1) * 2 * W;
                    for (int64_t w = 0; w < W; ++w)
                        gdst[h * W + w] +=
                            row0[2 * w] + row0[2 * w + 1] + row1[2 * w] + row1[2 * w + 1];
                }
            }
        });
    }
    return out;
}

// v: N x C -> N x C x H x W (constant over space)
template <typename T>
Tensor<T> spatial_broadcast(const Tensor<T>& v, int64_t H, int64_t W) {
    if (v.ndim() != 2) throw std::invalid_argument("spatial_broadcast: expected N x C tensor");
    int64_t N = v.dim(0), C = v.dim(1);
    Tensor<T> out({N, C, H, W});
    for (int64_t nc = 0; nc < N * C; ++nc)
        std::fill_n(out.data() + nc * H * W, H * W, v.data()[nc]);
    if (grad_enabled() && v.tracked()) {
        Tensor<T> vv = v, oo = out;
        vv.ensure_grad();
        oo.ensure_grad();
        Tape<T>::get().record([vv, oo, N, C, H, W]() mutable {
            const T* og = oo.grad();
            T* vg = vv.grad();
            for (int64_t nc = 0; nc < N * C; ++nc) {
                T s = 0;
                const T* p = og + nc * H * W;
                for (int64_t i = 0; i < H * W; ++i) s += p[i];
                vg[nc] += s;
            }
        });
    }
    return out;
}

// v: {C} -> N x C (repeat across batch)
template <typename T>
Tensor<T> row_broadcast(const Tensor<T>& v, int64_t N) {
    if (v.ndim() != 1) throw std::invalid_argument("row_broadcast: expected 1-d tensor");
    int64_t C = v.dim(0);
    Tensor<T> out({N, C});
    for (int64_t n = 0; n < N; ++n) std::copy_n(v.data(), C, out.data() + n * C);
    if (grad_enabled() && v.tracked()) {
        Tensor<T> vv = v, oo = out;
        vv.ensure_grad();
        oo.ensure_grad();
        Tape<T>::get().record([vv, oo, N, C]() mutable {
            const T* og = oo.grad();
            T* vg = vv.grad();
            for (int64_t n = 0; n < N; ++n)
                for (int64_t c = 0; c < C; ++c) vg[c] += og[n * C + c];
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// gradient checking

// Max relative error between analytic gradients of f and central differences,
// probed at up to max_coords_per_param coordinates of each listed parameter.
template <typename T>
T finite_diff_check(const std::function<Tensor<T>()>& f, std::vector<Tensor<T>> params, T h,
                    int64_t max_coords_per_param = -1, uint64_t seed = 1) {
    for (auto& p : params) {
        p.set_requires_grad(true);
        p.ensure_grad();
        p.zero_grad();
    }
    clear_tape<T>();
    {
        Tensor<T> loss = f();
        backward(loss);
    }
    T max_rel = 0;
    Rng rng(seed);
    NoGradGuard no_grad;
    for (auto& p : params) {
        int64_t n = p.numel();
        std::vector<int64_t> coords(static_cast<size_t>(n));
        std::iota(coords.begin(), coords.end(), 0);
        if (max_coords_per_param > 0 && max_coords_per_param < n) {
            for (int64_t i = 0; i < max_coords_per_param; ++i) {
                int64_t j = rng.uniform_int(i, n - 1);
                std::swap(coords[size_t(i)], coords[size_t(j)]);
            }
            coords.resize(size_t(max_coords_per_param));
        }
        for (int64_t idx : coords) {
            T orig = p.data()[idx];
            p.data()[idx] = orig + h;
            T fp = f().item();
            p.data()[idx] = orig - h;
            T fm = f().item();
            p.data()[idx] = orig;
            T fd = (fp - fm) / (T(2) * h);
            T an = p.grad()[idx];
            T denom = std::max(std::max(std::fabs(an), std::fabs(fd)), T(1e-8));
            max_rel = std::max(max_rel, std::fabs(an - fd) / denom);
        }
    }
    return max_rel;
}

}  // namespace hm
