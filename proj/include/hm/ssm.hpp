#pragma once

#include <array>
#include <chrono>

#include "hm/nn.hpp"

namespace hm {

// Traversal orders for flattening an H x W grid into a sequence.
enum class ScanDir { row_fwd = 0, row_rev = 1, col_fwd = 2, col_rev = 3 };

namespace detail {

// pixel index (row-major within one H x W plane) visited at step t
inline int64_t scan_pixel(ScanDir dir, int64_t t, int64_t H, int64_t W) {
    const int64_t L = H * W;
    switch (dir) {
        case ScanDir::row_fwd: return t;
        case ScanDir::row_rev: return L - 1 - t;
        case ScanDir::col_fwd: return (t % H) * W + (t / H);
        case ScanDir::col_rev: {
            int64_t r = L - 1 - t;
            return (r % H) * W + (r / H);
        }
    }
    return t;
}

}  // namespace detail

// N x C x H x W -> N x C x L with positions ordered by the traversal
template <typename T>
Tensor<T> scan_gather(const Tensor<T>& x, ScanDir dir) {
    if (x.ndim() != 4) throw std::invalid_argument("scan_gather: expected 4-d tensor");
    const int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3), L = H * W;
    Tensor<T> out({N, C, L});
    for (int64_t nc = 0; nc < N * C; ++nc) {
        const T* src = x.data() + nc * L;
        T* dst = out.data() + nc * L;
        for (int64_t t = 0; t < L; ++t) dst[t] = src[detail::scan_pixel(dir, t, H, W)];
    }
    if (grad_enabled() && x.tracked()) {
        Tensor<T> xx = x, oo = out;
        xx.ensure_grad();
        oo.ensure_grad();
        Tape<T>::get().record([xx, oo, dir, N, C, H, W, L]() mutable {
            for (int64_t nc = 0; nc < N * C; ++nc) {
                const T* gsrc = oo.grad() + nc * L;
                T* gdst = xx.grad() + nc * L;
                for (int64_t t = 0; t < L; ++t) gdst[detail::scan_pixel(dir, t, H, W)] += gsrc[t];
            }
        });
    }
    return out;
}

// inverse of scan_gather for the same direction
template <typename T>
Tensor<T> scan_scatter(const Tensor<T>& seq, ScanDir dir, int64_t H, int64_t W) {
    if (seq.ndim() != 3) throw std::invalid_argument("scan_scatter: expected 3-d tensor");
    const int64_t N = seq.dim(0), C = seq.dim(1), L = seq.dim(2);
    if (L != H * W) throw std::invalid_argument("scan_scatter: L != H*W");
    Tensor<T> out({N, C, H, W});
    for (int64_t nc = 0; nc < N * C; ++nc) {
        const T* src = seq.data() + nc * L;
        T* dst = out.data() + nc * L;
        for (int64_t t = 0; t < L; ++t) dst[detail::scan_pixel(dir, t, H, W)] = src[t];
    }
    if (grad_enabled() && seq.tracked()) {
        Tensor<T> ss = seq, oo = out;
        ss.ensure_grad();
        oo.ensure_grad();
        Tape<T>::get().record([ss, oo, dir, N, C, H, W, L]() mutable {
            for (int64_t nc = 0; nc < N * C; ++nc) {
                const T* gsrc = oo.grad() + nc * L;
                T* gdst = ss.grad() + nc * L;
                for (int64_t t = 0; t < L; ++t) gdst[t] += gsrc[detail::scan_pixel(dir, t, H, W)];
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// S6 recurrence core:
//   h_t = exp(delta_t * A) . h_{t-1} + delta_t * B_t * u_t
//   y_t = C_t . h_t + D (.) u_t
// with h_0 = 0. Sequential in t, O(L * d_inner * d_state).
//
//   u, delta : N x d x L       A : d x S (entries < 0 for stability)
//   B, C     : N x S x L       D : {d}
template <typename T>
Tensor<T> selective_scan_core(const Tensor<T>& u, const Tensor<T>& delta, const Tensor<T>& A,
                              const Tensor<T>& B, const Tensor<T>& C, const Tensor<T>& D) {
    if (u.ndim() != 3) throw std::invalid_argument("selective_scan: u must be N x d x L");
    const int64_t N = u.dim(0), d = u.dim(1), L = u.dim(2);
    if (L < 1) throw std::invalid_argument("selective_scan: empty sequence (L = 0)");
    detail::check_same_shape(u, delta, "selective_scan(u/delta)");
    if (A.ndim() != 2 || A.dim(0) != d)
        throw std::invalid_argument("selective_scan: A must be d_inner x d_state");
    const int64_t S = A.dim(1);
    if (B.ndim() != 3 || B.dim(0) != N || B.dim(1) != S || B.dim(2) != L)
        throw std::invalid_argument("selective_scan: B shape " + shape_str(B.shape()) +
                                    " != expected [N,S,L]");
    detail::check_same_shape(B, C, "selective_scan(B/C)");
    if (D.numel() != d) throw std::invalid_argument("selective_scan: D length != d_inner");
    for (int64_t i = 0; i < u.numel(); ++i)
        if (!std::isfinite(u.data()[i]))
            throw NumericError("selective_scan: non-finite input at flat index " +
                                     std::to_string(i));
    for (int64_t i = 0; i < delta.numel(); ++i)
        if (!std::isfinite(delta.data()[i]))
            throw NumericError("selective_scan: non-finite delta at flat index " +
                                     std::to_string(i));

    Tensor<T> out({N, d, L});
    // h_0..h_L kept for backprop through time
    auto hist = std::make_shared<std::vector<T>>(size_t(N * (L + 1) * d * S), T(0));
    T* h = hist->data();
    const T* ud = u.data();
    const T* dd = delta.data();
    const T* Ad = A.data();
    const T* Bd = B.data();
    const T* Cd = C.data();
    const T* Dd = D.data();
    T* yd = out.data();

    for (int64_t n = 0; n < N; ++n) {
        for (int64_t t = 0; t < L; ++t) {
            for (int64_t i = 0; i < d; ++i) {
                const int64_t off = (n * d + i) * L + t;
                const T dt = dd[off];
                const T uv = ud[off];
                const T* hprev = h + ((n * (L + 1) + t) * d + i) * S;
                T* hcur = h + ((n * (L + 1) + t + 1) * d + i) * S;
                T acc = 0;
                for (int64_t j = 0; j < S; ++j) {
                    const T ab = std::exp(dt * Ad[i * S + j]);
                    const T hn = ab * hprev[j] + dt * Bd[(n * S + j) * L + t] * uv;
                    hcur[j] = hn;
                    acc += Cd[(n * S + j) * L + t] * hn;
                }
                yd[off] = acc + Dd[i] * uv;
            }
        }
    }

    if (grad_enabled() &&
        (u.tracked() || delta.tracked() || A.tracked() || B.tracked() || C.tracked() ||
         D.tracked())) {
        Tensor<T> uu = u, dl = delta, aa = A, bb = B, cc = C, ddp = D, oo = out;
        for (auto* t : {&uu, &dl, &aa, &bb, &cc, &ddp})
            if (t->tracked()) t->ensure_grad();
        oo.ensure_grad();
        Tape<T>::get().record([uu, dl, aa, bb, cc, ddp, oo, hist, N, d, L, S]() mutable {
            const T* gy = oo.grad();
            const T* ud = uu.data();
            const T* dd = dl.data();
            const T* Ad = aa.data();
            const T* Bd = bb.data();
            const T* Cd = cc.data();
            const T* Dd = ddp.data();
            const T* h = hist->data();
            T* gu = uu.has_grad() ? uu.grad() : nullptr;
            T* gdl = dl.has_grad() ? dl.grad() : nullptr;
            T* gA = aa.has_grad() ? aa.grad() : nullptr;
            T* gB = bb.has_grad() ? bb.grad() : nullptr;
            T* gC = cc.has_grad() ? cc.grad() : nullptr;
            T* gD = ddp.has_grad() ? ddp.grad() : nullptr;
            std::vector<T> dh(static_cast<size_t>(d * S));
            for (int64_t n = 0; n < N; ++n) {
                std::fill(dh.begin(), dh.end(), T(0));
                for (int64_t t = L - 1; t >= 0; --t) {
                    for (int64_t i = 0; i < d; ++i) {
                        const int64_t off = (n * d + i) * L + t;
                        const T g = gy[off];
                        const T dt = dd[off];
                        const T uv = ud[off];
                        const T* hprev = h + ((n * (L + 1) + t) * d + i) * S;
                        const T* hcur = h + ((n * (L + 1) + t + 1) * d + i) * S;
                        if (gD != nullptr) gD[i] += g * uv;
                        T gu_acc = gu != nullptr ? g * Dd[i] : T(0);
                        T gdt_acc = 0;
                        for (int64_t j = 0; j < S; ++j) {
                            const T cv = Cd[(n * S + j) * L + t];
                            const T bv = Bd[(n * S + j) * L + t];
                            if (gC != nullptr) gC[(n * S + j) * L + t] += g * hcur[j];
                            T dh_ij = dh[size_t(i * S + j)] + g * cv;
                            const T ab = std::exp(dt * Ad[i * S + j]);
                            gdt_acc += dh_ij * (ab * Ad[i * S + j] * hprev[j] + bv * uv);
                            if (gA != nullptr) gA[i * S + j] += dh_ij * ab * dt * hprev[j];
                            if (gB != nullptr) gB[(n * S + j) * L + t] += dh_ij * dt * uv;
                            gu_acc += dh_ij * dt * bv;
                            dh[size_t(i * S + j)] = dh_ij * ab;
                        }
                        if (gu != nullptr) gu[off] += gu_acc;
                        if (gdl != nullptr) gdl[off] += gdt_acc;
                    }
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------

// One direction's parameter set: state matrix (stored as log of -A), skip
// vector, and the input-dependent delta/B/C projections.
template <typename T>
struct SelectiveScanParams {
    Tensor<T> a_log;           // d_inner x d_state
    Tensor<T> skip;            // {d_inner}
    Conv2dParams<T> dt_proj;   // 1x1 d_inner -> d_inner, bias carries the delta init
    Conv2dParams<T> b_proj;    // 1x1 d_inner -> d_state
    Conv2dParams<T> c_proj;    // 1x1 d_inner -> d_state
};

// Input-dependent selective scan over one flattened sequence (N x d x L).
template <typename T>
Tensor<T> selective_scan_1d(const Tensor<T>& u, const SelectiveScanParams<T>& p) {
    if (u.ndim() != 3) throw std::invalid_argument("selective_scan_1d: u must be N x d x L");
    const int64_t N = u.dim(0), d = u.dim(1), L = u.dim(2);
    if (L < 1) throw std::invalid_argument("selective_scan_1d: empty sequence (L = 0)");
    Tensor<T> u4 = reshape(u, {N, d, 1, L});
    Tensor<T> delta = softplus(conv2d(u4, p.dt_proj));
    Tensor<T> bm = conv2d(u4, p.b_proj);
    Tensor<T> cm = conv2d(u4, p.c_proj);
    const int64_t S = p.a_log.dim(1);
    Tensor<T> a = neg(exp(p.a_log));
    return selective_scan_core(u, reshape(delta, {N, d, L}), a, reshape(bm, {N, S, L}),
                               reshape(cm, {N, S, L}), p.skip);
}

// ---------------------------------------------------------------------------

// Pre-norm gated SS2D block: four directional selective scans over the
// depthwise-convolved input branch, merged by sum, gated, projected, residual.
template <typename T>
struct SS2DBlockParams {
    int64_t d_model = 0;
    int64_t d_inner = 0;
    int64_t d_state = 0;
    bool tie_directions = false;
    Tensor<T> norm_gamma, norm_beta;  // {d_model}
    Conv2dParams<T> in_proj;          // 1x1 d_model -> 2*d_inner
    Conv2dParams<T> dw_conv;          // 3x3 depthwise on d_inner
    std::array<SelectiveScanParams<T>, 4> scan;
    Conv2dParams<T> out_proj;         // 1x1 d_inner -> d_model, zero-init
};

template <typename T>
Tensor<T> ss2d_layer(const Tensor<T>& x, const SS2DBlockParams<T>& p) {
    if (x.ndim() != 4) throw std::invalid_argument("ss2d_layer: expected N x C x H x W");
    if (x.dim(1) != p.d_model)
        throw std::invalid_argument("ss2d_layer: input channels " + std::to_string(x.dim(1)) +
                                    " != block d_model " + std::to_string(p.d_model));
    const int64_t H = x.dim(2), W = x.dim(3);
    Tensor<T> xn = channel_layer_norm(x, p.norm_gamma, p.norm_beta);
    Tensor<T> proj = conv2d(xn, p.in_proj);
    Tensor<T> xi = slice_channels(proj, 0, p.d_inner);
    Tensor<T> gate = slice_channels(proj, p.d_inner, 2 * p.d_inner);
    Tensor<T> xc = silu(conv2d(xi, p.dw_conv));

    Tensor<T> merged;
    for (int dir = 0; dir < 4; ++dir) {
        const SelectiveScanParams<T>& sp = p.scan[size_t(p.tie_directions ? 0 : dir)];
        Tensor<T> seq = scan_gather(xc, ScanDir(dir));
        Tensor<T> y = selective_scan_1d(seq, sp);
        Tensor<T> back = scan_scatter(y, ScanDir(dir), H, W);
        merged = dir == 0 ? back : add(merged, back);
    }
    Tensor<T> gated = mul(merged, silu(gate));
    Tensor<T> out = conv2d(gated, p.out_proj);
    return add(out, x);
}

// ---------------------------------------------------------------------------
// complexity probes

struct ProbeRow {
    int64_t length;
    double seconds;
};

namespace detail {

template <typename F>
double best_of(int repeats, F&& body) {
    double best = 1e300;
    for (int r = 0; r < repeats; ++r) {
        auto t0 = std::chrono::steady_clock::now();
        body();
        auto t1 = std::chrono::steady_clock::now();
        best = std::min(best, std::chrono::duration<double>(t1 - t0).count());
    }
    return best;
}

}  // namespace detail

// Wall time of the sequential scan kernel over a ladder of sequence lengths.
inline std::vector<ProbeRow> scan_complexity_probe(const std::vector<int64_t>& lengths,
                                                   int64_t d_inner = 32, int64_t d_state = 8,
                                                   int repeats = 7) {
    NoGradGuard no_grad;
    std::vector<ProbeRow> rows;
    for (int64_t L : lengths) {
        Rng rng(42);
        auto fill = [&rng](Tensor<float>& t) {
            for (int64_t i = 0; i < t.numel(); ++i) t.data()[i] = float(rng.uniform(-1.0, 1.0));
        };
        Tensor<float> u({1, d_inner, L}), delta({1, d_inner, L}), A({d_inner, d_state}),
            B({1, d_state, L}), C({1, d_state, L}), D({d_inner});
        fill(u);
        fill(B);
        fill(C);
        fill(D);
        for (int64_t i = 0; i < delta.numel(); ++i) delta.data()[i] = float(rng.uniform(0.01, 0.2));
        for (int64_t i = 0; i < A.numel(); ++i) A.data()[i] = float(-rng.uniform(0.5, 2.0));
        volatile float sink = 0.0f;
        double secs = detail::best_of(repeats, [&]() {
            Tensor<float> y = selective_scan_core(u, delta, A, B, C, D);
            sink = sink + y.data()[size_t(L - 1)];
        });
        rows.push_back({L, secs});
    }
    return rows;
}

// Naive full self-attention (row-wise, O(L^2 * dim)) used as the quadratic
// contrast in the complexity benchmark.
inline std::vector<ProbeRow> quadratic_attention_probe(const std::vector<int64_t>& lengths,
                                                       int64_t dim = 8, int repeats = 3) {
    std::vector<ProbeRow> rows;
    for (int64_t L : lengths) {
        Rng rng(43);
        std::vector<float> q(static_cast<size_t>(L * dim)), k(static_cast<size_t>(L * dim)), v(static_cast<size_t>(L * dim));
        for (auto* buf : {&q, &k, &v})
            for (auto& x : *buf) x = float(rng.uniform(-1.0, 1.0));
        std::vector<float> scores(static_cast<size_t>(L)), outrow(static_cast<size_t>(dim));
        volatile float sink = 0.0f;
        double secs = detail::best_of(repeats, [&]() {
            for (int64_t i = 0; i < L; ++i) {
                float mx = -1e30f;
                for (int64_t j = 0; j < L; ++j) {
                    float s = simd::dot(&q[size_t(i * dim)], &k[size_t(j * dim)], size_t(dim));
                    scores[size_t(j)] = s;
                    mx = std::max(mx, s);
                }
                float z = 0.0f;
                for (int64_t j = 0; j < L; ++j) {
                    scores[size_t(j)] = std::exp(scores[size_t(j)] - mx);
                    z += scores[size_t(j)];
                }
                std::fill(outrow.begin(), outrow.end(), 0.0f);
                for (int64_t j = 0; j < L; ++j)
                    simd::fma_row(outrow.data(), &v[size_t(j * dim)], scores[size_t(j)] / z,
                                  size_t(dim));
                sink = sink + outrow[0];
            }
        });
        rows.push_back({L, secs});
    }
    return rows;
}

inline std::string probe_csv(const std::vector<ProbeRow>& rows) {
    std::ostringstream os;
    os << "L,seconds\n";
    for (const auto& r : rows) os << r.length << "," << r.seconds << "\n";
    return os.str();
}

}  // namespace hm
