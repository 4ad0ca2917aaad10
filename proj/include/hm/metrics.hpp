#pragma once

#include "hm/nn.hpp"

namespace hm {

template <typename T>
struct LossWeights {
    T alpha = T(0.3);   // L1
    T beta_w = T(0.8);  // SSIM loss
    T gamma = T(0.1);   // contrastive

    void validate() const {
        for (T v : {alpha, beta_w, gamma})
            if (!(v >= T(0)) || !std::isfinite(v))
                throw std::invalid_argument("LossWeights: weights must be finite and >= 0");
    }
};

template <typename T>
Tensor<T> l1_loss(const Tensor<T>& pred, const Tensor<T>& target) {
    detail::check_same_shape(pred, target, "l1_loss");
    return mean(abs(sub(pred, target)));
}

// ---------------------------------------------------------------------------
// SSIM with an 11x11 sigma-1.5 Gaussian window over valid positions,
// averaged over channels. Built from differentiable primitives so it can sit
// inside the training loss.

namespace detail {

template <typename T>
Tensor<T> gaussian_window_weight(int64_t channels, int64_t size, T sigma) {
    std::vector<T> k1(static_cast<size_t>(size));
    const T c = T(size - 1) / T(2);
    T s = 0;
    for (int64_t i = 0; i < size; ++i) {
        T d = T(i) - c;
        k1[size_t(i)] = std::exp(-(d * d) / (T(2) * sigma * sigma));
        s += k1[size_t(i)];
    }
    for (auto& v : k1) v /= s;
    Tensor<T> w({channels, 1, size, size});
    for (int64_t ch = 0; ch < channels; ++ch)
        for (int64_t i = 0; i < size; ++i)
            for (int64_t j = 0; j < size; ++j)
                w.data()[(ch * size + i) * size + j] = k1[size_t(i)] * k1[size_t(j)];
    return w;
}

}  // namespace detail

template <typename T>
Tensor<T> ssim(const Tensor<T>& x_in, const Tensor<T>& y_in, T dynamic_range = T(1)) {
    detail::check_same_shape(x_in, y_in, "ssim");
    Tensor<T> x = x_in, y = y_in;
    if (x.ndim() == 2) {
        x = reshape(x, {1, 1, x.dim(0), x.dim(1)});
        y = reshape(y, {1, 1, y_in.dim(0), y_in.dim(1)});
    } else if (x.ndim() == 3) {
        x = reshape(x, {1, x.dim(0), x.dim(1), x.dim(2)});
        y = reshape(y, {1, y_in.dim(0), y_in.dim(1), y_in.dim(2)});
    }
    if (x.ndim() != 4) throw std::invalid_argument("ssim: expected 2-d, 3-d or 4-d tensors");
    const int64_t C = x.dim(1), H = x.dim(2), W = x.dim(3);
    constexpr int64_t kWin = 11;
    if (H < kWin || W < kWin)
        throw std::invalid_argument("ssim: image " + std::to_string(H) + "x" + std::to_string(W) +
                                    " smaller than the 11x11 window");
    const T c1 = (T(0.01) * dynamic_range) * (T(0.01) * dynamic_range);
    const T c2 = (T(0.03) * dynamic_range) * (T(0.03) * dynamic_range);

    Conv2dParams<T> win;
    win.weight = detail::gaussian_window_weight<T>(C, kWin, T(1.5));
    win.groups = int(C);

    Tensor<T> mu_x = conv2d(x, win);
    Tensor<T> mu_y = conv2d(y, win);
    Tensor<T> mu_xx = mul(mu_x, mu_x);
    Tensor<T> mu_yy = mul(mu_y, mu_y);
    Tensor<T> mu_xy = mul(mu_x, mu_y);
    Tensor<T> sigma_xx = sub(conv2d(mul(x, x), win), mu_xx);
    Tensor<T> sigma_yy = sub(conv2d(mul(y, y), win), mu_yy);
    Tensor<T> sigma_xy = sub(conv2d(mul(x, y), win), mu_xy);

    Tensor<T> num = mul(add_scalar(mul_scalar(mu_xy, T(2)), c1),
                        add_scalar(mul_scalar(sigma_xy, T(2)), c2));
    Tensor<T> den = mul(add_scalar(add(mu_xx, mu_yy), c1),
                        add_scalar(add(sigma_xx, sigma_yy), c2));
    return mean(div(num, den));
}

template <typename T>
Tensor<T> ssim_loss(const Tensor<T>& pred, const Tensor<T>& target, T dynamic_range = T(1)) {
    return add_scalar(neg(ssim(pred, target, dynamic_range)), T(1));
}

// ---------------------------------------------------------------------------
// Frozen random feature stack standing in for a pre-trained perceptual
// extractor: three conv+SiLU stages, stride 2 each, weights fixed at
// construction from the seed.

template <typename T>
struct FeatureExtractor {
    std::array<Conv2dParams<T>, 3> stages;

    explicit FeatureExtractor(uint64_t seed = 1234) {
        Rng rng(seed);
        const int64_t widths[4] = {3, 8, 16, 32};
        for (size_t s = 0; s < 3; ++s) {
            const int64_t cin = widths[s], cout = widths[s + 1];
            Conv2dParams<T>& c = stages[s];
            c.weight = Tensor<T>({cout, cin, 3, 3});
            const T scale = std::sqrt(T(2) / T(cin * 9));
            for (int64_t i = 0; i < c.weight.numel(); ++i)
                c.weight.data()[i] = T(rng.normal()) * scale;
            c.bias = Tensor<T>({cout});
            c.stride = 2;
            c.padding = 1;
        }
    }

    std::array<Tensor<T>, 3> features(const Tensor<T>& x) const {
        std::array<Tensor<T>, 3> out;
        Tensor<T> y = x;
        for (size_t s = 0; s < 3; ++s) {
            y = silu(conv2d(y, stages[s]));
            out[s] = y;
        }
        return out;
    }
};

// Pull-to-positive / push-from-negative ratio over the frozen feature stack.
// Gradients flow through the anchor only; positive, negative and the
// extractor weights are detached.
template <typename T>
Tensor<T> contrastive_loss(const Tensor<T>& anchor, const Tensor<T>& positive,
                           const Tensor<T>& negative, const FeatureExtractor<T>& fx) {
    detail::check_same_shape(anchor, positive, "contrastive_loss(anchor/positive)");
    detail::check_same_shape(anchor, negative, "contrastive_loss(anchor/negative)");
    Tensor<T> a4 = anchor.ndim() == 3
                       ? reshape(anchor, {1, anchor.dim(0), anchor.dim(1), anchor.dim(2)})
                       : anchor;
    Tensor<T> p4 = positive.ndim() == 3
                       ? reshape(positive, {1, positive.dim(0), positive.dim(1), positive.dim(2)})
                       : positive;
    Tensor<T> n4 = negative.ndim() == 3
                       ? reshape(negative, {1, negative.dim(0), negative.dim(1), negative.dim(2)})
                       : negative;

    std::array<Tensor<T>, 3> fp, fn;
    {
        NoGradGuard ng;
        fp = fx.features(p4);
        fn = fx.features(n4);
    }
    std::array<Tensor<T>, 3> fa = fx.features(a4);

    const T stage_w = T(1) / T(3);
    const T eps = T(1e-7);
    Tensor<T> total;
    for (size_t s = 0; s < 3; ++s) {
        Tensor<T> num = l1_loss(fa[s], fp[s]);
        Tensor<T> den = add_scalar(l1_loss(fa[s], fn[s]), eps);
        Tensor<T> term = mul_scalar(div(num, den), stage_w);
        total = s == 0 ? term : add(total, term);
    }
    return total;
}

// ---------------------------------------------------------------------------

template <typename T>
struct CompositeLossTerms {
    Tensor<T> total;
    T l1 = 0;
    T ssim_term = 0;  // 1 - ssim
    T contrastive = 0;
};

template <typename T>
CompositeLossTerms<T> composite_loss_terms(const Tensor<T>& pred, const Tensor<T>& target,
                                           const Tensor<T>& degraded, const LossWeights<T>& w,
                                           const FeatureExtractor<T>& fx) {
    w.validate();
    Tensor<T> l1 = l1_loss(pred, target);
    Tensor<T> sl = ssim_loss(pred, target);
    Tensor<T> cl = contrastive_loss(pred, target, degraded, fx);
    Tensor<T> total =
        add(add(mul_scalar(l1, w.alpha), mul_scalar(sl, w.beta_w)), mul_scalar(cl, w.gamma));
    CompositeLossTerms<T> out;
    out.total = total;
    out.l1 = l1.item();
    out.ssim_term = sl.item();
    out.contrastive = cl.item();
    return out;
}

template <typename T>
Tensor<T> composite_loss(const Tensor<T>& pred, const Tensor<T>& target, const Tensor<T>& degraded,
                         const LossWeights<T>& w, const FeatureExtractor<T>& fx) {
    return composite_loss_terms(pred, target, degraded, w, fx).total;
}

// ---------------------------------------------------------------------------
// full-reference metrics

template <typename T>
double psnr(const Tensor<T>& x, const Tensor<T>& y, double peak = 1.0) {
    detail::check_same_shape(x, y, "psnr");
    double mse = 0;
    for (int64_t i = 0; i < x.numel(); ++i) {
        const double d = double(x.data()[i]) - double(y.data()[i]);
        mse += d * d;
    }
    mse /= double(x.numel());
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(peak * peak / mse);
}

struct MetricsRow {
    std::string id;
    double psnr_db = 0;
    double ssim = 0;
    double fsim = 0;
};

struct MetricsReport {
    std::vector<MetricsRow> rows;

    MetricsRow mean() const {
        MetricsRow m;
        m.id = "aggregate";
        if (rows.empty()) return m;
        for (const auto& r : rows) {
            m.psnr_db += r.psnr_db;
            m.ssim += r.ssim;
            m.fsim += r.fsim;
        }
        m.psnr_db /= double(rows.size());
        m.ssim /= double(rows.size());
        m.fsim /= double(rows.size());
        return m;
    }

    MetricsRow stddev() const {
        MetricsRow sd;
        sd.id = "stddev";
        if (rows.size() < 2) return sd;
        MetricsRow m = mean();
        for (const auto& r : rows) {
            sd.psnr_db += (r.psnr_db - m.psnr_db) * (r.psnr_db - m.psnr_db);
            sd.ssim += (r.ssim - m.ssim) * (r.ssim - m.ssim);
            sd.fsim += (r.fsim - m.fsim) * (r.fsim - m.fsim);
        }
        sd.psnr_db = std::sqrt(sd.psnr_db / double(rows.size() - 1));
        sd.ssim = std::sqrt(sd.ssim / double(rows.size() - 1));
        sd.fsim = std::sqrt(sd.fsim / double(rows.size() - 1));
        return sd;
    }
};

inline std::string metrics_value(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    std::ostringstream os;
    os.precision(6);
    os << std::fixed << v;
    return os.str();
}

inline std::string metrics_csv(const MetricsReport& report) {
    std::ostringstream os;
    os << "image_id,psnr_db,ssim,fsim\n";
    auto row = [&os](const MetricsRow& r) {
        os << r.id << "," << metrics_value(r.psnr_db) << "," << metrics_value(r.ssim) << ","
           << metrics_value(r.fsim) << "\n";
    };
    for (const auto& r : report.rows) row(r);
    row(report.mean());
    return os.str();
}

}  // namespace hm
