#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"
#include "hm/fsim.hpp"
#include "hm/metrics.hpp"
#include "oracles.hpp"

using namespace hm;
using hm::test::random_tensor;
using hm::test::brute_force_ssim;

namespace {

Tensor<double> structured_image(int64_t S) {
    Tensor<double> img({S, S});
    for (int64_t h = 0; h < S; ++h)
        for (int64_t w = 0; w < S; ++w) {
            double v = 0.5 + 0.3 * std::sin(2.0 * 3.14159 * double(h) / 9.0) *
                                 std::cos(2.0 * 3.14159 * double(w) / 7.0);
            if (h > S / 4 && h < S / 2 && w > S / 3 && w < 2 * S / 3) v = 0.9;
            if ((h + w) % 16 < 3) v *= 0.4;
            img.data()[h * S + w] = v;
        }
    return img;
}

}  // namespace

TEST_CASE("l1_loss basics") {
    Rng rng(401);
    Tensor<double> x = random_tensor<double>(rng, {3, 8, 8});
    CHECK(l1_loss(x, x).item() == 0.0);
    Tensor<double> y = add_scalar(x, 0.5);
    CHECK(l1_loss(y, x).item() == doctest::Approx(0.5).epsilon(1e-12));
    Tensor<double> a = Tensor<double>::from_data({2}, {0.0, 1.0});
    Tensor<double> b = Tensor<double>::from_data({2}, {1.0, 0.0});
    CHECK(l1_loss(a, b).item() == doctest::Approx(1.0).epsilon(1e-12));
    Tensor<double> wrong({3});
    CHECK_THROWS_AS(l1_loss(a, wrong), std::invalid_argument);
}

TEST_CASE("ssim: identity, brute-force oracle, symmetry, bounds") {
    Rng rng(409);
    Tensor<double> x = random_tensor<double>(rng, {3, 32, 32}, 0.0, 1.0);
    CHECK(ssim(x, x).item() == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(ssim_loss(x, x).item() == doctest::Approx(0.0).epsilon(1e-9));

    for (int rep = 0; rep < 20; ++rep) {
        Tensor<double> a = random_tensor<double>(rng, {1, 32, 32}, 0.0, 1.0);
        Tensor<double> b = random_tensor<double>(rng, {1, 32, 32}, 0.0, 1.0);
        const double fast = ssim(a, b).item();
        const double slow = brute_force_ssim(a, b);
        CHECK(fast == doctest::Approx(slow).epsilon(1e-6));
        CHECK(ssim(a, b).item() == doctest::Approx(ssim(b, a).item()).epsilon(1e-12));
        CHECK(std::fabs(fast) <= 1.0 + 1e-9);
    }
}

TEST_CASE("ssim of a checkerboard vs its inverse is negative") {
    const int64_t S = 32;
    Tensor<double> x({1, S, S});
    for (int64_t h = 0; h < S; ++h)
        for (int64_t w = 0; w < S; ++w) x.data()[h * S + w] = double((h + w) % 2);
    Tensor<double> y({1, S, S});
    for (int64_t i = 0; i < y.numel(); ++i) y.data()[i] = 1.0 - x.data()[i];
    const double s = ssim(x, y).item();
    CHECK(s < 0.0);
    CHECK(s == doctest::Approx(brute_force_ssim(x, y)).epsilon(1e-6));
}

TEST_CASE("ssim invariant to a shared rescale with matching dynamic range") {
    // the luminance term uses raw means, so only offset-free remaps that
    // rescale both images together with the range parameter leave SSIM fixed
    Rng rng(419);
    Tensor<double> x = random_tensor<double>(rng, {1, 32, 32}, 0.0, 1.0);
    Tensor<double> y = random_tensor<double>(rng, {1, 32, 32}, 0.0, 1.0);
    for (double a : {2.0, 0.5, 255.0}) {
        Tensor<double> x2 = mul_scalar(x, a);
        Tensor<double> y2 = mul_scalar(y, a);
        CHECK(ssim(x, y, 1.0).item() == doctest::Approx(ssim(x2, y2, a).item()).epsilon(1e-9));
    }
}

TEST_CASE("ssim rejects images smaller than the window") {
    Tensor<double> tiny({1, 8, 8}, 0.5);
    CHECK_THROWS_AS(ssim(tiny, tiny), std::invalid_argument);
}

TEST_CASE("psnr closed forms and monotonicity") {
    Rng rng(421);
    Tensor<double> x = random_tensor<double>(rng, {3, 8, 8}, 0.0, 1.0);
    CHECK(std::isinf(psnr(x, x)));

    Tensor<double> zero({3, 8, 8}, 0.0);
    Tensor<double> one({3, 8, 8}, 1.0);
    CHECK(psnr(zero, one) == doctest::Approx(0.0).epsilon(1e-12));

    Tensor<double> noise({3, 8, 8}, std::sqrt(1e-3));
    CHECK(psnr(zero, noise) == doctest::Approx(30.0).epsilon(1e-9));

    double prev = 1e300;
    for (double amp : {0.01, 0.02, 0.05, 0.1, 0.3}) {
        Tensor<double> y = add_scalar(x, amp);
        const double p = psnr(x, y);
        CHECK(p < prev);
        prev = p;
    }
}

TEST_CASE("contrastive loss limits and hand-composed value") {
    FeatureExtractor<double> fx(77);
    Rng rng(431);
    Tensor<double> pos = random_tensor<double>(rng, {3, 8, 8}, 0.0, 1.0);
    Tensor<double> neg = random_tensor<double>(rng, {3, 8, 8}, 0.0, 1.0);
    NoGradGuard ng;
    CHECK(contrastive_loss(pos, pos, neg, fx).item() == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(contrastive_loss(neg, pos, neg, fx).item() > 1e3);

    Tensor<double> anchor = random_tensor<double>(rng, {3, 8, 8}, 0.0, 1.0);
    const double got = contrastive_loss(anchor, pos, neg, fx).item();
    auto a4 = reshape(anchor, {1, 3, 8, 8});
    auto p4 = reshape(pos, {1, 3, 8, 8});
    auto n4 = reshape(neg, {1, 3, 8, 8});
    auto fa = fx.features(a4);
    auto fp = fx.features(p4);
    auto fn = fx.features(n4);
    double expect = 0;
    for (size_t s = 0; s < 3; ++s) {
        double num = 0, den = 0;
        for (int64_t i = 0; i < fa[s].numel(); ++i) {
            num += std::fabs(fa[s].data()[i] - fp[s].data()[i]);
            den += std::fabs(fa[s].data()[i] - fn[s].data()[i]);
        }
        num /= double(fa[s].numel());
        den /= double(fa[s].numel());
        expect += (num / (den + 1e-7)) / 3.0;
    }
    CHECK(got == doctest::Approx(expect).epsilon(1e-9));
}

TEST_CASE("feature extractor is frozen and deterministic per seed") {
    FeatureExtractor<double> a(123), b(123), c(124);
    CHECK(a.stages[0].weight.vec() == b.stages[0].weight.vec());
    CHECK(a.stages[0].weight.vec() != c.stages[0].weight.vec());
    CHECK_FALSE(a.stages[0].weight.requires_grad());
}

TEST_CASE("composite loss: projections, recomposition, positivity") {
    FeatureExtractor<double> fx(88);
    Rng rng(433);
    Tensor<double> target = random_tensor<double>(rng, {3, 16, 16}, 0.0, 1.0);
    Tensor<double> degraded = random_tensor<double>(rng, {3, 16, 16}, 0.0, 1.0);
    NoGradGuard ng;

    LossWeights<double> w;
    CHECK(composite_loss(target, target, degraded, w, fx).item() ==
          doctest::Approx(0.0).epsilon(1e-12));

    Tensor<double> pred = random_tensor<double>(rng, {3, 16, 16}, 0.0, 1.0);
    LossWeights<double> l1_only{1.0, 0.0, 0.0};
    CHECK(composite_loss(pred, target, degraded, l1_only, fx).item() ==
          doctest::Approx(l1_loss(pred, target).item()).epsilon(1e-12));

    const double total = composite_loss(pred, target, degraded, w, fx).item();
    const double expect = 0.3 * l1_loss(pred, target).item() +
                          0.8 * ssim_loss(pred, target).item() +
                          0.1 * contrastive_loss(pred, target, degraded, fx).item();
    CHECK(total == doctest::Approx(expect).epsilon(1e-9));

    for (int rep = 0; rep < 5; ++rep) {
        Tensor<double> a = random_tensor<double>(rng, {3, 16, 16}, 0.0, 1.0);
        CHECK(composite_loss(a, target, degraded, w, fx).item() >= 0.0);
    }

    LossWeights<double> bad{-0.1, 0.8, 0.1};
    CHECK_THROWS_AS(composite_loss(pred, target, degraded, bad, fx), std::invalid_argument);
}

TEST_CASE("composite loss gradient passes finite differences away from L1 ties") {
    FeatureExtractor<double> fx(99);
    Rng rng(439);
    Tensor<double> target = random_tensor<double>(rng, {3, 16, 16}, 0.0, 0.45);
    Tensor<double> degraded = random_tensor<double>(rng, {3, 16, 16}, 0.0, 1.0);
    // keep pred strictly above target so |pred - target| stays off its kink
    Tensor<double> pred = random_tensor<double>(rng, {3, 16, 16}, 0.5, 1.0);
    LossWeights<double> w;
    auto f = [&]() { return composite_loss(pred, target, degraded, w, fx); };
    CHECK(finite_diff_check<double>(f, {pred}, 1e-4, 32, 41) < 1e-4);
}

TEST_CASE("fsim: identity, symmetry, range, degradation ordering") {
    Tensor<double> x3({3, 48, 48});
    Tensor<double> base = structured_image(48);
    for (int64_t c = 0; c < 3; ++c)
        for (int64_t i = 0; i < 48 * 48; ++i)
            x3.data()[c * 48 * 48 + i] = std::clamp(base.data()[i] * (0.8 + 0.1 * double(c)), 0.0, 1.0);

    CHECK(fsim(x3, x3) == doctest::Approx(1.0).epsilon(1e-6));

    Rng rng(443);
    Tensor<double> noisy(x3.shape());
    for (int64_t i = 0; i < x3.numel(); ++i)
        noisy.data()[i] = std::clamp(x3.data()[i] + rng.uniform(-0.35, 0.35), 0.0, 1.0);
    Tensor<double> blurred(x3.shape());
    for (int64_t c = 0; c < 3; ++c)
        for (int64_t h = 0; h < 48; ++h)
            for (int64_t w = 0; w < 48; ++w) {
                double acc = 0;
                int cnt = 0;
                for (int64_t dh = -1; dh <= 1; ++dh)
                    for (int64_t dw = -1; dw <= 1; ++dw) {
                        const int64_t hh = h + dh, ww = w + dw;
                        if (hh < 0 || hh >= 48 || ww < 0 || ww >= 48) continue;
                        acc += x3.data()[(c * 48 + hh) * 48 + ww];
                        ++cnt;
                    }
                blurred.data()[(c * 48 + h) * 48 + w] = acc / double(cnt);
            }

    const double s_noise = fsim(x3, noisy);
    const double s_blur = fsim(x3, blurred);
    CHECK(s_noise == doctest::Approx(fsim(noisy, x3)).epsilon(1e-6));
    CHECK(s_blur == doctest::Approx(fsim(blurred, x3)).epsilon(1e-6));
    CHECK(s_noise >= 0.0);
    CHECK(s_noise <= 1.0);
    CHECK(s_blur <= 1.0);
    CHECK(s_noise < s_blur);

    Tensor<double> tiny({3, 16, 16}, 0.5);
    CHECK_THROWS_AS(fsim(tiny, tiny), std::invalid_argument);
}

TEST_CASE("metrics CSV: header, rows, aggregate, infinity sentinel") {
    MetricsReport rep;
    rep.rows.push_back({"pair_0", std::numeric_limits<double>::infinity(), 1.0, 1.0});
    rep.rows.push_back({"pair_1", 30.0, 0.9, 0.95});
    std::string csv = metrics_csv(rep);
    CHECK(csv.rfind("image_id,psnr_db,ssim,fsim\n", 0) == 0);
    CHECK(csv.find("pair_0,inf,1.000000,1.000000") != std::string::npos);
    CHECK(csv.find("aggregate,inf,") != std::string::npos);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);  // header + 2 rows + aggregate
}
