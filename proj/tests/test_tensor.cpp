#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"
#include "hm/nn.hpp"
#include "test_util.hpp"

using namespace hm;
using hm::test::max_abs_diff;
using hm::test::random_tensor;

TEST_CASE("conv2d identity kernel") {
    Tensor<double> x = Tensor<double>::from_data({1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
    Conv2dParams<double> p;
    p.weight = Tensor<double>::from_data({1, 1, 1, 1}, {1.0});
    p.bias = Tensor<double>({1});
    Tensor<double> y = conv2d(x, p);
    CHECK(y.shape() == Shape{1, 1, 3, 3});
    CHECK(max_abs_diff(x, y) == 0.0);
}

TEST_CASE("conv2d all-ones 3x3 kernel, pad 1: hand-evaluated window") {
    Tensor<double> x({1, 1, 3, 3}, 1.0);
    Conv2dParams<double> p;
    p.weight = Tensor<double>({1, 1, 3, 3}, 1.0);
    p.padding = 1;
    Tensor<double> y = conv2d(x, p);
    CHECK(y.at(0, 0, 1, 1) == 9.0);
    CHECK(y.at(0, 0, 0, 0) == 4.0);
    CHECK(y.at(0, 0, 0, 2) == 4.0);
    CHECK(y.at(0, 0, 2, 0) == 4.0);
    CHECK(y.at(0, 0, 2, 2) == 4.0);
    CHECK(y.at(0, 0, 0, 1) == 6.0);
}

TEST_CASE("depthwise conv scales each channel") {
    Rng rng(3);
    Tensor<double> x = random_tensor<double>(rng, {1, 2, 2, 2});
    Conv2dParams<double> p;
    p.weight = Tensor<double>::from_data({2, 1, 1, 1}, {2.0, 2.0});
    p.groups = 2;
    Tensor<double> y = conv2d(x, p);
    for (int64_t i = 0; i < x.numel(); ++i) CHECK(y.data()[i] == 2.0 * x.data()[i]);
}

TEST_CASE("conv2d shape errors name the offending dimension") {
    Tensor<double> x({1, 4, 8, 8});
    Conv2dParams<double> p;
    p.weight = Tensor<double>({8, 3, 3, 3});  // expects 3 in-channels per group
    CHECK_THROWS_WITH_AS(conv2d(x, p), doctest::Contains("in_channels"), std::invalid_argument);
    Conv2dParams<double> q;
    q.weight = Tensor<double>({8, 4, 11, 11});  // kernel larger than the 8x8 input
    CHECK_THROWS_WITH_AS(conv2d(x, q), doctest::Contains("kernel"), std::invalid_argument);
}

TEST_CASE("conv2d linearity in x for fixed params") {
    Rng rng(5);
    Conv2dParams<double> p;
    p.weight = random_tensor<double>(rng, {3, 2, 3, 3});
    p.bias = Tensor<double>({3});  // keep affine term out of the superposition
    p.padding = 1;
    Tensor<double> x = random_tensor<double>(rng, {1, 2, 6, 6});
    Tensor<double> y = random_tensor<double>(rng, {1, 2, 6, 6});
    const double a = 1.7, b = -0.6;
    Tensor<double> lhs_in({1, 2, 6, 6});
    for (int64_t i = 0; i < lhs_in.numel(); ++i)
        lhs_in.data()[i] = a * x.data()[i] + b * y.data()[i];
    Tensor<double> lhs = conv2d(lhs_in, p);
    Tensor<double> cx = conv2d(x, p), cy = conv2d(y, p);
    Tensor<double> rhs(lhs.shape());
    for (int64_t i = 0; i < rhs.numel(); ++i) rhs.data()[i] = a * cx.data()[i] + b * cy.data()[i];
    CHECK(max_abs_diff(lhs, rhs) < 1e-5);
}

TEST_CASE("batch_norm2d constant channel gives beta, direct formula case") {
    BatchNorm2dParams<double> bn;
    bn.gamma = Tensor<double>::from_data({1}, {1.0});
    bn.beta = Tensor<double>::from_data({1}, {0.25});
    Tensor<double> x({2, 1, 2, 2}, 3.0);
    Tensor<double> y = batch_norm2d(x, bn, true);
    for (int64_t i = 0; i < y.numel(); ++i) CHECK(y.data()[i] == doctest::Approx(0.25));

    BatchNorm2dParams<double> bn2;
    bn2.gamma = Tensor<double>::from_data({1}, {1.0});
    bn2.beta = Tensor<double>({1});
    Tensor<double> v = Tensor<double>::from_data({1, 1, 2, 2}, {1, 2, 3, 4});
    Tensor<double> w = batch_norm2d(v, bn2, true);
    // mean 2.5, population var 1.25
    CHECK(w.data()[0] == doctest::Approx(-1.3416).epsilon(1e-3));
    CHECK(w.data()[1] == doctest::Approx(-0.4472).epsilon(1e-3));
    CHECK(w.data()[2] == doctest::Approx(0.4472).epsilon(1e-3));
    CHECK(w.data()[3] == doctest::Approx(1.3416).epsilon(1e-3));
}

TEST_CASE("batch_norm2d is near-identity on standardized input") {
    Rng rng(17);
    Tensor<double> x = random_tensor<double>(rng, {4, 2, 8, 8});
    // standardize each channel over the batch
    for (int64_t c = 0; c < 2; ++c) {
        double m = 0, v = 0;
        int64_t cnt = 0;
        for (int64_t n = 0; n < 4; ++n)
            for (int64_t i = 0; i < 64; ++i) {
                m += x.data()[(n * 2 + c) * 64 + i];
                ++cnt;
            }
        m /= double(cnt);
        for (int64_t n = 0; n < 4; ++n)
            for (int64_t i = 0; i < 64; ++i) {
                double d = x.data()[(n * 2 + c) * 64 + i] - m;
                v += d * d;
            }
        v /= double(cnt);
        for (int64_t n = 0; n < 4; ++n)
            for (int64_t i = 0; i < 64; ++i)
                x.data()[(n * 2 + c) * 64 + i] = (x.data()[(n * 2 + c) * 64 + i] - m) / std::sqrt(v);
    }
    BatchNorm2dParams<double> bn;
    bn.gamma = Tensor<double>({2}, 1.0);
    bn.beta = Tensor<double>({2});
    Tensor<double> y = batch_norm2d(x, bn, true);
    CHECK(max_abs_diff(x, y) < 1e-4);
}

TEST_CASE("silu/sigmoid values") {
    Tensor<double> x = Tensor<double>::from_data({3}, {0.0, 50.0, 1.0});
    Tensor<double> s = sigmoid(x);
    Tensor<double> l = silu(x);
    CHECK(l.data()[0] == 0.0);
    CHECK(s.data()[0] == 0.5);
    CHECK(s.data()[1] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(std::isfinite(s.data()[1]));
    CHECK(l.data()[2] == doctest::Approx(0.731058).epsilon(1e-5));
}

TEST_CASE("upsample_nearest2x forward and adjoint") {
    Tensor<double> x = Tensor<double>::from_data({1, 1, 1, 1}, {7.0});
    Tensor<double> y = upsample_nearest2x(x);
    CHECK(y.shape() == Shape{1, 1, 2, 2});
    for (int64_t i = 0; i < 4; ++i) CHECK(y.data()[i] == 7.0);

    Tensor<double> q = Tensor<double>::from_data({1, 1, 2, 2}, {1, 2, 3, 4});
    Tensor<double> u = upsample_nearest2x(q);
    CHECK(u.at(0, 0, 0, 0) == 1.0);
    CHECK(u.at(0, 0, 0, 1) == 1.0);
    CHECK(u.at(0, 0, 0, 3) == 2.0);
    CHECK(u.at(0, 0, 3, 0) == 3.0);
    CHECK(u.at(0, 0, 3, 3) == 4.0);

    // adjoint of all-ones upstream grad sums each 2x2 block
    Rng grng(1);
    Tensor<double> z = random_tensor<double>(grng, {1, 1, 2, 2});
    z.set_requires_grad(true);
    clear_tape<double>();
    Tensor<double> up = upsample_nearest2x(z);
    Tensor<double> loss = sum(up);
    backward(loss);
    for (int64_t i = 0; i < 4; ++i) CHECK(z.grad()[i] == 4.0);
}

TEST_CASE("concat_channels shapes and gradient split") {
    Rng rng(9);
    Tensor<double> a = random_tensor<double>(rng, {1, 3, 4, 4});
    Tensor<double> b = random_tensor<double>(rng, {1, 2, 4, 4});
    Tensor<double> c = concat_channels(a, b);
    CHECK(c.shape() == Shape{1, 5, 4, 4});

    Tensor<double> empty_side({1, 0, 4, 4});
    Tensor<double> same = concat_channels(a, empty_side);
    CHECK(same.shape() == Shape{1, 3, 4, 4});
    CHECK(max_abs_diff(a, same) == 0.0);

    Tensor<double> mis({1, 2, 5, 4});
    CHECK_THROWS_AS(concat_channels(a, mis), std::invalid_argument);

    // gradient splits exactly back to the operands
    a.set_requires_grad(true);
    b.set_requires_grad(true);
    clear_tape<double>();
    Tensor<double> cc = concat_channels(a, b);
    Tensor<double> w = random_tensor<double>(rng, {1, 5, 4, 4});
    Tensor<double> loss = sum(mul(cc, w));
    backward(loss);
    for (int64_t i = 0; i < a.numel(); ++i) CHECK(a.grad()[i] == w.data()[i]);
    for (int64_t i = 0; i < b.numel(); ++i) CHECK(b.grad()[i] == w.data()[a.numel() + i]);
}

TEST_CASE("backward basics: sum and quadratic") {
    Tensor<double> x = Tensor<double>::from_data({2, 3}, {1, 2, 3, 4, 5, 6}, true);
    clear_tape<double>();
    Tensor<double> loss = sum(x);
    backward(loss);
    for (int64_t i = 0; i < 6; ++i) CHECK(x.grad()[i] == 1.0);

    Tensor<double> v = Tensor<double>::from_data({3}, {1, 2, 3}, true);
    clear_tape<double>();
    Tensor<double> q = sum(mul(v, v));
    backward(q);
    CHECK(v.grad()[0] == 2.0);
    CHECK(v.grad()[1] == 4.0);
    CHECK(v.grad()[2] == 6.0);
}

TEST_CASE("backward rejects non-scalar loss") {
    Tensor<double> x = Tensor<double>::from_data({2}, {1, 2}, true);
    clear_tape<double>();
    Tensor<double> y = mul(x, x);
    CHECK_THROWS_AS(backward(y), std::invalid_argument);
    clear_tape<double>();
}

TEST_CASE("conv->silu->sum matches finite differences") {
    Rng rng(23);
    Tensor<double> x = random_tensor<double>(rng, {1, 2, 4, 4});
    Conv2dParams<double> p;
    p.weight = random_tensor<double>(rng, {3, 2, 3, 3});
    p.bias = random_tensor<double>(rng, {3});
    p.padding = 1;
    auto f = [&]() { return sum(silu(conv2d(x, p))); };
    double err = finite_diff_check<double>(f, {x, p.weight, p.bias}, 1e-3);
    CHECK(err < 1e-5);
}

TEST_CASE("finite_diff_check: exact for linear maps") {
    Rng rng(29);
    Tensor<double> x = random_tensor<double>(rng, {8});
    Tensor<double> w = random_tensor<double>(rng, {8});
    auto f = [&]() { return sum(mul(x, w)); };
    double err = finite_diff_check<double>(f, {x}, 1e-4);
    CHECK(err < 1e-10);
}

TEST_CASE("finite_diff_check: sigmoid grads within 1e-6") {
    Rng rng(31);
    Tensor<double> x = random_tensor<double>(rng, {16});
    auto f = [&]() { return sum(sigmoid(x)); };
    double err = finite_diff_check<double>(f, {x}, 1e-4);
    CHECK(err < 1e-6);
}

TEST_CASE("finite_diff_check flags a planted doubled gradient") {
    Tensor<double> x = Tensor<double>::from_data({4}, {0.3, -0.2, 0.9, 0.1}, true);
    auto bad_sum = [](const Tensor<double>& in) {
        double s = 0;
        for (int64_t i = 0; i < in.numel(); ++i) s += in.data()[i];
        Tensor<double> out = Tensor<double>::scalar(s);
        if (grad_enabled() && in.tracked()) {
            Tensor<double> ii = in, oo = out;
            ii.ensure_grad();
            oo.ensure_grad();
            Tape<double>::get().record([ii, oo]() mutable {
                for (int64_t i = 0; i < ii.numel(); ++i) ii.grad()[i] += 2.0 * oo.grad()[0];
            });
        }
        return out;
    };
    auto f = [&]() { return bad_sum(x); };
    double err = finite_diff_check<double>(f, {x}, 1e-4);
    CHECK(err == doctest::Approx(0.5).epsilon(1e-4));
}

TEST_CASE("primitive op adjoints pass finite differences on random inputs") {
    Rng rng(37);
    // weight the reduction so per-element adjoints are exercised, not just sums
    auto weighted_mean = [](const Tensor<double>& t, const Tensor<double>& w) {
        return mean(mul(t, w));
    };
    int checked = 0;
    for (int rep = 0; rep < 20; ++rep) {
        Tensor<double> a = random_tensor<double>(rng, {2, 3, 3, 2}, -1.5, 1.5);
        Tensor<double> b = random_tensor<double>(rng, {2, 3, 3, 2}, 0.5, 2.0);   // div-safe
        Tensor<double> c = random_tensor<double>(rng, {2, 3, 3, 2}, 0.2, 1.8);   // abs-safe
        Tensor<double> w = random_tensor<double>(rng, {2, 3, 3, 2}, -1.0, 1.0);
        const uint64_t s = uint64_t(rep + 1);
        CHECK(finite_diff_check<double>([&]() { return weighted_mean(add(a, b), w); }, {a, b},
                                        1e-4, 6, s) < 1e-5);
        CHECK(finite_diff_check<double>([&]() { return weighted_mean(sub(a, b), w); }, {a, b},
                                        1e-4, 6, s) < 1e-5);
        CHECK(finite_diff_check<double>([&]() { return weighted_mean(mul(a, b), w); }, {a, b},
                                        1e-4, 6, s) < 1e-5);
        CHECK(finite_diff_check<double>([&]() { return weighted_mean(div(a, b), w); }, {a, b},
                                        1e-4, 6, s) < 1e-5);
        CHECK(finite_diff_check<double>([&]() { return weighted_mean(silu(a), w); }, {a}, 1e-4, 6,
                                        s) < 1e-5);
        CHECK(finite_diff_check<double>([&]() { return weighted_mean(sigmoid(a), w); }, {a}, 1e-4,
                                        6, s) < 1e-5);
        CHECK(finite_diff_check<double>([&]() { return weighted_mean(softplus(a), w); }, {a},
                                        1e-4, 6, s) < 1e-5);
        CHECK(finite_diff_check<double>([&]() { return weighted_mean(exp(a), w); }, {a}, 1e-4, 6,
                                        s) < 1e-5);
        CHECK(finite_diff_check<double>([&]() { return weighted_mean(abs(c), w); }, {c}, 1e-4, 6,
                                        s) < 1e-5);
        CHECK(finite_diff_check<double>(
                  [&]() { return weighted_mean(add_scalar(mul_scalar(a, 1.3), -0.2), w); }, {a},
                  1e-4, 6, s) < 1e-5);
        ++checked;
    }
    CHECK(checked == 20);
}

TEST_CASE("structural op adjoints pass finite differences") {
    Rng rng(41);
    Tensor<double> x = random_tensor<double>(rng, {2, 4, 4, 4});
    Tensor<double> g = random_tensor<double>(rng, {4}, 0.5, 1.5);
    Tensor<double> b = random_tensor<double>(rng, {4});
    Tensor<double> v = random_tensor<double>(rng, {2, 3});
    Tensor<double> s = random_tensor<double>(rng, {1}, 0.2, 0.9);
    Tensor<double> w = random_tensor<double>(rng, {2, 7, 8, 8});

    auto f = [&]() {
        Tensor<double> up = upsample_nearest2x(x);                       // 2x4x8x8
        Tensor<double> bc = spatial_broadcast(v, 8, 8);                  // 2x3x8x8
        Tensor<double> cat = concat_channels(up, bc);                    // 2x7x8x8
        Tensor<double> sl = slice_channels(cat, 1, 6);                   // 2x5x8x8
        Tensor<double> ln = channel_layer_norm(slice_channels(cat, 0, 4), g, b);
        Tensor<double> r = reshape(ln, {2, 4, 8, 8});
        Tensor<double> gated = mul_scalar_tensor(r, s);
        return add(mean(mul(cat, w)), add(mean(sl), mean(gated)));
    };
    double err = finite_diff_check<double>(f, {x, g, b, v, s}, 1e-4, 16, 77);
    CHECK(err < 1e-5);
}

TEST_CASE("conv2d gradients: strides, padding, groups") {
    Rng rng(43);
    struct Case {
        int64_t cin, cout, k;
        int stride, pad, groups;
    };
    for (const Case& c : {Case{4, 6, 3, 1, 1, 2}, Case{3, 5, 3, 2, 1, 1}, Case{4, 4, 1, 1, 0, 4},
                          Case{2, 2, 5, 1, 2, 1}, Case{6, 3, 3, 2, 0, 3}}) {
        Tensor<double> x = random_tensor<double>(rng, {2, c.cin, 6, 6});
        Conv2dParams<double> p;
        p.weight = random_tensor<double>(rng, {c.cout, c.cin / c.groups, c.k, c.k});
        p.bias = random_tensor<double>(rng, {c.cout});
        p.stride = c.stride;
        p.padding = c.pad;
        p.groups = c.groups;
        auto f = [&]() { return mean(silu(conv2d(x, p))); };
        double err = finite_diff_check<double>(f, {x, p.weight, p.bias}, 1e-4, 24, 5);
        CHECK(err < 1e-5);
    }
}

TEST_CASE("batch_norm2d gradients, train and eval") {
    Rng rng(47);
    Tensor<double> x = random_tensor<double>(rng, {3, 2, 4, 4});
    BatchNorm2dParams<double> bn;
    bn.gamma = random_tensor<double>(rng, {2}, 0.5, 1.5);
    bn.beta = random_tensor<double>(rng, {2});
    auto f_train = [&]() { return mean(silu(batch_norm2d(x, bn, true))); };
    CHECK(finite_diff_check<double>(f_train, {x, bn.gamma, bn.beta}, 1e-4, 24, 5) < 1e-5);
    auto f_eval = [&]() { return mean(silu(batch_norm2d(x, bn, false))); };
    CHECK(finite_diff_check<double>(f_eval, {x, bn.gamma, bn.beta}, 1e-4, 24, 5) < 1e-5);
}

TEST_CASE("determinism: identical graph evaluations are bit-identical") {
    Rng rng(53);
    Tensor<float> x = random_tensor<float>(rng, {1, 3, 8, 8});
    Conv2dParams<float> p;
    p.weight = random_tensor<float>(rng, {4, 3, 3, 3});
    p.bias = random_tensor<float>(rng, {4});
    p.padding = 1;
    NoGradGuard ng;
    Tensor<float> y1 = silu(conv2d(x, p));
    Tensor<float> y2 = silu(conv2d(x, p));
    CHECK(y1.vec() == y2.vec());
}

TEST_CASE("tape replays each op exactly once, in reverse") {
    Tensor<double> x = Tensor<double>::from_data({2}, {1.0, 2.0}, true);
    clear_tape<double>();
    std::vector<int> order;
    auto probe = [&order](int id, Tensor<double> in) {
        Tensor<double> out = Tensor<double>::from_data(in.shape(), in.vec());
        Tensor<double> ii = in, oo = out;
        ii.ensure_grad();
        oo.ensure_grad();
        Tape<double>::get().record([&order, id, ii, oo]() mutable {
            order.push_back(id);
            simd::accumulate(ii.grad(), oo.grad(), size_t(oo.numel()));
        });
        return out;
    };
    Tensor<double> a = probe(1, x);
    Tensor<double> b = probe(2, a);
    Tensor<double> loss = sum(b);
    backward(loss);
    CHECK(order == std::vector<int>{2, 1});
    CHECK(x.grad()[0] == 1.0);
}
