#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"
#include "hm/network.hpp"
#include "oracles.hpp"

using namespace hm;
using hm::test::max_abs_diff;
using hm::test::random_tensor;
using namespace hm::test;



TEST_CASE("scan gather/scatter orders for a 2x3 grid") {
    Tensor<double> x = Tensor<double>::from_data({1, 1, 2, 3}, {0, 1, 2, 3, 4, 5});
    auto seq = [&](ScanDir d) {
        Tensor<double> s = scan_gather(x, d);
        return std::vector<double>(s.data(), s.data() + 6);
    };
    CHECK(seq(ScanDir::row_fwd) == std::vector<double>{0, 1, 2, 3, 4, 5});
    CHECK(seq(ScanDir::row_rev) == std::vector<double>{5, 4, 3, 2, 1, 0});
    CHECK(seq(ScanDir::col_fwd) == std::vector<double>{0, 3, 1, 4, 2, 5});
    CHECK(seq(ScanDir::col_rev) == std::vector<double>{5, 2, 4, 1, 3, 0});
    for (int d = 0; d < 4; ++d) {
        Tensor<double> back = scan_scatter(scan_gather(x, ScanDir(d)), ScanDir(d), 2, 3);
        CHECK(max_abs_diff(x, back) == 0.0);
    }
}

TEST_CASE("selective scan degenerates to prefix sums") {
    const int64_t L = 6;
    Tensor<double> u = Tensor<double>::from_data({1, 1, L}, {1, 2, 3, 4, 5, 6});
    Tensor<double> delta({1, 1, L}, 1.0);
    Tensor<double> A({1, 1}, 0.0);
    Tensor<double> B({1, 1, L}, 1.0);
    Tensor<double> C({1, 1, L}, 1.0);
    Tensor<double> D({1});
    Tensor<double> y = selective_scan_core(u, delta, A, B, C, D);
    double expect = 0;
    for (int64_t t = 0; t < L; ++t) {
        expect += u.data()[t];
        CHECK(y.data()[t] == doctest::Approx(expect).epsilon(1e-12));
    }
}

TEST_CASE("selective scan L=1 closed form") {
    Rng rng(211);
    auto in = random_core_inputs(rng, 1, 3, 2);
    Tensor<double> y = selective_scan_core(in.u, in.delta, in.A, in.B, in.C, in.D);
    for (int64_t i = 0; i < 3; ++i) {
        double acc = 0;
        for (int64_t j = 0; j < 2; ++j)
            acc += in.C.data()[j] * (in.delta.data()[i] * in.B.data()[j] * in.u.data()[i]);
        acc += in.D.data()[i] * in.u.data()[i];
        CHECK(y.data()[i] == doctest::Approx(acc).epsilon(1e-12));
    }
}

TEST_CASE("selective scan matches the naive recurrence on 100 random instances") {
    Rng rng(223);
    for (int rep = 0; rep < 100; ++rep) {
        const int64_t L = rng.uniform_int(1, 64);
        const int64_t d = rng.uniform_int(1, 6);
        const int64_t S = rng.uniform_int(1, 8);
        auto in = random_core_inputs(rng, L, d, S);
        Tensor<double> y = selective_scan_core(in.u, in.delta, in.A, in.B, in.C, in.D);
        auto ref = naive_scan(in.u_r, in.delta_r, in.A_r, in.B_r, in.C_r, in.D_r);
        double err = 0;
        for (int64_t t = 0; t < L; ++t)
            for (int64_t i = 0; i < d; ++i)
                err = std::max(err, std::fabs(y.data()[i * L + t] - ref[size_t(t)][size_t(i)]));
        CHECK(err < 1e-6);
    }
}

TEST_CASE("selective scan rejects empty and non-finite input") {
    Tensor<double> u({1, 2, 0}), delta({1, 2, 0}), A({2, 2}, -1.0), B({1, 2, 0}), C({1, 2, 0}),
        D({2});
    CHECK_THROWS_AS(selective_scan_core(u, delta, A, B, C, D), std::invalid_argument);

    Rng rng(227);
    auto in = random_core_inputs(rng, 4, 2, 2);
    in.u.data()[3] = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(selective_scan_core(in.u, in.delta, in.A, in.B, in.C, in.D), NumericError);
}

TEST_CASE("frozen-parameter scan is linear in u") {
    Rng rng(229);
    const int64_t L = 12, d = 3, S = 4;
    Tensor<double> delta = random_tensor<double>(rng, {1, d, L}, 0.05, 0.4);
    Tensor<double> A = random_tensor<double>(rng, {d, S}, -2.0, -0.2);
    Tensor<double> B = random_tensor<double>(rng, {1, S, L});
    Tensor<double> C = random_tensor<double>(rng, {1, S, L});
    Tensor<double> D = random_tensor<double>(rng, {d});
    Tensor<double> u = random_tensor<double>(rng, {1, d, L});
    Tensor<double> v = random_tensor<double>(rng, {1, d, L});
    const double a = 1.3, b = -0.7;
    Tensor<double> mix({1, d, L});
    for (int64_t i = 0; i < mix.numel(); ++i) mix.data()[i] = a * u.data()[i] + b * v.data()[i];
    Tensor<double> yu = selective_scan_core(u, delta, A, B, C, D);
    Tensor<double> yv = selective_scan_core(v, delta, A, B, C, D);
    Tensor<double> ym = selective_scan_core(mix, delta, A, B, C, D);
    double err = 0;
    for (int64_t i = 0; i < ym.numel(); ++i)
        err = std::max(err, std::fabs(ym.data()[i] - (a * yu.data()[i] + b * yv.data()[i])));
    CHECK(err < 1e-6);
}

TEST_CASE("stability: bounded input over 10k steps stays finite") {
    Rng rng(233);
    const int64_t L = 10000, d = 2, S = 3;
    Tensor<double> u = random_tensor<double>(rng, {1, d, L}, -1.0, 1.0);
    Tensor<double> delta = random_tensor<double>(rng, {1, d, L}, 0.01, 1.0);
    Tensor<double> A = random_tensor<double>(rng, {d, S}, -3.0, -0.05);
    Tensor<double> B = random_tensor<double>(rng, {1, S, L}, -1.0, 1.0);
    Tensor<double> C = random_tensor<double>(rng, {1, S, L}, -1.0, 1.0);
    Tensor<double> D = random_tensor<double>(rng, {d});
    NoGradGuard ng;
    Tensor<double> y = selective_scan_core(u, delta, A, B, C, D);
    for (int64_t i = 0; i < y.numel(); ++i) CHECK(std::isfinite(y.data()[i]));
}

TEST_CASE("selective scan gradients match finite differences") {
    Rng rng(239);
    auto in = random_core_inputs(rng, 6, 2, 3);
    auto f = [&]() {
        return mean(silu(selective_scan_core(in.u, in.delta, in.A, in.B, in.C, in.D)));
    };
    double err = finite_diff_check<double>(f, {in.u, in.delta, in.A, in.B, in.C, in.D}, 1e-4, 12, 7);
    CHECK(err < 1e-5);
}

TEST_CASE("selective_scan_1d gradient through the projections") {
    Rng rng(241);
    Rng wrng(91);
    auto sp = detail::make_scan_params<double>(wrng, 3, 2);
    Tensor<double> u = random_tensor<double>(rng, {1, 3, 5});
    auto f = [&]() { return mean(selective_scan_1d(u, sp)); };
    double err = finite_diff_check<double>(
        f, {u, sp.a_log, sp.skip, sp.dt_proj.weight, sp.dt_proj.bias, sp.b_proj.weight,
            sp.c_proj.weight},
        1e-4, 10, 9);
    CHECK(err < 1e-5);
}

TEST_CASE("ss2d_layer preserves shape for assorted grids") {
    Rng wrng(97);
    auto p = detail::make_ss2d<double>(wrng, 3, 4, 2, false);
    Rng rng(251);
    for (auto [h, w] : std::vector<std::pair<int64_t, int64_t>>{{1, 1}, {1, 5}, {4, 1}, {3, 3},
                                                                {4, 6}}) {
        Tensor<double> x = random_tensor<double>(rng, {2, 3, h, w});
        NoGradGuard ng;
        Tensor<double> y = ss2d_layer(x, p);
        CHECK(y.shape() == x.shape());
    }
    Tensor<double> wrong({1, 4, 3, 3});
    CHECK_THROWS_AS(ss2d_layer(wrong, p), std::invalid_argument);
}

TEST_CASE("zero-initialized output projection makes ss2d_layer the identity") {
    Rng wrng(101);
    auto p = detail::make_ss2d<double>(wrng, 3, 4, 2, false);
    Rng rng(257);
    Tensor<double> x = random_tensor<double>(rng, {1, 3, 4, 4});
    NoGradGuard ng;
    Tensor<double> y = ss2d_layer(x, p);
    CHECK(max_abs_diff(x, y) == 0.0);
}

TEST_CASE("ss2d_layer matches the materialized four-direction reference") {
    Rng rng(263);
    for (int rep = 0; rep < 5; ++rep) {
        Rng wrng(uint64_t(300 + rep));
        auto p = detail::make_ss2d<double>(wrng, 4, 4, 2, false);
        // non-trivial output projection so the scans actually reach the output
        for (int64_t i = 0; i < p.out_proj.weight.numel(); ++i)
            p.out_proj.weight.data()[i] = rng.uniform(-0.3, 0.3);
        Tensor<double> x = random_tensor<double>(rng, {1, 4, 4, 4});
        NoGradGuard ng;
        Tensor<double> y = ss2d_layer(x, p);
        Plane ref = ss2d_reference(to_plane(x), p);
        double err = 0;
        for (int64_t i = 0; i < y.numel(); ++i)
            err = std::max(err, std::fabs(y.data()[i] - ref.v[size_t(i)]));
        CHECK(err < 1e-5);
    }
}

TEST_CASE("1x1 grid with tied directions: four identical scans, merged = 4x one") {
    Rng wrng(111);
    auto p = detail::make_ss2d<double>(wrng, 3, 4, 2, true);
    p.tie_directions = true;
    Rng rng(269);
    for (int64_t i = 0; i < p.out_proj.weight.numel(); ++i)
        p.out_proj.weight.data()[i] = rng.uniform(-0.5, 0.5);
    Tensor<double> x = random_tensor<double>(rng, {1, 3, 1, 1});
    NoGradGuard ng;
    std::array<std::vector<std::vector<double>>, 4> scans;
    Plane ref = ss2d_reference(to_plane(x), p, &scans);
    for (int dir = 1; dir < 4; ++dir)
        for (size_t i = 0; i < scans[0][0].size(); ++i)
            CHECK(scans[size_t(dir)][0][i] == doctest::Approx(scans[0][0][i]).epsilon(1e-12));
    Tensor<double> y = ss2d_layer(x, p);
    double err = 0;
    for (int64_t i = 0; i < y.numel(); ++i)
        err = std::max(err, std::fabs(y.data()[i] - ref.v[size_t(i)]));
    CHECK(err < 1e-10);
}

TEST_CASE("full ss2d_layer gradient check") {
    Rng wrng(121);
    auto p = detail::make_ss2d<double>(wrng, 2, 3, 2, false);
    Rng rng(271);
    for (int64_t i = 0; i < p.out_proj.weight.numel(); ++i)
        p.out_proj.weight.data()[i] = rng.uniform(-0.3, 0.3);
    Tensor<double> x = random_tensor<double>(rng, {1, 2, 3, 3});
    Tensor<double> w = random_tensor<double>(rng, {1, 2, 3, 3});
    auto f = [&]() { return mean(mul(ss2d_layer(x, p), w)); };
    std::vector<Tensor<double>> params = {x,
                                          p.norm_gamma,
                                          p.norm_beta,
                                          p.in_proj.weight,
                                          p.in_proj.bias,
                                          p.dw_conv.weight,
                                          p.dw_conv.bias,
                                          p.out_proj.weight,
                                          p.out_proj.bias};
    for (int dir = 0; dir < 4; ++dir) {
        params.push_back(p.scan[size_t(dir)].a_log);
        params.push_back(p.scan[size_t(dir)].skip);
        params.push_back(p.scan[size_t(dir)].dt_proj.weight);
        params.push_back(p.scan[size_t(dir)].dt_proj.bias);
        params.push_back(p.scan[size_t(dir)].b_proj.weight);
        params.push_back(p.scan[size_t(dir)].c_proj.weight);
    }
    double err = finite_diff_check<double>(f, params, 1e-4, 6, 13);
    CHECK(err < 1e-4);
}

TEST_CASE("complexity probe emits one row per length") {
    auto rows = scan_complexity_probe({64, 128, 256}, 8, 4, 2);
    REQUIRE(rows.size() == 3);
    CHECK(rows[0].length == 64);
    CHECK(rows[2].length == 256);
    for (const auto& r : rows) CHECK(r.seconds > 0.0);
    std::string csv = probe_csv(rows);
    CHECK(csv.rfind("L,seconds\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);
}
