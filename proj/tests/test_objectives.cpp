#include <doctest.h>

#include <cmath>
#include <cstring>
#include <vector>

#include "bms/objectives.hpp"
#include "bms/optim.hpp"
#include "bms/rng.hpp"

using bms::ObjectiveKind;
using bms::RngStream;
using bms::Tape;
using Tensor = bms::Tensor<double>;
namespace ops = bms::ops;

TEST_CASE("decoder loglik formula cases") {
    bms::LikelihoodConfig off{1.0, false};
    auto y = Tensor::constant({4}, {1, 2, 3, 4});
    CHECK(bms::decoder_loglik(y, y, off).item() == 0.0);

    auto pred = Tensor::constant({1}, {1.0});
    auto target = Tensor::constant({1}, {2.0});
    CHECK(bms::decoder_loglik(pred, target, off).item() == doctest::Approx(-0.5).epsilon(1e-12));

    bms::LikelihoodConfig on{1.0, true};
    CHECK(bms::decoder_loglik(y, y, on).item() ==
          doctest::Approx(-2.0 * std::log(2 * M_PI)).epsilon(1e-12));

    CHECK_THROWS_AS(bms::decoder_loglik(pred, y, off), bms::ShapeMismatch);
}

TEST_CASE("objective combine values from hand calculation") {
    const std::vector<double> lls{-1, -2, -3};
    const double direct = std::log((std::exp(-1.0) + std::exp(-2.0) + std::exp(-3.0)) / 3.0);

    CHECK(bms::combine_mc(lls) == doctest::Approx(direct).epsilon(1e-12));
    CHECK(bms::combine_cvae(lls, 0.2) == doctest::Approx(-2.2).epsilon(1e-12));
    CHECK(bms::combine_ms(lls, 0.2) == doctest::Approx(direct - 0.2).epsilon(1e-12));
    CHECK(bms::combine_bms(lls, 0.2) ==
          doctest::Approx(-1.0 - std::log(3.0) - 0.2).epsilon(1e-12));

    int best = -1;
    CHECK(bms::combine_prior_bms(std::vector<double>{-4, -1, -7}, &best) == doctest::Approx(-1.0));
    CHECK(best == 1);

    // prior_bms differs from bms by exactly -log T - KL on identical samples
    CHECK(bms::combine_bms(lls, 0.2) - bms::combine_prior_bms(lls) ==
          doctest::Approx(-std::log(3.0) - 0.2).epsilon(1e-12));
}

TEST_CASE("single-sample identities") {
    const std::vector<double> one{-1.37};
    CHECK(bms::combine_mc(one) == doctest::Approx(-1.37));
    CHECK(bms::combine_ms(one, 0.4) == doctest::Approx(bms::combine_cvae(one, 0.4)).epsilon(1e-12));
    CHECK(bms::combine_bms(one, 0.4) == doctest::Approx(bms::combine_cvae(one, 0.4)).epsilon(1e-12));

    // identical logliks: mc equals the shared value; ms - bms = log T
    const std::vector<double> same{-2.5, -2.5, -2.5, -2.5};
    CHECK(bms::combine_mc(same) == doctest::Approx(-2.5).epsilon(1e-12));
    CHECK(bms::combine_ms(same, 0.1) - bms::combine_bms(same, 0.1) ==
          doctest::Approx(std::log(4.0)).epsilon(1e-12));
}

TEST_CASE("hybrid objective") {
    CHECK(bms::combine_hybrid(-2.0, -3.0, 0.5) == doctest::Approx(-2.5));
    CHECK(bms::combine_hybrid(-2.0, -3.0, 1.0) == doctest::Approx(-3.0));
    CHECK(bms::combine_hybrid(-2.0, -3.0, 0.0) == doctest::Approx(-2.0));
    CHECK_THROWS_AS(bms::combine_hybrid(-2, -3, 1.5), bms::InvalidAlpha);
    CHECK_THROWS_AS(bms::combine_hybrid(-2, -3, -0.1), bms::InvalidAlpha);
}

TEST_CASE("objective inequality chain over random cases") {
    RngStream rng(101, 0);
    for (int it = 0; it < 1000; ++it) {
        const int T = 1 + static_cast<int>(rng.below(12));
        std::vector<double> lls(static_cast<std::size_t>(T));
        for (auto& v : lls) v = -3.0 + 5.0 * rng.normal();
        const double kl = std::abs(2.0 * rng.normal());

        const double v_cvae = bms::combine_cvae(lls, kl);
        const double v_ms = bms::combine_ms(lls, kl);
        const double v_bms = bms::combine_bms(lls, kl);

        CHECK(v_cvae <= v_ms + 1e-9);
        CHECK(v_bms <= v_ms + 1e-9);
        CHECK(v_ms - v_bms >= -1e-9);
        CHECK(v_ms - v_bms <= std::log(static_cast<double>(T)) + 1e-9);
    }
}

TEST_CASE("logsumexp path agrees with direct evaluation and survives underflow") {
    RngStream rng(102, 0);
    for (int it = 0; it < 200; ++it) {
        const int T = 1 + static_cast<int>(rng.below(8));
        std::vector<double> lls(static_cast<std::size_t>(T));
        for (auto& v : lls) v = rng.uniform(-30, 2);
        double direct = 0;
        for (double v : lls) direct += std::exp(v);
        direct = std::log(direct / T);
        CHECK(std::abs(bms::combine_mc(lls) - direct) <= 1e-9);
    }
    const std::vector<double> tiny{-900.0, -1000.0, -850.0};
    const double v = bms::combine_ms(tiny, 0.3);
    CHECK(std::isfinite(v));
    CHECK(v == doctest::Approx(-850.0 + std::log(1.0 + std::exp(-50.0) + std::exp(-150.0)) -
                               std::log(3.0) - 0.3));
}

TEST_CASE("tape combination matches the plain-double recompute to 1e-12") {
    RngStream rng(103, 0);
    for (ObjectiveKind kind : {ObjectiveKind::mc, ObjectiveKind::cvae, ObjectiveKind::ms,
                               ObjectiveKind::bms, ObjectiveKind::prior_bms,
                               ObjectiveKind::regression}) {
        const int B = 3, T = kind == ObjectiveKind::regression ? 1 : 5;
        std::vector<double> ll(static_cast<std::size_t>(B * T));
        for (auto& v : ll) v = rng.uniform(-8, 0);
        std::vector<double> kl(static_cast<std::size_t>(B));
        for (auto& v : kl) v = std::abs(rng.normal());
        bms::ObjectiveInputs<double> in;
        in.logliks = Tensor::constant({B, T}, ll);
        in.kl = Tensor::constant({B}, kl);
        in.has_kl = bms::objective_uses_recognition(kind);
        auto out = bms::combine_objective(kind, in);
        CHECK(std::abs(out.report.value - out.report.recompute()) <= 1e-12);
        CHECK(out.loss.item() == doctest::Approx(-out.report.value).epsilon(1e-15));
        if (kind == ObjectiveKind::bms || kind == ObjectiveKind::prior_bms) {
            REQUIRE(out.report.best_index.size() == static_cast<std::size_t>(B));
            for (int b = 0; b < B; ++b) {
                const auto& row = out.report.per_sample_loglik[static_cast<std::size_t>(b)];
                const int bi = out.report.best_index[static_cast<std::size_t>(b)];
                for (double x : row) CHECK(row[static_cast<std::size_t>(bi)] >= x);
            }
        }
    }
}

TEST_CASE("hybrid tape combination uses both branches") {
    RngStream rng(104, 0);
    const int B = 2, T = 4;
    auto fill = [&](bms::ObjectiveInputs<double>& in, bool with_kl) {
        std::vector<double> ll(static_cast<std::size_t>(B * T));
        for (auto& v : ll) v = rng.uniform(-5, 0);
        in.logliks = Tensor::constant({B, T}, ll);
        if (with_kl) {
            std::vector<double> kl{0.3, 0.7};
            in.kl = Tensor::constant({B}, kl);
            in.has_kl = true;
        }
    };
    bms::ObjectiveInputs<double> recog, mc;
    fill(recog, true);
    fill(mc, false);
    auto out = bms::combine_objective(ObjectiveKind::hybrid, recog, 0.25, &mc);
    CHECK(std::abs(out.report.value - out.report.recompute()) <= 1e-12);
    CHECK_THROWS_AS(bms::combine_objective(ObjectiveKind::hybrid, recog, 1.5, &mc),
                    bms::InvalidAlpha);
}

TEST_CASE("bms gradient flows only through the argmax sample") {
    const int B = 2, T = 3;
    Tape<double> tape;
    auto storage = std::make_shared<std::vector<double>>(
        std::vector<double>{-1, -5, -2, -4, -0.5, -6});
    auto lls = tape.watch({B, T}, storage);
    bms::ObjectiveInputs<double> in;
    in.logliks = lls;
    auto out = bms::combine_objective(ObjectiveKind::prior_bms, in);
    tape.backward(out.loss);
    const auto& g = tape.grad_of(lls);
    // loss = -mean over B of max, so the argmax entries carry -1/B
    CHECK(g[0] == doctest::Approx(-0.5));
    CHECK(g[1] == 0.0);
    CHECK(g[2] == 0.0);
    CHECK(g[3] == 0.0);
    CHECK(g[4] == doctest::Approx(-0.5));
    CHECK(g[5] == 0.0);
}

TEST_CASE("adam step basics") {
    RngStream rng(105, 0);
    bms::ParamStore<double> store;
    store.add("w", {3}, {1.0, -2.0, 0.5});
    bms::Adam<double> opt(store);

    // zero gradient leaves parameters untouched
    opt.step(store, {std::vector<double>(3, 0.0)});
    CHECK((*store.find("w")->value)[0] == 1.0);
    CHECK((*store.find("w")->value)[1] == -2.0);

    // gradient shape mismatch is rejected
    CHECK_THROWS_AS(opt.step(store, {std::vector<double>(2, 0.0)}), bms::ShapeMismatch);

    // two identical runs are bitwise identical
    auto run = [](std::vector<double>& out) {
        RngStream r(9, 9);
        bms::ParamStore<double> s;
        s.add("w", {4}, {0.1, 0.2, 0.3, 0.4});
        bms::Adam<double> o(s);
        for (int step = 0; step < 25; ++step) {
            std::vector<double> g(4);
            for (auto& x : g) x = r.normal();
            o.step(s, {g});
        }
        out = *s.find("w")->value;
    };
    std::vector<double> a, b;
    run(a);
    run(b);
    CHECK(std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0);
}
