#include <doctest.h>

#include <cmath>
#include <vector>

#include "bms/grad_check.hpp"
#include "bms/latent.hpp"
#include "bms/rng.hpp"

using bms::Bound;
using bms::GaussianLatent;
using bms::ParamStore;
using bms::RngStream;
using bms::Shape;
using bms::Tape;
using Tensor = bms::Tensor<double>;
namespace ops = bms::ops;

namespace {
std::vector<Tensor> steps_from(const std::vector<std::vector<double>>& rows, int b_rows, int dim) {
    std::vector<Tensor> out;
    for (const auto& r : rows) out.push_back(Tensor::constant({b_rows, dim}, r));
    return out;
}
}  // namespace

TEST_CASE("recognition with zero weights emits the prior") {
    RngStream rng(1, 0);
    ParamStore<double> store;
    auto net = bms::RecognitionTraj<double>::create(store, "q", 2, 4, 5, 3, rng);
    for (auto& p : store.items()) std::fill(p.value->begin(), p.value->end(), 0.0);
    Bound<double> b(store, nullptr);
    auto g = net.recognize(b, steps_from({{1, 2}, {3, 4}}, 1, 2));
    CHECK(g.mu.shape == Shape{1, 3});
    for (std::size_t i = 0; i < g.mu.size(); ++i) {
        CHECK(g.mu[i] == 0.0);
        CHECK(g.log_var[i] == 0.0);
    }
}

TEST_CASE("recognition heads carry the configured latent width and are deterministic") {
    RngStream rng(2, 0);
    ParamStore<double> store;
    auto net = bms::RecognitionTraj<double>::create(store, "q", 2, 64, 128, 64, rng);
    Bound<double> b(store, nullptr);
    auto y = steps_from({{0.1, -0.2}, {0.3, 0.4}, {0.0, 1.0}}, 1, 2);
    auto g1 = net.recognize(b, y);
    auto g2 = net.recognize(b, y);
    CHECK(g1.mu.shape == Shape{1, 64});
    CHECK(g1.log_var.shape == Shape{1, 64});
    for (std::size_t i = 0; i < g1.mu.size(); ++i) {
        CHECK(g1.mu[i] == g2.mu[i]);
        CHECK(g1.log_var[i] == g2.log_var[i]);
    }
    CHECK_THROWS_AS(net.recognize(b, {}), bms::EmptyInput);
}

TEST_CASE("reparameterize formula cases") {
    // sigma -> 0 surrogate
    GaussianLatent<double> tight{Tensor::constant({2}, {1.5, -0.5}), Tensor::full({2}, -60.0)};
    RngStream rng(3, 0);
    auto z = bms::reparameterize(tight, rng);
    CHECK(z[0] == doctest::Approx(1.5).epsilon(1e-10));
    CHECK(z[1] == doctest::Approx(-0.5).epsilon(1e-10));

    // mu=2, sigma=3, eps=1 -> 5
    auto mu = Tensor::constant({1}, {2.0});
    auto lv = Tensor::constant({1}, {2.0 * std::log(3.0)});
    auto eps = Tensor::constant({1}, {1.0});
    CHECK(ops::reparameterize(mu, lv, eps)[0] == doctest::Approx(5.0).epsilon(1e-12));
}

TEST_CASE("reparameterized draws have the right moments") {
    const int n = 100000;
    GaussianLatent<double> g{Tensor::full({n}, 1.0), Tensor::full({n}, 2.0 * std::log(2.0))};
    RngStream rng(4, 0);
    auto z = bms::reparameterize(g, rng);
    double s = 0, s2 = 0;
    for (std::size_t i = 0; i < z.size(); ++i) {
        s += z[i];
        s2 += z[i] * z[i];
    }
    const double mean = s / n;
    const double sd = std::sqrt(s2 / n - mean * mean);
    CHECK(std::abs(mean - 1.0) < 0.02);
    CHECK(std::abs(sd - 2.0) < 0.02);
}

TEST_CASE("kl closed form values") {
    GaussianLatent<double> std_normal{Tensor::zeros({1, 4}), Tensor::zeros({1, 4})};
    CHECK(bms::kl_standard_normal(std_normal).item() == 0.0);

    GaussianLatent<double> shifted{Tensor::constant({1, 1}, {1.0}), Tensor::zeros({1, 1})};
    CHECK(bms::kl_standard_normal(shifted).item() == doctest::Approx(0.5).epsilon(1e-12));

    GaussianLatent<double> wide{Tensor::zeros({1, 1}), Tensor::constant({1, 1}, {1.0})};
    CHECK(bms::kl_standard_normal(wide).item() ==
          doctest::Approx(0.5 * (std::exp(1.0) - 2.0)).epsilon(1e-12));
}

TEST_CASE("kl is non-negative and vanishes only at the prior") {
    RngStream rng(5, 0);
    for (int it = 0; it < 200; ++it) {
        auto mu = bms::normal_tensor<double>({1, 3}, rng);
        auto lv = bms::normal_tensor<double>({1, 3}, rng);
        const double kl = bms::kl_standard_normal(GaussianLatent<double>{mu, lv}).item();
        CHECK(kl >= 0.0);
        double mag = 0;
        for (std::size_t i = 0; i < mu.size(); ++i) mag += std::abs(mu[i]) + std::abs(lv[i]);
        if (mag > 1e-3) CHECK(kl > 0.0);
    }
}

TEST_CASE("kl matches a monte-carlo estimate") {
    RngStream rng(6, 0);
    auto mu = Tensor::constant({1, 2}, {0.7, -0.3});
    auto lv = Tensor::constant({1, 2}, {0.4, -0.8});
    GaussianLatent<double> g{mu, lv};
    const double closed = bms::kl_standard_normal(g).item();
    // E_q[log q - log p] over reparameterized samples
    const int n = 100000;
    double acc = 0, acc2 = 0;
    for (int i = 0; i < n; ++i) {
        double term = 0;
        for (int d = 0; d < 2; ++d) {
            const double m = mu[static_cast<std::size_t>(d)];
            const double l = lv[static_cast<std::size_t>(d)];
            const double sd = std::exp(l / 2);
            const double z = m + sd * rng.normal();
            const double log_q = -0.5 * std::log(2 * M_PI) - l / 2 - (z - m) * (z - m) / (2 * sd * sd);
            const double log_p = -0.5 * std::log(2 * M_PI) - z * z / 2;
            term += log_q - log_p;
        }
        acc += term;
        acc2 += term * term;
    }
    const double mc = acc / n;
    const double se = std::sqrt((acc2 / n - mc * mc) / n);
    CHECK(std::abs(mc - closed) <= 3 * se);
}

TEST_CASE("prior samples are reproducible and shaped") {
    RngStream a(7, 1), b(7, 1);
    auto za = bms::prior_sample<double>({4, 2, 3, 3}, a);
    auto zb = bms::prior_sample<double>({4, 2, 3, 3}, b);
    CHECK(za.shape == Shape{4, 2, 3, 3});
    for (std::size_t i = 0; i < za.size(); ++i) CHECK(za[i] == zb[i]);
}

TEST_CASE("gradient flows through the sampling path correctly") {
    auto eps = Tensor::constant({3}, {0.5, -1.0, 2.0});
    ParamStore<double> store;
    store.add("mu", {3}, {0.1, 0.2, 0.3});
    store.add("lv", {3}, {-0.5, 0.0, 0.7});
    Tape<double> tape;
    Bound<double> bound(store, &tape);
    auto z = ops::reparameterize(bound[*store.find("mu")], bound[*store.find("lv")], eps);
    tape.backward(ops::sum(z));
    const auto& gmu = tape.grad_of(bound[*store.find("mu")]);
    const auto& glv = tape.grad_of(bound[*store.find("lv")]);
    for (int i = 0; i < 3; ++i) {
        const double sd = std::exp((*store.find("lv")->value)[static_cast<std::size_t>(i)] / 2);
        CHECK(gmu[static_cast<std::size_t>(i)] == doctest::Approx(1.0));
        CHECK(glv[static_cast<std::size_t>(i)] ==
              doctest::Approx(eps[static_cast<std::size_t>(i)] * sd / 2).epsilon(1e-12));
    }

    bms::LossProgram<double> prog = [&](Tape<double>*, const Bound<double>& b) {
        auto zz = ops::reparameterize(b[*store.find("mu")], b[*store.find("lv")], eps);
        auto kl = ops::kl_std_normal_rows(ops::reshape(b[*store.find("mu")], {1, 3}),
                                          ops::reshape(b[*store.find("lv")], {1, 3}));
        return ops::add(ops::sum(ops::square(zz)), ops::sum(kl));
    };
    CHECK(bms::grad_check(store, prog, 1e-5, 1e-4).all_pass);
}

TEST_CASE("image recognition produces a bottleneck-grid latent") {
    RngStream rng(8, 0);
    ParamStore<double> store;
    auto net = bms::RecognitionImage<double>::create(store, "q", 1, 4, 4, 8, 8, rng);
    Bound<double> b(store, nullptr);
    std::vector<Tensor> frames;
    for (int t = 0; t < 3; ++t) frames.push_back(bms::normal_tensor<double>({2, 1, 16, 16}, rng));
    auto g = net.recognize(b, frames);
    CHECK(g.mu.shape == Shape{2, 8, 4, 4});
    CHECK(g.log_var.shape == Shape{2, 8, 4, 4});
}
