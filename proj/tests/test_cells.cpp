#include <doctest.h>

#include <cmath>
#include <vector>

#include "bms/cells.hpp"
#include "bms/grad_check.hpp"
#include "bms/latent.hpp"
#include "bms/rng.hpp"

using bms::Bound;
using bms::ParamStore;
using bms::RngStream;
using bms::Shape;
using bms::Tape;
using Tensor = bms::Tensor<double>;
namespace ops = bms::ops;

namespace {

void zero_params(ParamStore<double>& store) {
    for (auto& p : store.items()) std::fill(p.value->begin(), p.value->end(), 0.0);
}

}  // namespace

TEST_CASE("lstm_step zero parameters and zero bias give zero state") {
    RngStream rng(1, 0);
    ParamStore<double> store;
    auto cell = bms::LstmCell<double>::create(store, "c", 3, 4, rng);
    zero_params(store);
    Bound<double> p(store, nullptr);
    auto x = Tensor::zeros({1, 3});
    auto [h, c] = cell.step(p, x, cell.zero_state(1), cell.zero_state(1));
    for (std::size_t i = 0; i < h.size(); ++i) {
        CHECK(h[i] == 0.0);
        CHECK(c[i] == 0.0);
    }
}

TEST_CASE("lstm_step forget path: zero weights, forget bias one, c = 1") {
    RngStream rng(1, 0);
    ParamStore<double> store;
    auto cell = bms::LstmCell<double>::create(store, "c", 2, 3, rng);
    zero_params(store);
    // restore the forget-slice bias to one, as at construction
    auto* b = store.find("c.b");
    for (int i = 3; i < 6; ++i) (*b->value)[static_cast<std::size_t>(i)] = 1.0;
    Bound<double> p(store, nullptr);
    auto c0 = Tensor::full({1, 3}, 1.0);
    auto [h, c] = cell.step(p, Tensor::zeros({1, 2}), cell.zero_state(1), c0);
    const double sig1 = 1.0 / (1.0 + std::exp(-1.0));
    for (int i = 0; i < 3; ++i) {
        CHECK(c[static_cast<std::size_t>(i)] == doctest::Approx(sig1).epsilon(1e-12));
        CHECK(h[static_cast<std::size_t>(i)] == doctest::Approx(0.5 * std::tanh(sig1)).epsilon(1e-12));
    }
}

TEST_CASE("lstm_step output widths match the hidden size") {
    RngStream rng(7, 0);
    ParamStore<double> store;
    auto cell = bms::LstmCell<double>::create(store, "c", 32, 48, rng);
    Bound<double> p(store, nullptr);
    auto x = bms::normal_tensor<double>({2, 32}, rng);
    auto [h, c] = cell.step(p, x, cell.zero_state(2), cell.zero_state(2));
    CHECK(h.shape == Shape{2, 48});
    CHECK(c.shape == Shape{2, 48});
}

TEST_CASE("saturated gates reduce the cell to pure memory") {
    RngStream rng(3, 0);
    ParamStore<double> store;
    auto cell = bms::LstmCell<double>::create(store, "c", 2, 2, rng);
    zero_params(store);
    auto* b = store.find("c.b");
    // f -> 1, i -> 0
    (*b->value)[2] = 50.0;
    (*b->value)[3] = 50.0;
    (*b->value)[0] = -50.0;
    (*b->value)[1] = -50.0;
    Bound<double> p(store, nullptr);
    auto c0 = Tensor::constant({1, 2}, {0.37, -1.25});
    auto [h, c] = cell.step(p, Tensor::zeros({1, 2}), cell.zero_state(1), c0);
    (void)h;
    CHECK(c[0] == doctest::Approx(0.37).epsilon(1e-12));
    CHECK(c[1] == doctest::Approx(-1.25).epsilon(1e-12));
}

TEST_CASE("lstm_step passes gradient checking") {
    RngStream rng(11, 0);
    ParamStore<double> store;
    auto cell = bms::LstmCell<double>::create(store, "c", 3, 4, rng);
    auto x = bms::normal_tensor<double>({2, 3}, rng);
    auto c0 = bms::normal_tensor<double>({2, 4}, rng);
    bms::LossProgram<double> prog = [&](Tape<double>*, const Bound<double>& b) {
        auto [h, c] = cell.step(b, x, cell.zero_state(2), c0);
        return ops::add(ops::sum(ops::square(h)), ops::sum(ops::square(c)));
    };
    CHECK(bms::grad_check(store, prog, 1e-5, 1e-4).all_pass);
}

TEST_CASE("conv_lstm_step zero case and shapes") {
    RngStream rng(5, 0);
    ParamStore<double> store;
    auto cell = bms::ConvLstmCell<double>::create(store, "cl", 2, 32, 3, rng);
    zero_params(store);
    Bound<double> p(store, nullptr);
    auto x = Tensor::zeros({1, 2, 16, 16});
    auto [h, c] = cell.step(p, x, cell.zero_state(1, 16, 16), cell.zero_state(1, 16, 16));
    CHECK(h.shape == Shape{1, 32, 16, 16});
    CHECK(c.shape == Shape{1, 32, 16, 16});
    for (std::size_t i = 0; i < h.size(); ++i) CHECK(h[i] == 0.0);
}

TEST_CASE("conv_lstm_step single-step influence stays within the kernel radius") {
    RngStream rng(6, 0);
    ParamStore<double> store;
    auto cell = bms::ConvLstmCell<double>::create(store, "cl", 1, 2, 3, rng);
    Bound<double> p(store, nullptr);
    const int N = 7;
    auto base = bms::normal_tensor<double>({1, 1, N, N}, rng);
    auto h0 = cell.zero_state(1, N, N);
    auto [h_ref, c_ref] = cell.step(p, base, h0, h0);
    (void)c_ref;
    // poke the centre pixel and compare
    auto poked = Tensor::constant(base.shape, *base.data);
    (*poked.data)[static_cast<std::size_t>(3 * N + 3)] += 0.5;
    auto [h_new, c_new] = cell.step(p, poked, h0, h0);
    (void)c_new;
    for (int f = 0; f < 2; ++f)
        for (int y = 0; y < N; ++y)
            for (int x = 0; x < N; ++x) {
                const std::size_t idx =
                    static_cast<std::size_t>(f) * N * N + static_cast<std::size_t>(y) * N + x;
                const double diff = std::abs(h_new[idx] - h_ref[idx]);
                const int cheb = std::max(std::abs(y - 3), std::abs(x - 3));
                if (cheb > 1) CHECK(diff == 0.0);
            }
}

TEST_CASE("conv_lstm_step passes gradient checking") {
    RngStream rng(8, 0);
    ParamStore<double> store;
    auto cell = bms::ConvLstmCell<double>::create(store, "cl", 1, 2, 3, rng);
    auto x = bms::normal_tensor<double>({1, 1, 4, 4}, rng);
    auto c0 = bms::normal_tensor<double>({1, 2, 4, 4}, rng);
    bms::LossProgram<double> prog = [&](Tape<double>*, const Bound<double>& b) {
        auto [h, c] = cell.step(b, x, cell.zero_state(1, 4, 4), c0);
        return ops::add(ops::sum(ops::square(h)), ops::sum(ops::square(c)));
    };
    CHECK(bms::grad_check(store, prog, 1e-5, 1e-4).all_pass);
}

TEST_CASE("linear hand cases") {
    auto w = Tensor::constant({2, 2}, {1, 0, 0, 1});
    auto b = Tensor::zeros({2});
    auto x = Tensor::constant({2}, {3.5, -2});
    auto y = ops::linear(x, w, b, ops::Act::none);
    CHECK(y[0] == 3.5);
    CHECK(y[1] == -2);

    auto r = ops::relu(Tensor::constant({2}, {-1, 2}));
    CHECK(r[0] == 0);
    CHECK(r[1] == 2);

    auto w2 = Tensor::constant({1, 2}, {1, 1});
    auto b2 = Tensor::constant({1}, {1});
    auto y2 = ops::linear(Tensor::constant({2}, {2, 3}), w2, b2, ops::Act::none);
    CHECK(y2[0] == doctest::Approx(6.0));
}

TEST_CASE("maxpool and upsample hand cases") {
    auto x = Tensor::constant({2, 2}, {1, 2, 3, 4});
    auto pooled = ops::maxpool2(x);
    CHECK(pooled.shape == Shape{1, 1});
    CHECK(pooled[0] == 4);

    auto a = Tensor::constant({1, 1}, {7.5});
    auto up = ops::upsample2(a);
    CHECK(up.shape == Shape{2, 2});
    for (int i = 0; i < 4; ++i) CHECK(up[static_cast<std::size_t>(i)] == 7.5);

    auto c = Tensor::full({4, 4}, 2.25);
    auto rt = ops::upsample2(ops::maxpool2(c));
    for (std::size_t i = 0; i < rt.size(); ++i) CHECK(rt[i] == 2.25);

    CHECK_THROWS_AS(ops::maxpool2(Tensor::full({3, 3}, 1.0)), bms::ShapeMismatch);
}

TEST_CASE("cnn encoder shapes, zero case and input validation") {
    RngStream rng(9, 0);
    ParamStore<double> store;
    auto enc = bms::CnnEncoder<double>::create(store, "cnn", 1, 64, 64, {32, 64, 128, 256}, 1024,
                                               32, rng);
    zero_params(store);
    Bound<double> p(store, nullptr);
    auto img = Tensor::zeros({1, 1, 64, 64});
    auto v = enc.encode(p, img);
    CHECK(v.shape == Shape{1, 32});
    for (std::size_t i = 0; i < v.size(); ++i) CHECK(v[i] == 0.0);

    CHECK_THROWS_AS(enc.encode(p, Tensor::zeros({1, 1, 48, 48})), bms::ShapeMismatch);
    ParamStore<double> store2;
    CHECK_THROWS_AS(bms::CnnEncoder<double>::create(store2, "cnn", 1, 50, 50, {4, 8, 16, 32}, 64,
                                                    16, rng),
                    bms::ShapeMismatch);
}

TEST_CASE("init is deterministic and respects the glorot bound") {
    RngStream r1(42, 0), r2(42, 0);
    ParamStore<double> s1, s2;
    bms::LstmCell<double>::create(s1, "c", 5, 6, r1);
    bms::LstmCell<double>::create(s2, "c", 5, 6, r2);
    for (std::size_t i = 0; i < s1.items().size(); ++i)
        CHECK(*s1.items()[i].value == *s2.items()[i].value);

    // forget-gate slice of the bias is one, the rest zero
    auto* b = s1.find("c.b");
    for (int i = 0; i < 24; ++i)
        CHECK((*b->value)[static_cast<std::size_t>(i)] == ((i >= 6 && i < 12) ? 1.0 : 0.0));

    RngStream r3(1, 1);
    const double bound = bms::glorot_bound(1, 1);
    CHECK(bound == doctest::Approx(std::sqrt(3.0)));
    auto draws = bms::glorot_uniform<double>(1000, 1, 1, r3);
    for (double d : draws) CHECK(std::abs(d) <= bound);
}
