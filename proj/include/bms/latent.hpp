#pragma once

// Recognition networks q(z|y), the standard-normal prior, reparameterized
// sampling and the closed-form KL divergence. Recognition is conditioned
// only on the future sequence y; the prior ignores the observation.

#include <vector>

#include "bms/cells.hpp"
#include "bms/params.hpp"
#include "bms/rng.hpp"
#include "bms/tensor.hpp"

namespace bms {

template <typename Real>
struct GaussianLatent {
    Tensor<Real> mu;
    Tensor<Real> log_var;
};

template <typename Real>
Tensor<Real> normal_tensor(const Shape& shape, RngStream& rng) {
    std::vector<Real> v(numel(shape));
    for (auto& x : v) x = static_cast<Real>(rng.normal());
    return Tensor<Real>::constant(shape, std::move(v));
}

// Standard normal prior sample, reproducible per stream.
template <typename Real>
Tensor<Real> prior_sample(const Shape& shape, RngStream& rng) {
    return normal_tensor<Real>(shape, rng);
}

template <typename Real>
Tensor<Real> reparameterize(const GaussianLatent<Real>& g, RngStream& rng) {
    auto eps = normal_tensor<Real>(g.mu.shape, rng);
    return ops::reparameterize(g.mu, g.log_var, eps);
}

// Total KL(q || N(0,I)) over every latent dimension, as a scalar.
template <typename Real>
Tensor<Real> kl_standard_normal(const GaussianLatent<Real>& g) {
    return ops::sum(ops::kl_std_normal_rows(g.mu, g.log_var));
}

// Per-example KL for a batched latent [B, ...] -> [B].
template <typename Real>
Tensor<Real> kl_standard_normal_per_example(const GaussianLatent<Real>& g) {
    return ops::kl_std_normal_rows(g.mu, g.log_var);
}

// Dense embed -> LSTM -> two linear heads (mu, log sigma^2).
template <typename Real>
struct RecognitionTraj {
    Dense<Real> embed;
    LstmCell<Real> cell;
    Dense<Real> head_mu, head_lv;
    int latent = 0;

    static RecognitionTraj create(ParamStore<Real>& store, const std::string& prefix, int in_dim,
                                  int embed_dim, int hidden, int latent, RngStream& rng) {
        RecognitionTraj r;
        r.latent = latent;
        r.embed = Dense<Real>::create(store, prefix + ".emb", in_dim, embed_dim, ops::Act::relu, rng);
        r.cell = LstmCell<Real>::create(store, prefix + ".lstm", embed_dim, hidden, rng);
        r.head_mu = Dense<Real>::create(store, prefix + ".mu", hidden, latent, ops::Act::none, rng);
        r.head_lv = Dense<Real>::create(store, prefix + ".lv", hidden, latent, ops::Act::none, rng);
        return r;
    }

    // y_steps: T tensors [B, in_dim]; deterministic in y.
    GaussianLatent<Real> recognize(const Bound<Real>& p,
                                   const std::vector<Tensor<Real>>& y_steps) const {
        if (y_steps.empty()) throw EmptyInput("recognize: empty future sequence");
        const int B = y_steps[0].shape[0];
        auto h = cell.zero_state(B);
        auto c = cell.zero_state(B);
        for (const auto& y_t : y_steps) {
            auto e = embed.apply(p, y_t);
            std::tie(h, c) = cell.step(p, e, h, c);
        }
        return {head_mu.apply(p, h), head_lv.apply(p, h)};
    }
};

// Conv embed -> pool -> ConvLSTM -> pool -> ConvLSTM -> two conv heads
// producing a spatial latent on the bottleneck grid (H/4 x W/4).
template <typename Real>
struct RecognitionImage {
    Conv<Real> embed;
    ConvLstmCell<Real> rec1, rec2;
    Conv<Real> head_mu, head_lv;
    int latent_ch = 0;

    static RecognitionImage create(ParamStore<Real>& store, const std::string& prefix, int in_ch,
                                   int embed_ch, int f1, int f2, int latent_ch, RngStream& rng) {
        RecognitionImage r;
        r.latent_ch = latent_ch;
        r.embed = Conv<Real>::create(store, prefix + ".cemb", in_ch, embed_ch, 3, true, rng);
        r.rec1 = ConvLstmCell<Real>::create(store, prefix + ".clstm1", embed_ch, f1, 3, rng);
        r.rec2 = ConvLstmCell<Real>::create(store, prefix + ".clstm2", f1, f2, 3, rng);
        r.head_mu = Conv<Real>::create(store, prefix + ".mu", f2, latent_ch, 3, false, rng);
        r.head_lv = Conv<Real>::create(store, prefix + ".lv", f2, latent_ch, 3, false, rng);
        return r;
    }

    // y_frames: T tensors [B, C, H, W], H and W divisible by 4.
    GaussianLatent<Real> recognize(const Bound<Real>& p,
                                   const std::vector<Tensor<Real>>& y_frames) const {
        if (y_frames.empty()) throw EmptyInput("recognize: empty future sequence");
        const int B = y_frames[0].shape[0];
        const int H = y_frames[0].shape[2], W = y_frames[0].shape[3];
        require(H % 4 == 0 && W % 4 == 0, "recognize: frame extents must be divisible by 4");
        auto h1 = rec1.zero_state(B, H / 2, W / 2);
        auto c1 = h1, h2 = rec2.zero_state(B, H / 4, W / 4), c2 = h2;
        for (const auto& y_t : y_frames) {
            auto e = ops::maxpool2(embed.apply(p, y_t));
            std::tie(h1, c1) = rec1.step(p, e, h1, c1);
            std::tie(h2, c2) = rec2.step(p, ops::maxpool2(h1), h2, c2);
        }
        return {head_mu.apply(p, h2), head_lv.apply(p, h2)};
    }
};

}  // namespace bms
