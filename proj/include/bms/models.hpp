#pragma once

// Assembled conditional sequence models. Encoders summarize the observed
// sequence into v; decoders roll out autoregressively conditioned on v and
// one latent draw z per sampled future, injected into every step's input.
// All rollouts are row-batched: B examples with T samples each run as
// B*T rows in lockstep.

#include <array>
#include <string>
#include <utility>
#include <vector>

#include "bms/cells.hpp"
#include "bms/latent.hpp"
#include "bms/objectives.hpp"
#include "bms/params.hpp"
#include "bms/rng.hpp"
#include "bms/tensor.hpp"

namespace bms {

enum class Profile { desk, paper };

inline const char* to_string(Profile p) { return p == Profile::desk ? "desk" : "paper"; }
inline Profile profile_from_string(const std::string& s) {
    if (s == "desk") return Profile::desk;
    if (s == "paper") return Profile::paper;
    throw ConfigError("unknown profile: " + s);
}

template <typename Real>
struct TrajBatch {
    int B = 0, t_obs = 0, t_fut = 0;
    std::vector<Tensor<Real>> x_steps;  // t_obs tensors [B,2] of displacements
    std::vector<Tensor<Real>> y_steps;  // t_fut tensors [B,2]
    Tensor<Real> scene;                 // [B,C,H,W] when present
    bool has_scene = false;

    const Tensor<Real>& last_obs() const { return x_steps.back(); }
};

template <typename Real>
struct ImageBatch {
    int B = 0, t_obs = 0, t_fut = 0, H = 0, W = 0;
    std::vector<Tensor<Real>> x_frames;  // [B,1,H,W]
    std::vector<Tensor<Real>> y_frames;
};

struct TrajSizes {
    int embed = 16;
    int enc_hidden = 32;
    int dec_embed = 32;
    int dec_hidden = 32;
    int latent = 8;
    int recog_embed = 16;
    int recog_hidden = 32;
    // visual branch
    std::vector<int> cnn_channels{4, 8, 16, 32};
    int cnn_fc1 = 128;
    int vis_dim = 16;
    int dec_embed2 = 32;
    int scene_hw = 64;

    static TrajSizes for_profile(Profile p, bool visual) {
        TrajSizes s;
        if (p == Profile::paper) {
            s.embed = 32;
            s.enc_hidden = 48;
            s.dec_embed = 64;
            s.dec_hidden = visual ? 64 : 48;
            s.latent = 64;
            s.recog_embed = 64;
            s.recog_hidden = 128;
            s.cnn_channels = {32, 64, 128, 256};
            s.cnn_fc1 = 1024;
            s.vis_dim = 32;
            s.dec_embed2 = 64;
        }
        return s;
    }
};

struct ImageSizes {
    int embed_ch = 8;
    int enc1 = 8;
    int enc2 = 16;
    int dec_embed_ch = 8;
    int dec1 = 16;
    int dec2 = 16;
    int out1_ch = 8;
    int latent_ch = 8;

    static ImageSizes for_profile(Profile p) {
        ImageSizes s;
        if (p == Profile::paper) {
            s.embed_ch = 32;
            s.enc1 = 32;
            s.enc2 = 64;
            s.dec_embed_ch = 32;
            s.dec1 = 64;
            s.dec2 = 64;
            s.out1_ch = 32;
            s.latent_ch = 64;
        }
        return s;
    }
};

// ---------------------------------------------------------------------------
// Trajectory model (optionally conditioned on a scene image).
// ---------------------------------------------------------------------------

template <typename Real>
class TrajectoryModel {
  public:
    TrajectoryModel(const TrajSizes& sizes, bool visual, bool with_recognition, RngStream rng)
        : sizes_(sizes), visual_(visual), with_recognition_(with_recognition) {
        embed_ = Dense<Real>::create(store_, "enc.emb", 2, sizes.embed, ops::Act::relu, rng);
        enc_ = LstmCell<Real>::create(store_, "enc.lstm", sizes.embed, sizes.enc_hidden, rng);
        if (visual_) {
            cnn_ = CnnEncoder<Real>::create(store_, "cnn", 1, sizes.scene_hw, sizes.scene_hw,
                                            sizes.cnn_channels, sizes.cnn_fc1, sizes.vis_dim, rng);
            dec_embed_ = Dense<Real>::create(store_, "dec.emb1",
                                             2 + sizes.enc_hidden + sizes.vis_dim, sizes.dec_embed,
                                             ops::Act::relu, rng);
            dec_embed2_ = Dense<Real>::create(store_, "dec.emb2", sizes.dec_embed + sizes.latent,
                                              sizes.dec_embed2, ops::Act::relu, rng);
            dec_ = LstmCell<Real>::create(store_, "dec.lstm", sizes.dec_embed2, sizes.dec_hidden, rng);
        } else {
            dec_embed_ = Dense<Real>::create(store_, "dec.emb1",
                                             2 + sizes.enc_hidden + sizes.latent, sizes.dec_embed,
                                             ops::Act::relu, rng);
            dec_ = LstmCell<Real>::create(store_, "dec.lstm", sizes.dec_embed, sizes.dec_hidden, rng);
        }
        out_ = Dense<Real>::create(store_, "dec.out", sizes.dec_hidden, 2, ops::Act::none, rng);
        if (with_recognition_ && sizes.latent > 0)
            recog_ = RecognitionTraj<Real>::create(store_, "recog", 2, sizes.recog_embed,
                                                   sizes.recog_hidden, sizes.latent, rng);
    }

    ParamStore<Real>& params() { return store_; }
    const ParamStore<Real>& params() const { return store_; }
    const TrajSizes& sizes() const { return sizes_; }
    bool visual() const { return visual_; }
    bool has_recognition() const { return with_recognition_ && sizes_.latent > 0; }
    int latent_dim() const { return sizes_.latent; }
    std::string kind() const { return visual_ ? "visual_trajectory" : "trajectory"; }

    // Final encoder hidden state after reading the observed sequence.
    Tensor<Real> encode_context(const Bound<Real>& p, const TrajBatch<Real>& batch) const {
        require(!batch.x_steps.empty(), "encode_context: empty observation");
        const int B = batch.x_steps[0].shape[0];
        auto h = enc_.zero_state(B);
        auto c = enc_.zero_state(B);
        for (const auto& x_t : batch.x_steps) {
            auto e = embed_.apply(p, x_t);
            std::tie(h, c) = enc_.step(p, e, h, c);
        }
        return h;
    }

    Tensor<Real> encode_scene(const Bound<Real>& p, const Tensor<Real>& scene) const {
        require(visual_, "encode_scene: model has no visual branch");
        return cnn_.encode(p, scene);
    }

    GaussianLatent<Real> recognize(const Bound<Real>& p,
                                   const std::vector<Tensor<Real>>& y_steps) const {
        require(has_recognition(), "recognize: model has no recognition net");
        return recog_.recognize(p, y_steps);
    }

    // Rolls out t_fut steps for R rows. v_rows [R, enc_hidden]; z_rows
    // [R, latent] (ignored when latent is 0); vis_rows [R, vis_dim] for the
    // visual variant; prev0 [R, 2] seeds the first step (last observed
    // displacement). One z conditions every step of a row. When `teacher`
    // is given, step t > 0 consumes the ground truth for step t-1 instead
    // of the model's own output.
    std::vector<Tensor<Real>> decode_sequence(const Bound<Real>& p, const Tensor<Real>& v_rows,
                                              const Tensor<Real>& vis_rows,
                                              const Tensor<Real>& z_rows, const Tensor<Real>& prev0,
                                              int t_fut,
                                              const std::vector<Tensor<Real>>* teacher = nullptr) const {
        const int R = v_rows.shape[0];
        auto h = dec_.zero_state(R);
        auto c = dec_.zero_state(R);
        auto prev = prev0;
        std::vector<Tensor<Real>> outputs;
        outputs.reserve(static_cast<std::size_t>(t_fut));
        for (int t = 0; t < t_fut; ++t) {
            Tensor<Real> e;
            if (visual_) {
                auto e1 = dec_embed_.apply(p, ops::concat_cols<Real>({prev, v_rows, vis_rows}));
                e = sizes_.latent > 0
                        ? dec_embed2_.apply(p, ops::concat_cols<Real>({e1, z_rows}))
                        : dec_embed2_.apply(p, e1);
            } else {
                e = sizes_.latent > 0
                        ? dec_embed_.apply(p, ops::concat_cols<Real>({prev, v_rows, z_rows}))
                        : dec_embed_.apply(p, ops::concat_cols<Real>({prev, v_rows}));
            }
            std::tie(h, c) = dec_.step(p, e, h, c);
            auto y_t = out_.apply(p, h);
            outputs.push_back(y_t);
            prev = teacher ? (*teacher)[static_cast<std::size_t>(t)] : y_t;
        }
        return outputs;
    }

  private:
    TrajSizes sizes_;
    bool visual_ = false;
    bool with_recognition_ = true;
    ParamStore<Real> store_;
    Dense<Real> embed_;
    LstmCell<Real> enc_;
    CnnEncoder<Real> cnn_;
    Dense<Real> dec_embed_, dec_embed2_;
    LstmCell<Real> dec_;
    Dense<Real> out_;
    RecognitionTraj<Real> recog_;
};

// ---------------------------------------------------------------------------
// Image-sequence model with spatial latents on the bottleneck grid.
// ---------------------------------------------------------------------------

template <typename Real>
class ImageSeqModel {
  public:
    ImageSeqModel(const ImageSizes& sizes, bool with_recognition, RngStream rng)
        : sizes_(sizes), with_recognition_(with_recognition) {
        cemb1_ = Conv<Real>::create(store_, "enc.cemb", 1, sizes.embed_ch, 3, true, rng);
        enc1_ = ConvLstmCell<Real>::create(store_, "enc.clstm1", sizes.embed_ch, sizes.enc1, 3, rng);
        enc2_ = ConvLstmCell<Real>::create(store_, "enc.clstm2", sizes.enc1, sizes.enc2, 3, rng);
        cemb2_ = Conv<Real>::create(store_, "dec.cemb", sizes.enc2 + sizes.latent_ch,
                                    sizes.dec_embed_ch, 3, true, rng);
        dec1_ = ConvLstmCell<Real>::create(store_, "dec.clstm1", sizes.dec_embed_ch, sizes.dec1, 3, rng);
        dec2_ = ConvLstmCell<Real>::create(store_, "dec.clstm2", sizes.dec1, sizes.dec2, 3, rng);
        out1_ = Conv<Real>::create(store_, "dec.out1", sizes.dec2, sizes.out1_ch, 3, true, rng);
        out2_ = Conv<Real>::create(store_, "dec.out2", sizes.out1_ch, 1, 3, false, rng);
        if (with_recognition_)
            recog_ = RecognitionImage<Real>::create(store_, "recog", 1, sizes.embed_ch, sizes.enc1,
                                                    sizes.enc2, sizes.latent_ch, rng);
    }

    ParamStore<Real>& params() { return store_; }
    const ParamStore<Real>& params() const { return store_; }
    const ImageSizes& sizes() const { return sizes_; }
    bool has_recognition() const { return with_recognition_; }
    int latent_channels() const { return sizes_.latent_ch; }
    std::string kind() const { return "image_seq"; }

    // 3-D summary tensor: final hidden state of the second encoder cell,
    // on the H/4 x W/4 bottleneck grid.
    Tensor<Real> encode_context(const Bound<Real>& p, const ImageBatch<Real>& batch) const {
        require(!batch.x_frames.empty(), "encode_context: empty observation");
        require(batch.H % 4 == 0 && batch.W % 4 == 0, "image extents must be divisible by 4");
        const int B = batch.x_frames[0].shape[0];
        auto h1 = enc1_.zero_state(B, batch.H / 2, batch.W / 2);
        auto c1 = h1;
        auto h2 = enc2_.zero_state(B, batch.H / 4, batch.W / 4);
        auto c2 = h2;
        for (const auto& x_t : batch.x_frames) {
            auto e = ops::maxpool2(cemb1_.apply(p, x_t));
            std::tie(h1, c1) = enc1_.step(p, e, h1, c1);
            std::tie(h2, c2) = enc2_.step(p, ops::maxpool2(h1), h2, c2);
        }
        return h2;
    }

    GaussianLatent<Real> recognize(const Bound<Real>& p,
                                   const std::vector<Tensor<Real>>& y_frames) const {
        require(with_recognition_, "recognize: model has no recognition net");
        return recog_.recognize(p, y_frames);
    }

    // v_rows, z_rows: [R, ch, H/4, W/4]. The embedded (v, z) pair is the
    // decoder input at every step; temporal evolution lives in the states.
    std::vector<Tensor<Real>> decode_sequence(const Bound<Real>& p, const Tensor<Real>& v_rows,
                                              const Tensor<Real>& z_rows, int t_fut) const {
        const int R = v_rows.shape[0];
        const int Hq = v_rows.shape[2], Wq = v_rows.shape[3];
        auto inp = cemb2_.apply(p, ops::concat_chan<Real>({v_rows, z_rows}));
        auto h1 = dec1_.zero_state(R, Hq, Wq);
        auto c1 = h1;
        auto h2 = dec2_.zero_state(R, 2 * Hq, 2 * Wq);
        auto c2 = h2;
        std::vector<Tensor<Real>> outputs;
        outputs.reserve(static_cast<std::size_t>(t_fut));
        for (int t = 0; t < t_fut; ++t) {
            std::tie(h1, c1) = dec1_.step(p, inp, h1, c1);
            std::tie(h2, c2) = dec2_.step(p, ops::upsample2(h1), h2, c2);
            auto y_t = out2_.apply(p, out1_.apply(p, ops::upsample2(h2)));
            outputs.push_back(y_t);
        }
        return outputs;
    }

  private:
    ImageSizes sizes_;
    bool with_recognition_ = true;
    ParamStore<Real> store_;
    Conv<Real> cemb1_;
    ConvLstmCell<Real> enc1_, enc2_;
    Conv<Real> cemb2_;
    ConvLstmCell<Real> dec1_, dec2_;
    Conv<Real> out1_, out2_;
    RecognitionImage<Real> recog_;
};

// ---------------------------------------------------------------------------
// Objective drivers
// ---------------------------------------------------------------------------

namespace detail {

// Draws eps for T samples of a [B, ...] latent; sample j uses substream j,
// so per-sample randomness does not depend on evaluation order. Rows are
// interleaved example-major: row b*T + j.
template <typename Real>
Tensor<Real> sample_eps_rows(const Shape& latent_shape, int B, int T, RngStream& rng) {
    require(latent_shape[0] == B, "sample_eps_rows: leading extent must be the batch size");
    Shape rows_shape = latent_shape;
    rows_shape[0] = B * T;
    std::vector<Real> v(numel(rows_shape));
    const std::size_t len = numel(latent_shape) / static_cast<std::size_t>(B);
    for (int j = 0; j < T; ++j) {
        RngStream sub = rng.substream(static_cast<std::uint64_t>(j));
        for (int b = 0; b < B; ++b) {
            Real* dst = v.data() + (static_cast<std::size_t>(b) * T + static_cast<std::size_t>(j)) * len;
            for (std::size_t i = 0; i < len; ++i) dst[i] = static_cast<Real>(sub.normal());
        }
    }
    return Tensor<Real>::constant(rows_shape, std::move(v));
}

// Accumulated decoder log-likelihood per row: sum_t -|y_hat - y|^2 / (2 s^2).
template <typename Real>
Tensor<Real> accumulate_loglik_rows(const std::vector<Tensor<Real>>& outputs,
                                    const std::vector<Tensor<Real>>& targets_rows, double sigma) {
    require(outputs.size() == targets_rows.size(), "loglik: step counts differ");
    Tensor<Real> acc;
    for (std::size_t t = 0; t < outputs.size(); ++t) {
        auto sq = ops::row_sum(ops::square(ops::sub(outputs[t], targets_rows[t])));
        acc = t == 0 ? sq : ops::add(acc, sq);
    }
    return ops::scale(acc, Real(-1.0 / (2.0 * sigma * sigma)));
}

}  // namespace detail

// Per-sample decoder logliks for a trajectory batch: [B, T].
// source_prior: z ~ N(0,I); otherwise z ~ q(z|y) via the reparameterization.
template <typename Real>
ObjectiveInputs<Real> trajectory_sample_logliks(const TrajectoryModel<Real>& m, const Bound<Real>& p,
                                                const TrajBatch<Real>& batch, int T,
                                                bool source_prior, double sigma, RngStream& rng,
                                                bool teacher_forcing = false) {
    const int B = batch.B;
    const int L = m.latent_dim();
    ObjectiveInputs<Real> in;

    auto v = m.encode_context(p, batch);
    auto v_rows = ops::repeat_rows(v, T);
    Tensor<Real> vis_rows;
    if (m.visual()) {
        require(batch.has_scene, "visual model needs a scene image");
        vis_rows = ops::repeat_rows(m.encode_scene(p, batch.scene), T);
    }

    Tensor<Real> z_rows;
    if (L > 0) {
        if (source_prior) {
            z_rows = detail::sample_eps_rows<Real>({B, L}, B, T, rng);
        } else {
            auto g = m.recognize(p, batch.y_steps);
            auto eps = detail::sample_eps_rows<Real>({B, L}, B, T, rng);
            z_rows = ops::reparameterize(ops::repeat_rows(g.mu, T), ops::repeat_rows(g.log_var, T),
                                         eps);
            in.kl = ops::kl_std_normal_rows(g.mu, g.log_var);
            in.has_kl = true;
        }
    }

    std::vector<Tensor<Real>> targets_rows;
    targets_rows.reserve(batch.y_steps.size());
    for (const auto& y_t : batch.y_steps) targets_rows.push_back(ops::repeat_rows(y_t, T));

    std::vector<Tensor<Real>> teacher_rows;
    if (teacher_forcing) {
        teacher_rows = targets_rows;
    }

    auto prev0 = ops::repeat_rows(batch.last_obs(), T);
    auto outputs = m.decode_sequence(p, v_rows, vis_rows, z_rows, prev0, batch.t_fut,
                                     teacher_forcing ? &teacher_rows : nullptr);
    auto ll_rows = detail::accumulate_loglik_rows(outputs, targets_rows, sigma);
    in.logliks = ops::reshape(ll_rows, {B, T});
    return in;
}

template <typename Real>
ObjectiveInputs<Real> image_sample_logliks(const ImageSeqModel<Real>& m, const Bound<Real>& p,
                                           const ImageBatch<Real>& batch, int T, bool source_prior,
                                           double sigma, RngStream& rng) {
    const int B = batch.B;
    const int Lc = m.latent_channels();
    const int Hq = batch.H / 4, Wq = batch.W / 4;
    ObjectiveInputs<Real> in;

    auto v = m.encode_context(p, batch);
    auto v_rows = ops::repeat_rows(v, T);

    Tensor<Real> z_rows;
    if (source_prior) {
        z_rows = detail::sample_eps_rows<Real>({B, Lc, Hq, Wq}, B, T, rng);
    } else {
        auto g = m.recognize(p, batch.y_frames);
        auto eps = detail::sample_eps_rows<Real>({B, Lc, Hq, Wq}, B, T, rng);
        z_rows = ops::reparameterize(ops::repeat_rows(g.mu, T), ops::repeat_rows(g.log_var, T), eps);
        in.kl = ops::kl_std_normal_rows(g.mu, g.log_var);
        in.has_kl = true;
    }

    std::vector<Tensor<Real>> targets_rows;
    targets_rows.reserve(batch.y_frames.size());
    for (const auto& y_t : batch.y_frames) targets_rows.push_back(ops::repeat_rows(y_t, T));

    auto outputs = m.decode_sequence(p, v_rows, z_rows, batch.t_fut);
    auto ll_rows = detail::accumulate_loglik_rows(outputs, targets_rows, sigma);
    in.logliks = ops::reshape(ll_rows, {B, T});
    return in;
}

// One objective evaluation on one batch; works for training (tape) and for
// inspection (no tape). T is the per-example sample count.
template <typename Real, typename Model, typename Batch, typename SampleFn>
ObjectiveOutcome<Real> evaluate_objective_with(const Model& m, const Bound<Real>& p,
                                               const Batch& batch, ObjectiveKind kind, int T,
                                               double alpha, double sigma, RngStream& rng,
                                               SampleFn&& sample_fn) {
    if (T < 1) throw Error("objective needs T >= 1 samples");
    switch (kind) {
        case ObjectiveKind::regression: {
            auto in = sample_fn(m, p, batch, 1, /*prior=*/true, sigma, rng);
            return combine_objective(ObjectiveKind::regression, in);
        }
        case ObjectiveKind::mc:
        case ObjectiveKind::prior_bms: {
            auto in = sample_fn(m, p, batch, T, /*prior=*/true, sigma, rng);
            return combine_objective(kind, in);
        }
        case ObjectiveKind::cvae:
        case ObjectiveKind::ms:
        case ObjectiveKind::bms: {
            auto in = sample_fn(m, p, batch, T, /*prior=*/false, sigma, rng);
            return combine_objective(kind, in);
        }
        case ObjectiveKind::hybrid: {
            auto recog_in = sample_fn(m, p, batch, T, /*prior=*/false, sigma, rng);
            RngStream mc_rng = rng.substream(0x9c0ffee);
            auto mc_in = sample_fn(m, p, batch, T, /*prior=*/true, sigma, mc_rng);
            return combine_objective(ObjectiveKind::hybrid, recog_in, alpha, &mc_in);
        }
    }
    throw Error("unreachable objective kind");
}

template <typename Real>
ObjectiveOutcome<Real> evaluate_objective(const TrajectoryModel<Real>& m, const Bound<Real>& p,
                                          const TrajBatch<Real>& batch, ObjectiveKind kind, int T,
                                          double alpha, double sigma, RngStream& rng,
                                          bool teacher_forcing = false) {
    return evaluate_objective_with<Real>(
        m, p, batch, kind, T, alpha, sigma, rng,
        [teacher_forcing](const TrajectoryModel<Real>& mm, const Bound<Real>& pp,
                          const TrajBatch<Real>& bb, int t, bool prior, double s, RngStream& r) {
            return trajectory_sample_logliks(mm, pp, bb, t, prior, s, r, teacher_forcing);
        });
}

template <typename Real>
ObjectiveOutcome<Real> evaluate_objective(const ImageSeqModel<Real>& m, const Bound<Real>& p,
                                          const ImageBatch<Real>& batch, ObjectiveKind kind, int T,
                                          double alpha, double sigma, RngStream& rng) {
    return evaluate_objective_with<Real>(
        m, p, batch, kind, T, alpha, sigma, rng,
        [](const ImageSeqModel<Real>& mm, const Bound<Real>& pp, const ImageBatch<Real>& bb, int t,
           bool prior, double s, RngStream& r) {
            return image_sample_logliks(mm, pp, bb, t, prior, s, r);
        });
}

// ---------------------------------------------------------------------------
// Sampling for evaluation (no tape)
// ---------------------------------------------------------------------------

enum class SampleSource { prior, recognition };

// T independent futures per example, each conditioned on its own z draw.
// Returns [B][T][t_fut][2] displacement samples.
template <typename Real>
std::vector<std::vector<std::vector<std::array<double, 2>>>> sample_futures(
    const TrajectoryModel<Real>& m, const Bound<Real>& p, const TrajBatch<Real>& batch, int T,
    RngStream& rng, SampleSource source = SampleSource::prior) {
    const int B = batch.B;
    const int L = m.latent_dim();
    if (source == SampleSource::recognition && batch.y_steps.empty())
        throw MissingY("recognition sampling requires the future sequence");

    auto v_rows = ops::repeat_rows(m.encode_context(p, batch), T);
    Tensor<Real> vis_rows;
    if (m.visual()) {
        require(batch.has_scene, "visual model needs a scene image");
        vis_rows = ops::repeat_rows(m.encode_scene(p, batch.scene), T);
    }
    Tensor<Real> z_rows;
    if (L > 0) {
        auto eps = detail::sample_eps_rows<Real>({B, L}, B, T, rng);
        if (source == SampleSource::prior) {
            z_rows = eps;
        } else {
            auto g = m.recognize(p, batch.y_steps);
            z_rows = ops::reparameterize(ops::repeat_rows(g.mu, T), ops::repeat_rows(g.log_var, T),
                                         eps);
        }
    }
    auto prev0 = ops::repeat_rows(batch.last_obs(), T);
    auto outputs = m.decode_sequence(p, v_rows, vis_rows, z_rows, prev0, batch.t_fut);

    std::vector<std::vector<std::vector<std::array<double, 2>>>> res(
        static_cast<std::size_t>(B),
        std::vector<std::vector<std::array<double, 2>>>(
            static_cast<std::size_t>(T),
            std::vector<std::array<double, 2>>(static_cast<std::size_t>(batch.t_fut))));
    for (int t = 0; t < batch.t_fut; ++t) {
        const auto& y_t = outputs[static_cast<std::size_t>(t)];
        for (int b = 0; b < B; ++b)
            for (int j = 0; j < T; ++j) {
                const std::size_t row = static_cast<std::size_t>(b) * T + static_cast<std::size_t>(j);
                res[static_cast<std::size_t>(b)][static_cast<std::size_t>(j)][static_cast<std::size_t>(t)] =
                    {static_cast<double>((*y_t.data)[row * 2]),
                     static_cast<double>((*y_t.data)[row * 2 + 1])};
            }
    }
    return res;
}

// T sampled future frame sequences per example: [B][T][t_fut] planes of H*W.
template <typename Real>
std::vector<std::vector<std::vector<std::vector<double>>>> sample_future_frames(
    const ImageSeqModel<Real>& m, const Bound<Real>& p, const ImageBatch<Real>& batch, int T,
    RngStream& rng) {
    const int B = batch.B;
    const int Hq = batch.H / 4, Wq = batch.W / 4;
    auto v_rows = ops::repeat_rows(m.encode_context(p, batch), T);
    auto z_rows = detail::sample_eps_rows<Real>({B, m.latent_channels(), Hq, Wq}, B, T, rng);
    auto outputs = m.decode_sequence(p, v_rows, z_rows, batch.t_fut);

    const std::size_t plane = static_cast<std::size_t>(batch.H) * batch.W;
    std::vector<std::vector<std::vector<std::vector<double>>>> res(
        static_cast<std::size_t>(B),
        std::vector<std::vector<std::vector<double>>>(
            static_cast<std::size_t>(T),
            std::vector<std::vector<double>>(static_cast<std::size_t>(batch.t_fut),
                                             std::vector<double>(plane))));
    for (int t = 0; t < batch.t_fut; ++t) {
        const auto& y_t = outputs[static_cast<std::size_t>(t)];
        for (int b = 0; b < B; ++b)
            for (int j = 0; j < T; ++j) {
                const std::size_t row = static_cast<std::size_t>(b) * T + static_cast<std::size_t>(j);
                for (std::size_t i = 0; i < plane; ++i)
                    res[static_cast<std::size_t>(b)][static_cast<std::size_t>(j)][static_cast<std::size_t>(t)][i] =
                        static_cast<double>((*y_t.data)[row * plane + i]);
            }
    }
    return res;
}

// Verifies that the whole-sequence likelihood equals the per-step
// factorization, both through ops and through plain accumulation.
struct FactorizationReport {
    double whole = 0, per_step = 0;
    bool pass = false;
};

template <typename Real>
FactorizationReport log_likelihood_factorization_check(const std::vector<Tensor<Real>>& outputs,
                                                       const std::vector<Tensor<Real>>& targets,
                                                       const LikelihoodConfig& cfg,
                                                       double tol = 1e-10) {
    require(outputs.size() == targets.size() && !outputs.empty(), "factorization: step counts");
    std::vector<Real> flat_o, flat_t;
    for (std::size_t t = 0; t < outputs.size(); ++t) {
        flat_o.insert(flat_o.end(), outputs[t].data->begin(), outputs[t].data->end());
        flat_t.insert(flat_t.end(), targets[t].data->begin(), targets[t].data->end());
    }
    const int n = static_cast<int>(flat_o.size());
    auto whole = decoder_loglik(Tensor<Real>::constant({n}, flat_o),
                                Tensor<Real>::constant({n}, flat_t), cfg);
    double per_step = 0;
    for (std::size_t t = 0; t < outputs.size(); ++t)
        per_step += static_cast<double>(decoder_loglik(outputs[t], targets[t], cfg).item());
    FactorizationReport rep;
    rep.whole = static_cast<double>(whole.item());
    rep.per_step = per_step;
    rep.pass = std::abs(rep.whole - rep.per_step) <= tol * std::max(1.0, std::abs(rep.whole));
    return rep;
}

}  // namespace bms
