#pragma once

// Batch assembly, model factories and the training loop. One run is fully
// determined by its RunConfig: dataset generation, parameter init, batch
// order and per-step sampling all derive from the config seed.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "bms/config.hpp"
#include "bms/data.hpp"
#include "bms/metrics.hpp"
#include "bms/models.hpp"
#include "bms/optim.hpp"

namespace bms {

// ---------------------------------------------------------------------------
// Batch assembly
// ---------------------------------------------------------------------------

template <typename Real>
TrajBatch<Real> make_traj_batch(const TrajectoryDataset& ds,
                                const std::vector<std::size_t>& idx) {
    if (idx.empty()) throw EmptyInput("make_traj_batch: no examples");
    TrajBatch<Real> batch;
    batch.B = static_cast<int>(idx.size());
    batch.t_obs = ds.t_obs;
    batch.t_fut = ds.t_fut;
    const int B = batch.B;
    for (int t = 0; t < ds.t_obs; ++t) {
        std::vector<Real> v(static_cast<std::size_t>(B) * 2);
        for (int b = 0; b < B; ++b) {
            const auto& ex = ds.examples[idx[static_cast<std::size_t>(b)]];
            v[static_cast<std::size_t>(b) * 2] = static_cast<Real>(ex.obs[static_cast<std::size_t>(t)][0]);
            v[static_cast<std::size_t>(b) * 2 + 1] = static_cast<Real>(ex.obs[static_cast<std::size_t>(t)][1]);
        }
        batch.x_steps.push_back(Tensor<Real>::constant({B, 2}, std::move(v)));
    }
    for (int t = 0; t < ds.t_fut; ++t) {
        std::vector<Real> v(static_cast<std::size_t>(B) * 2);
        for (int b = 0; b < B; ++b) {
            const auto& ex = ds.examples[idx[static_cast<std::size_t>(b)]];
            v[static_cast<std::size_t>(b) * 2] = static_cast<Real>(ex.fut[static_cast<std::size_t>(t)][0]);
            v[static_cast<std::size_t>(b) * 2 + 1] = static_cast<Real>(ex.fut[static_cast<std::size_t>(t)][1]);
        }
        batch.y_steps.push_back(Tensor<Real>::constant({B, 2}, std::move(v)));
    }
    const auto& first = ds.examples[idx[0]];
    if (!first.scene.empty()) {
        const int hw = first.scene_hw;
        std::vector<Real> v(static_cast<std::size_t>(B) * first.scene.size());
        for (int b = 0; b < B; ++b) {
            const auto& ex = ds.examples[idx[static_cast<std::size_t>(b)]];
            require(static_cast<int>(ex.scene_hw) == hw, "batch: mixed scene resolutions");
            for (std::size_t i = 0; i < ex.scene.size(); ++i)
                v[static_cast<std::size_t>(b) * ex.scene.size() + i] = static_cast<Real>(ex.scene[i]);
        }
        batch.scene = Tensor<Real>::constant({B, 1, hw, hw}, std::move(v));
        batch.has_scene = true;
    }
    return batch;
}

template <typename Real>
ImageBatch<Real> make_image_batch(const ImageSequenceDataset& ds,
                                  const std::vector<std::size_t>& idx) {
    if (idx.empty()) throw EmptyInput("make_image_batch: no examples");
    ImageBatch<Real> batch;
    batch.B = static_cast<int>(idx.size());
    batch.t_obs = ds.spec.t_obs;
    batch.t_fut = ds.spec.t_fut;
    batch.H = batch.W = ds.spec.grid;
    const int B = batch.B;
    const std::size_t plane = static_cast<std::size_t>(batch.H) * batch.W;
    auto frames_at = [&](bool fut, int t) {
        std::vector<Real> v(static_cast<std::size_t>(B) * plane);
        for (int b = 0; b < B; ++b) {
            const auto& ex = ds.examples[idx[static_cast<std::size_t>(b)]];
            const auto& f = fut ? ex.frames_fut[static_cast<std::size_t>(t)]
                                : ex.frames_obs[static_cast<std::size_t>(t)];
            for (std::size_t i = 0; i < plane; ++i)
                v[static_cast<std::size_t>(b) * plane + i] = static_cast<Real>(f[i]);
        }
        return Tensor<Real>::constant({B, 1, batch.H, batch.W}, std::move(v));
    };
    for (int t = 0; t < batch.t_obs; ++t) batch.x_frames.push_back(frames_at(false, t));
    for (int t = 0; t < batch.t_fut; ++t) batch.y_frames.push_back(frames_at(true, t));
    return batch;
}

// ---------------------------------------------------------------------------
// Dataset and model factories
// ---------------------------------------------------------------------------

// The fork spec as the generators see it: star runs flip the layout flag.
inline ForkSpec task_fork_spec(const RunConfig& cfg) {
    ForkSpec s = cfg.data.fork;
    s.star_layout = cfg.task == "star";
    return s;
}

inline TrajectoryDataset load_traj_dataset(const RunConfig& cfg) {
    if (cfg.task == "fork") return gen_fork(cfg.data.fork, cfg.data.n, cfg.seed);
    if (cfg.task == "star") return gen_star(cfg.data.fork, cfg.data.n, cfg.seed);
    if (cfg.task == "fork_map") return gen_fork_with_map(cfg.data.fork, cfg.data.n, cfg.seed);
    if (cfg.task == "jsonl") return load_jsonl(cfg.data.jsonl_path);
    throw ConfigError("not a trajectory task: " + cfg.task);
}

inline ImageSequenceDataset load_image_dataset(const RunConfig& cfg) {
    if (cfg.task != "blobs") throw ConfigError("not an image task: " + cfg.task);
    return gen_blobs(cfg.data.blobs, cfg.data.n, cfg.seed);
}

template <typename Real>
TrajectoryModel<Real> build_traj_model(const RunConfig& cfg) {
    const bool visual = cfg.task == "fork_map";
    const ObjectiveKind kind = cfg.objective_kind();
    TrajSizes sizes = TrajSizes::for_profile(profile_from_string(cfg.profile), visual);
    if (kind == ObjectiveKind::regression) sizes.latent = 0;
    if (visual) sizes.scene_hw = cfg.data.fork.scene_hw;
    return TrajectoryModel<Real>(sizes, visual, objective_uses_recognition(kind),
                                 RngStream(cfg.seed, 0x701));
}

// The blind counterpart for the fork_map comparison: same task data, no
// scene input.
template <typename Real>
TrajectoryModel<Real> build_blind_traj_model(const RunConfig& cfg) {
    const ObjectiveKind kind = cfg.objective_kind();
    TrajSizes sizes = TrajSizes::for_profile(profile_from_string(cfg.profile), false);
    if (kind == ObjectiveKind::regression) sizes.latent = 0;
    return TrajectoryModel<Real>(sizes, false, objective_uses_recognition(kind),
                                 RngStream(cfg.seed, 0x701));
}

template <typename Real>
ImageSeqModel<Real> build_image_model(const RunConfig& cfg) {
    const ObjectiveKind kind = cfg.objective_kind();
    ImageSizes sizes = ImageSizes::for_profile(profile_from_string(cfg.profile));
    return ImageSeqModel<Real>(sizes, objective_uses_recognition(kind), RngStream(cfg.seed, 0x702));
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct TrainLogRow {
    std::int64_t step = 0;
    double value = 0, kl = 0;
    double ll_min = 0, ll_mean = 0, ll_max = 0;
};

struct TrainResult {
    std::vector<TrainLogRow> log;
    std::int64_t steps_done = 0;
    bool aborted_nonfinite = false;
};

namespace detail {

template <typename Real, typename Model, typename Dataset, typename BatchFn, typename EvalFn>
TrainResult train_loop(Model& model, const Dataset& train, const RunConfig& cfg, BatchFn&& make_batch,
                       EvalFn&& eval_obj,
                       const std::function<void(std::int64_t, Model&)>& on_checkpoint) {
    const ObjectiveKind kind = cfg.objective_kind();
    const std::size_t n = train.examples.size();
    if (n == 0) throw EmptyInput("training dataset is empty");
    AdamConfig<Real> acfg{static_cast<Real>(cfg.lr), static_cast<Real>(cfg.beta1),
                          static_cast<Real>(cfg.beta2), static_cast<Real>(cfg.adam_eps)};
    Adam<Real> opt(model.params(), acfg);
    RngStream run_rng(cfg.seed, 0x7247);
    TrainResult res;
    res.log.reserve(static_cast<std::size_t>(cfg.steps));

    for (std::int64_t step = 0; step < cfg.steps; ++step) {
        RngStream batch_rng = run_rng.substream(static_cast<std::uint64_t>(2 * step));
        std::vector<std::size_t> idx(static_cast<std::size_t>(cfg.batch));
        for (auto& i : idx) i = static_cast<std::size_t>(batch_rng.below(n));
        auto batch = make_batch(train, idx);

        RngStream obj_rng = run_rng.substream(static_cast<std::uint64_t>(2 * step + 1));
        Tape<Real> tape;
        Bound<Real> bound(model.params(), &tape);
        auto outcome = eval_obj(model, bound, batch, kind, obj_rng);

        const double loss_val = static_cast<double>(outcome.loss.item());
        if (!std::isfinite(loss_val)) {
            res.aborted_nonfinite = true;
            break;
        }
        tape.backward(outcome.loss);
        std::vector<std::vector<Real>> grads;
        grads.reserve(model.params().items().size());
        for (const auto& p : model.params().items()) grads.push_back(tape.grad_of(bound[p]));
        opt.step(model.params(), grads);

        TrainLogRow row;
        row.step = step;
        row.value = outcome.report.value;
        row.kl = outcome.report.mean_kl();
        outcome.report.loglik_stats(row.ll_min, row.ll_mean, row.ll_max);
        res.log.push_back(row);
        res.steps_done = step + 1;

        if (cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0 && on_checkpoint)
            on_checkpoint(step + 1, model);
    }
    return res;
}

}  // namespace detail

template <typename Real>
TrainResult train_trajectory_model(
    TrajectoryModel<Real>& model, const TrajectoryDataset& train, const RunConfig& cfg,
    const std::function<void(std::int64_t, TrajectoryModel<Real>&)>& on_checkpoint = {}) {
    return detail::train_loop<Real>(
        model, train, cfg,
        [](const TrajectoryDataset& ds, const std::vector<std::size_t>& idx) {
            return make_traj_batch<Real>(ds, idx);
        },
        [&cfg](TrajectoryModel<Real>& m, Bound<Real>& b, TrajBatch<Real>& batch, ObjectiveKind kind,
               RngStream& rng) {
            return evaluate_objective(m, b, batch, kind, cfg.t_train, cfg.alpha, cfg.sigma_dec, rng,
                                      cfg.teacher_forcing);
        },
        on_checkpoint);
}

template <typename Real>
TrainResult train_image_model(
    ImageSeqModel<Real>& model, const ImageSequenceDataset& train, const RunConfig& cfg,
    const std::function<void(std::int64_t, ImageSeqModel<Real>&)>& on_checkpoint = {}) {
    return detail::train_loop<Real>(
        model, train, cfg,
        [](const ImageSequenceDataset& ds, const std::vector<std::size_t>& idx) {
            return make_image_batch<Real>(ds, idx);
        },
        [&cfg](ImageSeqModel<Real>& m, Bound<Real>& b, ImageBatch<Real>& batch, ObjectiveKind kind,
               RngStream& rng) {
            return evaluate_objective(m, b, batch, kind, cfg.t_train, cfg.alpha, cfg.sigma_dec, rng);
        },
        on_checkpoint);
}

// ---------------------------------------------------------------------------
// Dataset-level evaluation
// ---------------------------------------------------------------------------

// Mean per-example NCLL over (up to) max_examples of the dataset, batched.
template <typename Real>
double eval_ncll_mean(const TrajectoryModel<Real>& model, const TrajectoryDataset& ds, int T,
                      double sigma, std::uint64_t seed, std::size_t max_examples = 0) {
    const std::size_t n = max_examples ? std::min(max_examples, ds.examples.size())
                                       : ds.examples.size();
    if (n == 0) throw EmptyInput("eval_ncll_mean: empty dataset");
    Bound<Real> bound(const_cast<ParamStore<Real>&>(model.params()), nullptr);
    double acc = 0;
    const std::size_t chunk = 64;
    for (std::size_t at = 0; at < n; at += chunk) {
        std::vector<std::size_t> idx;
        for (std::size_t i = at; i < std::min(n, at + chunk); ++i) idx.push_back(i);
        auto batch = make_traj_batch<Real>(ds, idx);
        RngStream rng(seed, 0xc110 + at);
        for (double v : ncll_per_example(model, bound, batch, T, sigma, rng)) acc += v;
    }
    return acc / static_cast<double>(n);
}

template <typename Real>
double eval_ncll_mean(const ImageSeqModel<Real>& model, const ImageSequenceDataset& ds, int T,
                      double sigma, std::uint64_t seed, std::size_t max_examples = 0) {
    const std::size_t n = max_examples ? std::min(max_examples, ds.examples.size())
                                       : ds.examples.size();
    if (n == 0) throw EmptyInput("eval_ncll_mean: empty dataset");
    Bound<Real> bound(const_cast<ParamStore<Real>&>(model.params()), nullptr);
    double acc = 0;
    const std::size_t chunk = 8;
    for (std::size_t at = 0; at < n; at += chunk) {
        std::vector<std::size_t> idx;
        for (std::size_t i = at; i < std::min(n, at + chunk); ++i) idx.push_back(i);
        auto batch = make_image_batch<Real>(ds, idx);
        RngStream rng(seed, 0xc110 + at);
        for (double v : ncll_per_example(model, bound, batch, T, sigma, rng)) acc += v;
    }
    return acc / static_cast<double>(n);
}

}  // namespace bms
