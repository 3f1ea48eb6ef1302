#pragma once

// Evaluation quantities: negative conditional log-likelihood (prior-sample
// estimate, lower is better), oracle top-k% euclidean errors, k-means
// clustering of samples, thresholded forecast scores and per-pixel sample
// statistics.

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

#include "bms/data.hpp"
#include "bms/errors.hpp"
#include "bms/models.hpp"
#include "bms/rng.hpp"

namespace bms {

struct EvalConfig {
    int t_samples_cll = 100;
    double topk_frac = 0.10;
    std::vector<int> horizons;  // 0-based future step indices; empty -> quartile defaults
    double csi_threshold = 0.5;
    double sigma_cll = 1.0;  // bandwidth of the CLL estimator's Gaussian

    void validate(int t_fut) const {
        if (!(topk_frac > 0.0 && topk_frac <= 1.0))
            throw ConfigError("eval: topk_frac must lie in (0,1]");
        if (t_samples_cll < 1) throw ConfigError("eval: t_samples_cll must be >= 1");
        for (int h : horizons)
            if (h < 0 || h >= t_fut) throw ConfigError("eval: horizon outside the future window");
    }

    std::vector<int> effective_horizons(int t_fut) const {
        if (!horizons.empty()) return horizons;
        std::vector<int> h;
        for (int q = 1; q <= 4; ++q) h.push_back(std::max(0, (t_fut * q) / 4 - 1));
        return h;
    }
};

// ---------------------------------------------------------------------------
// NCLL
// ---------------------------------------------------------------------------

// Per-example negative conditional log-likelihood with T prior samples:
//   -[ logsumexp_i loglik(y_hat_i, y) - log T ],  normalizer included.
template <typename Real>
std::vector<double> ncll_per_example(const TrajectoryModel<Real>& m, const Bound<Real>& p,
                                     const TrajBatch<Real>& batch, int T, double sigma,
                                     RngStream& rng) {
    auto in = trajectory_sample_logliks(m, p, batch, T, /*prior=*/true, sigma, rng);
    const std::size_t B = static_cast<std::size_t>(batch.B);
    const std::size_t Ts = static_cast<std::size_t>(T);
    const double norm = gaussian_log_normalizer(static_cast<std::size_t>(batch.t_fut) * 2, sigma);
    std::vector<double> out(B);
    for (std::size_t b = 0; b < B; ++b) {
        std::vector<double> lls(Ts);
        for (std::size_t j = 0; j < Ts; ++j)
            lls[j] = static_cast<double>((*in.logliks.data)[b * Ts + j]) - norm;
        out[b] = -combine_mc(lls);
    }
    return out;
}

template <typename Real>
std::vector<double> ncll_per_example(const ImageSeqModel<Real>& m, const Bound<Real>& p,
                                     const ImageBatch<Real>& batch, int T, double sigma,
                                     RngStream& rng) {
    auto in = image_sample_logliks(m, p, batch, T, /*prior=*/true, sigma, rng);
    const std::size_t B = static_cast<std::size_t>(batch.B);
    const std::size_t Ts = static_cast<std::size_t>(T);
    const double norm = gaussian_log_normalizer(
        static_cast<std::size_t>(batch.t_fut) * static_cast<std::size_t>(batch.H) *
            static_cast<std::size_t>(batch.W),
        sigma);
    std::vector<double> out(B);
    for (std::size_t b = 0; b < B; ++b) {
        std::vector<double> lls(Ts);
        for (std::size_t j = 0; j < Ts; ++j)
            lls[j] = static_cast<double>((*in.logliks.data)[b * Ts + j]) - norm;
        out[b] = -combine_mc(lls);
    }
    return out;
}

inline double mean_of(const std::vector<double>& v) {
    double s = 0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

inline double median_of(std::vector<double> v) {
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// ---------------------------------------------------------------------------
// Oracle top-k% error
// ---------------------------------------------------------------------------

// samples: [T][t_fut][2] displacement futures; y: the true future. Samples
// are ranked by whole-sequence euclidean distance on absolute positions;
// the best ceil(topk_frac * T) contribute per-horizon euclidean errors.
inline std::vector<double> oracle_topk_error(
    const std::vector<std::vector<std::array<double, 2>>>& samples,
    const std::vector<std::array<double, 2>>& y, const EvalConfig& cfg) {
    const std::size_t T = samples.size();
    const std::size_t need = static_cast<std::size_t>(std::ceil(1.0 / cfg.topk_frac));
    if (T < need) throw TooFewSamples("oracle_topk_error: need at least " + std::to_string(need));
    const auto ypos = cumulative_positions(y);
    const int t_fut = static_cast<int>(y.size());

    std::vector<std::vector<std::array<double, 2>>> pos;
    pos.reserve(T);
    std::vector<double> dist(T);
    for (std::size_t j = 0; j < T; ++j) {
        pos.push_back(cumulative_positions(samples[j]));
        double d2 = 0;
        for (int t = 0; t < t_fut; ++t) {
            const double dx = pos[j][static_cast<std::size_t>(t)][0] - ypos[static_cast<std::size_t>(t)][0];
            const double dy = pos[j][static_cast<std::size_t>(t)][1] - ypos[static_cast<std::size_t>(t)][1];
            d2 += dx * dx + dy * dy;
        }
        dist[j] = std::sqrt(d2);
    }
    std::vector<std::size_t> order(T);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return dist[a] < dist[b]; });
    const std::size_t k = static_cast<std::size_t>(std::ceil(cfg.topk_frac * static_cast<double>(T)));

    std::vector<double> out;
    for (int h : cfg.effective_horizons(t_fut)) {
        double acc = 0;
        for (std::size_t r = 0; r < k; ++r) {
            const auto& pj = pos[order[r]][static_cast<std::size_t>(h)];
            const double dx = pj[0] - ypos[static_cast<std::size_t>(h)][0];
            const double dy = pj[1] - ypos[static_cast<std::size_t>(h)][1];
            acc += std::sqrt(dx * dx + dy * dy);
        }
        out.push_back(acc / static_cast<double>(k));
    }
    return out;
}

// ---------------------------------------------------------------------------
// k-means
// ---------------------------------------------------------------------------

struct KMeansResult {
    std::vector<int> labels;
    std::vector<std::vector<double>> centroids;
    std::vector<double> inertia_history;  // one entry per Lloyd iteration
};

// Lloyd's algorithm; init picks k distinct random points, assignment ties
// break to the lowest centroid index, empty clusters keep their centroid.
inline KMeansResult kmeans(const std::vector<std::vector<double>>& points, int k, int iters,
                           std::uint64_t seed) {
    const std::size_t n = points.size();
    if (k < 1 || static_cast<std::size_t>(k) > n)
        throw InvalidK("kmeans: need 1 <= k <= n, got k=" + std::to_string(k));
    const std::size_t dim = points.empty() ? 0 : points[0].size();

    RngStream rng(seed, 0x6b6d);
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    for (std::size_t i = 0; i < static_cast<std::size_t>(k); ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng.below(n - i));
        std::swap(idx[i], idx[j]);
    }
    KMeansResult res;
    for (int c = 0; c < k; ++c) res.centroids.push_back(points[idx[static_cast<std::size_t>(c)]]);
    res.labels.assign(n, 0);

    auto sq_dist = [&](const std::vector<double>& a, const std::vector<double>& b) {
        double d = 0;
        for (std::size_t i = 0; i < dim; ++i) d += (a[i] - b[i]) * (a[i] - b[i]);
        return d;
    };

    for (int it = 0; it < iters; ++it) {
        double inertia = 0;
        for (std::size_t i = 0; i < n; ++i) {
            int best = 0;
            double bd = sq_dist(points[i], res.centroids[0]);
            for (int c = 1; c < k; ++c) {
                const double d = sq_dist(points[i], res.centroids[static_cast<std::size_t>(c)]);
                if (d < bd) {
                    bd = d;
                    best = c;
                }
            }
            res.labels[i] = best;
            inertia += bd;
        }
        res.inertia_history.push_back(inertia);

        std::vector<std::vector<double>> next(static_cast<std::size_t>(k),
                                              std::vector<double>(dim, 0.0));
        std::vector<std::size_t> count(static_cast<std::size_t>(k), 0);
        for (std::size_t i = 0; i < n; ++i) {
            auto& c = next[static_cast<std::size_t>(res.labels[i])];
            for (std::size_t d = 0; d < dim; ++d) c[d] += points[i][d];
            ++count[static_cast<std::size_t>(res.labels[i])];
        }
        double shift = 0;
        for (int c = 0; c < k; ++c) {
            if (count[static_cast<std::size_t>(c)] == 0) continue;  // keep the old centroid
            for (std::size_t d = 0; d < dim; ++d)
                next[static_cast<std::size_t>(c)][d] /= static_cast<double>(count[static_cast<std::size_t>(c)]);
            shift += sq_dist(next[static_cast<std::size_t>(c)], res.centroids[static_cast<std::size_t>(c)]);
            res.centroids[static_cast<std::size_t>(c)] = next[static_cast<std::size_t>(c)];
        }
        if (shift < 1e-18) break;
    }
    return res;
}

// ---------------------------------------------------------------------------
// Forecast verification
// ---------------------------------------------------------------------------

struct ForecastScores {
    std::optional<double> csi, far, pod, correlation;
    long hits = 0, misses = 0, false_alarms = 0;
};

// Binarizes both fields at the threshold and counts pixelwise over the
// whole sequence. Degenerate denominators yield unset optionals.
inline ForecastScores forecast_metrics(const std::vector<std::vector<double>>& pred,
                                       const std::vector<std::vector<double>>& truth,
                                       double threshold) {
    if (pred.size() != truth.size()) throw ShapeMismatch("forecast_metrics: frame counts differ");
    ForecastScores s;
    double sp = 0, st = 0, spp = 0, stt = 0, spt = 0;
    long n = 0;
    for (std::size_t f = 0; f < pred.size(); ++f) {
        if (pred[f].size() != truth[f].size())
            throw ShapeMismatch("forecast_metrics: frame extents differ");
        for (std::size_t i = 0; i < pred[f].size(); ++i) {
            const bool p = pred[f][i] >= threshold;
            const bool t = truth[f][i] >= threshold;
            s.hits += p && t;
            s.misses += !p && t;
            s.false_alarms += p && !t;
            sp += pred[f][i];
            st += truth[f][i];
            spp += pred[f][i] * pred[f][i];
            stt += truth[f][i] * truth[f][i];
            spt += pred[f][i] * truth[f][i];
            ++n;
        }
    }
    const double denom_csi = static_cast<double>(s.hits + s.misses + s.false_alarms);
    const double denom_far = static_cast<double>(s.hits + s.false_alarms);
    const double denom_pod = static_cast<double>(s.hits + s.misses);
    if (denom_csi > 0) s.csi = static_cast<double>(s.hits) / denom_csi;
    if (denom_far > 0) s.far = static_cast<double>(s.false_alarms) / denom_far;
    if (denom_pod > 0) s.pod = static_cast<double>(s.hits) / denom_pod;
    if (n > 1) {
        const double cov = spt / n - (sp / n) * (st / n);
        const double vp = spp / n - (sp / n) * (sp / n);
        const double vt = stt / n - (st / n) * (st / n);
        if (vp > 0 && vt > 0) s.correlation = cov / std::sqrt(vp * vt);
    }
    return s;
}

// ---------------------------------------------------------------------------
// Sample statistics (best / mean / variance composites)
// ---------------------------------------------------------------------------

struct SampleStats {
    int best = -1;                                  // closest sample to the ground truth
    std::vector<std::vector<double>> mean_frames;   // per-pixel mean across samples
    std::vector<std::vector<double>> var_frames;    // per-pixel population variance
};

inline SampleStats sample_statistics(const std::vector<std::vector<std::vector<double>>>& samples,
                                     const std::vector<std::vector<double>>& truth) {
    if (samples.size() < 2) throw TooFewSamples("sample_statistics: need at least 2 samples");
    const std::size_t T = samples.size();
    const std::size_t frames = samples[0].size();
    SampleStats st;
    st.mean_frames.assign(frames, {});
    st.var_frames.assign(frames, {});
    double best_d = 1e300;
    for (std::size_t j = 0; j < T; ++j) {
        double d = 0;
        for (std::size_t f = 0; f < frames; ++f)
            for (std::size_t i = 0; i < samples[j][f].size(); ++i) {
                const double diff = samples[j][f][i] - truth[f][i];
                d += diff * diff;
            }
        if (d < best_d) {
            best_d = d;
            st.best = static_cast<int>(j);
        }
    }
    for (std::size_t f = 0; f < frames; ++f) {
        const std::size_t np = samples[0][f].size();
        st.mean_frames[f].assign(np, 0.0);
        st.var_frames[f].assign(np, 0.0);
        for (std::size_t j = 0; j < T; ++j)
            for (std::size_t i = 0; i < np; ++i) st.mean_frames[f][i] += samples[j][f][i];
        for (std::size_t i = 0; i < np; ++i) st.mean_frames[f][i] /= static_cast<double>(T);
        for (std::size_t j = 0; j < T; ++j)
            for (std::size_t i = 0; i < np; ++i) {
                const double d = samples[j][f][i] - st.mean_frames[f][i];
                st.var_frames[f][i] += d * d;
            }
        for (std::size_t i = 0; i < np; ++i) st.var_frames[f][i] /= static_cast<double>(T);
    }
    return st;
}

}  // namespace bms
