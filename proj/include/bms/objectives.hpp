#pragma once

// The decoder likelihood and the family of sampling objectives. Each
// objective exists twice: as plain-double combine_* functions (used for
// reports, property tests and recomputation) and as tape ops inside
// combine_objective (used for training). The two routes agree to rounding
// error by construction: same reduction order, same stabilized logsumexp.

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "bms/errors.hpp"
#include "bms/tensor.hpp"

namespace bms {

enum class ObjectiveKind { regression, mc, cvae, ms, bms, hybrid, prior_bms };

inline const char* to_string(ObjectiveKind k) {
    switch (k) {
        case ObjectiveKind::regression: return "regression";
        case ObjectiveKind::mc: return "mc";
        case ObjectiveKind::cvae: return "cvae";
        case ObjectiveKind::ms: return "ms";
        case ObjectiveKind::bms: return "bms";
        case ObjectiveKind::hybrid: return "hybrid";
        case ObjectiveKind::prior_bms: return "prior_bms";
    }
    return "?";
}

inline ObjectiveKind objective_from_string(const std::string& s) {
    if (s == "regression") return ObjectiveKind::regression;
    if (s == "mc") return ObjectiveKind::mc;
    if (s == "cvae") return ObjectiveKind::cvae;
    if (s == "ms") return ObjectiveKind::ms;
    if (s == "bms") return ObjectiveKind::bms;
    if (s == "hybrid") return ObjectiveKind::hybrid;
    if (s == "prior_bms") return ObjectiveKind::prior_bms;
    throw ConfigError("unknown objective: " + s);
}

inline bool objective_uses_recognition(ObjectiveKind k) {
    return k == ObjectiveKind::cvae || k == ObjectiveKind::ms || k == ObjectiveKind::bms ||
           k == ObjectiveKind::hybrid;
}

// ---------- decoder likelihood ----------

struct LikelihoodConfig {
    double sigma_dec = 1.0;          // isotropic decoder noise scale
    bool include_normalizer = false; // off for training (constant in theta), on for CLL
};

inline double gaussian_log_normalizer(std::size_t dims, double sigma) {
    return 0.5 * static_cast<double>(dims) * std::log(2.0 * M_PI * sigma * sigma);
}

// log N(y; y_hat, sigma^2 I) up to the optional normalizer, as a tape scalar.
template <typename Real>
Tensor<Real> decoder_loglik(const Tensor<Real>& pred, const Tensor<Real>& target,
                            const LikelihoodConfig& cfg) {
    require(pred.shape == target.shape, "decoder_loglik: prediction/target shapes differ");
    if (!(cfg.sigma_dec > 0)) throw DomainError("decoder_loglik: sigma_dec must be positive");
    auto sse = ops::sum(ops::square(ops::sub(pred, target)));
    auto ll = ops::scale(sse, Real(-1.0 / (2.0 * cfg.sigma_dec * cfg.sigma_dec)));
    if (cfg.include_normalizer)
        ll = ops::add_const(ll, Real(-gaussian_log_normalizer(pred.size(), cfg.sigma_dec)));
    return ll;
}

// ---------- plain-double objective algebra ----------

inline double logsumexp_vals(std::span<const double> v) {
    if (v.empty()) throw EmptyInput("logsumexp of empty input");
    double m = v[0];
    for (double x : v) m = x > m ? x : m;
    double s = 0;
    for (double x : v) s += std::exp(x - m);
    return m + std::log(s);
}

inline double combine_mc(std::span<const double> logliks) {
    return logsumexp_vals(logliks) - std::log(static_cast<double>(logliks.size()));
}

inline double combine_cvae(std::span<const double> logliks, double kl) {
    if (logliks.empty()) throw EmptyInput("cvae of empty sample set");
    double s = 0;
    for (double x : logliks) s += x;
    return s / static_cast<double>(logliks.size()) - kl;
}

inline double combine_ms(std::span<const double> logliks, double kl) {
    return combine_mc(logliks) - kl;
}

inline double combine_bms(std::span<const double> logliks, double kl, int* best = nullptr) {
    if (logliks.empty()) throw EmptyInput("bms of empty sample set");
    std::size_t arg = 0;
    for (std::size_t i = 1; i < logliks.size(); ++i)
        if (logliks[i] > logliks[arg]) arg = i;
    if (best) *best = static_cast<int>(arg);
    return logliks[arg] - std::log(static_cast<double>(logliks.size())) - kl;
}

inline double combine_prior_bms(std::span<const double> logliks, int* best = nullptr) {
    if (logliks.empty()) throw EmptyInput("prior_bms of empty sample set");
    std::size_t arg = 0;
    for (std::size_t i = 1; i < logliks.size(); ++i)
        if (logliks[i] > logliks[arg]) arg = i;
    if (best) *best = static_cast<int>(arg);
    return logliks[arg];
}

inline double combine_hybrid(double value_mc, double value_cvae, double alpha) {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw InvalidAlpha("alpha must lie in [0,1]");
    return (1.0 - alpha) * value_mc + alpha * value_cvae;
}

// ---------- per-step report ----------

struct ObjectiveReport {
    ObjectiveKind kind = ObjectiveKind::mc;
    double value = 0.0;   // batch objective (mean over examples)
    double alpha = 0.0;   // hybrid only
    std::vector<std::vector<double>> per_sample_loglik;     // [B][T]
    std::vector<std::vector<double>> per_sample_loglik_mc;  // hybrid only
    std::vector<double> kl;                                 // [B]; empty when no recognition net
    std::vector<int> best_index;                            // [B]; bms and prior_bms only

    double mean_kl() const {
        if (kl.empty()) return 0.0;
        double s = 0;
        for (double k : kl) s += k;
        return s / static_cast<double>(kl.size());
    }

    void loglik_stats(double& mn, double& mean, double& mx) const {
        mn = 1e300;
        mx = -1e300;
        double s = 0;
        std::size_t n = 0;
        for (const auto& row : per_sample_loglik)
            for (double v : row) {
                mn = std::min(mn, v);
                mx = std::max(mx, v);
                s += v;
                ++n;
            }
        mean = n ? s / static_cast<double>(n) : 0.0;
        if (!n) mn = mx = 0.0;
    }

    // The objective value recomputed from the stored pieces through the
    // plain-double route.
    double recompute() const {
        const std::size_t B = per_sample_loglik.size();
        double acc = 0;
        for (std::size_t b = 0; b < B; ++b) {
            const auto& row = per_sample_loglik[b];
            const double klb = kl.empty() ? 0.0 : kl[b];
            switch (kind) {
                case ObjectiveKind::regression: acc += combine_cvae(row, 0.0); break;
                case ObjectiveKind::mc: acc += combine_mc(row); break;
                case ObjectiveKind::cvae: acc += combine_cvae(row, klb); break;
                case ObjectiveKind::ms: acc += combine_ms(row, klb); break;
                case ObjectiveKind::bms: acc += combine_bms(row, klb); break;
                case ObjectiveKind::prior_bms: acc += combine_prior_bms(row); break;
                case ObjectiveKind::hybrid:
                    acc += combine_hybrid(combine_mc(per_sample_loglik_mc[b]), combine_cvae(row, klb),
                                          alpha);
                    break;
            }
        }
        return B ? acc / static_cast<double>(B) : 0.0;
    }
};

// ---------- tape combination ----------

template <typename Real>
struct ObjectiveInputs {
    Tensor<Real> logliks;  // [B, T] per-sample decoder log-likelihoods
    Tensor<Real> kl;       // [B] when a recognition net is present
    bool has_kl = false;
};

template <typename Real>
struct ObjectiveOutcome {
    Tensor<Real> loss;   // scalar, = -value
    Tensor<Real> value;  // scalar objective
    ObjectiveReport report;
};

namespace detail {

template <typename Real>
void fill_report_base(ObjectiveReport& rep, const ObjectiveInputs<Real>& in) {
    const std::size_t B = static_cast<std::size_t>(in.logliks.shape[0]);
    const std::size_t T = static_cast<std::size_t>(in.logliks.shape[1]);
    rep.per_sample_loglik.assign(B, {});
    for (std::size_t b = 0; b < B; ++b) {
        rep.per_sample_loglik[b].assign(T, 0.0);
        for (std::size_t t = 0; t < T; ++t)
            rep.per_sample_loglik[b][t] = static_cast<double>((*in.logliks.data)[b * T + t]);
    }
    if (in.has_kl) {
        rep.kl.assign(B, 0.0);
        for (std::size_t b = 0; b < B; ++b) rep.kl[b] = static_cast<double>((*in.kl.data)[b]);
    }
}

}  // namespace detail

// Builds the scalar objective from per-sample logliks (and the KL term for
// recognition-based kinds). The batch objective is the mean over examples.
template <typename Real>
ObjectiveOutcome<Real> combine_objective(ObjectiveKind kind, const ObjectiveInputs<Real>& in,
                                         double alpha = 0.5,
                                         const ObjectiveInputs<Real>* mc_in = nullptr) {
    require(in.logliks.rank() == 2, "combine_objective: logliks must be [B,T]");
    const int T = in.logliks.shape[1];
    const Real neg_log_t = Real(-std::log(static_cast<double>(T)));
    ObjectiveOutcome<Real> out;
    out.report.kind = kind;
    detail::fill_report_base(out.report, in);

    Tensor<Real> per_ex;
    std::vector<int> args;
    switch (kind) {
        case ObjectiveKind::regression:
            per_ex = ops::row_mean(in.logliks);
            break;
        case ObjectiveKind::mc:
            per_ex = ops::add_const(ops::row_logsumexp(in.logliks), neg_log_t);
            break;
        case ObjectiveKind::cvae:
            per_ex = ops::sub(ops::row_mean(in.logliks), in.kl);
            break;
        case ObjectiveKind::ms:
            per_ex = ops::sub(ops::add_const(ops::row_logsumexp(in.logliks), neg_log_t), in.kl);
            break;
        case ObjectiveKind::bms:
            per_ex = ops::add_const(ops::row_max(in.logliks, &args), neg_log_t);
            if (in.has_kl) per_ex = ops::sub(per_ex, in.kl);
            out.report.best_index = args;
            break;
        case ObjectiveKind::prior_bms:
            per_ex = ops::row_max(in.logliks, &args);
            out.report.best_index = args;
            break;
        case ObjectiveKind::hybrid: {
            if (!(alpha >= 0.0 && alpha <= 1.0)) throw InvalidAlpha("alpha must lie in [0,1]");
            if (!mc_in) throw Error("hybrid objective needs the prior-sample branch");
            auto cvae_per_ex = ops::sub(ops::row_mean(in.logliks), in.kl);
            auto mc_per_ex = ops::add_const(ops::row_logsumexp(mc_in->logliks),
                                            Real(-std::log(static_cast<double>(mc_in->logliks.shape[1]))));
            auto value = ops::add(ops::scale(ops::mean(mc_per_ex), Real(1.0 - alpha)),
                                  ops::scale(ops::mean(cvae_per_ex), Real(alpha)));
            out.report.alpha = alpha;
            out.report.per_sample_loglik_mc.assign(
                static_cast<std::size_t>(mc_in->logliks.shape[0]), {});
            const std::size_t Tm = static_cast<std::size_t>(mc_in->logliks.shape[1]);
            for (std::size_t b = 0; b < out.report.per_sample_loglik_mc.size(); ++b) {
                out.report.per_sample_loglik_mc[b].assign(Tm, 0.0);
                for (std::size_t t = 0; t < Tm; ++t)
                    out.report.per_sample_loglik_mc[b][t] =
                        static_cast<double>((*mc_in->logliks.data)[b * Tm + t]);
            }
            out.value = value;
            out.loss = ops::neg(value);
            out.report.value = static_cast<double>(value.item());
            return out;
        }
    }
    if ((kind == ObjectiveKind::cvae || kind == ObjectiveKind::ms) && !in.has_kl)
        throw Error("objective requires a recognition KL term");

    out.value = ops::mean(per_ex);
    out.loss = ops::neg(out.value);
    out.report.value = static_cast<double>(out.value.item());
    return out;
}

}  // namespace bms
