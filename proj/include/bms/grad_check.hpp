#pragma once

// Central finite-difference oracle for tape gradients. The program under
// test must be deterministic given its captured inputs (draw any noise
// before building the closure).

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "bms/params.hpp"
#include "bms/tensor.hpp"

namespace bms {

struct GradCheckEntry {
    std::string name;
    double max_rel_err = 0.0;
    bool pass = true;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> params;
    double worst = 0.0;
    bool all_pass = true;

    std::string summary() const {
        std::string s;
        for (const auto& e : params)
            s += e.name + ": " + std::to_string(e.max_rel_err) + (e.pass ? " ok" : " FAIL") + "\n";
        return s;
    }
};

template <typename Real>
using LossProgram = std::function<Tensor<Real>(Tape<Real>*, const Bound<Real>&)>;

template <typename Real>
GradCheckReport grad_check(ParamStore<Real>& store, const LossProgram<Real>& f,
                           double h = 1e-5, double tol = 1e-4) {
    GradCheckReport report;

    // tape pass at the base point
    Tape<Real> tape;
    Bound<Real> bound(store, &tape);
    Tensor<Real> loss = f(&tape, bound);
    tape.backward(loss);

    std::vector<std::vector<Real>> analytic;
    for (auto& p : store.items()) analytic.push_back(tape.grad_of(bound[p]));

    auto eval = [&]() -> double {
        Bound<Real> b(store, nullptr);
        return static_cast<double>(f(nullptr, b).item());
    };

    for (std::size_t pi = 0; pi < store.items().size(); ++pi) {
        auto& p = store.items()[pi];
        GradCheckEntry entry;
        entry.name = p.name;
        for (std::size_t i = 0; i < p.size(); ++i) {
            const Real saved = (*p.value)[i];
            (*p.value)[i] = saved + static_cast<Real>(h);
            const double fp = eval();
            (*p.value)[i] = saved - static_cast<Real>(h);
            const double fm = eval();
            (*p.value)[i] = saved;
            const double fd = (fp - fm) / (2.0 * h);
            const double g = static_cast<double>(analytic[pi][i]);
            const double rel = std::abs(g - fd) / std::max({1.0, std::abs(g), std::abs(fd)});
            entry.max_rel_err = std::max(entry.max_rel_err, rel);
        }
        entry.pass = entry.max_rel_err <= tol;
        report.worst = std::max(report.worst, entry.max_rel_err);
        report.all_pass = report.all_pass && entry.pass;
        report.params.push_back(std::move(entry));
    }
    return report;
}

}  // namespace bms
