#pragma once

#include <cmath>
#include <vector>

#include "bms/errors.hpp"
#include "bms/kernels.hpp"
#include "bms/params.hpp"

namespace bms {

template <typename Real>
struct AdamConfig {
    Real lr = Real(1e-3);
    Real beta1 = Real(0.9);
    Real beta2 = Real(0.999);
    Real eps = Real(1e-8);
};

// Adam with bias correction; moment layout mirrors the parameter store, so
// updates are deterministic given a gradient sequence.
template <typename Real>
class Adam {
  public:
    explicit Adam(const ParamStore<Real>& store, AdamConfig<Real> cfg = {}) : cfg_(cfg) {
        for (const auto& p : store.items()) {
            m_.emplace_back(p.size(), Real(0));
            v_.emplace_back(p.size(), Real(0));
        }
    }

    void step(ParamStore<Real>& store, const std::vector<std::vector<Real>>& grads) {
        if (grads.size() != m_.size()) throw ShapeMismatch("adam: gradient list length");
        ++t_;
        const Real bc1 = Real(1) / (Real(1) - static_cast<Real>(std::pow(cfg_.beta1, t_)));
        const Real bc2 = Real(1) / (Real(1) - static_cast<Real>(std::pow(cfg_.beta2, t_)));
        const auto& K = kern::kernels<Real>();
        auto& items = store.items();
        for (std::size_t i = 0; i < items.size(); ++i) {
            if (grads[i].size() != items[i].size())
                throw ShapeMismatch("adam: gradient shape for " + items[i].name);
            K.adam(items[i].value->data(), m_[i].data(), v_[i].data(), grads[i].data(),
                   grads[i].size(), cfg_.lr, cfg_.beta1, cfg_.beta2, cfg_.eps, bc1, bc2);
        }
    }

    long timestep() const { return t_; }
    const AdamConfig<Real>& config() const { return cfg_; }

  private:
    AdamConfig<Real> cfg_;
    long t_ = 0;
    std::vector<std::vector<Real>> m_, v_;
};

}  // namespace bms
