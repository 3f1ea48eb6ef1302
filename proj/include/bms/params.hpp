#pragma once

#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "bms/errors.hpp"
#include "bms/rng.hpp"
#include "bms/tensor.hpp"

namespace bms {

template <typename Real>
struct Param {
    int id = -1;
    std::string name;
    Shape shape;
    std::shared_ptr<std::vector<Real>> value;

    std::size_t size() const { return value->size(); }
};

// Named, insertion-ordered parameter container. The order fixes gradient
// readout, optimizer updates and checkpoint layout.
template <typename Real>
class ParamStore {
  public:
    Param<Real>& add(std::string name, Shape shape, std::vector<Real> init) {
        if (numel(shape) != init.size())
            throw ShapeMismatch("param " + name + ": init size does not match shape");
        if (find(name)) throw Error("duplicate parameter name: " + name);
        Param<Real> p;
        p.id = static_cast<int>(items_.size());
        p.name = std::move(name);
        p.shape = std::move(shape);
        p.value = std::make_shared<std::vector<Real>>(std::move(init));
        items_.push_back(std::move(p));
        return items_.back();
    }

    Param<Real>& add_zeros(std::string name, Shape shape) {
        std::vector<Real> z(numel(shape), Real(0));
        return add(std::move(name), std::move(shape), std::move(z));
    }

    Param<Real>* find(std::string_view name) {
        for (auto& p : items_)
            if (p.name == name) return &p;
        return nullptr;
    }
    const Param<Real>* find(std::string_view name) const {
        return const_cast<ParamStore*>(this)->find(name);
    }

    std::vector<Param<Real>>& items() { return items_; }
    const std::vector<Param<Real>>& items() const { return items_; }

    std::size_t total_size() const {
        std::size_t n = 0;
        for (const auto& p : items_) n += p.size();
        return n;
    }

  private:
    std::vector<Param<Real>> items_;
};

// Binds every parameter of a store to one tape (leaf tensors), or to none
// for pure evaluation. Index with the Param itself.
template <typename Real>
class Bound {
  public:
    Bound(ParamStore<Real>& store, Tape<Real>* tape) {
        tensors_.reserve(store.items().size());
        for (auto& p : store.items()) {
            if (tape) {
                tensors_.push_back(tape->watch(p.shape, p.value));
            } else {
                Tensor<Real> t(p.shape, p.value);
                tensors_.push_back(std::move(t));
            }
        }
    }

    const Tensor<Real>& operator[](const Param<Real>& p) const {
        return tensors_.at(static_cast<std::size_t>(p.id));
    }

    const Tensor<Real>& get(int id) const { return tensors_.at(static_cast<std::size_t>(id)); }

  private:
    std::vector<Tensor<Real>> tensors_;
};

inline double glorot_bound(std::size_t fan_in, std::size_t fan_out) {
    return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

template <typename Real>
std::vector<Real> glorot_uniform(std::size_t count, std::size_t fan_in, std::size_t fan_out,
                                 RngStream& rng) {
    const double b = glorot_bound(fan_in, fan_out);
    std::vector<Real> v(count);
    for (auto& x : v) x = static_cast<Real>(rng.uniform(-b, b));
    return v;
}

}  // namespace bms
