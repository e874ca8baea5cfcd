#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "costpred/tensor.hpp"

namespace costpred::ag {

template <typename T>
struct NamedParam {
    std::string name;
    Tensor<T> value;
};

// Named parameter registry shared by the models and the checkpoint writer.
template <typename T>
struct ParamStore {
    std::vector<NamedParam<T>> items;

    Tensor<T>& add(const std::string& name, Tensor<T> init) {
        items.push_back({name, std::move(init)});
        return items.back().value;
    }
    Tensor<T>* find(const std::string& name) {
        for (auto& p : items)
            if (p.name == name) return &p.value;
        return nullptr;
    }
    std::int64_t count() const {
        std::int64_t n = 0;
        for (const auto& p : items) n += p.value.size();
        return n;
    }
};

enum class OptimizerKind { Adam, Sgd };

// Adam with the usual bias correction; SGD is the plain update.
template <typename T>
class Optimizer {
  public:
    Optimizer(OptimizerKind kind, T lr, T beta1 = T(0.9), T beta2 = T(0.999), T eps = T(1e-8))
        : kind_(kind), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    void step(ParamStore<T>& params, const std::vector<Tensor<T>>& grads) {
        if (grads.size() != params.items.size()) throw std::invalid_argument("optimizer: grad count mismatch");
        if (kind_ == OptimizerKind::Adam && m_.empty()) {
            for (const auto& p : params.items) {
                m_.emplace_back(p.value.shape);
                v_.emplace_back(p.value.shape);
            }
        }
        t_++;
        for (size_t i = 0; i < params.items.size(); i++) {
            auto& w = params.items[i].value.v;
            const auto& g = grads[i].v;
            if (g.size() != w.size()) throw std::invalid_argument("optimizer: grad shape mismatch for " + params.items[i].name);
            if (kind_ == OptimizerKind::Sgd) {
                for (size_t j = 0; j < w.size(); j++) w[j] -= lr_ * g[j];
            } else {
                auto& m = m_[i].v;
                auto& v = v_[i].v;
                const T bc1 = T(1) - std::pow(beta1_, static_cast<T>(t_));
                const T bc2 = T(1) - std::pow(beta2_, static_cast<T>(t_));
                for (size_t j = 0; j < w.size(); j++) {
                    m[j] = beta1_ * m[j] + (T(1) - beta1_) * g[j];
                    v[j] = beta2_ * v[j] + (T(1) - beta2_) * g[j] * g[j];
                    w[j] -= lr_ * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + eps_);
                }
            }
        }
    }

    T lr() const { return lr_; }

  private:
    OptimizerKind kind_;
    T lr_, beta1_, beta2_, eps_;
    long t_ = 0;
    std::vector<Tensor<T>> m_, v_;
};

}  // namespace costpred::ag
