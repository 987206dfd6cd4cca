#pragma once

#include <cmath>
#include <vector>

#include "attnprune/tensor.hpp"

namespace attnprune {

struct SgdConfig {
    double lr = 0.1;
    double momentum = 0.9;
    double weight_decay = 5e-4;
};

struct AdamConfig {
    double lr = 1e-6;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Momentum SGD with classic (coupled) weight decay:
/// v <- momentum*v + (g + wd*w); w <- w - lr*v.
template <typename T>
class SgdMomentum {
public:
    SgdMomentum(std::vector<Tensor<T>> params, SgdConfig cfg)
        : params_(std::move(params)), cfg_(cfg) {
        for (const auto& p : params_) velocity_.emplace_back(p.numel(), T(0));
    }

    void step() {
        for (std::size_t pi = 0; pi < params_.size(); ++pi) {
            auto& p = params_[pi];
            if (!p.requires_grad()) continue;
            auto& w = p.value();
            const auto& g = p.grad();
            auto& v = velocity_[pi];
            for (std::size_t i = 0; i < w.size(); ++i) {
                v[i] = static_cast<T>(cfg_.momentum) * v[i] + g[i] +
                       static_cast<T>(cfg_.weight_decay) * w[i];
                w[i] -= static_cast<T>(cfg_.lr) * v[i];
            }
        }
    }

    void zero_grad() {
        for (auto& p : params_) p.zero_grad();
    }

    double learning_rate() const { return cfg_.lr; }

private:
    std::vector<Tensor<T>> params_;
    std::vector<std::vector<T>> velocity_;
    SgdConfig cfg_;
};

/// Adam with bias correction; first/second moment state persists across the
/// alternating cycles so the score network resumes where it stopped.
template <typename T>
class Adam {
public:
    Adam(std::vector<Tensor<T>> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
        for (const auto& p : params_) {
            m_.emplace_back(p.numel(), T(0));
            v_.emplace_back(p.numel(), T(0));
        }
    }

    void step() {
        ++t_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
        const double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
        for (std::size_t pi = 0; pi < params_.size(); ++pi) {
            auto& p = params_[pi];
            if (!p.requires_grad()) continue;
            auto& w = p.value();
            const auto& g = p.grad();
            auto& m = m_[pi];
            auto& v = v_[pi];
            for (std::size_t i = 0; i < w.size(); ++i) {
                m[i] = static_cast<T>(cfg_.beta1) * m[i] +
                       static_cast<T>(1.0 - cfg_.beta1) * g[i];
                v[i] = static_cast<T>(cfg_.beta2) * v[i] +
                       static_cast<T>(1.0 - cfg_.beta2) * g[i] * g[i];
                const double mhat = m[i] / bc1;
                const double vhat = v[i] / bc2;
                w[i] -= static_cast<T>(cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps));
            }
        }
    }

    void zero_grad() {
        for (auto& p : params_) p.zero_grad();
    }

    double learning_rate() const { return cfg_.lr; }

private:
    std::vector<Tensor<T>> params_;
    std::vector<std::vector<T>> m_;
    std::vector<std::vector<T>> v_;
    AdamConfig cfg_;
    long t_ = 0;
};

}  // namespace attnprune
