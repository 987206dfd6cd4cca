#pragma once

#include <cmath>
#include <string>

#include "attnprune/errors.hpp"
#include "attnprune/ops.hpp"

namespace attnprune {

/// Score nonlinearities. leaky_expo is the production choice; the sigmoid
/// variants exist for ablation: plain sigmoid never commits scores to 0/1,
/// and the hot sigmoid saturates so fast that score gradients die.
enum class ActivationKind { leaky_expo, leaky_2sigmoid, sigmoid, sigmoid_hot };

struct ActivationSpec {
    ActivationKind kind = ActivationKind::leaky_expo;
    double a = 0.01;   // leak slope for x >= 0
    double b = 100.0;  // temperature for sigmoid_hot

    void validate() const {
        if (a <= 0.0) throw config_error("activation: leak slope a must be > 0");
        if (b <= 0.0) throw config_error("activation: temperature b must be > 0");
    }
};

inline std::string activation_kind_name(ActivationKind k) {
    switch (k) {
        case ActivationKind::leaky_expo: return "leaky_expo";
        case ActivationKind::leaky_2sigmoid: return "leaky_2sigmoid";
        case ActivationKind::sigmoid: return "sigmoid";
        case ActivationKind::sigmoid_hot: return "sigmoid_hot";
    }
    return "?";
}

inline ActivationKind activation_kind_from_name(const std::string& s) {
    if (s == "leaky_expo") return ActivationKind::leaky_expo;
    if (s == "leaky_2sigmoid") return ActivationKind::leaky_2sigmoid;
    if (s == "sigmoid") return ActivationKind::sigmoid;
    if (s == "sigmoid_hot") return ActivationKind::sigmoid_hot;
    throw config_error("activation: unknown kind '" + s + "'");
}

/// exp(x) below zero, 1 + a*x at and above zero. Both branches meet at 1, the
/// derivative is positive everywhere, and the range never touches 0, so score
/// gradients cannot die and scores above 1 stay reachable.
template <typename T>
T leaky_expo(T x, T a = T(0.01)) {
    return x < T(0) ? std::exp(x) : T(1) + a * x;
}

template <typename T>
T leaky_expo_derivative(T x, T a = T(0.01)) {
    return x < T(0) ? std::exp(x) : a;
}

template <typename T>
T sigmoid(T x) {
    if (x >= T(0)) {
        const T e = std::exp(-x);
        return T(1) / (T(1) + e);
    }
    const T e = std::exp(x);
    return e / (T(1) + e);
}

template <typename T>
T activation_value(const ActivationSpec& spec, T x) {
    const T a = static_cast<T>(spec.a);
    switch (spec.kind) {
        case ActivationKind::leaky_expo:
            return leaky_expo(x, a);
        case ActivationKind::leaky_2sigmoid:
            return x < T(0) ? T(2) * sigmoid(x) : T(1) + a * x;
        case ActivationKind::sigmoid:
            return sigmoid(x);
        case ActivationKind::sigmoid_hot:
            return sigmoid(static_cast<T>(spec.b) * x);
    }
    return T(0);
}

template <typename T>
T activation_derivative(const ActivationSpec& spec, T x) {
    const T a = static_cast<T>(spec.a);
    switch (spec.kind) {
        case ActivationKind::leaky_expo:
            return leaky_expo_derivative(x, a);
        case ActivationKind::leaky_2sigmoid: {
            if (x >= T(0)) return a;
            const T s = sigmoid(x);
            return T(2) * s * (T(1) - s);
        }
        case ActivationKind::sigmoid: {
            const T s = sigmoid(x);
            return s * (T(1) - s);
        }
        case ActivationKind::sigmoid_hot: {
            const T bt = static_cast<T>(spec.b);
            const T s = sigmoid(bt * x);
            return bt * s * (T(1) - s);
        }
    }
    return T(0);
}

/// Elementwise, differentiable application of a score activation.
template <typename T>
Tensor<T> apply_activation(const Tensor<T>& x, const ActivationSpec& spec) {
    spec.validate();
    return map_unary(
        x, [spec](T v) { return activation_value(spec, v); },
        [spec](T v) { return activation_derivative(spec, v); });
}

}  // namespace attnprune
