#pragma once

#include <vector>

#include "cellbloom/nn/autograd.hpp"

namespace cellbloom::nn {

struct ConvGeometry {
    int stride = 1;
    int padding = 0;
};

// x: (N, Cin, H, W), weight: (Cout, Cin, K, K), bias: (Cout) or undefined. Zero padding.
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, ConvGeometry geom);

// x: (N, Cin, H, W), weight: (Cin, Cout, K, K).
// Output side = (H - 1) * stride - 2 * padding + K + output_padding.
template <typename T>
Var<T> conv_transpose2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, ConvGeometry geom,
                        int output_padding);

template <typename T>
Var<T> reflection_pad2d(const Var<T>& x, int pad);

// Per-sample, per-channel normalization without affine terms.
template <typename T>
Var<T> instance_norm2d(const Var<T>& x, double eps = 1e-5);

// Views onto running statistics owned by a ParameterSet.
template <typename T>
struct BatchNormStats {
    Tensor<T>* running_mean = nullptr;
    Tensor<T>* running_var = nullptr;
};

// Training mode normalizes with batch statistics and updates `stats`;
// evaluation mode uses the running statistics.
template <typename T>
Var<T> batch_norm2d(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, BatchNormStats<T> stats,
                    bool training, double momentum = 0.1, double eps = 1e-5);

template <typename T>
Var<T> relu(const Var<T>& x);

template <typename T>
Var<T> leaky_relu(const Var<T>& x, double slope);

template <typename T>
Var<T> tanh(const Var<T>& x);

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b);

template <typename T>
Var<T> scale(const Var<T>& a, double s);

template <typename T>
Var<T> max_pool2d(const Var<T>& x, int kernel, int stride, int padding);

// (N, C, H, W) -> (N, C)
template <typename T>
Var<T> global_avg_pool2d(const Var<T>& x);

// x: (N, F), weight: (O, F), bias: (O)
template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias);

// mean((x - target)^2) as a scalar.
template <typename T>
Var<T> mse_to_constant(const Var<T>& x, double target);

// mean(|a - b|) as a scalar. The subgradient at 0 is 0.
template <typename T>
Var<T> l1_loss(const Var<T>& a, const Var<T>& b);

// Mean softmax cross-entropy of logits (N, K) against class indices.
template <typename T>
Var<T> cross_entropy(const Var<T>& logits, const std::vector<int>& labels);

// Row-wise softmax of (N, K).
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& logits);

template <typename T>
inline Var<T> operator+(const Var<T>& a, const Var<T>& b) {
    return add(a, b);
}

template <typename T>
inline Var<T> operator*(double s, const Var<T>& a) {
    return scale(a, s);
}

}  // namespace cellbloom::nn
