#pragma once

#include <map>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "cellbloom/nn/autograd.hpp"

namespace cellbloom::nn {

// Ordered registry of a network's trainable parameters and persistent buffers.
// Names are dotted paths ("down1.conv.weight"); registration order is stable.
template <typename T>
class ParameterSet {
public:
    Var<T> add_parameter(const std::string& name, Tensor<T> init);
    Tensor<T>& add_buffer(const std::string& name, Tensor<T> init);

    const std::vector<std::pair<std::string, Var<T>>>& parameters() const { return params_; }
    std::vector<std::pair<std::string, Tensor<T>*>> buffers();
    std::vector<std::pair<std::string, const Tensor<T>*>> buffers() const;

    std::vector<Var<T>> trainable() const;
    std::size_t parameter_count() const;
    void zero_grad();
    // Freezes or unfreezes every parameter.
    void set_requires_grad(bool requires_grad);

    // Parameters and buffers under one namespace (buffers are prefixed "buffer:").
    std::map<std::string, Tensor<T>> state() const;
    // Missing or mis-shaped entries throw.
    void load_state(const std::map<std::string, Tensor<T>>& state);

private:
    std::vector<std::pair<std::string, Var<T>>> params_;
    // std::map keeps buffer addresses stable.
    std::map<std::string, Tensor<T>> buffers_;
    std::vector<std::string> buffer_order_;
};

template <typename T>
Tensor<T> normal_tensor(Shape shape, double mean, double stddev, std::mt19937_64& rng);

// Kaiming-normal for ReLU networks, fan_out mode.
template <typename T>
Tensor<T> kaiming_normal_fan_out(Shape shape, std::mt19937_64& rng);

template <typename T>
Tensor<T> uniform_tensor(Shape shape, double lo, double hi, std::mt19937_64& rng);

}  // namespace cellbloom::nn
