#include "cellbloom/nn/parameters.hpp"

#include <cmath>
#include <stdexcept>

namespace cellbloom::nn {

template <typename T>
Var<T> ParameterSet<T>::add_parameter(const std::string& name, Tensor<T> init) {
    for (const auto& [existing, _] : params_) {
        if (existing == name) throw std::logic_error("duplicate parameter name " + name);
    }
    Var<T> v(std::move(init), true);
    params_.emplace_back(name, v);
    return v;
}

template <typename T>
Tensor<T>& ParameterSet<T>::add_buffer(const std::string& name, Tensor<T> init) {
    auto [it, inserted] = buffers_.emplace(name, std::move(init));
    if (!inserted) throw std::logic_error("duplicate buffer name " + name);
    buffer_order_.push_back(name);
    return it->second;
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>*>> ParameterSet<T>::buffers() {
    std::vector<std::pair<std::string, Tensor<T>*>> out;
    for (const auto& name : buffer_order_) out.emplace_back(name, &buffers_.at(name));
    return out;
}

template <typename T>
std::vector<std::pair<std::string, const Tensor<T>*>> ParameterSet<T>::buffers() const {
    std::vector<std::pair<std::string, const Tensor<T>*>> out;
    for (const auto& name : buffer_order_) out.emplace_back(name, &buffers_.at(name));
    return out;
}

template <typename T>
std::vector<Var<T>> ParameterSet<T>::trainable() const {
    std::vector<Var<T>> out;
    out.reserve(params_.size());
    for (const auto& [_, v] : params_) out.push_back(v);
    return out;
}

template <typename T>
std::size_t ParameterSet<T>::parameter_count() const {
    std::size_t n = 0;
    for (const auto& [_, v] : params_) n += v.value().size();
    return n;
}

template <typename T>
void ParameterSet<T>::zero_grad() {
    for (auto& [_, v] : params_) v.zero_grad();
}

template <typename T>
void ParameterSet<T>::set_requires_grad(bool requires_grad) {
    for (auto& [_, v] : params_) v.node()->requires_grad = requires_grad;
}

template <typename T>
std::map<std::string, Tensor<T>> ParameterSet<T>::state() const {
    std::map<std::string, Tensor<T>> out;
    for (const auto& [name, v] : params_) out.emplace(name, v.value());
    for (const auto& [name, t] : buffers_) out.emplace("buffer:" + name, t);
    return out;
}

template <typename T>
void ParameterSet<T>::load_state(const std::map<std::string, Tensor<T>>& state) {
    auto fetch = [&](const std::string& key, const Shape& expected) -> const Tensor<T>& {
        auto it = state.find(key);
        if (it == state.end()) throw std::runtime_error("state is missing tensor " + key);
        if (it->second.shape() != expected) {
            throw ShapeError("state tensor " + key + " has shape " + shape_to_string(it->second.shape()) +
                             ", expected " + shape_to_string(expected));
        }
        return it->second;
    };
    for (auto& [name, v] : params_) v.mutable_value() = fetch(name, v.shape());
    for (auto& [name, t] : buffers_) t = fetch("buffer:" + name, t.shape());
}

template <typename T>
Tensor<T> normal_tensor(Shape shape, double mean, double stddev, std::mt19937_64& rng) {
    Tensor<T> t(std::move(shape));
    std::normal_distribution<double> dist(mean, stddev);
    for (auto& v : t.values()) v = static_cast<T>(dist(rng));
    return t;
}

template <typename T>
Tensor<T> kaiming_normal_fan_out(Shape shape, std::mt19937_64& rng) {
    std::size_t fan_out = static_cast<std::size_t>(shape.at(0));
    for (std::size_t i = 2; i < shape.size(); ++i) fan_out *= static_cast<std::size_t>(shape[i]);
    return normal_tensor<T>(std::move(shape), 0.0, std::sqrt(2.0 / static_cast<double>(fan_out)), rng);
}

template <typename T>
Tensor<T> uniform_tensor(Shape shape, double lo, double hi, std::mt19937_64& rng) {
    Tensor<T> t(std::move(shape));
    std::uniform_real_distribution<double> dist(lo, hi);
    for (auto& v : t.values()) v = static_cast<T>(dist(rng));
    return t;
}

template class ParameterSet<float>;
template class ParameterSet<double>;
template Tensor<float> normal_tensor<float>(Shape, double, double, std::mt19937_64&);
template Tensor<double> normal_tensor<double>(Shape, double, double, std::mt19937_64&);
template Tensor<float> kaiming_normal_fan_out<float>(Shape, std::mt19937_64&);
template Tensor<double> kaiming_normal_fan_out<double>(Shape, std::mt19937_64&);
template Tensor<float> uniform_tensor<float>(Shape, double, double, std::mt19937_64&);
template Tensor<double> uniform_tensor<double>(Shape, double, double, std::mt19937_64&);

}  // namespace cellbloom::nn
