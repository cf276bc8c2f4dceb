#include "cellbloom/nn/adam.hpp"

#include <cmath>
#include <stdexcept>

namespace cellbloom::nn {

template <typename T>
Adam<T>::Adam(ParameterSet<T>& params, AdamOptions options) : params_(&params), options_(options) {
    for (const auto& [_, v] : params.parameters()) {
        m_.emplace_back(v.shape());
        v_.emplace_back(v.shape());
    }
}

template <typename T>
void Adam<T>::step() {
    ++step_;
    const double b1 = options_.beta1, b2 = options_.beta2;
    const double correction1 = 1.0 - std::pow(b1, static_cast<double>(step_));
    const double correction2 = 1.0 - std::pow(b2, static_cast<double>(step_));
    const double step_size = options_.lr / correction1;
    const double sqrt_c2 = std::sqrt(correction2);
    const auto& params = params_->parameters();
    for (std::size_t k = 0; k < params.size(); ++k) {
        Var<T> p = params[k].second;
        const Tensor<T>& g = p.grad();
        if (g.size() != p.value().size()) continue;
        T* w = p.mutable_value().data();
        T* m = m_[k].data();
        T* v = v_[k].data();
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double gi = g[i];
            m[i] = static_cast<T>(b1 * m[i] + (1.0 - b1) * gi);
            v[i] = static_cast<T>(b2 * v[i] + (1.0 - b2) * gi * gi);
            const double denom = std::sqrt(static_cast<double>(v[i])) / sqrt_c2 + options_.eps;
            w[i] = static_cast<T>(w[i] - step_size * m[i] / denom);
        }
    }
}

template <typename T>
std::map<std::string, Tensor<T>> Adam<T>::state() const {
    std::map<std::string, Tensor<T>> out;
    const auto& params = params_->parameters();
    for (std::size_t k = 0; k < params.size(); ++k) {
        out.emplace("m:" + params[k].first, m_[k]);
        out.emplace("v:" + params[k].first, v_[k]);
    }
    out.emplace("step", Tensor<T>({1}, static_cast<T>(step_)));
    return out;
}

template <typename T>
void Adam<T>::load_state(const std::map<std::string, Tensor<T>>& state) {
    const auto& params = params_->parameters();
    for (std::size_t k = 0; k < params.size(); ++k) {
        for (auto [prefix, dst] : {std::pair{std::string("m:"), &m_[k]}, std::pair{std::string("v:"), &v_[k]}}) {
            const std::string key = prefix + params[k].first;
            auto it = state.find(key);
            if (it == state.end()) throw std::runtime_error("optimizer state missing " + key);
            if (it->second.shape() != dst->shape()) throw ShapeError("optimizer state shape mismatch for " + params[k].first);
            *dst = it->second;
        }
    }
    auto it = state.find("step");
    if (it == state.end()) throw std::runtime_error("optimizer state missing step");
    step_ = static_cast<long long>(std::llround(static_cast<double>(it->second[0])));
}

template class Adam<float>;
template class Adam<double>;

}  // namespace cellbloom::nn
