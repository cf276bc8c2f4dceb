#pragma once

#include <map>
#include <string>
#include <vector>

#include "cellbloom/nn/parameters.hpp"

namespace cellbloom::nn {

struct AdamOptions {
    double lr = 2e-4;
    double beta1 = 0.5;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Adam with bias correction over one ParameterSet. Parameters without a
// gradient in a step are skipped and keep their moment estimates.
template <typename T>
class Adam {
public:
    Adam(ParameterSet<T>& params, AdamOptions options);

    void step();
    void zero_grad() { params_->zero_grad(); }

    void set_lr(double lr) { options_.lr = lr; }
    double lr() const { return options_.lr; }
    long long steps() const { return step_; }
    const AdamOptions& options() const { return options_; }

    // Moments as "m:<param>" / "v:<param>" plus a scalar "step".
    std::map<std::string, Tensor<T>> state() const;
    void load_state(const std::map<std::string, Tensor<T>>& state);

private:
    ParameterSet<T>* params_;
    AdamOptions options_;
    std::vector<Tensor<T>> m_;
    std::vector<Tensor<T>> v_;
    long long step_ = 0;
};

}  // namespace cellbloom::nn
