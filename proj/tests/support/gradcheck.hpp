#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "cellbloom/random.hpp"
#include "cellbloom/transfer/cyclegan.hpp"

namespace cellbloom::test_support {

struct GradSample {
    std::string parameter;
    std::size_t element = 0;
    double analytic = 0.0;
    double numeric = 0.0;
    double relative_error = 0.0;
};

struct GradCheckReport {
    std::vector<GradSample> samples;
    double max_relative_error = 0.0;
};

inline double relative_error(double analytic, double numeric) {
    const double scale = std::max(std::abs(analytic), std::abs(numeric));
    return scale == 0.0 ? 0.0 : std::abs(analytic - numeric) / scale;
}

// Tiny pair used by the gradient checks: 8x8 inputs, width-4 networks, one
// stride-2 discriminator stage and no image pool.
inline transfer::TransferConfig gradcheck_config(std::uint64_t seed) {
    transfer::TransferConfig cfg;
    cfg.image_size = 8;
    cfg.batch_size = 2;
    cfg.generator = {3, 4, 1};
    cfg.discriminator = {3, 4, 1};
    cfg.pool_capacity = 0;
    cfg.seed = seed;
    return cfg;
}

// Copies every parameter of `from` into `to` (same architecture), converting
// element types.
template <typename To, typename From>
void copy_parameters(nn::ParameterSet<To>& to, const nn::ParameterSet<From>& from) {
    const auto& dst = to.parameters();
    const auto& src = from.parameters();
    if (dst.size() != src.size()) throw std::logic_error("parameter sets differ");
    for (std::size_t p = 0; p < dst.size(); ++p) {
        nn::Var<To> d = dst[p].second;
        const auto& s = src[p].second.value();
        if (dst[p].first != src[p].first || d.value().size() != s.size()) throw std::logic_error("parameter sets differ");
        for (std::size_t e = 0; e < s.size(); ++e) d.mutable_value()[e] = static_cast<To>(s[e]);
    }
}

// Compares gradients backpropagated at precision T with central differences
// of the same objectives evaluated at precision R on a copy of the weights
// (exact when R is at least as wide as T): the generator objective for
// generator parameters (both discriminators fixed) and the discriminator
// objective for discriminator parameters (fakes fixed). `per_network`
// elements are drawn from each of the four networks, each with a gradient of
// at least `min_magnitude`.
template <typename T, typename R = T>
GradCheckReport gradient_check(std::uint64_t seed, int per_network, double step, double min_magnitude = 0.0) {
    using nn::Tensor;
    using nn::Var;
    transfer::CycleGan<T> model(gradcheck_config(seed));
    transfer::CycleGan<R> reference(gradcheck_config(seed));
    copy_parameters(reference.g_ab.params(), model.g_ab.params());
    copy_parameters(reference.g_ba.params(), model.g_ba.params());
    copy_parameters(reference.d_a.params(), model.d_a.params());
    copy_parameters(reference.d_b.params(), model.d_b.params());

    std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
    auto random_batch = [&] {
        Tensor<T> t({2, 3, 8, 8});
        for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<T>(uniform_real(rng, -0.9, 0.9));
        return t;
    };
    auto widen = [](const Tensor<T>& t) {
        Tensor<R> out(t.shape());
        for (std::size_t i = 0; i < t.size(); ++i) out[i] = static_cast<R>(t[i]);
        return out;
    };
    const Var<T> real_a(random_batch()), real_b(random_batch());
    const Var<R> ref_a(widen(real_a.value())), ref_b(widen(real_b.value()));

    Var<T> fake_a, fake_b;
    {
        nn::NoGradGuard guard;
        const auto g = model.generator_terms(real_a, real_b);
        fake_a = Var<T>(g.fake_a.value());
        fake_b = Var<T>(g.fake_b.value());
    }
    const Var<R> ref_fake_a(widen(fake_a.value())), ref_fake_b(widen(fake_b.value()));
    auto generator_loss = [&] {
        nn::NoGradGuard guard;
        return static_cast<double>(reference.generator_terms(ref_a, ref_b).total.value()[0]);
    };
    auto discriminator_loss = [&] {
        nn::NoGradGuard guard;
        return static_cast<double>(
            reference.discriminator_terms(ref_a, ref_b, ref_fake_a, ref_fake_b).total.value()[0]);
    };

    // Analytic gradients.
    for (auto* p : {&model.g_ab.params(), &model.g_ba.params(), &model.d_a.params(), &model.d_b.params()}) p->zero_grad();
    model.d_a.params().set_requires_grad(false);
    model.d_b.params().set_requires_grad(false);
    nn::backward(model.generator_terms(real_a, real_b).total);
    model.d_a.params().set_requires_grad(true);
    model.d_b.params().set_requires_grad(true);
    model.g_ab.params().set_requires_grad(false);
    model.g_ba.params().set_requires_grad(false);
    nn::backward(model.discriminator_terms(real_a, real_b, fake_a, fake_b).total);
    model.g_ab.params().set_requires_grad(true);
    model.g_ba.params().set_requires_grad(true);

    struct Net {
        const char* name;
        nn::ParameterSet<T>* params;
        nn::ParameterSet<R>* reference;
        bool generator;
    };
    const Net nets[] = {{"g_ab", &model.g_ab.params(), &reference.g_ab.params(), true},
                        {"g_ba", &model.g_ba.params(), &reference.g_ba.params(), true},
                        {"d_a", &model.d_a.params(), &reference.d_a.params(), false},
                        {"d_b", &model.d_b.params(), &reference.d_b.params(), false}};

    GradCheckReport report;
    for (const auto& net : nets) {
        std::vector<std::pair<std::size_t, std::size_t>> candidates;  // (parameter, element)
        const auto& params = net.params->parameters();
        for (std::size_t p = 0; p < params.size(); ++p) {
            const auto& grad = params[p].second.grad();
            for (std::size_t e = 0; e < params[p].second.value().size(); ++e) {
                const double g = grad.size() == 0 ? 0.0 : static_cast<double>(grad[e]);
                if (std::abs(g) >= min_magnitude) candidates.emplace_back(p, e);
            }
        }
        shuffle_in_place(candidates.begin(), candidates.end(), rng);
        const std::size_t n = std::min<std::size_t>(candidates.size(), static_cast<std::size_t>(per_network));
        for (std::size_t i = 0; i < n; ++i) {
            auto [p, e] = candidates[i];
            const Var<T>& param = params[p].second;
            Var<R> ref = net.reference->parameters()[p].second;
            const R original = ref.value()[e];
            const double analytic = param.grad().size() == 0 ? 0.0 : static_cast<double>(param.grad()[e]);
            auto loss = [&] { return net.generator ? generator_loss() : discriminator_loss(); };
            ref.mutable_value()[e] = static_cast<R>(original + step);
            const double plus = loss();
            ref.mutable_value()[e] = static_cast<R>(original - step);
            const double minus = loss();
            ref.mutable_value()[e] = original;
            // The perturbation actually applied after rounding to R.
            const double applied = static_cast<double>(static_cast<R>(original + step)) -
                                   static_cast<double>(static_cast<R>(original - step));
            const double numeric = (plus - minus) / applied;
            GradSample s{std::string(net.name) + "." + params[p].first, e, analytic, numeric,
                         relative_error(analytic, numeric)};
            report.max_relative_error = std::max(report.max_relative_error, s.relative_error);
            report.samples.push_back(std::move(s));
        }
    }
    return report;
}

}  // namespace cellbloom::test_support
