#pragma once

#include <cstdint>
#include <random>

#include "cellbloom/nn/ops.hpp"
#include "cellbloom/nn/parameters.hpp"

namespace cellbloom::transfer {

// Residual encoder-decoder: 7x7 stem, two stride-2 downsampling convs,
// residual blocks, two transposed-conv upsampling stages, 7x7 head with tanh.
// Every hidden conv is followed by instance normalization.
struct GeneratorSpec {
    int channels = 3;
    int base_width = 64;
    int residual_blocks = 6;
    bool operator==(const GeneratorSpec&) const = default;
};

// Patch classifier: stride-2 conv stages, then two stride-1 4x4 convs ending
// in a single-channel realness map.
struct DiscriminatorSpec {
    int channels = 3;
    int base_width = 64;
    int stride2_stages = 3;
    bool operator==(const DiscriminatorSpec&) const = default;
};

template <typename T>
class Generator {
public:
    Generator(const GeneratorSpec& spec, std::mt19937_64& rng);

    nn::Var<T> forward(const nn::Var<T>& x) const;
    nn::Var<T> operator()(const nn::Var<T>& x) const { return forward(x); }

    const GeneratorSpec& spec() const { return spec_; }
    nn::ParameterSet<T>& params() { return params_; }
    const nn::ParameterSet<T>& params() const { return params_; }

private:
    struct Conv {
        nn::Var<T> weight;
        nn::Var<T> bias;
    };

    Conv make_conv(const std::string& name, int c_in, int c_out, int kernel, std::mt19937_64& rng);
    Conv make_conv_transpose(const std::string& name, int c_in, int c_out, int kernel, std::mt19937_64& rng);

    GeneratorSpec spec_;
    nn::ParameterSet<T> params_;
    Conv stem_;
    std::vector<Conv> down_;
    std::vector<std::pair<Conv, Conv>> blocks_;
    std::vector<Conv> up_;
    Conv head_;
};

template <typename T>
class Discriminator {
public:
    Discriminator(const DiscriminatorSpec& spec, std::mt19937_64& rng);

    // (N, C, H, W) -> (N, 1, h, w) score map.
    nn::Var<T> forward(const nn::Var<T>& x) const;
    nn::Var<T> operator()(const nn::Var<T>& x) const { return forward(x); }

    const DiscriminatorSpec& spec() const { return spec_; }
    nn::ParameterSet<T>& params() { return params_; }
    const nn::ParameterSet<T>& params() const { return params_; }

private:
    struct Conv {
        nn::Var<T> weight;
        nn::Var<T> bias;
        int stride;
        bool normalize;
    };

    DiscriminatorSpec spec_;
    nn::ParameterSet<T> params_;
    std::vector<Conv> layers_;
};

// Mean/stddev of the normal initializer shared by both networks.
inline constexpr double kInitStddev = 0.02;

}  // namespace cellbloom::transfer
