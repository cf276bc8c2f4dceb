#include "cellbloom/transfer/networks.hpp"

#include <algorithm>
#include <stdexcept>

namespace cellbloom::transfer {

using nn::ConvGeometry;
using nn::Tensor;
using nn::Var;

template <typename T>
typename Generator<T>::Conv Generator<T>::make_conv(const std::string& name, int c_in, int c_out, int kernel,
                                                    std::mt19937_64& rng) {
    Conv conv;
    conv.weight = params_.add_parameter(name + ".weight",
                                        nn::normal_tensor<T>({c_out, c_in, kernel, kernel}, 0.0, kInitStddev, rng));
    conv.bias = params_.add_parameter(name + ".bias", Tensor<T>({c_out}));
    return conv;
}

template <typename T>
typename Generator<T>::Conv Generator<T>::make_conv_transpose(const std::string& name, int c_in, int c_out,
                                                              int kernel, std::mt19937_64& rng) {
    Conv conv;
    conv.weight = params_.add_parameter(name + ".weight",
                                        nn::normal_tensor<T>({c_in, c_out, kernel, kernel}, 0.0, kInitStddev, rng));
    conv.bias = params_.add_parameter(name + ".bias", Tensor<T>({c_out}));
    return conv;
}

template <typename T>
Generator<T>::Generator(const GeneratorSpec& spec, std::mt19937_64& rng) : spec_(spec) {
    if (spec.channels < 1 || spec.base_width < 1 || spec.residual_blocks < 0) {
        throw std::invalid_argument("invalid generator spec");
    }
    const int w = spec.base_width;
    stem_ = make_conv("stem", spec.channels, w, 7, rng);
    down_.push_back(make_conv("down1", w, 2 * w, 3, rng));
    down_.push_back(make_conv("down2", 2 * w, 4 * w, 3, rng));
    for (int b = 0; b < spec.residual_blocks; ++b) {
        const std::string prefix = "res" + std::to_string(b + 1);
        auto first = make_conv(prefix + ".conv1", 4 * w, 4 * w, 3, rng);
        auto second = make_conv(prefix + ".conv2", 4 * w, 4 * w, 3, rng);
        blocks_.emplace_back(first, second);
    }
    up_.push_back(make_conv_transpose("up1", 4 * w, 2 * w, 3, rng));
    up_.push_back(make_conv_transpose("up2", 2 * w, w, 3, rng));
    head_ = make_conv("head", w, spec.channels, 7, rng);
}

template <typename T>
Var<T> Generator<T>::forward(const Var<T>& x) const {
    Var<T> h = nn::reflection_pad2d(x, 3);
    h = nn::relu(nn::instance_norm2d(nn::conv2d(h, stem_.weight, stem_.bias, ConvGeometry{1, 0})));
    for (const auto& d : down_) {
        h = nn::relu(nn::instance_norm2d(nn::conv2d(h, d.weight, d.bias, ConvGeometry{2, 1})));
    }
    for (const auto& [c1, c2] : blocks_) {
        Var<T> r = nn::conv2d(nn::reflection_pad2d(h, 1), c1.weight, c1.bias, ConvGeometry{1, 0});
        r = nn::relu(nn::instance_norm2d(r));
        r = nn::conv2d(nn::reflection_pad2d(r, 1), c2.weight, c2.bias, ConvGeometry{1, 0});
        h = h + nn::instance_norm2d(r);
    }
    for (const auto& u : up_) {
        h = nn::relu(nn::instance_norm2d(nn::conv_transpose2d(h, u.weight, u.bias, ConvGeometry{2, 1}, 1)));
    }
    h = nn::conv2d(nn::reflection_pad2d(h, 3), head_.weight, head_.bias, ConvGeometry{1, 0});
    return nn::tanh(h);
}

template <typename T>
Discriminator<T>::Discriminator(const DiscriminatorSpec& spec, std::mt19937_64& rng) : spec_(spec) {
    if (spec.channels < 1 || spec.base_width < 1 || spec.stride2_stages < 1) {
        throw std::invalid_argument("invalid discriminator spec");
    }
    auto add = [&](int index, int c_in, int c_out, int stride, bool normalize) {
        const std::string name = "conv" + std::to_string(index);
        Conv conv;
        conv.weight = params_.add_parameter(name + ".weight",
                                            nn::normal_tensor<T>({c_out, c_in, 4, 4}, 0.0, kInitStddev, rng));
        conv.bias = params_.add_parameter(name + ".bias", Tensor<T>({c_out}));
        conv.stride = stride;
        conv.normalize = normalize;
        layers_.push_back(conv);
    };
    const int w = spec.base_width;
    int width = w;
    add(1, spec.channels, w, 2, false);
    int index = 2;
    for (int s = 1; s < spec.stride2_stages; ++s) {
        const int next = w * std::min(1 << s, 8);
        add(index++, width, next, 2, true);
        width = next;
    }
    const int last = w * std::min(1 << spec.stride2_stages, 8);
    add(index++, width, last, 1, true);
    add(index, last, 1, 1, false);
}

template <typename T>
Var<T> Discriminator<T>::forward(const Var<T>& x) const {
    Var<T> h = x;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        const auto& layer = layers_[i];
        h = nn::conv2d(h, layer.weight, layer.bias, ConvGeometry{layer.stride, 1});
        if (i + 1 == layers_.size()) break;
        if (layer.normalize) h = nn::instance_norm2d(h);
        h = nn::leaky_relu(h, 0.2);
    }
    return h;
}

template class Generator<float>;
template class Generator<double>;
template class Discriminator<float>;
template class Discriminator<double>;

}  // namespace cellbloom::transfer
