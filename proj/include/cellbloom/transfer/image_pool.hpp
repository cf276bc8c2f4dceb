#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "cellbloom/nn/tensor.hpp"

namespace cellbloom::transfer {

// History buffer of generated images used for discriminator updates.
//
// Per incoming image, in batch order: while the pool holds fewer than
// `capacity` images the image is stored and returned. Once full, one
// uniform01 draw u is taken; if u < 0.5 a slot is chosen with
// uniform_index(rng, capacity), its stored image is returned and the incoming
// image takes its place, otherwise the incoming image is returned.
template <typename T>
class ImagePool {
public:
    ImagePool(int capacity, std::uint64_t seed);

    // batch: (N, C, H, W); returns a batch of the same shape.
    nn::Tensor<T> query(const nn::Tensor<T>& batch);

    int capacity() const { return capacity_; }
    int size() const { return static_cast<int>(images_.size()); }
    const std::vector<nn::Tensor<T>>& images() const { return images_; }

    // Stored images stacked as (n, C, H, W) plus the generator state.
    nn::Tensor<T> stacked() const;
    std::string rng_state() const;
    void restore(const nn::Tensor<T>& stacked, const std::string& rng_state);

private:
    int capacity_;
    std::mt19937_64 rng_;
    std::vector<nn::Tensor<T>> images_;  // each (C, H, W)
};

}  // namespace cellbloom::transfer
