#include "cellbloom/transfer/image_pool.hpp"

#include <stdexcept>

#include "cellbloom/random.hpp"

namespace cellbloom::transfer {

template <typename T>
ImagePool<T>::ImagePool(int capacity, std::uint64_t seed) : capacity_(capacity), rng_(seed) {
    if (capacity < 0) throw std::invalid_argument("image pool capacity must be non-negative");
}

template <typename T>
nn::Tensor<T> ImagePool<T>::query(const nn::Tensor<T>& batch) {
    if (batch.rank() != 4) throw nn::ShapeError("image pool expects an (N, C, H, W) batch");
    if (capacity_ == 0) return batch;
    const nn::Shape item_shape(batch.shape().begin() + 1, batch.shape().end());
    if (!images_.empty() && images_.front().shape() != item_shape) {
        throw nn::ShapeError("image pool: batch image shape differs from stored images");
    }
    const std::size_t stride = nn::shape_numel(item_shape);
    nn::Tensor<T> out(batch.shape());
    for (int i = 0; i < batch.dim(0); ++i) {
        const T* src = batch.data() + static_cast<std::size_t>(i) * stride;
        T* dst = out.data() + static_cast<std::size_t>(i) * stride;
        nn::Tensor<T> incoming(item_shape, std::vector<T>(src, src + stride));
        if (size() < capacity_) {
            std::copy(src, src + stride, dst);
            images_.push_back(std::move(incoming));
        } else if (uniform01(rng_) < 0.5) {
            auto& slot = images_[uniform_index(rng_, static_cast<std::uint64_t>(capacity_))];
            std::copy(slot.data(), slot.data() + stride, dst);
            slot = std::move(incoming);
        } else {
            std::copy(src, src + stride, dst);
        }
    }
    return out;
}

template <typename T>
nn::Tensor<T> ImagePool<T>::stacked() const {
    if (images_.empty()) return nn::Tensor<T>({0});
    std::vector<nn::Tensor<T>> parts;
    parts.reserve(images_.size());
    for (const auto& img : images_) {
        nn::Shape s = img.shape();
        s.insert(s.begin(), 1);
        parts.push_back(img.reshaped(s));
    }
    return nn::concat_batch(parts);
}

template <typename T>
std::string ImagePool<T>::rng_state() const {
    return cellbloom::rng_state(rng_);
}

template <typename T>
void ImagePool<T>::restore(const nn::Tensor<T>& stacked, const std::string& state) {
    images_.clear();
    if (stacked.rank() == 4) {
        if (stacked.dim(0) > capacity_) throw std::invalid_argument("stored pool exceeds its capacity");
        const nn::Shape item_shape(stacked.shape().begin() + 1, stacked.shape().end());
        for (int i = 0; i < stacked.dim(0); ++i) images_.push_back(nn::slice_batch(stacked, i, i + 1).reshaped(item_shape));
    }
    restore_rng_state(rng_, state);
}

template class ImagePool<float>;
template class ImagePool<double>;

}  // namespace cellbloom::transfer
