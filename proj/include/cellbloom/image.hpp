#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <vector>

#include "cellbloom/nn/tensor.hpp"

namespace cellbloom {

// 8-bit interleaved RGB as stored on disk.
struct ImageU8 {
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> pixels;  // HWC, 3 channels

    std::uint8_t& at(int y, int x, int c) { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
    std::uint8_t at(int y, int x, int c) const { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
    bool operator==(const ImageU8&) const = default;
};

// Float RGB in [-1, 1], HWC.
struct Image {
    int height = 0;
    int width = 0;
    std::vector<float> values;

    Image() = default;
    Image(int h, int w, float fill = 0.0f)
        : height(h), width(w), values(static_cast<std::size_t>(h) * w * 3, fill) {}

    static constexpr int channels = 3;
    float& at(int y, int x, int c) { return values[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
    float at(int y, int x, int c) const { return values[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
    bool same_shape(const Image& o) const { return height == o.height && width == o.width; }
    bool operator==(const Image&) const = default;
};

class ImageIoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// PNG (any bit depth / color type, converted to 8-bit RGB) or JPEG by extension.
ImageU8 read_image(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const ImageU8& image);

// u -> u / 127.5 - 1 and the inverse with rounding and clamping.
Image to_float(const ImageU8& image);
ImageU8 to_u8(const Image& image);

ImageU8 crop(const ImageU8& image, int x, int y, int width, int height);
// Centered square crop followed by an area-averaging resize.
ImageU8 square_resize(const ImageU8& image, int side);
// Box-filter resize; exact copy when sizes already match.
ImageU8 resize_area(const ImageU8& image, int out_height, int out_width);

// Reads, normalizes, and fits to side x side.
Image load_image(const std::filesystem::path& path, int side);

// Packs equally sized images into an NCHW batch and back.
nn::Tensor<float> to_batch(std::span<const Image> images);
Image from_batch(const nn::Tensor<float>& batch, int index);

}  // namespace cellbloom
