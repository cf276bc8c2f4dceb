#include "cellbloom/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <memory>
#include <png.h>

// jpeglib.h needs FILE/size_t declared first.
#include <jpeglib.h>

namespace cellbloom {

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::filesystem::path& path, const char* mode) {
    FilePtr f(std::fopen(path.c_str(), mode));
    if (!f) throw ImageIoError("cannot open image file " + path.string());
    return f;
}

std::string lower_extension(const std::filesystem::path& path) {
    std::string ext = path.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    return ext;
}

ImageU8 read_png(const std::filesystem::path& path) {
    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&img, path.c_str())) {
        throw ImageIoError("cannot decode PNG " + path.string() + ": " + img.message);
    }
    img.format = PNG_FORMAT_RGB;
    ImageU8 out;
    out.width = static_cast<int>(img.width);
    out.height = static_cast<int>(img.height);
    out.pixels.resize(PNG_IMAGE_SIZE(img));
    if (!png_image_finish_read(&img, nullptr, out.pixels.data(), 0, nullptr)) {
        png_image_free(&img);
        throw ImageIoError("cannot decode PNG " + path.string() + ": " + img.message);
    }
    return out;
}

struct JpegErrorManager {
    jpeg_error_mgr base;
    char message[JMSG_LENGTH_MAX];
};

[[noreturn]] void jpeg_throw(j_common_ptr cinfo) {
    auto* err = reinterpret_cast<JpegErrorManager*>(cinfo->err);
    (*cinfo->err->format_message)(cinfo, err->message);
    throw ImageIoError(std::string("JPEG decode failed: ") + err->message);
}

ImageU8 read_jpeg(const std::filesystem::path& path) {
    FilePtr file = open_file(path, "rb");
    jpeg_decompress_struct cinfo{};
    JpegErrorManager err{};
    cinfo.err = jpeg_std_error(&err.base);
    err.base.error_exit = jpeg_throw;
    ImageU8 out;
    try {
        jpeg_create_decompress(&cinfo);
        jpeg_stdio_src(&cinfo, file.get());
        jpeg_read_header(&cinfo, TRUE);
        cinfo.out_color_space = JCS_RGB;
        jpeg_start_decompress(&cinfo);
        out.width = static_cast<int>(cinfo.output_width);
        out.height = static_cast<int>(cinfo.output_height);
        out.pixels.resize(static_cast<std::size_t>(out.width) * out.height * 3);
        while (cinfo.output_scanline < cinfo.output_height) {
            JSAMPROW row = out.pixels.data() + static_cast<std::size_t>(cinfo.output_scanline) * out.width * 3;
            jpeg_read_scanlines(&cinfo, &row, 1);
        }
        jpeg_finish_decompress(&cinfo);
    } catch (const ImageIoError& e) {
        jpeg_destroy_decompress(&cinfo);
        throw ImageIoError(path.string() + ": " + e.what());
    }
    jpeg_destroy_decompress(&cinfo);
    return out;
}

}  // namespace

ImageU8 read_image(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw ImageIoError("image file not found: " + path.string());
    const std::string ext = lower_extension(path);
    if (ext == ".png") return read_png(path);
    if (ext == ".jpg" || ext == ".jpeg") return read_jpeg(path);
    throw ImageIoError("unsupported image format: " + path.string());
}

void write_png(const std::filesystem::path& path, const ImageU8& image) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    img.width = static_cast<png_uint_32>(image.width);
    img.height = static_cast<png_uint_32>(image.height);
    img.format = PNG_FORMAT_RGB;
    if (!png_image_write_to_file(&img, path.c_str(), 0, image.pixels.data(), 0, nullptr)) {
        throw ImageIoError("cannot write PNG " + path.string() + ": " + img.message);
    }
}

Image to_float(const ImageU8& image) {
    Image out(image.height, image.width);
    for (std::size_t i = 0; i < image.pixels.size(); ++i) {
        out.values[i] = static_cast<float>(image.pixels[i]) / 127.5f - 1.0f;
    }
    return out;
}

ImageU8 to_u8(const Image& image) {
    ImageU8 out;
    out.height = image.height;
    out.width = image.width;
    out.pixels.resize(image.values.size());
    for (std::size_t i = 0; i < image.values.size(); ++i) {
        const float v = std::round((image.values[i] + 1.0f) * 127.5f);
        out.pixels[i] = static_cast<std::uint8_t>(std::clamp(v, 0.0f, 255.0f));
    }
    return out;
}

ImageU8 crop(const ImageU8& image, int x, int y, int width, int height) {
    if (x < 0 || y < 0 || x + width > image.width || y + height > image.height) {
        throw std::out_of_range("crop rectangle outside image");
    }
    ImageU8 out;
    out.width = width;
    out.height = height;
    out.pixels.resize(static_cast<std::size_t>(width) * height * 3);
    for (int r = 0; r < height; ++r) {
        const auto* src = image.pixels.data() + (static_cast<std::size_t>(y + r) * image.width + x) * 3;
        std::copy(src, src + static_cast<std::size_t>(width) * 3,
                  out.pixels.data() + static_cast<std::size_t>(r) * width * 3);
    }
    return out;
}

ImageU8 resize_area(const ImageU8& image, int out_height, int out_width) {
    if (image.height == out_height && image.width == out_width) return image;
    ImageU8 out;
    out.height = out_height;
    out.width = out_width;
    out.pixels.resize(static_cast<std::size_t>(out_height) * out_width * 3);
    const double sy = static_cast<double>(image.height) / out_height;
    const double sx = static_cast<double>(image.width) / out_width;
    for (int oy = 0; oy < out_height; ++oy) {
        const double y0 = oy * sy, y1 = (oy + 1) * sy;
        for (int ox = 0; ox < out_width; ++ox) {
            const double x0 = ox * sx, x1 = (ox + 1) * sx;
            double acc[3] = {0, 0, 0};
            double total = 0.0;
            // Weighted overlap of each source pixel with the destination footprint.
            for (int iy = static_cast<int>(std::floor(y0)); iy < static_cast<int>(std::ceil(y1)); ++iy) {
                const double wy = std::min(y1, iy + 1.0) - std::max(y0, static_cast<double>(iy));
                if (wy <= 0 || iy >= image.height) continue;
                for (int ix = static_cast<int>(std::floor(x0)); ix < static_cast<int>(std::ceil(x1)); ++ix) {
                    const double wx = std::min(x1, ix + 1.0) - std::max(x0, static_cast<double>(ix));
                    if (wx <= 0 || ix >= image.width) continue;
                    const double wgt = wx * wy;
                    for (int c = 0; c < 3; ++c) acc[c] += wgt * image.at(iy, ix, c);
                    total += wgt;
                }
            }
            for (int c = 0; c < 3; ++c) {
                out.at(oy, ox, c) = static_cast<std::uint8_t>(std::clamp(std::round(acc[c] / total), 0.0, 255.0));
            }
        }
    }
    return out;
}

ImageU8 square_resize(const ImageU8& image, int side) {
    const int s = std::min(image.height, image.width);
    const ImageU8 square = (image.height == image.width)
                               ? image
                               : crop(image, (image.width - s) / 2, (image.height - s) / 2, s, s);
    return resize_area(square, side, side);
}

Image load_image(const std::filesystem::path& path, int side) { return to_float(square_resize(read_image(path), side)); }

nn::Tensor<float> to_batch(std::span<const Image> images) {
    if (images.empty()) throw nn::ShapeError("to_batch: no images");
    const int h = images.front().height, w = images.front().width;
    const int n = static_cast<int>(images.size());
    nn::Tensor<float> out({n, 3, h, w});
    for (int i = 0; i < n; ++i) {
        const Image& img = images[static_cast<std::size_t>(i)];
        if (img.height != h || img.width != w) throw nn::ShapeError("to_batch: images differ in size");
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) out.at(i, c, y, x) = img.at(y, x, c);
    }
    return out;
}

Image from_batch(const nn::Tensor<float>& batch, int index) {
    const int h = batch.dim(2), w = batch.dim(3);
    Image out(h, w);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) out.at(y, x, c) = batch.at(index, c, y, x);
    return out;
}

}  // namespace cellbloom
