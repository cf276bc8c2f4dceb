#include "cellbloom/augment.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "cellbloom/random.hpp"

namespace cellbloom {

namespace {

// Reflection without edge repetition, extended to real coordinates.
double reflect_coord(double v, int n) {
    if (n == 1) return 0.0;
    const double period = 2.0 * (n - 1);
    v = std::fmod(std::abs(v), period);
    return v > n - 1 ? period - v : v;
}

}  // namespace

void AugmentationSpec::validate() const {
    for (double p : {hflip_p, vflip_p, erase_p}) {
        if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("augmentation probabilities must lie in [0, 1]");
    }
    if (!(max_rotation_deg >= 0.0) || !(intensity_shift >= 0.0)) {
        throw std::invalid_argument("augmentation ranges must be non-negative");
    }
    if (!(erase_min_area > 0.0 && erase_min_area <= erase_max_area && erase_max_area <= 1.0)) {
        throw std::invalid_argument("erase area fractions must satisfy 0 < min <= max <= 1");
    }
}

AugmentationDraw draw_augmentation(const AugmentationSpec& spec, int height, int width, std::mt19937_64& rng) {
    spec.validate();
    // Every variate is drawn unconditionally so rng consumption is fixed per call.
    AugmentationDraw d;
    d.hflip = uniform01(rng) < spec.hflip_p;
    d.vflip = uniform01(rng) < spec.vflip_p;
    d.rotation_deg = uniform_real(rng, -spec.max_rotation_deg, spec.max_rotation_deg);
    d.erase = uniform01(rng) < spec.erase_p;
    const double area = uniform_real(rng, spec.erase_min_area, spec.erase_max_area) * height * width;
    const double aspect = std::exp(uniform_real(rng, std::log(0.3), std::log(1.0 / 0.3)));
    const int h = std::clamp(static_cast<int>(std::lround(std::sqrt(area * aspect))), 1, height);
    const int w = std::clamp(static_cast<int>(std::lround(std::sqrt(area / aspect))), 1, width);
    const int y = static_cast<int>(uniform01(rng) * (height - h + 1));
    const int x = static_cast<int>(uniform01(rng) * (width - w + 1));
    d.erase_rect = {std::min(x, width - w), std::min(y, height - h), w, h};
    d.shift = uniform_real(rng, -2.0 * spec.intensity_shift, 2.0 * spec.intensity_shift);
    return d;
}

Image flip_horizontal(const Image& img) {
    Image out(img.height, img.width);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < 3; ++c) out.at(y, x, c) = img.at(y, img.width - 1 - x, c);
    return out;
}

Image flip_vertical(const Image& img) {
    Image out(img.height, img.width);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < 3; ++c) out.at(y, x, c) = img.at(img.height - 1 - y, x, c);
    return out;
}

Image rotate(const Image& img, double degrees) {
    if (degrees == 0.0) return img;
    const double theta = degrees * std::numbers::pi / 180.0;
    const double cs = std::cos(theta), sn = std::sin(theta);
    const double cy = (img.height - 1) / 2.0, cx = (img.width - 1) / 2.0;
    Image out(img.height, img.width);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            // Inverse mapping from output to source coordinates.
            const double dx = x - cx, dy = y - cy;
            const double sx = reflect_coord(cs * dx + sn * dy + cx, img.width);
            const double sy = reflect_coord(-sn * dx + cs * dy + cy, img.height);
            const int x0 = static_cast<int>(std::floor(sx)), y0 = static_cast<int>(std::floor(sy));
            const int x1 = std::min(x0 + 1, img.width - 1), y1 = std::min(y0 + 1, img.height - 1);
            const double fx = sx - x0, fy = sy - y0;
            for (int c = 0; c < 3; ++c) {
                const double top = (1 - fx) * img.at(y0, x0, c) + fx * img.at(y0, x1, c);
                const double bottom = (1 - fx) * img.at(y1, x0, c) + fx * img.at(y1, x1, c);
                out.at(y, x, c) = static_cast<float>((1 - fy) * top + fy * bottom);
            }
        }
    }
    return out;
}

Image apply_augmentation(const Image& img, const AugmentationDraw& d) {
    Image out = img;
    if (d.hflip) out = flip_horizontal(out);
    if (d.vflip) out = flip_vertical(out);
    out = rotate(out, d.rotation_deg);
    if (d.erase) {
        double mean[3] = {0, 0, 0};
        for (std::size_t i = 0; i < out.values.size(); ++i) mean[i % 3] += out.values[i];
        const double n = static_cast<double>(out.height) * out.width;
        const auto& r = d.erase_rect;
        for (int y = r.y; y < r.y + r.h; ++y)
            for (int x = r.x; x < r.x + r.w; ++x)
                for (int c = 0; c < 3; ++c) out.at(y, x, c) = static_cast<float>(mean[c] / n);
    }
    const float shift = static_cast<float>(d.shift);
    for (auto& v : out.values) v = std::clamp(v + shift, -1.0f, 1.0f);
    return out;
}

Image augment(const Image& img, const AugmentationSpec& spec, std::mt19937_64& rng) {
    return apply_augmentation(img, draw_augmentation(spec, img.height, img.width, rng));
}

}  // namespace cellbloom
