#include "cellbloom/harness/synthetic.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>
#include <stdexcept>

#include "cellbloom/hashing.hpp"
#include "cellbloom/random.hpp"

namespace cellbloom::harness {

namespace {

std::array<double, 3> hsv_to_rgb(double h, double s, double v) {
    h = h - std::floor(h);
    const double x = h * 6.0;
    const int sector = static_cast<int>(x) % 6;
    const double f = x - std::floor(x);
    const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
    switch (sector) {
        case 0: return {v, t, p};
        case 1: return {q, v, p};
        case 2: return {p, v, t};
        case 3: return {p, q, v};
        case 4: return {t, p, v};
        default: return {v, p, q};
    }
}

ImageU8 to_bytes(const std::vector<double>& rgb, int side) {
    ImageU8 out;
    out.height = out.width = side;
    out.pixels.resize(rgb.size());
    for (std::size_t i = 0; i < rgb.size(); ++i) {
        out.pixels[i] = static_cast<std::uint8_t>(std::clamp(std::lround(rgb[i] * 255.0), 0L, 255L));
    }
    return out;
}

void require_class(int class_index) {
    if (class_index < 0 || class_index >= static_cast<int>(kNumClasses)) {
        throw std::out_of_range("synthetic class index out of range");
    }
}

}  // namespace

void SyntheticDomainSpec::validate() const {
    if (classes != static_cast<int>(kNumClasses)) throw std::invalid_argument("synthetic spec needs exactly 7 classes");
    if (per_class < 0) throw std::invalid_argument("per_class must be non-negative");
    if (image_size < 16) throw std::invalid_argument("synthetic image_size must be at least 16");
    if (!(noise_sigma >= 0.0)) throw std::invalid_argument("noise_sigma must be non-negative");
}

double class_hue(Domain domain, int class_index) {
    require_class(class_index);
    const double step = 1.0 / static_cast<double>(kNumClasses);
    return class_index * step + (domain == Domain::flower ? step / 2.0 : 0.0);
}

ImageU8 synthetic_cell(int class_index, int side, double noise_sigma, std::uint64_t image_seed) {
    std::mt19937_64 rng(image_seed);
    const double hue = class_hue(Domain::cell, class_index) + uniform_real(rng, -0.015, 0.015);
    const auto color = hsv_to_rgb(hue, uniform_real(rng, 0.65, 0.85), uniform_real(rng, 0.8, 0.95));
    const double radius = side * uniform_real(rng, 0.25, 0.36);
    const double cx = (side - 1) / 2.0 + uniform_real(rng, -0.08, 0.08) * side;
    const double cy = (side - 1) / 2.0 + uniform_real(rng, -0.08, 0.08) * side;
    const double background = uniform_real(rng, 0.12, 0.2);
    std::vector<double> rgb(static_cast<std::size_t>(side) * side * 3);
    for (int y = 0; y < side; ++y) {
        for (int x = 0; x < side; ++x) {
            const double d = std::hypot(x - cx, y - cy);
            // One-pixel antialiased edge.
            const double cover = std::clamp(radius + 0.5 - d, 0.0, 1.0);
            for (int c = 0; c < 3; ++c) {
                const double v = cover * color[static_cast<std::size_t>(c)] + (1 - cover) * background;
                rgb[(static_cast<std::size_t>(y) * side + x) * 3 + c] = v + noise_sigma * standard_normal(rng);
            }
        }
    }
    return to_bytes(rgb, side);
}

ImageU8 synthetic_flower(int class_index, int side, double noise_sigma, std::uint64_t image_seed) {
    std::mt19937_64 rng(image_seed);
    const double hue = class_hue(Domain::flower, class_index) + uniform_real(rng, -0.015, 0.015);
    const auto petal = hsv_to_rgb(hue, uniform_real(rng, 0.7, 0.9), uniform_real(rng, 0.85, 1.0));
    const std::array<double, 3> center = {0.35, 0.25, 0.1};
    const int petals = 5 + static_cast<int>(uniform_index(rng, 4));
    const double phase = uniform_real(rng, 0.0, 2.0 * std::numbers::pi);
    const double outer = side * uniform_real(rng, 0.36, 0.46);
    const double inner = side * 0.12;
    const double cx = (side - 1) / 2.0, cy = (side - 1) / 2.0;
    const double background = uniform_real(rng, 0.8, 0.9);
    std::vector<double> rgb(static_cast<std::size_t>(side) * side * 3);
    for (int y = 0; y < side; ++y) {
        for (int x = 0; x < side; ++x) {
            const double d = std::hypot(x - cx, y - cy);
            const double theta = std::atan2(y - cy, x - cx);
            const double reach = outer * (0.45 + 0.55 * std::abs(std::cos(0.5 * petals * theta + phase)));
            const double petal_cover = std::clamp(reach + 0.5 - d, 0.0, 1.0);
            const double center_cover = std::clamp(inner + 0.5 - d, 0.0, 1.0);
            for (int c = 0; c < 3; ++c) {
                const auto ch = static_cast<std::size_t>(c);
                double v = petal_cover * petal[ch] + (1 - petal_cover) * background;
                v = center_cover * center[ch] + (1 - center_cover) * v;
                rgb[(static_cast<std::size_t>(y) * side + x) * 3 + c] = v + noise_sigma * standard_normal(rng);
            }
        }
    }
    return to_bytes(rgb, side);
}

std::pair<DatasetManifest, DatasetManifest> generate_synthetic_domains(const SyntheticDomainSpec& spec,
                                                                       const fs::path& root) {
    spec.validate();
    DatasetManifest cells(Domain::cell, spec.seed), flowers(Domain::flower, spec.seed);
    for (int k = 0; k < spec.classes; ++k) {
        for (const Domain domain : {Domain::cell, Domain::flower}) {
            const ClassLabel label = domain == Domain::cell ? ClassLabel(cell_class_at(k)) : ClassLabel(flower_class_at(k));
            const std::string cls = label_name(label);
            for (int i = 0; i < spec.per_class; ++i) {
                char id[96];
                std::snprintf(id, sizeof id, "synth-%s-%s-%04d", std::string(to_string(domain)).c_str(), cls.c_str(), i);
                const std::uint64_t image_seed = derive_seed(spec.seed, id);
                const ImageU8 img = domain == Domain::cell
                                        ? synthetic_cell(k, spec.image_size, spec.noise_sigma, image_seed)
                                        : synthetic_flower(k, spec.image_size, spec.noise_sigma, image_seed);
                ImageRecord r;
                r.id = id;
                r.path = root / std::string(to_string(domain)) / cls / (r.id + ".png");
                r.domain = domain;
                r.label = label;
                write_png(r.path, img);
                (domain == Domain::cell ? cells : flowers).add(std::move(r));
            }
        }
    }
    return {std::move(cells), std::move(flowers)};
}

}  // namespace cellbloom::harness
