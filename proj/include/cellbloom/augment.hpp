#pragma once

#include <random>

#include "cellbloom/image.hpp"

namespace cellbloom {

struct AugmentationSpec {
    double hflip_p = 0.5;
    double vflip_p = 0.5;
    double max_rotation_deg = 15.0;
    double erase_p = 0.25;
    double erase_min_area = 0.02;
    double erase_max_area = 0.10;
    // Fraction of the value range; the [-1, 1] range has width 2.
    double intensity_shift = 0.1;

    static AugmentationSpec identity() { return {0.0, 0.0, 0.0, 0.0, 0.02, 0.10, 0.0}; }
    void validate() const;
};

struct EraseRect {
    int x = 0, y = 0, w = 0, h = 0;
    bool operator==(const EraseRect&) const = default;
};

// Random outcomes of one augmentation call, drawn before any pixel work so
// the same draw can be replayed on another image.
struct AugmentationDraw {
    bool hflip = false;
    bool vflip = false;
    double rotation_deg = 0.0;
    bool erase = false;
    EraseRect erase_rect;
    double shift = 0.0;
    bool operator==(const AugmentationDraw&) const = default;
};

AugmentationDraw draw_augmentation(const AugmentationSpec& spec, int height, int width, std::mt19937_64& rng);
Image apply_augmentation(const Image& img, const AugmentationDraw& draw);

// draw + apply. Output has the input's shape with values clamped to [-1, 1].
Image augment(const Image& img, const AugmentationSpec& spec, std::mt19937_64& rng);

Image flip_horizontal(const Image& img);
Image flip_vertical(const Image& img);
// Bilinear rotation about the image center with reflect padding.
Image rotate(const Image& img, double degrees);

}  // namespace cellbloom
