#pragma once

#include <cstdint>
#include <filesystem>
#include <utility>

#include "cellbloom/image.hpp"
#include "cellbloom/manifest.hpp"

namespace cellbloom::harness {

namespace fs = std::filesystem;

// Desk-scale stand-in for the cell and flower datasets. Class k of either
// domain is drawn in hue k / 7; flowers are offset by half a class step so the
// two palettes differ.
struct SyntheticDomainSpec {
    int classes = 7;
    int per_class = 200;
    int image_size = 32;
    double noise_sigma = 0.03;  // additive Gaussian noise in [0, 1] units
    std::uint64_t seed = 0;

    void validate() const;
};

// Domain A: filled disk on a dark noisy background.
ImageU8 synthetic_cell(int class_index, int image_size, double noise_sigma, std::uint64_t image_seed);
// Domain B: radial petal pattern with a dark center on a light background.
ImageU8 synthetic_flower(int class_index, int image_size, double noise_sigma, std::uint64_t image_seed);

// Hue in [0, 1) assigned to class k of a domain.
double class_hue(Domain domain, int class_index);

// Writes <root>/cell/<class>/<id>.png and <root>/flower/<class>/<id>.png and
// returns the two unsplit manifests.
std::pair<DatasetManifest, DatasetManifest> generate_synthetic_domains(const SyntheticDomainSpec& spec,
                                                                       const fs::path& root);

}  // namespace cellbloom::harness
