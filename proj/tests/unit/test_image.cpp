#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "cellbloom/augment.hpp"
#include "cellbloom/image.hpp"
#include "support/fixtures.hpp"

using namespace cellbloom;
using test_support::TempDir;

namespace {

ImageU8 random_u8(int h, int w, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    ImageU8 img{h, w, std::vector<std::uint8_t>(static_cast<std::size_t>(h) * w * 3)};
    for (auto& p : img.pixels) p = static_cast<std::uint8_t>(rng() & 0xff);
    return img;
}

Image random_image(int h, int w, std::uint64_t seed) { return to_float(random_u8(h, w, seed)); }

}  // namespace

TEST(ImageConversion, EveryByteSurvivesFloatRoundTrip) {
    ImageU8 img{1, 256, std::vector<std::uint8_t>(256 * 3)};
    for (int x = 0; x < 256; ++x)
        for (int c = 0; c < 3; ++c) img.at(0, x, c) = static_cast<std::uint8_t>(x);
    const Image f = to_float(img);
    EXPECT_FLOAT_EQ(f.at(0, 0, 0), -1.0f);
    EXPECT_FLOAT_EQ(f.at(0, 255, 0), 1.0f);
    EXPECT_EQ(to_u8(f), img);
}

TEST(ImageConversion, ToU8ClampsOutOfRange) {
    Image f(1, 2);
    f.at(0, 0, 0) = -3.0f;
    f.at(0, 1, 0) = 7.0f;
    const ImageU8 u = to_u8(f);
    EXPECT_EQ(u.at(0, 0, 0), 0);
    EXPECT_EQ(u.at(0, 1, 0), 255);
}

TEST(ImageIo, PngRoundTrip) {
    TempDir dir("png");
    const ImageU8 img = random_u8(13, 17, 3);
    write_png(dir / "sub" / "a.png", img);
    EXPECT_EQ(read_image(dir / "sub" / "a.png"), img);
}

TEST(ImageIo, MissingFileThrows) { EXPECT_THROW(read_image("/nonexistent/x.png"), ImageIoError); }

TEST(ImageResize, AreaResizeMatchesBlockMeans) {
    const ImageU8 img = random_u8(8, 8, 4);
    EXPECT_EQ(resize_area(img, 8, 8), img);
    const ImageU8 small = resize_area(img, 4, 4);
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x)
            for (int c = 0; c < 3; ++c) {
                const double mean = (img.at(2 * y, 2 * x, c) + img.at(2 * y, 2 * x + 1, c) +
                                     img.at(2 * y + 1, 2 * x, c) + img.at(2 * y + 1, 2 * x + 1, c)) /
                                    4.0;
                EXPECT_NEAR(small.at(y, x, c), mean, 0.5 + 1e-9);
            }
}

TEST(ImageResize, SquareResizeCropsTheCenter) {
    ImageU8 img = test_support::solid_u8(4, 8, 0, 0, 0);
    for (int y = 0; y < 4; ++y)
        for (int x = 2; x < 6; ++x) img.at(y, x, 1) = 200;
    const ImageU8 sq = square_resize(img, 4);
    EXPECT_EQ(sq, test_support::solid_u8(4, 4, 0, 200, 0));
}

TEST(ImageBatch, PackAndUnpackRoundTrip) {
    std::vector<Image> imgs = {random_image(5, 6, 1), random_image(5, 6, 2)};
    const auto batch = to_batch(imgs);
    EXPECT_EQ(batch.shape(), (nn::Shape{2, 3, 5, 6}));
    EXPECT_FLOAT_EQ(batch.at(1, 2, 4, 3), imgs[1].at(4, 3, 2));
    EXPECT_EQ(from_batch(batch, 0), imgs[0]);
    EXPECT_EQ(from_batch(batch, 1), imgs[1]);
    std::vector<Image> mixed = {random_image(5, 6, 1), random_image(6, 5, 2)};
    EXPECT_THROW(to_batch(mixed), nn::ShapeError);
}

TEST(Augmentation, FlipsAreInvolutions) {
    const Image img = random_image(7, 9, 5);
    EXPECT_EQ(flip_horizontal(flip_horizontal(img)), img);
    EXPECT_EQ(flip_vertical(flip_vertical(img)), img);
    EXPECT_EQ(flip_horizontal(img).at(2, 0, 1), img.at(2, 8, 1));
}

TEST(Augmentation, QuarterTurnMatchesIndexRotation) {
    const Image img = random_image(9, 9, 6);
    const Image r = rotate(img, 90.0);
    // Source of output (y, x) under the inverse map is (x, 8 - y).
    for (int y = 0; y < 9; ++y)
        for (int x = 0; x < 9; ++x)
            for (int c = 0; c < 3; ++c) EXPECT_NEAR(r.at(y, x, c), img.at(8 - x, y, c), 1e-5);
}

TEST(Augmentation, IdentitySpecLeavesImagesUnchanged) {
    std::mt19937_64 rng(1);
    const Image img = random_image(16, 16, 7);
    for (int i = 0; i < 20; ++i) EXPECT_EQ(augment(img, AugmentationSpec::identity(), rng), img);
}

TEST(Augmentation, ClosureOverThousandDraws) {
    std::mt19937_64 rng(2024);
    AugmentationSpec spec;
    spec.max_rotation_deg = 180.0;
    spec.erase_p = 0.5;
    spec.intensity_shift = 0.2;
    for (int i = 0; i < 1000; ++i) {
        const int h = 8 + static_cast<int>(rng() % 40), w = 8 + static_cast<int>(rng() % 40);
        const Image img = random_image(h, w, rng());
        const AugmentationDraw d = draw_augmentation(spec, h, w, rng);
        ASSERT_LE(std::abs(d.rotation_deg), 180.0);
        ASSERT_LE(std::abs(d.shift), 0.4);
        ASSERT_GE(d.erase_rect.x, 0);
        ASSERT_GE(d.erase_rect.y, 0);
        ASSERT_LE(d.erase_rect.x + d.erase_rect.w, w);
        ASSERT_LE(d.erase_rect.y + d.erase_rect.h, h);
        const Image out = apply_augmentation(img, d);
        ASSERT_TRUE(out.same_shape(img));
        for (float v : out.values) ASSERT_TRUE(v >= -1.0f && v <= 1.0f);
    }
}

TEST(Augmentation, DrawsAreReproducibleFromTheSeed) {
    std::mt19937_64 a(77), b(77);
    const AugmentationSpec spec;
    for (int i = 0; i < 100; ++i) EXPECT_EQ(draw_augmentation(spec, 32, 32, a), draw_augmentation(spec, 32, 32, b));
}

TEST(Augmentation, ShiftAddsAConstant) {
    const Image img(4, 4, 0.25f);
    AugmentationDraw d;
    d.shift = 0.1;
    const Image out = apply_augmentation(img, d);
    for (float v : out.values) EXPECT_NEAR(v, 0.35f, 1e-6);
}

TEST(Augmentation, InvalidSpecsAreRejected) {
    AugmentationSpec s;
    s.hflip_p = 1.5;
    EXPECT_THROW(s.validate(), std::invalid_argument);
    s = AugmentationSpec{};
    s.erase_min_area = 0.5;
    s.erase_max_area = 0.1;
    EXPECT_THROW(s.validate(), std::invalid_argument);
}
