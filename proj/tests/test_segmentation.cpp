#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "neurostage/phantom.hpp"
#include "neurostage/segmentation.hpp"

using namespace neurostage;

namespace {

PhantomSpec ring_and_disk(double brain_radius) {
    PhantomSpec s;  // 200x200, skull 80..90
    s.brain_radius = brain_radius;
    return s;
}

// Crop side of a centered disk of radius r on the pixel grid.
double crop_area_for(const SliceFeatures& f) { return static_cast<double>(f.crop_w) * f.crop_h; }

}  // namespace

TEST(EdgeCrop, FullFrameUnchanged) {
    GrayImage g(6, 4, 200);
    const auto c = edge_crop(g, 50);
    EXPECT_EQ(c.crop_w, 6);
    EXPECT_EQ(c.crop_h, 4);
    EXPECT_EQ(c.image, g);
}

TEST(EdgeCrop, BrightBlockMatchesBoundingBox) {
    GrayImage g(10, 10, 0);
    for (int y = 3; y <= 6; ++y)
        for (int x = 3; x <= 6; ++x) g.at(x, y) = 200;
    const auto c = edge_crop(g, 50);
    EXPECT_EQ(c.crop_w, 4);
    EXPECT_EQ(c.crop_h, 4);
    EXPECT_EQ(c.x0, 3);
    EXPECT_EQ(c.y0, 3);
}

TEST(EdgeCrop, RandomBlobsAgainstBruteForce) {
    Rng r(1);
    for (int i = 0; i < 50; ++i) {
        GrayImage g(30, 20, 0);
        for (int k = 0; k < 5; ++k) g.at(static_cast<int>(r.below(30)), static_cast<int>(r.below(20))) = 99;
        int x0 = 99, x1 = -1, y0 = 99, y1 = -1;
        for (int y = 0; y < 20; ++y)
            for (int x = 0; x < 30; ++x)
                if (g.at(x, y) > 50) {
                    x0 = std::min(x0, x), x1 = std::max(x1, x), y0 = std::min(y0, y), y1 = std::max(y1, y);
                }
        const auto c = edge_crop(g, 50);
        EXPECT_EQ(c.x0, x0);
        EXPECT_EQ(c.y0, y0);
        EXPECT_EQ(c.crop_w, x1 - x0 + 1);
        EXPECT_EQ(c.crop_h, y1 - y0 + 1);
    }
}

TEST(EdgeCrop, EmptySlice) {
    EXPECT_THROW(edge_crop(GrayImage(8, 8, 50), 50), EmptySliceError);
    EXPECT_THROW(extract_features(GrayImage(8, 8, 0)), EmptySliceError);
    EXPECT_THROW(brain_loss_fraction(GrayImage(8, 8, 0)), EmptySliceError);
}

TEST(Anchors, DefaultSeedsAreCornersAndMidpoints) {
    const auto px = anchor_pixels(default_background_seeds(), 11, 7);
    ASSERT_EQ(px.size(), 8u);
    std::vector<Pixel> expect = {{0, 0}, {10, 0}, {0, 6}, {10, 6}, {5, 0}, {5, 6}, {0, 3}, {10, 3}};
    for (const auto& e : expect) EXPECT_NE(std::find(px.begin(), px.end(), e), px.end()) << e.x << "," << e.y;
}

TEST(Features, RingAndDiskMatchesAnalyticAreas) {
    const auto f = extract_features(render_phantom(ring_and_disk(60.0)));
    const double a = crop_area_for(f);
    const double pi = std::numbers::pi;
    EXPECT_NEAR(f.area_total, pi * (90.0 * 90.0 - 80.0 * 80.0 + 60.0 * 60.0) / a, 0.02);
    EXPECT_NEAR(f.area_csf, pi * (80.0 * 80.0 - 60.0 * 60.0) / a, 0.02);
    EXPECT_NEAR(f.area_segmented, pi * 60.0 * 60.0 / a, 0.02);
    EXPECT_NEAR(f.crop_w, 181, 2);
    EXPECT_NEAR(f.crop_h, 181, 2);
}

TEST(Features, SmallerBrainMeansMoreCsf) {
    const auto big = extract_features(render_phantom(ring_and_disk(60.0)));
    const auto small = extract_features(render_phantom(ring_and_disk(40.0)));
    EXPECT_GT(small.area_csf, big.area_csf);
    EXPECT_LT(small.area_segmented, big.area_segmented);
}

TEST(Features, SolidSquare) {
    const auto f = extract_features(GrayImage(40, 40, 200));
    EXPECT_EQ(f.area_total, 1.0f);
    EXPECT_EQ(f.area_csf, 0.0f);
    EXPECT_EQ(f.area_segmented, 1.0f);
}

TEST(Features, BackgroundCenterFails) {
    // hollow ring: the crop center is dark
    auto s = ring_and_disk(0.0);
    EXPECT_THROW(extract_features(render_phantom(s)), SegmentationError);
}

TEST(Features, InvariantsOverRandomPhantoms) {
    Rng r(2);
    for (int i = 0; i < 30; ++i) {
        const auto img = random_class_phantom(i % 3, 160, r);
        const auto f = extract_features(img);
        EXPECT_GE(f.area_segmented, 0.0f);
        EXPECT_LE(f.area_segmented, f.area_total);
        EXPECT_LE(f.area_total, 1.0f);
        EXPECT_LE(f.area_csf + f.area_segmented, 1.0f + 1e-6f);
        EXPECT_LE(f.crop_w, img.width());
        EXPECT_EQ(extract_features(img), f);
    }
}

TEST(Features, MonotoneInBrainRadius) {
    double prev_csf = -1.0, prev_loss = -1.0;
    for (double r = 75.0; r >= 30.0; r -= 5.0) {
        const auto img = render_phantom(ring_and_disk(r));
        const auto f = extract_features(img);
        const double loss = brain_loss_fraction(img);
        EXPECT_GE(f.area_csf, prev_csf);
        EXPECT_GE(loss, prev_loss);
        prev_csf = f.area_csf;
        prev_loss = loss;
    }
}

TEST(Features, UnblurredCsfOption) {
    SegmentationConfig cfg;
    cfg.csf_use_blur = false;
    const auto img = render_phantom(ring_and_disk(60.0));
    const auto raw = extract_features(img, cfg);
    const auto blurred = extract_features(img);
    const double a = crop_area_for(raw);
    EXPECT_NEAR(raw.area_csf, std::numbers::pi * (80.0 * 80.0 - 60.0 * 60.0) / a, 0.02);
    // the blurred skull gains about a one-pixel rim on its inner edge
    EXPECT_NEAR(raw.area_csf - blurred.area_csf, 2.0 * std::numbers::pi * 80.0 / a, 0.01);
    EXPECT_EQ(raw.area_total, blurred.area_total);
}

TEST(BrainLoss, SolidDiskIsZero) {
    PhantomSpec s;
    s.skull_inner = 0.0;
    s.brain_radius = 0.0;
    EXPECT_EQ(brain_loss_fraction(render_phantom(s)), 0.0);
}

TEST(BrainLoss, QuarterHole) {
    // dark annulus of 25% of the skull-enclosed disk (radius 90)
    const double r = std::sqrt(80.0 * 80.0 - 0.25 * 90.0 * 90.0);
    EXPECT_NEAR(brain_loss_fraction(render_phantom(ring_and_disk(r))), 0.25, 0.02);
}

TEST(BrainLoss, HollowThinRing) {
    PhantomSpec s;
    s.skull_inner = 86.0;
    s.brain_radius = 0.0;
    const double loss = brain_loss_fraction(render_phantom(s));
    EXPECT_NEAR(loss, 86.0 * 86.0 / (90.0 * 90.0), 0.02);
    EXPECT_GE(loss, 0.9);
}

TEST(BrainLoss, FlipInvariant) {
    Rng r(3);
    for (int i = 0; i < 10; ++i) {
        const auto img = random_class_phantom(i % 3, 120, r);
        const double l = brain_loss_fraction(img);
        EXPECT_EQ(brain_loss_fraction(flip_horizontal(img)), l);
        EXPECT_EQ(brain_loss_fraction(flip_vertical(img)), l);
        EXPECT_GE(l, 0.0);
        EXPECT_LE(l, 1.0);
    }
}

TEST(BrainLoss, DarkTissueCountsAfterContrastBoost) {
    // faint tissue (intensity 20) becomes 160 after the x8 boost and is not black
    PhantomSpec s;
    s.brain_intensity = 20;
    s.brain_radius = 80.0;
    EXPECT_LT(brain_loss_fraction(render_phantom(s)), 0.02);
}
