#ifndef NEUROSTAGE_SEGMENTATION_HPP
#define NEUROSTAGE_SEGMENTATION_HPP

#include <string>
#include <vector>

#include "neurostage/image.hpp"
#include "neurostage/labels.hpp"

namespace neurostage {

/// Raised when a slice has no foreground at all.
class EmptySliceError : public Error {
public:
    using Error::Error;
};

/// Raised when the brain region cannot be located from the crop center.
class SegmentationError : public Error {
public:
    using Error::Error;
};

/// Seed position as a fraction of the crop extent; (0,0) is the top-left
/// pixel and (1,1) the bottom-right one.
struct SeedAnchor {
    double fx = 0.0;
    double fy = 0.0;
    bool operator==(const SeedAnchor&) const = default;
};

/// Four corners plus the midpoints of the four borders.
inline std::vector<SeedAnchor> default_background_seeds() {
    return {{0, 0}, {1, 0}, {0, 1}, {1, 1}, {0.5, 0}, {0.5, 1}, {0, 0.5}, {1, 0.5}};
}

struct SegmentationConfig {
    int threshold = 50;
    int blur_kernel = 5;
    double blur_sigma = 1.0;
    double contrast_factor = 8.0;
    std::vector<SeedAnchor> background_seeds = default_background_seeds();
    /// Slices of demented scans whose brain-loss fraction falls below this are
    /// dropped from training data.
    double min_loss = 0.10;
    /// Count CSF on the blurred raster (true) or on the original one.
    bool csf_use_blur = true;
};

/// Volumetric features of one slice. Areas are fractions of the crop area.
/// Stored as float so the 9-significant-digit CSV round trips exactly.
struct SliceFeatures {
    float area_total = 0.0f;
    float area_csf = 0.0f;
    float area_segmented = 0.0f;
    int crop_w = 0;
    int crop_h = 0;
    bool operator==(const SliceFeatures&) const = default;
};

struct FeatureRecord {
    std::string patient_id;
    std::string session_id;
    int layer_index = 0;
    ClassLabel label = ClassLabel::NonDemented;
    SliceFeatures features;
    bool operator==(const FeatureRecord&) const = default;
};

struct CropResult {
    GrayImage image;
    int x0 = 0;
    int y0 = 0;
    int crop_w = 0;
    int crop_h = 0;
};

/// Trims leading and trailing rows and columns whose pixels are all <= t.
inline CropResult edge_crop(const GrayImage& image, int t) {
    int x_min = image.width(), x_max = -1, y_min = image.height(), y_max = -1;
    for (int y = 0; y < image.height(); ++y) {
        for (int x = 0; x < image.width(); ++x) {
            if (image.at(x, y) > t) {
                x_min = std::min(x_min, x);
                x_max = std::max(x_max, x);
                y_min = std::min(y_min, y);
                y_max = std::max(y_max, y);
            }
        }
    }
    if (x_max < 0) throw EmptySliceError("empty slice: no pixel above threshold " + std::to_string(t));
    const int w = x_max - x_min + 1;
    const int h = y_max - y_min + 1;
    return {crop(image, x_min, y_min, w, h), x_min, y_min, w, h};
}

inline std::vector<Pixel> anchor_pixels(const std::vector<SeedAnchor>& anchors, int w, int h) {
    std::vector<Pixel> seeds;
    seeds.reserve(anchors.size());
    for (const auto& a : anchors) {
        if (a.fx < 0.0 || a.fx > 1.0 || a.fy < 0.0 || a.fy > 1.0)
            throw InvalidArgument("seed anchors must lie in [0,1] x [0,1]");
        seeds.push_back({static_cast<int>(round_half_up(a.fx * (w - 1))), static_cast<int>(round_half_up(a.fy * (h - 1)))});
    }
    return seeds;
}

namespace detail {

inline GrayImage blurred_for(const GrayImage& image, const SegmentationConfig& cfg) {
    return gaussian_blur(image, cfg.blur_kernel, cfg.blur_sigma);
}

inline std::vector<Pixel> border_pixels(int w, int h) {
    std::vector<Pixel> seeds;
    for (int x = 0; x < w; ++x) {
        seeds.push_back({x, 0});
        seeds.push_back({x, h - 1});
    }
    for (int y = 1; y + 1 < h; ++y) {
        seeds.push_back({0, y});
        seeds.push_back({w - 1, y});
    }
    return seeds;
}

}  // namespace detail

/// Runs the volumetry pipeline on one slice:
///   blur -> edge crop -> threshold (total area) -> background flood fill from
///   the seed anchors (CSF = dark pixels not reached) -> flood fill of the
///   foreground component under the crop center (segmented brain).
inline SliceFeatures extract_features(const GrayImage& image, const SegmentationConfig& cfg = {}) {
    const GrayImage blurred = detail::blurred_for(image, cfg);
    const CropResult c = edge_crop(blurred, cfg.threshold);
    const double area = static_cast<double>(c.crop_w) * static_cast<double>(c.crop_h);

    // total and segmented areas use the original pixels inside the crop box
    const BinaryMask fg = threshold(crop(image, c.x0, c.y0, c.crop_w, c.crop_h), cfg.threshold);
    const auto seeds = anchor_pixels(cfg.background_seeds, c.crop_w, c.crop_h);

    const BinaryMask csf_source = cfg.csf_use_blur ? threshold(c.image, cfg.threshold) : fg;
    // After filling the background from the seeds, pixels still false are dark
    // pixels enclosed by foreground.
    const BinaryMask without_background = flood_fill(csf_source, seeds, true);
    const std::size_t csf = without_background.size() - without_background.count();

    const Pixel center{(c.crop_w - 1) / 2, (c.crop_h - 1) / 2};
    if (!fg.at(center.x, center.y))
        throw SegmentationError("segmentation failed: crop center (" + std::to_string(center.x) + "," +
                                std::to_string(center.y) + ") of " + std::to_string(c.crop_w) + "x" +
                                std::to_string(c.crop_h) + " crop is background (intensity " +
                                std::to_string(c.image.at(center.x, center.y)) + " <= " +
                                std::to_string(cfg.threshold) + ")");
    const BinaryMask without_brain = flood_fill(fg, {center}, false);
    const std::size_t segmented = fg.count() - without_brain.count();

    SliceFeatures f;
    f.area_total = static_cast<float>(static_cast<double>(fg.count()) / area);
    f.area_csf = static_cast<float>(static_cast<double>(csf) / area);
    f.area_segmented = static_cast<float>(static_cast<double>(segmented) / area);
    f.crop_w = c.crop_w;
    f.crop_h = c.crop_h;
    return f;
}

/// Fraction of the skull-enclosed area occupied by black pixels after the
/// contrast boost. The crop box comes from the blurred slice; the boost and
/// threshold see the original pixels. The enclosed area is everything not
/// connected to the crop border through black pixels, skull included.
inline double brain_loss_fraction(const GrayImage& image, const SegmentationConfig& cfg = {}) {
    const CropResult c = edge_crop(detail::blurred_for(image, cfg), cfg.threshold);
    const GrayImage boosted = multiply_contrast(crop(image, c.x0, c.y0, c.crop_w, c.crop_h), cfg.contrast_factor);
    const BinaryMask tissue = threshold(boosted, cfg.threshold);
    const auto border = detail::border_pixels(c.crop_w, c.crop_h);
    const BinaryMask filled = flood_fill(tissue, border, true);
    const std::size_t outside = filled.count() - tissue.count();
    const std::size_t enclosed = tissue.size() - outside;
    const std::size_t black_inside = filled.size() - filled.count();
    if (enclosed == 0) return 0.0;
    return static_cast<double>(black_inside) / static_cast<double>(enclosed);
}

}  // namespace neurostage

#endif
