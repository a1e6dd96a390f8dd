#ifndef NEUROSTAGE_PHANTOM_HPP
#define NEUROSTAGE_PHANTOM_HPP

// Synthetic ring-and-disk brain phantoms: a bright skull annulus enclosing a
// bright brain disk, separated by a dark CSF gap. The class of a phantom is
// the fraction of the skull interior left dark.

#include <algorithm>
#include <array>
#include <cstdio>
#include <cmath>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "neurostage/image.hpp"
#include "neurostage/labels.hpp"

namespace neurostage {

struct TumorSquare {
    double cx = 0.0;
    double cy = 0.0;
    double side = 0.0;
    int intensity = 255;
};

struct PhantomSpec {
    int width = 200;
    int height = 200;
    double cx = 99.5;
    double cy = 99.5;
    double skull_outer = 90.0;
    double skull_inner = 80.0;
    double brain_radius = 60.0;
    int skull_intensity = 220;
    int brain_intensity = 150;
    int csf_intensity = 0;
    /// Uniform noise amplitude added to tissue (skull and brain) pixels.
    int noise = 0;
    std::optional<TumorSquare> tumor;
};

inline GrayImage render_phantom(const PhantomSpec& s, Rng* rng = nullptr) {
    GrayImage img(s.width, s.height, 0);
    for (int y = 0; y < s.height; ++y) {
        for (int x = 0; x < s.width; ++x) {
            const double d = std::hypot(x - s.cx, y - s.cy);
            int v = 0;
            bool tissue = false;
            if (d <= s.skull_outer && d > s.skull_inner) {
                v = s.skull_intensity;
                tissue = true;
            } else if (d <= s.brain_radius) {
                v = s.brain_intensity;
                tissue = true;
            } else if (d <= s.skull_inner) {
                v = s.csf_intensity;
            }
            if (s.tumor) {
                const auto& t = *s.tumor;
                if (std::abs(x - t.cx) <= t.side / 2 && std::abs(y - t.cy) <= t.side / 2 && d <= s.skull_inner) {
                    v = t.intensity;
                    tissue = true;
                }
            }
            if (tissue && s.noise > 0 && rng) v += static_cast<int>(rng->below(2 * s.noise + 1)) - s.noise;
            img.at(x, y) = static_cast<std::uint8_t>(std::clamp(v, 0, 255));
        }
    }
    return img;
}

/// Brain radius whose dark annulus covers `dark_fraction` of the
/// skull-enclosed disk (radius `skull_outer`).
inline double brain_radius_for(double skull_inner, double skull_outer, double dark_fraction) {
    return std::sqrt(std::max(0.0, skull_inner * skull_inner - dark_fraction * skull_outer * skull_outer));
}

struct HoleRange {
    double lo = 0.0;
    double hi = 0.0;
};

/// Dark-interior fraction ranges of the three synthetic classes
/// (non, very mild, mild).
inline std::array<HoleRange, 3> phantom_class_ranges() { return {{{0.0, 0.05}, {0.10, 0.20}, {0.30, 0.45}}}; }

/// Single 2D phantom of the given class with randomized geometry.
inline GrayImage random_class_phantom(int class_index, int size, Rng& rng, bool with_tumor = false) {
    const auto range = phantom_class_ranges().at(static_cast<std::size_t>(class_index));
    PhantomSpec s;
    s.width = s.height = size;
    const double c = (size - 1) / 2.0;
    s.cx = c + rng.uniform(-0.03, 0.03) * size;
    s.cy = c + rng.uniform(-0.03, 0.03) * size;
    s.skull_outer = size * rng.uniform(0.36, 0.44);
    s.skull_inner = s.skull_outer - size * rng.uniform(0.03, 0.045);
    s.brain_radius = brain_radius_for(s.skull_inner, s.skull_outer, rng.uniform(range.lo, range.hi));
    s.skull_intensity = 200 + static_cast<int>(rng.below(41));
    s.brain_intensity = 120 + static_cast<int>(rng.below(51));
    s.noise = 8;
    if (with_tumor) {
        const double ang = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
        const double rad = s.skull_inner * rng.uniform(0.2, 0.55);
        s.tumor = TumorSquare{s.cx + rad * std::cos(ang), s.cy + rad * std::sin(ang), s.skull_inner * rng.uniform(0.5, 0.7),
                              255};
    }
    return render_phantom(s, &rng);
}

struct PhantomScanSpec {
    int size = 248;
    int first_layer = 100;
    int last_layer = 160;
    bool with_tumor = false;
};

/// One synthetic "scan": a stack of phantoms whose skull radius follows a
/// sphere cross-section and whose dark fraction jitters around a scan-level
/// value drawn from the class range.
inline std::vector<GrayImage> random_class_scan(int class_index, const PhantomScanSpec& spec, Rng& rng) {
    const auto range = phantom_class_ranges().at(static_cast<std::size_t>(class_index));
    const double size = spec.size;
    const double c = (size - 1) / 2.0;
    const double cx = c + rng.uniform(-0.02, 0.02) * size;
    const double cy = c + rng.uniform(-0.02, 0.02) * size;
    const double r_max = size * rng.uniform(0.40, 0.46);
    const double thickness = size * rng.uniform(0.03, 0.04);
    const double scan_fraction = rng.uniform(range.lo, range.hi);
    const int skull_i = 200 + static_cast<int>(rng.below(41));
    const int brain_i = 120 + static_cast<int>(rng.below(51));
    const double mid = (spec.first_layer + spec.last_layer) / 2.0;

    std::optional<TumorSquare> tumor;
    if (spec.with_tumor) {
        const double ang = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
        const double rad = r_max * rng.uniform(0.15, 0.4);
        tumor = TumorSquare{cx + rad * std::cos(ang), cy + rad * std::sin(ang), r_max * rng.uniform(0.45, 0.65), 255};
    }

    std::vector<GrayImage> slices;
    for (int layer = spec.first_layer; layer <= spec.last_layer; ++layer) {
        const double z = (layer - mid) / 90.0;
        PhantomSpec s;
        s.width = s.height = spec.size;
        s.cx = cx;
        s.cy = cy;
        s.skull_outer = r_max * std::sqrt(1.0 - z * z);
        s.skull_inner = s.skull_outer - thickness;
        const double f = std::clamp(scan_fraction + rng.uniform(-0.02, 0.02), range.lo, range.hi);
        s.brain_radius = brain_radius_for(s.skull_inner, s.skull_outer, f);
        s.skull_intensity = skull_i;
        s.brain_intensity = brain_i;
        s.noise = 8;
        s.tumor = tumor;
        slices.push_back(render_phantom(s, &rng));
    }
    return slices;
}

struct PhantomCorpusSpec {
    int patients_per_class = 10;
    int scans_per_patient = 1;
    PhantomScanSpec scan;
    std::uint64_t seed = 7;
};

/// Writes an OASIS-style tree: <root>/<class>/OAS1_<patient>_MR<k>_mpr-1_<layer>.pgm
/// Returns the number of slices written.
inline std::size_t write_phantom_corpus(const std::filesystem::path& root, const PhantomCorpusSpec& spec) {
    static const std::array<ClassLabel, 3> labels = {ClassLabel::NonDemented, ClassLabel::VeryMildDemented,
                                                     ClassLabel::MildDemented};
    std::size_t written = 0;
    int patient_no = 0;
    for (int k = 0; k < 3; ++k) {
        const auto dir = root / std::string(label_name(labels[static_cast<std::size_t>(k)]));
        std::filesystem::create_directories(dir);
        for (int p = 0; p < spec.patients_per_class; ++p) {
            ++patient_no;
            char pid[16];
            std::snprintf(pid, sizeof(pid), "%04d", patient_no);
            for (int sc = 0; sc < spec.scans_per_patient; ++sc) {
                Rng rng(spec.seed * 1000003ULL + static_cast<std::uint64_t>(patient_no) * 131ULL + static_cast<std::uint64_t>(sc));
                const auto slices = random_class_scan(k, spec.scan, rng);
                for (std::size_t i = 0; i < slices.size(); ++i) {
                    const int layer = spec.scan.first_layer + static_cast<int>(i);
                    const auto name = "OAS1_" + std::string(pid) + "_MR" + std::to_string(sc + 1) + "_mpr-1_" +
                                      std::to_string(layer) + ".pgm";
                    save_gray(slices[i], dir / name);
                    ++written;
                }
            }
        }
    }
    return written;
}

}  // namespace neurostage

#endif
