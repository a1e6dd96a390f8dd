#ifndef NEUROSTAGE_IMAGE_HPP
#define NEUROSTAGE_IMAGE_HPP

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "neurostage/core.hpp"

namespace neurostage {

/// 8-bit grayscale raster, row-major.
class GrayImage {
public:
    GrayImage() = default;

    GrayImage(int width, int height, std::uint8_t fill = 0) : width_(width), height_(height) {
        if (width < 1 || height < 1) throw InvalidArgument("GrayImage: dimensions must be >= 1");
        data_.assign(static_cast<std::size_t>(width) * static_cast<std::size_t>(height), fill);
    }

    GrayImage(int width, int height, std::vector<std::uint8_t> data)
        : width_(width), height_(height), data_(std::move(data)) {
        if (width < 1 || height < 1) throw InvalidArgument("GrayImage: dimensions must be >= 1");
        if (data_.size() != static_cast<std::size_t>(width) * static_cast<std::size_t>(height))
            throw InvalidArgument("GrayImage: data length does not match width x height");
    }

    int width() const { return width_; }
    int height() const { return height_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    std::uint8_t at(int x, int y) const { return data_[index(x, y)]; }
    std::uint8_t& at(int x, int y) { return data_[index(x, y)]; }

    std::span<const std::uint8_t> pixels() const { return data_; }
    std::span<std::uint8_t> pixels() { return data_; }

    bool operator==(const GrayImage&) const = default;

private:
    std::size_t index(int x, int y) const {
        return static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) + static_cast<std::size_t>(x);
    }

    int width_ = 0;
    int height_ = 0;
    std::vector<std::uint8_t> data_;
};

class BinaryMask {
public:
    BinaryMask() = default;
    BinaryMask(int width, int height, bool fill = false) : width_(width), height_(height) {
        if (width < 1 || height < 1) throw InvalidArgument("BinaryMask: dimensions must be >= 1");
        bits_.assign(static_cast<std::size_t>(width) * static_cast<std::size_t>(height), fill ? 1 : 0);
    }

    int width() const { return width_; }
    int height() const { return height_; }
    std::size_t size() const { return bits_.size(); }

    bool at(int x, int y) const { return bits_[index(x, y)] != 0; }
    void set(int x, int y, bool v) { bits_[index(x, y)] = v ? 1 : 0; }

    bool in_bounds(int x, int y) const { return x >= 0 && y >= 0 && x < width_ && y < height_; }

    std::size_t count() const {
        std::size_t n = 0;
        for (auto b : bits_) n += b;
        return n;
    }

    BinaryMask inverted() const {
        BinaryMask out = *this;
        for (auto& b : out.bits_) b = b ? 0 : 1;
        return out;
    }

    bool operator==(const BinaryMask&) const = default;

private:
    std::size_t index(int x, int y) const {
        return static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) + static_cast<std::size_t>(x);
    }

    int width_ = 0;
    int height_ = 0;
    // uint8_t rather than vector<bool> so rows can be scanned cheaply.
    std::vector<std::uint8_t> bits_;
};

struct Pixel {
    int x = 0;
    int y = 0;
    bool operator==(const Pixel&) const = default;
};

// ---------------------------------------------------------------------------
// PGM I/O

namespace detail {

class PgmReader {
public:
    explicit PgmReader(std::string bytes) : buf_(std::move(bytes)) {}

    void skip_ws_and_comments() {
        while (pos_ < buf_.size()) {
            const char c = buf_[pos_];
            if (c == '#') {
                while (pos_ < buf_.size() && buf_[pos_] != '\n') ++pos_;
            } else if (c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f') {
                ++pos_;
            } else {
                break;
            }
        }
    }

    long long read_uint(const char* what) {
        skip_ws_and_comments();
        const std::size_t start = pos_;
        long long v = 0;
        while (pos_ < buf_.size() && buf_[pos_] >= '0' && buf_[pos_] <= '9') {
            v = v * 10 + (buf_[pos_] - '0');
            if (v > (1LL << 40)) throw FormatError(std::string("PGM: ") + what + " out of range");
            ++pos_;
        }
        if (pos_ == start) throw FormatError(std::string("PGM: expected ") + what);
        return v;
    }

    std::size_t pos_ = 0;
    std::string buf_;
};

}  // namespace detail

/// Decodes an 8-bit PGM (P2 or P5, maxval 255).
inline GrayImage decode_pgm(std::string bytes) {
    detail::PgmReader r(std::move(bytes));
    if (r.buf_.size() < 2 || r.buf_[0] != 'P' || (r.buf_[1] != '2' && r.buf_[1] != '5'))
        throw FormatError("PGM: bad magic number (expected P2 or P5)");
    const bool binary = r.buf_[1] == '5';
    r.pos_ = 2;
    const auto w = r.read_uint("width");
    const auto h = r.read_uint("height");
    const auto maxval = r.read_uint("maxval");
    if (w < 1 || h < 1) throw FormatError("PGM: zero dimension");
    if (maxval != 255) throw FormatError("PGM: maxval must be 255, got " + std::to_string(maxval));
    const std::size_t n = static_cast<std::size_t>(w) * static_cast<std::size_t>(h);
    std::vector<std::uint8_t> data(n);
    if (binary) {
        // exactly one whitespace byte separates the header from the raster
        if (r.pos_ >= r.buf_.size()) throw FormatError("PGM: truncated raster");
        ++r.pos_;
        if (r.buf_.size() - r.pos_ < n) throw FormatError("PGM: truncated raster");
        for (std::size_t i = 0; i < n; ++i) data[i] = static_cast<std::uint8_t>(r.buf_[r.pos_ + i]);
    } else {
        for (std::size_t i = 0; i < n; ++i) {
            r.skip_ws_and_comments();
            if (r.pos_ >= r.buf_.size()) throw FormatError("PGM: truncated raster");
            const auto v = r.read_uint("pixel");
            if (v > 255) throw FormatError("PGM: pixel value exceeds maxval");
            data[i] = static_cast<std::uint8_t>(v);
        }
    }
    return GrayImage(static_cast<int>(w), static_cast<int>(h), std::move(data));
}

inline std::string encode_pgm(const GrayImage& image) {
    std::string out = "P5\n" + std::to_string(image.width()) + " " + std::to_string(image.height()) + "\n255\n";
    const auto px = image.pixels();
    out.append(reinterpret_cast<const char*>(px.data()), px.size());
    return out;
}

inline std::string encode_pgm_ascii(const GrayImage& image) {
    std::string out = "P2\n" + std::to_string(image.width()) + " " + std::to_string(image.height()) + "\n255\n";
    for (int y = 0; y < image.height(); ++y) {
        for (int x = 0; x < image.width(); ++x) {
            if (x) out += ' ';
            out += std::to_string(image.at(x, y));
        }
        out += '\n';
    }
    return out;
}

inline GrayImage load_gray(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw IoError("no such file: '" + path.string() + "'");
    try {
        return decode_pgm(read_file(path));
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

inline void save_gray(const GrayImage& image, const std::filesystem::path& path) {
    write_file_atomic(path, encode_pgm(image));
}

// ---------------------------------------------------------------------------
// Filters

/// Normalized 1D Gaussian taps; the 2D kernel is their outer product.
inline std::vector<double> gaussian_taps(int kernel_size, double sigma) {
    if (kernel_size < 1 || kernel_size % 2 == 0)
        throw InvalidArgument("gaussian_blur: kernel_size must be odd and >= 1, got " + std::to_string(kernel_size));
    if (!(sigma > 0.0)) throw InvalidArgument("gaussian_blur: sigma must be positive");
    const int r = kernel_size / 2;
    std::vector<double> taps(static_cast<std::size_t>(kernel_size));
    double sum = 0.0;
    for (int i = -r; i <= r; ++i) {
        taps[static_cast<std::size_t>(i + r)] = std::exp(-(i * i) / (2.0 * sigma * sigma));
        sum += taps[static_cast<std::size_t>(i + r)];
    }
    for (auto& t : taps) t /= sum;
    return taps;
}

/// Separable Gaussian blur with edge-clamp borders.
///
/// Symmetric taps are accumulated in mirrored pairs, so the result is exactly
/// invariant under horizontal and vertical flips of the input.
inline GrayImage gaussian_blur(const GrayImage& image, int kernel_size, double sigma) {
    const auto taps = gaussian_taps(kernel_size, sigma);
    const int r = kernel_size / 2;
    const int w = image.width();
    const int h = image.height();
    auto clampi = [](int v, int lo, int hi) { return v < lo ? lo : (v > hi ? hi : v); };

    std::vector<double> tmp(static_cast<std::size_t>(w) * static_cast<std::size_t>(h));
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double acc = taps[static_cast<std::size_t>(r)] * image.at(x, y);
            for (int k = 1; k <= r; ++k) {
                const double pair = static_cast<double>(image.at(clampi(x - k, 0, w - 1), y)) +
                                    static_cast<double>(image.at(clampi(x + k, 0, w - 1), y));
                acc += taps[static_cast<std::size_t>(r + k)] * pair;
            }
            tmp[static_cast<std::size_t>(y) * static_cast<std::size_t>(w) + static_cast<std::size_t>(x)] = acc;
        }
    }
    GrayImage out(w, h);
    auto t = [&](int x, int y) {
        return tmp[static_cast<std::size_t>(y) * static_cast<std::size_t>(w) + static_cast<std::size_t>(x)];
    };
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double acc = taps[static_cast<std::size_t>(r)] * t(x, y);
            for (int k = 1; k <= r; ++k)
                acc += taps[static_cast<std::size_t>(r + k)] * (t(x, clampi(y - k, 0, h - 1)) + t(x, clampi(y + k, 0, h - 1)));
            out.at(x, y) = clamp_to_u8(acc);
        }
    }
    return out;
}

/// Pixels strictly brighter than `t`.
inline BinaryMask threshold(const GrayImage& image, int t) {
    BinaryMask mask(image.width(), image.height());
    for (int y = 0; y < image.height(); ++y)
        for (int x = 0; x < image.width(); ++x)
            if (image.at(x, y) > t) mask.set(x, y, true);
    return mask;
}

/// Saturating intensity scale.
inline GrayImage multiply_contrast(const GrayImage& image, double factor) {
    if (!(factor > 0.0)) throw InvalidArgument("multiply_contrast: factor must be positive");
    GrayImage out = image;
    for (auto& p : out.pixels()) p = clamp_to_u8(static_cast<double>(p) * factor);
    return out;
}

namespace detail {

// Corner-aligned source coordinate: output 0 maps to input 0 and output n-1
// to input m-1. A single-sample axis samples the input center.
inline double corner_aligned(int i, int out_n, int in_n) {
    if (out_n == 1) return (in_n - 1) / 2.0;
    return static_cast<double>(i) * static_cast<double>(in_n - 1) / static_cast<double>(out_n - 1);
}

}  // namespace detail

/// Bilinear sample at real coordinates; out-of-range positions read `fill`.
inline double sample_bilinear(const GrayImage& image, double sx, double sy, double fill = 0.0) {
    const int w = image.width();
    const int h = image.height();
    if (sx < 0.0 || sy < 0.0 || sx > w - 1 || sy > h - 1) return fill;
    const int x0 = static_cast<int>(std::floor(sx));
    const int y0 = static_cast<int>(std::floor(sy));
    const int x1 = x0 + 1 < w ? x0 + 1 : x0;
    const int y1 = y0 + 1 < h ? y0 + 1 : y0;
    const double fx = sx - x0;
    const double fy = sy - y0;
    const double top = image.at(x0, y0) * (1.0 - fx) + image.at(x1, y0) * fx;
    const double bottom = image.at(x0, y1) * (1.0 - fx) + image.at(x1, y1) * fx;
    return top * (1.0 - fy) + bottom * fy;
}

inline GrayImage resize_bilinear(const GrayImage& image, int out_w, int out_h) {
    if (out_w < 1 || out_h < 1) throw InvalidArgument("resize_bilinear: target dimensions must be >= 1");
    if (out_w == image.width() && out_h == image.height()) return image;
    GrayImage out(out_w, out_h);
    for (int y = 0; y < out_h; ++y) {
        const double sy = detail::corner_aligned(y, out_h, image.height());
        for (int x = 0; x < out_w; ++x) {
            const double sx = detail::corner_aligned(x, out_w, image.width());
            out.at(x, y) = clamp_to_u8(sample_bilinear(image, sx, sy));
        }
    }
    return out;
}

inline GrayImage flip_horizontal(const GrayImage& image) {
    GrayImage out(image.width(), image.height());
    for (int y = 0; y < image.height(); ++y)
        for (int x = 0; x < image.width(); ++x) out.at(x, y) = image.at(image.width() - 1 - x, y);
    return out;
}

inline GrayImage flip_vertical(const GrayImage& image) {
    GrayImage out(image.width(), image.height());
    for (int y = 0; y < image.height(); ++y)
        for (int x = 0; x < image.width(); ++x) out.at(x, y) = image.at(x, image.height() - 1 - y);
    return out;
}

inline GrayImage crop(const GrayImage& image, int x0, int y0, int w, int h) {
    if (x0 < 0 || y0 < 0 || w < 1 || h < 1 || x0 + w > image.width() || y0 + h > image.height())
        throw InvalidArgument("crop: rectangle outside image");
    GrayImage out(w, h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) out.at(x, y) = image.at(x0 + x, y0 + y);
    return out;
}

// ---------------------------------------------------------------------------
// Flood fill

/// 4-connected flood fill. Every pixel connected to a seed through pixels
/// sharing that seed's value in the *input* mask is set to `fill_value`.
///
/// Scanline algorithm: each stack entry expands to a full horizontal run.
inline BinaryMask flood_fill(const BinaryMask& mask, std::span<const Pixel> seeds, bool fill_value) {
    for (const auto& s : seeds)
        if (!mask.in_bounds(s.x, s.y))
            throw InvalidArgument("flood_fill: seed (" + std::to_string(s.x) + "," + std::to_string(s.y) +
                                  ") outside " + std::to_string(mask.width()) + "x" + std::to_string(mask.height()) +
                                  " mask");
    const int w = mask.width();
    const int h = mask.height();
    BinaryMask out = mask;
    std::vector<std::uint8_t> visited(mask.size(), 0);
    auto idx = [w](int x, int y) { return static_cast<std::size_t>(y) * static_cast<std::size_t>(w) + static_cast<std::size_t>(x); };

    std::vector<Pixel> stack;
    for (const auto& seed : seeds) {
        if (visited[idx(seed.x, seed.y)]) continue;
        const bool target = mask.at(seed.x, seed.y);
        stack.clear();
        stack.push_back(seed);
        while (!stack.empty()) {
            const Pixel p = stack.back();
            stack.pop_back();
            if (visited[idx(p.x, p.y)]) continue;
            int left = p.x;
            while (left > 0 && !visited[idx(left - 1, p.y)] && mask.at(left - 1, p.y) == target) --left;
            int right = p.x;
            while (right + 1 < w && !visited[idx(right + 1, p.y)] && mask.at(right + 1, p.y) == target) ++right;
            for (int x = left; x <= right; ++x) {
                visited[idx(x, p.y)] = 1;
                out.set(x, p.y, fill_value);
            }
            for (int ny : {p.y - 1, p.y + 1}) {
                if (ny < 0 || ny >= h) continue;
                bool in_run = false;
                for (int x = left; x <= right; ++x) {
                    const bool open = !visited[idx(x, ny)] && mask.at(x, ny) == target;
                    if (open && !in_run) stack.push_back({x, ny});
                    in_run = open;
                }
            }
        }
    }
    return out;
}

inline BinaryMask flood_fill(const BinaryMask& mask, std::initializer_list<Pixel> seeds, bool fill_value) {
    return flood_fill(mask, std::span<const Pixel>(seeds.begin(), seeds.size()), fill_value);
}

}  // namespace neurostage

#endif
