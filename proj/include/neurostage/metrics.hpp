#ifndef NEUROSTAGE_METRICS_HPP
#define NEUROSTAGE_METRICS_HPP

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "neurostage/core.hpp"
#include "neurostage/image.hpp"

namespace neurostage {

/// Rows are truth, columns are prediction.
struct ConfusionMatrix {
    std::vector<std::string> classes;
    std::vector<std::vector<long long>> cells;

    explicit ConfusionMatrix(std::vector<std::string> names = {})
        : classes(std::move(names)), cells(classes.size(), std::vector<long long>(classes.size(), 0)) {}

    std::size_t size() const { return classes.size(); }
    long long total() const {
        long long t = 0;
        for (const auto& r : cells)
            for (auto v : r) t += v;
        return t;
    }
    long long trace() const {
        long long t = 0;
        for (std::size_t i = 0; i < cells.size(); ++i) t += cells[i][i];
        return t;
    }
    long long row_sum(std::size_t i) const {
        long long t = 0;
        for (auto v : cells.at(i)) t += v;
        return t;
    }
    long long col_sum(std::size_t j) const {
        long long t = 0;
        for (const auto& r : cells) t += r.at(j);
        return t;
    }
    bool operator==(const ConfusionMatrix&) const = default;
};

struct ClassMetrics {
    double precision = 0.0;
    double recall = 0.0;
    double f_score = 0.0;
    long long support = 0;
};

struct MetricsReport {
    double accuracy = 0.0;
    double weighted_f = 0.0;
    std::vector<ClassMetrics> per_class;
    long long samples = 0;
    ConfusionMatrix matrix;
};

inline double safe_div(double a, double b) { return b == 0.0 ? 0.0 : a / b; }

inline ConfusionMatrix confusion_matrix(const std::vector<int>& truths, const std::vector<int>& predictions,
                                        const std::vector<std::string>& classes) {
    if (truths.size() != predictions.size())
        throw InvalidArgument("compute_metrics: " + std::to_string(truths.size()) + " truths but " +
                              std::to_string(predictions.size()) + " predictions");
    ConfusionMatrix m(classes);
    const auto k = static_cast<int>(classes.size());
    for (std::size_t i = 0; i < truths.size(); ++i) {
        if (truths[i] < 0 || truths[i] >= k || predictions[i] < 0 || predictions[i] >= k)
            throw InvalidArgument("compute_metrics: label outside the class list at index " + std::to_string(i));
        ++m.cells[static_cast<std::size_t>(truths[i])][static_cast<std::size_t>(predictions[i])];
    }
    return m;
}

inline MetricsReport metrics_from_matrix(const ConfusionMatrix& m) {
    MetricsReport r;
    r.matrix = m;
    r.samples = m.total();
    r.accuracy = safe_div(static_cast<double>(m.trace()), static_cast<double>(r.samples));
    for (std::size_t c = 0; c < m.size(); ++c) {
        ClassMetrics cm;
        const double tp = static_cast<double>(m.cells[c][c]);
        cm.support = m.row_sum(c);
        cm.precision = safe_div(tp, static_cast<double>(m.col_sum(c)));
        cm.recall = safe_div(tp, static_cast<double>(cm.support));
        cm.f_score = safe_div(2.0 * cm.precision * cm.recall, cm.precision + cm.recall);
        r.weighted_f += cm.f_score * static_cast<double>(cm.support);
        r.per_class.push_back(cm);
    }
    r.weighted_f = safe_div(r.weighted_f, static_cast<double>(r.samples));
    return r;
}

/// Accuracy, per-class precision/recall/F, support-weighted F and the
/// confusion matrix.
inline MetricsReport compute_metrics(const std::vector<int>& truths, const std::vector<int>& predictions,
                                     const std::vector<std::string>& classes) {
    return metrics_from_matrix(confusion_matrix(truths, predictions, classes));
}

/// Multi-line text form; numbers use the shortest round-trip representation.
inline std::string format_metrics(const MetricsReport& r) {
    std::string out;
    out += "samples " + std::to_string(r.samples) + '\n';
    out += "accuracy " + format_exact(r.accuracy) + '\n';
    out += "weighted_f " + format_exact(r.weighted_f) + '\n';
    for (std::size_t c = 0; c < r.per_class.size(); ++c) {
        const auto& m = r.per_class[c];
        out += "class " + r.matrix.classes[c] + " precision " + format_exact(m.precision) + " recall " +
               format_exact(m.recall) + " f " + format_exact(m.f_score) + " support " + std::to_string(m.support) + '\n';
    }
    out += "confusion";
    for (const auto& row : r.matrix.cells) {
        out += " [";
        for (std::size_t j = 0; j < row.size(); ++j) out += (j ? " " : "") + std::to_string(row[j]);
        out += "]";
    }
    return out + '\n';
}

// ---------------------------------------------------------------------------
// Heatmap

inline std::string encode_matrix_csv(const ConfusionMatrix& m) {
    std::string out = "truth";
    for (const auto& c : m.classes) out += ',' + c;
    out += '\n';
    for (std::size_t i = 0; i < m.size(); ++i) {
        out += m.classes[i];
        for (auto v : m.cells[i]) out += ',' + std::to_string(v);
        out += '\n';
    }
    return out;
}

inline ConfusionMatrix decode_matrix_csv(const std::string& text) {
    std::vector<std::string> lines;
    for (auto& l : split(text, '\n'))
        if (!trim(l).empty()) lines.push_back(std::string(trim(l)));
    if (lines.empty()) throw FormatError("confusion CSV: empty");
    const auto header = split(lines[0], ',');
    if (header.empty() || header[0] != "truth") throw FormatError("confusion CSV: header must start with 'truth'");
    ConfusionMatrix m(std::vector<std::string>(header.begin() + 1, header.end()));
    if (lines.size() != m.size() + 1) throw FormatError("confusion CSV: expected one row per class");
    for (std::size_t i = 0; i < m.size(); ++i) {
        const auto f = split(lines[i + 1], ',');
        if (f.size() != m.size() + 1 || f[0] != m.classes[i])
            throw FormatError("confusion CSV: malformed row " + std::to_string(i + 2));
        for (std::size_t j = 0; j < m.size(); ++j) m.cells[i][j] = parse_int(f[j + 1], "confusion count");
    }
    return m;
}

/// Cell intensity: round(255 * count / max_cell), max treated as 1 when all
/// cells are zero.
inline std::uint8_t heat_intensity(long long count, long long max_cell) {
    const double scale = static_cast<double>(std::max<long long>(max_cell, 1));
    return clamp_to_u8(255.0 * static_cast<double>(count) / scale);
}

inline GrayImage render_heatmap(const ConfusionMatrix& m, int cell_px = 32) {
    if (m.size() == 0) throw InvalidArgument("emit_heatmap: empty matrix");
    long long mx = 0;
    for (const auto& r : m.cells)
        for (auto v : r) mx = std::max(mx, v);
    const int n = static_cast<int>(m.size());
    GrayImage img(n * cell_px, n * cell_px, 0);
    for (int y = 0; y < img.height(); ++y)
        for (int x = 0; x < img.width(); ++x)
            img.at(x, y) = heat_intensity(
                m.cells[static_cast<std::size_t>(y / cell_px)][static_cast<std::size_t>(x / cell_px)], mx);
    return img;
}

/// Writes `path` (PGM heatmap) and `path` with extension .csv (raw counts).
/// Returns the CSV path.
inline std::filesystem::path emit_heatmap(const ConfusionMatrix& m, const std::filesystem::path& path, int cell_px = 32) {
    auto csv = path;
    csv.replace_extension(".csv");
    write_file_atomic(path, encode_pgm(render_heatmap(m, cell_px)));
    write_file_atomic(csv, encode_matrix_csv(m));
    return csv;
}

inline ConfusionMatrix read_matrix_csv(const std::filesystem::path& path) { return decode_matrix_csv(read_file(path)); }

}  // namespace neurostage

#endif
