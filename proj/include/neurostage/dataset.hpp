#ifndef NEUROSTAGE_DATASET_HPP
#define NEUROSTAGE_DATASET_HPP

#include <algorithm>
#include <filesystem>
#include <functional>
#include <map>
#include <numeric>
#include <regex>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "neurostage/image.hpp"
#include "neurostage/labels.hpp"
#include "neurostage/segmentation.hpp"

namespace neurostage {

struct SliceRef {
    std::filesystem::path path;
    std::string patient_id;
    std::string session_id;
    int layer_index = 0;
    ClassLabel label = ClassLabel::NonDemented;
    bool operator==(const SliceRef&) const = default;
};

/// A scan is one (patient, session) acquisition.
using ScanKey = std::pair<std::string, std::string>;

inline ScanKey scan_key(const SliceRef& r) { return {r.patient_id, r.session_id}; }

// ---------------------------------------------------------------------------
// Ingestion

struct IngestOptions {
    /// Filename template. {patient}, {session} and {layer} capture fields,
    /// {*} matches anything; the remaining text is literal.
    std::string pattern = "OAS1_{patient}_{session}_{*}_{layer}.pgm";
    int first_layer = 100;
    int last_layer = 160;
    bool strict = false;
};

struct IngestResult {
    std::vector<SliceRef> refs;
    std::size_t skipped_outside_window = 0;
    std::vector<std::filesystem::path> unparsable;
};

class FilenamePattern {
public:
    explicit FilenamePattern(const std::string& tmpl) {
        std::string rx;
        int group = 0;
        std::size_t i = 0;
        while (i < tmpl.size()) {
            if (tmpl[i] == '{') {
                const auto close = tmpl.find('}', i);
                if (close == std::string::npos) throw InvalidArgument("filename pattern: unclosed '{' in '" + tmpl + "'");
                const auto name = tmpl.substr(i + 1, close - i - 1);
                if (name == "*") {
                    rx += ".*?";
                } else if (name == "patient" || name == "session") {
                    rx += "(.+?)";
                    (name == "patient" ? patient_group_ : session_group_) = ++group;
                } else if (name == "layer") {
                    rx += "([0-9]+)";
                    layer_group_ = ++group;
                } else {
                    throw InvalidArgument("filename pattern: unknown field '{" + name + "}'");
                }
                i = close + 1;
            } else {
                const char c = tmpl[i++];
                if (std::string_view(".^$|()[]{}*+?\\").find(c) != std::string_view::npos) rx += '\\';
                rx += c;
            }
        }
        if (!patient_group_ || !layer_group_)
            throw InvalidArgument("filename pattern must contain {patient} and {layer}: '" + tmpl + "'");
        regex_ = std::regex(rx, std::regex::ECMAScript);
    }

    /// Returns false when the name does not match.
    bool parse(const std::string& filename, std::string& patient, std::string& session, int& layer) const {
        std::smatch m;
        if (!std::regex_match(filename, m, regex_)) return false;
        patient = m[static_cast<std::size_t>(patient_group_)].str();
        session = session_group_ ? m[static_cast<std::size_t>(session_group_)].str() : std::string("1");
        layer = static_cast<int>(parse_int(m[static_cast<std::size_t>(layer_group_)].str(), "layer"));
        return true;
    }

private:
    std::regex regex_;
    int patient_group_ = 0;
    int session_group_ = 0;
    int layer_group_ = 0;
};

/// Walks `root/<class>/...` and returns slice references sorted by path.
inline IngestResult ingest(const std::filesystem::path& root, const IngestOptions& opt = {}) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(root)) throw IoError("dataset root is not a directory: '" + root.string() + "'");
    const FilenamePattern pattern(opt.pattern);
    IngestResult result;
    std::vector<fs::path> class_dirs;
    for (const auto& e : fs::directory_iterator(root))
        if (e.is_directory()) class_dirs.push_back(e.path());
    std::sort(class_dirs.begin(), class_dirs.end());
    for (const auto& dir : class_dirs) {
        const auto label = label_from_directory(dir.filename().string());
        if (!label) throw FormatError("unknown class directory '" + dir.filename().string() + "' under " + root.string());
        for (const auto& e : fs::recursive_directory_iterator(dir)) {
            if (!e.is_regular_file()) continue;
            SliceRef r;
            r.path = e.path();
            r.label = *label;
            if (!pattern.parse(e.path().filename().string(), r.patient_id, r.session_id, r.layer_index)) {
                if (opt.strict) throw FormatError("cannot parse filename '" + e.path().string() + "'");
                result.unparsable.push_back(e.path());
                continue;
            }
            if (r.layer_index < opt.first_layer || r.layer_index > opt.last_layer) {
                ++result.skipped_outside_window;
                continue;
            }
            result.refs.push_back(std::move(r));
        }
    }
    std::sort(result.refs.begin(), result.refs.end(), [](const SliceRef& a, const SliceRef& b) { return a.path < b.path; });
    std::sort(result.unparsable.begin(), result.unparsable.end());
    return result;
}

/// Groups slices by scan, preserving input order inside each scan.
inline std::map<ScanKey, std::vector<SliceRef>> group_by_scan(const std::vector<SliceRef>& refs) {
    std::map<ScanKey, std::vector<SliceRef>> scans;
    for (const auto& r : refs) scans[scan_key(r)].push_back(r);
    return scans;
}

// ---------------------------------------------------------------------------
// Balancing

/// Reference scan ratios for the non-demented subsample: 308 non-demented
/// against 311 demented scans for detection, 308 against 225 + 82 for
/// classification.
inline long long balanced_non_target(std::size_t demented_scans, Task task) {
    const double ratio = task == Task::Detection ? 308.0 / 311.0 : 308.0 / (225.0 + 82.0);
    return static_cast<long long>(round_half_up(static_cast<double>(demented_scans) * ratio));
}

/// Subsamples whole non-demented scans so the class ratio follows the
/// reference split. Demented scans are never dropped, except moderate scans
/// in classification, which that task excludes.
inline std::vector<SliceRef> balance(const std::vector<SliceRef>& refs, Task task, std::uint64_t seed) {
    std::map<ScanKey, ClassLabel> scan_label;
    for (const auto& r : refs) scan_label.emplace(scan_key(r), r.label);
    std::vector<ScanKey> non;
    std::size_t dem = 0;
    for (const auto& [k, l] : scan_label) {
        if (l == ClassLabel::NonDemented)
            non.push_back(k);
        else if (task == Task::Detection || l != ClassLabel::ModerateDemented)
            ++dem;
    }
    const auto target = static_cast<std::size_t>(std::max<long long>(0, balanced_non_target(dem, task)));
    std::set<ScanKey> keep_non(non.begin(), non.end());
    if (non.size() > target) {
        Rng rng(seed);
        rng.shuffle(non);
        keep_non = std::set<ScanKey>(non.begin(), non.begin() + static_cast<std::ptrdiff_t>(target));
    }
    std::vector<SliceRef> out;
    for (const auto& r : refs) {
        if (r.label == ClassLabel::NonDemented) {
            if (keep_non.count(scan_key(r))) out.push_back(r);
        } else if (task == Task::Detection || r.label != ClassLabel::ModerateDemented) {
            out.push_back(r);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Splitting

struct SplitSpec {
    std::vector<double> fractions = {0.8, 0.2};
    std::uint64_t seed = 0;
};

/// Largest-remainder apportionment of `n` items over `fractions`. Remainder
/// ties go to the lower partition index.
inline std::vector<std::size_t> apportion(std::size_t n, const std::vector<double>& fractions) {
    if (fractions.empty()) throw InvalidArgument("split: no partitions");
    double sum = 0.0;
    for (double f : fractions) {
        if (f < 0.0) throw InvalidArgument("split: negative fraction");
        sum += f;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw InvalidArgument("split: fractions must sum to 1");
    std::vector<std::size_t> counts(fractions.size());
    std::vector<std::pair<double, std::size_t>> rem;
    std::size_t assigned = 0;
    for (std::size_t i = 0; i < fractions.size(); ++i) {
        const double q = fractions[i] * static_cast<double>(n);
        // guard against 0.8*10 = 7.999999...
        double fl = std::floor(q + 1e-9);
        counts[i] = static_cast<std::size_t>(fl);
        assigned += counts[i];
        rem.emplace_back(q - fl, i);
    }
    std::stable_sort(rem.begin(), rem.end(), [](const auto& a, const auto& b) { return a.first > b.first + 1e-12; });
    for (std::size_t k = 0; assigned < n; ++k, ++assigned) ++counts[rem[k % rem.size()].second];
    return counts;
}

/// Shuffles `keys` with `seed` and cuts them into apportioned partitions.
template <class Key>
std::vector<std::vector<Key>> split_keys(std::vector<Key> keys, const SplitSpec& spec, std::string_view unit) {
    std::sort(keys.begin(), keys.end());
    keys.erase(std::unique(keys.begin(), keys.end()), keys.end());
    const auto counts = apportion(keys.size(), spec.fractions);
    for (std::size_t i = 0; i < counts.size(); ++i)
        if (counts[i] == 0)
            throw InvalidArgument("split: partition " + std::to_string(i) + " receives zero " + std::string(unit) +
                                  " (" + std::to_string(keys.size()) + " available)");
    Rng rng(spec.seed);
    rng.shuffle(keys);
    std::vector<std::vector<Key>> parts(counts.size());
    std::size_t pos = 0;
    for (std::size_t i = 0; i < counts.size(); ++i) {
        parts[i].assign(keys.begin() + static_cast<std::ptrdiff_t>(pos), keys.begin() + static_cast<std::ptrdiff_t>(pos + counts[i]));
        std::sort(parts[i].begin(), parts[i].end());
        pos += counts[i];
    }
    return parts;
}

/// Partitions the patient set and routes every slice of a patient to that
/// patient's partition. Slice order within a partition follows the input.
inline std::vector<std::vector<SliceRef>> split_by_patient(const std::vector<SliceRef>& refs, const SplitSpec& spec) {
    std::vector<std::string> patients;
    for (const auto& r : refs) patients.push_back(r.patient_id);
    const auto parts = split_keys(std::move(patients), spec, "patients");
    std::map<std::string, std::size_t> where;
    for (std::size_t i = 0; i < parts.size(); ++i)
        for (const auto& p : parts[i]) where[p] = i;
    std::vector<std::vector<SliceRef>> out(parts.size());
    for (const auto& r : refs) out[where.at(r.patient_id)].push_back(r);
    return out;
}

// ---------------------------------------------------------------------------
// Slice filter

using LossFunction = std::function<double(const SliceRef&)>;

/// Drops demented slices whose brain-loss fraction is below `min_loss`.
/// Non-demented slices always pass. Only meant for training and validation
/// partitions.
inline std::vector<SliceRef> filter_training_slices(const std::vector<SliceRef>& refs, double min_loss,
                                                    const LossFunction& loss) {
    if (min_loss <= 0.0) return refs;
    std::vector<SliceRef> out;
    for (const auto& r : refs) {
        if (!is_demented(r.label) || loss(r) >= min_loss) out.push_back(r);
    }
    return out;
}

inline std::vector<SliceRef> filter_training_slices(const std::vector<SliceRef>& refs, double min_loss,
                                                    const SegmentationConfig& cfg) {
    return filter_training_slices(refs, min_loss, [&cfg](const SliceRef& r) {
        try {
            return brain_loss_fraction(load_gray(r.path), cfg);
        } catch (const EmptySliceError&) {
            return 0.0;
        }
    });
}

// ---------------------------------------------------------------------------
// Feature CSV

inline constexpr std::string_view kFeatureHeader =
    "id,patient,session,layer,label,area_total,area_csf,area_segmented,crop_w,crop_h";

inline std::string encode_features(const std::vector<FeatureRecord>& records) {
    std::string out(kFeatureHeader);
    out += '\n';
    for (std::size_t i = 0; i < records.size(); ++i) {
        const auto& r = records[i];
        if (r.patient_id.find(',') != std::string::npos || r.session_id.find(',') != std::string::npos)
            throw InvalidArgument("feature CSV: identifiers must not contain commas");
        out += std::to_string(i) + ',' + r.patient_id + ',' + r.session_id + ',' + std::to_string(r.layer_index) + ',' +
               std::string(label_name(r.label)) + ',' + format_sig(r.features.area_total) + ',' +
               format_sig(r.features.area_csf) + ',' + format_sig(r.features.area_segmented) + ',' +
               std::to_string(r.features.crop_w) + ',' + std::to_string(r.features.crop_h) + '\n';
    }
    return out;
}

inline std::vector<FeatureRecord> decode_features(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || trim(line) != kFeatureHeader)
        throw FormatError("feature CSV: missing or wrong header (expected '" + std::string(kFeatureHeader) + "')");
    std::vector<FeatureRecord> out;
    std::size_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        line = trim(line);
        if (line.empty()) continue;
        const auto f = split(line, ',');
        if (f.size() != 10)
            throw FormatError("feature CSV row " + std::to_string(row) + ": expected 10 columns, found " +
                              std::to_string(f.size()));
        try {
            FeatureRecord r;
            r.patient_id = f[1];
            r.session_id = f[2];
            r.layer_index = static_cast<int>(parse_int(f[3], "layer"));
            r.label = parse_label(f[4]);
            r.features.area_total = static_cast<float>(parse_double(f[5], "area_total"));
            r.features.area_csf = static_cast<float>(parse_double(f[6], "area_csf"));
            r.features.area_segmented = static_cast<float>(parse_double(f[7], "area_segmented"));
            r.features.crop_w = static_cast<int>(parse_int(f[8], "crop_w"));
            r.features.crop_h = static_cast<int>(parse_int(f[9], "crop_h"));
            out.push_back(std::move(r));
        } catch (const FormatError& e) {
            throw FormatError("feature CSV row " + std::to_string(row) + ": " + e.what());
        }
    }
    return out;
}

inline void write_features(const std::filesystem::path& path, const std::vector<FeatureRecord>& records) {
    write_file_atomic(path, encode_features(records));
}

inline std::vector<FeatureRecord> read_features(const std::filesystem::path& path) {
    return decode_features(read_file(path));
}

/// Model input columns. The volume models use total area, segmented area and
/// CSF area; `all_five` appends the crop dimensions.
inline std::vector<double> feature_vector(const SliceFeatures& f, bool all_five = false) {
    std::vector<double> v = {f.area_total, f.area_segmented, f.area_csf};
    if (all_five) {
        v.push_back(f.crop_w);
        v.push_back(f.crop_h);
    }
    return v;
}

}  // namespace neurostage

#endif
