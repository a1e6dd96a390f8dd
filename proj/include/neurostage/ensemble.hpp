#ifndef NEUROSTAGE_ENSEMBLE_HPP
#define NEUROSTAGE_ENSEMBLE_HPP

// Stacked head: per-scan counts of CNN slice labels, classified by a forest.

#include <algorithm>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "neurostage/cnn.hpp"
#include "neurostage/dataset.hpp"
#include "neurostage/forest.hpp"
#include "neurostage/labels.hpp"
#include "neurostage/metrics.hpp"

namespace neurostage {

struct ScanCountVector {
    std::string patient_id;
    std::string session_id;
    std::vector<int> counts;
    int n_slices = 0;
    ClassLabel truth = ClassLabel::NonDemented;
    bool operator==(const ScanCountVector&) const = default;
};

/// Label of one slice, in [0, num_classes).
using SliceLabeler = std::function<int(const SliceRef&)>;

inline ScanCountVector aggregate_scan(const std::vector<SliceRef>& slices, std::size_t num_classes,
                                      const SliceLabeler& label_of) {
    if (slices.empty()) throw InvalidArgument("aggregate_scan: empty slice list");
    ScanCountVector v;
    v.patient_id = slices.front().patient_id;
    v.session_id = slices.front().session_id;
    v.truth = slices.front().label;
    v.counts.assign(num_classes, 0);
    for (const auto& s : slices) {
        if (scan_key(s) != scan_key(slices.front()))
            throw InvalidArgument("aggregate_scan: slices from " + s.patient_id + "/" + s.session_id + " and " +
                                  v.patient_id + "/" + v.session_id + " mixed");
        const int k = label_of(s);
        if (k < 0 || static_cast<std::size_t>(k) >= num_classes)
            throw InvalidArgument("aggregate_scan: slice label out of range");
        ++v.counts[static_cast<std::size_t>(k)];
    }
    v.n_slices = static_cast<int>(slices.size());
    return v;
}

/// Eval-mode CNN votes over the slices of one scan, loaded from disk.
inline ScanCountVector aggregate_scan(const CnnModel& model, const std::vector<SliceRef>& slices) {
    return aggregate_scan(slices, model.num_classes, [&](const SliceRef& r) {
        return predict_slice(model, prepare_input(load_gray(r.path), model.input_size)).label;
    });
}

/// One count vector per scan, in scan-identity order.
inline std::vector<ScanCountVector> aggregate_scans(const std::vector<SliceRef>& refs, std::size_t num_classes,
                                                    const SliceLabeler& label_of) {
    std::vector<ScanCountVector> out;
    for (const auto& [key, slices] : group_by_scan(refs)) out.push_back(aggregate_scan(slices, num_classes, label_of));
    return out;
}

inline std::vector<ScanCountVector> aggregate_scans(const CnnModel& model, const std::vector<SliceRef>& refs) {
    std::vector<ScanCountVector> out;
    for (const auto& [key, slices] : group_by_scan(refs)) out.push_back(aggregate_scan(model, slices));
    return out;
}

// ---------------------------------------------------------------------------
// Stack dataset

struct StackRow {
    std::string patient_id;
    std::string session_id;
    std::vector<int> counts;
    int label = 0;  ///< task target index
    bool operator==(const StackRow&) const = default;
};

struct StackDataset {
    Task task = Task::Detection;
    std::vector<StackRow> rows;
    std::size_t excluded_moderate = 0;

    std::vector<std::string> classes() const { return class_names(task); }
    FeatureRows features() const {
        FeatureRows x;
        for (const auto& r : rows) x.push_back(std::vector<double>(r.counts.begin(), r.counts.end()));
        return x;
    }
    std::vector<int> labels() const {
        std::vector<int> y;
        for (const auto& r : rows) y.push_back(r.label);
        return y;
    }
    bool operator==(const StackDataset&) const = default;
};

/// Detection merges every demented grade; classification drops Moderate
/// scans and counts them in `excluded_moderate`.
inline StackDataset build_stack_dataset(const std::vector<ScanCountVector>& scans, Task task) {
    StackDataset d;
    d.task = task;
    const auto k = static_cast<std::size_t>(num_classes(task));
    for (const auto& s : scans) {
        if (s.counts.size() != k)
            throw InvalidArgument("build_stack_dataset: scan " + s.patient_id + "/" + s.session_id + " has " +
                                  std::to_string(s.counts.size()) + " counts, " + std::string(task_name(task)) +
                                  " needs " + std::to_string(k));
        const auto target = task_target(s.truth, task);
        if (!target) {
            ++d.excluded_moderate;
            continue;
        }
        d.rows.push_back({s.patient_id, s.session_id, s.counts, *target});
    }
    std::sort(d.rows.begin(), d.rows.end(), [](const StackRow& a, const StackRow& b) {
        return std::tie(a.patient_id, a.session_id) < std::tie(b.patient_id, b.session_id);
    });
    return d;
}

inline std::string stack_header(Task task) {
    return task == Task::Detection ? "patient,session,count_non,count_dem,label"
                                   : "patient,session,count_non,count_verymild,count_mild,label";
}

inline std::string encode_stack_csv(const StackDataset& d) {
    const auto names = d.classes();
    std::string out = stack_header(d.task) + '\n';
    for (const auto& r : d.rows) {
        out += r.patient_id + ',' + r.session_id;
        for (int c : r.counts) out += ',' + std::to_string(c);
        out += ',' + names.at(static_cast<std::size_t>(r.label)) + '\n';
    }
    return out;
}

/// The task is recovered from the header.
inline StackDataset decode_stack_csv(const std::string& text) {
    const auto lines = split(text, '\n');
    if (lines.empty()) throw FormatError("stack CSV: empty");
    StackDataset d;
    const auto header = trim(lines[0]);
    if (header == stack_header(Task::Detection))
        d.task = Task::Detection;
    else if (header == stack_header(Task::Classification))
        d.task = Task::Classification;
    else
        throw FormatError("stack CSV: unexpected header '" + header + "'");
    const auto names = d.classes();
    const std::size_t k = names.size();
    for (std::size_t i = 1; i < lines.size(); ++i) {
        const auto line = trim(lines[i]);
        if (line.empty()) continue;
        const auto f = split(line, ',');
        if (f.size() != k + 3)
            throw FormatError("stack CSV row " + std::to_string(i + 1) + ": expected " + std::to_string(k + 3) +
                              " columns, got " + std::to_string(f.size()));
        StackRow r;
        r.patient_id = f[0];
        r.session_id = f[1];
        for (std::size_t c = 0; c < k; ++c) {
            const auto v = parse_int(f[2 + c], "slice count");
            if (v < 0) throw FormatError("stack CSV row " + std::to_string(i + 1) + ": negative count");
            r.counts.push_back(static_cast<int>(v));
        }
        const auto it = std::find(names.begin(), names.end(), f[k + 2]);
        if (it == names.end()) throw FormatError("stack CSV row " + std::to_string(i + 1) + ": unknown label '" + f[k + 2] + "'");
        r.label = static_cast<int>(it - names.begin());
        d.rows.push_back(std::move(r));
    }
    return d;
}

inline void write_stack_csv(const std::filesystem::path& path, const StackDataset& d) {
    write_file_atomic(path, encode_stack_csv(d));
}
inline StackDataset read_stack_csv(const std::filesystem::path& path) { return decode_stack_csv(read_file(path)); }

// ---------------------------------------------------------------------------
// Stack head

struct StackResult {
    ForestModel model;
    MetricsReport metrics;
    std::vector<ScanKey> train_scans;
    std::vector<ScanKey> test_scans;
};

/// Splits scans `train_fraction` / rest, fits the forest on count vectors
/// and scores the held-out scans.
inline StackResult train_stack(const StackDataset& d, const ForestConfig& cfg, std::uint64_t split_seed,
                               double train_fraction = 0.7) {
    std::set<int> present;
    for (const auto& r : d.rows) present.insert(r.label);
    if (present.size() < 2) throw InvalidArgument("train_stack: need at least 2 classes, found " + std::to_string(present.size()));
    std::vector<ScanKey> keys;
    std::map<ScanKey, const StackRow*> by_key;
    for (const auto& r : d.rows) {
        keys.emplace_back(r.patient_id, r.session_id);
        by_key[keys.back()] = &r;
    }
    auto parts = split_keys(keys, SplitSpec{{train_fraction, 1.0 - train_fraction}, split_seed}, "scans");
    StackResult res;
    res.train_scans = parts[0];
    res.test_scans = parts[1];

    FeatureRows xtr;
    std::vector<int> ytr;
    std::set<int> train_classes;
    for (const auto& k : res.train_scans) {
        const auto* r = by_key.at(k);
        xtr.push_back(std::vector<double>(r->counts.begin(), r->counts.end()));
        ytr.push_back(r->label);
        train_classes.insert(r->label);
    }
    for (int c : present)
        if (!train_classes.count(c))
            throw InvalidArgument("train_stack: class '" + d.classes().at(static_cast<std::size_t>(c)) +
                                  "' is empty in the training split");
    res.model = fit_forest(xtr, ytr, cfg, d.classes());

    std::vector<int> truth, pred;
    for (const auto& k : res.test_scans) {
        const auto* r = by_key.at(k);
        truth.push_back(r->label);
        pred.push_back(static_cast<int>(predict(res.model, std::vector<double>(r->counts.begin(), r->counts.end()))));
    }
    res.metrics = compute_metrics(truth, pred, d.classes());
    return res;
}

}  // namespace neurostage

#endif
