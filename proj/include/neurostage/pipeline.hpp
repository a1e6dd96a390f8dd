#ifndef NEUROSTAGE_PIPELINE_HPP
#define NEUROSTAGE_PIPELINE_HPP

// Stages shared by the CLI and the manifest-driven experiment runner.

#include <cmath>
#include <filesystem>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "neurostage/cnn.hpp"
#include "neurostage/config.hpp"
#include "neurostage/dataset.hpp"
#include "neurostage/ensemble.hpp"
#include "neurostage/forest.hpp"
#include "neurostage/metrics.hpp"
#include "neurostage/ood.hpp"
#include "neurostage/segmentation.hpp"

namespace neurostage {

using Logger = std::function<void(const std::string&)>;

class PipelineError : public Error {
public:
    using Error::Error;
};

/// Runs `fn`, rethrowing any failure as a PipelineError naming the stage.
template <class F>
auto stage(const std::string& name, F&& fn) -> decltype(fn()) {
    try {
        return fn();
    } catch (const PipelineError&) {
        throw;
    } catch (const std::exception& e) {
        throw PipelineError("stage '" + name + "' failed: " + e.what());
    }
}

// ---------------------------------------------------------------------------
// Config views

inline SegmentationConfig segmentation_config(const Config& c) {
    SegmentationConfig s;
    s.threshold = static_cast<int>(c.integer("segmentation.threshold"));
    s.blur_kernel = static_cast<int>(c.integer("segmentation.blur_kernel"));
    s.blur_sigma = c.real("segmentation.blur_sigma");
    s.contrast_factor = c.real("segmentation.contrast_factor");
    s.csf_use_blur = c.boolean("segmentation.csf_use_blur");
    s.min_loss = c.real("filter.min_loss");
    return s;
}

inline IngestOptions ingest_options(const Config& c) {
    IngestOptions o;
    o.pattern = c.str("data.pattern");
    o.first_layer = static_cast<int>(c.integer("data.first_layer"));
    o.last_layer = static_cast<int>(c.integer("data.last_layer"));
    o.strict = c.boolean("data.strict");
    return o;
}

inline ForestConfig forest_config(const Config& c, std::uint64_t seed) {
    ForestConfig f;
    f.n_trees = static_cast<int>(c.integer("forest.n_trees"));
    f.max_depth = static_cast<int>(c.integer("forest.max_depth"));
    f.min_samples_split = static_cast<int>(c.integer("forest.min_samples_split"));
    const auto& fps = c.str("forest.features_per_split");
    f.features_per_split = fps == "sqrt" ? ForestConfig::kSqrt : static_cast<int>(parse_int(fps, "forest.features_per_split"));
    f.bootstrap = c.boolean("forest.bootstrap");
    f.seed = seed;
    return f;
}

inline CnnArch cnn_arch(const Config& c, Task task) {
    CnnArch a;
    a.input_size = static_cast<std::size_t>(c.integer("cnn.input_size"));
    a.head_relu = c.boolean("cnn.head_relu");
    a.dropout = c.real("cnn.dropout");
    a.num_classes = static_cast<std::size_t>(num_classes(task));
    return a;
}

inline TrainConfig train_config(const Config& c, std::uint64_t seed) {
    TrainConfig t;
    t.epochs = static_cast<int>(c.integer("cnn.epochs"));
    t.batch_size = static_cast<int>(c.integer("cnn.batch_size"));
    t.learning_rate = c.real("cnn.learning_rate");
    t.momentum = c.real("cnn.momentum");
    t.augment = c.boolean("cnn.augment");
    t.seed = seed;
    return t;
}

inline OodConfig ood_config(const Config& c) {
    OodConfig o;
    o.cutoff = c.real("ood.cutoff");
    o.scan_unsure_fraction = c.real("ood.scan_unsure_fraction");
    o.validate();
    return o;
}

// ---------------------------------------------------------------------------
// Data preparation

/// Ingests, drops Moderate for classification and optionally balances.
inline std::vector<SliceRef> load_corpus(const Config& c, Task task, const Logger& log) {
    const std::filesystem::path root = c.str("data.root");
    if (root.empty()) throw InvalidArgument("data.root is not set");
    if (!std::filesystem::is_directory(root)) throw IoError("dataset root does not exist: '" + root.string() + "'");
    const auto res = ingest(root, ingest_options(c));
    if (log) {
        log("ingested " + std::to_string(res.refs.size()) + " slices, skipped " +
            std::to_string(res.skipped_outside_window) + " outside the layer window, " +
            std::to_string(res.unparsable.size()) + " unparsable");
    }
    std::vector<SliceRef> refs;
    std::size_t moderate = 0;
    for (const auto& r : res.refs) {
        if (task_target(r.label, task))
            refs.push_back(r);
        else
            ++moderate;
    }
    if (moderate && log) log("excluded " + std::to_string(moderate) + " moderate slices");
    if (c.boolean("data.balance")) {
        refs = balance(refs, task, c.seed());
        if (log) log("balanced to " + std::to_string(refs.size()) + " slices");
    }
    if (refs.empty()) throw InvalidArgument("no usable slices under '" + root.string() + "'");
    return refs;
}

/// Feature records for every slice; blank slices are skipped and counted.
inline std::vector<FeatureRecord> compute_features(const std::vector<SliceRef>& refs, const SegmentationConfig& seg,
                                                   std::size_t* skipped = nullptr) {
    std::vector<FeatureRecord> out;
    std::size_t skip = 0;
    for (const auto& r : refs) {
        try {
            out.push_back({r.patient_id, r.session_id, r.layer_index, r.label, extract_features(load_gray(r.path), seg)});
        } catch (const EmptySliceError&) {
            ++skip;
        } catch (const SegmentationError&) {
            ++skip;
        }
    }
    if (skipped) *skipped = skip;
    return out;
}

/// Writes the edge-cropped original of every slice under `out_dir/<class>/`.
inline void write_processed(const std::vector<SliceRef>& refs, const SegmentationConfig& seg,
                            const std::filesystem::path& out_dir) {
    for (const auto& r : refs) {
        const auto img = load_gray(r.path);
        GrayImage cropped = img;
        try {
            const auto c = edge_crop(gaussian_blur(img, seg.blur_kernel, seg.blur_sigma), seg.threshold);
            cropped = crop(img, c.x0, c.y0, c.crop_w, c.crop_h);
        } catch (const EmptySliceError&) {
        }
        const auto dir = out_dir / std::string(label_name(r.label));
        std::filesystem::create_directories(dir);
        save_gray(cropped, dir / r.path.filename());
    }
}

inline std::vector<LabeledImage> load_labeled(const std::vector<SliceRef>& refs, Task task) {
    std::vector<LabeledImage> out;
    out.reserve(refs.size());
    for (const auto& r : refs) {
        const auto t = task_target(r.label, task);
        if (t) out.push_back({load_gray(r.path), *t});
    }
    return out;
}

// ---------------------------------------------------------------------------
// Volume forest

struct VolumeResult {
    ForestModel model;
    MetricsReport metrics;
};

/// Patient-level split of feature records, forest fit on the train side,
/// metrics on the test side.
inline VolumeResult train_volume_rf(const std::vector<FeatureRecord>& records, Task task, const ForestConfig& fcfg,
                                    const SplitSpec& split, bool all_five = false) {
    std::vector<std::string> patients;
    for (const auto& r : records) patients.push_back(r.patient_id);
    const auto parts = split_keys(patients, split, "patients");
    const std::set<std::string> train_patients(parts[0].begin(), parts[0].end());
    FeatureRows xtr;
    std::vector<int> ytr, truth, pred;
    std::vector<std::vector<double>> xte;
    for (const auto& r : records) {
        const auto t = task_target(r.label, task);
        if (!t) continue;
        if (train_patients.count(r.patient_id)) {
            xtr.push_back(feature_vector(r.features, all_five));
            ytr.push_back(*t);
        } else {
            xte.push_back(feature_vector(r.features, all_five));
            truth.push_back(*t);
        }
    }
    VolumeResult res;
    res.model = fit_forest(xtr, ytr, fcfg, class_names(task));
    for (const auto& x : xte) pred.push_back(static_cast<int>(predict(res.model, x)));
    res.metrics = compute_metrics(truth, pred, class_names(task));
    return res;
}

// ---------------------------------------------------------------------------
// Repeated evaluation

struct Spread {
    double min = 0.0, mean = 0.0, max = 0.0, stddev = 0.0;
};

inline Spread spread(const std::vector<double>& v) {
    Spread s;
    if (v.empty()) return s;
    s.min = s.max = v.front();
    for (double x : v) {
        s.min = std::min(s.min, x);
        s.max = std::max(s.max, x);
        s.mean += x;
    }
    s.mean /= static_cast<double>(v.size());
    for (double x : v) s.stddev += (x - s.mean) * (x - s.mean);
    s.stddev = std::sqrt(s.stddev / static_cast<double>(v.size()));
    return s;
}

inline std::string format_repeats(const std::vector<std::uint64_t>& seeds, const std::vector<MetricsReport>& runs) {
    std::vector<double> acc, wf;
    std::string rows;
    for (std::size_t i = 0; i < runs.size(); ++i) {
        acc.push_back(runs[i].accuracy);
        wf.push_back(runs[i].weighted_f);
        rows += "run " + std::to_string(i) + " seed " + std::to_string(seeds[i]) + " accuracy " +
                format_exact(runs[i].accuracy) + " weighted_f " + format_exact(runs[i].weighted_f) + '\n';
    }
    auto line = [](const std::string& name, const Spread& s) {
        return name + " min " + format_exact(s.min) + " mean " + format_exact(s.mean) + " max " + format_exact(s.max) +
               " stddev " + format_exact(s.stddev) + '\n';
    };
    return "repeats " + std::to_string(runs.size()) + '\n' + line("accuracy", spread(acc)) + line("weighted_f", spread(wf)) + rows;
}

// ---------------------------------------------------------------------------
// Experiment runner

struct ExperimentResult {
    std::filesystem::path out_dir;
    std::vector<std::filesystem::path> files;
    MetricsReport metrics;
};

inline std::vector<std::string> pipeline_names() {
    return {"volume-rf-detection", "volume-rf-classification", "cnn-detection",
            "cnn-classification",  "stack-detection",          "stack-classification"};
}

namespace detail {

struct Outputs {
    std::filesystem::path dir;
    std::vector<std::filesystem::path> files;

    void text(const std::string& name, const std::string& body) {
        write_file_atomic(dir / name, body);
        files.push_back(dir / name);
    }
    void metrics(const MetricsReport& m, int cell_px) {
        text("metrics.txt", format_metrics(m));
        files.push_back(dir / "confusion.pgm");
        files.push_back(emit_heatmap(m.matrix, dir / "confusion.pgm", cell_px));
    }
};

inline Task pipeline_task(const std::string& name) {
    if (name.ends_with("-detection")) return Task::Detection;
    if (name.ends_with("-classification")) return Task::Classification;
    throw InvalidArgument("unknown pipeline '" + name + "'");
}

inline std::string format_epochs(const std::vector<EpochMetrics>& h) {
    std::string out = "epoch,train_loss,train_accuracy,val_loss,val_accuracy\n";
    for (const auto& e : h)
        out += std::to_string(e.epoch) + ',' + format_exact(e.train_loss) + ',' + format_exact(e.train_accuracy) + ',' +
               format_exact(e.val_loss) + ',' + format_exact(e.val_accuracy) + '\n';
    return out;
}

/// Patient split into CNN train / validation / held-out parts, with the
/// brain-loss filter applied to the first two only.
struct CnnSplit {
    std::vector<SliceRef> train, val, held_out;
};

inline CnnSplit cnn_split(const Config& c, const std::vector<SliceRef>& refs, const SegmentationConfig& seg,
                          const Logger& log) {
    const auto fr = c.reals("cnn.split");
    if (fr.size() != 3) throw InvalidArgument("cnn.split needs three fractions (train,val,test)");
    const auto parts = split_by_patient(refs, SplitSpec{fr, c.seed()});
    CnnSplit s{parts[0], parts[1], parts[2]};
    if (c.boolean("cnn.filter_training")) {
        const auto before = s.train.size() + s.val.size();
        s.train = filter_training_slices(s.train, seg.min_loss, seg);
        s.val = filter_training_slices(s.val, seg.min_loss, seg);
        if (log) log("brain-loss filter removed " + std::to_string(before - s.train.size() - s.val.size()) + " slices");
    }
    return s;
}

inline CnnModel fit_cnn(const Config& c, Task task, const CnnSplit& s, Outputs& out, const Logger& log) {
    auto model = make_cnn(cnn_arch(c, task), c.seed());
    const auto tr = load_labeled(s.train, task);
    const auto va = load_labeled(s.val, task);
    const auto history = train(model, tr, va, train_config(c, c.seed()), [&](const EpochMetrics& e) {
        if (log)
            log("epoch " + std::to_string(e.epoch) + " train_loss " + format_sig(e.train_loss, 6) + " train_acc " +
                format_sig(e.train_accuracy, 4) + " val_acc " + format_sig(e.val_accuracy, 4));
    });
    out.text("epochs.csv", format_epochs(history));
    save_cnn(model, out.dir / "cnn.nspcnn");
    out.files.push_back(out.dir / "cnn.nspcnn");
    return model;
}

}  // namespace detail

/// Executes the pipeline named by `pipeline`, writing every artifact plus a
/// manifest (the fully resolved config) under `out.dir`. Rerunning with the
/// manifest as config reproduces every file.
inline ExperimentResult run_experiment(const Config& c, const Logger& log = {}) {
    const auto name = c.str("pipeline");
    const auto names = pipeline_names();
    if (std::find(names.begin(), names.end(), name) == names.end()) throw InvalidArgument("unknown pipeline '" + name + "'");
    const Task task = detail::pipeline_task(name);
    const auto seg = segmentation_config(c);
    const int cell_px = static_cast<int>(c.integer("heatmap.cell_px"));
    const auto repeats = c.integer("eval.repeats");
    if (repeats < 1) throw InvalidArgument("eval.repeats must be >= 1");

    detail::Outputs out{c.str("out.dir"), {}};
    const auto refs = stage("ingest", [&] { return load_corpus(c, task, log); });
    std::filesystem::create_directories(out.dir);
    out.text("manifest.txt", c.to_text());
    ExperimentResult result;
    result.out_dir = out.dir;

    if (name.starts_with("volume-rf")) {
        const auto records = stage("features", [&] {
            std::size_t skipped = 0;
            auto r = compute_features(refs, seg, &skipped);
            if (skipped && log) log("skipped " + std::to_string(skipped) + " blank slices");
            return r;
        });
        out.text("features.csv", encode_features(records));
        const double tf = c.real("volume.train_fraction");
        const bool all_five = c.boolean("volume.all_five_features");
        std::vector<MetricsReport> runs;
        std::vector<std::uint64_t> seeds;
        for (long long r = 0; r < repeats; ++r) {
            const std::uint64_t s = c.seed() + static_cast<std::uint64_t>(r);
            auto vr = stage("train-rf", [&] {
                return train_volume_rf(records, task, forest_config(c, s), SplitSpec{{tf, 1.0 - tf}, s}, all_five);
            });
            if (r == 0) {
                out.text("forest.nsprf", serialize_forest(vr.model));
                out.metrics(vr.metrics, cell_px);
                result.metrics = vr.metrics;
            }
            seeds.push_back(s);
            runs.push_back(vr.metrics);
        }
        if (repeats > 1) out.text("repeats.txt", format_repeats(seeds, runs));
    } else if (name.starts_with("cnn")) {
        const auto split = stage("split", [&] { return detail::cnn_split(c, refs, seg, log); });
        const auto model = stage("train-cnn", [&] { return detail::fit_cnn(c, task, split, out, log); });
        stage("evaluate", [&] {
            const auto ocfg = ood_config(c);
            std::vector<int> truth, pred;
            std::vector<PredictionRow> rows;
            std::vector<GatedPrediction> gated;
            for (const auto& r : split.held_out) {
                const auto p = predict_slice(model, prepare_input(load_gray(r.path), model.input_size));
                truth.push_back(*task_target(r.label, task));
                pred.push_back(p.label);
                gated.push_back(gate(p, ocfg));
                rows.push_back({r.patient_id, r.session_id, r.layer_index, gated.back()});
            }
            result.metrics = compute_metrics(truth, pred, class_names(task));
            out.metrics(result.metrics, cell_px);
            out.text("predictions.csv", encode_prediction_report(rows, class_names(task)));
            const auto ga = gated_accuracy(gated, truth);
            out.text("gated.txt", "cutoff " + format_exact(ocfg.cutoff) + "\naccuracy " + format_exact(ga.accuracy) +
                                      "\nunsure_fraction " + format_exact(ga.unsure_fraction) + '\n');
        });
    } else {
        const auto split = stage("split", [&] { return detail::cnn_split(c, refs, seg, log); });
        const auto model = stage("train-cnn", [&] { return detail::fit_cnn(c, task, split, out, log); });
        auto pool = split.val;
        pool.insert(pool.end(), split.held_out.begin(), split.held_out.end());
        const auto dataset = stage("aggregate", [&] {
            // stacking scans come from patients the CNN never trained on and are never filtered
            std::set<ScanKey> keys;
            for (const auto& r : pool) keys.insert(scan_key(r));
            std::vector<SliceRef> scans;
            for (const auto& r : refs)
                if (keys.count(scan_key(r))) scans.push_back(r);
            return build_stack_dataset(aggregate_scans(model, scans), task);
        });
        out.text("stack.csv", encode_stack_csv(dataset));
        const double tf = c.real("stack.train_fraction");
        std::vector<MetricsReport> runs;
        std::vector<std::uint64_t> seeds;
        for (long long r = 0; r < repeats; ++r) {
            const std::uint64_t s = c.seed() + static_cast<std::uint64_t>(r);
            const auto sr = stage("stack", [&] { return train_stack(dataset, forest_config(c, s), s, tf); });
            if (r == 0) {
                out.text("stack.nsprf", serialize_forest(sr.model));
                out.metrics(sr.metrics, cell_px);
                result.metrics = sr.metrics;
            }
            seeds.push_back(s);
            runs.push_back(sr.metrics);
        }
        if (repeats > 1) out.text("repeats.txt", format_repeats(seeds, runs));
    }
    result.files = out.files;
    return result;
}

}  // namespace neurostage

#endif
