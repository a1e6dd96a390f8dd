// neurostage command-line front end.

#include <filesystem>
#include <iostream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "neurostage/phantom.hpp"
#include "neurostage/pipeline.hpp"

using namespace neurostage;
namespace fs = std::filesystem;

namespace {

struct Common {
    std::string config_file;
    std::vector<std::string> overrides;
    std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, Common& c) {
    cmd->add_option("--config", c.config_file, "key=value config file")->check(CLI::ExistingFile);
    cmd->add_option("--set", c.overrides, "override one config key (key=value), repeatable");
    cmd->add_option("--seed", c.seed, "master seed");
}

Config resolve(const Common& c) {
    auto cfg = Config::defaults();
    if (!c.config_file.empty()) cfg.merge_file(c.config_file);
    for (const auto& kv : c.overrides) cfg.merge_text(kv, "--set");
    if (c.seed) cfg.set("seed", std::to_string(*c.seed));
    return cfg;
}

Logger stderr_log() {
    return [](const std::string& line) { std::cerr << line << '\n'; };
}

bool is_cnn_file(const fs::path& p) { return read_file(p).starts_with(kCnnMagic); }

Task task_for_classes(std::size_t k) {
    if (k == 2) return Task::Detection;
    if (k == 3) return Task::Classification;
    throw InvalidArgument("model has " + std::to_string(k) + " classes; expected 2 or 3");
}

void write_metrics(const fs::path& dir, const MetricsReport& m, const Config& cfg) {
    fs::create_directories(dir);
    write_file_atomic(dir / "metrics.txt", format_metrics(m));
    emit_heatmap(m.matrix, dir / "confusion.pgm", static_cast<int>(cfg.integer("heatmap.cell_px")));
    std::cout << format_metrics(m);
}

std::vector<SliceRef> all_slices(const Config& cfg) {
    const fs::path root = cfg.str("data.root");
    if (!fs::is_directory(root)) throw IoError("dataset root does not exist: '" + root.string() + "'");
    return ingest(root, ingest_options(cfg)).refs;
}

std::vector<GrayImage> images_under(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw IoError("image directory does not exist: '" + dir.string() + "'");
    std::vector<fs::path> paths;
    for (const auto& e : fs::recursive_directory_iterator(dir))
        if (e.is_regular_file() && e.path().extension() == ".pgm") paths.push_back(e.path());
    std::sort(paths.begin(), paths.end());
    std::vector<GrayImage> out;
    for (const auto& p : paths) out.push_back(load_gray(p));
    if (out.empty()) throw InvalidArgument("no .pgm images under '" + dir.string() + "'");
    return out;
}

// ---------------------------------------------------------------------------

int cmd_phantoms(const Config& cfg, const std::string& out, int patients, int size, int first, int last, bool tumor) {
    PhantomCorpusSpec spec;
    spec.patients_per_class = patients;
    spec.scan.size = size;
    spec.scan.first_layer = first;
    spec.scan.last_layer = last;
    spec.scan.with_tumor = tumor;
    spec.seed = cfg.seed();
    const auto n = write_phantom_corpus(out, spec);
    std::cout << "wrote " << n << " slices under " << out << '\n';
    return 0;
}

int cmd_preprocess(const Config& cfg, const std::string& out, std::string features) {
    const auto seg = segmentation_config(cfg);
    const auto refs = all_slices(cfg);
    write_processed(refs, seg, fs::path(out) / "processed");
    std::size_t skipped = 0;
    const auto records = compute_features(refs, seg, &skipped);
    if (features.empty()) features = (fs::path(out) / "features.csv").string();
    write_features(features, records);
    std::cout << "processed " << refs.size() << " slices, " << records.size() << " feature rows, " << skipped
              << " blank slices skipped\n";
    return 0;
}

int cmd_filter(const Config& cfg, const std::string& out) {
    const auto seg = segmentation_config(cfg);
    const auto refs = all_slices(cfg);
    const auto kept = filter_training_slices(refs, seg.min_loss, seg);
    std::string list;
    for (const auto& r : kept) list += r.path.string() + '\n';
    write_file_atomic(out, list);
    std::cout << "kept " << kept.size() << " of " << refs.size() << " slices (min brain loss "
              << format_exact(seg.min_loss) << ")\n";
    return 0;
}

int cmd_train_rf(const Config& cfg, const std::string& features, const std::string& task_s, const std::string& out) {
    const Task task = parse_task(task_s);
    const auto records = read_features(features);
    const double tf = cfg.real("volume.train_fraction");
    const auto vr = train_volume_rf(records, task, forest_config(cfg, cfg.seed()), SplitSpec{{tf, 1.0 - tf}, cfg.seed()},
                                    cfg.boolean("volume.all_five_features"));
    fs::create_directories(out);
    save_forest(vr.model, fs::path(out) / "forest.nsprf");
    write_metrics(out, vr.metrics, cfg);
    return 0;
}

int cmd_train_cnn(const Config& cfg, const std::string& task_s, const std::string& out) {
    const Task task = parse_task(task_s);
    const auto log = stderr_log();
    const auto refs = load_corpus(cfg, task, log);
    const auto split = detail::cnn_split(cfg, refs, segmentation_config(cfg), log);
    fs::create_directories(out);
    detail::Outputs o{out, {}};
    const auto model = detail::fit_cnn(cfg, task, split, o, log);
    const auto held = load_labeled(split.held_out, task);
    std::vector<int> truth, pred;
    for (const auto& s : held) {
        truth.push_back(s.target);
        pred.push_back(predict_slice(model, prepare_input(s.image, model.input_size)).label);
    }
    write_metrics(out, compute_metrics(truth, pred, class_names(task)), cfg);
    return 0;
}

int cmd_stack(const Config& cfg, const std::string& cnn, const std::string& out) {
    const auto model = load_cnn(cnn);
    const Task task = task_for_classes(model.num_classes);
    const auto refs = load_corpus(cfg, task, stderr_log());
    const auto dataset = build_stack_dataset(aggregate_scans(model, refs), task);
    fs::create_directories(out);
    write_stack_csv(fs::path(out) / "stack.csv", dataset);
    const auto sr = train_stack(dataset, forest_config(cfg, cfg.seed()), cfg.seed(), cfg.real("stack.train_fraction"));
    save_forest(sr.model, fs::path(out) / "stack.nsprf");
    write_metrics(out, sr.metrics, cfg);
    return 0;
}

int cmd_predict(const Config& cfg, const std::string& model_path, const std::string& image, const std::string& out,
                const std::string& features, const std::string& stack_csv, bool gate_requested,
                const std::string& policy) {
    if (!is_cnn_file(model_path)) {
        if (gate_requested)
            throw InvalidArgument(
                "the confidence gate applies to the detection CNN only: forest and stack-head outputs are vote "
                "fractions over trees, not softmax confidences, and gating them is not supported");
        const auto forest = load_forest(model_path);
        std::string report;
        if (!features.empty()) {
            report = "patient,session,layer,prediction\n";
            const bool all_five = forest.n_features == 5;
            for (const auto& r : read_features(features))
                report += r.patient_id + ',' + r.session_id + ',' + std::to_string(r.layer_index) + ',' +
                          forest.classes.at(predict(forest, feature_vector(r.features, all_five))) + '\n';
        } else if (!stack_csv.empty()) {
            report = "patient,session,prediction\n";
            for (const auto& r : read_stack_csv(stack_csv).rows)
                report += r.patient_id + ',' + r.session_id + ',' +
                          forest.classes.at(predict(forest, std::vector<double>(r.counts.begin(), r.counts.end()))) +
                          '\n';
        } else {
            throw InvalidArgument("forest models need --features (volume model) or --stack (stack head)");
        }
        if (out.empty()) std::cout << report;
        else write_file_atomic(out, report);
        return 0;
    }

    const auto model = load_cnn(model_path);
    const Task task = task_for_classes(model.num_classes);
    const auto names = class_names(task);
    const auto ocfg = ood_config(cfg);
    std::string report;
    if (!image.empty()) {
        const auto g = gate(model, load_gray(image), ocfg);
        report = "image,outcome,confidence\n" + image + ',' + (g.unsure() ? "unsure" : names.at(*g.label)) + ',' +
                 format_sig(g.confidence) + '\n';
    } else if (policy == "slice") {
        std::vector<PredictionRow> rows;
        for (const auto& r : all_slices(cfg))
            rows.push_back({r.patient_id, r.session_id, r.layer_index, gate(model, load_gray(r.path), ocfg)});
        report = encode_prediction_report(rows, names);
    } else {
        report = "patient,session,outcome,confidence,unsure_slices,slices\n";
        for (const auto& [key, slices] : group_by_scan(all_slices(cfg))) {
            const auto per_slice = gate_slices(model, slices, ocfg);
            std::size_t unsure = 0;
            for (const auto& g : per_slice) unsure += g.unsure();
            const auto g = gate_scan(per_slice, model.num_classes, ocfg);
            report += key.first + ',' + key.second + ',' + (g.unsure() ? "unsure" : names.at(*g.label)) + ',' +
                      format_sig(g.confidence) + ',' + std::to_string(unsure) + ',' + std::to_string(slices.size()) +
                      '\n';
        }
    }
    if (out.empty()) std::cout << report;
    else write_file_atomic(out, report);
    return 0;
}

int cmd_calibrate(const Config& cfg, const std::string& model_path, const std::string& ood_dir, const std::string& out) {
    const auto model = load_cnn(model_path);
    std::vector<GrayImage> id;
    for (const auto& r : all_slices(cfg)) id.push_back(load_gray(r.path));
    const auto ood = images_under(ood_dir.empty() ? cfg.str("ood.root") : ood_dir);
    const auto report = format_calibration(calibrate(model, id, ood));
    std::cout << report << "advisory only: pass --ood-cutoff to predict to apply a cutoff\n";
    if (!out.empty()) write_file_atomic(out, report);
    return 0;
}

int cmd_evaluate(const Config& cfg, const std::string& model_path, const std::string& features,
                 const std::string& stack_csv, const std::string& out) {
    std::vector<int> truth, pred;
    std::vector<std::string> names;
    if (is_cnn_file(model_path)) {
        const auto model = load_cnn(model_path);
        const Task task = task_for_classes(model.num_classes);
        names = class_names(task);
        for (const auto& r : all_slices(cfg)) {
            const auto t = task_target(r.label, task);
            if (!t) continue;
            truth.push_back(*t);
            pred.push_back(predict_slice(model, prepare_input(load_gray(r.path), model.input_size)).label);
        }
    } else {
        const auto forest = load_forest(model_path);
        const Task task = task_for_classes(forest.num_classes());
        names = forest.classes;
        if (!features.empty()) {
            for (const auto& r : read_features(features)) {
                const auto t = task_target(r.label, task);
                if (!t) continue;
                truth.push_back(*t);
                pred.push_back(static_cast<int>(predict(forest, feature_vector(r.features, forest.n_features == 5))));
            }
        } else if (!stack_csv.empty()) {
            for (const auto& r : read_stack_csv(stack_csv).rows) {
                truth.push_back(r.label);
                pred.push_back(
                    static_cast<int>(predict(forest, std::vector<double>(r.counts.begin(), r.counts.end()))));
            }
        } else {
            throw InvalidArgument("forest models need --features (volume model) or --stack (stack head)");
        }
    }
    write_metrics(out, compute_metrics(truth, pred, names), cfg);
    return 0;
}

int cmd_run(Config cfg, const std::string& out) {
    if (!out.empty()) cfg.set("out.dir", out);
    const auto res = run_experiment(cfg, stderr_log());
    std::cout << format_metrics(res.metrics);
    for (const auto& f : res.files) std::cout << "wrote " << f.string() << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"neurostage: dementia staging from axial MRI slices"};
    app.require_subcommand(1);
    Common common;

    std::string data, out, features, task = "detection", model, cnn, image, stack_csv, ood_dir, policy = "slice";
    std::optional<double> cutoff;
    int patients = 10, size = 248, first = 100, last = 160;
    bool tumor = false;

    auto data_opt = [&](CLI::App* c) { c->add_option("--data", data, "dataset root (overrides data.root)"); };

    auto* ph = app.add_subcommand("phantoms", "write a synthetic ring-and-disk phantom corpus");
    add_common(ph, common);
    ph->add_option("--out", out, "output root")->required();
    ph->add_option("--patients", patients, "patients per class")->check(CLI::PositiveNumber);
    ph->add_option("--size", size, "slice size in pixels")->check(CLI::Range(16, 4096));
    ph->add_option("--first-layer", first, "first layer index");
    ph->add_option("--last-layer", last, "last layer index");
    ph->add_flag("--tumor", tumor, "insert a bright square lesion");

    auto* pre = app.add_subcommand("preprocess", "crop slices and write the feature CSV");
    add_common(pre, common);
    data_opt(pre);
    pre->add_option("--out", out, "output directory")->required();
    pre->add_option("--features", features, "feature CSV path (default <out>/features.csv)");

    auto* flt = app.add_subcommand("filter", "list slices passing the brain-loss filter");
    add_common(flt, common);
    data_opt(flt);
    flt->add_option("--out", out, "file receiving kept slice paths")->required();

    auto* trf = app.add_subcommand("train-rf", "train the volume Random Forest on a feature CSV");
    add_common(trf, common);
    trf->add_option("--features", features, "feature CSV")->required()->check(CLI::ExistingFile);
    trf->add_option("--task", task, "detection or classification");
    trf->add_option("--out", out, "output directory")->required();

    auto* tcnn = app.add_subcommand("train-cnn", "train the slice CNN");
    add_common(tcnn, common);
    data_opt(tcnn);
    tcnn->add_option("--task", task, "detection or classification");
    tcnn->add_option("--out", out, "output directory")->required();

    auto* stk = app.add_subcommand("stack", "aggregate CNN votes per scan and train the stack head");
    add_common(stk, common);
    data_opt(stk);
    stk->add_option("--cnn", cnn, "trained CNN weights")->required()->check(CLI::ExistingFile);
    stk->add_option("--out", out, "output directory")->required();

    auto* pred = app.add_subcommand("predict", "predict with a CNN (optionally gated) or a forest");
    add_common(pred, common);
    data_opt(pred);
    pred->add_option("--model", model, "CNN or forest model file")->required()->check(CLI::ExistingFile);
    pred->add_option("--image", image, "single slice to predict")->check(CLI::ExistingFile);
    pred->add_option("--features", features, "feature CSV for a volume forest")->check(CLI::ExistingFile);
    pred->add_option("--stack", stack_csv, "count CSV for a stack head")->check(CLI::ExistingFile);
    auto* cut_opt = pred->add_option("--ood-cutoff", cutoff, "confidence cutoff in (0, 1]");
    auto* pol_opt = pred->add_option("--unsure-policy", policy, "report per slice or per scan")
                        ->check(CLI::IsMember({"slice", "scan"}));
    pred->add_option("--out", out, "report path (default stdout)");

    auto* cal = app.add_subcommand("calibrate-ood", "mean confidences on in- and out-of-distribution slices");
    add_common(cal, common);
    data_opt(cal);
    cal->add_option("--model", model, "CNN weights")->required()->check(CLI::ExistingFile);
    cal->add_option("--ood", ood_dir, "directory of out-of-distribution slices (overrides ood.root)");
    cal->add_option("--out", out, "report path");

    auto* ev = app.add_subcommand("evaluate", "metrics and confusion heatmap for a trained model");
    add_common(ev, common);
    data_opt(ev);
    ev->add_option("--model", model, "CNN or forest model file")->required()->check(CLI::ExistingFile);
    ev->add_option("--features", features, "feature CSV for a volume forest")->check(CLI::ExistingFile);
    ev->add_option("--stack", stack_csv, "count CSV for a stack head")->check(CLI::ExistingFile);
    ev->add_option("--out", out, "output directory")->required();

    auto* run = app.add_subcommand("run", "execute a named pipeline from a config or manifest");
    add_common(run, common);
    run->add_option("--out", out, "output directory (overrides out.dir)");

    CLI11_PARSE(app, argc, argv);

    try {
        auto cfg = resolve(common);
        if (!data.empty()) cfg.set("data.root", data);
        if (cutoff) cfg.set("ood.cutoff", format_exact(*cutoff));
        if (ph->parsed()) return cmd_phantoms(cfg, out, patients, size, first, last, tumor);
        if (pre->parsed()) return cmd_preprocess(cfg, out, features);
        if (flt->parsed()) return cmd_filter(cfg, out);
        if (trf->parsed()) return cmd_train_rf(cfg, features, task, out);
        if (tcnn->parsed()) return cmd_train_cnn(cfg, task, out);
        if (stk->parsed()) return cmd_stack(cfg, cnn, out);
        if (pred->parsed())
            return cmd_predict(cfg, model, image, out, features, stack_csv, cut_opt->count() > 0 || pol_opt->count() > 0,
                               policy);
        if (cal->parsed()) return cmd_calibrate(cfg, model, ood_dir, out);
        if (ev->parsed()) return cmd_evaluate(cfg, model, features, stack_csv, out);
        if (run->parsed()) return cmd_run(cfg, out);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
