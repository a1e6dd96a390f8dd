#ifndef NEUROSTAGE_OOD_HPP
#define NEUROSTAGE_OOD_HPP

// Max-softmax confidence gating.

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "neurostage/cnn.hpp"
#include "neurostage/dataset.hpp"

namespace neurostage {

struct OodConfig {
    double cutoff = 0.60;
    double scan_unsure_fraction = 0.5;

    void validate() const {
        if (!(cutoff > 0.0 && cutoff <= 1.0))
            throw InvalidArgument("ood: cutoff must lie in (0, 1], got " + format_exact(cutoff));
        if (!(scan_unsure_fraction >= 0.0 && scan_unsure_fraction <= 1.0))
            throw InvalidArgument("ood: scan_unsure_fraction must lie in [0, 1], got " + format_exact(scan_unsure_fraction));
    }
};

/// `label` is empty when the outcome is Unsure.
struct GatedPrediction {
    std::optional<int> label;
    double confidence = 0.0;

    bool unsure() const { return !label.has_value(); }
    bool operator==(const GatedPrediction&) const = default;
};

inline GatedPrediction gate(const SlicePrediction& p, const OodConfig& cfg) {
    cfg.validate();
    GatedPrediction g;
    g.confidence = p.confidence;
    if (p.confidence >= cfg.cutoff) g.label = p.label;
    return g;
}

inline GatedPrediction gate(const CnnModel& model, const GrayImage& image, const OodConfig& cfg) {
    return gate(predict_slice(model, prepare_input(image, model.input_size)), cfg);
}

/// Scan outcome: Unsure if more than `scan_unsure_fraction` of the slices
/// are Unsure, else the majority label over confident slices (ties to the
/// lowest index). Confidence is the mean slice confidence.
inline GatedPrediction gate_scan(const std::vector<GatedPrediction>& slices, std::size_t num_classes, const OodConfig& cfg) {
    cfg.validate();
    if (slices.empty()) throw InvalidArgument("gate_scan: empty slice list");
    std::vector<std::size_t> votes(num_classes, 0);
    std::size_t unsure = 0;
    double conf = 0.0;
    for (const auto& s : slices) {
        conf += s.confidence;
        if (s.unsure())
            ++unsure;
        else
            ++votes.at(static_cast<std::size_t>(*s.label));
    }
    GatedPrediction g;
    g.confidence = conf / static_cast<double>(slices.size());
    if (static_cast<double>(unsure) / static_cast<double>(slices.size()) > cfg.scan_unsure_fraction) return g;
    std::size_t best = 0;
    for (std::size_t k = 1; k < num_classes; ++k)
        if (votes[k] > votes[best]) best = k;
    g.label = static_cast<int>(best);
    return g;
}

inline std::vector<GatedPrediction> gate_slices(const CnnModel& model, const std::vector<SliceRef>& slices,
                                                const OodConfig& cfg) {
    std::vector<GatedPrediction> out;
    for (const auto& s : slices) out.push_back(gate(model, load_gray(s.path), cfg));
    return out;
}

inline GatedPrediction gate_scan(const CnnModel& model, const std::vector<SliceRef>& slices, const OodConfig& cfg) {
    if (slices.empty()) throw InvalidArgument("gate_scan: empty slice list");
    for (const auto& s : slices)
        if (scan_key(s) != scan_key(slices.front())) throw InvalidArgument("gate_scan: slices from different scans");
    return gate_scan(gate_slices(model, slices, cfg), model.num_classes, cfg);
}

// ---------------------------------------------------------------------------
// Calibration

inline constexpr double kReferenceIdConfidence = 0.67;
inline constexpr double kReferenceOodConfidence = 0.56;

struct CalibrationReport {
    double mean_id_conf = 0.0;
    double mean_ood_conf = 0.0;
    double suggested_cutoff = 0.0;
    std::size_t n_id = 0;
    std::size_t n_ood = 0;
    double reference_id_conf = kReferenceIdConfidence;
    double reference_ood_conf = kReferenceOodConfidence;
};

inline CalibrationReport calibrate(const std::vector<double>& id_conf, const std::vector<double>& ood_conf) {
    if (id_conf.empty()) throw InvalidArgument("calibrate: empty in-distribution set");
    if (ood_conf.empty()) throw InvalidArgument("calibrate: empty out-of-distribution set");
    CalibrationReport r;
    for (double c : id_conf) r.mean_id_conf += c;
    for (double c : ood_conf) r.mean_ood_conf += c;
    r.n_id = id_conf.size();
    r.n_ood = ood_conf.size();
    r.mean_id_conf /= static_cast<double>(r.n_id);
    r.mean_ood_conf /= static_cast<double>(r.n_ood);
    r.suggested_cutoff = (r.mean_id_conf + r.mean_ood_conf) / 2.0;
    return r;
}

inline std::vector<double> confidences(const CnnModel& model, const std::vector<GrayImage>& images) {
    std::vector<double> c;
    for (const auto& im : images) c.push_back(predict_slice(model, prepare_input(im, model.input_size)).confidence);
    return c;
}

inline CalibrationReport calibrate(const CnnModel& model, const std::vector<GrayImage>& id_slices,
                                   const std::vector<GrayImage>& ood_slices) {
    if (id_slices.empty()) throw InvalidArgument("calibrate: empty in-distribution set");
    if (ood_slices.empty()) throw InvalidArgument("calibrate: empty out-of-distribution set");
    return calibrate(confidences(model, id_slices), confidences(model, ood_slices));
}

inline std::string format_calibration(const CalibrationReport& r) {
    return "n_id " + std::to_string(r.n_id) + "\nn_ood " + std::to_string(r.n_ood) + "\nmean_id_conf " +
           format_exact(r.mean_id_conf) + "\nmean_ood_conf " + format_exact(r.mean_ood_conf) + "\nsuggested_cutoff " +
           format_exact(r.suggested_cutoff) + "\nreference_id_conf " + format_exact(r.reference_id_conf) +
           "\nreference_ood_conf " + format_exact(r.reference_ood_conf) + '\n';
}

// ---------------------------------------------------------------------------
// Accounting

/// In-distribution accuracy with Unsure scored as incorrect, and the share of
/// outcomes that abstained.
struct GatedAccuracy {
    double accuracy = 0.0;
    double unsure_fraction = 0.0;
    std::size_t n = 0;
};

inline GatedAccuracy gated_accuracy(const std::vector<GatedPrediction>& preds, const std::vector<int>& truths) {
    if (preds.size() != truths.size()) throw InvalidArgument("gated_accuracy: length mismatch");
    GatedAccuracy a;
    a.n = preds.size();
    if (a.n == 0) return a;
    std::size_t correct = 0, unsure = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        if (preds[i].unsure())
            ++unsure;
        else if (*preds[i].label == truths[i])
            ++correct;
    }
    a.accuracy = static_cast<double>(correct) / static_cast<double>(a.n);
    a.unsure_fraction = static_cast<double>(unsure) / static_cast<double>(a.n);
    return a;
}

/// Share of OOD outcomes flagged Unsure.
inline double flag_rate(const std::vector<GatedPrediction>& preds) {
    if (preds.empty()) return 0.0;
    std::size_t unsure = 0;
    for (const auto& p : preds) unsure += p.unsure() ? 1 : 0;
    return static_cast<double>(unsure) / static_cast<double>(preds.size());
}

// ---------------------------------------------------------------------------
// Prediction report: patient,session,layer,outcome,confidence

struct PredictionRow {
    std::string patient_id;
    std::string session_id;
    int layer_index = 0;
    GatedPrediction prediction;
};

inline std::string encode_prediction_report(const std::vector<PredictionRow>& rows, const std::vector<std::string>& classes) {
    std::string out = "patient,session,layer,outcome,confidence\n";
    for (const auto& r : rows) {
        const std::string outcome = r.prediction.unsure() ? "unsure" : classes.at(static_cast<std::size_t>(*r.prediction.label));
        out += r.patient_id + ',' + r.session_id + ',' + std::to_string(r.layer_index) + ',' + outcome + ',' +
               format_sig(r.prediction.confidence, 9) + '\n';
    }
    return out;
}

}  // namespace neurostage

#endif
