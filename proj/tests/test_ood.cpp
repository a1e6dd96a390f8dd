#include <gtest/gtest.h>

#include "neurostage/ood.hpp"

using namespace neurostage;

namespace {

std::vector<GatedPrediction> outcomes(const std::vector<int>& labels, int unsure) {
    std::vector<GatedPrediction> v;
    for (int l : labels) v.push_back({l, 0.9});
    for (int i = 0; i < unsure; ++i) v.push_back({std::nullopt, 0.4});
    return v;
}

}  // namespace

TEST(Gate, RuleApplication) {
    const OodConfig cfg;
    EXPECT_TRUE(gate(SlicePrediction{1, 0.55}, cfg).unsure());
    const auto g = gate(SlicePrediction{1, 0.75}, cfg);
    ASSERT_FALSE(g.unsure());
    EXPECT_EQ(*g.label, 1);
    EXPECT_DOUBLE_EQ(g.confidence, 0.75);
    EXPECT_FALSE(gate(SlicePrediction{0, 0.60}, cfg).unsure());
}

TEST(Gate, CutoffBounds) {
    EXPECT_THROW(gate(SlicePrediction{0, 0.9}, OodConfig{1.0 + 1e-9, 0.5}), InvalidArgument);
    EXPECT_THROW(gate(SlicePrediction{0, 0.9}, OodConfig{0.0, 0.5}), InvalidArgument);
    EXPECT_THROW(gate(SlicePrediction{0, 0.9}, OodConfig{0.6, 1.5}), InvalidArgument);
    EXPECT_TRUE(gate(SlicePrediction{0, 0.999999}, OodConfig{1.0, 0.5}).unsure());
    EXPECT_FALSE(gate(SlicePrediction{0, 1.0}, OodConfig{1.0, 0.5}).unsure());
}

TEST(Gate, MonotoneInCutoff) {
    Rng r(1);
    for (int trial = 0; trial < 500; ++trial) {
        const SlicePrediction p{static_cast<int>(r.below(3)), r.uniform(1.0 / 3.0, 1.0)};
        const double lo = r.uniform(0.01, 1.0), hi = r.uniform(lo, 1.0);
        const auto a = gate(p, OodConfig{lo, 0.5}), b = gate(p, OodConfig{hi, 0.5});
        if (a.unsure()) {
            EXPECT_TRUE(b.unsure());
        }
        if (!b.unsure()) {
            EXPECT_EQ(b.label, a.label);
        }
    }
}

TEST(Gate, NoAbstentionAtOrBelowUniform) {
    Rng r(2);
    for (std::size_t k : {2u, 3u}) {
        for (int trial = 0; trial < 500; ++trial) {
            std::vector<double> logits(k);
            for (auto& v : logits) v = r.uniform(-3, 3);
            const auto probs = softmax_rows(Tensor<double>({1, k}, logits));
            const auto p = from_probabilities(probs.values());
            EXPECT_FALSE(gate(p, OodConfig{1.0 / static_cast<double>(k), 0.5}).unsure());
        }
    }
}

TEST(Gate, NeverFlipsLabels) {
    Rng r(3);
    for (int trial = 0; trial < 300; ++trial) {
        const SlicePrediction p{static_cast<int>(r.below(2)), r.uniform(0.5, 1.0)};
        const auto g = gate(p, OodConfig{r.uniform(0.3, 1.0), 0.5});
        if (!g.unsure()) {
            EXPECT_EQ(*g.label, p.label);
        }
        EXPECT_EQ(g.confidence, p.confidence);
    }
}

TEST(Gate, ModelPathMatchesUngatedPrediction) {
    CnnArch arch;
    arch.input_size = 24;
    arch.num_classes = 2;
    const auto model = make_cnn(arch, 4);
    Rng r(5);
    for (int i = 0; i < 10; ++i) {
        GrayImage im(30, 30);
        for (auto& v : im.pixels()) v = static_cast<std::uint8_t>(r.below(256));
        const auto raw = predict_slice(model, prepare_input(im, 24));
        const auto g = gate(model, im, OodConfig{0.5, 0.5});
        ASSERT_FALSE(g.unsure());
        EXPECT_EQ(*g.label, raw.label);
        EXPECT_EQ(g.confidence, raw.confidence);
    }
}

TEST(GateScan, AllConfidentSameLabel) {
    const auto g = gate_scan(outcomes(std::vector<int>(61, 1), 0), 2, OodConfig{});
    ASSERT_FALSE(g.unsure());
    EXPECT_EQ(*g.label, 1);
}

TEST(GateScan, FortyOfSixtyOneUnsure) {
    EXPECT_TRUE(gate_scan(outcomes(std::vector<int>(21, 0), 40), 2, OodConfig{}).unsure());
    // exactly half is not more than half
    EXPECT_FALSE(gate_scan(outcomes(std::vector<int>(2, 0), 2), 2, OodConfig{}).unsure());
}

TEST(GateScan, TiesGoToLowestIndex) {
    const auto g = gate_scan(outcomes({2, 1, 2, 1}, 0), 3, OodConfig{});
    EXPECT_EQ(*g.label, 1);
}

TEST(GateScan, MatchesBruteForceTally) {
    Rng r(6);
    for (int trial = 0; trial < 300; ++trial) {
        const std::size_t n = 1 + r.below(61);
        std::vector<GatedPrediction> s;
        int unsure = 0;
        std::vector<int> votes(3, 0);
        double conf = 0;
        for (std::size_t i = 0; i < n; ++i) {
            GatedPrediction g;
            g.confidence = r.uniform();
            conf += g.confidence;
            if (r.bernoulli(0.4)) {
                ++unsure;
            } else {
                g.label = static_cast<int>(r.below(3));
                ++votes[static_cast<std::size_t>(*g.label)];
            }
            s.push_back(g);
        }
        const double frac = r.uniform();
        const auto got = gate_scan(s, 3, OodConfig{0.6, frac});
        if (static_cast<double>(unsure) / static_cast<double>(n) > frac) {
            EXPECT_TRUE(got.unsure());
        } else {
            int best = 0;
            for (int k = 1; k < 3; ++k)
                if (votes[static_cast<std::size_t>(k)] > votes[static_cast<std::size_t>(best)]) best = k;
            ASSERT_FALSE(got.unsure());
            EXPECT_EQ(*got.label, best);
        }
        EXPECT_NEAR(got.confidence, conf / static_cast<double>(n), 1e-12);
    }
}

TEST(GateScan, Errors) {
    EXPECT_THROW(gate_scan(std::vector<GatedPrediction>{}, 2, OodConfig{}), InvalidArgument);
}

TEST(Calibrate, ConstantConfidences) {
    const auto r = calibrate(std::vector<double>(5, 0.9), std::vector<double>(3, 0.5));
    EXPECT_DOUBLE_EQ(r.mean_id_conf, 0.9);
    EXPECT_DOUBLE_EQ(r.mean_ood_conf, 0.5);
    EXPECT_NEAR(r.suggested_cutoff, 0.7, 1e-15);
    EXPECT_EQ(r.reference_id_conf, 0.67);
    EXPECT_EQ(r.reference_ood_conf, 0.56);
    EXPECT_EQ(r.n_id, 5u);
}

TEST(Calibrate, IdenticalSets) {
    const std::vector<double> c = {0.6, 0.7, 0.8};
    const auto r = calibrate(c, c);
    EXPECT_DOUBLE_EQ(r.mean_id_conf, r.mean_ood_conf);
    EXPECT_DOUBLE_EQ(r.suggested_cutoff, r.mean_id_conf);
}

TEST(Calibrate, EmptySetsRejected) {
    EXPECT_THROW(calibrate(std::vector<double>{}, std::vector<double>{0.5}), InvalidArgument);
    EXPECT_THROW(calibrate(std::vector<double>{0.5}, std::vector<double>{}), InvalidArgument);
}

TEST(Accounting, UnsureCountsAgainstAccuracyOnly) {
    const std::vector<GatedPrediction> p = {{0, 0.9}, {1, 0.8}, {std::nullopt, 0.5}, {0, 0.7}};
    const auto a = gated_accuracy(p, {0, 1, 1, 1});
    EXPECT_DOUBLE_EQ(a.accuracy, 0.5);
    EXPECT_DOUBLE_EQ(a.unsure_fraction, 0.25);
    EXPECT_DOUBLE_EQ(flag_rate(p), 0.25);
}

TEST(Accounting, GatingOnlyRemovesCorrectAnswers) {
    Rng r(7);
    std::vector<SlicePrediction> raw;
    std::vector<int> truth;
    for (int i = 0; i < 400; ++i) {
        raw.push_back({static_cast<int>(r.below(2)), r.uniform(0.5, 1.0)});
        truth.push_back(static_cast<int>(r.below(2)));
    }
    std::vector<GatedPrediction> open, gated;
    for (const auto& p : raw) {
        open.push_back(gate(p, OodConfig{0.5, 0.5}));
        gated.push_back(gate(p, OodConfig{0.7, 0.5}));
    }
    const auto a = gated_accuracy(open, truth), b = gated_accuracy(gated, truth);
    EXPECT_EQ(a.unsure_fraction, 0.0);
    EXPECT_LE(b.accuracy, a.accuracy);
    EXPECT_LE(a.accuracy - b.accuracy, b.unsure_fraction + 1e-12);
}

TEST(Report, CsvLayout) {
    const std::vector<PredictionRow> rows = {{"0001", "MR1", 120, {1, 0.75}}, {"0002", "MR1", 121, {std::nullopt, 0.5}}};
    EXPECT_EQ(encode_prediction_report(rows, class_names(Task::Detection)),
              "patient,session,layer,outcome,confidence\n0001,MR1,120,dem,0.75\n0002,MR1,121,unsure,0.5\n");
}
