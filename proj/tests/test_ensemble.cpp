#include <gtest/gtest.h>

#include <filesystem>
#include <map>

#include "neurostage/ensemble.hpp"

using namespace neurostage;

namespace {

std::vector<SliceRef> scan_slices(const std::string& patient, const std::string& session, ClassLabel truth,
                                  int first = 100, int last = 160) {
    std::vector<SliceRef> out;
    for (int l = first; l <= last; ++l) out.push_back({"", patient, session, l, truth});
    return out;
}

ScanCountVector counts_row(const std::string& patient, std::vector<int> counts, ClassLabel truth) {
    ScanCountVector v;
    v.patient_id = patient;
    v.session_id = "MR1";
    v.counts = std::move(counts);
    for (int c : v.counts) v.n_slices += c;
    v.truth = truth;
    return v;
}

}  // namespace

TEST(Aggregate, UniformPrediction) {
    const auto slices = scan_slices("0001", "MR1", ClassLabel::NonDemented);
    const auto v = aggregate_scan(slices, 3, [](const SliceRef&) { return 0; });
    EXPECT_EQ(v.counts, (std::vector<int>{61, 0, 0}));
    EXPECT_EQ(v.n_slices, 61);
}

TEST(Aggregate, FortyTwentyOne) {
    const auto slices = scan_slices("0002", "MR1", ClassLabel::VeryMildDemented);
    const auto v = aggregate_scan(slices, 3, [](const SliceRef& s) { return s.layer_index < 140 ? 0 : 1; });
    EXPECT_EQ(v.counts, (std::vector<int>{40, 21, 0}));
    EXPECT_EQ(v.truth, ClassLabel::VeryMildDemented);
}

TEST(Aggregate, MatchesBruteForceTally) {
    Rng r(3);
    for (int trial = 0; trial < 50; ++trial) {
        const auto slices = scan_slices("p" + std::to_string(trial), "MR1", ClassLabel::MildDemented, 100,
                                        100 + static_cast<int>(r.below(61)));
        std::map<int, int> stub;
        for (const auto& s : slices) stub[s.layer_index] = static_cast<int>(r.below(3));
        const auto v = aggregate_scan(slices, 3, [&](const SliceRef& s) { return stub.at(s.layer_index); });
        std::vector<int> tally(3, 0);
        for (const auto& [layer, k] : stub) ++tally[static_cast<std::size_t>(k)];
        EXPECT_EQ(v.counts, tally);
        EXPECT_EQ(v.counts[0] + v.counts[1] + v.counts[2], static_cast<int>(slices.size()));
    }
}

TEST(Aggregate, Errors) {
    EXPECT_THROW(aggregate_scan({}, 2, [](const SliceRef&) { return 0; }), InvalidArgument);
    auto mixed = scan_slices("0001", "MR1", ClassLabel::NonDemented, 100, 101);
    mixed.push_back({"", "0001", "MR2", 102, ClassLabel::NonDemented});
    EXPECT_THROW(aggregate_scan(mixed, 2, [](const SliceRef&) { return 0; }), InvalidArgument);
    const auto ok = scan_slices("0001", "MR1", ClassLabel::NonDemented, 100, 101);
    EXPECT_THROW(aggregate_scan(ok, 2, [](const SliceRef&) { return 2; }), InvalidArgument);
}

TEST(Aggregate, GroupsByScan) {
    auto refs = scan_slices("0002", "MR1", ClassLabel::NonDemented, 100, 104);
    const auto more = scan_slices("0001", "MR1", ClassLabel::MildDemented, 100, 102);
    refs.insert(refs.begin() + 2, more.begin(), more.end());
    const auto scans = aggregate_scans(refs, 2, [](const SliceRef&) { return 1; });
    ASSERT_EQ(scans.size(), 2u);
    EXPECT_EQ(scans[0].patient_id, "0001");
    EXPECT_EQ(scans[0].n_slices, 3);
    EXPECT_EQ(scans[1].n_slices, 5);
}

TEST(Aggregate, CnnVotesFromDisk) {
    const auto dir = std::filesystem::temp_directory_path() / "neurostage_aggregate_test";
    std::filesystem::create_directories(dir);
    CnnArch arch;
    arch.input_size = 24;
    arch.num_classes = 3;
    const auto model = make_cnn(arch, 5);
    Rng r(6);
    std::vector<SliceRef> slices;
    std::vector<int> tally(3, 0);
    for (int l = 0; l < 12; ++l) {
        GrayImage im(32, 32);
        for (auto& p : im.pixels()) p = static_cast<std::uint8_t>(r.below(256));
        const auto path = dir / ("s" + std::to_string(l) + ".pgm");
        save_gray(im, path);
        slices.push_back({path, "0009", "MR1", 100 + l, ClassLabel::NonDemented});
        ++tally[static_cast<std::size_t>(predict_slice(model, resize_bilinear(im, 24, 24)).label)];
    }
    EXPECT_EQ(aggregate_scan(model, slices).counts, tally);
    std::filesystem::remove_all(dir);
}

TEST(StackDataset, DetectionMergesDementedGrades) {
    const auto d = build_stack_dataset({counts_row("a", {50, 11}, ClassLabel::VeryMildDemented),
                                        counts_row("b", {60, 1}, ClassLabel::NonDemented),
                                        counts_row("c", {3, 58}, ClassLabel::ModerateDemented)},
                                       Task::Detection);
    ASSERT_EQ(d.rows.size(), 3u);
    EXPECT_EQ(d.rows[0].label, 1);
    EXPECT_EQ(d.rows[1].label, 0);
    EXPECT_EQ(d.rows[2].label, 1);
    EXPECT_EQ(d.excluded_moderate, 0u);
}

TEST(StackDataset, ClassificationDropsModerate) {
    const auto d = build_stack_dataset({counts_row("a", {50, 11, 0}, ClassLabel::VeryMildDemented),
                                        counts_row("b", {60, 1, 0}, ClassLabel::NonDemented),
                                        counts_row("c", {3, 8, 50}, ClassLabel::ModerateDemented)},
                                       Task::Classification);
    ASSERT_EQ(d.rows.size(), 2u);
    EXPECT_EQ(d.excluded_moderate, 1u);
    EXPECT_EQ(d.rows[0].label, 1);
    EXPECT_EQ(d.rows[1].label, 0);
}

TEST(StackDataset, CountWidthMustMatchTask) {
    EXPECT_THROW(build_stack_dataset({counts_row("a", {50, 11, 0}, ClassLabel::NonDemented)}, Task::Detection),
                 InvalidArgument);
}

TEST(StackDataset, RowsInScanOrder) {
    std::vector<ScanCountVector> scans;
    for (int i = 9; i >= 0; --i) scans.push_back(counts_row(std::to_string(i), {61, 0}, ClassLabel::NonDemented));
    const auto d = build_stack_dataset(scans, Task::Detection);
    ASSERT_EQ(d.rows.size(), 10u);
    for (std::size_t i = 0; i < 10; ++i) EXPECT_EQ(d.rows[i].patient_id, std::to_string(i));
}

TEST(StackCsv, HeadersAndRoundTrip) {
    EXPECT_EQ(stack_header(Task::Detection), "patient,session,count_non,count_dem,label");
    EXPECT_EQ(stack_header(Task::Classification), "patient,session,count_non,count_verymild,count_mild,label");
    const auto d = build_stack_dataset({counts_row("a", {50, 11, 0}, ClassLabel::VeryMildDemented),
                                        counts_row("b", {60, 1, 0}, ClassLabel::NonDemented),
                                        counts_row("c", {1, 10, 50}, ClassLabel::MildDemented)},
                                       Task::Classification);
    const auto text = encode_stack_csv(d);
    EXPECT_EQ(text.substr(0, text.find('\n')), stack_header(Task::Classification));
    EXPECT_NE(text.find("a,MR1,50,11,0,verymild\n"), std::string::npos);
    auto back = decode_stack_csv(text);
    back.excluded_moderate = d.excluded_moderate;
    EXPECT_EQ(back, d);
}

TEST(StackCsv, RejectsMalformed) {
    EXPECT_THROW(decode_stack_csv("patient,session,a,b,label\n"), FormatError);
    EXPECT_THROW(decode_stack_csv(stack_header(Task::Detection) + "\na,MR1,1,label\n"), FormatError);
    EXPECT_THROW(decode_stack_csv(stack_header(Task::Detection) + "\na,MR1,1,2,mild\n"), FormatError);
    EXPECT_THROW(decode_stack_csv(stack_header(Task::Detection) + "\na,MR1,-1,2,dem\n"), FormatError);
}

TEST(StackHead, SeparableCountsGivePerfectAccuracy) {
    Rng r(7);
    std::vector<ScanCountVector> scans;
    for (int i = 0; i < 60; ++i) {
        const bool dem = i % 2;
        const int off = static_cast<int>(r.below(6));
        scans.push_back(counts_row("p" + std::to_string(100 + i), dem ? std::vector<int>{off, 61 - off}
                                                                     : std::vector<int>{61 - off, off},
                                   dem ? ClassLabel::MildDemented : ClassLabel::NonDemented));
    }
    const auto d = build_stack_dataset(scans, Task::Detection);
    ForestConfig cfg;
    cfg.seed = 3;
    const auto res = train_stack(d, cfg, 11);
    EXPECT_EQ(res.test_scans.size(), 18u);
    EXPECT_EQ(res.train_scans.size(), 42u);
    EXPECT_EQ(res.metrics.accuracy, 1.0);
    EXPECT_EQ(res.model.n_features, 2u);
}

TEST(StackHead, IdenticalCountsGiveMajorityRate) {
    std::vector<ScanCountVector> scans;
    for (int i = 0; i < 40; ++i)
        scans.push_back(counts_row("p" + std::to_string(100 + i), {30, 20, 11},
                                   i % 4 == 0 ? ClassLabel::MildDemented : ClassLabel::NonDemented));
    const auto d = build_stack_dataset(scans, Task::Classification);
    ForestConfig cfg;
    cfg.seed = 4;
    const auto res = train_stack(d, cfg, 12);
    std::size_t non = 0;
    for (const auto& k : res.test_scans)
        for (const auto& row : d.rows)
            if (row.patient_id == k.first && row.label == 0) ++non;
    EXPECT_DOUBLE_EQ(res.metrics.accuracy, static_cast<double>(non) / static_cast<double>(res.test_scans.size()));
    EXPECT_EQ(res.model.n_features, 3u);
}

TEST(StackHead, NeedsTwoClasses) {
    std::vector<ScanCountVector> scans;
    for (int i = 0; i < 10; ++i) scans.push_back(counts_row(std::to_string(i), {61, 0}, ClassLabel::NonDemented));
    EXPECT_THROW(train_stack(build_stack_dataset(scans, Task::Detection), ForestConfig{}, 1), InvalidArgument);
}
