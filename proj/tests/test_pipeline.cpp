#include <gtest/gtest.h>

#include <filesystem>

#include <unistd.h>

#include "neurostage/phantom.hpp"
#include "neurostage/pipeline.hpp"

using namespace neurostage;
namespace fs = std::filesystem;

namespace {

fs::path scratch_root() {
    return fs::temp_directory_path() / ("neurostage_pipeline_" + std::to_string(::getpid()));
}

fs::path scratch(const std::string& name) {
    const auto p = scratch_root() / name;
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

// Small corpus shared by the runner tests: 3 classes x 8 patients x 5 slices of 64 px.
const fs::path& corpus() {
    static const fs::path root = [] {
        const auto r = scratch("corpus");
        PhantomCorpusSpec spec;
        spec.patients_per_class = 8;
        spec.scan.size = 64;
        spec.scan.first_layer = 128;
        spec.scan.last_layer = 132;
        write_phantom_corpus(r, spec);
        return r;
    }();
    return root;
}

Config small_config(const std::string& pipeline, const fs::path& out) {
    auto c = Config::defaults();
    c.set("pipeline", pipeline);
    c.set("data.root", corpus().string());
    c.set("out.dir", out.string());
    c.set("seed", "5");
    c.set("forest.n_trees", "15");
    c.set("cnn.input_size", "32");
    c.set("cnn.epochs", "1");
    c.set("cnn.batch_size", "8");
    c.set("heatmap.cell_px", "4");
    return c;
}

void expect_same_files(const ExperimentResult& a, const fs::path& other_dir) {
    ASSERT_FALSE(a.files.empty());
    for (const auto& f : a.files) {
        if (f.filename() == "manifest.txt") continue;
        const auto twin = other_dir / f.filename();
        ASSERT_TRUE(fs::exists(twin)) << twin;
        EXPECT_EQ(read_file(f), read_file(twin)) << f.filename();
    }
}

}  // namespace

TEST(Config, DefaultsAndOverrides) {
    auto c = Config::defaults();
    EXPECT_EQ(c.integer("segmentation.threshold"), 50);
    EXPECT_DOUBLE_EQ(c.real("ood.cutoff"), 0.6);
    EXPECT_EQ(c.reals("cnn.split"), (std::vector<double>{0.6, 0.2, 0.2}));
    c.merge_text("# comment\n\nseed = 9\nforest.n_trees=7\n");
    EXPECT_EQ(c.seed(), 9u);
    EXPECT_EQ(c.integer("forest.n_trees"), 7);
}

TEST(Config, UnknownKeyNamesTheLine) {
    auto c = Config::defaults();
    try {
        c.merge_text("seed=1\nforest.n_tree=5\n", "run.cfg");
        FAIL() << "expected FormatError";
    } catch (const FormatError& e) {
        EXPECT_NE(std::string(e.what()).find("run.cfg:2"), std::string::npos);
        EXPECT_NE(std::string(e.what()).find("forest.n_tree"), std::string::npos);
    }
    EXPECT_THROW(c.merge_text("no equals sign\n"), FormatError);
    EXPECT_THROW(c.set("bogus", "1"), InvalidArgument);
}

TEST(Config, TextRoundTrip) {
    auto c = Config::defaults();
    c.set("seed", "42");
    c.set("data.root", "/some/where");
    auto back = Config::defaults();
    back.merge_text(c.to_text());
    EXPECT_EQ(back, c);
}

TEST(Config, TypedAccessErrors) {
    auto c = Config::defaults();
    c.set("data.strict", "maybe");
    EXPECT_THROW(c.boolean("data.strict"), InvalidArgument);
    c.set("seed", "-1");
    EXPECT_THROW(c.seed(), InvalidArgument);
    c.set("forest.n_trees", "ten");
    EXPECT_THROW(c.integer("forest.n_trees"), FormatError);
}

TEST(ConfigViews, MapKeys) {
    auto c = Config::defaults();
    c.set("forest.features_per_split", "2");
    c.set("forest.max_depth", "4");
    const auto f = forest_config(c, 3);
    EXPECT_EQ(f.features_per_split, 2);
    EXPECT_EQ(f.max_depth, 4);
    EXPECT_EQ(f.seed, 3u);
    EXPECT_EQ(forest_config(Config::defaults(), 0).features_per_split, ForestConfig::kSqrt);
    EXPECT_EQ(cnn_arch(c, Task::Detection).num_classes, 2u);
    EXPECT_EQ(cnn_arch(c, Task::Classification).num_classes, 3u);
    EXPECT_TRUE(cnn_arch(c, Task::Detection).head_relu);
}

TEST(Runner, VolumeForestIsReproducibleFromManifest) {
    const auto a = scratch("vol_a"), b = scratch("vol_b");
    const auto ra = run_experiment(small_config("volume-rf-classification", a));
    for (const char* f : {"manifest.txt", "features.csv", "forest.nsprf", "metrics.txt", "confusion.pgm", "confusion.csv"})
        EXPECT_TRUE(fs::exists(a / f)) << f;
    auto again = Config::defaults();
    again.merge_file(a / "manifest.txt");
    again.set("out.dir", b.string());
    run_experiment(again);
    expect_same_files(ra, b);
    EXPECT_GT(ra.metrics.samples, 0);
    EXPECT_GT(ra.metrics.accuracy, 0.8);
}

TEST(Runner, RepeatsUseConsecutiveSeeds) {
    const auto a = scratch("rep");
    auto c = small_config("volume-rf-detection", a);
    c.set("eval.repeats", "3");
    run_experiment(c);
    const auto text = read_file(a / "repeats.txt");
    EXPECT_EQ(text.rfind("repeats 3\n", 0), 0u);
    EXPECT_NE(text.find("seed 5 "), std::string::npos);
    EXPECT_NE(text.find("seed 7 "), std::string::npos);
}

TEST(Runner, CnnAndStackAreReproducible) {
    for (const std::string name : {"cnn-detection", "stack-classification"}) {
        const auto a = scratch(name + "_a"), b = scratch(name + "_b");
        const auto ra = run_experiment(small_config(name, a));
        EXPECT_TRUE(fs::exists(a / "cnn.nspcnn"));
        EXPECT_TRUE(fs::exists(a / "epochs.csv"));
        run_experiment(small_config(name, b));
        expect_same_files(ra, b);
    }
    const auto stack = decode_stack_csv(read_file(scratch_root() / "stack-classification_a" / "stack.csv"));
    for (const auto& row : stack.rows) EXPECT_EQ(row.counts[0] + row.counts[1] + row.counts[2], 5);
}

TEST(Runner, CnnWritesGatedReport) {
    const auto a = scratch("gated");
    run_experiment(small_config("cnn-classification", a));
    const auto report = read_file(a / "predictions.csv");
    EXPECT_EQ(report.rfind("patient,session,layer,outcome,confidence\n", 0), 0u);
    EXPECT_NE(read_file(a / "gated.txt").find("cutoff 0.6"), std::string::npos);
}

TEST(Runner, MissingRootNamesThePath) {
    auto c = small_config("volume-rf-detection", scratch("missing"));
    c.set("data.root", "/no/such/oasis/root");
    try {
        run_experiment(c);
        FAIL() << "expected PipelineError";
    } catch (const PipelineError& e) {
        EXPECT_NE(std::string(e.what()).find("/no/such/oasis/root"), std::string::npos);
        EXPECT_NE(std::string(e.what()).find("ingest"), std::string::npos);
    }
}

TEST(Runner, UnknownPipelineRejected) {
    auto c = small_config("volume-svm", scratch("unknown"));
    EXPECT_THROW(run_experiment(c), InvalidArgument);
}

TEST(Repeats, SpreadByHand) {
    const auto s = spread({0.8, 0.9, 1.0});
    EXPECT_DOUBLE_EQ(s.min, 0.8);
    EXPECT_DOUBLE_EQ(s.max, 1.0);
    EXPECT_NEAR(s.mean, 0.9, 1e-15);
    EXPECT_NEAR(s.stddev, std::sqrt(0.02 / 3.0), 1e-15);
}
