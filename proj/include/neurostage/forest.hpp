#ifndef NEUROSTAGE_FOREST_HPP
#define NEUROSTAGE_FOREST_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "neurostage/core.hpp"

namespace neurostage {

using FeatureRows = std::vector<std::vector<double>>;

struct ForestConfig {
    /// Marker for "floor(sqrt(feature count))" candidate features per split.
    static constexpr int kSqrt = 0;

    int n_trees = 100;
    int max_depth = -1;  ///< negative = unlimited
    int min_samples_split = 2;
    int features_per_split = kSqrt;
    bool bootstrap = true;
    std::uint64_t seed = 0;

    bool operator==(const ForestConfig&) const = default;
};

/// Flat binary tree. A node is a leaf when `feature < 0`; leaves hold class
/// counts, internal nodes route `x[feature] <= threshold` to `left`.
struct DecisionTree {
    struct Node {
        int feature = -1;
        double threshold = 0.0;
        int left = -1;
        int right = -1;
        std::vector<std::uint32_t> counts;
        bool operator==(const Node&) const = default;
    };
    std::vector<Node> nodes;

    const Node& leaf_for(const std::vector<double>& x) const {
        std::size_t i = 0;
        while (nodes[i].feature >= 0) {
            const auto& n = nodes[i];
            i = static_cast<std::size_t>(x[static_cast<std::size_t>(n.feature)] <= n.threshold ? n.left : n.right);
        }
        return nodes[i];
    }

    bool operator==(const DecisionTree&) const = default;
};

struct ForestModel {
    std::vector<DecisionTree> trees;
    std::vector<std::string> classes;
    std::size_t n_features = 0;
    ForestConfig config;
    std::optional<double> oob_score;

    std::size_t num_classes() const { return classes.size(); }
    bool operator==(const ForestModel&) const = default;
};

namespace detail {

/// Argmax with ties to the lowest index.
template <class T>
std::size_t argmax_low(const std::vector<T>& v) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < v.size(); ++i)
        if (v[i] > v[best]) best = i;
    return best;
}

class TreeBuilder {
public:
    TreeBuilder(const FeatureRows& x, const std::vector<int>& y, std::size_t n_classes, const ForestConfig& cfg,
                std::size_t features_per_split, Rng& rng)
        : x_(x), y_(y), k_(n_classes), cfg_(cfg), mtry_(features_per_split), rng_(rng) {}

    DecisionTree build(std::vector<std::size_t> samples) {
        tree_ = {};
        grow(samples, 0);
        return std::move(tree_);
    }

private:
    struct Split {
        int feature = -1;
        double threshold = 0.0;
        double score = -1.0;
    };

    std::vector<std::uint32_t> class_counts(const std::vector<std::size_t>& s) const {
        std::vector<std::uint32_t> c(k_, 0);
        for (auto i : s) ++c[static_cast<std::size_t>(y_[i])];
        return c;
    }

    // Higher is better: sum_k cL_k^2 / nL + sum_k cR_k^2 / nR, which is
    // n * (1 - weighted child Gini impurity).
    static double purity(const std::vector<std::uint32_t>& l, double nl, const std::vector<std::uint32_t>& r, double nr) {
        double sl = 0.0, sr = 0.0;
        for (std::size_t k = 0; k < l.size(); ++k) {
            sl += static_cast<double>(l[k]) * l[k];
            sr += static_cast<double>(r[k]) * r[k];
        }
        return sl / nl + sr / nr;
    }

    void best_for_feature(const std::vector<std::size_t>& s, int f, const std::vector<std::uint32_t>& total, Split& best) {
        std::vector<std::pair<double, int>> v;
        v.reserve(s.size());
        for (auto i : s) v.emplace_back(x_[i][static_cast<std::size_t>(f)], y_[i]);
        std::sort(v.begin(), v.end());
        std::vector<std::uint32_t> left(k_, 0);
        std::vector<std::uint32_t> right = total;
        const double n = static_cast<double>(v.size());
        for (std::size_t j = 0; j + 1 < v.size(); ++j) {
            ++left[static_cast<std::size_t>(v[j].second)];
            --right[static_cast<std::size_t>(v[j].second)];
            if (v[j].first == v[j + 1].first) continue;
            const double nl = static_cast<double>(j + 1);
            const double score = purity(left, nl, right, n - nl);
            if (score > best.score) {
                double thr = v[j].first + (v[j + 1].first - v[j].first) / 2.0;
                if (!(thr < v[j + 1].first)) thr = v[j].first;
                best = {f, thr, score};
            }
        }
    }

    int grow(const std::vector<std::size_t>& s, int depth) {
        const int id = static_cast<int>(tree_.nodes.size());
        tree_.nodes.emplace_back();
        const auto counts = class_counts(s);
        const bool pure = std::count_if(counts.begin(), counts.end(), [](auto c) { return c > 0; }) <= 1;
        const bool depth_cap = cfg_.max_depth >= 0 && depth >= cfg_.max_depth;
        if (pure || depth_cap || static_cast<int>(s.size()) < cfg_.min_samples_split) {
            tree_.nodes[static_cast<std::size_t>(id)].counts = counts;
            return id;
        }

        const std::size_t p = x_[s.front()].size();
        std::vector<int> order(p);
        for (std::size_t i = 0; i < p; ++i) order[i] = static_cast<int>(i);
        // partial Fisher-Yates: the first mtry entries are the candidates
        for (std::size_t i = 0; i < mtry_ && i + 1 < p; ++i) {
            const auto j = i + static_cast<std::size_t>(rng_.below(p - i));
            std::swap(order[i], order[j]);
        }
        std::vector<int> chosen(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(mtry_));
        std::vector<int> rest(order.begin() + static_cast<std::ptrdiff_t>(mtry_), order.end());
        std::sort(chosen.begin(), chosen.end());
        std::sort(rest.begin(), rest.end());

        Split best;
        for (int f : chosen) best_for_feature(s, f, counts, best);
        // none of the candidates separates anything: fall back to the others
        for (std::size_t i = 0; best.feature < 0 && i < rest.size(); ++i) best_for_feature(s, rest[i], counts, best);
        if (best.feature < 0) {
            tree_.nodes[static_cast<std::size_t>(id)].counts = counts;
            return id;
        }

        std::vector<std::size_t> ls, rs;
        for (auto i : s) (x_[i][static_cast<std::size_t>(best.feature)] <= best.threshold ? ls : rs).push_back(i);
        const int l = grow(ls, depth + 1);
        const int r = grow(rs, depth + 1);
        auto& node = tree_.nodes[static_cast<std::size_t>(id)];
        node.feature = best.feature;
        node.threshold = best.threshold;
        node.left = l;
        node.right = r;
        return id;
    }

    const FeatureRows& x_;
    const std::vector<int>& y_;
    std::size_t k_;
    const ForestConfig& cfg_;
    std::size_t mtry_;
    Rng& rng_;
    DecisionTree tree_;
};

}  // namespace detail

inline std::size_t resolve_features_per_split(const ForestConfig& cfg, std::size_t n_features) {
    if (cfg.features_per_split == ForestConfig::kSqrt)
        return std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(std::sqrt(static_cast<double>(n_features)))));
    if (cfg.features_per_split < 0 || static_cast<std::size_t>(cfg.features_per_split) > n_features)
        throw InvalidArgument("features_per_split must be in [1, " + std::to_string(n_features) + "]");
    return static_cast<std::size_t>(cfg.features_per_split);
}

/// Per-tree majority class; ties go to the lowest class index.
inline std::size_t tree_vote(const DecisionTree& tree, const std::vector<double>& x) {
    return detail::argmax_low(tree.leaf_for(x).counts);
}

/// Grows a Gini random forest. `y` holds indices into `class_names`. Tree t
/// draws from its own generator seeded with `seed + t`.
inline ForestModel fit_forest(const FeatureRows& x, const std::vector<int>& y, const ForestConfig& cfg,
                              std::vector<std::string> class_names = {}) {
    if (x.empty()) throw InvalidArgument("fit_forest: empty training data");
    if (x.size() != y.size()) throw InvalidArgument("fit_forest: row count and label count differ");
    if (cfg.n_trees < 1) throw InvalidArgument("fit_forest: n_trees must be >= 1");
    if (cfg.min_samples_split < 2) throw InvalidArgument("fit_forest: min_samples_split must be >= 2");
    const std::size_t p = x.front().size();
    if (p == 0) throw InvalidArgument("fit_forest: rows have no features");
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (x[i].size() != p) throw InvalidArgument("fit_forest: ragged feature rows");
        for (double v : x[i])
            if (!std::isfinite(v)) throw InvalidArgument("fit_forest: non-finite feature in row " + std::to_string(i));
    }
    if (class_names.empty()) {
        const int k = *std::max_element(y.begin(), y.end()) + 1;
        for (int i = 0; i < k; ++i) class_names.push_back(std::to_string(i));
    }
    const std::size_t k = class_names.size();
    for (int label : y)
        if (label < 0 || static_cast<std::size_t>(label) >= k) throw InvalidArgument("fit_forest: label out of range");

    const std::size_t mtry = resolve_features_per_split(cfg, p);
    ForestModel model;
    model.classes = std::move(class_names);
    model.n_features = p;
    model.config = cfg;

    const std::size_t n = x.size();
    std::vector<std::vector<std::uint32_t>> oob_votes(n, std::vector<std::uint32_t>(k, 0));
    for (int t = 0; t < cfg.n_trees; ++t) {
        Rng rng(cfg.seed + static_cast<std::uint64_t>(t));
        std::vector<std::size_t> sample;
        std::vector<std::uint8_t> in_bag(n, 0);
        if (cfg.bootstrap) {
            sample.resize(n);
            for (auto& s : sample) {
                s = static_cast<std::size_t>(rng.below(n));
                in_bag[s] = 1;
            }
            std::sort(sample.begin(), sample.end());
        } else {
            sample.resize(n);
            for (std::size_t i = 0; i < n; ++i) sample[i] = i;
            std::fill(in_bag.begin(), in_bag.end(), 1);
        }
        detail::TreeBuilder builder(x, y, k, cfg, mtry, rng);
        model.trees.push_back(builder.build(std::move(sample)));
        for (std::size_t i = 0; i < n; ++i)
            if (!in_bag[i]) ++oob_votes[i][tree_vote(model.trees.back(), x[i])];
    }

    std::size_t covered = 0, correct = 0;
    for (std::size_t i = 0; i < n; ++i) {
        std::uint32_t total = 0;
        for (auto v : oob_votes[i]) total += v;
        if (total == 0) continue;
        ++covered;
        if (detail::argmax_low(oob_votes[i]) == static_cast<std::size_t>(y[i])) ++correct;
    }
    if (covered > 0) model.oob_score = static_cast<double>(correct) / static_cast<double>(covered);
    return model;
}

inline void check_row(const ForestModel& m, const std::vector<double>& x) {
    if (x.size() != m.n_features)
        throw InvalidArgument("forest: expected " + std::to_string(m.n_features) + " features, got " +
                              std::to_string(x.size()));
}

/// Majority vote over trees; ties go to the lowest class index.
inline std::size_t predict(const ForestModel& m, const std::vector<double>& x) {
    check_row(m, x);
    std::vector<std::uint32_t> votes(m.num_classes(), 0);
    for (const auto& t : m.trees) ++votes[tree_vote(t, x)];
    return detail::argmax_low(votes);
}

/// Mean of per-tree leaf class frequencies.
inline std::vector<double> predict_proba(const ForestModel& m, const std::vector<double>& x) {
    check_row(m, x);
    std::vector<double> p(m.num_classes(), 0.0);
    for (const auto& t : m.trees) {
        const auto& c = t.leaf_for(x).counts;
        double total = 0.0;
        for (auto v : c) total += v;
        for (std::size_t k = 0; k < c.size(); ++k) p[k] += c[k] / total;
    }
    for (auto& v : p) v /= static_cast<double>(m.trees.size());
    return p;
}

// ---------------------------------------------------------------------------
// Model file: "NSPRF 1" header, class list, config echo, one tree per line as
// an s-expression: (S feature threshold <left> <right>) or (L c0 c1 ...).

namespace detail {

inline void write_node(const DecisionTree& t, std::size_t i, std::string& out) {
    const auto& n = t.nodes[i];
    if (n.feature < 0) {
        out += "(L";
        for (auto c : n.counts) out += ' ' + std::to_string(c);
        out += ')';
        return;
    }
    out += "(S " + std::to_string(n.feature) + ' ' + format_exact(n.threshold) + ' ';
    write_node(t, static_cast<std::size_t>(n.left), out);
    out += ' ';
    write_node(t, static_cast<std::size_t>(n.right), out);
    out += ')';
}

class SexprParser {
public:
    SexprParser(std::string_view s, std::size_t k, std::size_t p) : s_(s), k_(k), p_(p) {}

    DecisionTree parse() {
        DecisionTree t;
        node(t);
        skip();
        if (pos_ != s_.size()) fail("trailing characters");
        return t;
    }

private:
    [[noreturn]] void fail(const std::string& why) const {
        throw FormatError("forest model: malformed tree (" + why + ") at column " + std::to_string(pos_));
    }
    void skip() {
        while (pos_ < s_.size() && s_[pos_] == ' ') ++pos_;
    }
    std::string_view token() {
        skip();
        const auto start = pos_;
        while (pos_ < s_.size() && s_[pos_] != ' ' && s_[pos_] != '(' && s_[pos_] != ')') ++pos_;
        if (start == pos_) fail("expected token");
        return s_.substr(start, pos_ - start);
    }
    void expect(char c) {
        skip();
        if (pos_ >= s_.size() || s_[pos_] != c) fail(std::string("expected '") + c + "'");
        ++pos_;
    }
    int node(DecisionTree& t) {
        expect('(');
        const auto kind = token();
        const int id = static_cast<int>(t.nodes.size());
        t.nodes.emplace_back();
        if (kind == "L") {
            std::vector<std::uint32_t> c;
            for (std::size_t i = 0; i < k_; ++i) c.push_back(static_cast<std::uint32_t>(parse_int(token(), "leaf count")));
            t.nodes[static_cast<std::size_t>(id)].counts = std::move(c);
        } else if (kind == "S") {
            const int f = static_cast<int>(parse_int(token(), "feature"));
            if (f < 0 || static_cast<std::size_t>(f) >= p_) fail("feature index out of range");
            const double thr = parse_double(token(), "threshold");
            const int l = node(t);
            const int r = node(t);
            auto& n = t.nodes[static_cast<std::size_t>(id)];
            n.feature = f;
            n.threshold = thr;
            n.left = l;
            n.right = r;
        } else {
            fail("unknown node kind");
        }
        expect(')');
        return id;
    }

    std::string_view s_;
    std::size_t pos_ = 0;
    std::size_t k_;
    std::size_t p_;
};

}  // namespace detail

inline std::string serialize_forest(const ForestModel& m) {
    std::string out = "NSPRF 1\n";
    out += "classes " + std::to_string(m.classes.size());
    for (const auto& c : m.classes) out += ' ' + c;
    out += '\n';
    const auto& c = m.config;
    out += "config n_trees=" + std::to_string(c.n_trees) + " max_depth=" + std::to_string(c.max_depth) +
           " min_samples_split=" + std::to_string(c.min_samples_split) + " features_per_split=" +
           (c.features_per_split == ForestConfig::kSqrt ? std::string("sqrt") : std::to_string(c.features_per_split)) +
           " bootstrap=" + (c.bootstrap ? "1" : "0") + " seed=" + std::to_string(c.seed) + '\n';
    out += "features " + std::to_string(m.n_features) + '\n';
    out += "oob " + (m.oob_score ? format_exact(*m.oob_score) : std::string("none")) + '\n';
    out += "trees " + std::to_string(m.trees.size()) + '\n';
    for (const auto& t : m.trees) {
        detail::write_node(t, 0, out);
        out += '\n';
    }
    return out;
}

inline ForestModel deserialize_forest(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    auto next = [&](const char* what) {
        if (!std::getline(in, line)) throw FormatError(std::string("forest model: truncated before ") + what);
        return split(line, ' ');
    };
    if (!std::getline(in, line) || line != "NSPRF 1")
        throw FormatError("forest model: unsupported format or version (expected header 'NSPRF 1')");
    ForestModel m;
    auto f = next("class list");
    if (f.size() < 2 || f[0] != "classes") throw FormatError("forest model: bad class line");
    const auto k = static_cast<std::size_t>(parse_int(f[1], "class count"));
    if (f.size() != k + 2) throw FormatError("forest model: class count mismatch");
    m.classes.assign(f.begin() + 2, f.end());

    f = next("config");
    if (f.empty() || f[0] != "config") throw FormatError("forest model: bad config line");
    for (std::size_t i = 1; i < f.size(); ++i) {
        const auto eq = f[i].find('=');
        if (eq == std::string::npos) throw FormatError("forest model: bad config entry '" + f[i] + "'");
        const auto key = f[i].substr(0, eq);
        const auto val = f[i].substr(eq + 1);
        if (key == "n_trees") m.config.n_trees = static_cast<int>(parse_int(val));
        else if (key == "max_depth") m.config.max_depth = static_cast<int>(parse_int(val));
        else if (key == "min_samples_split") m.config.min_samples_split = static_cast<int>(parse_int(val));
        else if (key == "features_per_split")
            m.config.features_per_split = val == "sqrt" ? ForestConfig::kSqrt : static_cast<int>(parse_int(val));
        else if (key == "bootstrap") m.config.bootstrap = val == "1";
        else if (key == "seed") m.config.seed = static_cast<std::uint64_t>(std::stoull(val));
        else throw FormatError("forest model: unknown config key '" + key + "'");
    }
    f = next("feature count");
    if (f.size() != 2 || f[0] != "features") throw FormatError("forest model: bad features line");
    m.n_features = static_cast<std::size_t>(parse_int(f[1]));
    f = next("oob score");
    if (f.size() != 2 || f[0] != "oob") throw FormatError("forest model: bad oob line");
    if (f[1] != "none") m.oob_score = parse_double(f[1], "oob score");
    f = next("tree count");
    if (f.size() != 2 || f[0] != "trees") throw FormatError("forest model: bad trees line");
    const auto n = static_cast<std::size_t>(parse_int(f[1]));
    for (std::size_t i = 0; i < n; ++i) {
        if (!std::getline(in, line))
            throw FormatError("forest model: truncated, expected " + std::to_string(n) + " trees, found " + std::to_string(i));
        m.trees.push_back(detail::SexprParser(line, k, m.n_features).parse());
    }
    return m;
}

inline void save_forest(const ForestModel& m, const std::filesystem::path& path) {
    write_file_atomic(path, serialize_forest(m));
}

inline ForestModel load_forest(const std::filesystem::path& path) { return deserialize_forest(read_file(path)); }

}  // namespace neurostage

#endif
