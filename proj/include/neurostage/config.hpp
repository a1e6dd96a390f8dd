#ifndef NEUROSTAGE_CONFIG_HPP
#define NEUROSTAGE_CONFIG_HPP

// Flat key=value configuration. Every key has a registered default; unknown
// keys are rejected so typos fail loudly.

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "neurostage/core.hpp"

namespace neurostage {

class Config {
public:
    /// All recognized keys with their defaults.
    static Config defaults() {
        Config c;
        c.known_ = true;
        const std::pair<const char*, const char*> table[] = {
            {"pipeline", "volume-rf-detection"},
            {"seed", "0"},
            {"data.root", ""},
            {"data.pattern", "OAS1_{patient}_{session}_{*}_{layer}.pgm"},
            {"data.first_layer", "100"},
            {"data.last_layer", "160"},
            {"data.strict", "false"},
            {"data.balance", "true"},
            {"ood.root", ""},
            {"out.dir", "artifacts"},
            {"segmentation.threshold", "50"},
            {"segmentation.blur_kernel", "5"},
            {"segmentation.blur_sigma", "1"},
            {"segmentation.contrast_factor", "8"},
            {"segmentation.csf_use_blur", "true"},
            {"filter.min_loss", "0.1"},
            {"volume.train_fraction", "0.8"},
            {"volume.all_five_features", "false"},
            {"forest.n_trees", "100"},
            {"forest.max_depth", "-1"},
            {"forest.min_samples_split", "2"},
            {"forest.features_per_split", "sqrt"},
            {"forest.bootstrap", "true"},
            {"cnn.input_size", "248"},
            {"cnn.head_relu", "true"},
            {"cnn.dropout", "0.3"},
            {"cnn.epochs", "6"},
            {"cnn.batch_size", "32"},
            {"cnn.learning_rate", "0.001"},
            {"cnn.momentum", "0.9"},
            {"cnn.augment", "true"},
            {"cnn.filter_training", "true"},
            {"cnn.split", "0.6,0.2,0.2"},
            {"stack.train_fraction", "0.7"},
            {"ood.cutoff", "0.6"},
            {"ood.scan_unsure_fraction", "0.5"},
            {"eval.repeats", "1"},
            {"heatmap.cell_px", "32"},
        };
        for (const auto& [k, v] : table) c.values_[k] = v;
        return c;
    }

    bool has(const std::string& key) const { return values_.count(key) != 0; }

    void set(const std::string& key, const std::string& value) {
        if (known_ && !has(key)) throw InvalidArgument("config: unknown key '" + key + "'");
        values_[key] = value;
    }

    /// Applies `key=value` lines; blank lines and `#` comments are ignored.
    void merge_text(const std::string& text, const std::string& origin = "config") {
        std::size_t line_no = 0;
        for (const auto& raw : split(text, '\n')) {
            ++line_no;
            const auto line = trim(raw);
            if (line.empty() || line[0] == '#') continue;
            const auto eq = line.find('=');
            if (eq == std::string::npos)
                throw FormatError(origin + ":" + std::to_string(line_no) + ": expected key=value");
            const auto key = trim(line.substr(0, eq));
            try {
                set(key, trim(line.substr(eq + 1)));
            } catch (const InvalidArgument& e) {
                throw FormatError(origin + ":" + std::to_string(line_no) + ": " + e.what());
            }
        }
    }

    void merge_file(const std::filesystem::path& path) { merge_text(read_file(path), path.string()); }

    const std::string& str(const std::string& key) const {
        const auto it = values_.find(key);
        if (it == values_.end()) throw InvalidArgument("config: missing key '" + key + "'");
        return it->second;
    }
    long long integer(const std::string& key) const { return parse_int(str(key), key); }
    double real(const std::string& key) const { return parse_double(str(key), key); }
    std::uint64_t seed(const std::string& key = "seed") const {
        const auto v = integer(key);
        if (v < 0) throw InvalidArgument("config: '" + key + "' must be non-negative");
        return static_cast<std::uint64_t>(v);
    }
    bool boolean(const std::string& key) const {
        const auto& v = str(key);
        if (v == "true" || v == "1" || v == "yes") return true;
        if (v == "false" || v == "0" || v == "no") return false;
        throw InvalidArgument("config: '" + key + "' must be a boolean, got '" + v + "'");
    }
    std::vector<double> reals(const std::string& key) const {
        std::vector<double> out;
        for (const auto& f : split(str(key), ',')) out.push_back(parse_double(trim(f), key));
        return out;
    }

    /// Sorted `key=value` lines; feeding this back reproduces the config.
    std::string to_text() const {
        std::string out;
        for (const auto& [k, v] : values_) out += k + '=' + v + '\n';
        return out;
    }

    bool operator==(const Config& o) const { return values_ == o.values_; }

private:
    std::map<std::string, std::string> values_;
    bool known_ = false;
};

}  // namespace neurostage

#endif
