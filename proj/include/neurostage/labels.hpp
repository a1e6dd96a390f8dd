#ifndef NEUROSTAGE_LABELS_HPP
#define NEUROSTAGE_LABELS_HPP

#include <algorithm>
#include <cctype>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "neurostage/core.hpp"

namespace neurostage {

enum class ClassLabel { NonDemented = 0, VeryMildDemented = 1, MildDemented = 2, ModerateDemented = 3 };

/// Detection merges every demented stage into one class; classification keeps
/// non / very mild / mild and never sees moderate.
enum class Task { Detection, Classification };

inline std::string_view label_name(ClassLabel l) {
    switch (l) {
        case ClassLabel::NonDemented: return "non";
        case ClassLabel::VeryMildDemented: return "verymild";
        case ClassLabel::MildDemented: return "mild";
        case ClassLabel::ModerateDemented: return "moderate";
    }
    return "?";
}

inline ClassLabel parse_label(std::string_view s) {
    if (s == "non") return ClassLabel::NonDemented;
    if (s == "verymild") return ClassLabel::VeryMildDemented;
    if (s == "mild") return ClassLabel::MildDemented;
    if (s == "moderate") return ClassLabel::ModerateDemented;
    throw FormatError("unknown class label '" + std::string(s) + "'");
}

inline bool is_demented(ClassLabel l) { return l != ClassLabel::NonDemented; }

/// Maps a class directory name to a label. Accepts the short names and the
/// usual long spellings ("Non Demented", "Very mild Dementia", ...), ignoring
/// case, spaces, underscores and hyphens.
inline std::optional<ClassLabel> label_from_directory(std::string_view dir) {
    std::string k;
    for (char c : dir)
        if (c != ' ' && c != '_' && c != '-') k += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    if (k == "non" || k == "nondemented" || k == "nondementia") return ClassLabel::NonDemented;
    if (k == "verymild" || k == "verymilddemented" || k == "verymilddementia") return ClassLabel::VeryMildDemented;
    if (k == "mild" || k == "milddemented" || k == "milddementia") return ClassLabel::MildDemented;
    if (k == "moderate" || k == "moderatedemented" || k == "moderatedementia") return ClassLabel::ModerateDemented;
    return std::nullopt;
}

inline std::string_view task_name(Task t) { return t == Task::Detection ? "detection" : "classification"; }

inline Task parse_task(std::string_view s) {
    if (s == "detection") return Task::Detection;
    if (s == "classification") return Task::Classification;
    throw InvalidArgument("unknown task '" + std::string(s) + "' (expected detection or classification)");
}

inline int num_classes(Task t) { return t == Task::Detection ? 2 : 3; }

/// Class names in model order. Detection: non, dem. Classification: non,
/// verymild, mild.
inline std::vector<std::string> class_names(Task t) {
    if (t == Task::Detection) return {"non", "dem"};
    return {"non", "verymild", "mild"};
}

/// Target class index for `l` under `t`, or nullopt when the label is
/// excluded from the task (moderate in classification).
inline std::optional<int> task_target(ClassLabel l, Task t) {
    if (t == Task::Detection) return is_demented(l) ? 1 : 0;
    if (l == ClassLabel::ModerateDemented) return std::nullopt;
    return static_cast<int>(l);
}

}  // namespace neurostage

#endif
