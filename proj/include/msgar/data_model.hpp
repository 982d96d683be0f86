// Copyright (C) 2026 The msgar authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "msgar/core.hpp"

namespace msgar {

using json = nlohmann::json;

/// Ordered class names for individual actions and group activities.
/// Class index == position; the order is fixed for a run.
struct LabelSpace {
    std::vector<std::string> action_classes;
    std::vector<std::string> group_classes;

    int num_actions() const { return static_cast<int>(action_classes.size()); }
    int num_groups() const { return static_cast<int>(group_classes.size()); }

    int action_index(const std::string& name) const {
        for (std::size_t i = 0; i < action_classes.size(); ++i)
            if (action_classes[i] == name) return static_cast<int>(i);
        throw std::invalid_argument("unknown action class: " + name);
    }
    int group_index(const std::string& name) const {
        for (std::size_t i = 0; i < group_classes.size(); ++i)
            if (group_classes[i] == name) return static_cast<int>(i);
        throw std::invalid_argument("unknown group class: " + name);
    }

    void validate() const {
        if (action_classes.empty()) throw std::invalid_argument("label space: no action classes");
        if (group_classes.size() < 2)
            throw std::invalid_argument("label space: need at least 2 group classes");
        std::set<std::string> a(action_classes.begin(), action_classes.end());
        std::set<std::string> g(group_classes.begin(), group_classes.end());
        if (a.size() != action_classes.size() || g.size() != group_classes.size())
            throw std::invalid_argument("label space: duplicate class names");
    }
};

/// Axis-aligned box in normalized [0,1] coordinates relative to the frame.
struct BoundingBox {
    double x1 = 0, y1 = 0, x2 = 0, y2 = 0;

    bool valid() const {
        return x1 >= 0.0 && y1 >= 0.0 && x2 <= 1.0 && y2 <= 1.0 && x1 < x2 && y1 < y2;
    }
};

struct PersonAnn {
    BoundingBox bbox;
    int action = 0;
};

/// One labeled sample: a frame window, middle-frame person boxes + actions,
/// and the group activity label.
struct Clip {
    std::string clip_id;
    std::vector<std::string> frame_paths;
    int middle_index = 0;
    std::vector<PersonAnn> persons;
    int group = 0;
};

/// A Clip that passed validate_clip. Immutable by convention after validation.
struct ValidatedClip : Clip {};

/// One-hot vector over n classes with a 1 at index.
inline std::vector<double> one_hot(int index, int n) {
    if (index < 0 || index >= n) throw std::invalid_argument("one_hot: index out of range");
    std::vector<double> v(n, 0.0);
    v[index] = 1.0;
    return v;
}

/// Checks every structural invariant and returns the clip; throws naming the
/// first violation otherwise.
inline ValidatedClip validate_clip(const Clip& clip, const LabelSpace& space) {
    space.validate();
    if (clip.clip_id.empty()) throw std::invalid_argument("clip: empty clip_id");
    if (clip.frame_paths.empty())
        throw std::invalid_argument("clip " + clip.clip_id + ": no frames");
    if (clip.middle_index < 0 || clip.middle_index >= static_cast<int>(clip.frame_paths.size()))
        throw std::invalid_argument("clip " + clip.clip_id + ": middle_index out of range");
    if (clip.persons.empty()) throw std::invalid_argument("clip " + clip.clip_id + ": empty persons");
    if (clip.group < 0 || clip.group >= space.num_groups())
        throw std::invalid_argument("clip " + clip.clip_id + ": group label out of range");
    for (std::size_t i = 0; i < clip.persons.size(); ++i) {
        const auto& p = clip.persons[i];
        if (!p.bbox.valid())
            throw std::invalid_argument("clip " + clip.clip_id + ": degenerate bbox for person " +
                                        std::to_string(i));
        if (p.action < 0 || p.action >= space.num_actions())
            throw std::invalid_argument("clip " + clip.clip_id + ": action label out of range for person " +
                                        std::to_string(i));
    }
    ValidatedClip out;
    static_cast<Clip&>(out) = clip;
    return out;
}

/// Per-stream outputs for one clip: N per-person action distributions,
/// person-branch group distribution, and scene-branch group distribution.
struct StreamPrediction {
    std::string stream_id;
    std::vector<std::vector<double>> person_actions;
    std::vector<double> group_person;
    std::vector<double> group_scene;
};

inline void check_probability_vector(const std::vector<double>& v, const std::string& what) {
    if (v.empty()) throw std::invalid_argument(what + ": empty vector");
    double sum = 0.0;
    for (double x : v) {
        if (!(x >= 0.0 && x <= 1.0)) throw std::invalid_argument(what + ": entry outside [0,1]");
        sum += x;
    }
    if (std::abs(sum - 1.0) > 1e-6) throw std::invalid_argument(what + ": does not sum to 1");
}

inline void validate_stream_prediction(const StreamPrediction& p) {
    for (const auto& a : p.person_actions) check_probability_vector(a, "person_actions");
    check_probability_vector(p.group_person, "group_person");
    check_probability_vector(p.group_scene, "group_scene");
}

struct LossWeights {
    double w_i = 1.0, w_g = 1.0, w_gc = 1.0;

    void validate() const {
        if (w_i < 0 || w_g < 0 || w_gc < 0)
            throw std::invalid_argument("loss weights must be nonnegative");
        if (w_i == 0 && w_g == 0 && w_gc == 0)
            throw std::invalid_argument("at least one loss weight must be positive");
    }
};

// --- canonical clip index (JSON-lines, one object per clip) ---

inline json clip_to_json(const Clip& clip) {
    json persons = json::array();
    for (const auto& p : clip.persons)
        persons.push_back({{"bbox", {p.bbox.x1, p.bbox.y1, p.bbox.x2, p.bbox.y2}},
                           {"action", p.action}});
    return json{{"clip_id", clip.clip_id},
                {"frames", clip.frame_paths},
                {"middle_index", clip.middle_index},
                {"group", clip.group},
                {"persons", persons}};
}

inline Clip clip_from_json(const json& j) {
    Clip clip;
    clip.clip_id = j.at("clip_id").get<std::string>();
    clip.frame_paths = j.at("frames").get<std::vector<std::string>>();
    clip.middle_index = j.at("middle_index").get<int>();
    clip.group = j.at("group").get<int>();
    for (const auto& pj : j.at("persons")) {
        PersonAnn p;
        const auto& b = pj.at("bbox");
        p.bbox = BoundingBox{b.at(0).get<double>(), b.at(1).get<double>(), b.at(2).get<double>(),
                             b.at(3).get<double>()};
        p.action = pj.at("action").get<int>();
        clip.persons.push_back(p);
    }
    return clip;
}

inline void write_clip_index(const std::filesystem::path& path,
                             const std::vector<ValidatedClip>& clips) {
    std::ostringstream out;
    for (const auto& c : clips) out << clip_to_json(c).dump() << "\n";
    write_file_atomic(path, out.str());
}

inline std::vector<ValidatedClip> read_clip_index(const std::filesystem::path& path,
                                                  const LabelSpace& space) {
    std::istringstream in(read_file(path));
    std::vector<ValidatedClip> clips;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        clips.push_back(validate_clip(clip_from_json(json::parse(line)), space));
    }
    return clips;
}

}  // namespace msgar
