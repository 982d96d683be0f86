// Copyright (C) 2026 The msgar authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "msgar/core.hpp"
#include "msgar/data_model.hpp"
#include "msgar/image.hpp"
#include "msgar/modality.hpp"

namespace msgar {

// --- label spaces ---

inline LabelSpace volleyball_label_space() {
    LabelSpace s;
    s.group_classes = {"right_set",  "right_spike", "right_pass", "right_winpoint",
                       "left_set",   "left_spike",  "left_pass",  "left_winpoint"};
    s.action_classes = {"blocking", "digging", "falling",  "jumping", "moving",
                        "setting",  "spiking", "standing", "waiting"};
    return s;
}

inline LabelSpace collective_label_space() {
    LabelSpace s;
    s.action_classes = {"crossing", "waiting", "queuing", "walking", "talking"};
    s.group_classes = s.action_classes;
    return s;
}

namespace detail {

inline std::string normalize_token(const std::string& raw) {
    std::string t;
    for (char c : raw) {
        if (c == '-' || c == ' ') c = '_';
        t.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
    return t;
}

/// Published volleyball annotations abbreviate sides (r_set, l-spike, ...).
inline std::string expand_volleyball_group(const std::string& raw) {
    std::string t = normalize_token(raw);
    if (t.rfind("r_", 0) == 0) t = "right_" + t.substr(2);
    else if (t.rfind("l_", 0) == 0) t = "left_" + t.substr(2);
    return t;
}

inline std::string expand_collective_action(const std::string& raw) {
    std::string t = normalize_token(raw);
    if (t == "queueing") t = "queuing";
    return t;
}

inline BoundingBox pixel_box(double x, double y, double bw, double bh, int frame_w, int frame_h) {
    BoundingBox b;
    b.x1 = std::clamp(x / frame_w, 0.0, 1.0);
    b.y1 = std::clamp(y / frame_h, 0.0, 1.0);
    b.x2 = std::clamp((x + bw) / frame_w, 0.0, 1.0);
    b.y2 = std::clamp((y + bh) / frame_h, 0.0, 1.0);
    return b;
}

}  // namespace detail

// --- real-dataset adapters (normalize immediately to the canonical index) ---

struct VolleyballParseOptions {
    int frame_width = 1280;
    int frame_height = 720;
    TemporalWindow window;
};

/// Reads <root>/<video>/annotations.txt files with lines
///   <frame>.jpg <group> (<x> <y> <w> <h> <action>)*
/// and produces canonical clips whose frame window spans the labeled middle
/// frame. Box coordinates are in pixels of the configured frame size.
inline std::vector<ValidatedClip> parse_volleyball(const std::filesystem::path& root,
                                                   const std::vector<std::string>& video_ids,
                                                   const VolleyballParseOptions& opts = {}) {
    LabelSpace space = volleyball_label_space();
    std::vector<ValidatedClip> clips;
    for (const auto& vid : video_ids) {
        auto ann_path = root / vid / "annotations.txt";
        std::istringstream in(read_file(ann_path));
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            std::vector<std::string> tokens;
            {
                std::istringstream ls(line);
                std::string t;
                while (ls >> t) tokens.push_back(t);
            }
            if (tokens.size() < 2 || (tokens.size() - 2) % 5 != 0)
                throw std::runtime_error(ann_path.string() + ": malformed line: " + line);
            std::string stem = tokens[0];
            if (auto dot = stem.rfind('.'); dot != std::string::npos) stem = stem.substr(0, dot);

            Clip clip;
            clip.clip_id = vid + "/" + stem;
            std::string group_name = detail::expand_volleyball_group(tokens[1]);
            try {
                clip.group = space.group_index(group_name);
            } catch (const std::exception&) {
                throw std::runtime_error(ann_path.string() + ": unknown group label '" +
                                         tokens[1] + "'");
            }

            for (std::size_t i = 2; i + 4 < tokens.size(); i += 5) {
                PersonAnn p;
                double x, y, bw, bh;
                try {
                    x = std::stod(tokens[i]);
                    y = std::stod(tokens[i + 1]);
                    bw = std::stod(tokens[i + 2]);
                    bh = std::stod(tokens[i + 3]);
                } catch (const std::exception&) {
                    throw std::runtime_error(ann_path.string() + ": malformed box in line: " + line);
                }
                p.bbox = detail::pixel_box(x, y, bw, bh, opts.frame_width, opts.frame_height);
                std::string action_name = detail::normalize_token(tokens[i + 4]);
                try {
                    p.action = space.action_index(action_name);
                } catch (const std::exception&) {
                    throw std::runtime_error(ann_path.string() + ": unknown action label '" +
                                             tokens[i + 4] + "'");
                }
                clip.persons.push_back(p);
            }

            long middle = 0;
            try {
                middle = std::stol(stem);
            } catch (const std::exception&) {
                throw std::runtime_error(ann_path.string() + ": non-numeric frame id: " + stem);
            }
            for (int k = -opts.window.before; k <= opts.window.after; ++k)
                clip.frame_paths.push_back(vid + "/" + stem + "/" + std::to_string(middle + k) +
                                           ".jpg");
            clip.middle_index = opts.window.before;
            clips.push_back(validate_clip(clip, space));
        }
    }
    return clips;
}

struct CollectiveParseOptions {
    int frame_width = 720;
    int frame_height = 480;
    TemporalWindow window;
    std::string frame_pattern = "frame%04d.jpg";
    int first_frame = 1;
    std::map<std::string, int> last_frame;  // optional per-sequence end clamp
};

/// The most frequent action label; ties break toward the lowest class index.
inline int derive_group_label(const std::vector<int>& actions) {
    if (actions.empty()) throw std::invalid_argument("derive_group_label: empty action list");
    std::map<int, int> counts;
    for (int a : actions) ++counts[a];
    int best = -1, best_count = 0;
    for (auto [cls, cnt] : counts)
        if (cnt > best_count) {
            best = cls;
            best_count = cnt;
        }
    return best;
}

/// Reads <root>/<seq>/annotations.txt files with lines
///   <frame> <x> <y> <w> <h> <action>
/// where action is a class name or 1-based index. One clip per labeled
/// frame; windows extending past the video boundary repeat the edge frame.
inline std::vector<ValidatedClip> parse_collective(const std::filesystem::path& root,
                                                   const std::vector<std::string>& seq_ids,
                                                   const CollectiveParseOptions& opts = {}) {
    LabelSpace space = collective_label_space();
    std::vector<ValidatedClip> clips;
    char buf[256];
    for (const auto& seq : seq_ids) {
        auto ann_path = root / seq / "annotations.txt";
        std::istringstream in(read_file(ann_path));
        std::map<long, std::vector<PersonAnn>> by_frame;
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            std::istringstream ls(line);
            long frame;
            double x, y, bw, bh;
            std::string action_token;
            if (!(ls >> frame >> x >> y >> bw >> bh >> action_token))
                throw std::runtime_error(ann_path.string() + ": malformed line: " + line);
            PersonAnn p;
            p.bbox = detail::pixel_box(x, y, bw, bh, opts.frame_width, opts.frame_height);
            if (std::isdigit(static_cast<unsigned char>(action_token[0]))) {
                int id = std::stoi(action_token);
                if (id < 1 || id > space.num_actions())
                    throw std::runtime_error(ann_path.string() + ": action id out of range: " +
                                             action_token);
                p.action = id - 1;
            } else {
                std::string name = detail::expand_collective_action(action_token);
                try {
                    p.action = space.action_index(name);
                } catch (const std::exception&) {
                    throw std::runtime_error(ann_path.string() + ": unknown action label '" +
                                             action_token + "'");
                }
            }
            by_frame[frame].push_back(p);
        }
        auto last_it = opts.last_frame.find(seq);
        long last = last_it == opts.last_frame.end() ? std::numeric_limits<long>::max()
                                                     : last_it->second;
        for (auto& [frame, persons] : by_frame) {
            Clip clip;
            clip.clip_id = seq + "/" + std::to_string(frame);
            clip.persons = persons;
            std::vector<int> actions;
            for (const auto& p : persons) actions.push_back(p.action);
            clip.group = derive_group_label(actions);
            for (int k = -opts.window.before; k <= opts.window.after; ++k) {
                long f = std::clamp<long>(frame + k, opts.first_frame, last);
                std::snprintf(buf, sizeof(buf), opts.frame_pattern.c_str(), f);
                clip.frame_paths.push_back(seq + "/" + std::string(buf));
            }
            clip.middle_index = opts.window.before;
            clips.push_back(validate_clip(clip, space));
        }
    }
    return clips;
}

// --- synthetic desk-scale dataset ---

/// How agent actions (and optionally a scene-level context cue) map to the
/// group class.
enum class SyntheticRule {
    majority_action,               // group = modal agent action
    majority_action_with_context,  // group = (walking vs standing) x corner marker
};

inline std::string to_string(SyntheticRule r) {
    return r == SyntheticRule::majority_action ? "majority_action"
                                               : "majority_action_with_context";
}

inline SyntheticRule synthetic_rule_from_string(const std::string& s) {
    if (s == "majority_action") return SyntheticRule::majority_action;
    if (s == "majority_action_with_context") return SyntheticRule::majority_action_with_context;
    throw std::invalid_argument("unknown synthetic rule: " + s);
}

struct SyntheticConfig {
    SyntheticRule rule = SyntheticRule::majority_action;
    int canvas_h = 64, canvas_w = 64;
    TemporalWindow window;             // frames per clip = window.length()
    int min_agents = 2, max_agents = 4;
    int train_clips = 240, test_clips = 80;
    double walk_speed = 2.0;
    std::uint64_t seed = 1;

    void validate() const {
        if (canvas_h < 48 || canvas_w < 48)
            throw std::invalid_argument("synthetic: canvas must be at least 48x48");
        if (min_agents < 1 || max_agents < min_agents || max_agents > 6)
            throw std::invalid_argument("synthetic: inconsistent agent range");
        if (train_clips < 1 || test_clips < 1)
            throw std::invalid_argument("synthetic: need at least one clip per split");
        if (walk_speed <= 0) throw std::invalid_argument("synthetic: walk_speed must be positive");
    }
};

/// Walkers share the standers' appearance, so the RGB middle frame carries no
/// motion information; the plus-shaped sprite is the appearance-distinct pose.
inline LabelSpace synthetic_label_space(const SyntheticConfig& cfg) {
    LabelSpace s;
    if (cfg.rule == SyntheticRule::majority_action) {
        s.action_classes = {"walk_left", "walk_right", "stand_plain", "stand_cross"};
        s.group_classes = {"march_left", "march_right", "pose_plain", "pose_cross"};
    } else {
        s.action_classes = {"walk_left", "walk_right", "stand"};
        s.group_classes = {"march_stripes", "march_checker", "still_stripes", "still_checker"};
    }
    return s;
}

/// Group label under the configured rule. marker is the context-cue variant
/// (0 or 1); ignored by the pure majority rule.
inline int synthetic_group_label(const SyntheticConfig& cfg, const std::vector<int>& actions,
                                 int marker) {
    int modal = derive_group_label(actions);
    if (cfg.rule == SyntheticRule::majority_action) return modal;
    int base = modal <= 1 ? 0 : 1;  // walk_* -> marching, stand -> still
    return base * 2 + marker;
}

struct AgentState {
    int action = 0;
    double mid_x = 0.0, mid_y = 0.0;  // position at the middle frame
};

namespace detail {

constexpr int kSpriteHalf = 4;
constexpr int kBoxMargin = 1;
constexpr int kMarkerRows = 8;
constexpr int kMarkerCols = 24;

inline bool action_walks(const SyntheticConfig& cfg, int action) {
    (void)cfg;
    return action <= 1;  // walk_left / walk_right in both repertoires
}

inline double action_direction(int action) { return action == 0 ? -1.0 : 1.0; }

inline bool action_uses_cross_sprite(const SyntheticConfig& cfg, int action) {
    return cfg.rule == SyntheticRule::majority_action && action == 3;
}

inline void draw_sprite(ImageU8& img, int cx, int cy, bool cross) {
    const std::uint8_t plain_rgb[3] = {235, 80, 60};
    const std::uint8_t cross_rgb[3] = {70, 90, 235};
    for (int dy = -kSpriteHalf; dy <= kSpriteHalf; ++dy)
        for (int dx = -kSpriteHalf; dx <= kSpriteHalf; ++dx) {
            bool inside = cross ? (std::abs(dx) <= 1 || std::abs(dy) <= 1)
                                : (std::abs(dx) <= 3 && std::abs(dy) <= 3);
            if (!inside) continue;
            int x = cx + dx, y = cy + dy;
            if (x < 0 || x >= img.w || y < 0 || y >= img.h) continue;
            const std::uint8_t* rgb = cross ? cross_rgb : plain_rgb;
            for (int ch = 0; ch < 3; ++ch) img.at(y, x, ch) = rgb[ch];
        }
}

inline void draw_marker(ImageU8& img, int variant) {
    for (int y = 0; y < kMarkerRows && y < img.h; ++y)
        for (int x = 0; x < kMarkerCols && x < img.w; ++x) {
            bool bright = variant == 0 ? (y / 2) % 2 == 0 : ((x / 4) + (y / 4)) % 2 == 0;
            std::uint8_t v = bright ? 220 : 40;
            for (int ch = 0; ch < 3; ++ch) img.at(y, x, ch) = v;
        }
}

}  // namespace detail

/// Renders one frame of a synthetic clip. The background texture is static
/// across the clip (derived from noise_seed only), so scene motion comes
/// solely from the agents. Walker trajectories are mirrored around the middle
/// frame: at t == window.before the frame shows exactly the middle positions.
inline ImageU8 render_synthetic_frame(const SyntheticConfig& cfg,
                                      const std::vector<AgentState>& agents, int marker, int t,
                                      std::uint64_t noise_seed) {
    ImageU8 img(cfg.canvas_h, cfg.canvas_w, 3);
    Rng noise(noise_seed);
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x) {
            std::uint8_t v = static_cast<std::uint8_t>(86 + noise.uniform_int(0, 12));
            for (int ch = 0; ch < 3; ++ch) img.at(y, x, ch) = v;
        }
    if (cfg.rule == SyntheticRule::majority_action_with_context) detail::draw_marker(img, marker);
    const int dt = t - cfg.window.before;
    for (const auto& a : agents) {
        double x = a.mid_x;
        if (detail::action_walks(cfg, a.action))
            x += detail::action_direction(a.action) * cfg.walk_speed * dt;
        detail::draw_sprite(img, static_cast<int>(std::lround(x)),
                            static_cast<int>(std::lround(a.mid_y)),
                            detail::action_uses_cross_sprite(cfg, a.action));
    }
    return img;
}

/// Pose-estimator-style background heatmap for the middle frame: high
/// everywhere except Gaussian bumps at each agent's joints.
inline ImageU8 render_synthetic_pose_background(const SyntheticConfig& cfg,
                                                const std::vector<AgentState>& agents) {
    Tensor bumps(cfg.canvas_h, cfg.canvas_w, 1);
    const double joints[4][2] = {{0, -3}, {0, 0}, {-2, 3}, {2, 3}};  // head, torso, feet
    const double sigma = 1.5, amp = 200.0;
    for (const auto& a : agents)
        for (const auto& j : joints) {
            double jx = a.mid_x + j[0], jy = a.mid_y + j[1];
            int x0 = std::max(0, static_cast<int>(jx - 5)), x1 = std::min(cfg.canvas_w - 1, static_cast<int>(jx + 5));
            int y0 = std::max(0, static_cast<int>(jy - 5)), y1 = std::min(cfg.canvas_h - 1, static_cast<int>(jy + 5));
            for (int y = y0; y <= y1; ++y)
                for (int x = x0; x <= x1; ++x) {
                    double d2 = (x - jx) * (x - jx) + (y - jy) * (y - jy);
                    bumps.at(y, x, 0) += amp * std::exp(-d2 / (2 * sigma * sigma));
                }
        }
    ImageU8 img(cfg.canvas_h, cfg.canvas_w, 1);
    for (int y = 0; y < cfg.canvas_h; ++y)
        for (int x = 0; x < cfg.canvas_w; ++x) {
            double v = 255.0 - std::min(255.0, bumps.at(y, x, 0));
            img.at(y, x, 0) = static_cast<std::uint8_t>(std::lround(v));
        }
    return img;
}

struct SyntheticDataset {
    LabelSpace space;
    std::vector<ValidatedClip> train, test;
};

/// Generates the synthetic dataset under root: frames/, pose/ backgrounds and
/// the two canonical index files. Deterministic for a fixed config.
inline SyntheticDataset generate_synthetic(const SyntheticConfig& cfg,
                                           const std::filesystem::path& root) {
    namespace fs = std::filesystem;
    cfg.validate();
    LabelSpace space = synthetic_label_space(cfg);
    const int n_groups = space.num_groups();
    const int n_actions = space.num_actions();
    Rng rng(cfg.seed);

    // agent placement slots: middle positions that keep trajectories inside
    // the canvas and person boxes away from the context-marker corner
    std::vector<std::pair<int, int>> slot_centers;  // (x, y)
    {
        double max_travel = cfg.walk_speed * std::max(cfg.window.before, cfg.window.after);
        int x_min = static_cast<int>(std::ceil(max_travel)) + detail::kSpriteHalf + 1;
        int x_max = cfg.canvas_w - 1 - x_min;
        int y_min = detail::kMarkerRows + 16 + detail::kSpriteHalf;
        int y_max = cfg.canvas_h - 1 - detail::kSpriteHalf - 2;
        if (x_max - x_min < 16 || y_max - y_min < 12)
            throw std::invalid_argument("synthetic: canvas too small for configured motion");
        for (int yi = 0; yi < 2; ++yi)
            for (int xi = 0; xi < 3; ++xi)
                slot_centers.emplace_back(x_min + xi * (x_max - x_min) / 2,
                                          y_min + yi * (y_max - y_min));
    }

    SyntheticDataset out;
    out.space = space;

    auto make_split = [&](const std::string& split, int count) {
        std::vector<ValidatedClip> clips;
        std::vector<int> classes(count);
        for (int i = 0; i < count; ++i) classes[i] = i % n_groups;
        rng.shuffle(classes);
        for (int i = 0; i < count; ++i) {
            const int group = classes[i];
            char idbuf[32];
            std::snprintf(idbuf, sizeof(idbuf), "%s_%04d", split.c_str(), i);
            std::string clip_id = idbuf;

            int marker = 0;
            int dominant_action = 0;
            if (cfg.rule == SyntheticRule::majority_action) {
                dominant_action = group;  // identical ordering of actions and groups
            } else {
                marker = group % 2;
                bool marching = group / 2 == 0;
                dominant_action = marching ? rng.uniform_int(0, 1) : 2;
            }

            int n_agents = rng.uniform_int(cfg.min_agents, cfg.max_agents);
            std::vector<int> slots(slot_centers.size());
            for (std::size_t s = 0; s < slots.size(); ++s) slots[s] = static_cast<int>(s);
            rng.shuffle(slots);

            std::vector<AgentState> agents;
            std::vector<int> actions;
            for (int a = 0; a < n_agents; ++a) {
                AgentState st;
                bool distractor = n_agents >= 3 && a == n_agents - 1;
                st.action = dominant_action;
                if (distractor) {
                    st.action = rng.uniform_int(0, n_actions - 1);
                    if (st.action == dominant_action)
                        st.action = (st.action + 1) % n_actions;
                }
                auto [sx, sy] = slot_centers[slots[a]];
                st.mid_x = sx + rng.uniform_int(-1, 1);
                st.mid_y = sy + rng.uniform_int(-2, 2);
                agents.push_back(st);
                actions.push_back(st.action);
            }
            if (synthetic_group_label(cfg, actions, marker) != group)
                throw std::logic_error("synthetic: group rule disagreement");

            std::uint64_t noise_seed = rng.next_u64();
            Clip clip;
            clip.clip_id = clip_id;
            clip.middle_index = cfg.window.before;
            clip.group = group;
            for (int t = 0; t < cfg.window.length(); ++t) {
                ImageU8 frame = render_synthetic_frame(cfg, agents, marker, t, noise_seed);
                char fbuf[16];
                std::snprintf(fbuf, sizeof(fbuf), "f%02d.png", t);
                fs::path rel = fs::path("frames") / clip_id / fbuf;
                save_png(root / rel, frame);
                clip.frame_paths.push_back(rel.generic_string());
            }
            save_png(root / "pose" / (clip_id + ".png"),
                     render_synthetic_pose_background(cfg, agents));
            for (const auto& st : agents) {
                PersonAnn p;
                p.action = st.action;
                int half = detail::kSpriteHalf + detail::kBoxMargin;
                p.bbox.x1 = (st.mid_x - half) / cfg.canvas_w;
                p.bbox.x2 = (st.mid_x + half + 1) / cfg.canvas_w;
                p.bbox.y1 = (st.mid_y - half) / cfg.canvas_h;
                p.bbox.y2 = (st.mid_y + half + 1) / cfg.canvas_h;
                clip.persons.push_back(p);
            }
            clips.push_back(validate_clip(clip, space));
        }
        return clips;
    };

    out.train = make_split("train", cfg.train_clips);
    out.test = make_split("test", cfg.test_clips);
    write_clip_index(root / "index_train.jsonl", out.train);
    write_clip_index(root / "index_test.jsonl", out.test);
    return out;
}

inline json synthetic_config_to_json(const SyntheticConfig& c) {
    return json{{"rule", to_string(c.rule)},
                {"canvas_h", c.canvas_h},
                {"canvas_w", c.canvas_w},
                {"min_agents", c.min_agents},
                {"max_agents", c.max_agents},
                {"train_clips", c.train_clips},
                {"test_clips", c.test_clips},
                {"walk_speed", c.walk_speed},
                {"seed", c.seed}};
}

inline SyntheticConfig synthetic_config_from_json(const json& j) {
    SyntheticConfig c;
    c.rule = synthetic_rule_from_string(j.value("rule", "majority_action"));
    c.canvas_h = j.value("canvas_h", c.canvas_h);
    c.canvas_w = j.value("canvas_w", c.canvas_w);
    c.min_agents = j.value("min_agents", c.min_agents);
    c.max_agents = j.value("max_agents", c.max_agents);
    c.train_clips = j.value("train_clips", c.train_clips);
    c.test_clips = j.value("test_clips", c.test_clips);
    c.walk_speed = j.value("walk_speed", c.walk_speed);
    c.seed = j.value("seed", static_cast<std::uint64_t>(c.seed));
    return c;
}

}  // namespace msgar
