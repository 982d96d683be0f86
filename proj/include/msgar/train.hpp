// Copyright (C) 2026 The msgar authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "msgar/backbone.hpp"
#include "msgar/data_model.hpp"
#include "msgar/datasets.hpp"
#include "msgar/fusion.hpp"
#include "msgar/image.hpp"
#include "msgar/metrics.hpp"
#include "msgar/modality.hpp"
#include "msgar/nn.hpp"
#include "msgar/stream.hpp"

namespace msgar {

struct StreamRunSettings {
    int roi_size = 4;
    int f_width = 64;
    double lr = 1e-3;
    double input_scale = 0.0;  // 0 means modality default
};

inline double default_input_scale(ModalityKind kind) {
    return is_temporal(kind) ? 1.0 / 8.0 : 1.0 / 255.0;
}

/// Full experiment configuration; the single JSON config file maps onto this.
struct RunConfig {
    std::uint64_t seed = 1;
    LabelSpace space;
    std::filesystem::path data_root;
    std::filesystem::path index_train, index_test;
    std::filesystem::path cache_dir = "cache", out_dir = "out";
    TemporalWindow window;
    BackboneConfig backbone_base;  // input_channels filled per stream
    std::map<std::string, StreamRunSettings> streams;
    LossWeights loss_weights;
    int epochs = 20;
    int batch_size = 8;
    bool deterministic = true;
    bool hflip_augment = false;
    FusionConfig fusion;
    SyntheticConfig synthetic;

    void validate() const {
        space.validate();
        loss_weights.validate();
        if (epochs < 1) throw std::invalid_argument("run config: epochs must be >= 1");
        if (batch_size < 1) throw std::invalid_argument("run config: batch_size must be >= 1");
        for (const auto& [name, s] : streams) {
            modality_from_string(name);
            if (s.lr <= 0) throw std::invalid_argument("run config: learning rate must be > 0");
        }
    }

    StreamRunSettings stream_settings(ModalityKind kind) const {
        auto it = streams.find(to_string(kind));
        return it == streams.end() ? StreamRunSettings{} : it->second;
    }
};

inline RunConfig run_config_from_json(const json& j, const std::filesystem::path& base_dir) {
    RunConfig cfg;
    auto path_of = [&](const std::string& key, const std::filesystem::path& fallback) {
        if (!j.contains(key)) return fallback;
        std::filesystem::path p = j.at(key).get<std::string>();
        return p.is_absolute() ? p : base_dir / p;
    };
    cfg.seed = j.value("seed", static_cast<std::uint64_t>(1));
    if (j.contains("label_space")) {
        cfg.space.action_classes =
            j.at("label_space").at("actions").get<std::vector<std::string>>();
        cfg.space.group_classes = j.at("label_space").at("groups").get<std::vector<std::string>>();
    }
    cfg.data_root = path_of("data_root", base_dir);
    cfg.index_train = path_of("index_train", cfg.data_root / "index_train.jsonl");
    cfg.index_test = path_of("index_test", cfg.data_root / "index_test.jsonl");
    cfg.cache_dir = path_of("cache_dir", base_dir / "cache");
    cfg.out_dir = path_of("out_dir", base_dir / "out");
    if (j.contains("window")) {
        cfg.window.before = j.at("window").value("before", 4);
        cfg.window.after = j.at("window").value("after", 5);
    }
    if (j.contains("backbone")) {
        const auto& b = j.at("backbone");
        cfg.backbone_base.stages.clear();
        for (const auto& s : b.at("stages")) {
            StageSpec spec;
            spec.channels = s.at("channels").get<int>();
            spec.stride = s.value("stride", 2);
            spec.kernel = s.value("kernel", 3);
            cfg.backbone_base.stages.push_back(spec);
        }
        cfg.backbone_base.tap_stages = b.at("taps").get<std::vector<int>>();
    } else {
        cfg.backbone_base.stages = {StageSpec{8}, StageSpec{16}, StageSpec{32}};
        cfg.backbone_base.tap_stages = {1, 2};
    }
    if (j.contains("streams"))
        for (const auto& [name, s] : j.at("streams").items()) {
            StreamRunSettings st;
            st.roi_size = s.value("roi_size", 4);
            st.f_width = s.value("f_width", 64);
            st.lr = s.value("lr", 1e-3);
            st.input_scale = s.value("input_scale", 0.0);
            cfg.streams[name] = st;
        }
    if (j.contains("loss_weights")) {
        cfg.loss_weights.w_i = j.at("loss_weights").value("w_i", 1.0);
        cfg.loss_weights.w_g = j.at("loss_weights").value("w_g", 1.0);
        cfg.loss_weights.w_gc = j.at("loss_weights").value("w_gc", 1.0);
    }
    if (j.contains("train")) {
        cfg.epochs = j.at("train").value("epochs", 20);
        cfg.batch_size = j.at("train").value("batch_size", 8);
        cfg.deterministic = j.at("train").value("deterministic", true);
        cfg.hflip_augment = j.at("train").value("hflip_augment", false);
    }
    if (j.contains("fusion")) cfg.fusion = fusion_config_from_json(j.at("fusion"));
    if (j.contains("synthetic")) cfg.synthetic = synthetic_config_from_json(j.at("synthetic"));
    cfg.synthetic.window = cfg.window;
    cfg.validate();
    return cfg;
}

inline RunConfig load_run_config(const std::filesystem::path& config_path) {
    json j = json::parse(read_file(config_path));
    auto base = config_path.has_parent_path() ? config_path.parent_path()
                                              : std::filesystem::path(".");
    return run_config_from_json(j, base);
}

// --- modality stack loading ---

inline Tensor load_frame_gray(const std::filesystem::path& path) {
    return to_tensor(to_gray(load_png(path)));
}

inline std::filesystem::path stack_cache_dir(const RunConfig& cfg, ModalityKind kind,
                                             const std::string& clip_id) {
    return cfg.cache_dir / to_string(kind) / clip_id;
}

/// Loads the input stack for one clip: rgb straight from the middle frame,
/// everything else from the prepared cache.
inline ModalityStack load_stack(const RunConfig& cfg, ModalityKind kind, const Clip& clip) {
    if (kind == ModalityKind::rgb) {
        ImageU8 frame = load_png(cfg.data_root / clip.frame_paths[clip.middle_index]);
        ModalityStack stack;
        stack.kind = ModalityKind::rgb;
        stack.clip_id = clip.clip_id;
        if (frame.c == 3) {
            stack.data = to_tensor(frame);
        } else {
            stack.data = Tensor(frame.h, frame.w, 3);
            for (int y = 0; y < frame.h; ++y)
                for (int x = 0; x < frame.w; ++x)
                    for (int ch = 0; ch < 3; ++ch) stack.data.at(y, x, ch) = frame.at(y, x, 0);
        }
        return stack;
    }
    ModalityStack stack = read_stack_cache(stack_cache_dir(cfg, kind, clip.clip_id));
    if (stack.kind != kind)
        throw std::runtime_error("cache kind mismatch for clip " + clip.clip_id);
    validate_stack(stack, cfg.window);
    return stack;
}

/// Precomputes and caches one derived modality for every clip of both splits.
/// Existing cache entries are reused unless force is set.
inline int prepare_modality(const RunConfig& cfg, ModalityKind kind, bool force = false) {
    if (kind == ModalityKind::rgb)
        throw std::invalid_argument("prepare: rgb is read directly from frames, nothing to do");
    std::vector<ValidatedClip> clips = read_clip_index(cfg.index_train, cfg.space);
    {
        auto test = read_clip_index(cfg.index_test, cfg.space);
        clips.insert(clips.end(), test.begin(), test.end());
    }
    int prepared = 0;
    for (const auto& clip : clips) {
        auto dir = stack_cache_dir(cfg, kind, clip.clip_id);
        if (!force && std::filesystem::exists(dir / "meta.json")) continue;
        if (kind == ModalityKind::posemap) {
            Tensor background =
                load_frame_gray(cfg.data_root / "pose" / (clip.clip_id + ".png"));
            ModalityStack stack = convert_pose_heatmap(background, clip.clip_id);
            write_stack_cache(dir, stack);
        } else {
            std::vector<Tensor> frames;
            for (const auto& f : clip.frame_paths)
                frames.push_back(load_frame_gray(cfg.data_root / f));
            std::vector<FlowField> flows;
            for (std::size_t i = 0; i + 1 < frames.size(); ++i)
                flows.push_back(estimate_flow(frames[i], frames[i + 1]));
            if (kind == ModalityKind::warped_flow) {
                auto sidecar = cfg.data_root / "homographies" / (clip.clip_id + ".json");
                std::vector<Homography> hs;
                if (std::filesystem::exists(sidecar)) {
                    hs = load_homographies(sidecar, static_cast<int>(flows.size()));
                } else {
                    for (const auto& f : flows) {
                        auto med = median_flow(f);
                        hs.push_back(translation_homography(med[0], med[1]));
                    }
                }
                for (std::size_t i = 0; i < flows.size(); ++i)
                    flows[i] = warp_compensate(flows[i], hs[i]);
            }
            write_stack_cache(dir, build_flow_stack(flows, kind, clip.clip_id, cfg.window));
        }
        ++prepared;
    }
    return prepared;
}

// --- stream training ---

inline StreamConfig make_stream_config(const RunConfig& cfg, ModalityKind kind) {
    StreamRunSettings s = cfg.stream_settings(kind);
    StreamConfig sc;
    sc.kind = kind;
    sc.backbone = cfg.backbone_base;
    sc.backbone.input_channels = expected_channels(kind, cfg.window);
    sc.roi_size = s.roi_size;
    sc.f_width = s.f_width;
    sc.num_actions = cfg.space.num_actions();
    sc.num_groups = cfg.space.num_groups();
    sc.loss_weights = cfg.loss_weights;
    sc.input_scale = s.input_scale > 0.0 ? s.input_scale : default_input_scale(kind);
    sc.window = cfg.window;
    return sc;
}

inline json stream_config_echo(const StreamConfig& sc) {
    json stages = json::array();
    for (const auto& s : sc.backbone.stages)
        stages.push_back({{"channels", s.channels}, {"stride", s.stride}, {"kernel", s.kernel}});
    return json{{"kind", to_string(sc.kind)},
                {"backbone",
                 {{"input_channels", sc.backbone.input_channels},
                  {"stages", stages},
                  {"taps", sc.backbone.tap_stages}}},
                {"roi_size", sc.roi_size},
                {"f_width", sc.f_width},
                {"num_actions", sc.num_actions},
                {"num_groups", sc.num_groups},
                {"loss_weights", {sc.loss_weights.w_i, sc.loss_weights.w_g, sc.loss_weights.w_gc}},
                {"input_scale", sc.input_scale},
                {"window", {{"before", sc.window.before}, {"after", sc.window.after}}}};
}

struct EpochLoss {
    double l_i = 0.0, l_g = 0.0, l_gc = 0.0, l_total = 0.0;
};

struct TrainResult {
    ModalityKind kind = ModalityKind::rgb;
    std::vector<EpochLoss> history;
    std::filesystem::path checkpoint_path;
    std::filesystem::path train_scores_path, test_scores_path;
};

inline BoundingBox flip_box_horizontal(const BoundingBox& b) {
    return BoundingBox{1.0 - b.x2, b.y1, 1.0 - b.x1, b.y2};
}

/// Trains one stream on the train split and dumps train/test scores.
/// Deterministic for a fixed config: batches are shuffled by a seeded RNG
/// and all reductions run in a fixed order.
inline TrainResult train_stream(const RunConfig& cfg, ModalityKind kind) {
    const auto train_clips = read_clip_index(cfg.index_train, cfg.space);
    const auto test_clips = read_clip_index(cfg.index_test, cfg.space);
    if (train_clips.empty()) throw std::runtime_error("train_stream: empty train split");

    StreamConfig sc = make_stream_config(cfg, kind);
    std::uint64_t stream_seed = cfg.seed * 1315423911u + static_cast<std::uint64_t>(kind) + 1;
    StreamModel model(sc, stream_seed);
    StreamRunSettings settings = cfg.stream_settings(kind);
    AdamConfig adam_cfg;
    adam_cfg.lr = settings.lr;
    Adam adam(adam_cfg);
    Rng rng(stream_seed ^ 0x9e3779b97f4a7c15ull);

    // preload stacks once; clips are immutable and shared
    std::vector<ModalityStack> stacks;
    stacks.reserve(train_clips.size());
    for (const auto& clip : train_clips) stacks.push_back(load_stack(cfg, kind, clip));

    TrainResult result;
    result.kind = kind;
    std::vector<int> order(train_clips.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);

    auto params = model.named_params();
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(order);
        EpochLoss epoch_loss;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            std::size_t end = std::min(order.size(), start + cfg.batch_size);
            StreamParams grad = model.zero_like();
            double batch_n = static_cast<double>(end - start);
            for (std::size_t i = start; i < end; ++i) {
                const ValidatedClip& clip = train_clips[order[i]];
                const ModalityStack* stack = &stacks[order[i]];
                ModalityStack flipped;
                Clip clip_view = clip;
                if (cfg.hflip_augment && rng.uniform() < 0.5) {
                    flipped = flip_stack_horizontal(*stack);
                    stack = &flipped;
                    for (auto& p : clip_view.persons) p.bbox = flip_box_horizontal(p.bbox);
                }
                StreamTrace trace;
                StreamPrediction pred = model.forward(*stack, clip_view, &trace);
                LossBreakdown loss = model.loss(pred, clip_view);
                if (!std::isfinite(loss.l_total))
                    throw std::runtime_error("train_stream: loss diverged (non-finite) on clip " +
                                             clip.clip_id);
                epoch_loss.l_i += loss.l_i;
                epoch_loss.l_g += loss.l_g;
                epoch_loss.l_gc += loss.l_gc;
                epoch_loss.l_total += loss.l_total;
                model.backward(trace, clip_view, grad);
            }
            auto grad_named = StreamModel::named_params_of(grad);
            for (auto& g : grad_named)
                for (double& x : *g.data) x /= batch_n;
            adam.step(params, grad_named);
            ++batches;
        }
        double inv = 1.0 / static_cast<double>(train_clips.size());
        epoch_loss.l_i *= inv;
        epoch_loss.l_g *= inv;
        epoch_loss.l_gc *= inv;
        epoch_loss.l_total *= inv;
        result.history.push_back(epoch_loss);
    }

    // score dumps for both splits
    auto dump = [&](const std::vector<ValidatedClip>& clips, const std::string& split,
                    const std::vector<ModalityStack>* preloaded) {
        std::vector<ScoreRecord> records;
        for (std::size_t i = 0; i < clips.size(); ++i) {
            const ModalityStack stack =
                preloaded ? (*preloaded)[i] : load_stack(cfg, kind, clips[i]);
            ScoreRecord r;
            r.clip_id = clips[i].clip_id;
            r.pred = model.forward(stack, clips[i]);
            records.push_back(std::move(r));
        }
        auto path = cfg.out_dir / "scores" / (to_string(kind) + "_" + split + ".jsonl");
        write_score_dump(path, records);
        return path;
    };
    result.train_scores_path = dump(train_clips, "train", &stacks);
    result.test_scores_path = dump(test_clips, "test", nullptr);

    // checkpoint + loss history
    result.checkpoint_path = cfg.out_dir / "checkpoints" / (to_string(kind) + ".json");
    std::filesystem::create_directories(result.checkpoint_path.parent_path());
    save_checkpoint(result.checkpoint_path, stream_config_echo(sc), model.named_params());
    json hist = json::array();
    for (const auto& e : result.history)
        hist.push_back({{"l_i", e.l_i}, {"l_g", e.l_g}, {"l_gc", e.l_gc}, {"l_total", e.l_total}});
    write_file_atomic(cfg.out_dir / "history" / (to_string(kind) + ".json"),
                      json{{"stream", to_string(kind)}, {"epochs", hist}}.dump(2));
    return result;
}

/// Recomputes score dumps for an already-trained stream checkpoint.
inline void dump_scores(const RunConfig& cfg, ModalityKind kind) {
    StreamConfig sc = make_stream_config(cfg, kind);
    StreamModel model(sc, 0);
    auto ckpt = cfg.out_dir / "checkpoints" / (to_string(kind) + ".json");
    load_checkpoint(ckpt, model.named_params());
    for (const std::string split : {"train", "test"}) {
        auto clips = read_clip_index(split == "train" ? cfg.index_train : cfg.index_test,
                                     cfg.space);
        std::vector<ScoreRecord> records;
        for (const auto& clip : clips) {
            ScoreRecord r;
            r.clip_id = clip.clip_id;
            r.pred = model.forward(load_stack(cfg, kind, clip), clip);
            records.push_back(std::move(r));
        }
        write_score_dump(cfg.out_dir / "scores" / (to_string(kind) + "_" + split + ".jsonl"),
                         records);
    }
}

// --- fusion orchestration over score dumps ---

/// Per-clip predictions of all configured streams, aligned by clip id in
/// stream order.
inline std::map<std::string, std::vector<StreamPrediction>> aligned_stream_predictions(
    const RunConfig& cfg, const FusionConfig& fusion, const std::string& split) {
    std::map<std::string, std::vector<StreamPrediction>> by_clip;
    for (std::size_t k = 0; k < fusion.stream_order.size(); ++k) {
        auto path = cfg.out_dir / "scores" / (fusion.stream_order[k] + "_" + split + ".jsonl");
        auto records = read_score_dump(path);
        for (auto& r : records) {
            auto& slot = by_clip[r.clip_id];
            if (slot.size() != k)
                throw std::runtime_error("score dumps misaligned at clip " + r.clip_id);
            slot.push_back(std::move(r.pred));
        }
    }
    for (const auto& [id, preds] : by_clip)
        if (preds.size() != fusion.stream_order.size())
            throw std::runtime_error("score dumps missing stream entries for clip " + id);
    return by_clip;
}

/// Restricts a fusion config to the spatial streams (single-frame mode).
inline FusionConfig spatial_only(const FusionConfig& fusion) {
    FusionConfig out = fusion;
    out.stream_order.clear();
    for (const auto& s : fusion.stream_order)
        if (!is_temporal(modality_from_string(s))) out.stream_order.push_back(s);
    if (out.stream_order.empty())
        throw std::invalid_argument("single-frame mode: no spatial streams configured");
    return out;
}

/// Trains the fusion model (svm modes fit on the train-split score dumps)
/// and applies it to the requested split.
inline FusionModel fit_fusion_model(const RunConfig& cfg, const FusionConfig& fusion) {
    FusionModel model;
    model.config = fusion;
    if (fusion.mode != FusionMode::svm) return model;

    auto by_clip = aligned_stream_predictions(cfg, fusion, "train");
    auto train_clips = read_clip_index(cfg.index_train, cfg.space);
    std::map<std::string, const ValidatedClip*> gt;
    for (const auto& c : train_clips) gt[c.clip_id] = &c;

    std::vector<std::vector<double>> group_x;
    std::vector<int> group_y;
    std::vector<std::vector<double>> action_x;
    std::vector<int> action_y;
    for (const auto& [id, preds] : by_clip) {
        auto it = gt.find(id);
        if (it == gt.end()) throw std::runtime_error("fusion training: unknown clip " + id);
        group_x.push_back(concat_vectors(selected_group_vectors(preds, fusion)));
        group_y.push_back(it->second->group);
        for (std::size_t p = 0; p < it->second->persons.size(); ++p) {
            std::vector<std::vector<double>> per_stream;
            for (const auto& sp : preds) per_stream.push_back(sp.person_actions[p]);
            action_x.push_back(concat_vectors(per_stream));
            action_y.push_back(it->second->persons[p].action);
        }
    }
    model.group_svm = train_svm_fusion(group_x, group_y, cfg.space.num_groups());
    model.action_svm = train_svm_fusion(action_x, action_y, cfg.space.num_actions());
    return model;
}

inline std::vector<FusedRecord> apply_fusion(const RunConfig& cfg, const FusionModel& model,
                                             const std::string& split) {
    auto by_clip = aligned_stream_predictions(cfg, model.config, split);
    std::vector<FusedRecord> out;
    for (const auto& [id, preds] : by_clip) {
        FusedRecord r;
        r.clip_id = id;
        r.group_pred = argmax(fuse_group(preds, model));
        for (const auto& person_scores : fuse_actions(preds, model))
            r.person_preds.push_back(argmax(person_scores));
        out.push_back(std::move(r));
    }
    return out;
}

}  // namespace msgar
