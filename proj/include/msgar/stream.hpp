// Copyright (C) 2026 The msgar authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "msgar/backbone.hpp"
#include "msgar/data_model.hpp"
#include "msgar/modality.hpp"
#include "msgar/nn.hpp"

namespace msgar {

/// Configuration of one convolutional stream (person branch + scene branch).
struct StreamConfig {
    ModalityKind kind = ModalityKind::rgb;
    BackboneConfig backbone;
    int roi_size = 4;       // M: person regions are resampled to M x M x D'
    int f_width = 64;       // width of the per-person representation f_n
    int num_actions = 0;
    int num_groups = 0;
    LossWeights loss_weights;
    double input_scale = 1.0;
    TemporalWindow window;

    void validate() const {
        if (roi_size < 1) throw std::invalid_argument("stream config: roi_size < 1");
        if (f_width < 1) throw std::invalid_argument("stream config: f_width < 1");
        if (num_actions < 1 || num_groups < 2)
            throw std::invalid_argument("stream config: bad label space sizes");
        loss_weights.validate();
        backbone.validate();
        if (backbone.input_channels != expected_channels(kind, window))
            throw std::invalid_argument("stream config: backbone input channels do not match modality");
    }
};

/// Extracts the feature-map region under a normalized box and resamples it
/// bilinearly to size M x M, per channel. Boxes that map to less than one
/// feature cell are expanded to cover the nearest cell center.
inline Tensor extract_person_region(const Tensor& fm, const BoundingBox& bbox, int m) {
    if (fm.h < 1 || fm.w < 1 || fm.c < 1)
        throw std::invalid_argument("extract_person_region: empty feature map");
    if (!bbox.valid()) throw std::invalid_argument("extract_person_region: invalid bbox");
    if (m < 1) throw std::invalid_argument("extract_person_region: M < 1");

    auto span = [](double lo, double hi, double extent) {
        lo *= extent;
        hi *= extent;
        if (hi - lo < 1.0) {
            double c = std::clamp(0.5 * (lo + hi), 0.5, extent - 0.5);
            lo = c - 0.5;
            hi = c + 0.5;
        }
        return std::pair<double, double>(lo, hi);
    };
    auto [x_lo, x_hi] = span(bbox.x1, bbox.x2, fm.w);
    auto [y_lo, y_hi] = span(bbox.y1, bbox.y2, fm.h);

    Tensor out(m, m, fm.c);
    for (int j = 0; j < m; ++j) {
        double ty = y_lo + (j + 0.5) * (y_hi - y_lo) / m - 0.5;
        for (int i = 0; i < m; ++i) {
            double tx = x_lo + (i + 0.5) * (x_hi - x_lo) / m - 0.5;
            for (int ch = 0; ch < fm.c; ++ch) out.at(j, i, ch) = bilinear_sample(fm, ty, tx, ch);
        }
    }
    return out;
}

inline void extract_person_region_backward(Tensor& grad_fm, const BoundingBox& bbox, int m,
                                           const Tensor& grad_region) {
    auto span = [](double lo, double hi, double extent) {
        lo *= extent;
        hi *= extent;
        if (hi - lo < 1.0) {
            double c = std::clamp(0.5 * (lo + hi), 0.5, extent - 0.5);
            lo = c - 0.5;
            hi = c + 0.5;
        }
        return std::pair<double, double>(lo, hi);
    };
    auto [x_lo, x_hi] = span(bbox.x1, bbox.x2, grad_fm.w);
    auto [y_lo, y_hi] = span(bbox.y1, bbox.y2, grad_fm.h);
    for (int j = 0; j < m; ++j) {
        double ty = y_lo + (j + 0.5) * (y_hi - y_lo) / m - 0.5;
        for (int i = 0; i < m; ++i) {
            double tx = x_lo + (i + 0.5) * (x_hi - x_lo) / m - 0.5;
            for (int ch = 0; ch < grad_fm.c; ++ch)
                bilinear_scatter(grad_fm, ty, tx, ch, grad_region.at(j, i, ch));
        }
    }
}

struct StreamParams {
    BackboneParams backbone;
    DenseParams f;            // flattened region -> f_width, shared across persons
    DenseParams action_head;  // f_width -> N_I, shared across persons
    DenseParams group_head;   // f_width -> N_G on the pooled vector g
    DenseParams scene_head;   // trunk final features -> N_G
};

/// Per-clip activations of interest: regions, per-person representations and
/// the max-pooled descriptor g (g[j] == max_n f_n[j]).
struct StreamActivations {
    std::vector<Tensor> person_regions;
    std::vector<std::vector<double>> person_features;
    std::vector<double> pooled;
};

struct LossBreakdown {
    double l_i = 0.0, l_g = 0.0, l_gc = 0.0, l_total = 0.0;
};

/// Composite weighted cross-entropy over the three prediction sets. The
/// 1/(N*N_I) and 1/N_G normalizations apply exactly as defined; probabilities
/// are floored at 1e-12 inside the log.
inline LossBreakdown compute_loss(const StreamPrediction& pred,
                                  const std::vector<int>& person_actions_gt, int group_gt,
                                  const LossWeights& w) {
    constexpr double kEps = 1e-12;
    if (pred.person_actions.size() != person_actions_gt.size())
        throw std::invalid_argument("compute_loss: person count mismatch");
    if (pred.person_actions.empty()) throw std::invalid_argument("compute_loss: no persons");
    const int n = static_cast<int>(pred.person_actions.size());
    const int n_i = static_cast<int>(pred.person_actions[0].size());
    const int n_g = static_cast<int>(pred.group_person.size());
    LossBreakdown out;
    for (int p = 0; p < n; ++p)
        out.l_i -= std::log(std::max(pred.person_actions[p].at(person_actions_gt[p]), kEps));
    out.l_i /= static_cast<double>(n) * n_i;
    out.l_g = -std::log(std::max(pred.group_person.at(group_gt), kEps)) / n_g;
    out.l_gc = -std::log(std::max(pred.group_scene.at(group_gt), kEps)) / n_g;
    out.l_total = w.w_i * out.l_i + w.w_g * out.l_g + w.w_gc * out.l_gc;
    return out;
}

/// Forward cache for one clip.
struct StreamTrace {
    BackboneTrace backbone;
    std::vector<Tensor> taps;
    Tensor fm;
    std::vector<Tensor> regions;
    std::vector<std::vector<double>> region_flat;
    std::vector<std::vector<double>> f_pre, f_post;
    std::vector<double> pooled;
    std::vector<int> pooled_argmax;
    std::vector<std::vector<double>> action_probs;
    std::vector<double> group_probs, scene_probs;
    std::vector<double> final_features;
};

class StreamModel {
public:
    StreamModel() = default;

    StreamModel(const StreamConfig& config, std::uint64_t seed) : config_(config) {
        config_.validate();
        Rng rng(seed);
        params_.backbone = make_backbone(config_.backbone, rng);
        int d_concat = config_.backbone.concat_depth();
        params_.f.in_dim = config_.roi_size * config_.roi_size * d_concat;
        params_.f.out_dim = config_.f_width;
        params_.f.init_shape();
        he_init(params_.f, rng);
        params_.action_head.in_dim = config_.f_width;
        params_.action_head.out_dim = config_.num_actions;
        params_.action_head.init_shape();
        he_init(params_.action_head, rng);
        params_.group_head.in_dim = config_.f_width;
        params_.group_head.out_dim = config_.num_groups;
        params_.group_head.init_shape();
        he_init(params_.group_head, rng);
        params_.scene_head.in_dim = config_.backbone.final_channels();
        params_.scene_head.out_dim = config_.num_groups;
        params_.scene_head.init_shape();
        he_init(params_.scene_head, rng);
    }

    const StreamConfig& config() const { return config_; }
    StreamParams& params() { return params_; }
    const StreamParams& params() const { return params_; }

    /// Zero-valued parameter set with identical structure, for gradients.
    StreamParams zero_like() const {
        StreamParams z = params_;
        for (auto& s : z.backbone.stages) {
            std::fill(s.w.begin(), s.w.end(), 0.0);
            std::fill(s.b.begin(), s.b.end(), 0.0);
        }
        for (DenseParams* d : {&z.f, &z.action_head, &z.group_head, &z.scene_head}) {
            std::fill(d->w.begin(), d->w.end(), 0.0);
            std::fill(d->b.begin(), d->b.end(), 0.0);
        }
        return z;
    }

    StreamPrediction forward(const ModalityStack& stack, const Clip& clip,
                             StreamTrace* trace = nullptr,
                             StreamActivations* activations = nullptr) const {
        if (stack.kind != config_.kind)
            throw std::invalid_argument("stream forward: modality kind mismatch");
        validate_stack(stack, config_.window);
        StreamTrace local;
        StreamTrace& tr = trace ? *trace : local;

        Tensor input = stack.data;
        if (config_.input_scale != 1.0)
            for (double& x : input.v) x *= config_.input_scale;

        BackboneOut bb = forward_with_taps(input, params_.backbone, &tr.backbone);
        tr.taps = bb.taps;
        tr.final_features = bb.final_features;
        tr.fm = concat_taps(bb.taps);

        const int n = static_cast<int>(clip.persons.size());
        StreamPrediction pred;
        pred.stream_id = to_string(config_.kind);
        tr.regions.clear();
        tr.region_flat.clear();
        tr.f_pre.clear();
        tr.f_post.clear();
        for (int p = 0; p < n; ++p) {
            Tensor region = extract_person_region(tr.fm, clip.persons[p].bbox, config_.roi_size);
            std::vector<double> flat = region.v;
            std::vector<double> pre = dense_forward(flat, params_.f);
            std::vector<double> post = pre;
            relu_inplace(post);
            pred.person_actions.push_back(softmax(dense_forward(post, params_.action_head)));
            tr.regions.push_back(std::move(region));
            tr.region_flat.push_back(std::move(flat));
            tr.f_pre.push_back(std::move(pre));
            tr.f_post.push_back(std::move(post));
        }

        // max pooling over individual feature vectors
        tr.pooled = tr.f_post[0];
        tr.pooled_argmax.assign(config_.f_width, 0);
        for (int p = 1; p < n; ++p)
            for (int j = 0; j < config_.f_width; ++j)
                if (tr.f_post[p][j] > tr.pooled[j]) {
                    tr.pooled[j] = tr.f_post[p][j];
                    tr.pooled_argmax[j] = p;
                }

        pred.group_person = softmax(dense_forward(tr.pooled, params_.group_head));
        pred.group_scene = softmax(dense_forward(tr.final_features, params_.scene_head));
        tr.action_probs = pred.person_actions;
        tr.group_probs = pred.group_person;
        tr.scene_probs = pred.group_scene;

        if (activations) {
            activations->person_regions = tr.regions;
            activations->person_features = tr.f_post;
            activations->pooled = tr.pooled;
        }
        return pred;
    }

    LossBreakdown loss(const StreamPrediction& pred, const Clip& clip) const {
        std::vector<int> gt;
        for (const auto& p : clip.persons) gt.push_back(p.action);
        return compute_loss(pred, gt, clip.group, config_.loss_weights);
    }

    /// Accumulates d L_total / d params into grad (same structure as params).
    void backward(const StreamTrace& tr, const Clip& clip, StreamParams& grad) const {
        constexpr double kEps = 1e-12;
        const LossWeights& w = config_.loss_weights;
        const int n = static_cast<int>(clip.persons.size());
        const int n_i = config_.num_actions;
        const int n_g = config_.num_groups;

        Tensor grad_fm(tr.fm.h, tr.fm.w, tr.fm.c);
        std::vector<std::vector<double>> grad_f_post(n, std::vector<double>(config_.f_width, 0.0));

        // individual action losses
        for (int p = 0; p < n; ++p) {
            int gt = clip.persons[p].action;
            if (tr.action_probs[p][gt] <= kEps || w.w_i == 0.0) continue;  // log floor active
            double coef = w.w_i / (static_cast<double>(n) * n_i);
            std::vector<double> dlogits(n_i);
            for (int i = 0; i < n_i; ++i)
                dlogits[i] = coef * (tr.action_probs[p][i] - (i == gt ? 1.0 : 0.0));
            auto df = dense_backward(tr.f_post[p], params_.action_head, dlogits, grad.action_head);
            for (int j = 0; j < config_.f_width; ++j) grad_f_post[p][j] += df[j];
        }

        // group loss on the pooled descriptor
        if (tr.group_probs[clip.group] > kEps && w.w_g != 0.0) {
            double coef = w.w_g / n_g;
            std::vector<double> dlogits(n_g);
            for (int i = 0; i < n_g; ++i)
                dlogits[i] = coef * (tr.group_probs[i] - (i == clip.group ? 1.0 : 0.0));
            auto dg = dense_backward(tr.pooled, params_.group_head, dlogits, grad.group_head);
            for (int j = 0; j < config_.f_width; ++j)
                grad_f_post[tr.pooled_argmax[j]][j] += dg[j];  // subgradient at argmax only
        }

        // scene loss
        std::vector<double> grad_final(params_.scene_head.in_dim, 0.0);
        if (tr.scene_probs[clip.group] > kEps && w.w_gc != 0.0) {
            double coef = w.w_gc / n_g;
            std::vector<double> dlogits(n_g);
            for (int i = 0; i < n_g; ++i)
                dlogits[i] = coef * (tr.scene_probs[i] - (i == clip.group ? 1.0 : 0.0));
            grad_final = dense_backward(tr.final_features, params_.scene_head, dlogits,
                                        grad.scene_head);
        }

        // through f and the region extraction into the feature map
        for (int p = 0; p < n; ++p) {
            std::vector<double> gf = grad_f_post[p];
            relu_backward_inplace(tr.f_pre[p], gf);
            auto dflat = dense_backward(tr.region_flat[p], params_.f, gf, grad.f);
            Tensor grad_region(config_.roi_size, config_.roi_size, tr.fm.c);
            grad_region.v = dflat;
            extract_person_region_backward(grad_fm, clip.persons[p].bbox, config_.roi_size,
                                           grad_region);
        }

        std::vector<Tensor> tap_grads = concat_taps_backward(grad_fm, tr.taps);
        backbone_backward(params_.backbone, tr.backbone, tap_grads, grad_final, grad.backbone);
    }

    std::vector<NamedParam> named_params() { return named_params_of(params_); }

    static std::vector<NamedParam> named_params_of(StreamParams& p) {
        std::vector<NamedParam> out = backbone_named_params(p.backbone);
        auto add_dense = [&out](const std::string& name, DenseParams& d) {
            out.push_back({name + ".w", {d.out_dim, d.in_dim}, &d.w});
            out.push_back({name + ".b", {d.out_dim}, &d.b});
        };
        add_dense("f", p.f);
        add_dense("action_head", p.action_head);
        add_dense("group_head", p.group_head);
        add_dense("scene_head", p.scene_head);
        return out;
    }

private:
    StreamConfig config_;
    StreamParams params_;
};

// --- stream score dumps (JSON-lines), the contract consumed by fusion ---

inline json prediction_to_json(const std::string& clip_id, const StreamPrediction& pred) {
    return json{{"clip_id", clip_id},
                {"person_actions", pred.person_actions},
                {"group_person", pred.group_person},
                {"group_scene", pred.group_scene}};
}

struct ScoreRecord {
    std::string clip_id;
    StreamPrediction pred;
};

inline void write_score_dump(const std::filesystem::path& path,
                             const std::vector<ScoreRecord>& records) {
    std::ostringstream out;
    for (const auto& r : records) out << prediction_to_json(r.clip_id, r.pred).dump() << "\n";
    write_file_atomic(path, out.str());
}

inline std::vector<ScoreRecord> read_score_dump(const std::filesystem::path& path) {
    std::istringstream in(read_file(path));
    std::vector<ScoreRecord> records;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        json j = json::parse(line);
        ScoreRecord r;
        r.clip_id = j.at("clip_id").get<std::string>();
        r.pred.person_actions = j.at("person_actions").get<std::vector<std::vector<double>>>();
        r.pred.group_person = j.at("group_person").get<std::vector<double>>();
        r.pred.group_scene = j.at("group_scene").get<std::vector<double>>();
        records.push_back(std::move(r));
    }
    return records;
}

}  // namespace msgar
