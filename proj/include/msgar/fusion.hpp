// Copyright (C) 2026 The msgar authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "msgar/core.hpp"
#include "msgar/data_model.hpp"
#include "msgar/stream.hpp"

namespace msgar {

enum class FusionMode { max, avg, svm };

inline std::string to_string(FusionMode m) {
    switch (m) {
        case FusionMode::max: return "max";
        case FusionMode::avg: return "avg";
        case FusionMode::svm: return "svm";
    }
    throw std::logic_error("bad FusionMode");
}

inline FusionMode fusion_mode_from_string(const std::string& s) {
    if (s == "max") return FusionMode::max;
    if (s == "avg") return FusionMode::avg;
    if (s == "svm") return FusionMode::svm;
    throw std::invalid_argument("unknown fusion mode: " + s);
}

struct BranchMask {
    bool include_person = true;
    bool include_scene = true;
};

/// Which streams participate and which of their branches contribute to the
/// group-activity fusion. Group vectors are ordered person branches first,
/// then scene branches, each in stream order.
struct FusionConfig {
    FusionMode mode = FusionMode::avg;
    std::vector<std::string> stream_order;
    std::map<std::string, BranchMask> branches;

    void validate() const {
        if (stream_order.empty()) throw std::invalid_argument("fusion config: no streams");
        int included = 0;
        for (const auto& s : stream_order) {
            BranchMask m = mask_for(s);
            included += (m.include_person ? 1 : 0) + (m.include_scene ? 1 : 0);
        }
        if (included == 0)
            throw std::invalid_argument("fusion config: branch mask selects nothing");
    }

    BranchMask mask_for(const std::string& stream) const {
        auto it = branches.find(stream);
        return it == branches.end() ? BranchMask{} : it->second;
    }

    int group_block_count() const {
        int n = 0;
        for (const auto& s : stream_order) {
            BranchMask m = mask_for(s);
            n += (m.include_person ? 1 : 0) + (m.include_scene ? 1 : 0);
        }
        return n;
    }
};

/// Element-wise max or average of equally sized score vectors. Average output
/// stays on the probability simplex; max output is consumed by argmax only
/// and is never renormalized.
inline std::vector<double> fuse_elementwise(const std::vector<std::vector<double>>& scores,
                                            FusionMode mode) {
    if (scores.empty()) throw std::invalid_argument("fuse_elementwise: empty score list");
    if (mode == FusionMode::svm)
        throw std::invalid_argument("fuse_elementwise: svm is not an element-wise mode");
    const std::size_t dim = scores[0].size();
    for (const auto& s : scores)
        if (s.size() != dim) throw std::invalid_argument("fuse_elementwise: length mismatch");
    std::vector<double> out(dim, mode == FusionMode::max
                                     ? -std::numeric_limits<double>::infinity()
                                     : 0.0);
    for (const auto& s : scores)
        for (std::size_t i = 0; i < dim; ++i)
            out[i] = mode == FusionMode::max ? std::max(out[i], s[i]) : out[i] + s[i];
    if (mode == FusionMode::avg)
        for (double& x : out) x /= static_cast<double>(scores.size());
    return out;
}

/// One-vs-rest linear classifier over standardized concatenated score
/// vectors. Trained on an L2-regularized squared-hinge objective with the
/// data term averaged over samples, so duplicating every record leaves the
/// optimum unchanged.
struct LinearSvm {
    int classes = 0, dim = 0;
    std::vector<double> mean, scale;  // feature standardization
    std::vector<double> w;            // [classes][dim]
    std::vector<double> b;            // [classes]

    bool trained() const { return classes > 0; }

    std::vector<double> decision(const std::vector<double>& x) const {
        if (static_cast<int>(x.size()) != dim)
            throw std::invalid_argument("LinearSvm::decision: dimension mismatch");
        std::vector<double> z(dim);
        for (int i = 0; i < dim; ++i) z[i] = (x[i] - mean[i]) * scale[i];
        std::vector<double> out(classes);
        for (int c = 0; c < classes; ++c) {
            double acc = b[c];
            const double* row = &w[static_cast<std::size_t>(c) * dim];
            for (int i = 0; i < dim; ++i) acc += row[i] * z[i];
            out[c] = acc;
        }
        return out;
    }
};

/// Trains the one-vs-rest linear SVM by deterministic full-batch gradient
/// descent with backtracking line search. Regularization constant fixed at
/// C = 1.0 on standardized inputs; convergence at max-gradient 1e-7.
inline LinearSvm train_svm_fusion(const std::vector<std::vector<double>>& records,
                                  const std::vector<int>& labels, int n_classes,
                                  double c_reg = 1.0, int max_iters = 3000,
                                  double grad_tol = 1e-7) {
    if (records.empty()) throw std::invalid_argument("train_svm_fusion: no records");
    if (records.size() != labels.size())
        throw std::invalid_argument("train_svm_fusion: record/label count mismatch");
    const int n = static_cast<int>(records.size());
    const int dim = static_cast<int>(records[0].size());
    for (const auto& r : records)
        if (static_cast<int>(r.size()) != dim)
            throw std::invalid_argument("train_svm_fusion: inconsistent dimensionality");
    {
        std::vector<int> present(labels.begin(), labels.end());
        std::sort(present.begin(), present.end());
        present.erase(std::unique(present.begin(), present.end()), present.end());
        if (present.size() < 2)
            throw std::invalid_argument("train_svm_fusion: need at least 2 classes present");
    }

    LinearSvm svm;
    svm.classes = n_classes;
    svm.dim = dim;
    svm.mean.assign(dim, 0.0);
    svm.scale.assign(dim, 1.0);
    for (const auto& r : records)
        for (int i = 0; i < dim; ++i) svm.mean[i] += r[i];
    for (int i = 0; i < dim; ++i) svm.mean[i] /= n;
    std::vector<double> var(dim, 0.0);
    for (const auto& r : records)
        for (int i = 0; i < dim; ++i) {
            double d = r[i] - svm.mean[i];
            var[i] += d * d;
        }
    for (int i = 0; i < dim; ++i) {
        double sd = std::sqrt(var[i] / n);
        svm.scale[i] = sd > 1e-9 ? 1.0 / sd : 1.0;
    }

    std::vector<std::vector<double>> z(records.size(), std::vector<double>(dim));
    for (int r = 0; r < n; ++r)
        for (int i = 0; i < dim; ++i) z[r][i] = (records[r][i] - svm.mean[i]) * svm.scale[i];

    svm.w.assign(static_cast<std::size_t>(n_classes) * dim, 0.0);
    svm.b.assign(n_classes, 0.0);

    for (int cls = 0; cls < n_classes; ++cls) {
        std::vector<double> w(dim, 0.0);
        double b = 0.0;
        std::vector<double> y(n);
        for (int r = 0; r < n; ++r) y[r] = labels[r] == cls ? 1.0 : -1.0;

        auto objective = [&](const std::vector<double>& wv, double bv) {
            double j = 0.0;
            for (int i = 0; i < dim; ++i) j += wv[i] * wv[i];
            j *= 0.5 / c_reg;
            double loss = 0.0;
            for (int r = 0; r < n; ++r) {
                double f = bv;
                for (int i = 0; i < dim; ++i) f += wv[i] * z[r][i];
                double hinge = std::max(0.0, 1.0 - y[r] * f);
                loss += hinge * hinge;
            }
            return j + loss / n;
        };

        std::vector<double> gw(dim);
        double gb = 0.0;
        double step = 1.0;
        for (int iter = 0; iter < max_iters; ++iter) {
            for (int i = 0; i < dim; ++i) gw[i] = w[i] / c_reg;
            gb = 0.0;
            for (int r = 0; r < n; ++r) {
                double f = b;
                for (int i = 0; i < dim; ++i) f += w[i] * z[r][i];
                double hinge = 1.0 - y[r] * f;
                if (hinge <= 0.0) continue;
                double coef = -2.0 * hinge * y[r] / n;
                for (int i = 0; i < dim; ++i) gw[i] += coef * z[r][i];
                gb += coef;
            }
            double gmax = std::abs(gb);
            double gnorm2 = gb * gb;
            for (int i = 0; i < dim; ++i) {
                gmax = std::max(gmax, std::abs(gw[i]));
                gnorm2 += gw[i] * gw[i];
            }
            if (gmax < grad_tol) break;

            double j0 = objective(w, b);
            step = std::min(step * 2.0, 8.0);
            std::vector<double> w_try(dim);
            double b_try = 0.0;
            for (;;) {
                for (int i = 0; i < dim; ++i) w_try[i] = w[i] - step * gw[i];
                b_try = b - step * gb;
                if (objective(w_try, b_try) <= j0 - 0.25 * step * gnorm2 || step < 1e-12) break;
                step *= 0.5;
            }
            w = w_try;
            b = b_try;
        }
        std::copy(w.begin(), w.end(), svm.w.begin() + static_cast<std::size_t>(cls) * dim);
        svm.b[cls] = b;
    }
    return svm;
}

/// Fusion model: mode + branch mask, plus trained linear classifiers when
/// the mode is svm (one for group fusion, optionally one for actions).
struct FusionModel {
    FusionConfig config;
    LinearSvm group_svm;
    LinearSvm action_svm;
};

/// The group score vectors selected by the branch mask, in canonical order:
/// person branches G_k in stream order, then scene branches C_k.
inline std::vector<std::vector<double>> selected_group_vectors(
    const std::vector<StreamPrediction>& preds, const FusionConfig& config) {
    if (preds.size() != config.stream_order.size())
        throw std::invalid_argument("fusion: prediction count does not match stream order");
    std::vector<std::vector<double>> out;
    for (std::size_t k = 0; k < preds.size(); ++k)
        if (config.mask_for(config.stream_order[k]).include_person)
            out.push_back(preds[k].group_person);
    for (std::size_t k = 0; k < preds.size(); ++k)
        if (config.mask_for(config.stream_order[k]).include_scene)
            out.push_back(preds[k].group_scene);
    return out;
}

inline std::vector<double> concat_vectors(const std::vector<std::vector<double>>& vs) {
    std::vector<double> out;
    for (const auto& v : vs) out.insert(out.end(), v.begin(), v.end());
    return out;
}

/// Group-activity fusion over the joint set of person- and scene-branch
/// scores of all streams.
inline std::vector<double> fuse_group(const std::vector<StreamPrediction>& preds,
                                      const FusionModel& model) {
    model.config.validate();
    auto selected = selected_group_vectors(preds, model.config);
    if (selected.empty()) throw std::invalid_argument("fuse_group: mask selects nothing");
    if (model.config.mode != FusionMode::svm)
        return fuse_elementwise(selected, model.config.mode);
    if (!model.group_svm.trained()) throw std::invalid_argument("fuse_group: svm not trained");
    return model.group_svm.decision(concat_vectors(selected));
}

/// Per-person individual-action fusion across streams.
inline std::vector<std::vector<double>> fuse_actions(const std::vector<StreamPrediction>& preds,
                                                     const FusionModel& model) {
    if (preds.empty()) throw std::invalid_argument("fuse_actions: no streams");
    const std::size_t n = preds[0].person_actions.size();
    for (const auto& p : preds)
        if (p.person_actions.size() != n)
            throw std::invalid_argument("fuse_actions: person count mismatch across streams");
    std::vector<std::vector<double>> out;
    for (std::size_t person = 0; person < n; ++person) {
        std::vector<std::vector<double>> scores;
        for (const auto& p : preds) scores.push_back(p.person_actions[person]);
        if (model.config.mode != FusionMode::svm) {
            out.push_back(fuse_elementwise(scores, model.config.mode));
        } else {
            if (!model.action_svm.trained())
                throw std::invalid_argument("fuse_actions: svm not trained");
            out.push_back(model.action_svm.decision(concat_vectors(scores)));
        }
    }
    return out;
}

/// An svm whose weights implement uniform block averaging; its argmax agrees
/// with avg fusion on any input.
inline LinearSvm make_block_average_svm(int n_blocks, int n_classes) {
    LinearSvm svm;
    svm.classes = n_classes;
    svm.dim = n_blocks * n_classes;
    svm.mean.assign(svm.dim, 0.0);
    svm.scale.assign(svm.dim, 1.0);
    svm.w.assign(static_cast<std::size_t>(n_classes) * svm.dim, 0.0);
    svm.b.assign(n_classes, 0.0);
    for (int c = 0; c < n_classes; ++c)
        for (int blk = 0; blk < n_blocks; ++blk)
            svm.w[static_cast<std::size_t>(c) * svm.dim + blk * n_classes + c] =
                1.0 / n_blocks;
    return svm;
}

// --- serialization ---

inline json fusion_config_to_json(const FusionConfig& c) {
    json branches = json::object();
    for (const auto& s : c.stream_order) {
        BranchMask m = c.mask_for(s);
        branches[s] = {{"person", m.include_person}, {"scene", m.include_scene}};
    }
    return json{{"mode", to_string(c.mode)}, {"streams", c.stream_order}, {"branches", branches}};
}

inline FusionConfig fusion_config_from_json(const json& j) {
    FusionConfig c;
    c.mode = fusion_mode_from_string(j.at("mode").get<std::string>());
    c.stream_order = j.at("streams").get<std::vector<std::string>>();
    if (j.contains("branches"))
        for (const auto& [key, val] : j.at("branches").items())
            c.branches[key] = BranchMask{val.value("person", true), val.value("scene", true)};
    return c;
}

inline json svm_to_json(const LinearSvm& s) {
    return json{{"classes", s.classes}, {"dim", s.dim},   {"mean", s.mean},
                {"scale", s.scale},     {"weights", s.w}, {"bias", s.b}};
}

inline LinearSvm svm_from_json(const json& j) {
    LinearSvm s;
    s.classes = j.at("classes").get<int>();
    s.dim = j.at("dim").get<int>();
    s.mean = j.at("mean").get<std::vector<double>>();
    s.scale = j.at("scale").get<std::vector<double>>();
    s.w = j.at("weights").get<std::vector<double>>();
    s.b = j.at("bias").get<std::vector<double>>();
    return s;
}

inline void save_fusion_model(const std::filesystem::path& path, const FusionModel& m) {
    json j{{"version", 1}, {"config", fusion_config_to_json(m.config)}};
    if (m.group_svm.trained()) j["group_svm"] = svm_to_json(m.group_svm);
    if (m.action_svm.trained()) j["action_svm"] = svm_to_json(m.action_svm);
    write_file_atomic(path, j.dump());
}

inline FusionModel load_fusion_model(const std::filesystem::path& path) {
    json j = json::parse(read_file(path));
    if (j.at("version").get<int>() != 1)
        throw std::runtime_error("fusion model: unsupported version");
    FusionModel m;
    m.config = fusion_config_from_json(j.at("config"));
    if (j.contains("group_svm")) m.group_svm = svm_from_json(j.at("group_svm"));
    if (j.contains("action_svm")) m.action_svm = svm_from_json(j.at("action_svm"));
    return m;
}

/// Fused per-clip prediction indices, the payload of the fused JSON-lines.
struct FusedRecord {
    std::string clip_id;
    int group_pred = 0;
    std::vector<int> person_preds;
};

inline void write_fused_records(const std::filesystem::path& path,
                                const std::vector<FusedRecord>& records) {
    std::ostringstream out;
    for (const auto& r : records)
        out << json{{"clip_id", r.clip_id},
                    {"group_pred", r.group_pred},
                    {"person_preds", r.person_preds}}
                   .dump()
            << "\n";
    write_file_atomic(path, out.str());
}

inline std::vector<FusedRecord> read_fused_records(const std::filesystem::path& path) {
    std::istringstream in(read_file(path));
    std::vector<FusedRecord> records;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        json j = json::parse(line);
        records.push_back(FusedRecord{j.at("clip_id").get<std::string>(),
                                      j.at("group_pred").get<int>(),
                                      j.at("person_preds").get<std::vector<int>>()});
    }
    return records;
}

inline int argmax(const std::vector<double>& v) {
    return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}

}  // namespace msgar
