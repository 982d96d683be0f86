// Copyright (C) 2026 The msgar authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <map>
#include <string>
#include <vector>

#include "msgar/data_model.hpp"
#include "msgar/fusion.hpp"

namespace msgar {

/// Integer count matrix over classes; rows are ground truth, columns are
/// predictions.
struct ConfusionMatrix {
    int classes = 0;
    std::vector<long long> counts;

    ConfusionMatrix() = default;
    explicit ConfusionMatrix(int n) : classes(n), counts(static_cast<std::size_t>(n) * n, 0) {}

    long long& at(int gt, int pred) { return counts[static_cast<std::size_t>(gt) * classes + pred]; }
    long long at(int gt, int pred) const {
        return counts[static_cast<std::size_t>(gt) * classes + pred];
    }

    long long total() const {
        long long t = 0;
        for (long long c : counts) t += c;
        return t;
    }

    long long row_sum(int gt) const {
        long long t = 0;
        for (int p = 0; p < classes; ++p) t += at(gt, p);
        return t;
    }

    void add(int gt, int pred) {
        if (gt < 0 || gt >= classes || pred < 0 || pred >= classes)
            throw std::invalid_argument("confusion matrix: class index out of range");
        ++at(gt, pred);
    }
};

inline ConfusionMatrix build_confusion(const std::vector<std::pair<int, int>>& gt_pred,
                                       int classes) {
    ConfusionMatrix cm(classes);
    for (auto [gt, pred] : gt_pred) cm.add(gt, pred);
    return cm;
}

/// Multi-class classification accuracy: correct / total.
inline double mca(const ConfusionMatrix& cm) {
    long long total = cm.total();
    if (total == 0) throw std::invalid_argument("mca: empty confusion matrix");
    long long correct = 0;
    for (int c = 0; c < cm.classes; ++c) correct += cm.at(c, c);
    return static_cast<double>(correct) / static_cast<double>(total);
}

/// Mean per-class accuracy. Classes with zero ground-truth support are
/// excluded; their indices are reported through excluded_classes when given.
inline double mpca(const ConfusionMatrix& cm, std::vector<int>* excluded_classes = nullptr) {
    double sum = 0.0;
    int used = 0;
    for (int c = 0; c < cm.classes; ++c) {
        long long row = cm.row_sum(c);
        if (row == 0) {
            if (excluded_classes) excluded_classes->push_back(c);
            continue;
        }
        sum += static_cast<double>(cm.at(c, c)) / static_cast<double>(row);
        ++used;
    }
    if (used == 0) throw std::invalid_argument("mpca: no class has ground-truth support");
    return sum / used;
}

/// Sums rows and columns into a smaller class space. mapping[old] = new;
/// the mapping must cover every old class and hit every new class.
inline ConfusionMatrix merge_classes(const ConfusionMatrix& cm, const std::vector<int>& mapping,
                                     int new_classes) {
    if (static_cast<int>(mapping.size()) != cm.classes)
        throw std::invalid_argument("merge_classes: mapping must cover every old class");
    std::vector<bool> hit(new_classes, false);
    for (int m : mapping) {
        if (m < 0 || m >= new_classes)
            throw std::invalid_argument("merge_classes: mapped index out of range");
        hit[m] = true;
    }
    for (int c = 0; c < new_classes; ++c)
        if (!hit[c])
            throw std::invalid_argument("merge_classes: mapping not surjective onto new space");
    ConfusionMatrix out(new_classes);
    for (int g = 0; g < cm.classes; ++g)
        for (int p = 0; p < cm.classes; ++p) out.at(mapping[g], mapping[p]) += cm.at(g, p);
    return out;
}

struct EvalResult {
    double accuracy = 0.0;
    ConfusionMatrix confusion;
};

/// Group-activity evaluation of fused records against ground-truth clips.
/// Clip id sets must match exactly.
inline EvalResult evaluate(const std::vector<FusedRecord>& fused,
                           const std::vector<ValidatedClip>& clips, int n_groups) {
    std::map<std::string, int> gt;
    for (const auto& c : clips) gt[c.clip_id] = c.group;
    if (fused.empty() || gt.empty()) throw std::invalid_argument("evaluate: empty inputs");
    if (fused.size() != gt.size())
        throw std::invalid_argument("evaluate: clip id sets differ in size");
    std::vector<std::pair<int, int>> pairs;
    for (const auto& r : fused) {
        auto it = gt.find(r.clip_id);
        if (it == gt.end())
            throw std::invalid_argument("evaluate: clip id not in ground truth: " + r.clip_id);
        pairs.emplace_back(it->second, r.group_pred);
    }
    EvalResult res;
    res.confusion = build_confusion(pairs, n_groups);
    res.accuracy = mca(res.confusion);
    return res;
}

/// Individual-action evaluation: persons are pooled across clips.
inline EvalResult evaluate_actions(const std::vector<FusedRecord>& fused,
                                   const std::vector<ValidatedClip>& clips, int n_actions) {
    std::map<std::string, const ValidatedClip*> by_id;
    for (const auto& c : clips) by_id[c.clip_id] = &c;
    std::vector<std::pair<int, int>> pairs;
    for (const auto& r : fused) {
        auto it = by_id.find(r.clip_id);
        if (it == by_id.end())
            throw std::invalid_argument("evaluate_actions: clip id not in ground truth: " +
                                        r.clip_id);
        const auto& persons = it->second->persons;
        if (persons.size() != r.person_preds.size())
            throw std::invalid_argument("evaluate_actions: person count mismatch for " + r.clip_id);
        for (std::size_t p = 0; p < persons.size(); ++p)
            pairs.emplace_back(persons[p].action, r.person_preds[p]);
    }
    if (pairs.empty()) throw std::invalid_argument("evaluate_actions: nothing to evaluate");
    EvalResult res;
    res.confusion = build_confusion(pairs, n_actions);
    res.accuracy = mca(res.confusion);
    return res;
}

/// The crossing+walking -> moving merge used for the 5-class label space:
/// returns (mapping, new class names).
inline std::pair<std::vector<int>, std::vector<std::string>> moving_merge_mapping(
    const std::vector<std::string>& group_classes) {
    std::vector<int> mapping(group_classes.size(), -1);
    std::vector<std::string> merged;
    int moving_index = -1;
    for (std::size_t i = 0; i < group_classes.size(); ++i) {
        const std::string& name = group_classes[i];
        if (name == "crossing" || name == "walking") {
            if (moving_index < 0) {
                moving_index = static_cast<int>(merged.size());
                merged.push_back("moving");
            }
            mapping[i] = moving_index;
        } else {
            mapping[i] = static_cast<int>(merged.size());
            merged.push_back(name);
        }
    }
    if (moving_index < 0)
        throw std::invalid_argument("moving merge: label space has neither crossing nor walking");
    return {mapping, merged};
}

}  // namespace msgar
