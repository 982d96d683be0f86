// Copyright (C) 2026 The msgar authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "msgar/core.hpp"
#include "msgar/nn.hpp"

namespace msgar {

struct StageSpec {
    int channels = 8;
    int stride = 2;
    int kernel = 3;
};

/// Configurable convolutional trunk: a chain of strided conv+relu stages.
/// tap_stages name the stages whose outputs are resized and concatenated
/// into the shared feature map for region extraction; the trunk's last stage
/// feeds the scene branch through global average pooling.
struct BackboneConfig {
    int input_channels = 3;
    std::vector<StageSpec> stages;
    std::vector<int> tap_stages;

    void validate() const {
        if (input_channels < 1) throw std::invalid_argument("backbone: input_channels < 1");
        if (stages.empty()) throw std::invalid_argument("backbone: no stages");
        if (tap_stages.empty()) throw std::invalid_argument("backbone: at least one tap required");
        for (int t : tap_stages)
            if (t < 0 || t >= static_cast<int>(stages.size()))
                throw std::invalid_argument("backbone: tap stage index out of range");
        for (const auto& s : stages)
            if (s.channels < 1 || s.stride < 1 || s.kernel < 1)
                throw std::invalid_argument("backbone: bad stage spec");
    }

    int concat_depth() const {
        int d = 0;
        for (int t : tap_stages) d += stages[t].channels;
        return d;
    }

    int final_channels() const { return stages.back().channels; }
};

struct BackboneParams {
    BackboneConfig config;
    std::vector<ConvParams> stages;
};

inline BackboneParams make_backbone(const BackboneConfig& config, Rng& rng) {
    config.validate();
    BackboneParams p;
    p.config = config;
    int in_c = config.input_channels;
    for (std::size_t i = 0; i < config.stages.size(); ++i) {
        ConvParams conv;
        conv.in_c = in_c;
        conv.out_c = config.stages[i].channels;
        conv.k = config.stages[i].kernel;
        conv.stride = config.stages[i].stride;
        conv.pad = config.stages[i].kernel / 2;
        conv.mean_over_inputs = (i == 0);
        conv.init_shape();
        he_init(conv, rng);
        in_c = conv.out_c;
        p.stages.push_back(std::move(conv));
    }
    return p;
}

inline BackboneParams make_backbone_zero(const BackboneConfig& config) {
    Rng rng(0);
    BackboneParams p = make_backbone(config, rng);
    for (auto& s : p.stages) {
        std::fill(s.w.begin(), s.w.end(), 0.0);
        std::fill(s.b.begin(), s.b.end(), 0.0);
    }
    return p;
}

/// Forward cache kept for the backward pass.
struct BackboneTrace {
    Tensor input;
    std::vector<Tensor> pre;   // pre-activation per stage
    std::vector<Tensor> post;  // post-relu per stage
};

struct BackboneOut {
    std::vector<Tensor> taps;
    std::vector<double> final_features;  // global average pool of the last stage
};

inline BackboneOut forward_with_taps(const Tensor& input, const BackboneParams& p,
                                     BackboneTrace* trace = nullptr) {
    if (input.c != p.config.input_channels)
        throw std::invalid_argument("backbone forward: input channel mismatch");
    if (trace) {
        trace->input = input;
        trace->pre.clear();
        trace->post.clear();
    }
    BackboneOut out;
    Tensor x = input;
    for (std::size_t i = 0; i < p.stages.size(); ++i) {
        Tensor pre = conv_forward(x, p.stages[i]);
        Tensor post = pre;
        relu_inplace(post);
        if (trace) {
            trace->pre.push_back(pre);
            trace->post.push_back(post);
        }
        x = post;
        if (std::find(p.config.tap_stages.begin(), p.config.tap_stages.end(), static_cast<int>(i)) !=
            p.config.tap_stages.end())
            out.taps.push_back(x);
    }
    out.final_features = global_avg_pool(x);
    return out;
}

/// Resizes every tap to the first tap's spatial size (bilinear) and
/// concatenates along depth: D' = sum of tap depths.
inline Tensor concat_taps(const std::vector<Tensor>& taps) {
    if (taps.empty()) throw std::invalid_argument("concat_taps: empty tap list");
    int oh = taps[0].h, ow = taps[0].w;
    int depth = 0;
    for (const auto& t : taps) depth += t.c;
    Tensor fm(oh, ow, depth);
    int base = 0;
    for (const auto& t : taps) {
        Tensor r = (t.h == oh && t.w == ow) ? t : bilinear_resize(t, oh, ow);
        for (int y = 0; y < oh; ++y)
            for (int x = 0; x < ow; ++x)
                for (int ch = 0; ch < t.c; ++ch) fm.at(y, x, base + ch) = r.at(y, x, ch);
        base += t.c;
    }
    return fm;
}

/// Splits the concatenated-feature-map gradient back into per-tap gradients,
/// undoing the resize.
inline std::vector<Tensor> concat_taps_backward(const Tensor& grad_fm,
                                                const std::vector<Tensor>& taps) {
    std::vector<Tensor> grads;
    int base = 0;
    for (const auto& t : taps) {
        Tensor slice(grad_fm.h, grad_fm.w, t.c);
        for (int y = 0; y < grad_fm.h; ++y)
            for (int x = 0; x < grad_fm.w; ++x)
                for (int ch = 0; ch < t.c; ++ch) slice.at(y, x, ch) = grad_fm.at(y, x, base + ch);
        base += t.c;
        grads.push_back((t.h == grad_fm.h && t.w == grad_fm.w)
                            ? slice
                            : bilinear_resize_backward(slice, t.h, t.w));
    }
    return grads;
}

/// Backward through the trunk. tap_grads align with config.tap_stages;
/// final_grad is the gradient at the pooled feature vector. Parameter
/// gradients accumulate into grad_p.
inline void backbone_backward(const BackboneParams& p, const BackboneTrace& trace,
                              const std::vector<Tensor>& tap_grads,
                              const std::vector<double>& final_grad, BackboneParams& grad_p) {
    const int n_stages = static_cast<int>(p.stages.size());
    const Tensor& last = trace.post.back();
    Tensor g = global_avg_pool_backward(final_grad, last.h, last.w);
    for (int i = n_stages - 1; i >= 0; --i) {
        auto it = std::find(p.config.tap_stages.begin(), p.config.tap_stages.end(), i);
        if (it != p.config.tap_stages.end() && !tap_grads.empty()) {
            const Tensor& tg = tap_grads[it - p.config.tap_stages.begin()];
            for (std::size_t j = 0; j < g.v.size(); ++j) g.v[j] += tg.v[j];
        }
        relu_backward_inplace(trace.pre[i], g);
        const Tensor& stage_in = (i == 0) ? trace.input : trace.post[i - 1];
        g = conv_backward(stage_in, p.stages[i], g, grad_p.stages[i]);
    }
}

/// Adapts first-layer kernels trained on 3-channel input to a D-channel
/// input: every target channel receives the elementwise mean over the three
/// source channels; everything else is copied unchanged. Combined with the
/// input layer's mean-over-channels normalization, feeding D copies of a
/// grayscale image through the adapted layer reproduces the original
/// response on the 3-channel input.
inline ConvParams adapt_input_channels(const ConvParams& src, int target_d) {
    if (src.in_c != 3)
        throw std::invalid_argument("adapt_input_channels: source must have 3 input channels");
    if (target_d < 1) throw std::invalid_argument("adapt_input_channels: target D < 1");
    ConvParams dst = src;
    dst.in_c = target_d;
    dst.init_shape();
    dst.b = src.b;
    for (int oc = 0; oc < src.out_c; ++oc)
        for (int ky = 0; ky < src.k; ++ky)
            for (int kx = 0; kx < src.k; ++kx) {
                double mean = (src.wt(oc, 0, ky, kx) + src.wt(oc, 1, ky, kx) +
                               src.wt(oc, 2, ky, kx)) / 3.0;
                for (int ic = 0; ic < target_d; ++ic) dst.wt(oc, ic, ky, kx) = mean;
            }
    return dst;
}

// --- checkpoint format: version + config echo + named tensors with shapes ---

inline json named_params_to_json(const std::vector<NamedParam>& params) {
    json out = json::object();
    for (const auto& p : params) out[p.name] = {{"shape", p.shape}, {"data", *p.data}};
    return out;
}

inline void named_params_from_json(const json& j, const std::vector<NamedParam>& params) {
    for (const auto& p : params) {
        if (!j.contains(p.name)) throw std::runtime_error("checkpoint: missing tensor " + p.name);
        const auto& entry = j.at(p.name);
        auto shape = entry.at("shape").get<std::vector<int>>();
        if (shape != p.shape) throw std::runtime_error("checkpoint: shape mismatch for " + p.name);
        auto data = entry.at("data").get<std::vector<double>>();
        if (data.size() != p.data->size())
            throw std::runtime_error("checkpoint: size mismatch for " + p.name);
        *p.data = std::move(data);
    }
}

inline void save_checkpoint(const std::filesystem::path& path, const json& config_echo,
                            const std::vector<NamedParam>& params) {
    json j{{"version", 1}, {"config", config_echo}, {"params", named_params_to_json(params)}};
    write_file_atomic(path, j.dump());
}

/// Loads a checkpoint into an already-constructed parameter set; returns the
/// stored config echo.
inline json load_checkpoint(const std::filesystem::path& path,
                            const std::vector<NamedParam>& params) {
    json j = json::parse(read_file(path));
    if (!j.contains("version")) throw std::runtime_error("checkpoint: missing version field");
    if (j.at("version").get<int>() != 1) throw std::runtime_error("checkpoint: unsupported version");
    named_params_from_json(j.at("params"), params);
    return j.at("config");
}

inline std::vector<NamedParam> backbone_named_params(BackboneParams& p) {
    std::vector<NamedParam> out;
    for (std::size_t i = 0; i < p.stages.size(); ++i) {
        auto& s = p.stages[i];
        std::string prefix = "stage" + std::to_string(i);
        out.push_back({prefix + ".w", {s.out_c, s.in_c, s.k, s.k}, &s.w});
        out.push_back({prefix + ".b", {s.out_c}, &s.b});
    }
    return out;
}

}  // namespace msgar
