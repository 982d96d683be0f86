// Copyright (C) 2026 The msgar authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "msgar/core.hpp"
#include "msgar/image.hpp"

namespace msgar {

enum class ModalityKind { rgb, flow, warped_flow, posemap };

inline std::string to_string(ModalityKind k) {
    switch (k) {
        case ModalityKind::rgb: return "rgb";
        case ModalityKind::flow: return "flow";
        case ModalityKind::warped_flow: return "warped_flow";
        case ModalityKind::posemap: return "posemap";
    }
    throw std::logic_error("bad ModalityKind");
}

inline ModalityKind modality_from_string(const std::string& s) {
    if (s == "rgb") return ModalityKind::rgb;
    if (s == "flow") return ModalityKind::flow;
    if (s == "warped_flow") return ModalityKind::warped_flow;
    if (s == "posemap") return ModalityKind::posemap;
    throw std::invalid_argument("unknown modality: " + s);
}

inline bool is_temporal(ModalityKind k) {
    return k == ModalityKind::flow || k == ModalityKind::warped_flow;
}

/// Frame window around the labeled middle frame.
struct TemporalWindow {
    int before = 4;
    int after = 5;
    int length() const { return before + after + 1; }
    int pairs() const { return length() - 1; }
};

/// Dense displacement field between two frames, in pixels.
struct FlowField {
    Tensor data;  // h x w x 2, channel 0 = x displacement, 1 = y
    FlowField() = default;
    FlowField(int h, int w) : data(h, w, 2) {}
    int h() const { return data.h; }
    int w() const { return data.w; }
};

/// One modality input tensor for a clip. Channel counts: rgb 3, posemap 3
/// (single channel replicated), flow kinds 2*(window-1).
struct ModalityStack {
    ModalityKind kind = ModalityKind::rgb;
    Tensor data;
    std::string clip_id;
};

inline int expected_channels(ModalityKind kind, const TemporalWindow& window) {
    return is_temporal(kind) ? 2 * window.pairs() : 3;
}

inline void validate_stack(const ModalityStack& stack, const TemporalWindow& window) {
    if (stack.data.c != expected_channels(stack.kind, window))
        throw std::invalid_argument("modality stack: wrong channel count for " +
                                    to_string(stack.kind));
    if (!stack.data.all_finite())
        throw std::invalid_argument("modality stack: non-finite values");
}

namespace detail {

inline Tensor downsample2(const Tensor& src) {
    int h = std::max(1, src.h / 2), w = std::max(1, src.w / 2);
    Tensor dst(h, w, 1);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            int y0 = 2 * y, x0 = 2 * x;
            int y1 = std::min(y0 + 1, src.h - 1), x1 = std::min(x0 + 1, src.w - 1);
            dst.at(y, x, 0) = 0.25 * (src.at(y0, x0, 0) + src.at(y0, x1, 0) +
                                      src.at(y1, x0, 0) + src.at(y1, x1, 0));
        }
    return dst;
}

inline double sample_clamped(const Tensor& img, int y, int x) {
    y = std::clamp(y, 0, img.h - 1);
    x = std::clamp(x, 0, img.w - 1);
    return img.at(y, x, 0);
}

inline double patch_ssd(const Tensor& a, const Tensor& b, int ay, int ax, int by, int bx,
                        int half) {
    double ssd = 0.0;
    for (int dy = -half; dy <= half; ++dy)
        for (int dx = -half; dx <= half; ++dx) {
            double d = sample_clamped(a, ay + dy, ax + dx) - sample_clamped(b, by + dy, bx + dx);
            ssd += d * d;
        }
    return ssd;
}

inline double patch_variance(const Tensor& a, int y, int x, int half) {
    double sum = 0.0, sum2 = 0.0;
    int n = 0;
    for (int dy = -half; dy <= half; ++dy)
        for (int dx = -half; dx <= half; ++dx) {
            double v = sample_clamped(a, y + dy, x + dx);
            sum += v;
            sum2 += v * v;
            ++n;
        }
    double mean = sum / n;
    return sum2 / n - mean * mean;
}

/// Parabolic peak refinement from three samples of a cost function; returns
/// the sub-sample offset of the minimum, clamped to [-0.5, 0.5].
inline double parabolic_offset(double cm, double c0, double cp) {
    double denom = cm - 2.0 * c0 + cp;
    if (denom <= 1e-12) return 0.0;
    double d = 0.5 * (cm - cp) / denom;
    return std::clamp(d, -0.5, 0.5);
}

}  // namespace detail

/// Desk-scale dense optical flow: coarse-to-fine block matching with
/// sub-pixel parabolic refinement. Patches with near-zero variance fall back
/// to zero flow. Returned displacement d satisfies a(p) ~ b(p + d(p)).
inline FlowField estimate_flow(const Tensor& frame_a, const Tensor& frame_b,
                               int search_radius = 2, int patch_half = 2,
                               double texture_tau = 0.5) {
    if (frame_a.h != frame_b.h || frame_a.w != frame_b.w || frame_a.c != 1 || frame_b.c != 1)
        throw std::invalid_argument("estimate_flow: frames must be single-channel, equal shapes");

    // pyramid down to ~16 px
    std::vector<Tensor> pyr_a{frame_a}, pyr_b{frame_b};
    while (std::min(pyr_a.back().h, pyr_a.back().w) >= 32 && pyr_a.size() < 4) {
        pyr_a.push_back(detail::downsample2(pyr_a.back()));
        pyr_b.push_back(detail::downsample2(pyr_b.back()));
    }

    FlowField flow(pyr_a.back().h, pyr_a.back().w);
    for (int level = static_cast<int>(pyr_a.size()) - 1; level >= 0; --level) {
        const Tensor& a = pyr_a[level];
        const Tensor& b = pyr_b[level];
        if (flow.h() != a.h || flow.w() != a.w) {
            // upsample previous estimate, scaling displacements with resolution
            FlowField up(a.h, a.w);
            for (int y = 0; y < a.h; ++y)
                for (int x = 0; x < a.w; ++x)
                    for (int ch = 0; ch < 2; ++ch)
                        up.data.at(y, x, ch) =
                            2.0 * flow.data.at(std::min(y / 2, flow.h() - 1),
                                               std::min(x / 2, flow.w() - 1), ch);
            flow = std::move(up);
        }
        FlowField refined(a.h, a.w);
        const int r = search_radius;
        std::vector<double> cost((2 * r + 1) * (2 * r + 1));
        for (int y = 0; y < a.h; ++y)
            for (int x = 0; x < a.w; ++x) {
                if (detail::patch_variance(a, y, x, patch_half) < texture_tau) {
                    refined.data.at(y, x, 0) = 0.0;
                    refined.data.at(y, x, 1) = 0.0;
                    continue;
                }
                int px = static_cast<int>(std::lround(flow.data.at(y, x, 0)));
                int py = static_cast<int>(std::lround(flow.data.at(y, x, 1)));
                int best = 0;
                double best_cost = std::numeric_limits<double>::infinity();
                for (int dy = -r; dy <= r; ++dy)
                    for (int dx = -r; dx <= r; ++dx) {
                        double cst = detail::patch_ssd(a, b, y, x, y + py + dy, x + px + dx,
                                                       patch_half);
                        int idx = (dy + r) * (2 * r + 1) + (dx + r);
                        cost[idx] = cst;
                        if (cst < best_cost) {
                            best_cost = cst;
                            best = idx;
                        }
                    }
                int bdy = best / (2 * r + 1) - r;
                int bdx = best % (2 * r + 1) - r;
                double sub_x = 0.0, sub_y = 0.0;
                if (bdx > -r && bdx < r)
                    sub_x = detail::parabolic_offset(
                        cost[(bdy + r) * (2 * r + 1) + (bdx + r - 1)], best_cost,
                        cost[(bdy + r) * (2 * r + 1) + (bdx + r + 1)]);
                if (bdy > -r && bdy < r)
                    sub_y = detail::parabolic_offset(
                        cost[(bdy + r - 1) * (2 * r + 1) + (bdx + r)], best_cost,
                        cost[(bdy + r + 1) * (2 * r + 1) + (bdx + r)]);
                refined.data.at(y, x, 0) = px + bdx + sub_x;
                refined.data.at(y, x, 1) = py + bdy + sub_y;
            }
        flow = std::move(refined);
    }
    return flow;
}

/// Median x/y displacement over all pixels; robust summary used by tests and
/// by the translation fallback for camera-motion compensation.
inline std::array<double, 2> median_flow(const FlowField& flow) {
    std::vector<double> xs, ys;
    xs.reserve(flow.data.size() / 2);
    ys.reserve(flow.data.size() / 2);
    for (int y = 0; y < flow.h(); ++y)
        for (int x = 0; x < flow.w(); ++x) {
            xs.push_back(flow.data.at(y, x, 0));
            ys.push_back(flow.data.at(y, x, 1));
        }
    auto median = [](std::vector<double>& v) {
        std::nth_element(v.begin(), v.begin() + v.size() / 2, v.end());
        return v[v.size() / 2];
    };
    return {median(xs), median(ys)};
}

/// 3x3 row-major homography.
using Homography = std::array<double, 9>;

inline Homography identity_homography() { return {1, 0, 0, 0, 1, 0, 0, 0, 1}; }

inline Homography translation_homography(double tx, double ty) {
    return {1, 0, tx, 0, 1, ty, 0, 0, 1};
}

inline double homography_det(const Homography& m) {
    return m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
           m[2] * (m[3] * m[7] - m[4] * m[6]);
}

/// Subtracts the displacement field induced by the homography (p' - p at each
/// pixel) from the flow, removing global/camera motion.
inline FlowField warp_compensate(const FlowField& flow, const Homography& h) {
    if (std::abs(homography_det(h)) < 1e-12)
        throw std::invalid_argument("warp_compensate: singular homography");
    FlowField out(flow.h(), flow.w());
    for (int y = 0; y < flow.h(); ++y)
        for (int x = 0; x < flow.w(); ++x) {
            double wq = h[6] * x + h[7] * y + h[8];
            double qx = (h[0] * x + h[1] * y + h[2]) / wq;
            double qy = (h[3] * x + h[4] * y + h[5]) / wq;
            out.data.at(y, x, 0) = flow.data.at(y, x, 0) - (qx - x);
            out.data.at(y, x, 1) = flow.data.at(y, x, 1) - (qy - y);
        }
    return out;
}

/// Stacks window-1 adjacent-pair flow fields into one input tensor with x/y
/// channels interleaved per pair: (x1, y1, x2, y2, ...).
inline ModalityStack build_flow_stack(const std::vector<FlowField>& flows, ModalityKind kind,
                                      const std::string& clip_id,
                                      const TemporalWindow& window = {}) {
    if (!is_temporal(kind))
        throw std::invalid_argument("build_flow_stack: kind must be flow or warped_flow");
    if (static_cast<int>(flows.size()) != window.pairs())
        throw std::invalid_argument("build_flow_stack: expected " + std::to_string(window.pairs()) +
                                    " fields, got " + std::to_string(flows.size()));
    for (const auto& f : flows)
        if (f.h() != flows[0].h() || f.w() != flows[0].w())
            throw std::invalid_argument("build_flow_stack: field shape mismatch");
    ModalityStack stack;
    stack.kind = kind;
    stack.clip_id = clip_id;
    stack.data = Tensor(flows[0].h(), flows[0].w(), 2 * static_cast<int>(flows.size()));
    for (std::size_t i = 0; i < flows.size(); ++i)
        for (int y = 0; y < flows[i].h(); ++y)
            for (int x = 0; x < flows[i].w(); ++x) {
                stack.data.at(y, x, 2 * static_cast<int>(i)) = flows[i].data.at(y, x, 0);
                stack.data.at(y, x, 2 * static_cast<int>(i) + 1) = flows[i].data.at(y, x, 1);
            }
    return stack;
}

/// Converts a pose-estimator background heatmap (high where no body part)
/// into a posemap: inverted against the maximum, scaled so the peak maps to
/// 255, then replicated to 3 channels. A constant background yields zeros.
inline ModalityStack convert_pose_heatmap(const Tensor& background,
                                          const std::string& clip_id = "") {
    if (background.c != 1)
        throw std::invalid_argument("convert_pose_heatmap: expected single-channel heatmap");
    if (!background.all_finite())
        throw std::invalid_argument("convert_pose_heatmap: non-finite heatmap");
    double mx = *std::max_element(background.v.begin(), background.v.end());
    double mn = *std::min_element(background.v.begin(), background.v.end());
    ModalityStack stack;
    stack.kind = ModalityKind::posemap;
    stack.clip_id = clip_id;
    stack.data = Tensor(background.h, background.w, 3);
    double range = mx - mn;
    for (int y = 0; y < background.h; ++y)
        for (int x = 0; x < background.w; ++x) {
            double p = mx - background.at(y, x, 0);
            double scaled = range > 0.0 ? p * 255.0 / range : 0.0;
            for (int ch = 0; ch < 3; ++ch) stack.data.at(y, x, ch) = scaled;
        }
    return stack;
}

/// One channel, linearly quantized to 8 bits with the range stored alongside.
struct QuantizedField {
    int h = 0, w = 0;
    std::vector<std::uint8_t> bytes;
    double lo = 0.0, hi = 0.0;
};

/// Per-channel linear map onto 0..255 with round-half-up. A constant channel
/// stores lo == hi and all-zero bytes.
inline QuantizedField quantize(const Tensor& channel) {
    if (channel.c != 1) throw std::invalid_argument("quantize: expected single channel");
    if (!channel.all_finite()) throw std::invalid_argument("quantize: non-finite values");
    QuantizedField q;
    q.h = channel.h;
    q.w = channel.w;
    q.lo = *std::min_element(channel.v.begin(), channel.v.end());
    q.hi = *std::max_element(channel.v.begin(), channel.v.end());
    q.bytes.resize(channel.size());
    double range = q.hi - q.lo;
    for (std::size_t i = 0; i < channel.size(); ++i) {
        if (range <= 0.0) {
            q.bytes[i] = 0;
        } else {
            double t = (channel.v[i] - q.lo) / range * 255.0;
            q.bytes[i] = static_cast<std::uint8_t>(std::floor(t + 0.5));
        }
    }
    return q;
}

inline Tensor dequantize(const QuantizedField& q) {
    Tensor t(q.h, q.w, 1);
    double range = q.hi - q.lo;
    for (std::size_t i = 0; i < q.bytes.size(); ++i)
        t.v[i] = q.lo + static_cast<double>(q.bytes[i]) / 255.0 * range;
    return t;
}

// --- on-disk cache: one gray PNG per channel plus a JSON sidecar ---

inline Tensor stack_channel(const ModalityStack& stack, int ch) {
    Tensor t(stack.data.h, stack.data.w, 1);
    for (int y = 0; y < stack.data.h; ++y)
        for (int x = 0; x < stack.data.w; ++x) t.at(y, x, 0) = stack.data.at(y, x, ch);
    return t;
}

inline void write_stack_cache(const std::filesystem::path& dir, const ModalityStack& stack) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    json ranges = json::array();
    for (int ch = 0; ch < stack.data.c; ++ch) {
        QuantizedField q = quantize(stack_channel(stack, ch));
        ImageU8 img(q.h, q.w, 1);
        img.px = q.bytes;
        char name[32];
        std::snprintf(name, sizeof(name), "chan_%02d.png", ch);
        save_png(dir / name, img);
        ranges.push_back({q.lo, q.hi});
    }
    json meta{{"version", 1},
              {"kind", to_string(stack.kind)},
              {"clip_id", stack.clip_id},
              {"height", stack.data.h},
              {"width", stack.data.w},
              {"channels", stack.data.c},
              {"ranges", ranges}};
    write_file_atomic(dir / "meta.json", meta.dump(2));
}

inline ModalityStack read_stack_cache(const std::filesystem::path& dir) {
    json meta = json::parse(read_file(dir / "meta.json"));
    if (meta.at("version").get<int>() != 1)
        throw std::runtime_error("stack cache: unsupported version in " + dir.string());
    ModalityStack stack;
    stack.kind = modality_from_string(meta.at("kind").get<std::string>());
    stack.clip_id = meta.at("clip_id").get<std::string>();
    int h = meta.at("height").get<int>(), w = meta.at("width").get<int>(),
        c = meta.at("channels").get<int>();
    stack.data = Tensor(h, w, c);
    for (int ch = 0; ch < c; ++ch) {
        char name[32];
        std::snprintf(name, sizeof(name), "chan_%02d.png", ch);
        ImageU8 img = load_png(dir / name);
        if (img.h != h || img.w != w || img.c != 1)
            throw std::runtime_error("stack cache: channel shape mismatch in " + dir.string());
        QuantizedField q;
        q.h = h;
        q.w = w;
        q.bytes = img.px;
        q.lo = meta.at("ranges").at(ch).at(0).get<double>();
        q.hi = meta.at("ranges").at(ch).at(1).get<double>();
        Tensor t = dequantize(q);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) stack.data.at(y, x, ch) = t.at(y, x, 0);
    }
    return stack;
}

/// Optional per-clip homography sidecar: {"homographies": [[9 numbers], ...]},
/// one row-major 3x3 matrix per adjacent frame pair.
inline std::vector<Homography> load_homographies(const std::filesystem::path& path,
                                                 int expected_pairs) {
    json j = json::parse(read_file(path));
    std::vector<Homography> out;
    for (const auto& row : j.at("homographies")) {
        if (row.size() != 9)
            throw std::runtime_error("homography sidecar: expected 9 entries per matrix");
        Homography h{};
        for (int i = 0; i < 9; ++i) h[i] = row.at(i).get<double>();
        out.push_back(h);
    }
    if (static_cast<int>(out.size()) != expected_pairs)
        throw std::runtime_error("homography sidecar: expected " + std::to_string(expected_pairs) +
                                 " matrices, got " + std::to_string(out.size()));
    return out;
}

/// Horizontal flip of a modality stack for augmentation. Flow x-channels
/// change sign under mirroring.
inline ModalityStack flip_stack_horizontal(const ModalityStack& stack) {
    ModalityStack out = stack;
    for (int y = 0; y < stack.data.h; ++y)
        for (int x = 0; x < stack.data.w; ++x)
            for (int ch = 0; ch < stack.data.c; ++ch) {
                double v = stack.data.at(y, stack.data.w - 1 - x, ch);
                if (is_temporal(stack.kind) && ch % 2 == 0) v = -v;
                out.data.at(y, x, ch) = v;
            }
    return out;
}

}  // namespace msgar
