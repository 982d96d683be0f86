// Copyright (C) 2026 The msgar authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "msgar/core.hpp"

namespace msgar {

/// 3x3-style convolution parameters. When mean_over_inputs is set the layer
/// averages rather than sums over input channels, which keeps the response
/// scale independent of the modality's channel count D_k and makes the
/// channel-mean weight adaptation response-preserving for any D.
struct ConvParams {
    int in_c = 0, out_c = 0, k = 3, stride = 2, pad = 1;
    bool mean_over_inputs = false;
    std::vector<double> w;  // [out_c][in_c][k][k]
    std::vector<double> b;  // [out_c]

    void init_shape() {
        w.assign(static_cast<std::size_t>(out_c) * in_c * k * k, 0.0);
        b.assign(out_c, 0.0);
    }
    double& wt(int oc, int ic, int ky, int kx) {
        return w[((static_cast<std::size_t>(oc) * in_c + ic) * k + ky) * k + kx];
    }
    double wt(int oc, int ic, int ky, int kx) const {
        return w[((static_cast<std::size_t>(oc) * in_c + ic) * k + ky) * k + kx];
    }
};

struct DenseParams {
    int in_dim = 0, out_dim = 0;
    std::vector<double> w;  // [out_dim][in_dim]
    std::vector<double> b;  // [out_dim]

    void init_shape() {
        w.assign(static_cast<std::size_t>(out_dim) * in_dim, 0.0);
        b.assign(out_dim, 0.0);
    }
};

inline void he_init(ConvParams& p, Rng& rng) {
    double scale = std::sqrt(2.0 / (p.in_c * p.k * p.k));
    for (double& x : p.w) x = rng.gaussian() * scale;
    for (double& x : p.b) x = 0.0;
}

inline void he_init(DenseParams& p, Rng& rng) {
    double scale = std::sqrt(2.0 / p.in_dim);
    for (double& x : p.w) x = rng.gaussian() * scale;
    for (double& x : p.b) x = 0.0;
}

inline int conv_out_dim(int in, int k, int stride, int pad) {
    return (in + 2 * pad - k) / stride + 1;
}

inline Tensor conv_forward(const Tensor& in, const ConvParams& p) {
    if (in.c != p.in_c) throw std::invalid_argument("conv_forward: input channel mismatch");
    int oh = conv_out_dim(in.h, p.k, p.stride, p.pad);
    int ow = conv_out_dim(in.w, p.k, p.stride, p.pad);
    double scale = p.mean_over_inputs ? 1.0 / p.in_c : 1.0;
    Tensor out(oh, ow, p.out_c);
    for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x)
            for (int oc = 0; oc < p.out_c; ++oc) {
                double acc = 0.0;
                for (int ky = 0; ky < p.k; ++ky) {
                    int iy = y * p.stride + ky - p.pad;
                    if (iy < 0 || iy >= in.h) continue;
                    for (int kx = 0; kx < p.k; ++kx) {
                        int ix = x * p.stride + kx - p.pad;
                        if (ix < 0 || ix >= in.w) continue;
                        for (int ic = 0; ic < p.in_c; ++ic)
                            acc += p.wt(oc, ic, ky, kx) * in.at(iy, ix, ic);
                    }
                }
                out.at(y, x, oc) = scale * acc + p.b[oc];
            }
    return out;
}

/// Accumulates parameter gradients into grad_p and returns the gradient
/// with respect to the layer input.
inline Tensor conv_backward(const Tensor& in, const ConvParams& p, const Tensor& grad_out,
                            ConvParams& grad_p) {
    double scale = p.mean_over_inputs ? 1.0 / p.in_c : 1.0;
    Tensor grad_in(in.h, in.w, in.c);
    for (int y = 0; y < grad_out.h; ++y)
        for (int x = 0; x < grad_out.w; ++x)
            for (int oc = 0; oc < p.out_c; ++oc) {
                double g = grad_out.at(y, x, oc);
                if (g == 0.0) continue;
                grad_p.b[oc] += g;
                double gs = g * scale;
                for (int ky = 0; ky < p.k; ++ky) {
                    int iy = y * p.stride + ky - p.pad;
                    if (iy < 0 || iy >= in.h) continue;
                    for (int kx = 0; kx < p.k; ++kx) {
                        int ix = x * p.stride + kx - p.pad;
                        if (ix < 0 || ix >= in.w) continue;
                        for (int ic = 0; ic < p.in_c; ++ic) {
                            grad_p.wt(oc, ic, ky, kx) += gs * in.at(iy, ix, ic);
                            grad_in.at(iy, ix, ic) += gs * p.wt(oc, ic, ky, kx);
                        }
                    }
                }
            }
    return grad_in;
}

inline std::vector<double> dense_forward(const std::vector<double>& x, const DenseParams& p) {
    if (static_cast<int>(x.size()) != p.in_dim)
        throw std::invalid_argument("dense_forward: input size mismatch");
    std::vector<double> out(p.out_dim);
    for (int o = 0; o < p.out_dim; ++o) {
        double acc = p.b[o];
        const double* row = &p.w[static_cast<std::size_t>(o) * p.in_dim];
        for (int i = 0; i < p.in_dim; ++i) acc += row[i] * x[i];
        out[o] = acc;
    }
    return out;
}

inline std::vector<double> dense_backward(const std::vector<double>& x, const DenseParams& p,
                                          const std::vector<double>& grad_out,
                                          DenseParams& grad_p) {
    std::vector<double> grad_x(p.in_dim, 0.0);
    for (int o = 0; o < p.out_dim; ++o) {
        double g = grad_out[o];
        grad_p.b[o] += g;
        double* grow = &grad_p.w[static_cast<std::size_t>(o) * p.in_dim];
        const double* row = &p.w[static_cast<std::size_t>(o) * p.in_dim];
        for (int i = 0; i < p.in_dim; ++i) {
            grow[i] += g * x[i];
            grad_x[i] += g * row[i];
        }
    }
    return grad_x;
}

inline void relu_inplace(Tensor& t) {
    for (double& x : t.v)
        if (x < 0.0) x = 0.0;
}

inline void relu_inplace(std::vector<double>& v) {
    for (double& x : v)
        if (x < 0.0) x = 0.0;
}

/// Gradient of relu given pre-activation values; masks grad where pre <= 0.
inline void relu_backward_inplace(const Tensor& pre, Tensor& grad) {
    for (std::size_t i = 0; i < pre.v.size(); ++i)
        if (pre.v[i] <= 0.0) grad.v[i] = 0.0;
}

inline void relu_backward_inplace(const std::vector<double>& pre, std::vector<double>& grad) {
    for (std::size_t i = 0; i < pre.size(); ++i)
        if (pre[i] <= 0.0) grad[i] = 0.0;
}

inline std::vector<double> softmax(const std::vector<double>& logits) {
    double mx = logits[0];
    for (double x : logits) mx = std::max(mx, x);
    std::vector<double> out(logits.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        out[i] = std::exp(logits[i] - mx);
        sum += out[i];
    }
    for (double& x : out) x /= sum;
    return out;
}

// --- bilinear sampling ---
// Coordinates live in cell-center space: t = j lands exactly on cell j, and
// samples are clamped at the borders so constants extend past the edges.

inline double bilinear_sample(const Tensor& t, double ty, double tx, int ch) {
    int y0 = static_cast<int>(std::floor(ty));
    int x0 = static_cast<int>(std::floor(tx));
    double fy = ty - y0, fx = tx - x0;
    auto cy = [&](int y) { return std::clamp(y, 0, t.h - 1); };
    auto cx = [&](int x) { return std::clamp(x, 0, t.w - 1); };
    return (1 - fy) * ((1 - fx) * t.at(cy(y0), cx(x0), ch) + fx * t.at(cy(y0), cx(x0 + 1), ch)) +
           fy * ((1 - fx) * t.at(cy(y0 + 1), cx(x0), ch) + fx * t.at(cy(y0 + 1), cx(x0 + 1), ch));
}

inline void bilinear_scatter(Tensor& grad, double ty, double tx, int ch, double g) {
    int y0 = static_cast<int>(std::floor(ty));
    int x0 = static_cast<int>(std::floor(tx));
    double fy = ty - y0, fx = tx - x0;
    auto cy = [&](int y) { return std::clamp(y, 0, grad.h - 1); };
    auto cx = [&](int x) { return std::clamp(x, 0, grad.w - 1); };
    grad.at(cy(y0), cx(x0), ch) += g * (1 - fy) * (1 - fx);
    grad.at(cy(y0), cx(x0 + 1), ch) += g * (1 - fy) * fx;
    grad.at(cy(y0 + 1), cx(x0), ch) += g * fy * (1 - fx);
    grad.at(cy(y0 + 1), cx(x0 + 1), ch) += g * fy * fx;
}

/// Bilinear resize to (oh, ow), all channels.
inline Tensor bilinear_resize(const Tensor& in, int oh, int ow) {
    if (oh < 1 || ow < 1) throw std::invalid_argument("bilinear_resize: bad output shape");
    Tensor out(oh, ow, in.c);
    double sy = static_cast<double>(in.h) / oh, sx = static_cast<double>(in.w) / ow;
    for (int y = 0; y < oh; ++y) {
        double ty = (y + 0.5) * sy - 0.5;
        for (int x = 0; x < ow; ++x) {
            double tx = (x + 0.5) * sx - 0.5;
            for (int ch = 0; ch < in.c; ++ch) out.at(y, x, ch) = bilinear_sample(in, ty, tx, ch);
        }
    }
    return out;
}

inline Tensor bilinear_resize_backward(const Tensor& grad_out, int ih, int iw) {
    Tensor grad_in(ih, iw, grad_out.c);
    double sy = static_cast<double>(ih) / grad_out.h, sx = static_cast<double>(iw) / grad_out.w;
    for (int y = 0; y < grad_out.h; ++y) {
        double ty = (y + 0.5) * sy - 0.5;
        for (int x = 0; x < grad_out.w; ++x) {
            double tx = (x + 0.5) * sx - 0.5;
            for (int ch = 0; ch < grad_out.c; ++ch)
                bilinear_scatter(grad_in, ty, tx, ch, grad_out.at(y, x, ch));
        }
    }
    return grad_in;
}

inline std::vector<double> global_avg_pool(const Tensor& t) {
    std::vector<double> out(t.c, 0.0);
    for (int y = 0; y < t.h; ++y)
        for (int x = 0; x < t.w; ++x)
            for (int ch = 0; ch < t.c; ++ch) out[ch] += t.at(y, x, ch);
    double inv = 1.0 / (static_cast<double>(t.h) * t.w);
    for (double& x : out) x *= inv;
    return out;
}

inline Tensor global_avg_pool_backward(const std::vector<double>& grad_out, int h, int w) {
    Tensor grad(h, w, static_cast<int>(grad_out.size()));
    double inv = 1.0 / (static_cast<double>(h) * w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int ch = 0; ch < grad.c; ++ch) grad.at(y, x, ch) = grad_out[ch] * inv;
    return grad;
}

/// Reference to one named parameter tensor inside a model, used for
/// checkpoints, optimizer state and gradient checks.
struct NamedParam {
    std::string name;
    std::vector<int> shape;
    std::vector<double>* data = nullptr;
};

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Adam with bias correction; one state slot per named parameter.
class Adam {
public:
    Adam() = default;
    explicit Adam(const AdamConfig& cfg) : cfg_(cfg) {}

    void step(const std::vector<NamedParam>& params, const std::vector<NamedParam>& grads) {
        if (params.size() != grads.size())
            throw std::invalid_argument("Adam::step: param/grad structure mismatch");
        if (m_.empty()) {
            m_.resize(params.size());
            v_.resize(params.size());
            for (std::size_t i = 0; i < params.size(); ++i) {
                m_[i].assign(params[i].data->size(), 0.0);
                v_[i].assign(params[i].data->size(), 0.0);
            }
        }
        ++t_;
        double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
        double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
        for (std::size_t i = 0; i < params.size(); ++i) {
            auto& p = *params[i].data;
            auto& g = *grads[i].data;
            if (p.size() != g.size())
                throw std::invalid_argument("Adam::step: grad size mismatch for " + params[i].name);
            for (std::size_t j = 0; j < p.size(); ++j) {
                m_[i][j] = cfg_.beta1 * m_[i][j] + (1.0 - cfg_.beta1) * g[j];
                v_[i][j] = cfg_.beta2 * v_[i][j] + (1.0 - cfg_.beta2) * g[j] * g[j];
                double mhat = m_[i][j] / bc1;
                double vhat = v_[i][j] / bc2;
                p[j] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
            }
        }
    }

private:
    AdamConfig cfg_;
    std::vector<std::vector<double>> m_, v_;
    long t_ = 0;
};

}  // namespace msgar
