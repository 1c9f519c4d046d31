#include "forgeloc/nn.hpp"

#include <Eigen/Dense>
#include <cmath>

namespace forgeloc::nn {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

void check_chw(const Tensor& x, const char* op) {
    if (x.shape().size() != 3) throw ShapeError(std::string(op) + ": expected CxHxW input, got " + shape_str(x.shape()));
}

// Gathers kxk receptive fields into a (C*k*k) x (H*W) matrix.
std::vector<double> im2col(const double* x, int c, int h, int w, int k) {
    const int pad = k / 2;
    const int hw = h * w;
    std::vector<double> cols(static_cast<size_t>(c) * k * k * hw, 0.0);
    for (int ch = 0; ch < c; ++ch) {
        const double* xc = x + static_cast<size_t>(ch) * hw;
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                double* row = cols.data() + (static_cast<size_t>(ch) * k * k + ky * k + kx) * hw;
                const int sy = ky - pad, sx = kx - pad;
                const int y0 = std::max(0, -sy), y1 = std::min(h, h - sy);
                const int x0 = std::max(0, -sx), x1 = std::min(w, w - sx);
                for (int y = y0; y < y1; ++y) {
                    const double* src = xc + static_cast<size_t>(y + sy) * w + (x0 + sx);
                    double* dst = row + static_cast<size_t>(y) * w + x0;
                    std::copy(src, src + (x1 - x0), dst);
                }
            }
        }
    }
    return cols;
}

// Scatter-adds a (C*k*k) x (H*W) gradient back onto the CxHxW input.
void col2im_add(const double* cols, double* dx, int c, int h, int w, int k) {
    const int pad = k / 2;
    const int hw = h * w;
    for (int ch = 0; ch < c; ++ch) {
        double* xc = dx + static_cast<size_t>(ch) * hw;
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                const double* row = cols + (static_cast<size_t>(ch) * k * k + ky * k + kx) * hw;
                const int sy = ky - pad, sx = kx - pad;
                const int y0 = std::max(0, -sy), y1 = std::min(h, h - sy);
                const int x0 = std::max(0, -sx), x1 = std::min(w, w - sx);
                for (int y = y0; y < y1; ++y) {
                    const double* src = row + static_cast<size_t>(y) * w + x0;
                    double* dst = xc + static_cast<size_t>(y + sy) * w + (x0 + sx);
                    for (int i = 0; i < x1 - x0; ++i) dst[i] += src[i];
                }
            }
        }
    }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, int kernel) {
    check_chw(x, "conv2d");
    const int c = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
    const int hw = h * w;
    const int patch = c * kernel * kernel;
    if (weight.size() % patch != 0) throw ShapeError("conv2d: weight size does not match input channels/kernel");
    const int out_c = static_cast<int>(weight.size()) / patch;
    if (bias.size() != out_c) throw ShapeError("conv2d: bias size mismatch");

    std::vector<double> out(static_cast<size_t>(out_c) * hw);
    std::shared_ptr<std::vector<double>> cols;
    {
        CMapMat wm(weight.values().data(), out_c, patch);
        MapMat om(out.data(), out_c, hw);
        if (kernel == 1) {
            CMapMat xm(x.values().data(), c, hw);
            om.noalias() = wm * xm;
        } else {
            cols = std::make_shared<std::vector<double>>(im2col(x.values().data(), c, h, w, kernel));
            CMapMat xm(cols->data(), patch, hw);
            om.noalias() = wm * xm;
        }
        for (int oc = 0; oc < out_c; ++oc) om.row(oc).array() += bias.values()[oc];
    }

    return detail::make_op({out_c, h, w}, std::move(out), {x, weight, bias},
                           [c, h, w, hw, patch, out_c, kernel, cols](detail::Node& n) {
                               auto& px = *n.parents[0];
                               auto& pw = *n.parents[1];
                               auto& pb = *n.parents[2];
                               px.ensure_grad();
                               pw.ensure_grad();
                               pb.ensure_grad();
                               CMapMat gy(n.grad.data(), out_c, hw);
                               CMapMat wm(pw.values.data(), out_c, patch);
                               MapMat gw(pw.grad.data(), out_c, patch);
                               for (int oc = 0; oc < out_c; ++oc) pb.grad[oc] += gy.row(oc).sum();
                               if (kernel == 1) {
                                   CMapMat xm(px.values.data(), c, hw);
                                   gw.noalias() += gy * xm.transpose();
                                   MapMat gx(px.grad.data(), c, hw);
                                   gx.noalias() += wm.transpose() * gy;
                               } else {
                                   CMapMat xm(cols->data(), patch, hw);
                                   gw.noalias() += gy * xm.transpose();
                                   std::vector<double> gcols(static_cast<size_t>(patch) * hw);
                                   MapMat gc(gcols.data(), patch, hw);
                                   gc.noalias() = wm.transpose() * gy;
                                   col2im_add(gcols.data(), px.grad.data(), c, h, w, kernel);
                               }
                           });
}

Tensor depthwise_conv2d(const Tensor& x, const Tensor& weight, int kernel) {
    check_chw(x, "depthwise_conv2d");
    const int c = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
    if (weight.size() != static_cast<int64_t>(c) * kernel * kernel)
        throw ShapeError("depthwise_conv2d: weight size mismatch");
    const int pad = kernel / 2;
    const int hw = h * w;
    std::vector<double> out(static_cast<size_t>(c) * hw, 0.0);
    const double* xv = x.values().data();
    const double* wv = weight.values().data();
    for (int ch = 0; ch < c; ++ch) {
        const double* xc = xv + static_cast<size_t>(ch) * hw;
        const double* wc = wv + static_cast<size_t>(ch) * kernel * kernel;
        double* oc = out.data() + static_cast<size_t>(ch) * hw;
        for (int ky = 0; ky < kernel; ++ky) {
            for (int kx = 0; kx < kernel; ++kx) {
                const double wk = wc[ky * kernel + kx];
                const int sy = ky - pad, sx = kx - pad;
                const int y0 = std::max(0, -sy), y1 = std::min(h, h - sy);
                const int x0 = std::max(0, -sx), x1 = std::min(w, w - sx);
                for (int y = y0; y < y1; ++y) {
                    const double* src = xc + static_cast<size_t>(y + sy) * w + (x0 + sx);
                    double* dst = oc + static_cast<size_t>(y) * w + x0;
                    for (int i = 0; i < x1 - x0; ++i) dst[i] += wk * src[i];
                }
            }
        }
    }
    return detail::make_op({c, h, w}, std::move(out), {x, weight}, [c, h, w, hw, kernel](detail::Node& n) {
        const int pad = kernel / 2;
        auto& px = *n.parents[0];
        auto& pw = *n.parents[1];
        px.ensure_grad();
        pw.ensure_grad();
        for (int ch = 0; ch < c; ++ch) {
            const double* gy = n.grad.data() + static_cast<size_t>(ch) * hw;
            const double* xc = px.values.data() + static_cast<size_t>(ch) * hw;
            const double* wc = pw.values.data() + static_cast<size_t>(ch) * kernel * kernel;
            double* gx = px.grad.data() + static_cast<size_t>(ch) * hw;
            double* gw = pw.grad.data() + static_cast<size_t>(ch) * kernel * kernel;
            for (int ky = 0; ky < kernel; ++ky) {
                for (int kx = 0; kx < kernel; ++kx) {
                    const int sy = ky - pad, sx = kx - pad;
                    const int y0 = std::max(0, -sy), y1 = std::min(h, h - sy);
                    const int x0 = std::max(0, -sx), x1 = std::min(w, w - sx);
                    double acc = 0.0;
                    const double wk = wc[ky * kernel + kx];
                    for (int y = y0; y < y1; ++y) {
                        const double* gyr = gy + static_cast<size_t>(y) * w + x0;
                        const double* xr = xc + static_cast<size_t>(y + sy) * w + (x0 + sx);
                        double* gxr = gx + static_cast<size_t>(y + sy) * w + (x0 + sx);
                        for (int i = 0; i < x1 - x0; ++i) {
                            acc += gyr[i] * xr[i];
                            gxr[i] += gyr[i] * wk;
                        }
                    }
                    gw[ky * kernel + kx] += acc;
                }
            }
        }
    });
}

Tensor avg_pool2(const Tensor& x) {
    check_chw(x, "avg_pool2");
    const int c = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
    if (h % 2 != 0 || w % 2 != 0) throw ShapeError("avg_pool2: spatial size must be even, got " + shape_str(x.shape()));
    const int oh = h / 2, ow = w / 2;
    std::vector<double> out(static_cast<size_t>(c) * oh * ow);
    const double* xv = x.values().data();
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < oh; ++y)
            for (int xx = 0; xx < ow; ++xx) {
                const size_t base = (static_cast<size_t>(ch) * h + 2 * y) * w + 2 * xx;
                out[(static_cast<size_t>(ch) * oh + y) * ow + xx] =
                    0.25 * (xv[base] + xv[base + 1] + xv[base + w] + xv[base + w + 1]);
            }
    return detail::make_op({c, oh, ow}, std::move(out), {x}, [c, h, w, oh, ow](detail::Node& n) {
        auto& p = *n.parents[0];
        p.ensure_grad();
        for (int ch = 0; ch < c; ++ch)
            for (int y = 0; y < oh; ++y)
                for (int xx = 0; xx < ow; ++xx) {
                    const double g = 0.25 * n.grad[(static_cast<size_t>(ch) * oh + y) * ow + xx];
                    const size_t base = (static_cast<size_t>(ch) * h + 2 * y) * w + 2 * xx;
                    p.grad[base] += g;
                    p.grad[base + 1] += g;
                    p.grad[base + w] += g;
                    p.grad[base + w + 1] += g;
                }
    });
}

Tensor upsample_nearest2(const Tensor& x) {
    check_chw(x, "upsample_nearest2");
    const int c = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
    const int oh = h * 2, ow = w * 2;
    std::vector<double> out(static_cast<size_t>(c) * oh * ow);
    const double* xv = x.values().data();
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < oh; ++y)
            for (int xx = 0; xx < ow; ++xx)
                out[(static_cast<size_t>(ch) * oh + y) * ow + xx] =
                    xv[(static_cast<size_t>(ch) * h + y / 2) * w + xx / 2];
    return detail::make_op({c, oh, ow}, std::move(out), {x}, [c, h, w, oh, ow](detail::Node& n) {
        auto& p = *n.parents[0];
        p.ensure_grad();
        for (int ch = 0; ch < c; ++ch)
            for (int y = 0; y < oh; ++y)
                for (int xx = 0; xx < ow; ++xx)
                    p.grad[(static_cast<size_t>(ch) * h + y / 2) * w + xx / 2] +=
                        n.grad[(static_cast<size_t>(ch) * oh + y) * ow + xx];
    });
}

Tensor global_avg_pool(const Tensor& x) {
    check_chw(x, "global_avg_pool");
    const int c = x.shape()[0];
    const int hw = x.shape()[1] * x.shape()[2];
    const double inv = 1.0 / hw;
    std::vector<double> out(c, 0.0);
    const double* xv = x.values().data();
    for (int ch = 0; ch < c; ++ch) {
        double s = 0.0;
        for (int i = 0; i < hw; ++i) s += xv[static_cast<size_t>(ch) * hw + i];
        out[ch] = s * inv;
    }
    return detail::make_op({c}, std::move(out), {x}, [c, hw, inv](detail::Node& n) {
        auto& p = *n.parents[0];
        p.ensure_grad();
        for (int ch = 0; ch < c; ++ch) {
            const double g = n.grad[ch] * inv;
            for (int i = 0; i < hw; ++i) p.grad[static_cast<size_t>(ch) * hw + i] += g;
        }
    });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
    const int in = static_cast<int>(x.size());
    if (weight.size() % in != 0) throw ShapeError("linear: weight/input size mismatch");
    const int out_n = static_cast<int>(weight.size()) / in;
    if (bias.size() != out_n) throw ShapeError("linear: bias size mismatch");
    std::vector<double> out(out_n);
    const double* wv = weight.values().data();
    const double* xv = x.values().data();
    for (int o = 0; o < out_n; ++o) {
        double s = bias.values()[o];
        for (int i = 0; i < in; ++i) s += wv[static_cast<size_t>(o) * in + i] * xv[i];
        out[o] = s;
    }
    return detail::make_op({out_n}, std::move(out), {x, weight, bias}, [in, out_n](detail::Node& n) {
        auto& px = *n.parents[0];
        auto& pw = *n.parents[1];
        auto& pb = *n.parents[2];
        px.ensure_grad();
        pw.ensure_grad();
        pb.ensure_grad();
        for (int o = 0; o < out_n; ++o) {
            const double g = n.grad[o];
            pb.grad[o] += g;
            for (int i = 0; i < in; ++i) {
                pw.grad[static_cast<size_t>(o) * in + i] += g * px.values[i];
                px.grad[i] += g * pw.values[static_cast<size_t>(o) * in + i];
            }
        }
    });
}

Tensor channel_affine_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                           const std::vector<double>& mean, const std::vector<double>& inv_std) {
    check_chw(x, "channel_affine_norm");
    const int c = x.shape()[0];
    const int hw = x.shape()[1] * x.shape()[2];
    if (gamma.size() != c || beta.size() != c || static_cast<int>(mean.size()) != c || static_cast<int>(inv_std.size()) != c)
        throw ShapeError("channel_affine_norm: per-channel parameter size mismatch");
    std::vector<double> out(x.size());
    const double* xv = x.values().data();
    for (int ch = 0; ch < c; ++ch) {
        const double g = gamma.values()[ch], b = beta.values()[ch], m = mean[ch], is = inv_std[ch];
        for (int i = 0; i < hw; ++i) {
            const size_t idx = static_cast<size_t>(ch) * hw + i;
            out[idx] = (xv[idx] - m) * is * g + b;
        }
    }
    std::vector<double> mean_copy = mean, is_copy = inv_std;
    return detail::make_op(x.shape(), std::move(out), {x, gamma, beta},
                           [c, hw, mean_copy, is_copy](detail::Node& n) {
                               auto& px = *n.parents[0];
                               auto& pg = *n.parents[1];
                               auto& pb = *n.parents[2];
                               px.ensure_grad();
                               pg.ensure_grad();
                               pb.ensure_grad();
                               for (int ch = 0; ch < c; ++ch) {
                                   const double g = pg.values[ch], m = mean_copy[ch], is = is_copy[ch];
                                   double dg = 0.0, db = 0.0;
                                   for (int i = 0; i < hw; ++i) {
                                       const size_t idx = static_cast<size_t>(ch) * hw + i;
                                       const double gy = n.grad[idx];
                                       px.grad[idx] += gy * is * g;
                                       dg += gy * (px.values[idx] - m) * is;
                                       db += gy;
                                   }
                                   pg.grad[ch] += dg;
                                   pb.grad[ch] += db;
                               }
                           });
}

// --- parameter bookkeeping ---

Tensor ParamStore::create(const std::string& name, const Shape& shape, std::vector<double> init) {
    Tensor t = Tensor::from(shape, std::move(init), /*requires_grad=*/true);
    params_.push_back({name, t});
    return t;
}

Tensor ParamStore::create_buffer(const std::string& name, const Shape& shape, std::vector<double> init) {
    Tensor t = Tensor::from(shape, std::move(init), /*requires_grad=*/false);
    buffers_.push_back({name, t});
    return t;
}

int64_t ParamStore::param_count() const {
    int64_t n = 0;
    for (const auto& p : params_) n += p.tensor.size();
    return n;
}

std::vector<double> he_init(int64_t n, int fan_in, Rng& rng) {
    const double std = std::sqrt(2.0 / fan_in);
    std::vector<double> out(static_cast<size_t>(n));
    for (double& v : out) v = rng.normal() * std;
    return out;
}

// --- layers ---

Conv2dLayer::Conv2dLayer(ParamStore& store, const std::string& name, int in_c, int out_c, int kernel, Rng& rng)
    : kernel_(kernel), out_c_(out_c) {
    w_ = store.create(name + ".w", {out_c, in_c, kernel, kernel},
                      he_init(static_cast<int64_t>(out_c) * in_c * kernel * kernel, in_c * kernel * kernel, rng));
    b_ = store.create(name + ".b", {out_c}, std::vector<double>(out_c, 0.0));
}

Tensor Conv2dLayer::forward(const Tensor& x) const { return conv2d(x, w_, b_, kernel_); }

SeparableConv::SeparableConv(ParamStore& store, const std::string& name, int in_c, int out_c, Rng& rng) {
    dw_ = store.create(name + ".dw", {in_c, 3, 3}, he_init(static_cast<int64_t>(in_c) * 9, 9, rng));
    pw_ = store.create(name + ".pw", {out_c, in_c, 1, 1}, he_init(static_cast<int64_t>(out_c) * in_c, in_c, rng));
    b_ = store.create(name + ".b", {out_c}, std::vector<double>(out_c, 0.0));
}

Tensor SeparableConv::forward(const Tensor& x) const {
    return conv2d(depthwise_conv2d(x, dw_, 3), pw_, b_, 1);
}

ChannelNorm::ChannelNorm(ParamStore& store, const std::string& name, int channels) {
    gamma_ = store.create(name + ".g", {channels}, std::vector<double>(channels, 1.0));
    beta_ = store.create(name + ".b", {channels}, std::vector<double>(channels, 0.0));
    run_mean_ = store.create_buffer(name + ".rm", {channels}, std::vector<double>(channels, 0.0));
    run_var_ = store.create_buffer(name + ".rv", {channels}, std::vector<double>(channels, 1.0));
}

Tensor ChannelNorm::forward(const Tensor& x, bool training) {
    const int c = x.shape()[0];
    const int hw = x.shape()[1] * x.shape()[2];
    auto rm = run_mean_.raw_values();
    auto rv = run_var_.raw_values();
    std::vector<double> mean(rm.begin(), rm.end());
    std::vector<double> inv_std(c);
    for (int ch = 0; ch < c; ++ch) inv_std[ch] = 1.0 / std::sqrt(rv[ch] + eps_);
    Tensor y = channel_affine_norm(x, gamma_, beta_, mean, inv_std);
    if (training) {
        // EMA update from this sample's statistics, outside the graph.
        const double* xv = x.values().data();
        for (int ch = 0; ch < c; ++ch) {
            double m = 0.0, v = 0.0;
            for (int i = 0; i < hw; ++i) m += xv[static_cast<size_t>(ch) * hw + i];
            m /= hw;
            for (int i = 0; i < hw; ++i) {
                const double d = xv[static_cast<size_t>(ch) * hw + i] - m;
                v += d * d;
            }
            v /= hw;
            rm[ch] = (1.0 - momentum_) * rm[ch] + momentum_ * m;
            rv[ch] = (1.0 - momentum_) * rv[ch] + momentum_ * v;
        }
    }
    return y;
}

LinearLayer::LinearLayer(ParamStore& store, const std::string& name, int in, int out, Rng& rng) {
    w_ = store.create(name + ".w", {out, in}, he_init(static_cast<int64_t>(out) * in, in, rng));
    b_ = store.create(name + ".b", {out}, std::vector<double>(out, 0.0));
}

Tensor LinearLayer::forward(const Tensor& x) const { return linear(x, w_, b_); }

// --- optimization ---

Adam::Adam(std::vector<NamedParam>& params, double lr_, double beta1, double beta2, double eps)
    : lr(lr_), params_(&params), beta1_(beta1), beta2_(beta2), eps_(eps) {
    m_.resize(params.size());
    v_.resize(params.size());
    for (size_t i = 0; i < params.size(); ++i) {
        m_[i].assign(static_cast<size_t>(params[i].tensor.size()), 0.0);
        v_[i].assign(static_cast<size_t>(params[i].tensor.size()), 0.0);
    }
}

void Adam::step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, t_);
    const double bc2 = 1.0 - std::pow(beta2_, t_);
    for (size_t i = 0; i < params_->size(); ++i) {
        Tensor& p = (*params_)[i].tensor;
        auto g = p.grad();
        auto vals = p.raw_values();
        for (size_t j = 0; j < vals.size(); ++j) {
            m_[i][j] = beta1_ * m_[i][j] + (1.0 - beta1_) * g[j];
            v_[i][j] = beta2_ * v_[i][j] + (1.0 - beta2_) * g[j] * g[j];
            vals[j] -= lr * (m_[i][j] / bc1) / (std::sqrt(v_[i][j] / bc2) + eps_);
        }
    }
}

void Adam::zero_grad() {
    for (auto& p : *params_) p.tensor.zero_grad();
}

}  // namespace forgeloc::nn
