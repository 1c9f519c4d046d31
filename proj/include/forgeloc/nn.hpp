#pragma once

#include <string>
#include <vector>

#include "forgeloc/rng.hpp"
#include "forgeloc/tensor.hpp"

namespace forgeloc::nn {

// --- raw ops (all CHW, stride 1, odd kernels, zero padding to keep size) ---

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, int kernel);
Tensor depthwise_conv2d(const Tensor& x, const Tensor& weight, int kernel);
Tensor avg_pool2(const Tensor& x);
Tensor upsample_nearest2(const Tensor& x);
Tensor global_avg_pool(const Tensor& x);  // CxHxW -> C
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);
// Per-channel affine normalization with externally managed statistics
// (treated as constants by autodiff).
Tensor channel_affine_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                           const std::vector<double>& mean, const std::vector<double>& inv_std);

// --- parameter bookkeeping ---

struct NamedParam {
    std::string name;
    Tensor tensor;
};

class ParamStore {
  public:
    Tensor create(const std::string& name, const Shape& shape, std::vector<double> init);
    // Non-trainable state (e.g. normalization statistics); checkpointed but
    // ignored by optimizers.
    Tensor create_buffer(const std::string& name, const Shape& shape, std::vector<double> init);
    const std::vector<NamedParam>& params() const { return params_; }
    std::vector<NamedParam>& params() { return params_; }
    const std::vector<NamedParam>& buffers() const { return buffers_; }
    std::vector<NamedParam>& buffers() { return buffers_; }
    int64_t param_count() const;

  private:
    std::vector<NamedParam> params_;
    std::vector<NamedParam> buffers_;
};

std::vector<double> he_init(int64_t n, int fan_in, Rng& rng);

// --- layers ---

class Conv2dLayer {
  public:
    Conv2dLayer() = default;
    Conv2dLayer(ParamStore& store, const std::string& name, int in_c, int out_c, int kernel, Rng& rng);
    Tensor forward(const Tensor& x) const;
    int out_channels() const { return out_c_; }

  private:
    Tensor w_, b_;
    int kernel_ = 1, out_c_ = 0;
};

// Depthwise 3x3 followed by a pointwise 1x1 projection.
class SeparableConv {
  public:
    SeparableConv() = default;
    SeparableConv(ParamStore& store, const std::string& name, int in_c, int out_c, Rng& rng);
    Tensor forward(const Tensor& x) const;

  private:
    Tensor dw_, pw_, b_;
};

// Per-channel normalization from running statistics only; never couples
// samples in a batch. Statistics update by EMA while training and stay
// frozen at evaluation.
class ChannelNorm {
  public:
    ChannelNorm() = default;
    ChannelNorm(ParamStore& store, const std::string& name, int channels);
    Tensor forward(const Tensor& x, bool training);

  private:
    Tensor gamma_, beta_;
    Tensor run_mean_, run_var_;  // buffers
    double momentum_ = 0.1;
    double eps_ = 1e-5;
};

class LinearLayer {
  public:
    LinearLayer() = default;
    LinearLayer(ParamStore& store, const std::string& name, int in, int out, Rng& rng);
    Tensor forward(const Tensor& x) const;

  private:
    Tensor w_, b_;
};

// --- optimization ---

class Adam {
  public:
    Adam(std::vector<NamedParam>& params, double lr, double beta1 = 0.9, double beta2 = 0.999,
         double eps = 1e-8);
    void step();
    void zero_grad();
    double lr;

  private:
    std::vector<NamedParam>* params_;
    std::vector<std::vector<double>> m_, v_;
    double beta1_, beta2_, eps_;
    long t_ = 0;
};

}  // namespace forgeloc::nn
