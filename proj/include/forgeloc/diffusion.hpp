#pragma once

#include <functional>
#include <memory>

#include "forgeloc/image.hpp"
#include "forgeloc/nn.hpp"
#include "forgeloc/rng.hpp"

namespace forgeloc {

// Per-step noise parameters shared by sampling, forward diffusion and the
// mask-guided schedule. Steps are 1-based; alpha_bar[0] == 1 so that step 0
// is the clean image.
struct DiffusionSchedule {
    int T = 0;
    std::vector<double> betas;          // betas[t-1] for step t
    std::vector<double> alphas;         // 1 - beta
    std::vector<double> alpha_bar;      // cumulative products, index 0..T
    std::vector<double> posterior_var;  // posterior_var[t-1] for step t

    static DiffusionSchedule linear(int T, double beta_start = 1e-4, double beta_end = 0.02);
    void validate() const;
};

struct DiffusionState {
    Image x;  // raster in [-1,1] diffusion value space (or latent space)
    int t = 0;
};

struct NoisePredictorOutput {
    Image mean;
    Image variance;  // same shape as mean, entries >= 0
};

// Callable producing the reverse-step Gaussian parameters for a state.
using MeanVarPredictor = std::function<NoisePredictorOutput(const Image& x_t, int t)>;

// x_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) z. Consumes one normal
// draw per entry when t >= 1 and none at t = 0 (returns x0 unchanged).
DiffusionState forward_diffuse(const Image& x0, int t, const DiffusionSchedule& schedule, Rng& rng);

// Samples x_{t-1} ~ N(mean, variance); always consumes one normal draw per
// entry, so a zero-variance predictor yields the mean exactly.
DiffusionState ddpm_reverse_step(const DiffusionState& state, const MeanVarPredictor& predictor,
                                 const DiffusionSchedule& schedule, Rng& rng);

// Full reverse trajectory from x_T ~ N(0, I); result clipped to [-1,1].
Image ddpm_sample(const MeanVarPredictor& predictor, const DiffusionSchedule& schedule, int c, int h, int w,
                  Rng& rng);

// One mask-guided step: reverse-sample x_hat, forward-diffuse the original to
// step t-1, then compose m*x_hat + (1-m)*known per entry. Draw order per
// step: reverse noise first, then forward noise (skipped when t-1 == 0).
DiffusionState repaint_step(const DiffusionState& state, const Image& x0, const BinaryMask& mask,
                            const MeanVarPredictor& predictor, const DiffusionSchedule& schedule, Rng& rng);

// Mask-guided trajectory in diffusion value space; x0 in [-1,1].
// resample > 1 re-noises and redoes each step that many times.
Image repaint_reverse(const Image& x0, const BinaryMask& mask, const MeanVarPredictor& predictor,
                      const DiffusionSchedule& schedule, Rng& rng, int resample = 1);

// Pixel-space inpainting: converts [0,1] -> [-1,1], runs the schedule, and
// converts back. Unmasked pixels come back as the original values.
Image repaint_inpaint(const Image& x0, const BinaryMask& mask, const MeanVarPredictor& predictor,
                      const DiffusionSchedule& schedule, Rng& rng, int resample = 1);

// f x f max-pooling of the mask (a latent cell is inpainted iff any pixel in
// its footprint is).
BinaryMask downsize_mask_for_latent(const BinaryMask& mask, int f);

// Pluggable autoencoder bridging pixel and latent space. decode(encode(x))
// reconstructs x within the codec's tolerance; the identity codec (f = 1) is
// exact up to the value-space conversion.
class LatentCodec {
  public:
    virtual ~LatentCodec() = default;
    virtual Image encode(const Image& pixel) const = 0;  // [0,1] image -> latent raster
    virtual Image decode(const Image& latent) const = 0;
    virtual int factor() const = 0;
};

class IdentityCodec : public LatentCodec {
  public:
    Image encode(const Image& pixel) const override { return to_diffusion_space(pixel); }
    Image decode(const Image& latent) const override { return from_diffusion_space(latent); }
    int factor() const override { return 1; }
};

struct CodecConfig {
    int in_channels = 3;
    int width = 16;
    int latent_channels = 4;
    std::string to_string() const;
    static CodecConfig from_string(const std::string& s);
};

// Small trainable conv autoencoder with one 2x halving; latents bounded to
// (-1,1) by tanh so latent diffusion shares the pixel value space.
class ConvAutoencoder : public LatentCodec {
  public:
    ConvAutoencoder(const CodecConfig& cfg, uint64_t seed);

    Tensor encode_t(const Tensor& x) const;
    Tensor decode_t(const Tensor& z) const;
    Image encode(const Image& pixel) const override;
    Image decode(const Image& latent) const override;
    int factor() const override { return 2; }

    nn::ParamStore& store() { return store_; }
    const CodecConfig& config() const { return cfg_; }
    std::string config_string() const { return cfg_.to_string(); }

  private:
    CodecConfig cfg_;
    nn::ParamStore store_;
    nn::Conv2dLayer enc1_, enc2_, dec1_, dec2_, dec3_;
};

// Runs the mask-guided schedule in the codec's latent space with the
// downsized mask, then decodes the inpainted latent.
Image repaint_ldm_inpaint(const Image& x0, const BinaryMask& mask, const LatentCodec& codec,
                          const MeanVarPredictor& latent_predictor, const DiffusionSchedule& schedule, Rng& rng,
                          int resample = 1);

// --- trainable noise predictor ---

struct PredictorConfig {
    int channels = 3;
    int width = 12;
    int T = 50;
    std::string to_string() const;
    static PredictorConfig from_string(const std::string& s);
};

// Predicts the noise added at step t from (x_t, t/T); the reverse-step mean
// follows by the usual reparameterization and the variance is the schedule's
// posterior variance.
class NoisePredictorNet {
  public:
    NoisePredictorNet(const PredictorConfig& cfg, uint64_t seed);

    Tensor forward_t(const Tensor& x_t, int t) const;
    Image predict(const Image& x_t, int t) const;

    MeanVarPredictor as_mean_var(const DiffusionSchedule& schedule) const;

    nn::ParamStore& store() { return store_; }
    const PredictorConfig& config() const { return cfg_; }
    std::string config_string() const { return cfg_.to_string(); }

  private:
    PredictorConfig cfg_;
    nn::ParamStore store_;
    nn::Conv2dLayer c1_, c2_, c3_;
};

// Standard denoising objective: mean squared error between predicted and
// drawn noise at uniformly random steps.
void train_noise_predictor(NoisePredictorNet& net, const std::vector<Image>& data, const DiffusionSchedule& schedule,
                           int steps, int batch, double lr, Rng& rng);

void train_codec(ConvAutoencoder& codec, const std::vector<Image>& pixel_images, int steps, int batch, double lr,
                 Rng& rng);

}  // namespace forgeloc
