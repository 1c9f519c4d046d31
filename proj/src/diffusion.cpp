#include "forgeloc/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace forgeloc {

DiffusionSchedule DiffusionSchedule::linear(int T, double beta_start, double beta_end) {
    if (T < 1) throw ConfigError("diffusion schedule: T must be >= 1");
    DiffusionSchedule s;
    s.T = T;
    s.betas.resize(T);
    for (int i = 0; i < T; ++i)
        s.betas[i] = T == 1 ? beta_start : beta_start + (beta_end - beta_start) * i / (T - 1);
    s.alphas.resize(T);
    s.alpha_bar.resize(T + 1);
    s.alpha_bar[0] = 1.0;
    for (int i = 0; i < T; ++i) {
        s.alphas[i] = 1.0 - s.betas[i];
        s.alpha_bar[i + 1] = s.alpha_bar[i] * s.alphas[i];
    }
    s.posterior_var.resize(T);
    for (int t = 1; t <= T; ++t)
        s.posterior_var[t - 1] = (1.0 - s.alpha_bar[t - 1]) / (1.0 - s.alpha_bar[t]) * s.betas[t - 1];
    s.validate();
    return s;
}

void DiffusionSchedule::validate() const {
    if (T < 1 || static_cast<int>(betas.size()) != T) throw ConfigError("diffusion schedule: bad length");
    for (double b : betas)
        if (!(b > 0.0 && b < 1.0)) throw ConfigError("diffusion schedule: betas must lie in (0,1)");
    for (int t = 1; t <= T; ++t)
        if (!(alpha_bar[t] < alpha_bar[t - 1]))
            throw ConfigError("diffusion schedule: cumulative alpha product must strictly decrease");
}

namespace {

void check_step(int t, int lo, int T, const char* op) {
    if (t < lo || t > T)
        throw DomainError(std::string(op) + ": step " + std::to_string(t) + " outside " + std::to_string(lo) + ".." +
                          std::to_string(T));
}

void check_mask_shape(const Image& x, const BinaryMask& mask, const char* op) {
    if (mask.h != x.h || mask.w != x.w)
        throw ShapeError(std::string(op) + ": mask " + std::to_string(mask.h) + "x" + std::to_string(mask.w) +
                         " does not match raster " + std::to_string(x.h) + "x" + std::to_string(x.w));
}

}  // namespace

DiffusionState forward_diffuse(const Image& x0, int t, const DiffusionSchedule& schedule, Rng& rng) {
    check_step(t, 0, schedule.T, "forward_diffuse");
    if (t == 0) return {x0, 0};
    const double a = std::sqrt(schedule.alpha_bar[t]);
    const double b = std::sqrt(1.0 - schedule.alpha_bar[t]);
    Image out = x0;
    for (double& v : out.data) v = a * v + b * rng.normal();
    return {std::move(out), t};
}

DiffusionState ddpm_reverse_step(const DiffusionState& state, const MeanVarPredictor& predictor,
                                 const DiffusionSchedule& schedule, Rng& rng) {
    check_step(state.t, 1, schedule.T, "ddpm_reverse_step");
    NoisePredictorOutput out = predictor(state.x, state.t);
    if (out.mean.data.size() != state.x.data.size() || out.variance.data.size() != state.x.data.size())
        throw ShapeError("ddpm_reverse_step: predictor output shape mismatch");
    Image next = std::move(out.mean);
    for (size_t i = 0; i < next.data.size(); ++i) {
        const double var = out.variance.data[i];
        if (var < 0.0) throw DomainError("ddpm_reverse_step: negative predicted variance");
        next.data[i] += std::sqrt(var) * rng.normal();
    }
    return {std::move(next), state.t - 1};
}

Image ddpm_sample(const MeanVarPredictor& predictor, const DiffusionSchedule& schedule, int c, int h, int w,
                  Rng& rng) {
    if (c < 1 || h < 1 || w < 1) throw DomainError("ddpm_sample: invalid shape");
    DiffusionState state{Image(c, h, w), schedule.T};
    for (double& v : state.x.data) v = rng.normal();
    while (state.t >= 1) state = ddpm_reverse_step(state, predictor, schedule, rng);
    for (double& v : state.x.data) v = std::clamp(v, -1.0, 1.0);
    return std::move(state.x);
}

DiffusionState repaint_step(const DiffusionState& state, const Image& x0, const BinaryMask& mask,
                            const MeanVarPredictor& predictor, const DiffusionSchedule& schedule, Rng& rng) {
    check_step(state.t, 1, schedule.T, "repaint_step");
    check_mask_shape(x0, mask, "repaint_step");
    if (x0.c != state.x.c || x0.h != state.x.h || x0.w != state.x.w)
        throw ShapeError("repaint_step: x0 does not match state raster");

    DiffusionState sampled = ddpm_reverse_step(state, predictor, schedule, rng);
    DiffusionState known = forward_diffuse(x0, state.t - 1, schedule, rng);

    const int hw = x0.h * x0.w;
    for (int ch = 0; ch < x0.c; ++ch)
        for (int i = 0; i < hw; ++i) {
            const size_t idx = static_cast<size_t>(ch) * hw + i;
            if (!mask.values[i]) sampled.x.data[idx] = known.x.data[idx];
        }
    return sampled;
}

Image repaint_reverse(const Image& x0, const BinaryMask& mask, const MeanVarPredictor& predictor,
                      const DiffusionSchedule& schedule, Rng& rng, int resample) {
    check_mask_shape(x0, mask, "repaint_reverse");
    if (resample < 1) throw DomainError("repaint_reverse: resample count must be >= 1");
    DiffusionState state{Image(x0.c, x0.h, x0.w), schedule.T};
    for (double& v : state.x.data) v = rng.normal();
    for (int t = schedule.T; t >= 1; --t) {
        for (int r = 0; r < resample; ++r) {
            DiffusionState at_t = state;
            at_t.t = t;
            state = repaint_step(at_t, x0, mask, predictor, schedule, rng);
            if (r + 1 < resample) {
                // One-step forward jump so the composed state can be re-denoised.
                const double a = std::sqrt(schedule.alphas[t - 1]);
                const double b = std::sqrt(schedule.betas[t - 1]);
                for (double& v : state.x.data) v = a * v + b * rng.normal();
            }
        }
    }
    for (double& v : state.x.data) v = std::clamp(v, -1.0, 1.0);
    return std::move(state.x);
}

Image repaint_inpaint(const Image& x0, const BinaryMask& mask, const MeanVarPredictor& predictor,
                      const DiffusionSchedule& schedule, Rng& rng, int resample) {
    Image z0 = to_diffusion_space(x0);
    Image z = repaint_reverse(z0, mask, predictor, schedule, rng, resample);
    return from_diffusion_space(z);
}

BinaryMask downsize_mask_for_latent(const BinaryMask& mask, int f) {
    if (f < 1) throw DomainError("downsize_mask_for_latent: factor must be >= 1");
    if (mask.h % f != 0 || mask.w % f != 0)
        throw ShapeError("downsize_mask_for_latent: mask sides " + std::to_string(mask.h) + "x" +
                         std::to_string(mask.w) + " not divisible by " + std::to_string(f));
    BinaryMask out(mask.h / f, mask.w / f);
    out.attribute_tag = mask.attribute_tag;
    for (int y = 0; y < mask.h; ++y)
        for (int x = 0; x < mask.w; ++x)
            if (mask.at(y, x)) out.at(y / f, x / f) = 1;
    return out;
}

Image repaint_ldm_inpaint(const Image& x0, const BinaryMask& mask, const LatentCodec& codec,
                          const MeanVarPredictor& latent_predictor, const DiffusionSchedule& schedule, Rng& rng,
                          int resample) {
    check_mask_shape(x0, mask, "repaint_ldm_inpaint");
    Image z0 = codec.encode(x0);
    BinaryMask latent_mask = downsize_mask_for_latent(mask, codec.factor());
    Image z = repaint_reverse(z0, latent_mask, latent_predictor, schedule, rng, resample);
    return codec.decode(z);
}

// --- codec ---

std::string CodecConfig::to_string() const {
    std::ostringstream out;
    out << "in=" << in_channels << ";width=" << width << ";latent=" << latent_channels;
    return out.str();
}

CodecConfig CodecConfig::from_string(const std::string& s) {
    CodecConfig cfg;
    std::istringstream in(s);
    std::string field;
    while (std::getline(in, field, ';')) {
        const auto eq = field.find('=');
        if (eq == std::string::npos) throw ConfigError("bad codec config field: " + field);
        const std::string key = field.substr(0, eq), value = field.substr(eq + 1);
        if (key == "in") cfg.in_channels = std::stoi(value);
        else if (key == "width") cfg.width = std::stoi(value);
        else if (key == "latent") cfg.latent_channels = std::stoi(value);
        else throw ConfigError("unknown codec config key: " + key);
    }
    return cfg;
}

ConvAutoencoder::ConvAutoencoder(const CodecConfig& cfg, uint64_t seed) : cfg_(cfg) {
    Rng rng(Rng::derive(seed, {0x636f646563ull}));
    enc1_ = nn::Conv2dLayer(store_, "enc1", cfg.in_channels, cfg.width, 3, rng);
    enc2_ = nn::Conv2dLayer(store_, "enc2", cfg.width, cfg.latent_channels, 3, rng);
    dec1_ = nn::Conv2dLayer(store_, "dec1", cfg.latent_channels, cfg.width, 3, rng);
    dec2_ = nn::Conv2dLayer(store_, "dec2", cfg.width, cfg.width, 3, rng);
    dec3_ = nn::Conv2dLayer(store_, "dec3", cfg.width, cfg.in_channels, 3, rng);
}

Tensor ConvAutoencoder::encode_t(const Tensor& x) const {
    Tensor h = relu(enc1_.forward(x));
    return tanh_t(enc2_.forward(nn::avg_pool2(h)));
}

Tensor ConvAutoencoder::decode_t(const Tensor& z) const {
    Tensor h = relu(dec1_.forward(z));
    h = relu(dec2_.forward(nn::upsample_nearest2(h)));
    return sigmoid(dec3_.forward(h));
}

Image ConvAutoencoder::encode(const Image& pixel) const {
    NoGradGuard ng;
    return tensor_to_image(encode_t(image_to_tensor(pixel)));
}

Image ConvAutoencoder::decode(const Image& latent) const {
    NoGradGuard ng;
    return tensor_to_image(decode_t(image_to_tensor(latent)));
}

// --- noise predictor ---

std::string PredictorConfig::to_string() const {
    std::ostringstream out;
    out << "channels=" << channels << ";width=" << width << ";T=" << T;
    return out.str();
}

PredictorConfig PredictorConfig::from_string(const std::string& s) {
    PredictorConfig cfg;
    std::istringstream in(s);
    std::string field;
    while (std::getline(in, field, ';')) {
        const auto eq = field.find('=');
        if (eq == std::string::npos) throw ConfigError("bad predictor config field: " + field);
        const std::string key = field.substr(0, eq), value = field.substr(eq + 1);
        if (key == "channels") cfg.channels = std::stoi(value);
        else if (key == "width") cfg.width = std::stoi(value);
        else if (key == "T") cfg.T = std::stoi(value);
        else throw ConfigError("unknown predictor config key: " + key);
    }
    return cfg;
}

NoisePredictorNet::NoisePredictorNet(const PredictorConfig& cfg, uint64_t seed) : cfg_(cfg) {
    Rng rng(Rng::derive(seed, {0x70726564ull}));
    c1_ = nn::Conv2dLayer(store_, "c1", cfg.channels + 1, cfg.width, 3, rng);
    c2_ = nn::Conv2dLayer(store_, "c2", cfg.width, cfg.width, 3, rng);
    c3_ = nn::Conv2dLayer(store_, "c3", cfg.width, cfg.channels, 3, rng);
}

Tensor NoisePredictorNet::forward_t(const Tensor& x_t, int t) const {
    Tensor t_channel = Tensor::full({1, x_t.shape()[1], x_t.shape()[2]}, static_cast<double>(t) / cfg_.T);
    Tensor h = relu(c1_.forward(concat_channels(x_t, t_channel)));
    h = relu(c2_.forward(h));
    return c3_.forward(h);
}

Image NoisePredictorNet::predict(const Image& x_t, int t) const {
    NoGradGuard ng;
    return tensor_to_image(forward_t(image_to_tensor(x_t), t));
}

MeanVarPredictor NoisePredictorNet::as_mean_var(const DiffusionSchedule& schedule) const {
    return [this, schedule](const Image& x_t, int t) {
        Image eps = predict(x_t, t);
        const double coeff = schedule.betas[t - 1] / std::sqrt(1.0 - schedule.alpha_bar[t]);
        const double inv_sqrt_alpha = 1.0 / std::sqrt(schedule.alphas[t - 1]);
        NoisePredictorOutput out;
        out.mean = x_t;
        for (size_t i = 0; i < out.mean.data.size(); ++i)
            out.mean.data[i] = inv_sqrt_alpha * (x_t.data[i] - coeff * eps.data[i]);
        out.variance = Image(x_t.c, x_t.h, x_t.w, schedule.posterior_var[t - 1]);
        return out;
    };
}

void train_noise_predictor(NoisePredictorNet& net, const std::vector<Image>& data, const DiffusionSchedule& schedule,
                           int steps, int batch, double lr, Rng& rng) {
    if (data.empty()) throw DataError("train_noise_predictor: empty dataset");
    nn::Adam opt(net.store().params(), lr);
    for (int step = 0; step < steps; ++step) {
        opt.zero_grad();
        for (int b = 0; b < batch; ++b) {
            const Image& x0 = data[rng.uniform_int(static_cast<int>(data.size()))];
            const int t = 1 + rng.uniform_int(schedule.T);
            Image noise(x0.c, x0.h, x0.w);
            rng.fill_normal(noise.data);
            Image x_t = x0;
            const double a = std::sqrt(schedule.alpha_bar[t]);
            const double s = std::sqrt(1.0 - schedule.alpha_bar[t]);
            for (size_t i = 0; i < x_t.data.size(); ++i) x_t.data[i] = a * x_t.data[i] + s * noise.data[i];

            Tensor pred = net.forward_t(image_to_tensor(x_t), t);
            Tensor diff = sub(pred, image_to_tensor(noise));
            Tensor loss = mul_scalar(mean(mul(diff, diff)), 1.0 / batch);
            loss.backward();
        }
        opt.step();
    }
}

void train_codec(ConvAutoencoder& codec, const std::vector<Image>& pixel_images, int steps, int batch, double lr,
                 Rng& rng) {
    if (pixel_images.empty()) throw DataError("train_codec: empty dataset");
    nn::Adam opt(codec.store().params(), lr);
    for (int step = 0; step < steps; ++step) {
        opt.zero_grad();
        for (int b = 0; b < batch; ++b) {
            const Image& img = pixel_images[rng.uniform_int(static_cast<int>(pixel_images.size()))];
            Tensor x = image_to_tensor(img);
            Tensor recon = codec.decode_t(codec.encode_t(x));
            Tensor diff = sub(recon, x);
            Tensor loss = mul_scalar(mean(mul(diff, diff)), 1.0 / batch);
            loss.backward();
        }
        opt.step();
    }
}

}  // namespace forgeloc
