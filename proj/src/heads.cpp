#include "forgeloc/heads.hpp"

#include <algorithm>
#include <cmath>

#include "forgeloc/checkpoint.hpp"

namespace forgeloc {

namespace {

constexpr double kCeEps = 1e-7;

// Derives the truncated trunk configuration used by Patches and Fcn.
BackboneConfig truncate_config(const BackboneConfig& base, int upto) {
    BackboneConfig cfg = base;
    cfg.preset = "custom";
    cfg.num_blocks = upto;
    cfg.channel_widths.assign(base.channel_widths.begin(), base.channel_widths.begin() + upto);
    cfg.downsample_blocks.clear();
    for (int d : base.downsample_blocks)
        if (d <= upto) cfg.downsample_blocks.insert(d);
    cfg.with_top = false;
    cfg.patches_truncation_override = std::min(base.patches_truncation(), upto);
    cfg.gradcam_truncation_override = std::min(base.gradcam_truncation(), upto);
    cfg.attention_block_override = std::min(base.attention_block(), upto);
    return cfg;
}

// Scalar binary cross-entropy against a hard label, clamped.
Tensor label_ce(int y, const Tensor& p) {
    Tensor pc = clamp(p, kCeEps, 1.0 - kCeEps);
    if (y == 1) return neg(log_e(pc));
    return neg(log_e(add_scalar(neg(pc), 1.0)));
}

BackboneConfig with_top_config(const BackboneConfig& base) {
    BackboneConfig cfg = base;
    cfg.with_top = true;
    return cfg;
}

BackboneConfig make_patches_trunk(const BackboneConfig& base) {
    base.validate();
    const int trunc = base.patches_truncation();
    if (trunc >= base.num_blocks)
        throw ConfigError("patches head requires a truncated backbone (truncation " + std::to_string(trunc) +
                          " does not truncate " + std::to_string(base.num_blocks) + " blocks)");
    return truncate_config(base, trunc);
}

BackboneConfig make_fcn_trunk(const BackboneConfig& base) {
    base.validate();
    return truncate_config(base, base.gradcam_truncation());
}

}  // namespace

std::string head_kind_name(HeadKind k) {
    switch (k) {
        case HeadKind::gradcam: return "gradcam";
        case HeadKind::patches: return "patches";
        case HeadKind::attention: return "attention";
        case HeadKind::fcn: return "fcn";
    }
    return "?";
}

HeadKind head_kind_from_name(const std::string& name) {
    if (name == "gradcam") return HeadKind::gradcam;
    if (name == "patches") return HeadKind::patches;
    if (name == "attention") return HeadKind::attention;
    if (name == "fcn") return HeadKind::fcn;
    throw ConfigError("unknown head kind: " + name);
}

// --- GradCam ---

GradCamModel::GradCamModel(const BackboneConfig& base, uint64_t seed)
    : base_(base), net_(with_top_config(base), seed) {}

LocalizationMap GradCamModel::localize(const Image& image) {
    return gradcam_map(net_, image, base_.gradcam_truncation());
}

double GradCamModel::score(const Image& image) {
    NoGradGuard ng;
    return 1.0 / (1.0 + std::exp(-net_.forward_logit(image).item()));
}

LocalizationMap gradcam_map(Backbone& model, const Image& image, int target_block) {
    if (!model.config().with_top) throw ConfigError("gradcam_map: model has no classification top");
    if (target_block < 1 || target_block > model.config().num_blocks)
        throw ConfigError("gradcam_map: target block " + std::to_string(target_block) + " out of range");

    Tensor x = model.input_tensor(image);
    Tensor act = model.features_range(x, 0, target_block);
    Tensor logit = model.logit_from(act, target_block);
    logit.backward();

    const int c = act.shape()[0], h = act.shape()[1], w = act.shape()[2];
    const int hw = h * w;
    auto g = act.grad();
    auto a = act.values();

    LocalizationMap map(h, w, HeadKind::gradcam);
    for (int ch = 0; ch < c; ++ch) {
        double weight = 0.0;
        for (int i = 0; i < hw; ++i) weight += g[static_cast<size_t>(ch) * hw + i];
        weight /= hw;
        for (int i = 0; i < hw; ++i) map.values[i] += weight * a[static_cast<size_t>(ch) * hw + i];
    }
    double max_v = 0.0;
    for (double& v : map.values) {
        v = std::max(0.0, v);
        max_v = std::max(max_v, v);
    }
    if (max_v > 0.0)
        for (double& v : map.values) v /= max_v;

    // The backward pass above deposits gradients on the parameters; wipe them
    // so explanation passes never leak into an optimizer step.
    for (auto& p : model.store().params()) p.tensor.zero_grad();
    return map;
}

// --- Patches ---

PatchesModel::PatchesModel(const BackboneConfig& base, uint64_t seed)
    : base_(base), trunk_(make_patches_trunk(base), seed) {
    Rng rng(Rng::derive(seed, {0x70617463686573ull}));
    proj_ = nn::Conv2dLayer(trunk_.store(), "patch_proj", base_.width_at(base_.patches_truncation()), 2, 1, rng);
}

Tensor PatchesModel::patch_fake_probs(const Image& image) {
    Tensor x = trunk_.input_tensor(image);
    Tensor feat = trunk_.features_range(x, 0, trunk_.config().num_blocks);
    Tensor logits = proj_.forward(feat);  // 2 x h x w
    // Two-class softmax fake probability.
    return sigmoid(sub(select_channel(logits, 1), select_channel(logits, 0)));
}

LocalizationMap PatchesModel::localize(const Image& image) {
    NoGradGuard ng;
    Tensor p = patch_fake_probs(image);
    LocalizationMap map(p.shape()[1], p.shape()[2], HeadKind::patches);
    map.values.assign(p.values().begin(), p.values().end());
    return map;
}

double PatchesModel::score(const Image& image) { return patches_aggregate(localize(image)).probability; }

DetectionScore patches_aggregate(const LocalizationMap& per_patch_probs) {
    if (per_patch_probs.values.empty()) throw ShapeError("patches_aggregate: empty map");
    double s = 0.0;
    for (double v : per_patch_probs.values) s += v;
    return DetectionScore{s / static_cast<double>(per_patch_probs.values.size())};
}

// --- Attention ---

AttentionModel::AttentionModel(const BackboneConfig& base, uint64_t seed)
    : base_(base), net_(with_top_config(base), seed) {
    Rng rng(Rng::derive(seed, {0x617474656e74696full}));
    mask_head_ = nn::Conv2dLayer(net_.store(), "mask_head", base_.width_at(base_.attention_block()), 1, 1, rng);
}

AttentionModel::Forward AttentionModel::forward(const Image& image) {
    const int attn = base_.attention_block();
    Tensor x = net_.input_tensor(image);
    Tensor trunk = net_.features_range(x, 0, attn);
    Tensor mask = sigmoid(mask_head_.forward(trunk));
    Tensor modulated = mul_bcast_channel(trunk, mask);
    Tensor y_hat = sigmoid(net_.logit_from(modulated, attn));
    return {mask, y_hat};
}

Tensor AttentionModel::score_given_mask(const Image& image, const Tensor& mask) {
    const int attn = base_.attention_block();
    Tensor x = net_.input_tensor(image);
    Tensor trunk = net_.features_range(x, 0, attn);
    Tensor modulated = mul_bcast_channel(trunk, mask);
    return sigmoid(net_.logit_from(modulated, attn));
}

LocalizationMap AttentionModel::localize(const Image& image) {
    NoGradGuard ng;
    Forward f = forward(image);
    LocalizationMap map(f.mask.shape()[1], f.mask.shape()[2], HeadKind::attention);
    map.values.assign(f.mask.values().begin(), f.mask.values().end());
    return map;
}

double AttentionModel::score(const Image& image) {
    NoGradGuard ng;
    return forward(image).y_hat.item();
}

Tensor attention_loss_t(int y, const Tensor& y_hat, const Tensor& m_hat, const AttentionLossConfig& cfg) {
    if (y != 0 && y != 1) throw DomainError("attention_loss: label must be 0 or 1");
    if (cfg.lambda < 0.0) throw DomainError("attention_loss: lambda must be nonnegative");
    Tensor loss = label_ce(y, y_hat);
    if (cfg.lambda != 0.0) loss = add(loss, mul_scalar(label_ce(y, max_all(m_hat)), cfg.lambda));
    return loss;
}

double attention_loss(int y, const DetectionScore& y_hat, const LocalizationMap& m_hat, const AttentionLossConfig& cfg) {
    NoGradGuard ng;
    Tensor yh = Tensor::scalar(y_hat.probability);
    Tensor mh = Tensor::from({1, m_hat.h, m_hat.w}, m_hat.values);
    return attention_loss_t(y, yh, mh, cfg).item();
}

// --- Fcn ---

FcnModel::FcnModel(const BackboneConfig& base, uint64_t seed)
    : base_(base), trunk_(make_fcn_trunk(base), seed) {
    Rng rng(Rng::derive(seed, {0x66636eull}));
    proj_ = nn::Conv2dLayer(trunk_.store(), "fcn_proj", base_.width_at(base_.gradcam_truncation()), 1, 1, rng);
}

Tensor FcnModel::dense_map(const Image& image) {
    Tensor x = trunk_.input_tensor(image);
    Tensor feat = trunk_.features_range(x, 0, trunk_.config().num_blocks);
    return sigmoid(proj_.forward(feat));
}

LocalizationMap FcnModel::localize(const Image& image) {
    NoGradGuard ng;
    Tensor m = dense_map(image);
    LocalizationMap map(m.shape()[1], m.shape()[2], HeadKind::fcn);
    map.values.assign(m.values().begin(), m.values().end());
    return map;
}

double FcnModel::score(const Image& image) {
    NoGradGuard ng;
    return mean(dense_map(image)).item();
}

// --- supervised loss ---

std::vector<double> downsize_mask_soft(const BinaryMask& mask, int th, int tw) {
    if (th < 1 || tw < 1 || mask.h % th != 0 || mask.w % tw != 0)
        throw ShapeError("downsize_mask_soft: mask " + std::to_string(mask.h) + "x" + std::to_string(mask.w) +
                         " not divisible by target " + std::to_string(th) + "x" + std::to_string(tw));
    const int fy = mask.h / th, fx = mask.w / tw;
    std::vector<double> out(static_cast<size_t>(th) * tw, 0.0);
    for (int y = 0; y < mask.h; ++y)
        for (int x = 0; x < mask.w; ++x)
            out[static_cast<size_t>(y / fy) * tw + x / fx] += mask.at(y, x);
    const double inv = 1.0 / (fy * fx);
    for (double& v : out) v *= inv;
    return out;
}

Tensor supervised_loss_t(const Tensor& prediction, const BinaryMask& ground_truth) {
    if (prediction.shape().size() != 3 || prediction.shape()[0] != 1)
        throw ShapeError("supervised_loss: prediction must be 1xHxW");
    const int h = prediction.shape()[1], w = prediction.shape()[2];
    Tensor target = Tensor::from({1, h, w}, downsize_mask_soft(ground_truth, h, w));
    return bce_mean(prediction, target, kCeEps);
}

double supervised_loss(const LocalizationMap& prediction, const BinaryMask& ground_truth) {
    NoGradGuard ng;
    Tensor p = Tensor::from({1, prediction.h, prediction.w}, prediction.values);
    return supervised_loss_t(p, ground_truth).item();
}

// --- checkpoint plumbing ---

void save_method_model(const std::filesystem::path& path, MethodModel& model) {
    save_checkpoint(path, model.kind(), model.config_string(), model.store());
}

std::unique_ptr<MethodModel> make_method_model(const std::string& kind, const BackboneConfig& base, uint64_t seed) {
    if (kind == "gradcam") return std::make_unique<GradCamModel>(base, seed);
    if (kind == "patches") return std::make_unique<PatchesModel>(base, seed);
    if (kind == "attention") return std::make_unique<AttentionModel>(base, seed);
    if (kind == "fcn") return std::make_unique<FcnModel>(base, seed);
    throw ConfigError("unknown method model kind: " + kind);
}

std::unique_ptr<MethodModel> load_method_model(const std::filesystem::path& path, uint64_t seed) {
    CheckpointData header = peek_checkpoint(path);
    auto model = make_method_model(header.kind, BackboneConfig::from_string(header.config), seed);
    load_into(path, model->kind(), model->config_string(), model->store());
    return model;
}

}  // namespace forgeloc
