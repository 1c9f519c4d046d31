#pragma once

#include <memory>
#include <string>

#include "forgeloc/backbone.hpp"
#include "forgeloc/image.hpp"

namespace forgeloc {

enum class HeadKind { gradcam, patches, attention, fcn };
std::string head_kind_name(HeadKind k);
HeadKind head_kind_from_name(const std::string& name);

struct LocalizationMap {
    int h = 0, w = 0;
    std::vector<double> values;  // [0,1]
    HeadKind source_head = HeadKind::gradcam;

    LocalizationMap() = default;
    LocalizationMap(int h_, int w_, HeadKind k) : h(h_), w(w_), values(static_cast<size_t>(h_) * w_, 0.0), source_head(k) {}
    double at(int y, int x) const { return values[static_cast<size_t>(y) * w + x]; }
    double& at(int y, int x) { return values[static_cast<size_t>(y) * w + x]; }
};

struct DetectionScore {
    double probability = 0.0;  // [0,1]
};

struct AttentionLossConfig {
    double lambda = 1.0;  // weight of the mask-consistency term; must be >= 0
};

// Common surface of the trained detector/localizer variants. Inference on a
// frozen model is safe from multiple threads; training is single-writer.
class MethodModel {
  public:
    virtual ~MethodModel() = default;
    virtual LocalizationMap localize(const Image& image) = 0;
    virtual double score(const Image& image) = 0;  // fakeness probability
    virtual std::string kind() const = 0;
    virtual std::string config_string() const = 0;
    virtual nn::ParamStore& store() = 0;
    virtual void set_training(bool training) = 0;
    virtual const BackboneConfig& base_config() const = 0;
};

// Post-hoc explanation head: a plain classifier whose localization map comes
// from gradient-weighted activations at a chosen block.
class GradCamModel : public MethodModel {
  public:
    GradCamModel(const BackboneConfig& base, uint64_t seed);

    LocalizationMap localize(const Image& image) override;
    double score(const Image& image) override;
    std::string kind() const override { return "gradcam"; }
    std::string config_string() const override { return base_.to_string(); }
    nn::ParamStore& store() override { return net_.store(); }
    void set_training(bool training) override { net_.set_training(training); }
    const BackboneConfig& base_config() const override { return base_; }

    Backbone& backbone() { return net_; }
    Tensor logit(const Image& image) { return net_.forward_logit(image); }

  private:
    BackboneConfig base_;
    Backbone net_;
};

// Truncated classifier scoring every feature cell; the per-patch fake
// probabilities are the localization map and their mean the image score.
class PatchesModel : public MethodModel {
  public:
    PatchesModel(const BackboneConfig& base, uint64_t seed);

    // 1 x h x w tensor of per-patch fake probabilities (graph-connected).
    Tensor patch_fake_probs(const Image& image);

    LocalizationMap localize(const Image& image) override;
    double score(const Image& image) override;
    std::string kind() const override { return "patches"; }
    std::string config_string() const override { return base_.to_string(); }
    nn::ParamStore& store() override { return trunk_.store(); }
    void set_training(bool training) override { trunk_.set_training(training); }
    const BackboneConfig& base_config() const override { return base_; }

    int map_size() const { return base_.raster_size(base_.patches_truncation()); }

  private:
    BackboneConfig base_;
    Backbone trunk_;  // blocks 1..patches_truncation only
    nn::Conv2dLayer proj_;
};

// Trunk features modulated by a learned sigmoid mask, then classified.
class AttentionModel : public MethodModel {
  public:
    AttentionModel(const BackboneConfig& base, uint64_t seed);

    struct Forward {
        Tensor mask;   // 1 x h x w, sigmoid
        Tensor y_hat;  // scalar fakeness probability
    };
    Forward forward(const Image& image);
    // Continues the pipeline with an externally supplied mask (test hook).
    Tensor score_given_mask(const Image& image, const Tensor& mask);

    LocalizationMap localize(const Image& image) override;
    double score(const Image& image) override;
    std::string kind() const override { return "attention"; }
    std::string config_string() const override { return base_.to_string(); }
    nn::ParamStore& store() override { return net_.store(); }
    void set_training(bool training) override { net_.set_training(training); }
    const BackboneConfig& base_config() const override { return base_; }

    int map_size() const { return base_.raster_size(base_.attention_block()); }

  private:
    BackboneConfig base_;
    Backbone net_;
    nn::Conv2dLayer mask_head_;
};

// Fully-convolutional localizer: trunk truncated at the gradcam block plus a
// 1x1 projection with sigmoid, trained against downsized masks.
class FcnModel : public MethodModel {
  public:
    FcnModel(const BackboneConfig& base, uint64_t seed);

    Tensor dense_map(const Image& image);  // 1 x h x w, sigmoid

    LocalizationMap localize(const Image& image) override;
    double score(const Image& image) override;  // mean of the map
    std::string kind() const override { return "fcn"; }
    std::string config_string() const override { return base_.to_string(); }
    nn::ParamStore& store() override { return trunk_.store(); }
    void set_training(bool training) override { trunk_.set_training(training); }
    const BackboneConfig& base_config() const override { return base_; }

    int map_size() const { return base_.raster_size(base_.gradcam_truncation()); }

  private:
    BackboneConfig base_;
    Backbone trunk_;
    nn::Conv2dLayer proj_;
};

// --- spec operations ---

// Gradients of the fake-class score w.r.t. the target block's activations,
// channel-wise average-pooled into weights; weighted activation sum, ReLU,
// then max-normalized to [0,1] (an all-zero map stays all-zero).
LocalizationMap gradcam_map(Backbone& model, const Image& image, int target_block);

DetectionScore patches_aggregate(const LocalizationMap& per_patch_probs);

// Eq-style combined loss: CE(y, y_hat) + lambda * CE(y, max m_hat), with
// predictions clamped to [eps, 1-eps], eps = 1e-7. The max routes its
// subgradient to the first maximal element in row-major order.
Tensor attention_loss_t(int y, const Tensor& y_hat, const Tensor& m_hat, const AttentionLossConfig& cfg);
double attention_loss(int y, const DetectionScore& y_hat, const LocalizationMap& m_hat, const AttentionLossConfig& cfg);

// Mean per-cell binary cross-entropy between a prediction map and the
// ground-truth mask area-averaged to the prediction's raster.
Tensor supervised_loss_t(const Tensor& prediction, const BinaryMask& ground_truth);
double supervised_loss(const LocalizationMap& prediction, const BinaryMask& ground_truth);

// Area-average a binary mask down to th x tw (soft targets in [0,1]).
std::vector<double> downsize_mask_soft(const BinaryMask& mask, int th, int tw);

// Checkpoint round-trip for any method model.
void save_method_model(const std::filesystem::path& path, MethodModel& model);
std::unique_ptr<MethodModel> load_method_model(const std::filesystem::path& path, uint64_t seed = 0);
std::unique_ptr<MethodModel> make_method_model(const std::string& kind, const BackboneConfig& base, uint64_t seed);

}  // namespace forgeloc
