#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "forgeloc/image.hpp"
#include "forgeloc/nn.hpp"

namespace forgeloc {

// Xception-style separable-convolution trunk with named block boundaries.
// Blocks are 1-based; a block listed in downsample_blocks halves the raster
// at its end, so the activation after block b has side
// input_size / 2^(number of downsample blocks <= b), exactly.
struct BackboneConfig {
    std::string preset = "desk";  // desk | paper | custom
    int input_size = 64;
    int in_channels = 3;
    std::vector<int> channel_widths = {16, 32, 64, 64};
    int num_blocks = 4;
    std::set<int> downsample_blocks = {1, 3};
    bool with_top = true;  // global-average-pool classifier producing one logit

    // Truncation points; 0 means use the preset default.
    int patches_truncation_override = 0;
    int gradcam_truncation_override = 0;
    int attention_block_override = 0;

    static BackboneConfig desk();
    static BackboneConfig paper();

    void validate() const;

    int patches_truncation() const;
    int gradcam_truncation() const;
    int attention_block() const;  // mid-trunk insertion point for the attention mask
    int downsamples_upto(int block) const;
    int raster_size(int block) const;
    int width_at(int block) const;  // block 0 = input channels

    std::string to_string() const;
    static BackboneConfig from_string(const std::string& s);
};

struct FeatureStack {
    std::map<int, Tensor> activations;  // block index -> CxHxW activation
    std::optional<Tensor> final_logit;
};

class Backbone {
  public:
    Backbone(const BackboneConfig& config, uint64_t seed);

    const BackboneConfig& config() const { return cfg_; }

    // Runs blocks from+1 .. upto on x, where x is the activation after block
    // `from` (from = 0 takes the raw image tensor). Gradients flow to both
    // parameters and x.
    Tensor features_range(const Tensor& x, int from, int upto);

    FeatureStack forward_features(const Image& image, int upto_block);
    // Remaining blocks after `after_block` plus the classifier top.
    Tensor logit_from(const Tensor& activation, int after_block);
    Tensor forward_logit(const Image& image);

    void set_training(bool training) { training_ = training; }
    bool training() const { return training_; }

    nn::ParamStore& store() { return store_; }
    const nn::ParamStore& store() const { return store_; }
    int64_t param_count() const { return store_.param_count(); }

    Tensor input_tensor(const Image& image, bool requires_grad = false) const;

  private:
    struct Block {
        nn::SeparableConv conv1, conv2;
        nn::ChannelNorm norm1, norm2;
        bool downsample = false;
    };

    void check_image(const Image& image) const;

    BackboneConfig cfg_;
    std::vector<Block> blocks_;
    nn::LinearLayer top_;
    nn::ParamStore store_;
    bool training_ = false;
};

Backbone build_backbone(const BackboneConfig& config, uint64_t seed);

}  // namespace forgeloc
