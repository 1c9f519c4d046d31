#include "forgeloc/backbone.hpp"

#include <cmath>
#include <sstream>

namespace forgeloc {

BackboneConfig BackboneConfig::desk() { return BackboneConfig{}; }

BackboneConfig BackboneConfig::paper() {
    BackboneConfig cfg;
    cfg.preset = "paper";
    cfg.input_size = 256;
    cfg.channel_widths = {32, 64, 128, 128, 128, 128, 128, 128, 128, 128, 128, 256};
    cfg.num_blocks = 12;
    // Entry halvings at blocks 1-3, exit halving at block 12: block 11 is the
    // last boundary before the final downsampling.
    cfg.downsample_blocks = {1, 2, 3, 12};
    return cfg;
}

void BackboneConfig::validate() const {
    if (num_blocks < 2) throw ConfigError("backbone: num_blocks must be >= 2, got " + std::to_string(num_blocks));
    if (channel_widths.empty()) throw ConfigError("backbone: channel_widths must not be empty");
    if (static_cast<int>(channel_widths.size()) != num_blocks)
        throw ConfigError("backbone: channel_widths size (" + std::to_string(channel_widths.size()) +
                          ") must equal num_blocks (" + std::to_string(num_blocks) + ")");
    for (int w : channel_widths)
        if (w < 1) throw ConfigError("backbone: channel widths must be positive");
    for (int d : downsample_blocks)
        if (d < 1 || d > num_blocks)
            throw ConfigError("backbone: downsample block " + std::to_string(d) + " outside 1.." + std::to_string(num_blocks));
    if (input_size < 1 || in_channels < 1) throw ConfigError("backbone: invalid input size/channels");
    int side = input_size;
    for (int b = 1; b <= num_blocks; ++b) {
        if (downsample_blocks.count(b)) {
            if (side % 2 != 0)
                throw ConfigError("backbone: raster side " + std::to_string(side) + " not divisible at downsample block " +
                                  std::to_string(b));
            side /= 2;
        }
    }
    if (preset == "paper") {
        if (num_blocks < 12) throw ConfigError("backbone: paper preset requires blocks 2 and 11");
        const int last_ds = *downsample_blocks.rbegin();
        if (last_ds <= 11) throw ConfigError("backbone: paper preset requires block 11 before the final downsampling");
    }
}

int BackboneConfig::patches_truncation() const {
    if (patches_truncation_override > 0) return patches_truncation_override;
    return 2;
}

int BackboneConfig::gradcam_truncation() const {
    if (gradcam_truncation_override > 0) return gradcam_truncation_override;
    if (preset == "paper") return 11;
    if (preset == "desk") return 3;
    return std::max(1, num_blocks - 1);
}

int BackboneConfig::attention_block() const {
    if (attention_block_override > 0) return attention_block_override;
    return std::max(1, num_blocks / 2);
}

int BackboneConfig::downsamples_upto(int block) const {
    int n = 0;
    for (int d : downsample_blocks)
        if (d <= block) ++n;
    return n;
}

int BackboneConfig::raster_size(int block) const { return input_size >> downsamples_upto(block); }

int BackboneConfig::width_at(int block) const {
    return block == 0 ? in_channels : channel_widths[block - 1];
}

std::string BackboneConfig::to_string() const {
    std::ostringstream out;
    out << "preset=" << preset << ";input_size=" << input_size << ";in_channels=" << in_channels << ";widths=";
    for (size_t i = 0; i < channel_widths.size(); ++i) out << (i ? "," : "") << channel_widths[i];
    out << ";downsample=";
    bool first = true;
    for (int d : downsample_blocks) {
        out << (first ? "" : ",") << d;
        first = false;
    }
    out << ";with_top=" << (with_top ? 1 : 0);
    out << ";patches_trunc=" << patches_truncation() << ";gradcam_trunc=" << gradcam_truncation()
        << ";attention_block=" << attention_block();
    return out.str();
}

BackboneConfig BackboneConfig::from_string(const std::string& s) {
    BackboneConfig cfg;
    cfg.channel_widths.clear();
    cfg.downsample_blocks.clear();
    std::istringstream in(s);
    std::string field;
    auto parse_list = [](const std::string& v) {
        std::vector<int> out;
        std::istringstream ls(v);
        std::string item;
        while (std::getline(ls, item, ','))
            if (!item.empty()) out.push_back(std::stoi(item));
        return out;
    };
    while (std::getline(in, field, ';')) {
        const auto eq = field.find('=');
        if (eq == std::string::npos) throw ConfigError("bad backbone config field: " + field);
        const std::string key = field.substr(0, eq), value = field.substr(eq + 1);
        if (key == "preset") cfg.preset = value;
        else if (key == "input_size") cfg.input_size = std::stoi(value);
        else if (key == "in_channels") cfg.in_channels = std::stoi(value);
        else if (key == "widths") cfg.channel_widths = parse_list(value);
        else if (key == "downsample") for (int d : parse_list(value)) cfg.downsample_blocks.insert(d);
        else if (key == "with_top") cfg.with_top = value == "1";
        else if (key == "patches_trunc") cfg.patches_truncation_override = std::stoi(value);
        else if (key == "gradcam_trunc") cfg.gradcam_truncation_override = std::stoi(value);
        else if (key == "attention_block") cfg.attention_block_override = std::stoi(value);
        else throw ConfigError("unknown backbone config key: " + key);
    }
    cfg.num_blocks = static_cast<int>(cfg.channel_widths.size());
    return cfg;
}

Backbone::Backbone(const BackboneConfig& config, uint64_t seed) : cfg_(config) {
    cfg_.validate();
    Rng rng(Rng::derive(seed, {0x6261636b626f6e65ull}));
    blocks_.reserve(cfg_.num_blocks);
    for (int b = 1; b <= cfg_.num_blocks; ++b) {
        Block blk;
        const std::string base = "block" + std::to_string(b);
        const int in_c = cfg_.width_at(b - 1);
        const int out_c = cfg_.width_at(b);
        blk.conv1 = nn::SeparableConv(store_, base + ".sep1", in_c, out_c, rng);
        blk.norm1 = nn::ChannelNorm(store_, base + ".norm1", out_c);
        blk.conv2 = nn::SeparableConv(store_, base + ".sep2", out_c, out_c, rng);
        blk.norm2 = nn::ChannelNorm(store_, base + ".norm2", out_c);
        blk.downsample = cfg_.downsample_blocks.count(b) > 0;
        blocks_.push_back(std::move(blk));
    }
    if (cfg_.with_top) top_ = nn::LinearLayer(store_, "top", cfg_.width_at(cfg_.num_blocks), 1, rng);
}

Tensor Backbone::input_tensor(const Image& image, bool requires_grad) const {
    check_image(image);
    return image_to_tensor(image, requires_grad);
}

void Backbone::check_image(const Image& image) const {
    if (image.h != cfg_.input_size || image.w != cfg_.input_size)
        throw ShapeError("backbone: image is " + std::to_string(image.h) + "x" + std::to_string(image.w) +
                         ", config expects " + std::to_string(cfg_.input_size));
    if (image.c != cfg_.in_channels)
        throw ShapeError("backbone: image has " + std::to_string(image.c) + " channels, config expects " +
                         std::to_string(cfg_.in_channels));
}

Tensor Backbone::features_range(const Tensor& x, int from, int upto) {
    if (from < 0 || upto > cfg_.num_blocks || from >= upto)
        throw ConfigError("backbone: invalid block range " + std::to_string(from) + ".." + std::to_string(upto));
    Tensor h = x;
    for (int b = from + 1; b <= upto; ++b) {
        Block& blk = blocks_[b - 1];
        h = relu(blk.norm1.forward(blk.conv1.forward(h), training_));
        h = relu(blk.norm2.forward(blk.conv2.forward(h), training_));
        if (blk.downsample) h = nn::avg_pool2(h);
    }
    return h;
}

FeatureStack Backbone::forward_features(const Image& image, int upto_block) {
    if (upto_block < 1 || upto_block > cfg_.num_blocks)
        throw ConfigError("backbone: upto_block " + std::to_string(upto_block) + " outside 1.." +
                          std::to_string(cfg_.num_blocks));
    FeatureStack stack;
    Tensor h = input_tensor(image);
    for (int b = 1; b <= upto_block; ++b) {
        h = features_range(h, b - 1, b);
        for (double v : h.values())
            if (!std::isfinite(v)) throw DomainError("backbone: non-finite activation at block " + std::to_string(b));
        stack.activations.emplace(b, h);
    }
    if (upto_block == cfg_.num_blocks && cfg_.with_top) stack.final_logit = logit_from(h, cfg_.num_blocks);
    return stack;
}

Tensor Backbone::logit_from(const Tensor& activation, int after_block) {
    if (!cfg_.with_top) throw ConfigError("backbone: no classification top attached");
    Tensor h = activation;
    if (after_block < cfg_.num_blocks) h = features_range(h, after_block, cfg_.num_blocks);
    return top_.forward(nn::global_avg_pool(h));
}

Tensor Backbone::forward_logit(const Image& image) {
    Tensor x = input_tensor(image);
    return logit_from(features_range(x, 0, cfg_.num_blocks), cfg_.num_blocks);
}

Backbone build_backbone(const BackboneConfig& config, uint64_t seed) { return Backbone(config, seed); }

}  // namespace forgeloc
