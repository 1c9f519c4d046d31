#pragma once

#include <filesystem>

#include "forgeloc/datagen.hpp"
#include "forgeloc/harness.hpp"
#include "test_util.hpp"

namespace testutil {

// 32x32 backbone for integration tests: truncation points mirror the desk
// preset one level down.
inline forgeloc::BackboneConfig mini_backbone() {
    forgeloc::BackboneConfig cfg;
    cfg.preset = "custom";
    cfg.input_size = 32;
    cfg.channel_widths = {12, 24, 32};
    cfg.num_blocks = 3;
    cfg.downsample_blocks = {1, 3};
    cfg.patches_truncation_override = 2;
    cfg.gradcam_truncation_override = 2;
    cfg.attention_block_override = 2;
    return cfg;
}

// Small generated dataset (one per style), built once per process: trains
// the generators, synthesizes and inpaints, and writes setup manifests.
inline const std::filesystem::path& mini_dataset(int style = 0) {
    static std::filesystem::path roots[2];
    auto& root = roots[style];
    if (!root.empty()) return root;
    root = fresh_dir("mini_dataset_style" + std::to_string(style));

    forgeloc::datagen::TrainGeneratorsConfig tg;
    tg.out_dir = root / "generators";
    tg.seed = 1000 + style;
    tg.size = 32;
    tg.style = style;
    tg.train_images = 16;
    tg.steps = 200;
    tg.batch = 4;
    tg.T = 40;
    tg.predictor_width = 8;
    tg.codec_width = 10;
    forgeloc::datagen::train_generators(tg);

    forgeloc::datagen::Generators gen = forgeloc::datagen::load_generators(root / "generators", true);
    forgeloc::datagen::GenerateConfig cfg;
    cfg.out_dir = root;
    cfg.seed = 2000 + style;
    cfg.size = 32;
    cfg.identities = 16;
    cfg.per_image = 2;
    cfg.style = style;
    cfg.source_tag = "mini" + std::to_string(style);
    cfg.with_ldm = true;
    cfg.train_frac = 0.625;  // 10 train / 2 val / 4 test identities
    cfg.val_frac = 0.125;
    forgeloc::datagen::generate_dataset(cfg, gen);
    return root;
}

}  // namespace testutil
