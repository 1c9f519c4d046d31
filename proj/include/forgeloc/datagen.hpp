#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "forgeloc/diffusion.hpp"
#include "forgeloc/image.hpp"
#include "forgeloc/rng.hpp"

namespace forgeloc::datagen {

// --- records and manifests ---

struct SampleRecord {
    std::string image_path;  // relative to the manifest's directory
    std::string label;       // "real" | "fake"
    std::optional<std::string> mask_path;
    std::string generator_tag = "none";  // none|p2-analogue|repaint|repaint-ldm|external
    std::string source_tag;
    std::string split;  // train | val | test
};

// Tab-separated, one record per line, '-' for an absent mask, with a
// versioned header line. Loading enforces the real-row invariants and
// reports the offending line number.
void write_manifest(const std::filesystem::path& path, const std::vector<SampleRecord>& records);
std::vector<SampleRecord> load_manifest(const std::filesystem::path& path);

std::filesystem::path resolve_record_path(const std::filesystem::path& manifest_path, const std::string& rel);

// --- procedural faces ---

struct Segmentation {
    std::vector<std::pair<std::string, BinaryMask>> attributes;  // draw-order masks
    BinaryMask face_region;
};

struct ProceduralSample {
    Image image;  // [0,1]
    Segmentation seg;
};

// Deterministic layered-shape portraits with exact per-attribute masks.
// style selects one of two deliberately mismatched looks (palette+geometry),
// standing in for distinct source datasets.
ProceduralSample make_procedural_face(int size, uint64_t seed, int style = 0);
std::vector<ProceduralSample> make_procedural_faces(int n, int size, uint64_t seed, int style = 0);

// Picks a random nonempty attribute; attributes covering < 5% of the image
// are dilated by a square kernel of random odd size, capped at max_dilation
// pixels of radius at the 256 reference scale (scaled to the actual size).
BinaryMask sample_attribute_mask(const Segmentation& seg, Rng& rng, int max_dilation = 15);

BinaryMask dilate(const BinaryMask& mask, int kernel);

// --- generator bundle ---

struct Generators {
    std::unique_ptr<NoisePredictorNet> pixel;
    DiffusionSchedule schedule;
    std::unique_ptr<LatentCodec> codec;         // for repaint-ldm
    std::unique_ptr<NoisePredictorNet> latent;  // predictor in codec latent space
    DiffusionSchedule latent_schedule;
};

struct TrainGeneratorsConfig {
    std::filesystem::path out_dir;
    uint64_t seed = 0;
    int size = 64;
    int style = 0;
    int train_images = 64;
    int steps = 400;
    int batch = 8;
    double lr = 2e-3;
    int T = 50;
    bool with_latent = true;  // also train codec + latent predictor
    int predictor_width = 12;
    int codec_width = 16;
    int latent_channels = 4;
};

// Trains the pixel-space denoiser (and optionally codec + latent denoiser)
// on freshly sampled procedural faces; writes pixel.ckpt/codec.ckpt/latent.ckpt.
void train_generators(const TrainGeneratorsConfig& cfg);
// Loads the bundle; a missing checkpoint raises an error naming the
// train-generator command.
Generators load_generators(const std::filesystem::path& dir, bool need_latent);

// --- dataset assembly ---

struct GenerateConfig {
    std::filesystem::path out_dir;
    uint64_t seed = 0;
    int size = 64;
    int identities = 139;
    int per_image = 3;
    int style = 0;
    std::string source_tag = "desk0";
    bool with_ldm = false;  // also inpaint every sample with repaint-ldm
    double train_frac = 0.72, val_frac = 0.07;
};

struct GeneratedDataset {
    std::vector<SampleRecord> reals;
    std::vector<SampleRecord> full_fakes;
    // per generator tag, aligned across generators sample-for-sample
    std::vector<std::pair<std::string, std::vector<SampleRecord>>> local_fakes;
};

// Fully synthesized fakes from the trained pixel generator.
std::vector<SampleRecord> synthesize_full(const Generators& gen, int n, int size, uint64_t seed,
                                          const std::filesystem::path& out_dir, const std::string& source_tag,
                                          const std::vector<std::string>& splits);

// Per source image: per_image mask draws and inpainted outputs, with the
// mask files shared verbatim across inpainting methods.
std::vector<std::pair<std::string, std::vector<SampleRecord>>> inpaint_local(
    const std::vector<ProceduralSample>& sources, const std::vector<std::string>& splits, const Generators& gen,
    const std::vector<std::string>& methods, int per_image, uint64_t seed, const std::filesystem::path& out_dir,
    const std::string& source_tag);

struct SetupSpec {
    char setup = 'c';  // 'a' | 'b' | 'c'
    std::string local_generator = "repaint";
    int train_real = 0, train_fake = 0;  // 0 = use everything available
    int val_real = 0, val_fake = 0;
};

// Assembles one supervision regime from the generated pools:
//   a: real + fully generated fakes, labels only;
//   b: real + locally manipulated fakes, mask paths stripped from
//      train/val rows;
//   c: locally manipulated fakes with masks, no real rows at all.
// Test rows pass through unchanged (fake-only for setup c).
std::vector<SampleRecord> build_setup(const SetupSpec& spec, const GeneratedDataset& data, Rng& rng);

// End-to-end generation: procedural reals, full synthesis, local inpainting,
// and the three setup manifests plus one manifest per generator tag.
GeneratedDataset generate_dataset(const GenerateConfig& cfg, const Generators& gen);

// Thin adapter for pre-existing image/mask directories.
std::vector<SampleRecord> import_external(const std::filesystem::path& images_dir,
                                          const std::filesystem::path& masks_dir, const std::string& label,
                                          const std::string& source_tag, const std::string& split,
                                          const std::filesystem::path& dataset_root);

std::string split_for_index(int index, int total, double train_frac, double val_frac);

}  // namespace forgeloc::datagen
