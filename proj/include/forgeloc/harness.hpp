#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "forgeloc/datagen.hpp"
#include "forgeloc/heads.hpp"
#include "forgeloc/metrics.hpp"

namespace forgeloc::harness {

struct TrainConfig {
    std::string method = "patches";  // gradcam | patches | attention
    char setup = 'c';                // a | b | c
    int epochs = 10;
    double lr = 1e-3;
    int batch_size = 16;
    uint64_t seed = 0;
    std::vector<double> lambda_grid = {0.1, 1.0, 10.0};  // attention, label-only setups
    BackboneConfig backbone = BackboneConfig::desk();
};

struct EpochLog {
    int epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    double val_metric = 0.0;  // detection AP% (a/b) or localization IoU% (c)
};

struct TrainResult {
    std::unique_ptr<MethodModel> model;
    std::vector<EpochLog> log;
    double selected_lambda = 1.0;
    int best_epoch = 0;
};

// In-memory dataset with routing instrumentation. Label-only setups never
// request mask files; setup c never loads real rows.
struct LoadedSample {
    std::string id;
    Image image;
    int label = 0;  // 1 = fake
    std::optional<BinaryMask> mask;
};

struct LoadedData {
    std::vector<LoadedSample> train, val;
    long mask_reads = 0;  // snapshot of mask-file opens during loading
    long real_reads = 0;  // real-labelled rows loaded
};

LoadedData load_training_data(const std::vector<datagen::SampleRecord>& records,
                              const std::filesystem::path& manifest_path, char setup);

TrainResult train(const TrainConfig& config, const std::filesystem::path& manifest_path);
TrainResult train(const TrainConfig& config, const std::vector<datagen::SampleRecord>& records,
                  const std::filesystem::path& manifest_path);

void write_training_log(const std::filesystem::path& path, const std::vector<EpochLog>& log);

// Fake-only localization evaluation: head map -> resize to image size ->
// binarize at 0.5 -> IoU/PBCA against the ground-truth mask.
EvalResult evaluate_localization(MethodModel& model, const std::vector<datagen::SampleRecord>& records,
                                 const std::filesystem::path& manifest_path);
EvalResult evaluate_localization(const std::filesystem::path& checkpoint, const std::filesystem::path& manifest_path);

// Ranks test rows of both labels by fakeness score; returns AP in percent.
double evaluate_detection(MethodModel& model, const std::vector<datagen::SampleRecord>& records,
                          const std::filesystem::path& manifest_path);
double evaluate_detection(const std::filesystem::path& checkpoint, const std::filesystem::path& manifest_path);

// --- experiments ---

struct ShiftSource {
    std::string name;
    std::map<char, std::filesystem::path> manifests;  // setup -> training manifest
};

struct ShiftCell {
    char setup = 'c';
    std::string source;
    EvalResult result;
    std::vector<AreaBin> curve;
};

// Trains per (setup, source) and evaluates everything on the fixed test
// manifest; one row per setup and source with a mask-area curve per cell.
std::vector<ShiftCell> dataset_shift_experiment(const TrainConfig& base, const std::vector<char>& setups,
                                                const ShiftSource& source_a, const ShiftSource& source_b,
                                                const std::filesystem::path& test_manifest, int curve_bins = 5);

struct MatrixSpec {
    std::vector<std::pair<std::string, std::filesystem::path>> train_sets;
    std::vector<std::pair<std::string, std::filesystem::path>> test_sets;
};

struct MatrixResult {
    std::vector<std::string> train_names, test_names;
    std::vector<std::vector<double>> iou_percent;  // [train][test]
};

// Trains one model per train set and evaluates it on every test set.
// Independent cells may run concurrently (jobs > 1) with derived seeds.
MatrixResult cross_generator_matrix(const MatrixSpec& spec, const TrainConfig& base, int jobs = 1);

void write_matrix_tsv(const std::filesystem::path& path, const MatrixResult& matrix);
MatrixResult read_matrix_tsv(const std::filesystem::path& path);

}  // namespace forgeloc::harness
