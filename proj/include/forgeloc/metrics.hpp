#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "forgeloc/heads.hpp"
#include "forgeloc/image.hpp"

namespace forgeloc {

struct PerSampleResult {
    std::string sample_id;
    double iou = 0.0;   // fraction
    double pbca = 0.0;  // fraction
    double mask_area_percent = 0.0;
};

struct EvalResult {
    double iou_percent = 0.0;
    double pbca_percent = 0.0;
    std::optional<double> ap_percent;
    std::vector<PerSampleResult> per_sample;
};

// Bilinear resize with half-pixel sample centers; output clamped to [0,1].
LocalizationMap resize_map(const LocalizationMap& map, int target_h, int target_w);

// value >= threshold -> 1 (boundary inclusive).
BinaryMask binarize(const LocalizationMap& map, double threshold = 0.5);

// |pred AND gt| / |pred OR gt|; empty pred scores 0; empty gt is a domain
// error (localization is evaluated on fake images only).
double iou(const BinaryMask& pred, const BinaryMask& gt);

// Fraction of pixels where pred == gt.
double pbca(const BinaryMask& pred, const BinaryMask& gt);

struct ScoredLabel {
    double score = 0.0;
    int label = 0;  // 1 = fake (positive)
};

// Mean precision at each positive's rank after a stable descending sort
// (ties keep input order).
double average_precision(const std::vector<ScoredLabel>& scores);

struct AreaBin {
    double area_lo = 0.0, area_hi = 0.0;  // percent bounds
    long count = 0;
    std::optional<double> mean_iou_percent;
};

// Partitions samples into equal-width mask-area-percent bins over [0,100].
std::vector<AreaBin> iou_vs_area_curve(const std::vector<PerSampleResult>& per_sample, int bins);

// Results file: per-sample records followed by a summary block with one
// decimal place, as written next to every evaluation.
void write_results(const std::filesystem::path& path, const EvalResult& result);
EvalResult read_results(const std::filesystem::path& path);

std::string format_percent(double percent);  // one decimal

}  // namespace forgeloc
