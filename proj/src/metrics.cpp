#include "forgeloc/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace forgeloc {

LocalizationMap resize_map(const LocalizationMap& map, int target_h, int target_w) {
    if (target_h < 1 || target_w < 1) throw DomainError("resize_map: target size must be positive");
    if (map.h < 1 || map.w < 1) throw ShapeError("resize_map: empty source map");
    LocalizationMap out(target_h, target_w, map.source_head);
    const double sy = static_cast<double>(map.h) / target_h;
    const double sx = static_cast<double>(map.w) / target_w;
    for (int y = 0; y < target_h; ++y) {
        double fy = (y + 0.5) * sy - 0.5;
        fy = std::clamp(fy, 0.0, static_cast<double>(map.h - 1));
        const int y0 = static_cast<int>(fy);
        const int y1 = std::min(y0 + 1, map.h - 1);
        const double wy = fy - y0;
        for (int x = 0; x < target_w; ++x) {
            double fx = (x + 0.5) * sx - 0.5;
            fx = std::clamp(fx, 0.0, static_cast<double>(map.w - 1));
            const int x0 = static_cast<int>(fx);
            const int x1 = std::min(x0 + 1, map.w - 1);
            const double wx = fx - x0;
            const double v = (1.0 - wy) * ((1.0 - wx) * map.at(y0, x0) + wx * map.at(y0, x1)) +
                             wy * ((1.0 - wx) * map.at(y1, x0) + wx * map.at(y1, x1));
            out.at(y, x) = std::clamp(v, 0.0, 1.0);
        }
    }
    return out;
}

BinaryMask binarize(const LocalizationMap& map, double threshold) {
    BinaryMask out(map.h, map.w);
    for (size_t i = 0; i < map.values.size(); ++i) out.values[i] = map.values[i] >= threshold ? 1 : 0;
    return out;
}

double iou(const BinaryMask& pred, const BinaryMask& gt) {
    if (pred.h != gt.h || pred.w != gt.w) throw ShapeError("iou: shape mismatch");
    long inter = 0, uni = 0;
    for (size_t i = 0; i < pred.values.size(); ++i) {
        inter += pred.values[i] & gt.values[i];
        uni += pred.values[i] | gt.values[i];
    }
    if (gt.area() == 0) throw DomainError("iou: ground-truth mask is empty");
    return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

double pbca(const BinaryMask& pred, const BinaryMask& gt) {
    if (pred.h != gt.h || pred.w != gt.w) throw ShapeError("pbca: shape mismatch");
    if (pred.values.empty()) throw ShapeError("pbca: empty masks");
    long agree = 0;
    for (size_t i = 0; i < pred.values.size(); ++i) agree += pred.values[i] == gt.values[i];
    return static_cast<double>(agree) / static_cast<double>(pred.values.size());
}

double average_precision(const std::vector<ScoredLabel>& scores) {
    long positives = 0;
    for (const auto& s : scores) positives += s.label == 1;
    if (positives == 0) throw DomainError("average_precision: needs at least one positive example");

    std::vector<size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](size_t a, size_t b) { return scores[a].score > scores[b].score; });

    double ap = 0.0;
    long hits = 0;
    for (size_t rank = 0; rank < order.size(); ++rank) {
        if (scores[order[rank]].label == 1) {
            ++hits;
            ap += static_cast<double>(hits) / static_cast<double>(rank + 1);
        }
    }
    return ap / static_cast<double>(positives);
}

std::vector<AreaBin> iou_vs_area_curve(const std::vector<PerSampleResult>& per_sample, int bins) {
    if (bins < 1) throw DomainError("iou_vs_area_curve: bins must be >= 1");
    if (per_sample.empty()) throw DomainError("iou_vs_area_curve: no samples");
    std::vector<AreaBin> out(bins);
    const double width = 100.0 / bins;
    std::vector<double> sums(bins, 0.0);
    for (int b = 0; b < bins; ++b) {
        out[b].area_lo = b * width;
        out[b].area_hi = (b + 1) * width;
    }
    for (const auto& s : per_sample) {
        int b = static_cast<int>(s.mask_area_percent / width);
        b = std::clamp(b, 0, bins - 1);
        ++out[b].count;
        sums[b] += s.iou;
    }
    for (int b = 0; b < bins; ++b)
        if (out[b].count > 0) out[b].mean_iou_percent = 100.0 * sums[b] / out[b].count;
    return out;
}

std::string format_percent(double percent) {
    std::ostringstream out;
    out.setf(std::ios::fixed);
    out.precision(1);
    out << percent;
    return out.str();
}

void write_results(const std::filesystem::path& path, const EvalResult& result) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw DataError("cannot open results file for writing: " + path.string());
    out << "# results v1\n";
    out.setf(std::ios::fixed);
    out.precision(6);
    for (const auto& s : result.per_sample)
        out << s.sample_id << "\t" << s.iou << "\t" << s.pbca << "\t" << s.mask_area_percent << "\n";
    out << "# summary\n";
    out << "# iou_pct\t" << format_percent(result.iou_percent) << "\n";
    out << "# pbca_pct\t" << format_percent(result.pbca_percent) << "\n";
    out << "# ap_pct\t" << (result.ap_percent ? format_percent(*result.ap_percent) : std::string("-")) << "\n";
}

EvalResult read_results(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw MissingArtifactError("results file not found: " + path.string());
    EvalResult result;
    std::string line;
    long line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        if (line[0] == '#') {
            std::istringstream ls(line.substr(1));
            std::string key, value;
            ls >> key >> value;
            if (key == "iou_pct") result.iou_percent = std::stod(value);
            else if (key == "pbca_pct") result.pbca_percent = std::stod(value);
            else if (key == "ap_pct" && value != "-") result.ap_percent = std::stod(value);
            continue;
        }
        std::istringstream ls(line);
        PerSampleResult s;
        if (!(ls >> s.sample_id >> s.iou >> s.pbca >> s.mask_area_percent))
            throw ParseError("malformed results row in " + path.string(), line_no);
        result.per_sample.push_back(std::move(s));
    }
    return result;
}

}  // namespace forgeloc
