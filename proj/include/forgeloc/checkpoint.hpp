#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "forgeloc/nn.hpp"

namespace forgeloc {

// Single-file model archive: kind tag + config echo + named arrays
// (parameters followed by buffers). Loading verifies kind and config match
// the target model exactly.
struct CheckpointData {
    std::string kind;
    std::string config;
    struct Array {
        std::string name;
        Shape shape;
        std::vector<double> data;
    };
    std::vector<Array> arrays;
};

void save_checkpoint(const std::filesystem::path& path, const std::string& kind, const std::string& config,
                     const nn::ParamStore& store);
CheckpointData load_checkpoint(const std::filesystem::path& path);
// Reads only the header, for model reconstruction before loading weights.
CheckpointData peek_checkpoint(const std::filesystem::path& path);
void load_into(const std::filesystem::path& path, const std::string& kind, const std::string& config,
               nn::ParamStore& store);

}  // namespace forgeloc
