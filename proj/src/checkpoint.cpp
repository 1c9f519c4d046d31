#include "forgeloc/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace forgeloc {

namespace {

constexpr char kMagic[4] = {'F', 'L', 'C', 'K'};
constexpr uint32_t kVersion = 1;

void write_u32(std::ostream& out, uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); }

uint32_t read_u32(std::istream& in) {
    uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 4);
    return v;
}

void write_str(std::ostream& out, const std::string& s) {
    write_u32(out, static_cast<uint32_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_str(std::istream& in) {
    const uint32_t n = read_u32(in);
    std::string s(n, '\0');
    in.read(s.data(), n);
    return s;
}

void write_array(std::ostream& out, const std::string& name, const Tensor& t) {
    write_str(out, name);
    write_u32(out, static_cast<uint32_t>(t.shape().size()));
    for (int d : t.shape()) write_u32(out, static_cast<uint32_t>(d));
    out.write(reinterpret_cast<const char*>(t.values().data()),
              static_cast<std::streamsize>(t.values().size() * sizeof(double)));
}

CheckpointData read_checkpoint(const std::filesystem::path& path, bool header_only) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingArtifactError("checkpoint not found: " + path.string());
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0) throw DataError("not a checkpoint file: " + path.string());
    if (read_u32(in) != kVersion) throw DataError("unsupported checkpoint version: " + path.string());
    CheckpointData data;
    data.kind = read_str(in);
    data.config = read_str(in);
    if (header_only) return data;
    const uint32_t n = read_u32(in);
    data.arrays.resize(n);
    for (uint32_t i = 0; i < n; ++i) {
        auto& a = data.arrays[i];
        a.name = read_str(in);
        const uint32_t ndim = read_u32(in);
        a.shape.resize(ndim);
        for (uint32_t d = 0; d < ndim; ++d) a.shape[d] = static_cast<int>(read_u32(in));
        a.data.resize(static_cast<size_t>(shape_numel(a.shape)));
        in.read(reinterpret_cast<char*>(a.data.data()), static_cast<std::streamsize>(a.data.size() * sizeof(double)));
    }
    if (!in) throw DataError("truncated checkpoint: " + path.string());
    return data;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const std::string& kind, const std::string& config,
                     const nn::ParamStore& store) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open checkpoint for writing: " + path.string());
    out.write(kMagic, 4);
    write_u32(out, kVersion);
    write_str(out, kind);
    write_str(out, config);
    write_u32(out, static_cast<uint32_t>(store.params().size() + store.buffers().size()));
    for (const auto& p : store.params()) write_array(out, p.name, p.tensor);
    for (const auto& b : store.buffers()) write_array(out, b.name, b.tensor);
    if (!out) throw DataError("checkpoint write failed: " + path.string());
}

CheckpointData load_checkpoint(const std::filesystem::path& path) { return read_checkpoint(path, false); }

CheckpointData peek_checkpoint(const std::filesystem::path& path) { return read_checkpoint(path, true); }

void load_into(const std::filesystem::path& path, const std::string& kind, const std::string& config,
               nn::ParamStore& store) {
    CheckpointData data = load_checkpoint(path);
    if (data.kind != kind)
        throw ConfigError("checkpoint kind mismatch: file has '" + data.kind + "', model is '" + kind + "'");
    if (data.config != config)
        throw ConfigError("checkpoint config mismatch for " + path.string() + ": file has '" + data.config +
                          "', model is '" + config + "'");
    auto apply = [&](std::vector<nn::NamedParam>& targets) {
        for (auto& t : targets) {
            const CheckpointData::Array* found = nullptr;
            for (const auto& a : data.arrays)
                if (a.name == t.name) {
                    found = &a;
                    break;
                }
            if (!found) throw DataError("checkpoint missing array '" + t.name + "'");
            if (found->shape != t.tensor.shape())
                throw DataError("checkpoint array '" + t.name + "' has shape " + shape_str(found->shape) +
                                ", model expects " + shape_str(t.tensor.shape()));
            std::copy(found->data.begin(), found->data.end(), t.tensor.raw_values().begin());
        }
    };
    apply(store.params());
    apply(store.buffers());
}

}  // namespace forgeloc
