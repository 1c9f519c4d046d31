#include "forgeloc/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "forgeloc/checkpoint.hpp"

namespace forgeloc::datagen {

namespace fs = std::filesystem;

// --- manifests ---

void write_manifest(const fs::path& path, const std::vector<SampleRecord>& records) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw DataError("cannot open manifest for writing: " + path.string());
    out << "# manifest v1\n";
    for (const auto& r : records) {
        out << r.image_path << "\t" << r.label << "\t" << (r.mask_path ? *r.mask_path : std::string("-")) << "\t"
            << r.generator_tag << "\t" << r.source_tag << "\t" << r.split << "\n";
    }
    if (!out) throw DataError("manifest write failed: " + path.string());
}

std::vector<SampleRecord> load_manifest(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw MissingArtifactError("manifest not found: " + path.string());
    std::string line;
    long line_no = 0;
    std::vector<SampleRecord> records;
    bool saw_header = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        if (line[0] == '#') {
            if (!saw_header) {
                if (line.rfind("# manifest v1", 0) != 0) throw ParseError("unknown manifest version", line_no);
                saw_header = true;
            }
            continue;
        }
        if (!saw_header) throw ParseError("manifest is missing its version header", line_no);
        std::vector<std::string> fields;
        size_t start = 0;
        while (true) {
            const size_t tab = line.find('\t', start);
            fields.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
            if (tab == std::string::npos) break;
            start = tab + 1;
        }
        if (fields.size() != 6) throw ParseError("expected 6 tab-separated fields, got " + std::to_string(fields.size()), line_no);
        SampleRecord r;
        r.image_path = fields[0];
        r.label = fields[1];
        if (fields[2] != "-") r.mask_path = fields[2];
        r.generator_tag = fields[3];
        r.source_tag = fields[4];
        r.split = fields[5];
        if (r.label != "real" && r.label != "fake") throw ParseError("label must be real or fake", line_no);
        if (r.split != "train" && r.split != "val" && r.split != "test") throw ParseError("bad split '" + r.split + "'", line_no);
        if (r.label == "real" && r.mask_path) throw ParseError("real row carries a mask path", line_no);
        if (r.label == "real" && r.generator_tag != "none") throw ParseError("real row carries a generator tag", line_no);
        records.push_back(std::move(r));
    }
    return records;
}

fs::path resolve_record_path(const fs::path& manifest_path, const std::string& rel) {
    fs::path p(rel);
    if (p.is_absolute()) return p;
    return (manifest_path.parent_path() / p).lexically_normal();
}

// --- procedural faces ---

namespace {

struct Canvas {
    int size;
    std::vector<int> labels;  // 0 bg, 1 skin, 2 hair, 3 eyes, 4 nose, 5 mouth, 6 glasses
    BinaryMask region;

    explicit Canvas(int s) : size(s), labels(static_cast<size_t>(s) * s, 0), region(s, s) {}

    void paint(int y, int x, int label) {
        if (y < 0 || y >= size || x < 0 || x >= size) return;
        if (!region.at(y, x)) return;
        labels[static_cast<size_t>(y) * size + x] = label;
    }
};

void fill_ellipse(Canvas& cv, double cx, double cy, double rx, double ry, int label) {
    const int s = cv.size;
    for (int y = 0; y < s; ++y)
        for (int x = 0; x < s; ++x) {
            const double dx = ((x + 0.5) / s - cx) / rx;
            const double dy = ((y + 0.5) / s - cy) / ry;
            if (dx * dx + dy * dy <= 1.0) cv.paint(y, x, label);
        }
}

void fill_rect(Canvas& cv, double cx, double cy, double hx, double hy, int label) {
    const int s = cv.size;
    for (int y = 0; y < s; ++y)
        for (int x = 0; x < s; ++x) {
            const double fx = (x + 0.5) / s, fy = (y + 0.5) / s;
            if (std::abs(fx - cx) <= hx && std::abs(fy - cy) <= hy) cv.paint(y, x, label);
        }
}

void fill_region_ellipse(BinaryMask& m, double cx, double cy, double rx, double ry) {
    for (int y = 0; y < m.h; ++y)
        for (int x = 0; x < m.w; ++x) {
            const double dx = ((x + 0.5) / m.w - cx) / rx;
            const double dy = ((y + 0.5) / m.h - cy) / ry;
            if (dx * dx + dy * dy <= 1.0) m.at(y, x) = 1;
        }
}

void fill_region_rect(BinaryMask& m, double cx, double cy, double hx, double hy) {
    for (int y = 0; y < m.h; ++y)
        for (int x = 0; x < m.w; ++x) {
            const double fx = (x + 0.5) / m.w, fy = (y + 0.5) / m.h;
            if (std::abs(fx - cx) <= hx && std::abs(fy - cy) <= hy) m.at(y, x) = 1;
        }
}

struct Rgb {
    double r, g, b;
    Rgb jitter(Rng& rng, double amp) const {
        return {r + amp * (rng.uniform() - 0.5), g + amp * (rng.uniform() - 0.5), b + amp * (rng.uniform() - 0.5)};
    }
    Rgb scale(double f) const { return {r * f, g * f, b * f}; }
};

}  // namespace

ProceduralSample make_procedural_face(int size, uint64_t seed, int style) {
    Rng rng(seed);
    Canvas cv(size);

    // Palette (fixed draw order keeps geometry stable across styles).
    const bool boxy = style != 0;
    const Rgb bg_top = (boxy ? Rgb{0.45, 0.58, 0.47} : Rgb{0.55, 0.62, 0.72}).jitter(rng, 0.08);
    const Rgb bg_bot = (boxy ? Rgb{0.27, 0.38, 0.30} : Rgb{0.33, 0.40, 0.50}).jitter(rng, 0.08);
    const Rgb skin_c = (boxy ? Rgb{0.70, 0.65, 0.58} : Rgb{0.83, 0.67, 0.54}).jitter(rng, 0.10);
    const Rgb hair_choices[4] = {{0.13, 0.10, 0.07}, {0.36, 0.23, 0.11}, {0.62, 0.50, 0.22}, {0.10, 0.10, 0.14}};
    Rgb hair_c = hair_choices[rng.uniform_int(4)].jitter(rng, 0.05);
    if (boxy) hair_c = Rgb{0.18, 0.18, 0.30}.jitter(rng, 0.10);
    const Rgb eye_c = (boxy ? Rgb{0.28, 0.12, 0.14} : Rgb{0.10, 0.14, 0.30}).jitter(rng, 0.05);
    const Rgb mouth_c = (boxy ? Rgb{0.58, 0.30, 0.40} : Rgb{0.72, 0.26, 0.28}).jitter(rng, 0.06);
    const Rgb glasses_c{0.12, 0.12, 0.13};
    const Rgb nose_c = skin_c.scale(0.82);

    // Geometry, jittered per identity.
    const double jx = 0.02 * (rng.uniform() - 0.5);
    const double jy = 0.02 * (rng.uniform() - 0.5);
    const double face_rx = 0.29 + 0.04 * (rng.uniform() - 0.5);
    const double face_ry = 0.36 + 0.04 * (rng.uniform() - 0.5);
    const double eye_dx = 0.125 + 0.02 * (rng.uniform() - 0.5);
    const double eye_ry = 0.032 + 0.008 * rng.uniform();
    const double mouth_rx = 0.095 + 0.03 * (rng.uniform() - 0.5);
    const bool glasses = rng.uniform() < 0.35;

    const double cx = 0.5 + jx, cy = 0.52 + jy;
    if (boxy) {
        fill_region_rect(cv.region, cx, cy, 0.37, 0.45);
    } else {
        fill_region_ellipse(cv.region, cx, cy, 0.38, 0.46);
    }

    const double skin_cy = cy + 0.06;
    if (boxy) {
        fill_rect(cv, cx, skin_cy, face_rx, face_ry, 1);
        fill_rect(cv, cx, skin_cy - face_ry - 0.015, face_rx + 0.04, 0.075, 2);
    } else {
        fill_ellipse(cv, cx, skin_cy, face_rx, face_ry, 1);
        // Hair cap: upper lobe minus the skin already painted.
        const int s = size;
        for (int y = 0; y < s; ++y)
            for (int x = 0; x < s; ++x) {
                const double fx = (x + 0.5) / s, fy = (y + 0.5) / s;
                const double dx = (fx - cx) / (face_rx + 0.05);
                const double dy = (fy - (cy - 0.13)) / 0.20;
                if (dx * dx + dy * dy <= 1.0 && cv.labels[static_cast<size_t>(y) * s + x] != 1) cv.paint(y, x, 2);
            }
    }

    const double eye_cy = skin_cy - 0.10;
    if (boxy) {
        fill_rect(cv, cx - eye_dx, eye_cy, 0.045, eye_ry, 3);
        fill_rect(cv, cx + eye_dx, eye_cy, 0.045, eye_ry, 3);
        fill_rect(cv, cx, skin_cy + 0.015, 0.028, 0.05, 4);
        fill_rect(cv, cx, skin_cy + 0.135, mouth_rx, 0.028, 5);
    } else {
        fill_ellipse(cv, cx - eye_dx, eye_cy, 0.05, eye_ry, 3);
        fill_ellipse(cv, cx + eye_dx, eye_cy, 0.05, eye_ry, 3);
        fill_ellipse(cv, cx, skin_cy + 0.015, 0.030, 0.055, 4);
        fill_ellipse(cv, cx, skin_cy + 0.135, mouth_rx, 0.032, 5);
    }

    if (glasses) {
        const double t = std::max(1.5 / size, 0.014);  // frame thickness
        const double gx = 0.075, gy = 0.055;
        for (double side : {-1.0, 1.0}) {
            const double ex = cx + side * eye_dx;
            // Outline = outer box minus inner box.
            const int s = size;
            for (int y = 0; y < s; ++y)
                for (int x = 0; x < s; ++x) {
                    const double fx = (x + 0.5) / s, fy = (y + 0.5) / s;
                    const bool outer = std::abs(fx - ex) <= gx && std::abs(fy - eye_cy) <= gy;
                    const bool inner = std::abs(fx - ex) <= gx - t && std::abs(fy - eye_cy) <= gy - t;
                    if (outer && !inner) cv.paint(y, x, 6);
                }
        }
        fill_rect(cv, cx, eye_cy, eye_dx - gx + 0.02, t * 0.5, 6);
    }

    // Render.
    Image img(3, size, size);
    for (int y = 0; y < size; ++y) {
        const double v = static_cast<double>(y) / size;
        for (int x = 0; x < size; ++x) {
            Rgb c;
            switch (cv.labels[static_cast<size_t>(y) * size + x]) {
                case 1: c = skin_c; break;
                case 2: c = hair_c; break;
                case 3: c = eye_c; break;
                case 4: c = nose_c; break;
                case 5: c = mouth_c; break;
                case 6: c = glasses_c; break;
                default:
                    c = {bg_top.r + (bg_bot.r - bg_top.r) * v, bg_top.g + (bg_bot.g - bg_top.g) * v,
                         bg_top.b + (bg_bot.b - bg_top.b) * v};
            }
            const double shade = 1.0 - 0.10 * std::abs((x + 0.5) / size - 0.5);
            img.at(0, y, x) = std::clamp(c.r * shade, 0.0, 1.0);
            img.at(1, y, x) = std::clamp(c.g * shade, 0.0, 1.0);
            img.at(2, y, x) = std::clamp(c.b * shade, 0.0, 1.0);
        }
    }
    // Mild texture so 'real' pixels are not flat.
    for (double& v : img.data) v = std::clamp(v + 0.02 * (rng.uniform() - 0.5), 0.0, 1.0);

    ProceduralSample sample;
    sample.image = std::move(img);
    sample.seg.face_region = cv.region;
    const char* names[6] = {"skin", "hair", "eyes", "nose", "mouth", "glasses"};
    for (int a = 1; a <= 6; ++a) {
        BinaryMask m(size, size);
        for (int y = 0; y < size; ++y)
            for (int x = 0; x < size; ++x)
                if (cv.labels[static_cast<size_t>(y) * size + x] == a) m.at(y, x) = 1;
        m.attribute_tag = names[a - 1];
        sample.seg.attributes.emplace_back(names[a - 1], std::move(m));
    }
    return sample;
}

std::vector<ProceduralSample> make_procedural_faces(int n, int size, uint64_t seed, int style) {
    if (n < 1) throw DomainError("make_procedural_faces: n must be >= 1");
    std::vector<ProceduralSample> out;
    out.reserve(n);
    for (int i = 0; i < n; ++i) out.push_back(make_procedural_face(size, Rng::derive(seed, {0xfaceull, static_cast<uint64_t>(i)}), style));
    return out;
}

BinaryMask dilate(const BinaryMask& mask, int kernel) {
    if (kernel < 1 || kernel % 2 == 0) throw DomainError("dilate: kernel must be a positive odd size");
    if (kernel == 1) return mask;
    const int r = kernel / 2;
    BinaryMask out(mask.h, mask.w);
    out.attribute_tag = mask.attribute_tag;
    for (int y = 0; y < mask.h; ++y)
        for (int x = 0; x < mask.w; ++x) {
            if (!mask.at(y, x)) continue;
            const int y0 = std::max(0, y - r), y1 = std::min(mask.h - 1, y + r);
            const int x0 = std::max(0, x - r), x1 = std::min(mask.w - 1, x + r);
            for (int yy = y0; yy <= y1; ++yy)
                for (int xx = x0; xx <= x1; ++xx) out.at(yy, xx) = 1;
        }
    return out;
}

BinaryMask sample_attribute_mask(const Segmentation& seg, Rng& rng, int max_dilation) {
    std::vector<const BinaryMask*> candidates;
    for (const auto& [name, mask] : seg.attributes)
        if (!mask.empty_mask()) candidates.push_back(&mask);
    if (candidates.empty()) throw DataError("sample_attribute_mask: all attributes are empty");
    const BinaryMask& chosen = *candidates[rng.uniform_int(static_cast<int>(candidates.size()))];

    const long total = static_cast<long>(chosen.h) * chosen.w;
    const bool small_part = chosen.area() < 0.05 * total;
    if (!small_part) return chosen;

    // Dilation radius capped at max_dilation pixels at the 256 reference
    // scale, proportionally rescaled to this raster.
    const int cap = std::max(1, static_cast<int>(std::lround(max_dilation * chosen.w / 256.0)));
    const int kernel = 1 + 2 * rng.uniform_int(cap + 1);  // odd sizes 1..2*cap+1
    return dilate(chosen, kernel);
}

// --- generators ---

void train_generators(const TrainGeneratorsConfig& cfg) {
    fs::create_directories(cfg.out_dir);
    auto faces = make_procedural_faces(cfg.train_images, cfg.size, Rng::derive(cfg.seed, {0x67656e,  1}), cfg.style);

    std::vector<Image> pixel_data, diffusion_data;
    pixel_data.reserve(faces.size());
    for (auto& f : faces) {
        diffusion_data.push_back(to_diffusion_space(f.image));
        pixel_data.push_back(std::move(f.image));
    }

    DiffusionSchedule schedule = DiffusionSchedule::linear(cfg.T);
    PredictorConfig pixel_cfg{3, cfg.predictor_width, cfg.T};
    NoisePredictorNet pixel(pixel_cfg, Rng::derive(cfg.seed, {0x67656e, 2}));
    Rng train_rng(Rng::derive(cfg.seed, {0x67656e, 3}));
    train_noise_predictor(pixel, diffusion_data, schedule, cfg.steps, cfg.batch, cfg.lr, train_rng);
    save_checkpoint(cfg.out_dir / "pixel.ckpt", "noise-predictor", pixel.config_string(), pixel.store());

    if (!cfg.with_latent) return;

    CodecConfig codec_cfg{3, cfg.codec_width, cfg.latent_channels};
    ConvAutoencoder codec(codec_cfg, Rng::derive(cfg.seed, {0x67656e, 4}));
    Rng codec_rng(Rng::derive(cfg.seed, {0x67656e, 5}));
    train_codec(codec, pixel_data, cfg.steps, cfg.batch, cfg.lr, codec_rng);
    save_checkpoint(cfg.out_dir / "codec.ckpt", "codec", codec.config_string(), codec.store());

    std::vector<Image> latents;
    latents.reserve(pixel_data.size());
    for (const auto& img : pixel_data) latents.push_back(codec.encode(img));
    PredictorConfig latent_cfg{cfg.latent_channels, cfg.predictor_width, cfg.T};
    NoisePredictorNet latent(latent_cfg, Rng::derive(cfg.seed, {0x67656e, 6}));
    Rng latent_rng(Rng::derive(cfg.seed, {0x67656e, 7}));
    train_noise_predictor(latent, latents, schedule, cfg.steps, cfg.batch, cfg.lr, latent_rng);
    save_checkpoint(cfg.out_dir / "latent.ckpt", "noise-predictor", latent.config_string(), latent.store());
}

Generators load_generators(const fs::path& dir, bool need_latent) {
    Generators gen;
    const fs::path pixel_path = dir / "pixel.ckpt";
    if (!fs::exists(pixel_path))
        throw MissingArtifactError("generator checkpoint " + pixel_path.string() +
                                   " is missing; run `forgeloc train-generator` first");
    CheckpointData header = peek_checkpoint(pixel_path);
    gen.pixel = std::make_unique<NoisePredictorNet>(PredictorConfig::from_string(header.config), 0);
    load_into(pixel_path, "noise-predictor", gen.pixel->config_string(), gen.pixel->store());
    gen.schedule = DiffusionSchedule::linear(gen.pixel->config().T);

    if (need_latent) {
        const fs::path codec_path = dir / "codec.ckpt";
        const fs::path latent_path = dir / "latent.ckpt";
        if (!fs::exists(codec_path) || !fs::exists(latent_path))
            throw MissingArtifactError("latent generator checkpoints are missing under " + dir.string() +
                                       "; run `forgeloc train-generator` first");
        CheckpointData codec_header = peek_checkpoint(codec_path);
        auto conv = std::make_unique<ConvAutoencoder>(CodecConfig::from_string(codec_header.config), 0);
        load_into(codec_path, "codec", conv->config_string(), conv->store());
        gen.codec = std::move(conv);
        CheckpointData latent_header = peek_checkpoint(latent_path);
        gen.latent = std::make_unique<NoisePredictorNet>(PredictorConfig::from_string(latent_header.config), 0);
        load_into(latent_path, "noise-predictor", gen.latent->config_string(), gen.latent->store());
        gen.latent_schedule = DiffusionSchedule::linear(gen.latent->config().T);
    }
    return gen;
}

// --- dataset assembly ---

std::string split_for_index(int index, int total, double train_frac, double val_frac) {
    const int n_train = static_cast<int>(std::lround(total * train_frac));
    const int n_val = static_cast<int>(std::lround(total * val_frac));
    if (index < n_train) return "train";
    if (index < n_train + n_val) return "val";
    return "test";
}

std::vector<SampleRecord> synthesize_full(const Generators& gen, int n, int size, uint64_t seed,
                                          const fs::path& out_dir, const std::string& source_tag,
                                          const std::vector<std::string>& splits) {
    if (!gen.pixel) throw ConfigError("synthesize_full: no trained generator available");
    fs::create_directories(out_dir / "images" / "full");
    MeanVarPredictor pred = gen.pixel->as_mean_var(gen.schedule);
    std::vector<SampleRecord> records;
    records.reserve(n);
    for (int i = 0; i < n; ++i) {
        Rng rng(Rng::derive(seed, {0x66756c6cull, static_cast<uint64_t>(i)}));
        Image sample = from_diffusion_space(ddpm_sample(pred, gen.schedule, 3, size, size, rng));
        const std::string rel = "../images/full/f" + std::to_string(i) + ".ppm";
        write_image(out_dir / "images" / "full" / ("f" + std::to_string(i) + ".ppm"), sample);
        records.push_back({rel, "fake", std::nullopt, "p2-analogue", source_tag,
                           splits.empty() ? "train" : splits[i % splits.size()]});
    }
    return records;
}

std::vector<std::pair<std::string, std::vector<SampleRecord>>> inpaint_local(
    const std::vector<ProceduralSample>& sources, const std::vector<std::string>& splits, const Generators& gen,
    const std::vector<std::string>& methods, int per_image, uint64_t seed, const fs::path& out_dir,
    const std::string& source_tag) {
    if (!gen.pixel) throw ConfigError("inpaint_local: no trained generator available");
    for (const auto& m : methods) {
        if (m != "repaint" && m != "repaint-ldm") throw ConfigError("inpaint_local: unknown method " + m);
        if (m == "repaint-ldm" && (!gen.codec || !gen.latent))
            throw ConfigError("inpaint_local: repaint-ldm requires codec and latent generator checkpoints");
        fs::create_directories(out_dir / "images" / m);
    }
    fs::create_directories(out_dir / "masks");

    MeanVarPredictor pixel_pred = gen.pixel->as_mean_var(gen.schedule);
    MeanVarPredictor latent_pred;
    if (gen.latent) latent_pred = gen.latent->as_mean_var(gen.latent_schedule);

    std::vector<std::pair<std::string, std::vector<SampleRecord>>> out;
    for (const auto& m : methods) out.emplace_back(m, std::vector<SampleRecord>{});

    for (size_t i = 0; i < sources.size(); ++i) {
        for (int k = 0; k < per_image; ++k) {
            Rng mask_rng(Rng::derive(seed, {0x6c6f63616cull, i, static_cast<uint64_t>(k), 0}));
            BinaryMask mask = sample_attribute_mask(sources[i].seg, mask_rng);
            const std::string mask_name = "m" + std::to_string(i) + "-" + std::to_string(k) + ".pgm";
            write_mask(out_dir / "masks" / mask_name, mask);

            for (size_t mi = 0; mi < methods.size(); ++mi) {
                // The paint stream is derived from the sample alone so that
                // methods share masks and, for an identity codec, outputs.
                Rng paint_rng(Rng::derive(seed, {0x6c6f63616cull, i, static_cast<uint64_t>(k), 1}));
                Image result;
                if (methods[mi] == "repaint") {
                    result = repaint_inpaint(sources[i].image, mask, pixel_pred, gen.schedule, paint_rng);
                } else {
                    result = repaint_ldm_inpaint(sources[i].image, mask, *gen.codec, latent_pred,
                                                 gen.latent_schedule, paint_rng);
                }
                const std::string img_name = std::to_string(i) + "-" + std::to_string(k) + ".ppm";
                write_image(out_dir / "images" / methods[mi] / img_name, result);
                out[mi].second.push_back({"../images/" + methods[mi] + "/" + img_name, "fake",
                                          "../masks/" + mask_name, methods[mi], source_tag,
                                          splits.empty() ? "train" : splits[i % splits.size()]});
            }
        }
    }
    return out;
}

namespace {

std::vector<SampleRecord> filter(const std::vector<SampleRecord>& pool, const std::string& split) {
    std::vector<SampleRecord> out;
    for (const auto& r : pool)
        if (r.split == split) out.push_back(r);
    return out;
}

// Deterministic sample without replacement; n = 0 takes everything.
std::vector<SampleRecord> take(std::vector<SampleRecord> pool, int n, Rng& rng, const char* what) {
    if (n == 0) return pool;
    if (static_cast<int>(pool.size()) < n)
        throw DataError(std::string("build_setup: pool of ") + what + " has " + std::to_string(pool.size()) +
                        " records, need " + std::to_string(n));
    for (size_t i = pool.size() - 1; i > 0; --i) std::swap(pool[i], pool[rng.uniform_int(static_cast<int>(i + 1))]);
    pool.resize(n);
    return pool;
}

}  // namespace

std::vector<SampleRecord> build_setup(const SetupSpec& spec, const GeneratedDataset& data, Rng& rng) {
    if (spec.setup != 'a' && spec.setup != 'b' && spec.setup != 'c')
        throw ConfigError("build_setup: setup must be a, b or c");
    const std::vector<SampleRecord>* locals = nullptr;
    for (const auto& [tag, records] : data.local_fakes)
        if (tag == spec.local_generator) locals = &records;
    if (!locals) throw DataError("build_setup: no locally manipulated pool for generator " + spec.local_generator);

    std::vector<SampleRecord> out;
    auto append = [&out](std::vector<SampleRecord> v) {
        for (auto& r : v) out.push_back(std::move(r));
    };

    if (spec.setup == 'a') {
        append(take(filter(data.reals, "train"), spec.train_real, rng, "train reals"));
        append(take(filter(data.full_fakes, "train"), spec.train_fake, rng, "train full fakes"));
        append(take(filter(data.reals, "val"), spec.val_real, rng, "val reals"));
        append(take(filter(data.full_fakes, "val"), spec.val_fake, rng, "val full fakes"));
    } else if (spec.setup == 'b') {
        auto strip = [](std::vector<SampleRecord> v) {
            for (auto& r : v) r.mask_path.reset();
            return v;
        };
        append(take(filter(data.reals, "train"), spec.train_real, rng, "train reals"));
        append(strip(take(filter(*locals, "train"), spec.train_fake, rng, "train local fakes")));
        append(take(filter(data.reals, "val"), spec.val_real, rng, "val reals"));
        append(strip(take(filter(*locals, "val"), spec.val_fake, rng, "val local fakes")));
    } else {
        append(take(filter(*locals, "train"), spec.train_fake, rng, "train local fakes"));
        append(take(filter(*locals, "val"), spec.val_fake, rng, "val local fakes"));
    }

    // Shared evaluation rows; setup c keeps only fakes (no real images at all).
    if (spec.setup != 'c') append(filter(data.reals, "test"));
    append(filter(*locals, "test"));
    return out;
}

GeneratedDataset generate_dataset(const GenerateConfig& cfg, const Generators& gen) {
    fs::create_directories(cfg.out_dir / "images" / "real");
    fs::create_directories(cfg.out_dir / "manifests");

    auto faces = make_procedural_faces(cfg.identities, cfg.size, Rng::derive(cfg.seed, {0x64617461ull, 0}), cfg.style);
    std::vector<std::string> splits(cfg.identities);
    for (int i = 0; i < cfg.identities; ++i) splits[i] = split_for_index(i, cfg.identities, cfg.train_frac, cfg.val_frac);

    GeneratedDataset data;
    for (int i = 0; i < cfg.identities; ++i) {
        const std::string name = "r" + std::to_string(i) + ".ppm";
        write_image(cfg.out_dir / "images" / "real" / name, faces[i].image);
        data.reals.push_back({"../images/real/" + name, "real", std::nullopt, "none", cfg.source_tag, splits[i]});
    }

    data.full_fakes = synthesize_full(gen, cfg.identities, cfg.size, Rng::derive(cfg.seed, {0x64617461ull, 1}),
                                      cfg.out_dir, cfg.source_tag, splits);

    std::vector<std::string> methods = {"repaint"};
    if (cfg.with_ldm) methods.push_back("repaint-ldm");
    data.local_fakes = inpaint_local(faces, splits, gen, methods, cfg.per_image,
                                     Rng::derive(cfg.seed, {0x64617461ull, 2}), cfg.out_dir, cfg.source_tag);

    for (char setup : {'a', 'b', 'c'}) {
        SetupSpec spec;
        spec.setup = setup;
        // Balance reals and fakes in the label-only regimes.
        const int train_locals = static_cast<int>(filter(data.local_fakes[0].second, "train").size());
        const int val_locals = static_cast<int>(filter(data.local_fakes[0].second, "val").size());
        const int train_reals = static_cast<int>(filter(data.reals, "train").size());
        const int val_reals = static_cast<int>(filter(data.reals, "val").size());
        if (setup == 'a') {
            spec.train_real = spec.train_fake = train_reals;
            spec.val_real = spec.val_fake = val_reals;
        } else if (setup == 'b') {
            spec.train_real = spec.train_fake = std::min(train_reals, train_locals);
            spec.val_real = spec.val_fake = std::min(val_reals, val_locals);
        } else {
            spec.train_fake = train_locals;
            spec.val_fake = val_locals;
        }
        Rng rng(Rng::derive(cfg.seed, {0x7365747570ull, static_cast<uint64_t>(setup)}));
        write_manifest(cfg.out_dir / "manifests" / (std::string(1, setup) + ".tsv"), build_setup(spec, data, rng));
    }
    for (const auto& [tag, records] : data.local_fakes)
        write_manifest(cfg.out_dir / "manifests" / ("gen-" + tag + ".tsv"), records);
    return data;
}

std::vector<SampleRecord> import_external(const fs::path& images_dir, const fs::path& masks_dir,
                                          const std::string& label, const std::string& source_tag,
                                          const std::string& split, const fs::path& dataset_root) {
    if (!fs::is_directory(images_dir)) throw MissingArtifactError("import: not a directory: " + images_dir.string());
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(images_dir))
        if (e.is_regular_file()) files.push_back(e.path());
    std::sort(files.begin(), files.end());

    const fs::path manifest_dir = dataset_root / "manifests";
    std::vector<SampleRecord> records;
    for (const auto& f : files) {
        SampleRecord r;
        r.image_path = fs::relative(f, manifest_dir).string();
        r.label = label;
        r.generator_tag = label == "real" ? "none" : "external";
        r.source_tag = source_tag;
        r.split = split;
        if (label == "fake" && !masks_dir.empty()) {
            const fs::path mask = masks_dir / (f.stem().string() + ".pgm");
            if (fs::exists(mask)) r.mask_path = fs::relative(mask, manifest_dir).string();
        }
        records.push_back(std::move(r));
    }
    return records;
}

}  // namespace forgeloc::datagen
