#include "forgeloc/harness.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <thread>

namespace forgeloc::harness {

namespace fs = std::filesystem;

namespace {

std::string sample_id_from_path(const std::string& rel) { return fs::path(rel).stem().string(); }

std::string model_kind_for(const std::string& method, char setup) {
    if (method == "gradcam") return setup == 'c' ? "fcn" : "gradcam";
    if (method == "patches") return "patches";
    if (method == "attention") return "attention";
    throw ConfigError("unknown method: " + method);
}

// Per-sample training loss for every method/setup combination.
Tensor sample_loss(MethodModel& model, const LoadedSample& s, char setup, double lambda) {
    const std::string kind = model.kind();
    if (kind == "gradcam") {
        auto& m = static_cast<GradCamModel&>(model);
        Tensor p = sigmoid(m.logit(s.image));
        Tensor pc = clamp(p, 1e-7, 1.0 - 1e-7);
        return s.label == 1 ? neg(log_e(pc)) : neg(log_e(add_scalar(neg(pc), 1.0)));
    }
    if (kind == "fcn") {
        auto& m = static_cast<FcnModel&>(model);
        return supervised_loss_t(m.dense_map(s.image), *s.mask);
    }
    if (kind == "patches") {
        auto& m = static_cast<PatchesModel&>(model);
        Tensor probs = m.patch_fake_probs(s.image);
        if (setup == 'c') return supervised_loss_t(probs, *s.mask);
        // Image label broadcast to every patch position.
        Tensor target = Tensor::full(probs.shape(), static_cast<double>(s.label));
        return bce_mean(probs, target);
    }
    if (kind == "attention") {
        auto& m = static_cast<AttentionModel&>(model);
        AttentionModel::Forward f = m.forward(s.image);
        if (setup == 'c') return supervised_loss_t(f.mask, *s.mask);
        return attention_loss_t(s.label, f.y_hat, f.mask, AttentionLossConfig{lambda});
    }
    throw ConfigError("sample_loss: unknown model kind " + kind);
}

struct ParamSnapshot {
    std::vector<std::vector<double>> params, buffers;

    static ParamSnapshot capture(nn::ParamStore& store) {
        ParamSnapshot s;
        for (auto& p : store.params()) s.params.emplace_back(p.tensor.values().begin(), p.tensor.values().end());
        for (auto& b : store.buffers()) s.buffers.emplace_back(b.tensor.values().begin(), b.tensor.values().end());
        return s;
    }
    void restore(nn::ParamStore& store) const {
        for (size_t i = 0; i < params.size(); ++i)
            std::copy(params[i].begin(), params[i].end(), store.params()[i].tensor.raw_values().begin());
        for (size_t i = 0; i < buffers.size(); ++i)
            std::copy(buffers[i].begin(), buffers[i].end(), store.buffers()[i].tensor.raw_values().begin());
    }
};

double validation_metric(MethodModel& model, const std::vector<LoadedSample>& val, char setup) {
    model.set_training(false);
    if (setup == 'c') {
        // Mean IoU% against masks at image resolution.
        double sum = 0.0;
        long n = 0;
        for (const auto& s : val) {
            if (!s.mask) continue;
            LocalizationMap map = model.localize(s.image);
            BinaryMask pred = binarize(resize_map(map, s.image.h, s.image.w));
            sum += iou(pred, *s.mask);
            ++n;
        }
        model.set_training(true);
        return n == 0 ? 0.0 : 100.0 * sum / n;
    }
    std::vector<ScoredLabel> scored;
    scored.reserve(val.size());
    for (const auto& s : val) scored.push_back({model.score(s.image), s.label});
    model.set_training(true);
    bool has_pos = false, has_neg = false;
    for (const auto& s : scored) (s.label ? has_pos : has_neg) = true;
    if (!has_pos || !has_neg) return 0.0;
    return 100.0 * average_precision(scored);
}

double validation_loss(MethodModel& model, const std::vector<LoadedSample>& val, char setup, double lambda) {
    NoGradGuard ng;
    model.set_training(false);
    double sum = 0.0;
    for (const auto& s : val) sum += sample_loss(model, s, setup, lambda).item();
    model.set_training(true);
    return val.empty() ? 0.0 : sum / val.size();
}

TrainResult train_single(const TrainConfig& config, const LoadedData& data, double lambda) {
    TrainResult result;
    result.selected_lambda = lambda;
    result.model = make_method_model(model_kind_for(config.method, config.setup), config.backbone, config.seed);
    MethodModel& model = *result.model;

    if (config.epochs == 0) return result;

    nn::Adam opt(model.store().params(), config.lr);
    model.set_training(true);

    ParamSnapshot best = ParamSnapshot::capture(model.store());
    double best_val = std::numeric_limits<double>::infinity();

    std::vector<size_t> order(data.train.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        Rng shuffle_rng(Rng::derive(config.seed, {0x65706f6368ull, static_cast<uint64_t>(epoch)}));
        for (size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle_rng.uniform_int(static_cast<int>(i))]);

        double epoch_loss = 0.0;
        size_t done = 0;
        while (done < order.size()) {
            const size_t batch_end = std::min(done + static_cast<size_t>(config.batch_size), order.size());
            const double inv = 1.0 / static_cast<double>(batch_end - done);
            opt.zero_grad();
            for (size_t i = done; i < batch_end; ++i) {
                Tensor loss = mul_scalar(sample_loss(model, data.train[order[i]], config.setup, lambda), inv);
                loss.backward();
                epoch_loss += loss.item() / inv;
            }
            opt.step();
            done = batch_end;
        }
        epoch_loss /= std::max<size_t>(1, order.size());

        EpochLog log;
        log.epoch = epoch;
        log.train_loss = epoch_loss;
        log.val_loss = validation_loss(model, data.val, config.setup, lambda);
        log.val_metric = validation_metric(model, data.val, config.setup);
        result.log.push_back(log);

        if (log.val_loss < best_val) {
            best_val = log.val_loss;
            best = ParamSnapshot::capture(model.store());
            result.best_epoch = epoch;
        }
    }

    best.restore(model.store());
    model.set_training(false);
    return result;
}

}  // namespace

LoadedData load_training_data(const std::vector<datagen::SampleRecord>& records, const fs::path& manifest_path,
                              char setup) {
    const long masks_before = io_stats().masks_read.load();
    LoadedData data;
    for (const auto& r : records) {
        if (r.split != "train" && r.split != "val") continue;
        if (setup == 'c') {
            if (r.label == "real")
                throw ConfigError("setup c manifest must not contain real training rows (" + r.image_path + ")");
            if (!r.mask_path) throw ConfigError("setup c requires a mask for every training row (" + r.image_path + ")");
        }
        LoadedSample s;
        s.id = sample_id_from_path(r.image_path);
        s.image = read_image(datagen::resolve_record_path(manifest_path, r.image_path));
        s.label = r.label == "fake" ? 1 : 0;
        if (setup == 'c') s.mask = read_mask(datagen::resolve_record_path(manifest_path, *r.mask_path));
        if (r.label == "real") ++data.real_reads;
        (r.split == "train" ? data.train : data.val).push_back(std::move(s));
    }
    if (data.train.empty()) throw DataError("manifest has no training rows");
    if (setup != 'c') {
        bool has_real = false, has_fake = false;
        for (const auto& s : data.train) (s.label ? has_fake : has_real) = true;
        if (!has_real || !has_fake)
            throw ConfigError("label-only setups need both real and fake training rows");
    }
    data.mask_reads = io_stats().masks_read.load() - masks_before;
    return data;
}

TrainResult train(const TrainConfig& config, const fs::path& manifest_path) {
    return train(config, datagen::load_manifest(manifest_path), manifest_path);
}

TrainResult train(const TrainConfig& config, const std::vector<datagen::SampleRecord>& records,
                  const fs::path& manifest_path) {
    if (config.setup != 'a' && config.setup != 'b' && config.setup != 'c')
        throw ConfigError("train: setup must be a, b or c");
    if (config.epochs < 0 || config.batch_size < 1) throw ConfigError("train: bad epochs/batch size");

    LoadedData data = load_training_data(records, manifest_path, config.setup);

    const bool grid_applies = config.method == "attention" && config.setup != 'c' && config.lambda_grid.size() > 1;
    if (!grid_applies) {
        const double lambda = config.lambda_grid.empty() ? 1.0 : config.lambda_grid.front();
        return train_single(config, data, lambda);
    }

    // Cross-validate lambda on validation detection AP.
    TrainResult best;
    double best_ap = -1.0;
    for (double lambda : config.lambda_grid) {
        TrainResult r = train_single(config, data, lambda);
        const double ap = r.log.empty() ? 0.0 : r.log[static_cast<size_t>(r.best_epoch > 0 ? r.best_epoch - 1 : 0)].val_metric;
        if (ap > best_ap) {
            best_ap = ap;
            best = std::move(r);
        }
    }
    return best;
}

void write_training_log(const fs::path& path, const std::vector<EpochLog>& log) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw DataError("cannot open training log for writing: " + path.string());
    out << "epoch\ttrain_loss\tval_loss\tval_metric\n";
    out.setf(std::ios::fixed);
    out.precision(6);
    for (const auto& e : log) out << e.epoch << "\t" << e.train_loss << "\t" << e.val_loss << "\t" << e.val_metric << "\n";
}

EvalResult evaluate_localization(MethodModel& model, const std::vector<datagen::SampleRecord>& records,
                                 const fs::path& manifest_path) {
    model.set_training(false);
    EvalResult result;
    double iou_sum = 0.0, pbca_sum = 0.0;
    for (const auto& r : records) {
        if (r.split != "test" || r.label != "fake") continue;
        if (!r.mask_path) throw DataError("localization test row is missing its mask: " + r.image_path);
        Image img = read_image(datagen::resolve_record_path(manifest_path, r.image_path));
        BinaryMask gt = read_mask(datagen::resolve_record_path(manifest_path, *r.mask_path));
        LocalizationMap map = model.localize(img);
        BinaryMask pred = binarize(resize_map(map, img.h, img.w));

        PerSampleResult ps;
        ps.sample_id = sample_id_from_path(r.image_path);
        ps.iou = iou(pred, gt);
        ps.pbca = pbca(pred, gt);
        ps.mask_area_percent = 100.0 * static_cast<double>(gt.area()) / (static_cast<double>(gt.h) * gt.w);
        iou_sum += ps.iou;
        pbca_sum += ps.pbca;
        result.per_sample.push_back(std::move(ps));
    }
    if (result.per_sample.empty()) throw DataError("no fake test rows to evaluate");
    result.iou_percent = 100.0 * iou_sum / result.per_sample.size();
    result.pbca_percent = 100.0 * pbca_sum / result.per_sample.size();
    return result;
}

EvalResult evaluate_localization(const fs::path& checkpoint, const fs::path& manifest_path) {
    auto model = load_method_model(checkpoint);
    return evaluate_localization(*model, datagen::load_manifest(manifest_path), manifest_path);
}

double evaluate_detection(MethodModel& model, const std::vector<datagen::SampleRecord>& records,
                          const fs::path& manifest_path) {
    model.set_training(false);
    std::vector<ScoredLabel> scored;
    for (const auto& r : records) {
        if (r.split != "test") continue;
        Image img = read_image(datagen::resolve_record_path(manifest_path, r.image_path));
        scored.push_back({model.score(img), r.label == "fake" ? 1 : 0});
    }
    bool has_pos = false, has_neg = false;
    for (const auto& s : scored) (s.label ? has_pos : has_neg) = true;
    if (!has_pos || !has_neg) throw DomainError("detection needs both real and fake test rows");
    return 100.0 * average_precision(scored);
}

double evaluate_detection(const fs::path& checkpoint, const fs::path& manifest_path) {
    auto model = load_method_model(checkpoint);
    return evaluate_detection(*model, datagen::load_manifest(manifest_path), manifest_path);
}

std::vector<ShiftCell> dataset_shift_experiment(const TrainConfig& base, const std::vector<char>& setups,
                                                const ShiftSource& source_a, const ShiftSource& source_b,
                                                const fs::path& test_manifest, int curve_bins) {
    auto test_records = datagen::load_manifest(test_manifest);
    std::vector<ShiftCell> cells;
    for (char setup : setups) {
        for (const ShiftSource* src : {&source_a, &source_b}) {
            auto it = src->manifests.find(setup);
            if (it == src->manifests.end())
                throw ConfigError("dataset shift: source " + src->name + " has no manifest for setup " +
                                  std::string(1, setup));
            TrainConfig cfg = base;
            cfg.setup = setup;
            cfg.seed = Rng::derive(base.seed, {0x7368696674ull, static_cast<uint64_t>(setup), std::hash<std::string>{}(src->name)});
            TrainResult trained = train(cfg, it->second);
            ShiftCell cell;
            cell.setup = setup;
            cell.source = src->name;
            cell.result = evaluate_localization(*trained.model, test_records, test_manifest);
            if (setup != 'c') {
                bool has_real = false;
                for (const auto& r : test_records) has_real |= r.split == "test" && r.label == "real";
                if (has_real) cell.result.ap_percent = evaluate_detection(*trained.model, test_records, test_manifest);
            }
            cell.curve = iou_vs_area_curve(cell.result.per_sample, curve_bins);
            cells.push_back(std::move(cell));
        }
    }
    return cells;
}

MatrixResult cross_generator_matrix(const MatrixSpec& spec, const TrainConfig& base, int jobs) {
    if (spec.train_sets.empty() || spec.test_sets.empty()) throw ConfigError("matrix: needs train and test sets");
    for (const auto& [name, path] : spec.train_sets)
        if (!fs::exists(path)) throw MissingArtifactError("matrix: train manifest missing: " + path.string());
    for (const auto& [name, path] : spec.test_sets)
        if (!fs::exists(path)) throw MissingArtifactError("matrix: test manifest missing: " + path.string());
    for (size_t i = 0; i < spec.train_sets.size(); ++i)
        for (size_t j = i + 1; j < spec.train_sets.size(); ++j)
            if (spec.train_sets[i].first == spec.train_sets[j].first)
                throw ConfigError("matrix: duplicate train set " + spec.train_sets[i].first);

    MatrixResult result;
    for (const auto& [name, path] : spec.train_sets) result.train_names.push_back(name);
    for (const auto& [name, path] : spec.test_sets) result.test_names.push_back(name);
    result.iou_percent.assign(spec.train_sets.size(), std::vector<double>(spec.test_sets.size(), 0.0));

    auto run_row = [&](size_t row) {
        TrainConfig cfg = base;
        cfg.seed = Rng::derive(base.seed, {0x6d6174726978ull, row});
        TrainResult trained = train(cfg, spec.train_sets[row].second);
        for (size_t col = 0; col < spec.test_sets.size(); ++col) {
            auto records = datagen::load_manifest(spec.test_sets[col].second);
            result.iou_percent[row][col] =
                evaluate_localization(*trained.model, records, spec.test_sets[col].second).iou_percent;
        }
    };

    if (jobs <= 1) {
        for (size_t row = 0; row < spec.train_sets.size(); ++row) run_row(row);
    } else {
        std::vector<std::thread> workers;
        std::atomic<size_t> next{0};
        const int n = std::min<int>(jobs, static_cast<int>(spec.train_sets.size()));
        for (int w = 0; w < n; ++w)
            workers.emplace_back([&] {
                for (size_t row = next.fetch_add(1); row < spec.train_sets.size(); row = next.fetch_add(1)) run_row(row);
            });
        for (auto& t : workers) t.join();
    }
    return result;
}

void write_matrix_tsv(const fs::path& path, const MatrixResult& matrix) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw DataError("cannot open matrix file for writing: " + path.string());
    out << "train\\test";
    for (const auto& n : matrix.test_names) out << "\t" << n;
    out << "\n";
    for (size_t r = 0; r < matrix.train_names.size(); ++r) {
        out << matrix.train_names[r];
        for (double v : matrix.iou_percent[r]) out << "\t" << format_percent(v);
        out << "\n";
    }
}

MatrixResult read_matrix_tsv(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw MissingArtifactError("matrix file not found: " + path.string());
    MatrixResult m;
    std::string line;
    if (!std::getline(in, line)) throw ParseError("empty matrix file " + path.string(), 1);
    {
        std::istringstream ls(line);
        std::string cell;
        std::getline(ls, cell, '\t');  // corner label
        while (std::getline(ls, cell, '\t')) m.test_names.push_back(cell);
    }
    long line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string cell;
        std::getline(ls, cell, '\t');
        m.train_names.push_back(cell);
        std::vector<double> row;
        while (std::getline(ls, cell, '\t')) row.push_back(std::stod(cell));
        if (row.size() != m.test_names.size()) throw ParseError("matrix row width mismatch in " + path.string(), line_no);
        m.iou_percent.push_back(std::move(row));
    }
    return m;
}

}  // namespace forgeloc::harness
