#include <doctest.h>

#include <cmath>
#include <fstream>

#include "fixtures.hpp"
#include "forgeloc/harness.hpp"
#include "test_util.hpp"

using namespace forgeloc;
using namespace forgeloc::harness;

namespace {

TrainConfig mini_train_config(const std::string& method, char setup, int epochs) {
    TrainConfig cfg;
    cfg.method = method;
    cfg.setup = setup;
    cfg.epochs = epochs;
    cfg.batch_size = 8;
    cfg.seed = 7;
    cfg.lambda_grid = {1.0};
    cfg.backbone = testutil::mini_backbone();
    return cfg;
}

std::filesystem::path manifest_for(char setup, int style = 0) {
    return testutil::mini_dataset(style) / "manifests" / (std::string(1, setup) + std::string(".tsv"));
}

uint64_t model_checksum(MethodModel& model) {
    uint64_t h = 0;
    for (const auto& p : model.store().params()) h ^= p.tensor.checksum() + 0x9e3779b97f4a7c15ull + (h << 6);
    return h;
}

// Evaluation oracle injected through the MethodModel surface: keyed by a
// content hash of the image, returns stored maps/scores.
struct InjectedModel : MethodModel {
    std::map<uint64_t, LocalizationMap> maps;
    std::map<uint64_t, double> scores;
    BackboneConfig cfg = testutil::mini_backbone();

    static uint64_t key(const Image& img) { return image_to_tensor(img).checksum(); }

    LocalizationMap localize(const Image& img) override {
        auto it = maps.find(key(img));
        REQUIRE(it != maps.end());
        return it->second;
    }
    double score(const Image& img) override {
        auto it = scores.find(key(img));
        REQUIRE(it != scores.end());
        return it->second;
    }
    std::string kind() const override { return "injected"; }
    std::string config_string() const override { return ""; }
    nn::ParamStore& store() override { return store_; }
    void set_training(bool) override {}
    const BackboneConfig& base_config() const override { return cfg; }

    nn::ParamStore store_;
};

}  // namespace

TEST_SUITE_BEGIN("harness");

TEST_CASE("train: epochs=0 returns the initialized model unchanged") {
    TrainConfig cfg = mini_train_config("patches", 'c', 0);
    TrainResult result = train(cfg, manifest_for('c'));
    auto fresh = make_method_model("patches", cfg.backbone, cfg.seed);
    CHECK(model_checksum(*result.model) == model_checksum(*fresh));
    CHECK(result.log.empty());
}

TEST_CASE("train: fixed seed reproduces the final checkpoint exactly") {
    TrainConfig cfg = mini_train_config("patches", 'c', 2);
    TrainResult a = train(cfg, manifest_for('c'));
    TrainResult b = train(cfg, manifest_for('c'));
    CHECK(model_checksum(*a.model) == model_checksum(*b.model));
    REQUIRE(a.log.size() == b.log.size());
    for (size_t i = 0; i < a.log.size(); ++i) {
        CHECK(a.log[i].train_loss == b.log[i].train_loss);
        CHECK(a.log[i].val_loss == b.log[i].val_loss);
    }
}

TEST_CASE("train: supervised patches training converges on the mini dataset") {
    TrainConfig cfg = mini_train_config("patches", 'c', 12);
    TrainResult result = train(cfg, manifest_for('c'));
    REQUIRE(result.log.size() == 12);
    CHECK(result.log.back().train_loss <= 0.5 * result.log.front().train_loss);
    CHECK(result.best_epoch >= 1);
}

TEST_CASE("train: setup routing never opens masks in label-only regimes") {
    for (char setup : {'a', 'b'}) {
        reset_io_stats();
        TrainConfig cfg = mini_train_config("patches", setup, 1);
        TrainResult result = train(cfg, manifest_for(setup));
        CHECK(io_stats().masks_read.load() == 0);
        CHECK(result.log.size() == 1);
    }

    // Setup c loads masks but never real rows.
    reset_io_stats();
    auto records = datagen::load_manifest(manifest_for('c'));
    LoadedData data = load_training_data(records, manifest_for('c'), 'c');
    CHECK(data.real_reads == 0);
    CHECK(io_stats().masks_read.load() > 0);

    // Misrouted manifests are configuration errors.
    CHECK_THROWS_AS(train(mini_train_config("patches", 'c', 1), manifest_for('a')), ConfigError);
    CHECK_THROWS_AS(train(mini_train_config("patches", 'c', 1), manifest_for('b')), ConfigError);
}

TEST_CASE("train: attention lambda grid selects on validation AP") {
    TrainConfig cfg = mini_train_config("attention", 'b', 2);
    cfg.lambda_grid = {0.1, 1.0};
    TrainResult result = train(cfg, manifest_for('b'));
    CHECK((result.selected_lambda == 0.1 || result.selected_lambda == 1.0));
    CHECK_FALSE(result.log.empty());
}

TEST_CASE("training log: documented four-column format") {
    const auto dir = testutil::fresh_dir("harness_log");
    std::vector<EpochLog> log = {{1, 0.5, 0.6, 55.0}, {2, 0.4, 0.5, 60.0}};
    write_training_log(dir / "train.log", log);
    std::ifstream in(dir / "train.log");
    std::string header;
    std::getline(in, header);
    CHECK(header == "epoch\ttrain_loss\tval_loss\tval_metric");
    int rows = 0;
    std::string line;
    while (std::getline(in, line))
        if (!line.empty()) ++rows;
    CHECK(rows == 2);
}

TEST_CASE("evaluate_localization: injected oracle scores a perfect 100/100") {
    const auto root = testutil::mini_dataset();
    const auto manifest = manifest_for('c');
    auto records = datagen::load_manifest(manifest);

    InjectedModel oracle;
    double expected_pbca_for_zero = 0.0;
    long fakes = 0;
    for (const auto& r : records) {
        if (r.split != "test" || r.label != "fake") continue;
        Image img = read_image(datagen::resolve_record_path(manifest, r.image_path));
        BinaryMask gt = read_mask(datagen::resolve_record_path(manifest, *r.mask_path));
        LocalizationMap map(gt.h, gt.w, HeadKind::fcn);
        for (size_t i = 0; i < gt.values.size(); ++i) map.values[i] = gt.values[i];
        oracle.maps[InjectedModel::key(img)] = map;
        oracle.scores[InjectedModel::key(img)] = 1.0;
        expected_pbca_for_zero += 1.0 - static_cast<double>(gt.area()) / gt.values.size();
        ++fakes;
    }
    REQUIRE(fakes > 0);
    EvalResult r1 = evaluate_localization(oracle, records, manifest);
    CHECK(r1.iou_percent == doctest::Approx(100.0));
    CHECK(r1.pbca_percent == doctest::Approx(100.0));
    CHECK(static_cast<long>(r1.per_sample.size()) == fakes);

    // Constant-zero model: IoU 0, PBCA equals the mean real-pixel fraction.
    InjectedModel zero;
    for (auto& [k, m] : oracle.maps) {
        LocalizationMap z(m.h, m.w, HeadKind::fcn);
        zero.maps[k] = z;
        zero.scores[k] = 0.0;
    }
    EvalResult r0 = evaluate_localization(zero, records, manifest);
    CHECK(r0.iou_percent == doctest::Approx(0.0));
    CHECK(r0.pbca_percent == doctest::Approx(100.0 * expected_pbca_for_zero / fakes));

    // Determinism across runs.
    EvalResult r2 = evaluate_localization(oracle, records, manifest);
    for (size_t i = 0; i < r1.per_sample.size(); ++i) {
        CHECK(r1.per_sample[i].iou == r2.per_sample[i].iou);
        CHECK(r1.per_sample[i].pbca == r2.per_sample[i].pbca);
    }
}

TEST_CASE("evaluate_detection: oracle, anti-oracle and degenerate manifests") {
    const auto manifest = manifest_for('b');
    auto records = datagen::load_manifest(manifest);

    InjectedModel oracle, anti;
    long reals = 0, fakes = 0;
    for (const auto& r : records) {
        if (r.split != "test") continue;
        Image img = read_image(datagen::resolve_record_path(manifest, r.image_path));
        const bool fake = r.label == "fake";
        oracle.scores[InjectedModel::key(img)] = fake ? 0.9 : 0.1;
        anti.scores[InjectedModel::key(img)] = fake ? 0.1 : 0.9;
        (fake ? fakes : reals) += 1;
    }
    REQUIRE(reals > 0);
    REQUIRE(fakes > 0);
    CHECK(evaluate_detection(oracle, records, manifest) == doctest::Approx(100.0));

    // Worst ranking: every real above every fake.
    double worst = 0.0;
    for (long k = 1; k <= fakes; ++k) worst += static_cast<double>(k) / (reals + k);
    worst = 100.0 * worst / fakes;
    CHECK(evaluate_detection(anti, records, manifest) == doctest::Approx(worst));

    auto fakes_only = records;
    std::erase_if(fakes_only, [](const datagen::SampleRecord& r) { return r.label == "real"; });
    CHECK_THROWS_AS(evaluate_detection(oracle, fakes_only, manifest), DomainError);
}

TEST_CASE("evaluate_detection: a random scorer sits near the prevalence baseline") {
    Rng rng(171);
    double total = 0.0;
    const int trials = 1000;
    for (int trial = 0; trial < trials; ++trial) {
        std::vector<ScoredLabel> scored;
        for (int i = 0; i < 10; ++i) scored.push_back({rng.uniform(), 1});
        for (int i = 0; i < 10; ++i) scored.push_back({rng.uniform(), 0});
        total += average_precision(scored);
    }
    const double mean_ap = total / trials;
    CHECK(mean_ap > 0.50);
    CHECK(mean_ap < 0.60);
}

TEST_CASE("evaluation is side-effect-free on the model parameters") {
    TrainConfig cfg = mini_train_config("patches", 'c', 1);
    TrainResult result = train(cfg, manifest_for('c'));
    const uint64_t before = model_checksum(*result.model);
    auto records = datagen::load_manifest(manifest_for('c'));
    evaluate_localization(*result.model, records, manifest_for('c'));
    CHECK(model_checksum(*result.model) == before);
}

TEST_CASE("cross_generator_matrix: 1x1 spec reduces to plain evaluation") {
    MatrixSpec spec;
    spec.train_sets = {{"repaint", manifest_for('c')}};
    spec.test_sets = {{"repaint", manifest_for('c')}};
    TrainConfig cfg = mini_train_config("patches", 'c', 3);
    MatrixResult m = cross_generator_matrix(spec, cfg, 1);
    REQUIRE(m.iou_percent.size() == 1);
    REQUIRE(m.iou_percent[0].size() == 1);

    TrainConfig direct_cfg = cfg;
    direct_cfg.seed = Rng::derive(cfg.seed, {0x6d6174726978ull, 0});
    TrainResult direct = train(direct_cfg, manifest_for('c'));
    auto records = datagen::load_manifest(manifest_for('c'));
    EvalResult expect = evaluate_localization(*direct.model, records, manifest_for('c'));
    CHECK(m.iou_percent[0][0] == expect.iou_percent);
    CHECK(m.iou_percent[0][0] >= 0.0);
    CHECK(m.iou_percent[0][0] <= 100.0);
}

TEST_CASE("cross_generator_matrix: generator transfer favours the diagonal") {
    const auto root = testutil::mini_dataset();
    MatrixSpec spec;
    spec.train_sets = {{"repaint", root / "manifests" / "gen-repaint.tsv"},
                       {"repaint-ldm", root / "manifests" / "gen-repaint-ldm.tsv"}};
    spec.test_sets = spec.train_sets;
    TrainConfig cfg = mini_train_config("patches", 'c', 8);
    MatrixResult m = cross_generator_matrix(spec, cfg, 2);
    REQUIRE(m.iou_percent.size() == 2);
    for (const auto& row : m.iou_percent)
        for (double v : row) {
            CHECK(v >= 0.0);
            CHECK(v <= 100.0);
        }
    const double diag = 0.5 * (m.iou_percent[0][0] + m.iou_percent[1][1]);
    const double off = 0.5 * (m.iou_percent[0][1] + m.iou_percent[1][0]);
    CHECK(diag >= off);

    // Duplicate names and missing manifests are rejected.
    MatrixSpec dup = spec;
    dup.train_sets.push_back(spec.train_sets[0]);
    CHECK_THROWS_AS(cross_generator_matrix(dup, cfg, 1), ConfigError);
    MatrixSpec missing = spec;
    missing.test_sets[0].second = root / "manifests" / "nope.tsv";
    CHECK_THROWS_AS(cross_generator_matrix(missing, cfg, 1), MissingArtifactError);
}

TEST_CASE("matrix tsv roundtrip") {
    const auto dir = testutil::fresh_dir("harness_matrix");
    MatrixResult m;
    m.train_names = {"a", "b"};
    m.test_names = {"x", "y", "z"};
    m.iou_percent = {{10.04, 20.06, 30.0}, {40.0, 50.0, 60.09}};
    write_matrix_tsv(dir / "m.tsv", m);
    MatrixResult back = read_matrix_tsv(dir / "m.tsv");
    CHECK(back.train_names == m.train_names);
    CHECK(back.test_names == m.test_names);
    CHECK(back.iou_percent[0][0] == doctest::Approx(10.0));
    CHECK(back.iou_percent[1][2] == doctest::Approx(60.1));
}

TEST_CASE("dataset_shift_experiment: shape, reduction and source match advantage") {
    const auto root0 = testutil::mini_dataset(0);
    const auto root1 = testutil::mini_dataset(1);
    ShiftSource src_same{"same", {{'c', root0 / "manifests" / "c.tsv"}}};
    ShiftSource src_diff{"diff", {{'c', root1 / "manifests" / "c.tsv"}}};
    TrainConfig cfg = mini_train_config("patches", 'c', 8);

    auto cells = dataset_shift_experiment(cfg, {'c'}, src_same, src_diff, root0 / "manifests" / "c.tsv", 4);
    REQUIRE(cells.size() == 2);
    CHECK(cells[0].setup == 'c');
    CHECK(cells[0].source == "same");
    CHECK(cells[1].source == "diff");
    for (const auto& cell : cells) {
        CHECK(cell.curve.size() == 4);
        CHECK(cell.result.iou_percent >= 0.0);
        CHECK(cell.result.iou_percent <= 100.0);
    }
    // Matched source data localizes at least as well as the mismatched one.
    CHECK(cells[0].result.iou_percent >= cells[1].result.iou_percent);

    // The same-source cell reproduces a plain train+evaluate run.
    TrainConfig direct_cfg = cfg;
    direct_cfg.setup = 'c';
    direct_cfg.seed = Rng::derive(cfg.seed, {0x7368696674ull, static_cast<uint64_t>('c'), std::hash<std::string>{}("same")});
    TrainResult direct = train(direct_cfg, root0 / "manifests" / "c.tsv");
    auto records = datagen::load_manifest(root0 / "manifests" / "c.tsv");
    EvalResult expect = evaluate_localization(*direct.model, records, root0 / "manifests" / "c.tsv");
    CHECK(cells[0].result.iou_percent == expect.iou_percent);
}

TEST_SUITE_END();
