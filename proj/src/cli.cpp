#include "forgeloc/cli.hpp"

#include <CLI11.hpp>
#include <fstream>
#include <iostream>

#include "forgeloc/datagen.hpp"
#include "forgeloc/harness.hpp"
#include "forgeloc/plot.hpp"

namespace forgeloc::cli {

namespace fs = std::filesystem;

namespace {

struct GlobalOpts {
    uint64_t seed = 0;
    std::string out = "out";
    int jobs = 1;
};

void write_snapshot(const fs::path& out_dir, CLI::App& app) {
    fs::create_directories(out_dir);
    std::ofstream snap(out_dir / "resolved.cfg");
    snap << app.config_to_str(true, false);
}

BackboneConfig backbone_from_flags(const std::string& preset, int input_size, const std::vector<int>& widths,
                                   const std::vector<int>& downsample, int patches_trunc, int gradcam_trunc,
                                   int attention_block) {
    BackboneConfig cfg;
    if (preset == "desk") cfg = BackboneConfig::desk();
    else if (preset == "paper") cfg = BackboneConfig::paper();
    else if (preset == "custom") {
        cfg.preset = "custom";
        if (widths.empty()) throw ConfigError("custom preset requires --widths");
        cfg.channel_widths = widths;
        cfg.num_blocks = static_cast<int>(widths.size());
        cfg.downsample_blocks.clear();
        for (int d : downsample) cfg.downsample_blocks.insert(d);
    } else {
        throw ConfigError("unknown preset: " + preset);
    }
    if (input_size > 0) cfg.input_size = input_size;
    if (patches_trunc > 0) cfg.patches_truncation_override = patches_trunc;
    if (gradcam_trunc > 0) cfg.gradcam_truncation_override = gradcam_trunc;
    if (attention_block > 0) cfg.attention_block_override = attention_block;
    cfg.validate();
    return cfg;
}

std::pair<std::string, fs::path> parse_named_manifest(const std::string& arg) {
    const auto eq = arg.find('=');
    if (eq == std::string::npos) throw ConfigError("expected name=manifest, got: " + arg);
    return {arg.substr(0, eq), fs::path(arg.substr(eq + 1))};
}

}  // namespace

int run(const std::vector<std::string>& args) {
    CLI::App app{"forgery localization toolkit: data generation, training, evaluation and experiments"};
    app.set_config("--config", "", "declarative config file; command-line flags override file values");
    app.allow_config_extras(false);
    app.require_subcommand(1);

    GlobalOpts g;
    app.add_option("--seed", g.seed, "master seed; pins every output byte-for-byte")->capture_default_str();
    app.add_option("--out", g.out, "output directory")->capture_default_str();
    app.add_option("--jobs", g.jobs, "worker parallelism cap")->capture_default_str();

    // --- generate ---
    auto* gen_cmd = app.add_subcommand("generate", "build dataset images, masks and setup manifests");
    struct {
        int size = 64, identities = 139, per_image = 3, style = 0;
        std::string source_tag = "desk0";
        bool with_ldm = false;
        std::string generators;
        bool train_generators = false;
        std::string import_images, import_masks, import_label = "fake", import_split = "test",
                    import_source = "external";
    } go;
    gen_cmd->add_option("--size", go.size)->capture_default_str();
    gen_cmd->add_option("--identities", go.identities)->capture_default_str();
    gen_cmd->add_option("--per-image", go.per_image, "inpaintings per identity")->capture_default_str();
    gen_cmd->add_option("--style", go.style, "procedural style (0 or 1)")->capture_default_str();
    gen_cmd->add_option("--source-tag", go.source_tag)->capture_default_str();
    gen_cmd->add_flag("--with-ldm", go.with_ldm, "also inpaint with the latent-space method");
    gen_cmd->add_option("--generators", go.generators, "directory holding generator checkpoints");
    gen_cmd->add_flag("--train-generators", go.train_generators, "train missing generator checkpoints first");
    gen_cmd->add_option("--import-images", go.import_images, "import an external image directory instead of generating");
    gen_cmd->add_option("--import-masks", go.import_masks);
    gen_cmd->add_option("--import-label", go.import_label)->check(CLI::IsMember({"real", "fake"}));
    gen_cmd->add_option("--import-split", go.import_split)->check(CLI::IsMember({"train", "val", "test"}));
    gen_cmd->add_option("--import-source", go.import_source);

    // --- train-generator ---
    auto* tg_cmd = app.add_subcommand("train-generator", "train the diffusion generator (and codec + latent variant)");
    datagen::TrainGeneratorsConfig tg;
    std::string tg_out;
    bool tg_no_latent = false;
    tg_cmd->add_option("--size", tg.size)->capture_default_str();
    tg_cmd->add_option("--style", tg.style)->capture_default_str();
    tg_cmd->add_option("--train-images", tg.train_images)->capture_default_str();
    tg_cmd->add_option("--steps", tg.steps)->capture_default_str();
    tg_cmd->add_option("--batch", tg.batch)->capture_default_str();
    tg_cmd->add_option("--lr", tg.lr)->capture_default_str();
    tg_cmd->add_option("--T", tg.T, "diffusion steps")->capture_default_str();
    tg_cmd->add_option("--width", tg.predictor_width)->capture_default_str();
    tg_cmd->add_option("--codec-width", tg.codec_width)->capture_default_str();
    tg_cmd->add_option("--latent-channels", tg.latent_channels)->capture_default_str();
    tg_cmd->add_flag("--no-latent", tg_no_latent, "skip codec and latent generator");
    tg_cmd->add_option("--generators-out", tg_out, "defaults to <out>/generators");

    // --- train ---
    auto* train_cmd = app.add_subcommand("train", "train a localization method on a setup manifest");
    struct {
        std::string method = "patches", manifest, setup = "c";
        int epochs = 10, batch = 16;
        double lr = 1e-3;
        std::vector<double> lambda_grid;
        std::string checkpoint_out, log_out;
        std::string preset = "desk";
        int input_size = 0, patches_trunc = 0, gradcam_trunc = 0, attention_block = 0;
        std::vector<int> widths, downsample;
    } to;
    train_cmd->add_option("--method", to.method)->check(CLI::IsMember({"gradcam", "patches", "attention"}))->capture_default_str();
    train_cmd->add_option("--setup", to.setup)->check(CLI::IsMember({"a", "b", "c"}))->capture_default_str();
    train_cmd->add_option("--manifest", to.manifest)->required();
    train_cmd->add_option("--epochs", to.epochs)->capture_default_str();
    train_cmd->add_option("--batch", to.batch)->capture_default_str();
    train_cmd->add_option("--lr", to.lr)->capture_default_str();
    train_cmd->add_option("--lambda-grid", to.lambda_grid, "attention loss weights to cross-validate");
    train_cmd->add_option("--checkpoint-out", to.checkpoint_out, "defaults to <out>/<method>-<setup>.ckpt");
    train_cmd->add_option("--log-out", to.log_out, "defaults to <out>/train-<method>-<setup>.log");
    train_cmd->add_option("--preset", to.preset)->check(CLI::IsMember({"desk", "paper", "custom"}))->capture_default_str();
    train_cmd->add_option("--input-size", to.input_size);
    train_cmd->add_option("--widths", to.widths);
    train_cmd->add_option("--downsample", to.downsample);
    train_cmd->add_option("--patches-trunc", to.patches_trunc);
    train_cmd->add_option("--gradcam-trunc", to.gradcam_trunc);
    train_cmd->add_option("--attention-block", to.attention_block);

    // --- evaluate ---
    auto* eval_cmd = app.add_subcommand("evaluate", "evaluate a checkpoint on a test manifest");
    struct {
        std::string checkpoint, manifest, results_out;
    } eo;
    eval_cmd->add_option("--checkpoint", eo.checkpoint)->required();
    eval_cmd->add_option("--manifest", eo.manifest)->required();
    eval_cmd->add_option("--results-out", eo.results_out, "defaults to <out>/results.tsv");

    // --- matrix ---
    auto* matrix_cmd = app.add_subcommand("matrix", "cross-generator train/test IoU matrix");
    struct {
        std::vector<std::string> train_sets, test_sets;
        bool combinations = false;
        std::string method = "patches", setup = "c";
        int epochs = 10, batch = 16;
        double lr = 1e-3;
        std::string preset = "desk";
        int input_size = 0;
    } mo;
    matrix_cmd->add_option("--train", mo.train_sets, "name=manifest (repeatable)")->required();
    matrix_cmd->add_option("--test", mo.test_sets, "name=manifest (repeatable)")->required();
    matrix_cmd->add_flag("--combinations", mo.combinations, "also train on every leave-one-out union");
    matrix_cmd->add_option("--method", mo.method)->check(CLI::IsMember({"gradcam", "patches", "attention"}))->capture_default_str();
    matrix_cmd->add_option("--setup", mo.setup)->check(CLI::IsMember({"a", "b", "c"}))->capture_default_str();
    matrix_cmd->add_option("--epochs", mo.epochs)->capture_default_str();
    matrix_cmd->add_option("--batch", mo.batch)->capture_default_str();
    matrix_cmd->add_option("--lr", mo.lr)->capture_default_str();
    matrix_cmd->add_option("--preset", mo.preset)->check(CLI::IsMember({"desk", "paper", "custom"}))->capture_default_str();
    matrix_cmd->add_option("--input-size", mo.input_size);

    // --- plot ---
    auto* plot_cmd = app.add_subcommand("plot", "render IoU-vs-area curves or a matrix heat grid");
    struct {
        std::string kind = "curve";
        std::vector<std::string> inputs;
        std::string out_file;
        int bins = 5;
    } po;
    plot_cmd->add_option("--kind", po.kind)->check(CLI::IsMember({"curve", "matrix"}))->capture_default_str();
    plot_cmd->add_option("inputs", po.inputs, "results files (curve) or a matrix file")->required();
    plot_cmd->add_option("--out-file", po.out_file, "defaults to <out>/<kind>.ppm");
    plot_cmd->add_option("--bins", po.bins)->capture_default_str();

    // Parse.
    std::vector<std::string> argv_storage;
    argv_storage.reserve(args.size() + 1);
    argv_storage.push_back("forgeloc");
    for (const auto& a : args) argv_storage.push_back(a);
    std::vector<const char*> argv;
    for (const auto& s : argv_storage) argv.push_back(s.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    const fs::path out_dir(g.out);
    try {
        write_snapshot(out_dir, app);

        if (app.got_subcommand(gen_cmd)) {
            if (!go.import_images.empty()) {
                auto records = datagen::import_external(go.import_images, go.import_masks, go.import_label,
                                                        go.import_source, go.import_split, out_dir);
                datagen::write_manifest(out_dir / "manifests" / "imported.tsv", records);
                std::cout << "imported " << records.size() << " records\n";
                return 0;
            }
            const fs::path gen_dir = go.generators.empty() ? out_dir / "generators" : fs::path(go.generators);
            if (go.train_generators && !fs::exists(gen_dir / "pixel.ckpt")) {
                datagen::TrainGeneratorsConfig tgc;
                tgc.out_dir = gen_dir;
                tgc.seed = g.seed;
                tgc.size = go.size;
                tgc.style = go.style;
                tgc.with_latent = go.with_ldm;
                datagen::train_generators(tgc);
            }
            datagen::Generators generators = datagen::load_generators(gen_dir, go.with_ldm);
            datagen::GenerateConfig cfg;
            cfg.out_dir = out_dir;
            cfg.seed = g.seed;
            cfg.size = go.size;
            cfg.identities = go.identities;
            cfg.per_image = go.per_image;
            cfg.style = go.style;
            cfg.source_tag = go.source_tag;
            cfg.with_ldm = go.with_ldm;
            datagen::generate_dataset(cfg, generators);
            std::cout << "dataset written to " << out_dir.string() << "\n";
            return 0;
        }

        if (app.got_subcommand(tg_cmd)) {
            tg.out_dir = tg_out.empty() ? out_dir / "generators" : fs::path(tg_out);
            tg.seed = g.seed;
            tg.with_latent = !tg_no_latent;
            datagen::train_generators(tg);
            std::cout << "generator checkpoints written to " << tg.out_dir.string() << "\n";
            return 0;
        }

        if (app.got_subcommand(train_cmd)) {
            harness::TrainConfig cfg;
            cfg.method = to.method;
            cfg.setup = to.setup[0];
            cfg.epochs = to.epochs;
            cfg.batch_size = to.batch;
            cfg.lr = to.lr;
            cfg.seed = g.seed;
            if (!to.lambda_grid.empty()) cfg.lambda_grid = to.lambda_grid;
            cfg.backbone = backbone_from_flags(to.preset, to.input_size, to.widths, to.downsample, to.patches_trunc,
                                               to.gradcam_trunc, to.attention_block);
            harness::TrainResult result = harness::train(cfg, to.manifest);
            const fs::path ckpt = to.checkpoint_out.empty()
                                      ? out_dir / (to.method + "-" + to.setup + ".ckpt")
                                      : fs::path(to.checkpoint_out);
            const fs::path log = to.log_out.empty() ? out_dir / ("train-" + to.method + "-" + to.setup + ".log")
                                                    : fs::path(to.log_out);
            save_method_model(ckpt, *result.model);
            harness::write_training_log(log, result.log);
            std::cout << "checkpoint: " << ckpt.string() << "\n";
            if (!result.log.empty())
                std::cout << "final train loss " << result.log.back().train_loss << ", best epoch "
                          << result.best_epoch << "\n";
            return 0;
        }

        if (app.got_subcommand(eval_cmd)) {
            auto model = load_method_model(eo.checkpoint);
            auto records = datagen::load_manifest(eo.manifest);
            EvalResult result = harness::evaluate_localization(*model, records, eo.manifest);
            bool has_real = false;
            for (const auto& r : records) has_real |= r.split == "test" && r.label == "real";
            if (has_real) result.ap_percent = harness::evaluate_detection(*model, records, eo.manifest);
            const fs::path results_path = eo.results_out.empty() ? out_dir / "results.tsv" : fs::path(eo.results_out);
            write_results(results_path, result);
            std::cout << "IoU (%)\tPBCA (%)\tAP (%)\n";
            std::cout << format_percent(result.iou_percent) << "\t" << format_percent(result.pbca_percent) << "\t"
                      << (result.ap_percent ? format_percent(*result.ap_percent) : std::string("-")) << "\n";
            return 0;
        }

        if (app.got_subcommand(matrix_cmd)) {
            harness::MatrixSpec spec;
            for (const auto& s : mo.train_sets) spec.train_sets.push_back(parse_named_manifest(s));
            for (const auto& s : mo.test_sets) spec.test_sets.push_back(parse_named_manifest(s));
            if (mo.combinations && spec.train_sets.size() >= 2) {
                const auto singles = spec.train_sets;
                for (size_t skip = 0; skip < singles.size(); ++skip) {
                    std::vector<datagen::SampleRecord> merged;
                    for (size_t i = 0; i < singles.size(); ++i) {
                        if (i == skip) continue;
                        auto part = datagen::load_manifest(singles[i].second);
                        for (auto& r : part) {
                            // Re-anchor paths onto the merged manifest location.
                            r.image_path =
                                fs::relative(datagen::resolve_record_path(singles[i].second, r.image_path),
                                             out_dir / "matrix").string();
                            if (r.mask_path)
                                r.mask_path =
                                    fs::relative(datagen::resolve_record_path(singles[i].second, *r.mask_path),
                                                 out_dir / "matrix").string();
                            merged.push_back(std::move(r));
                        }
                    }
                    const std::string name = "all-but-" + singles[skip].first;
                    const fs::path path = out_dir / "matrix" / ("combo-" + singles[skip].first + ".tsv");
                    datagen::write_manifest(path, merged);
                    spec.train_sets.emplace_back(name, path);
                }
            }
            harness::TrainConfig cfg;
            cfg.method = mo.method;
            cfg.setup = mo.setup[0];
            cfg.epochs = mo.epochs;
            cfg.batch_size = mo.batch;
            cfg.lr = mo.lr;
            cfg.seed = g.seed;
            cfg.backbone = backbone_from_flags(mo.preset, mo.input_size, {}, {}, 0, 0, 0);
            harness::MatrixResult result = harness::cross_generator_matrix(spec, cfg, g.jobs);
            harness::write_matrix_tsv(out_dir / "matrix.tsv", result);
            plot::render_matrix(out_dir / "matrix.ppm", result);
            std::cout << "matrix written to " << (out_dir / "matrix.tsv").string() << "\n";
            return 0;
        }

        if (app.got_subcommand(plot_cmd)) {
            const fs::path out_file = po.out_file.empty() ? out_dir / (po.kind + ".ppm") : fs::path(po.out_file);
            if (po.kind == "matrix") {
                if (po.inputs.size() != 1) throw ConfigError("plot --kind matrix takes exactly one matrix file");
                plot::render_matrix(out_file, harness::read_matrix_tsv(po.inputs[0]));
            } else {
                std::vector<std::pair<std::string, std::vector<AreaBin>>> series;
                for (const auto& input : po.inputs) {
                    EvalResult r = read_results(input);
                    if (r.per_sample.empty()) throw DataError("results file has no samples: " + input);
                    series.emplace_back(fs::path(input).stem().string(), iou_vs_area_curve(r.per_sample, po.bins));
                }
                plot::render_curves(out_file, series);
            }
            std::cout << "figure written to " << out_file.string() << "\n";
            return 0;
        }

        return 2;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const MissingArtifactError& e) {
        std::cerr << "missing artifact: " << e.what() << "\n";
        return 4;
    } catch (const ParseError& e) {
        std::cerr << "parse error: " << e.what() << "\n";
        return 3;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const DomainError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 5;
    }
}

}  // namespace forgeloc::cli
