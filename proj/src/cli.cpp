#include "advpatch/cli.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "advpatch/config.hpp"
#include "advpatch/data.hpp"
#include "advpatch/errors.hpp"
#include "advpatch/evaluator.hpp"
#include "advpatch/image_io.hpp"
#include "advpatch/io_util.hpp"
#include "advpatch/simd/kernels.hpp"
#include "advpatch/synthetic.hpp"
#include "advpatch/trainer.hpp"

namespace advpatch {
namespace {

namespace fs = std::filesystem;

// Usage and validation failures; mapped to exit code 1.
class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct CommonArgs {
    std::string config;
    std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("-c,--config", args.config, "Run configuration file")->required();
    cmd->add_option("--set", args.overrides, "Override a config entry (key=value)");
}

RunConfig load_config(const CommonArgs& args) {
    if (!fs::exists(args.config)) {
        throw UsageError("config file '" + args.config + "' does not exist");
    }
    RunConfig cfg = RunConfig::load(args.config);
    for (const auto& o : args.overrides) {
        cfg.apply_override(o);
    }
    return cfg;
}

void require_dir(const RunConfig& cfg, std::string_view key) {
    const fs::path p = cfg.get_path(key);
    if (p.empty()) {
        throw UsageError(fmt::format("config key {} is not set", key));
    }
    if (!fs::is_directory(p)) {
        throw UsageError(fmt::format("{} = '{}' is not a directory", key, p.string()));
    }
}

void require_optional_file(const RunConfig& cfg, std::string_view key) {
    const fs::path p = cfg.get_path(key);
    if (!p.empty() && !fs::is_regular_file(p)) {
        throw UsageError(fmt::format("{} = '{}' does not exist", key, p.string()));
    }
}

void validate_detector_paths(const RunConfig& cfg) {
    if (cfg.get("detector.kind") == "external") {
        for (std::string_view key : {"detector.weights", "detector.classes"}) {
            const fs::path p = cfg.get_path(key);
            if (p.empty() || !fs::is_regular_file(p)) {
                throw UsageError(fmt::format("{} = '{}' does not exist", key, p.string()));
            }
        }
    }
    if (cfg.get_int("detector.input_size") < 1) {
        throw UsageError("detector.input_size must be positive");
    }
}

fs::path resolve_run_dir(const RunConfig& cfg, const std::string& explicit_dir) {
    if (!explicit_dir.empty()) {
        return explicit_dir;
    }
    const std::time_t now = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&now, &tm);
    char stamp[32];
    std::strftime(stamp, sizeof stamp, "%Y%m%d-%H%M%S", &tm);
    return cfg.get_path("paths.output_root") / fmt::format("{}-{}", to_hex(cfg.hash()).substr(0, 8), stamp);
}

// Runs a file loader, prefixing format errors with the file name.
template <typename Load>
auto load_named(const std::string& path, Load&& load) {
    try {
        return load(path);
    } catch (const FormatError& e) {
        throw UsageError(path + ": " + e.what());
    }
}

std::string manifest_path_for(const fs::path& sidecar) { return sidecar.string() + ".json"; }

int cmd_label(const CommonArgs& common, const std::string& images, const std::string& out_dir,
              std::ostream& out, std::ostream& err) {
    const RunConfig cfg = load_config(common);
    validate_detector_paths(cfg);
    if (!fs::is_directory(images)) {
        throw UsageError("image directory '" + images + "' does not exist");
    }
    const auto detector = cfg.make_detector();
    const LabelSummary s = generate_pseudo_labels(*detector, images, out_dir, cfg.get_double("label.conf_threshold"),
                                                  cfg.get_double("label.nms_iou"),
                                                  static_cast<int>(cfg.get_int("detector.input_size")));
    for (const auto& w : s.warning_messages) {
        err << "warning: " << w << '\n';
    }
    out << s.to_json() << '\n';
    out << fmt::format("labeled {} images, {} boxes\n", s.images, s.boxes);
    return s.warnings > 0 ? kExitPartial : kExitOk;
}

int cmd_train(const CommonArgs& common, const std::string& run_dir_arg, const std::string& resume_path,
              std::ostream& out) {
    const RunConfig cfg = load_config(common);
    validate_detector_paths(cfg);
    require_dir(cfg, "paths.train_images");
    require_dir(cfg, "paths.train_labels");
    require_optional_file(cfg, "paths.colors");
    if (!resume_path.empty() && !fs::is_regular_file(resume_path)) {
        throw UsageError("checkpoint '" + resume_path + "' does not exist");
    }
    const TrainConfig tc = cfg.train();
    const PrintableColorSet colors = cfg.printable_colors();
    const auto detector = cfg.make_detector();
    const Dataset dataset = load_dataset(cfg.get_path("paths.train_images"), cfg.get_path("paths.train_labels"),
                                         static_cast<int>(cfg.get_int("detector.input_size")), tc.seed,
                                         Split::Train);
    if (dataset.empty()) {
        throw UsageError("training image directory is empty");
    }
    std::optional<TrainState> resume;
    if (!resume_path.empty()) {
        resume = load_named(resume_path, load_checkpoint);
    }

    const fs::path run_dir = resolve_run_dir(cfg, run_dir_arg);
    fs::create_directories(run_dir / "checkpoints");
    write_file_atomic(run_dir / "config.cfg", cfg.canonical_text());
    out << "run directory: " << run_dir.string() << '\n';
    out << fmt::format("training {} steps on {} images (mode {}, kernels {})\n",
                       static_cast<std::uint64_t>(tc.epochs) * batches(dataset, tc.batch_size).size(),
                       dataset.size(), to_string(tc.mode), simd::active_kernels().name);

    auto checkpoint_name = [&](std::uint64_t step) {
        return run_dir / "checkpoints" / fmt::format("step_{:06d}.apc", step);
    };
    TrainHooks hooks;
    hooks.on_checkpoint = [&](const TrainState& st) { save_checkpoint(checkpoint_name(st.optimizer.step), st); };
    const TrainResult result = train(tc, *detector, dataset, colors, std::move(resume), hooks);

    const Patch& patch = result.state.patch;
    const fs::path sidecar = run_dir / "patch.apf";
    save_patch_sidecar(sidecar, patch);
    write_png(run_dir / "patch.png", patch.pixels());
    nlohmann::ordered_json manifest;
    manifest["patch"] = "patch.apf";
    manifest["fnv1a64"] = to_hex(patch_hash(patch));
    manifest["mode"] = std::string(to_string(tc.mode));
    manifest["steps"] = result.state.optimizer.step;
    write_file_atomic(manifest_path_for(sidecar), manifest.dump(2) + "\n");
    write_file_atomic(run_dir / "history.csv", result.history.to_csv());
    save_checkpoint(checkpoint_name(result.state.optimizer.step), result.state);

    if (!result.history.steps.empty()) {
        const LossBreakdown& l = result.history.steps.back().loss;
        out << fmt::format("final loss: nps={} tv={} obj={} total={}\n", l.nps, l.tv, l.obj, l.total);
    }
    return kExitOk;
}

int cmd_eval(const CommonArgs& common, const std::string& run_dir_arg, const std::vector<std::string>& specs,
             std::ostream& out) {
    const RunConfig cfg = load_config(common);
    validate_detector_paths(cfg);
    require_dir(cfg, "paths.test_images");
    require_dir(cfg, "paths.test_labels");

    std::vector<EvalCondition> conditions{{ConditionKind::Clean, {}, {}}};
    std::set<ConditionKind> seen;
    for (const auto& spec : specs) {
        const auto eq = spec.find('=');
        ConditionKind kind;
        try {
            kind = parse_condition(spec.substr(0, eq));
        } catch (const std::invalid_argument& e) {
            throw UsageError(e.what());
        }
        if (!seen.insert(kind).second) {
            throw UsageError(fmt::format("condition {} given more than once", condition_name(kind)));
        }
        const std::string path = eq == std::string::npos ? "" : spec.substr(eq + 1);
        if (is_trained(kind) && path.empty()) {
            throw UsageError(fmt::format("condition {} needs a patch path ({}=<patch.apf>)", condition_name(kind),
                                         condition_name(kind)));
        }
        if (!is_trained(kind) && !path.empty()) {
            throw UsageError(fmt::format("condition {} does not take a patch", condition_name(kind)));
        }
        if (kind == ConditionKind::Clean) {
            continue;
        }
        EvalCondition c{kind, {}, {}};
        if (is_trained(kind)) {
            if (!fs::is_regular_file(path)) {
                throw UsageError("patch '" + path + "' does not exist");
            }
            c.patch = load_named(path, load_patch_sidecar);
            const fs::path manifest = manifest_path_for(path);
            if (fs::exists(manifest)) {
                const auto j = nlohmann::json::parse(std::string(
                    reinterpret_cast<const char*>(read_file_bytes(manifest).data()), fs::file_size(manifest)));
                c.expected_hash = std::stoull(j.at("fnv1a64").get<std::string>(), nullptr, 16);
            }
        }
        conditions.push_back(std::move(c));
    }

    const auto detector = cfg.make_detector();
    const Dataset dataset = load_dataset(cfg.get_path("paths.test_images"), cfg.get_path("paths.test_labels"),
                                         static_cast<int>(cfg.get_int("detector.input_size")), 0, Split::Test);
    const TransformConfig transform = cfg.transform();
    const EvalOptions options = cfg.eval_options();
    const std::uint64_t seed = cfg.get_uint("eval.seed");
    std::vector<ConditionResult> results;
    for (const auto& c : conditions) {
        results.push_back({c.kind, evaluate_condition(*detector, dataset, c, transform, seed, options)});
    }
    const EvalReport report = build_report(results, cfg.get_double("eval.iou_match"));
    const fs::path run_dir = resolve_run_dir(cfg, run_dir_arg);
    write_report(report, run_dir);
    out << "run directory: " << run_dir.string() << '\n';
    out << recall_table(report);
    return kExitOk;
}

int cmd_export(const std::string& patch_path, const std::string& out_png, double dpi, double size_cm,
               std::ostream& out) {
    if (!(dpi > 0.0) || !(size_cm > 0.0)) {
        throw UsageError("--dpi and --size-cm must be positive");
    }
    const Patch patch = load_named(patch_path, load_patch_sidecar);
    const int width = static_cast<int>(std::lround(size_cm / 2.54 * dpi));
    const int height = std::max(1, static_cast<int>(std::lround(static_cast<double>(width) * patch.height() /
                                                                patch.width())));
    if (width < 1) {
        throw UsageError("requested print size rounds to zero pixels");
    }
    write_png(out_png, resize_bilinear(patch.pixels(), height, width), dpi);
    out << fmt::format("wrote {} ({}x{} px at {} dpi)\n", out_png, width, height, dpi);
    return kExitOk;
}

int cmd_scenes(const CommonArgs& common, const std::string& out_dir, int count, std::uint64_t seed, int size,
               std::ostream& out) {
    const RunConfig cfg = load_config(common);
    validate_detector_paths(cfg);
    if (count < 1 || size < 16) {
        throw UsageError("--count must be >= 1 and --size >= 16");
    }
    const auto detector = cfg.make_detector();
    SceneOptions options;
    options.width = size;
    options.height = size;
    const auto paths = write_detectable_scenes(*detector, out_dir, count, seed, options,
                                               static_cast<int>(cfg.get_int("detector.input_size")),
                                               cfg.get_double("label.conf_threshold"), cfg.get_double("label.nms_iou"));
    out << fmt::format("wrote {} scenes to {}\n", paths.size(), out_dir);
    return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Adversarial patch toolkit for single-shot person detectors", "advpatch"};
    app.require_subcommand(1);

    CommonArgs label_args;
    std::string label_images;
    std::string label_out;
    auto* label = app.add_subcommand("label", "Write pseudo-labels by running the detector over images");
    add_common(label, label_args);
    label->add_option("--images", label_images, "Image directory")->required();
    label->add_option("--out", label_out, "Label output directory")->required();

    CommonArgs train_args;
    std::string train_run_dir;
    std::string train_resume;
    auto* train_cmd = app.add_subcommand("train", "Optimize a patch against the detector");
    add_common(train_cmd, train_args);
    train_cmd->add_option("--run-dir", train_run_dir, "Output directory (default: <output_root>/<hash>-<time>)");
    train_cmd->add_option("--resume", train_resume, "Checkpoint to resume from");

    CommonArgs eval_args;
    std::string eval_run_dir;
    std::vector<std::string> eval_conditions;
    auto* eval_cmd = app.add_subcommand("eval", "PR curves and recall for CLEAN and the given conditions");
    add_common(eval_cmd, eval_args);
    eval_cmd->add_option("--run-dir", eval_run_dir, "Output directory (default: <output_root>/<hash>-<time>)");
    eval_cmd->add_option("--condition", eval_conditions, "NOISE, or OBJ|CLS|OBJ-CLS=<patch.apf>");

    std::string export_patch;
    std::string export_out;
    double export_dpi = 300.0;
    double export_cm = 40.0;
    auto* export_cmd = app.add_subcommand("export", "Write a print-ready PNG of a patch");
    export_cmd->add_option("--patch", export_patch, "Patch sidecar (.apf)")->required();
    export_cmd->add_option("--out", export_out, "Output PNG")->required();
    export_cmd->add_option("--dpi", export_dpi, "Print resolution")->capture_default_str();
    export_cmd->add_option("--size-cm", export_cm, "Printed width in centimetres")->capture_default_str();

    CommonArgs scenes_args;
    std::string scenes_out;
    int scenes_count = 20;
    std::uint64_t scenes_seed = 0;
    int scenes_size = 128;
    auto* scenes_cmd = app.add_subcommand("scenes", "Write synthetic scenes the configured detector responds to");
    add_common(scenes_cmd, scenes_args);
    scenes_cmd->add_option("--out", scenes_out, "Output image directory")->required();
    scenes_cmd->add_option("--count", scenes_count, "Number of scenes")->capture_default_str();
    scenes_cmd->add_option("--seed", scenes_seed, "Scene seed")->capture_default_str();
    scenes_cmd->add_option("--size", scenes_size, "Scene side in pixels")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
        app.exit(e, out, err);
        return kExitUsage;
    }

    try {
        if (label->parsed()) {
            return cmd_label(label_args, label_images, label_out, out, err);
        }
        if (train_cmd->parsed()) {
            return cmd_train(train_args, train_run_dir, train_resume, out);
        }
        if (eval_cmd->parsed()) {
            return cmd_eval(eval_args, eval_run_dir, eval_conditions, out);
        }
        if (scenes_cmd->parsed()) {
            return cmd_scenes(scenes_args, scenes_out, scenes_count, scenes_seed, scenes_size, out);
        }
        if (export_cmd->parsed()) {
            return cmd_export(export_patch, export_out, export_dpi, export_cm, out);
        }
    } catch (const NumericalError& e) {
        err << "error: numerical abort: " << e.what() << '\n';
        return kExitNumerical;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitUsage;
    }
    return kExitUsage;
}

}  // namespace advpatch
