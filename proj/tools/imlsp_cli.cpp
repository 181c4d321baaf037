// Batch command-line interface for the IMLSP survival toolkit:
//   imlsp synth    --config synth.json    --out DIR [--seed N]
//   imlsp train    --config train.json    --out DIR [--seed N]
//   imlsp evaluate --config evaluate.json --out DIR [--seed N]
//   imlsp explain  --config explain.json  --out DIR
// Configs are strict JSON (unknown keys rejected). Every command writes its
// resolved config next to its outputs, and re-running from that file
// reproduces the outputs byte for byte. Diagnostics go to stderr, data to
// files; the exit status is 0 only if no error was reported.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "imlsp/checkpoint.hpp"
#include "imlsp/cohort.hpp"
#include "imlsp/error.hpp"
#include "imlsp/evaluation.hpp"
#include "imlsp/gradteam.hpp"
#include "imlsp/network.hpp"
#include "imlsp/run_config.hpp"
#include "imlsp/synthetic.hpp"
#include "imlsp/training.hpp"

namespace fs = std::filesystem;
using namespace imlsp;

namespace {

nlohmann::json read_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config file " + path);
    try {
        nlohmann::json j;
        f >> j;
        return j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("malformed config " + path + ": " + e.what());
    }
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream f(path);
    if (!f) throw DataError("cannot write " + path.string());
    f << text;
    if (!f) throw DataError("short write to " + path.string());
}

void write_resolved_config(const fs::path& out_dir, const nlohmann::json& cfg) {
    write_text(out_dir / "run_config.json", cfg.dump(2) + "\n");
}

Cohort load_cohort_reporting(const std::string& manifest) {
    auto loaded = load_cohort(manifest);
    for (const auto& r : loaded.rejected)
        std::cerr << "excluded patient '" << r.id << "': " << r.reason << "\n";
    return std::move(loaded.cohort);
}

int cmd_synth(const std::string& config_path, const std::string& out_dir,
              std::optional<std::uint64_t> seed) {
    auto cfg = parse_synthetic_config(read_config(config_path));
    if (seed) cfg.seed = *seed;
    fs::create_directories(out_dir);

    const auto synth = generate_synthetic_cohort(cfg);
    write_cohort(out_dir, synth.cohort);
    write_ground_truth(fs::path(out_dir) / "ground_truth.json", synth);
    write_resolved_config(out_dir, synthetic_config_to_json(cfg));
    std::cerr << "wrote " << synth.cohort.patients.size() << " patients to "
              << out_dir << "\n";
    return 0;
}

int cmd_train(const std::string& config_path, const std::string& out_dir,
              std::optional<std::uint64_t> seed) {
    auto cfg = parse_train_config(read_config(config_path));
    if (seed) cfg.train.seed = *seed;
    fs::create_directories(out_dir);

    const Cohort cohort = load_cohort_reporting(cfg.manifest);
    const auto train_patients = cohort.in_split("train");
    const auto val_patients = cohort.in_split("validation");
    if (train_patients.empty() || val_patients.empty())
        throw DataError(
            "manifest must provide non-empty train and validation splits");

    ImlspModel model(cfg.encoder);
    model.modality = cfg.modality;
    model.grid.emplace(build_time_grid(pooled_event_times(train_patients),
                                       cfg.encoder.k_intervals));
    std::vector<ClinicalRecord> train_clinical;
    for (const auto* p : train_patients) train_clinical.push_back(p->clinical);
    model.stats = fit_normalization(train_clinical);

    const auto train_samples = prepare_samples(train_patients, model);
    const auto val_samples = prepare_samples(val_patients, model);

    TrainConfig effective = cfg.train;
    effective.lambda = cfg.effective_lambda();
    const auto result = train(model, train_samples, val_samples, effective);

    save_checkpoint(model, fs::path(out_dir) / "model.ckpt");
    std::string log_csv = "epoch,train_loss,validation_loss,learning_rate\n";
    char buf[128];
    for (const auto& e : result.log) {
        std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g,%.17g\n", e.epoch,
                      e.train_loss, e.validation_loss, e.learning_rate);
        log_csv += buf;
    }
    write_text(fs::path(out_dir) / "loss_log.csv", log_csv);
    write_resolved_config(out_dir, train_config_to_json(cfg));
    std::cerr << "best validation loss " << result.best_validation_loss
              << " at epoch " << result.best_epoch << "\n";
    return 0;
}

int cmd_evaluate(const std::string& config_path, const std::string& out_dir,
                 std::optional<std::uint64_t> seed) {
    auto cfg = parse_evaluate_config(read_config(config_path));
    if (seed) cfg.seed = *seed;
    fs::create_directories(out_dir);

    ImlspModel model = load_checkpoint(cfg.checkpoint);
    const Cohort cohort = load_cohort_reporting(cfg.manifest);
    const auto patients = cohort.in_split(cfg.split);
    if (patients.empty())
        throw DataError("split '" + cfg.split + "' is empty in " + cfg.manifest);

    EvaluateOptions options;
    options.horizons = cfg.horizons;
    options.bootstrap_resamples = cfg.bootstrap_resamples;
    options.bootstrap_level = cfg.bootstrap_level;
    options.seed = cfg.seed;
    auto result = evaluate_model(model, patients, options);
    result.report["split"] = cfg.split;

    write_text(fs::path(out_dir) / "metrics.json", result.report.dump(2) + "\n");
    for (const auto& [label, csv] : result.km_csv)
        write_text(fs::path(out_dir) / ("km_" + label + ".csv"), csv);
    write_resolved_config(out_dir, evaluate_config_to_json(cfg));
    return 0;
}

int cmd_explain(const std::string& config_path, const std::string& out_dir) {
    auto cfg = parse_explain_config(read_config(config_path));
    fs::create_directories(out_dir);

    ImlspModel model = load_checkpoint(cfg.checkpoint);
    if (!model.grid)
        throw CheckpointError("checkpoint " + cfg.checkpoint +
                              " carries no time grid (was the model trained?)");
    const Cohort cohort = load_cohort_reporting(cfg.manifest);
    const CohortPatient* patient = nullptr;
    for (const auto& p : cohort.patients)
        if (p.clinical.id == cfg.patient) patient = &p;
    if (!patient)
        throw DataError("patient '" + cfg.patient + "' not found in " +
                        cfg.manifest);

    const std::size_t interval =
        cfg.interval ? *cfg.interval : interval_index(*model.grid, *cfg.time_years);
    const Tensor volume =
        preprocess_volume(patient->volume, model.config().input_extents);
    const auto coded = encode_clinical(patient->clinical, model.stats);
    const std::vector<double> clinical(coded.begin(), coded.end());

    std::vector<std::string> names = cfg.label_names;
    if (names.empty()) names.assign(labels::names().begin(), labels::names().end());
    for (const auto& name : names) {
        const std::size_t s = labels::from_name(name);
        const auto guidance =
            GuidanceVector::for_time_event(s, interval, model.config().k_intervals);
        auto map =
            generate_activation_map(model, volume, clinical, guidance, cfg.scalar);
        map.patient_id = cfg.patient;
        export_map(map, fs::path(out_dir) / ("map_" + cfg.patient + "_" + name +
                                             "_k" + std::to_string(interval)));
    }
    write_resolved_config(out_dir, explain_config_to_json(cfg));
    std::cerr << "wrote " << names.size() << " activation map(s) for interval "
              << interval << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"IMLSP multi-label survival modeling toolkit"};
    app.require_subcommand(1);

    std::string config_path, out_dir;
    std::optional<std::uint64_t> seed;

    const auto add_common = [&](CLI::App* cmd, bool with_seed = true) {
        cmd->add_option("--config", config_path, "JSON config file")->required();
        cmd->add_option("--out", out_dir, "output directory")->required();
        if (with_seed) cmd->add_option("--seed", seed, "override the config seed");
    };
    auto* synth = app.add_subcommand("synth", "generate a synthetic cohort");
    add_common(synth);
    auto* train_cmd = app.add_subcommand("train", "train an IMLSP model");
    add_common(train_cmd);
    auto* evaluate = app.add_subcommand("evaluate", "run the evaluation protocol");
    add_common(evaluate);
    auto* explain = app.add_subcommand("explain", "generate activation maps");
    add_common(explain, false);

    CLI11_PARSE(app, argc, argv);

    try {
        if (synth->parsed()) return cmd_synth(config_path, out_dir, seed);
        if (train_cmd->parsed()) return cmd_train(config_path, out_dir, seed);
        if (evaluate->parsed()) return cmd_evaluate(config_path, out_dir, seed);
        if (explain->parsed()) return cmd_explain(config_path, out_dir);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "unexpected error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}
