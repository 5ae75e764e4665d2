#include <cstdint>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "tlforest/error.hpp"
#include "tlforest/experiment.hpp"

namespace {

constexpr int kExitValidation = 2;
constexpr int kExitRuntime = 3;

tlf::ExperimentConfig load_config(const std::string& path, const std::string& seed_override,
                                  const std::string& outdir_override) {
    tlf::ExperimentConfig cfg = tlf::ExperimentConfig::load(path);
    if (!seed_override.empty()) cfg.seed = std::stoull(seed_override);
    if (!outdir_override.empty()) cfg.output_dir = outdir_override;
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"multi-task random forests with transfer-learning architectures"};
    app.require_subcommand(1);

    std::string config_path, seed_override, outdir_override;

    auto add_common = [&](CLI::App* cmd, bool config_required = true) {
        cmd->add_option("-c,--config", config_path, "experiment config (JSON)")
            ->required(config_required);
        cmd->add_option("--seed", seed_override, "override the config seed");
        cmd->add_option("-o,--output-dir", outdir_override, "override the output directory");
    };

    // synth
    auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
    std::string synth_config, synth_out = "synth.csv", synth_schema;
    synth->add_option("-c,--config", synth_config, "generator config (JSON)")->required();
    synth->add_option("-o,--out", synth_out, "output CSV path");
    synth->add_option("--schema-out", synth_schema, "schema sidecar path (default <out>.schema.json)");
    synth->add_option("--seed", seed_override, "override the config seed");

    auto* ingest = app.add_subcommand("ingest", "run the cleaning recipe");
    add_common(ingest);

    auto* train = app.add_subcommand("train", "train configured architectures");
    std::string arch_name;
    add_common(train);
    train->add_option("-a,--arch", arch_name, "train only this architecture");

    auto* predict = app.add_subcommand("predict", "predict an input file with a model");
    std::string model_path, input_csv, input_schema, predict_out = "predictions.csv";
    predict->add_option("-m,--model", model_path, "trained model file")->required();
    predict->add_option("-i,--input", input_csv, "input CSV")->required();
    predict->add_option("-s,--schema", input_schema, "input schema sidecar")->required();
    predict->add_option("-o,--out", predict_out, "output CSV path");

    auto* evaluate = app.add_subcommand("evaluate", "run the configured evaluation");
    add_common(evaluate);

    CLI11_PARSE(app, argc, argv);

    try {
        if (synth->parsed()) {
            tlf::SynthConfig cfg =
                tlf::SynthConfig::from_json_text([&] {
                    std::ifstream in(synth_config);
                    if (!in) throw tlf::ValidationError("cannot open '" + synth_config + "'");
                    std::stringstream ss;
                    ss << in.rdbuf();
                    return ss.str();
                }());
            if (!seed_override.empty()) cfg.seed = std::stoull(seed_override);
            const std::string schema_path =
                synth_schema.empty() ? synth_out + ".schema.json" : synth_schema;
            tlf::cmd_synth(cfg, synth_out, schema_path);
            std::cout << "wrote " << synth_out << " and " << schema_path << "\n";
        } else if (ingest->parsed()) {
            const auto cfg = load_config(config_path, seed_override, outdir_override);
            tlf::cmd_ingest(cfg);
            std::cout << "wrote cleaned dataset and report under " << cfg.output_dir << "\n";
        } else if (train->parsed()) {
            const auto cfg = load_config(config_path, seed_override, outdir_override);
            tlf::cmd_train(cfg, arch_name);
            std::cout << "wrote models under " << cfg.output_dir << "\n";
        } else if (predict->parsed()) {
            tlf::cmd_predict(model_path, input_csv, input_schema, predict_out);
            std::cout << "wrote " << predict_out << "\n";
        } else if (evaluate->parsed()) {
            const auto cfg = load_config(config_path, seed_override, outdir_override);
            const tlf::EvalReport report = tlf::cmd_evaluate(cfg);
            for (const auto& metric : report.metrics)
                std::cout << report.to_table(metric) << "\n";
            std::cout << "wrote report under " << cfg.output_dir << "\n";
        }
    } catch (const tlf::ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitValidation;
    } catch (const tlf::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitValidation;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return 0;
}
