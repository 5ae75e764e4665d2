#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tlforest/eval.hpp"
#include "tlforest/synth.hpp"

namespace tlf {

/// One declarative cleaning step; arguments are kept as JSON text and
/// validated against the dataset before any output is written.
struct PreprocessStep {
    std::string op;
    std::string args_json;
};

/// A whole experiment in one file: dataset source, cleaning recipe,
/// architectures, forest parameters, and the evaluation protocol. Flags may
/// only override the seed and output paths.
struct ExperimentConfig {
    std::uint64_t seed = 0;

    // Dataset source: delimited file + schema sidecar, or a generator.
    std::string csv_path;
    std::string schema_path;
    std::optional<SynthConfig> synth;

    std::vector<PreprocessStep> preprocess;

    ForestParams forest;
    std::vector<ArchitectureEntry> architectures;
    std::optional<CompositeTaskSpec> composite;

    // Evaluation protocol.
    EvalMode mode = EvalMode::CrossValidation;
    ScopeKind scope = ScopeKind::Auto;
    std::string target_task;
    int folds = 8;
    int trials = 1;
    double holdout_fraction = 0.1;
    std::vector<int> sizes;

    std::map<std::string, std::string> pretrained_paths;  // handle -> forest file

    std::string output_dir = "out";

    static ExperimentConfig load(const std::string& path);
    static ExperimentConfig from_json_text(const std::string& text);
    std::string to_json_text() const;

    /// Stable hash over the semantically relevant fields (everything except
    /// output paths); embedded in every artifact this config produces.
    std::uint64_t fingerprint() const;
};

/// Load the configured dataset and run the cleaning recipe. The recipe is
/// validated against the dataset before any step runs.
Dataset load_experiment_dataset(const ExperimentConfig& cfg, std::string* report_json = nullptr);

/// Write generator output in the delimited format with a schema sidecar.
void cmd_synth(const SynthConfig& cfg, const std::string& out_csv,
               const std::string& out_schema);

/// Clean per the recipe; writes cleaned.csv, cleaned.schema.json and
/// ingest_report.json under output_dir. Returns the report text.
std::string cmd_ingest(const ExperimentConfig& cfg);

/// Train the named architecture (all of them when name is empty); writes
/// <name>.model.json and <name>.manifest.json under output_dir.
void cmd_train(const ExperimentConfig& cfg, const std::string& architecture = "");

/// Predict an input file with a trained model; writes delimited predictions
/// with std_error columns for Real tasks and per-class probabilities for
/// categorical ones.
void cmd_predict(const std::string& model_path, const std::string& input_csv,
                 const std::string& input_schema, const std::string& out_csv);

/// Run the configured evaluation; writes report.json plus one table per
/// metric under output_dir. Returns the report.
EvalReport cmd_evaluate(const ExperimentConfig& cfg);

}  // namespace tlf
