#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tlforest/forest.hpp"
#include "tlforest/uncertainty.hpp"

namespace tlf {

enum class DiffOp { Subtract, Divide };

/// One stage of a latent-variable pipeline: a task modeled as a function of
/// the base features plus the predictions of earlier stages.
struct StageSpec {
    std::string task;
    std::vector<std::string> latent_inputs;  // tasks of earlier stages only
    /// Substitute observed upstream labels (where present) for the model
    /// predictions when building this stage's training columns. Prediction
    /// always uses model outputs.
    bool use_observed_latents = false;
    /// Use out-of-bag upstream predictions for rows that sat in the upstream
    /// forest's training set.
    bool use_oob_latents = false;
    std::optional<ForestParams> params;  // per-stage override
};

/// Declarative description of a trainable architecture over named tasks.
struct ArchitectureSpec {
    enum class Kind { SingleTask, MultiTask, Difference, LatentVariable };

    Kind kind = Kind::SingleTask;

    // SingleTask
    std::string task;

    // MultiTask
    std::vector<std::string> tasks;
    std::map<std::string, double> task_weights;

    // Difference: target modeled as reference composed with a learned
    // correction through `op`.
    std::string target_task;
    std::string reference_task;
    DiffOp op = DiffOp::Subtract;
    bool reference_pretrained = false;
    std::string pretrained_handle;
    /// Divide guard: reference labels must satisfy |y| >= epsilon * std(y)
    /// over the relabeling rows.
    double divide_epsilon = 1e-6;
    std::optional<ForestParams> reference_params;
    std::optional<ForestParams> delta_params;

    // LatentVariable
    std::vector<StageSpec> stages;

    void validate() const;                     // structural checks
    void validate(const Dataset& ds) const;    // plus task existence/kind checks

    std::string to_json_text() const;
    static ArchitectureSpec from_json_text(const std::string& text);
};

struct TaskPrediction {
    TaskKind kind = TaskKind::Real;
    double value = 0.0;  // Real point estimate
    std::optional<PredictionWithUncertainty> uncertainty;
    std::optional<ClassPrediction> classification;
};

struct TrainedStage {
    std::vector<std::string> tasks;          // stage outputs
    std::vector<std::string> latent_inputs;  // upstream task columns, in order
    Forest forest;
};

using PretrainedStore = std::map<std::string, Forest>;

/// A compiled, trained architecture. Stages are stored in evaluation order;
/// for Difference the stages are [reference, correction].
struct TrainedArchitecture {
    ArchitectureSpec spec;
    std::vector<TrainedStage> stages;
    std::vector<std::string> feature_names;  // base input dimensionality
    std::uint64_t base_seed = 0;
    std::map<std::string, std::size_t> training_rows;  // per stage task

    int n_features() const { return static_cast<int>(feature_names.size()); }

    std::string to_json_text() const;
    static TrainedArchitecture from_json_text(const std::string& text);
    void save(const std::string& path) const;
    static TrainedArchitecture load(const std::string& path);
};

/// Train `spec` on `ds`. Stage forests derive their seeds from params.seed
/// and the stage index; per-stage parameter overrides are honored.
TrainedArchitecture train_architecture(const ArchitectureSpec& spec, const Dataset& ds,
                                       const ForestParams& params,
                                       const PretrainedStore& pretrained = {});

/// Evaluate all stages at x. Latent inputs are always model predictions.
std::map<std::string, TaskPrediction> predict_architecture(const TrainedArchitecture& ta,
                                                           std::span<const double> x,
                                                           bool with_uncertainty = true);

/// Internal task name used for the learned Difference correction.
std::string difference_task_name(const ArchitectureSpec& spec);

}  // namespace tlf
