#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "tlforest/composite.hpp"
#include "tlforest/dataset.hpp"
#include "tlforest/transfer.hpp"

namespace tlf {

/// Seeded, persisted row->fold assignment. The same plan is consumed by
/// every architecture in a comparison, so differences in metrics cannot come
/// from fold luck.
struct FoldPlan {
    int k = 8;
    std::uint64_t seed = 0;
    std::vector<std::string> scope_rows;      // row ids in scope, dataset order
    std::map<std::string, int> assignment;    // row id -> fold index

    /// Content hash of (k, assignment); equal hashes mean byte-identical
    /// fold consumption.
    std::uint64_t content_hash() const;
};

/// Shuffle the scoped rows under `seed`, then chunk contiguously; fold sizes
/// differ by at most one.
FoldPlan make_fold_plan(const Dataset& ds, int k, std::uint64_t seed,
                        const std::vector<int>& scoped_rows);

double rmse(std::span<const double> truth, std::span<const double> pred);

/// Multi-class F1 averaged with weights proportional to true-class support;
/// a class with P+R = 0 contributes F1 = 0.
double weighted_f1(std::span<const int> truth, std::span<const int> pred, int class_count);

// ---------------------------------------------------------------------------
// Experiment harness
// ---------------------------------------------------------------------------

enum class EvalMode { CrossValidation, Holdout, LearningCurve };

struct ArchitectureEntry {
    std::string name;
    ArchitectureSpec spec;
    /// Per-architecture override of the base parameters. The harness owns
    /// forest seeds either way, deriving them from (job seed, architecture,
    /// trial, split) so repeated runs reproduce exactly.
    std::optional<ForestParams> params;
    std::optional<int> trials;  // per-architecture trial count override
};

enum class ScopeKind {
    Auto,            // target-labeled rows; composite-labeled when no target task
    TargetLabeled,   // rows carrying the target task's label
    CompositeLabeled // rows carrying every composite source label
};

struct EvalJob {
    std::vector<ArchitectureEntry> specs;
    /// Metrics are computed only against this task's labels. May be empty
    /// when a composite spec is the evaluation target.
    std::string target_task;
    std::optional<CompositeTaskSpec> composite;
    EvalMode mode = EvalMode::CrossValidation;
    ScopeKind scope = ScopeKind::Auto;
    int folds = 8;
    int trials = 1;
    double holdout_fraction = 0.1;
    std::vector<int> sizes;  // learning-curve training-label counts, ascending
    std::uint64_t seed = 0;
    ForestParams forest;  // base parameters
    const PretrainedStore* pretrained = nullptr;
};

struct EvalCell {
    std::vector<double> values;         // one per completed trial
    std::vector<std::string> failures;  // messages for failed trials

    double mean() const;
    /// Sample std of the trial values / sqrt(count); absent below 2 trials.
    std::optional<double> std_error() const;
};

struct EvalReport {
    std::string mode;
    std::uint64_t fingerprint = 0;  // config fingerprint, caller-provided
    int trials = 0;
    int holdout_size = 0;  // holdout/learning-curve modes only
    std::vector<std::string> row_keys;    // "cv"/"holdout" or one key per size
    std::vector<std::string> spec_names;
    std::vector<std::string> metrics;
    std::map<std::tuple<std::string, std::string, std::string>, EvalCell>
        cells;  // (row key, spec, metric)
    /// Content hash of the plan (folds or holdout) each spec consumed,
    /// indexed [trial][spec].
    std::vector<std::vector<std::uint64_t>> plan_hashes;

    const EvalCell& cell(const std::string& row_key, const std::string& spec,
                         const std::string& metric) const;
    std::string to_json_text() const;
    /// Delimited table for one metric: Size,<spec>,<spec>Error,... per row.
    std::string to_table(const std::string& metric) const;
};

/// k-fold cross-validation repeated over trials. Every trial derives a fresh
/// fold plan shared by all architectures; auxiliary rows (outside the scope)
/// are excluded from folding and included in every training set.
EvalReport cross_validate(const Dataset& ds, const EvalJob& job);

/// Holdout / learning-curve evaluation. Per trial, the holdout is drawn once
/// and fixed across sizes and architectures; smaller training sets are nested
/// inside larger ones.
EvalReport learning_curve(const Dataset& ds, const EvalJob& job);

/// Rows in scope for the job (dataset order).
std::vector<int> scoped_rows(const Dataset& ds, const EvalJob& job);

}  // namespace tlf
