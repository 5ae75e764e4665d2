#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tlforest/dataset.hpp"

namespace tlf {

/// Tree count: a fixed number, or k trees per training label (total labels
/// across the forest's tasks among eligible rows).
struct TreeCount {
    enum class Rule { Fixed, PerLabel };
    Rule rule = Rule::PerLabel;
    int value = 1;

    static TreeCount fixed(int n) { return {Rule::Fixed, n}; }
    static TreeCount per_label(int k) { return {Rule::PerLabel, k}; }
    int resolve(std::size_t label_count) const;
};

struct ForestParams {
    TreeCount num_trees = TreeCount::per_label(1);
    /// Features considered per split. Default: d/3 for regression-only
    /// forests, sqrt(d) when any classification task is present (min 1).
    std::optional<int> feature_subset_size;
    int min_node_size = 1;  // 1 = full depth
    std::uint64_t seed = 0;
    std::map<std::string, double> task_weights;  // missing tasks weigh 1.0
};

/// A task as trained into a forest: spec, split weight, and the exactly
/// invertible z-score transform applied to Real labels before impurity
/// computation (identity for categorical tasks).
struct ResolvedTask {
    TaskSpec spec;
    double weight = 1.0;
    double standardize_mean = 0.0;
    double standardize_std = 1.0;

    double standardize(double y) const { return (y - standardize_mean) / standardize_std; }
    double destandardize(double z) const { return z * standardize_std + standardize_mean; }
};

struct LeafStat {
    std::int64_t count = 0;             // in-node training labels (bootstrap-weighted)
    double mean = 0.0;                  // Real tasks, original units
    std::vector<double> histogram;      // Categorical tasks, class counts
};

struct TreeNode {
    std::int32_t feature = -1;  // -1: leaf
    double threshold = 0.0;     // rows with value < threshold go left
    std::int32_t left = -1;
    std::int32_t right = -1;
    std::vector<LeafStat> stats;  // leaf only, aligned with Forest::tasks

    bool is_leaf() const { return feature < 0; }
};

struct Tree {
    std::vector<TreeNode> nodes;  // nodes[0] is the root, preorder
};

/// A trained bagged forest. Bootstrap membership counts are retained per
/// tree: membership[b][i] is how often training row i entered tree b's
/// resample, and sums to the training row count for every tree.
///
/// Training protocol (everything downstream of the seed is pinned):
///   - selected tasks are normalized to ascending name order
///   - eligible rows: >=1 label among the selected tasks, dataset order
///   - tree b uses engine rng::Engine(rng::derive(seed, b)); it first draws
///     the bootstrap (n draws of rng::uniform_index), then consumes feature
///     subsets node by node in preorder (left subtree before right)
///   - split candidates are midpoints between consecutive distinct in-node
///     values of each drawn feature; ties in score break toward the lowest
///     (feature index, threshold)
///   - growth stops when all positively weighted tasks are pure, fewer than
///     min_node_size rows remain, or no candidate split separates rows
///   - aggregate sums are accumulated in row_id order so training is
///     invariant to row permutations
struct Forest {
    std::vector<ResolvedTask> tasks;  // ascending name order
    std::vector<std::string> feature_names;
    std::vector<std::string> training_row_ids;  // eligible rows, dataset order
    std::vector<Tree> trees;
    std::vector<std::vector<std::int32_t>> membership;
    ForestParams params;  // resolved: fixed tree count, subset size set

    int n_training_rows() const { return static_cast<int>(training_row_ids.size()); }
    int n_features() const { return static_cast<int>(feature_names.size()); }
    int task_index(const std::string& name) const;  // -1 if absent
    const ResolvedTask& task(const std::string& name) const;  // throws

    std::string to_json_text() const;
    static Forest from_json_text(const std::string& text);
    void save(const std::string& path) const;
    static Forest load(const std::string& path);
};

Forest train_forest(const Dataset& ds, const std::vector<std::string>& tasks,
                    const ForestParams& params);

/// Train with fixed bootstrap resamples (one row-id list per tree, each of
/// length n). Bypasses the bootstrap draw; feature-subset draws still come
/// from the per-tree engines.
Forest train_forest_with_resamples(const Dataset& ds, const std::vector<std::string>& tasks,
                                   const ForestParams& params,
                                   const std::vector<std::vector<std::string>>& resamples);

/// Mean over per-tree leaf means; trees whose leaf holds no labels for the
/// task abstain. Throws when every tree abstains or dimensions mismatch.
double predict_real(const Forest& f, const std::string& task, std::span<const double> x);

struct ClassPrediction {
    int class_index = 0;
    std::vector<double> probabilities;  // sums to 1
};

/// Per-tree leaf histograms normalized then averaged; argmax class with ties
/// broken toward the lowest class index.
ClassPrediction predict_class(const Forest& f, const std::string& task,
                              std::span<const double> x);

/// Per-tree regression predictions at x; NaN marks an abstaining tree.
std::vector<double> per_tree_predictions(const Forest& f, const std::string& task,
                                         std::span<const double> x);

/// Out-of-bag prediction for a training row: mean over trees whose resample
/// excluded that row. Falls back to the full-forest prediction when no tree
/// qualifies.
double predict_real_oob(const Forest& f, const std::string& task, std::span<const double> x,
                        int training_row);

}  // namespace tlf
