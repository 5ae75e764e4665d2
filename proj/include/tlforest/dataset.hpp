#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace tlf {

enum class TaskKind { Real, Categorical };

std::string to_string(TaskKind kind);
TaskKind task_kind_from_string(const std::string& s);

/// One learning task (regression target or classification target).
struct TaskSpec {
    std::string name;
    TaskKind kind = TaskKind::Real;
    /// Class vocabulary, first-appearance order. Categorical only.
    std::vector<std::string> classes;
    std::string units;

    int class_index(const std::string& cls) const;  // -1 if unknown
};

/// Sparse labels for one task: row index -> value. Real tasks store the
/// value itself, categorical tasks store the class index.
using LabelMap = std::map<int, double>;

/// Immutable tabular dataset: a dense feature matrix plus a sparse multi-task
/// label matrix. Cleaning operations return new datasets.
struct Dataset {
    std::vector<std::string> row_ids;
    std::vector<double> features;  // row-major, n_rows x n_features
    std::vector<std::string> feature_names;
    std::vector<TaskSpec> tasks;
    std::vector<LabelMap> labels;  // parallel to tasks

    int n_rows() const { return static_cast<int>(row_ids.size()); }
    int n_features() const { return static_cast<int>(feature_names.size()); }

    double feature(int row, int col) const {
        return features[static_cast<std::size_t>(row) * feature_names.size() + col];
    }
    const double* row(int r) const {
        return features.data() + static_cast<std::size_t>(r) * feature_names.size();
    }

    int task_index(const std::string& name) const;     // -1 if absent
    const TaskSpec& task(const std::string& name) const;  // throws ValidationError
    int feature_index(const std::string& name) const;  // -1 if absent

    std::optional<double> label(int row, int task) const;
    std::size_t label_count(int task) const { return labels[task].size(); }

    /// Enforce structural invariants. When `require_labels` is set, every
    /// task must carry at least one label (the ingestion-time contract;
    /// cleaning operations may legitimately empty a task).
    void validate(bool require_labels = false) const;

    /// Row subset/reorder; label sparsity structure preserved.
    Dataset select_rows(const std::vector<int>& rows) const;

    /// Copy with one dense feature column appended.
    Dataset with_feature_column(const std::string& name,
                                const std::vector<double>& values) const;
};

// ---------------------------------------------------------------------------
// Delimited-text ingestion
// ---------------------------------------------------------------------------

enum class ColumnRole { RowId, Feature, Task, Ignore };

/// Column->role mapping plus task declarations, supplied as a JSON sidecar
/// file or assembled from CLI flags. Every column of the file must be mapped.
struct Schema {
    std::map<std::string, ColumnRole> columns;
    std::vector<TaskSpec> tasks;  // classes may be empty: built on first appearance

    static Schema load(const std::string& path);
    void save(const std::string& path) const;
    static Schema from_json_text(const std::string& text);
    std::string to_json_text() const;
};

/// Parse a comma-separated file (header row, UTF-8, "." decimal separator,
/// empty cell = missing label). Feature cells must be complete and numeric.
Dataset load_delimited(const std::string& path, const Schema& schema);

/// Write `ds` in the same format, full round-trip precision. The companion
/// schema is written by Schema::save.
void write_delimited(const Dataset& ds, const std::string& path);
Schema schema_of(const Dataset& ds);

// ---------------------------------------------------------------------------
// Cleaning operations
// ---------------------------------------------------------------------------

/// Group key: feature column names, or "row_id" for the identifier column.
using GroupKey = std::vector<std::string>;

struct AverageDuplicatesResult {
    Dataset dataset;
    /// Mean within-group population variance of the task's labels, over
    /// groups with at least two labels; the irreducible-noise estimate.
    double noise_estimate = 0.0;
    int groups_merged = 0;
};

/// Merge rows sharing `group_key`, replacing the Real task's labels in each
/// group by their mean. Other tasks keep the group's first observed label.
AverageDuplicatesResult average_duplicates(const Dataset& ds, const GroupKey& group_key,
                                           const std::string& task);

/// Same grouping, keeping the minimum label instead of the mean (used to
/// reduce per-site measurements to the most favorable one).
Dataset min_duplicates(const Dataset& ds, const GroupKey& group_key,
                       const std::string& task);

struct CollapseClassesResult {
    Dataset dataset;
    std::map<std::string, int> class_counts;
    /// Classes that ended up with fewer than min_count instances.
    std::vector<std::string> under_populated;
};

/// Remap a categorical task's labels through merge_map (source class ->
/// target class; classes absent from the map keep their name). The targets
/// form the new vocabulary in first-appearance order over the old one.
CollapseClassesResult collapse_classes(const Dataset& ds, const std::string& task,
                                       const std::map<std::string, std::string>& merge_map,
                                       int min_count);

/// Remove ALL labels of `task` from any group whose labels disagree.
/// Rows and other tasks are untouched.
Dataset drop_conflicting_labels(const Dataset& ds, const std::string& task,
                                const GroupKey& group_key);

using RowPredicate = std::function<bool(const Dataset&, int)>;

/// Order-preserving row filter.
Dataset filter_rows(const Dataset& ds, const RowPredicate& pred);

/// Uniform sample of n rows without replacement; output in draw order, so
/// n == n_rows yields a permutation.
Dataset subsample(const Dataset& ds, int n, std::uint64_t seed);

}  // namespace tlf
