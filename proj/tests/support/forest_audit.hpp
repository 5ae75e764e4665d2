#pragma once

// Exhaustive split audit: re-derives every node's row multiset by routing the
// bootstrap sample through the stored tree and recomputes impurities with the
// public scoring functions, independently of the trainer's incremental sums.

#include <map>
#include <vector>

#include "tlforest/dataset.hpp"
#include "tlforest/forest.hpp"
#include "tlforest/impurity.hpp"

namespace testutil {

struct AuditResult {
    int splits_checked = 0;
    int violations = 0;
    int nodes_seen = 0;
};

namespace audit_detail {

struct RowRef {
    int ds_row;
    int mult;
};

inline void walk(const tlf::Forest& f, const tlf::Dataset& ds, const tlf::Tree& tree,
                 int node_index, const std::vector<RowRef>& rows,
                 const std::vector<int>& ds_task, double tol, AuditResult& res) {
    const tlf::TreeNode& node = tree.nodes[node_index];
    ++res.nodes_seen;
    if (node.is_leaf()) return;

    std::vector<RowRef> left, right;
    for (const auto& rr : rows) {
        if (ds.feature(rr.ds_row, node.feature) < node.threshold)
            left.push_back(rr);
        else
            right.push_back(rr);
    }

    std::vector<tlf::NodeTaskLabels> parent(f.tasks.size());
    std::vector<tlf::SplitTaskLabels> split(f.tasks.size());
    for (std::size_t t = 0; t < f.tasks.size(); ++t) {
        const tlf::ResolvedTask& task = f.tasks[t];
        const bool real = task.spec.kind == tlf::TaskKind::Real;
        parent[t].kind = split[t].kind = task.spec.kind;
        parent[t].class_count = split[t].class_count =
            static_cast<int>(task.spec.classes.size());
        parent[t].weight = split[t].weight = task.weight;
        const auto value_of = [&](int ds_row) -> std::optional<double> {
            const auto v = ds.label(ds_row, ds_task[t]);
            if (!v) return std::nullopt;
            return real ? task.standardize(*v) : *v;
        };
        for (const auto& rr : rows) {
            const auto v = value_of(rr.ds_row);
            if (v)
                for (int m = 0; m < rr.mult; ++m) parent[t].values.push_back(*v);
        }
        for (const auto& rr : left) {
            const auto v = value_of(rr.ds_row);
            if (v)
                for (int m = 0; m < rr.mult; ++m) split[t].left.push_back(*v);
        }
        for (const auto& rr : right) {
            const auto v = value_of(rr.ds_row);
            if (v)
                for (int m = 0; m < rr.mult; ++m) split[t].right.push_back(*v);
        }
    }

    const double parent_impurity = tlf::multitask_node_impurity(parent);
    const double child_impurity = tlf::multitask_split_score(split);
    ++res.splits_checked;
    if (child_impurity > parent_impurity + tol * std::max(1.0, parent_impurity))
        ++res.violations;

    walk(f, ds, tree, node.left, left, ds_task, tol, res);
    walk(f, ds, tree, node.right, right, ds_task, tol, res);
}

}  // namespace audit_detail

/// Check that every accepted split's weighted child impurity stays below the
/// unsplit node's impurity, for every tree in the forest.
inline AuditResult audit_monotonicity(const tlf::Forest& f, const tlf::Dataset& ds,
                                      double tol = 1e-9) {
    std::map<std::string, int> ds_row_of;
    for (int r = 0; r < ds.n_rows(); ++r) ds_row_of[ds.row_ids[r]] = r;
    std::vector<int> ds_task;
    for (const auto& t : f.tasks) ds_task.push_back(ds.task_index(t.spec.name));

    AuditResult res;
    for (std::size_t b = 0; b < f.trees.size(); ++b) {
        std::vector<audit_detail::RowRef> rows;
        for (int i = 0; i < f.n_training_rows(); ++i)
            if (f.membership[b][i] > 0)
                rows.push_back({ds_row_of.at(f.training_row_ids[i]), f.membership[b][i]});
        audit_detail::walk(f, ds, f.trees[b], 0, rows, ds_task, tol, res);
    }
    return res;
}

}  // namespace testutil
