#pragma once

#include <span>
#include <vector>

#include "tlforest/dataset.hpp"

namespace tlf {

/// Population variance (divide by count). Empty or singleton -> 0.
double variance_impurity(std::span<const double> labels);

/// Gini impurity 1 - sum_c p_c^2 over class indices < class_count.
/// Empty -> 0.
double gini_impurity(std::span<const int> labels, int class_count);

/// One task's labels at a node, split into the two candidate children.
/// Real label values are expected on the standardized (z-scored) scale the
/// trainer uses, so variance and Gini terms are commensurate.
struct SplitTaskLabels {
    TaskKind kind = TaskKind::Real;
    int class_count = 0;  // categorical only
    double weight = 1.0;
    std::vector<double> left;
    std::vector<double> right;
};

/// Split score: sum over tasks of weight * (n_left * I(left) + n_right * I(right)),
/// where I is variance or Gini over the labels present in each child and n_*
/// are present-label counts. Rows lacking a task's label contribute nothing
/// to that task's term. Lower is better.
double multitask_split_score(std::span<const SplitTaskLabels> tasks);

/// One task's labels at an unsplit node, on the same scale as above.
struct NodeTaskLabels {
    TaskKind kind = TaskKind::Real;
    int class_count = 0;
    double weight = 1.0;
    std::vector<double> values;
};

/// Node impurity: sum over tasks of weight * n * I(values). The weighted
/// child impurity of any accepted split never exceeds this.
double multitask_node_impurity(std::span<const NodeTaskLabels> tasks);

}  // namespace tlf
