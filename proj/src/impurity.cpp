#include "tlforest/impurity.hpp"

#include <cmath>

namespace tlf {

double variance_impurity(std::span<const double> labels) {
    const std::size_t n = labels.size();
    if (n < 2) return 0.0;
    double sum = 0.0;
    for (const double y : labels) sum += y;
    const double mean = sum / static_cast<double>(n);
    double ss = 0.0;
    for (const double y : labels) ss += (y - mean) * (y - mean);
    return ss / static_cast<double>(n);
}

double gini_impurity(std::span<const int> labels, int class_count) {
    const std::size_t n = labels.size();
    if (n == 0) return 0.0;
    std::vector<double> counts(class_count, 0.0);
    for (const int c : labels) counts[c] += 1.0;
    double sq = 0.0;
    for (const double c : counts) {
        const double p = c / static_cast<double>(n);
        sq += p * p;
    }
    return 1.0 - sq;
}

namespace {

double one_side(TaskKind kind, int class_count, std::span<const double> values) {
    if (values.empty()) return 0.0;
    if (kind == TaskKind::Real)
        return static_cast<double>(values.size()) * variance_impurity(values);
    std::vector<int> idx(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) idx[i] = static_cast<int>(values[i]);
    return static_cast<double>(values.size()) * gini_impurity(idx, class_count);
}

}  // namespace

double multitask_split_score(std::span<const SplitTaskLabels> tasks) {
    double score = 0.0;
    for (const auto& t : tasks)
        score += t.weight * (one_side(t.kind, t.class_count, t.left) +
                             one_side(t.kind, t.class_count, t.right));
    return score;
}

double multitask_node_impurity(std::span<const NodeTaskLabels> tasks) {
    double score = 0.0;
    for (const auto& t : tasks) score += t.weight * one_side(t.kind, t.class_count, t.values);
    return score;
}

}  // namespace tlf
