#pragma once

#include <map>
#include <string>
#include <vector>

#include "tlforest/dataset.hpp"

namespace tlf {

/// A derived classification task computed from several regression outputs,
/// e.g. picking the reaction step with the lowest predicted activation
/// energy. The class vocabulary is the source task names in declared order.
struct CompositeTaskSpec {
    enum class Rule { ArgMin, ArgMax };
    std::string name;
    std::vector<std::string> source_tasks;  // >= 2, all Real
    Rule rule = Rule::ArgMin;

    void validate() const;
    void validate(const Dataset& ds) const;
};

/// Class index of the selected source task. Ties break toward the earliest
/// declared task. Throws when a source prediction is missing or non-finite.
int classify_composite(const CompositeTaskSpec& spec,
                       const std::map<std::string, double>& predictions);

/// Apply the same rule to observed labels: rows carrying all source labels
/// get a class index, others none.
LabelMap composite_ground_truth(const Dataset& ds, const CompositeTaskSpec& spec);

}  // namespace tlf
