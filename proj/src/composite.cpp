#include "tlforest/composite.hpp"

#include <cmath>
#include <set>

#include "tlforest/error.hpp"

namespace tlf {

void CompositeTaskSpec::validate() const {
    if (name.empty()) throw ValidationError("composite task needs a name");
    if (source_tasks.size() < 2)
        throw ValidationError("composite task needs at least 2 source tasks");
    std::set<std::string> seen(source_tasks.begin(), source_tasks.end());
    if (seen.size() != source_tasks.size())
        throw ValidationError("composite task lists a source twice");
}

void CompositeTaskSpec::validate(const Dataset& ds) const {
    validate();
    for (const auto& t : source_tasks)
        if (ds.task(t).kind != TaskKind::Real)
            throw ValidationError("composite source '" + t + "' must be a Real task");
}

int classify_composite(const CompositeTaskSpec& spec,
                       const std::map<std::string, double>& predictions) {
    int best = -1;
    double best_value = 0;
    for (std::size_t i = 0; i < spec.source_tasks.size(); ++i) {
        const auto it = predictions.find(spec.source_tasks[i]);
        if (it == predictions.end())
            throw ValidationError("composite '" + spec.name + "': missing prediction for '" +
                                  spec.source_tasks[i] + "'");
        const double v = it->second;
        if (!std::isfinite(v))
            throw ValidationError("composite '" + spec.name + "': non-finite prediction for '" +
                                  spec.source_tasks[i] + "'");
        const bool better = spec.rule == CompositeTaskSpec::Rule::ArgMin ? v < best_value
                                                                         : v > best_value;
        if (best < 0 || better) {
            best = static_cast<int>(i);
            best_value = v;
        }
    }
    return best;
}

LabelMap composite_ground_truth(const Dataset& ds, const CompositeTaskSpec& spec) {
    spec.validate(ds);
    std::vector<int> task_idx;
    for (const auto& t : spec.source_tasks) task_idx.push_back(ds.task_index(t));
    LabelMap out;
    for (int r = 0; r < ds.n_rows(); ++r) {
        std::map<std::string, double> values;
        bool complete = true;
        for (std::size_t i = 0; i < task_idx.size(); ++i) {
            const auto v = ds.label(r, task_idx[i]);
            if (!v) {
                complete = false;
                break;
            }
            values[spec.source_tasks[i]] = *v;
        }
        if (complete) out[r] = classify_composite(spec, values);
    }
    return out;
}

}  // namespace tlf
