#pragma once

#include <json.hpp>

#include "tlforest/dataset.hpp"
#include "tlforest/error.hpp"
#include "tlforest/forest.hpp"

namespace tlf::detail {

using nlohmann::json;

inline json tree_count_to_json(const TreeCount& tc) {
    if (tc.rule == TreeCount::Rule::Fixed) return tc.value;
    return json{{"per_label", tc.value}};
}

inline TreeCount tree_count_from_json(const json& j) {
    if (j.is_number_integer()) return TreeCount::fixed(j.get<int>());
    if (j.is_object() && j.contains("per_label"))
        return TreeCount::per_label(j["per_label"].get<int>());
    throw ValidationError("num_trees must be an integer or {\"per_label\": k}");
}

inline json params_to_json(const ForestParams& p) {
    json j;
    j["num_trees"] = tree_count_to_json(p.num_trees);
    if (p.feature_subset_size) j["feature_subset_size"] = *p.feature_subset_size;
    j["min_node_size"] = p.min_node_size;
    j["seed"] = p.seed;
    if (!p.task_weights.empty()) j["task_weights"] = p.task_weights;
    return j;
}

inline ForestParams params_from_json(const json& j) {
    ForestParams p;
    if (j.contains("num_trees")) p.num_trees = tree_count_from_json(j["num_trees"]);
    if (j.contains("feature_subset_size") && !j["feature_subset_size"].is_null())
        p.feature_subset_size = j["feature_subset_size"].get<int>();
    if (j.contains("min_node_size")) p.min_node_size = j["min_node_size"].get<int>();
    if (j.contains("seed")) p.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("task_weights"))
        p.task_weights = j["task_weights"].get<std::map<std::string, double>>();
    return p;
}

inline json task_spec_to_json(const TaskSpec& t) {
    json j;
    j["name"] = t.name;
    j["kind"] = to_string(t.kind);
    if (!t.classes.empty()) j["classes"] = t.classes;
    if (!t.units.empty()) j["units"] = t.units;
    return j;
}

inline TaskSpec task_spec_from_json(const json& j) {
    TaskSpec t;
    t.name = j.at("name").get<std::string>();
    t.kind = task_kind_from_string(j.at("kind").get<std::string>());
    if (j.contains("classes")) t.classes = j["classes"].get<std::vector<std::string>>();
    if (j.contains("units")) t.units = j["units"].get<std::string>();
    return t;
}

}  // namespace tlf::detail
