#include "tlforest/transfer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "json_util.hpp"
#include "tlforest/error.hpp"
#include "tlforest/rng.hpp"

namespace tlf {

using detail::json;

namespace {

std::string latent_column(const std::string& task) { return "__latent_" + task + "__"; }

const char* kind_name(ArchitectureSpec::Kind k) {
    switch (k) {
        case ArchitectureSpec::Kind::SingleTask: return "single_task";
        case ArchitectureSpec::Kind::MultiTask: return "multi_task";
        case ArchitectureSpec::Kind::Difference: return "difference";
        case ArchitectureSpec::Kind::LatentVariable: return "latent_variable";
    }
    return "?";
}

ArchitectureSpec::Kind kind_from_name(const std::string& s) {
    if (s == "single_task") return ArchitectureSpec::Kind::SingleTask;
    if (s == "multi_task") return ArchitectureSpec::Kind::MultiTask;
    if (s == "difference") return ArchitectureSpec::Kind::Difference;
    if (s == "latent_variable") return ArchitectureSpec::Kind::LatentVariable;
    throw ValidationError("unknown architecture kind '" + s + "'");
}

}  // namespace

std::string difference_task_name(const ArchitectureSpec& spec) {
    return "__delta_" + spec.target_task + "__";
}

void ArchitectureSpec::validate() const {
    switch (kind) {
        case Kind::SingleTask:
            if (task.empty()) throw ValidationError("single_task spec needs a task");
            break;
        case Kind::MultiTask: {
            if (tasks.empty()) throw ValidationError("multi_task spec needs tasks");
            std::set<std::string> seen(tasks.begin(), tasks.end());
            if (seen.size() != tasks.size())
                throw ValidationError("multi_task spec lists a task twice");
            break;
        }
        case Kind::Difference:
            if (target_task.empty() || reference_task.empty())
                throw ValidationError("difference spec needs target and reference tasks");
            if (target_task == reference_task)
                throw ValidationError("difference target and reference must differ");
            if (reference_pretrained && pretrained_handle.empty())
                throw ValidationError("pretrained reference model needs a handle");
            if (divide_epsilon <= 0)
                throw ValidationError("divide_epsilon must be positive");
            break;
        case Kind::LatentVariable: {
            if (stages.empty()) throw ValidationError("latent_variable spec needs stages");
            std::set<std::string> upstream;
            for (const auto& stage : stages) {
                if (stage.task.empty())
                    throw ValidationError("latent stage needs a task");
                if (upstream.count(stage.task))
                    throw ValidationError("latent stage task '" + stage.task +
                                          "' appears twice");
                for (const auto& dep : stage.latent_inputs)
                    if (!upstream.count(dep))
                        throw ValidationError(
                            "latent input '" + dep + "' of stage '" + stage.task +
                            "' does not reference an earlier stage (cycle or forward edge)");
                upstream.insert(stage.task);
            }
            break;
        }
    }
}

void ArchitectureSpec::validate(const Dataset& ds) const {
    validate();
    const auto require = [&](const std::string& name) -> const TaskSpec& {
        return ds.task(name);
    };
    switch (kind) {
        case Kind::SingleTask:
            require(task);
            break;
        case Kind::MultiTask:
            for (const auto& t : tasks) require(t);
            break;
        case Kind::Difference: {
            if (require(target_task).kind != TaskKind::Real ||
                require(reference_task).kind != TaskKind::Real)
                throw ValidationError(
                    "difference learning requires Real target and reference tasks");
            break;
        }
        case Kind::LatentVariable:
            for (const auto& stage : stages) {
                require(stage.task);
                for (const auto& dep : stage.latent_inputs)
                    if (require(dep).kind != TaskKind::Real)
                        throw ValidationError("latent input '" + dep +
                                              "' must be a Real task");
            }
            break;
    }
}

// ---------------------------------------------------------------------------
// JSON
// ---------------------------------------------------------------------------

namespace {

json spec_to_json(const ArchitectureSpec& s) {
    json j;
    j["kind"] = kind_name(s.kind);
    switch (s.kind) {
        case ArchitectureSpec::Kind::SingleTask:
            j["task"] = s.task;
            break;
        case ArchitectureSpec::Kind::MultiTask:
            j["tasks"] = s.tasks;
            if (!s.task_weights.empty()) j["task_weights"] = s.task_weights;
            break;
        case ArchitectureSpec::Kind::Difference:
            j["target"] = s.target_task;
            j["reference"] = s.reference_task;
            j["op"] = s.op == DiffOp::Subtract ? "subtract" : "divide";
            if (s.reference_pretrained) j["pretrained"] = s.pretrained_handle;
            j["divide_epsilon"] = s.divide_epsilon;
            if (s.reference_params)
                j["reference_params"] = detail::params_to_json(*s.reference_params);
            if (s.delta_params) j["delta_params"] = detail::params_to_json(*s.delta_params);
            break;
        case ArchitectureSpec::Kind::LatentVariable: {
            json stages = json::array();
            for (const auto& st : s.stages) {
                json js;
                js["task"] = st.task;
                if (!st.latent_inputs.empty()) js["latent_inputs"] = st.latent_inputs;
                if (st.use_observed_latents) js["use_observed_latents"] = true;
                if (st.use_oob_latents) js["use_oob_latents"] = true;
                if (st.params) js["params"] = detail::params_to_json(*st.params);
                stages.push_back(std::move(js));
            }
            j["stages"] = std::move(stages);
            break;
        }
    }
    return j;
}

ArchitectureSpec spec_from_json(const json& j) {
    ArchitectureSpec s;
    s.kind = kind_from_name(j.at("kind").get<std::string>());
    switch (s.kind) {
        case ArchitectureSpec::Kind::SingleTask:
            s.task = j.at("task").get<std::string>();
            break;
        case ArchitectureSpec::Kind::MultiTask:
            s.tasks = j.at("tasks").get<std::vector<std::string>>();
            if (j.contains("task_weights"))
                s.task_weights = j["task_weights"].get<std::map<std::string, double>>();
            break;
        case ArchitectureSpec::Kind::Difference: {
            s.target_task = j.at("target").get<std::string>();
            s.reference_task = j.at("reference").get<std::string>();
            const std::string op = j.value("op", "subtract");
            if (op == "subtract") s.op = DiffOp::Subtract;
            else if (op == "divide") s.op = DiffOp::Divide;
            else throw ValidationError("unknown difference op '" + op + "'");
            if (j.contains("pretrained")) {
                s.reference_pretrained = true;
                s.pretrained_handle = j["pretrained"].get<std::string>();
            }
            if (j.contains("divide_epsilon")) s.divide_epsilon = j["divide_epsilon"].get<double>();
            if (j.contains("reference_params"))
                s.reference_params = detail::params_from_json(j["reference_params"]);
            if (j.contains("delta_params"))
                s.delta_params = detail::params_from_json(j["delta_params"]);
            break;
        }
        case ArchitectureSpec::Kind::LatentVariable:
            for (const auto& js : j.at("stages")) {
                StageSpec st;
                st.task = js.at("task").get<std::string>();
                if (js.contains("latent_inputs"))
                    st.latent_inputs = js["latent_inputs"].get<std::vector<std::string>>();
                st.use_observed_latents = js.value("use_observed_latents", false);
                st.use_oob_latents = js.value("use_oob_latents", false);
                if (js.contains("params")) st.params = detail::params_from_json(js["params"]);
                s.stages.push_back(std::move(st));
            }
            break;
    }
    s.validate();
    return s;
}

}  // namespace

std::string ArchitectureSpec::to_json_text() const {
    json j = spec_to_json(*this);
    j["schema_version"] = 1;
    return j.dump(2) + "\n";
}

ArchitectureSpec ArchitectureSpec::from_json_text(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ParseError(std::string("architecture spec is not valid JSON: ") + e.what());
    }
    if (j.contains("schema_version") && j["schema_version"].get<int>() != 1)
        throw ValidationError("unsupported architecture spec schema version");
    return spec_from_json(j);
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

namespace {

ForestParams stage_params(const ForestParams& base, const std::optional<ForestParams>& override_,
                          std::uint64_t base_seed, std::uint64_t stage_index) {
    ForestParams p = override_ ? *override_ : base;
    p.seed = rng::derive(override_ ? p.seed : base_seed, stage_index);
    return p;
}

/// Predict one stage's task for every dataset row, as a column. `inputs`
/// holds the already-computed upstream columns.
std::vector<double> stage_column(const Dataset& ds, const TrainedStage& stage,
                                 const std::map<std::string, std::vector<double>>& inputs) {
    const int d = ds.n_features();
    std::vector<double> out(ds.n_rows());
    std::vector<double> x(d + stage.latent_inputs.size());
    for (int r = 0; r < ds.n_rows(); ++r) {
        std::copy(ds.row(r), ds.row(r) + d, x.begin());
        for (std::size_t k = 0; k < stage.latent_inputs.size(); ++k)
            x[d + k] = inputs.at(stage.latent_inputs[k])[r];
        out[r] = predict_real(stage.forest, stage.tasks[0], x);
    }
    return out;
}

}  // namespace

TrainedArchitecture train_architecture(const ArchitectureSpec& spec, const Dataset& ds,
                                       const ForestParams& params,
                                       const PretrainedStore& pretrained) {
    spec.validate(ds);
    TrainedArchitecture ta;
    ta.spec = spec;
    ta.feature_names = ds.feature_names;
    ta.base_seed = params.seed;

    switch (spec.kind) {
        case ArchitectureSpec::Kind::SingleTask: {
            ForestParams p = stage_params(params, std::nullopt, params.seed, 0);
            TrainedStage stage{{spec.task}, {}, train_forest(ds, {spec.task}, p)};
            ta.training_rows[spec.task] = stage.forest.training_row_ids.size();
            ta.stages.push_back(std::move(stage));
            break;
        }
        case ArchitectureSpec::Kind::MultiTask: {
            ForestParams p = stage_params(params, std::nullopt, params.seed, 0);
            for (const auto& [t, w] : spec.task_weights) p.task_weights[t] = w;
            TrainedStage stage{spec.tasks, {}, train_forest(ds, spec.tasks, p)};
            for (const auto& t : spec.tasks)
                ta.training_rows[t] = stage.forest.training_row_ids.size();
            ta.stages.push_back(std::move(stage));
            break;
        }
        case ArchitectureSpec::Kind::Difference: {
            // Reference model.
            Forest ref;
            if (spec.reference_pretrained) {
                const auto it = pretrained.find(spec.pretrained_handle);
                if (it == pretrained.end())
                    throw ValidationError("pretrained handle '" + spec.pretrained_handle +
                                          "' not found");
                ref = it->second;
                if (ref.task_index(spec.reference_task) < 0)
                    throw ValidationError("pretrained model does not cover task '" +
                                          spec.reference_task + "'");
                if (ref.feature_names != ds.feature_names)
                    throw ValidationError("pretrained model features do not match dataset");
            } else {
                ForestParams p = stage_params(params, spec.reference_params, params.seed, 0);
                ref = train_forest(ds, {spec.reference_task}, p);
            }

            // Relabel rows carrying both labels.
            const int t_target = ds.task_index(spec.target_task);
            const int t_ref = ds.task_index(spec.reference_task);
            const std::string delta_task = difference_task_name(spec);
            if (ds.task_index(delta_task) >= 0)
                throw ValidationError("task name '" + delta_task + "' is reserved");

            std::vector<std::pair<int, double>> shared;  // row -> (target, ref)
            std::vector<double> ref_vals;
            for (const auto& [row, y] : ds.labels[t_target]) {
                const auto yr = ds.label(row, t_ref);
                if (!yr) continue;
                shared.emplace_back(row, y);
                ref_vals.push_back(*yr);
            }
            if (shared.empty())
                throw ValidationError(
                    "difference learning needs at least one row with both '" +
                    spec.target_task + "' and '" + spec.reference_task + "' labels");

            double guard = 1.0;
            if (spec.op == DiffOp::Divide) {
                double sum = 0;
                for (const double v : ref_vals) sum += v;
                const double mean = sum / ref_vals.size();
                double ss = 0;
                for (const double v : ref_vals) ss += (v - mean) * (v - mean);
                const double sd = std::sqrt(ss / ref_vals.size());
                guard = spec.divide_epsilon * (sd > 0 ? sd : 1.0);
            }

            Dataset delta_ds = ds;
            TaskSpec dt;
            dt.name = delta_task;
            dt.kind = TaskKind::Real;
            delta_ds.tasks.push_back(dt);
            delta_ds.labels.emplace_back();
            for (std::size_t i = 0; i < shared.size(); ++i) {
                const auto [row, y] = shared[i];
                const double yr = ref_vals[i];
                if (spec.op == DiffOp::Subtract) {
                    delta_ds.labels.back()[row] = y - yr;
                } else {
                    if (std::abs(yr) < guard)
                        throw ValidationError("row '" + ds.row_ids[row] +
                                              "': reference label too close to zero for "
                                              "divide relabeling");
                    delta_ds.labels.back()[row] = y / yr;
                }
            }

            ForestParams dp = stage_params(params, spec.delta_params, params.seed, 1);
            TrainedStage delta_stage{{delta_task}, {},
                                     train_forest(delta_ds, {delta_task}, dp)};
            ta.training_rows[spec.reference_task] = ref.training_row_ids.size();
            ta.training_rows[spec.target_task] = delta_stage.forest.training_row_ids.size();
            ta.stages.push_back(TrainedStage{{spec.reference_task}, {}, std::move(ref)});
            ta.stages.push_back(std::move(delta_stage));
            break;
        }
        case ArchitectureSpec::Kind::LatentVariable: {
            std::set<std::string> consumed;
            for (const auto& st : spec.stages)
                consumed.insert(st.latent_inputs.begin(), st.latent_inputs.end());
            // Model-predicted columns for every row, per completed stage.
            std::map<std::string, std::vector<double>> predicted;
            for (std::size_t s = 0; s < spec.stages.size(); ++s) {
                const StageSpec& st = spec.stages[s];
                Dataset stage_ds = ds;
                for (const auto& dep : st.latent_inputs) {
                    std::vector<double> col = predicted.at(dep);
                    if (st.use_oob_latents) {
                        // Rows that sat in the upstream training set get
                        // out-of-bag values instead.
                        const TrainedStage* up = nullptr;
                        for (const auto& done : ta.stages)
                            if (done.tasks[0] == dep) up = &done;
                        std::map<std::string, int> up_row;
                        for (int i = 0; i < up->forest.n_training_rows(); ++i)
                            up_row[up->forest.training_row_ids[i]] = i;
                        const int d = ds.n_features();
                        std::vector<double> x(d + up->latent_inputs.size());
                        for (int r = 0; r < ds.n_rows(); ++r) {
                            const auto it = up_row.find(ds.row_ids[r]);
                            if (it == up_row.end()) continue;
                            std::copy(ds.row(r), ds.row(r) + d, x.begin());
                            for (std::size_t k = 0; k < up->latent_inputs.size(); ++k)
                                x[d + k] = predicted.at(up->latent_inputs[k])[r];
                            col[r] = predict_real_oob(up->forest, dep, x, it->second);
                        }
                    }
                    if (st.use_observed_latents) {
                        const int dep_idx = ds.task_index(dep);
                        for (const auto& [row, v] : ds.labels[dep_idx]) col[row] = v;
                    }
                    stage_ds = stage_ds.with_feature_column(latent_column(dep), col);
                }
                ForestParams p = stage_params(params, st.params, params.seed, s);
                TrainedStage stage{{st.task}, st.latent_inputs,
                                   train_forest(stage_ds, {st.task}, p)};
                ta.training_rows[st.task] = stage.forest.training_row_ids.size();
                if (consumed.count(st.task))
                    predicted[st.task] = stage_column(ds, stage, predicted);
                ta.stages.push_back(std::move(stage));
            }
            break;
        }
    }
    return ta;
}

// ---------------------------------------------------------------------------
// Prediction
// ---------------------------------------------------------------------------

namespace {

TaskPrediction real_prediction(const Forest& f, const std::string& task,
                               std::span<const double> x, bool with_uncertainty) {
    TaskPrediction p;
    p.kind = TaskKind::Real;
    if (with_uncertainty) {
        p.uncertainty = jackknife_variance(f, task, x);
        p.value = p.uncertainty->mean;
    } else {
        p.value = predict_real(f, task, x);
    }
    return p;
}

}  // namespace

std::map<std::string, TaskPrediction> predict_architecture(const TrainedArchitecture& ta,
                                                           std::span<const double> x,
                                                           bool with_uncertainty) {
    if (static_cast<int>(x.size()) != ta.n_features())
        throw ValidationError("feature vector has dimension " + std::to_string(x.size()) +
                              ", expected " + std::to_string(ta.n_features()));
    std::map<std::string, TaskPrediction> out;

    switch (ta.spec.kind) {
        case ArchitectureSpec::Kind::SingleTask:
        case ArchitectureSpec::Kind::MultiTask: {
            const TrainedStage& stage = ta.stages[0];
            for (const auto& task : stage.tasks) {
                const TaskKind kind = stage.forest.task(task).spec.kind;
                if (kind == TaskKind::Real) {
                    out[task] = real_prediction(stage.forest, task, x, with_uncertainty);
                } else {
                    TaskPrediction p;
                    p.kind = TaskKind::Categorical;
                    p.classification = predict_class(stage.forest, task, x);
                    p.value = p.classification->class_index;
                    out[task] = p;
                }
            }
            break;
        }
        case ArchitectureSpec::Kind::Difference: {
            const TrainedStage& ref = ta.stages[0];
            const TrainedStage& delta = ta.stages[1];
            TaskPrediction pr, pd;
            try {
                pr = real_prediction(ref.forest, ta.spec.reference_task, x, with_uncertainty);
            } catch (const Error& e) {
                throw Error("reference stage '" + ta.spec.reference_task + "': " + e.what());
            }
            try {
                pd = real_prediction(delta.forest, delta.tasks[0], x, with_uncertainty);
            } catch (const Error& e) {
                throw Error("correction stage: " + std::string(e.what()));
            }
            TaskPrediction target;
            target.kind = TaskKind::Real;
            if (ta.spec.op == DiffOp::Subtract)
                target.value = pr.value + pd.value;
            else
                target.value = pr.value * pd.value;
            if (with_uncertainty) {
                // First-order propagation assuming independent sub-models.
                const double vr = pr.uncertainty->detail.v_combined;
                const double vd = pd.uncertainty->detail.v_combined;
                PredictionWithUncertainty u;
                u.mean = target.value;
                double v;
                if (ta.spec.op == DiffOp::Subtract)
                    v = vr + vd;
                else
                    v = pd.value * pd.value * vr + pr.value * pr.value * vd;
                u.detail.v_combined = v;
                u.detail.tree_count = pr.uncertainty->detail.tree_count +
                                      pd.uncertainty->detail.tree_count;
                u.std_error = std::sqrt(v > 0 ? v : 0);
                target.uncertainty = u;
            }
            out[ta.spec.reference_task] = std::move(pr);
            out[ta.spec.target_task] = std::move(target);
            break;
        }
        case ArchitectureSpec::Kind::LatentVariable: {
            const int d = ta.n_features();
            std::map<std::string, double> latent_values;
            for (const auto& stage : ta.stages) {
                std::vector<double> xin(x.begin(), x.end());
                xin.resize(d + stage.latent_inputs.size());
                for (std::size_t k = 0; k < stage.latent_inputs.size(); ++k)
                    xin[d + k] = latent_values.at(stage.latent_inputs[k]);
                const std::string& task = stage.tasks[0];
                const TaskKind kind = stage.forest.task(task).spec.kind;
                try {
                    if (kind == TaskKind::Real) {
                        TaskPrediction p = real_prediction(stage.forest, task, xin,
                                                           with_uncertainty);
                        latent_values[task] = p.value;
                        out[task] = std::move(p);
                    } else {
                        TaskPrediction p;
                        p.kind = TaskKind::Categorical;
                        p.classification = predict_class(stage.forest, task, xin);
                        p.value = p.classification->class_index;
                        out[task] = std::move(p);
                    }
                } catch (const Error& e) {
                    throw Error("stage '" + task + "': " + e.what());
                }
            }
            break;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

std::string TrainedArchitecture::to_json_text() const {
    json j;
    j["format"] = "tlforest.model";
    j["version"] = 1;
    j["spec"] = json::parse(spec.to_json_text());
    j["feature_names"] = feature_names;
    j["base_seed"] = base_seed;
    j["training_rows"] = training_rows;
    json jstages = json::array();
    for (const auto& stage : stages) {
        json js;
        js["tasks"] = stage.tasks;
        js["latent_inputs"] = stage.latent_inputs;
        js["forest"] = json::parse(stage.forest.to_json_text());
        jstages.push_back(std::move(js));
    }
    j["stages"] = std::move(jstages);
    return j.dump();
}

TrainedArchitecture TrainedArchitecture::from_json_text(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ParseError(std::string("model file is not valid JSON: ") + e.what());
    }
    if (j.value("format", "") != "tlforest.model")
        throw ValidationError("not a model file");
    if (j.value("version", 0) != 1) throw ValidationError("unsupported model version");
    TrainedArchitecture ta;
    ta.spec = ArchitectureSpec::from_json_text(j.at("spec").dump());
    ta.feature_names = j.at("feature_names").get<std::vector<std::string>>();
    ta.base_seed = j.at("base_seed").get<std::uint64_t>();
    ta.training_rows = j.at("training_rows").get<std::map<std::string, std::size_t>>();
    for (const auto& js : j.at("stages")) {
        TrainedStage stage;
        stage.tasks = js.at("tasks").get<std::vector<std::string>>();
        stage.latent_inputs = js.at("latent_inputs").get<std::vector<std::string>>();
        stage.forest = Forest::from_json_text(js.at("forest").dump());
        ta.stages.push_back(std::move(stage));
    }
    return ta;
}

void TrainedArchitecture::save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw Error("cannot write model file '" + path + "'");
    out << to_json_text();
}

TrainedArchitecture TrainedArchitecture::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open model file '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return from_json_text(ss.str());
}

}  // namespace tlf
