#include "tlforest/experiment.hpp"

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "json_util.hpp"
#include "tlforest/error.hpp"
#include "tlforest/hashing.hpp"
#include "tlforest/rng.hpp"
#include "tlforest/uncertainty.hpp"

namespace tlf {

using detail::json;
namespace fs = std::filesystem;

namespace {

EvalMode mode_from_name(const std::string& s) {
    if (s == "cv") return EvalMode::CrossValidation;
    if (s == "holdout") return EvalMode::Holdout;
    if (s == "learning_curve") return EvalMode::LearningCurve;
    throw ValidationError("unknown evaluation mode '" + s + "'");
}

std::string mode_name(EvalMode m) {
    switch (m) {
        case EvalMode::CrossValidation: return "cv";
        case EvalMode::Holdout: return "holdout";
        case EvalMode::LearningCurve: return "learning_curve";
    }
    return "?";
}

ScopeKind scope_from_name(const std::string& s) {
    if (s == "auto") return ScopeKind::Auto;
    if (s == "target") return ScopeKind::TargetLabeled;
    if (s == "composite") return ScopeKind::CompositeLabeled;
    throw ValidationError("unknown scope '" + s + "'");
}

std::string scope_name(ScopeKind s) {
    switch (s) {
        case ScopeKind::Auto: return "auto";
        case ScopeKind::TargetLabeled: return "target";
        case ScopeKind::CompositeLabeled: return "composite";
    }
    return "?";
}

CompositeTaskSpec composite_from_json(const json& j) {
    CompositeTaskSpec c;
    c.name = j.at("name").get<std::string>();
    c.source_tasks = j.at("sources").get<std::vector<std::string>>();
    const std::string rule = j.value("rule", "argmin");
    if (rule == "argmin") c.rule = CompositeTaskSpec::Rule::ArgMin;
    else if (rule == "argmax") c.rule = CompositeTaskSpec::Rule::ArgMax;
    else throw ValidationError("unknown composite rule '" + rule + "'");
    c.validate();
    return c;
}

json composite_to_json(const CompositeTaskSpec& c) {
    json j;
    j["name"] = c.name;
    j["sources"] = c.source_tasks;
    j["rule"] = c.rule == CompositeTaskSpec::Rule::ArgMin ? "argmin" : "argmax";
    return j;
}

void write_file(const std::string& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write '" + path + "'");
    out << text;
}

std::string read_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

ExperimentConfig ExperimentConfig::from_json_text(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ParseError(std::string("config is not valid JSON: ") + e.what());
    }
    if (j.value("version", 1) != 1) throw ValidationError("unsupported config version");

    ExperimentConfig cfg;
    cfg.seed = j.value("seed", 0ull);

    if (!j.contains("dataset")) throw ValidationError("config missing 'dataset'");
    const json& d = j["dataset"];
    if (d.contains("synth")) {
        cfg.synth = SynthConfig::from_json_text(d["synth"].dump());
    } else {
        cfg.csv_path = d.at("csv").get<std::string>();
        cfg.schema_path = d.at("schema").get<std::string>();
    }

    for (const auto& step : j.value("preprocess", json::array())) {
        PreprocessStep s;
        s.op = step.at("op").get<std::string>();
        s.args_json = step.dump();
        cfg.preprocess.push_back(std::move(s));
    }

    if (j.contains("forest")) cfg.forest = detail::params_from_json(j["forest"]);

    for (const auto& a : j.value("architectures", json::array())) {
        ArchitectureEntry entry;
        entry.name = a.at("name").get<std::string>();
        if (a.contains("spec_file"))
            entry.spec =
                ArchitectureSpec::from_json_text(read_file(a["spec_file"].get<std::string>()));
        else
            entry.spec = ArchitectureSpec::from_json_text(a.at("spec").dump());
        if (a.contains("forest")) entry.params = detail::params_from_json(a["forest"]);
        if (a.contains("trials")) entry.trials = a["trials"].get<int>();
        cfg.architectures.push_back(std::move(entry));
    }

    if (j.contains("composite")) cfg.composite = composite_from_json(j["composite"]);

    if (j.contains("evaluation")) {
        const json& e = j["evaluation"];
        cfg.mode = mode_from_name(e.value("mode", "cv"));
        cfg.scope = scope_from_name(e.value("scope", "auto"));
        cfg.target_task = e.value("task", "");
        cfg.folds = e.value("folds", 8);
        cfg.trials = e.value("trials", 1);
        cfg.holdout_fraction = e.value("holdout_fraction", 0.1);
        if (e.contains("sizes")) cfg.sizes = e["sizes"].get<std::vector<int>>();
    }

    if (j.contains("pretrained"))
        cfg.pretrained_paths = j["pretrained"].get<std::map<std::string, std::string>>();

    cfg.output_dir = j.value("output_dir", "out");
    return cfg;
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
    return from_json_text(read_file(path));
}

std::string ExperimentConfig::to_json_text() const {
    json j;
    j["version"] = 1;
    j["seed"] = seed;
    if (synth) {
        j["dataset"] = json{{"synth", json::parse(synth->to_json_text())}};
    } else {
        j["dataset"] = json{{"csv", csv_path}, {"schema", schema_path}};
    }
    json steps = json::array();
    for (const auto& s : preprocess) steps.push_back(json::parse(s.args_json));
    j["preprocess"] = std::move(steps);
    j["forest"] = detail::params_to_json(forest);
    json archs = json::array();
    for (const auto& a : architectures) {
        json ja;
        ja["name"] = a.name;
        ja["spec"] = json::parse(a.spec.to_json_text());
        if (a.params) ja["forest"] = detail::params_to_json(*a.params);
        if (a.trials) ja["trials"] = *a.trials;
        archs.push_back(std::move(ja));
    }
    j["architectures"] = std::move(archs);
    if (composite) j["composite"] = composite_to_json(*composite);
    json e;
    e["mode"] = mode_name(mode);
    e["scope"] = scope_name(scope);
    if (!target_task.empty()) e["task"] = target_task;
    e["folds"] = folds;
    e["trials"] = trials;
    e["holdout_fraction"] = holdout_fraction;
    if (!sizes.empty()) e["sizes"] = sizes;
    j["evaluation"] = std::move(e);
    if (!pretrained_paths.empty()) j["pretrained"] = pretrained_paths;
    j["output_dir"] = output_dir;
    return j.dump(2) + "\n";
}

std::uint64_t ExperimentConfig::fingerprint() const {
    ExperimentConfig canon = *this;
    canon.output_dir.clear();
    return fnv1a64(canon.to_json_text());
}

// ---------------------------------------------------------------------------
// Preprocessing
// ---------------------------------------------------------------------------

namespace {

GroupKey parse_group_key(const json& j) {
    return j.at("group_key").get<std::vector<std::string>>();
}

void validate_group_key(const Dataset& ds, const GroupKey& key) {
    for (const auto& k : key)
        if (k != "row_id" && ds.feature_index(k) < 0)
            throw ValidationError("group key column '" + k + "' is not a feature");
}

RowPredicate predicate_from_json(const Dataset& ds, const json& j) {
    if (j.contains("has_label")) {
        const std::string task = j["has_label"].get<std::string>();
        const int t = ds.task_index(task);
        if (t < 0) throw ValidationError("filter references unknown task '" + task + "'");
        return [t](const Dataset& d, int r) { return d.label(r, t).has_value(); };
    }
    const std::string column = j.at("column").get<std::string>();
    const int c = ds.feature_index(column);
    if (c < 0) throw ValidationError("filter references unknown column '" + column + "'");
    const std::string cmp = j.at("cmp").get<std::string>();
    const double value = j.at("value").get<double>();
    if (cmp == "==") return [c, value](const Dataset& d, int r) { return d.feature(r, c) == value; };
    if (cmp == "!=") return [c, value](const Dataset& d, int r) { return d.feature(r, c) != value; };
    if (cmp == "<") return [c, value](const Dataset& d, int r) { return d.feature(r, c) < value; };
    if (cmp == "<=") return [c, value](const Dataset& d, int r) { return d.feature(r, c) <= value; };
    if (cmp == ">") return [c, value](const Dataset& d, int r) { return d.feature(r, c) > value; };
    if (cmp == ">=") return [c, value](const Dataset& d, int r) { return d.feature(r, c) >= value; };
    throw ValidationError("unknown comparison '" + cmp + "'");
}

void validate_step(const Dataset& ds, const PreprocessStep& step) {
    const json j = json::parse(step.args_json);
    if (step.op == "filter") {
        predicate_from_json(ds, j);
    } else if (step.op == "average_duplicates" || step.op == "min_duplicates") {
        const std::string task = j.at("task").get<std::string>();
        if (ds.task(task).kind != TaskKind::Real)
            throw ValidationError("'" + step.op + "' requires a Real task");
        validate_group_key(ds, parse_group_key(j));
    } else if (step.op == "collapse_classes") {
        const std::string task = j.at("task").get<std::string>();
        if (ds.task(task).kind != TaskKind::Categorical)
            throw ValidationError("'collapse_classes' requires a categorical task");
        j.at("merge_map").get<std::map<std::string, std::string>>();
    } else if (step.op == "drop_conflicting") {
        const std::string task = j.at("task").get<std::string>();
        if (ds.task(task).kind != TaskKind::Categorical)
            throw ValidationError("'drop_conflicting' requires a categorical task");
        validate_group_key(ds, parse_group_key(j));
    } else if (step.op == "subsample") {
        j.at("n").get<int>();
    } else {
        throw ValidationError("unknown preprocessing op '" + step.op + "'");
    }
}

json label_counts(const Dataset& ds) {
    json out = json::object();
    for (std::size_t t = 0; t < ds.tasks.size(); ++t)
        out[ds.tasks[t].name] = ds.labels[t].size();
    return out;
}

Dataset apply_step(const Dataset& ds, const PreprocessStep& step, std::uint64_t seed,
                   json& report) {
    const json j = json::parse(step.args_json);
    if (step.op == "filter") return filter_rows(ds, predicate_from_json(ds, j));
    if (step.op == "average_duplicates") {
        auto res = average_duplicates(ds, parse_group_key(j), j.at("task").get<std::string>());
        report["noise_estimate"] = res.noise_estimate;
        report["groups_merged"] = res.groups_merged;
        return res.dataset;
    }
    if (step.op == "min_duplicates")
        return min_duplicates(ds, parse_group_key(j), j.at("task").get<std::string>());
    if (step.op == "collapse_classes") {
        auto res = collapse_classes(ds, j.at("task").get<std::string>(),
                                    j.at("merge_map").get<std::map<std::string, std::string>>(),
                                    j.value("min_count", 5));
        report["class_counts"] = res.class_counts;
        report["under_populated"] = res.under_populated;
        return res.dataset;
    }
    if (step.op == "drop_conflicting")
        return drop_conflicting_labels(ds, j.at("task").get<std::string>(), parse_group_key(j));
    if (step.op == "subsample") {
        const std::uint64_t s = j.contains("seed") ? j["seed"].get<std::uint64_t>() : seed;
        return subsample(ds, j.at("n").get<int>(), s);
    }
    throw ValidationError("unknown preprocessing op '" + step.op + "'");
}

}  // namespace

Dataset load_experiment_dataset(const ExperimentConfig& cfg, std::string* report_json) {
    Dataset ds = cfg.synth ? generate(*cfg.synth)
                           : load_delimited(cfg.csv_path, Schema::load(cfg.schema_path));

    // Each step is validated against the evolving dataset before it runs;
    // nothing is written until the whole recipe has succeeded.
    json steps = json::array();
    for (std::size_t i = 0; i < cfg.preprocess.size(); ++i) {
        const PreprocessStep& step = cfg.preprocess[i];
        try {
            validate_step(ds, step);
        } catch (const json::exception& e) {
            throw ValidationError("preprocessing op '" + step.op +
                                  "': " + std::string(e.what()));
        }
        json entry;
        entry["op"] = step.op;
        entry["rows_before"] = ds.n_rows();
        entry["labels_before"] = label_counts(ds);
        ds = apply_step(ds, step, rng::derive(cfg.seed, 0xC1EA + i), entry);
        entry["rows_after"] = ds.n_rows();
        entry["labels_after"] = label_counts(ds);
        steps.push_back(std::move(entry));
    }
    if (report_json) {
        json report;
        report["fingerprint"] = fnv1a64(cfg.to_json_text());
        report["steps"] = std::move(steps);
        report["rows"] = ds.n_rows();
        report["labels"] = label_counts(ds);
        *report_json = report.dump(2) + "\n";
    }
    return ds;
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

void cmd_synth(const SynthConfig& cfg, const std::string& out_csv,
               const std::string& out_schema) {
    const Dataset ds = generate(cfg);
    write_delimited(ds, out_csv);
    schema_of(ds).save(out_schema);
}

namespace {

json manifest_json(const ExperimentConfig& cfg) {
    json m;
    m["fingerprint"] = cfg.fingerprint();
    m["seed"] = cfg.seed;
    return m;
}

PretrainedStore load_pretrained(const ExperimentConfig& cfg) {
    PretrainedStore store;
    for (const auto& [handle, path] : cfg.pretrained_paths)
        store[handle] = Forest::load(path);
    return store;
}

EvalJob job_from_config(const ExperimentConfig& cfg, const PretrainedStore* store) {
    EvalJob job;
    job.specs = cfg.architectures;
    job.target_task = cfg.target_task;
    job.composite = cfg.composite;
    job.mode = cfg.mode;
    job.scope = cfg.scope;
    job.folds = cfg.folds;
    job.trials = cfg.trials;
    job.holdout_fraction = cfg.holdout_fraction;
    job.sizes = cfg.sizes;
    job.seed = cfg.seed;
    job.forest = cfg.forest;
    job.pretrained = store;
    return job;
}

}  // namespace

std::string cmd_ingest(const ExperimentConfig& cfg) {
    std::string report;
    const Dataset ds = load_experiment_dataset(cfg, &report);
    fs::create_directories(cfg.output_dir);
    write_delimited(ds, cfg.output_dir + "/cleaned.csv");
    schema_of(ds).save(cfg.output_dir + "/cleaned.schema.json");
    write_file(cfg.output_dir + "/ingest_report.json", report);
    return report;
}

void cmd_train(const ExperimentConfig& cfg, const std::string& architecture) {
    if (cfg.architectures.empty()) throw ValidationError("config declares no architectures");
    const Dataset ds = load_experiment_dataset(cfg);
    const PretrainedStore store = load_pretrained(cfg);
    bool found = false;
    fs::create_directories(cfg.output_dir);
    for (std::size_t i = 0; i < cfg.architectures.size(); ++i) {
        const ArchitectureEntry& entry = cfg.architectures[i];
        if (!architecture.empty() && entry.name != architecture) continue;
        found = true;
        ForestParams params = entry.params ? *entry.params : cfg.forest;
        params.seed = rng::derive(cfg.seed, 0xA11C + i);
        const TrainedArchitecture ta = train_architecture(entry.spec, ds, params, store);
        ta.save(cfg.output_dir + "/" + entry.name + ".model.json");
        json manifest = manifest_json(cfg);
        manifest["architecture"] = entry.name;
        manifest["forest_seed"] = params.seed;
        manifest["training_rows"] = ta.training_rows;
        write_file(cfg.output_dir + "/" + entry.name + ".manifest.json",
                   manifest.dump(2) + "\n");
    }
    if (!found) throw ValidationError("architecture '" + architecture + "' not in config");
}

void cmd_predict(const std::string& model_path, const std::string& input_csv,
                 const std::string& input_schema, const std::string& out_csv) {
    const TrainedArchitecture ta = TrainedArchitecture::load(model_path);
    const Dataset in = load_delimited(input_csv, Schema::load(input_schema));
    if (in.feature_names != ta.feature_names)
        throw ValidationError("input features do not match the model (expected " +
                              std::to_string(ta.feature_names.size()) + " features)");

    // Column layout comes from the model's output tasks.
    std::vector<std::pair<std::string, const TaskSpec*>> outputs;
    for (const auto& stage : ta.stages) {
        for (const auto& task : stage.tasks) {
            if (ta.spec.kind == ArchitectureSpec::Kind::Difference &&
                task != ta.spec.reference_task)
                continue;  // the delta task is internal
            outputs.emplace_back(task, &stage.forest.task(task).spec);
        }
    }
    if (ta.spec.kind == ArchitectureSpec::Kind::Difference)
        outputs.emplace_back(ta.spec.target_task, nullptr);

    std::ofstream out(out_csv);
    if (!out) throw Error("cannot write '" + out_csv + "'");
    out << "row_id";
    for (const auto& [task, spec] : outputs) {
        if (!spec || spec->kind == TaskKind::Real) {
            out << ',' << task << ',' << task << "_stderr";
        } else {
            out << ',' << task;
            for (const auto& cls : spec->classes) out << ',' << task << "_prob_" << cls;
        }
    }
    out << '\n';
    char buf[40];
    const auto num = [&](double v) {
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        return std::string(buf);
    };
    for (int r = 0; r < in.n_rows(); ++r) {
        std::span<const double> x(in.row(r), static_cast<std::size_t>(in.n_features()));
        const auto preds = predict_architecture(ta, x, /*with_uncertainty=*/true);
        out << in.row_ids[r];
        for (const auto& [task, spec] : outputs) {
            const TaskPrediction& p = preds.at(task);
            if (!spec || spec->kind == TaskKind::Real) {
                out << ',' << num(p.value) << ',' << num(p.uncertainty->std_error);
            } else {
                out << ',' << spec->classes[p.classification->class_index];
                for (const double prob : p.classification->probabilities)
                    out << ',' << num(prob);
            }
        }
        out << '\n';
    }
}

EvalReport cmd_evaluate(const ExperimentConfig& cfg) {
    const Dataset ds = load_experiment_dataset(cfg);
    const PretrainedStore store = load_pretrained(cfg);
    const EvalJob job = job_from_config(cfg, &store);
    EvalReport report = cfg.mode == EvalMode::CrossValidation ? cross_validate(ds, job)
                                                              : learning_curve(ds, job);
    report.fingerprint = cfg.fingerprint();
    fs::create_directories(cfg.output_dir);
    write_file(cfg.output_dir + "/report.json", report.to_json_text());
    for (const auto& metric : report.metrics)
        write_file(cfg.output_dir + "/" + metric + ".csv", report.to_table(metric));
    return report;
}

}  // namespace tlf
