#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tlforest/composite.hpp"
#include "tlforest/dataset.hpp"
#include "tlforest/error.hpp"
#include "tlforest/eval.hpp"
#include "tlforest/experiment.hpp"
#include "tlforest/forest.hpp"
#include "tlforest/synth.hpp"
#include "tlforest/transfer.hpp"
#include "tlforest/uncertainty.hpp"

namespace py = pybind11;
using namespace tlf;

namespace {

using DoubleArray = py::array_t<double, py::array::c_style | py::array::forcecast>;

Dataset make_dataset(DoubleArray features, std::vector<std::string> feature_names,
                     std::optional<std::vector<std::string>> row_ids) {
    const auto buf = features.request();
    if (buf.ndim != 2) throw ValidationError("features must be a 2-D array");
    const auto n = static_cast<std::size_t>(buf.shape[0]);
    const auto d = static_cast<std::size_t>(buf.shape[1]);
    if (feature_names.size() != d)
        throw ValidationError("feature_names length must match the feature count");
    Dataset ds;
    ds.feature_names = std::move(feature_names);
    const double* data = static_cast<const double*>(buf.ptr);
    ds.features.assign(data, data + n * d);
    if (row_ids) {
        if (row_ids->size() != n) throw ValidationError("row_ids length must match rows");
        ds.row_ids = std::move(*row_ids);
    } else {
        for (std::size_t r = 0; r < n; ++r) ds.row_ids.push_back("r" + std::to_string(r));
    }
    ds.validate();
    return ds;
}

ForestParams make_params(std::optional<int> num_trees, std::optional<int> trees_per_label,
                         std::optional<int> feature_subset_size, int min_node_size,
                         std::uint64_t seed, std::map<std::string, double> task_weights) {
    ForestParams p;
    if (num_trees && trees_per_label)
        throw ValidationError("pass either num_trees or trees_per_label, not both");
    if (num_trees) p.num_trees = TreeCount::fixed(*num_trees);
    if (trees_per_label) p.num_trees = TreeCount::per_label(*trees_per_label);
    p.feature_subset_size = feature_subset_size;
    p.min_node_size = min_node_size;
    p.seed = seed;
    p.task_weights = std::move(task_weights);
    return p;
}

std::vector<double> row_from(const DoubleArray& X, std::size_t r, std::size_t d) {
    const double* data = static_cast<const double*>(X.request().ptr);
    return std::vector<double>(data + r * d, data + (r + 1) * d);
}

void check_matrix(const DoubleArray& X, int d) {
    const auto buf = X.request();
    if (buf.ndim != 2 || buf.shape[1] != d)
        throw ValidationError("expected an (n, " + std::to_string(d) + ") array");
}

py::dict report_summary(const EvalReport& report) {
    py::dict out;
    out["json"] = report.to_json_text();
    py::dict tables;
    for (const auto& metric : report.metrics)
        tables[py::str(metric)] = report.to_table(metric);
    out["tables"] = tables;
    return out;
}

}  // namespace

PYBIND11_MODULE(_tlforest, m) {
    m.doc() = "multi-task random forests with transfer-learning architectures";

    py::register_exception<ParseError>(m, "TlfParseError", PyExc_ValueError);
    py::register_exception<ValidationError>(m, "TlfValidationError", PyExc_ValueError);
    py::register_exception<Error>(m, "TlfError", PyExc_RuntimeError);

    py::class_<Dataset>(m, "Dataset")
        .def(py::init(&make_dataset), py::arg("features"), py::arg("feature_names"),
             py::arg("row_ids") = std::nullopt)
        .def_property_readonly("n_rows", &Dataset::n_rows)
        .def_property_readonly("n_features", &Dataset::n_features)
        .def_readonly("row_ids", &Dataset::row_ids)
        .def_readonly("feature_names", &Dataset::feature_names)
        .def_property_readonly("task_names",
                               [](const Dataset& ds) {
                                   std::vector<std::string> names;
                                   for (const auto& t : ds.tasks) names.push_back(t.name);
                                   return names;
                               })
        .def("features",
             [](const Dataset& ds) {
                 py::array_t<double> out({ds.n_rows(), ds.n_features()});
                 std::copy(ds.features.begin(), ds.features.end(),
                           out.mutable_data());
                 return out;
             })
        .def("add_real_task",
             [](Dataset& ds, const std::string& name, const std::map<int, double>& labels,
                const std::string& units) {
                 if (ds.task_index(name) >= 0)
                     throw ValidationError("task '" + name + "' already exists");
                 TaskSpec t;
                 t.name = name;
                 t.kind = TaskKind::Real;
                 t.units = units;
                 ds.tasks.push_back(std::move(t));
                 ds.labels.emplace_back(labels.begin(), labels.end());
                 ds.validate();
             },
             py::arg("name"), py::arg("labels"), py::arg("units") = "")
        .def("add_categorical_task",
             [](Dataset& ds, const std::string& name, const std::vector<std::string>& classes,
                const std::map<int, int>& labels) {
                 if (ds.task_index(name) >= 0)
                     throw ValidationError("task '" + name + "' already exists");
                 TaskSpec t;
                 t.name = name;
                 t.kind = TaskKind::Categorical;
                 t.classes = classes;
                 ds.tasks.push_back(std::move(t));
                 LabelMap lm;
                 for (const auto& [row, cls] : labels) lm[row] = static_cast<double>(cls);
                 ds.labels.push_back(std::move(lm));
                 ds.validate();
             },
             py::arg("name"), py::arg("classes"), py::arg("labels"))
        .def("labels",
             [](const Dataset& ds, const std::string& task) {
                 const int t = ds.task_index(task);
                 if (t < 0) throw ValidationError("unknown task '" + task + "'");
                 std::map<int, double> out(ds.labels[t].begin(), ds.labels[t].end());
                 return out;
             },
             py::arg("task"))
        .def("classes",
             [](const Dataset& ds, const std::string& task) { return ds.task(task).classes; },
             py::arg("task"));

    m.def("load_delimited",
          [](const std::string& csv, const std::string& schema) {
              return load_delimited(csv, Schema::load(schema));
          },
          py::arg("csv"), py::arg("schema"));
    m.def("write_delimited",
          [](const Dataset& ds, const std::string& csv, const std::string& schema) {
              write_delimited(ds, csv);
              schema_of(ds).save(schema);
          },
          py::arg("dataset"), py::arg("csv"), py::arg("schema"));

    m.def("average_duplicates",
          [](const Dataset& ds, const GroupKey& key, const std::string& task) {
              const auto res = average_duplicates(ds, key, task);
              return py::make_tuple(res.dataset, res.noise_estimate);
          },
          py::arg("dataset"), py::arg("group_key"), py::arg("task"));
    m.def("min_duplicates", &min_duplicates, py::arg("dataset"), py::arg("group_key"),
          py::arg("task"));
    m.def("collapse_classes",
          [](const Dataset& ds, const std::string& task,
             const std::map<std::string, std::string>& merge_map, int min_count) {
              const auto res = collapse_classes(ds, task, merge_map, min_count);
              return py::make_tuple(res.dataset, res.class_counts, res.under_populated);
          },
          py::arg("dataset"), py::arg("task"), py::arg("merge_map"), py::arg("min_count") = 5);
    m.def("drop_conflicting_labels", &drop_conflicting_labels, py::arg("dataset"),
          py::arg("task"), py::arg("group_key"));
    m.def("subsample", &subsample, py::arg("dataset"), py::arg("n"), py::arg("seed"));

    py::class_<Forest>(m, "Forest")
        .def_property_readonly("num_trees",
                               [](const Forest& f) { return f.trees.size(); })
        .def_property_readonly("n_training_rows", &Forest::n_training_rows)
        .def_readonly("training_row_ids", &Forest::training_row_ids)
        .def_property_readonly("task_names",
                               [](const Forest& f) {
                                   std::vector<std::string> names;
                                   for (const auto& t : f.tasks) names.push_back(t.spec.name);
                                   return names;
                               })
        .def("predict_real",
             [](const Forest& f, const std::string& task, DoubleArray X) {
                 check_matrix(X, f.n_features());
                 const auto n = static_cast<std::size_t>(X.request().shape[0]);
                 py::array_t<double> out(n);
                 for (std::size_t r = 0; r < n; ++r)
                     out.mutable_at(r) =
                         predict_real(f, task, row_from(X, r, f.n_features()));
                 return out;
             },
             py::arg("task"), py::arg("X"))
        .def("predict_class",
             [](const Forest& f, const std::string& task, DoubleArray X) {
                 check_matrix(X, f.n_features());
                 const auto n = static_cast<std::size_t>(X.request().shape[0]);
                 const auto k = f.task(task).spec.classes.size();
                 py::array_t<int> cls(n);
                 py::array_t<double> probs({n, k});
                 for (std::size_t r = 0; r < n; ++r) {
                     const auto p = predict_class(f, task, row_from(X, r, f.n_features()));
                     cls.mutable_at(r) = p.class_index;
                     for (std::size_t c = 0; c < k; ++c)
                         probs.mutable_at(r, c) = p.probabilities[c];
                 }
                 return py::make_tuple(cls, probs);
             },
             py::arg("task"), py::arg("X"))
        .def("jackknife",
             [](const Forest& f, const std::string& task, DoubleArray X) {
                 check_matrix(X, f.n_features());
                 const auto n = static_cast<std::size_t>(X.request().shape[0]);
                 py::array_t<double> mean(n), std_error(n), v_jab(n), v_ij(n), v_comb(n);
                 for (std::size_t r = 0; r < n; ++r) {
                     const auto u =
                         jackknife_variance(f, task, row_from(X, r, f.n_features()));
                     mean.mutable_at(r) = u.mean;
                     std_error.mutable_at(r) = u.std_error;
                     v_jab.mutable_at(r) = u.detail.v_jab;
                     v_ij.mutable_at(r) = u.detail.v_ij;
                     v_comb.mutable_at(r) = u.detail.v_combined;
                 }
                 py::dict out;
                 out["mean"] = mean;
                 out["std_error"] = std_error;
                 out["v_jab"] = v_jab;
                 out["v_ij"] = v_ij;
                 out["v_combined"] = v_comb;
                 return out;
             },
             py::arg("task"), py::arg("X"))
        .def("save", &Forest::save, py::arg("path"))
        .def_static("load", &Forest::load, py::arg("path"))
        .def("to_json", &Forest::to_json_text)
        .def_static("from_json", &Forest::from_json_text, py::arg("text"));

    m.def("train_forest",
          [](const Dataset& ds, const std::vector<std::string>& tasks,
             std::optional<int> num_trees, std::optional<int> trees_per_label,
             std::optional<int> feature_subset_size, int min_node_size, std::uint64_t seed,
             std::map<std::string, double> task_weights) {
              return train_forest(ds, tasks,
                                  make_params(num_trees, trees_per_label,
                                              feature_subset_size, min_node_size, seed,
                                              std::move(task_weights)));
          },
          py::arg("dataset"), py::arg("tasks"), py::arg("num_trees") = std::nullopt,
          py::arg("trees_per_label") = std::nullopt,
          py::arg("feature_subset_size") = std::nullopt, py::arg("min_node_size") = 1,
          py::arg("seed") = 0, py::arg("task_weights") = std::map<std::string, double>{});

    py::class_<TrainedArchitecture>(m, "TrainedArchitecture")
        .def_property_readonly("n_features", &TrainedArchitecture::n_features)
        .def_property_readonly("output_tasks",
                               [](const TrainedArchitecture& ta) {
                                   std::vector<std::string> out;
                                   for (const auto& stage : ta.stages)
                                       for (const auto& t : stage.tasks) out.push_back(t);
                                   return out;
                               })
        .def("predict_row",
             [](const TrainedArchitecture& ta, const std::vector<double>& x,
                bool with_uncertainty) {
                 const auto preds = predict_architecture(ta, x, with_uncertainty);
                 py::dict out;
                 for (const auto& [task, p] : preds) {
                     py::dict entry;
                     entry["value"] = p.value;
                     if (p.uncertainty) entry["std_error"] = p.uncertainty->std_error;
                     if (p.classification) {
                         entry["class_index"] = p.classification->class_index;
                         entry["probabilities"] = p.classification->probabilities;
                     }
                     out[py::str(task)] = entry;
                 }
                 return out;
             },
             py::arg("x"), py::arg("with_uncertainty") = false)
        .def("predict",
             [](const TrainedArchitecture& ta, DoubleArray X) {
                 check_matrix(X, ta.n_features());
                 const auto n = static_cast<std::size_t>(X.request().shape[0]);
                 std::map<std::string, py::array_t<double>> columns;
                 for (std::size_t r = 0; r < n; ++r) {
                     const auto preds =
                         predict_architecture(ta, row_from(X, r, ta.n_features()), false);
                     for (const auto& [task, p] : preds) {
                         if (!columns.count(task))
                             columns.emplace(task, py::array_t<double>(n));
                         columns.at(task).mutable_at(r) = p.value;
                     }
                 }
                 py::dict out;
                 for (auto& [task, arr] : columns) out[py::str(task)] = arr;
                 return out;
             },
             py::arg("X"))
        .def("save", &TrainedArchitecture::save, py::arg("path"))
        .def_static("load", &TrainedArchitecture::load, py::arg("path"));

    m.def("train_architecture",
          [](const std::string& spec_json, const Dataset& ds, std::optional<int> num_trees,
             std::optional<int> trees_per_label, std::optional<int> feature_subset_size,
             int min_node_size, std::uint64_t seed,
             const std::map<std::string, Forest>& pretrained) {
              const ArchitectureSpec spec = ArchitectureSpec::from_json_text(spec_json);
              return train_architecture(spec, ds,
                                        make_params(num_trees, trees_per_label,
                                                    feature_subset_size, min_node_size, seed,
                                                    {}),
                                        pretrained);
          },
          py::arg("spec_json"), py::arg("dataset"), py::arg("num_trees") = std::nullopt,
          py::arg("trees_per_label") = std::nullopt,
          py::arg("feature_subset_size") = std::nullopt, py::arg("min_node_size") = 1,
          py::arg("seed") = 0, py::arg("pretrained") = std::map<std::string, Forest>{});

    m.def("generate", [](const std::string& config_json) {
        return generate(SynthConfig::from_json_text(config_json));
    });

    m.def("rmse",
          [](const std::vector<double>& truth, const std::vector<double>& pred) {
              return rmse(truth, pred);
          });
    m.def("weighted_f1",
          [](const std::vector<int>& truth, const std::vector<int>& pred, int k) {
              return weighted_f1(truth, pred, k);
          });

    m.def("make_fold_plan",
          [](const Dataset& ds, int k, std::uint64_t seed) {
              std::vector<int> all(ds.n_rows());
              std::iota(all.begin(), all.end(), 0);
              return make_fold_plan(ds, k, seed, all).assignment;
          },
          py::arg("dataset"), py::arg("k"), py::arg("seed"));

    m.def("classify_composite",
          [](const std::string& name, const std::vector<std::string>& sources,
             const std::string& rule, const std::map<std::string, double>& predictions) {
              CompositeTaskSpec spec;
              spec.name = name;
              spec.source_tasks = sources;
              spec.rule = rule == "argmax" ? CompositeTaskSpec::Rule::ArgMax
                                           : CompositeTaskSpec::Rule::ArgMin;
              spec.validate();
              return classify_composite(spec, predictions);
          },
          py::arg("name"), py::arg("sources"), py::arg("rule"), py::arg("predictions"));

    m.def("evaluate_config",
          [](const std::string& config_json) {
              const ExperimentConfig cfg = ExperimentConfig::from_json_text(config_json);
              return report_summary(cmd_evaluate(cfg));
          },
          py::arg("config_json"),
          "Run an experiment config end to end; writes outputs under its output_dir "
          "and returns the report text and tables.");

    m.attr("__version__") = "0.1.0";
}
