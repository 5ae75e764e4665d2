#include "tlforest/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <set>
#include <sstream>

#include "json_util.hpp"
#include "tlforest/error.hpp"
#include "tlforest/hashing.hpp"
#include "tlforest/rng.hpp"

namespace tlf {

using detail::json;

namespace {
constexpr std::uint64_t kSaltFoldPlan = 0xF01D;
constexpr std::uint64_t kSaltHoldout = 0x401D;
constexpr std::uint64_t kSaltForest = 0x0F0E;
}  // namespace

std::uint64_t FoldPlan::content_hash() const {
    std::string text = "k=" + std::to_string(k) + ";";
    for (const auto& rid : scope_rows)
        text += rid + ":" + std::to_string(assignment.at(rid)) + ";";
    return fnv1a64(text);
}

FoldPlan make_fold_plan(const Dataset& ds, int k, std::uint64_t seed,
                        const std::vector<int>& scoped) {
    if (k < 2) throw ValidationError("fold count must be at least 2");
    if (static_cast<int>(scoped.size()) < k)
        throw ValidationError("cannot make " + std::to_string(k) + " folds from " +
                              std::to_string(scoped.size()) + " scoped rows");
    FoldPlan plan;
    plan.k = k;
    plan.seed = seed;
    for (const int r : scoped) plan.scope_rows.push_back(ds.row_ids[r]);

    std::vector<int> order(scoped.begin(), scoped.end());
    rng::Engine eng(seed);
    rng::shuffle(eng, order);

    const int n = static_cast<int>(order.size());
    const int q = n / k;
    const int rem = n % k;
    int pos = 0;
    for (int fold = 0; fold < k; ++fold) {
        const int size = q + (fold < rem ? 1 : 0);
        for (int i = 0; i < size; ++i) plan.assignment[ds.row_ids[order[pos++]]] = fold;
    }
    return plan;
}

double rmse(std::span<const double> truth, std::span<const double> pred) {
    if (truth.size() != pred.size()) throw ValidationError("rmse: length mismatch");
    if (truth.empty()) throw ValidationError("rmse: empty input");
    double ss = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        const double d = truth[i] - pred[i];
        ss += d * d;
    }
    return std::sqrt(ss / static_cast<double>(truth.size()));
}

double weighted_f1(std::span<const int> truth, std::span<const int> pred, int class_count) {
    if (truth.size() != pred.size()) throw ValidationError("weighted_f1: length mismatch");
    if (truth.empty()) throw ValidationError("weighted_f1: empty input");
    std::vector<double> tp(class_count, 0), fp(class_count, 0), fn(class_count, 0),
        support(class_count, 0);
    for (std::size_t i = 0; i < truth.size(); ++i) {
        support[truth[i]] += 1;
        if (truth[i] == pred[i]) {
            tp[truth[i]] += 1;
        } else {
            fp[pred[i]] += 1;
            fn[truth[i]] += 1;
        }
    }
    double out = 0;
    for (int c = 0; c < class_count; ++c) {
        if (support[c] == 0) continue;
        const double p_den = tp[c] + fp[c];
        const double r_den = tp[c] + fn[c];
        const double precision = p_den > 0 ? tp[c] / p_den : 0.0;
        const double recall = r_den > 0 ? tp[c] / r_den : 0.0;
        const double f1 = precision + recall > 0
                              ? 2 * precision * recall / (precision + recall)
                              : 0.0;
        out += f1 * support[c] / static_cast<double>(truth.size());
    }
    return out;
}

// ---------------------------------------------------------------------------
// Harness
// ---------------------------------------------------------------------------

double EvalCell::mean() const {
    if (values.empty()) return std::numeric_limits<double>::quiet_NaN();
    double s = 0;
    for (const double v : values) s += v;
    return s / static_cast<double>(values.size());
}

std::optional<double> EvalCell::std_error() const {
    if (values.size() < 2) return std::nullopt;
    const double m = mean();
    double ss = 0;
    for (const double v : values) ss += (v - m) * (v - m);
    const double sd = std::sqrt(ss / static_cast<double>(values.size() - 1));
    return sd / std::sqrt(static_cast<double>(values.size()));
}

namespace {

std::vector<std::string> architecture_outputs(const ArchitectureSpec& spec) {
    switch (spec.kind) {
        case ArchitectureSpec::Kind::SingleTask: return {spec.task};
        case ArchitectureSpec::Kind::MultiTask: return spec.tasks;
        case ArchitectureSpec::Kind::Difference:
            return {spec.reference_task, spec.target_task};
        case ArchitectureSpec::Kind::LatentVariable: {
            std::vector<std::string> out;
            for (const auto& st : spec.stages) out.push_back(st.task);
            return out;
        }
    }
    return {};
}

ScopeKind resolve_scope(const EvalJob& job) {
    if (job.scope != ScopeKind::Auto) return job.scope;
    if (!job.target_task.empty()) return ScopeKind::TargetLabeled;
    if (job.composite) return ScopeKind::CompositeLabeled;
    throw ValidationError("evaluation needs a target task or a composite spec");
}

void validate_job(const Dataset& ds, const EvalJob& job) {
    if (job.specs.empty()) throw ValidationError("no architectures to evaluate");
    std::set<std::string> names;
    for (const auto& entry : job.specs) {
        if (entry.name.empty()) throw ValidationError("architecture entry needs a name");
        if (!names.insert(entry.name).second)
            throw ValidationError("duplicate architecture name '" + entry.name + "'");
        entry.spec.validate(ds);
        const std::vector<std::string> outputs = architecture_outputs(entry.spec);
        const auto covers = [&](const std::string& t) {
            return std::find(outputs.begin(), outputs.end(), t) != outputs.end();
        };
        if (!job.target_task.empty() && !covers(job.target_task))
            throw ValidationError("architecture '" + entry.name +
                                  "' does not produce target task '" + job.target_task + "'");
        if (job.composite)
            for (const auto& src : job.composite->source_tasks)
                if (!covers(src))
                    throw ValidationError("architecture '" + entry.name +
                                          "' does not produce composite source '" + src + "'");
        if (entry.trials && *entry.trials < 1)
            throw ValidationError("per-architecture trial count must be >= 1");
    }
    if (!job.target_task.empty()) ds.task(job.target_task);
    if (job.composite) job.composite->validate(ds);
    if (job.trials < 1) throw ValidationError("trial count must be >= 1");
    resolve_scope(job);
}

std::vector<std::string> metric_names(const Dataset& ds, const EvalJob& job) {
    std::vector<std::string> out;
    if (!job.target_task.empty())
        out.push_back(ds.task(job.target_task).kind == TaskKind::Real ? "rmse"
                                                                      : "weighted_f1");
    if (job.composite) out.push_back("composite_f1");
    return out;
}

using RowPredictions = std::map<int, std::map<std::string, TaskPrediction>>;

std::map<std::string, double> compute_metrics(const Dataset& ds, const EvalJob& job,
                                              const std::vector<int>& eval_rows,
                                              const RowPredictions& preds,
                                              const LabelMap& composite_truth) {
    std::map<std::string, double> out;
    if (!job.target_task.empty()) {
        const int t = ds.task_index(job.target_task);
        const bool real = ds.tasks[t].kind == TaskKind::Real;
        std::vector<double> truth_r, pred_r;
        std::vector<int> truth_c, pred_c;
        for (const int r : eval_rows) {
            const auto y = ds.label(r, t);
            if (!y) continue;
            const TaskPrediction& p = preds.at(r).at(job.target_task);
            if (real) {
                truth_r.push_back(*y);
                pred_r.push_back(p.value);
            } else {
                truth_c.push_back(static_cast<int>(*y));
                pred_c.push_back(p.classification->class_index);
            }
        }
        if (real)
            out["rmse"] = rmse(truth_r, pred_r);
        else
            out["weighted_f1"] = weighted_f1(truth_c, pred_c,
                                             static_cast<int>(ds.tasks[t].classes.size()));
    }
    if (job.composite) {
        std::vector<int> truth, pred;
        for (const int r : eval_rows) {
            const auto it = composite_truth.find(r);
            if (it == composite_truth.end()) continue;
            std::map<std::string, double> sources;
            for (const auto& src : job.composite->source_tasks)
                sources[src] = preds.at(r).at(src).value;
            truth.push_back(static_cast<int>(it->second));
            pred.push_back(classify_composite(*job.composite, sources));
        }
        out["composite_f1"] =
            weighted_f1(truth, pred, static_cast<int>(job.composite->source_tasks.size()));
    }
    return out;
}

ForestParams spec_forest_params(const EvalJob& job, const ArchitectureEntry& entry,
                                std::size_t spec_index, int trial, int split) {
    ForestParams p = entry.params ? *entry.params : job.forest;
    p.seed = rng::derive(job.seed, kSaltForest + spec_index, static_cast<std::uint64_t>(trial),
                         static_cast<std::uint64_t>(split));
    return p;
}

void record_failure(EvalReport& report, const std::string& row_key, const std::string& spec,
                    const std::string& message) {
    for (const auto& metric : report.metrics)
        report.cells[{row_key, spec, metric}].failures.push_back(message);
}

EvalReport init_report(const Dataset& ds, const EvalJob& job, const std::string& mode,
                       const std::vector<std::string>& row_keys, int max_trials) {
    EvalReport report;
    report.mode = mode;
    report.trials = max_trials;
    report.row_keys = row_keys;
    for (const auto& entry : job.specs) report.spec_names.push_back(entry.name);
    report.metrics = metric_names(ds, job);
    for (const auto& rk : row_keys)
        for (const auto& spec : report.spec_names)
            for (const auto& metric : report.metrics)
                report.cells[{rk, spec, metric}];  // materialize empty cells
    report.plan_hashes.assign(max_trials,
                              std::vector<std::uint64_t>(job.specs.size(), 0));
    return report;
}

int trials_for(const EvalJob& job, const ArchitectureEntry& entry) {
    return entry.trials ? *entry.trials : job.trials;
}

int max_trials(const EvalJob& job) {
    int m = 0;
    for (const auto& entry : job.specs) m = std::max(m, trials_for(job, entry));
    return m;
}

}  // namespace

std::vector<int> scoped_rows(const Dataset& ds, const EvalJob& job) {
    const ScopeKind scope = resolve_scope(job);
    std::vector<int> out;
    if (scope == ScopeKind::TargetLabeled) {
        if (job.target_task.empty())
            throw ValidationError("target-labeled scope needs a target task");
        const int t = ds.task_index(job.target_task);
        if (t < 0) throw ValidationError("unknown task '" + job.target_task + "'");
        for (const auto& [row, value] : ds.labels[t]) out.push_back(row);
    } else {
        if (!job.composite)
            throw ValidationError("composite-labeled scope needs a composite spec");
        for (const auto& [row, value] : composite_ground_truth(ds, *job.composite))
            out.push_back(row);
    }
    std::sort(out.begin(), out.end());
    return out;
}

EvalReport cross_validate(const Dataset& ds, const EvalJob& job) {
    validate_job(ds, job);
    const std::vector<int> scoped = scoped_rows(ds, job);
    std::vector<char> in_scope(ds.n_rows(), 0);
    for (const int r : scoped) in_scope[r] = 1;

    const LabelMap composite_truth =
        job.composite ? composite_ground_truth(ds, *job.composite) : LabelMap{};
    const int T = max_trials(job);
    EvalReport report = init_report(ds, job, "cv", {"cv"}, T);

    for (int trial = 0; trial < T; ++trial) {
        const FoldPlan plan =
            make_fold_plan(ds, job.folds, rng::derive(job.seed, kSaltFoldPlan, trial), scoped);
        std::vector<int> fold_of(ds.n_rows(), -1);
        for (const int r : scoped) fold_of[r] = plan.assignment.at(ds.row_ids[r]);

        for (std::size_t s = 0; s < job.specs.size(); ++s) {
            const ArchitectureEntry& entry = job.specs[s];
            if (trial >= trials_for(job, entry)) continue;
            try {
                RowPredictions preds;
                for (int fold = 0; fold < job.folds; ++fold) {
                    std::vector<int> train_rows;
                    std::vector<int> eval_rows;
                    for (int r = 0; r < ds.n_rows(); ++r) {
                        if (!in_scope[r])
                            train_rows.push_back(r);
                        else if (fold_of[r] != fold)
                            train_rows.push_back(r);
                        else
                            eval_rows.push_back(r);
                    }
                    const Dataset train_ds = ds.select_rows(train_rows);
                    const ForestParams params = spec_forest_params(job, entry, s, trial, fold);
                    const TrainedArchitecture ta = train_architecture(
                        entry.spec, train_ds, params,
                        job.pretrained ? *job.pretrained : PretrainedStore{});
                    for (const int r : eval_rows) {
                        std::span<const double> x(ds.row(r),
                                                  static_cast<std::size_t>(ds.n_features()));
                        preds[r] = predict_architecture(ta, x, /*with_uncertainty=*/false);
                    }
                }
                const auto metrics = compute_metrics(ds, job, scoped, preds, composite_truth);
                for (const auto& [metric, value] : metrics)
                    report.cells[{"cv", entry.name, metric}].values.push_back(value);
                report.plan_hashes[trial][s] = plan.content_hash();
            } catch (const std::exception& e) {
                record_failure(report, "cv", entry.name,
                               "trial " + std::to_string(trial) + ": " + e.what());
            }
        }
    }
    return report;
}

EvalReport learning_curve(const Dataset& ds, const EvalJob& job) {
    validate_job(ds, job);
    const std::vector<int> scoped = scoped_rows(ds, job);
    std::vector<char> in_scope(ds.n_rows(), 0);
    for (const int r : scoped) in_scope[r] = 1;

    if (job.holdout_fraction <= 0 || job.holdout_fraction >= 1)
        throw ValidationError("holdout fraction must lie in (0, 1)");
    const int holdout_n = static_cast<int>(
        std::floor(job.holdout_fraction * static_cast<double>(scoped.size()) + 0.5));
    if (holdout_n < 1) throw ValidationError("holdout is empty at this fraction");
    const int pool_n = static_cast<int>(scoped.size()) - holdout_n;
    if (pool_n < 1) throw ValidationError("no training rows left after the holdout");

    std::vector<int> sizes = job.sizes;
    const bool curve = job.mode == EvalMode::LearningCurve;
    if (!curve) sizes = {pool_n};
    if (sizes.empty()) throw ValidationError("learning curve needs training sizes");
    for (std::size_t i = 0; i < sizes.size(); ++i) {
        if (sizes[i] < 1 || sizes[i] > pool_n)
            throw ValidationError("training size " + std::to_string(sizes[i]) +
                                  " out of range [1, " + std::to_string(pool_n) + "]");
        if (i > 0 && sizes[i] <= sizes[i - 1])
            throw ValidationError("training sizes must be strictly increasing");
    }

    std::vector<std::string> row_keys;
    for (const int s : sizes) row_keys.push_back(curve ? std::to_string(s) : "holdout");

    const LabelMap composite_truth =
        job.composite ? composite_ground_truth(ds, *job.composite) : LabelMap{};
    const int T = max_trials(job);
    EvalReport report = init_report(ds, job, curve ? "learning_curve" : "holdout",
                                    row_keys, T);
    report.holdout_size = holdout_n;

    for (int trial = 0; trial < T; ++trial) {
        std::vector<int> order(scoped.begin(), scoped.end());
        rng::Engine eng(rng::derive(job.seed, kSaltHoldout, trial));
        rng::shuffle(eng, order);
        const std::vector<int> holdout(order.begin(), order.begin() + holdout_n);
        const std::vector<int> pool(order.begin() + holdout_n, order.end());

        std::string holdout_text;
        {
            std::vector<std::string> ids;
            for (const int r : holdout) ids.push_back(ds.row_ids[r]);
            std::sort(ids.begin(), ids.end());
            for (const auto& id : ids) holdout_text += id + ";";
        }
        const std::uint64_t holdout_hash = fnv1a64(holdout_text);

        for (std::size_t s = 0; s < job.specs.size(); ++s) {
            const ArchitectureEntry& entry = job.specs[s];
            if (trial >= trials_for(job, entry)) continue;
            bool consumed = false;
            for (std::size_t si = 0; si < sizes.size(); ++si) {
                const std::string& row_key = row_keys[si];
                try {
                    std::vector<int> train_rows;
                    std::vector<char> take(ds.n_rows(), 0);
                    for (int i = 0; i < sizes[si]; ++i) take[pool[i]] = 1;
                    for (int r = 0; r < ds.n_rows(); ++r)
                        if (!in_scope[r] || take[r]) train_rows.push_back(r);
                    const Dataset train_ds = ds.select_rows(train_rows);
                    const ForestParams params =
                        spec_forest_params(job, entry, s, trial, static_cast<int>(si));
                    const TrainedArchitecture ta = train_architecture(
                        entry.spec, train_ds, params,
                        job.pretrained ? *job.pretrained : PretrainedStore{});
                    RowPredictions preds;
                    for (const int r : holdout) {
                        std::span<const double> x(ds.row(r),
                                                  static_cast<std::size_t>(ds.n_features()));
                        preds[r] = predict_architecture(ta, x, /*with_uncertainty=*/false);
                    }
                    const auto metrics =
                        compute_metrics(ds, job, holdout, preds, composite_truth);
                    for (const auto& [metric, value] : metrics)
                        report.cells[{row_key, entry.name, metric}].values.push_back(value);
                    consumed = true;
                } catch (const std::exception& e) {
                    record_failure(report, row_key, entry.name,
                                   "trial " + std::to_string(trial) + ": " + e.what());
                }
            }
            if (consumed) report.plan_hashes[trial][s] = holdout_hash;
        }
    }
    return report;
}

// ---------------------------------------------------------------------------
// Report output
// ---------------------------------------------------------------------------

const EvalCell& EvalReport::cell(const std::string& row_key, const std::string& spec,
                                 const std::string& metric) const {
    const auto it = cells.find({row_key, spec, metric});
    if (it == cells.end())
        throw ValidationError("no cell (" + row_key + ", " + spec + ", " + metric + ")");
    return it->second;
}

namespace {

std::string hex64(std::uint64_t v) {
    char buf[19];
    std::snprintf(buf, sizeof(buf), "0x%016llx", static_cast<unsigned long long>(v));
    return buf;
}

std::string table_number(double v) {
    if (std::isnan(v)) return "na";
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    return buf;
}

}  // namespace

std::string EvalReport::to_json_text() const {
    json j;
    j["format"] = "tlforest.report";
    j["version"] = 1;
    j["mode"] = mode;
    j["fingerprint"] = hex64(fingerprint);
    j["trials"] = trials;
    if (holdout_size > 0) j["holdout_size"] = holdout_size;
    j["row_keys"] = row_keys;
    j["specs"] = spec_names;
    j["metrics"] = metrics;
    json jcells = json::object();
    for (const auto& [key, cell] : cells) {
        const auto& [row, spec, metric] = key;
        json jc;
        jc["values"] = cell.values;
        if (!cell.failures.empty()) jc["failures"] = cell.failures;
        if (!cell.values.empty()) jc["mean"] = cell.mean();
        const auto se = cell.std_error();
        jc["std_error"] = se ? json(*se) : json(nullptr);
        jcells[row][spec][metric] = std::move(jc);
    }
    j["cells"] = std::move(jcells);
    json hashes = json::array();
    for (const auto& per_trial : plan_hashes) {
        json row = json::array();
        for (const auto h : per_trial) row.push_back(hex64(h));
        hashes.push_back(std::move(row));
    }
    j["plan_hashes"] = std::move(hashes);
    return j.dump(2) + "\n";
}

std::string EvalReport::to_table(const std::string& metric) const {
    std::ostringstream out;
    out << (mode == "learning_curve" ? "Size" : "Split");
    for (const auto& spec : spec_names) out << ',' << spec << ',' << spec << "Error";
    out << '\n';
    for (const auto& rk : row_keys) {
        out << rk;
        for (const auto& spec : spec_names) {
            const EvalCell& c = cell(rk, spec, metric);
            out << ',' << table_number(c.mean());
            const auto se = c.std_error();
            out << ',' << (se ? table_number(*se) : "na");
        }
        out << '\n';
    }
    return out.str();
}

}  // namespace tlf
