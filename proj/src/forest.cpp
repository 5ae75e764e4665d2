#include "tlforest/forest.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "json_util.hpp"
#include "parallel.hpp"
#include "tlforest/error.hpp"
#include "tlforest/rng.hpp"

namespace tlf {

using detail::json;

int TreeCount::resolve(std::size_t label_count) const {
    if (rule == Rule::Fixed) return std::max(1, value);
    return std::max(1, static_cast<int>(value * static_cast<long long>(label_count)));
}

int Forest::task_index(const std::string& name) const {
    for (std::size_t i = 0; i < tasks.size(); ++i)
        if (tasks[i].spec.name == name) return static_cast<int>(i);
    return -1;
}

const ResolvedTask& Forest::task(const std::string& name) const {
    const int i = task_index(name);
    if (i < 0) throw ValidationError("task '" + name + "' was not trained in this forest");
    return tasks[i];
}

namespace {

struct TaskData {
    bool real = true;
    int class_count = 0;
    double weight = 1.0;
    std::vector<char> has;   // per eligible row
    std::vector<double> z;   // standardized value (Real) / class index (Categorical)
    std::vector<double> raw; // original units
};

struct TrainingData {
    int n = 0;
    int d = 0;
    std::vector<const double*> rows;  // feature pointers, eligible rows in dataset order
    std::vector<int> rid_rank;        // canonical rank by row_id
    std::vector<TaskData> tasks;
    int min_node_size = 1;
    int subset = 1;
};

struct Entry {
    int row;   // index into eligible rows
    int mult;  // bootstrap multiplicity
};

// Per-task running aggregates for the split sweep. For Real tasks the score
// contribution is count*variance = sumsq - sum^2/count; for categorical it is
// count*gini = count - (sum of squared class counts)/count.
struct Agg {
    double count = 0;
    double sum = 0;     // Real only
    double sumsq = 0;   // Real only
    double cls_sq = 0;  // Categorical: sum over classes of count^2
    std::vector<double> cls;

    void init(const TaskData& t) {
        if (!t.real) cls.assign(t.class_count, 0.0);
    }
    void add(const TaskData& t, int row, double mult) {
        if (!t.has[row]) return;
        count += mult;
        if (t.real) {
            const double v = t.z[row];
            sum += v * mult;
            sumsq += v * v * mult;
        } else {
            double& c = cls[static_cast<int>(t.z[row])];
            cls_sq += 2.0 * c * mult + mult * mult;
            c += mult;
        }
    }
    void remove(const TaskData& t, int row, double mult) {
        if (!t.has[row]) return;
        count -= mult;
        if (t.real) {
            const double v = t.z[row];
            sum -= v * mult;
            sumsq -= v * v * mult;
        } else {
            double& c = cls[static_cast<int>(t.z[row])];
            cls_sq += -2.0 * c * mult + mult * mult;
            c -= mult;
        }
    }
    double impurity_term(bool real) const {
        if (count <= 0) return 0.0;
        const double term = real ? sumsq - sum * sum / count : count - cls_sq / count;
        return term > 0.0 ? term : 0.0;
    }
};

class TreeBuilder {
public:
    TreeBuilder(const TrainingData& td, rng::Engine& eng, Tree& tree)
        : td_(td), eng_(eng), tree_(tree) {}

    int build(std::vector<Entry>& entries) {
        const int node_index = static_cast<int>(tree_.nodes.size());
        tree_.nodes.emplace_back();

        if (!should_split(entries)) {
            make_leaf(node_index, entries);
            return node_index;
        }

        const std::vector<int> candidates =
            rng::sample_without_replacement(eng_, td_.d, td_.subset);
        double best_score = std::numeric_limits<double>::infinity();
        int best_feature = -1;
        double best_threshold = 0;

        // Node totals accumulate in canonical (row_id) order so scores do not
        // depend on the dataset's row order.
        std::vector<Agg> totals(td_.tasks.size());
        {
            std::vector<Entry> canon = entries;
            std::sort(canon.begin(), canon.end(), [&](const Entry& a, const Entry& b) {
                return td_.rid_rank[a.row] < td_.rid_rank[b.row];
            });
            for (std::size_t t = 0; t < td_.tasks.size(); ++t) totals[t].init(td_.tasks[t]);
            for (const auto& e : canon)
                for (std::size_t t = 0; t < td_.tasks.size(); ++t)
                    totals[t].add(td_.tasks[t], e.row, e.mult);
        }

        std::vector<Agg> left(td_.tasks.size()), right(td_.tasks.size());
        for (const int f : candidates) {
            sort_entries(entries, f);
            for (std::size_t t = 0; t < td_.tasks.size(); ++t) {
                left[t] = Agg{};
                left[t].init(td_.tasks[t]);
                right[t] = totals[t];
            }
            for (std::size_t i = 0; i + 1 < entries.size(); ++i) {
                const Entry& e = entries[i];
                for (std::size_t t = 0; t < td_.tasks.size(); ++t) {
                    left[t].add(td_.tasks[t], e.row, e.mult);
                    right[t].remove(td_.tasks[t], e.row, e.mult);
                }
                const double lo = td_.rows[e.row][f];
                const double hi = td_.rows[entries[i + 1].row][f];
                if (lo == hi) continue;
                double score = 0.0;
                for (std::size_t t = 0; t < td_.tasks.size(); ++t) {
                    const TaskData& task = td_.tasks[t];
                    if (task.weight == 0.0) continue;
                    score += task.weight * (left[t].impurity_term(task.real) +
                                            right[t].impurity_term(task.real));
                }
                const double threshold = std::midpoint(lo, hi);
                if (score < best_score ||
                    (score == best_score &&
                     (f < best_feature || (f == best_feature && threshold < best_threshold)))) {
                    best_score = score;
                    best_feature = f;
                    best_threshold = threshold;
                }
            }
        }

        if (best_feature < 0) {  // no candidate split separates rows
            make_leaf(node_index, entries);
            return node_index;
        }

        std::vector<Entry> left_entries, right_entries;
        for (const auto& e : entries) {
            if (td_.rows[e.row][best_feature] < best_threshold)
                left_entries.push_back(e);
            else
                right_entries.push_back(e);
        }
        // Adjacent representable values can collapse the midpoint onto the
        // lower bound, leaving one side empty; stop rather than recurse.
        if (left_entries.empty() || right_entries.empty()) {
            make_leaf(node_index, entries);
            return node_index;
        }
        entries.clear();
        entries.shrink_to_fit();

        const int l = build(left_entries);
        const int r = build(right_entries);
        TreeNode& node = tree_.nodes[node_index];
        node.feature = best_feature;
        node.threshold = best_threshold;
        node.left = l;
        node.right = r;
        return node_index;
    }

private:
    bool should_split(const std::vector<Entry>& entries) const {
        long long total = 0;
        for (const auto& e : entries) total += e.mult;
        if (total < td_.min_node_size) return false;
        for (const auto& task : td_.tasks) {
            if (task.weight == 0.0) continue;
            bool first = true;
            double v0 = 0;
            for (const auto& e : entries) {
                if (!task.has[e.row]) continue;
                if (first) {
                    v0 = task.z[e.row];
                    first = false;
                } else if (task.z[e.row] != v0) {
                    return true;  // some weighted task is impure
                }
            }
        }
        return false;
    }

    void sort_entries(std::vector<Entry>& entries, int f) const {
        std::sort(entries.begin(), entries.end(), [&](const Entry& a, const Entry& b) {
            const double va = td_.rows[a.row][f];
            const double vb = td_.rows[b.row][f];
            if (va != vb) return va < vb;
            return td_.rid_rank[a.row] < td_.rid_rank[b.row];
        });
    }

    void make_leaf(int node_index, std::vector<Entry>& entries) {
        std::sort(entries.begin(), entries.end(), [&](const Entry& a, const Entry& b) {
            return td_.rid_rank[a.row] < td_.rid_rank[b.row];
        });
        TreeNode& node = tree_.nodes[node_index];
        node.feature = -1;
        node.stats.resize(td_.tasks.size());
        for (std::size_t t = 0; t < td_.tasks.size(); ++t) {
            const TaskData& task = td_.tasks[t];
            LeafStat& stat = node.stats[t];
            if (!task.real) stat.histogram.assign(task.class_count, 0.0);
            double sum = 0;
            for (const auto& e : entries) {
                if (!task.has[e.row]) continue;
                stat.count += e.mult;
                if (task.real)
                    sum += task.raw[e.row] * e.mult;
                else
                    stat.histogram[static_cast<int>(task.z[e.row])] += e.mult;
            }
            if (task.real && stat.count > 0) sum /= static_cast<double>(stat.count);
            stat.mean = task.real && stat.count > 0 ? sum : 0.0;
        }
    }

    const TrainingData& td_;
    rng::Engine& eng_;
    Tree& tree_;
};

struct Prepared {
    Forest forest;        // tasks, feature names, training rows, resolved params
    TrainingData td;
    std::vector<int> eligible;  // original dataset row indices
};

Prepared prepare(const Dataset& ds, std::vector<std::string> task_names,
                 const ForestParams& params) {
    if (task_names.empty()) throw ValidationError("no tasks selected for training");
    std::sort(task_names.begin(), task_names.end());
    task_names.erase(std::unique(task_names.begin(), task_names.end()), task_names.end());

    Prepared p;
    for (const auto& name : task_names) {
        const int t = ds.task_index(name);
        if (t < 0) throw ValidationError("unknown task '" + name + "'");
        ResolvedTask rt;
        rt.spec = ds.tasks[t];
        const auto it = params.task_weights.find(name);
        rt.weight = it == params.task_weights.end() ? 1.0 : it->second;
        if (rt.weight < 0) throw ValidationError("negative task weight for '" + name + "'");
        p.forest.tasks.push_back(std::move(rt));
    }

    // Eligible rows: at least one label among the selected tasks.
    std::vector<int> ds_task(p.forest.tasks.size());
    for (std::size_t t = 0; t < p.forest.tasks.size(); ++t)
        ds_task[t] = ds.task_index(p.forest.tasks[t].spec.name);
    for (int r = 0; r < ds.n_rows(); ++r) {
        for (const int t : ds_task) {
            if (ds.labels[t].count(r)) {
                p.eligible.push_back(r);
                break;
            }
        }
    }
    if (p.eligible.empty()) throw ValidationError("empty effective training set");

    const int n = static_cast<int>(p.eligible.size());
    p.forest.feature_names = ds.feature_names;
    p.forest.training_row_ids.reserve(n);
    for (const int r : p.eligible) p.forest.training_row_ids.push_back(ds.row_ids[r]);

    p.td.n = n;
    p.td.d = ds.n_features();
    p.td.rows.reserve(n);
    for (const int r : p.eligible) p.td.rows.push_back(ds.row(r));

    // Canonical per-row rank by row_id.
    {
        std::vector<int> order(n);
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(), [&](int a, int b) {
            return p.forest.training_row_ids[a] < p.forest.training_row_ids[b];
        });
        p.td.rid_rank.resize(n);
        for (int i = 0; i < n; ++i) p.td.rid_rank[order[i]] = i;
    }

    std::size_t total_labels = 0;
    bool any_categorical = false;
    for (std::size_t t = 0; t < p.forest.tasks.size(); ++t) {
        ResolvedTask& rt = p.forest.tasks[t];
        TaskData task;
        task.real = rt.spec.kind == TaskKind::Real;
        task.class_count = static_cast<int>(rt.spec.classes.size());
        task.weight = rt.weight;
        any_categorical |= !task.real;
        task.has.assign(n, 0);
        task.z.assign(n, 0.0);
        task.raw.assign(n, 0.0);

        // Standardization constants accumulate in row_id order.
        std::vector<int> labeled;
        for (int i = 0; i < n; ++i) {
            const auto v = ds.label(p.eligible[i], ds_task[t]);
            if (!v) continue;
            task.has[i] = 1;
            task.raw[i] = *v;
            labeled.push_back(i);
        }
        if (labeled.empty())
            throw ValidationError("task '" + rt.spec.name + "' has zero labels");
        total_labels += labeled.size();

        if (task.real) {
            std::sort(labeled.begin(), labeled.end(), [&](int a, int b) {
                return p.td.rid_rank[a] < p.td.rid_rank[b];
            });
            double sum = 0;
            for (const int i : labeled) sum += task.raw[i];
            const double mean = sum / static_cast<double>(labeled.size());
            double ss = 0;
            for (const int i : labeled) ss += (task.raw[i] - mean) * (task.raw[i] - mean);
            double sd = std::sqrt(ss / static_cast<double>(labeled.size()));
            if (sd == 0.0) sd = 1.0;
            rt.standardize_mean = mean;
            rt.standardize_std = sd;
            for (int i = 0; i < n; ++i)
                if (task.has[i]) task.z[i] = rt.standardize(task.raw[i]);
        } else {
            for (int i = 0; i < n; ++i)
                if (task.has[i]) task.z[i] = task.raw[i];
        }
        p.td.tasks.push_back(std::move(task));
    }

    ForestParams resolved = params;
    resolved.num_trees = TreeCount::fixed(params.num_trees.resolve(total_labels));
    int subset;
    if (params.feature_subset_size) {
        subset = *params.feature_subset_size;
        if (subset < 1 || subset > p.td.d)
            throw ValidationError("feature_subset_size out of range [1, d]");
    } else {
        subset = any_categorical
                     ? static_cast<int>(std::floor(std::sqrt(static_cast<double>(p.td.d))))
                     : p.td.d / 3;
        subset = std::max(1, subset);
    }
    resolved.feature_subset_size = subset;
    if (resolved.min_node_size < 1) throw ValidationError("min_node_size must be >= 1");
    p.forest.params = resolved;
    p.td.subset = subset;
    p.td.min_node_size = resolved.min_node_size;
    return p;
}

void train_trees(Prepared& p, const std::vector<std::vector<std::int32_t>>* fixed) {
    const int num_trees = p.forest.params.num_trees.value;
    const int n = p.td.n;
    p.forest.trees.resize(num_trees);
    p.forest.membership.assign(num_trees, std::vector<std::int32_t>(n, 0));

    detail::parallel_for(num_trees, [&](int b) {
        rng::Engine eng(rng::derive(p.forest.params.seed, static_cast<std::uint64_t>(b)));
        std::vector<std::int32_t>& counts = p.forest.membership[b];
        if (fixed) {
            counts = (*fixed)[b];
        } else {
            for (int i = 0; i < n; ++i) ++counts[rng::uniform_index(eng, n)];
        }
        std::vector<Entry> entries;
        for (int i = 0; i < n; ++i)
            if (counts[i] > 0) entries.push_back({i, counts[i]});
        TreeBuilder builder(p.td, eng, p.forest.trees[b]);
        builder.build(entries);
    });
}

}  // namespace

Forest train_forest(const Dataset& ds, const std::vector<std::string>& tasks,
                    const ForestParams& params) {
    Prepared p = prepare(ds, tasks, params);
    train_trees(p, nullptr);
    return std::move(p.forest);
}

Forest train_forest_with_resamples(const Dataset& ds, const std::vector<std::string>& tasks,
                                   const ForestParams& params,
                                   const std::vector<std::vector<std::string>>& resamples) {
    ForestParams adjusted = params;
    adjusted.num_trees = TreeCount::fixed(static_cast<int>(resamples.size()));
    Prepared p = prepare(ds, tasks, adjusted);
    const int n = p.td.n;

    std::map<std::string, int> index_of;
    for (int i = 0; i < n; ++i) index_of[p.forest.training_row_ids[i]] = i;
    std::vector<std::vector<std::int32_t>> fixed(resamples.size(),
                                                 std::vector<std::int32_t>(n, 0));
    for (std::size_t b = 0; b < resamples.size(); ++b) {
        if (static_cast<int>(resamples[b].size()) != n)
            throw ValidationError("resample " + std::to_string(b) + " must list " +
                                  std::to_string(n) + " rows");
        for (const auto& rid : resamples[b]) {
            const auto it = index_of.find(rid);
            if (it == index_of.end())
                throw ValidationError("resample references unknown row '" + rid + "'");
            ++fixed[b][it->second];
        }
    }
    train_trees(p, &fixed);
    return std::move(p.forest);
}

// ---------------------------------------------------------------------------
// Prediction
// ---------------------------------------------------------------------------

namespace {

const TreeNode& leaf_for(const Tree& tree, std::span<const double> x) {
    const TreeNode* node = &tree.nodes[0];
    while (!node->is_leaf())
        node = &tree.nodes[x[node->feature] < node->threshold ? node->left : node->right];
    return *node;
}

void check_input(const Forest& f, const std::string& task, std::span<const double> x,
                 int& t_out) {
    if (static_cast<int>(x.size()) != f.n_features())
        throw ValidationError("feature vector has dimension " + std::to_string(x.size()) +
                              ", expected " + std::to_string(f.n_features()));
    t_out = f.task_index(task);
    if (t_out < 0) throw ValidationError("task '" + task + "' was not trained in this forest");
}

}  // namespace

std::vector<double> per_tree_predictions(const Forest& f, const std::string& task,
                                         std::span<const double> x) {
    int t;
    check_input(f, task, x, t);
    if (f.tasks[t].spec.kind != TaskKind::Real)
        throw ValidationError("task '" + task + "' is not a regression task");
    std::vector<double> out;
    out.reserve(f.trees.size());
    for (const auto& tree : f.trees) {
        const LeafStat& stat = leaf_for(tree, x).stats[t];
        out.push_back(stat.count > 0 ? stat.mean
                                     : std::numeric_limits<double>::quiet_NaN());
    }
    return out;
}

double predict_real(const Forest& f, const std::string& task, std::span<const double> x) {
    const std::vector<double> values = per_tree_predictions(f, task, x);
    double sum = 0;
    int count = 0;
    for (const double v : values) {
        if (std::isnan(v)) continue;
        sum += v;
        ++count;
    }
    if (count == 0) throw Error("task '" + task + "' unsupported at point: all trees abstain");
    return sum / count;
}

double predict_real_oob(const Forest& f, const std::string& task, std::span<const double> x,
                        int training_row) {
    int t;
    check_input(f, task, x, t);
    double sum = 0;
    int count = 0;
    for (std::size_t b = 0; b < f.trees.size(); ++b) {
        if (f.membership[b][training_row] != 0) continue;
        const LeafStat& stat = leaf_for(f.trees[b], x).stats[t];
        if (stat.count == 0) continue;
        sum += stat.mean;
        ++count;
    }
    if (count == 0) return predict_real(f, task, x);
    return sum / count;
}

ClassPrediction predict_class(const Forest& f, const std::string& task,
                              std::span<const double> x) {
    int t;
    check_input(f, task, x, t);
    if (f.tasks[t].spec.kind != TaskKind::Categorical)
        throw ValidationError("task '" + task + "' is not a classification task");
    const int k = static_cast<int>(f.tasks[t].spec.classes.size());
    std::vector<double> probs(k, 0.0);
    int count = 0;
    for (const auto& tree : f.trees) {
        const LeafStat& stat = leaf_for(tree, x).stats[t];
        if (stat.count == 0) continue;
        const double total = static_cast<double>(stat.count);
        for (int c = 0; c < k; ++c) probs[c] += stat.histogram[c] / total;
        ++count;
    }
    if (count == 0) throw Error("task '" + task + "' unsupported at point: all trees abstain");
    for (double& p : probs) p /= count;
    ClassPrediction out;
    out.probabilities = std::move(probs);
    out.class_index = 0;
    for (int c = 1; c < k; ++c)
        if (out.probabilities[c] > out.probabilities[out.class_index]) out.class_index = c;
    return out;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

namespace {

json node_to_json(const TreeNode& node) {
    if (!node.is_leaf()) return json::array({node.feature, node.threshold, node.left, node.right});
    json stats = json::array();
    for (const auto& s : node.stats) {
        if (s.histogram.empty())
            stats.push_back(json::array({s.count, s.mean}));
        else
            stats.push_back(json::array({s.count, s.histogram}));
    }
    return json{{"s", stats}};
}

TreeNode node_from_json(const json& j) {
    TreeNode node;
    if (j.is_array()) {
        node.feature = j[0].get<std::int32_t>();
        node.threshold = j[1].get<double>();
        node.left = j[2].get<std::int32_t>();
        node.right = j[3].get<std::int32_t>();
        return node;
    }
    node.feature = -1;
    for (const auto& s : j.at("s")) {
        LeafStat stat;
        stat.count = s[0].get<std::int64_t>();
        if (s[1].is_array())
            stat.histogram = s[1].get<std::vector<double>>();
        else
            stat.mean = s[1].get<double>();
        node.stats.push_back(std::move(stat));
    }
    return node;
}

}  // namespace

std::string Forest::to_json_text() const {
    json j;
    j["format"] = "tlforest.forest";
    j["version"] = 1;
    j["params"] = detail::params_to_json(params);
    json jtasks = json::array();
    for (const auto& t : tasks) {
        json jt = detail::task_spec_to_json(t.spec);
        jt["weight"] = t.weight;
        jt["standardize"] = json::array({t.standardize_mean, t.standardize_std});
        jtasks.push_back(std::move(jt));
    }
    j["tasks"] = std::move(jtasks);
    j["feature_names"] = feature_names;
    j["training_row_ids"] = training_row_ids;
    json jtrees = json::array();
    for (const auto& tree : trees) {
        json nodes = json::array();
        for (const auto& node : tree.nodes) nodes.push_back(node_to_json(node));
        jtrees.push_back(std::move(nodes));
    }
    j["trees"] = std::move(jtrees);
    j["membership"] = membership;
    return j.dump();
}

Forest Forest::from_json_text(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ParseError(std::string("forest file is not valid JSON: ") + e.what());
    }
    if (j.value("format", "") != "tlforest.forest")
        throw ValidationError("not a forest file");
    if (j.value("version", 0) != 1)
        throw ValidationError("unsupported forest format version");
    Forest f;
    f.params = detail::params_from_json(j.at("params"));
    for (const auto& jt : j.at("tasks")) {
        ResolvedTask t;
        t.spec = detail::task_spec_from_json(jt);
        t.weight = jt.at("weight").get<double>();
        t.standardize_mean = jt.at("standardize")[0].get<double>();
        t.standardize_std = jt.at("standardize")[1].get<double>();
        f.tasks.push_back(std::move(t));
    }
    f.feature_names = j.at("feature_names").get<std::vector<std::string>>();
    f.training_row_ids = j.at("training_row_ids").get<std::vector<std::string>>();
    for (const auto& jtree : j.at("trees")) {
        Tree tree;
        for (const auto& jnode : jtree) tree.nodes.push_back(node_from_json(jnode));
        f.trees.push_back(std::move(tree));
    }
    f.membership = j.at("membership").get<std::vector<std::vector<std::int32_t>>>();
    return f;
}

void Forest::save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw Error("cannot write forest file '" + path + "'");
    out << to_json_text();
}

Forest Forest::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open forest file '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return from_json_text(ss.str());
}

}  // namespace tlf
