#include "tlforest/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "tlforest/error.hpp"
#include "tlforest/rng.hpp"

namespace tlf {

using nlohmann::json;

std::string to_string(TaskKind kind) {
    return kind == TaskKind::Real ? "real" : "categorical";
}

TaskKind task_kind_from_string(const std::string& s) {
    if (s == "real") return TaskKind::Real;
    if (s == "categorical") return TaskKind::Categorical;
    throw ValidationError("unknown task kind '" + s + "' (expected real|categorical)");
}

int TaskSpec::class_index(const std::string& cls) const {
    for (std::size_t i = 0; i < classes.size(); ++i)
        if (classes[i] == cls) return static_cast<int>(i);
    return -1;
}

int Dataset::task_index(const std::string& name) const {
    for (std::size_t i = 0; i < tasks.size(); ++i)
        if (tasks[i].name == name) return static_cast<int>(i);
    return -1;
}

const TaskSpec& Dataset::task(const std::string& name) const {
    const int i = task_index(name);
    if (i < 0) throw ValidationError("unknown task '" + name + "'");
    return tasks[i];
}

int Dataset::feature_index(const std::string& name) const {
    for (std::size_t i = 0; i < feature_names.size(); ++i)
        if (feature_names[i] == name) return static_cast<int>(i);
    return -1;
}

std::optional<double> Dataset::label(int row, int task) const {
    const auto it = labels[task].find(row);
    if (it == labels[task].end()) return std::nullopt;
    return it->second;
}

void Dataset::validate(bool require_labels) const {
    const std::size_t n = row_ids.size();
    const std::size_t d = feature_names.size();
    if (features.size() != n * d)
        throw ValidationError("feature matrix size does not match rows x columns");
    std::set<std::string> ids(row_ids.begin(), row_ids.end());
    if (ids.size() != n) throw ValidationError("row identifiers are not unique");
    std::set<std::string> fnames(feature_names.begin(), feature_names.end());
    if (fnames.size() != d) throw ValidationError("feature names are not unique");
    for (const double v : features)
        if (!std::isfinite(v)) throw ValidationError("non-finite feature value");
    if (labels.size() != tasks.size())
        throw ValidationError("label map count does not match task count");

    std::set<std::string> tnames;
    for (std::size_t t = 0; t < tasks.size(); ++t) {
        const TaskSpec& spec = tasks[t];
        if (!tnames.insert(spec.name).second)
            throw ValidationError("duplicate task name '" + spec.name + "'");
        if (spec.kind == TaskKind::Categorical) {
            if (spec.classes.size() < 2)
                throw ValidationError("categorical task '" + spec.name +
                                      "' needs at least 2 classes");
            std::set<std::string> cls(spec.classes.begin(), spec.classes.end());
            if (cls.size() != spec.classes.size())
                throw ValidationError("duplicate class name in task '" + spec.name + "'");
        }
        for (const auto& [row, value] : labels[t]) {
            if (row < 0 || row >= static_cast<int>(n))
                throw ValidationError("label row index out of range in task '" +
                                      spec.name + "'");
            if (!std::isfinite(value))
                throw ValidationError("non-finite label in task '" + spec.name + "'");
            if (spec.kind == TaskKind::Categorical) {
                const int idx = static_cast<int>(value);
                if (idx < 0 || idx >= static_cast<int>(spec.classes.size()) ||
                    static_cast<double>(idx) != value)
                    throw ValidationError("invalid class index in task '" + spec.name + "'");
            }
        }
        if (require_labels && labels[t].empty())
            throw ValidationError("task '" + spec.name + "' has no labels");
    }
}

Dataset Dataset::select_rows(const std::vector<int>& rows) const {
    Dataset out;
    out.feature_names = feature_names;
    out.tasks = tasks;
    out.labels.resize(tasks.size());
    const std::size_t d = feature_names.size();
    out.row_ids.reserve(rows.size());
    out.features.reserve(rows.size() * d);
    for (const int r : rows) {
        out.row_ids.push_back(row_ids[r]);
        out.features.insert(out.features.end(), features.begin() + r * d,
                            features.begin() + (r + 1) * d);
    }
    for (std::size_t t = 0; t < tasks.size(); ++t) {
        for (std::size_t k = 0; k < rows.size(); ++k) {
            const auto it = labels[t].find(rows[k]);
            if (it != labels[t].end()) out.labels[t][static_cast<int>(k)] = it->second;
        }
    }
    return out;
}

Dataset Dataset::with_feature_column(const std::string& name,
                                     const std::vector<double>& values) const {
    if (static_cast<int>(values.size()) != n_rows())
        throw ValidationError("feature column '" + name + "' has wrong length");
    if (feature_index(name) >= 0)
        throw ValidationError("feature column '" + name + "' already exists");
    Dataset out;
    out.row_ids = row_ids;
    out.tasks = tasks;
    out.labels = labels;
    out.feature_names = feature_names;
    out.feature_names.push_back(name);
    const std::size_t d = feature_names.size();
    out.features.reserve(row_ids.size() * (d + 1));
    for (std::size_t r = 0; r < row_ids.size(); ++r) {
        out.features.insert(out.features.end(), features.begin() + r * d,
                            features.begin() + (r + 1) * d);
        out.features.push_back(values[r]);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Schema
// ---------------------------------------------------------------------------

namespace {

std::string role_name(ColumnRole role) {
    switch (role) {
        case ColumnRole::RowId: return "row_id";
        case ColumnRole::Feature: return "feature";
        case ColumnRole::Task: return "task";
        case ColumnRole::Ignore: return "ignore";
    }
    return "?";
}

ColumnRole role_from_name(const std::string& s) {
    if (s == "row_id") return ColumnRole::RowId;
    if (s == "feature") return ColumnRole::Feature;
    if (s == "task") return ColumnRole::Task;
    if (s == "ignore") return ColumnRole::Ignore;
    throw ValidationError("unknown column role '" + s + "'");
}

json task_to_json(const TaskSpec& t) {
    json j;
    j["kind"] = to_string(t.kind);
    if (!t.classes.empty()) j["classes"] = t.classes;
    if (!t.units.empty()) j["units"] = t.units;
    return j;
}

TaskSpec task_from_json(const std::string& name, const json& j) {
    TaskSpec t;
    t.name = name;
    t.kind = task_kind_from_string(j.at("kind").get<std::string>());
    if (j.contains("classes")) t.classes = j["classes"].get<std::vector<std::string>>();
    if (j.contains("units")) t.units = j["units"].get<std::string>();
    return t;
}

}  // namespace

Schema Schema::from_json_text(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ParseError(std::string("schema is not valid JSON: ") + e.what());
    }
    Schema s;
    if (!j.contains("columns")) throw ValidationError("schema missing 'columns'");
    for (const auto& [col, role] : j["columns"].items())
        s.columns[col] = role_from_name(role.get<std::string>());
    // Tasks may be an ordered array (with "name" fields) or an object keyed
    // by name; the array form preserves task order across round-trips.
    if (j.contains("tasks")) {
        if (j["tasks"].is_array()) {
            for (const auto& spec : j["tasks"])
                s.tasks.push_back(task_from_json(spec.at("name").get<std::string>(), spec));
        } else {
            for (const auto& [name, spec] : j["tasks"].items())
                s.tasks.push_back(task_from_json(name, spec));
        }
    }
    int id_cols = 0;
    for (const auto& [col, role] : s.columns) {
        if (role == ColumnRole::RowId) ++id_cols;
        if (role == ColumnRole::Task) {
            bool declared = false;
            for (const auto& t : s.tasks) declared |= (t.name == col);
            if (!declared)
                throw ValidationError("task column '" + col + "' has no task declaration");
        }
    }
    if (id_cols > 1) throw ValidationError("schema declares more than one row_id column");
    return s;
}

std::string Schema::to_json_text() const {
    json j;
    j["version"] = 1;
    json cols = json::object();
    for (const auto& [col, role] : columns) cols[col] = role_name(role);
    j["columns"] = cols;
    json ts = json::array();
    for (const auto& t : tasks) {
        json jt = task_to_json(t);
        jt["name"] = t.name;
        ts.push_back(std::move(jt));
    }
    j["tasks"] = ts;
    return j.dump(2) + "\n";
}

Schema Schema::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open schema file '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return from_json_text(ss.str());
}

void Schema::save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw Error("cannot write schema file '" + path + "'");
    out << to_json_text();
}

// ---------------------------------------------------------------------------
// Delimited text
// ---------------------------------------------------------------------------

namespace {

// Minimal CSV field splitter; supports double-quoted fields.
std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cur += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cur += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

bool parse_double(const std::string& s, double& out) {
    if (s.empty()) return false;
    char* end = nullptr;
    errno = 0;
    const double v = std::strtod(s.c_str(), &end);
    if (errno != 0 || end != s.c_str() + s.size()) return false;
    out = v;
    return true;
}

std::string csv_escape(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (const char c : s) {
        if (c == '"') out += "\"\"";
        else out += c;
    }
    out += '"';
    return out;
}

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

Dataset load_delimited(const std::string& path, const Schema& schema) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open data file '" + path + "'");

    std::string header_line;
    if (!std::getline(in, header_line)) throw ParseError("empty file '" + path + "'");
    const std::vector<std::string> header = split_csv_line(header_line);

    std::vector<ColumnRole> roles(header.size());
    for (std::size_t c = 0; c < header.size(); ++c) {
        const auto it = schema.columns.find(header[c]);
        if (it == schema.columns.end())
            throw ValidationError("column '" + header[c] + "' is not mapped by the schema");
        roles[c] = it->second;
    }

    Dataset ds;
    ds.tasks = schema.tasks;
    ds.labels.resize(ds.tasks.size());
    // Track which declared vocabularies are open (built on first appearance).
    std::vector<bool> open_vocab(ds.tasks.size());
    for (std::size_t t = 0; t < ds.tasks.size(); ++t)
        open_vocab[t] = ds.tasks[t].kind == TaskKind::Categorical &&
                        ds.tasks[t].classes.empty();

    std::vector<int> task_of_column(header.size(), -1);
    int id_col = -1;
    for (std::size_t c = 0; c < header.size(); ++c) {
        if (roles[c] == ColumnRole::Feature) ds.feature_names.push_back(header[c]);
        if (roles[c] == ColumnRole::RowId) id_col = static_cast<int>(c);
        if (roles[c] == ColumnRole::Task) {
            bool found = false;
            for (std::size_t t = 0; t < ds.tasks.size(); ++t) {
                if (ds.tasks[t].name == header[c]) {
                    task_of_column[c] = static_cast<int>(t);
                    found = true;
                }
            }
            if (!found)
                throw ValidationError("task column '" + header[c] + "' not declared");
        }
    }

    std::string line;
    int row = 0;  // data rows count from 1 in error messages
    while (std::getline(in, line)) {
        if (line.empty() || (line.size() == 1 && line[0] == '\r')) continue;
        const int row_no = row + 1;
        const std::vector<std::string> cells = split_csv_line(line);
        if (cells.size() != header.size())
            throw ParseError("row " + std::to_string(row_no) + ": expected " +
                             std::to_string(header.size()) + " cells, found " +
                             std::to_string(cells.size()));
        std::string row_id =
            id_col >= 0 ? cells[id_col] : "r" + std::to_string(row);
        ds.row_ids.push_back(row_id);
        for (std::size_t c = 0; c < cells.size(); ++c) {
            const std::string& cell = cells[c];
            switch (roles[c]) {
                case ColumnRole::Feature: {
                    double v;
                    if (cell.empty())
                        throw ParseError("row " + std::to_string(row_no) +
                                         ", column \"" + header[c] +
                                         "\": missing feature value");
                    if (!parse_double(cell, v))
                        throw ParseError("row " + std::to_string(row_no) +
                                         ", column \"" + header[c] +
                                         "\": cannot parse '" + cell + "' as a number");
                    ds.features.push_back(v);
                    break;
                }
                case ColumnRole::Task: {
                    if (cell.empty()) break;  // missing label: the normal case
                    const int t = task_of_column[c];
                    TaskSpec& spec = ds.tasks[t];
                    if (spec.kind == TaskKind::Real) {
                        double v;
                        if (!parse_double(cell, v))
                            throw ParseError("row " + std::to_string(row_no) +
                                             ", column \"" + header[c] +
                                             "\": cannot parse '" + cell +
                                             "' as a number");
                        ds.labels[t][row] = v;
                    } else {
                        int idx = spec.class_index(cell);
                        if (idx < 0) {
                            if (!open_vocab[t])
                                throw ValidationError(
                                    "row " + std::to_string(row_no) + ", column \"" +
                                    header[c] + "\": unknown class '" + cell + "'");
                            spec.classes.push_back(cell);
                            idx = static_cast<int>(spec.classes.size()) - 1;
                        }
                        ds.labels[t][row] = static_cast<double>(idx);
                    }
                    break;
                }
                case ColumnRole::RowId:
                case ColumnRole::Ignore:
                    break;
            }
        }
        ++row;
    }
    ds.validate(/*require_labels=*/true);
    return ds;
}

void write_delimited(const Dataset& ds, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write data file '" + path + "'");
    out << "row_id";
    for (const auto& f : ds.feature_names) out << ',' << csv_escape(f);
    for (const auto& t : ds.tasks) out << ',' << csv_escape(t.name);
    out << '\n';
    for (int r = 0; r < ds.n_rows(); ++r) {
        out << csv_escape(ds.row_ids[r]);
        for (int c = 0; c < ds.n_features(); ++c) out << ',' << format_double(ds.feature(r, c));
        for (std::size_t t = 0; t < ds.tasks.size(); ++t) {
            out << ',';
            const auto v = ds.label(r, static_cast<int>(t));
            if (!v) continue;
            if (ds.tasks[t].kind == TaskKind::Real)
                out << format_double(*v);
            else
                out << csv_escape(ds.tasks[t].classes[static_cast<int>(*v)]);
        }
        out << '\n';
    }
}

Schema schema_of(const Dataset& ds) {
    Schema s;
    s.columns["row_id"] = ColumnRole::RowId;
    for (const auto& f : ds.feature_names) s.columns[f] = ColumnRole::Feature;
    for (const auto& t : ds.tasks) {
        s.columns[t.name] = ColumnRole::Task;
        s.tasks.push_back(t);
    }
    return s;
}

// ---------------------------------------------------------------------------
// Cleaning operations
// ---------------------------------------------------------------------------

namespace {

// Group rows by the exact values of the key columns, preserving first-seen
// group order.
std::vector<std::vector<int>> group_rows(const Dataset& ds, const GroupKey& key) {
    std::vector<int> key_cols;
    bool use_row_id = false;
    for (const auto& k : key) {
        if (k == "row_id") {
            use_row_id = true;
            continue;
        }
        const int c = ds.feature_index(k);
        if (c < 0) throw ValidationError("group key column '" + k + "' is not a feature");
        key_cols.push_back(c);
    }
    if (key.empty()) throw ValidationError("group key must name at least one column");

    std::map<std::string, int> seen;  // key string -> group index
    std::vector<std::vector<int>> groups;
    for (int r = 0; r < ds.n_rows(); ++r) {
        std::string k;
        if (use_row_id) k += ds.row_ids[r] + '\x1f';
        for (const int c : key_cols) k += format_double(ds.feature(r, c)) + '\x1f';
        const auto it = seen.find(k);
        if (it == seen.end()) {
            seen[k] = static_cast<int>(groups.size());
            groups.push_back({r});
        } else {
            groups[it->second].push_back(r);
        }
    }
    return groups;
}

enum class Reduce { Mean, Min };

AverageDuplicatesResult group_reduce(const Dataset& ds, const GroupKey& key,
                                     const std::string& task, Reduce how) {
    const int t = ds.task_index(task);
    if (t < 0) throw ValidationError("unknown task '" + task + "'");
    if (ds.tasks[t].kind != TaskKind::Real)
        throw ValidationError("operation requires a Real task; '" + task + "' is categorical");

    const auto groups = group_rows(ds, key);

    AverageDuplicatesResult res;
    double var_sum = 0.0;
    int var_groups = 0;

    // Build the merged dataset: one surviving row per group, in original order
    // of each group's first row.
    std::vector<int> keep;
    keep.reserve(groups.size());
    for (const auto& g : groups) keep.push_back(g[0]);
    std::sort(keep.begin(), keep.end());
    std::map<int, int> new_index;  // old row -> new row
    for (std::size_t i = 0; i < keep.size(); ++i) new_index[keep[i]] = static_cast<int>(i);

    Dataset out = ds.select_rows(keep);
    // select_rows carried over the first row's labels; recompute the reduced
    // task and fill other tasks with first observed values across the group.
    for (const auto& g : groups) {
        if (g.size() < 2) continue;
        ++res.groups_merged;
        const int nr = new_index[g[0]];
        // Reduced task.
        std::vector<double> vals;
        for (const int r : g) {
            const auto v = ds.label(r, t);
            if (v) vals.push_back(*v);
        }
        out.labels[t].erase(nr);
        if (!vals.empty()) {
            if (how == Reduce::Mean) {
                double sum = 0;
                for (const double v : vals) sum += v;
                const double mean = sum / static_cast<double>(vals.size());
                out.labels[t][nr] = mean;
                if (vals.size() >= 2) {
                    double ss = 0;
                    for (const double v : vals) ss += (v - mean) * (v - mean);
                    var_sum += ss / static_cast<double>(vals.size());
                    ++var_groups;
                }
            } else {
                out.labels[t][nr] = *std::min_element(vals.begin(), vals.end());
            }
        }
        // Other tasks: first observed label in the group wins.
        for (std::size_t ot = 0; ot < ds.tasks.size(); ++ot) {
            if (static_cast<int>(ot) == t) continue;
            if (out.labels[ot].count(nr)) continue;
            for (const int r : g) {
                const auto v = ds.label(r, static_cast<int>(ot));
                if (v) {
                    out.labels[ot][nr] = *v;
                    break;
                }
            }
        }
    }
    res.noise_estimate = var_groups > 0 ? var_sum / var_groups : 0.0;
    res.dataset = std::move(out);
    return res;
}

}  // namespace

AverageDuplicatesResult average_duplicates(const Dataset& ds, const GroupKey& key,
                                           const std::string& task) {
    return group_reduce(ds, key, task, Reduce::Mean);
}

Dataset min_duplicates(const Dataset& ds, const GroupKey& key, const std::string& task) {
    return group_reduce(ds, key, task, Reduce::Min).dataset;
}

CollapseClassesResult collapse_classes(const Dataset& ds, const std::string& task,
                                       const std::map<std::string, std::string>& merge_map,
                                       int min_count) {
    const int t = ds.task_index(task);
    if (t < 0) throw ValidationError("unknown task '" + task + "'");
    const TaskSpec& spec = ds.tasks[t];
    if (spec.kind != TaskKind::Categorical)
        throw ValidationError("collapse_classes requires a categorical task");
    for (const auto& [src, dst] : merge_map)
        if (spec.class_index(src) < 0)
            throw ValidationError("merge map references unknown class '" + src + "'");

    // New vocabulary: targets in first-appearance order over the old one.
    std::vector<std::string> new_classes;
    std::vector<int> remap(spec.classes.size());
    for (std::size_t c = 0; c < spec.classes.size(); ++c) {
        const auto it = merge_map.find(spec.classes[c]);
        const std::string target = it == merge_map.end() ? spec.classes[c] : it->second;
        int idx = -1;
        for (std::size_t k = 0; k < new_classes.size(); ++k)
            if (new_classes[k] == target) idx = static_cast<int>(k);
        if (idx < 0) {
            new_classes.push_back(target);
            idx = static_cast<int>(new_classes.size()) - 1;
        }
        remap[c] = idx;
    }

    CollapseClassesResult res;
    res.dataset = ds;
    res.dataset.tasks[t].classes = new_classes;
    for (auto& [row, value] : res.dataset.labels[t])
        value = static_cast<double>(remap[static_cast<int>(value)]);

    std::vector<int> counts(new_classes.size(), 0);
    for (const auto& [row, value] : res.dataset.labels[t]) ++counts[static_cast<int>(value)];
    for (std::size_t c = 0; c < new_classes.size(); ++c) {
        res.class_counts[new_classes[c]] = counts[c];
        if (counts[c] < min_count) res.under_populated.push_back(new_classes[c]);
    }
    return res;
}

Dataset drop_conflicting_labels(const Dataset& ds, const std::string& task,
                                const GroupKey& key) {
    const int t = ds.task_index(task);
    if (t < 0) throw ValidationError("unknown task '" + task + "'");
    if (ds.tasks[t].kind != TaskKind::Categorical)
        throw ValidationError("drop_conflicting_labels requires a categorical task");

    Dataset out = ds;
    for (const auto& g : group_rows(ds, key)) {
        bool first = true;
        double v0 = 0;
        bool conflict = false;
        for (const int r : g) {
            const auto v = ds.label(r, t);
            if (!v) continue;
            if (first) {
                v0 = *v;
                first = false;
            } else if (*v != v0) {
                conflict = true;
            }
        }
        if (conflict)
            for (const int r : g) out.labels[t].erase(r);
    }
    return out;
}

Dataset filter_rows(const Dataset& ds, const RowPredicate& pred) {
    std::vector<int> keep;
    for (int r = 0; r < ds.n_rows(); ++r)
        if (pred(ds, r)) keep.push_back(r);
    return ds.select_rows(keep);
}

Dataset subsample(const Dataset& ds, int n, std::uint64_t seed) {
    if (n <= 0 || n > ds.n_rows())
        throw ValidationError("subsample size " + std::to_string(n) +
                              " out of range [1, " + std::to_string(ds.n_rows()) + "]");
    rng::Engine eng(seed);
    const std::vector<int> rows = rng::sample_without_replacement(eng, ds.n_rows(), n);
    return ds.select_rows(rows);
}

}  // namespace tlf
