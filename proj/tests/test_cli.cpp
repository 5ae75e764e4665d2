#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "support/test_util.hpp"
#include "tlforest/experiment.hpp"

using nlohmann::json;
using testutil::TempDir;
using testutil::write_text;

namespace {

int run_cli(const std::string& args) {
    const std::string cmd = std::string(TLFOREST_CLI_PATH) + " " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
}

std::string slurp(const std::string& path) {
    std::ifstream in(path);
    REQUIRE(in.good());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_toy_dataset(const TempDir& dir) {
    write_text(dir.file("toy.csv"),
               "id,T,x1,gap,color\n"
               "m1,300,0.10,1.0,red\n"
               "m1b,300,0.10,3.0,red\n"
               "m2,300,0.40,2.0,blue\n"
               "m2b,300,0.40,,crimson\n"
               "m3,300,0.70,2.5,blue\n"
               "m4,77,0.70,9.9,blue\n"
               "m5,300,0.90,3.5,red\n"
               "m6,300,0.55,2.2,blue\n"
               "m7,300,0.25,1.4,red\n");
    write_text(dir.file("toy.schema.json"), R"({
      "columns": {"id": "row_id", "T": "feature", "x1": "feature",
                  "gap": "task", "color": "task"},
      "tasks": {"gap": {"kind": "real", "units": "eV"},
                "color": {"kind": "categorical"}}
    })");
}

std::string ingest_config(const TempDir& dir, bool bad_task = false) {
    json j;
    j["seed"] = 3;
    j["dataset"] = {{"csv", dir.file("toy.csv")}, {"schema", dir.file("toy.schema.json")}};
    j["preprocess"] = json::array({
        json{{"op", "filter"}, {"column", "T"}, {"cmp", "=="}, {"value", 300}},
        json{{"op", "collapse_classes"},
             {"task", "color"},
             {"merge_map", json{{"crimson", "red"}}},
             {"min_count", 2}},
        json{{"op", "drop_conflicting"}, {"task", "color"}, {"group_key", json::array({"x1"})}},
        json{{"op", "average_duplicates"},
             {"task", bad_task ? "nope" : "gap"},
             {"group_key", json::array({"x1"})}},
    });
    j["output_dir"] = dir.file("out");
    return j.dump();
}

}  // namespace

TEST_CASE("synth subcommand writes a loadable dataset with sidecar") {
    TempDir dir;
    write_text(dir.file("gen.json"),
               R"({"generator": "multifidelity", "n_low": 30, "n_high": 10, "seed": 4})");
    const int rc = run_cli("synth -c " + dir.file("gen.json") + " -o " + dir.file("s.csv"));
    CHECK(rc == 0);
    const tlf::Dataset ds = tlf::load_delimited(
        dir.file("s.csv"), tlf::Schema::load(dir.file("s.csv.schema.json")));
    CHECK(ds.n_rows() == 30);
    CHECK(ds.label_count(ds.task_index("y_high")) == 10);
}

TEST_CASE("ingest applies the recipe and reports per-step deltas") {
    TempDir dir;
    write_toy_dataset(dir);
    write_text(dir.file("cfg.json"), ingest_config(dir));
    const int rc = run_cli("ingest -c " + dir.file("cfg.json"));
    CHECK(rc == 0);

    const json report = json::parse(slurp(dir.file("out/ingest_report.json")));
    REQUIRE(report["steps"].size() == 4);
    CHECK(report["steps"][0]["rows_before"] == 9);
    CHECK(report["steps"][0]["rows_after"] == 8);  // the 77K row dropped
    CHECK(report["steps"][1].contains("class_counts"));
    // m2/m2b conflict (blue vs crimson->red) drops that group's color labels.
    CHECK(report["steps"][2]["labels_before"]["color"] == 8);
    CHECK(report["steps"][2]["labels_after"]["color"] == 6);
    CHECK(report["steps"][3]["rows_after"] == 6);  // duplicates merged
    CHECK(report["steps"][3]["noise_estimate"] == doctest::Approx(1.0));

    const tlf::Dataset cleaned = tlf::load_delimited(
        dir.file("out/cleaned.csv"), tlf::Schema::load(dir.file("out/cleaned.schema.json")));
    CHECK(cleaned.n_rows() == 6);
}

TEST_CASE("empty recipe passes the dataset through unchanged") {
    TempDir dir;
    write_toy_dataset(dir);
    json j;
    j["seed"] = 1;
    j["dataset"] = {{"csv", dir.file("toy.csv")}, {"schema", dir.file("toy.schema.json")}};
    j["output_dir"] = dir.file("out");
    write_text(dir.file("cfg.json"), j.dump());
    CHECK(run_cli("ingest -c " + dir.file("cfg.json")) == 0);
    const tlf::Dataset cleaned = tlf::load_delimited(
        dir.file("out/cleaned.csv"), tlf::Schema::load(dir.file("out/cleaned.schema.json")));
    CHECK(cleaned.n_rows() == 9);
}

TEST_CASE("a recipe referencing an unknown task fails before writing output") {
    TempDir dir;
    write_toy_dataset(dir);
    write_text(dir.file("cfg.json"), ingest_config(dir, /*bad_task=*/true));
    CHECK(run_cli("ingest -c " + dir.file("cfg.json")) == 2);
    CHECK(!std::ifstream(dir.file("out/cleaned.csv")).good());
}

TEST_CASE("train then predict reproduces in-process predictions") {
    TempDir dir;
    write_text(dir.file("gen.json"),
               R"({"generator": "multifidelity", "n_low": 60, "n_high": 30,
                   "noise_std": 0.05, "seed": 9})");
    json cfg;
    cfg["seed"] = 11;
    cfg["dataset"] = {{"synth", json::parse(slurp(dir.file("gen.json")))}};
    cfg["forest"] = {{"num_trees", 20}};
    cfg["architectures"] = json::array({
        json{{"name", "diff"},
             {"spec", json{{"kind", "difference"},
                           {"target", "y_high"},
                           {"reference", "y_low"},
                           {"op", "subtract"}}}},
    });
    cfg["output_dir"] = dir.file("out");
    write_text(dir.file("cfg.json"), cfg.dump());

    CHECK(run_cli("train -c " + dir.file("cfg.json")) == 0);
    const json manifest = json::parse(slurp(dir.file("out/diff.manifest.json")));
    CHECK(manifest.contains("fingerprint"));
    CHECK(manifest["seed"] == 11);

    // Input file: the generator output written to disk.
    tlf::SynthConfig gen = tlf::SynthConfig::from_json_text(slurp(dir.file("gen.json")));
    tlf::cmd_synth(gen, dir.file("in.csv"), dir.file("in.schema.json"));
    // Strip task columns from the schema so only features remain mapped.
    json schema = json::parse(slurp(dir.file("in.schema.json")));
    schema["columns"]["y_low"] = "ignore";
    schema["columns"]["y_high"] = "ignore";
    schema["tasks"] = json::object();
    write_text(dir.file("in.schema.json"), schema.dump());

    CHECK(run_cli("predict -m " + dir.file("out/diff.model.json") + " -i " +
                  dir.file("in.csv") + " -s " + dir.file("in.schema.json") + " -o " +
                  dir.file("pred.csv")) == 0);

    const std::string pred = slurp(dir.file("pred.csv"));
    int lines = 0;
    for (const char c : pred)
        if (c == '\n') ++lines;
    CHECK(lines == 60 + 1);  // header + one line per input row

    // Spot-check one prediction against the in-process model.
    const tlf::TrainedArchitecture ta =
        tlf::TrainedArchitecture::load(dir.file("out/diff.model.json"));
    const tlf::Dataset in = tlf::load_delimited(
        dir.file("in.csv"), tlf::Schema::load(dir.file("in.schema.json")));
    const auto expect = tlf::predict_architecture(
        ta, std::span<const double>(in.row(0), 3), true);
    std::istringstream lines_in(pred);
    std::string header, first;
    std::getline(lines_in, header);
    std::getline(lines_in, first);
    CHECK(header.rfind("row_id,y_low,y_low_stderr,y_high,y_high_stderr", 0) == 0);
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", expect.at("y_high").value);
    CHECK(first.find(buf) != std::string::npos);
}

TEST_CASE("predict rejects dimension mismatches with the expected width") {
    TempDir dir;
    write_text(dir.file("gen.json"),
               R"({"generator": "multifidelity", "n_low": 30, "n_high": 15, "seed": 2})");
    json cfg;
    cfg["seed"] = 1;
    cfg["dataset"] = {{"synth", json::parse(slurp(dir.file("gen.json")))}};
    cfg["forest"] = {{"num_trees", 5}};
    cfg["architectures"] = json::array({
        json{{"name", "direct"},
             {"spec", json{{"kind", "single_task"}, {"task", "y_high"}}}},
    });
    cfg["output_dir"] = dir.file("out");
    write_text(dir.file("cfg.json"), cfg.dump());
    REQUIRE(run_cli("train -c " + dir.file("cfg.json")) == 0);

    write_text(dir.file("narrow.csv"), "id,x1\nq,0.5\n");
    write_text(dir.file("narrow.schema.json"),
               R"({"columns": {"id": "row_id", "x1": "feature"}, "tasks": {}})");
    CHECK(run_cli("predict -m " + dir.file("out/direct.model.json") + " -i " +
                  dir.file("narrow.csv") + " -s " + dir.file("narrow.schema.json") +
                  " -o " + dir.file("p.csv")) == 2);
}

TEST_CASE("predict emits class columns whose probabilities sum to one") {
    TempDir dir;
    json gen = {{"generator", "threshold_class"}, {"n_low", 0},     {"n_high", 120},
                {"n_class", 60},                  {"n_bins", 4},    {"seed", 21},
                {"noise_std", 0.05}};
    json cfg;
    cfg["seed"] = 2;
    cfg["dataset"] = {{"synth", gen}};
    cfg["forest"] = {{"num_trees", 10}};
    cfg["architectures"] = json::array({
        json{{"name", "cls"}, {"spec", json{{"kind", "single_task"}, {"task", "y_class"}}}},
    });
    cfg["output_dir"] = dir.file("out");
    write_text(dir.file("cfg.json"), cfg.dump());
    REQUIRE(run_cli("train -c " + dir.file("cfg.json")) == 0);

    tlf::SynthConfig gc = tlf::SynthConfig::from_json_text(gen.dump());
    tlf::cmd_synth(gc, dir.file("in.csv"), dir.file("in.schema.json"));
    json schema = json::parse(slurp(dir.file("in.schema.json")));
    schema["columns"]["y_high"] = "ignore";
    schema["columns"]["y_class"] = "ignore";
    schema["tasks"] = json::object();
    write_text(dir.file("in.schema.json"), schema.dump());
    REQUIRE(run_cli("predict -m " + dir.file("out/cls.model.json") + " -i " +
                    dir.file("in.csv") + " -s " + dir.file("in.schema.json") + " -o " +
                    dir.file("p.csv")) == 0);

    std::ifstream in(dir.file("p.csv"));
    std::string header, line;
    std::getline(in, header);
    CHECK(header.find("y_class_prob_c0") != std::string::npos);
    int rows = 0;
    while (std::getline(in, line)) {
        std::stringstream ss(line);
        std::string cell;
        std::vector<std::string> cells;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        double total = 0;
        for (std::size_t i = 2; i < cells.size(); ++i) total += std::stod(cells[i]);
        CHECK(total == doctest::Approx(1.0).epsilon(1e-9));
        ++rows;
    }
    CHECK(rows == 120);
}

TEST_CASE("evaluate is byte-reproducible and emits figure-style tables") {
    TempDir dir;
    json gen = {{"generator", "multifidelity"}, {"n_low", 80}, {"n_high", 60},
                {"noise_std", 0.1},             {"seed", 31}};
    json cfg;
    cfg["seed"] = 7;
    cfg["dataset"] = {{"synth", gen}};
    cfg["forest"] = {{"num_trees", 8}};
    cfg["architectures"] = json::array({
        json{{"name", "Direct"},
             {"spec", json{{"kind", "single_task"}, {"task", "y_high"}}}},
        json{{"name", "Difference"},
             {"spec", json{{"kind", "difference"},
                           {"target", "y_high"},
                           {"reference", "y_low"},
                           {"op", "subtract"}}}},
    });
    cfg["evaluation"] = {{"mode", "learning_curve"}, {"task", "y_high"},
                         {"trials", 2},              {"holdout_fraction", 0.1},
                         {"sizes", json::array({20, 40})}};
    cfg["output_dir"] = dir.file("out1");
    write_text(dir.file("cfg.json"), cfg.dump());

    REQUIRE(run_cli("evaluate -c " + dir.file("cfg.json")) == 0);
    const std::string table = slurp(dir.file("out1/rmse.csv"));
    std::istringstream ss(table);
    std::string header;
    std::getline(ss, header);
    CHECK(header == "Size,Direct,DirectError,Difference,DifferenceError");
    std::string row;
    std::getline(ss, row);
    CHECK(row.rfind("20,", 0) == 0);

    REQUIRE(run_cli("evaluate -c " + dir.file("cfg.json") + " -o " + dir.file("out2")) == 0);
    CHECK(slurp(dir.file("out2/rmse.csv")) == table);
    CHECK(slurp(dir.file("out2/report.json")) == slurp(dir.file("out1/report.json")));
}

TEST_CASE("composite specs add an F1 table") {
    TempDir dir;
    json gen = {{"generator", "correlated_energies"}, {"n_low", 60}, {"n_high", 40},
                {"n_third", 36},                      {"noise_std", 0.1}, {"seed", 41}};
    json stages = json::array({json{{"task", "e1"}},
                               json{{"task", "e2"}, {"latent_inputs", json::array({"e1"})}},
                               json{{"task", "e3"}, {"latent_inputs", json::array({"e1"})}}});
    json cfg;
    cfg["seed"] = 3;
    cfg["dataset"] = {{"synth", gen}};
    cfg["forest"] = {{"num_trees", 6}};
    cfg["architectures"] = json::array({
        json{{"name", "parallel"},
             {"spec", json{{"kind", "latent_variable"}, {"stages", stages}}}},
    });
    cfg["composite"] = {{"name", "rds"}, {"sources", json::array({"e1", "e2", "e3"})},
                        {"rule", "argmin"}};
    cfg["evaluation"] = {{"mode", "cv"}, {"folds", 4}, {"trials", 1}, {"scope", "composite"}};
    cfg["output_dir"] = dir.file("out");
    write_text(dir.file("cfg.json"), cfg.dump());
    REQUIRE(run_cli("evaluate -c " + dir.file("cfg.json")) == 0);
    const std::string table = slurp(dir.file("out/composite_f1.csv"));
    CHECK(table.find("parallel") != std::string::npos);
}

TEST_CASE("architecture specs can be referenced as external files") {
    TempDir dir;
    json gen = {{"generator", "multifidelity"}, {"n_low", 40}, {"n_high", 20}, {"seed", 61}};
    write_text(dir.file("arch.json"),
               R"({"kind": "single_task", "task": "y_high", "schema_version": 1})");
    json cfg;
    cfg["seed"] = 1;
    cfg["dataset"] = {{"synth", gen}};
    cfg["forest"] = {{"num_trees", 4}};
    cfg["architectures"] =
        json::array({json{{"name", "d"}, {"spec_file", dir.file("arch.json")}}});
    cfg["output_dir"] = dir.file("out");
    write_text(dir.file("cfg.json"), cfg.dump());
    CHECK(run_cli("train -c " + dir.file("cfg.json")) == 0);
    CHECK(std::ifstream(dir.file("out/d.model.json")).good());
}

TEST_CASE("a pretrained handle path is honored by train") {
    TempDir dir;
    json gen = {{"generator", "multifidelity"}, {"n_low", 50}, {"n_high", 30},
                {"noise_std", 0.05},            {"seed", 51}};
    const tlf::Dataset ds = tlf::generate(tlf::SynthConfig::from_json_text(gen.dump()));

    // Train and persist the reference forest out of band.
    tlf::ForestParams rp;
    rp.num_trees = tlf::TreeCount::fixed(12);
    rp.seed = 99;
    const tlf::Forest reference = tlf::train_forest(ds, {"y_low"}, rp);
    reference.save(dir.file("ref.forest.json"));

    json cfg;
    cfg["seed"] = 1;
    cfg["dataset"] = {{"synth", gen}};
    cfg["forest"] = {{"num_trees", 8}};
    cfg["architectures"] = json::array({
        json{{"name", "diff"},
             {"spec", json{{"kind", "difference"},
                           {"target", "y_high"},
                           {"reference", "y_low"},
                           {"op", "subtract"},
                           {"pretrained", "big"}}}},
    });
    cfg["pretrained"] = {{"big", dir.file("ref.forest.json")}};
    cfg["output_dir"] = dir.file("out");
    write_text(dir.file("cfg.json"), cfg.dump());
    REQUIRE(run_cli("train -c " + dir.file("cfg.json")) == 0);

    const tlf::TrainedArchitecture ta =
        tlf::TrainedArchitecture::load(dir.file("out/diff.model.json"));
    for (int r = 0; r < 5; ++r) {
        std::span<const double> x(ds.row(r), 3);
        CHECK(tlf::predict_architecture(ta, x, false).at("y_low").value ==
              tlf::predict_real(reference, "y_low", x));
    }

    SUBCASE("missing handle file fails validation") {
        cfg["pretrained"] = {{"big", dir.file("nope.json")}};
        write_text(dir.file("bad.json"), cfg.dump());
        CHECK(run_cli("train -c " + dir.file("bad.json")) == 2);
    }
}

TEST_CASE("config fingerprint tracks semantic changes only") {
    TempDir dir;
    write_toy_dataset(dir);
    tlf::ExperimentConfig a;
    a.csv_path = dir.file("toy.csv");
    a.schema_path = dir.file("toy.schema.json");
    a.seed = 5;

    tlf::ExperimentConfig b = a;
    b.output_dir = "elsewhere";
    CHECK(a.fingerprint() == b.fingerprint());

    tlf::ExperimentConfig c = a;
    c.seed = 6;
    CHECK(a.fingerprint() != c.fingerprint());

    tlf::ExperimentConfig d = a;
    d.trials = 9;
    CHECK(a.fingerprint() != d.fingerprint());
}
