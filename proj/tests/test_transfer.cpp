#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "support/test_util.hpp"
#include "tlforest/error.hpp"
#include "tlforest/transfer.hpp"

using namespace tlf;

namespace {

// Step reference with duplicated x values plus an exact target offset, so a
// full-depth forest reproduces the reference at every training x.
Dataset offset_step_dataset(double offset, bool divide = false) {
    Dataset ds;
    ds.feature_names = {"x"};
    TaskSpec ref;
    ref.name = "y_ref";
    TaskSpec tgt;
    tgt.name = "y_tgt";
    ds.tasks = {ref, tgt};
    ds.labels.resize(2);
    const double xs[] = {0.1, 0.3, 0.7, 0.9};
    int row = 0;
    for (int rep = 0; rep < 10; ++rep) {
        for (const double x : xs) {
            char buf[16];
            std::snprintf(buf, sizeof(buf), "id%04d", row);
            ds.row_ids.push_back(buf);
            ds.features.push_back(x);
            const double y = x < 0.5 ? 1.0 : 3.0;
            ds.labels[0][row] = y;
            ds.labels[1][row] = divide ? y * offset : y + offset;
            ++row;
        }
    }
    return ds;
}

std::vector<double> probe1(double x) { return {x}; }

}  // namespace

TEST_CASE("architecture spec JSON round-trip") {
    ArchitectureSpec spec;
    spec.kind = ArchitectureSpec::Kind::LatentVariable;
    StageSpec s1;
    s1.task = "e1";
    StageSpec s2;
    s2.task = "e2";
    s2.latent_inputs = {"e1"};
    s2.use_observed_latents = true;
    spec.stages = {s1, s2};

    const ArchitectureSpec back = ArchitectureSpec::from_json_text(spec.to_json_text());
    CHECK(back.kind == spec.kind);
    REQUIRE(back.stages.size() == 2);
    CHECK(back.stages[1].latent_inputs == std::vector<std::string>{"e1"});
    CHECK(back.stages[1].use_observed_latents);
}

TEST_CASE("spec validation rejects malformed graphs") {
    SUBCASE("forward/cyclic latent reference") {
        ArchitectureSpec spec;
        spec.kind = ArchitectureSpec::Kind::LatentVariable;
        StageSpec s1;
        s1.task = "a";
        s1.latent_inputs = {"b"};
        StageSpec s2;
        s2.task = "b";
        spec.stages = {s1, s2};
        CHECK_THROWS_AS(spec.validate(), ValidationError);
    }
    SUBCASE("duplicate stage task") {
        ArchitectureSpec spec;
        spec.kind = ArchitectureSpec::Kind::LatentVariable;
        StageSpec s1;
        s1.task = "a";
        spec.stages = {s1, s1};
        CHECK_THROWS_AS(spec.validate(), ValidationError);
    }
    SUBCASE("difference with identical tasks") {
        ArchitectureSpec spec;
        spec.kind = ArchitectureSpec::Kind::Difference;
        spec.target_task = spec.reference_task = "y";
        CHECK_THROWS_AS(spec.validate(), ValidationError);
    }
    SUBCASE("difference forbids categorical targets") {
        std::mt19937_64 eng(1);
        const Dataset ds = testutil::random_dataset(eng, 10, 2);
        ArchitectureSpec spec;
        spec.kind = ArchitectureSpec::Kind::Difference;
        spec.target_task = "c";
        spec.reference_task = "y";
        CHECK_THROWS_AS(spec.validate(ds), ValidationError);
    }
}

TEST_CASE("difference architecture is exact on an additive offset") {
    const Dataset ds = offset_step_dataset(0.5);
    ArchitectureSpec spec;
    spec.kind = ArchitectureSpec::Kind::Difference;
    spec.target_task = "y_tgt";
    spec.reference_task = "y_ref";

    ForestParams params;
    params.num_trees = TreeCount::fixed(40);
    params.feature_subset_size = 1;
    params.seed = 11;
    const TrainedArchitecture ta = train_architecture(spec, ds, params);

    for (const double x : {0.1, 0.3, 0.7, 0.9}) {
        const auto preds = predict_architecture(ta, probe1(x), false);
        const double truth = (x < 0.5 ? 1.0 : 3.0) + 0.5;
        CHECK(preds.at("y_tgt").value == doctest::Approx(truth).epsilon(1e-12));
    }
}

TEST_CASE("difference identity: identical labels give a constant correction") {
    SUBCASE("subtract: learned correction is exactly zero") {
        const Dataset ds = offset_step_dataset(0.0);
        ArchitectureSpec spec;
        spec.kind = ArchitectureSpec::Kind::Difference;
        spec.target_task = "y_tgt";
        spec.reference_task = "y_ref";
        ForestParams params;
        params.num_trees = TreeCount::fixed(10);
        params.seed = 3;
        const TrainedArchitecture ta = train_architecture(spec, ds, params);
        for (const double x : {0.05, 0.2, 0.5, 0.77, 0.95})
            CHECK(predict_real(ta.stages[1].forest, difference_task_name(spec), probe1(x)) ==
                  0.0);
    }
    SUBCASE("divide: learned ratio is exactly one") {
        const Dataset ds = offset_step_dataset(1.0, /*divide=*/true);
        ArchitectureSpec spec;
        spec.kind = ArchitectureSpec::Kind::Difference;
        spec.target_task = "y_tgt";
        spec.reference_task = "y_ref";
        spec.op = DiffOp::Divide;
        ForestParams params;
        params.num_trees = TreeCount::fixed(10);
        params.seed = 3;
        const TrainedArchitecture ta = train_architecture(spec, ds, params);
        for (const double x : {0.05, 0.2, 0.5, 0.77, 0.95})
            CHECK(predict_real(ta.stages[1].forest, difference_task_name(spec), probe1(x)) ==
                  1.0);
    }
}

TEST_CASE("difference composition is bit-exact over the sub-models") {
    const Dataset ds = offset_step_dataset(0.5);
    ArchitectureSpec spec;
    spec.kind = ArchitectureSpec::Kind::Difference;
    spec.target_task = "y_tgt";
    spec.reference_task = "y_ref";
    ForestParams params;
    params.num_trees = TreeCount::fixed(20);
    params.seed = 5;

    SUBCASE("subtract") {
        const TrainedArchitecture ta = train_architecture(spec, ds, params);
        for (const double x : {0.15, 0.4, 0.6, 0.85}) {
            const double composed = predict_architecture(ta, probe1(x), false).at("y_tgt").value;
            const double manual =
                predict_real(ta.stages[0].forest, "y_ref", probe1(x)) +
                predict_real(ta.stages[1].forest, difference_task_name(spec), probe1(x));
            CHECK(composed == manual);
        }
    }
    SUBCASE("divide") {
        spec.op = DiffOp::Divide;
        const Dataset dsd = offset_step_dataset(1.5, /*divide=*/true);
        const TrainedArchitecture ta = train_architecture(spec, dsd, params);
        for (const double x : {0.15, 0.4, 0.6, 0.85}) {
            const double composed = predict_architecture(ta, probe1(x), false).at("y_tgt").value;
            const double manual =
                predict_real(ta.stages[0].forest, "y_ref", probe1(x)) *
                predict_real(ta.stages[1].forest, difference_task_name(spec), probe1(x));
            CHECK(composed == manual);
        }
    }
}

TEST_CASE("divide relabeling rejects reference labels at zero") {
    Dataset ds = offset_step_dataset(1.0, true);
    ds.labels[0][3] = 0.0;  // reference label on row id0003 pinned to zero
    ArchitectureSpec spec;
    spec.kind = ArchitectureSpec::Kind::Difference;
    spec.target_task = "y_tgt";
    spec.reference_task = "y_ref";
    spec.op = DiffOp::Divide;
    ForestParams params;
    params.num_trees = TreeCount::fixed(4);
    try {
        train_architecture(spec, ds, params);
        FAIL("expected a validation error");
    } catch (const ValidationError& e) {
        CHECK(std::string(e.what()).find("id0003") != std::string::npos);
    }
}

TEST_CASE("series latent stages gain one input column per upstream task") {
    std::mt19937_64 eng(7);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    Dataset ds;
    ds.feature_names = {"x1", "x2", "x3"};
    for (const char* name : {"e1", "e2", "e3"}) {
        TaskSpec t;
        t.name = name;
        ds.tasks.push_back(t);
    }
    ds.labels.resize(3);
    for (int r = 0; r < 40; ++r) {
        char buf[16];
        std::snprintf(buf, sizeof(buf), "id%04d", r);
        ds.row_ids.push_back(buf);
        for (int c = 0; c < 3; ++c) ds.features.push_back(unit(eng));
        ds.labels[0][r] = unit(eng);
        if (r < 25) ds.labels[1][r] = unit(eng);
        if (r < 20) ds.labels[2][r] = unit(eng);
    }

    ArchitectureSpec spec;
    spec.kind = ArchitectureSpec::Kind::LatentVariable;
    StageSpec s1;
    s1.task = "e1";
    StageSpec s2;
    s2.task = "e2";
    s2.latent_inputs = {"e1"};
    StageSpec s3;
    s3.task = "e3";
    s3.latent_inputs = {"e1", "e2"};
    spec.stages = {s1, s2, s3};

    ForestParams params;
    params.num_trees = TreeCount::fixed(8);
    params.seed = 2;
    const TrainedArchitecture ta = train_architecture(spec, ds, params);
    CHECK(ta.stages[0].forest.n_features() == 3);
    CHECK(ta.stages[1].forest.n_features() == 4);
    CHECK(ta.stages[2].forest.n_features() == 5);

    const auto preds = predict_architecture(ta, std::vector<double>{0.5, 0.5, 0.5}, false);
    CHECK(preds.count("e1") == 1);
    CHECK(preds.count("e2") == 1);
    CHECK(preds.count("e3") == 1);
}

TEST_CASE("multi-task with one task reduces to single-task") {
    std::mt19937_64 eng(8);
    const Dataset ds = testutil::random_dataset(eng, 40, 3);
    ArchitectureSpec multi;
    multi.kind = ArchitectureSpec::Kind::MultiTask;
    multi.tasks = {"y"};
    ArchitectureSpec single;
    single.kind = ArchitectureSpec::Kind::SingleTask;
    single.task = "y";
    ForestParams params;
    params.num_trees = TreeCount::fixed(10);
    params.seed = 13;
    const TrainedArchitecture a = train_architecture(multi, ds, params);
    const TrainedArchitecture b = train_architecture(single, ds, params);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int p = 0; p < 20; ++p) {
        const std::vector<double> x{unit(eng), unit(eng), unit(eng)};
        CHECK(predict_architecture(a, x, false).at("y").value ==
              predict_architecture(b, x, false).at("y").value);
    }
}

TEST_CASE("a pretrained reference forest is reused verbatim") {
    const Dataset ds = offset_step_dataset(0.5);
    ForestParams ref_params;
    ref_params.num_trees = TreeCount::fixed(25);
    ref_params.seed = 77;
    const Forest standalone = train_forest(ds, {"y_ref"}, ref_params);

    ArchitectureSpec spec;
    spec.kind = ArchitectureSpec::Kind::Difference;
    spec.target_task = "y_tgt";
    spec.reference_task = "y_ref";
    spec.reference_pretrained = true;
    spec.pretrained_handle = "big";

    PretrainedStore store;
    store["big"] = standalone;
    ForestParams params;
    params.num_trees = TreeCount::fixed(10);
    params.seed = 1;
    const TrainedArchitecture ta = train_architecture(spec, ds, params, store);

    for (const double x : {0.1, 0.45, 0.72, 0.9})
        CHECK(predict_architecture(ta, probe1(x), false).at("y_ref").value ==
              predict_real(standalone, "y_ref", probe1(x)));

    SUBCASE("missing handle") {
        CHECK_THROWS_AS(train_architecture(spec, ds, params, PretrainedStore{}),
                        ValidationError);
    }
}

TEST_CASE("perturbing the latent model changes downstream predictions") {
    // The downstream label is a function of the latent sum x1 + x2, which no
    // single base feature explains on its own.
    std::mt19937_64 eng(9);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    Dataset ds;
    ds.feature_names = {"x1", "x2"};
    TaskSpec t1;
    t1.name = "latent";
    TaskSpec t2;
    t2.name = "target";
    ds.tasks = {t1, t2};
    ds.labels.resize(2);
    for (int r = 0; r < 80; ++r) {
        char buf[16];
        std::snprintf(buf, sizeof(buf), "id%04d", r);
        ds.row_ids.push_back(buf);
        const double x1 = unit(eng);
        const double x2 = unit(eng);
        ds.features.push_back(x1);
        ds.features.push_back(x2);
        ds.labels[0][r] = x1 + x2;
        if (r % 2 == 0) ds.labels[1][r] = x1 + x2;
    }

    ArchitectureSpec spec;
    spec.kind = ArchitectureSpec::Kind::LatentVariable;
    StageSpec s1;
    s1.task = "latent";
    StageSpec s2;
    s2.task = "target";
    s2.latent_inputs = {"latent"};
    spec.stages = {s1, s2};

    ForestParams params;
    params.num_trees = TreeCount::fixed(30);
    params.seed = 21;
    TrainedArchitecture ta = train_architecture(spec, ds, params);

    std::vector<double> baseline;
    std::vector<std::vector<double>> probes;
    for (int p = 0; p < 20; ++p) probes.push_back({unit(eng), unit(eng)});
    for (const auto& x : probes)
        baseline.push_back(predict_architecture(ta, x, false).at("target").value);

    // Inject a constant offset into the latent forest's leaf means.
    for (auto& tree : ta.stages[0].forest.trees)
        for (auto& node : tree.nodes)
            if (node.is_leaf())
                for (auto& stat : node.stats) stat.mean += 0.5;

    int changed = 0;
    for (std::size_t p = 0; p < probes.size(); ++p)
        if (predict_architecture(ta, probes[p], false).at("target").value != baseline[p])
            ++changed;
    CHECK(changed >= 1);
}

TEST_CASE("observed-latent and out-of-bag training modes run deterministically") {
    std::mt19937_64 eng(10);
    const Dataset ds = testutil::random_dataset(eng, 40, 3);
    ArchitectureSpec spec;
    spec.kind = ArchitectureSpec::Kind::LatentVariable;
    StageSpec s1;
    s1.task = "y";
    StageSpec s2;
    s2.task = "c";
    s2.latent_inputs = {"y"};
    spec.stages = {s1, s2};

    ForestParams params;
    params.num_trees = TreeCount::fixed(12);
    params.seed = 3;

    for (const bool observed : {false, true}) {
        for (const bool oob : {false, true}) {
            spec.stages[1].use_observed_latents = observed;
            spec.stages[1].use_oob_latents = oob;
            const TrainedArchitecture a = train_architecture(spec, ds, params);
            const TrainedArchitecture b = train_architecture(spec, ds, params);
            const std::vector<double> x{0.5, 0.5, 0.5};
            CHECK(predict_architecture(a, x, false).at("c").value ==
                  predict_architecture(b, x, false).at("c").value);
        }
    }
}

TEST_CASE("model serialization round-trips bit-exactly") {
    const Dataset ds = offset_step_dataset(0.5);
    ArchitectureSpec spec;
    spec.kind = ArchitectureSpec::Kind::Difference;
    spec.target_task = "y_tgt";
    spec.reference_task = "y_ref";
    ForestParams params;
    params.num_trees = TreeCount::fixed(15);
    params.seed = 9;
    const TrainedArchitecture ta = train_architecture(spec, ds, params);
    const TrainedArchitecture back = TrainedArchitecture::from_json_text(ta.to_json_text());
    for (const double x : {0.12, 0.44, 0.61, 0.88}) {
        const auto p1 = predict_architecture(ta, probe1(x), true);
        const auto p2 = predict_architecture(back, probe1(x), true);
        CHECK(p1.at("y_tgt").value == p2.at("y_tgt").value);
        CHECK(p1.at("y_tgt").uncertainty->std_error == p2.at("y_tgt").uncertainty->std_error);
    }
}

TEST_CASE("prediction dimension mismatch names the expected width") {
    std::mt19937_64 eng(11);
    const Dataset ds = testutil::random_dataset(eng, 20, 3);
    ArchitectureSpec spec;
    spec.kind = ArchitectureSpec::Kind::SingleTask;
    spec.task = "y";
    ForestParams params;
    params.num_trees = TreeCount::fixed(5);
    const TrainedArchitecture ta = train_architecture(spec, ds, params);
    try {
        predict_architecture(ta, std::vector<double>{0.1}, false);
        FAIL("expected a validation error");
    } catch (const ValidationError& e) {
        CHECK(std::string(e.what()).find("3") != std::string::npos);
    }
}
