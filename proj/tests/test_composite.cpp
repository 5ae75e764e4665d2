#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "support/test_util.hpp"
#include "tlforest/composite.hpp"
#include "tlforest/error.hpp"

using namespace tlf;

namespace {

CompositeTaskSpec rds3() {
    CompositeTaskSpec spec;
    spec.name = "rds";
    spec.source_tasks = {"s1", "s2", "s3"};
    spec.rule = CompositeTaskSpec::Rule::ArgMin;
    return spec;
}

}  // namespace

TEST_CASE("argmin selects the smallest source") {
    CHECK(classify_composite(rds3(), {{"s1", 0.5}, {"s2", 0.3}, {"s3", 0.9}}) == 1);
}

TEST_CASE("ties break toward declaration order") {
    CompositeTaskSpec spec;
    spec.name = "rds";
    spec.source_tasks = {"s1", "s2"};
    CHECK(classify_composite(spec, {{"s1", 0.3}, {"s2", 0.3}}) == 0);
}

TEST_CASE("argmax rule") {
    CompositeTaskSpec spec = rds3();
    spec.rule = CompositeTaskSpec::Rule::ArgMax;
    CHECK(classify_composite(spec, {{"s1", 0.5}, {"s2", 0.3}, {"s3", 0.9}}) == 2);
}

TEST_CASE("missing or non-finite predictions are named") {
    try {
        classify_composite(rds3(), {{"s1", 0.5}, {"s3", 0.9}});
        FAIL("expected an error");
    } catch (const ValidationError& e) {
        CHECK(std::string(e.what()).find("s2") != std::string::npos);
    }
    CHECK_THROWS_AS(
        classify_composite(rds3(), {{"s1", 0.5}, {"s2", std::nan("")}, {"s3", 0.9}}),
        ValidationError);
}

TEST_CASE("classification is invariant under strictly increasing transforms") {
    std::mt19937_64 eng(1);
    std::uniform_real_distribution<double> unit(-2.0, 2.0);
    const auto spec = rds3();
    for (int rep = 0; rep < 200; ++rep) {
        std::map<std::string, double> preds{
            {"s1", unit(eng)}, {"s2", unit(eng)}, {"s3", unit(eng)}};
        const int base = classify_composite(spec, preds);

        const auto transformed = [&](auto f) {
            std::map<std::string, double> out;
            for (const auto& [k, v] : preds) out[k] = f(v);
            return classify_composite(spec, out);
        };
        CHECK(transformed([](double v) { return 3.0 * v + 17.0; }) == base);
        CHECK(transformed([](double v) { return v * v * v; }) == base);
        CHECK(transformed([](double v) { return std::atan(v); }) == base);
    }
}

TEST_CASE("ground truth covers exactly the fully labeled rows") {
    std::mt19937_64 eng(2);
    Dataset ds;
    ds.feature_names = {"x"};
    for (const char* name : {"s1", "s2", "s3"}) {
        TaskSpec t;
        t.name = name;
        ds.tasks.push_back(t);
    }
    ds.labels.resize(3);
    for (int r = 0; r < 6; ++r) {
        ds.row_ids.push_back("r" + std::to_string(r));
        ds.features.push_back(r);
    }
    ds.labels[0] = {{0, 0.5}, {1, 1.0}, {2, 0.2}, {3, 0.4}};
    ds.labels[1] = {{0, 0.3}, {1, 2.0}, {3, 0.4}};
    ds.labels[2] = {{0, 0.9}, {1, 0.5}, {2, 0.1}};

    const LabelMap truth = composite_ground_truth(ds, rds3());
    REQUIRE(truth.size() == 2);          // rows 0 and 1 carry all three labels
    CHECK(truth.at(0) == 1.0);           // {0.5, 0.3, 0.9} -> s2
    CHECK(truth.at(1) == 2.0);           // {1.0, 2.0, 0.5} -> s3
}

TEST_CASE("a common additive offset never changes the class") {
    std::mt19937_64 eng(3);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    const auto spec = rds3();
    for (int rep = 0; rep < 100; ++rep) {
        std::map<std::string, double> preds{
            {"s1", unit(eng)}, {"s2", unit(eng)}, {"s3", unit(eng)}};
        const int base = classify_composite(spec, preds);
        const double c = unit(eng) * 10.0;
        std::map<std::string, double> shifted;
        for (const auto& [k, v] : preds) shifted[k] = v + c;
        CHECK(classify_composite(spec, shifted) == base);
    }
}

TEST_CASE("composite spec validation") {
    CompositeTaskSpec two;
    two.name = "t";
    two.source_tasks = {"a"};
    CHECK_THROWS_AS(two.validate(), ValidationError);

    std::mt19937_64 eng(4);
    const Dataset ds = testutil::random_dataset(eng, 5, 2);
    CompositeTaskSpec cat;
    cat.name = "t";
    cat.source_tasks = {"y", "c"};  // "c" is categorical
    CHECK_THROWS_AS(cat.validate(ds), ValidationError);
}
