#include "tlforest/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "json_util.hpp"
#include "tlforest/error.hpp"
#include "tlforest/rng.hpp"

namespace tlf {

using detail::json;

namespace synthfn {

double piecewise(double t) {
    // Knots and slopes of the fixed ridge; continuous, alternating slopes.
    static constexpr double knots[] = {0.0, 0.2, 0.35, 0.5, 0.65, 0.8, 1.0};
    static constexpr double slopes[] = {4.0, -6.0, 5.0, -7.0, 6.0, -4.0};
    double value = 0.0;
    for (int seg = 0; seg < 6; ++seg) {
        const double lo = knots[seg];
        const double hi = knots[seg + 1];
        if (t >= hi && seg < 5) {
            value += slopes[seg] * (hi - lo);
            continue;
        }
        value += slopes[seg] * (t - lo);
        break;
    }
    return value;
}

double low_fidelity(std::span<const double> x) {
    return piecewise(x[0]) + 1.5 * x[1] * x[2];
}

double fidelity_offset(std::span<const double> x) { return 0.8 * x[0] + 0.4; }

double energy_base(std::span<const double> x) {
    return piecewise(x[0]) + 1.2 * x[1] * x[2] + 0.5;
}

}  // namespace synthfn

void SynthConfig::validate() const {
    if (n_low < 0 || n_high < 0 || n_third < 0 || n_class < 0)
        throw ValidationError("synthetic row counts must be non-negative");
    if (overlap_fraction < 0 || overlap_fraction > 1)
        throw ValidationError("overlap_fraction must lie in [0, 1]");
    if (d < 3) throw ValidationError("synthetic generators need d >= 3");
    if (noise_std < 0) throw ValidationError("noise_std must be non-negative");
    switch (generator) {
        case Generator::MultiFidelity:
            if (static_cast<double>(n_low) <
                overlap_fraction * static_cast<double>(n_high))
                throw ValidationError("n_low must cover the requested overlap");
            break;
        case Generator::ThresholdClass:
            if (n_bins < 2) throw ValidationError("n_bins must be >= 2");
            if (n_class > n_high)
                throw ValidationError("n_class cannot exceed the y_high label count");
            if (n_class < 5 * n_bins)
                throw ValidationError("n_class too small for 5 instances per class");
            break;
        case Generator::CorrelatedEnergies:
            if (n_high > n_low || n_third > n_high)
                throw ValidationError(
                    "correlated energies expect n_low >= n_high >= n_third");
            if (n_third < 1 || n_high < 1 || n_low < 1)
                throw ValidationError("correlated energies need all three counts >= 1");
            break;
    }
}

namespace {

std::string generator_name(SynthConfig::Generator g) {
    switch (g) {
        case SynthConfig::Generator::MultiFidelity: return "multifidelity";
        case SynthConfig::Generator::ThresholdClass: return "threshold_class";
        case SynthConfig::Generator::CorrelatedEnergies: return "correlated_energies";
    }
    return "?";
}

SynthConfig::Generator generator_from_name(const std::string& s) {
    if (s == "multifidelity") return SynthConfig::Generator::MultiFidelity;
    if (s == "threshold_class") return SynthConfig::Generator::ThresholdClass;
    if (s == "correlated_energies") return SynthConfig::Generator::CorrelatedEnergies;
    throw ValidationError("unknown generator '" + s + "'");
}

std::string row_name(int i) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "r%06d", i);
    return buf;
}

Dataset base_rows(int n, int d, rng::Engine& eng) {
    Dataset ds;
    for (int c = 0; c < d; ++c) ds.feature_names.push_back("x" + std::to_string(c + 1));
    ds.features.reserve(static_cast<std::size_t>(n) * d);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int r = 0; r < n; ++r) {
        ds.row_ids.push_back(row_name(r));
        for (int c = 0; c < d; ++c) ds.features.push_back(unit(eng));
    }
    return ds;
}

void add_real_task(Dataset& ds, const std::string& name, const std::string& units = "") {
    TaskSpec t;
    t.name = name;
    t.kind = TaskKind::Real;
    t.units = units;
    ds.tasks.push_back(std::move(t));
    ds.labels.emplace_back();
}

Dataset multifidelity_impl(const SynthConfig& cfg) {
    const int shared = static_cast<int>(
        std::llround(cfg.overlap_fraction * static_cast<double>(cfg.n_high)));
    const int high_start = std::max(0, cfg.n_low - shared);
    const int n = std::max(cfg.n_low, high_start + cfg.n_high);
    rng::Engine eng(rng::derive(cfg.seed, 0x5F17));
    Dataset ds = base_rows(n, cfg.d, eng);

    const bool with_low = cfg.n_low > 0;
    if (with_low) add_real_task(ds, "y_low");
    add_real_task(ds, "y_high");
    const int t_low = with_low ? 0 : -1;
    const int t_high = with_low ? 1 : 0;

    std::normal_distribution<double> noise(0.0, 1.0);
    for (int r = 0; r < n; ++r) {
        std::span<const double> x(ds.row(r), static_cast<std::size_t>(cfg.d));
        const double y_low = synthfn::low_fidelity(x);
        if (with_low && r < cfg.n_low) ds.labels[t_low][r] = y_low;
        if (r >= high_start && r < high_start + cfg.n_high) {
            const double eps = cfg.noise_std > 0 ? cfg.noise_std * noise(eng) : 0.0;
            ds.labels[t_high][r] =
                y_low + cfg.offset_scale * synthfn::fidelity_offset(x) + eps;
        }
    }
    return ds;
}

}  // namespace

Dataset gen_multifidelity(const SynthConfig& cfg) {
    SynthConfig c = cfg;
    c.generator = SynthConfig::Generator::MultiFidelity;
    c.validate();
    Dataset ds = multifidelity_impl(c);
    ds.validate(/*require_labels=*/true);
    return ds;
}

Dataset gen_threshold_class(const SynthConfig& cfg) {
    SynthConfig c = cfg;
    c.generator = SynthConfig::Generator::ThresholdClass;
    c.validate();
    Dataset ds = multifidelity_impl(c);
    const int t_high = ds.task_index("y_high");

    // Equal-mass bin edges over the y_high labels.
    std::vector<double> values;
    std::vector<int> rows;
    for (const auto& [row, v] : ds.labels[t_high]) {
        rows.push_back(row);
        values.push_back(v);
    }
    std::vector<double> sorted = values;
    std::sort(sorted.begin(), sorted.end());
    std::vector<double> edges;  // upper edge of bins 0..n_bins-2
    const int m = static_cast<int>(sorted.size());
    for (int b = 1; b < c.n_bins; ++b)
        edges.push_back(sorted[static_cast<std::size_t>(
            static_cast<long long>(b) * m / c.n_bins)]);
    const auto bin_of = [&](double v) {
        int b = 0;
        while (b < static_cast<int>(edges.size()) && v >= edges[b]) ++b;
        return b;
    };

    TaskSpec t;
    t.name = "y_class";
    t.kind = TaskKind::Categorical;
    for (int b = 0; b < c.n_bins; ++b) t.classes.push_back("c" + std::to_string(b));
    ds.tasks.push_back(std::move(t));
    ds.labels.emplace_back();
    const int t_class = static_cast<int>(ds.tasks.size()) - 1;

    // Re-draw the labeled subset until every class reaches 5 instances.
    rng::Engine eng(rng::derive(c.seed, 0xC1A5));
    constexpr int kMaxAttempts = 500;
    for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
        const std::vector<int> pick =
            rng::sample_without_replacement(eng, static_cast<int>(rows.size()), c.n_class);
        std::vector<int> counts(c.n_bins, 0);
        for (const int i : pick) ++counts[bin_of(values[i])];
        if (*std::min_element(counts.begin(), counts.end()) >= 5) {
            for (const int i : pick)
                ds.labels[t_class][rows[i]] = static_cast<double>(bin_of(values[i]));
            ds.validate(/*require_labels=*/true);
            return ds;
        }
    }
    throw Error("could not draw a class subset with 5 instances per class; "
                "increase n_class or lower n_bins");
}

Dataset gen_correlated_energies(const SynthConfig& cfg) {
    SynthConfig c = cfg;
    c.generator = SynthConfig::Generator::CorrelatedEnergies;
    c.validate();

    const int n = c.n_low;
    rng::Engine eng(rng::derive(c.seed, 0xE4E5));
    Dataset ds = base_rows(n, c.d, eng);
    add_real_task(ds, "e1");
    add_real_task(ds, "e2");
    add_real_task(ds, "e3");

    // e2/e3 windows sit inside the e1 rows and end together, so their label
    // sets cover similar rows.
    const int e2_start = std::min(4, n - c.n_high);
    const int e3_start = e2_start + (c.n_high - c.n_third);

    for (int r = 0; r < n; ++r) {
        std::span<const double> x(ds.row(r), static_cast<std::size_t>(c.d));
        const double e1 = synthfn::energy_base(x);
        ds.labels[0][r] = e1;
        if (r >= e2_start && r < e2_start + c.n_high)
            ds.labels[1][r] =
                synthfn::kE2Scale * e1 + synthfn::kE2Shift + c.noise_std * (x[1] - 0.5);
        if (r >= e3_start && r < e3_start + c.n_third)
            ds.labels[2][r] =
                synthfn::kE3Scale * e1 + synthfn::kE3Shift + c.noise_std * (0.5 - x[2]);
    }
    ds.validate(/*require_labels=*/true);
    return ds;
}

Dataset generate(const SynthConfig& cfg) {
    switch (cfg.generator) {
        case SynthConfig::Generator::MultiFidelity: return gen_multifidelity(cfg);
        case SynthConfig::Generator::ThresholdClass: return gen_threshold_class(cfg);
        case SynthConfig::Generator::CorrelatedEnergies: return gen_correlated_energies(cfg);
    }
    throw ValidationError("unknown generator");
}

std::string SynthConfig::to_json_text() const {
    json j;
    j["generator"] = generator_name(generator);
    j["n_low"] = n_low;
    j["n_high"] = n_high;
    j["n_third"] = n_third;
    j["n_class"] = n_class;
    j["n_bins"] = n_bins;
    j["d"] = d;
    j["noise_std"] = noise_std;
    j["overlap_fraction"] = overlap_fraction;
    j["offset_scale"] = offset_scale;
    j["seed"] = seed;
    return j.dump(2) + "\n";
}

SynthConfig SynthConfig::from_json_text(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ParseError(std::string("synth config is not valid JSON: ") + e.what());
    }
    SynthConfig c;
    c.generator = generator_from_name(j.at("generator").get<std::string>());
    c.n_low = j.value("n_low", c.n_low);
    c.n_high = j.value("n_high", c.n_high);
    c.n_third = j.value("n_third", c.n_third);
    c.n_class = j.value("n_class", c.n_class);
    c.n_bins = j.value("n_bins", c.n_bins);
    c.d = j.value("d", c.d);
    c.noise_std = j.value("noise_std", c.noise_std);
    c.overlap_fraction = j.value("overlap_fraction", c.overlap_fraction);
    c.offset_scale = j.value("offset_scale", c.offset_scale);
    c.seed = j.value("seed", c.seed);
    c.validate();
    return c;
}

}  // namespace tlf
