#pragma once

#include <cstdint>
#include <span>
#include <string>

#include "tlforest/dataset.hpp"

namespace tlf {

/// Seeded generators producing datasets with the structural regimes the
/// library targets: multi-fidelity pairs, threshold classification on top of
/// a regression label, and correlated task families with imbalanced counts.
struct SynthConfig {
    enum class Generator { MultiFidelity, ThresholdClass, CorrelatedEnergies };

    Generator generator = Generator::MultiFidelity;
    int n_low = 2000;   // low-fidelity labels (MultiFidelity) / first task (energies)
    int n_high = 200;   // high-fidelity labels / second task
    int n_third = 50;   // third task label count (CorrelatedEnergies)
    int n_class = 60;   // class-labeled subset size (ThresholdClass)
    int n_bins = 7;     // class count (ThresholdClass)
    int d = 3;          // feature dimension (>= 3; the fixed forms use x1..x3)
    double noise_std = 0.1;
    double overlap_fraction = 1.0;  // fraction of high-fidelity rows that also carry y_low
    /// Scales the fidelity offset. 0 makes y_high = y_low + noise, so the
    /// difference labels are pure noise with mean 0 (the null case).
    double offset_scale = 1.0;
    std::uint64_t seed = 0;

    void validate() const;
    std::string to_json_text() const;
    static SynthConfig from_json_text(const std::string& text);
};

// Fixed functional forms, exposed so tests can assert construction
// identities. The low-fidelity surface is deliberately rougher (piecewise
// ridge plus an interaction) than the affine offsets layered on top of it.
namespace synthfn {

/// Continuous piecewise-linear ridge on [0, 1].
double piecewise(double t);

/// y_low = piecewise(x1) + 1.5 * x2 * x3
double low_fidelity(std::span<const double> x);

/// y_high - y_low (before noise) = 0.8 * x1 + 0.4
double fidelity_offset(std::span<const double> x);

/// First-task energy surface: piecewise(x1) + 1.2 * x2 * x3 + 0.5
double energy_base(std::span<const double> x);

// e2 = kE2Scale * e1 + kE2Shift + noise_std * (x2 - 0.5)
// e3 = kE3Scale * e1 + kE3Shift + noise_std * (0.5 - x3)
inline constexpr double kE2Scale = 0.5;
inline constexpr double kE2Shift = 0.55;
inline constexpr double kE3Scale = 1.4;
inline constexpr double kE3Shift = -0.1;

}  // namespace synthfn

/// Tasks y_low (n_low rows) and y_high (n_high rows, overlapping the y_low
/// rows per overlap_fraction); y_high = y_low + offset + Normal(0, noise_std).
Dataset gen_multifidelity(const SynthConfig& cfg);

/// gen_multifidelity plus a categorical task "y_class" on n_class of the
/// y_high rows, whose class is the equal-mass bin of the row's y_high label
/// (n_bins bins). The labeled subset is re-drawn until every class has at
/// least 5 instances. n_low = 0 omits the y_low task.
Dataset gen_threshold_class(const SynthConfig& cfg);

/// Three Real tasks e1 (n_low labels), e2 (n_high), e3 (n_third); e2 and e3
/// are affine in e1 with small feature-dependent perturbations, and their
/// label sets cover similar rows.
Dataset gen_correlated_energies(const SynthConfig& cfg);

Dataset generate(const SynthConfig& cfg);

}  // namespace tlf
