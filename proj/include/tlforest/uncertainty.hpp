#pragma once

#include <span>
#include <string>

#include "tlforest/forest.hpp"

namespace tlf {

struct EstimatorDetail {
    double v_jab = 0.0;       // bias-corrected jackknife-after-bootstrap
    double v_ij = 0.0;        // bias-corrected infinitesimal jackknife
    double v_combined = 0.0;  // mean of the two, floored at 0
    int tree_count = 0;       // trees contributing at this point
    bool floored = false;     // a corrected variance went negative
    int rows_without_oob = 0; // rows whose jackknife term had to be skipped
};

struct PredictionWithUncertainty {
    double mean = 0.0;
    double std_error = 0.0;  // sqrt(max(v_combined, 0))
    EstimatorDetail detail;
};

/// Variance of the bagged prediction at x from the retained bootstrap
/// membership counts.
///
/// With t_b the per-tree predictions, t their mean, n the training row count
/// and B the tree count:
///   V_JAB = ((n-1)/n) * sum_i (mean over trees with N_bi = 0 - t)^2,
///           corrected by subtracting (e-1) * (n/B) * var_b(t_b)
///   V_IJ  = sum_i cov_b(N_bi, t_b)^2,
///           corrected by subtracting (n/B) * var_b(t_b)
/// where var_b is the 1/B sample variance over trees. Combined estimate is
/// their mean, floored at zero. Rows with no out-of-bag tree are skipped and
/// counted in the detail.
PredictionWithUncertainty jackknife_variance(const Forest& f, const std::string& task,
                                             std::span<const double> x);

}  // namespace tlf
