#include "tlforest/uncertainty.hpp"

#include <cmath>
#include <vector>

#include "tlforest/error.hpp"

namespace tlf {

PredictionWithUncertainty jackknife_variance(const Forest& f, const std::string& task,
                                             std::span<const double> x) {
    if (f.task(task).spec.kind != TaskKind::Real)
        throw ValidationError("jackknife variance requires a regression task");

    const std::vector<double> all_values = per_tree_predictions(f, task, x);
    std::vector<double> t_b;
    std::vector<int> tree_of;  // original tree index per value
    for (std::size_t b = 0; b < all_values.size(); ++b) {
        if (std::isnan(all_values[b])) continue;
        t_b.push_back(all_values[b]);
        tree_of.push_back(static_cast<int>(b));
    }
    const int B = static_cast<int>(t_b.size());
    if (B < 2) throw ValidationError("jackknife variance needs at least 2 trees");
    const int n = f.n_training_rows();

    double mean = 0;
    for (const double v : t_b) mean += v;
    mean /= B;
    double var_b = 0;  // 1/B sample variance over trees
    for (const double v : t_b) var_b += (v - mean) * (v - mean);
    var_b /= B;

    PredictionWithUncertainty out;
    out.mean = mean;
    out.detail.tree_count = B;

    double v_jab = 0;
    double v_ij = 0;
    for (int i = 0; i < n; ++i) {
        double oob_sum = 0;
        int oob_count = 0;
        double cov = 0;
        double mem_sum = 0;
        for (int k = 0; k < B; ++k) mem_sum += f.membership[tree_of[k]][i];
        const double mem_mean = mem_sum / B;
        for (int k = 0; k < B; ++k) {
            const std::int32_t m = f.membership[tree_of[k]][i];
            if (m == 0) {
                oob_sum += t_b[k];
                ++oob_count;
            }
            cov += (m - mem_mean) * (t_b[k] - mean);
        }
        cov /= B;
        v_ij += cov * cov;
        if (oob_count == 0) {
            ++out.detail.rows_without_oob;
            continue;
        }
        const double d = oob_sum / oob_count - mean;
        v_jab += d * d;
    }
    v_jab *= static_cast<double>(n - 1) / n;

    // Finite-B Monte Carlo bias corrections.
    const double e = std::exp(1.0);
    const double correction = static_cast<double>(n) / B * var_b;
    out.detail.v_jab = v_jab - (e - 1.0) * correction;
    out.detail.v_ij = v_ij - correction;
    const double combined = 0.5 * (out.detail.v_jab + out.detail.v_ij);
    out.detail.floored = combined < 0.0;
    out.detail.v_combined = combined < 0.0 ? 0.0 : combined;
    out.std_error = std::sqrt(out.detail.v_combined);
    return out;
}

}  // namespace tlf
