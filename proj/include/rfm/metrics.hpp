#pragma once

// Angular and radial diagnostics for samples on a K-lobe ring.
//
// Angles are folded onto a single canonical lobe by subtracting the nearest
// lobe center 2*pi*k/K; spread, gap mass and residual-distribution distances are
// then measured on those residuals.

#include "rfm/model.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace rfm {

// Maps to (-pi, pi]; both +pi and -pi map to +pi.
inline double wrap_angle(double phi) {
    constexpr double two_pi = 2.0 * std::numbers::pi;
    return phi - two_pi * std::ceil((phi - std::numbers::pi) / two_pi);
}

struct LobeResidual {
    int lobe;
    double residual;
};

// Nearest lobe center; ties go to the smaller index.
inline LobeResidual nearest_lobe_residual(double theta, int lobes) {
    if (lobes < 1) throw std::invalid_argument("nearest_lobe_residual: lobes must be >= 1");
    LobeResidual best{0, wrap_angle(theta)};
    for (int k = 1; k < lobes; ++k) {
        const double r = wrap_angle(theta - 2.0 * std::numbers::pi * k / lobes);
        if (std::abs(r) < std::abs(best.residual)) best = {k, r};
    }
    return best;
}

inline double lobe_distance(double theta, int lobes) { return std::abs(nearest_lobe_residual(theta, lobes).residual); }

inline std::vector<double> polar_angles(const Matrix& points) {
    std::vector<double> a(static_cast<std::size_t>(points.rows()));
    for (Eigen::Index i = 0; i < points.rows(); ++i) {
        double th = std::atan2(points(i, 1), points(i, 0));
        if (th < 0.0) th += 2.0 * std::numbers::pi;
        a[static_cast<std::size_t>(i)] = th;
    }
    return a;
}

inline std::vector<double> lobe_residuals(std::span<const double> angles, int lobes) {
    std::vector<double> r(angles.size());
    std::transform(angles.begin(), angles.end(), r.begin(),
                   [lobes](double th) { return nearest_lobe_residual(th, lobes).residual; });
    return r;
}

class UndefinedSpread : public std::domain_error {
public:
    UndefinedSpread() : std::domain_error("undefined circular spread (zero mean resultant length)") {}
};

// Mean resultant lengths below this are treated as zero.
inline constexpr double kMinResultant = 1e-12;

// sqrt(-2 ln R), R the mean resultant length. R is evaluated about the
// circular mean so that tight samples keep full relative precision.
inline double circular_std(std::span<const double> angles) {
    if (angles.empty()) throw std::invalid_argument("circular_std: empty sample");
    double c = 0.0, s = 0.0;
    for (double a : angles) {
        c += std::cos(a);
        s += std::sin(a);
    }
    const double n = static_cast<double>(angles.size());
    if (!(std::hypot(c / n, s / n) > kMinResultant)) throw UndefinedSpread();
    const double m = std::atan2(s, c);
    // R^2 = (1 - d)^2 + sp^2 with d = mean(1 - cos(a - m)), sp = mean(sin(a - m)).
    double d = 0.0, sp = 0.0;
    for (double a : angles) {
        const double h = std::sin(0.5 * (a - m));
        d += 2.0 * h * h;
        sp += std::sin(a - m);
    }
    d /= n;
    sp /= n;
    const double r2_minus_1 = sp * sp - d * (2.0 - d);
    return std::sqrt(std::max(0.0, -std::log1p(r2_minus_1)));
}

// Linear interpolation between order statistics: h = (n-1) q,
// Q = x[floor h] + (h - floor h) (x[floor h + 1] - x[floor h]).
inline double quantile(std::span<const double> values, double q) {
    if (values.empty()) throw std::invalid_argument("quantile: empty sample");
    if (!(q > 0.0 && q < 1.0)) throw std::invalid_argument("quantile: q must lie in (0, 1)");
    std::vector<double> v(values.begin(), values.end());
    std::sort(v.begin(), v.end());
    const double h = static_cast<double>(v.size() - 1) * q;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

inline double calibrate_threshold(std::span<const double> true_abs_residuals, double q = 0.99) {
    return quantile(true_abs_residuals, q);
}

inline double gap_rate(std::span<const double> model_angles, double tau, int lobes) {
    if (!(tau > 0.0)) throw std::invalid_argument("gap_rate: tau must be > 0");
    if (model_angles.empty()) throw std::invalid_argument("gap_rate: empty sample");
    std::size_t hits = 0;
    for (double th : model_angles)
        if (lobe_distance(th, lobes) > tau) ++hits;
    return static_cast<double>(hits) / static_cast<double>(model_angles.size());
}

// W1 between empirical measures: integral of |F_a(x) - F_b(x)| over the merged
// support. Equals the mean absolute difference of sorted samples when sizes match.
inline double w1_1d(std::span<const double> a, std::span<const double> b) {
    if (a.empty() || b.empty()) throw std::invalid_argument("w1_1d: empty sample");
    std::vector<double> sa(a.begin(), a.end()), sb(b.begin(), b.end());
    std::sort(sa.begin(), sa.end());
    std::sort(sb.begin(), sb.end());
    std::vector<double> all;
    all.reserve(sa.size() + sb.size());
    std::merge(sa.begin(), sa.end(), sb.begin(), sb.end(), std::back_inserter(all));
    const double na = static_cast<double>(sa.size());
    const double nb = static_cast<double>(sb.size());
    std::size_t ia = 0, ib = 0;
    double total = 0.0;
    for (std::size_t k = 0; k + 1 < all.size(); ++k) {
        while (ia < sa.size() && sa[ia] <= all[k]) ++ia;
        while (ib < sb.size() && sb[ib] <= all[k]) ++ib;
        const double width = all[k + 1] - all[k];
        if (width > 0.0) total += std::abs(static_cast<double>(ia) / na - static_cast<double>(ib) / nb) * width;
    }
    return total;
}

inline double rmse_sigma(std::span<const double> sigma_model, std::span<const double> sigma_true,
                         std::span<const double> weights) {
    if (sigma_model.size() != sigma_true.size() || sigma_model.size() != weights.size() || weights.empty())
        throw std::invalid_argument("rmse_sigma: per-K inputs must be nonempty and the same length");
    double acc = 0.0;
    for (std::size_t k = 0; k < weights.size(); ++k) {
        const double d = sigma_model[k] - sigma_true[k];
        acc += weights[k] * d * d;
    }
    return std::sqrt(acc);
}

struct RadialErrors {
    double mse;
    double mae;
};

inline RadialErrors radial_errors(const Matrix& model_points, const Matrix& true_points) {
    if (model_points.rows() != true_points.rows() || model_points.rows() == 0)
        throw std::invalid_argument("radial_errors: point counts differ (" + std::to_string(model_points.rows()) +
                                    " vs " + std::to_string(true_points.rows()) + ")");
    double se = 0.0, ae = 0.0;
    for (Eigen::Index i = 0; i < model_points.rows(); ++i) {
        const double d = model_points.row(i).norm() - true_points.row(i).norm();
        se += d * d;
        ae += std::abs(d);
    }
    const double n = static_cast<double>(model_points.rows());
    return {se / n, ae / n};
}

struct MetricsReport {
    double rmse_sigma = 0.0;
    double sigma_model = 0.0;
    double sigma_true = 0.0;
    double gap_rate = 0.0;
    double w1_abs = 0.0;
    double w1_signed = 0.0;
    double radial_mse = 0.0;
    double radial_mae = 0.0;
    std::size_t n_samples = 0;

    static constexpr const char* csv_header =
        "rmse_sigma,sigma_model,sigma_true,gap_rate,w1_abs,w1_signed,radial_mse,radial_mae,n_samples";
};

// Single-K evaluation (every sample belongs to the same lobe count), so the
// per-K weights collapse to 1.
inline MetricsReport compute_metrics(const Matrix& model_points, const Matrix& true_points, int lobes,
                                     double gap_quantile = 0.99) {
    const std::vector<double> model_angles = polar_angles(model_points);
    const std::vector<double> r_model = lobe_residuals(model_angles, lobes);
    const std::vector<double> r_true = lobe_residuals(polar_angles(true_points), lobes);
    std::vector<double> abs_model(r_model.size()), abs_true(r_true.size());
    std::transform(r_model.begin(), r_model.end(), abs_model.begin(), [](double r) { return std::abs(r); });
    std::transform(r_true.begin(), r_true.end(), abs_true.begin(), [](double r) { return std::abs(r); });

    MetricsReport m;
    m.n_samples = model_angles.size();
    m.sigma_model = circular_std(r_model);
    m.sigma_true = circular_std(r_true);
    const double w[] = {1.0};
    m.rmse_sigma = rmse_sigma(std::span(&m.sigma_model, 1), std::span(&m.sigma_true, 1), w);
    m.gap_rate = gap_rate(model_angles, calibrate_threshold(abs_true, gap_quantile), lobes);
    m.w1_abs = w1_1d(abs_true, abs_model);
    m.w1_signed = w1_1d(r_true, r_model);
    const RadialErrors re = radial_errors(model_points, true_points);
    m.radial_mse = re.mse;
    m.radial_mae = re.mae;
    return m;
}

} // namespace rfm
