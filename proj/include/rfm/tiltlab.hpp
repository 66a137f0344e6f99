#pragma once

// Exact finite-support versions of the conditional tilted objects.
//
// For a discrete conditional law {(U_i, p_i)} of the target velocity at one
// space-time point and a prediction u:
//
//   beta_i  = exp(lambda |u - U_i|^2) / sum_j p_j exp(lambda |u - U_j|^2)
//   m_lambda = sum_i p_i beta_i U_i
//   m_lambda = mu + lambda S - 2 lambda Sigma (u - mu) + O(lambda^2)
//
// with mu, Sigma, S the mean, covariance and skew vector E[eps |eps|^2] of
// eps = U - mu. A DiscreteJoint adds a finite outer law over points x with a
// tabular field (one free vector theta_x per point), which makes the gradients
// of the conditional and marginal objectives closed-form.
//
// Everything here is a finite sum; there is no sampling.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace rfm::tilt {

using Vector = Eigen::VectorXd;
using DenseMatrix = Eigen::MatrixXd;

struct DiscreteConditional {
    std::vector<Vector> points;
    std::vector<double> probs;

    std::size_t size() const { return points.size(); }
    Eigen::Index dim() const { return points.empty() ? 0 : points.front().size(); }

    void validate() const {
        if (points.empty() || points.size() != probs.size())
            throw std::invalid_argument("DiscreteConditional: need matching, nonempty points and probs");
        double total = 0.0;
        for (std::size_t i = 0; i < size(); ++i) {
            if (points[i].size() != dim()) throw std::invalid_argument("DiscreteConditional: mixed dimensions");
            if (!(probs[i] > 0.0)) throw std::invalid_argument("DiscreteConditional: probabilities must be > 0");
            total += probs[i];
        }
        if (std::abs(total - 1.0) > 1e-12) throw std::invalid_argument("DiscreteConditional: probabilities must sum to 1");
    }
};

// 1-D convenience constructor.
inline DiscreteConditional make_conditional_1d(std::span<const double> values, std::span<const double> probs) {
    DiscreteConditional c;
    for (double v : values) c.points.push_back(Vector::Constant(1, v));
    c.probs.assign(probs.begin(), probs.end());
    c.validate();
    return c;
}

struct MomentSummary {
    Vector mu;
    DenseMatrix sigma;
    Vector skew;
};

inline MomentSummary moments(const DiscreteConditional& c) {
    c.validate();
    const Eigen::Index d = c.dim();
    MomentSummary m{Vector::Zero(d), DenseMatrix::Zero(d, d), Vector::Zero(d)};
    for (std::size_t i = 0; i < c.size(); ++i) m.mu += c.probs[i] * c.points[i];
    for (std::size_t i = 0; i < c.size(); ++i) {
        const Vector eps = c.points[i] - m.mu;
        const DenseMatrix outer = eps * eps.transpose(); // exactly symmetric
        m.sigma += c.probs[i] * outer;
        m.skew += c.probs[i] * eps.squaredNorm() * eps;
    }
    return m;
}

inline std::vector<double> gibbs_weights(const DiscreteConditional& c, const Vector& u, double lambda) {
    c.validate();
    if (!(lambda >= 0.0)) throw std::invalid_argument("gibbs_weights: lambda must be >= 0");
    std::vector<double> e(c.size());
    for (std::size_t i = 0; i < c.size(); ++i) e[i] = lambda * (u - c.points[i]).squaredNorm();
    const double top = *std::max_element(e.begin(), e.end());
    double z = 0.0;
    for (std::size_t i = 0; i < c.size(); ++i) {
        e[i] = std::exp(e[i] - top);
        z += c.probs[i] * e[i];
    }
    for (double& b : e) b /= z;
    return e;
}

inline Vector tilted_mean(const DiscreteConditional& c, const Vector& u, double lambda) {
    const std::vector<double> beta = gibbs_weights(c, u, lambda);
    Vector m = Vector::Zero(c.dim());
    for (std::size_t i = 0; i < c.size(); ++i) m += c.probs[i] * beta[i] * c.points[i];
    return m;
}

inline Vector expansion_prediction(const MomentSummary& m, const Vector& u, double lambda) {
    if (!(lambda >= 0.0)) throw std::invalid_argument("expansion_prediction: lambda must be >= 0");
    if (lambda == 0.0) return m.mu;
    return m.mu + lambda * m.skew - 2.0 * lambda * (m.sigma * (u - m.mu));
}

// Quarter-decade grid 1e-1 ... 1e-3.
inline std::vector<double> default_lambda_grid() {
    std::vector<double> g;
    for (int i = 0; i <= 8; ++i) g.push_back(std::pow(10.0, -1.0 - 0.25 * i));
    return g;
}

inline constexpr double kErrorFloor = 1e-13;

class ExpansionExact : public std::runtime_error {
public:
    ExpansionExact() : std::runtime_error("expansion exact, slope undefined") {}
};

// Least-squares slope of log(error) against log(lambda), ignoring errors at the
// numerical floor.
inline double loglog_slope(std::span<const double> lambdas, std::span<const double> errors) {
    if (lambdas.size() != errors.size()) throw std::invalid_argument("loglog_slope: size mismatch");
    std::vector<double> xs, ys;
    for (std::size_t i = 0; i < lambdas.size(); ++i) {
        if (errors[i] < kErrorFloor) continue;
        xs.push_back(std::log(lambdas[i]));
        ys.push_back(std::log(errors[i]));
    }
    if (xs.size() < 2) throw ExpansionExact();
    const double n = static_cast<double>(xs.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        mx += xs[i];
        my += ys[i];
    }
    mx /= n;
    my /= n;
    double sxy = 0.0, sxx = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        sxy += (xs[i] - mx) * (ys[i] - my);
        sxx += (xs[i] - mx) * (xs[i] - mx);
    }
    if (sxx == 0.0) throw std::invalid_argument("loglog_slope: lambda grid must contain distinct values");
    return sxy / sxx;
}

inline std::vector<double> expansion_errors(const DiscreteConditional& c, const Vector& u,
                                            std::span<const double> lambdas) {
    const MomentSummary m = moments(c);
    std::vector<double> err;
    for (double l : lambdas) err.push_back((tilted_mean(c, u, l) - expansion_prediction(m, u, l)).norm());
    return err;
}

inline double expansion_order_slope(const DiscreteConditional& c, const Vector& u, std::span<const double> lambdas) {
    return loglog_slope(lambdas, expansion_errors(c, u, lambdas));
}

struct JointAtom {
    double weight;
    DiscreteConditional cond;
};

struct DiscreteJoint {
    std::vector<JointAtom> atoms;

    std::size_t size() const { return atoms.size(); }

    void validate() const {
        if (atoms.empty()) throw std::invalid_argument("DiscreteJoint: no atoms");
        double total = 0.0;
        for (const auto& a : atoms) {
            if (!(a.weight > 0.0)) throw std::invalid_argument("DiscreteJoint: weights must be > 0");
            a.cond.validate();
            total += a.weight;
        }
        if (std::abs(total - 1.0) > 1e-12) throw std::invalid_argument("DiscreteJoint: weights must sum to 1");
    }
};

// Tabular field: theta[x] is the prediction at atom x.
using TabularField = std::vector<Vector>;

namespace detail {

inline void check_theta(const DiscreteJoint& j, const TabularField& theta) {
    j.validate();
    if (theta.size() != j.size()) throw std::invalid_argument("tabular field must have one vector per atom");
    for (std::size_t x = 0; x < j.size(); ++x)
        if (theta[x].size() != j.atoms[x].cond.dim()) throw std::invalid_argument("tabular field dimension mismatch");
}

// log (sum_i w_i exp(a_i) / sum_i w_i). Shifted by the max and routed through
// log1p/expm1 so that tiny exponents (lambda -> 0) keep full precision.
inline double weighted_log_mean_exp(std::span<const double> w, std::span<const double> a) {
    double top = -std::numeric_limits<double>::infinity();
    for (double x : a) top = std::max(top, x);
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        num += w[i] * std::expm1(a[i] - top);
        den += w[i];
    }
    return top + std::log1p(num / den);
}

inline double inner_log_mgf(const DiscreteConditional& c, const Vector& u, double lambda) {
    std::vector<double> a;
    for (std::size_t i = 0; i < c.size(); ++i) {
        a.push_back(lambda * (u - c.points[i]).squaredNorm());
    }
    return weighted_log_mean_exp(c.probs, a);
}

} // namespace detail

// sum_x w_x (1/lambda) log sum_i p_i exp(lambda |theta_x - U_i|^2)
inline double conditional_objective(const DiscreteJoint& j, const TabularField& theta, double lambda) {
    detail::check_theta(j, theta);
    if (!(lambda > 0.0)) throw std::invalid_argument("conditional_objective: lambda must be > 0");
    double total = 0.0;
    for (std::size_t x = 0; x < j.size(); ++x)
        total += j.atoms[x].weight * detail::inner_log_mgf(j.atoms[x].cond, theta[x], lambda) / lambda;
    return total;
}

// (1/lambda) log sum_x w_x sum_i p_i exp(lambda |theta_x - U_i|^2)
inline double marginal_objective(const DiscreteJoint& j, const TabularField& theta, double lambda) {
    detail::check_theta(j, theta);
    if (!(lambda > 0.0)) throw std::invalid_argument("marginal_objective: lambda must be > 0");
    std::vector<double> w, a;
    for (std::size_t x = 0; x < j.size(); ++x) {
        const auto& c = j.atoms[x].cond;
        for (std::size_t i = 0; i < c.size(); ++i) {
            w.push_back(j.atoms[x].weight * c.probs[i]);
            a.push_back(lambda * (theta[x] - c.points[i]).squaredNorm());
        }
    }
    return detail::weighted_log_mean_exp(w, a) / lambda;
}

inline double mse_objective(const DiscreteJoint& j, const TabularField& theta) {
    detail::check_theta(j, theta);
    double total = 0.0;
    for (std::size_t x = 0; x < j.size(); ++x) {
        const auto& c = j.atoms[x].cond;
        for (std::size_t i = 0; i < c.size(); ++i)
            total += j.atoms[x].weight * c.probs[i] * (theta[x] - c.points[i]).squaredNorm();
    }
    return total;
}

// Gradients with respect to the tabular field, one d-vector per atom.
// Conditional objective: 2 w_x (theta_x - m_lambda(x)); MSE: 2 w_x (theta_x - mu(x)).
inline TabularField conditional_gradient(const DiscreteJoint& j, const TabularField& theta, double lambda) {
    detail::check_theta(j, theta);
    TabularField g;
    for (std::size_t x = 0; x < j.size(); ++x)
        g.push_back(2.0 * j.atoms[x].weight * (theta[x] - tilted_mean(j.atoms[x].cond, theta[x], lambda)));
    return g;
}

inline TabularField mse_gradient(const DiscreteJoint& j, const TabularField& theta) {
    detail::check_theta(j, theta);
    TabularField g;
    for (std::size_t x = 0; x < j.size(); ++x)
        g.push_back(2.0 * j.atoms[x].weight * (theta[x] - moments(j.atoms[x].cond).mu));
    return g;
}

struct GradientGap {
    Vector exact;       // grad L_lambda - grad L_MSE, stacked over atoms
    Vector first_order; // 2 w_x (-lambda S + 2 lambda Sigma (theta_x - mu)), stacked
};

inline GradientGap gradient_gap_check(const DiscreteJoint& j, const TabularField& theta, double lambda) {
    detail::check_theta(j, theta);
    if (!(lambda >= 0.0)) throw std::invalid_argument("gradient_gap_check: lambda must be >= 0");
    Eigen::Index total = 0;
    for (const auto& t : theta) total += t.size();
    GradientGap gap{Vector::Zero(total), Vector::Zero(total)};
    Eigen::Index off = 0;
    for (std::size_t x = 0; x < j.size(); ++x) {
        const auto& c = j.atoms[x].cond;
        const double w = j.atoms[x].weight;
        const MomentSummary m = moments(c);
        const Eigen::Index d = theta[x].size();
        if (lambda > 0.0) {
            gap.exact.segment(off, d) = 2.0 * w * (m.mu - tilted_mean(c, theta[x], lambda));
            gap.first_order.segment(off, d) =
                2.0 * w * (-lambda * m.skew + 2.0 * lambda * (m.sigma * (theta[x] - m.mu)));
        }
        off += d;
    }
    return gap;
}

inline std::vector<double> gradient_gap_errors(const DiscreteJoint& j, const TabularField& theta,
                                               std::span<const double> lambdas) {
    std::vector<double> err;
    for (double l : lambdas) {
        const GradientGap g = gradient_gap_check(j, theta, l);
        err.push_back((g.exact - g.first_order).norm());
    }
    return err;
}

inline double gradient_gap_slope(const DiscreteJoint& j, const TabularField& theta, std::span<const double> lambdas) {
    return loglog_slope(lambdas, gradient_gap_errors(j, theta, lambdas));
}

// (N0 + l N1) / (D0 + l D1) against N0/D0 + l (N1 D0 - N0 D1) / D0^2.
inline double ratio_expansion_error(double n0, double n1, double d0, double d1, double lambda) {
    if (d0 == 0.0) throw std::invalid_argument("ratio expansion requires D0 != 0");
    const double exact = (n0 + lambda * n1) / (d0 + lambda * d1);
    const double linear = n0 / d0 + lambda * (n1 * d0 - n0 * d1) / (d0 * d0);
    return std::abs(exact - linear);
}

inline double ratio_expansion_check(double n0, double n1, double d0, double d1, std::span<const double> lambdas) {
    if (d0 == 0.0) throw std::invalid_argument("ratio expansion requires D0 != 0");
    std::vector<double> err;
    for (double l : lambdas) err.push_back(ratio_expansion_error(n0, n1, d0, d1, l));
    return loglog_slope(lambdas, err);
}

} // namespace rfm::tilt
