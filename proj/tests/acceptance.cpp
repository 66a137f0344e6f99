// Acceptance run: property checks against independent oracles, then the full
// two-ring sweep. Prints one PASS/FAIL line per criterion and exits nonzero if
// any criterion fails.

#include "oracles.hpp"
#include "random_cases.hpp"

#include "rfm/harness.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

using namespace rfm;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

class Report {
public:
    void record(int id, const std::string& title, const std::function<Outcome()>& check) {
        Outcome o;
        try {
            o = check();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        std::printf("%s [%2d] %s: %s\n", o.pass ? "PASS" : "FAIL", id, title.c_str(), o.detail.c_str());
        std::fflush(stdout);
        failures_ += !o.pass;
    }
    int failures() const { return failures_; }

private:
    int failures_ = 0;
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---- 1: autodiff against central differences -------------------------------

double oracle_loss(const VelocityField& f, const Matrix& x, const std::vector<double>& t, const Matrix& u) {
    double s = 0.0;
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const auto v = oracle::mlp_row(f, x(i, 0), x(i, 1), t[static_cast<std::size_t>(i)]);
        s += (v[0] - u(i, 0)) * (v[0] - u(i, 0)) + (v[1] - u(i, 1)) * (v[1] - u(i, 1));
    }
    return s / static_cast<double>(x.rows());
}

Outcome autodiff_vs_fd() {
    const auto t0 = std::chrono::steady_clock::now();
    std::mt19937_64 rng(101);
    std::normal_distribution<double> n;
    std::uniform_int_distribution<int> width(2, 9), depth(1, 3), freqs(1, 4), rows(1, 5);
    double worst = 0.0;
    long coords = 0;
    for (int inst = 0; inst < 50; ++inst) {
        ModelConfig cfg;
        cfg.hidden.clear();
        for (int l = depth(rng); l > 0; --l) cfg.hidden.push_back(static_cast<std::size_t>(width(rng)));
        cfg.num_frequencies = freqs(rng);
        VelocityField f = init_velocity_field(cfg, rng);
        for (auto& p : f.tensors)
            for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = 0.6 * n(rng);

        const int b = rows(rng);
        Matrix x(b, 2), u(b, 2);
        std::vector<double> t(static_cast<std::size_t>(b));
        for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = n(rng), u.data()[i] = n(rng);
        std::uniform_real_distribution<double> ut(0.0, 1.0);
        for (double& ti : t) ti = ut(rng);

        ad::Tape tape;
        const BoundField bound = bind(tape, f);
        const ad::Tensor out = forward(tape, f, bound, x, t);
        const ad::Tensor target = tape.constant(u);
        const ad::Tensor loss = ad::mean(ad::square_norm_rows(ad::sub(out, target)));
        tape.backward(loss);

        for (std::size_t p = 0; p < f.tensors.size(); ++p) {
            const Matrix g = tape.grad(bound.tensors[p]);
            VelocityField probe = f;
            for (Eigen::Index i = 0; i < g.size(); ++i) {
                double& slot = probe.tensors[p].value.data()[i];
                const double base = slot;
                const double fd = oracle::central_difference(
                    [&](double v) {
                        slot = v;
                        return oracle_loss(probe, x, t, u);
                    },
                    base, 1e-5);
                slot = base;
                const double rel = std::abs(g.data()[i] - fd) / std::max({std::abs(fd), std::abs(g.data()[i]), 1e-6});
                worst = std::max(worst, rel);
                ++coords;
            }
        }
    }
    const double secs = seconds_since(t0);
    return {worst <= 1e-4 && secs < 10.0,
            fmt("50 MLPs, %ld coordinates, max rel err %.2e (<= 1e-4), %.2f s (< 10 s)", coords, worst, secs)};
}

// ---- 2: small-lambda limit ----------------------------------------------------

Outcome lambda_to_zero() {
    std::mt19937_64 rng(202);
    std::uniform_int_distribution<int> len(1, 2000);
    std::uniform_real_distribution<double> log_scale(-3.0, 1.0);
    double worst = 0.0;
    for (int v = 0; v < 1000; ++v) {
        std::exponential_distribution<double> e(1.0);
        const double scale = std::pow(10.0, log_scale(rng));
        std::vector<double> l(static_cast<std::size_t>(len(rng)));
        for (double& x : l) x = scale * e(rng);
        const double mse = mse_loss(l);
        worst = std::max(worst, std::abs(tilted_loss(l, 1e-8) - mse) / (1.0 + mse));
    }
    return {worst <= 1e-6, fmt("1000 vectors, max |tilted - mse| / (1 + mse) = %.2e (<= 1e-6)", worst)};
}

// ---- 3: Jensen ordering of the conditional and marginal objectives -------------

Outcome jensen_bound() {
    using namespace rfm::tilt;
    std::mt19937_64 rng(303);
    std::uniform_int_distribution<int> dim(1, 3), atoms(1, 6);
    int violations = 0, checks = 0;
    double worst_margin = -1e300;
    for (int k = 0; k < 1000; ++k) {
        const auto j = cases::random_joint(rng, dim(rng), static_cast<std::size_t>(atoms(rng)));
        const auto th = cases::random_theta(rng, j);
        for (double l : {0.01, 0.1, 0.5, 1.0, 5.0}) {
            const double diff = conditional_objective(j, th, l) - marginal_objective(j, th, l);
            worst_margin = std::max(worst_margin, diff);
            violations += diff > 1e-12;
            ++checks;
        }
    }
    return {violations == 0,
            fmt("%d checks, %d violations, max(conditional - marginal) = %.2e", checks, violations, worst_margin)};
}

// ---- 4: tilted-mean expansion order ---------------------------------------------

Outcome expansion_order() {
    using namespace rfm::tilt;
    std::mt19937_64 rng(404);
    std::uniform_int_distribution<int> dim(1, 3);
    const auto grid = default_lambda_grid();
    double lo = 1e300, hi = -1e300, raw_lo = 1e300, raw_hi = -1e300;
    for (int k = 0; k < 100; ++k) {
        const Eigen::Index d = dim(rng);
        auto c = cases::random_asymmetric(rng, d);
        Vector u = cases::random_vector(rng, d);
        const double raw = expansion_order_slope(c, u, grid);
        raw_lo = std::min(raw_lo, raw);
        raw_hi = std::max(raw_hi, raw);
        cases::unit_residual_scale(c, u);
        const double s = expansion_order_slope(c, u, grid);
        lo = std::min(lo, s);
        hi = std::max(hi, s);
    }
    return {lo >= 1.7 && hi <= 2.3,
            fmt("100 conditionals at unit max residual, slopes in [%.4f, %.4f] (need [1.7, 2.3]); "
                "unscaled geometry [%.4f, %.4f]",
                lo, hi, raw_lo, raw_hi)};
}

// ---- 5: gradient gap remainder and closed-form gradients -------------------------

Outcome gradient_gap() {
    using namespace rfm::tilt;
    std::mt19937_64 rng(505);
    std::uniform_int_distribution<int> dim(1, 3), atoms(1, 5);
    const auto grid = default_lambda_grid();
    double lo = 1e300, hi = -1e300, raw_lo = 1e300, raw_hi = -1e300, worst_fd = 0.0;
    for (int k = 0; k < 100; ++k) {
        const auto j = cases::random_joint(rng, dim(rng), static_cast<std::size_t>(atoms(rng)));
        auto th = cases::random_theta(rng, j);
        const double raw = gradient_gap_slope(j, th, grid);
        raw_lo = std::min(raw_lo, raw);
        raw_hi = std::max(raw_hi, raw);
        {
            DiscreteJoint js = j;
            TabularField ts = th;
            cases::unit_residual_scale(js, ts);
            const double s = gradient_gap_slope(js, ts, grid);
            lo = std::min(lo, s);
            hi = std::max(hi, s);
        }

        for (double l : {0.01, 0.1, 0.5, 1.0}) {
            const TabularField g = conditional_gradient(j, th, l);
            for (std::size_t x = 0; x < th.size(); ++x)
                for (Eigen::Index i = 0; i < th[x].size(); ++i) {
                    const double base = th[x](i);
                    const double fd = oracle::central_difference(
                        [&](double v) {
                            th[x](i) = v;
                            return conditional_objective(j, th, l);
                        },
                        base, 1e-5);
                    th[x](i) = base;
                    worst_fd = std::max(worst_fd, std::abs(g[x](i) - fd) / std::max(1.0, std::abs(fd)));
                }
        }
    }
    const bool pass = lo >= 1.7 && hi <= 2.3 && worst_fd <= 1e-6;
    return {pass, fmt("100 joints at unit max residual, remainder slopes in [%.4f, %.4f] (unscaled [%.4f, %.4f]); "
                      "closed form vs FD max rel err %.2e (<= 1e-6)",
                      lo, hi, raw_lo, raw_hi, worst_fd)};
}

// ---- 6: symmetric conditionals are fixed points ------------------------------------

Outcome fixed_point() {
    using namespace rfm::tilt;
    std::mt19937_64 rng(606);
    std::uniform_int_distribution<int> dim(1, 3), pairs(1, 4), atoms(1, 4);
    double worst_mean = 0.0;
    for (int k = 0; k < 200; ++k) {
        const auto c = cases::random_symmetric(rng, dim(rng), static_cast<std::size_t>(pairs(rng)));
        const Vector mu = moments(c).mu;
        for (double l : {0.1, 1.0, 10.0}) worst_mean = std::max(worst_mean, (tilted_mean(c, mu, l) - mu).norm());
    }

    // Exact zeros need exact arithmetic: dyadic pairs keep every step exact.
    int nonzero = 0;
    for (int k = 0; k < 200; ++k) {
        const Eigen::Index d = dim(rng);
        DiscreteJoint j;
        const auto w = cases::random_probs(rng, static_cast<std::size_t>(atoms(rng)));
        TabularField th;
        for (double wx : w) {
            j.atoms.push_back({wx, cases::dyadic_symmetric_pair(rng, d)});
            th.push_back(moments(j.atoms.back().cond).mu);
        }
        for (double l : {0.1, 1.0, 10.0}) {
            const GradientGap g = gradient_gap_check(j, th, l);
            nonzero += (g.exact.array() != 0.0).any() || (g.first_order.array() != 0.0).any();
        }
    }
    return {worst_mean <= 1e-12 && nonzero == 0,
            fmt("max |m_lambda - mu| = %.2e (<= 1e-12) on 200 symmetric conditionals; "
                "%d of 600 dyadic gap checks nonzero",
                worst_mean, nonzero)};
}

// ---- 7: metric oracles ---------------------------------------------------------------

Outcome metric_oracles() {
    std::mt19937_64 rng(707);
    std::normal_distribution<double> n;
    std::exponential_distribution<double> e(3.0);
    double w1_err = 0.0, cs_err = 0.0, q_err = 0.0, r_err = 0.0;
    for (int t = 0; t < 100; ++t) {
        std::vector<double> a(1 + t % 37), b(2 + (t * 7) % 53);
        for (double& x : a) x = n(rng);
        for (double& x : b) x = 0.7 * n(rng) - 0.2;
        w1_err = std::max(w1_err, std::abs(w1_1d(a, b) - oracle::w1_quantile_integral(a, b)));

        std::vector<double> ang(2 + t * 9);
        for (double& x : ang) x = 0.5 * n(rng);
        cs_err = std::max(cs_err, std::abs(circular_std(ang) - oracle::circular_std_complex(ang)));

        std::vector<double> v(1 + t * 3);
        for (double& x : v) x = e(rng);
        for (double q : {0.001, 0.01, 0.37, 0.5, 0.9, 0.99, 0.999})
            q_err = std::max(q_err, std::abs(quantile(v, q) - oracle::quantile_rank_scan(v, q)));

        Matrix pa(5 + t, 2), pb(5 + t, 2);
        for (Eigen::Index i = 0; i < pa.size(); ++i) pa.data()[i] = n(rng), pb.data()[i] = n(rng);
        double se = 0.0, ae = 0.0;
        for (Eigen::Index i = 0; i < pa.rows(); ++i) {
            const double d = std::sqrt(pa(i, 0) * pa(i, 0) + pa(i, 1) * pa(i, 1)) -
                             std::sqrt(pb(i, 0) * pb(i, 0) + pb(i, 1) * pb(i, 1));
            se += d * d;
            ae += std::abs(d);
        }
        const RadialErrors re = radial_errors(pa, pb);
        r_err = std::max({r_err, std::abs(re.mse - se / pa.rows()), std::abs(re.mae - ae / pa.rows())});
    }

    // Gap rate of fresh target samples at the calibrated q-quantile.
    const double q = 0.99;
    const RingMixtureSpec spec = RingMixtureSpec::target();
    Rng r1 = make_stream(7, Stream::eval_target), r2 = make_stream(8, Stream::eval_target);
    const Matrix ref = sample_ring(spec, 100000, r1), fresh = sample_ring(spec, 100000, r2);
    std::vector<double> abs_r;
    for (double r : lobe_residuals(polar_angles(ref), spec.lobes)) abs_r.push_back(std::abs(r));
    const double rate = gap_rate(polar_angles(fresh), calibrate_threshold(abs_r, q), spec.lobes);

    const double worst = std::max({w1_err, cs_err, q_err, r_err});
    return {worst <= 1e-12 && std::abs(rate - (1.0 - q)) <= 0.005,
            fmt("max err w1 %.1e, circ std %.1e, quantile %.1e, radial %.1e (<= 1e-12); "
                "self-consistent gap rate %.4f (0.01 +- 0.005)",
                w1_err, cs_err, q_err, r_err, rate)};
}

// ---- 8: integrator orders -----------------------------------------------------------

double fitted_order(Integrator m, std::initializer_list<int> steps) {
    auto field = [](const Matrix& x, double) -> Matrix { return x; };
    Matrix x0(1, 2);
    x0 << 1.0, -0.5;
    std::vector<double> h, err;
    for (int s : steps) {
        h.push_back(1.0 / s);
        err.push_back((integrate(field, x0, {m, s}) - x0 * std::exp(1.0)).norm());
    }
    return tilt::loglog_slope(h, err);
}

Outcome integrator_orders() {
    const double euler = fitted_order(Integrator::euler, {10, 20, 40, 80, 160});
    const double rk4 = fitted_order(Integrator::rk4, {4, 8, 16, 32});
    return {std::abs(euler - 1.0) <= 0.3 && std::abs(rk4 - 4.0) <= 0.5,
            fmt("euler slope %.4f (1 +- 0.3), rk4 slope %.4f (4 +- 0.5)", euler, rk4)};
}

// ---- 9-13: experiments ---------------------------------------------------------------

double row_metric(const SweepResult& res, double lambda, std::uint64_t seed, Metric m) {
    for (const auto& r : res.rows)
        if (r.ok() && r.lambda_max == lambda && r.seed == seed) return metric_value(r.metrics, m);
    return std::numeric_limits<double>::quiet_NaN();
}

std::string per_seed(const SweepResult& res, double lambda, const std::vector<std::uint64_t>& seeds, Metric m) {
    std::string s;
    for (auto seed : seeds) s += (s.empty() ? "" : " ") + fmt("%.5f", row_metric(res, lambda, seed, m));
    return "[" + s + "]";
}

} // namespace

int main(int argc, char** argv) {
    configure_allocator();

    CLI::App app{"Acceptance checks for risk-sensitive rectified flow"};
    std::string out_dir = "acceptance";
    unsigned workers = 0;
    bool properties_only = false;
    app.add_option("--out", out_dir, "directory for sweep outputs and figures")->capture_default_str();
    app.add_option("--workers", workers, "parallel training runs (0: hardware threads)");
    app.add_flag("--properties-only", properties_only, "skip the training sweep (criteria 9-13)");
    CLI11_PARSE(app, argc, argv);

    Report report;
    report.record(1, "autodiff matches central differences", autodiff_vs_fd);
    report.record(2, "tilted loss tends to MSE as lambda -> 0", lambda_to_zero);
    report.record(3, "conditional objective <= marginal objective", jensen_bound);
    report.record(4, "tilted mean expansion is second-order accurate", expansion_order);
    report.record(5, "gradient gap first-order formula and closed-form gradients", gradient_gap);
    report.record(6, "symmetric conditionals are fixed points", fixed_point);
    report.record(7, "metrics agree with brute-force oracles", metric_oracles);
    report.record(8, "integrator convergence orders", integrator_orders);

    if (properties_only) {
        std::printf("skipped criteria 9-13 (--properties-only)\n");
        return report.failures() == 0 ? 0 : 1;
    }

    const std::vector<double> lambdas{0.0, 0.05, 0.1, 0.2, 0.25, 0.3, 0.4};
    const std::vector<std::uint64_t> seeds{0, 1, 2};
    const ExperimentConfig base;
    fs::create_directories(out_dir);
    {
        std::ofstream cfg(fs::path(out_dir) / "config.txt");
        cfg << base.to_text();
    }
    SweepOptions opts;
    opts.workers = workers;
    opts.on_row = [](const SweepRow& r) {
        std::printf("  run lambda_max=%.2f seed=%llu: %s (%.1f s)\n", r.lambda_max,
                    static_cast<unsigned long long>(r.seed), r.ok() ? "ok" : r.error.c_str(), r.wall_time_s);
        std::fflush(stdout);
    };
    const auto t0 = std::chrono::steady_clock::now();
    const SweepResult res = run_sweep(lambdas, seeds, base, opts);
    std::printf("  sweep: %zu runs in %.1f s\n", res.rows.size(), seconds_since(t0));
    write_sweep_outputs(out_dir, res);
    {
        Matrix x0, x1;
        const svg::Canvas fig = ground_truth_figure(base, 64, &x0, &x1);
        std::ofstream(fs::path(out_dir) / "fig_gt.svg") << fig.str();
    }

    report.record(9, "baseline metrics within bands", [&]() -> Outcome {
        const double r = mean_metric(res, 0.0, Metric::rmse_sigma);
        const double g = mean_metric(res, 0.0, Metric::gap_rate);
        const double w = mean_metric(res, 0.0, Metric::w1_abs);
        const bool pass = r >= 0.007 && r <= 0.030 && g >= 0.015 && g <= 0.060 && w >= 0.006 && w <= 0.024;
        return {pass, fmt("rmse_sigma %.5f [0.007, 0.030] %s; gap_rate %.5f [0.015, 0.060] %s; w1_abs %.5f [0.006, 0.024] %s",
                          r, per_seed(res, 0.0, seeds, Metric::rmse_sigma).c_str(), g,
                          per_seed(res, 0.0, seeds, Metric::gap_rate).c_str(), w,
                          per_seed(res, 0.0, seeds, Metric::w1_abs).c_str())};
    });

    report.record(10, "rmse_sigma improvement at lambda_max=0.25", [&]() -> Outcome {
        const double imp = paired_relative_improvement(res, 0.25, Metric::rmse_sigma);
        return {imp >= 0.10, fmt("paired mean relative improvement %.1f%% (>= 10%%); rmse_sigma %s vs baseline %s",
                                 100.0 * imp, per_seed(res, 0.25, seeds, Metric::rmse_sigma).c_str(),
                                 per_seed(res, 0.0, seeds, Metric::rmse_sigma).c_str())};
    });

    report.record(11, "rmse_sigma decreases with lambda_max", [&]() -> Outcome {
        const std::vector<double> grid{0.0, 0.05, 0.1, 0.2, 0.3, 0.4};
        std::vector<double> means;
        std::string listing;
        for (double l : grid) {
            means.push_back(mean_metric(res, l, Metric::rmse_sigma));
            listing += fmt(" %.2f:%.5f", l, means.back());
        }
        const double rho = spearman(grid, means);
        return {rho <= -0.8, fmt("spearman %.3f (<= -0.8);%s", rho, listing.c_str())};
    });

    report.record(12, "strong tilt at lambda_max=0.40", [&]() -> Outcome {
        const double imp = paired_relative_improvement(res, 0.4, Metric::rmse_sigma);
        const double g = mean_metric(res, 0.4, Metric::gap_rate), g0 = mean_metric(res, 0.0, Metric::gap_rate);
        return {imp >= 0.20 && g <= 1.1 * g0,
                fmt("rmse_sigma improvement %.1f%% (>= 20%%); gap_rate %.5f vs 1.1 x baseline %.5f", 100.0 * imp, g,
                    1.1 * g0)};
    });

    report.record(13, "repeated run reproduces its sweep row", [&]() -> Outcome {
        const SweepRow* first = nullptr;
        for (const auto& r : res.rows)
            if (r.lambda_max == 0.25 && r.seed == 0) first = &r;
        if (!first || !first->ok()) return {false, "reference row missing or failed"};
        const SweepResult again = run_sweep({0.25}, {0}, base, {.workers = 1, .on_row = {}, .log = {}});
        const std::string a = sweep_row_key(*first), b = sweep_row_key(again.rows.front());
        return {a == b, fmt("lambda_max=0.25 seed=0 rerun %s", a == b ? "identical" : ("differs: " + b).c_str())};
    });

    std::printf("%d criteria failed\n", report.failures());
    return report.failures() == 0 ? 0 : 1;
}
