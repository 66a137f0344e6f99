// rfm: train, evaluate and sweep risk-sensitive rectified flow models on the
// two-ring benchmark, plus the discrete tilt diagnostics.

#include "rfm/harness.hpp"
#include "rfm/tiltlab.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

namespace fs = std::filesystem;

namespace {

struct Common {
    std::string config_path;
    std::string out_dir = "out";
    bool fast = false;
    std::map<std::string, std::string> overrides;
};

void add_common(CLI::App* app, Common& c) {
    app->add_option("--config", c.config_path, "key = value config file");
    app->add_option("--out", c.out_dir, "output directory")->capture_default_str();
    app->add_flag("--fast", c.fast, "CI budget: 4000 iterations, 5000 eval samples");
    for (const auto& key : rfm::ExperimentConfig::keys()) {
        std::string flag = "--" + key;
        for (auto& ch : flag)
            if (ch == '_') ch = '-';
        app->add_option_function<std::string>(
            flag, [&c, key](const std::string& v) { c.overrides[key] = v; }, "override config key " + key);
    }
}

// defaults < config file < --fast < explicit flags
rfm::ExperimentConfig resolve(const Common& c) {
    rfm::ExperimentConfig cfg;
    if (!c.config_path.empty()) cfg.load(c.config_path);
    if (c.fast) cfg.apply_fast();
    for (const auto& [k, v] : c.overrides) cfg.set(k, v);
    cfg.validate();
    return cfg;
}

void write_text(const fs::path& p, const std::string& s) {
    std::ofstream out(p);
    if (!out) throw std::runtime_error("cannot write " + p.string());
    out << s;
}

int cmd_train(const Common& c) {
    const rfm::ExperimentConfig cfg = resolve(c);
    fs::create_directories(c.out_dir);
    const fs::path out(c.out_dir);
    write_text(out / "config.txt", cfg.to_text());

    rfm::TrainOptions opts;
    opts.log_every = std::max<long>(1, cfg.iterations / 20);
    opts.on_progress = [](long step, double loss, double lambda) {
        std::cerr << "step " << step << "  lambda " << lambda << "  loss " << loss << '\n';
    };
    const rfm::TrainResult tr = rfm::train(cfg, opts);
    rfm::save_checkpoint((out / "model.ckpt").string(), tr.field);
    rfm::write_loss_trace((out / "loss.csv").string(), tr.losses, cfg.schedule);
    std::cerr << "trained in " << tr.wall_time_s << " s\n";

    const rfm::MetricsReport m = rfm::evaluate(tr.field, cfg);
    rfm::write_metrics_csv((out / "metrics.csv").string(), m);
    std::cout << rfm::MetricsReport::csv_header << '\n' << rfm::metrics_csv_row(m) << '\n';
    return 0;
}

int cmd_eval(const Common& c, const std::string& checkpoint, bool dump_samples) {
    const rfm::ExperimentConfig cfg = resolve(c);
    const rfm::VelocityField field = rfm::load_checkpoint(checkpoint);
    const rfm::EvalSamples s = rfm::generate_eval_samples(field, cfg);
    const rfm::MetricsReport m = rfm::compute_metrics(s.generated, s.truth, cfg.target.lobes, cfg.gap_quantile);
    fs::create_directories(c.out_dir);
    const fs::path out(c.out_dir);
    rfm::write_metrics_csv((out / "metrics.csv").string(), m);
    if (dump_samples) rfm::write_pairs_csv((out / "samples.csv").string(), s.source, s.generated, "x0_1,x0_2,x1_1,x1_2");
    std::cout << rfm::MetricsReport::csv_header << '\n' << rfm::metrics_csv_row(m) << '\n';
    return 0;
}

int cmd_sweep(const Common& c, const std::vector<double>& lambdas, const std::vector<std::uint64_t>& seeds,
              unsigned workers, bool verbose) {
    const rfm::ExperimentConfig cfg = resolve(c);
    rfm::SweepOptions opts;
    opts.workers = workers;
    opts.on_row = [](const rfm::SweepRow& r) {
        std::cerr << "done lambda_max=" << r.lambda_max << " seed=" << r.seed << " ("
                  << (r.ok() ? "ok" : "FAILED: " + r.error) << ", " << r.wall_time_s << " s)\n";
    };
    if (verbose) opts.log = [](const std::string& s) { std::cerr << s << '\n'; };
    const rfm::SweepResult res = rfm::run_sweep(lambdas, seeds, cfg, opts);
    rfm::write_sweep_outputs(c.out_dir, res);
    write_text(fs::path(c.out_dir) / "config.txt", cfg.to_text());
    std::ifstream summary(fs::path(c.out_dir) / "sweep_summary.csv");
    std::cout << summary.rdbuf();
    const bool any_failed = std::any_of(res.rows.begin(), res.rows.end(), [](const auto& r) { return !r.ok(); });
    return any_failed ? 2 : 0;
}

// Diagnostic on a fixed asymmetric 2-D joint: expansion remainder of the tilted
// mean and the gradient-gap remainder, both against the lambda grid.
int cmd_tiltlab(const std::string& out_path) {
    using rfm::tilt::Vector;
    auto v2 = [](double a, double b) {
        Vector v(2);
        v << a, b;
        return v;
    };
    rfm::tilt::DiscreteConditional a{{v2(-1.0, 0.0), v2(0.0, 0.5), v2(2.0, -0.5)}, {0.5, 0.25, 0.25}};
    rfm::tilt::DiscreteConditional b{{v2(0.3, 1.0), v2(-0.7, -0.2), v2(1.5, 0.4), v2(0.0, -1.2)}, {0.4, 0.3, 0.2, 0.1}};
    rfm::tilt::DiscreteJoint joint{{{0.6, a}, {0.4, b}}};
    const rfm::tilt::TabularField theta{v2(0.1, -0.2), v2(-0.3, 0.25)};
    const Vector u = theta[0];

    const std::vector<double> grid = rfm::tilt::default_lambda_grid();
    const std::vector<double> exp_err = rfm::tilt::expansion_errors(a, u, grid);
    const std::vector<double> gap_err = rfm::tilt::gradient_gap_errors(joint, theta, grid);

    std::ofstream file;
    std::ostream* out = &std::cout;
    if (!out_path.empty()) {
        if (fs::path(out_path).has_parent_path()) fs::create_directories(fs::path(out_path).parent_path());
        file.open(out_path);
        if (!file) throw std::runtime_error("cannot write " + out_path);
        out = &file;
    }
    *out << "lambda,expansion_error,gap_error\n";
    out->precision(17);
    for (std::size_t i = 0; i < grid.size(); ++i) *out << grid[i] << ',' << exp_err[i] << ',' << gap_err[i] << '\n';
    std::cerr << "expansion slope " << rfm::tilt::loglog_slope(grid, exp_err) << ", gap slope "
              << rfm::tilt::loglog_slope(grid, gap_err) << '\n';
    return 0;
}

int cmd_figure_gt(const Common& c, std::size_t n) {
    const rfm::ExperimentConfig cfg = resolve(c);
    fs::create_directories(c.out_dir);
    rfm::Matrix x0, x1;
    rfm::ground_truth_figure(cfg, n, &x0, &x1).save((fs::path(c.out_dir) / "fig_gt.svg").string());
    rfm::write_dataset_csv((fs::path(c.out_dir) / "gt_pairs.csv").string(), x0, x1);
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    rfm::configure_allocator();
    CLI::App app{"Risk-sensitive rectified flow on the two-ring benchmark"};
    app.require_subcommand(1);

    Common train_c, eval_c, sweep_c, fig_c;
    auto* train = app.add_subcommand("train", "train one model, save checkpoint, loss trace and metrics");
    add_common(train, train_c);

    auto* eval = app.add_subcommand("eval", "evaluate a saved checkpoint");
    add_common(eval, eval_c);
    std::string checkpoint;
    bool dump_samples = false;
    eval->add_option("--checkpoint", checkpoint, "checkpoint written by train")->required();
    eval->add_flag("--samples", dump_samples, "also write the generated samples");

    auto* sweep = app.add_subcommand("sweep", "lambda_max x seed grid with CSV and SVG reports");
    add_common(sweep, sweep_c);
    std::vector<double> lambdas{0.0, 0.05, 0.1, 0.2, 0.25, 0.3, 0.4};
    std::vector<std::uint64_t> seeds{0, 1, 2};
    unsigned workers = 0;
    bool verbose = false;
    sweep->add_option("--lambdas", lambdas, "lambda_max values")->delimiter(',')->capture_default_str();
    sweep->add_option("--seeds", seeds, "seeds")->delimiter(',')->capture_default_str();
    sweep->add_option("--workers", workers, "worker threads (0: all cores)");
    sweep->add_flag("-v,--verbose", verbose, "per-run progress");

    auto* tilt = app.add_subcommand("tiltlab", "CSV of expansion and gradient-gap remainders vs lambda");
    std::string tilt_out;
    tilt->add_option("--out", tilt_out, "CSV path (default stdout)");

    auto* fig = app.add_subcommand("figure-gt", "ground-truth transport figure");
    add_common(fig, fig_c);
    std::size_t n = 64;
    fig->add_option("-n,--points", n, "number of pairs")->capture_default_str();

    CLI11_PARSE(app, argc, argv);
    try {
        if (*train) return cmd_train(train_c);
        if (*eval) return cmd_eval(eval_c, checkpoint, dump_samples);
        if (*sweep) return cmd_sweep(sweep_c, lambdas, seeds, workers, verbose);
        if (*tilt) return cmd_tiltlab(tilt_out);
        if (*fig) return cmd_figure_gt(fig_c, n);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
