#pragma once

// Experiment orchestration: configuration, training, evaluation, the
// lambda_max sweep and its CSV/SVG reports.

#include "rfm/autodiff.hpp"
#include "rfm/data.hpp"
#include "rfm/loss.hpp"
#include "rfm/metrics.hpp"
#include "rfm/model.hpp"
#include "rfm/optim.hpp"
#include "rfm/random.hpp"
#include "rfm/sampler.hpp"
#include "rfm/svg.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <mutex>
#include <numeric>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <utility>
#include <vector>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace rfm {

// Training allocates many ~1 MB temporaries per step; glibc serves those with
// mmap/munmap by default, which dominates runtime. Call once from main.
inline void configure_allocator() {
#if defined(__GLIBC__)
    mallopt(M_MMAP_THRESHOLD, 256 << 20);
    mallopt(M_TRIM_THRESHOLD, 512 << 20);
#endif
}

namespace detail {

inline std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

template <class T>
T parse_number(std::string_view key, std::string_view text) {
    const std::string s = trim(text);
    T value{};
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
    if (ec != std::errc{} || ptr != s.data() + s.size())
        throw std::invalid_argument("config key '" + std::string(key) + "': cannot parse '" + s + "'");
    return value;
}

inline bool parse_bool(std::string_view key, std::string_view text) {
    const std::string s = trim(text);
    if (s == "1" || s == "true" || s == "yes" || s == "on") return true;
    if (s == "0" || s == "false" || s == "no" || s == "off") return false;
    throw std::invalid_argument("config key '" + std::string(key) + "': expected a boolean, got '" + s + "'");
}

template <class T>
std::vector<T> parse_list(std::string_view key, std::string_view text) {
    std::vector<T> out;
    std::string s = trim(text);
    std::size_t pos = 0;
    while (pos <= s.size()) {
        const auto comma = s.find(',', pos);
        const auto end = comma == std::string::npos ? s.size() : comma;
        out.push_back(parse_number<T>(key, std::string_view(s).substr(pos, end - pos)));
        if (comma == std::string::npos) break;
        pos = comma + 1;
    }
    return out;
}

inline std::string format_double(double v) {
    std::ostringstream o;
    o.precision(std::numeric_limits<double>::max_digits10);
    o << v;
    return o.str();
}

} // namespace detail

// Line-oriented `key = value` configuration. `#` starts a comment. Every key
// has a default matching the two-ring protocol.
struct ExperimentConfig {
    std::uint64_t seed = 0;
    long iterations = 20000;
    std::size_t batch_size = 1000;
    AdamWConfig optimizer{};
    LambdaSchedule schedule{500, 0.0};
    RingMixtureSpec source = RingMixtureSpec::source();
    RingMixtureSpec target = RingMixtureSpec::target();
    ModelConfig model{};
    IntegratorConfig integrator{};
    std::size_t eval_samples = 20000;
    double gap_quantile = 0.99;
    bool check_finite = false;

    static constexpr long kFastIterations = 4000;
    static constexpr std::size_t kFastEvalSamples = 5000;

    void apply_fast() {
        iterations = kFastIterations;
        eval_samples = kFastEvalSamples;
    }

    void set(std::string_view key, std::string_view value) {
        using detail::parse_number;
        const std::string k(key);
        if (k == "seed") seed = parse_number<std::uint64_t>(key, value);
        else if (k == "iterations") iterations = parse_number<long>(key, value);
        else if (k == "batch_size") batch_size = parse_number<std::size_t>(key, value);
        else if (k == "lr") optimizer.lr = parse_number<double>(key, value);
        else if (k == "beta1") optimizer.beta1 = parse_number<double>(key, value);
        else if (k == "beta2") optimizer.beta2 = parse_number<double>(key, value);
        else if (k == "eps") optimizer.eps = parse_number<double>(key, value);
        else if (k == "weight_decay") optimizer.weight_decay = parse_number<double>(key, value);
        else if (k == "lambda_max") schedule.lambda_max = parse_number<double>(key, value);
        else if (k == "ramp_steps") schedule.ramp_steps = parse_number<long>(key, value);
        else if (k == "lobes") source.lobes = target.lobes = parse_number<int>(key, value);
        else if (k == "src_radius") source.radius = parse_number<double>(key, value);
        else if (k == "tgt_radius") target.radius = parse_number<double>(key, value);
        else if (k == "sigma_ang") source.sigma_ang = target.sigma_ang = parse_number<double>(key, value);
        else if (k == "sigma_rad") source.sigma_rad = target.sigma_rad = parse_number<double>(key, value);
        else if (k == "hidden") model.hidden = detail::parse_list<std::size_t>(key, value);
        else if (k == "num_frequencies") model.num_frequencies = parse_number<std::size_t>(key, value);
        else if (k == "integrator") integrator.method = parse_integrator(detail::trim(value));
        else if (k == "integrator_steps") integrator.num_steps = parse_number<int>(key, value);
        else if (k == "eval_samples") eval_samples = parse_number<std::size_t>(key, value);
        else if (k == "gap_quantile") gap_quantile = parse_number<double>(key, value);
        else if (k == "check_finite") check_finite = detail::parse_bool(key, value);
        else throw std::invalid_argument("unknown config key '" + k + "'");
    }

    static const std::vector<std::string>& keys() {
        static const std::vector<std::string> k{
            "seed",  "iterations", "batch_size", "lr",         "beta1",     "beta2",         "eps",
            "weight_decay", "lambda_max", "ramp_steps", "lobes", "src_radius", "tgt_radius", "sigma_ang",
            "sigma_rad", "hidden", "num_frequencies", "integrator", "integrator_steps", "eval_samples",
            "gap_quantile", "check_finite"};
        return k;
    }

    std::string get(std::string_view key) const {
        using detail::format_double;
        const std::string k(key);
        if (k == "seed") return std::to_string(seed);
        if (k == "iterations") return std::to_string(iterations);
        if (k == "batch_size") return std::to_string(batch_size);
        if (k == "lr") return format_double(optimizer.lr);
        if (k == "beta1") return format_double(optimizer.beta1);
        if (k == "beta2") return format_double(optimizer.beta2);
        if (k == "eps") return format_double(optimizer.eps);
        if (k == "weight_decay") return format_double(optimizer.weight_decay);
        if (k == "lambda_max") return format_double(schedule.lambda_max);
        if (k == "ramp_steps") return std::to_string(schedule.ramp_steps);
        if (k == "lobes") return std::to_string(target.lobes);
        if (k == "src_radius") return format_double(source.radius);
        if (k == "tgt_radius") return format_double(target.radius);
        if (k == "sigma_ang") return format_double(target.sigma_ang);
        if (k == "sigma_rad") return format_double(target.sigma_rad);
        if (k == "hidden") {
            std::string s;
            for (std::size_t i = 0; i < model.hidden.size(); ++i) s += (i ? "," : "") + std::to_string(model.hidden[i]);
            return s;
        }
        if (k == "num_frequencies") return std::to_string(model.num_frequencies);
        if (k == "integrator") return std::string(to_string(integrator.method));
        if (k == "integrator_steps") return std::to_string(integrator.num_steps);
        if (k == "eval_samples") return std::to_string(eval_samples);
        if (k == "gap_quantile") return format_double(gap_quantile);
        if (k == "check_finite") return check_finite ? "true" : "false";
        throw std::invalid_argument("unknown config key '" + k + "'");
    }

    void parse(std::istream& in, const std::string& origin = "<config>") {
        std::string line;
        int lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
            const std::string body = detail::trim(line);
            if (body.empty()) continue;
            const auto eq = body.find('=');
            if (eq == std::string::npos)
                throw std::invalid_argument(origin + ":" + std::to_string(lineno) + ": expected key = value");
            try {
                set(detail::trim(std::string_view(body).substr(0, eq)), std::string_view(body).substr(eq + 1));
            } catch (const std::invalid_argument& e) {
                throw std::invalid_argument(origin + ":" + std::to_string(lineno) + ": " + e.what());
            }
        }
    }

    void load(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw std::runtime_error("cannot read config " + path);
        parse(in, path);
    }

    std::string to_text() const {
        std::string s;
        for (const auto& k : keys()) s += k + " = " + get(k) + "\n";
        return s;
    }

    void validate() const {
        if (iterations < 1) throw std::invalid_argument("iterations must be >= 1");
        if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
        if (eval_samples < 1) throw std::invalid_argument("eval_samples must be >= 1");
        if (!(gap_quantile > 0.0 && gap_quantile < 1.0)) throw std::invalid_argument("gap_quantile must lie in (0, 1)");
        if (!(optimizer.lr > 0.0)) throw std::invalid_argument("lr must be > 0");
        if (model.num_frequencies < 1) throw std::invalid_argument("num_frequencies must be >= 1");
        if (source.lobes != target.lobes) throw std::invalid_argument("source and target lobe counts differ");
        schedule.validate();
        source.validate();
        target.validate();
        integrator.validate();
    }
};

class TrainingDiverged : public std::runtime_error {
public:
    TrainingDiverged(long step, double lambda)
        : std::runtime_error("non-finite loss at step " + std::to_string(step) + " (lambda = " +
                             detail::format_double(lambda) + ")"),
          step_(step), lambda_(lambda) {}
    long step() const { return step_; }
    double lambda() const { return lambda_; }

private:
    long step_;
    double lambda_;
};

struct TrainResult {
    VelocityField field;
    std::vector<double> losses;
    std::uint64_t data_digest = 0;
    double wall_time_s = 0.0;
};

struct TrainOptions {
    long log_every = 0;
    std::function<void(long step, double loss, double lambda)> on_progress;
};

// One AdamW step per iteration on a fresh batch. The loss is the tilted
// aggregate at the scheduled coefficient, which is exactly the mean while the
// coefficient is zero.
inline TrainResult train(const ExperimentConfig& cfg, const TrainOptions& opts = {}) {
    cfg.validate();
    const auto start = std::chrono::steady_clock::now();
    Rng init_rng = make_stream(cfg.seed, Stream::init);
    Rng data_rng = make_stream(cfg.seed, Stream::data);
    Rng time_rng = make_stream(cfg.seed, Stream::time);

    TrainResult r;
    r.field = init_velocity_field(cfg.model, init_rng);
    r.losses.reserve(static_cast<std::size_t>(cfg.iterations));
    AdamW opt(cfg.optimizer);
    StreamDigest digest;

    for (long step = 0; step < cfg.iterations; ++step) {
        const TrainingBatch batch = make_batch(cfg.source, cfg.target, cfg.batch_size, data_rng, time_rng);
        digest_batch(digest, batch);
        const double lambda = cfg.schedule.at(step);

        ad::Tape tape({.check_finite = cfg.check_finite});
        const BoundField bound = bind(tape, r.field);
        const ad::Tensor losses = per_sample_losses(tape, r.field, bound, batch);
        const ad::Tensor loss = tilted_loss(losses, lambda);
        const double value = loss.item();
        if (!std::isfinite(value)) throw TrainingDiverged(step, lambda);
        r.losses.push_back(value);

        tape.backward(loss);
        const std::vector<Matrix> grads = gradients(tape, bound);
        opt.step(r.field.tensors, grads);

        if (opts.on_progress && opts.log_every > 0 && (step % opts.log_every == 0 || step + 1 == cfg.iterations))
            opts.on_progress(step, value, lambda);
    }
    r.data_digest = digest.value();
    r.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return r;
}

struct EvalSamples {
    Matrix source;    // fresh x0 draws fed to the sampler
    Matrix generated; // integrated endpoints
    Matrix truth;     // fresh ground-truth target draws
};

inline EvalSamples generate_eval_samples(const VelocityField& field, const ExperimentConfig& cfg) {
    Rng src_rng = make_stream(cfg.seed, Stream::eval_source);
    Rng tgt_rng = make_stream(cfg.seed, Stream::eval_target);
    EvalSamples s;
    s.source = sample_ring(cfg.source, cfg.eval_samples, src_rng);
    s.generated = integrate(field, s.source, cfg.integrator);
    s.truth = sample_ring(cfg.target, cfg.eval_samples, tgt_rng);
    return s;
}

inline MetricsReport evaluate(const VelocityField& field, const ExperimentConfig& cfg) {
    cfg.validate();
    const EvalSamples s = generate_eval_samples(field, cfg);
    return compute_metrics(s.generated, s.truth, cfg.target.lobes, cfg.gap_quantile);
}

inline std::string metrics_csv_row(const MetricsReport& m) {
    using detail::format_double;
    return format_double(m.rmse_sigma) + "," + format_double(m.sigma_model) + "," + format_double(m.sigma_true) + "," +
           format_double(m.gap_rate) + "," + format_double(m.w1_abs) + "," + format_double(m.w1_signed) + "," +
           format_double(m.radial_mse) + "," + format_double(m.radial_mae) + "," + std::to_string(m.n_samples);
}

inline void write_metrics_csv(const std::string& path, const MetricsReport& m) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << MetricsReport::csv_header << '\n' << metrics_csv_row(m) << '\n';
}

inline void write_loss_trace(const std::string& path, const std::vector<double>& losses, const LambdaSchedule& sched) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << "step,lambda,loss\n";
    for (std::size_t i = 0; i < losses.size(); ++i)
        out << i << ',' << detail::format_double(sched.at(static_cast<long>(i))) << ','
            << detail::format_double(losses[i]) << '\n';
}

// ---------------------------------------------------------------------------
// Sweep

struct SweepRow {
    double lambda_max = 0.0;
    std::uint64_t seed = 0;
    MetricsReport metrics{};
    double wall_time_s = 0.0;
    std::uint64_t data_digest = 0;
    std::string error; // empty on success

    bool ok() const { return error.empty(); }
};

struct SweepResult {
    std::vector<SweepRow> rows;
};

inline constexpr const char* kSweepCsvHeader =
    "lambda_max,seed,rmse_sigma,sigma_model,sigma_true,gap_rate,w1_abs,w1_signed,radial_mse,radial_mae,wall_time_s";

// Row without the trailing wall time: the deterministic part.
inline std::string sweep_row_key(const SweepRow& r) {
    using detail::format_double;
    const auto f = [&](double v) { return r.ok() ? format_double(v) : std::string("nan"); };
    const MetricsReport& m = r.metrics;
    return format_double(r.lambda_max) + "," + std::to_string(r.seed) + "," + f(m.rmse_sigma) + "," + f(m.sigma_model) +
           "," + f(m.sigma_true) + "," + f(m.gap_rate) + "," + f(m.w1_abs) + "," + f(m.w1_signed) + "," +
           f(m.radial_mse) + "," + f(m.radial_mae);
}

inline std::string sweep_csv_row(const SweepRow& r) {
    std::ostringstream o;
    o.setf(std::ios::fixed);
    o.precision(3);
    o << r.wall_time_s;
    return sweep_row_key(r) + "," + o.str();
}

inline void write_sweep_csv(const std::string& path, const SweepResult& res) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << kSweepCsvHeader << '\n';
    for (const auto& r : res.rows) out << sweep_csv_row(r) << '\n';
}

enum class Metric { rmse_sigma, gap_rate, w1_abs, w1_signed, sigma_model, radial_mse, radial_mae };

inline double metric_value(const MetricsReport& m, Metric which) {
    switch (which) {
    case Metric::rmse_sigma: return m.rmse_sigma;
    case Metric::gap_rate: return m.gap_rate;
    case Metric::w1_abs: return m.w1_abs;
    case Metric::w1_signed: return m.w1_signed;
    case Metric::sigma_model: return m.sigma_model;
    case Metric::radial_mse: return m.radial_mse;
    case Metric::radial_mae: return m.radial_mae;
    }
    return std::numeric_limits<double>::quiet_NaN();
}

// Distinct lambda_max values in first-appearance order.
inline std::vector<double> sweep_lambdas(const SweepResult& res) {
    std::vector<double> out;
    for (const auto& r : res.rows)
        if (std::find(out.begin(), out.end(), r.lambda_max) == out.end()) out.push_back(r.lambda_max);
    return out;
}

// Seed-averaged metric at one lambda_max; NaN when no successful rows.
inline double mean_metric(const SweepResult& res, double lambda_max, Metric which) {
    double s = 0.0;
    int n = 0;
    for (const auto& r : res.rows)
        if (r.ok() && r.lambda_max == lambda_max) {
            s += metric_value(r.metrics, which);
            ++n;
        }
    return n ? s / n : std::numeric_limits<double>::quiet_NaN();
}

// Mean over seeds of (base_s - value_s) / base_s, pairing each seed with its own
// lambda_max = 0 run. NaN when no pair is available.
inline double paired_relative_improvement(const SweepResult& res, double lambda_max, Metric which) {
    double s = 0.0;
    int n = 0;
    for (const auto& r : res.rows) {
        if (!r.ok() || r.lambda_max != lambda_max) continue;
        const auto base = std::find_if(res.rows.begin(), res.rows.end(),
                                       [&](const SweepRow& b) { return b.ok() && b.lambda_max == 0.0 && b.seed == r.seed; });
        if (base == res.rows.end()) continue;
        const double b = metric_value(base->metrics, which);
        s += (b - metric_value(r.metrics, which)) / b;
        ++n;
    }
    return n ? s / n : std::numeric_limits<double>::quiet_NaN();
}

inline std::vector<double> ranks(std::span<const double> v) {
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < idx.size();) {
        std::size_t j = i;
        while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
        const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
        i = j + 1;
    }
    return r;
}

// Spearman correlation: Pearson correlation of average ranks.
inline double spearman(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size() || a.size() < 2) throw std::invalid_argument("spearman: need two equal-length samples");
    const std::vector<double> ra = ranks(a), rb = ranks(b);
    const double n = static_cast<double>(a.size());
    const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
    const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < ra.size(); ++i) {
        sab += (ra[i] - ma) * (rb[i] - mb);
        saa += (ra[i] - ma) * (ra[i] - ma);
        sbb += (rb[i] - mb) * (rb[i] - mb);
    }
    return sab / std::sqrt(saa * sbb);
}

inline void write_sweep_summary(const std::string& path, const SweepResult& res) {
    using detail::format_double;
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << "lambda_max,runs,rmse_sigma,gap_rate,w1_abs,rel_improve_rmse_sigma,rel_improve_gap_rate,rel_improve_w1_abs\n";
    for (double l : sweep_lambdas(res)) {
        const auto runs = std::count_if(res.rows.begin(), res.rows.end(),
                                        [&](const SweepRow& r) { return r.ok() && r.lambda_max == l; });
        out << format_double(l) << ',' << runs << ',' << format_double(mean_metric(res, l, Metric::rmse_sigma)) << ','
            << format_double(mean_metric(res, l, Metric::gap_rate)) << ','
            << format_double(mean_metric(res, l, Metric::w1_abs)) << ','
            << format_double(paired_relative_improvement(res, l, Metric::rmse_sigma)) << ','
            << format_double(paired_relative_improvement(res, l, Metric::gap_rate)) << ','
            << format_double(paired_relative_improvement(res, l, Metric::w1_abs)) << '\n';
    }
}

inline void write_sweep_plots(const std::filesystem::path& dir, const SweepResult& res) {
    std::vector<double> risk;
    for (double l : sweep_lambdas(res))
        if (l > 0.0) risk.push_back(l);
    std::sort(risk.begin(), risk.end());

    auto series = [&](const std::string& label, auto&& value) {
        svg::Series s{label, {}, {}};
        for (double l : risk) {
            s.x.push_back(l);
            s.y.push_back(value(l));
        }
        return s;
    };
    auto plot_metric = [&](const std::string& file, const std::string& title, const std::string& ylabel, Metric m) {
        svg::LinePlot p{title, "lambda_max", ylabel, {}};
        p.series.push_back(series("risk-sensitive (scheduled)", [&](double l) { return mean_metric(res, l, m); }));
        p.reference = mean_metric(res, 0.0, m);
        p.reference_label = "FM baseline";
        svg::render(p).save((dir / file).string());
    };
    plot_metric("fig_rmse.svg", "RMSE_sigma vs lambda_max (lower is better)", "RMSE_sigma", Metric::rmse_sigma);
    plot_metric("fig_gap.svg", "Gap violation rate vs lambda_max (lower is better)", "gap rate", Metric::gap_rate);
    plot_metric("fig_w1.svg", "W1(|r|) vs lambda_max (lower is better)", "W1(|r|)", Metric::w1_abs);

    svg::LinePlot rel{"Relative RMSE_sigma improvement vs lambda_max (higher is better)", "lambda_max",
                      "(base - risk) / base", {}};
    rel.series.push_back(series("risk-sensitive (scheduled)",
                                [&](double l) { return paired_relative_improvement(res, l, Metric::rmse_sigma); }));
    rel.reference = 0.0;
    rel.reference_label = "FM baseline";
    svg::render(rel).save((dir / "fig_rel_improve.svg").string());
}

struct SweepOptions {
    unsigned workers = 0; // 0: min(hardware threads, runs)
    std::function<void(const SweepRow&)> on_row;
    std::function<void(const std::string&)> log;
};

// Trains and evaluates one model per (lambda_max, seed), rows ordered
// lambda-major. Runs are independent and execute on a worker pool; a failed run
// is recorded in its row and the sweep continues.
inline SweepResult run_sweep(const std::vector<double>& lambda_max_list, const std::vector<std::uint64_t>& seeds,
                             const ExperimentConfig& base, const SweepOptions& opts = {}) {
    if (lambda_max_list.empty() || seeds.empty()) throw std::invalid_argument("run_sweep: need lambdas and seeds");
    base.validate();
    SweepResult res;
    for (double l : lambda_max_list)
        for (std::uint64_t s : seeds) {
            SweepRow r;
            r.lambda_max = l;
            r.seed = s;
            res.rows.push_back(r);
        }

    std::atomic<std::size_t> next{0};
    std::mutex sink;
    auto worker = [&] {
        for (std::size_t i = next++; i < res.rows.size(); i = next++) {
            SweepRow& row = res.rows[i];
            ExperimentConfig cfg = base;
            cfg.seed = row.seed;
            cfg.schedule.lambda_max = row.lambda_max;
            const auto start = std::chrono::steady_clock::now();
            try {
                TrainOptions topts;
                if (opts.log) {
                    topts.log_every = std::max<long>(1, cfg.iterations / 10);
                    topts.on_progress = [&](long step, double loss, double lambda) {
                        std::lock_guard lock(sink);
                        opts.log("  [lambda_max=" + detail::format_double(row.lambda_max) +
                                 " seed=" + std::to_string(row.seed) + "] step " + std::to_string(step) +
                                 " loss " + detail::format_double(loss) + " lambda " + detail::format_double(lambda));
                    };
                }
                const TrainResult tr = train(cfg, topts);
                row.data_digest = tr.data_digest;
                row.metrics = evaluate(tr.field, cfg);
            } catch (const std::exception& e) {
                row.error = e.what();
            }
            row.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
            std::lock_guard lock(sink);
            if (opts.on_row) opts.on_row(row);
        }
    };

    unsigned workers = opts.workers ? opts.workers : std::max(1u, std::thread::hardware_concurrency());
    workers = static_cast<unsigned>(std::min<std::size_t>(workers, res.rows.size()));
    if (workers <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (unsigned w = 0; w < workers; ++w) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    return res;
}

inline void write_sweep_outputs(const std::filesystem::path& dir, const SweepResult& res) {
    std::filesystem::create_directories(dir);
    write_sweep_csv((dir / "sweep.csv").string(), res);
    write_sweep_summary((dir / "sweep_summary.csv").string(), res);
    write_sweep_plots(dir, res);
}

// ---------------------------------------------------------------------------
// Ground-truth transport figure: paired source/target draws joined by their
// straight-line chords, with the target ring dashed. Each chord is a
// <line class="chord">.

inline svg::Canvas ground_truth_figure(const ExperimentConfig& cfg, std::size_t n, Matrix* x0_out = nullptr,
                                       Matrix* x1_out = nullptr) {
    if (n == 0) throw std::invalid_argument("ground truth figure: n must be >= 1");
    Rng rng = make_stream(cfg.seed, Stream::figure);
    const Matrix x0 = sample_ring(cfg.source, n, rng);
    const Matrix x1 = sample_ring(cfg.target, n, rng);
    const double size = 560, margin = 30;
    const double extent = 1.25 * std::max(cfg.target.radius, cfg.source.radius);
    auto sx = [&](double x) { return margin + (x + extent) / (2 * extent) * (size - 2 * margin); };
    auto sy = [&](double y) { return margin + (extent - y) / (2 * extent) * (size - 2 * margin); };

    svg::Canvas c(size, size);
    const double ring_r = cfg.target.radius / (2 * extent) * (size - 2 * margin);
    c.circle(sx(0), sy(0), ring_r, "none", "#888888", "6,4", "ring");
    static const char* palette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b",
                                    "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
    for (Eigen::Index i = 0; i < x0.rows(); ++i)
        c.line(sx(x0(i, 0)), sy(x0(i, 1)), sx(x1(i, 0)), sy(x1(i, 1)), palette[i % 10], 0.8, "", "chord");
    for (Eigen::Index i = 0; i < x0.rows(); ++i) c.circle(sx(x0(i, 0)), sy(x0(i, 1)), 2.5, "#1f77b4", "none", "", "source");
    for (Eigen::Index i = 0; i < x1.rows(); ++i) c.circle(sx(x1(i, 0)), sy(x1(i, 1)), 2.5, "#ff7f0e", "none", "", "target");
    c.text(size / 2, 20, "Ground-truth straight-line transport paths", 14);
    if (x0_out) *x0_out = x0;
    if (x1_out) *x1_out = x1;
    return c;
}

} // namespace rfm
