#pragma once

// Velocity field v(x, t): an MLP over [x, sin(w_k t), cos(w_k t)] with tanh
// hidden layers and a linear 2-D output.

#include "rfm/autodiff.hpp"
#include "rfm/random.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace rfm {

using ad::Matrix;

class SinusoidalEmbedding {
public:
    SinusoidalEmbedding() = default;

    explicit SinusoidalEmbedding(std::vector<double> frequencies) : frequencies_(std::move(frequencies)) {
        if (frequencies_.empty()) throw std::invalid_argument("SinusoidalEmbedding: need at least one frequency");
        for (std::size_t i = 1; i < frequencies_.size(); ++i)
            if (!(frequencies_[i] > frequencies_[i - 1]))
                throw std::invalid_argument("SinusoidalEmbedding: frequencies must be strictly increasing");
    }

    // w_k = 2^k * pi, k = 0..n-1
    static SinusoidalEmbedding geometric(std::size_t num_frequencies) {
        std::vector<double> f(num_frequencies);
        for (std::size_t k = 0; k < num_frequencies; ++k) f[k] = std::ldexp(std::numbers::pi, static_cast<int>(k));
        return SinusoidalEmbedding(std::move(f));
    }

    std::size_t dim() const { return 2 * frequencies_.size(); }
    const std::vector<double>& frequencies() const { return frequencies_; }

    void embed(double t, std::span<double> out) const {
        for (std::size_t k = 0; k < frequencies_.size(); ++k) {
            out[2 * k] = std::sin(frequencies_[k] * t);
            out[2 * k + 1] = std::cos(frequencies_[k] * t);
        }
    }

    std::vector<double> operator()(double t) const {
        std::vector<double> out(dim());
        embed(t, out);
        return out;
    }

private:
    std::vector<double> frequencies_;
};

struct ModelConfig {
    std::vector<std::size_t> hidden{128, 128, 128};
    std::size_t num_frequencies = 8;
};

struct NamedMatrix {
    std::string name;
    Matrix value;
};

// Parameters are stored as [W0, b0, W1, b1, ...]; biases are 1 x width.
struct VelocityField {
    SinusoidalEmbedding embedding;
    std::vector<NamedMatrix> tensors;

    std::size_t num_layers() const { return tensors.size() / 2; }
    const Matrix& weight(std::size_t layer) const { return tensors[2 * layer].value; }
    const Matrix& bias(std::size_t layer) const { return tensors[2 * layer + 1].value; }
    std::size_t input_dim() const { return 2 + embedding.dim(); }

    std::size_t num_parameters() const {
        std::size_t n = 0;
        for (const auto& t : tensors) n += static_cast<std::size_t>(t.value.size());
        return n;
    }
};

// Hidden layers: uniform in +-sqrt(6 / fan_in), zero bias. Output layer: zeros,
// so the initial field is identically 0.
inline VelocityField init_velocity_field(const ModelConfig& cfg, Rng& rng) {
    if (cfg.hidden.empty()) throw std::invalid_argument("ModelConfig: need at least one hidden layer");
    VelocityField f;
    f.embedding = SinusoidalEmbedding::geometric(cfg.num_frequencies);
    std::vector<std::size_t> widths{f.input_dim()};
    widths.insert(widths.end(), cfg.hidden.begin(), cfg.hidden.end());
    widths.push_back(2);
    const std::size_t layers = widths.size() - 1;
    for (std::size_t l = 0; l < layers; ++l) {
        const auto fan_in = static_cast<Eigen::Index>(widths[l]);
        const auto fan_out = static_cast<Eigen::Index>(widths[l + 1]);
        Matrix w = Matrix::Zero(fan_in, fan_out);
        if (l + 1 < layers) {
            const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
            std::uniform_real_distribution<double> u(-bound, bound);
            for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = u(rng);
        }
        f.tensors.push_back({"W" + std::to_string(l), std::move(w)});
        f.tensors.push_back({"b" + std::to_string(l), Matrix::Zero(1, fan_out)});
    }
    return f;
}

// Batch input rows [x_1, x_2, sin(w_1 t), cos(w_1 t), ...].
inline Matrix field_input(const SinusoidalEmbedding& emb, const Matrix& x, std::span<const double> t) {
    if (x.cols() != 2 || static_cast<std::size_t>(x.rows()) != t.size())
        throw std::invalid_argument("field_input: expected " + std::to_string(t.size()) + "x2 states, got " +
                                    std::to_string(x.rows()) + "x" + std::to_string(x.cols()));
    Matrix in(x.rows(), static_cast<Eigen::Index>(2 + emb.dim()));
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        double* row = in.data() + i * in.cols();
        row[0] = x(i, 0);
        row[1] = x(i, 1);
        emb.embed(t[static_cast<std::size_t>(i)], std::span<double>(row + 2, emb.dim()));
    }
    return in;
}

// Parameter leaves on a tape, aligned with VelocityField::tensors.
struct BoundField {
    std::vector<ad::Tensor> tensors;
};

inline BoundField bind(ad::Tape& tape, const VelocityField& field, bool requires_grad = true) {
    BoundField b;
    b.tensors.reserve(field.tensors.size());
    for (std::size_t i = 0; i < field.tensors.size(); ++i) {
        const Matrix& m = field.tensors[i].value;
        if (i % 2 == 1)
            b.tensors.push_back(tape.leaf(m, {static_cast<std::size_t>(m.cols())}, requires_grad));
        else
            b.tensors.push_back(requires_grad ? tape.variable(m) : tape.constant(m));
    }
    return b;
}

inline ad::Tensor forward(ad::Tape& tape, const VelocityField& field, const BoundField& bound, const Matrix& x,
                          std::span<const double> t) {
    ad::Tensor h = tape.constant(field_input(field.embedding, x, t));
    const std::size_t layers = field.num_layers();
    for (std::size_t l = 0; l < layers; ++l) {
        h = ad::add(ad::matmul(h, bound.tensors[2 * l]), bound.tensors[2 * l + 1]);
        if (l + 1 < layers) h = ad::tanh(h);
    }
    return h;
}

inline Matrix predict(const VelocityField& field, const Matrix& x, std::span<const double> t) {
    ad::Tape tape;
    const BoundField bound = bind(tape, field, false);
    return forward(tape, field, bound, x, t).value();
}

inline Matrix predict(const VelocityField& field, const Matrix& x, double t) {
    const std::vector<double> ts(static_cast<std::size_t>(x.rows()), t);
    return predict(field, x, ts);
}

inline std::vector<Matrix> gradients(const ad::Tape& tape, const BoundField& bound) {
    std::vector<Matrix> g;
    g.reserve(bound.tensors.size());
    for (const auto& t : bound.tensors) g.push_back(tape.grad(t));
    return g;
}

// Checkpoint: plain text.
//
//   rfm-checkpoint 1
//   frequencies <n> <w_1> ... <w_n>
//   tensors <count>
//   <name> <rows> <cols>
//   <rows*cols values, row-major>
//   ...
//
// Values are written with max_digits10 so a save/load round trip is exact.
inline void save_checkpoint(const std::string& path, const VelocityField& field) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write checkpoint " + path);
    out.precision(std::numeric_limits<double>::max_digits10);
    out << "rfm-checkpoint 1\n";
    out << "frequencies " << field.embedding.frequencies().size();
    for (double w : field.embedding.frequencies()) out << ' ' << w;
    out << "\ntensors " << field.tensors.size() << '\n';
    for (const auto& t : field.tensors) {
        out << t.name << ' ' << t.value.rows() << ' ' << t.value.cols() << '\n';
        for (Eigen::Index i = 0; i < t.value.size(); ++i) out << (i ? " " : "") << t.value.data()[i];
        out << '\n';
    }
    if (!out) throw std::runtime_error("failed writing checkpoint " + path);
}

inline VelocityField load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read checkpoint " + path);
    auto fail = [&](const std::string& what) { return std::runtime_error("checkpoint " + path + ": " + what); };
    std::string tag;
    int version = 0;
    if (!(in >> tag >> version) || tag != "rfm-checkpoint" || version != 1) throw fail("bad header");
    std::size_t nf = 0;
    if (!(in >> tag >> nf) || tag != "frequencies") throw fail("missing frequencies");
    std::vector<double> freqs(nf);
    for (double& w : freqs)
        if (!(in >> w)) throw fail("truncated frequencies");
    VelocityField f;
    f.embedding = SinusoidalEmbedding(std::move(freqs));
    std::size_t count = 0;
    if (!(in >> tag >> count) || tag != "tensors" || count == 0 || count % 2 != 0) throw fail("bad tensor count");
    for (std::size_t i = 0; i < count; ++i) {
        NamedMatrix t;
        Eigen::Index r = 0, c = 0;
        if (!(in >> t.name >> r >> c) || r <= 0 || c <= 0) throw fail("bad tensor header");
        t.value.resize(r, c);
        for (Eigen::Index k = 0; k < t.value.size(); ++k)
            if (!(in >> t.value.data()[k])) throw fail("truncated tensor " + t.name);
        f.tensors.push_back(std::move(t));
    }
    if (static_cast<std::size_t>(f.weight(0).rows()) != f.input_dim()) throw fail("input width mismatch");
    for (std::size_t l = 0; l < f.num_layers(); ++l) {
        if (f.bias(l).rows() != 1 || f.bias(l).cols() != f.weight(l).cols()) throw fail("bias shape mismatch");
        if (l + 1 < f.num_layers() && f.weight(l).cols() != f.weight(l + 1).rows()) throw fail("layer shape mismatch");
    }
    if (f.weight(f.num_layers() - 1).cols() != 2) throw fail("output must be 2-D");
    return f;
}

} // namespace rfm
