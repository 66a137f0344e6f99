#pragma once

// Two-ring Gaussian mixture samplers and rectified training tuples.

#include "rfm/model.hpp"
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

struct RingMixtureSpec {
    int lobes = 6;
    double radius = 1.0;
    double sigma_ang = 0.12;
    double sigma_rad = 0.02;

    static RingMixtureSpec source() { return {6, 1.0 / 3.0, 0.12, 0.02}; }
    static RingMixtureSpec target() { return {6, 1.0, 0.12, 0.02}; }

    void validate() const {
        if (lobes < 1) throw std::invalid_argument("RingMixtureSpec: lobes must be >= 1");
        if (!(radius > 0.0)) throw std::invalid_argument("RingMixtureSpec: radius must be > 0");
        if (!(sigma_ang >= 0.0) || !(sigma_rad >= 0.0))
            throw std::invalid_argument("RingMixtureSpec: noise scales must be >= 0");
    }

    double lobe_angle(int k) const { return 2.0 * std::numbers::pi * k / lobes; }
};

// n x 2 points: pick a lobe uniformly, perturb its angle and the radius with
// independent Gaussians, map back to Cartesian.
inline Matrix sample_ring(const RingMixtureSpec& spec, std::size_t n, Rng& rng) {
    spec.validate();
    if (n == 0) throw std::invalid_argument("sample_ring: n must be >= 1");
    std::uniform_int_distribution<int> lobe(0, spec.lobes - 1);
    std::normal_distribution<double> unit(0.0, 1.0);
    Matrix out(static_cast<Eigen::Index>(n), 2);
    for (Eigen::Index i = 0; i < out.rows(); ++i) {
        const int k = lobe(rng);
        const double angle = spec.lobe_angle(k) + spec.sigma_ang * unit(rng);
        const double r = spec.radius + spec.sigma_rad * unit(rng);
        out(i, 0) = r * std::cos(angle);
        out(i, 1) = r * std::sin(angle);
    }
    return out;
}

struct TrainingBatch {
    Matrix x0;
    Matrix x1;
    std::vector<double> t;
    Matrix xt;
    Matrix u;

    std::size_t size() const { return t.size(); }
};

// Rowwise (1 - t) x0 + t x1.
inline Matrix interpolate(const Matrix& x0, const Matrix& x1, std::span<const double> t) {
    if (x0.rows() != x1.rows() || x0.cols() != x1.cols() || static_cast<std::size_t>(x0.rows()) != t.size())
        throw std::invalid_argument("interpolate: endpoint and time counts differ");
    Matrix xt(x0.rows(), x0.cols());
    for (Eigen::Index i = 0; i < x0.rows(); ++i) {
        const double ti = t[static_cast<std::size_t>(i)];
        xt.row(i) = (1.0 - ti) * x0.row(i) + ti * x1.row(i);
    }
    return xt;
}

// Independent pairing: x0 ~ p0 and x1 ~ p1 drawn separately; t ~ U[0,1].
// Pairs come from `data_rng`, times from `time_rng`.
inline TrainingBatch make_batch(const RingMixtureSpec& src, const RingMixtureSpec& tgt, std::size_t batch_size,
                                Rng& data_rng, Rng& time_rng) {
    if (batch_size == 0) throw std::invalid_argument("make_batch: batch size must be >= 1");
    TrainingBatch b;
    b.x0 = sample_ring(src, batch_size, data_rng);
    b.x1 = sample_ring(tgt, batch_size, data_rng);
    b.t.resize(batch_size);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    for (double& t : b.t) t = unif(time_rng);
    // x1 is re-derived from u so that x0 + u == x1 holds bit-exactly; this moves
    // the drawn target by at most one ulp.
    b.u = b.x1 - b.x0;
    b.x1 = b.x0 + b.u;
    b.xt = interpolate(b.x0, b.x1, b.t);
    return b;
}

inline TrainingBatch make_batch(const RingMixtureSpec& src, const RingMixtureSpec& tgt, std::size_t batch_size,
                                Rng& rng) {
    return make_batch(src, tgt, batch_size, rng, rng);
}

inline void digest_batch(StreamDigest& d, const TrainingBatch& b) {
    d.update(b.x0.data(), sizeof(double) * static_cast<std::size_t>(b.x0.size()));
    d.update(b.x1.data(), sizeof(double) * static_cast<std::size_t>(b.x1.size()));
    d.update(b.t.data(), sizeof(double) * b.t.size());
}

// CSV columns x0_1,x0_2,x1_1,x1_2.
inline void write_pairs_csv(const std::string& path, const Matrix& a, const Matrix& b, const std::string& header) {
    if (a.rows() != b.rows() || a.cols() != 2 || b.cols() != 2)
        throw std::invalid_argument("write_pairs_csv: expected two n x 2 point sets of equal size");
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out.precision(std::numeric_limits<double>::max_digits10);
    out << header << '\n';
    for (Eigen::Index i = 0; i < a.rows(); ++i)
        out << a(i, 0) << ',' << a(i, 1) << ',' << b(i, 0) << ',' << b(i, 1) << '\n';
}

inline void write_dataset_csv(const std::string& path, const Matrix& x0, const Matrix& x1) {
    write_pairs_csv(path, x0, x1, "x0_1,x0_2,x1_1,x1_2");
}

} // namespace rfm
