#pragma once

// AdamW with decoupled weight decay and bias-corrected moments.

#include "rfm/model.hpp"

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

namespace rfm {

struct AdamWConfig {
    double lr = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
    // false: a non-finite gradient entry throws. true: it is replaced by 0.
    bool tolerate_non_finite = false;
};

class NonFiniteGradient : public std::runtime_error {
public:
    explicit NonFiniteGradient(const std::string& param)
        : std::runtime_error("non-finite gradient for parameter " + param), param_(param) {}
    const std::string& param() const { return param_; }

private:
    std::string param_;
};

class AdamW {
public:
    explicit AdamW(AdamWConfig cfg = {}) : cfg_(cfg) {}

    const AdamWConfig& config() const { return cfg_; }
    std::int64_t steps() const { return step_; }
    const std::vector<Matrix>& first_moments() const { return m_; }
    const std::vector<Matrix>& second_moments() const { return v_; }

    void step(std::span<NamedMatrix> params, std::span<const Matrix> grads) {
        if (params.size() != grads.size())
            throw std::invalid_argument("AdamW: " + std::to_string(params.size()) + " parameters but " +
                                        std::to_string(grads.size()) + " gradients");
        if (m_.empty()) {
            for (const auto& p : params) {
                m_.push_back(Matrix::Zero(p.value.rows(), p.value.cols()));
                v_.push_back(Matrix::Zero(p.value.rows(), p.value.cols()));
            }
        }
        if (m_.size() != params.size()) throw std::invalid_argument("AdamW: parameter count changed between steps");
        for (std::size_t i = 0; i < params.size(); ++i) {
            if (grads[i].rows() != params[i].value.rows() || grads[i].cols() != params[i].value.cols())
                throw std::invalid_argument("AdamW: gradient shape mismatch for " + params[i].name);
        }

        // Validate everything before mutating anything.
        std::vector<Matrix> cleaned;
        if (cfg_.tolerate_non_finite) {
            cleaned.reserve(grads.size());
            for (const auto& g : grads) cleaned.push_back(g.unaryExpr([](double x) { return std::isfinite(x) ? x : 0.0; }));
            grads = cleaned;
        } else {
            for (std::size_t i = 0; i < params.size(); ++i)
                if (!grads[i].allFinite()) throw NonFiniteGradient(params[i].name);
        }

        ++step_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
        for (std::size_t i = 0; i < params.size(); ++i) {
            auto p = params[i].value.array();
            const auto g = grads[i].array();
            auto m = m_[i].array();
            auto v = v_[i].array();
            p *= 1.0 - cfg_.lr * cfg_.weight_decay;
            m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * g;
            v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * g.square();
            p -= cfg_.lr * (m / bc1) / ((v / bc2).sqrt() + cfg_.eps);
        }
    }

private:
    AdamWConfig cfg_;
    std::int64_t step_ = 0;
    std::vector<Matrix> m_;
    std::vector<Matrix> v_;
};

} // namespace rfm
