#pragma once

// Fixed-step integration of dx/dt = v(x, t) over [0, 1].

#include "rfm/model.hpp"

#include <concepts>
#include <stdexcept>
#include <string>
#include <string_view>

namespace rfm {

enum class Integrator { euler, rk4 };

inline std::string_view to_string(Integrator m) { return m == Integrator::euler ? "euler" : "rk4"; }

inline Integrator parse_integrator(std::string_view s) {
    if (s == "euler") return Integrator::euler;
    if (s == "rk4") return Integrator::rk4;
    throw std::invalid_argument("unknown integrator '" + std::string(s) + "' (expected euler or rk4)");
}

struct IntegratorConfig {
    Integrator method = Integrator::rk4;
    int num_steps = 100;

    void validate() const {
        if (num_steps < 1) throw std::invalid_argument("IntegratorConfig: num_steps must be >= 1");
    }
};

class IntegrationError : public std::runtime_error {
public:
    explicit IntegrationError(int step)
        : std::runtime_error("integration produced a non-finite state at step " + std::to_string(step)), step_(step) {}
    int step() const { return step_; }

private:
    int step_;
};

// `field(x, t)` maps an n x 2 state batch at time t to an n x 2 velocity batch.
template <class Field>
    requires std::invocable<Field&, const Matrix&, double>
Matrix integrate(Field&& field, Matrix x, const IntegratorConfig& cfg) {
    cfg.validate();
    const double h = 1.0 / cfg.num_steps;
    for (int s = 0; s < cfg.num_steps; ++s) {
        const double t = s * h;
        if (cfg.method == Integrator::euler) {
            x += h * field(x, t);
        } else {
            const Matrix k1 = field(x, t);
            const Matrix k2 = field(x + (0.5 * h) * k1, t + 0.5 * h);
            const Matrix k3 = field(x + (0.5 * h) * k2, t + 0.5 * h);
            const Matrix k4 = field(x + h * k3, t + h);
            x += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
        if (!x.allFinite()) throw IntegrationError(s);
    }
    return x;
}

inline Matrix integrate(const VelocityField& params, const Matrix& x0, const IntegratorConfig& cfg) {
    return integrate([&](const Matrix& x, double t) { return predict(params, x, t); }, x0, cfg);
}

} // namespace rfm
