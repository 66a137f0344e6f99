#pragma once

// Flow-matching losses: per-sample squared error, the batch mean (MSE), the
// entropic log-mean-exp aggregate, and the linear risk-coefficient ramp.

#include "rfm/autodiff.hpp"
#include "rfm/data.hpp"
#include "rfm/model.hpp"

#include <span>
#include <stdexcept>

namespace rfm {

// At or below this coefficient the tilted loss is evaluated as the plain mean;
// 1/lambda would otherwise amplify rounding without bound.
inline constexpr double kMinTiltLambda = 1e-12;

// l_b = ||v(xt_b, t_b) - u_b||^2, shape [B].
inline ad::Tensor per_sample_losses(ad::Tape& tape, const VelocityField& field, const BoundField& bound,
                                    const TrainingBatch& batch) {
    const ad::Tensor pred = forward(tape, field, bound, batch.xt, batch.t);
    return ad::square_norm_rows(ad::sub(pred, tape.constant(batch.u)));
}

inline ad::Tensor mse_loss(const ad::Tensor& losses) {
    if (losses.numel() == 0) throw std::invalid_argument("mse_loss: empty loss vector");
    return ad::mean(losses);
}

// (1/lambda) log( (1/B) sum_b exp(lambda l_b) ); the mean when lambda <= kMinTiltLambda.
inline ad::Tensor tilted_loss(const ad::Tensor& losses, double lambda) {
    if (!(lambda >= 0.0)) throw std::invalid_argument("tilted_loss: lambda must be >= 0");
    if (lambda <= kMinTiltLambda) return mse_loss(losses);
    return ad::scale(ad::logsumexp_mean(ad::scale(losses, lambda)), 1.0 / lambda);
}

inline double mse_loss(std::span<const double> losses) {
    ad::Tape tape;
    return mse_loss(tape.vector(losses)).item();
}

inline double tilted_loss(std::span<const double> losses, double lambda) {
    ad::Tape tape;
    return tilted_loss(tape.vector(losses), lambda).item();
}

struct LambdaSchedule {
    long ramp_steps = 500;
    double lambda_max = 0.0;

    void validate() const {
        if (ramp_steps < 1) throw std::invalid_argument("LambdaSchedule: ramp_steps must be >= 1");
        if (!(lambda_max >= 0.0)) throw std::invalid_argument("LambdaSchedule: lambda_max must be >= 0");
    }

    double at(long step) const {
        if (step < 0) throw std::invalid_argument("LambdaSchedule: negative step");
        if (step >= ramp_steps) return lambda_max;
        return static_cast<double>(step) / static_cast<double>(ramp_steps) * lambda_max;
    }
};

} // namespace rfm
