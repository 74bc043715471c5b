#pragma once

#include "vaal/error.hpp"
#include "vaal/nn/autodiff.hpp"

#include <cmath>
#include <vector>

namespace vaal::trainer {

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

struct AdamState {
    std::vector<Matrix> first_moment;
    std::vector<Matrix> second_moment;
    long step = 0;
};

/// One bias-corrected Adam update, in place on the parameter values.
inline void optimizer_step(const std::vector<nn::Var>& params, const std::vector<Matrix>& grads, AdamState& state,
                           double learning_rate, const AdamConfig& cfg = {}) {
    if (params.size() != grads.size()) throw ContractViolation("optimizer_step: parameter/gradient count mismatch");
    if (state.first_moment.empty()) {
        for (const auto& p : params) {
            state.first_moment.push_back(Matrix::Zero(p.rows(), p.cols()));
            state.second_moment.push_back(Matrix::Zero(p.rows(), p.cols()));
        }
    }
    if (state.first_moment.size() != params.size()) throw ContractViolation("optimizer_step: state belongs to another parameter set");
    for (std::size_t k = 0; k < params.size(); ++k) {
        if (grads[k].rows() != params[k].rows() || grads[k].cols() != params[k].cols())
            throw ContractViolation("optimizer_step: gradient shape mismatch at tensor " + std::to_string(k));
    }

    ++state.step;
    const double correction1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double correction2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    for (std::size_t k = 0; k < params.size(); ++k) {
        Matrix& m = state.first_moment[k];
        Matrix& v = state.second_moment[k];
        m = cfg.beta1 * m + (1.0 - cfg.beta1) * grads[k];
        v = cfg.beta2 * v + (1.0 - cfg.beta2) * grads[k].cwiseProduct(grads[k]);
        if (learning_rate == 0.0) continue;
        Matrix& value = nn::Var(params[k]).mutable_value();
        value.array() -= learning_rate * (m.array() / correction1) / ((v.array() / correction2).sqrt() + cfg.epsilon);
    }
}

/// Parameter set bundled with its optimizer state and learning rate.
class Adam {
public:
    Adam(std::vector<nn::Var> params, double learning_rate, AdamConfig cfg = {})
        : params_(std::move(params)), lr_(learning_rate), cfg_(cfg) {}

    void step(const std::vector<Matrix>& grads) { optimizer_step(params_, grads, state_, lr_, cfg_); }
    const std::vector<nn::Var>& parameters() const { return params_; }
    double learning_rate() const { return lr_; }
    const AdamState& state() const { return state_; }

private:
    std::vector<nn::Var> params_;
    double lr_;
    AdamConfig cfg_;
    AdamState state_;
};

}  // namespace vaal::trainer
