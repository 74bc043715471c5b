#pragma once

// Loss terms of the adversarial VAE objective and the task learner.
// Each term has a graph version (returns a differentiable Var) and, where
// callers need it, a plain evaluation on already-computed quantities.

#include "vaal/error.hpp"
#include "vaal/nn/autodiff.hpp"
#include "vaal/nn/models.hpp"

#include <cmath>
#include <span>

namespace vaal::nn {

/// Clamp applied to discriminator outputs before taking logs.
inline constexpr double kProbabilityClamp = 1e-7;

struct LossBreakdown {
    double vae_trd = 0.0;
    double vae_adv = 0.0;
    double vae_total = 0.0;
    double disc = 0.0;
    double task = 0.0;
};

/// KL(N(mean, exp(log_variance)) || N(0, I)) for a single code.
inline double kl_unit_gaussian(const LatentCode& code) {
    if (!code.mean.allFinite() || !code.log_variance.allFinite()) throw NumericFailure("kl: non-finite input");
    return 0.5 * (code.log_variance.array().exp() + code.mean.array().square() - 1.0 - code.log_variance.array()).sum();
}

/// Batch mean of the per-sample KL to the unit Gaussian.
inline Var kl_unit_gaussian(const Var& mean, const Var& log_variance) {
    Var per_dim = add_scalar(sub(add(exp(log_variance), square(mean)), log_variance), -1.0);
    return scale(nn::mean(row_sum(per_dim)), 0.5);
}

/// Batch mean of 0.5 * ||x - x_hat||^2, the negative log-likelihood of a
/// unit-variance Gaussian decoder up to an additive constant.
inline Var reconstruction_loss(const Var& reconstruction, const Matrix& target) {
    const double n = static_cast<double>(target.rows());
    return scale(sum(square(sub(reconstruction, constant(target)))), 0.5 / n);
}

struct TransductiveTerms {
    Var total;
    Vae::Graph labeled;
    Vae::Graph unlabeled;
};

/// recon(L) + beta KL(L) + recon(U) + beta KL(U); minimised.
inline TransductiveTerms vae_transductive_terms(const Vae& vae, const Matrix& labeled, const Matrix& unlabeled, double beta,
                                                const Matrix& noise_labeled, const Matrix& noise_unlabeled) {
    if (labeled.rows() == 0 || unlabeled.rows() == 0) throw ContractViolation("vae loss: both batches must be nonempty");
    TransductiveTerms t;
    t.labeled = vae.forward(constant(labeled), noise_labeled);
    t.unlabeled = vae.forward(constant(unlabeled), noise_unlabeled);
    Var lab = add(reconstruction_loss(t.labeled.reconstruction, labeled), scale(kl_unit_gaussian(t.labeled.mean, t.labeled.log_variance), beta));
    Var unl = add(reconstruction_loss(t.unlabeled.reconstruction, unlabeled),
                  scale(kl_unit_gaussian(t.unlabeled.mean, t.unlabeled.log_variance), beta));
    t.total = add(lab, unl);
    return t;
}

inline Var vae_transductive_loss(const Vae& vae, const Matrix& labeled, const Matrix& unlabeled, double beta,
                                 const Matrix& noise_labeled, const Matrix& noise_unlabeled) {
    return vae_transductive_terms(vae, labeled, unlabeled, beta, noise_labeled, noise_unlabeled).total;
}

inline Var clamped_log(const Var& p) { return log(clamp(p, kProbabilityClamp, 1.0 - kProbabilityClamp)); }

/// -mean log D(z_L) - mean log D(z_U): the VAE wants both pools read as labeled.
inline Var vae_adversarial_loss(const Var& d_labeled, const Var& d_unlabeled) {
    return scale(add(mean(clamped_log(d_labeled)), mean(clamped_log(d_unlabeled))), -1.0);
}

/// -mean log D(z_L) - mean log(1 - D(z_U)).
inline Var discriminator_loss(const Var& d_labeled, const Var& d_unlabeled) {
    Var one_minus = add_scalar(scale(d_unlabeled, -1.0), 1.0);
    return scale(add(mean(clamped_log(d_labeled)), mean(clamped_log(one_minus))), -1.0);
}

namespace detail {
inline double mean_clamped_log(std::span<const double> p, bool complement) {
    if (p.empty()) throw ContractViolation("loss: empty discriminator output");
    double s = 0.0;
    for (double v : p) {
        double q = complement ? 1.0 - v : v;
        s += std::log(std::clamp(q, kProbabilityClamp, 1.0 - kProbabilityClamp));
    }
    return s / static_cast<double>(p.size());
}
}  // namespace detail

inline double vae_adversarial_loss(std::span<const double> d_labeled, std::span<const double> d_unlabeled) {
    return -detail::mean_clamped_log(d_labeled, false) - detail::mean_clamped_log(d_unlabeled, false);
}

inline double discriminator_loss(std::span<const double> d_labeled, std::span<const double> d_unlabeled) {
    return -detail::mean_clamped_log(d_labeled, false) - detail::mean_clamped_log(d_unlabeled, true);
}

inline double total_vae_loss(double trd, double adv, double lambda1, double lambda2) {
    if (!std::isfinite(trd) || !std::isfinite(adv)) throw NumericFailure("total_vae_loss: non-finite input");
    return lambda1 * trd + lambda2 * adv;
}

inline Var total_vae_loss(const Var& trd, const Var& adv, double lambda1, double lambda2) {
    return add(scale(trd, lambda1), scale(adv, lambda2));
}

inline void check_labels(const std::vector<int>& y, int classes) {
    for (int c : y) {
        if (c < 0 || c >= classes) throw ContractViolation("task: class index out of range: " + std::to_string(c));
    }
}

inline Matrix task_forward(const TaskNet& task, const Matrix& x) { return task.probabilities(x); }

/// Mean negative log-probability of the true class.
inline Var task_loss(const TaskNet& task, const Matrix& x, const std::vector<int>& y, Rng* dropout_rng = nullptr) {
    check_labels(y, task.classes());
    return scale(mean(pick(log_softmax(task.logits(constant(x), dropout_rng)), y)), -1.0);
}

/// Cross-entropy straight from logits; used where no network is involved.
inline Var cross_entropy(const Var& logits, const std::vector<int>& y) {
    check_labels(y, static_cast<int>(logits.cols()));
    return scale(mean(pick(log_softmax(logits), y)), -1.0);
}

}  // namespace vaal::nn
