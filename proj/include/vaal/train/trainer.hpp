#pragma once

// Joint training of VAE, discriminator and task learner. Each iteration draws
// a labeled and an unlabeled batch and takes, in order, one VAE step on
// lambda1 * transductive + lambda2 * adversarial loss, one discriminator step,
// and one task-learner step on the labeled batch.

#include "vaal/error.hpp"
#include "vaal/metrics.hpp"
#include "vaal/nn/checkpoint.hpp"
#include "vaal/nn/losses.hpp"
#include "vaal/nn/models.hpp"
#include "vaal/pool/pool.hpp"
#include "vaal/rng.hpp"
#include "vaal/train/adam.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <string>
#include <vector>

namespace vaal::trainer {

struct TrainConfig {
    int epochs = 100;
    double lambda1 = 1.0;
    double lambda2 = 1.0;
    double beta = 1.0;
    double alpha1 = 5e-4;  // VAE
    double alpha2 = 5e-4;  // discriminator
    double alpha3 = 5e-4;  // task learner
    int batch_size = 64;
    AdamConfig adam;
    std::uint64_t seed = 0;

    bool adversarial = true;  // train VAE + discriminator; off for task-only baselines
    bool update_vae = true;   // false: VAE stays at its initialisation
    bool train_task = true;
    int probe_size = 256;
    std::string checkpoint_dir;      // empty: no per-epoch checkpoints

    void validate() const {
        if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
        if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
        if (alpha1 < 0 || alpha2 < 0 || alpha3 < 0) throw ConfigError("train: learning rates must be non-negative");
        if (beta < 0) throw ConfigError("train: beta must be non-negative");
    }
};

struct EpochReport {
    int epoch = 0;
    nn::LossBreakdown losses;  // per-iteration averages
    double disc_probe_accuracy = 0.0;
    double wall_seconds = 0.0;
    int iterations = 0;
};

struct TrainResult {
    nn::ModelTriple models;
    std::vector<EpochReport> reports;
};

/// Endless stream of batches over an index set; reshuffles on every wrap.
class BatchCycler {
public:
    BatchCycler(IndexList indices, std::size_t batch_size, Rng rng)
        : order_(std::move(indices)), batch_(std::min(batch_size, order_.size())), rng_(rng) {
        rng_.shuffle(order_);
    }

    IndexList next() {
        IndexList out;
        out.reserve(batch_);
        while (out.size() < batch_) {
            if (pos_ == order_.size()) {
                rng_.shuffle(order_);
                pos_ = 0;
            }
            out.push_back(order_[pos_++]);
        }
        return out;
    }

private:
    IndexList order_;
    std::size_t batch_;
    std::size_t pos_ = 0;
    Rng rng_;
};

inline int iterations_per_epoch(std::size_t labeled, std::size_t unlabeled, int batch_size) {
    const std::size_t larger = std::max(labeled, unlabeled);
    return static_cast<int>((larger + static_cast<std::size_t>(batch_size) - 1) / static_cast<std::size_t>(batch_size));
}

/// Input to the discriminator for a batch: posterior means, or the raw rows
/// when the VAE is bypassed.
inline Matrix disc_input(const nn::ModelTriple& m, const Matrix& x) {
    return m.disc_on_raw_input ? x : m.vae.posterior(x).first;
}

/// Discriminator accuracy on labeled (target 1) vs unlabeled (target 0) rows,
/// averaged over the two classes.
inline double disc_probe_accuracy(const nn::ModelTriple& m, const Matrix& xl, const Matrix& xu) {
    const Eigen::VectorXd pl = m.disc.probability(disc_input(m, xl));
    const Eigen::VectorXd pu = m.disc.probability(disc_input(m, xu));
    const double al = (pl.array() > 0.5).cast<double>().mean();
    const double au = (pu.array() <= 0.5).cast<double>().mean();
    return 0.5 * (al + au);
}

inline double disc_probe_auc(const nn::ModelTriple& m, const Matrix& xl, const Matrix& xu) {
    const Eigen::VectorXd pl = m.disc.probability(disc_input(m, xl));
    const Eigen::VectorXd pu = m.disc.probability(disc_input(m, xu));
    return roc_auc(std::span<const double>(pl.data(), static_cast<std::size_t>(pl.size())),
                   std::span<const double>(pu.data(), static_cast<std::size_t>(pu.size())));
}

inline TrainResult train(const PoolState& pool, const Dataset& ds, const nn::ModelTriple& initial, const TrainConfig& cfg,
                         const std::function<void(const EpochReport&)>& on_epoch = {}) {
    cfg.validate();
    if (pool.labeled.empty()) throw ContractViolation("train: labeled pool is empty");
    if (cfg.adversarial && pool.unlabeled.empty()) throw ContractViolation("train: unlabeled pool is empty");

    TrainResult result{initial.clone(), {}};
    nn::ModelTriple& m = result.models;
    const bool raw = m.disc_on_raw_input;
    if (cfg.adversarial && m.disc.input_dim() != (raw ? static_cast<int>(ds.feature_dim()) : m.latent_dim))
        throw ConfigError("train: discriminator input width does not match its feature source");

    Rng root(cfg.seed);
    BatchCycler labeled_batches(pool.labeled, static_cast<std::size_t>(cfg.batch_size), root.split(1));
    BatchCycler unlabeled_batches(pool.unlabeled.empty() ? pool.labeled : pool.unlabeled,
                                  static_cast<std::size_t>(cfg.batch_size), root.split(2));
    Rng noise_rng = root.split(3);
    Rng dropout_rng = root.split(4);

    Adam vae_opt(m.vae.parameters(), cfg.alpha1, cfg.adam);
    Adam disc_opt(m.disc.parameters(), cfg.alpha2, cfg.adam);
    Adam task_opt(m.task.parameters(), cfg.alpha3, cfg.adam);

    Rng probe_rng = root.split(5);
    const auto probe_size = static_cast<std::size_t>(std::max(cfg.probe_size, 1));
    const Matrix probe_l = ds.rows(sample_without_replacement(pool.labeled, probe_size, probe_rng));
    const Matrix probe_u = pool.unlabeled.empty() ? Matrix() : ds.rows(sample_without_replacement(pool.unlabeled, probe_size, probe_rng));

    const int iterations = iterations_per_epoch(pool.labeled.size(), pool.unlabeled.size(), cfg.batch_size);
    const int d = m.latent_dim;

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const auto start = std::chrono::steady_clock::now();
        nn::LossBreakdown sums;
        for (int it = 0; it < iterations; ++it) {
            const IndexList lb = labeled_batches.next();
            const Matrix xl = ds.rows(lb);
            std::vector<int> yl;
            yl.reserve(lb.size());
            for (Index i : lb) yl.push_back(pool.acquired_labels.at(i));

            auto check = [&](double v, const char* what) {
                if (!std::isfinite(v))
                    throw NumericFailure(std::string("train: non-finite ") + what + " loss at epoch " + std::to_string(epoch) +
                                         ", iteration " + std::to_string(it));
            };

            if (cfg.adversarial) {
                const Matrix xu = ds.rows(unlabeled_batches.next());
                if (!raw) {
                    const Matrix noise_l = nn::standard_normal(xl.rows(), d, noise_rng);
                    const Matrix noise_u = nn::standard_normal(xu.rows(), d, noise_rng);
                    auto terms = nn::vae_transductive_terms(m.vae, xl, xu, cfg.beta, noise_l, noise_u);
                    nn::Var adv = nn::vae_adversarial_loss(m.disc.forward(terms.labeled.mean), m.disc.forward(terms.unlabeled.mean));
                    nn::Var total = nn::total_vae_loss(terms.total, adv, cfg.lambda1, cfg.lambda2);
                    check(total.scalar(), "VAE");
                    sums.vae_trd += terms.total.scalar();
                    sums.vae_adv += adv.scalar();
                    sums.vae_total += total.scalar();
                    if (cfg.update_vae) vae_opt.step(nn::gradients(total, vae_opt.parameters()));
                }
                // codes are recomputed after the VAE step and carry no VAE gradient
                nn::Var zl = nn::constant(disc_input(m, xl));
                nn::Var zu = nn::constant(disc_input(m, xu));
                nn::Var disc_loss = nn::discriminator_loss(m.disc.forward(zl), m.disc.forward(zu));
                check(disc_loss.scalar(), "discriminator");
                sums.disc += disc_loss.scalar();
                disc_opt.step(nn::gradients(disc_loss, disc_opt.parameters()));
            }

            if (cfg.train_task) {
                nn::Var task_loss = nn::task_loss(m.task, xl, yl, &dropout_rng);
                check(task_loss.scalar(), "task");
                sums.task += task_loss.scalar();
                task_opt.step(nn::gradients(task_loss, task_opt.parameters()));
            }
        }

        EpochReport report;
        report.epoch = epoch;
        report.iterations = iterations;
        const double n = static_cast<double>(iterations);
        report.losses = {sums.vae_trd / n, sums.vae_adv / n, sums.vae_total / n, sums.disc / n, sums.task / n};
        if (cfg.adversarial && probe_u.rows() > 0) report.disc_probe_accuracy = disc_probe_accuracy(m, probe_l, probe_u);
        report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        if (!cfg.checkpoint_dir.empty()) {
            std::filesystem::create_directories(cfg.checkpoint_dir);
            std::ostringstream name;
            name << "epoch_" << std::setw(4) << std::setfill('0') << epoch << ".ckpt";
            nn::save_checkpoint(m, (std::filesystem::path(cfg.checkpoint_dir) / name.str()).string());
        }
        result.reports.push_back(report);
        if (on_epoch) on_epoch(report);
    }
    return result;
}

/// CSV with one row per epoch: epoch,vae_trd,vae_adv,disc,task.
inline void write_loss_trace(const std::vector<EpochReport>& reports, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write loss trace: " + path);
    out << "epoch,vae_trd,vae_adv,disc,task\n" << std::setprecision(17);
    for (const auto& r : reports)
        out << r.epoch << ',' << r.losses.vae_trd << ',' << r.losses.vae_adv << ',' << r.losses.disc << ',' << r.losses.task << '\n';
    if (!out) throw IoError("loss trace write failed: " + path);
}

}  // namespace vaal::trainer
