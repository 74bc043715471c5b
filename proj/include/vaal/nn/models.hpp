#pragma once

#include "vaal/error.hpp"
#include "vaal/nn/layers.hpp"
#include "vaal/rng.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace vaal::nn {

/// One encoded sample: sample = mean + exp(0.5 * log_variance) * noise.
struct LatentCode {
    RowVector mean;
    RowVector log_variance;
    RowVector sample;
    RowVector noise;
};

/// Row-per-sample batch of latent codes.
struct LatentBatch {
    Matrix mean;
    Matrix log_variance;
    Matrix sample;
    Matrix noise;

    Eigen::Index size() const { return mean.rows(); }
    LatentCode operator[](Eigen::Index i) const {
        return {mean.row(i), log_variance.row(i), sample.row(i), noise.row(i)};
    }
};

inline Matrix standard_normal(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
    Matrix m(rows, cols);
    for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = rng.normal();
    return m;
}

inline void check_finite(const Matrix& m, const char* what) {
    if (m.allFinite()) return;
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        if (!m.row(r).allFinite()) throw NumericFailure(std::string(what) + ": non-finite activation in batch row " + std::to_string(r), r);
    }
}

/// beta-VAE with fully connected encoder and decoder. The encoder's last layer
/// emits [mean | log_variance].
class Vae {
public:
    struct Graph {
        Var mean;
        Var log_variance;
        Var sample;
        Var reconstruction;
    };

    Vae() = default;
    Vae(int input_dim, int hidden, int latent_dim, Rng& rng) : latent_dim_(latent_dim) {
        if (latent_dim <= 0) throw ConfigError("vae: latent_dim must be positive");
        encoder_ = Mlp({{input_dim, hidden, hidden, 2 * latent_dim}, Activation::Relu, Activation::Identity, std::nullopt}, rng);
        decoder_ = Mlp({{latent_dim, hidden, hidden, input_dim}, Activation::Relu, Activation::Identity, std::nullopt}, rng);
    }

    /// Differentiable pass with caller-supplied reparameterisation noise.
    Graph forward(const Var& x, const Matrix& noise) const {
        Var enc = encoder_.forward(x);
        Graph g;
        g.mean = slice_cols(enc, 0, latent_dim_);
        g.log_variance = slice_cols(enc, latent_dim_, latent_dim_);
        g.sample = g.mean + mul(exp(scale(g.log_variance, 0.5)), constant(noise));
        g.reconstruction = decoder_.forward(g.sample);
        return g;
    }

    LatentBatch encode(const Matrix& x, Rng& rng) const {
        if (x.rows() == 0) throw ContractViolation("encode: empty batch");
        if (x.cols() != encoder_.input_dim()) throw ContractViolation("encode: input width does not match the encoder");
        const Matrix enc = encoder_.infer(x);
        check_finite(enc, "encode");
        LatentBatch out;
        out.mean = enc.leftCols(latent_dim_);
        out.log_variance = enc.rightCols(latent_dim_);
        out.noise = standard_normal(x.rows(), latent_dim_, rng);
        out.sample = out.mean + (0.5 * out.log_variance.array()).exp().matrix().cwiseProduct(out.noise);
        check_finite(out.sample, "encode");
        return out;
    }

    /// Posterior means and log-variances without sampling.
    std::pair<Matrix, Matrix> posterior(const Matrix& x) const {
        const Matrix enc = encoder_.infer(x);
        check_finite(enc, "encode");
        return {enc.leftCols(latent_dim_), enc.rightCols(latent_dim_)};
    }

    Matrix decode(const Matrix& z) const { return decoder_.infer(z); }

    std::vector<Var> parameters() const {
        auto p = encoder_.parameters();
        for (auto& q : decoder_.parameters()) p.push_back(q);
        return p;
    }

    Vae clone() const {
        Vae v;
        v.encoder_ = encoder_.clone();
        v.decoder_ = decoder_.clone();
        v.latent_dim_ = latent_dim_;
        return v;
    }

    int latent_dim() const { return latent_dim_; }
    int input_dim() const { return encoder_.input_dim(); }
    const Mlp& encoder() const { return encoder_; }
    const Mlp& decoder() const { return decoder_; }

private:
    Mlp encoder_;
    Mlp decoder_;
    int latent_dim_ = 0;
};

/// Five-layer MLP with a sigmoid head: probability that a code comes from
/// the labeled pool (1 = labeled, 0 = unlabeled).
class Discriminator {
public:
    Discriminator() = default;
    Discriminator(int input_dim, int hidden, Rng& rng)
        : net_({{input_dim, hidden, hidden, hidden, hidden, 1}, Activation::Relu, Activation::Sigmoid, std::nullopt}, rng) {}

    Var forward(const Var& z) const { return net_.forward(z); }
    Eigen::VectorXd probability(const Matrix& z) const { return net_.infer(z).col(0); }

    std::vector<Var> parameters() const { return net_.parameters(); }
    Discriminator clone() const {
        Discriminator d;
        d.net_ = net_.clone();
        return d;
    }
    int input_dim() const { return net_.input_dim(); }
    const Mlp& net() const { return net_; }

private:
    Mlp net_;
};

/// Downstream classifier; emits logits.
class TaskNet {
public:
    TaskNet() = default;
    TaskNet(int input_dim, int hidden, int hidden_layers, int classes, std::optional<double> dropout, Rng& rng) {
        if (hidden_layers < 1) throw ConfigError("task net: needs at least one hidden layer");
        std::vector<int> sizes{input_dim};
        for (int l = 0; l < hidden_layers; ++l) sizes.push_back(hidden);
        sizes.push_back(classes);
        net_ = Mlp({sizes, Activation::Relu, Activation::Identity, dropout}, rng);
    }

    Var logits(const Var& x, Rng* dropout_rng = nullptr) const { return net_.forward(x, dropout_rng); }

    /// Softmax rows; stochastic when `dropout_rng` is given.
    Matrix probabilities(const Matrix& x, Rng* dropout_rng = nullptr) const {
        Matrix logits = net_.infer(x, dropout_rng);
        check_finite(logits, "task");
        for (Eigen::Index r = 0; r < logits.rows(); ++r) {
            const double m = logits.row(r).maxCoeff();
            logits.row(r) = (logits.row(r).array() - m).exp();
            logits.row(r) /= logits.row(r).sum();
        }
        return logits;
    }

    Matrix features(const Matrix& x) const { return net_.penultimate(x); }

    std::vector<Var> parameters() const { return net_.parameters(); }
    TaskNet clone() const {
        TaskNet t;
        t.net_ = net_.clone();
        return t;
    }
    int classes() const { return net_.output_dim(); }
    bool has_dropout() const { return net_.has_dropout(); }
    const Mlp& net() const { return net_; }

private:
    Mlp net_;
};

struct ModelConfig {
    int input_dim = 0;
    int classes = 0;
    int latent_dim = 32;
    int vae_hidden = 128;
    int disc_hidden = 64;
    int task_hidden = 128;
    int task_hidden_layers = 2;
    std::optional<double> task_dropout = 0.1;
    // Ablation: the discriminator reads raw samples instead of latent codes.
    bool disc_on_raw_input = false;
};

struct ModelTriple {
    Vae vae;
    Discriminator disc;
    TaskNet task;
    int latent_dim = 0;
    bool disc_on_raw_input = false;

    ModelTriple clone() const { return {vae.clone(), disc.clone(), task.clone(), latent_dim, disc_on_raw_input}; }
};

inline ModelTriple make_models(const ModelConfig& cfg, std::uint64_t seed) {
    if (cfg.input_dim <= 0 || cfg.classes <= 0) throw ConfigError("models: input_dim and classes must be positive");
    Rng root(seed);
    Rng vae_rng = root.split(1), disc_rng = root.split(2), task_rng = root.split(3);
    ModelTriple m;
    m.latent_dim = cfg.latent_dim;
    m.disc_on_raw_input = cfg.disc_on_raw_input;
    m.vae = Vae(cfg.input_dim, cfg.vae_hidden, cfg.latent_dim, vae_rng);
    m.disc = Discriminator(cfg.disc_on_raw_input ? cfg.input_dim : cfg.latent_dim, cfg.disc_hidden, disc_rng);
    m.task = TaskNet(cfg.input_dim, cfg.task_hidden, cfg.task_hidden_layers, cfg.classes, cfg.task_dropout, task_rng);
    return m;
}

inline TaskNet make_task_net(const ModelConfig& cfg, std::uint64_t seed) {
    Rng rng = Rng(seed).split(3);
    return TaskNet(cfg.input_dim, cfg.task_hidden, cfg.task_hidden_layers, cfg.classes, cfg.task_dropout, rng);
}

/// FNV-1a over the raw parameter bytes; used for frozen/fresh-init audits.
inline std::uint64_t parameter_hash(const std::vector<Var>& params) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& p : params) {
        const auto* bytes = reinterpret_cast<const unsigned char*>(p.value().data());
        for (std::size_t k = 0; k < static_cast<std::size_t>(p.value().size()) * sizeof(double); ++k) {
            h ^= bytes[k];
            h *= 0x100000001b3ULL;
        }
    }
    return h;
}

}  // namespace vaal::nn
