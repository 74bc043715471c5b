#pragma once

#include "vaal/error.hpp"
#include "vaal/nn/autodiff.hpp"
#include "vaal/rng.hpp"

#include <cmath>
#include <optional>
#include <vector>

namespace vaal::nn {

enum class Activation { Identity, Relu, Sigmoid, Tanh };

inline Var activate(const Var& x, Activation a) {
    switch (a) {
        case Activation::Identity: return x;
        case Activation::Relu: return relu(x);
        case Activation::Sigmoid: return sigmoid(x);
        case Activation::Tanh: return tanh(x);
    }
    return x;
}

inline Matrix activate(Matrix x, Activation a) {
    switch (a) {
        case Activation::Identity: return x;
        case Activation::Relu: return x.cwiseMax(0.0);
        case Activation::Sigmoid: return (1.0 + (-x.array()).exp()).inverse().matrix();
        case Activation::Tanh: return x.array().tanh().matrix();
    }
    return x;
}

/// Xavier-uniform weight (fan_in x fan_out) and zero bias.
struct Linear {
    Var weight;
    Var bias;

    Linear() = default;
    Linear(int fan_in, int fan_out, Rng& rng) {
        const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
        Matrix w(fan_in, fan_out);
        for (Eigen::Index k = 0; k < w.size(); ++k) w.data()[k] = rng.uniform(-limit, limit);
        weight = parameter(std::move(w));
        bias = parameter(Matrix::Zero(1, fan_out));
    }

    Var forward(const Var& x) const { return add_row(matmul(x, weight), bias); }
    Matrix infer(const Matrix& x) const {
        Matrix out = x * weight.value();
        out.rowwise() += bias.value().row(0);
        return out;
    }
    int in_features() const { return static_cast<int>(weight.rows()); }
    int out_features() const { return static_cast<int>(weight.cols()); }
};

struct MlpConfig {
    std::vector<int> sizes;  // input, hidden..., output
    Activation hidden = Activation::Relu;
    Activation output = Activation::Identity;
    // std::nullopt: the network has no dropout layers at all.
    std::optional<double> dropout;
};

/// Fully connected stack. Dropout (inverted) follows every hidden activation
/// and is only active when the caller passes an Rng.
class Mlp {
public:
    Mlp() = default;
    Mlp(MlpConfig cfg, Rng& rng) : cfg_(std::move(cfg)) {
        if (cfg_.sizes.size() < 2) throw ConfigError("mlp: need at least input and output sizes");
        for (int s : cfg_.sizes) {
            if (s <= 0) throw ConfigError("mlp: layer widths must be positive");
        }
        if (cfg_.dropout && (*cfg_.dropout < 0.0 || *cfg_.dropout >= 1.0)) throw ConfigError("mlp: dropout rate must lie in [0, 1)");
        for (std::size_t l = 0; l + 1 < cfg_.sizes.size(); ++l) layers_.emplace_back(cfg_.sizes[l], cfg_.sizes[l + 1], rng);
    }

    Var forward(const Var& x, Rng* dropout_rng = nullptr) const {
        Var h = x;
        for (std::size_t l = 0; l < layers_.size(); ++l) {
            h = layers_[l].forward(h);
            if (l + 1 < layers_.size()) {
                h = activate(h, cfg_.hidden);
                if (dropout_active(dropout_rng)) h = mul(h, constant(dropout_mask(h.rows(), h.cols(), *dropout_rng)));
            } else {
                h = activate(h, cfg_.output);
            }
        }
        return h;
    }

    Matrix infer(const Matrix& x, Rng* dropout_rng = nullptr) const {
        Matrix h = x;
        for (std::size_t l = 0; l < layers_.size(); ++l) {
            h = layers_[l].infer(h);
            if (l + 1 < layers_.size()) {
                h = activate(std::move(h), cfg_.hidden);
                if (dropout_active(dropout_rng)) h = h.cwiseProduct(dropout_mask(h.rows(), h.cols(), *dropout_rng));
            } else {
                h = activate(std::move(h), cfg_.output);
            }
        }
        return h;
    }

    /// Activations feeding the last layer (deterministic, dropout off).
    Matrix penultimate(const Matrix& x) const {
        Matrix h = x;
        for (std::size_t l = 0; l + 1 < layers_.size(); ++l) h = activate(layers_[l].infer(h), cfg_.hidden);
        return h;
    }

    std::vector<Var> parameters() const {
        std::vector<Var> out;
        for (const auto& layer : layers_) {
            out.push_back(layer.weight);
            out.push_back(layer.bias);
        }
        return out;
    }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& p : parameters()) n += static_cast<std::size_t>(p.value().size());
        return n;
    }

    /// Deep copy; the clone shares no parameter storage with *this.
    Mlp clone() const {
        Mlp out;
        out.cfg_ = cfg_;
        for (const auto& layer : layers_) {
            Linear copy;
            copy.weight = parameter(layer.weight.value());
            copy.bias = parameter(layer.bias.value());
            out.layers_.push_back(std::move(copy));
        }
        return out;
    }

    const MlpConfig& config() const { return cfg_; }
    const std::vector<Linear>& layers() const { return layers_; }
    int input_dim() const { return cfg_.sizes.front(); }
    int output_dim() const { return cfg_.sizes.back(); }
    bool has_dropout() const { return cfg_.dropout.has_value(); }

private:
    bool dropout_active(const Rng* rng) const { return rng && cfg_.dropout && *cfg_.dropout > 0.0; }

    Matrix dropout_mask(Eigen::Index rows, Eigen::Index cols, Rng& rng) const {
        const double p = *cfg_.dropout;
        const double keep_scale = 1.0 / (1.0 - p);
        Matrix mask(rows, cols);
        for (Eigen::Index k = 0; k < mask.size(); ++k) mask.data()[k] = rng.uniform() < p ? 0.0 : keep_scale;
        return mask;
    }

    MlpConfig cfg_;
    std::vector<Linear> layers_;
};

}  // namespace vaal::nn
