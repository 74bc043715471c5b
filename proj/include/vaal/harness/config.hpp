#pragma once

#include "vaal/acquisition/strategies.hpp"
#include "vaal/error.hpp"
#include "vaal/nn/models.hpp"
#include "vaal/pool/dataset_io.hpp"
#include "vaal/pool/oracle.hpp"
#include "vaal/pool/pool.hpp"
#include "vaal/pool/synthetic.hpp"
#include "vaal/train/trainer.hpp"

#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace vaal::harness {

struct DatasetSpec {
    std::string kind = "synthetic";  // synthetic | file
    SyntheticSpec synthetic;
    std::string path;
};

struct AblationFlags {
    bool no_vae = false;
    bool frozen_vae = false;
    bool no_discriminator = false;

    int count() const { return int(no_vae) + int(frozen_vae) + int(no_discriminator); }
    bool any() const { return count() > 0; }
    std::string name() const {
        if (no_vae) return "no_vae";
        if (frozen_vae) return "frozen_vae";
        if (no_discriminator) return "no_discriminator";
        return "none";
    }
};

struct ExperimentConfig {
    DatasetSpec dataset;
    double initial_fraction = 0.10;
    double budget_fraction = 0.05;
    std::vector<double> target_fractions{0.10, 0.15, 0.20, 0.25, 0.30, 0.35, 0.40};
    acquisition::Strategy strategy = acquisition::Strategy::Vaal;
    acquisition::StrategyParams strategy_params;
    trainer::TrainConfig train;
    nn::ModelConfig model;  // input_dim / classes are taken from the dataset
    OracleConfig oracle;
    std::optional<BiasConfig> bias;
    int repetitions = 5;
    std::uint64_t seed = 0;
    AblationFlags ablation;
};

/// Labeled-pool sizes implied by the fractions for a train set of `train_size`.
struct Schedule {
    std::size_t initial = 0;
    std::size_t budget = 0;
    std::vector<std::size_t> targets;  // |labeled| at each target fraction
    std::size_t rounds = 0;            // acquisition rounds to the last target
};

inline std::size_t fraction_count(double f, std::size_t n) {
    return static_cast<std::size_t>(std::llround(f * static_cast<double>(n)));
}

inline Schedule make_schedule(const ExperimentConfig& cfg, std::size_t train_size) {
    if (cfg.target_fractions.empty()) throw ConfigError("config: target_fractions is empty");
    if (!(cfg.budget_fraction > 0.0 && cfg.budget_fraction < 1.0)) throw ConfigError("config: budget_fraction must lie in (0, 1)");
    if (std::abs(cfg.target_fractions.front() - cfg.initial_fraction) > 1e-12)
        throw ConfigError("config: first target fraction must equal initial_fraction");
    for (std::size_t k = 1; k < cfg.target_fractions.size(); ++k)
        if (!(cfg.target_fractions[k] > cfg.target_fractions[k - 1])) throw ConfigError("config: target_fractions must be ascending");
    if (cfg.target_fractions.back() >= 1.0) throw ConfigError("config: target fractions must be below 1");

    Schedule s;
    s.initial = fraction_count(cfg.initial_fraction, train_size);
    s.budget = fraction_count(cfg.budget_fraction, train_size);
    if (s.initial == 0 || s.budget == 0) throw ConfigError("config: train set too small for the requested fractions");
    for (double f : cfg.target_fractions) {
        // a target is reachable when its fraction gap is a whole number of budget steps
        const double steps = (f - cfg.initial_fraction) / cfg.budget_fraction;
        const double whole = std::round(steps);
        if (std::abs(steps - whole) > 1e-9)
            throw ConfigError("config: target fraction " + std::to_string(f) + " is not reachable in whole budget steps");
        s.targets.push_back(s.initial + static_cast<std::size_t>(whole) * s.budget);
    }
    s.rounds = (s.targets.back() - s.initial) / s.budget;
    if (s.targets.back() >= train_size) throw ConfigError("config: schedule exhausts the unlabeled pool");
    return s;
}

inline void validate(const ExperimentConfig& cfg) {
    cfg.train.validate();
    if (cfg.repetitions < 1) throw ConfigError("config: repetitions must be >= 1");
    if (cfg.ablation.count() > 1) throw ConfigError("config: ablation flags " + std::string("are mutually exclusive"));
    if (cfg.dataset.kind != "synthetic" && cfg.dataset.kind != "file") throw ConfigError("config: dataset.kind must be synthetic or file");
    if (cfg.dataset.kind == "file" && cfg.dataset.path.empty()) throw ConfigError("config: dataset.path is required");
    if (cfg.oracle.kind == OracleKind::External) throw ConfigError("config: the experiment runner needs a simulated oracle");
    if (cfg.strategy == acquisition::Strategy::EnsembleVarR && cfg.strategy_params.ensemble_size < 2)
        throw ConfigError("config: ensemble_size must be >= 2");
    if (!(cfg.initial_fraction > 0.0 && cfg.initial_fraction < 1.0)) throw ConfigError("config: initial_fraction must lie in (0, 1)");
}

inline Dataset load_dataset(const DatasetSpec& spec) {
    if (spec.kind == "file") return read_dataset(spec.path);
    return make_gaussian_mixture(spec.synthetic);
}

// ---------------------------------------------------------------------------
// JSON

namespace detail {

using nlohmann::json;

inline void reject_unknown(const json& j, std::initializer_list<const char*> keys, const std::string& where) {
    if (!j.is_object()) throw ConfigError("config: " + where + " must be an object");
    std::set<std::string> allowed(keys.begin(), keys.end());
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!allowed.count(it.key())) throw ConfigError("config: unknown key '" + it.key() + "' in " + where);
}

template <typename T>
void read(const json& j, const char* key, T& out) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: bad value for '") + key + "': " + e.what());
    }
}

}  // namespace detail

inline nlohmann::json to_json(const ExperimentConfig& c) {
    using nlohmann::json;
    json ds{{"kind", c.dataset.kind}};
    if (c.dataset.kind == "file") {
        ds["path"] = c.dataset.path;
    } else {
        const auto& s = c.dataset.synthetic;
        ds.update({{"classes", s.classes}, {"dim", s.dim}, {"per_class", s.per_class}, {"test_per_class", s.test_per_class},
                   {"clusters_per_class", s.clusters_per_class}, {"center_scale", s.center_scale},
                   {"superclass_size", s.superclass_size}, {"seed", s.seed}});
    }
    const auto& t = c.train;
    json train{{"epochs", t.epochs},   {"lambda1", t.lambda1},       {"lambda2", t.lambda2},     {"beta", t.beta},
               {"alpha1", t.alpha1},   {"alpha2", t.alpha2},         {"alpha3", t.alpha3},       {"batch_size", t.batch_size},
               {"adam_beta1", t.adam.beta1}, {"adam_beta2", t.adam.beta2}, {"adam_epsilon", t.adam.epsilon},
               {"probe_size", t.probe_size}};
    const auto& m = c.model;
    json model{{"latent_dim", m.latent_dim},   {"vae_hidden", m.vae_hidden}, {"disc_hidden", m.disc_hidden},
               {"task_hidden", m.task_hidden}, {"task_hidden_layers", m.task_hidden_layers},
               {"task_dropout", m.task_dropout ? json(*m.task_dropout) : json(nullptr)}};
    json j{{"dataset", ds},
           {"initial_fraction", c.initial_fraction},
           {"budget_fraction", c.budget_fraction},
           {"target_fractions", c.target_fractions},
           {"strategy", acquisition::to_string(c.strategy)},
           {"strategy_params", {{"mask_count", c.strategy_params.mask_count}, {"ensemble_size", c.strategy_params.ensemble_size}}},
           {"train", train},
           {"model", model},
           {"oracle", {{"kind", to_string(c.oracle.kind)}, {"noise_fraction", c.oracle.noise_fraction}, {"rng_seed", c.oracle.rng_seed}}},
           {"repetitions", c.repetitions},
           {"seed", c.seed},
           {"ablation", {{"no_vae", c.ablation.no_vae}, {"frozen_vae", c.ablation.frozen_vae}, {"no_discriminator", c.ablation.no_discriminator}}}};
    j["bias"] = c.bias ? json{{"excluded_class_count", c.bias->excluded_class_count}, {"rng_seed", c.bias->rng_seed}} : json(nullptr);
    return j;
}

/// Missing keys keep their defaults; unknown keys are rejected.
inline ExperimentConfig config_from_json(const nlohmann::json& j) {
    using detail::read;
    using detail::reject_unknown;
    ExperimentConfig c;
    reject_unknown(j, {"dataset", "initial_fraction", "budget_fraction", "target_fractions", "strategy", "strategy_params", "train",
                       "model", "oracle", "bias", "repetitions", "seed", "ablation"},
                   "experiment");
    if (j.contains("dataset")) {
        const auto& d = j["dataset"];
        reject_unknown(d, {"kind", "path", "classes", "dim", "per_class", "test_per_class", "clusters_per_class", "center_scale",
                           "superclass_size", "seed"},
                       "dataset");
        auto& s = c.dataset.synthetic;
        read(d, "kind", c.dataset.kind);
        read(d, "path", c.dataset.path);
        read(d, "classes", s.classes);
        read(d, "dim", s.dim);
        read(d, "per_class", s.per_class);
        read(d, "test_per_class", s.test_per_class);
        read(d, "clusters_per_class", s.clusters_per_class);
        read(d, "center_scale", s.center_scale);
        read(d, "superclass_size", s.superclass_size);
        read(d, "seed", s.seed);
    }
    read(j, "initial_fraction", c.initial_fraction);
    read(j, "budget_fraction", c.budget_fraction);
    read(j, "target_fractions", c.target_fractions);
    if (j.contains("strategy")) {
        std::string s;
        read(j, "strategy", s);
        c.strategy = acquisition::parse_strategy(s);
    }
    if (j.contains("strategy_params")) {
        const auto& p = j["strategy_params"];
        reject_unknown(p, {"mask_count", "ensemble_size"}, "strategy_params");
        read(p, "mask_count", c.strategy_params.mask_count);
        read(p, "ensemble_size", c.strategy_params.ensemble_size);
    }
    if (j.contains("train")) {
        const auto& t = j["train"];
        reject_unknown(t, {"epochs", "lambda1", "lambda2", "beta", "alpha1", "alpha2", "alpha3", "batch_size", "adam_beta1", "adam_beta2",
                           "adam_epsilon", "probe_size"},
                       "train");
        auto& tc = c.train;
        read(t, "epochs", tc.epochs);
        read(t, "lambda1", tc.lambda1);
        read(t, "lambda2", tc.lambda2);
        read(t, "beta", tc.beta);
        read(t, "alpha1", tc.alpha1);
        read(t, "alpha2", tc.alpha2);
        read(t, "alpha3", tc.alpha3);
        read(t, "batch_size", tc.batch_size);
        read(t, "adam_beta1", tc.adam.beta1);
        read(t, "adam_beta2", tc.adam.beta2);
        read(t, "adam_epsilon", tc.adam.epsilon);
        read(t, "probe_size", tc.probe_size);
    }
    if (j.contains("model")) {
        const auto& m = j["model"];
        reject_unknown(m, {"latent_dim", "vae_hidden", "disc_hidden", "task_hidden", "task_hidden_layers", "task_dropout"}, "model");
        read(m, "latent_dim", c.model.latent_dim);
        read(m, "vae_hidden", c.model.vae_hidden);
        read(m, "disc_hidden", c.model.disc_hidden);
        read(m, "task_hidden", c.model.task_hidden);
        read(m, "task_hidden_layers", c.model.task_hidden_layers);
        if (m.contains("task_dropout")) {
            if (m["task_dropout"].is_null()) {
                c.model.task_dropout.reset();
            } else {
                double p = 0;
                read(m, "task_dropout", p);
                c.model.task_dropout = p;
            }
        }
    }
    if (j.contains("oracle")) {
        const auto& o = j["oracle"];
        reject_unknown(o, {"kind", "noise_fraction", "rng_seed"}, "oracle");
        std::string kind = to_string(c.oracle.kind);
        read(o, "kind", kind);
        c.oracle.kind = parse_oracle_kind(kind);
        read(o, "noise_fraction", c.oracle.noise_fraction);
        read(o, "rng_seed", c.oracle.rng_seed);
    }
    if (j.contains("bias") && !j["bias"].is_null()) {
        const auto& b = j["bias"];
        reject_unknown(b, {"excluded_class_count", "rng_seed"}, "bias");
        BiasConfig bias;
        read(b, "excluded_class_count", bias.excluded_class_count);
        read(b, "rng_seed", bias.rng_seed);
        c.bias = bias;
    }
    read(j, "repetitions", c.repetitions);
    read(j, "seed", c.seed);
    if (j.contains("ablation")) {
        const auto& a = j["ablation"];
        reject_unknown(a, {"no_vae", "frozen_vae", "no_discriminator"}, "ablation");
        read(a, "no_vae", c.ablation.no_vae);
        read(a, "frozen_vae", c.ablation.frozen_vae);
        read(a, "no_discriminator", c.ablation.no_discriminator);
    }
    validate(c);
    return c;
}

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in, nullptr, true, true);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("config " + path + ": " + e.what());
    }
    ExperimentConfig c = config_from_json(j);
    // dataset paths are relative to the config file
    if (c.dataset.kind == "file" && !c.dataset.path.empty() && std::filesystem::path(c.dataset.path).is_relative())
        c.dataset.path = (std::filesystem::path(path).parent_path() / c.dataset.path).lexically_normal().string();
    return c;
}

// ---------------------------------------------------------------------------
// per-dataset presets

inline ExperimentConfig preset(const std::string& name) {
    ExperimentConfig c;
    auto& t = c.train;
    if (name == "desk") {
        // 8-class 32-D mixture, 2000 train / 500 test
        c.dataset.synthetic = SyntheticSpec{};
        c.dataset.synthetic.clusters_per_class = 4;
        c.dataset.synthetic.center_scale = 0.7;
        c.model.latent_dim = 8;
        return c;
    }
    c.dataset.kind = "file";
    if (name == "cifar10" || name == "cifar100") {
        c.model.latent_dim = 32;
    } else if (name == "caltech256") {
        c.model.latent_dim = 64;
        t.lambda2 = 10;
    } else if (name == "imagenet") {
        c.model.latent_dim = 64;
        t.alpha1 = 1e-1;
        t.alpha2 = 1e-3;
        t.alpha3 = 1e-3;
        t.lambda2 = 10;
    } else {
        throw ConfigError("unknown preset: " + name);
    }
    return c;
}

}  // namespace vaal::harness
