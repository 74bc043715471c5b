#pragma once

#include "vaal/harness/config.hpp"
#include "vaal/metrics.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#ifndef VAAL_BUILD_ID
#define VAAL_BUILD_ID "unknown"
#endif

namespace vaal::harness {

struct CurvePoint {
    double labeled_fraction = 0.0;
    double mean = 0.0;
    double std = 0.0;
    double time = 0.0;  // mean sampling wall time of the round that left this fraction; 0 at the last one

    bool operator==(const CurvePoint&) const = default;
};

struct RepetitionResult {
    std::uint64_t seed = 0;
    std::vector<double> accuracy;          // one per target fraction
    std::vector<double> sampling_seconds;  // one per target fraction
    std::vector<std::size_t> labeled;      // |labeled| when evaluated
};

struct Curve {
    std::string name;
    std::vector<CurvePoint> points;
    std::vector<RepetitionResult> runs;
};

struct RoundRecord {
    int repetition = 0;
    std::uint64_t seed = 0;
    int round = 0;
    std::size_t labeled = 0;
    double accuracy = 0.0;
    double sampling_seconds = 0.0;
    std::uint64_t task_init_hash = 0;  // task parameters before training
    std::vector<trainer::EpochReport> epochs;
};

struct RunHooks {
    std::function<void(const RoundRecord&)> on_round;
};

inline std::uint64_t repetition_seed(std::uint64_t master, int repetition) {
    return derive_seed(master, 0x5245500000000000ULL + static_cast<std::uint64_t>(repetition));
}

/// Training/strategy settings after applying the ablation flags.
struct Plan {
    trainer::TrainConfig train;
    nn::ModelConfig model;
    acquisition::Strategy strategy;
};

inline Plan make_plan(const ExperimentConfig& cfg, const Dataset& ds) {
    using acquisition::Strategy;
    Plan p{cfg.train, cfg.model, cfg.strategy};
    p.model.input_dim = static_cast<int>(ds.feature_dim());
    p.model.classes = ds.class_count;
    const auto& a = cfg.ablation;
    if (a.count() > 1) throw ConfigError("ablation flags are mutually exclusive");
    if (a.no_vae) {
        p.model.disc_on_raw_input = true;
        p.strategy = Strategy::Vaal;
    } else if (a.frozen_vae) {
        p.train.update_vae = false;
        p.strategy = Strategy::Vaal;
    } else if (a.no_discriminator) {
        p.train.lambda2 = 0.0;
        p.train.alpha2 = 0.0;
        p.strategy = Strategy::Wasserstein;
    }
    // the VAE/discriminator pair only matters to the strategies that read it
    p.train.adversarial = p.strategy == Strategy::Vaal || p.strategy == Strategy::Wasserstein;
    return p;
}

namespace detail {

template <typename Ex>
[[noreturn]] void rethrow_with(const Ex& e, const std::string& context) {
    if constexpr (std::is_same_v<Ex, NumericFailure>) {
        throw NumericFailure(context + ": " + e.what(), e.batch_index());
    } else {
        throw Ex(context + ": " + e.what());
    }
}

inline std::pair<double, double> mean_std(const std::vector<double>& v) {
    if (v.empty()) return {0.0, 0.0};
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    if (v.size() < 2) return {mean, 0.0};
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    return {mean, std::sqrt(ss / static_cast<double>(v.size() - 1))};
}

}  // namespace detail

inline double test_accuracy(const nn::TaskNet& task, const Dataset& ds) {
    if (ds.split.test.empty()) throw ConfigError("dataset has no test split");
    return accuracy(task.probabilities(ds.rows(ds.split.test)), ds.labels(ds.split.test));
}

inline std::vector<nn::TaskNet> train_ensemble(const ExperimentConfig& cfg, const Plan& plan, const PoolState& pool, const Dataset& ds,
                                                std::uint64_t round_seed, const nn::TaskNet& first) {
    std::vector<nn::TaskNet> ensemble;
    ensemble.push_back(first.clone());
    trainer::TrainConfig tc = plan.train;
    tc.adversarial = false;
    for (int e = 1; e < cfg.strategy_params.ensemble_size; ++e) {
        const std::uint64_t s = derive_seed(round_seed, 1000 + static_cast<std::uint64_t>(e));
        tc.seed = derive_seed(s, 1);
        ensemble.push_back(trainer::train(pool, ds, nn::make_models(plan.model, s), tc).models.task);
    }
    return ensemble;
}

struct RoundModels {
    nn::ModelTriple models;
    std::vector<nn::TaskNet> ensemble;  // only for ensemble_varr; member 0 is models.task
    std::vector<trainer::EpochReport> epochs;
    std::uint64_t task_init_hash = 0;
};

/// Trains a fresh model set for one round. Ensemble members share the task
/// training settings and differ only in their seeds.
inline RoundModels train_round(const ExperimentConfig& cfg, const Plan& plan, const PoolState& pool, const Dataset& ds,
                               std::uint64_t round_seed, bool with_ensemble) {
    RoundModels out;
    nn::ModelTriple init = nn::make_models(plan.model, round_seed);
    out.task_init_hash = nn::parameter_hash(init.task.parameters());
    trainer::TrainConfig tc = plan.train;
    tc.seed = derive_seed(round_seed, 1);
    auto trained = trainer::train(pool, ds, init, tc);
    out.models = std::move(trained.models);
    out.epochs = std::move(trained.reports);
    if (with_ensemble && plan.strategy == acquisition::Strategy::EnsembleVarR) out.ensemble = train_ensemble(cfg, plan, pool, ds, round_seed, out.models.task);
    return out;
}

/// One repetition: fresh models every round, train, evaluate, acquire, annotate.
inline RepetitionResult run_repetition(const ExperimentConfig& cfg, const Dataset& ds, const Oracle& oracle, int repetition,
                                       const RunHooks& hooks = {}) {
    const Plan plan = make_plan(cfg, ds);
    const Schedule sched = make_schedule(cfg, ds.split.train.size());
    RepetitionResult out;
    out.seed = repetition_seed(cfg.seed, repetition);
    Rng root(out.seed);

    std::optional<BiasConfig> bias = cfg.bias;
    PoolState pool = init_pools(ds, cfg.initial_fraction, bias, root.split(1)(), &oracle);

    for (int round = 0;; ++round) {
        const std::string where = "repetition " + std::to_string(repetition) + " (seed " + std::to_string(out.seed) + "), round " +
                                  std::to_string(round);
        try {
            RoundRecord rec;
            rec.repetition = repetition;
            rec.seed = out.seed;
            rec.round = round;
            rec.labeled = pool.labeled.size();

            const std::uint64_t round_seed = root.split(100 + static_cast<std::uint64_t>(round))();
            const bool last = pool.labeled.size() >= sched.targets.back();
            RoundModels trained = train_round(cfg, plan, pool, ds, round_seed, !last);
            rec.task_init_hash = trained.task_init_hash;
            rec.epochs = std::move(trained.epochs);
            rec.accuracy = test_accuracy(trained.models.task, ds);
            const auto& ensemble = trained.ensemble;

            const auto hit = std::find(sched.targets.begin(), sched.targets.end(), pool.labeled.size());
            if (!last) {
                acquisition::AcquisitionRequest req{plan.strategy, sched.budget, root.split(200 + static_cast<std::uint64_t>(round))(),
                                                    cfg.strategy_params};
                acquisition::AcquisitionContext ctx{pool, ds, &trained.models, ensemble};
                const auto picked = acquisition::acquire(req, ctx);
                rec.sampling_seconds = picked.wall_time;
                pool = annotate(pool, picked.selected, oracle, ds);
            }
            if (hit != sched.targets.end()) {
                out.accuracy.push_back(rec.accuracy);
                out.sampling_seconds.push_back(rec.sampling_seconds);
                out.labeled.push_back(rec.labeled);
            }
            if (hooks.on_round) hooks.on_round(rec);
            if (last) break;
        } catch (const NumericFailure& e) {
            detail::rethrow_with(e, where);
        } catch (const ConfigError& e) {
            detail::rethrow_with(e, where);
        } catch (const IoError& e) {
            detail::rethrow_with(e, where);
        } catch (const ContractViolation& e) {
            detail::rethrow_with(e, where);
        }
    }
    return out;
}

inline Curve aggregate(const std::string& name, const ExperimentConfig& cfg, std::vector<RepetitionResult> runs) {
    Curve c;
    c.name = name;
    for (std::size_t k = 0; k < cfg.target_fractions.size(); ++k) {
        std::vector<double> acc, times;
        for (const auto& r : runs) {
            acc.push_back(r.accuracy.at(k));
            times.push_back(r.sampling_seconds.at(k));
        }
        const auto [mean, sd] = detail::mean_std(acc);
        c.points.push_back({cfg.target_fractions[k], mean, sd, detail::mean_std(times).first});
    }
    c.runs = std::move(runs);
    return c;
}

inline std::string curve_name(const ExperimentConfig& cfg) {
    return cfg.ablation.any() ? cfg.ablation.name() : acquisition::to_string(cfg.strategy);
}

/// One line of the round log that is appended while an experiment runs.
inline nlohmann::json round_json(const std::string& curve, const RoundRecord& r) {
    return {{"curve", curve},
            {"repetition", r.repetition},
            {"seed", r.seed},
            {"round", r.round},
            {"labeled", r.labeled},
            {"accuracy", r.accuracy},
            {"sampling_seconds", r.sampling_seconds},
            {"task_init_hash", r.task_init_hash}};
}

/// Rebuilds curves from a round log, which may stop mid-repetition. A point
/// aggregates whichever repetitions reached it; unreached fractions are left out.
inline std::vector<Curve> curves_from_rounds(const std::vector<nlohmann::json>& rounds, const ExperimentConfig& cfg,
                                             std::size_t train_size) {
    const Schedule sched = make_schedule(cfg, train_size);
    std::vector<std::string> names;
    std::map<std::string, std::map<int, RepetitionResult>> runs;
    for (const auto& j : rounds) {
        const std::string name = j.at("curve").get<std::string>();
        if (std::find(names.begin(), names.end(), name) == names.end()) names.push_back(name);
        const auto labeled = j.at("labeled").get<std::size_t>();
        if (std::find(sched.targets.begin(), sched.targets.end(), labeled) == sched.targets.end()) continue;
        auto& r = runs[name][j.at("repetition").get<int>()];
        r.seed = j.at("seed").get<std::uint64_t>();
        r.accuracy.push_back(j.at("accuracy").get<double>());
        r.sampling_seconds.push_back(j.at("sampling_seconds").get<double>());
        r.labeled.push_back(labeled);
    }
    std::vector<Curve> out;
    for (const auto& name : names) {
        Curve c;
        c.name = name;
        for (auto& [rep, r] : runs[name]) c.runs.push_back(r);
        for (std::size_t k = 0; k < sched.targets.size(); ++k) {
            std::vector<double> acc, times;
            for (const auto& r : c.runs)
                if (k < r.accuracy.size()) {
                    acc.push_back(r.accuracy[k]);
                    times.push_back(r.sampling_seconds[k]);
                }
            if (acc.empty()) break;
            const auto [mean, sd] = detail::mean_std(acc);
            c.points.push_back({cfg.target_fractions[k], mean, sd, detail::mean_std(times).first});
        }
        out.push_back(std::move(c));
    }
    return out;
}

inline Curve run_experiment(const ExperimentConfig& cfg, const RunHooks& hooks = {}) {
    validate(cfg);
    const Dataset ds = load_dataset(cfg.dataset);
    make_schedule(cfg, ds.split.train.size());
    const Oracle oracle(cfg.oracle, ds);
    std::vector<RepetitionResult> runs;
    for (int r = 0; r < cfg.repetitions; ++r) runs.push_back(run_repetition(cfg, ds, oracle, r, hooks));
    return aggregate(curve_name(cfg), cfg, std::move(runs));
}

/// The flagged ablation variant next to the full method under the same seeds.
inline std::vector<Curve> run_ablation(const ExperimentConfig& cfg, const RunHooks& hooks = {}) {
    if (!cfg.ablation.any()) throw ConfigError("run_ablation: no ablation flag set");
    validate(cfg);
    ExperimentConfig reference = cfg;
    reference.ablation = {};
    reference.strategy = acquisition::Strategy::Vaal;
    return {run_experiment(reference, hooks), run_experiment(cfg, hooks)};
}

// ---------------------------------------------------------------------------
// sampling-time benchmark

struct TimingRow {
    acquisition::Strategy strategy;
    double median_seconds = 0.0;
    std::vector<double> seconds;
    bool stable_selection = true;  // every timed run picked the same indices
};

struct TimingOptions {
    int repeats = 3;
    int warmup = 1;
};

/// Models are trained once on the initial pool, then each strategy samples one
/// budget from the same pool and models.
inline std::vector<TimingRow> time_sampling(const ExperimentConfig& cfg, const std::vector<acquisition::Strategy>& strategies,
                                            const TimingOptions& opt = {}) {
    validate(cfg);
    if (opt.repeats < 1) throw ConfigError("time_sampling: repeats must be >= 1");
    const Dataset ds = load_dataset(cfg.dataset);
    const Oracle oracle(cfg.oracle, ds);
    const Schedule sched = make_schedule(cfg, ds.split.train.size());
    Plan plan = make_plan(cfg, ds);
    plan.train.adversarial = true;

    Rng root(repetition_seed(cfg.seed, 0));
    const PoolState pool = init_pools(ds, cfg.initial_fraction, cfg.bias, root.split(1)(), &oracle);
    const std::uint64_t model_seed = root.split(100)();
    plan.strategy = acquisition::Strategy::Vaal;
    const RoundModels trained = train_round(cfg, plan, pool, ds, model_seed, false);
    const auto& models = trained.models;
    std::vector<nn::TaskNet> ensemble;
    if (std::find(strategies.begin(), strategies.end(), acquisition::Strategy::EnsembleVarR) != strategies.end())
        ensemble = train_ensemble(cfg, plan, pool, ds, model_seed, models.task);

    std::vector<TimingRow> rows;
    for (auto s : strategies) {
        acquisition::AcquisitionRequest req{s, sched.budget, root.split(200)(), cfg.strategy_params};
        acquisition::AcquisitionContext ctx{pool, ds, &models, ensemble};
        TimingRow row{s, 0.0, {}, true};
        for (int w = 0; w < opt.warmup; ++w) acquisition::acquire(req, ctx);
        IndexList first;
        for (int k = 0; k < opt.repeats; ++k) {
            const auto r = acquisition::acquire(req, ctx);
            row.seconds.push_back(r.wall_time);
            if (k == 0) first = r.selected;
            else if (r.selected != first) row.stable_selection = false;
        }
        std::vector<double> sorted = row.seconds;
        std::sort(sorted.begin(), sorted.end());
        const std::size_t n = sorted.size();
        row.median_seconds = n % 2 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
        rows.push_back(std::move(row));
    }
    return rows;
}

// ---------------------------------------------------------------------------
// export

inline std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::string curves_csv(const std::vector<Curve>& curves) {
    std::string out = "strategy,fraction,mean,std,time\n";
    for (const auto& c : curves)
        for (const auto& p : c.points)
            out += c.name + ',' + format_double(p.labeled_fraction) + ',' + format_double(p.mean) + ',' + format_double(p.std) + ',' +
                   format_double(p.time) + '\n';
    return out;
}

inline std::vector<Curve> parse_curves_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line != "strategy,fraction,mean,std,time") throw IoError("curves csv: bad header");
    std::vector<Curve> curves;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream row(line);
        std::string name, f[4];
        std::getline(row, name, ',');
        for (auto& s : f) std::getline(row, s, ',');
        if (curves.empty() || curves.back().name != name) curves.push_back({name, {}, {}});
        try {
            curves.back().points.push_back({std::stod(f[0]), std::stod(f[1]), std::stod(f[2]), std::stod(f[3])});
        } catch (const std::exception&) {
            throw IoError("curves csv: bad row: " + line);
        }
    }
    return curves;
}

inline nlohmann::json manifest(const ExperimentConfig& cfg, const std::vector<Curve>& curves) {
    nlohmann::json seeds = nlohmann::json::array();
    for (int r = 0; r < cfg.repetitions; ++r) seeds.push_back(repetition_seed(cfg.seed, r));
    nlohmann::json runs = nlohmann::json::array();
    for (const auto& c : curves) {
        nlohmann::json per_rep = nlohmann::json::array();
        for (const auto& r : c.runs) per_rep.push_back({{"seed", r.seed}, {"accuracy", r.accuracy}, {"labeled", r.labeled}});
        runs.push_back({{"name", c.name}, {"repetitions", per_rep}});
    }
    return {{"build_id", VAAL_BUILD_ID}, {"config", to_json(cfg)}, {"seeds", seeds}, {"curves", runs}};
}

/// Writes <dir>/curves.csv and <dir>/manifest.json.
inline void export_results(const std::vector<Curve>& curves, const ExperimentConfig& cfg, const std::string& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    auto write = [](const std::filesystem::path& p, const std::string& body) {
        std::ofstream out(p, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write " + p.string());
        out << body;
        out.flush();
        if (!out) throw IoError("write failed: " + p.string());
    };
    write(std::filesystem::path(dir) / "curves.csv", curves_csv(curves));
    write(std::filesystem::path(dir) / "manifest.json", manifest(cfg, curves).dump(2) + "\n");
}

}  // namespace vaal::harness
