#include "vaal/harness/experiment.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <fstream>
#include <set>
#include <sstream>

using namespace vaal;
using namespace vaal::harness;
using acquisition::Strategy;

namespace {

ExperimentConfig tiny(Strategy s = Strategy::Vaal) {
    ExperimentConfig c;
    c.dataset.synthetic.classes = 4;
    c.dataset.synthetic.dim = 6;
    c.dataset.synthetic.per_class = 50;
    c.dataset.synthetic.test_per_class = 10;
    c.dataset.synthetic.center_scale = 2.0;
    c.target_fractions = {0.10, 0.15, 0.20};
    c.strategy = s;
    c.train.epochs = 2;
    c.train.batch_size = 32;
    c.train.alpha1 = c.train.alpha2 = c.train.alpha3 = 5e-3;
    c.model.latent_dim = 3;
    c.model.vae_hidden = 10;
    c.model.disc_hidden = 8;
    c.model.task_hidden = 10;
    c.strategy_params.ensemble_size = 3;
    c.strategy_params.mask_count = 3;
    c.repetitions = 2;
    c.seed = 5;
    return c;
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

TEST(Config, Defaults) {
    const ExperimentConfig c;
    EXPECT_EQ(c.initial_fraction, 0.10);
    EXPECT_EQ(c.budget_fraction, 0.05);
    EXPECT_EQ(c.target_fractions, (std::vector<double>{0.10, 0.15, 0.20, 0.25, 0.30, 0.35, 0.40}));
    EXPECT_EQ(c.repetitions, 5);
    EXPECT_FALSE(c.ablation.any());
    EXPECT_FALSE(c.bias.has_value());
}

TEST(Config, JsonRoundTrip) {
    ExperimentConfig c = tiny(Strategy::Coreset);
    c.bias = BiasConfig{1, 9};
    c.oracle = {OracleKind::Noisy, 0.2, 4};
    c.model.task_dropout.reset();
    const auto j = to_json(c);
    EXPECT_EQ(to_json(config_from_json(j)), j);
    EXPECT_EQ(config_from_json(nlohmann::json::object()).target_fractions.size(), 7u);
}

TEST(Config, RejectsUnknownAndMalformed) {
    EXPECT_THROW(config_from_json({{"strategi", "vaal"}}), ConfigError);
    EXPECT_THROW(config_from_json({{"train", {{"epoch", 3}}}}), ConfigError);
    EXPECT_THROW(config_from_json({{"train", {{"epochs", "many"}}}}), ConfigError);
    EXPECT_THROW(config_from_json({{"strategy", "qbc"}}), ConfigError);
    EXPECT_THROW(config_from_json({{"repetitions", 0}}), ConfigError);
    EXPECT_THROW(config_from_json({{"ablation", {{"no_vae", true}, {"frozen_vae", true}}}}), ConfigError);
    EXPECT_THROW(config_from_json({{"oracle", {{"kind", "external"}}}}), ConfigError);
}

TEST(Config, LoadsCommentedFile) {
    const std::string dir = test_util::temp_dir("harness_cfg").string();
    const std::string path = dir + "/c.json";
    std::ofstream(path) << "{\n  // desk run\n  \"strategy\": \"random\", \"repetitions\": 3\n}\n";
    const auto c = load_config(path);
    EXPECT_EQ(c.strategy, Strategy::Random);
    EXPECT_EQ(c.repetitions, 3);
    EXPECT_THROW(load_config(dir + "/missing.json"), ConfigError);
    std::ofstream(dir + "/bad.json") << "{ strategy: ";
    EXPECT_THROW(load_config(dir + "/bad.json"), ConfigError);
}

TEST(Config, DatasetPathIsRelativeToConfigFile) {
    const auto dir = test_util::temp_dir("harness_relpath");
    std::ofstream((dir / "c.json").string()) << R"({"dataset": {"kind": "file", "path": "data/d.vds"}})";
    EXPECT_EQ(load_config((dir / "c.json").string()).dataset.path, (dir / "data/d.vds").string());
    std::ofstream((dir / "abs.json").string()) << R"({"dataset": {"kind": "file", "path": "/srv/d.vds"}})";
    EXPECT_EQ(load_config((dir / "abs.json").string()).dataset.path, "/srv/d.vds");
}

TEST(Schedule, Cifar10Echo) {
    const auto s = make_schedule(preset("cifar10"), 50000);
    EXPECT_EQ(s.initial, 5000u);
    EXPECT_EQ(s.budget, 2500u);
    ASSERT_EQ(s.targets.size(), 7u);
    for (std::size_t k = 0; k < 7; ++k) EXPECT_EQ(s.targets[k], 5000u + k * 2500u);
    EXPECT_EQ(s.rounds, 6u);
}

TEST(Schedule, BudgetSweepSharesFractions) {
    ExperimentConfig small, large;
    small.target_fractions = large.target_fractions = {0.10, 0.20, 0.30, 0.40};
    large.budget_fraction = 0.10;
    const auto a = make_schedule(small, 50000), b = make_schedule(large, 50000);
    EXPECT_EQ(a.targets, b.targets);
    EXPECT_EQ(a.rounds, 6u);
    EXPECT_EQ(b.rounds, 3u);
}

TEST(Schedule, Invalid) {
    ExperimentConfig c;
    c.target_fractions = {0.10, 0.17};
    EXPECT_THROW(make_schedule(c, 1000), ConfigError);
    c.target_fractions = {0.10, 0.20, 0.15};
    EXPECT_THROW(make_schedule(c, 1000), ConfigError);
    c.target_fractions = {0.15, 0.20};
    EXPECT_THROW(make_schedule(c, 1000), ConfigError);
    c.target_fractions = {0.10};
    EXPECT_EQ(make_schedule(c, 1000).rounds, 0u);
    EXPECT_THROW(make_schedule(c, 5), ConfigError);
}

TEST(Presets, PublishedHyperparameters) {
    const auto c10 = preset("cifar10");
    EXPECT_EQ(c10.model.latent_dim, 32);
    EXPECT_EQ(c10.train.alpha1, 5e-4);
    EXPECT_EQ(c10.train.lambda1, 1.0);
    EXPECT_EQ(c10.train.lambda2, 1.0);
    EXPECT_EQ(c10.train.beta, 1.0);
    EXPECT_EQ(c10.train.batch_size, 64);
    EXPECT_EQ(c10.train.epochs, 100);
    const auto cal = preset("caltech256");
    EXPECT_EQ(cal.model.latent_dim, 64);
    EXPECT_EQ(cal.train.lambda2, 10.0);
    const auto in = preset("imagenet");
    EXPECT_EQ(in.train.alpha1, 1e-1);
    EXPECT_EQ(in.train.alpha2, 1e-3);
    EXPECT_EQ(in.train.alpha3, 1e-3);
    EXPECT_THROW(preset("mnist"), ConfigError);
}

TEST(Plan, AblationWiring) {
    const Dataset ds = make_gaussian_mixture(tiny().dataset.synthetic);
    ExperimentConfig c = tiny(Strategy::Random);
    EXPECT_FALSE(make_plan(c, ds).train.adversarial);

    c.ablation.no_vae = true;
    auto p = make_plan(c, ds);
    EXPECT_EQ(p.strategy, Strategy::Vaal);
    EXPECT_EQ(nn::make_models(p.model, 1).disc.input_dim(), 6);

    c.ablation = {false, true, false};
    p = make_plan(c, ds);
    EXPECT_FALSE(p.train.update_vae);

    c.ablation = {false, false, true};
    p = make_plan(c, ds);
    EXPECT_EQ(p.strategy, Strategy::Wasserstein);
    EXPECT_EQ(p.train.lambda2, 0.0);
    EXPECT_EQ(p.train.alpha2, 0.0);
    EXPECT_TRUE(p.train.adversarial);
}

TEST(Plan, FrozenVaeKeepsItsParameters) {
    ExperimentConfig c = tiny();
    c.ablation.frozen_vae = true;
    const Dataset ds = make_gaussian_mixture(c.dataset.synthetic);
    const auto p = make_plan(c, ds);
    const auto pool = init_pools(ds, 0.1, std::nullopt, 3);
    const auto init = nn::make_models(p.model, 8);
    const auto out = trainer::train(pool, ds, init, p.train).models;
    EXPECT_EQ(nn::parameter_hash(out.vae.parameters()), nn::parameter_hash(init.vae.parameters()));
    EXPECT_NE(nn::parameter_hash(out.disc.parameters()), nn::parameter_hash(init.disc.parameters()));
}

TEST(RunExperiment, BaselineOnlyWhenSingleFraction) {
    ExperimentConfig c = tiny();
    c.target_fractions = {0.10};
    c.repetitions = 1;
    int rounds = 0;
    const auto curve = run_experiment(c, {[&](const RoundRecord& r) {
        ++rounds;
        EXPECT_EQ(r.sampling_seconds, 0.0);
    }});
    EXPECT_EQ(rounds, 1);
    ASSERT_EQ(curve.points.size(), 1u);
    EXPECT_EQ(curve.points[0].labeled_fraction, 0.10);
    EXPECT_EQ(curve.points[0].std, 0.0);
}

TEST(RunExperiment, CurveShapeAndFreshInit) {
    const ExperimentConfig c = tiny();
    std::vector<RoundRecord> records;
    const auto curve = run_experiment(c, {[&](const RoundRecord& r) { records.push_back(r); }});
    ASSERT_EQ(curve.points.size(), 3u);
    for (std::size_t k = 0; k < 3; ++k) {
        EXPECT_EQ(curve.points[k].labeled_fraction, c.target_fractions[k]);
        EXPECT_GE(curve.points[k].std, 0.0);
        EXPECT_GE(curve.points[k].mean, 0.0);
        EXPECT_LE(curve.points[k].mean, 1.0);
    }
    EXPECT_GT(curve.points[0].time, 0.0);
    EXPECT_EQ(curve.points[2].time, 0.0);
    ASSERT_EQ(curve.runs.size(), 2u);
    EXPECT_NE(curve.runs[0].seed, curve.runs[1].seed);
    for (const auto& r : curve.runs) EXPECT_EQ(r.labeled, (std::vector<std::size_t>{20, 30, 40}));

    ASSERT_EQ(records.size(), 6u);
    std::set<std::uint64_t> hashes;
    for (const auto& r : records) hashes.insert(r.task_init_hash);
    EXPECT_EQ(hashes.size(), 6u);
    for (const auto& r : records) EXPECT_EQ(r.epochs.size(), 2u);
}

TEST(RunExperiment, DeterministicAndReplayable) {
    const ExperimentConfig c = tiny(Strategy::MaxEntropy);
    const auto a = run_experiment(c);
    const auto b = run_experiment(c);
    for (std::size_t k = 0; k < a.points.size(); ++k) {
        EXPECT_EQ(a.points[k].mean, b.points[k].mean);
        EXPECT_EQ(a.points[k].std, b.points[k].std);
    }
    const Dataset ds = load_dataset(c.dataset);
    const Oracle oracle(c.oracle, ds);
    EXPECT_EQ(run_repetition(c, ds, oracle, 1).accuracy, a.runs[1].accuracy);
}

TEST(RunExperiment, EveryStrategyRuns) {
    for (Strategy s : {Strategy::Random, Strategy::McDropout, Strategy::Coreset, Strategy::EnsembleVarR, Strategy::Wasserstein}) {
        ExperimentConfig c = tiny(s);
        c.repetitions = 1;
        const auto curve = run_experiment(c);
        EXPECT_EQ(curve.name, acquisition::to_string(s));
        EXPECT_EQ(curve.points.size(), 3u);
    }
}

TEST(RunExperiment, BiasedNoisySetup) {
    ExperimentConfig c = tiny(Strategy::Random);
    c.dataset.synthetic.superclass_size = 2;
    c.bias = BiasConfig{1, 2};
    c.oracle = {OracleKind::Noisy, 0.2, 3};
    c.repetitions = 1;
    EXPECT_EQ(run_experiment(c).points.size(), 3u);
}

TEST(RunExperiment, FailureCarriesContext) {
    ExperimentConfig c = tiny(Strategy::Random);
    c.train.alpha3 = 1e300;
    c.repetitions = 1;
    try {
        run_experiment(c);
        FAIL() << "expected a numeric failure";
    } catch (const NumericFailure& e) {
        EXPECT_NE(std::string(e.what()).find("repetition 0"), std::string::npos) << e.what();
        EXPECT_NE(std::string(e.what()).find("round 0"), std::string::npos) << e.what();
    }
}

TEST(RunAblation, RequiresAFlag) {
    EXPECT_THROW(run_ablation(tiny()), ConfigError);
    ExperimentConfig c = tiny();
    c.ablation = {true, false, true};
    EXPECT_THROW(run_ablation(c), ConfigError);
}

TEST(RunAblation, ReturnsReferenceAndVariant) {
    ExperimentConfig c = tiny();
    c.repetitions = 1;
    c.ablation.no_discriminator = true;
    const auto curves = run_ablation(c);
    ASSERT_EQ(curves.size(), 2u);
    EXPECT_EQ(curves[0].name, "vaal");
    EXPECT_EQ(curves[1].name, "no_discriminator");
    EXPECT_EQ(curves[0].points.size(), curves[1].points.size());
}

TEST(TimeSampling, MedianAndStableSelection) {
    ExperimentConfig c = tiny();
    const auto rows = time_sampling(c, {Strategy::Vaal, Strategy::Random, Strategy::Coreset, Strategy::EnsembleVarR});
    ASSERT_EQ(rows.size(), 4u);
    for (const auto& r : rows) {
        EXPECT_EQ(r.seconds.size(), 3u);
        EXPECT_TRUE(r.stable_selection);
        std::vector<double> s = r.seconds;
        std::sort(s.begin(), s.end());
        EXPECT_EQ(r.median_seconds, s[1]);
    }
}

TEST(Export, EmptyAndRowCounts) {
    EXPECT_EQ(curves_csv({}), "strategy,fraction,mean,std,time\n");
    Curve c{"vaal", {}, {}};
    for (int k = 0; k < 7; ++k) c.points.push_back({0.1 + 0.05 * k, 0.5 + 0.01 * k, 0.01, 0.002});
    const auto csv = curves_csv({c});
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 8);
}

TEST(Export, RoundTripExact) {
    Rng rng(4);
    std::vector<Curve> curves;
    for (const char* name : {"vaal", "random"}) {
        Curve c{name, {}, {}};
        for (int k = 0; k < 7; ++k) c.points.push_back({0.1 + 0.05 * k, rng.uniform(), rng.uniform() * 1e-3, rng.uniform() * 1e-7});
        curves.push_back(c);
    }
    const auto back = parse_curves_csv(curves_csv(curves));
    ASSERT_EQ(back.size(), 2u);
    for (std::size_t i = 0; i < 2; ++i) {
        EXPECT_EQ(back[i].name, curves[i].name);
        EXPECT_EQ(back[i].points, curves[i].points);
    }
    EXPECT_THROW(parse_curves_csv("fraction,mean\n"), IoError);
}

TEST(Export, FilesAreBitStable) {
    const std::string dir = test_util::temp_dir("harness_export").string();
    ExperimentConfig cfg = tiny();
    Curve c{"vaal", {{0.1, 0.5, 0.0, 0.25}}, {{repetition_seed(5, 0), {0.5}, {0.0}, {20}}}};
    export_results({c}, cfg, dir + "/a");
    export_results({c}, cfg, dir + "/b");
    EXPECT_EQ(slurp(dir + "/a/curves.csv"), slurp(dir + "/b/curves.csv"));
    EXPECT_EQ(slurp(dir + "/a/manifest.json"), slurp(dir + "/b/manifest.json"));
    const auto m = nlohmann::json::parse(slurp(dir + "/a/manifest.json"));
    EXPECT_EQ(m["build_id"], VAAL_BUILD_ID);
    EXPECT_EQ(m["seeds"].size(), 2u);
    EXPECT_EQ(m["seeds"][0].get<std::uint64_t>(), repetition_seed(5, 0));
    EXPECT_EQ(config_from_json(m["config"]).seed, 5u);

    std::ofstream(dir + "/file") << "x";
    EXPECT_THROW(export_results({c}, cfg, dir + "/file/sub"), IoError);
}

TEST(RoundLog, RebuildsTheCurve) {
    const ExperimentConfig c = tiny(Strategy::Random);
    std::vector<nlohmann::json> log;
    RunHooks hooks;
    hooks.on_round = [&](const RoundRecord& r) { log.push_back(nlohmann::json::parse(round_json("random", r).dump())); };
    const Curve curve = run_experiment(c, hooks);
    const auto rebuilt = curves_from_rounds(log, c, 200);
    ASSERT_EQ(rebuilt.size(), 1u);
    EXPECT_EQ(rebuilt[0].name, "random");
    EXPECT_EQ(rebuilt[0].points, curve.points);
}

TEST(RoundLog, PartialRunKeepsReachedFractions) {
    const ExperimentConfig c = tiny(Strategy::Random);
    std::vector<nlohmann::json> log;
    RunHooks hooks;
    hooks.on_round = [&](const RoundRecord& r) { log.push_back(round_json("random", r)); };
    const Curve curve = run_experiment(c, hooks);
    log.pop_back();  // second repetition dies before its last round
    const auto rebuilt = curves_from_rounds(log, c, 200);
    ASSERT_EQ(rebuilt[0].points.size(), 3u);
    EXPECT_EQ(rebuilt[0].points[0], curve.points[0]);
    EXPECT_EQ(rebuilt[0].points[2].mean, curve.runs[0].accuracy[2]);
    EXPECT_EQ(rebuilt[0].points[2].std, 0.0);
    log.resize(1);
    EXPECT_EQ(curves_from_rounds(log, c, 200)[0].points.size(), 1u);
}
