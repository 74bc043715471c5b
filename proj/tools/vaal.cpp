#include "vaal/harness/experiment.hpp"
#include "vaal/pool/dataset_io.hpp"
#include "vaal/pool/synthetic.hpp"
#include "vaal/service/http.hpp"

#include <CLI11.hpp>

#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <pthread.h>
#include <thread>

using namespace vaal;
using namespace vaal::harness;
namespace fs = std::filesystem;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;

struct ConfigSource {
    std::string file;
    std::string preset;
    std::string strategy;
    int repetitions = -1;
    long long seed = -1;
    int epochs = -1;

    void add_to(CLI::App* cmd) {
        cmd->add_option("config", file, "experiment config (JSON, comments allowed)");
        cmd->add_option("--preset", preset, "desk (default), cifar10, cifar100, caltech256 or imagenet");
        cmd->add_option("--strategy", strategy, "override the acquisition strategy");
        cmd->add_option("--repetitions", repetitions, "override the repetition count");
        cmd->add_option("--seed", seed, "override the master seed");
        cmd->add_option("--epochs", epochs, "override training epochs per round");
    }

    ExperimentConfig load() const {
        if (!file.empty() && !preset.empty()) throw ConfigError("give either a config file or --preset, not both");
        ExperimentConfig c = !file.empty() ? load_config(file) : harness::preset(preset.empty() ? "desk" : preset);
        if (!strategy.empty()) c.strategy = acquisition::parse_strategy(strategy);
        if (repetitions >= 0) c.repetitions = repetitions;
        if (seed >= 0) c.seed = static_cast<std::uint64_t>(seed);
        if (epochs >= 0) c.train.epochs = epochs;
        validate(c);
        return c;
    }
};

std::string output_dir(const std::string& flag) {
    if (!flag.empty()) return flag;
    if (const char* env = std::getenv("VAAL_OUTPUT_DIR"); env && *env) return env;
    return "vaal_out";
}

/// Appends each finished round to <dir>/rounds.jsonl so a crash keeps what ran.
class RoundLog {
public:
    explicit RoundLog(const std::string& dir) {
        fs::create_directories(dir);
        path_ = (fs::path(dir) / "rounds.jsonl").string();
        out_.open(path_, std::ios::trunc);
        if (!out_) throw IoError("cannot write " + path_);
    }

    RunHooks hooks(const std::string& curve) {
        RunHooks h;
        h.on_round = [this, curve](const RoundRecord& r) {
            out_ << round_json(curve, r).dump() << '\n';
            out_.flush();
            std::cerr << curve << " rep " << r.repetition << " round " << r.round << ": labeled " << r.labeled << ", accuracy "
                      << r.accuracy << '\n';
        };
        return h;
    }

private:
    std::string path_;
    std::ofstream out_;
};

void print_curves(const std::vector<Curve>& curves) {
    for (const auto& c : curves) {
        std::cout << c.name << '\n';
        for (const auto& p : c.points)
            std::printf("  %5.2f  %.4f +- %.4f  (%.3gs)\n", p.labeled_fraction, p.mean, p.std, p.time);
    }
}

int cmd_run(const ConfigSource& src, const std::string& out_flag) {
    const ExperimentConfig cfg = src.load();
    const std::string dir = output_dir(out_flag);
    RoundLog log(dir);
    const std::vector<Curve> curves{run_experiment(cfg, log.hooks(curve_name(cfg)))};
    export_results(curves, cfg, dir);
    print_curves(curves);
    std::cout << "results in " << dir << '\n';
    return 0;
}

int cmd_ablate(const ConfigSource& src, const std::string& out_flag, const std::vector<std::string>& flags) {
    ExperimentConfig cfg = src.load();
    for (const auto& f : flags) {
        if (f == "no_vae") cfg.ablation.no_vae = true;
        else if (f == "frozen_vae") cfg.ablation.frozen_vae = true;
        else if (f == "no_discriminator") cfg.ablation.no_discriminator = true;
        else throw ConfigError("unknown ablation: " + f);
    }
    if (!cfg.ablation.any()) throw ConfigError("ablate: set an ablation in the config or pass --variant");
    validate(cfg);
    const std::string dir = output_dir(out_flag);
    RoundLog log(dir);
    ExperimentConfig reference = cfg;
    reference.ablation = {};
    reference.strategy = acquisition::Strategy::Vaal;
    const std::vector<Curve> curves{run_experiment(reference, log.hooks(curve_name(reference))),
                                    run_experiment(cfg, log.hooks(curve_name(cfg)))};
    export_results(curves, cfg, dir);
    print_curves(curves);
    std::cout << "results in " << dir << '\n';
    return 0;
}

int cmd_time(const ConfigSource& src, const std::string& out_flag, const std::vector<std::string>& names, int repeats, int warmup) {
    const ExperimentConfig cfg = src.load();
    std::vector<acquisition::Strategy> strategies;
    for (const auto& n : names) strategies.push_back(acquisition::parse_strategy(n));
    const auto rows = time_sampling(cfg, strategies, {repeats, warmup});
    const std::string dir = output_dir(out_flag);
    fs::create_directories(dir);
    std::ofstream csv(fs::path(dir) / "timing.csv", std::ios::trunc);
    if (!csv) throw IoError("cannot write timing.csv in " + dir);
    csv << "strategy,median_seconds\n";
    for (const auto& r : rows) {
        csv << acquisition::to_string(r.strategy) << ',' << format_double(r.median_seconds) << '\n';
        std::printf("%-14s %10.6f s%s\n", acquisition::to_string(r.strategy).c_str(), r.median_seconds,
                    r.stable_selection ? "" : "  (selection varied between runs)");
    }
    return 0;
}

int cmd_export(const ConfigSource& src, const std::string& out_flag, const std::string& rounds_path) {
    const ExperimentConfig cfg = src.load();
    const std::string dir = output_dir(out_flag);
    const std::string path = rounds_path.empty() ? (fs::path(dir) / "rounds.jsonl").string() : rounds_path;
    std::ifstream in(path);
    if (!in) throw IoError("cannot read " + path);
    std::vector<nlohmann::json> rounds;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        try {
            rounds.push_back(nlohmann::json::parse(line));
        } catch (const nlohmann::json::exception&) {
            break;  // torn last line of an interrupted run
        }
    }
    const Dataset ds = load_dataset(cfg.dataset);
    const auto curves = curves_from_rounds(rounds, cfg, ds.split.train.size());
    export_results(curves, cfg, dir);
    print_curves(curves);
    return 0;
}

int cmd_gen_data(const SyntheticSpec& spec, const std::string& out) {
    if (out.empty()) throw ConfigError("gen-data: --out is required");
    const Dataset ds = make_gaussian_mixture(spec);
    if (const auto parent = fs::path(out).parent_path(); !parent.empty()) fs::create_directories(parent);
    write_dataset(ds, out);
    std::cout << "wrote " << ds.size() << " samples (" << ds.split.train.size() << " train, " << ds.split.test.size() << " test, "
              << ds.class_count << " classes, dim " << ds.feature_dim() << ") to " << out << '\n';
    return 0;
}

int cmd_serve(const std::vector<std::string>& configs, const std::string& data_dir, const std::string& host, int port, bool auto_advance) {
    if (configs.empty()) throw ConfigError("serve: at least one --experiment-config is required");
    std::vector<service::ServiceConfig> services;
    for (const auto& path : configs) {
        service::ServiceConfig s;
        s.experiment = load_config(path);
        s.experiment_id = fs::path(path).stem().string();
        s.data_dir = data_dir;
        s.auto_advance = auto_advance;
        services.push_back(std::move(s));
    }

    // SIGINT/SIGTERM are taken synchronously by a watcher thread
    sigset_t set;
    sigemptyset(&set);
    sigaddset(&set, SIGINT);
    sigaddset(&set, SIGTERM);
    pthread_sigmask(SIG_BLOCK, &set, nullptr);

    service::LabelService svc(services);
    service::HttpServer server(svc);
    const int bound = server.bind(host, port);
    std::cout << "listening on http://" << host << ':' << bound << "/v1 (experiments:";
    for (const auto& id : svc.ids()) std::cout << ' ' << id;
    std::cout << ')' << std::endl;

    std::thread watcher([&] {
        int sig = 0;
        sigwait(&set, &sig);
        server.stop();
    });
    server.listen_after_bind();
    if (watcher.joinable()) {
        pthread_kill(watcher.native_handle(), SIGTERM);
        watcher.join();
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"vaal: variational adversarial active learning"};
    app.require_subcommand(1);
    std::string out;
    app.add_option("--out", out, "output directory (default: $VAAL_OUTPUT_DIR, else ./vaal_out)");

    ConfigSource run_src, ablate_src, time_src, export_src;
    auto* run = app.add_subcommand("run", "run an active-learning experiment");
    run_src.add_to(run);

    auto* ablate = app.add_subcommand("ablate", "run an ablation next to full VAAL under the same seeds");
    ablate_src.add_to(ablate);
    std::vector<std::string> variants;
    ablate->add_option("--variant", variants, "no_vae, frozen_vae or no_discriminator");

    auto* timing = app.add_subcommand("time", "time one sampling iteration per strategy");
    time_src.add_to(timing);
    std::vector<std::string> strategies{"vaal", "random", "max_entropy", "mc_dropout", "coreset", "ensemble_varr"};
    int repeats = 3, warmup = 1;
    timing->add_option("--strategies", strategies, "strategies to time");
    timing->add_option("--repeats", repeats, "timed runs per strategy")->check(CLI::PositiveNumber);
    timing->add_option("--warmup", warmup, "untimed warm-up runs")->check(CLI::NonNegativeNumber);

    auto* exp = app.add_subcommand("export", "rebuild curves.csv and manifest.json from a round log");
    export_src.add_to(exp);
    std::string rounds_path;
    exp->add_option("--rounds", rounds_path, "round log (default: <out>/rounds.jsonl)");

    auto* gen = app.add_subcommand("gen-data", "write a seeded Gaussian-mixture dataset");
    SyntheticSpec spec;
    std::string gen_out;
    gen->add_option("--classes", spec.classes);
    gen->add_option("--dim", spec.dim);
    gen->add_option("--per-class", spec.per_class, "train samples per class");
    gen->add_option("--test-per-class", spec.test_per_class);
    gen->add_option("--clusters-per-class", spec.clusters_per_class);
    gen->add_option("--center-scale", spec.center_scale);
    gen->add_option("--superclass-size", spec.superclass_size);
    gen->add_option("--seed", spec.seed);
    gen->add_option("--out", gen_out, "dataset file to write")->required();

    auto* show = app.add_subcommand("preset", "print a preset as an editable config file");
    std::string preset_name = "desk";
    show->add_option("name", preset_name, "desk, cifar10, cifar100, caltech256 or imagenet");

    auto* serve = app.add_subcommand("serve", "serve label batches over HTTP");
    std::vector<std::string> exp_configs;
    std::string data_dir = "vaal_data", host = "127.0.0.1";
    int port = 8080;
    bool auto_advance = false;
    serve->add_option("--experiment-config", exp_configs, "experiment config; the file stem is the experiment id")->required();
    serve->add_option("--data-dir", data_dir, "journal and checkpoint directory");
    serve->add_option("--host", host);
    serve->add_option("--port", port)->check(CLI::Range(0, 65535));
    serve->add_flag("--auto-advance", auto_advance, "train and open the next batch after each close");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitConfig;
    }

    try {
        if (*run) return cmd_run(run_src, out);
        if (*ablate) return cmd_ablate(ablate_src, out, variants);
        if (*timing) return cmd_time(time_src, out, strategies, repeats, warmup);
        if (*exp) return cmd_export(export_src, out, rounds_path);
        if (*gen) return cmd_gen_data(spec, gen_out);
        if (*show) {
            std::cout << to_json(harness::preset(preset_name)).dump(2) << '\n';
            return 0;
        }
        if (*serve) return cmd_serve(exp_configs, data_dir, host, port, auto_advance);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const NumericFailure& e) {
        std::cerr << "numeric failure: " << e.what() << '\n';
        return kExitNumeric;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
