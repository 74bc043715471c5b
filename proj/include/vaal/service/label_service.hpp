#pragma once

#include "vaal/harness/experiment.hpp"
#include "vaal/nn/checkpoint.hpp"
#include "vaal/service/journal.hpp"

#include <json.hpp>

#include <Eigen/Eigenvalues>

#include <atomic>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

namespace vaal::service {

using nlohmann::json;

struct ServiceConfig {
    std::string experiment_id = "default";
    harness::ExperimentConfig experiment;
    std::string data_dir = "vaal_data";
    bool auto_advance = false;  // after a close: train the next round and open its batch
};

struct LabelSubmission {
    std::string batch_id;
    Index index = 0;
    int label = -1;
    std::string annotator_id;
    std::string submitted_at;
};

struct Ack {
    std::uint64_t seq = 0;
    bool correction = false;
    std::size_t labeled_in_batch = 0;
    std::size_t batch_size = 0;
};

struct RoundSummary {
    int round = 0;
    std::size_t labeled = 0;
    std::size_t unlabeled = 0;
    std::size_t batch_size = 0;
};

inline std::string utc_now() {
    const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

inline std::string base64(const unsigned char* data, std::size_t n) {
    static constexpr char table[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
    std::string out;
    out.reserve((n + 2) / 3 * 4);
    for (std::size_t i = 0; i < n; i += 3) {
        const std::uint32_t a = data[i], b = i + 1 < n ? data[i + 1] : 0u, c = i + 2 < n ? data[i + 2] : 0u;
        const std::uint32_t v = (a << 16) | (b << 8) | c;
        out += table[(v >> 18) & 63];
        out += table[(v >> 12) & 63];
        out += i + 1 < n ? table[(v >> 6) & 63] : '=';
        out += i + 2 < n ? table[v & 63] : '=';
    }
    return out;
}

/// Rows of `x` projected on its two leading principal axes.
inline Matrix pca_2d(const Matrix& x) {
    const RowVector mean = x.colwise().mean();
    const Matrix centred = x.rowwise() - mean;
    const Matrix cov = centred.transpose() * centred / std::max<double>(1.0, static_cast<double>(x.rows() - 1));
    Eigen::SelfAdjointEigenSolver<Matrix> eig(cov);
    const Eigen::Index d = cov.rows();
    Matrix axes = Matrix::Zero(d, 2);
    for (Eigen::Index k = 0; k < std::min<Eigen::Index>(2, d); ++k) {
        Eigen::VectorXd v = eig.eigenvectors().col(d - 1 - k);
        // sign convention: largest-magnitude component positive
        Eigen::Index arg;
        v.cwiseAbs().maxCoeff(&arg);
        if (v[arg] < 0) v = -v;
        axes.col(k) = v;
    }
    return centred * axes;
}

/// One experiment behind the service: pool, open batch, trained models and
/// its journal. Every mutation goes journal-first through apply().
class Experiment {
public:
    explicit Experiment(const ServiceConfig& cfg) : cfg_(cfg) {
        if (cfg.experiment_id.empty() || cfg.experiment_id.find('/') != std::string::npos)
            throw ConfigError("service: invalid experiment id '" + cfg.experiment_id + "'");
        harness::ExperimentConfig ec = cfg.experiment;
        ec.oracle.kind = OracleKind::Ideal;  // only the initial pool is labeled by the dataset
        harness::validate(ec);
        ds_ = harness::load_dataset(ec.dataset);
        plan_ = harness::make_plan(ec, ds_);
        sched_ = harness::make_schedule(ec, ds_.split.train.size());
        root_ = Rng(harness::repetition_seed(ec.seed, 0));
        pool_ = init_pools(ds_, ec.initial_fraction, ec.bias, root_.split(1)());
        projection_ = pca_2d(ds_.rows(ds_.split.train));
        for (std::size_t k = 0; k < ds_.split.train.size(); ++k) train_pos_[ds_.split.train[k]] = k;

        dir_ = std::filesystem::path(cfg.data_dir) / cfg.experiment_id;
        std::filesystem::create_directories(dir_);
        auto [journal, log] = Journal::open((dir_ / "journal.vaal").string());
        journal_ = std::move(journal);
        replay_dropped_bytes_ = log.dropped_bytes;
        const json header{{"type", "experiment"}, {"id", cfg.experiment_id}, {"config", harness::to_json(cfg.experiment)}};
        if (log.records.empty()) {
            journal_.append(header);
        } else {
            const auto& first = log.records.front();
            if (first.value("type", "") != "experiment" || first["config"] != header["config"])
                throw ConfigError("service: journal in " + dir_.string() + " belongs to a different experiment config");
            for (std::size_t k = 1; k < log.records.size(); ++k) apply(log.records[k]);
        }
        publish();
    }

    const std::string& id() const { return cfg_.experiment_id; }
    const Dataset& dataset() const { return ds_; }
    std::size_t replay_dropped_bytes() const { return replay_dropped_bytes_; }

    // --- writers --------------------------------------------------------------

    /// Trains fresh models for the current round on the current labeled pool.
    json train() {
        std::lock_guard lock(writer_);
        if (batch_) throw Conflict("train: batch " + batch_->batch_id + " is open");
        if (terminal()) throw PreconditionFailed("train: experiment finished");
        if (trained_round_ == pool_.round && models_) return metrics_json();
        const int round = pool_.round;
        models_ = harness::train_round(cfg_.experiment, plan_, pool_, ds_, round_seed(round), true);
        const double acc = harness::test_accuracy(models_->models.task, ds_);
        const std::string ckpt = checkpoint_name(round);
        nn::save_checkpoint(models_->models, (dir_ / ckpt).string());
        const json rec{{"type", "trained"}, {"round", round}, {"accuracy", acc}, {"checkpoint", ckpt}};
        journal_.append(rec);
        apply(rec);
        publish();
        return metrics_json();
    }

    /// Runs the configured strategy and publishes the batch.
    json open_batch() {
        std::lock_guard lock(writer_);
        if (batch_) throw Conflict("open_batch: batch " + batch_->batch_id + " is already open");
        if (terminal()) throw PreconditionFailed("open_batch: experiment finished");
        if (trained_round_ != pool_.round) throw PreconditionFailed("open_batch: round " + std::to_string(pool_.round) + " has no trained models");
        ensure_models();
        const std::size_t budget = std::min(sched_.budget, pool_.unlabeled.size());
        acquisition::AcquisitionRequest req{plan_.strategy, budget, root_.split(200 + static_cast<std::uint64_t>(pool_.round))(),
                                            cfg_.experiment.strategy_params};
        acquisition::AcquisitionContext ctx{pool_, ds_, &models_->models, models_->ensemble};
        const auto picked = acquisition::acquire(req, ctx);
        const json rec{{"type", "open"},
                       {"batch_id", id() + "-r" + std::to_string(pool_.round)},
                       {"round", pool_.round},
                       {"strategy", acquisition::to_string(plan_.strategy)},
                       {"indices", picked.selected},
                       {"scores", picked.scores},
                       {"created_at", utc_now()}};
        journal_.append(rec);
        apply(rec);
        publish();
        return batch_view_locked();
    }

    Ack submit_label(const LabelSubmission& sub) {
        std::lock_guard lock(writer_);
        if (!batch_ || batch_->batch_id != sub.batch_id) throw NotFound("submit_label: no open batch '" + sub.batch_id + "'");
        if (!batch_->members.count(sub.index))
            throw NotFound("submit_label: index " + std::to_string(sub.index) + " is not in batch " + sub.batch_id);
        if (sub.label < 0 || sub.label >= ds_.class_count)
            throw ValidationError("submit_label: class " + std::to_string(sub.label) + " outside [0, " + std::to_string(ds_.class_count) + ")");
        const bool correction = batch_->labels.count(sub.index) > 0;
        const json rec{{"type", "label"},
                       {"batch_id", sub.batch_id},
                       {"index", sub.index},
                       {"label", sub.label},
                       {"annotator_id", sub.annotator_id},
                       {"submitted_at", sub.submitted_at.empty() ? utc_now() : sub.submitted_at},
                       {"correction", correction}};
        const std::uint64_t seq = journal_.append(rec);
        apply(rec);
        publish();
        return {seq, correction, batch_->labels.size(), batch_->indices.size()};
    }

    RoundSummary close_batch(const std::string& batch_id) {
        std::lock_guard lock(writer_);
        if (!batch_ || (!batch_id.empty() && batch_->batch_id != batch_id))
            throw NotFound("close_batch: no open batch '" + batch_id + "'");
        std::vector<Index> missing;
        for (Index i : batch_->indices)
            if (!batch_->labels.count(i)) missing.push_back(i);
        if (!missing.empty()) {
            std::string list;
            for (std::size_t k = 0; k < missing.size() && k < 20; ++k) list += (k ? ", " : "") + std::to_string(missing[k]);
            if (missing.size() > 20) list += ", ...";
            throw PreconditionFailed("close_batch: " + std::to_string(missing.size()) + " unlabeled in batch " + batch_->batch_id +
                                     ": " + list);
        }
        const std::size_t size = batch_->indices.size();
        const json rec{{"type", "close"}, {"batch_id", batch_->batch_id}, {"round", pool_.round}};
        journal_.append(rec);
        apply(rec);
        publish();
        return {pool_.round, pool_.labeled.size(), pool_.unlabeled.size(), size};
    }

    // --- readers: served from the last published view ---------------------------

    json status() const { return view()->status; }
    bool finished() const { return view()->status["terminal"].get<bool>(); }
    json snapshot() const { return view()->snapshot; }
    /// The open batch, or null.
    json batch() const { return view()->batch; }

    // background advance (auto mode)
    void set_busy(bool b) {
        busy_ = b;
        std::lock_guard lock(writer_);
        publish();
    }
    void set_error(const std::string& e) {
        std::lock_guard lock(writer_);
        last_error_ = e;
        publish();
    }

private:
    struct OpenBatch {
        std::string batch_id;
        int round = 0;
        std::string strategy;
        std::vector<Index> indices;
        std::vector<double> scores;
        std::map<Index, std::size_t> members;  // index -> position
        std::map<Index, int> labels;
        std::string created_at;
    };
    struct View {
        json status, snapshot, batch;
    };

    ServiceConfig cfg_;
    Dataset ds_;
    harness::Plan plan_;
    harness::Schedule sched_;
    Rng root_;
    PoolState pool_;
    Matrix projection_;
    std::map<Index, std::size_t> train_pos_;
    std::filesystem::path dir_;
    Journal journal_;
    std::size_t replay_dropped_bytes_ = 0;

    std::optional<OpenBatch> batch_;
    int trained_round_ = -1;
    std::string checkpoint_;
    std::optional<harness::RoundModels> models_;
    std::optional<std::pair<int, double>> last_metrics_;
    std::string last_error_;
    std::atomic<bool> busy_{false};

    mutable std::mutex writer_;
    mutable std::mutex view_mu_;
    std::shared_ptr<const View> view_;

    std::uint64_t round_seed(int round) const { return root_.split(100 + static_cast<std::uint64_t>(round))(); }
    static std::string checkpoint_name(int round) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "round_%04d.ckpt", round);
        return buf;
    }
    bool terminal() const { return pool_.labeled.size() >= sched_.targets.back(); }

    /// State transition shared by live requests and journal replay.
    void apply(const json& rec) {
        const std::string type = rec.at("type").get<std::string>();
        if (type == "trained") {
            trained_round_ = rec.at("round").get<int>();
            checkpoint_ = rec.at("checkpoint").get<std::string>();
            last_metrics_ = {trained_round_, rec.at("accuracy").get<double>()};
            if (models_ && trained_round_ != pool_.round) models_.reset();
        } else if (type == "open") {
            OpenBatch b;
            b.batch_id = rec.at("batch_id").get<std::string>();
            b.round = rec.at("round").get<int>();
            b.strategy = rec.at("strategy").get<std::string>();
            b.indices = rec.at("indices").get<std::vector<Index>>();
            b.scores = rec.at("scores").get<std::vector<double>>();
            b.created_at = rec.at("created_at").get<std::string>();
            for (std::size_t k = 0; k < b.indices.size(); ++k) b.members[b.indices[k]] = k;
            batch_ = std::move(b);
        } else if (type == "label") {
            if (!batch_ || batch_->batch_id != rec.at("batch_id").get<std::string>()) throw IoError("journal: label for a batch that is not open");
            batch_->labels[rec.at("index").get<Index>()] = rec.at("label").get<int>();
        } else if (type == "close") {
            if (!batch_) throw IoError("journal: close without an open batch");
            std::vector<std::pair<Index, int>> labels(batch_->labels.begin(), batch_->labels.end());
            pool_ = annotate_with_labels(pool_, labels, ds_.class_count);
            batch_.reset();
            models_.reset();
        } else {
            throw IoError("journal: unknown record type '" + type + "'");
        }
    }

    void ensure_models() {
        const bool need_ensemble = plan_.strategy == acquisition::Strategy::EnsembleVarR;
        if (models_ && (!need_ensemble || !models_->ensemble.empty())) return;
        const auto path = dir_ / checkpoint_;
        if (!need_ensemble && !checkpoint_.empty() && std::filesystem::exists(path)) {
            harness::RoundModels m;
            m.models = nn::make_models(plan_.model, round_seed(pool_.round));
            nn::load_checkpoint(m.models, path.string());
            models_ = std::move(m);
            return;
        }
        // training is deterministic per round, so a rebuild reproduces the journaled state
        models_ = harness::train_round(cfg_.experiment, plan_, pool_, ds_, round_seed(pool_.round), true);
    }

    json metrics_json() const {
        if (!last_metrics_) return nullptr;
        return {{"round", last_metrics_->first}, {"accuracy", last_metrics_->second}};
    }

    json batch_view_locked() const {
        if (!batch_) return nullptr;
        json classes = json::array();
        for (int c = 0; c < ds_.class_count; ++c) classes.push_back({{"id", c}, {"name", ds_.class_name(c)}});
        json items = json::array();
        for (std::size_t k = 0; k < batch_->indices.size(); ++k) {
            const Index i = batch_->indices[k];
            const RowVector row = ds_.samples.row(static_cast<Eigen::Index>(i));
            const auto it = batch_->labels.find(i);
            const auto pos = static_cast<Eigen::Index>(train_pos_.at(i));
            items.push_back({{"index", i},
                             {"features_b64", base64(reinterpret_cast<const unsigned char*>(row.data()), static_cast<std::size_t>(row.size()) * sizeof(double))},
                             {"dtype", "f64"},
                             {"shape", ds_.shape},
                             {"projection", {projection_(pos, 0), projection_(pos, 1)}},
                             {"score", batch_->scores[k]},
                             {"label", it == batch_->labels.end() ? json(nullptr) : json(it->second)}});
        }
        return {{"batch_id", batch_->batch_id}, {"round", batch_->round},       {"strategy", batch_->strategy},
                {"created_at", batch_->created_at}, {"size", batch_->indices.size()}, {"labeled", batch_->labels.size()},
                {"completion", completion()},     {"classes", classes},          {"items", items}};
    }

    double completion() const {
        if (!batch_ || batch_->indices.empty()) return 0.0;
        return static_cast<double>(batch_->labels.size()) / static_cast<double>(batch_->indices.size());
    }

    std::string state() const {
        if (terminal()) return "finished";
        if (batch_) return "batch_open";
        if (busy_) return "training";
        if (trained_round_ == pool_.round) return "ready";
        return "untrained";
    }

    void publish() {
        auto v = std::make_shared<View>();
        json batch_summary = nullptr;
        if (batch_) {
            batch_summary = {{"batch_id", batch_->batch_id}, {"size", batch_->indices.size()}, {"labeled", batch_->labels.size()},
                             {"completion", completion()}};
        }
        v->status = {{"experiment", id()},
                     {"round", pool_.round},
                     {"labeled", pool_.labeled.size()},
                     {"unlabeled", pool_.unlabeled.size()},
                     {"budget", sched_.budget},
                     {"target_labeled", sched_.targets.back()},
                     {"state", state()},
                     {"terminal", terminal()},
                     {"completion", completion()},
                     {"batch", batch_summary},
                     {"last_metrics", metrics_json()},
                     {"last_error", last_error_.empty() ? json(nullptr) : json(last_error_)}};
        json batch_state = nullptr;
        if (batch_) {
            json labels = json::array();
            for (const auto& [i, y] : batch_->labels) labels.push_back({i, y});
            batch_state = {{"batch_id", batch_->batch_id}, {"round", batch_->round}, {"indices", batch_->indices}, {"labels", labels}};
        }
        v->snapshot = {{"experiment", id()},
                       {"pool", pool_to_json(pool_)},
                       {"batch", batch_state},
                       {"trained_round", trained_round_},
                       {"journal_seq", journal_.next_seq() - 1}};
        v->batch = batch_view_locked();
        std::lock_guard lock(view_mu_);
        view_ = std::move(v);
    }

    std::shared_ptr<const View> view() const {
        std::lock_guard lock(view_mu_);
        return view_;
    }
};

/// All experiments served from one data directory.
class LabelService {
public:
    explicit LabelService(const std::vector<ServiceConfig>& configs) {
        for (const auto& c : configs) {
            auto e = std::make_unique<Experiment>(c);
            const std::string key = e->id();
            if (experiments_.count(key)) throw ConfigError("service: duplicate experiment id " + key);
            auto_advance_[key] = c.auto_advance;
            experiments_.emplace(key, std::move(e));
        }
    }
    LabelService(const LabelService&) = delete;
    LabelService& operator=(const LabelService&) = delete;
    ~LabelService() { wait_idle(); }

    Experiment& experiment(const std::string& id) {
        auto it = experiments_.find(id);
        if (it == experiments_.end()) throw NotFound("unknown experiment '" + id + "'");
        return *it->second;
    }

    std::vector<std::string> ids() const {
        std::vector<std::string> out;
        for (const auto& [k, v] : experiments_) out.push_back(k);
        return out;
    }

    json train(const std::string& id) { return experiment(id).train(); }
    json open_batch(const std::string& id) { return experiment(id).open_batch(); }
    json batch(const std::string& id) {
        json b = experiment(id).batch();
        if (b.is_null()) throw NotFound("no batch open for experiment '" + id + "'");
        return b;
    }
    json status(const std::string& id) { return experiment(id).status(); }
    json snapshot(const std::string& id) { return experiment(id).snapshot(); }

    /// Submissions name a batch id; the owning experiment is its prefix.
    Ack submit_label(const LabelSubmission& sub) { return experiment(owner_of(sub.batch_id)).submit_label(sub); }

    RoundSummary close_batch(const std::string& id, const std::string& batch_id) {
        Experiment& e = experiment(id);
        const RoundSummary summary = e.close_batch(batch_id);
        if (auto_advance_[id]) advance_async(e);
        return summary;
    }

    void wait_idle() {
        std::lock_guard lock(workers_mu_);
        for (auto& t : workers_)
            if (t.joinable()) t.join();
        workers_.clear();
    }

private:
    std::map<std::string, std::unique_ptr<Experiment>> experiments_;
    std::map<std::string, bool> auto_advance_;
    std::mutex workers_mu_;
    std::vector<std::thread> workers_;

    std::string owner_of(const std::string& batch_id) const {
        const auto cut = batch_id.rfind("-r");
        if (cut == std::string::npos || !experiments_.count(batch_id.substr(0, cut))) throw NotFound("unknown batch '" + batch_id + "'");
        return batch_id.substr(0, cut);
    }

    void advance_async(Experiment& e) {
        std::lock_guard lock(workers_mu_);
        e.set_busy(true);
        workers_.emplace_back([&e] {
            try {
                if (!e.finished()) {
                    e.train();
                    e.open_batch();
                }
            } catch (const std::exception& ex) {
                e.set_error(ex.what());
            }
            e.set_busy(false);
        });
    }
};

}  // namespace vaal::service
