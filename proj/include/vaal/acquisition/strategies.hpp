#pragma once

// Acquisition strategies. Each maps the unlabeled pool to an ordered batch of
// `b` distinct indices, best first. "Highest score" rankings sort descending
// with ascending-index tie-break; "lowest score" ascending, same tie-break, so
// results never depend on how the pool happens to be stored.

#include "vaal/error.hpp"
#include "vaal/nn/models.hpp"
#include "vaal/pool/pool.hpp"
#include "vaal/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <concepts>
#include <cmath>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

namespace vaal::acquisition {

enum class Strategy { Vaal, Random, MaxEntropy, McDropout, Coreset, EnsembleVarR, Wasserstein };

inline std::string to_string(Strategy s) {
    switch (s) {
        case Strategy::Vaal: return "vaal";
        case Strategy::Random: return "random";
        case Strategy::MaxEntropy: return "max_entropy";
        case Strategy::McDropout: return "mc_dropout";
        case Strategy::Coreset: return "coreset";
        case Strategy::EnsembleVarR: return "ensemble_varr";
        case Strategy::Wasserstein: return "wasserstein";
    }
    return "?";
}

inline Strategy parse_strategy(const std::string& s) {
    for (Strategy k : {Strategy::Vaal, Strategy::Random, Strategy::MaxEntropy, Strategy::McDropout, Strategy::Coreset,
                       Strategy::EnsembleVarR, Strategy::Wasserstein}) {
        if (to_string(k) == s) return k;
    }
    throw ConfigError("unknown acquisition strategy: " + s);
}

struct StrategyParams {
    int mask_count = 10;
    int ensemble_size = 5;
};

struct AcquisitionRequest {
    Strategy strategy = Strategy::Vaal;
    std::size_t budget = 0;
    std::uint64_t seed = 0;
    StrategyParams params;
};

struct AcquisitionResult {
    IndexList selected;
    std::vector<double> scores;
    Strategy strategy = Strategy::Vaal;
    double wall_time = 0.0;
};

inline nlohmann::json to_json(const AcquisitionResult& r) {
    return {{"strategy", to_string(r.strategy)},
            {"budget", r.selected.size()},
            {"indices", r.selected},
            {"scores", r.scores},
            {"wall_time", r.wall_time}};
}

// ---------------------------------------------------------------------------
// ranking

inline void check_budget(std::size_t b, std::size_t available) {
    if (b == 0) throw ContractViolation("acquisition: budget must be positive");
    if (b > available)
        throw ContractViolation("acquisition: budget " + std::to_string(b) + " exceeds unlabeled pool of " + std::to_string(available));
}

/// The `b` best (index, score) pairs under `score_before`, ties by ascending index.
template <typename Less>
AcquisitionResult top_b(std::span<const Index> candidates, std::span<const double> scores, std::size_t b, Less score_before) {
    if (candidates.size() != scores.size()) throw ContractViolation("acquisition: one score per candidate required");
    check_budget(b, candidates.size());
    std::vector<std::size_t> order(candidates.size());
    std::iota(order.begin(), order.end(), 0);
    auto cmp = [&](std::size_t a, std::size_t c) {
        if (score_before(scores[a], scores[c])) return true;
        if (score_before(scores[c], scores[a])) return false;
        return candidates[a] < candidates[c];
    };
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(b), order.end(), cmp);
    AcquisitionResult r;
    for (std::size_t k = 0; k < b; ++k) {
        r.selected.push_back(candidates[order[k]]);
        r.scores.push_back(scores[order[k]]);
    }
    return r;
}

inline AcquisitionResult select_lowest(std::span<const Index> candidates, std::span<const double> scores, std::size_t b) {
    return top_b(candidates, scores, b, std::less<double>{});
}

inline AcquisitionResult select_highest(std::span<const Index> candidates, std::span<const double> scores, std::size_t b) {
    return top_b(candidates, scores, b, std::greater<double>{});
}

// ---------------------------------------------------------------------------
// score primitives

inline constexpr Eigen::Index kScoringChunk = 2048;

/// Applies `fn` to consecutive row blocks of the given samples and stacks the results.
template <typename Fn>
Matrix map_chunks(const Dataset& ds, std::span<const Index> indices, Fn&& fn) {
    Matrix out;
    for (std::size_t start = 0; start < indices.size(); start += static_cast<std::size_t>(kScoringChunk)) {
        const std::size_t len = std::min(indices.size() - start, static_cast<std::size_t>(kScoringChunk));
        const Matrix block = fn(gather_rows(ds.samples, indices.subspan(start, len)));
        if (out.size() == 0) out.resize(static_cast<Eigen::Index>(indices.size()), block.cols());
        out.middleRows(static_cast<Eigen::Index>(start), block.rows()) = block;
    }
    return out;
}

/// Shannon entropy in nats.
inline double entropy(const RowVector& p) {
    double h = 0.0;
    for (Eigen::Index k = 0; k < p.size(); ++k) {
        if (p[k] > 0.0) h -= p[k] * std::log(p[k]);
    }
    return h;
}

/// 1 - (modal vote count) / (number of voters).
inline double variation_ratio(std::span<const int> votes, int classes) {
    if (votes.empty()) throw ContractViolation("variation_ratio: no votes");
    std::vector<int> counts(static_cast<std::size_t>(classes), 0);
    for (int v : votes) ++counts.at(static_cast<std::size_t>(v));
    const int modal = *std::max_element(counts.begin(), counts.end());
    return 1.0 - static_cast<double>(modal) / static_cast<double>(votes.size());
}

struct DiagGaussian {
    RowVector mean;
    RowVector variance;
};

/// Closed-form 2-Wasserstein distance between diagonal Gaussians:
/// sqrt(|mu_a - mu_b|^2 + sum_k (sigma_a,k - sigma_b,k)^2).
inline double wasserstein2(const DiagGaussian& a, const DiagGaussian& b) {
    if (a.mean.size() != b.mean.size() || a.variance.size() != a.mean.size() || b.variance.size() != b.mean.size())
        throw ContractViolation("wasserstein: dimension mismatch");
    if ((a.variance.array() <= 0.0).any() || (b.variance.array() <= 0.0).any())
        throw NumericFailure("wasserstein: variances must be positive");
    const double mean_term = (a.mean - b.mean).squaredNorm();
    const double cov_term = (a.variance.array().sqrt() - b.variance.array().sqrt()).square().sum();
    return std::sqrt(mean_term + cov_term);
}

/// Single diagonal Gaussian moment-matched to the labeled pool's posteriors.
inline DiagGaussian labeled_stats(const nn::Vae& vae, const Dataset& ds, const IndexList& labeled) {
    if (labeled.empty()) throw ContractViolation("labeled_stats: labeled pool is empty");
    const Matrix enc = map_chunks(ds, labeled, [&](const Matrix& x) {
        auto [mu, logvar] = vae.posterior(x);
        Matrix both(mu.rows(), 2 * mu.cols());
        both << mu, logvar;
        return both;
    });
    const Eigen::Index d = enc.cols() / 2;
    const Matrix mu = enc.leftCols(d);
    const Matrix var = enc.rightCols(d).array().exp().matrix();
    DiagGaussian g;
    g.mean = mu.colwise().mean();
    // E[var + mu^2] - mean^2
    g.variance = (var + mu.cwiseProduct(mu)).colwise().mean() - g.mean.cwiseProduct(g.mean);
    return g;
}

/// Greedy k-center: repeatedly take the candidate whose distance to the
/// nearest center is largest, then make it a center. Returns candidate
/// positions with their covering distance at pick time. With no centers the
/// first pick is the candidate farthest from the candidates' mean.
inline std::pair<std::vector<std::size_t>, std::vector<double>> kcenter_greedy(const Matrix& candidates, const Matrix& centers,
                                                                               std::size_t b) {
    const auto n = static_cast<std::size_t>(candidates.rows());
    check_budget(b, n);
    std::vector<double> min_dist(n, std::numeric_limits<double>::infinity());
    auto relax = [&](const RowVector& c) {
        const Eigen::VectorXd d = (candidates.rowwise() - c).rowwise().squaredNorm();
        for (std::size_t i = 0; i < n; ++i) min_dist[i] = std::min(min_dist[i], d[static_cast<Eigen::Index>(i)]);
    };
    for (Eigen::Index r = 0; r < centers.rows(); ++r) relax(centers.row(r));

    std::vector<std::size_t> picked;
    std::vector<double> radius;
    std::vector<char> taken(n, 0);
    if (centers.rows() == 0) {
        const RowVector centre = candidates.colwise().mean();
        const Eigen::VectorXd d = (candidates.rowwise() - centre).rowwise().squaredNorm();
        Eigen::Index first;
        d.maxCoeff(&first);  // first maximum = lowest position
        picked.push_back(static_cast<std::size_t>(first));
        radius.push_back(std::sqrt(d[first]));
        taken[static_cast<std::size_t>(first)] = 1;
        relax(candidates.row(first));
    }
    while (picked.size() < b) {
        std::size_t best = n;
        for (std::size_t i = 0; i < n; ++i) {
            if (!taken[i] && (best == n || min_dist[i] > min_dist[best])) best = i;
        }
        picked.push_back(best);
        radius.push_back(std::sqrt(min_dist[best]));
        taken[best] = 1;
        relax(candidates.row(static_cast<Eigen::Index>(best)));
    }
    return {picked, radius};
}

// ---------------------------------------------------------------------------
// strategies

namespace detail {
template <typename Fn>
AcquisitionResult timed(Strategy s, Fn&& fn) {
    const auto start = std::chrono::steady_clock::now();
    AcquisitionResult r = fn();
    r.strategy = s;
    r.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return r;
}
}  // namespace detail

/// Candidates in ascending index order. Batched products round a row
/// differently depending on its position in the block, so scoring in a fixed
/// order keeps selections independent of how the pool happens to be stored.
inline IndexList canonical_candidates(const IndexList& unlabeled) {
    IndexList c = unlabeled;
    std::sort(c.begin(), c.end());
    return c;
}

/// Discriminator probability of "labeled" for each index, fed the posterior
/// mean (or the raw sample when the discriminator reads inputs directly).
inline std::vector<double> vaal_scores(const nn::ModelTriple& models, const Dataset& ds, std::span<const Index> indices) {
    const bool raw = models.disc_on_raw_input;
    const Matrix p = map_chunks(ds, indices, [&](const Matrix& x) -> Matrix {
        const Matrix z = raw ? x : models.vae.posterior(x).first;
        return models.disc.probability(z);
    });
    return {p.data(), p.data() + p.size()};
}

/// The b unlabeled samples the discriminator is most confident are unlabeled.
inline AcquisitionResult vaal_select(const PoolState& pool, const Dataset& ds, const nn::ModelTriple& models, std::size_t b) {
    return detail::timed(Strategy::Vaal, [&] {
        check_budget(b, pool.unlabeled.size());
        if (models.disc.input_dim() == 0) throw ContractViolation("vaal_select: models are not initialised");
        const IndexList cand = canonical_candidates(pool.unlabeled);
        return select_lowest(cand, vaal_scores(models, ds, cand), b);
    });
}

inline AcquisitionResult random_select(const PoolState& pool, std::size_t b, std::uint64_t seed) {
    return detail::timed(Strategy::Random, [&] {
        check_budget(b, pool.unlabeled.size());
        Rng rng(seed);
        AcquisitionResult r;
        r.selected = sample_without_replacement(pool.unlabeled, b, rng);
        r.scores.assign(b, 0.0);
        return r;
    });
}

inline AcquisitionResult max_entropy_select(const PoolState& pool, const Dataset& ds, const nn::TaskNet& task, std::size_t b) {
    return detail::timed(Strategy::MaxEntropy, [&] {
        check_budget(b, pool.unlabeled.size());
        const IndexList cand = canonical_candidates(pool.unlabeled);
        const Matrix p = map_chunks(ds, cand, [&](const Matrix& x) { return task.probabilities(x); });
        std::vector<double> scores(cand.size());
        for (Eigen::Index r = 0; r < p.rows(); ++r) scores[static_cast<std::size_t>(r)] = entropy(p.row(r));
        return select_highest(cand, scores, b);
    });
}

/// Entropy of the mean softmax over `mask_count` stochastic dropout passes.
inline AcquisitionResult mc_dropout_select(const PoolState& pool, const Dataset& ds, const nn::TaskNet& task, std::size_t b,
                                           int mask_count, std::uint64_t seed) {
    if (!task.has_dropout()) throw ConfigError("mc_dropout: task model has no dropout layers");
    if (mask_count < 2) throw ConfigError("mc_dropout: mask_count must be >= 2");
    return detail::timed(Strategy::McDropout, [&] {
        check_budget(b, pool.unlabeled.size());
        Rng rng(seed);
        const IndexList cand = canonical_candidates(pool.unlabeled);
        const Matrix p = map_chunks(ds, cand, [&](const Matrix& x) {
            Matrix acc = Matrix::Zero(x.rows(), task.classes());
            for (int k = 0; k < mask_count; ++k) acc += task.probabilities(x, &rng);
            return Matrix(acc / static_cast<double>(mask_count));
        });
        std::vector<double> scores(cand.size());
        for (Eigen::Index r = 0; r < p.rows(); ++r) scores[static_cast<std::size_t>(r)] = entropy(p.row(r));
        return select_highest(cand, scores, b);
    });
}

/// k-center greedy in the space produced by `features` (rows in, rows out).
template <typename FeatureFn>
    requires std::invocable<FeatureFn&, const Matrix&>
AcquisitionResult coreset_select(const PoolState& pool, const Dataset& ds, FeatureFn&& features, std::size_t b) {
    return detail::timed(Strategy::Coreset, [&] {
        check_budget(b, pool.unlabeled.size());
        const IndexList cand = canonical_candidates(pool.unlabeled);
        const Matrix candidates = map_chunks(ds, cand, features);
        const Matrix centers = pool.labeled.empty() ? Matrix(0, candidates.cols()) : map_chunks(ds, pool.labeled, features);
        auto [picked, radius] = kcenter_greedy(candidates, centers, b);
        AcquisitionResult r;
        for (std::size_t k = 0; k < picked.size(); ++k) {
            r.selected.push_back(cand[picked[k]]);
            r.scores.push_back(radius[k]);
        }
        return r;
    });
}

/// Core-set over the task model's penultimate activations.
inline AcquisitionResult coreset_select(const PoolState& pool, const Dataset& ds, const nn::TaskNet& task, std::size_t b) {
    return coreset_select(pool, ds, [&](const Matrix& x) { return task.features(x); }, b);
}

inline AcquisitionResult ensemble_varr_select(const PoolState& pool, const Dataset& ds, std::span<const nn::TaskNet> ensemble,
                                              std::size_t b) {
    if (ensemble.size() < 2) throw ConfigError("ensemble_varr: ensemble needs at least 2 members");
    return detail::timed(Strategy::EnsembleVarR, [&] {
        check_budget(b, pool.unlabeled.size());
        const int classes = ensemble.front().classes();
        const IndexList cand = canonical_candidates(pool.unlabeled);
        const Matrix votes = map_chunks(ds, cand, [&](const Matrix& x) {
            Matrix v(x.rows(), static_cast<Eigen::Index>(ensemble.size()));
            for (std::size_t e = 0; e < ensemble.size(); ++e) {
                const Matrix p = ensemble[e].probabilities(x);
                for (Eigen::Index r = 0; r < p.rows(); ++r) {
                    Eigen::Index arg;
                    p.row(r).maxCoeff(&arg);
                    v(r, static_cast<Eigen::Index>(e)) = static_cast<double>(arg);
                }
            }
            return v;
        });
        std::vector<double> scores(cand.size());
        std::vector<int> row(ensemble.size());
        for (Eigen::Index r = 0; r < votes.rows(); ++r) {
            for (std::size_t e = 0; e < ensemble.size(); ++e) row[e] = static_cast<int>(votes(r, static_cast<Eigen::Index>(e)));
            scores[static_cast<std::size_t>(r)] = variation_ratio(row, classes);
        }
        return select_highest(cand, scores, b);
    });
}

/// Samples whose posterior lies farthest (2-Wasserstein) from the labeled pool's latent Gaussian.
inline AcquisitionResult wasserstein_select(const PoolState& pool, const Dataset& ds, const nn::Vae& vae, const DiagGaussian& labeled,
                                            std::size_t b) {
    return detail::timed(Strategy::Wasserstein, [&] {
        check_budget(b, pool.unlabeled.size());
        const Eigen::Index d = vae.latent_dim();
        const IndexList cand = canonical_candidates(pool.unlabeled);
        const Matrix enc = map_chunks(ds, cand, [&](const Matrix& x) {
            auto [mu, logvar] = vae.posterior(x);
            Matrix both(mu.rows(), 2 * d);
            both << mu, logvar;
            return both;
        });
        std::vector<double> scores(cand.size());
        for (Eigen::Index r = 0; r < enc.rows(); ++r) {
            DiagGaussian g{enc.row(r).leftCols(d), enc.row(r).rightCols(d).array().exp().matrix()};
            scores[static_cast<std::size_t>(r)] = wasserstein2(g, labeled);
        }
        return select_highest(cand, scores, b);
    });
}

inline AcquisitionResult wasserstein_select(const PoolState& pool, const Dataset& ds, const nn::Vae& vae, std::size_t b) {
    return wasserstein_select(pool, ds, vae, labeled_stats(vae, ds, pool.labeled), b);
}

/// Trained state the strategies may draw on.
struct AcquisitionContext {
    const PoolState& pool;
    const Dataset& dataset;
    const nn::ModelTriple* models = nullptr;
    std::span<const nn::TaskNet> ensemble;
};

inline AcquisitionResult acquire(const AcquisitionRequest& req, const AcquisitionContext& ctx) {
    auto need_models = [&]() -> const nn::ModelTriple& {
        if (!ctx.models) throw ContractViolation("acquire: strategy " + to_string(req.strategy) + " needs trained models");
        return *ctx.models;
    };
    switch (req.strategy) {
        case Strategy::Vaal: return vaal_select(ctx.pool, ctx.dataset, need_models(), req.budget);
        case Strategy::Random: return random_select(ctx.pool, req.budget, req.seed);
        case Strategy::MaxEntropy: return max_entropy_select(ctx.pool, ctx.dataset, need_models().task, req.budget);
        case Strategy::McDropout:
            return mc_dropout_select(ctx.pool, ctx.dataset, need_models().task, req.budget, req.params.mask_count, req.seed);
        case Strategy::Coreset: return coreset_select(ctx.pool, ctx.dataset, need_models().task, req.budget);
        case Strategy::EnsembleVarR: return ensemble_varr_select(ctx.pool, ctx.dataset, ctx.ensemble, req.budget);
        case Strategy::Wasserstein: return wasserstein_select(ctx.pool, ctx.dataset, need_models().vae, req.budget);
    }
    throw ConfigError("acquire: unhandled strategy");
}

}  // namespace vaal::acquisition
