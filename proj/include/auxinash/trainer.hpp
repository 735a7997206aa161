#pragma once

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "auxinash/bargaining.hpp"
#include "auxinash/common.hpp"
#include "auxinash/hypergrad.hpp"
#include "auxinash/min_norm.hpp"
#include "auxinash/preference.hpp"
#include "auxinash/suites.hpp"

namespace auxinash {

enum class InnerOptimizer { plain_sgd, adam };
enum class PrefUpdateRule { softmax_logits, projected_euclidean };
enum class ValSource { separate_train_batch, heldout_set };
enum class StepMode { fixed_lr, theorem1 };
enum class Aggregator { nash_bargaining, linear_scalarization, single_task_main };

struct TrainConfig {
    double inner_lr = 1e-2;
    double pref_lr = 5e-3;
    int pref_update_period = 25;  // inner steps per preference update
    int total_outer_iters = 40;
    InnerOptimizer inner_optimizer = InnerOptimizer::plain_sgd;
    PrefUpdateRule pref_update_rule = PrefUpdateRule::softmax_logits;
    ValSource val_source = ValSource::separate_train_batch;
    StepMode step_mode = StepMode::fixed_lr;
    Aggregator aggregator = Aggregator::nash_bargaining;
    double smoothness = 0.0;      // theorem1 mode; 0 = suite bound or probe estimate
    double pref_momentum = 0.9;   // 0 disables
    double pref_floor = 1e-3;     // projected_euclidean only
    int batch_size = 0;           // 0 = full batch
    double stationarity_halt_tol = 1e-10;
    IhvpConfig ihvp;
    SolverConfig solver;
    std::uint64_t seed = 0;

    void validate() const {
        if (inner_lr <= 0.0) throw InvalidInputError("TrainConfig: inner_lr must be positive");
        if (pref_lr < 0.0) throw InvalidInputError("TrainConfig: pref_lr must be non-negative");
        if (pref_update_period < 1)
            throw InvalidInputError("TrainConfig: pref_update_period must be >= 1");
        if (total_outer_iters < 1)
            throw InvalidInputError("TrainConfig: total_outer_iters must be >= 1");
        if (step_mode == StepMode::theorem1 && inner_optimizer != InnerOptimizer::plain_sgd)
            throw InvalidInputError("TrainConfig: theorem1 step sizing requires plain SGD");
        ihvp.validate();
        solver.validate();
    }
};

/// mu = (1/K) sum_i p_i / (L alpha_i); the descent step that makes the mean
/// loss provably non-increasing on L-smooth objectives.
inline double theorem1_step_size(const PreferenceVector& prefs, const BargainingWeights& weights,
                                 double smoothness) {
    if (smoothness <= 0.0) throw InvalidInputError("theorem1_step_size: L must be positive");
    if (weights.alpha.minCoeff() <= 0.0)
        throw InvalidInputError("theorem1_step_size: alpha must be strictly positive");
    const int k = prefs.size();
    return prefs.probs().cwiseQuotient(weights.alpha).sum() / (k * smoothness);
}

struct ParetoStationarity {
    double sigma_min;       // smallest singular value of G
    double min_norm_combo;  // min over the simplex of ||G w||
    Vector weights;         // attaining simplex point
};

/// Degeneracy diagnostics: sigma_min detects linear dependence, the min-norm
/// combination value characterizes Pareto stationarity (zero iff stationary).
/// The value is evaluated as ||G w|| directly on the gradient matrix; going
/// through w^T (G^T G) w squares the conditioning and floors near 1e-8.
inline ParetoStationarity pareto_stationarity(const TaskGradientSet& grads) {
    Eigen::JacobiSVD<Matrix> svd(grads.matrix());
    const double sigma_min = svd.singularValues().minCoeff();
    MinNormResult mn = min_norm_simplex_combination(grads.gram(), 1e-11, 100000);
    const double value = (grads.matrix() * mn.weights).norm();
    return ParetoStationarity{sigma_min, value, mn.weights};
}

struct DeltaPercentReport {
    Vector method_metrics;
    Vector baseline_metrics;
    std::vector<bool> lower_is_better;  // direction flag per task
    Vector per_task;                    // signed relative change terms
    double delta_percent;               // (1/K) sum of per_task
};

/// Mean signed relative change versus a single-task baseline:
/// (1/K) sum_k (-1)^{d_k} (M_m,k - M_b,k) / M_b,k with d_k = 0 when lower
/// is better. Negative is better.
inline DeltaPercentReport delta_percent(const Vector& method_metrics,
                                        const Vector& baseline_metrics,
                                        const std::vector<bool>& lower_is_better) {
    const int k = static_cast<int>(method_metrics.size());
    if (baseline_metrics.size() != k || static_cast<int>(lower_is_better.size()) != k)
        throw InvalidInputError("delta_percent: length mismatch");
    DeltaPercentReport rep;
    rep.method_metrics = method_metrics;
    rep.baseline_metrics = baseline_metrics;
    rep.lower_is_better = lower_is_better;
    rep.per_task.resize(k);
    for (int i = 0; i < k; ++i) {
        if (baseline_metrics[i] == 0.0)
            throw InvalidInputError("delta_percent: zero baseline metric");
        const double sign = lower_is_better[static_cast<std::size_t>(i)] ? 1.0 : -1.0;
        rep.per_task[i] = sign * (method_metrics[i] - baseline_metrics[i]) / baseline_metrics[i];
    }
    rep.delta_percent = rep.per_task.sum() / k;
    return rep;
}

struct TrajectoryRecord {
    int step = 0;
    Vector losses;
    Vector p;
    Vector alpha;
    double residual = 0.0;
    double mu = 0.0;
    double sigma_min = 0.0;
    double min_norm_combo = 0.0;
    double val_loss = 0.0;
};

struct Trajectory {
    std::vector<TrajectoryRecord> records;
    double smoothness_used = 0.0;  // theorem1 mode only

    void to_csv(const std::string& path) const {
        std::ofstream f(path);
        if (!f) throw InvalidInputError("Trajectory: cannot open " + path);
        f << header(num_tasks());
        for (const auto& r : records) {
            f << r.step;
            for (int i = 0; i < r.losses.size(); ++i) f << ',' << fmt_g17(r.losses[i]);
            for (int i = 0; i < r.p.size(); ++i) f << ',' << fmt_g17(r.p[i]);
            for (int i = 0; i < r.alpha.size(); ++i) f << ',' << fmt_g17(r.alpha[i]);
            f << ',' << fmt_g17(r.residual) << ',' << fmt_g17(r.mu) << ','
              << fmt_g17(r.sigma_min) << ',' << fmt_g17(r.min_norm_combo) << ','
              << fmt_g17(r.val_loss) << '\n';
        }
    }

    static Trajectory from_csv(const std::string& path) {
        std::ifstream f(path);
        if (!f) throw InvalidInputError("Trajectory: cannot open " + path);
        std::string line;
        if (!std::getline(f, line)) throw InvalidInputError("Trajectory: empty file " + path);
        int k = 0;
        {
            std::stringstream ss(line);
            std::string col;
            while (std::getline(ss, col, ','))
                if (col.rfind("loss_", 0) == 0) ++k;
        }
        if (k < 1 || line != header_line(k))
            throw InvalidInputError("Trajectory: unrecognized CSV header in " + path);
        Trajectory traj;
        while (std::getline(f, line)) {
            if (line.empty()) continue;
            std::stringstream ss(line);
            std::string cell;
            std::vector<double> vals;
            while (std::getline(ss, cell, ',')) vals.push_back(std::stod(cell));
            if (static_cast<int>(vals.size()) != 1 + 3 * k + 5)
                throw InvalidInputError("Trajectory: short row in " + path);
            TrajectoryRecord r;
            int off = 0;
            r.step = static_cast<int>(vals[static_cast<std::size_t>(off++)]);
            r.losses.resize(k);
            for (int i = 0; i < k; ++i) r.losses[i] = vals[static_cast<std::size_t>(off++)];
            r.p.resize(k);
            for (int i = 0; i < k; ++i) r.p[i] = vals[static_cast<std::size_t>(off++)];
            r.alpha.resize(k);
            for (int i = 0; i < k; ++i) r.alpha[i] = vals[static_cast<std::size_t>(off++)];
            r.residual = vals[static_cast<std::size_t>(off++)];
            r.mu = vals[static_cast<std::size_t>(off++)];
            r.sigma_min = vals[static_cast<std::size_t>(off++)];
            r.min_norm_combo = vals[static_cast<std::size_t>(off++)];
            r.val_loss = vals[static_cast<std::size_t>(off++)];
            traj.records.push_back(std::move(r));
        }
        return traj;
    }

    int num_tasks() const {
        return records.empty() ? 0 : static_cast<int>(records.front().losses.size());
    }

private:
    static std::string header_line(int k) {
        std::string h = "step";
        for (int i = 0; i < k; ++i) h += ",loss_" + std::to_string(i);
        for (int i = 0; i < k; ++i) h += ",p_" + std::to_string(i);
        for (int i = 0; i < k; ++i) h += ",alpha_" + std::to_string(i);
        h += ",residual,mu,sigma_min,min_norm_combo,val_loss";
        return h;
    }
    static std::string header(int k) { return header_line(k) + "\n"; }
};

struct TrainResult {
    Trajectory trajectory;
    Vector final_theta;
    Vector final_p;
    bool halted_stationary = false;
    bool diverged = false;
    int steps_executed = 0;
};

namespace detail {

/// 1.1 x the largest per-task HVP Rayleigh quotient over 20 random probes.
inline double estimate_smoothness(const TaskSuite& suite, const Vector& theta, Rng& rng) {
    double best = 0.0;
    for (int probe = 0; probe < 20; ++probe) {
        Vector v = rng.normal_vector(suite.param_dim());
        const double vn2 = v.squaredNorm();
        if (vn2 <= 0.0) continue;
        for (int task = 0; task < suite.num_tasks(); ++task) {
            Vector alpha = Vector::Zero(suite.num_tasks());
            alpha[task] = 1.0;
            best = std::max(best, std::abs(v.dot(suite.hvp(alpha, theta, v))) / vn2);
        }
    }
    if (best <= 0.0) throw SolverDivergedError("estimate_smoothness: zero curvature estimate");
    return 1.1 * best;
}

class BatchSampler {
public:
    BatchSampler(int num_samples, int batch_size, Rng& rng)
        : n_(num_samples), batch_(batch_size), rng_(rng) {
        if (n_ > 0 && batch_ > 0 && batch_ < n_) {
            order_.resize(static_cast<std::size_t>(n_));
            for (int i = 0; i < n_; ++i) order_[static_cast<std::size_t>(i)] = i;
        }
    }

    bool minibatch() const { return !order_.empty(); }

    Batch next() {
        if (!minibatch()) return {};
        if (cursor_ + batch_ > n_) cursor_ = 0;
        if (cursor_ == 0) rng_.shuffle(order_);
        Batch b;
        b.indices.assign(order_.begin() + cursor_, order_.begin() + cursor_ + batch_);
        cursor_ += batch_;
        return b;
    }

private:
    int n_;
    int batch_;
    Rng& rng_;
    std::vector<int> order_;
    int cursor_ = 0;
};

struct AdamState {
    Vector m, v;
    int t = 0;

    Vector step(const Vector& g, double lr) {
        if (m.size() == 0) {
            m = Vector::Zero(g.size());
            v = Vector::Zero(g.size());
        }
        ++t;
        m = 0.9 * m + 0.1 * g;
        v = 0.999 * v + 0.001 * g.cwiseProduct(g);
        const double mc = 1.0 - std::pow(0.9, t);
        const double vc = 1.0 - std::pow(0.999, t);
        return lr * (m / mc).cwiseQuotient(((v / vc).cwiseSqrt().array() + 1e-8).matrix());
    }
};

}  // namespace detail

/// Alternating optimization: pref_update_period gradient-bargaining steps on
/// theta, then one hypergradient step on the preferences, for
/// total_outer_iters rounds. Halts early at Pareto stationarity. The returned
/// trajectory has one record per executed step plus a final-state record.
inline TrainResult train(const TaskSuite& suite, const TrainConfig& cfg, const Vector& init_theta,
                         const PreferenceVector& init_p) {
    cfg.validate();
    if (init_theta.size() != suite.param_dim())
        throw InvalidInputError("train: init_theta dimension mismatch");
    if (init_p.size() != suite.num_tasks())
        throw InvalidInputError("train: init_p task count mismatch");

    const int k = suite.num_tasks();
    Rng rng(cfg.seed);
    Vector theta = init_theta;
    PreferenceVector prefs = init_p;
    Vector logits = init_p.logits();
    Vector pref_buf = Vector::Zero(k);
    detail::AdamState adam;
    detail::BatchSampler sampler(suite.num_samples(), cfg.batch_size, rng);

    TrainResult out;
    double smoothness = 0.0;
    if (cfg.step_mode == StepMode::theorem1) {
        if (cfg.smoothness > 0.0)
            smoothness = cfg.smoothness;
        else if (auto sb = suite.smoothness_bound())
            smoothness = *sb;
        else
            smoothness = detail::estimate_smoothness(suite, theta, rng);
        out.trajectory.smoothness_used = smoothness;
    }

    auto measure_val_loss = [&](const Vector& th) {
        return suite.has_heldout() ? suite.heldout_loss(0, th) : suite.loss(0, th);
    };
    auto losses_at = [&](const Vector& th, const Batch& b) {
        Vector l(k);
        for (int i = 0; i < k; ++i) l[i] = suite.loss(i, th, b);
        return l;
    };

    Vector last_alpha = Vector::Zero(k);
    double last_residual = 0.0, last_mu = 0.0;
    bool stop = false;

    for (int outer = 0; outer < cfg.total_outer_iters && !stop; ++outer) {
        for (int t = 0; t < cfg.pref_update_period && !stop; ++t) {
            const Batch batch = sampler.next();
            const Vector losses = losses_at(theta, batch);
            if (!all_finite(losses)) {
                out.diverged = true;
                stop = true;
                break;
            }
            std::vector<Vector> gs(static_cast<std::size_t>(k));
            for (int i = 0; i < k; ++i) gs[static_cast<std::size_t>(i)] = suite.grad(i, theta, batch);
            const TaskGradientSet grads = build_gradient_set(gs);
            const ParetoStationarity stat = pareto_stationarity(grads);
            const double val_loss = measure_val_loss(theta);

            if (stat.min_norm_combo < cfg.stationarity_halt_tol) {
                out.halted_stationary = true;
                stop = true;
                break;
            }

            Vector direction;
            double mu = cfg.inner_lr;
            switch (cfg.aggregator) {
                case Aggregator::nash_bargaining: {
                    BargainingWeights w;
                    try {
                        w = solve_alpha(grads, prefs, cfg.solver);
                    } catch (const ParetoStationaryError&) {
                        out.halted_stationary = true;
                        stop = true;
                    }
                    if (stop) break;
                    last_alpha = w.alpha;
                    last_residual = w.residual_inf;
                    direction = update_direction(grads, w, /*allow_unconverged=*/true);
                    if (cfg.step_mode == StepMode::theorem1)
                        mu = theorem1_step_size(prefs, w, smoothness);
                    break;
                }
                case Aggregator::linear_scalarization:
                    last_alpha = Vector::Ones(k);
                    last_residual = 0.0;
                    direction = grads.matrix() * last_alpha;
                    break;
                case Aggregator::single_task_main:
                    last_alpha = Vector::Zero(k);
                    last_alpha[0] = 1.0;
                    last_residual = 0.0;
                    direction = grads.gradient(0);
                    break;
            }
            last_mu = mu;

            out.trajectory.records.push_back(TrajectoryRecord{
                out.steps_executed, losses, prefs.probs(), last_alpha, last_residual, mu,
                stat.sigma_min, stat.min_norm_combo, val_loss});

            if (cfg.inner_optimizer == InnerOptimizer::adam)
                theta -= adam.step(direction, cfg.inner_lr);
            else
                theta -= mu * direction;
            if (!all_finite(theta)) {
                out.diverged = true;
                stop = true;
                break;
            }
            ++out.steps_executed;
        }
        if (stop) break;

        if (cfg.pref_lr > 0.0 && cfg.aggregator == Aggregator::nash_bargaining) {
            const Batch hb = sampler.next();
            std::vector<Vector> gs(static_cast<std::size_t>(k));
            for (int i = 0; i < k; ++i) gs[static_cast<std::size_t>(i)] = suite.grad(i, theta, hb);
            const TaskGradientSet grads = build_gradient_set(gs);
            try {
                const BargainingWeights w = solve_alpha(grads, prefs, cfg.solver);
                if (w.converged) {
                    Vector val_grad;
                    if (cfg.val_source == ValSource::heldout_set && suite.has_heldout())
                        val_grad = suite.heldout_grad(0, theta);
                    else
                        val_grad = suite.grad(0, theta, sampler.next());
                    const HypergradResult hg =
                        hypergradient(suite, theta, grads, prefs, w, val_grad, cfg.ihvp, hb);
                    if (cfg.pref_update_rule == PrefUpdateRule::softmax_logits) {
                        pref_buf = cfg.pref_momentum * pref_buf + hg.grad_logits;
                        logits -= cfg.pref_lr * pref_buf;
                        prefs = PreferenceVector::from_logits(logits);
                    } else {
                        pref_buf = cfg.pref_momentum * pref_buf + hg.grad_p;
                        Vector p = project_to_simplex(prefs.probs() - cfg.pref_lr * pref_buf,
                                                      cfg.pref_floor);
                        prefs = PreferenceVector::from_probs(p);
                        logits = prefs.logits();
                    }
                }
            } catch (const ParetoStationaryError&) {
                out.halted_stationary = true;
                stop = true;
            }
        }
    }

    // Final-state record: losses and diagnostics at the last theta; the
    // bargaining columns carry the last applied values.
    {
        Vector losses = losses_at(theta, {});
        std::vector<Vector> gs(static_cast<std::size_t>(k));
        for (int i = 0; i < k; ++i) gs[static_cast<std::size_t>(i)] = suite.grad(i, theta);
        const TaskGradientSet grads = build_gradient_set(gs);
        const ParetoStationarity stat = pareto_stationarity(grads);
        out.trajectory.records.push_back(TrajectoryRecord{
            out.steps_executed, losses, prefs.probs(), last_alpha, last_residual, last_mu,
            stat.sigma_min, stat.min_norm_combo, measure_val_loss(theta)});
    }

    out.final_theta = theta;
    out.final_p = prefs.probs();
    return out;
}

}  // namespace auxinash
