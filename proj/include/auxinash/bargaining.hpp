#pragma once

#include <algorithm>
#include <cmath>

#include "auxinash/common.hpp"
#include "auxinash/gradient_set.hpp"
#include "auxinash/min_norm.hpp"
#include "auxinash/preference.hpp"

namespace auxinash {

struct SolverConfig {
    int max_ccp_iters = 20;
    double inner_tolerance = 1e-8;      // per convex subproblem
    double fixed_point_tolerance = 1e-6;
    double gram_regularization = 1e-10;

    void validate() const {
        if (max_ccp_iters < 1) throw InvalidInputError("SolverConfig: max_ccp_iters must be >= 1");
        if (inner_tolerance <= 0 || fixed_point_tolerance <= 0 || gram_regularization <= 0)
            throw InvalidInputError("SolverConfig: tolerances must be positive");
    }
};

/// Positive weights alpha solving G^T G alpha = p / alpha, plus solve metadata.
struct BargainingWeights {
    Vector alpha;
    double residual_inf = std::numeric_limits<double>::infinity();
    int iterations_used = 0;
    bool converged = false;
    /// Amount added to the Gram diagonal before solving (0 when none).
    double regularization = 0.0;
};

namespace detail {

inline double fixed_point_residual_inf(const Matrix& m, const Vector& p, const Vector& alpha) {
    return (m * alpha - p.cwiseQuotient(alpha)).cwiseAbs().maxCoeff();
}

/// Scales alpha up along its ray until alpha_i * beta_i >= p_i for all i
/// (the feasible region of the bargaining program). Requires beta > 0.
inline void radial_restore(const Vector& p, Vector& alpha, Vector& beta) {
    double tau_sq = 1.0;
    for (Eigen::Index i = 0; i < alpha.size(); ++i)
        tau_sq = std::max(tau_sq, p[i] / (alpha[i] * beta[i]));
    if (tau_sq > 1.0) {
        const double tau = std::sqrt(tau_sq);
        alpha *= tau;
        beta *= tau;
    }
}

/// Moves alpha > 0 into the open region where beta = M alpha is strictly
/// positive. Uses the min-norm point of the gradient hull: every task has
/// utility g_i^T(G w*) >= ||G w*||^2 > 0 there, so a slightly interiorized
/// copy of w* is feasible whenever the gradients are not Pareto stationary.
inline bool restore_positive_utilities(const Matrix& m, Vector& alpha, Vector& beta) {
    const MinNormResult mn = min_norm_hull_point(m);
    const double val2 = mn.weights.dot(m * mn.weights);
    if (!(val2 > 0.0)) return false;
    const double eps =
        std::min(1e-9, 0.05 * val2 / (m.cwiseAbs().maxCoeff() * alpha.size() + 1e-300));
    Vector w = mn.weights.cwiseMax(eps);
    Vector bw = m * w;
    if (bw.minCoeff() <= 0.0) return false;
    alpha = w;
    beta = bw;
    return true;
}

struct BestIterate {
    Vector alpha;
    double residual = std::numeric_limits<double>::infinity();

    void offer(const Vector& a, double r) {
        if (r < residual) {
            residual = r;
            alpha = a;
        }
    }
};

/// One convex subproblem of the concave-convex procedure: minimize the
/// linearized objective c^T alpha over {alpha_i * (M alpha)_i >= p_i} by
/// gradient steps on log(alpha) with backtracking; feasibility after each
/// step is restored radially (the region is closed under scaling up).
inline void solve_linearized_subproblem(const Matrix& m, const Vector& p, const Vector& c,
                                        Vector& alpha, Vector& beta, const SolverConfig& cfg,
                                        BestIterate& best) {
    const int max_steps = 120;
    double step = 0.0;
    double obj = c.dot(alpha);
    for (int it = 0; it < max_steps; ++it) {
        const Vector gz = c.cwiseProduct(alpha);  // gradient in log-space
        const double gz_inf = gz.cwiseAbs().maxCoeff();
        if (gz_inf <= 0.0) return;
        if (step <= 0.0) step = 0.25 / gz_inf;

        bool accepted = false;
        for (int bt = 0; bt < 40; ++bt) {
            Vector trial = alpha.cwiseProduct((-step * gz).array().exp().matrix());
            Vector trial_beta = m * trial;
            if (trial_beta.minCoeff() > 0.0) {
                radial_restore(p, trial, trial_beta);
                const double trial_obj = c.dot(trial);
                if (trial_obj < obj - 1e-14 * std::abs(obj)) {
                    const double rel_drop = (obj - trial_obj) / std::max(1.0, std::abs(obj));
                    alpha = trial;
                    beta = trial_beta;
                    obj = trial_obj;
                    best.offer(alpha, fixed_point_residual_inf(m, p, alpha));
                    if (best.residual <= cfg.fixed_point_tolerance) return;
                    accepted = true;
                    step *= 2.0;
                    if (rel_drop < cfg.inner_tolerance) return;  // subproblem converged
                    break;
                }
            }
            step *= 0.5;
        }
        if (!accepted) return;
    }
}

/// Corner stage of the concave-convex procedure: with every bargaining
/// constraint active the subproblem reduces to the smooth system
/// r(z) = alpha .* (M alpha) - p = 0 in z = log(alpha). Solves it by
/// Levenberg-damped Gauss-Newton; the Jacobian diag(a) M diag(a) +
/// diag(a .* b) is positive definite wherever utilities are positive, and
/// the multiplicative update keeps alpha > 0 with no line-search clipping.
inline void corner_newton_finish(const Matrix& m, const Vector& p, Vector& alpha, Vector& beta,
                                 const SolverConfig& cfg, BestIterate& best, int& iterations) {
    const Eigen::Index k = alpha.size();
    Vector r = alpha.cwiseProduct(beta) - p;
    double lambda = 0.0;
    const int max_iters = 500;
    for (int it = 0; it < max_iters; ++it) {
        if (best.residual <= cfg.fixed_point_tolerance) return;
        Matrix jac = alpha.asDiagonal() * m * alpha.asDiagonal();
        jac.diagonal() += alpha.cwiseProduct(beta);
        if (lambda <= 0.0) lambda = 1e-12;

        const double rn = r.norm();
        bool accepted = false;
        for (int attempt = 0; attempt < 30 && !accepted; ++attempt) {
            Matrix damped = jac;
            damped.diagonal() += (lambda * jac.diagonal().cwiseAbs()).cwiseMax(lambda * 1e-8);
            Eigen::LLT<Matrix> llt(damped);
            if (llt.info() == Eigen::Success) {
                const Vector dz = llt.solve(-r);
                double s = 1.0;
                for (int bt = 0; bt < 25 && !accepted; ++bt) {
                    Vector trial = alpha.cwiseProduct((s * dz).array().exp().matrix());
                    if (all_finite(trial)) {
                        Vector trial_beta = m * trial;
                        Vector trial_r = trial.cwiseProduct(trial_beta) - p;
                        if (all_finite(trial_r) && trial_r.norm() < rn) {
                            alpha = trial;
                            beta = trial_beta;
                            r = trial_r;
                            best.offer(alpha, fixed_point_residual_inf(m, p, alpha));
                            accepted = true;
                            lambda = std::max(lambda * 0.25, 1e-14);
                        }
                    }
                    s *= 0.5;
                }
            }
            if (!accepted) lambda = std::max(lambda * 10.0, 1e-10);
        }
        ++iterations;
        if (!accepted) return;  // stalled; caller reports best-so-far
        if (r.norm() >= rn * (1.0 - 1e-14)) return;
    }
    (void)k;
}

inline BargainingWeights solve_alpha_on_matrix(const Matrix& m, const Vector& p,
                                               const SolverConfig& cfg, double regularization) {
    const Eigen::Index k = p.size();

    // Exact for a diagonal Gram matrix, strictly positive always.
    Vector alpha =
        (p.array() / m.diagonal().array().max(1e-300)).sqrt().min(1e6).max(1e-6).matrix();
    Vector beta = m * alpha;
    if (beta.minCoeff() <= 0.0) {
        if (!restore_positive_utilities(m, alpha, beta))
            throw SolverDivergedError("solve_alpha: could not reach positive utilities");
    }
    radial_restore(p, alpha, beta);

    BestIterate best;
    best.offer(alpha, fixed_point_residual_inf(m, p, alpha));

    int iterations = 0;
    double prev_res = std::numeric_limits<double>::infinity();
    for (int t = 0; t < cfg.max_ccp_iters; ++t) {
        if (best.residual <= cfg.fixed_point_tolerance) break;
        // Stop when a full pass improves the residual by less than 1%.
        if (t > 0 && best.residual > 0.99 * prev_res) break;
        prev_res = best.residual;

        const Vector c = alpha.cwiseInverse() + m * beta.cwiseInverse();
        solve_linearized_subproblem(m, p, c, alpha, beta, cfg, best);
        ++iterations;
        if (!all_finite(alpha) || !all_finite(beta))
            throw SolverDivergedError("solve_alpha: non-finite iterate");
    }

    if (best.residual > cfg.fixed_point_tolerance) {
        alpha = best.alpha;
        beta = m * alpha;
        corner_newton_finish(m, p, alpha, beta, cfg, best, iterations);
    }

    BargainingWeights w;
    w.alpha = best.alpha;
    w.residual_inf = best.residual;
    w.iterations_used = iterations;
    w.converged = best.residual <= cfg.fixed_point_tolerance;
    w.regularization = regularization;
    if (!all_finite(w.alpha)) throw SolverDivergedError("solve_alpha: non-finite result");
    (void)k;
    return w;
}

}  // namespace detail

/// Solves G^T G alpha = p / alpha for a raw positive weight vector p
/// (p need not lie on the simplex). A Gram matrix whose smallest eigenvalue
/// falls below cfg.gram_regularization gets that amount added to its
/// diagonal; the all-zero Gram signals Pareto stationarity instead.
inline BargainingWeights solve_alpha_raw(const TaskGradientSet& grads, const Vector& p,
                                         const SolverConfig& cfg = {}) {
    cfg.validate();
    if (p.size() != grads.num_tasks())
        throw InvalidInputError("solve_alpha: preference length does not match task count");
    if (!all_finite(p) || p.minCoeff() <= 0.0)
        throw InvalidInputError("solve_alpha: preferences must be finite and strictly positive");
    if (!all_finite(grads.gram())) throw InvalidInputError("solve_alpha: non-finite Gram matrix");

    Matrix m = grads.gram();
    if (m.cwiseAbs().maxCoeff() == 0.0)
        throw ParetoStationaryError("solve_alpha: all task gradients vanish");

    double reg = 0.0;
    if (grads.gram_min_eigenvalue() < cfg.gram_regularization) {
        reg = cfg.gram_regularization;
        m.diagonal().array() += reg;
    }
    return detail::solve_alpha_on_matrix(m, p, cfg, reg);
}

inline BargainingWeights solve_alpha(const TaskGradientSet& grads, const PreferenceVector& prefs,
                                     const SolverConfig& cfg = {}) {
    return solve_alpha_raw(grads, prefs.probs(), cfg);
}

/// Update direction Delta-theta = G alpha. Unit norm at a converged solution
/// when p sums to one. Refuses non-converged weights unless overridden.
inline Vector update_direction(const TaskGradientSet& grads, const BargainingWeights& weights,
                               bool allow_unconverged = false) {
    if (!weights.converged && !allow_unconverged)
        throw InvalidInputError("update_direction: weights did not converge (override to force)");
    if (weights.alpha.size() != grads.num_tasks())
        throw InvalidInputError("update_direction: weight length does not match task count");
    return grads.matrix() * weights.alpha;
}

/// max_i |(G^T G alpha)_i - p_i / alpha_i|. Pure function.
inline double fixed_point_residual(const TaskGradientSet& grads, const Vector& p,
                                   const Vector& alpha) {
    if (alpha.size() != grads.num_tasks() || p.size() != grads.num_tasks())
        throw InvalidInputError("fixed_point_residual: size mismatch");
    if (alpha.minCoeff() <= 0.0)
        throw InvalidInputError("fixed_point_residual: alpha must be strictly positive");
    return detail::fixed_point_residual_inf(grads.gram(), p, alpha);
}

inline double fixed_point_residual(const TaskGradientSet& grads, const PreferenceVector& prefs,
                                   const Vector& alpha) {
    return fixed_point_residual(grads, prefs.probs(), alpha);
}

}  // namespace auxinash
