#pragma once

#include <functional>
#include <optional>

#include "auxinash/bargaining.hpp"
#include "auxinash/common.hpp"
#include "auxinash/gradient_set.hpp"
#include "auxinash/preference.hpp"
#include "auxinash/suites.hpp"

namespace auxinash {

enum class IhvpMode { neumann, exact_solve, identity };

struct IhvpConfig {
    IhvpMode mode = IhvpMode::neumann;
    int neumann_steps = 3;
    /// Series scale eta; <= 0 means estimate 0.9 / ||H|| by power iteration,
    /// clamped to [1e-6, 1].
    double neumann_scale = 0.0;

    void validate() const {
        if (neumann_steps < 1) throw InvalidInputError("IhvpConfig: neumann_steps must be >= 1");
    }
};

struct IhvpInfo {
    int oracle_calls = 0;
    double eta = 0.0;
    double rhs_norm = 0.0;
    double result_norm = 0.0;
};

using HvpOracle = std::function<Vector(const Vector&)>;

/// 0.9 / ||H|| from 10 power iterations on the HVP oracle, clamped to
/// [1e-6, 1]. Deterministic (fixed internal probe seed).
inline double estimate_neumann_scale(const HvpOracle& hvp, int dim) {
    Rng rng(0x9e3779b97f4a7c15ull);
    Vector v = rng.normal_vector(dim);
    double norm_est = 0.0;
    for (int it = 0; it < 10; ++it) {
        const double vn = v.norm();
        if (vn <= 0.0) break;
        v /= vn;
        v = hvp(v);
        if (!all_finite(v)) throw SolverDivergedError("neumann scale: non-finite HVP");
        norm_est = v.norm();
    }
    if (norm_est <= 0.0) return 1.0;
    return std::clamp(0.9 / norm_est, 1e-6, 1.0);
}

/// Approximates H^{-1} rhs. neumann: eta * sum_{j=0}^{J-1} (I - eta H)^j rhs
/// (J series terms, J-1 oracle applications). exact_solve: dense solve for
/// dim <= 512. identity: returns rhs unchanged.
inline Vector ihvp(const HvpOracle& hvp, const Vector& rhs, const IhvpConfig& cfg,
                   IhvpInfo* info = nullptr) {
    cfg.validate();
    if (!all_finite(rhs)) throw InvalidInputError("ihvp: non-finite right-hand side");
    const int dim = static_cast<int>(rhs.size());
    IhvpInfo local;
    local.rhs_norm = rhs.norm();

    Vector result;
    switch (cfg.mode) {
        case IhvpMode::identity:
            result = rhs;
            break;
        case IhvpMode::exact_solve: {
            if (dim > 512) throw InvalidInputError("ihvp: exact_solve limited to dim <= 512");
            Matrix h(dim, dim);
            Vector e = Vector::Zero(dim);
            for (int j = 0; j < dim; ++j) {
                e[j] = 1.0;
                h.col(j) = hvp(e);
                e[j] = 0.0;
                ++local.oracle_calls;
            }
            if (!all_finite(h)) throw SolverDivergedError("ihvp: non-finite Hessian column");
            h = 0.5 * (h + h.transpose()).eval();
            Eigen::LDLT<Matrix> ldlt(h);
            result = ldlt.solve(rhs);
            const double denom = h.cwiseAbs().maxCoeff() * result.norm() + local.rhs_norm;
            if (!all_finite(result) || (h * result - rhs).norm() > 1e-8 * (denom + 1e-300))
                throw SolverDivergedError("ihvp: exact_solve failed (singular Hessian?)");
            break;
        }
        case IhvpMode::neumann: {
            double eta = cfg.neumann_scale;
            if (eta <= 0.0) eta = estimate_neumann_scale(hvp, dim);
            local.eta = eta;
            Vector term = rhs;
            Vector acc = rhs;
            const double guard = 1e6 * std::max(local.rhs_norm, 1e-300);
            for (int j = 1; j < cfg.neumann_steps; ++j) {
                term -= eta * hvp(term);
                ++local.oracle_calls;
                if (!all_finite(term) || term.norm() > guard)
                    throw SolverDivergedError("ihvp: Neumann series diverged");
                acc += term;
            }
            result = eta * acc;
            break;
        }
    }
    local.result_norm = result.norm();
    if (info) *info = local;
    return result;
}

/// Sensitivity of the bargaining weights to the preferences:
/// d(alpha)/d(p) = [G^T G + L0]^{-1} L1 with L0 = diag(p_i / alpha_i^2) and
/// L1 = diag(1 / alpha_i). L0 > 0 makes the system positive definite.
struct AlphaJacobian {
    Matrix matrix;   // K x K, entry (j, k) = d alpha_j / d p_k
    Vector lambda0;  // p_i / alpha_i^2
    Vector lambda1;  // 1 / alpha_i
};

inline AlphaJacobian dalpha_dp(const TaskGradientSet& grads, const Vector& p,
                               const BargainingWeights& weights) {
    if (!weights.converged)
        throw InvalidInputError("dalpha_dp: requires converged bargaining weights");
    if (!all_finite(grads.gram())) throw InvalidInputError("dalpha_dp: non-finite Gram matrix");
    if (p.size() != grads.num_tasks() || weights.alpha.size() != grads.num_tasks())
        throw InvalidInputError("dalpha_dp: size mismatch");
    if (weights.alpha.minCoeff() <= 0.0 || p.minCoeff() <= 0.0)
        throw InvalidInputError("dalpha_dp: requires positive alpha and p");

    AlphaJacobian jac;
    jac.lambda0 = p.cwiseQuotient(weights.alpha.cwiseProduct(weights.alpha));
    jac.lambda1 = weights.alpha.cwiseInverse();
    Matrix a = grads.gram();
    a.diagonal().array() += weights.regularization;  // matrix the weights actually solve
    a.diagonal() += jac.lambda0;
    jac.matrix = a.llt().solve(Matrix(jac.lambda1.asDiagonal()));
    if (!all_finite(jac.matrix)) throw SolverDivergedError("dalpha_dp: singular system");
    return jac;
}

inline AlphaJacobian dalpha_dp(const TaskGradientSet& grads, const PreferenceVector& prefs,
                               const BargainingWeights& weights) {
    return dalpha_dp(grads, prefs.probs(), weights);
}

/// v^T G as a length-K vector: entry i is v^T g_i, the contraction of v with
/// the mixed second derivative of the weighted training loss in (theta, alpha).
inline Vector mixed_partial_vjp(const TaskSuite& suite, const Vector& theta, const Vector& v,
                                const Batch& batch = {}) {
    if (theta.size() != suite.param_dim() || v.size() != suite.param_dim())
        throw InvalidInputError("mixed_partial_vjp: dimension mismatch");
    Vector out(suite.num_tasks());
    for (int i = 0; i < suite.num_tasks(); ++i) out[i] = v.dot(suite.grad(i, theta, batch));
    return out;
}

/// Maps a preference-space gradient through the softmax parameterization:
/// grad_z_j = p_j (grad_p_j - <p, grad_p>). Always orthogonal to (1,...,1).
inline Vector chain_through_softmax(const Vector& grad_p, const Vector& probs) {
    const double mean = probs.dot(grad_p);
    return probs.cwiseProduct(grad_p.array().matrix() - Vector::Constant(probs.size(), mean));
}

struct HypergradResult {
    Vector grad_p;       // d L_V / d p
    Vector grad_logits;  // chained through softmax; components sum to zero
    IhvpInfo ihvp_info;
    double ihvp_vec_norm = 0.0;
    double task_term_norm = 0.0;
};

/// Validation-loss derivative with respect to the preference vector:
///   w      = H^{-1} (dL_V/dtheta)  with H = sum_i alpha_i Hess(l_i),
///   m_i    = w^T g_i,
///   grad_p = -(dalpha/dp)^T m.
/// `grads` must be the gradient set the weights were solved against, and
/// `batch` the batch it was built from.
inline HypergradResult hypergradient(const TaskSuite& suite, const Vector& theta,
                                     const TaskGradientSet& grads, const PreferenceVector& prefs,
                                     const BargainingWeights& weights, const Vector& val_grad,
                                     const IhvpConfig& cfg, const Batch& batch = {}) {
    if (!weights.converged)
        throw InvalidInputError("hypergradient: requires converged bargaining weights");
    if (val_grad.size() != suite.param_dim())
        throw InvalidInputError("hypergradient: val_grad dimension mismatch");

    HypergradResult res;
    const Vector alpha = weights.alpha;
    HvpOracle oracle = [&](const Vector& v) { return suite.hvp(alpha, theta, v, batch); };
    const Vector w = ihvp(oracle, val_grad, cfg, &res.ihvp_info);
    res.ihvp_vec_norm = w.norm();

    const Vector m = mixed_partial_vjp(suite, theta, w, batch);
    res.task_term_norm = m.norm();

    const AlphaJacobian jac = dalpha_dp(grads, prefs, weights);
    res.grad_p = -(jac.matrix.transpose() * m);
    res.grad_logits = chain_through_softmax(res.grad_p, prefs.probs());
    if (!all_finite(res.grad_p) || !all_finite(res.grad_logits))
        throw SolverDivergedError("hypergradient: non-finite result");
    return res;
}

}  // namespace auxinash
