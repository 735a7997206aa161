// Test-side oracles, independent of the library's solver paths:
// damped Newton on the bargaining system, finite differences, dense
// linear solves, simplex grid search, and random instance generators.
#pragma once

#include <functional>
#include <stdexcept>
#include <vector>

#include "auxinash/common.hpp"
#include "auxinash/gradient_set.hpp"

namespace oracle {

using auxinash::Matrix;
using auxinash::Rng;
using auxinash::Vector;

/// Damped Newton iteration on F(alpha) = M alpha - p / alpha started from
/// alpha = sqrt(p). The Jacobian M + diag(p/alpha^2) is SPD, so this is
/// Newton on the gradient of a strictly convex potential and converges to
/// the unique positive root.
inline Vector newton_solve_alpha(const Matrix& m, const Vector& p, double tol = 1e-12,
                                 int max_iters = 200) {
    Vector alpha = p.array().sqrt().matrix();
    Vector f = m * alpha - p.cwiseQuotient(alpha);
    for (int it = 0; it < max_iters; ++it) {
        const double fn = f.cwiseAbs().maxCoeff();
        if (fn <= tol) return alpha;
        Matrix jac = m;
        jac.diagonal() += p.cwiseQuotient(alpha.cwiseProduct(alpha));
        Vector delta = jac.llt().solve(-f);
        double s = 1.0;
        for (Eigen::Index i = 0; i < alpha.size(); ++i)
            if (delta[i] < 0.0) s = std::min(s, -0.9 * alpha[i] / delta[i]);
        bool accepted = false;
        for (int bt = 0; bt < 60; ++bt) {
            Vector trial = alpha + s * delta;
            if (trial.minCoeff() > 0.0) {
                Vector ft = m * trial - p.cwiseQuotient(trial);
                if (ft.cwiseAbs().maxCoeff() < fn) {
                    alpha = trial;
                    f = ft;
                    accepted = true;
                    break;
                }
            }
            s *= 0.5;
        }
        if (!accepted) throw std::runtime_error("newton oracle: line search failed");
    }
    if (f.cwiseAbs().maxCoeff() <= tol) return alpha;
    throw std::runtime_error("newton oracle: did not converge");
}

/// Random d x K gradient matrix with prescribed Gram condition number:
/// G = Q diag(s) R^T with orthonormal Q (d x K), orthogonal R (K x K) and
/// singular values log-spaced so cond(G^T G) == gram_condition.
inline Matrix random_gradient_matrix(Rng& rng, int d, int k, double gram_condition) {
    Matrix q = Eigen::HouseholderQR<Matrix>(rng.normal_matrix(d, k))
                   .householderQ() *
               Matrix::Identity(d, k);
    Matrix r = Eigen::HouseholderQR<Matrix>(rng.normal_matrix(k, k))
                   .householderQ() *
               Matrix::Identity(k, k);
    const double smax = 1.0;
    const double smin = smax / std::sqrt(gram_condition);
    Vector s(k);
    for (int i = 0; i < k; ++i) {
        const double frac = (k == 1) ? 0.0 : static_cast<double>(i) / (k - 1);
        s[i] = smax * std::pow(smin / smax, frac);
    }
    // randomize the interior singular values a bit, keep the extremes pinned
    for (int i = 1; i + 1 < k; ++i)
        s[i] = std::exp(std::log(smin) + rng.uniform() * (std::log(smax) - std::log(smin)));
    return q * s.asDiagonal() * r.transpose();
}

struct RandomInstance {
    auxinash::TaskGradientSet grads;
    Vector p;
};

inline RandomInstance random_instance(Rng& rng, int k_min = 2, int k_max = 8, int d_max = 64,
                                      double max_gram_condition = 1e3) {
    const int k = k_min + rng.uniform_int(k_max - k_min + 1);
    const int d = k + rng.uniform_int(d_max - k + 1);
    const double cond = std::exp(rng.uniform() * std::log(max_gram_condition));
    return RandomInstance{auxinash::TaskGradientSet(random_gradient_matrix(rng, d, k, cond)),
                          rng.simplex(k)};
}

/// Central finite difference of a scalar function.
inline double central_diff(const std::function<double(double)>& f, double x, double h) {
    return (f(x + h) - f(x - h)) / (2.0 * h);
}

/// Central finite-difference gradient of a vector-to-scalar function.
inline Vector fd_gradient(const std::function<double(const Vector&)>& f, const Vector& x,
                          double h) {
    Vector g(x.size());
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        Vector xp = x, xm = x;
        xp[i] += h;
        xm[i] -= h;
        g[i] = (f(xp) - f(xm)) / (2.0 * h);
    }
    return g;
}

/// Exhaustive search of min_{w in simplex} ||G w|| on a regular grid
/// (K = 2 or 3) at the given resolution.
inline double grid_min_norm_combination(const Matrix& g, double resolution) {
    const int k = static_cast<int>(g.cols());
    const int n = static_cast<int>(std::lround(1.0 / resolution));
    double best = std::numeric_limits<double>::infinity();
    if (k == 1) return g.col(0).norm();
    if (k == 2) {
        for (int i = 0; i <= n; ++i) {
            const double w0 = static_cast<double>(i) / n;
            best = std::min(best, (g.col(0) * w0 + g.col(1) * (1.0 - w0)).norm());
        }
        return best;
    }
    if (k == 3) {
        for (int i = 0; i <= n; ++i) {
            for (int j = 0; j + i <= n; ++j) {
                const double w0 = static_cast<double>(i) / n;
                const double w1 = static_cast<double>(j) / n;
                best = std::min(best,
                                (g.col(0) * w0 + g.col(1) * w1 + g.col(2) * (1.0 - w0 - w1)).norm());
            }
        }
        return best;
    }
    throw std::runtime_error("grid oracle supports K <= 3");
}

/// Angle between two directions in radians.
inline double angle_between(const Vector& a, const Vector& b) {
    const double c = a.dot(b) / (a.norm() * b.norm());
    return std::acos(std::clamp(c, -1.0, 1.0));
}

}  // namespace oracle
