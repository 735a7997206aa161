#pragma once

#include <algorithm>
#include <vector>

#include "auxinash/common.hpp"
#include "auxinash/preference.hpp"

namespace auxinash {

struct MinNormResult {
    Vector weights;   // simplex point attaining the minimum
    double value;     // min over the simplex of ||G w||
    int iterations;
};

/// Minimizes ||G w||^2 = w^T (G^T G) w over the simplex by projected
/// gradient with the 1/lambda_max step. The value is zero exactly at
/// Pareto-stationary gradient sets.
inline MinNormResult min_norm_simplex_combination(const Matrix& gram, double tol = 1e-10,
                                                  int max_iters = 50000) {
    const int k = static_cast<int>(gram.rows());
    if (k < 1 || gram.cols() != k) throw InvalidInputError("min_norm: Gram matrix must be square");
    if (!all_finite(gram)) throw InvalidInputError("min_norm: non-finite Gram matrix");
    Vector w = Vector::Constant(k, 1.0 / k);
    if (k == 1) return MinNormResult{w, std::sqrt(std::max(0.0, gram(0, 0))), 0};

    Eigen::SelfAdjointEigenSolver<Matrix> es(gram, Eigen::EigenvaluesOnly);
    const double lmax = es.eigenvalues().maxCoeff();
    if (lmax <= 0.0) return MinNormResult{w, 0.0, 0};

    const double step = 1.0 / lmax;
    int it = 0;
    for (; it < max_iters; ++it) {
        Vector w_next = project_to_simplex(w - step * (gram * w));
        const double move = (w_next - w).cwiseAbs().maxCoeff();
        w = w_next;
        if (move <= tol) break;
    }
    return MinNormResult{w, std::sqrt(std::max(0.0, w.dot(gram * w))), it};
}

/// Wolfe's min-norm-point algorithm over the convex hull of the gradient
/// columns, run entirely in Gram space. Finite termination, used where the
/// projected-gradient route is not precise enough (e.g. solver feasibility
/// restoration on near-dependent gradients).
inline MinNormResult min_norm_hull_point(const Matrix& gram) {
    const int k = static_cast<int>(gram.rows());
    const double scale = std::max(gram.cwiseAbs().maxCoeff(), 1e-300);
    const double opt_tol = 1e-12 * scale;

    int start = 0;
    for (int i = 1; i < k; ++i)
        if (gram(i, i) < gram(start, start)) start = i;

    std::vector<int> support{start};
    Vector w = Vector::Zero(k);
    w[start] = 1.0;

    auto affine_minimizer = [&](const std::vector<int>& s) {
        const int n = static_cast<int>(s.size());
        Matrix kkt = Matrix::Zero(n + 1, n + 1);
        for (int a = 0; a < n; ++a)
            for (int b = 0; b < n; ++b) kkt(a, b) = 2.0 * gram(s[a], s[b]);
        for (int a = 0; a < n; ++a) kkt(a, a) += 1e-13 * scale;
        kkt.block(0, n, n, 1).setOnes();
        kkt.block(n, 0, 1, n).setOnes();
        Vector rhs = Vector::Zero(n + 1);
        rhs[n] = 1.0;
        Vector sol = Eigen::FullPivLU<Matrix>(kkt).solve(rhs);
        return Vector(sol.head(n));
    };

    int iters = 0;
    for (int major = 0; major < 64 * k * k + 64; ++major) {
        ++iters;
        const Vector q = gram * w;
        const double val2 = w.dot(q);
        int j = 0;
        for (int i = 1; i < k; ++i)
            if (q[i] < q[j]) j = i;
        if (q[j] >= val2 - opt_tol) break;
        if (std::find(support.begin(), support.end(), j) == support.end()) support.push_back(j);

        for (int minor = 0; minor < 4 * k + 8; ++minor) {
            const Vector v = affine_minimizer(support);
            if (v.minCoeff() > 1e-14) {
                w.setZero();
                for (std::size_t a = 0; a < support.size(); ++a) w[support[a]] = v[a];
                break;
            }
            double theta = 1.0;
            for (std::size_t a = 0; a < support.size(); ++a) {
                const double wa = w[support[a]];
                if (v[a] < wa)
                    theta = std::min(theta, wa / std::max(wa - v[a], 1e-300));
            }
            std::vector<int> kept;
            Vector w_new = Vector::Zero(k);
            for (std::size_t a = 0; a < support.size(); ++a) {
                const double x = (1.0 - theta) * w[support[a]] + theta * v[a];
                if (x > 1e-14) {
                    kept.push_back(support[a]);
                    w_new[support[a]] = x;
                }
            }
            if (kept.empty()) {
                kept.push_back(support[0]);
                w_new[support[0]] = 1.0;
            }
            support = std::move(kept);
            w = w_new;
            w /= w.sum();
        }
    }
    return MinNormResult{w, std::sqrt(std::max(0.0, w.dot(gram * w))), iters};
}

}  // namespace auxinash
