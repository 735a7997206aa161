#pragma once

#include <utility>
#include <vector>

#include "auxinash/common.hpp"

namespace auxinash {

/// Stacked per-task gradients: the d x K matrix G whose i-th column is the
/// gradient of task i, together with its cached K x K Gram matrix G^T G.
/// Immutable after construction.
class TaskGradientSet {
public:
    explicit TaskGradientSet(Matrix g) : g_(std::move(g)) {
        if (g_.rows() < 1 || g_.cols() < 1)
            throw InvalidInputError("TaskGradientSet: need at least one task and one dimension");
        if (!all_finite(g_)) throw InvalidInputError("TaskGradientSet: non-finite gradient entries");
        gram_ = g_.transpose() * g_;
        gram_ = 0.5 * (gram_ + gram_.transpose()).eval();  // kill round-off asymmetry
        Eigen::SelfAdjointEigenSolver<Matrix> es(gram_, Eigen::EigenvaluesOnly);
        gram_min_eig_ = es.eigenvalues().minCoeff();
    }

    const Matrix& matrix() const { return g_; }
    const Matrix& gram() const { return gram_; }
    int num_tasks() const { return static_cast<int>(g_.cols()); }
    int dim() const { return static_cast<int>(g_.rows()); }

    /// Smallest eigenvalue of the Gram matrix; ~0 means the task gradients
    /// are (near-)linearly dependent.
    double gram_min_eigenvalue() const { return gram_min_eig_; }
    bool near_singular(double eps) const { return gram_min_eig_ < eps; }

    /// Column view of task i's gradient.
    Vector gradient(int task) const { return g_.col(task); }

private:
    Matrix g_;
    Matrix gram_;
    double gram_min_eig_ = 0.0;
};

/// Stacks K equal-length gradient vectors into a TaskGradientSet.
inline TaskGradientSet build_gradient_set(const std::vector<Vector>& gradients) {
    if (gradients.empty()) throw InvalidInputError("build_gradient_set: no gradients given");
    const auto d = gradients.front().size();
    if (d < 1) throw InvalidInputError("build_gradient_set: zero-dimensional gradients");
    Matrix g(d, static_cast<Eigen::Index>(gradients.size()));
    for (std::size_t i = 0; i < gradients.size(); ++i) {
        if (gradients[i].size() != d)
            throw InvalidInputError("build_gradient_set: gradient length mismatch");
        g.col(static_cast<Eigen::Index>(i)) = gradients[i];
    }
    return TaskGradientSet(std::move(g));
}

}  // namespace auxinash
