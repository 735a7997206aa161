#pragma once

#include <algorithm>
#include <numeric>

#include "auxinash/common.hpp"

namespace auxinash {

/// Numerically stable softmax.
inline Vector softmax(const Vector& z) {
    const double zmax = z.maxCoeff();
    Vector p = (z.array() - zmax).exp();
    p /= p.sum();
    return p;
}

/// Euclidean projection onto the simplex {p : p_i >= floor, sum p_i = 1}.
/// Sort-based algorithm on the shifted variables q = p - floor.
inline Vector project_to_simplex(const Vector& v, double floor = 0.0) {
    const int k = static_cast<int>(v.size());
    if (k < 1) throw InvalidInputError("project_to_simplex: empty vector");
    const double mass = 1.0 - floor * k;
    if (mass <= 0.0) throw InvalidInputError("project_to_simplex: floor too large for dimension");
    Vector q = v.array() - floor;
    std::vector<double> u(q.data(), q.data() + k);
    std::sort(u.begin(), u.end(), std::greater<double>());
    double running = 0.0, tau = 0.0;
    for (int i = 0; i < k; ++i) {
        running += u[static_cast<std::size_t>(i)];
        const double t = (running - mass) / (i + 1);
        if (u[static_cast<std::size_t>(i)] - t > 0.0) tau = t;
    }
    return (q.array() - tau).cwiseMax(0.0) + floor;
}

/// Strictly positive point on the task simplex, stored both as
/// probabilities and as unconstrained logits (p = softmax(logits)).
class PreferenceVector {
public:
    static PreferenceVector uniform(int num_tasks) {
        if (num_tasks < 1) throw InvalidInputError("PreferenceVector: need at least one task");
        return PreferenceVector(Vector::Constant(num_tasks, 1.0 / num_tasks),
                                Vector::Zero(num_tasks));
    }

    static PreferenceVector from_probs(const Vector& probs) {
        if (probs.size() < 1) throw InvalidInputError("PreferenceVector: empty probability vector");
        if (!all_finite(probs)) throw InvalidInputError("PreferenceVector: non-finite probabilities");
        if (probs.minCoeff() <= 0.0)
            throw InvalidInputError("PreferenceVector: probabilities must be strictly positive");
        const double s = probs.sum();
        if (std::abs(s - 1.0) > 1e-9)
            throw InvalidInputError("PreferenceVector: probabilities must sum to 1");
        Vector p = probs / s;
        return PreferenceVector(p, p.array().log().matrix());
    }

    static PreferenceVector from_logits(const Vector& logits) {
        if (logits.size() < 1) throw InvalidInputError("PreferenceVector: empty logit vector");
        if (!all_finite(logits)) throw InvalidInputError("PreferenceVector: non-finite logits");
        return PreferenceVector(softmax(logits), logits);
    }

    const Vector& probs() const { return probs_; }
    const Vector& logits() const { return logits_; }
    int size() const { return static_cast<int>(probs_.size()); }

private:
    PreferenceVector(Vector probs, Vector logits)
        : probs_(std::move(probs)), logits_(std::move(logits)) {}

    Vector probs_;
    Vector logits_;
};

}  // namespace auxinash
