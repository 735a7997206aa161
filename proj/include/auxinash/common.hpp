#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace auxinash {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

inline bool all_finite(const Vector& v) { return v.allFinite(); }
inline bool all_finite(const Matrix& m) { return m.allFinite(); }

/// Thrown when an input violates a documented precondition.
struct InvalidInputError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// Thrown when an iterative routine produces non-finite values.
struct SolverDivergedError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Distinguished outcome: every task gradient vanishes, so no bargaining
/// direction exists and the caller should halt optimization.
struct ParetoStationaryError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Formats a double with 17 significant digits (round-trip safe).
inline std::string fmt_g17(double x) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    return buf;
}

/// Deterministic random source. Wraps mt19937_64 with hand-rolled
/// uniform/normal transforms so streams are identical across standard
/// library implementations (std distributions are not pinned).
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    /// Uniform double in [0, 1).
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Standard normal via Box-Muller with one cached draw.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double t = 2.0 * M_PI * u2;
        spare_ = r * std::sin(t);
        has_spare_ = true;
        return r * std::cos(t);
    }

    /// Uniform integer in [0, n).
    int uniform_int(int n) { return static_cast<int>(engine_() % static_cast<std::uint64_t>(n)); }

    Vector normal_vector(int n) {
        Vector v(n);
        for (int i = 0; i < n; ++i) v[i] = normal();
        return v;
    }

    Matrix normal_matrix(int rows, int cols) {
        Matrix m(rows, cols);
        for (int j = 0; j < cols; ++j)
            for (int i = 0; i < rows; ++i) m(i, j) = normal();
        return m;
    }

    /// Point from the flat Dirichlet distribution on the K-simplex.
    Vector simplex(int k) {
        Vector v(k);
        for (int i = 0; i < k; ++i) {
            double u;
            do {
                u = uniform();
            } while (u <= 0.0);
            v[i] = -std::log(u);
        }
        return v / v.sum();
    }

    /// In-place Fisher-Yates shuffle (pinned, unlike std::shuffle).
    template <typename T>
    void shuffle(std::vector<T>& xs) {
        for (int i = static_cast<int>(xs.size()) - 1; i > 0; --i) {
            const int j = uniform_int(i + 1);
            std::swap(xs[static_cast<std::size_t>(i)], xs[static_cast<std::size_t>(j)]);
        }
    }

    std::uint64_t raw() { return engine_(); }

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace auxinash
