#pragma once

#include <fstream>
#include <memory>
#include <optional>
#include <sstream>
#include <vector>

#include "auxinash/common.hpp"

namespace auxinash {

/// Subset of sample indices; an empty index list means the full set.
struct Batch {
    std::vector<int> indices;
    bool all() const { return indices.empty(); }
};

/// A differentiable multi-objective problem: per-task loss and gradient,
/// plus a weighted Hessian-vector-product oracle (sum_i alpha_i Hess_i) v.
/// Read-only after construction.
class TaskSuite {
public:
    virtual ~TaskSuite() = default;

    virtual int num_tasks() const = 0;
    virtual int param_dim() const = 0;
    virtual double loss(int task, const Vector& theta, const Batch& batch = {}) const = 0;
    virtual Vector grad(int task, const Vector& theta, const Batch& batch = {}) const = 0;

    Vector weighted_grad(const Vector& alpha, const Vector& theta, const Batch& batch = {}) const {
        Vector g = Vector::Zero(param_dim());
        for (int i = 0; i < num_tasks(); ++i) g += alpha[i] * grad(i, theta, batch);
        return g;
    }

    /// Default HVP: central differences of the weighted gradient,
    /// (g(theta + h v/|v|) - g(theta - h v/|v|)) |v| / (2 h).
    virtual Vector hvp(const Vector& alpha, const Vector& theta, const Vector& v,
                       const Batch& batch = {}) const {
        const double vn = v.norm();
        if (vn == 0.0) return Vector::Zero(param_dim());
        const double h = std::sqrt(std::numeric_limits<double>::epsilon()) * (1.0 + theta.norm());
        const Vector dir = v / vn;
        const Vector gp = weighted_grad(alpha, theta + h * dir, batch);
        const Vector gm = weighted_grad(alpha, theta - h * dir, batch);
        return (gp - gm) * (vn / (2.0 * h));
    }

    /// Known gradient-Lipschitz constant, when the suite has one.
    virtual std::optional<double> smoothness_bound() const { return std::nullopt; }

    /// Number of data samples batches index into; 0 for batchless suites.
    virtual int num_samples() const { return 0; }

    virtual bool has_heldout() const { return false; }
    virtual double heldout_loss(int, const Vector&) const {
        throw InvalidInputError("suite has no held-out data");
    }
    virtual Vector heldout_grad(int, const Vector&) const {
        throw InvalidInputError("suite has no held-out data");
    }
};

// ---------------------------------------------------------------------------
// Quadratic suite: l_i(theta) = 0.5 (theta - c_i)^T A_i (theta - c_i)
// ---------------------------------------------------------------------------

struct QuadraticSuiteSpec {
    std::vector<Matrix> a;
    std::vector<Vector> c;
};

class QuadraticSuite final : public TaskSuite {
public:
    explicit QuadraticSuite(QuadraticSuiteSpec spec) : spec_(std::move(spec)) {
        if (spec_.a.empty() || spec_.a.size() != spec_.c.size())
            throw InvalidInputError("QuadraticSuite: need one SPD matrix and center per task");
        dim_ = static_cast<int>(spec_.c.front().size());
        smoothness_ = 0.0;
        for (std::size_t i = 0; i < spec_.a.size(); ++i) {
            const Matrix& a = spec_.a[i];
            if (a.rows() != dim_ || a.cols() != dim_ || spec_.c[i].size() != dim_)
                throw InvalidInputError("QuadraticSuite: dimension mismatch");
            if ((a - a.transpose()).cwiseAbs().maxCoeff() >
                1e-12 * std::max(1.0, a.cwiseAbs().maxCoeff()))
                throw InvalidInputError("QuadraticSuite: matrix not symmetric");
            Eigen::SelfAdjointEigenSolver<Matrix> es(a, Eigen::EigenvaluesOnly);
            if (es.eigenvalues().minCoeff() <= 0.0)
                throw InvalidInputError("QuadraticSuite: matrix not positive definite");
            smoothness_ = std::max(smoothness_, es.eigenvalues().maxCoeff());
        }
    }

    int num_tasks() const override { return static_cast<int>(spec_.a.size()); }
    int param_dim() const override { return dim_; }

    double loss(int task, const Vector& theta, const Batch& = {}) const override {
        const Vector d = theta - spec_.c[static_cast<std::size_t>(task)];
        return 0.5 * d.dot(spec_.a[static_cast<std::size_t>(task)] * d);
    }

    Vector grad(int task, const Vector& theta, const Batch& = {}) const override {
        return spec_.a[static_cast<std::size_t>(task)] *
               (theta - spec_.c[static_cast<std::size_t>(task)]);
    }

    Vector hvp(const Vector& alpha, const Vector&, const Vector& v,
               const Batch& = {}) const override {
        Vector out = Vector::Zero(dim_);
        for (std::size_t i = 0; i < spec_.a.size(); ++i) out += alpha[static_cast<int>(i)] * (spec_.a[i] * v);
        return out;
    }

    std::optional<double> smoothness_bound() const override { return smoothness_; }

    /// Minimizer of sum_i w_i l_i: (sum w_i A_i)^{-1} sum w_i A_i c_i.
    /// Sweeping w over the simplex traces the Pareto set.
    Vector blended_optimum(const Vector& w) const {
        Matrix h = Matrix::Zero(dim_, dim_);
        Vector rhs = Vector::Zero(dim_);
        for (std::size_t i = 0; i < spec_.a.size(); ++i) {
            h += w[static_cast<int>(i)] * spec_.a[i];
            rhs += w[static_cast<int>(i)] * (spec_.a[i] * spec_.c[i]);
        }
        return h.llt().solve(rhs);
    }

    const QuadraticSuiteSpec& spec() const { return spec_; }

private:
    QuadraticSuiteSpec spec_;
    int dim_ = 0;
    double smoothness_ = 0.0;
};

inline QuadraticSuite make_quadratic(QuadraticSuiteSpec spec) {
    return QuadraticSuite(std::move(spec));
}

// ---------------------------------------------------------------------------
// Illustrative regression: shared W in R^2, three linear-regression tasks.
// Main and helpful share the optimum W* = (1, 1) (noise 5.0 and 0.25);
// the harmful task pulls toward (-1, -4).
// ---------------------------------------------------------------------------

struct IllustrativeDataset {
    Matrix inputs;  // n x 2
    Vector main_targets;
    Vector helpful_targets;
    Vector harmful_targets;
    std::uint64_t seed = 0;

    int size() const { return static_cast<int>(inputs.rows()); }

    IllustrativeDataset subset(const std::vector<int>& idx) const {
        IllustrativeDataset out;
        out.seed = seed;
        out.inputs.resize(static_cast<Eigen::Index>(idx.size()), 2);
        out.main_targets.resize(static_cast<Eigen::Index>(idx.size()));
        out.helpful_targets.resize(static_cast<Eigen::Index>(idx.size()));
        out.harmful_targets.resize(static_cast<Eigen::Index>(idx.size()));
        for (std::size_t r = 0; r < idx.size(); ++r) {
            out.inputs.row(static_cast<Eigen::Index>(r)) = inputs.row(idx[r]);
            out.main_targets[static_cast<Eigen::Index>(r)] = main_targets[idx[r]];
            out.helpful_targets[static_cast<Eigen::Index>(r)] = helpful_targets[idx[r]];
            out.harmful_targets[static_cast<Eigen::Index>(r)] = harmful_targets[idx[r]];
        }
        return out;
    }

    void to_csv(const std::string& path) const {
        std::ofstream f(path);
        if (!f) throw InvalidInputError("IllustrativeDataset: cannot open " + path);
        f << "x1,x2,y_main,y_helpful,y_harmful\n";
        for (int i = 0; i < size(); ++i)
            f << fmt_g17(inputs(i, 0)) << ',' << fmt_g17(inputs(i, 1)) << ','
              << fmt_g17(main_targets[i]) << ',' << fmt_g17(helpful_targets[i]) << ','
              << fmt_g17(harmful_targets[i]) << '\n';
    }

    static IllustrativeDataset from_csv(const std::string& path) {
        std::ifstream f(path);
        if (!f) throw InvalidInputError("IllustrativeDataset: cannot open " + path);
        std::string line;
        if (!std::getline(f, line) || line != "x1,x2,y_main,y_helpful,y_harmful")
            throw InvalidInputError("IllustrativeDataset: bad CSV header");
        std::vector<std::array<double, 5>> rows;
        while (std::getline(f, line)) {
            if (line.empty()) continue;
            std::array<double, 5> row{};
            std::stringstream ss(line);
            std::string cell;
            for (int c = 0; c < 5; ++c) {
                if (!std::getline(ss, cell, ',')) throw InvalidInputError("IllustrativeDataset: short row");
                row[static_cast<std::size_t>(c)] = std::stod(cell);
            }
            rows.push_back(row);
        }
        IllustrativeDataset out;
        const auto n = static_cast<Eigen::Index>(rows.size());
        out.inputs.resize(n, 2);
        out.main_targets.resize(n);
        out.helpful_targets.resize(n);
        out.harmful_targets.resize(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            const auto& r = rows[static_cast<std::size_t>(i)];
            out.inputs(i, 0) = r[0];
            out.inputs(i, 1) = r[1];
            out.main_targets[i] = r[2];
            out.helpful_targets[i] = r[3];
            out.harmful_targets[i] = r[4];
        }
        return out;
    }
};

namespace illustrative_constants {
inline const Vector w_star = (Vector(2) << 1.0, 1.0).finished();
inline const Vector w_tilde = (Vector(2) << -1.0, -4.0).finished();
constexpr double sigma_helpful = 0.25;
constexpr double sigma_main = 20.0 * sigma_helpful;  // = 5.0
constexpr int default_n = 1000;
}  // namespace illustrative_constants

/// Draws n samples with x ~ U[-2,2]^2, y = W^T x + sigma * noise.
/// Bit-identical regeneration from (seed, n).
inline IllustrativeDataset generate_illustrative_dataset(int n, std::uint64_t seed,
                                                         double sigma_main_override = -1.0) {
    namespace ic = illustrative_constants;
    const double s_main = sigma_main_override >= 0.0 ? sigma_main_override : ic::sigma_main;
    IllustrativeDataset ds;
    ds.seed = seed;
    ds.inputs.resize(n, 2);
    ds.main_targets.resize(n);
    ds.helpful_targets.resize(n);
    ds.harmful_targets.resize(n);
    Rng rng(seed);
    for (int i = 0; i < n; ++i) {
        ds.inputs(i, 0) = rng.uniform(-2.0, 2.0);
        ds.inputs(i, 1) = rng.uniform(-2.0, 2.0);
        const double clean = ic::w_star.dot(ds.inputs.row(i));
        const double harm_clean = ic::w_tilde.dot(ds.inputs.row(i));
        ds.main_targets[i] = clean + s_main * rng.normal();
        ds.helpful_targets[i] = clean + ic::sigma_helpful * rng.normal();
        ds.harmful_targets[i] = harm_clean + ic::sigma_helpful * rng.normal();
    }
    return ds;
}

/// Mean-squared-error linear regression over the dataset; tasks are
/// (main, helpful, harmful). All tasks share the input design, so the
/// per-task Hessians coincide and the HVP is exact.
class IllustrativeSuite final : public TaskSuite {
public:
    IllustrativeSuite(IllustrativeDataset train, IllustrativeDataset heldout)
        : train_(std::move(train)), heldout_(std::move(heldout)) {
        if (train_.size() < 2) throw InvalidInputError("IllustrativeSuite: need n >= 2");
        Eigen::SelfAdjointEigenSolver<Matrix> es(
            (2.0 / train_.size()) * (train_.inputs.transpose() * train_.inputs),
            Eigen::EigenvaluesOnly);
        smoothness_ = es.eigenvalues().maxCoeff();
    }

    int num_tasks() const override { return 3; }
    int param_dim() const override { return 2; }
    int num_samples() const override { return train_.size(); }

    double loss(int task, const Vector& theta, const Batch& batch = {}) const override {
        return mse(task, theta, train_, batch);
    }

    Vector grad(int task, const Vector& theta, const Batch& batch = {}) const override {
        return mse_grad(task, theta, train_, batch);
    }

    Vector hvp(const Vector& alpha, const Vector&, const Vector& v,
               const Batch& batch = {}) const override {
        // Hess_i = (2/n) X^T X for every task
        double total = alpha.sum();
        if (batch.all()) {
            return total * (2.0 / train_.size()) *
                   (train_.inputs.transpose() * (train_.inputs * v));
        }
        Vector out = Vector::Zero(2);
        for (int idx : batch.indices) {
            const Vector x = train_.inputs.row(idx);
            out += x * (x.dot(v));
        }
        return total * (2.0 / static_cast<double>(batch.indices.size())) * out;
    }

    std::optional<double> smoothness_bound() const override { return 3.0 * smoothness_; }

    bool has_heldout() const override { return heldout_.size() > 0; }
    double heldout_loss(int task, const Vector& theta) const override {
        return mse(task, theta, heldout_, {});
    }
    Vector heldout_grad(int task, const Vector& theta) const override {
        return mse_grad(task, theta, heldout_, {});
    }

    const IllustrativeDataset& train_data() const { return train_; }
    const IllustrativeDataset& heldout_data() const { return heldout_; }

    /// Population loss gradient under x ~ U[-2,2]^2 (E[xx^T] = (4/3) I):
    /// grad = 2 E[xx^T] (W - W_opt) for the task's clean optimum.
    static Vector population_gradient(int task, const Vector& w) {
        namespace ic = illustrative_constants;
        const Vector& opt = (task == 2) ? ic::w_tilde : ic::w_star;
        return (8.0 / 3.0) * (w - opt);
    }

private:
    const Vector& targets(int task, const IllustrativeDataset& ds) const {
        switch (task) {
            case 0: return ds.main_targets;
            case 1: return ds.helpful_targets;
            case 2: return ds.harmful_targets;
            default: throw InvalidInputError("IllustrativeSuite: task index out of range");
        }
    }

    double mse(int task, const Vector& theta, const IllustrativeDataset& ds,
               const Batch& batch) const {
        const Vector& y = targets(task, ds);
        if (batch.all()) {
            return (ds.inputs * theta - y).squaredNorm() / ds.size();
        }
        double acc = 0.0;
        for (int idx : batch.indices) {
            const double r = ds.inputs.row(idx).dot(theta) - y[idx];
            acc += r * r;
        }
        return acc / static_cast<double>(batch.indices.size());
    }

    Vector mse_grad(int task, const Vector& theta, const IllustrativeDataset& ds,
                    const Batch& batch) const {
        const Vector& y = targets(task, ds);
        if (batch.all()) {
            return (2.0 / ds.size()) * (ds.inputs.transpose() * (ds.inputs * theta - y));
        }
        Vector out = Vector::Zero(2);
        for (int idx : batch.indices) {
            const Vector x = ds.inputs.row(idx);
            out += x * (x.dot(theta) - y[idx]);
        }
        return (2.0 / static_cast<double>(batch.indices.size())) * out;
    }

    IllustrativeDataset train_;
    IllustrativeDataset heldout_;
    double smoothness_ = 0.0;
};

struct IllustrativeProblem {
    IllustrativeSuite suite;
    IllustrativeDataset train;
    IllustrativeDataset heldout;
};

/// Builds the three-task regression problem with n training points and a
/// held-out set of max(2, n/10) points drawn from an independent stream.
inline IllustrativeProblem make_illustrative(int n, std::uint64_t seed) {
    if (n < 2) throw InvalidInputError("make_illustrative: need n >= 2");
    IllustrativeDataset train = generate_illustrative_dataset(n, seed);
    IllustrativeDataset heldout =
        generate_illustrative_dataset(std::max(2, n / 10), seed ^ 0x7f4a7c15ull);
    IllustrativeSuite suite(train, heldout);
    return IllustrativeProblem{std::move(suite), std::move(train), std::move(heldout)};
}

// ---------------------------------------------------------------------------
// Toy MLP: one tanh hidden layer shared across tasks, scalar heads.
// ---------------------------------------------------------------------------

class ToyMlpSuite final : public TaskSuite {
public:
    static constexpr int input_dim = 3;

    ToyMlpSuite(int hidden, int tasks, Matrix inputs, Matrix targets)
        : hidden_(hidden), tasks_(tasks), inputs_(std::move(inputs)), targets_(std::move(targets)) {
        if (hidden_ < 1) throw InvalidInputError("ToyMlpSuite: hidden must be >= 1");
        if (tasks_ < 2) throw InvalidInputError("ToyMlpSuite: need at least two tasks");
        if (inputs_.cols() != input_dim || targets_.rows() != inputs_.rows() ||
            targets_.cols() != tasks_)
            throw InvalidInputError("ToyMlpSuite: data shape mismatch");
    }

    int num_tasks() const override { return tasks_; }
    int param_dim() const override { return hidden_ * input_dim + hidden_ + tasks_ * (hidden_ + 1); }
    int num_samples() const override { return static_cast<int>(inputs_.rows()); }

    double loss(int task, const Vector& theta, const Batch& batch = {}) const override {
        const Params p = unpack(theta);
        double acc = 0.0;
        const int n = batch.all() ? num_samples() : static_cast<int>(batch.indices.size());
        for (int r = 0; r < n; ++r) {
            const int idx = batch.all() ? r : batch.indices[static_cast<std::size_t>(r)];
            const Vector x = inputs_.row(idx);
            const Vector a = (p.w1 * x + p.b1).array().tanh();
            const double out = p.w2.col(task).dot(a) + p.b2[task];
            const double res = out - targets_(idx, task);
            acc += res * res;
        }
        return acc / n;
    }

    Vector grad(int task, const Vector& theta, const Batch& batch = {}) const override {
        const Params p = unpack(theta);
        Matrix dw1 = Matrix::Zero(hidden_, input_dim);
        Vector db1 = Vector::Zero(hidden_);
        Vector dw2 = Vector::Zero(hidden_);
        double db2 = 0.0;
        const int n = batch.all() ? num_samples() : static_cast<int>(batch.indices.size());
        for (int r = 0; r < n; ++r) {
            const int idx = batch.all() ? r : batch.indices[static_cast<std::size_t>(r)];
            const Vector x = inputs_.row(idx);
            const Vector a = (p.w1 * x + p.b1).array().tanh();
            const double out = p.w2.col(task).dot(a) + p.b2[task];
            const double dout = 2.0 * (out - targets_(idx, task)) / n;
            dw2 += dout * a;
            db2 += dout;
            const Vector dz = (dout * p.w2.col(task).array() * (1.0 - a.array().square())).matrix();
            dw1 += dz * x.transpose();
            db1 += dz;
        }
        Vector g = Vector::Zero(param_dim());
        Params gp = unpack(g);  // views into g
        gp.w1 = dw1;
        gp.b1 = db1;
        gp.w2.col(task) = dw2;
        gp.b2[task] = db2;
        pack(gp, g);
        return g;
    }

private:
    struct Params {
        Matrix w1;
        Vector b1;
        Matrix w2;  // hidden x tasks
        Vector b2;
    };

    Params unpack(const Vector& theta) const {
        Params p;
        int off = 0;
        p.w1.resize(hidden_, input_dim);
        for (int i = 0; i < hidden_; ++i)
            for (int j = 0; j < input_dim; ++j) p.w1(i, j) = theta[off++];
        p.b1.resize(hidden_);
        for (int i = 0; i < hidden_; ++i) p.b1[i] = theta[off++];
        p.w2.resize(hidden_, tasks_);
        p.b2.resize(tasks_);
        for (int t = 0; t < tasks_; ++t) {
            for (int i = 0; i < hidden_; ++i) p.w2(i, t) = theta[off++];
            p.b2[t] = theta[off++];
        }
        return p;
    }

    void pack(const Params& p, Vector& theta) const {
        int off = 0;
        for (int i = 0; i < hidden_; ++i)
            for (int j = 0; j < input_dim; ++j) theta[off++] = p.w1(i, j);
        for (int i = 0; i < hidden_; ++i) theta[off++] = p.b1[i];
        for (int t = 0; t < tasks_; ++t) {
            for (int i = 0; i < hidden_; ++i) theta[off++] = p.w2(i, t);
            theta[off++] = p.b2[t];
        }
    }

    int hidden_;
    int tasks_;
    Matrix inputs_;
    Matrix targets_;
};

/// Synthetic nonconvex exerciser: inputs ~ N(0, I), targets from independent
/// random single-hidden-layer teachers plus small noise.
inline ToyMlpSuite make_toy_mlp(int hidden, int tasks, std::uint64_t seed, int samples = 128) {
    if (hidden < 1) throw InvalidInputError("make_toy_mlp: hidden must be >= 1");
    if (tasks < 2) throw InvalidInputError("make_toy_mlp: need at least two tasks");
    Rng rng(seed);
    Matrix inputs = rng.normal_matrix(samples, ToyMlpSuite::input_dim);
    Matrix targets(samples, tasks);
    for (int t = 0; t < tasks; ++t) {
        const Matrix tw1 = rng.normal_matrix(hidden, ToyMlpSuite::input_dim);
        const Vector tb1 = 0.1 * rng.normal_vector(hidden);
        const Vector tw2 = rng.normal_vector(hidden) / std::sqrt(hidden);
        for (int r = 0; r < samples; ++r) {
            const Vector x = inputs.row(r);
            const Vector a = (tw1 * x + tb1).array().tanh();
            targets(r, t) = tw2.dot(a) + 0.05 * rng.normal();
        }
    }
    return ToyMlpSuite(hidden, tasks, std::move(inputs), std::move(targets));
}

}  // namespace auxinash
