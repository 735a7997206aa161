#include <catch2/catch_amalgamated.hpp>

#include "auxinash/bargaining.hpp"
#include "auxinash/hypergrad.hpp"
#include "auxinash/suites.hpp"
#include "oracle_utils.hpp"

using namespace auxinash;
using Catch::Approx;

namespace {

SolverConfig tight_config() {
    SolverConfig cfg;
    cfg.fixed_point_tolerance = 1e-12;
    cfg.max_ccp_iters = 40;
    return cfg;
}

/// Central finite differences of the bargaining map p -> alpha(p), with the
/// re-solves done by the independent Newton oracle (raw perturbations, no
/// renormalization onto the simplex).
Matrix fd_alpha_jacobian(const TaskGradientSet& grads, const Vector& p, double h) {
    const int k = static_cast<int>(p.size());
    Matrix jac(k, k);
    for (int j = 0; j < k; ++j) {
        Vector pp = p, pm = p;
        pp[j] += h;
        pm[j] -= h;
        const Vector ap = oracle::newton_solve_alpha(grads.gram(), pp, 1e-13);
        const Vector am = oracle::newton_solve_alpha(grads.gram(), pm, 1e-13);
        jac.col(j) = (ap - am) / (2.0 * h);
    }
    return jac;
}

}  // namespace

TEST_CASE("dalpha_dp closed forms") {
    SECTION("identity Gram: diagonal 1/(2 sqrt(p))") {
        auto gs = build_gradient_set({(Vector(2) << 1, 0).finished(), (Vector(2) << 0, 1).finished()});
        auto prefs = PreferenceVector::from_probs((Vector(2) << 0.25, 0.75).finished());
        auto w = solve_alpha(gs, prefs, tight_config());
        auto jac = dalpha_dp(gs, prefs, w);
        REQUIRE(jac.matrix(0, 0) == Approx(1.0).margin(1e-7));
        REQUIRE(jac.matrix(1, 1) == Approx(0.5773502691896258).margin(1e-7));
        REQUIRE(std::abs(jac.matrix(0, 1)) < 1e-8);
        REQUIRE(std::abs(jac.matrix(1, 0)) < 1e-8);
    }
    SECTION("scalar case: (4+4)^{-1} * 2") {
        auto gs = build_gradient_set({(Vector(1) << 2).finished()});
        auto prefs = PreferenceVector::uniform(1);
        auto w = solve_alpha(gs, prefs, tight_config());
        REQUIRE(w.alpha[0] == Approx(0.5).margin(1e-10));
        auto jac = dalpha_dp(gs, prefs, w);
        REQUIRE(jac.matrix(0, 0) == Approx(0.25).margin(1e-8));
    }
    SECTION("matrix consistent with stored diagonal factors") {
        Rng rng(21);
        auto inst = oracle::random_instance(rng, 3, 3, 8, 50.0);
        auto w = solve_alpha_raw(inst.grads, inst.p, tight_config());
        auto jac = dalpha_dp(inst.grads, inst.p, w);
        Matrix a = inst.grads.gram();
        a.diagonal() += jac.lambda0;
        REQUIRE((a * jac.matrix - Matrix(jac.lambda1.asDiagonal())).cwiseAbs().maxCoeff() < 1e-10);
    }
    SECTION("requires converged weights") {
        auto gs = build_gradient_set({(Vector(1) << 2).finished()});
        BargainingWeights w;
        w.alpha = (Vector(1) << 0.5).finished();
        w.converged = false;
        REQUIRE_THROWS_AS(dalpha_dp(gs, PreferenceVector::uniform(1), w), InvalidInputError);
    }
}

TEST_CASE("dalpha_dp matches finite differences through the solver") {
    Rng rng(31);
    for (int rep = 0; rep < 20; ++rep) {
        auto inst = oracle::random_instance(rng, 2, 6, 24, 100.0);
        auto w = solve_alpha_raw(inst.grads, inst.p, tight_config());
        REQUIRE(w.converged);
        auto jac = dalpha_dp(inst.grads, inst.p, w);
        Matrix fd = fd_alpha_jacobian(inst.grads, inst.p, 1e-5);
        const double scale = fd.cwiseAbs().maxCoeff();
        REQUIRE((jac.matrix - fd).cwiseAbs().maxCoeff() / scale < 1e-4);
    }
}

TEST_CASE("perturbing p along the Jacobian preserves the implicit equation to O(t^2)") {
    Rng rng(47);
    auto inst = oracle::random_instance(rng, 3, 3, 12, 60.0);
    auto w = solve_alpha_raw(inst.grads, inst.p, tight_config());
    auto jac = dalpha_dp(inst.grads, inst.p, w);
    Vector delta = rng.normal_vector(inst.grads.num_tasks());
    delta /= delta.norm();

    double prev_ratio = std::numeric_limits<double>::infinity();
    for (double t : {1e-2, 1e-3, 1e-4}) {
        const Vector p_t = inst.p + t * delta;
        const Vector a_t = w.alpha + t * (jac.matrix * delta);
        const double res =
            (inst.grads.gram() * a_t - p_t.cwiseQuotient(a_t)).cwiseAbs().maxCoeff();
        const double ratio = res / t;
        REQUIRE(ratio < prev_ratio);
        prev_ratio = ratio;
    }
    REQUIRE(prev_ratio < 1e-3);  // ratio -> 0 as t -> 0
}

TEST_CASE("ihvp") {
    SECTION("identity Hessian is exact after one term") {
        Vector rhs = (Vector(3) << 1, -2, 0.5).finished();
        IhvpConfig cfg;
        cfg.mode = IhvpMode::neumann;
        cfg.neumann_steps = 4;
        cfg.neumann_scale = 1.0;
        Vector x = ihvp([](const Vector& v) { return v; }, rhs, cfg);
        REQUIRE((x - rhs).cwiseAbs().maxCoeff() < 1e-14);
    }
    SECTION("scalar geometric series: 0.25*(1 + 0.5 + 0.25)") {
        IhvpConfig cfg;
        cfg.mode = IhvpMode::neumann;
        cfg.neumann_steps = 3;
        cfg.neumann_scale = 0.25;
        Vector rhs = (Vector(1) << 1.0).finished();
        IhvpInfo info;
        Vector x = ihvp([](const Vector& v) { return Vector(2.0 * v); }, rhs, cfg, &info);
        REQUIRE(x[0] == Approx(0.4375));
        REQUIRE(info.oracle_calls == 2);
    }
    SECTION("error decreases monotonically in steps on a random SPD system") {
        Rng rng(8);
        Matrix b = rng.normal_matrix(5, 5);
        Matrix h = b * b.transpose() + 0.5 * Matrix::Identity(5, 5);
        Vector rhs = rng.normal_vector(5);
        Vector exact = h.ldlt().solve(rhs);
        const double eta = 0.9 / Eigen::SelfAdjointEigenSolver<Matrix>(h).eigenvalues().maxCoeff();
        double prev = std::numeric_limits<double>::infinity();
        for (int steps : {1, 2, 4, 8, 16, 32, 64}) {
            IhvpConfig cfg;
            cfg.mode = IhvpMode::neumann;
            cfg.neumann_steps = steps;
            cfg.neumann_scale = eta;
            Vector x = ihvp([&](const Vector& v) { return Vector(h * v); }, rhs, cfg);
            const double err = (x - exact).norm() / exact.norm();
            REQUIRE(err < prev);
            prev = err;
        }
        REQUIRE(prev < 1e-3);
    }
    SECTION("exact_solve matches a dense solve") {
        Rng rng(9);
        Matrix b = rng.normal_matrix(6, 6);
        Matrix h = b * b.transpose() + Matrix::Identity(6, 6);
        Vector rhs = rng.normal_vector(6);
        IhvpConfig cfg;
        cfg.mode = IhvpMode::exact_solve;
        Vector x = ihvp([&](const Vector& v) { return Vector(h * v); }, rhs, cfg);
        REQUIRE((h * x - rhs).cwiseAbs().maxCoeff() < 1e-10);
    }
    SECTION("identity mode returns the right-hand side") {
        Vector rhs = (Vector(2) << 3, -1).finished();
        IhvpConfig cfg;
        cfg.mode = IhvpMode::identity;
        REQUIRE((ihvp([](const Vector& v) { return v; }, rhs, cfg) - rhs).norm() == 0.0);
    }
    SECTION("diverging series is reported") {
        IhvpConfig cfg;
        cfg.mode = IhvpMode::neumann;
        cfg.neumann_steps = 64;
        cfg.neumann_scale = 3.0;  // eta ||H|| >> 2
        Vector rhs = (Vector(1) << 1.0).finished();
        REQUIRE_THROWS_AS(ihvp([](const Vector& v) { return Vector(2.0 * v); }, rhs, cfg),
                          SolverDivergedError);
    }
    SECTION("auto scale from power iteration") {
        const double eta = estimate_neumann_scale([](const Vector& v) { return Vector(2.0 * v); }, 4);
        REQUIRE(eta == Approx(0.45).margin(1e-6));
    }
}

TEST_CASE("mixed_partial_vjp") {
    QuadraticSuiteSpec spec;
    spec.a = {Matrix::Identity(3, 3), Matrix::Identity(3, 3), Matrix::Identity(3, 3)};
    spec.c = {Vector::Zero(3), (Vector(3) << 1, 0, 0).finished(), (Vector(3) << 0, 1, 0).finished()};
    QuadraticSuite suite(spec);
    const Vector theta = (Vector(3) << 2, 1, -1).finished();

    SECTION("orthonormal gradients pick out coordinates") {
        QuadraticSuiteSpec s2;
        s2.a = {Matrix::Identity(2, 2), Matrix::Identity(2, 2)};
        s2.c = {Vector::Zero(2), Vector::Zero(2)};
        // gradients at theta=(1,0) and a rotated copy: use centers to make
        // g_1=(1,0), g_2=(0,1)
        s2.c[0] = (Vector(2) << 0, 1).finished();
        s2.c[1] = (Vector(2) << 1, 0).finished();
        QuadraticSuite sq(s2);
        const Vector th = (Vector(2) << 1, 1).finished();
        REQUIRE((sq.grad(0, th) - (Vector(2) << 1, 0).finished()).norm() == 0.0);
        Vector m = mixed_partial_vjp(sq, th, sq.grad(0, th));
        REQUIRE(m[0] == Approx(1.0));
        REQUIRE(m[1] == Approx(0.0).margin(1e-15));
    }
    SECTION("zero vector maps to zero") {
        Vector m = mixed_partial_vjp(suite, theta, Vector::Zero(3));
        REQUIRE(m.norm() == 0.0);
    }
    SECTION("matches finite differences of the weighted gradient in alpha") {
        Rng rng(3);
        Vector v = rng.normal_vector(3);
        Vector m = mixed_partial_vjp(suite, theta, v);
        const double h = 1e-6;
        Vector alpha = (Vector(3) << 0.2, 0.5, 0.3).finished();
        for (int i = 0; i < 3; ++i) {
            Vector ap = alpha, am = alpha;
            ap[i] += h;
            am[i] -= h;
            const double fd =
                (suite.weighted_grad(ap, theta) - suite.weighted_grad(am, theta)).dot(v) / (2 * h);
            REQUIRE(m[i] == Approx(fd).margin(1e-5 * (1.0 + std::abs(fd))));
        }
    }
}

TEST_CASE("softmax chain output is orthogonal to the ones vector") {
    Rng rng(77);
    for (int rep = 0; rep < 20; ++rep) {
        const int k = 2 + rng.uniform_int(6);
        Vector gp = rng.normal_vector(k);
        Vector p = rng.simplex(k);
        Vector gz = chain_through_softmax(gp, p);
        REQUIRE(std::abs(gz.sum()) < 1e-12);
    }
}

TEST_CASE("hypergradient on identical tasks is direction-free") {
    QuadraticSuiteSpec spec;
    Matrix a = 2.0 * Matrix::Identity(3, 3);
    spec.a = {a, a};
    spec.c = {Vector::Ones(3), Vector::Ones(3)};
    QuadraticSuite suite(spec);
    const Vector theta = (Vector(3) << 0.5, -0.25, 2).finished();

    std::vector<Vector> gs{suite.grad(0, theta), suite.grad(1, theta)};
    auto grads = build_gradient_set(gs);
    auto prefs = PreferenceVector::uniform(2);
    auto w = solve_alpha(grads, prefs, tight_config());
    IhvpConfig cfg;
    cfg.mode = IhvpMode::exact_solve;
    auto hg = hypergradient(suite, theta, grads, prefs, w, suite.grad(0, theta), cfg);
    REQUIRE(hg.grad_p[0] == Approx(hg.grad_p[1]).margin(1e-9));
    REQUIRE(hg.grad_logits.cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("hypergradient scalar problem against hand-composed factors") {
    // Two quadratic tasks on the line: l_i = 0.5 a_i (theta - c_i)^2 with
    // a = (1, 2), c = (-2, -0.5); at theta = 0 the task gradients are
    // g = (2, 1). With p = (0.8, 0.2) the bargaining system g g^T alpha =
    // p/alpha gives alpha = p / g = (0.4, 0.2) (since sum p = 1).
    //   L0 = p/alpha^2 = (5, 5), L1 = 1/alpha = (2.5, 5)
    //   [Gram + L0] = [[9, 2], [2, 6]], inverse = 1/50 [[6, -2], [-2, 9]]
    //   dalpha/dp = 1/50 [[15, -10], [-5, 45]] = [[0.3, -0.2], [-0.1, 0.9]]
    //   H = sum alpha_i a_i = 0.8, w = -1 / 0.8 = -1.25 for val_grad = -1
    //   m = w * g = (-2.5, -1.25)
    //   grad_p = -J^T m = (0.625, 0.625), grad_logits = 0.
    QuadraticSuiteSpec spec;
    spec.a = {Matrix::Constant(1, 1, 1.0), Matrix::Constant(1, 1, 2.0)};
    spec.c = {(Vector(1) << -2.0).finished(), (Vector(1) << -0.5).finished()};
    QuadraticSuite suite(spec);
    const Vector theta = Vector::Zero(1);
    auto grads = build_gradient_set({suite.grad(0, theta), suite.grad(1, theta)});
    REQUIRE(grads.gradient(0)[0] == Approx(2.0));
    REQUIRE(grads.gradient(1)[0] == Approx(1.0));

    auto prefs = PreferenceVector::from_probs((Vector(2) << 0.8, 0.2).finished());
    auto w = solve_alpha(grads, prefs, tight_config());
    REQUIRE(w.converged);
    REQUIRE(w.alpha[0] == Approx(0.4).margin(1e-6));
    REQUIRE(w.alpha[1] == Approx(0.2).margin(1e-6));

    auto jac = dalpha_dp(grads, prefs, w);
    REQUIRE(jac.matrix(0, 0) == Approx(0.3).margin(1e-5));
    REQUIRE(jac.matrix(0, 1) == Approx(-0.2).margin(1e-5));
    REQUIRE(jac.matrix(1, 0) == Approx(-0.1).margin(1e-5));
    REQUIRE(jac.matrix(1, 1) == Approx(0.9).margin(1e-5));

    IhvpConfig cfg;
    cfg.mode = IhvpMode::exact_solve;
    const Vector val_grad = (Vector(1) << -1.0).finished();
    auto hg = hypergradient(suite, theta, grads, prefs, w, val_grad, cfg);
    REQUIRE(hg.grad_p[0] == Approx(0.625).margin(1e-5));
    REQUIRE(hg.grad_p[1] == Approx(0.625).margin(1e-5));
    REQUIRE(hg.grad_logits.cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("hypergradient matches end-to-end finite differences on the R^4 bilevel problem") {
    // Two-quadratic inner problem with the bargaining game solved on a frozen
    // gradient set; the inner minimizer of sum_i alpha_i l_i is exact, so the
    // chain val_grad -> IHVP -> mixed partial -> dalpha/dp is exact too.
    Rng rng(4242);
    Matrix b1 = rng.normal_matrix(4, 4), b2 = rng.normal_matrix(4, 4);
    QuadraticSuiteSpec spec;
    spec.a = {b1 * b1.transpose() / 4.0 + Matrix::Identity(4, 4),
              b2 * b2.transpose() / 4.0 + Matrix::Identity(4, 4)};
    spec.c = {rng.normal_vector(4), rng.normal_vector(4)};
    QuadraticSuite suite(spec);

    const Vector theta_game = spec.c[0] + 2.0 * Vector::Ones(4);  // generic evaluation point
    auto grads = build_gradient_set({suite.grad(0, theta_game), suite.grad(1, theta_game)});
    auto prefs = PreferenceVector::from_probs((Vector(2) << 0.6, 0.4).finished());
    auto w = solve_alpha(grads, prefs, tight_config());
    REQUIRE(w.converged);

    const Matrix a_v = Matrix::Identity(4, 4);
    const Vector c_v = rng.normal_vector(4);
    auto inner_opt = [&](const Vector& alpha) {
        Matrix h = alpha[0] * spec.a[0] + alpha[1] * spec.a[1];
        Vector rhs = alpha[0] * (spec.a[0] * spec.c[0]) + alpha[1] * (spec.a[1] * spec.c[1]);
        return Vector(h.llt().solve(rhs));
    };
    auto outer_loss = [&](const Vector& p_raw) {
        const Vector alpha = oracle::newton_solve_alpha(grads.gram(), p_raw, 1e-13);
        const Vector th = inner_opt(alpha);
        return 0.5 * (th - c_v).dot(a_v * (th - c_v));
    };

    const Vector theta_star = inner_opt(w.alpha);
    const Vector val_grad = a_v * (theta_star - c_v);
    IhvpConfig cfg;
    cfg.mode = IhvpMode::exact_solve;
    auto hg = hypergradient(suite, theta_star, grads, prefs, w, val_grad, cfg);

    const double h = 1e-5;
    for (int j = 0; j < 2; ++j) {
        Vector pp = prefs.probs(), pm = prefs.probs();
        pp[j] += h;
        pm[j] -= h;
        const double fd = (outer_loss(pp) - outer_loss(pm)) / (2.0 * h);
        REQUIRE(hg.grad_p[j] == Approx(fd).epsilon(1e-2));
    }
}

TEST_CASE("harmful-task hypergradient is positive on the illustrative problem") {
    auto prob = make_illustrative(400, 17);
    const Vector theta = Vector::Zero(2);
    auto grads = build_gradient_set(
        {prob.suite.grad(0, theta), prob.suite.grad(1, theta), prob.suite.grad(2, theta)});
    auto prefs = PreferenceVector::uniform(3);
    auto w = solve_alpha(grads, prefs, tight_config());
    REQUIRE(w.converged);
    IhvpConfig cfg;
    cfg.mode = IhvpMode::exact_solve;
    const Vector val_grad = prob.suite.heldout_grad(0, theta);
    auto hg = hypergradient(prob.suite, theta, grads, prefs, w, val_grad, cfg);
    REQUIRE(hg.grad_p[2] > 0.0);          // more weight on the harmful task hurts
    REQUIRE(hg.grad_logits[2] > 0.0);
}
