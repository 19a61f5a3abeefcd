#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "fzilab/error.hpp"
#include "fzilab/losses.hpp"
#include "fzilab/rng.hpp"

using namespace fzilab;

namespace {

CategoricalModel single(const SupportGrid& g, const Eigen::MatrixXd& theta, const Eigen::VectorXd& x, double l) {
    return CategoricalModel(g, FeatureMap({x}, l), std::vector<Eigen::MatrixXd>{theta});
}

// Loss oracle in long double with Kahan summation, written from the definition.
long double oracle_loss(const Eigen::MatrixXd& theta, const Eigen::VectorXd& x, const Eigen::VectorXd& p) {
    const int k = static_cast<int>(theta.rows());
    std::vector<long double> z(k);
    long double zmax = -INFINITY;
    for (int i = 0; i < k; ++i) {
        long double acc = 0.0L;
        for (int j = 0; j < x.size(); ++j) acc += static_cast<long double>(theta(i, j)) * x[j];
        z[i] = acc;
        zmax = std::max(zmax, acc);
    }
    long double sum = 0.0L;
    for (int i = 0; i < k; ++i) sum += std::exp(z[i] - zmax);
    const long double lse = zmax + std::log(sum);
    long double total = 0.0L, comp = 0.0L;
    for (int i = 0; i < k; ++i) {
        if (p[i] == 0.0) continue;
        const long double term = -static_cast<long double>(p[i]) * (z[i] - lse) - comp;
        const long double t = total + term;
        comp = (t - total) - term;
        total = t;
    }
    return total;
}

double rel_err(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1.0}); }

struct Instance {
    SupportGrid grid;
    Eigen::MatrixXd theta;
    Eigen::VectorXd x;
    Eigen::VectorXd p;
};

Instance random_instance(Rng& rng, int k, int d, double lk = 1.0) {
    Eigen::MatrixXd th(k, d);
    for (int i = 0; i < k; ++i) {
        for (int j = 0; j < d; ++j) th(i, j) = rng.normal();
    }
    Eigen::VectorXd x(d);
    for (int j = 0; j < d; ++j) x[j] = rng.normal();
    x /= std::max(1.0, x.norm());
    const auto s = rng.simplex(k);
    return {SupportGrid(0.0, lk, k), th, x, Eigen::Map<const Eigen::VectorXd>(s.data(), k)};
}

} // namespace

TEST_CASE("cross-entropy at the uniform model") {
    const SupportGrid g(0, 1, 2);
    const CategoricalModel m(g, make_onehot_features(1), 1);
    Eigen::VectorXd p(2);
    p << 1.0, 0.0;
    CHECK(categorical_loss(TargetHistogram(g, p), m, 0, 0) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
}

TEST_CASE("target equal to the model gives entropy and a zero gradient") {
    const auto m = CategoricalModel::gaussian(SupportGrid(0, 1, 6), make_random_features(3, 2, 1, 1), 1, 4, 1.0);
    const Eigen::VectorXd f = softmax_probs(m, 1, 0);
    const TargetHistogram p(m.grid(), f / f.sum());
    const double entropy = -(f.array() * f.array().log()).sum();
    CHECK(categorical_loss(p, m, 1, 0) == doctest::Approx(entropy).epsilon(1e-13));
    CHECK(categorical_loss_gradient(p, m, 1, 0).cwiseAbs().maxCoeff() <= 1e-15);
    CHECK(categorical_loss_state_gradient(p, m, 1, 0).cwiseAbs().maxCoeff() <= 1e-14);
}

TEST_CASE("gradient by direct substitution, k=2 d=1") {
    Eigen::VectorXd x(1);
    x << 1.0;
    const SupportGrid g(0, 1, 2);
    const auto m = single(g, Eigen::MatrixXd::Zero(2, 1), x, 1.0);
    Eigen::VectorXd p(2);
    p << 1.0, 0.0;
    const auto grad = categorical_loss_gradient(TargetHistogram(g, p), m, 0, 0);
    CHECK(grad(0, 0) == doctest::Approx(-0.5));
    CHECK(grad(1, 0) == doctest::Approx(0.5));
}

TEST_CASE("loss matches a compensated long-double oracle (k=5, d=3, seed 11)") {
    Rng rng(11);
    for (int rep = 0; rep < 50; ++rep) {
        const auto in = random_instance(rng, 5, 3);
        const auto m = single(in.grid, in.theta, in.x, 1.0);
        const double got = categorical_loss(TargetHistogram(in.grid, in.p), m, 0, 0);
        const double want = static_cast<double>(oracle_loss(in.theta, in.x, in.p));
        CHECK(std::abs(got - want) <= 1e-12);
        CHECK(kernel::categorical_loss(in.theta, in.x, in.p) == doctest::Approx(got).epsilon(1e-15));
    }
}

TEST_CASE("categorical gradient matches central differences on 100 instances") {
    Rng rng(101);
    const double h = 1e-6;
    double worst = 0.0;
    for (int rep = 0; rep < 100; ++rep) {
        const int k = 2 + static_cast<int>(rng.index(20));
        const int d = 1 + static_cast<int>(rng.index(6));
        const auto in = random_instance(rng, k, d);
        const Eigen::MatrixXd g = kernel::categorical_gradient(in.theta, in.x, in.p);
        for (int i = 0; i < k; ++i) {
            for (int j = 0; j < d; ++j) {
                Eigen::MatrixXd tp = in.theta, tm = in.theta;
                tp(i, j) += h;
                tm(i, j) -= h;
                const double fd = (static_cast<double>(oracle_loss(tp, in.x, in.p)) -
                                   static_cast<double>(oracle_loss(tm, in.x, in.p))) /
                                  (2 * h);
                worst = std::max(worst, rel_err(g(i, j), fd));
            }
        }
    }
    CHECK(worst <= 1e-5);
}

TEST_CASE("squared loss values and gradient") {
    const SupportGrid g(0, 1, 2);
    const CategoricalModel m(g, make_onehot_features(1), 1);
    CHECK(classical_squared_loss(1.0, m, 0, 0) == doctest::Approx(0.25));
    const double q = model_expectation(m, 0, 0);
    CHECK(classical_squared_loss(q, m, 0, 0) == 0.0);
    CHECK(classical_squared_loss_gradient(q, m, 0, 0).cwiseAbs().maxCoeff() == 0.0);

    Rng rng(202);
    const double h = 1e-6;
    double worst = 0.0;
    for (int rep = 0; rep < 100; ++rep) {
        const int k = 2 + static_cast<int>(rng.index(10));
        const int d = 1 + static_cast<int>(rng.index(4));
        const auto in = random_instance(rng, k, d, 5.0);
        const double y = rng.uniform(-2.0, 8.0);
        const auto model = single(in.grid, in.theta, in.x, 1.0);
        const auto grad = classical_squared_loss_gradient(y, model, 0, 0);
        for (int i = 0; i < k; ++i) {
            for (int j = 0; j < d; ++j) {
                Eigen::MatrixXd tp = in.theta, tm = in.theta;
                tp(i, j) += h;
                tm(i, j) -= h;
                // Q from the definition, independent of model_expectation.
                auto loss = [&](const Eigen::MatrixXd& th) {
                    Eigen::VectorXd z = th * in.x;
                    z.array() -= z.maxCoeff();
                    Eigen::VectorXd f = z.array().exp();
                    f /= f.sum();
                    double qq = 0.0;
                    for (int b = 0; b < k; ++b) qq += f[b] * (in.grid.lower() + (b + 0.5) * in.grid.width());
                    return (y - qq) * (y - qq);
                };
                const double fd = (loss(tp) - loss(tm)) / (2 * h);
                worst = std::max(worst, rel_err(grad(i, j), fd));
            }
        }
    }
    CHECK(worst <= 1e-5);
}

TEST_CASE("squared-loss gradient exceeds k*l on a wide support while the categorical one cannot") {
    const SupportGrid g(0, 10000, 51);
    const CategoricalModel m(g, make_onehot_features(1), 1);
    const double kl = 51.0;
    CHECK(row_norm_sum(classical_squared_loss_gradient(10000.0, m, 0, 0)) > kl);
    const TargetHistogram top(g, Eigen::VectorXd::Unit(51, 50));
    CHECK(row_norm_sum(categorical_loss_gradient(top, m, 0, 0)) <= kl);
}

TEST_CASE("lipschitz probe") {
    const ProbeShape shape{5, 3, 1.0, 1.0};
    const auto r = probe_lipschitz(shape, 2000, 7);
    CHECK(r.max_grad_norm <= r.lipschitz_bound);
    CHECK(r.lipschitz_bound == 5.0);
    CHECK(r == probe_lipschitz(shape, 2000, 7));
    CHECK_THROWS(probe_lipschitz(shape, 0, 7));
}

TEST_CASE("the k*l bound is approached for k=2, l=1") {
    // p = (1, 0) while the model puts its mass on bin 1: optimise theta along
    // the adverse direction and watch the norm climb to 2.
    Eigen::VectorXd x(1);
    x << 1.0;
    Eigen::VectorXd p(2);
    p << 1.0, 0.0;
    double best = 0.0;
    for (double t = 0.0; t <= 40.0; t += 0.5) {
        Eigen::MatrixXd th(2, 1);
        th << -t, t;
        best = std::max(best, row_norm_sum(kernel::categorical_gradient(th, x, p)));
    }
    CHECK(best <= 2.0);
    CHECK(best >= 2.0 - 1e-12);
}

TEST_CASE("smoothness probe") {
    const ProbeShape shape{5, 3, 1.0, 1.0};
    const auto r = probe_smoothness(shape, 1000, 3);
    CHECK(r.max_curvature_ratio <= r.smoothness_bound + 1e-9);

    // Refinement: the same pairs at one tenth of the spacing agree within 5%.
    const auto coarse = probe_smoothness(shape, 1000, 3, 1e-2);
    const auto fine = probe_smoothness(shape, 1000, 3, 1e-3);
    CHECK(std::abs(coarse.max_curvature_ratio - fine.max_curvature_ratio) <= 0.05 * fine.max_curvature_ratio);

    // The second point coincides with the first: every pair is skipped.
    const auto same = probe_smoothness(shape, 10, 3, 1e-300);
    CHECK(same.skipped_pairs == 10);
    CHECK(same.max_curvature_ratio == 0.0);
}

TEST_CASE("convexity probe") {
    CHECK(probe_convexity({5, 3, 1.0, 1.0}, 2000, 1) == 0);
    CHECK(probe_convexity({51, 4, 1.0, 2.0}, 10000, 2) == 0);
    // mu = nu: midpoint equals the endpoints.
    Rng rng(4);
    const auto in = random_instance(rng, 5, 3);
    const double a = kernel::categorical_loss(in.theta, in.x, in.p);
    const double mid = kernel::categorical_loss((in.theta + in.theta) / 2.0, in.x, in.p);
    CHECK(std::abs(mid - a) <= 1e-12);
}

TEST_CASE("target histogram validation") {
    const SupportGrid g(0, 1, 3);
    CHECK_THROWS_AS(TargetHistogram(g, Eigen::VectorXd::Ones(2) / 2.0), ShapeError);
    CHECK_THROWS(TargetHistogram(g, Eigen::VectorXd::Ones(3)));
}
