#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "fzilab/decomposition.hpp"
#include "fzilab/error.hpp"
#include "fzilab/fitted.hpp"
#include "fzilab/rng.hpp"

using namespace fzilab;

namespace {

TargetHistogram hist(const SupportGrid& g, std::vector<double> p) {
    return {g, Eigen::Map<const Eigen::VectorXd>(p.data(), static_cast<Eigen::Index>(p.size()))};
}

TargetHistogram random_hist(const SupportGrid& g, Rng& rng) {
    const auto s = rng.simplex(g.bins());
    return hist(g, s);
}

VarianceProblem bellman_problem(std::uint64_t seed, bool zero_theta) {
    const auto mdp = make_random_mdp(3, 2, 3, seed, 0.8);
    const SupportGrid g(-1.0, 5.0, 13);
    const auto features = make_random_features(3, 2, 1.0, seed + 100);
    const auto frozen = zero_theta ? CategoricalModel(g, features, 2) : CategoricalModel::gaussian(g, features, 2, seed, 0.7);
    return make_bellman_problem(frozen, mdp);
}

} // namespace

TEST_CASE("mean bin") {
    const SupportGrid g(0, 10, 5);
    std::vector<double> hot(5, 0.0);
    hot[3] = 1.0;
    CHECK(mean_bin(hist(g, hot)) == 3);
    CHECK(mean_bin(hist(SupportGrid(0, 1, 2), {0.5, 0.5})) == 0);

    Rng rng(5);
    for (int rep = 0; rep < 200; ++rep) {
        const auto p = random_hist(g, rng);
        double mean = 0.0;
        for (int i = 0; i < 5; ++i) mean += p.p()[i] * g.midpoint(i);
        int scan = 0;
        while (scan < 4 && mean > g.edge(scan + 1)) ++scan;
        CHECK(mean_bin(p) == scan);
    }
}

TEST_CASE("minimal epsilon") {
    const SupportGrid g(0, 4, 4);
    CHECK(minimal_epsilon(hist(g, {0, 1, 0, 0})) == 0.0);
    CHECK(minimal_epsilon(hist(g, {0.2, 0.6, 0.2, 0.0})) == doctest::Approx(0.4));
    CHECK(minimal_epsilon(hist(g, {0.25, 0.25, 0.25, 0.25})) == doctest::Approx(0.75));
}

TEST_CASE("decompose") {
    const SupportGrid g(0, 4, 4);
    const auto hot = hist(g, {0, 1, 0, 0});
    CHECK(decompose(hot, 0.5).mu.p().isApprox(hot.p()));
    const auto p = hist(g, {0.1, 0.5, 0.3, 0.1});
    CHECK(decompose(p, 1.0).mu.p().isApprox(p.p()));
    CHECK_THROWS_AS(decompose(p, 0.4), InfeasibleError);
    CHECK_THROWS(decompose(p, 1.5));

    Rng rng(9);
    for (int rep = 0; rep < 200; ++rep) {
        const auto q = random_hist(g, rng);
        const double eps = minimal_epsilon(q) + (1.0 - minimal_epsilon(q)) * rng.uniform();
        const auto split = decompose(q, eps);
        Eigen::VectorXd rebuilt = eps * split.mu.p();
        rebuilt[split.mean_bin] += 1.0 - eps;
        CHECK((rebuilt - q.p()).cwiseAbs().maxCoeff() <= 1e-12);
        CHECK(split.mu.p().minCoeff() >= 0.0);
        CHECK(split.mu.p().sum() == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("a single cell leaves only the target bias") {
    const SupportGrid g(0, 1, 3);
    VarianceProblem problem{CategoricalModel(g, make_onehot_features(1), 1), {{0, 0, 1.0, hist(g, {0.2, 0.5, 0.3})}}};
    VarianceOptions opts;
    opts.exact = true;
    const auto est = estimate_gradient_variance(problem, opts);
    CHECK(est.full_variance == doctest::Approx(0.0).scale(1.0));
    // ||p - e_1||^2 with x = e_0.
    CHECK(est.sigma2 == doctest::Approx(0.04 + 0.25 + 0.09));
    CHECK(est.sigma_hat2 == doctest::Approx(0.0).scale(1.0));

    VarianceProblem hot{CategoricalModel(g, make_onehot_features(1), 1), {{0, 0, 1.0, hist(g, {0, 1, 0})}}};
    CHECK(estimate_gradient_variance(hot, opts).sigma2 == doctest::Approx(0.0).scale(1.0));
    CHECK_THROWS_AS(estimate_gradient_variance(TargetKind::Mu, hot, opts), NumericError);
}

TEST_CASE("with eps = 1 the mu variance is the full variance and the bound is tight") {
    const auto problem = bellman_problem(3, false);
    VarianceOptions opts;
    opts.epsilon = {1.0};
    opts.n_samples = 3000;
    opts.seed = 4;
    const auto est = estimate_gradient_variance(problem, opts);
    CHECK(est.sigma_hat2 == doctest::Approx(est.full_variance).epsilon(1e-12));
    CHECK(est.mixture_bound == doctest::Approx(est.full_variance).epsilon(1e-12));
    CHECK(est.kappa * est.sigma2 == doctest::Approx(est.sigma_hat2));
    CHECK(check_mixture_bound(est, est.full_variance));
}

TEST_CASE("as eps goes to 0 the bound tends to sigma^2") {
    const SupportGrid g(0, 3, 3);
    const auto x = make_circle_features(3);
    VarianceProblem problem{CategoricalModel::gaussian(g, x, 1, 2, 0.5),
                            {{0, 0, 0.5, hist(g, {1, 0, 0})}, {1, 0, 0.3, hist(g, {0, 1, 0})}, {2, 0, 0.2, hist(g, {0, 0, 1})}}};
    VarianceOptions opts;
    opts.exact = true;
    opts.epsilon = {1e-9};
    const auto est = estimate_gradient_variance(problem, opts);
    CHECK(est.mixture_bound == doctest::Approx(est.sigma2));
    CHECK(est.full_variance == doctest::Approx(est.sigma2));
}

TEST_CASE("Monte-Carlo estimates agree with a 10x re-run") {
    const auto problem = bellman_problem(7, true);
    VarianceOptions small;
    small.epsilon = {feasible_epsilon(problem)};
    small.n_samples = 2000;
    small.seed = 1;
    VarianceOptions big = small;
    big.n_samples = 20000;
    big.seed = 2;
    const auto a = estimate_gradient_variance(problem, small);
    const auto b = estimate_gradient_variance(problem, big);
    CHECK(std::abs(a.sigma2 - b.sigma2) <= 2.0 * std::hypot(a.sigma2_se, b.sigma2_se));
    CHECK(std::abs(a.sigma_hat2 - b.sigma_hat2) <= 2.0 * std::hypot(a.sigma_hat2_se, b.sigma_hat2_se));
    CHECK(std::abs(a.full_variance - b.full_variance) <= 2.0 * std::hypot(a.full_variance_se, b.full_variance_se));

    VarianceOptions exact = small;
    exact.exact = true;
    const auto e = estimate_gradient_variance(problem, exact);
    CHECK(std::abs(b.sigma2 - e.sigma2) <= 3.0 * b.sigma2_se);
    // kappa is a ratio of means, so it is stable under the sample size.
    CHECK(std::abs(a.kappa - b.kappa) <= 0.1 * e.kappa);
}

TEST_CASE("convexity and Cauchy-Schwarz bounds hold on random problems") {
    // The mixture bound drops a cross term; the Jensen bound and
    // ((1-eps) sigma + eps sigma_hat)^2 do not, so those always hold.
    Rng rng(17);
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        const auto problem = bellman_problem(seed, seed % 2 == 0);
        VarianceOptions opts;
        opts.exact = true;
        const double lo = feasible_epsilon(problem);
        opts.epsilon = {lo + (1.0 - lo) * rng.uniform()};
        const auto est = estimate_gradient_variance(problem, opts);
        const double eps = opts.epsilon[0];
        CHECK(est.full_variance <= est.jensen_bound + 1e-12);
        const double cs = std::pow((1 - eps) * std::sqrt(est.sigma2) + eps * std::sqrt(est.sigma_hat2), 2);
        CHECK(est.full_variance <= cs + 1e-12);
        CHECK(est.mixture_bound == doctest::Approx((1 - eps) * (1 - eps) * est.sigma2 + eps * eps * est.sigma_hat2));
    }
}

TEST_CASE("default epsilon is feasible and at least 1/(1+kappa)") {
    const auto problem = bellman_problem(5, false);
    VarianceOptions pilot;
    pilot.exact = true;
    const double eps = default_epsilon(problem, pilot);
    CHECK(eps >= feasible_epsilon(problem));
    pilot.epsilon = {1.0};
    const auto at_one = estimate_gradient_variance(problem, pilot);
    CHECK(eps >= 1.0 / (1.0 + at_one.kappa) - 1e-15);
    CHECK(eps <= 1.0);
}

TEST_CASE("mixture bound on a seeded Bellman problem at the default eps") {
    const auto mdp = make_random_mdp(6, 2, 3, 23, 0.8);
    const SupportGrid g(-6.0, 6.0, 11);
    const auto frozen = CategoricalModel::gaussian(g, make_random_features(6, 3, 1.0, 29), 2, 31, 0.5);
    const auto problem = make_bellman_problem(frozen, mdp);
    VarianceOptions opts;
    opts.n_samples = 4000;
    opts.seed = 3;
    opts.epsilon = {default_epsilon(problem, opts)};
    const auto est = estimate_gradient_variance(problem, opts);
    CHECK(check_mixture_bound(est, est.full_variance));
}

TEST_CASE("target kind names") {
    for (auto k : {TargetKind::Expectation, TargetKind::Mu, TargetKind::Full}) {
        CHECK(target_kind_from_string(to_string(k)) == k);
    }
    CHECK_THROWS_AS(target_kind_from_string("median"), ParameterError);
}

TEST_CASE("problem validation") {
    const SupportGrid g(0, 1, 2);
    VarianceProblem bad{CategoricalModel(g, make_onehot_features(1), 1), {{0, 0, 0.5, hist(g, {0.5, 0.5})}}};
    CHECK_THROWS_AS(validate(bad), ParameterError);
    bad.cells[0].weight = 1.0;
    bad.cells[0].s = 3;
    CHECK_THROWS(validate(bad));
}
