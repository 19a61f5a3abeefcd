#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "fzilab/bellman.hpp"
#include "fzilab/error.hpp"
#include "fzilab/rng.hpp"

using namespace fzilab;

namespace {

CategoricalDistribution project_one(double v, const SupportGrid& g,
                                    ProjectionMode mode = ProjectionMode::Project) {
    const RewardAtom atom{v, 1.0};
    return project_categorical(std::span(&atom, 1), g, mode);
}

CategoricalDistribution random_dist(const SupportGrid& g, Rng& rng) {
    const auto s = rng.simplex(g.bins());
    return {g, Eigen::Map<const Eigen::VectorXd>(s.data(), g.bins())};
}

} // namespace

TEST_CASE("projection onto midpoints") {
    const SupportGrid g(0, 10, 5); // midpoints 1 3 5 7 9
    CHECK(project_one(5.0, g).mass() == CategoricalDistribution::dirac(g, 2).mass());
    const auto half = project_one(4.0, g);
    CHECK(half[1] == doctest::Approx(0.5));
    CHECK(half[2] == doctest::Approx(0.5));
    CHECK(project_one(0.2, g)[0] == 1.0);
    CHECK(project_one(-100.0, g)[0] == 1.0);
    CHECK(project_one(100.0, g)[4] == 1.0);

    // interior mean is preserved
    Rng rng(1);
    std::vector<RewardAtom> atoms;
    double mean = 0.0;
    for (int i = 0; i < 20; ++i) {
        atoms.push_back({rng.uniform(1.0, 9.0), 0.05});
        mean += 0.05 * atoms.back().value;
    }
    CHECK(project_categorical(atoms, g).mean() == doctest::Approx(mean));
}

TEST_CASE("joint-support mode bins atoms and rejects outside values") {
    const SupportGrid g(0, 10, 5);
    CHECK(project_one(3.9, g, ProjectionMode::AssumeJointSupport)[1] == 1.0);
    CHECK(project_one(4.0, g, ProjectionMode::AssumeJointSupport)[1] == 1.0);
    CHECK(project_one(0.0, g, ProjectionMode::AssumeJointSupport)[0] == 1.0);
    CHECK_THROWS_AS(project_one(10.5, g, ProjectionMode::AssumeJointSupport), ParameterError);
    CHECK_THROWS_AS(project_one(-0.1, g, ProjectionMode::AssumeJointSupport), ParameterError);
}

TEST_CASE("absorbing backup converges to a Dirac at 2") {
    const auto mdp = make_absorbing_mdp(1.0, 0.5);
    const SupportGrid g(0, 4, 4); // midpoints 0.5 1.5 2.5 3.5
    const SupportGrid fine(-0.25, 4.25, 9); // midpoints 0, 0.5, ..., 4
    const auto policy = Policy::uniform(1, 1);
    auto z = ReturnDistributionTable::filled(CategoricalDistribution::dirac(fine, 0), 1, 1);
    z = bellman_backup(z, mdp, policy);
    CHECK(z.at(0, 0)[2] == doctest::Approx(1.0)); // Dirac at 1
    for (int i = 0; i < 60; ++i) z = bellman_backup(z, mdp, policy);
    CHECK(z.at(0, 0).mean() == doctest::Approx(2.0).epsilon(1e-9));
    auto coarse = ReturnDistributionTable::filled(CategoricalDistribution::uniform(g), 1, 1);
    for (int i = 0; i < 60; ++i) coarse = bellman_backup(coarse, mdp, policy);
    CHECK(coarse.at(0, 0).mean() == doctest::Approx(2.0).epsilon(1e-9));
}

TEST_CASE("gamma 0 backup depends only on the reward") {
    const auto mdp = make_random_mdp(3, 2, 3, 4, 0.0);
    const SupportGrid g(-1, 2, 12);
    Rng rng(5);
    const auto policy = Policy::uniform(3, 2);
    const auto a = bellman_backup(ReturnDistributionTable::random(g, 3, 2, rng), mdp, policy);
    const auto b = bellman_backup(ReturnDistributionTable::random(g, 3, 2, rng), mdp, policy);
    CHECK(sup_distance(a, b, Metric::Cramer) <= 1e-15);
    CHECK(a.at(1, 1).mass().isApprox(project_categorical(mdp.reward(1, 1), g).mass()));
}

TEST_CASE("backups from two tables contract in Cramer distance") {
    const auto mdp = make_random_mdp(3, 2, 3, 6, 0.8);
    const SupportGrid g(0, 5, 21);
    const auto policy = Policy::uniform(3, 2);
    Rng rng(2);
    auto z1 = ReturnDistributionTable::random(g, 3, 2, rng);
    auto z2 = ReturnDistributionTable::random(g, 3, 2, rng);
    double prev = sup_distance(z1, z2, Metric::Cramer);
    for (int i = 0; i < 10; ++i) {
        z1 = bellman_backup(z1, mdp, policy);
        z2 = bellman_backup(z2, mdp, policy);
        const double d = sup_distance(z1, z2, Metric::Cramer);
        CHECK(d <= std::sqrt(0.8) * prev + 1e-12);
        prev = d;
    }
}

TEST_CASE("cramer distance") {
    const SupportGrid g(0, 2, 8);
    const auto a = CategoricalDistribution::dirac(g, 3);
    CHECK(cramer_distance(a, a) == 0.0);
    CHECK(cramer_distance(a, CategoricalDistribution::dirac(g, 4)) == doctest::Approx(std::sqrt(g.width())));

    // quadrature of (F1 - F2)^2 on a 10x refined partition of [m_0, m_{k-1}]
    Rng rng(3);
    for (int rep = 0; rep < 20; ++rep) {
        const auto d1 = random_dist(g, rng);
        const auto d2 = random_dist(g, rng);
        auto cdf_at = [&](const CategoricalDistribution& d, double v) {
            double c = 0.0;
            for (int i = 0; i < g.bins(); ++i) {
                if (g.midpoint(i) <= v) c += d[i];
            }
            return c;
        };
        const int n = 10 * (g.bins() - 1);
        const double h = (g.midpoint(g.bins() - 1) - g.midpoint(0)) / n;
        double integral = 0.0;
        for (int j = 0; j < n; ++j) {
            const double v = g.midpoint(0) + (j + 0.5) * h;
            const double diff = cdf_at(d1, v) - cdf_at(d2, v);
            integral += diff * diff * h;
        }
        CHECK(std::abs(cramer_distance(d1, d2) - std::sqrt(integral)) <= 1e-10);
    }
}

TEST_CASE("wasserstein-1 distance") {
    const SupportGrid g(0, 10, 5);
    const auto a = CategoricalDistribution::dirac(g, 1);
    CHECK(wasserstein1_distance(a, a) == 0.0);
    CHECK(wasserstein1_distance(a, CategoricalDistribution::dirac(g, 4)) == doctest::Approx(6.0));

    // transport between 1e6 sorted inverse-CDF samples
    Rng rng(8);
    const auto d1 = random_dist(g, rng);
    const auto d2 = random_dist(g, rng);
    auto inverse = [&](const CategoricalDistribution& d, double u) {
        double c = 0.0;
        for (int i = 0; i < g.bins(); ++i) {
            c += d[i];
            if (u < c) return g.midpoint(i);
        }
        return g.midpoint(g.bins() - 1);
    };
    const int n = 1000000;
    double total = 0.0;
    for (int j = 0; j < n; ++j) {
        const double u = (j + 0.5) / n;
        total += std::abs(inverse(d1, u) - inverse(d2, u));
    }
    CHECK(std::abs(wasserstein1_distance(d1, d2) - total / n) <= 1e-3);
}

TEST_CASE("contraction probe rates") {
    const auto base = make_random_mdp(4, 2, 3, 12, 0.99);
    const SupportGrid g(-5, 5, 31);
    const auto policy = Policy::uniform(4, 2);
    const auto cr = contraction_probe(base, policy, g, Metric::Cramer, 100, 1);
    CHECK(cr.rate == doctest::Approx(std::sqrt(0.99)));
    CHECK(cr.max_ratio <= 0.995 + 0.05);
    const auto half = make_random_mdp(4, 2, 3, 12, 0.5);
    const auto w1 = contraction_probe(half, policy, g, Metric::Wasserstein1, 100, 1);
    CHECK(w1.max_ratio <= 0.55);
    CHECK(w1.samples.size() + w1.skipped == 100);
    CHECK(metric_from_string(to_string(Metric::Wasserstein1)) == Metric::Wasserstein1);
    CHECK_THROWS_AS(metric_from_string("kl"), ParameterError);
}

TEST_CASE("identical tables make the contraction pair degenerate") {
    // gamma 0 with a single reward atom maps every table to the same image,
    // and a one-bin grid makes every input pair identical as well.
    const auto mdp = make_absorbing_mdp(0.5, 0.5);
    const auto r = contraction_probe(mdp, Policy::uniform(1, 1), SupportGrid(0, 1, 1), Metric::Cramer, 5, 3);
    CHECK(r.skipped == 5);
    CHECK(r.samples.empty());
}

TEST_CASE("exact return distribution") {
    SUBCASE("absorbing geometric tail") {
        const auto mdp = make_absorbing_mdp(1.0, 0.5);
        const SupportGrid g(-0.25, 4.25, 9);
        const auto r = exact_return_distribution(mdp, Policy::uniform(1, 1), g, 30);
        CHECK(std::abs(r.table.at(0, 0).mean() - 2.0) <= std::pow(2.0, -30) * 2.0 + 1e-12);
        CHECK(r.truncation_bound == doctest::Approx(std::pow(0.5, 30) * 2.0));
    }
    SUBCASE("two-point terminal reward") {
        ChainRewards rewards;
        rewards.terminal = {{1.0, 0.5}, {-1.0, 0.5}};
        const auto mdp = make_chain_mdp(3, rewards, 0.9);
        const SupportGrid g(-2.05, 2.05, 41); // midpoints on a 0.1 lattice
        const auto r = exact_return_distribution(mdp, Policy::deterministic({0, 0, 0}, 2), g, 6);
        const auto& z = r.table.at(0, 0);
        int atoms = 0;
        for (int i = 0; i < g.bins(); ++i) {
            if (z[i] > 1e-12) {
                ++atoms;
                CHECK(z[i] == doctest::Approx(0.5));
            }
        }
        CHECK(atoms == 2);
    }
    SUBCASE("agrees with iterated backups") {
        const auto mdp = make_random_mdp(3, 2, 1, 21, 0.5);
        const SupportGrid g(-0.5, 2.5, 31);
        const auto policy = Policy::deterministic({0, 1, 0}, 2);
        const auto exact = exact_return_distribution(mdp, policy, g, 12);
        auto z = ReturnDistributionTable::filled(CategoricalDistribution::uniform(g), 3, 2);
        for (int i = 0; i < 20; ++i) z = bellman_backup(z, mdp, policy);
        CHECK(sup_distance(exact.table, z, Metric::Cramer) <= 2.0 * g.width());
    }
    SUBCASE("path guard") {
        const auto mdp = make_random_mdp(4, 3, 4, 1, 0.9);
        CHECK(count_return_paths(mdp, Policy::uniform(4, 3), 3) > 0);
        CHECK_THROWS_AS(exact_return_distribution(mdp, Policy::uniform(4, 3), SupportGrid(0, 10, 11), 40), SizeError);
    }
}

TEST_CASE("value iteration") {
    const auto abs = classical_value_iteration(make_absorbing_mdp(1.0, 0.5), 1e-12);
    CHECK(abs.at(0, 0) == doctest::Approx(2.0).epsilon(1e-11));
    const auto myopic = make_random_mdp(3, 2, 3, 9, 0.0);
    const auto q0 = classical_value_iteration(myopic, 1e-12);
    for (int s = 0; s < 3; ++s) {
        for (int a = 0; a < 2; ++a) CHECK(q0.at(s, a) == doctest::Approx(myopic.expected_reward(s, a)));
    }
}

TEST_CASE("value iteration agrees with the exact oracle under the greedy policy") {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        const auto mdp = make_random_mdp(3, 2, 1, seed, 0.5);
        const auto q = classical_value_iteration(mdp, 1e-12);
        const auto policy = greedy_policy(q);
        const SupportGrid g(-0.05, 2.05, 21);
        const int horizon = 10;
        const auto exact = exact_return_distribution(mdp, policy, g, horizon);
        const double tol = exact.truncation_bound + projection_mean_error(g, 0.0, 2.0) + 1e-9;
        for (int s = 0; s < 3; ++s) {
            for (int a = 0; a < 2; ++a) CHECK(std::abs(exact.table.at(s, a).mean() - q.at(s, a)) <= tol);
        }
    }
}

TEST_CASE("greedy policy and optimality backup") {
    const SupportGrid g(0, 4, 4);
    std::vector<std::vector<CategoricalDistribution>> d{
        {CategoricalDistribution::dirac(g, 0), CategoricalDistribution::dirac(g, 3)}};
    const ReturnDistributionTable table(g, d);
    CHECK(greedy_policy(table).prob(0, 1) == 1.0);
    CHECK(greedy_policy(ValueTable{{{2.0, 2.0}}}).prob(0, 0) == 1.0);
}
