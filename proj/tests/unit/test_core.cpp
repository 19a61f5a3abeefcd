#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "fzilab/core.hpp"
#include "fzilab/error.hpp"
#include "fzilab/rng.hpp"

using namespace fzilab;

TEST_CASE("support grid edges, midpoints and bins") {
    const SupportGrid g(0.0, 10.0, 5);
    CHECK(g.width() == doctest::Approx(2.0));
    CHECK(g.edge(0) == 0.0);
    CHECK(g.edge(5) == 10.0);
    CHECK(g.midpoint(0) == doctest::Approx(1.0));
    CHECK(g.midpoint(4) == doctest::Approx(9.0));
    for (int i = 0; i < 5; ++i) CHECK(g.edge(i) < g.edge(i + 1));

    // half-open (l_i, l_{i+1}] convention, l0 itself in bin 0
    CHECK(g.bin_of(0.0) == 0);
    CHECK(g.bin_of(2.0) == 0);
    CHECK(g.bin_of(2.0000001) == 1);
    CHECK(g.bin_of(10.0) == 4);
    CHECK(g.bin_of(-3.0) == 0);
    CHECK(g.bin_of(42.0) == 4);

    CHECK_THROWS_AS(SupportGrid(1.0, 1.0, 3), ParameterError);
    CHECK_THROWS_AS(SupportGrid(0.0, 1.0, 0), ParameterError);
    CHECK_THROWS_AS(SupportGrid(0.0, NAN, 2), ParameterError);
}

TEST_CASE("categorical distribution validation and moments") {
    const SupportGrid g(0.0, 1.0, 2);
    Eigen::VectorXd m(2);
    m << 0.5, 0.5;
    const CategoricalDistribution d(g, m);
    CHECK(d.mean() == doctest::Approx(0.5));
    CHECK(d.cdf()[1] == doctest::Approx(1.0));

    Eigen::VectorXd bad(2);
    bad << 0.6, 0.5;
    CHECK_THROWS_AS(CategoricalDistribution(g, bad), ParameterError);
    bad << -0.1, 1.1;
    CHECK_THROWS_AS(CategoricalDistribution(g, bad), ParameterError);
    CHECK_THROWS_AS(CategoricalDistribution(g, Eigen::VectorXd::Ones(3) / 3.0), ShapeError);

    CHECK(CategoricalDistribution::dirac(g, 1).mean() == doctest::Approx(0.75));
    CHECK(CategoricalDistribution::uniform(SupportGrid(0, 4, 4)).mass().sum() == doctest::Approx(1.0));
}

TEST_CASE("quantile distribution") {
    const QuantileDistribution q({0.0, 1.0, 2.0, 5.0});
    CHECK(q.weight() == doctest::Approx(0.25));
    CHECK(q.mean() == doctest::Approx(2.0));
    CHECK_THROWS(QuantileDistribution({2.0, 1.0}));
    CHECK_THROWS(QuantileDistribution(std::vector<double>{}));
}

TEST_CASE("MDP invariants are enforced") {
    const RewardDistribution r{{1.0, 1.0}};
    CHECK_THROWS_AS(TabularMDP({{{0.5, 0.4}}, {{0.5, 0.5}}}, {{r}, {r}}, 0.9), ParameterError);
    CHECK_THROWS_AS(TabularMDP({{{1.0}}}, {{{{1.0, 0.7}}}}, 0.9), ParameterError);
    CHECK_THROWS_AS(TabularMDP({{{1.0}}}, {{r}}, 1.0), ParameterError);
    CHECK_THROWS_AS(TabularMDP({{{1.0}}}, {{r}}, -0.1), ParameterError);
    CHECK_NOTHROW(TabularMDP({{{1.0}}}, {{r}}, 0.0));
}

TEST_CASE("chain MDP") {
    SUBCASE("length 5 has one-hot transitions") {
        const auto mdp = make_chain_mdp(5, {}, 0.99);
        for (int s = 0; s < mdp.states(); ++s) {
            for (int a = 0; a < mdp.actions(); ++a) {
                int ones = 0;
                for (double p : mdp.transition(s, a)) {
                    CHECK((p == 0.0 || p == 1.0));
                    ones += p == 1.0;
                }
                CHECK(ones == 1);
            }
        }
    }
    SUBCASE("noisy terminal reward rows sum to one") {
        ChainRewards rewards;
        rewards.terminal = {{1.0, 0.5}, {-1.0, 0.5}};
        const auto mdp = make_chain_mdp(2, rewards, 0.9);
        for (int s = 0; s < mdp.states(); ++s) {
            for (int a = 0; a < mdp.actions(); ++a) {
                double total = 0.0;
                for (const auto& atom : mdp.reward(s, a)) total += atom.prob;
                CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
            }
        }
    }
}

TEST_CASE("absorbing MDP returns the geometric series") {
    const auto mdp = make_absorbing_mdp(1.0, 0.5);
    CHECK(mdp.states() == 1);
    CHECK(mdp.actions() == 1);
    double v = 0.0;
    for (int t = 0; t < 200; ++t) v = mdp.expected_reward(0, 0) + mdp.gamma() * v;
    CHECK(v == doctest::Approx(2.0));
}

TEST_CASE("random MDP is deterministic and well shaped") {
    const auto a = make_random_mdp(3, 2, 4, 7);
    const auto b = make_random_mdp(3, 2, 4, 7);
    CHECK(a == b);
    CHECK_FALSE(a == make_random_mdp(3, 2, 4, 8));
    CHECK(a.states() == 3);
    CHECK(a.actions() == 2);
    for (int s = 0; s < 3; ++s) {
        for (int act = 0; act < 2; ++act) {
            CHECK(a.transition(s, act).size() == 3);
            double total = 0.0;
            for (double p : a.transition(s, act)) total += p;
            CHECK(std::abs(total - 1.0) <= 1e-12);
            CHECK(a.reward(s, act).size() == 4);
        }
    }
}

TEST_CASE("feature maps") {
    const auto one = make_onehot_features(3);
    CHECK(one.dim() == 3);
    CHECK(one(1)[0] == 0.0);
    CHECK(one(1)[1] == 1.0);
    CHECK(one(1)[2] == 0.0);
    for (int s = 0; s < 3; ++s) CHECK(one(s).norm() <= one.norm_bound());

    const auto single = make_onehot_features(1);
    CHECK(single.dim() == 1);
    CHECK(single(0)[0] == 1.0);

    const auto circle = make_circle_features(4, 2.0);
    CHECK(circle.norm_bound() == 2.0);
    CHECK(circle(1)[1] == doctest::Approx(2.0));

    const auto rnd = make_random_features(10, 4, 1.5, 3);
    double largest = 0.0;
    for (int s = 0; s < 10; ++s) largest = std::max(largest, rnd(s).norm());
    CHECK(largest == doctest::Approx(1.5));
    CHECK(rnd == make_random_features(10, 4, 1.5, 3));

    Eigen::VectorXd big(2);
    big << 3.0, 4.0;
    CHECK_THROWS_AS(FeatureMap({big}, 4.9), ParameterError);
}

TEST_CASE("policies") {
    const auto u = Policy::uniform(2, 4);
    CHECK(u.prob(1, 3) == doctest::Approx(0.25));
    const auto d = Policy::deterministic({1, 0}, 2);
    CHECK(d.prob(0, 1) == 1.0);
    CHECK(d.prob(1, 1) == 0.0);
    CHECK_THROWS(Policy({{0.3, 0.3}}));
}

TEST_CASE("transition sampling follows the MDP") {
    const auto mdp = make_random_mdp(2, 1, 2, 5);
    Rng rng(9);
    std::vector<int> counts(2, 0);
    const int n = 200000;
    for (int i = 0; i < n; ++i) ++counts[sample_transition(mdp, 0, 0, rng).s_next];
    CHECK(counts[0] / double(n) == doctest::Approx(mdp.transition(0, 0)[0]).epsilon(0.01));
}

TEST_CASE("rng streams are reproducible") {
    Rng a(42), b(42);
    for (int i = 0; i < 10; ++i) CHECK(a.bits() == b.bits());
    CHECK(sub_seed(1, 2) != sub_seed(1, 3));
    CHECK(sub_seed(1, 2) == sub_seed(1, 2));
    Rng c(1);
    const auto s = c.simplex(5);
    double total = 0.0;
    for (double v : s) total += v;
    CHECK(total == doctest::Approx(1.0));
}
