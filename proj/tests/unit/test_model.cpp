#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "fzilab/error.hpp"
#include "fzilab/model.hpp"
#include "fzilab/rng.hpp"

using namespace fzilab;

namespace {

CategoricalModel one_state(const SupportGrid& g, Eigen::MatrixXd theta) {
    Eigen::VectorXd x(1);
    x << 1.0;
    return CategoricalModel(g, FeatureMap({x}, 1.0), std::vector<Eigen::MatrixXd>{std::move(theta)});
}

} // namespace

TEST_CASE("softmax of identical logits is uniform") {
    const CategoricalModel m(SupportGrid(0, 1, 2), make_onehot_features(3), 1);
    const auto f = softmax_probs(m, 2, 0);
    CHECK(f[0] == 0.5);
    CHECK(f[1] == 0.5);
}

TEST_CASE("softmax with logits (0, ln 3)") {
    Eigen::MatrixXd th(2, 1);
    th << 0.0, std::log(3.0);
    const auto f = softmax_probs(one_state(SupportGrid(0, 1, 2), th), 0, 0);
    CHECK(f[0] == doctest::Approx(0.25).epsilon(1e-15));
    CHECK(f[1] == doctest::Approx(0.75).epsilon(1e-15));
}

TEST_CASE("softmax is shift invariant and stable for large logits") {
    const auto m = CategoricalModel::gaussian(SupportGrid(0, 1, 7), make_random_features(4, 3, 1.0, 2), 2, 5, 1.0);
    Rng rng(3);
    Eigen::VectorXd c(3);
    for (int j = 0; j < 3; ++j) c[j] = rng.normal() * 10.0;
    std::vector<Eigen::MatrixXd> shifted = m.theta();
    for (auto& block : shifted) block.rowwise() += c.transpose();
    const CategoricalModel m2(m.grid(), m.features(), shifted);
    for (int s = 0; s < 4; ++s) {
        const auto d = (softmax_probs(m, s, 1) - softmax_probs(m2, s, 1)).cwiseAbs().maxCoeff();
        CHECK(d <= 1e-13);
    }
    Eigen::VectorXd big(3);
    big << 1000.0, 999.0, -1000.0;
    const auto f = softmax(big);
    CHECK(std::isfinite(f.sum()));
    CHECK(f.sum() == doctest::Approx(1.0));
    CHECK(log_softmax(big)[0] == doctest::Approx(-std::log1p(std::exp(-1.0))));
}

TEST_CASE("model expectation uses midpoints") {
    const CategoricalModel m(SupportGrid(0, 1, 2), make_onehot_features(1), 1);
    CHECK(model_expectation(m, 0, 0) == doctest::Approx(0.5));

    Eigen::MatrixXd th(4, 1);
    th << -50, -50, 50, -50;
    const auto hot = one_state(SupportGrid(0, 8, 4), th);
    CHECK(model_expectation(hot, 0, 0) == doctest::Approx(5.0));

    const auto wide = CategoricalModel::gaussian(SupportGrid(0, 10000, 51), make_random_features(5, 3, 1, 1), 2, 8, 3.0);
    for (int s = 0; s < 5; ++s) {
        for (int a = 0; a < 2; ++a) {
            const double q = model_expectation(wide, s, a);
            CHECK(q >= 0.0);
            CHECK(q <= 10000.0);
        }
    }
}

TEST_CASE("greedy action") {
    const SupportGrid g(0, 4, 2);
    const auto x = make_onehot_features(1);
    Eigen::MatrixXd low(2, 1), high(2, 1);
    low << 0.0, 0.0;   // Q = 2
    high << -1.0, 1.0; // Q > 2
    CHECK(greedy_action(CategoricalModel(g, x, {low, high}), 0) == 1);
    CHECK(greedy_action(CategoricalModel(g, x, {high, low}), 0) == 0);
    CHECK(greedy_action(CategoricalModel(g, x, {low, low}), 0) == 0);
    CHECK(greedy_action(CategoricalModel(g, x, 1), 0) == 0);
}

TEST_CASE("model validation") {
    Eigen::MatrixXd wrong(3, 1);
    wrong.setZero();
    CHECK_THROWS_AS(CategoricalModel(SupportGrid(0, 1, 2), make_onehot_features(1), {wrong}), ShapeError);
    Eigen::MatrixXd nan(2, 1);
    nan << 0.0, NAN;
    CHECK_THROWS(CategoricalModel(SupportGrid(0, 1, 2), make_onehot_features(1), {nan}));
    CategoricalModel m(SupportGrid(0, 1, 2), make_onehot_features(1), 1);
    CHECK_THROWS(m.set_theta(0, wrong));
}

TEST_CASE("gaussian initialisation is seeded") {
    const auto f = make_onehot_features(3);
    const auto a = CategoricalModel::gaussian(SupportGrid(0, 1, 5), f, 2, 11);
    const auto b = CategoricalModel::gaussian(SupportGrid(0, 1, 5), f, 2, 11);
    for (int i = 0; i < 2; ++i) CHECK(a.theta(i) == b.theta(i));
    CHECK(a.theta(0).cwiseAbs().maxCoeff() < 0.1);
}

TEST_CASE("realizable task reproduces the teacher distribution at gamma 0") {
    const auto teacher = CategoricalModel::gaussian(SupportGrid(0, 3, 3), make_circle_features(4), 1, 3, 1.0);
    const auto task = make_realizable_task(teacher, 0.0);
    CHECK(task.mdp.states() == 5);
    CHECK(task.features.states() == 5);
    CHECK(task.features(4).norm() == 0.0);
    for (int s = 0; s < 4; ++s) {
        const auto f = softmax_probs(teacher, s, 0);
        double mean = 0.0;
        for (int i = 0; i < 3; ++i) mean += f[i] * teacher.grid().midpoint(i);
        CHECK(task.mdp.expected_reward(s, 0) == doctest::Approx(mean));
    }
}
