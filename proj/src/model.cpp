#include "fzilab/model.hpp"

#include <cmath>
#include <string>

#include "fzilab/rng.hpp"

namespace fzilab {

CategoricalModel::CategoricalModel(SupportGrid grid, FeatureMap features, int n_actions)
    : grid_(grid), features_(std::move(features)) {
    if (n_actions < 1) throw ParameterError("model needs at least one action");
    theta_.assign(n_actions, Eigen::MatrixXd::Zero(grid_.bins(), features_.dim()));
}

CategoricalModel::CategoricalModel(SupportGrid grid, FeatureMap features, std::vector<Eigen::MatrixXd> theta)
    : grid_(grid), features_(std::move(features)), theta_(std::move(theta)) {
    validate();
}

CategoricalModel CategoricalModel::gaussian(SupportGrid grid, FeatureMap features, int n_actions,
                                            std::uint64_t seed, double stddev) {
    CategoricalModel m(grid, std::move(features), n_actions);
    Rng rng(seed);
    for (auto& block : m.theta_) {
        for (Eigen::Index i = 0; i < block.rows(); ++i) {
            for (Eigen::Index j = 0; j < block.cols(); ++j) block(i, j) = stddev * rng.normal();
        }
    }
    return m;
}

void CategoricalModel::validate() const {
    if (theta_.empty()) throw ParameterError("model needs at least one action");
    for (std::size_t a = 0; a < theta_.size(); ++a) {
        const auto& block = theta_[a];
        if (block.rows() != grid_.bins() || block.cols() != features_.dim()) {
            throw ShapeError("theta block " + std::to_string(a) + " must be " + std::to_string(grid_.bins()) +
                             " x " + std::to_string(features_.dim()));
        }
        if (!block.allFinite()) throw NumericError("non-finite theta in block " + std::to_string(a));
    }
}

void CategoricalModel::set_theta(int a, Eigen::MatrixXd block) {
    if (a < 0 || a >= actions()) throw ParameterError("action id out of range");
    if (block.rows() != grid_.bins() || block.cols() != features_.dim()) throw ShapeError("theta block shape");
    if (!block.allFinite()) throw NumericError("non-finite theta");
    theta_[a] = std::move(block);
}

Eigen::VectorXd softmax(const Eigen::VectorXd& logits) {
    if (!logits.allFinite()) throw NumericError("non-finite logits");
    const double c = logits.maxCoeff();
    Eigen::VectorXd e = (logits.array() - c).exp();
    return e / e.sum();
}

Eigen::VectorXd log_softmax(const Eigen::VectorXd& logits) {
    if (!logits.allFinite()) throw NumericError("non-finite logits");
    const double c = logits.maxCoeff();
    const double lse = c + std::log((logits.array() - c).exp().sum());
    return logits.array() - lse;
}

namespace {

void check_indices(const CategoricalModel& model, int s, int a) {
    if (s < 0 || s >= model.states()) throw ParameterError("state id out of range");
    if (a < 0 || a >= model.actions()) throw ParameterError("action id out of range");
}

} // namespace

Eigen::VectorXd softmax_probs(const CategoricalModel& model, int s, int a) {
    check_indices(model, s, a);
    return softmax(model.theta(a) * model.features()(s));
}

CategoricalDistribution model_distribution(const CategoricalModel& model, int s, int a) {
    return {model.grid(), softmax_probs(model, s, a), kArithTol};
}

double model_expectation(const CategoricalModel& model, int s, int a) {
    return model.grid().midpoints().dot(softmax_probs(model, s, a));
}

int greedy_action(const CategoricalModel& model, int s) {
    int best = 0;
    double best_value = model_expectation(model, s, 0);
    for (int a = 1; a < model.actions(); ++a) {
        const double v = model_expectation(model, s, a);
        if (v > best_value) {
            best = a;
            best_value = v;
        }
    }
    return best;
}

RealizableTask make_realizable_task(const CategoricalModel& teacher, double gamma) {
    const int n = teacher.states();
    const int n_actions = teacher.actions();
    const int terminal = n;
    const auto mids = teacher.grid().midpoints();
    std::vector<std::vector<std::vector<double>>> p(
        n + 1, std::vector<std::vector<double>>(n_actions, std::vector<double>(n + 1, 0.0)));
    std::vector<std::vector<RewardDistribution>> r(n + 1, std::vector<RewardDistribution>(n_actions));
    for (int s = 0; s < n; ++s) {
        for (int a = 0; a < n_actions; ++a) {
            Eigen::VectorXd f = softmax_probs(teacher, s, a);
            // Renormalise so the atom list passes the 1e-12 construction check.
            f /= f.sum();
            auto& rd = r[s][a];
            for (int i = 0; i < teacher.grid().bins(); ++i) rd.push_back({mids[i], f[i]});
            p[s][a][terminal] = 1.0;
        }
    }
    for (int a = 0; a < n_actions; ++a) {
        p[terminal][a][terminal] = 1.0;
        r[terminal][a] = {{0.0, 1.0}};
    }
    std::vector<Eigen::VectorXd> x = teacher.features().all();
    x.push_back(Eigen::VectorXd::Zero(teacher.features().dim()));
    return {TabularMDP(std::move(p), std::move(r), gamma), FeatureMap(std::move(x), teacher.features().norm_bound())};
}

} // namespace fzilab
