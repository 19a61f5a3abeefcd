#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "fzilab/core.hpp"

namespace fzilab {

/// Linear-softmax categorical value distribution: for action a the bin
/// probabilities at state s are softmax(theta[a] * x(s)), theta[a] is k x d.
class CategoricalModel {
public:
    /// All-zero parameters, i.e. the uniform distribution everywhere.
    CategoricalModel(SupportGrid grid, FeatureMap features, int n_actions);
    CategoricalModel(SupportGrid grid, FeatureMap features, std::vector<Eigen::MatrixXd> theta);

    /// Seeded N(0, stddev^2) initialisation.
    static CategoricalModel gaussian(SupportGrid grid, FeatureMap features, int n_actions,
                                     std::uint64_t seed, double stddev = 0.01);

    const SupportGrid& grid() const { return grid_; }
    const FeatureMap& features() const { return features_; }
    int actions() const { return static_cast<int>(theta_.size()); }
    int states() const { return features_.states(); }

    const Eigen::MatrixXd& theta(int a) const { return theta_[a]; }
    const std::vector<Eigen::MatrixXd>& theta() const { return theta_; }
    /// Replaces one parameter block; throws on shape mismatch or non-finite entries.
    void set_theta(int a, Eigen::MatrixXd block);

private:
    void validate() const;

    SupportGrid grid_;
    FeatureMap features_;
    std::vector<Eigen::MatrixXd> theta_;
};

/// Max-shifted softmax of a logit vector.
Eigen::VectorXd softmax(const Eigen::VectorXd& logits);
/// logits - logsumexp(logits).
Eigen::VectorXd log_softmax(const Eigen::VectorXd& logits);

Eigen::VectorXd softmax_probs(const CategoricalModel& model, int s, int a);
CategoricalDistribution model_distribution(const CategoricalModel& model, int s, int a);

/// Sum_i m_i f_i with m_i the bin midpoints.
double model_expectation(const CategoricalModel& model, int s, int a);

/// Argmax over actions of model_expectation; ties go to the smallest action id.
int greedy_action(const CategoricalModel& model, int s);

/// MDP whose return distribution at (s, a) is exactly the teacher model's
/// distribution: reward atoms sit on the bin midpoints with the teacher's
/// probabilities, then the episode moves to an extra zero-reward absorbing
/// state (id = teacher.states()). The returned feature map extends the
/// teacher's with a zero vector for that absorbing state.
struct RealizableTask {
    TabularMDP mdp;
    FeatureMap features;
};
RealizableTask make_realizable_task(const CategoricalModel& teacher, double gamma);

} // namespace fzilab
