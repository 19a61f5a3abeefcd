#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "fzilab/error.hpp"
#include "fzilab/rng.hpp"

namespace fzilab {

/// Tolerance for probability vectors built directly from inputs.
inline constexpr double kProbTol = 1e-12;
/// Tolerance for probability vectors produced by chains of arithmetic.
inline constexpr double kArithTol = 1e-9;

/// Fixed bounded support [l0, lk] split into k bins of equal width.
class SupportGrid {
public:
    SupportGrid(double l0, double lk, int k);

    double lower() const { return l0_; }
    double upper() const { return lk_; }
    int bins() const { return k_; }
    double width() const { return width_; }

    /// Edge l_i for i in [0, k].
    double edge(int i) const;
    /// Bin midpoint m_i = (l_i + l_{i+1}) / 2 for i in [0, k).
    double midpoint(int i) const;
    Eigen::VectorXd midpoints() const;

    /// Bin i such that value lies in (l_i, l_{i+1}]; l0 itself maps to bin 0.
    /// Values outside [l0, lk] are clamped to the boundary bins.
    int bin_of(double value) const;

    bool operator==(const SupportGrid& other) const {
        return l0_ == other.l0_ && lk_ == other.lk_ && k_ == other.k_;
    }

private:
    double l0_;
    double lk_;
    int k_;
    double width_;
};

/// Probability mass per bin of a SupportGrid.
class CategoricalDistribution {
public:
    CategoricalDistribution(SupportGrid grid, Eigen::VectorXd mass, double tol = kProbTol);

    static CategoricalDistribution dirac(const SupportGrid& grid, int bin);
    static CategoricalDistribution uniform(const SupportGrid& grid);

    const SupportGrid& grid() const { return grid_; }
    const Eigen::VectorXd& mass() const { return mass_; }
    double operator[](int i) const { return mass_[i]; }

    /// Mean with each bin's mass placed at its midpoint.
    double mean() const;
    /// Cumulative sums F_i = sum_{j <= i} mass_j.
    Eigen::VectorXd cdf() const;

private:
    SupportGrid grid_;
    Eigen::VectorXd mass_;
};

/// Equal-weight mixture of Dirac atoms.
class QuantileDistribution {
public:
    explicit QuantileDistribution(std::vector<double> atoms);

    const std::vector<double>& atoms() const { return atoms_; }
    std::size_t size() const { return atoms_.size(); }
    double weight() const { return 1.0 / static_cast<double>(atoms_.size()); }
    double mean() const;

private:
    std::vector<double> atoms_;
};

struct RewardAtom {
    double value = 0.0;
    double prob = 0.0;

    bool operator==(const RewardAtom&) const = default;
};

using RewardDistribution = std::vector<RewardAtom>;

/// Finite MDP with discrete stochastic rewards. Immutable once built.
class TabularMDP {
public:
    /// transition[s][a] is a probability vector over next states;
    /// reward[s][a] is a finite reward distribution.
    TabularMDP(std::vector<std::vector<std::vector<double>>> transition,
               std::vector<std::vector<RewardDistribution>> reward, double gamma);

    int states() const { return n_states_; }
    int actions() const { return n_actions_; }
    double gamma() const { return gamma_; }

    const std::vector<double>& transition(int s, int a) const { return transition_[s][a]; }
    const RewardDistribution& reward(int s, int a) const { return reward_[s][a]; }
    double expected_reward(int s, int a) const;
    /// Largest |r| over all reward atoms with positive probability.
    double max_abs_reward() const;

    bool operator==(const TabularMDP&) const = default;

private:
    int n_states_;
    int n_actions_;
    std::vector<std::vector<std::vector<double>>> transition_;
    std::vector<std::vector<RewardDistribution>> reward_;
    double gamma_;
};

/// Stochastic policy: probs[s] is a distribution over actions.
class Policy {
public:
    explicit Policy(std::vector<std::vector<double>> probs);

    static Policy uniform(int n_states, int n_actions);
    static Policy deterministic(const std::vector<int>& actions, int n_actions);

    int states() const { return static_cast<int>(probs_.size()); }
    int actions() const { return probs_.empty() ? 0 : static_cast<int>(probs_[0].size()); }
    const std::vector<double>& probs(int s) const { return probs_[s]; }
    double prob(int s, int a) const { return probs_[s][a]; }

private:
    std::vector<std::vector<double>> probs_;
};

/// State features x(s) with a bound l on their Euclidean norm.
class FeatureMap {
public:
    FeatureMap(std::vector<Eigen::VectorXd> features, double norm_bound);

    int dim() const { return dim_; }
    int states() const { return static_cast<int>(features_.size()); }
    double norm_bound() const { return norm_bound_; }
    const Eigen::VectorXd& operator()(int s) const { return features_[s]; }
    const std::vector<Eigen::VectorXd>& all() const { return features_; }

    bool operator==(const FeatureMap& other) const;

private:
    std::vector<Eigen::VectorXd> features_;
    double norm_bound_;
    int dim_;
};

struct TransitionSample {
    int s = 0;
    int a = 0;
    double r = 0.0;
    int s_next = 0;
};

/// Draw (r, s') for a given (s, a).
TransitionSample sample_transition(const TabularMDP& mdp, int s, int a, Rng& rng);

/// Reward emitted when stepping from state length-2 into the absorbing state,
/// plus a reward emitted every step once absorbed.
struct ChainRewards {
    RewardDistribution terminal{{1.0, 1.0}};
    double absorbing = 0.0;
};

/// Deterministic chain 0 -> 1 -> ... -> length-1. Action 0 advances, action 1
/// stays put with reward 0; the last state is absorbing under both actions.
TabularMDP make_chain_mdp(int length, const ChainRewards& rewards, double gamma);

/// Single state, single action, deterministic reward r forever.
TabularMDP make_absorbing_mdp(double reward, double gamma);

/// Seeded random MDP: Dirichlet(1) transition rows, reward values uniform in
/// [0, 1) with Dirichlet(1) probabilities. Same arguments give the same MDP.
TabularMDP make_random_mdp(int n_states, int n_actions, int reward_support_size,
                           std::uint64_t seed, double gamma = 0.9);

/// Standard basis features, d = n_states, l = 1.
FeatureMap make_onehot_features(int n_states);

/// x(s) = radius * (cos 2*pi*s/n, sin 2*pi*s/n); l = radius.
FeatureMap make_circle_features(int n_states, double radius = 1.0);

/// Gaussian features rescaled so the largest norm equals norm_bound.
FeatureMap make_random_features(int n_states, int dim, double norm_bound, std::uint64_t seed);

/// Throws ParameterError unless v is nonnegative and sums to 1 within tol.
void require_probability_vector(std::span<const double> v, double tol, const char* what);

} // namespace fzilab
