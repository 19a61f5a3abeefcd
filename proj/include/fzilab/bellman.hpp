#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "fzilab/core.hpp"

namespace fzilab {

/// Z(s, a) for every state-action pair, all on one grid.
class ReturnDistributionTable {
public:
    /// dists[s][a]; throws ShapeError unless every entry uses `grid`.
    ReturnDistributionTable(SupportGrid grid, std::vector<std::vector<CategoricalDistribution>> dists);

    static ReturnDistributionTable filled(const CategoricalDistribution& d, int n_states, int n_actions);
    /// Independent Dirichlet(1) masses per entry.
    static ReturnDistributionTable random(const SupportGrid& grid, int n_states, int n_actions, Rng& rng);

    const SupportGrid& grid() const { return grid_; }
    int states() const { return static_cast<int>(dists_.size()); }
    int actions() const { return dists_.empty() ? 0 : static_cast<int>(dists_[0].size()); }
    const CategoricalDistribution& at(int s, int a) const { return dists_[s][a]; }

private:
    SupportGrid grid_;
    std::vector<std::vector<CategoricalDistribution>> dists_;
};

/// Q(s, a).
struct ValueTable {
    std::vector<std::vector<double>> q;

    int states() const { return static_cast<int>(q.size()); }
    int actions() const { return q.empty() ? 0 : static_cast<int>(q[0].size()); }
    double at(int s, int a) const { return q[s][a]; }
};

enum class ProjectionMode {
    /// Two-neighbour linear split onto the midpoints, clipping at both ends.
    Project,
    /// Atoms are assumed to lie in [l0, lk] already and are binned into the
    /// half-open bin (l_i, l_{i+1}] that contains them; atoms outside raise.
    AssumeJointSupport,
};

/// Mass accumulator for the categorical projection. Atoms are added one at a
/// time so callers never materialise large atom lists.
class Projector {
public:
    explicit Projector(const SupportGrid& grid, ProjectionMode mode = ProjectionMode::Project);

    void add(double value, double prob);
    bool empty() const { return count_ == 0; }
    CategoricalDistribution result() const;

private:
    SupportGrid grid_;
    ProjectionMode mode_;
    Eigen::VectorXd mass_;
    double m_first_;
    double m_last_;
    std::size_t count_ = 0;
};

CategoricalDistribution project_categorical(std::span<const RewardAtom> atoms, const SupportGrid& grid,
                                            ProjectionMode mode = ProjectionMode::Project);

/// Exact policy-evaluation backup (T^pi Z)(s, a).
ReturnDistributionTable bellman_backup(const ReturnDistributionTable& table, const TabularMDP& mdp,
                                       const Policy& policy, ProjectionMode mode = ProjectionMode::Project);

/// Deterministic policy picking argmax_a of the table means (ties to the smallest id).
Policy greedy_policy(const ReturnDistributionTable& table);
Policy greedy_policy(const ValueTable& values);

/// Control backup: policy-evaluation backup under greedy_policy(table).
ReturnDistributionTable bellman_optimality_backup(const ReturnDistributionTable& table, const TabularMDP& mdp,
                                                  ProjectionMode mode = ProjectionMode::Project);

/// sqrt(sum_i (F1_i - F2_i)^2 w).
double cramer_distance(const CategoricalDistribution& d1, const CategoricalDistribution& d2);
/// sum_i |F1_i - F2_i| w.
double wasserstein1_distance(const CategoricalDistribution& d1, const CategoricalDistribution& d2);

enum class Metric { Cramer, Wasserstein1 };
std::string to_string(Metric m);
Metric metric_from_string(const std::string& name);

/// sup over (s, a) of the metric between two tables.
double sup_distance(const ReturnDistributionTable& z1, const ReturnDistributionTable& z2, Metric metric);

struct ContractionSample {
    int pair = 0;
    double ratio = 0.0;
};

struct ContractionReport {
    Metric metric = Metric::Cramer;
    double gamma = 0.0;
    std::uint64_t seed = 0;
    double max_ratio = 0.0;
    /// gamma^{1/2} for Cramer, gamma for Wasserstein-1.
    double rate = 0.0;
    double slack = 0.0;
    int skipped = 0;
    std::vector<ContractionSample> samples;

    bool pass() const { return max_ratio <= rate + slack; }
};

inline constexpr double kProjectionSlack = 0.05;

/// Max over random table pairs of sup d(T Z1, T Z2) / sup d(Z1, Z2).
ContractionReport contraction_probe(const TabularMDP& mdp, const Policy& policy, const SupportGrid& grid,
                                    Metric metric, int n_pairs, std::uint64_t seed);

struct ExactReturnResult {
    ReturnDistributionTable table;
    /// gamma^H max|r| / (1 - gamma): bound on the mean error from truncation.
    double truncation_bound = 0.0;
    std::uint64_t paths = 0;
};

inline constexpr std::uint64_t kMaxOraclePaths = 10'000'000;

/// Brute-force enumeration of every H-step trajectory from every (s, a),
/// projected onto `grid`. Throws SizeError if more than kMaxOraclePaths paths.
ExactReturnResult exact_return_distribution(const TabularMDP& mdp, const Policy& policy, const SupportGrid& grid,
                                            int horizon);

/// Number of H-step trajectories exact_return_distribution would enumerate.
std::uint64_t count_return_paths(const TabularMDP& mdp, const Policy& policy, int horizon);

/// Error in the mean introduced by projecting atoms from [lo, hi] onto grid:
/// zero when the range lies inside [m_0, m_{k-1}], otherwise the clip distance.
double projection_mean_error(const SupportGrid& grid, double lo, double hi);

/// Q-iteration for the optimal action values until within tol of the fixed
/// point in sup norm.
ValueTable classical_value_iteration(const TabularMDP& mdp, double tol);

/// Q^pi by iterating the expected Bellman operator to within tol.
ValueTable policy_evaluation(const TabularMDP& mdp, const Policy& policy, double tol);

} // namespace fzilab
