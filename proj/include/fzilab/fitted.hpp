#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "fzilab/bellman.hpp"
#include "fzilab/core.hpp"
#include "fzilab/decomposition.hpp"
#include "fzilab/losses.hpp"
#include "fzilab/model.hpp"

namespace fzilab {

struct TraceRecord {
    std::int64_t step = 0;
    double loss = 0.0;
    double grad_norm_theta = 0.0;
    double grad_norm_state = 0.0;
    /// Running mean of ||grad G(theta_t)||^2 over the steps so far.
    double avg_sq_grad = 0.0;
};

struct ExperimentTrace {
    std::string label;
    std::vector<TraceRecord> records;

    std::int64_t next_step() const { return records.empty() ? 0 : records.back().step + 1; }
};

/// Thrown when SGD meets a non-finite loss or gradient; carries the trace so far.
class SgdAborted : public NumericError {
public:
    SgdAborted(const std::string& what, ExperimentTrace partial) : NumericError(what), partial_(std::move(partial)) {}
    const ExperimentTrace& partial() const { return partial_; }

private:
    ExperimentTrace partial_;
};

struct SgdConfig {
    /// One entry means a constant step; otherwise steps[t] for t < size().
    std::vector<double> steps{0.1};
    std::int64_t max_steps = 1000;
    std::uint64_t seed = 0;

    double step(std::int64_t t) const;
    void validate() const;
};

struct CategoricalSample {
    int s = 0;
    int a = 0;
    Eigen::VectorXd p;
};

struct ScalarSample {
    int s = 0;
    int a = 0;
    double y = 0.0;
};

struct SgdOptions {
    /// Append one record per step; when off the loop skips all trace work.
    bool record_trace = true;
    /// Index of the first step, so that chained runs share one step axis.
    std::int64_t start_step = 0;
};

struct SgdResult {
    CategoricalModel model;
    ExperimentTrace trace;
};

/// Plain SGD on the categorical loss, one uniformly drawn sample per step.
SgdResult run_sgd(CategoricalModel model, const std::vector<CategoricalSample>& data, const SgdConfig& config,
                  const SgdOptions& options = {});
/// Same on the squared loss against scalar targets.
SgdResult run_sgd(CategoricalModel model, const std::vector<ScalarSample>& data, const SgdConfig& config,
                  const SgdOptions& options = {});

enum class FittedMode { FQI, FZI };

struct FittedConfig {
    int n_samples = 64;
    /// 0 refreshes the frozen model once per outer iteration; otherwise every
    /// target_freeze_period SGD steps within it.
    int target_freeze_period = 0;
    int outer_iters = 10;

    void validate() const;
};

struct FittedResult {
    CategoricalModel model;
    ExperimentTrace trace;
};

/// y = r + gamma max_a Q(s', a) under the frozen model.
double fqi_target(const CategoricalModel& frozen, double gamma, double r, int s_next);
/// Projection of r + gamma Z(s', greedy(s')) under the frozen model.
Eigen::VectorXd fzi_target(const CategoricalModel& frozen, double gamma, double r, int s_next);
/// Exact one-step target: fzi_target averaged over the reward and transition law.
TargetHistogram bellman_target(const CategoricalModel& frozen, const TabularMDP& mdp, int s, int a);

FittedResult neural_fqi(const TabularMDP& mdp, const FeatureMap& features, const SupportGrid& grid,
                        const FittedConfig& fitted, const SgdConfig& sgd,
                        std::optional<CategoricalModel> init = std::nullopt);
FittedResult neural_fzi(const TabularMDP& mdp, const FeatureMap& features, const SupportGrid& grid,
                        const FittedConfig& fitted, const SgdConfig& sgd,
                        std::optional<CategoricalModel> init = std::nullopt);

/// n transitions with (s, a) uniform and categorical targets from `frozen`.
std::vector<CategoricalSample> draw_categorical_samples(const TabularMDP& mdp, const CategoricalModel& frozen,
                                                        int n, Rng& rng);

struct StabilityConfig {
    int n = 64;
    std::int64_t steps = 500;
    double step_size = 0.4;
    int seeds = 20;
    int held_out = 64;
    std::uint64_t seed = 0;
};

struct StabilityResult {
    int k = 0;
    double l = 0.0;
    std::int64_t steps = 0;
    int n = 0;
    double empirical_sup = 0.0;
    double theoretical_bound = 0.0;
    bool pass = false;
    /// Mean over seeds of |L_T - L'_T| for each held-out point.
    std::vector<double> per_point;
    /// How many seeds drew the replaced index at least once.
    int seeds_touching_replacement = 0;
};

/// 2 / (k l^2), the largest step the stability bound allows.
double max_stable_step(const SupportGrid& grid, const FeatureMap& features);

/// Coupled SGD on D and D' (one replaced triple per seed) with shared sample
/// indices; throws ConfigError if step_size exceeds max_stable_step.
StabilityResult stability_experiment(const TabularMDP& mdp, const FeatureMap& features, const SupportGrid& grid,
                                     const StabilityConfig& config);

/// Same with an explicit dataset, held-out set and replacement pool, which
/// makes the D = D' case directly testable.
StabilityResult stability_experiment(const CategoricalModel& init, const std::vector<CategoricalSample>& data,
                                     const std::vector<CategoricalSample>& held_out,
                                     const std::vector<CategoricalSample>& replacements, const StabilityConfig& config);

enum class StepRule {
    /// lambda = 1 / (k l^2) for every target kind.
    Fixed,
    /// Expectation targets use min(1/(k l^2), tau^2 / (2 k l^2 sigma^2)).
    TauScaled,
};

struct AccelerationConfig {
    std::vector<double> taus{0.3, 0.1, 0.03, 0.01};
    std::vector<TargetKind> kinds{TargetKind::Expectation, TargetKind::Full};
    std::vector<std::uint64_t> seeds{1, 2, 3};
    std::int64_t step_cap = 1'000'000;
    StepRule step_rule = StepRule::TauScaled;
    /// Shared eps; negative selects the default pilot rule.
    double epsilon = -1.0;
    int workers = 1;
};

struct StationarityResult {
    double tau = 0.0;
    TargetKind kind = TargetKind::Full;
    std::uint64_t seed = 0;
    std::int64_t steps = 0;
    double avg_sq_grad = 0.0;
    bool reached = false;
    std::string regime = "small";
    double step_size = 0.0;
    /// G(theta_0) - min_t G(theta_t) over the run.
    double objective_gap = 0.0;
    /// kappa and sigma^2 at the final iterate (exact over the cells).
    double kappa = 0.0;
    double sigma2 = 0.0;
};

struct SlopeFit {
    double slope = 0.0;
    double intercept = 0.0;
    int points = 0;
};

struct AccelerationResult {
    std::vector<StationarityResult> cells;
    std::map<TargetKind, SlopeFit> slopes;
    double epsilon = 1.0;
    double sigma2_init = 0.0;
    double kappa_init = 0.0;
};

/// Runs every (seed, tau, kind) cell until the running average of
/// ||grad G(theta_t)||^2 drops to tau^2 or the step cap is hit.
AccelerationResult acceleration_experiment(const VarianceProblem& problem, const AccelerationConfig& config);

/// Least-squares fit of mean log T against log(1/tau), using taus where every
/// seed reached tau.
SlopeFit fit_complexity_slope(const std::vector<StationarityResult>& cells, TargetKind kind);

/// Variance problem with one cell per (s, a), uniform weights and exact
/// one-step Bellman targets from `frozen`.
VarianceProblem make_bellman_problem(const CategoricalModel& frozen, const TabularMDP& mdp);

/// Cells on every state with targets softmax(teacher x(s)); learner starts at zero.
VarianceProblem make_teacher_problem(const CategoricalModel& teacher, const std::vector<double>& weights);

enum class GradientWhich { State, Parameter };

/// Norms of dL/dx(s) or dL/dtheta at every (s, a) against one-step targets
/// from the model itself; rows are appended to `trace` when given.
std::vector<double> gradient_norm_traces(const CategoricalModel& model, const TabularMDP& mdp, GradientWhich which,
                                         FittedMode mode, ExperimentTrace* trace = nullptr);

} // namespace fzilab
