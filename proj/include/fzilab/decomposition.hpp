#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "fzilab/losses.hpp"
#include "fzilab/model.hpp"

namespace fzilab {

/// p = (1 - eps) e_b + eps mu with e_b one-hot at the mean bin.
struct DecomposedTarget {
    TargetHistogram full;
    int mean_bin = 0;
    double epsilon = 1.0;
    TargetHistogram mu;
};

/// Bin (l_i, l_{i+1}] containing sum_i m_i p_i.
int mean_bin(const TargetHistogram& p);

/// 1 - p[mean_bin]: the smallest eps leaving mu a valid distribution.
double minimal_epsilon(const TargetHistogram& p);

/// Throws InfeasibleError if eps < minimal_epsilon(p).
DecomposedTarget decompose(const TargetHistogram& p, double epsilon);

/// One-hot target at the mean bin.
TargetHistogram expectation_target(const TargetHistogram& p);

enum class TargetKind { Expectation, Mu, Full };
std::string to_string(TargetKind kind);
TargetKind target_kind_from_string(const std::string& name);

/// Finite state-action space with sampling weights rho and a full target per cell.
struct VarianceCell {
    int s = 0;
    int a = 0;
    double weight = 0.0;
    TargetHistogram target;
};

struct VarianceProblem {
    CategoricalModel model;
    std::vector<VarianceCell> cells;
};

/// Validates weights (a probability vector) and index ranges.
void validate(const VarianceProblem& problem);

/// Exact rho-weighted average of full-target gradients, one k x d block per action.
std::vector<Eigen::MatrixXd> full_gradient(const VarianceProblem& problem);

struct VarianceEstimate {
    double sigma2 = 0.0;
    double sigma_hat2 = 0.0;
    double kappa = 0.0;
    /// Variance of full-target gradients around the same exact mean.
    double full_variance = 0.0;
    int n_samples = 0;
    /// Mean of eps (over cells, rho-weighted) used for mu.
    double epsilon = 1.0;
    /// E[(1 - eps)^2 ||g_exp - dG||^2 + eps^2 ||g_mu - dG||^2]; equals
    /// (1 - eps)^2 sigma2 + eps^2 kappa sigma2 for a shared eps.
    double mixture_bound = 0.0;
    /// (1 - eps) sigma2 + eps kappa sigma2, which bounds full_variance by convexity.
    double jensen_bound = 0.0;
    double sigma2_se = 0.0;
    double sigma_hat2_se = 0.0;
    double full_variance_se = 0.0;
    /// Standard error of the paired difference full - mixture term.
    double bound_gap_se = 0.0;
    bool kappa_defined = false;
};

struct VarianceOptions {
    /// Per-cell eps in cell order; a single entry is shared by every cell.
    std::vector<double> epsilon{1.0};
    int n_samples = 1000;
    std::uint64_t seed = 0;
    /// Replace Monte-Carlo sampling with exact rho-weighted expectations.
    bool exact = false;
};

/// Joint estimate of sigma^2, sigma_hat^2 and the full-target variance from
/// the same cell draws (s, a) ~ rho. Squared norms are Frobenius.
VarianceEstimate estimate_gradient_variance(const VarianceProblem& problem, const VarianceOptions& options);

/// Variance for a single target kind; throws NumericError for TargetKind::Mu
/// when sigma^2 is zero (kappa undefined). Returns {value, standard error}.
std::pair<double, double> estimate_gradient_variance(TargetKind kind, const VarianceProblem& problem,
                                                     const VarianceOptions& options);

/// full_variance <= mixture bound + 3 standard errors.
bool check_mixture_bound(const VarianceEstimate& estimate, double full_variance);
inline constexpr double kBoundStandardErrors = 3.0;

/// Default eps rule: max(max_c minimal_epsilon(c), 1 / (1 + kappa_pilot)) with
/// the pilot kappa measured at eps = 1. Returns the shared eps.
double default_epsilon(const VarianceProblem& problem, const VarianceOptions& pilot);

/// max over cells of minimal_epsilon.
double feasible_epsilon(const VarianceProblem& problem);

} // namespace fzilab
