#pragma once

#include <cstdint>

#include <Eigen/Dense>

#include "fzilab/core.hpp"
#include "fzilab/model.hpp"

namespace fzilab {

/// Target probability per bin, p_i^{s,a}.
class TargetHistogram {
public:
    TargetHistogram(SupportGrid grid, Eigen::VectorXd p, double tol = kArithTol);
    explicit TargetHistogram(const CategoricalDistribution& d) : TargetHistogram(d.grid(), d.mass()) {}

    const SupportGrid& grid() const { return grid_; }
    const Eigen::VectorXd& p() const { return p_; }

private:
    SupportGrid grid_;
    Eigen::VectorXd p_;
};

/// Cross-entropy -sum_i p_i log f_i(x) with f = softmax(theta x); p_i = 0 terms
/// contribute nothing.
double categorical_loss(const TargetHistogram& target, const CategoricalModel& model, int s, int a);

/// k x d matrix whose row i is (f_i - p_i) x.
Eigen::MatrixXd categorical_loss_gradient(const TargetHistogram& target, const CategoricalModel& model, int s,
                                          int a);

/// d-vector theta^T (f - p): derivative of the loss w.r.t. the feature x(s).
Eigen::VectorXd categorical_loss_state_gradient(const TargetHistogram& target, const CategoricalModel& model,
                                                int s, int a);

/// (y - Q)^2 with Q = model_expectation.
double classical_squared_loss(double y, const CategoricalModel& model, int s, int a);
/// Row i is -2 (y - Q) f_i (m_i - Q) x.
Eigen::MatrixXd classical_squared_loss_gradient(double y, const CategoricalModel& model, int s, int a);
Eigen::VectorXd classical_squared_loss_state_gradient(double y, const CategoricalModel& model, int s, int a);

/// sum_i ||row_i||, the aggregation under which the k*l gradient bound holds.
double row_norm_sum(const Eigen::MatrixXd& g);

/// Shape-level kernels used by the probes and the SGD loops. theta is k x d.
namespace kernel {
double categorical_loss(const Eigen::MatrixXd& theta, const Eigen::VectorXd& x, const Eigen::VectorXd& p);
Eigen::MatrixXd categorical_gradient(const Eigen::MatrixXd& theta, const Eigen::VectorXd& x,
                                     const Eigen::VectorXd& p);
} // namespace kernel

/// Shape of the random instances drawn by the probes.
struct ProbeShape {
    int k = 5;
    int d = 3;
    double norm_bound = 1.0;
    /// Standard deviation of the sampled theta entries.
    double theta_scale = 1.0;
};

struct LossProbeReport {
    int k = 0;
    double l = 0.0;
    int samples = 0;
    double max_grad_norm = 0.0;
    double lipschitz_bound = 0.0;  // k * l
    double max_curvature_ratio = 0.0;
    double smoothness_bound = 0.0; // k * l^2
    int convexity_violations = 0;
    int skipped_pairs = 0;

    bool operator==(const LossProbeReport&) const = default;
};

/// Max over random (p, theta, x) of row_norm_sum of the gradient.
LossProbeReport probe_lipschitz(const ProbeShape& shape, int n_samples, std::uint64_t seed);

/// Max over random parameter pairs of row_norm_sum(grad(mu) - grad(nu)) / ||mu - nu||_F.
/// With pair_spacing > 0 the second point is mu + pair_spacing * (unit direction);
/// otherwise both points are drawn independently. Identical pairs are skipped.
LossProbeReport probe_smoothness(const ProbeShape& shape, int n_pairs, std::uint64_t seed,
                                 double pair_spacing = 0.0);

/// Counts midpoint-convexity violations L((mu+nu)/2) > (L(mu)+L(nu))/2 + 1e-9.
int probe_convexity(const ProbeShape& shape, int n_pairs, std::uint64_t seed);

inline constexpr double kConvexityTol = 1e-9;

} // namespace fzilab
