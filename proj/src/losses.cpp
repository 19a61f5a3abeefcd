#include "fzilab/losses.hpp"

#include <algorithm>
#include <cmath>

#include "fzilab/rng.hpp"

namespace fzilab {

TargetHistogram::TargetHistogram(SupportGrid grid, Eigen::VectorXd p, double tol) : grid_(grid), p_(std::move(p)) {
    if (p_.size() != grid_.bins()) throw ShapeError("target histogram length does not match grid");
    require_probability_vector({p_.data(), static_cast<std::size_t>(p_.size())}, tol, "target histogram");
}

namespace kernel {

double categorical_loss(const Eigen::MatrixXd& theta, const Eigen::VectorXd& x, const Eigen::VectorXd& p) {
    const Eigen::VectorXd logf = log_softmax(theta * x);
    double loss = 0.0;
    for (Eigen::Index i = 0; i < p.size(); ++i) {
        if (p[i] != 0.0) loss -= p[i] * logf[i];
    }
    return loss;
}

Eigen::MatrixXd categorical_gradient(const Eigen::MatrixXd& theta, const Eigen::VectorXd& x,
                                     const Eigen::VectorXd& p) {
    const Eigen::VectorXd f = softmax(theta * x);
    return (f - p) * x.transpose();
}

} // namespace kernel

namespace {

void check_target(const TargetHistogram& target, const CategoricalModel& model) {
    if (!(target.grid() == model.grid())) throw ShapeError("target grid does not match model grid");
}

void check_indices(const CategoricalModel& model, int s, int a) {
    if (s < 0 || s >= model.states()) throw ParameterError("state id out of range");
    if (a < 0 || a >= model.actions()) throw ParameterError("action id out of range");
}

} // namespace

double categorical_loss(const TargetHistogram& target, const CategoricalModel& model, int s, int a) {
    check_target(target, model);
    check_indices(model, s, a);
    return kernel::categorical_loss(model.theta(a), model.features()(s), target.p());
}

Eigen::MatrixXd categorical_loss_gradient(const TargetHistogram& target, const CategoricalModel& model, int s,
                                          int a) {
    check_target(target, model);
    check_indices(model, s, a);
    return kernel::categorical_gradient(model.theta(a), model.features()(s), target.p());
}

Eigen::VectorXd categorical_loss_state_gradient(const TargetHistogram& target, const CategoricalModel& model,
                                                int s, int a) {
    check_target(target, model);
    const Eigen::VectorXd f = softmax_probs(model, s, a);
    return model.theta(a).transpose() * (f - target.p());
}

double classical_squared_loss(double y, const CategoricalModel& model, int s, int a) {
    const double r = y - model_expectation(model, s, a);
    return r * r;
}

Eigen::MatrixXd classical_squared_loss_gradient(double y, const CategoricalModel& model, int s, int a) {
    const Eigen::VectorXd f = softmax_probs(model, s, a);
    const Eigen::VectorXd m = model.grid().midpoints();
    const double q = m.dot(f);
    // dQ/dtheta_i = f_i (m_i - Q) x
    const Eigen::VectorXd dq = f.array() * (m.array() - q);
    return (-2.0 * (y - q)) * dq * model.features()(s).transpose();
}

Eigen::VectorXd classical_squared_loss_state_gradient(double y, const CategoricalModel& model, int s, int a) {
    const Eigen::VectorXd f = softmax_probs(model, s, a);
    const Eigen::VectorXd m = model.grid().midpoints();
    const double q = m.dot(f);
    const Eigen::VectorXd dq = f.array() * (m.array() - q);
    return (-2.0 * (y - q)) * (model.theta(a).transpose() * dq);
}

double row_norm_sum(const Eigen::MatrixXd& g) { return g.rowwise().norm().sum(); }

// ---------------------------------------------------------------------------

namespace {

struct ProbeInstance {
    Eigen::VectorXd p;
    Eigen::VectorXd x;
};

void check_shape(const ProbeShape& shape) {
    if (shape.k < 1 || shape.d < 1) throw ParameterError("probe shape needs k >= 1 and d >= 1");
    if (!(shape.norm_bound > 0.0)) throw ParameterError("probe norm bound must be positive");
}

Eigen::MatrixXd random_theta(const ProbeShape& shape, Rng& rng) {
    Eigen::MatrixXd theta(shape.k, shape.d);
    for (Eigen::Index i = 0; i < theta.rows(); ++i) {
        for (Eigen::Index j = 0; j < theta.cols(); ++j) theta(i, j) = shape.theta_scale * rng.normal();
    }
    return theta;
}

// Targets mix three regimes: uniform on the simplex, one-hot, and sparse
// two-bin splits, so that extreme (p - f) gaps are exercised.
ProbeInstance random_instance(const ProbeShape& shape, Rng& rng) {
    ProbeInstance inst;
    inst.p = Eigen::VectorXd::Zero(shape.k);
    const double kind = rng.uniform();
    if (kind < 0.6) {
        const auto w = rng.simplex(shape.k);
        for (int i = 0; i < shape.k; ++i) inst.p[i] = w[i];
    } else if (kind < 0.8) {
        inst.p[static_cast<Eigen::Index>(rng.index(shape.k))] = 1.0;
    } else {
        const double u = rng.uniform();
        inst.p[static_cast<Eigen::Index>(rng.index(shape.k))] += u;
        inst.p[static_cast<Eigen::Index>(rng.index(shape.k))] += 1.0 - u;
    }
    inst.x.resize(shape.d);
    for (int j = 0; j < shape.d; ++j) inst.x[j] = rng.normal();
    const double n = inst.x.norm();
    // Half of the draws sit exactly on the norm bound, the rest inside the ball.
    const double radius = rng.uniform() < 0.5 ? shape.norm_bound : shape.norm_bound * rng.uniform();
    if (n > 0.0) inst.x *= radius / n;
    return inst;
}

LossProbeReport blank_report(const ProbeShape& shape) {
    LossProbeReport r;
    r.k = shape.k;
    r.l = shape.norm_bound;
    r.lipschitz_bound = shape.k * shape.norm_bound;
    r.smoothness_bound = shape.k * shape.norm_bound * shape.norm_bound;
    return r;
}

} // namespace

LossProbeReport probe_lipschitz(const ProbeShape& shape, int n_samples, std::uint64_t seed) {
    check_shape(shape);
    if (n_samples < 1) throw ParameterError("probe needs at least one sample");
    LossProbeReport report = blank_report(shape);
    Rng rng(seed);
    for (int i = 0; i < n_samples; ++i) {
        const auto inst = random_instance(shape, rng);
        const Eigen::MatrixXd theta = random_theta(shape, rng);
        const double g = row_norm_sum(kernel::categorical_gradient(theta, inst.x, inst.p));
        report.max_grad_norm = std::max(report.max_grad_norm, g);
    }
    report.samples = n_samples;
    return report;
}

LossProbeReport probe_smoothness(const ProbeShape& shape, int n_pairs, std::uint64_t seed, double pair_spacing) {
    check_shape(shape);
    if (n_pairs < 1) throw ParameterError("probe needs at least one pair");
    LossProbeReport report = blank_report(shape);
    Rng rng(seed);
    for (int i = 0; i < n_pairs; ++i) {
        const auto inst = random_instance(shape, rng);
        const Eigen::MatrixXd mu = random_theta(shape, rng);
        Eigen::MatrixXd nu;
        if (pair_spacing > 0.0) {
            Eigen::MatrixXd dir = random_theta(ProbeShape{shape.k, shape.d, shape.norm_bound, 1.0}, rng);
            nu = mu + pair_spacing * dir / dir.norm();
        } else {
            nu = random_theta(shape, rng);
        }
        const double dist = (mu - nu).norm();
        if (dist == 0.0) {
            ++report.skipped_pairs;
            continue;
        }
        const Eigen::MatrixXd diff =
            kernel::categorical_gradient(mu, inst.x, inst.p) - kernel::categorical_gradient(nu, inst.x, inst.p);
        report.max_curvature_ratio = std::max(report.max_curvature_ratio, row_norm_sum(diff) / dist);
    }
    report.samples = n_pairs;
    return report;
}

int probe_convexity(const ProbeShape& shape, int n_pairs, std::uint64_t seed) {
    check_shape(shape);
    if (n_pairs < 1) throw ParameterError("probe needs at least one pair");
    Rng rng(seed);
    int violations = 0;
    for (int i = 0; i < n_pairs; ++i) {
        const auto inst = random_instance(shape, rng);
        const Eigen::MatrixXd mu = random_theta(shape, rng);
        const Eigen::MatrixXd nu = random_theta(shape, rng);
        const double mid = kernel::categorical_loss(0.5 * (mu + nu), inst.x, inst.p);
        const double avg =
            0.5 * (kernel::categorical_loss(mu, inst.x, inst.p) + kernel::categorical_loss(nu, inst.x, inst.p));
        if (mid > avg + kConvexityTol) ++violations;
    }
    return violations;
}

} // namespace fzilab
