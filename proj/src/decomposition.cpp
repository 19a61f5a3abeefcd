#include "fzilab/decomposition.hpp"

#include <algorithm>
#include <cmath>

#include "fzilab/rng.hpp"

namespace fzilab {

int mean_bin(const TargetHistogram& p) {
    const double mean = p.grid().midpoints().dot(p.p());
    return p.grid().bin_of(mean);
}

double minimal_epsilon(const TargetHistogram& p) { return std::max(0.0, 1.0 - p.p()[mean_bin(p)]); }

TargetHistogram expectation_target(const TargetHistogram& p) {
    Eigen::VectorXd e = Eigen::VectorXd::Zero(p.grid().bins());
    e[mean_bin(p)] = 1.0;
    return {p.grid(), e};
}

DecomposedTarget decompose(const TargetHistogram& p, double epsilon) {
    if (!(epsilon > 0.0 && epsilon <= 1.0)) throw ParameterError("epsilon must lie in (0, 1]");
    const int b = mean_bin(p);
    const double eps_min = minimal_epsilon(p);
    if (epsilon < eps_min - kProbTol) {
        throw InfeasibleError("epsilon " + std::to_string(epsilon) + " is below minimal_epsilon " +
                              std::to_string(eps_min));
    }
    Eigen::VectorXd mu = p.p() / epsilon;
    // Equal to (p_b - (1 - eps)) / eps, but stays normalized as eps -> 0.
    mu[b] = 0.0;
    mu[b] = std::max(0.0, 1.0 - mu.sum());
    return {p, b, epsilon, TargetHistogram(p.grid(), mu, kArithTol)};
}

std::string to_string(TargetKind kind) {
    switch (kind) {
    case TargetKind::Expectation: return "expectation";
    case TargetKind::Mu: return "mu";
    case TargetKind::Full: return "full";
    }
    return "full";
}

TargetKind target_kind_from_string(const std::string& name) {
    if (name == "expectation") return TargetKind::Expectation;
    if (name == "mu") return TargetKind::Mu;
    if (name == "full") return TargetKind::Full;
    throw ParameterError("unknown target kind '" + name + "'");
}

void validate(const VarianceProblem& problem) {
    if (problem.cells.empty()) throw ParameterError("variance problem needs at least one cell");
    std::vector<double> w;
    for (const auto& c : problem.cells) {
        if (c.s < 0 || c.s >= problem.model.states() || c.a < 0 || c.a >= problem.model.actions()) {
            throw ParameterError("variance cell index out of range");
        }
        if (!(c.target.grid() == problem.model.grid())) throw ShapeError("variance cell target grid mismatch");
        w.push_back(c.weight);
    }
    require_probability_vector(w, kArithTol, "sampling weights");
}

std::vector<Eigen::MatrixXd> full_gradient(const VarianceProblem& problem) {
    validate(problem);
    const auto& model = problem.model;
    std::vector<Eigen::MatrixXd> g(model.actions(), Eigen::MatrixXd::Zero(model.grid().bins(), model.features().dim()));
    for (const auto& c : problem.cells) {
        if (c.weight == 0.0) continue;
        g[c.a] += c.weight * categorical_loss_gradient(c.target, model, c.s, c.a);
    }
    return g;
}

namespace {

// Squared distance between a single-action gradient and the full mean, over all
// action blocks (blocks other than a contribute their mean only).
double squared_deviation(const Eigen::MatrixXd& g, int a, const std::vector<Eigen::MatrixXd>& mean,
                         const std::vector<double>& block_norms, double total_norm) {
    return total_norm - block_norms[a] + (g - mean[a]).squaredNorm();
}

struct CellTerms {
    double expectation = 0.0;
    double mu = 0.0;
    double full = 0.0;
    double mixture = 0.0;
};

struct Moments {
    double mean = 0.0;
    double se = 0.0;
};

Moments sample_moments(const std::vector<double>& xs) {
    const double n = static_cast<double>(xs.size());
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= n;
    double ss = 0.0;
    for (double x : xs) ss += (x - mean) * (x - mean);
    const double var = xs.size() > 1 ? ss / (n - 1.0) : 0.0;
    return {mean, std::sqrt(var / n)};
}

std::vector<double> cell_epsilons(const VarianceProblem& problem, const std::vector<double>& eps) {
    if (eps.size() == 1) return std::vector<double>(problem.cells.size(), eps[0]);
    if (eps.size() != problem.cells.size()) throw ShapeError("epsilon list must have one entry or one per cell");
    return eps;
}

} // namespace

VarianceEstimate estimate_gradient_variance(const VarianceProblem& problem, const VarianceOptions& options) {
    validate(problem);
    if (!options.exact && options.n_samples < 2) throw ParameterError("variance estimate needs at least 2 samples");
    const auto& model = problem.model;
    const auto eps = cell_epsilons(problem, options.epsilon);
    const auto mean = full_gradient(problem);
    std::vector<double> block_norms;
    double total_norm = 0.0;
    for (const auto& m : mean) {
        block_norms.push_back(m.squaredNorm());
        total_norm += block_norms.back();
    }

    std::vector<CellTerms> terms;
    terms.reserve(problem.cells.size());
    for (std::size_t i = 0; i < problem.cells.size(); ++i) {
        const auto& c = problem.cells[i];
        const auto split = decompose(c.target, eps[i]);
        const auto e = expectation_target(c.target);
        CellTerms t;
        t.expectation = squared_deviation(categorical_loss_gradient(e, model, c.s, c.a), c.a, mean, block_norms, total_norm);
        t.mu = squared_deviation(categorical_loss_gradient(split.mu, model, c.s, c.a), c.a, mean, block_norms, total_norm);
        t.full = squared_deviation(categorical_loss_gradient(c.target, model, c.s, c.a), c.a, mean, block_norms, total_norm);
        const double w = 1.0 - eps[i];
        t.mixture = w * w * t.expectation + eps[i] * eps[i] * t.mu;
        terms.push_back(t);
    }

    VarianceEstimate est;
    double eps_mean = 0.0;
    double jensen = 0.0;
    if (options.exact) {
        for (std::size_t i = 0; i < terms.size(); ++i) {
            const double w = problem.cells[i].weight;
            est.sigma2 += w * terms[i].expectation;
            est.sigma_hat2 += w * terms[i].mu;
            est.full_variance += w * terms[i].full;
            est.mixture_bound += w * terms[i].mixture;
            jensen += w * ((1.0 - eps[i]) * terms[i].expectation + eps[i] * terms[i].mu);
            eps_mean += w * eps[i];
        }
        est.n_samples = 0;
    } else {
        std::vector<double> weights;
        for (const auto& c : problem.cells) weights.push_back(c.weight);
        Rng rng(options.seed);
        std::vector<double> xe, xm, xf, xgap, xj;
        for (int j = 0; j < options.n_samples; ++j) {
            const std::size_t i = rng.categorical(weights);
            xe.push_back(terms[i].expectation);
            xm.push_back(terms[i].mu);
            xf.push_back(terms[i].full);
            xgap.push_back(terms[i].full - terms[i].mixture);
            xj.push_back((1.0 - eps[i]) * terms[i].expectation + eps[i] * terms[i].mu);
            eps_mean += eps[i];
        }
        eps_mean /= options.n_samples;
        const auto me = sample_moments(xe);
        const auto mm = sample_moments(xm);
        const auto mf = sample_moments(xf);
        const auto mg = sample_moments(xgap);
        est.sigma2 = me.mean;
        est.sigma2_se = me.se;
        est.sigma_hat2 = mm.mean;
        est.sigma_hat2_se = mm.se;
        est.full_variance = mf.mean;
        est.full_variance_se = mf.se;
        est.mixture_bound = mf.mean - mg.mean;
        est.bound_gap_se = mg.se;
        jensen = sample_moments(xj).mean;
        est.n_samples = options.n_samples;
    }
    est.epsilon = eps_mean;
    est.jensen_bound = jensen;
    if (est.sigma2 > 0.0) {
        est.kappa = est.sigma_hat2 / est.sigma2;
        est.kappa_defined = true;
    }
    return est;
}

std::pair<double, double> estimate_gradient_variance(TargetKind kind, const VarianceProblem& problem,
                                                     const VarianceOptions& options) {
    const auto est = estimate_gradient_variance(problem, options);
    switch (kind) {
    case TargetKind::Expectation: return {est.sigma2, est.sigma2_se};
    case TargetKind::Full: return {est.full_variance, est.full_variance_se};
    case TargetKind::Mu:
        if (!est.kappa_defined) throw NumericError("sigma^2 is zero, so kappa is undefined");
        return {est.sigma_hat2, est.sigma_hat2_se};
    }
    return {0.0, 0.0};
}

bool check_mixture_bound(const VarianceEstimate& estimate, double full_variance) {
    const double tol = kBoundStandardErrors * estimate.bound_gap_se + kArithTol * std::abs(estimate.mixture_bound);
    return full_variance <= estimate.mixture_bound + tol;
}

double feasible_epsilon(const VarianceProblem& problem) {
    double e = 0.0;
    for (const auto& c : problem.cells) e = std::max(e, minimal_epsilon(c.target));
    return e;
}

double default_epsilon(const VarianceProblem& problem, const VarianceOptions& pilot) {
    VarianceOptions opts = pilot;
    opts.epsilon = {1.0};
    const auto est = estimate_gradient_variance(problem, opts);
    if (!est.kappa_defined) throw NumericError("pilot sigma^2 is zero, so kappa is undefined");
    const double eps = std::max(feasible_epsilon(problem), 1.0 / (1.0 + est.kappa));
    return std::clamp(eps, kProbTol, 1.0);
}

} // namespace fzilab
