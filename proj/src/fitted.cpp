#include "fzilab/fitted.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <thread>

#include "fzilab/rng.hpp"

namespace fzilab {

double SgdConfig::step(std::int64_t t) const {
    if (steps.size() == 1) return steps[0];
    if (t < 0 || t >= static_cast<std::int64_t>(steps.size())) throw ParameterError("step schedule is too short");
    return steps[static_cast<std::size_t>(t)];
}

void SgdConfig::validate() const {
    if (steps.empty()) throw ParameterError("step schedule is empty");
    for (double s : steps) {
        if (!(s > 0.0) || !std::isfinite(s)) throw ParameterError("every step size must be positive and finite");
    }
    if (max_steps < 0) throw ParameterError("max_steps must be nonnegative");
    if (steps.size() > 1 && static_cast<std::int64_t>(steps.size()) < max_steps) {
        throw ParameterError("step schedule shorter than max_steps");
    }
}

void FittedConfig::validate() const {
    if (n_samples < 1) throw ParameterError("n_samples must be positive");
    if (outer_iters < 1) throw ParameterError("outer_iters must be positive");
    if (target_freeze_period < 0) throw ParameterError("target_freeze_period must be nonnegative");
}

namespace {

void check_model_indices(const CategoricalModel& model, int s, int a) {
    if (s < 0 || s >= model.states() || a < 0 || a >= model.actions()) {
        throw ParameterError("sample index out of range");
    }
}

double squared_total(const std::vector<Eigen::MatrixXd>& g) {
    double t = 0.0;
    for (const auto& m : g) t += m.squaredNorm();
    return t;
}

void zero_blocks(std::vector<Eigen::MatrixXd>& g) {
    for (auto& m : g) m.setZero();
}

/// Dataset collapsed to one entry per visited (s, a): both losses have
/// gradients linear in the target, so the empirical gradient only needs the
/// cell frequency and mean target.
template <class Target>
struct CellMean {
    int s = 0;
    int a = 0;
    double weight = 0.0;
    Target target;
};

std::vector<CellMean<Eigen::VectorXd>> cell_means(const std::vector<CategoricalSample>& data, int n_states) {
    std::vector<int> slot;
    std::vector<CellMean<Eigen::VectorXd>> out;
    for (const auto& d : data) {
        const std::size_t key = static_cast<std::size_t>(d.a) * n_states + d.s;
        if (slot.size() <= key) slot.resize(key + 1, -1);
        if (slot[key] < 0) {
            slot[key] = static_cast<int>(out.size());
            out.push_back({d.s, d.a, 0.0, Eigen::VectorXd::Zero(d.p.size())});
        }
        auto& c = out[slot[key]];
        c.weight += 1.0;
        c.target += d.p;
    }
    for (auto& c : out) {
        c.target /= c.weight;
        c.weight /= static_cast<double>(data.size());
    }
    return out;
}

std::vector<CellMean<double>> cell_means(const std::vector<ScalarSample>& data, int n_states) {
    std::vector<int> slot;
    std::vector<CellMean<double>> out;
    for (const auto& d : data) {
        const std::size_t key = static_cast<std::size_t>(d.a) * n_states + d.s;
        if (slot.size() <= key) slot.resize(key + 1, -1);
        if (slot[key] < 0) {
            slot[key] = static_cast<int>(out.size());
            out.push_back({d.s, d.a, 0.0, 0.0});
        }
        auto& c = out[slot[key]];
        c.weight += 1.0;
        c.target += d.y;
    }
    for (auto& c : out) {
        c.target /= c.weight;
        c.weight /= static_cast<double>(data.size());
    }
    return out;
}

} // namespace

SgdResult run_sgd(CategoricalModel model, const std::vector<CategoricalSample>& data, const SgdConfig& config,
                  const SgdOptions& options) {
    config.validate();
    if (data.empty()) throw ParameterError("SGD needs a nonempty dataset");
    const int k = model.grid().bins();
    for (const auto& d : data) {
        check_model_indices(model, d.s, d.a);
        if (d.p.size() != k) throw ShapeError("target length does not match the grid");
    }
    const auto& x = model.features();
    std::vector<Eigen::MatrixXd> theta = model.theta();
    std::vector<Eigen::MatrixXd> full(theta.size(), Eigen::MatrixXd::Zero(k, x.dim()));
    const auto cells = cell_means(data, model.states());
    ExperimentTrace trace;
    Rng rng(config.seed);
    double running = 0.0;
    for (std::int64_t t = 0; t < config.max_steps; ++t) {
        const auto& d = data[rng.index(data.size())];
        const Eigen::VectorXd& xs = x(d.s);
        auto& th = theta[d.a];
        const Eigen::VectorXd z = th * xs;
        if (!z.allFinite()) {
            throw SgdAborted("non-finite logits at step " + std::to_string(options.start_step + t), trace);
        }
        const Eigen::VectorXd f = softmax(z);
        const Eigen::VectorXd diff = f - d.p;
        if (options.record_trace) {
            TraceRecord rec;
            rec.step = options.start_step + t;
            rec.loss = kernel::categorical_loss(th, xs, d.p);
            rec.grad_norm_theta = diff.cwiseAbs().sum() * xs.norm();
            rec.grad_norm_state = (th.transpose() * diff).norm();
            zero_blocks(full);
            for (const auto& c : cells) {
                full[c.a] += c.weight * kernel::categorical_gradient(theta[c.a], x(c.s), c.target);
            }
            running += squared_total(full);
            rec.avg_sq_grad = running / static_cast<double>(t + 1);
            if (!std::isfinite(rec.loss) || !std::isfinite(rec.avg_sq_grad)) {
                throw SgdAborted("non-finite loss at step " + std::to_string(rec.step), trace);
            }
            trace.records.push_back(rec);
        }
        th.noalias() -= config.step(t) * diff * xs.transpose();
    }
    for (std::size_t a = 0; a < theta.size(); ++a) model.set_theta(static_cast<int>(a), theta[a]);
    return {std::move(model), std::move(trace)};
}

SgdResult run_sgd(CategoricalModel model, const std::vector<ScalarSample>& data, const SgdConfig& config,
                  const SgdOptions& options) {
    config.validate();
    if (data.empty()) throw ParameterError("SGD needs a nonempty dataset");
    for (const auto& d : data) {
        check_model_indices(model, d.s, d.a);
        if (!std::isfinite(d.y)) throw NumericError("non-finite scalar target");
    }
    const int k = model.grid().bins();
    const auto& x = model.features();
    const Eigen::VectorXd m = model.grid().midpoints();
    std::vector<Eigen::MatrixXd> theta = model.theta();
    std::vector<Eigen::MatrixXd> full(theta.size(), Eigen::MatrixXd::Zero(k, x.dim()));
    const auto cells = cell_means(data, model.states());
    // Row i of the gradient is coef * f_i (m_i - Q) x.
    auto dq = [&](const Eigen::MatrixXd& th, const Eigen::VectorXd& xs, double& q) {
        const Eigen::VectorXd f = softmax(th * xs);
        q = m.dot(f);
        return Eigen::VectorXd(f.array() * (m.array() - q));
    };
    ExperimentTrace trace;
    Rng rng(config.seed);
    double running = 0.0;
    for (std::int64_t t = 0; t < config.max_steps; ++t) {
        const auto& d = data[rng.index(data.size())];
        const Eigen::VectorXd& xs = x(d.s);
        auto& th = theta[d.a];
        if (!(th * xs).allFinite()) {
            throw SgdAborted("non-finite logits at step " + std::to_string(options.start_step + t), trace);
        }
        double q = 0.0;
        const Eigen::VectorXd v = dq(th, xs, q);
        const double coef = -2.0 * (d.y - q);
        if (options.record_trace) {
            TraceRecord rec;
            rec.step = options.start_step + t;
            rec.loss = (d.y - q) * (d.y - q);
            rec.grad_norm_theta = std::abs(coef) * v.cwiseAbs().sum() * xs.norm();
            rec.grad_norm_state = std::abs(coef) * (th.transpose() * v).norm();
            zero_blocks(full);
            for (const auto& c : cells) {
                double qc = 0.0;
                const Eigen::VectorXd vc = dq(theta[c.a], x(c.s), qc);
                full[c.a] += (c.weight * -2.0 * (c.target - qc)) * vc * x(c.s).transpose();
            }
            running += squared_total(full);
            rec.avg_sq_grad = running / static_cast<double>(t + 1);
            if (!std::isfinite(rec.loss) || !std::isfinite(rec.avg_sq_grad)) {
                throw SgdAborted("non-finite loss at step " + std::to_string(rec.step), trace);
            }
            trace.records.push_back(rec);
        }
        th.noalias() -= (config.step(t) * coef) * v * xs.transpose();
    }
    for (std::size_t a = 0; a < theta.size(); ++a) model.set_theta(static_cast<int>(a), theta[a]);
    return {std::move(model), std::move(trace)};
}

// ---------------------------------------------------------------------------

double fqi_target(const CategoricalModel& frozen, double gamma, double r, int s_next) {
    double best = model_expectation(frozen, s_next, 0);
    for (int a = 1; a < frozen.actions(); ++a) best = std::max(best, model_expectation(frozen, s_next, a));
    return r + gamma * best;
}

Eigen::VectorXd fzi_target(const CategoricalModel& frozen, double gamma, double r, int s_next) {
    const auto& grid = frozen.grid();
    const Eigen::VectorXd mids = grid.midpoints();
    const Eigen::VectorXd f = softmax_probs(frozen, s_next, greedy_action(frozen, s_next));
    Projector proj(grid);
    for (int j = 0; j < grid.bins(); ++j) proj.add(r + gamma * mids[j], f[j]);
    return proj.result().mass();
}

TargetHistogram bellman_target(const CategoricalModel& frozen, const TabularMDP& mdp, int s, int a) {
    const auto& grid = frozen.grid();
    const Eigen::VectorXd mids = grid.midpoints();
    Projector proj(grid);
    const auto& row = mdp.transition(s, a);
    for (int sn = 0; sn < mdp.states(); ++sn) {
        if (row[sn] == 0.0) continue;
        const Eigen::VectorXd f = softmax_probs(frozen, sn, greedy_action(frozen, sn));
        for (const auto& r : mdp.reward(s, a)) {
            if (r.prob == 0.0) continue;
            for (int j = 0; j < grid.bins(); ++j) proj.add(r.value + mdp.gamma() * mids[j], r.prob * row[sn] * f[j]);
        }
    }
    return TargetHistogram(proj.result());
}

namespace {

void check_fitted_inputs(const TabularMDP& mdp, const FeatureMap& features, const CategoricalModel& model) {
    if (features.states() != mdp.states()) throw ShapeError("feature map and MDP state counts differ");
    if (model.actions() != mdp.actions()) throw ShapeError("model and MDP action counts differ");
    if (!(model.features() == features)) throw ShapeError("initial model uses a different feature map");
}

std::vector<TransitionSample> draw_transitions(const TabularMDP& mdp, int n, Rng& rng) {
    std::vector<TransitionSample> out;
    out.reserve(n);
    for (int i = 0; i < n; ++i) {
        const int s = static_cast<int>(rng.index(mdp.states()));
        const int a = static_cast<int>(rng.index(mdp.actions()));
        out.push_back(sample_transition(mdp, s, a, rng));
    }
    return out;
}

template <typename Sample, typename MakeTargets>
FittedResult fitted_loop(const TabularMDP& mdp, const FeatureMap& features, const SupportGrid& grid,
                         const FittedConfig& fitted, const SgdConfig& sgd, std::optional<CategoricalModel> init,
                         const char* label, MakeTargets make_targets) {
    fitted.validate();
    sgd.validate();
    CategoricalModel model = init ? std::move(*init) : CategoricalModel(grid, features, mdp.actions());
    if (!(model.grid() == grid)) throw ShapeError("initial model uses a different grid");
    check_fitted_inputs(mdp, features, model);
    ExperimentTrace trace;
    trace.label = label;
    const std::int64_t chunk = fitted.target_freeze_period > 0 ? fitted.target_freeze_period : sgd.max_steps;
    for (int it = 0; it < fitted.outer_iters; ++it) {
        Rng rng(sub_seed(sgd.seed, 2 * static_cast<std::uint64_t>(it)));
        const auto transitions = draw_transitions(mdp, fitted.n_samples, rng);
        const std::uint64_t sgd_stream = sub_seed(sgd.seed, 2 * static_cast<std::uint64_t>(it) + 1);
        std::int64_t done = 0;
        for (std::uint64_t c = 0; done < sgd.max_steps || (sgd.max_steps == 0 && c == 0); ++c) {
            const CategoricalModel frozen = model;
            const std::vector<Sample> data = make_targets(frozen, transitions);
            SgdConfig cfg = sgd;
            cfg.max_steps = std::min(chunk, sgd.max_steps - done);
            cfg.seed = sub_seed(sgd_stream, c);
            if (sgd.steps.size() > 1) {
                cfg.steps.assign(sgd.steps.begin() + done, sgd.steps.begin() + done + cfg.max_steps);
            }
            SgdOptions opts;
            opts.start_step = trace.next_step();
            try {
                auto res = run_sgd(std::move(model), data, cfg, opts);
                model = std::move(res.model);
                trace.records.insert(trace.records.end(), res.trace.records.begin(), res.trace.records.end());
            } catch (const SgdAborted& e) {
                ExperimentTrace partial = trace;
                partial.records.insert(partial.records.end(), e.partial().records.begin(), e.partial().records.end());
                throw SgdAborted(e.what(), std::move(partial));
            }
            done += cfg.max_steps;
            if (cfg.max_steps == 0) break;
        }
    }
    return {std::move(model), std::move(trace)};
}

} // namespace

FittedResult neural_fqi(const TabularMDP& mdp, const FeatureMap& features, const SupportGrid& grid,
                        const FittedConfig& fitted, const SgdConfig& sgd, std::optional<CategoricalModel> init) {
    return fitted_loop<ScalarSample>(mdp, features, grid, fitted, sgd, std::move(init), "fqi",
                                     [&](const CategoricalModel& frozen, const std::vector<TransitionSample>& tr) {
                                         std::vector<ScalarSample> out;
                                         out.reserve(tr.size());
                                         for (const auto& t : tr) {
                                             out.push_back({t.s, t.a, fqi_target(frozen, mdp.gamma(), t.r, t.s_next)});
                                         }
                                         return out;
                                     });
}

FittedResult neural_fzi(const TabularMDP& mdp, const FeatureMap& features, const SupportGrid& grid,
                        const FittedConfig& fitted, const SgdConfig& sgd, std::optional<CategoricalModel> init) {
    return fitted_loop<CategoricalSample>(
        mdp, features, grid, fitted, sgd, std::move(init), "fzi",
        [&](const CategoricalModel& frozen, const std::vector<TransitionSample>& tr) {
            std::vector<CategoricalSample> out;
            out.reserve(tr.size());
            for (const auto& t : tr) out.push_back({t.s, t.a, fzi_target(frozen, mdp.gamma(), t.r, t.s_next)});
            return out;
        });
}

std::vector<CategoricalSample> draw_categorical_samples(const TabularMDP& mdp, const CategoricalModel& frozen,
                                                        int n, Rng& rng) {
    std::vector<CategoricalSample> out;
    for (const auto& t : draw_transitions(mdp, n, rng)) {
        out.push_back({t.s, t.a, fzi_target(frozen, mdp.gamma(), t.r, t.s_next)});
    }
    return out;
}

// ---------------------------------------------------------------------------

double max_stable_step(const SupportGrid& grid, const FeatureMap& features) {
    const double l = features.norm_bound();
    return 2.0 / (grid.bins() * l * l);
}

StabilityResult stability_experiment(const TabularMDP& mdp, const FeatureMap& features, const SupportGrid& grid,
                                     const StabilityConfig& config) {
    if (config.n < 2) throw ConfigError("stability experiment needs n >= 2");
    if (config.held_out < 1) throw ConfigError("stability experiment needs a held-out set");
    if (config.seeds < 1) throw ConfigError("stability experiment needs at least one seed");
    if (features.states() != mdp.states()) throw ShapeError("feature map and MDP state counts differ");
    // Targets come from the uniform (all-zero) model, held fixed for the whole experiment.
    const CategoricalModel frozen(grid, features, mdp.actions());
    Rng data_rng(sub_seed(config.seed, 0));
    const auto data = draw_categorical_samples(mdp, frozen, config.n, data_rng);
    Rng hold_rng(sub_seed(config.seed, 1));
    const auto held = draw_categorical_samples(mdp, frozen, config.held_out, hold_rng);
    Rng rep_rng(sub_seed(config.seed, 2));
    const auto replacements = draw_categorical_samples(mdp, frozen, config.seeds, rep_rng);
    return stability_experiment(frozen, data, held, replacements, config);
}

StabilityResult stability_experiment(const CategoricalModel& init, const std::vector<CategoricalSample>& data,
                                     const std::vector<CategoricalSample>& held_out,
                                     const std::vector<CategoricalSample>& replacements,
                                     const StabilityConfig& config) {
    const double limit = max_stable_step(init.grid(), init.features());
    if (!(config.step_size > 0.0) || config.step_size > limit * (1.0 + 1e-12)) {
        throw ConfigError("stability step size " + std::to_string(config.step_size) +
                          " violates lambda <= 2/(k l^2) = " + std::to_string(limit));
    }
    if (data.size() < 2) throw ConfigError("stability experiment needs n >= 2");
    if (held_out.empty()) throw ConfigError("stability experiment needs a held-out set");
    if (static_cast<int>(replacements.size()) < config.seeds) {
        throw ConfigError("need one replacement sample per seed");
    }
    const int n = static_cast<int>(data.size());
    StabilityResult result;
    result.k = init.grid().bins();
    result.l = init.features().norm_bound();
    result.steps = config.steps;
    result.n = n;
    result.theoretical_bound = 4.0 * result.k * static_cast<double>(config.steps) / n;
    result.per_point.assign(held_out.size(), 0.0);

    SgdConfig sgd;
    sgd.steps = {config.step_size};
    sgd.max_steps = config.steps;
    SgdOptions opts;
    opts.record_trace = false;
    for (int j = 0; j < config.seeds; ++j) {
        Rng pick(sub_seed(config.seed, 1000 + static_cast<std::uint64_t>(j)));
        const std::size_t replaced = pick.index(data.size());
        auto data2 = data;
        data2[replaced] = replacements[j];
        sgd.seed = sub_seed(config.seed, 2000 + static_cast<std::uint64_t>(j));

        Rng probe(sgd.seed);
        bool touched = false;
        for (std::int64_t t = 0; t < config.steps && !touched; ++t) touched = probe.index(data.size()) == replaced;
        if (touched) ++result.seeds_touching_replacement;

        const auto m1 = run_sgd(init, data, sgd, opts).model;
        const auto m2 = run_sgd(init, data2, sgd, opts).model;
        for (std::size_t h = 0; h < held_out.size(); ++h) {
            const auto& z = held_out[h];
            const auto& xs = init.features()(z.s);
            const double diff = std::abs(kernel::categorical_loss(m1.theta(z.a), xs, z.p) -
                                         kernel::categorical_loss(m2.theta(z.a), xs, z.p));
            result.per_point[h] += diff / config.seeds;
        }
    }
    result.empirical_sup = *std::max_element(result.per_point.begin(), result.per_point.end());
    result.pass = result.empirical_sup <= result.theoretical_bound;
    return result;
}

// ---------------------------------------------------------------------------

namespace {

// Flat per-cell data for the acceleration inner loop, which runs up to ~1e8
// steps and so avoids Eigen temporaries.
struct FlatCell {
    int a = 0;
    double w = 0.0;
    std::vector<double> x;
    std::vector<double> q;
};

struct CellJob {
    std::size_t seed_index = 0;
    std::size_t tau_index = 0;
    std::size_t kind_index = 0;
};

struct JobOutput {
    StationarityResult result;
    std::vector<double> theta;
};

std::vector<FlatCell> flatten(const VarianceProblem& problem, TargetKind kind, double epsilon) {
    std::vector<FlatCell> out;
    for (const auto& c : problem.cells) {
        FlatCell fc;
        fc.a = c.a;
        fc.w = c.weight;
        const auto& xs = problem.model.features()(c.s);
        fc.x.assign(xs.data(), xs.data() + xs.size());
        Eigen::VectorXd q;
        switch (kind) {
        case TargetKind::Full: q = c.target.p(); break;
        case TargetKind::Expectation: q = expectation_target(c.target).p(); break;
        case TargetKind::Mu: q = decompose(c.target, epsilon).mu.p(); break;
        }
        fc.q.assign(q.data(), q.data() + q.size());
        out.push_back(std::move(fc));
    }
    return out;
}

JobOutput run_stationarity(const VarianceProblem& problem, TargetKind kind, double tau, double step,
                           double epsilon, std::uint64_t seed, std::int64_t cap) {
    const int k = problem.model.grid().bins();
    const int d = problem.model.features().dim();
    const int n_a = problem.model.actions();
    const std::size_t block = static_cast<std::size_t>(k) * d;
    const auto cells = flatten(problem, kind, epsilon);
    std::vector<double> weights;
    for (const auto& c : cells) weights.push_back(c.w);

    std::vector<double> theta(block * n_a);
    for (int a = 0; a < n_a; ++a) {
        const auto& th = problem.model.theta(a);
        for (int i = 0; i < k; ++i) {
            for (int j = 0; j < d; ++j) theta[a * block + i * d + j] = th(i, j);
        }
    }
    std::vector<double> grad(block * n_a);
    std::vector<double> diffs(cells.size() * k);
    std::vector<double> z(k);
    const double tau2 = tau * tau;

    Rng rng(seed);
    double running = 0.0;
    double g0 = 0.0;
    double gmin = 0.0;
    StationarityResult res;
    res.tau = tau;
    res.kind = kind;
    res.seed = seed;
    res.step_size = step;
    res.steps = cap;
    for (std::int64_t t = 0; t < cap; ++t) {
        std::fill(grad.begin(), grad.end(), 0.0);
        double objective = 0.0;
        for (std::size_t c = 0; c < cells.size(); ++c) {
            const auto& cell = cells[c];
            const double* th = theta.data() + cell.a * block;
            double zmax = -std::numeric_limits<double>::infinity();
            for (int i = 0; i < k; ++i) {
                double acc = 0.0;
                for (int j = 0; j < d; ++j) acc += th[i * d + j] * cell.x[j];
                z[i] = acc;
                zmax = std::max(zmax, acc);
            }
            double sum = 0.0;
            for (int i = 0; i < k; ++i) sum += std::exp(z[i] - zmax);
            const double lse = zmax + std::log(sum);
            double* diff = diffs.data() + c * k;
            double* g = grad.data() + cell.a * block;
            for (int i = 0; i < k; ++i) {
                const double f = std::exp(z[i] - lse);
                diff[i] = f - cell.q[i];
                if (cell.q[i] != 0.0) objective -= cell.w * cell.q[i] * (z[i] - lse);
                const double wd = cell.w * diff[i];
                for (int j = 0; j < d; ++j) g[i * d + j] += wd * cell.x[j];
            }
        }
        if (!std::isfinite(objective)) throw NumericError("non-finite objective in stationarity run");
        if (t == 0) {
            g0 = objective;
            gmin = objective;
        }
        gmin = std::min(gmin, objective);
        double sq = 0.0;
        for (double v : grad) sq += v * v;
        running += sq;
        const double avg = running / static_cast<double>(t + 1);
        res.avg_sq_grad = avg;
        if (avg <= tau2) {
            res.steps = t + 1;
            res.reached = true;
            break;
        }
        const std::size_t c = rng.categorical(weights);
        const auto& cell = cells[c];
        double* th = theta.data() + cell.a * block;
        const double* diff = diffs.data() + c * k;
        for (int i = 0; i < k; ++i) {
            const double sd = step * diff[i];
            for (int j = 0; j < d; ++j) th[i * d + j] -= sd * cell.x[j];
        }
    }
    res.objective_gap = g0 - gmin;
    return {res, std::move(theta)};
}

CategoricalModel unflatten(const CategoricalModel& like, const std::vector<double>& theta) {
    const int k = like.grid().bins();
    const int d = like.features().dim();
    std::vector<Eigen::MatrixXd> blocks;
    for (int a = 0; a < like.actions(); ++a) {
        Eigen::MatrixXd m(k, d);
        for (int i = 0; i < k; ++i) {
            for (int j = 0; j < d; ++j) m(i, j) = theta[static_cast<std::size_t>(a) * k * d + i * d + j];
        }
        blocks.push_back(std::move(m));
    }
    return {like.grid(), like.features(), std::move(blocks)};
}

} // namespace

SlopeFit fit_complexity_slope(const std::vector<StationarityResult>& cells, TargetKind kind) {
    std::map<double, std::vector<const StationarityResult*>> by_tau;
    for (const auto& c : cells) {
        if (c.kind == kind) by_tau[c.tau].push_back(&c);
    }
    std::vector<double> xs, ys;
    for (const auto& [tau, group] : by_tau) {
        if (!std::all_of(group.begin(), group.end(), [](const auto* c) { return c->reached; })) continue;
        double mean_log = 0.0;
        for (const auto* c : group) mean_log += std::log(static_cast<double>(c->steps));
        xs.push_back(std::log(1.0 / tau));
        ys.push_back(mean_log / group.size());
    }
    SlopeFit fit;
    fit.points = static_cast<int>(xs.size());
    if (xs.size() < 2) {
        fit.slope = std::numeric_limits<double>::quiet_NaN();
        fit.intercept = std::numeric_limits<double>::quiet_NaN();
        return fit;
    }
    const double n = static_cast<double>(xs.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        mx += xs[i];
        my += ys[i];
    }
    mx /= n;
    my /= n;
    double sxy = 0.0, sxx = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        sxy += (xs[i] - mx) * (ys[i] - my);
        sxx += (xs[i] - mx) * (xs[i] - mx);
    }
    fit.slope = sxy / sxx;
    fit.intercept = my - fit.slope * mx;
    return fit;
}

AccelerationResult acceleration_experiment(const VarianceProblem& problem, const AccelerationConfig& config) {
    validate(problem);
    if (config.taus.empty() || config.kinds.empty() || config.seeds.empty()) {
        throw ConfigError("acceleration experiment needs taus, target kinds and seeds");
    }
    for (double tau : config.taus) {
        if (!(tau > 0.0)) throw ConfigError("every tau must be positive");
    }
    if (config.step_cap < 1) throw ConfigError("step cap must be positive");
    const int k = problem.model.grid().bins();
    const double l = problem.model.features().norm_bound();
    const double base_step = 1.0 / (k * l * l);

    AccelerationResult out;
    VarianceOptions exact;
    exact.exact = true;
    out.epsilon = config.epsilon > 0.0 ? config.epsilon : default_epsilon(problem, exact);
    exact.epsilon = {out.epsilon};
    const auto init_est = estimate_gradient_variance(problem, exact);
    out.sigma2_init = init_est.sigma2;
    out.kappa_init = init_est.kappa;

    std::vector<CellJob> jobs;
    for (std::size_t si = 0; si < config.seeds.size(); ++si) {
        for (std::size_t ti = 0; ti < config.taus.size(); ++ti) {
            for (std::size_t ki = 0; ki < config.kinds.size(); ++ki) jobs.push_back({si, ti, ki});
        }
    }
    std::vector<JobOutput> outputs(jobs.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t j = next++; j < jobs.size(); j = next++) {
            const auto& job = jobs[j];
            const double tau = config.taus[job.tau_index];
            const TargetKind kind = config.kinds[job.kind_index];
            double step = base_step;
            if (config.step_rule == StepRule::TauScaled && kind == TargetKind::Expectation && init_est.sigma2 > 0.0) {
                step = std::min(base_step, tau * tau / (2.0 * k * l * l * init_est.sigma2));
            }
            const std::uint64_t seed =
                sub_seed(config.seeds[job.seed_index], job.tau_index * 16 + job.kind_index);
            outputs[j] = run_stationarity(problem, kind, tau, step, out.epsilon, seed, config.step_cap);
        }
    };
    const int n_workers = std::max(1, std::min<int>(config.workers, static_cast<int>(jobs.size())));
    std::vector<std::thread> pool;
    for (int w = 1; w < n_workers; ++w) pool.emplace_back(worker);
    worker();
    for (auto& th : pool) th.join();

    for (std::size_t j = 0; j < outputs.size(); ++j) {
        auto& o = outputs[j];
        o.result.seed = config.seeds[jobs[j].seed_index];
        VarianceProblem final_problem{unflatten(problem.model, o.theta), problem.cells};
        const auto est = estimate_gradient_variance(final_problem, exact);
        o.result.kappa = est.kappa;
        o.result.sigma2 = est.sigma2;
        out.cells.push_back(o.result);
    }
    for (TargetKind kind : config.kinds) out.slopes[kind] = fit_complexity_slope(out.cells, kind);
    return out;
}

VarianceProblem make_bellman_problem(const CategoricalModel& frozen, const TabularMDP& mdp) {
    if (frozen.states() != mdp.states() || frozen.actions() != mdp.actions()) {
        throw ShapeError("model and MDP dimensions differ");
    }
    VarianceProblem problem{frozen, {}};
    const double w = 1.0 / (mdp.states() * mdp.actions());
    for (int s = 0; s < mdp.states(); ++s) {
        for (int a = 0; a < mdp.actions(); ++a) problem.cells.push_back({s, a, w, bellman_target(frozen, mdp, s, a)});
    }
    return problem;
}

VarianceProblem make_teacher_problem(const CategoricalModel& teacher, const std::vector<double>& weights) {
    const int n = teacher.states() * teacher.actions();
    if (static_cast<int>(weights.size()) != n) throw ShapeError("need one weight per (state, action)");
    VarianceProblem problem{CategoricalModel(teacher.grid(), teacher.features(), teacher.actions()), {}};
    for (int s = 0; s < teacher.states(); ++s) {
        for (int a = 0; a < teacher.actions(); ++a) {
            Eigen::VectorXd p = softmax_probs(teacher, s, a);
            p /= p.sum();
            problem.cells.push_back({s, a, weights[s * teacher.actions() + a], TargetHistogram(teacher.grid(), p)});
        }
    }
    validate(problem);
    return problem;
}

std::vector<double> gradient_norm_traces(const CategoricalModel& model, const TabularMDP& mdp, GradientWhich which,
                                         FittedMode mode, ExperimentTrace* trace) {
    if (model.states() != mdp.states() || model.actions() != mdp.actions()) {
        throw ShapeError("model and MDP dimensions differ");
    }
    std::vector<double> out;
    std::int64_t step = trace ? trace->next_step() : 0;
    for (int s = 0; s < mdp.states(); ++s) {
        for (int a = 0; a < mdp.actions(); ++a) {
            TraceRecord rec;
            rec.step = step++;
            if (mode == FittedMode::FZI) {
                const auto target = bellman_target(model, mdp, s, a);
                rec.loss = categorical_loss(target, model, s, a);
                rec.grad_norm_theta = row_norm_sum(categorical_loss_gradient(target, model, s, a));
                rec.grad_norm_state = categorical_loss_state_gradient(target, model, s, a).norm();
            } else {
                double y = mdp.expected_reward(s, a);
                const auto& row = mdp.transition(s, a);
                for (int sn = 0; sn < mdp.states(); ++sn) {
                    if (row[sn] != 0.0) y += row[sn] * (fqi_target(model, mdp.gamma(), 0.0, sn));
                }
                rec.loss = classical_squared_loss(y, model, s, a);
                rec.grad_norm_theta = row_norm_sum(classical_squared_loss_gradient(y, model, s, a));
                rec.grad_norm_state = classical_squared_loss_state_gradient(y, model, s, a).norm();
            }
            out.push_back(which == GradientWhich::Parameter ? rec.grad_norm_theta : rec.grad_norm_state);
            if (trace) trace->records.push_back(rec);
        }
    }
    return out;
}

} // namespace fzilab
