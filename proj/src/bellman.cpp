#include "fzilab/bellman.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>

namespace fzilab {

ReturnDistributionTable::ReturnDistributionTable(SupportGrid grid,
                                                 std::vector<std::vector<CategoricalDistribution>> dists)
    : grid_(grid), dists_(std::move(dists)) {
    if (dists_.empty() || dists_[0].empty()) throw ParameterError("return table needs at least one entry");
    const std::size_t n_actions = dists_[0].size();
    for (const auto& row : dists_) {
        if (row.size() != n_actions) throw ShapeError("return table rows must have equal action counts");
        for (const auto& d : row) {
            if (!(d.grid() == grid_)) throw ShapeError("return table entries must share one grid");
        }
    }
}

ReturnDistributionTable ReturnDistributionTable::filled(const CategoricalDistribution& d, int n_states,
                                                        int n_actions) {
    if (n_states < 1 || n_actions < 1) throw ParameterError("return table needs positive dimensions");
    return {d.grid(), std::vector<std::vector<CategoricalDistribution>>(
                          n_states, std::vector<CategoricalDistribution>(n_actions, d))};
}

ReturnDistributionTable ReturnDistributionTable::random(const SupportGrid& grid, int n_states, int n_actions,
                                                        Rng& rng) {
    if (n_states < 1 || n_actions < 1) throw ParameterError("return table needs positive dimensions");
    std::vector<std::vector<CategoricalDistribution>> dists(n_states);
    for (int s = 0; s < n_states; ++s) {
        for (int a = 0; a < n_actions; ++a) {
            const auto w = rng.simplex(grid.bins());
            dists[s].emplace_back(grid, Eigen::Map<const Eigen::VectorXd>(w.data(), grid.bins()), kArithTol);
        }
    }
    return {grid, std::move(dists)};
}

// ---------------------------------------------------------------------------

Projector::Projector(const SupportGrid& grid, ProjectionMode mode)
    : grid_(grid), mode_(mode), mass_(Eigen::VectorXd::Zero(grid.bins())), m_first_(grid.midpoint(0)),
      m_last_(grid.midpoint(grid.bins() - 1)) {}

void Projector::add(double value, double prob) {
    if (!std::isfinite(value) || !std::isfinite(prob)) throw NumericError("non-finite atom in projection");
    if (prob < 0.0) throw ParameterError("negative atom probability in projection");
    ++count_;
    if (mode_ == ProjectionMode::AssumeJointSupport) {
        if (value < grid_.lower() || value > grid_.upper()) {
            throw ParameterError("atom " + std::to_string(value) + " lies outside the support [" +
                                 std::to_string(grid_.lower()) + ", " + std::to_string(grid_.upper()) + "]");
        }
        mass_[grid_.bin_of(value)] += prob;
        return;
    }
    const int k = grid_.bins();
    if (value <= m_first_) {
        mass_[0] += prob;
        return;
    }
    if (value >= m_last_) {
        mass_[k - 1] += prob;
        return;
    }
    const double pos = (value - m_first_) / grid_.width();
    int j = std::clamp(static_cast<int>(std::floor(pos)), 0, k - 2);
    const double frac = std::clamp(pos - j, 0.0, 1.0);
    mass_[j] += prob * (1.0 - frac);
    mass_[j + 1] += prob * frac;
}

CategoricalDistribution Projector::result() const {
    if (count_ == 0) throw ParameterError("projection of an empty atom list");
    return {grid_, mass_, kArithTol};
}

CategoricalDistribution project_categorical(std::span<const RewardAtom> atoms, const SupportGrid& grid,
                                            ProjectionMode mode) {
    if (atoms.empty()) throw ParameterError("projection of an empty atom list");
    Projector proj(grid, mode);
    for (const auto& atom : atoms) proj.add(atom.value, atom.prob);
    return proj.result();
}

// ---------------------------------------------------------------------------

namespace {

void check_table(const ReturnDistributionTable& table, const TabularMDP& mdp) {
    if (table.states() != mdp.states() || table.actions() != mdp.actions()) {
        throw ShapeError("return table dimensions do not match the MDP");
    }
}

void check_policy(const Policy& policy, const TabularMDP& mdp) {
    if (policy.states() != mdp.states() || policy.actions() != mdp.actions()) {
        throw ShapeError("policy dimensions do not match the MDP");
    }
}

} // namespace

ReturnDistributionTable bellman_backup(const ReturnDistributionTable& table, const TabularMDP& mdp,
                                       const Policy& policy, ProjectionMode mode) {
    check_table(table, mdp);
    check_policy(policy, mdp);
    const SupportGrid& grid = table.grid();
    const Eigen::VectorXd mids = grid.midpoints();
    const double gamma = mdp.gamma();
    std::vector<std::vector<CategoricalDistribution>> out(mdp.states());
    for (int s = 0; s < mdp.states(); ++s) {
        for (int a = 0; a < mdp.actions(); ++a) {
            Projector proj(grid, mode);
            const auto& row = mdp.transition(s, a);
            for (const auto& r : mdp.reward(s, a)) {
                if (r.prob == 0.0) continue;
                for (int sn = 0; sn < mdp.states(); ++sn) {
                    const double pr = r.prob * row[sn];
                    if (pr == 0.0) continue;
                    for (int an = 0; an < mdp.actions(); ++an) {
                        const double pra = pr * policy.prob(sn, an);
                        if (pra == 0.0) continue;
                        const auto& next = table.at(sn, an).mass();
                        for (int j = 0; j < grid.bins(); ++j) {
                            if (next[j] == 0.0) continue;
                            proj.add(r.value + gamma * mids[j], pra * next[j]);
                        }
                    }
                }
            }
            out[s].push_back(proj.result());
        }
    }
    return {grid, std::move(out)};
}

Policy greedy_policy(const ReturnDistributionTable& table) {
    std::vector<int> best(table.states(), 0);
    for (int s = 0; s < table.states(); ++s) {
        double v = table.at(s, 0).mean();
        for (int a = 1; a < table.actions(); ++a) {
            const double m = table.at(s, a).mean();
            if (m > v) {
                v = m;
                best[s] = a;
            }
        }
    }
    return Policy::deterministic(best, table.actions());
}

Policy greedy_policy(const ValueTable& values) {
    std::vector<int> best(values.states(), 0);
    for (int s = 0; s < values.states(); ++s) {
        for (int a = 1; a < values.actions(); ++a) {
            if (values.at(s, a) > values.at(s, best[s])) best[s] = a;
        }
    }
    return Policy::deterministic(best, values.actions());
}

ReturnDistributionTable bellman_optimality_backup(const ReturnDistributionTable& table, const TabularMDP& mdp,
                                                  ProjectionMode mode) {
    return bellman_backup(table, mdp, greedy_policy(table), mode);
}

// ---------------------------------------------------------------------------

namespace {

Eigen::VectorXd cdf_gap(const CategoricalDistribution& d1, const CategoricalDistribution& d2) {
    if (!(d1.grid() == d2.grid())) throw ShapeError("distances need distributions on the same grid");
    return d1.cdf() - d2.cdf();
}

} // namespace

double cramer_distance(const CategoricalDistribution& d1, const CategoricalDistribution& d2) {
    const Eigen::VectorXd gap = cdf_gap(d1, d2);
    return std::sqrt(gap.squaredNorm() * d1.grid().width());
}

double wasserstein1_distance(const CategoricalDistribution& d1, const CategoricalDistribution& d2) {
    const Eigen::VectorXd gap = cdf_gap(d1, d2);
    return gap.cwiseAbs().sum() * d1.grid().width();
}

std::string to_string(Metric m) { return m == Metric::Cramer ? "cramer" : "wasserstein1"; }

Metric metric_from_string(const std::string& name) {
    if (name == "cramer") return Metric::Cramer;
    if (name == "wasserstein1") return Metric::Wasserstein1;
    throw ParameterError("unknown metric '" + name + "' (expected cramer or wasserstein1)");
}

double sup_distance(const ReturnDistributionTable& z1, const ReturnDistributionTable& z2, Metric metric) {
    if (z1.states() != z2.states() || z1.actions() != z2.actions()) throw ShapeError("table dimensions differ");
    double sup = 0.0;
    for (int s = 0; s < z1.states(); ++s) {
        for (int a = 0; a < z1.actions(); ++a) {
            const double d = metric == Metric::Cramer ? cramer_distance(z1.at(s, a), z2.at(s, a))
                                                      : wasserstein1_distance(z1.at(s, a), z2.at(s, a));
            sup = std::max(sup, d);
        }
    }
    return sup;
}

ContractionReport contraction_probe(const TabularMDP& mdp, const Policy& policy, const SupportGrid& grid,
                                    Metric metric, int n_pairs, std::uint64_t seed) {
    if (n_pairs < 1) throw ParameterError("contraction probe needs at least one pair");
    ContractionReport report;
    report.metric = metric;
    report.gamma = mdp.gamma();
    report.seed = seed;
    report.rate = metric == Metric::Cramer ? std::sqrt(mdp.gamma()) : mdp.gamma();
    report.slack = kProjectionSlack;
    for (int p = 0; p < n_pairs; ++p) {
        Rng rng(sub_seed(seed, static_cast<std::uint64_t>(p)));
        const auto z1 = ReturnDistributionTable::random(grid, mdp.states(), mdp.actions(), rng);
        const auto z2 = ReturnDistributionTable::random(grid, mdp.states(), mdp.actions(), rng);
        const double before = sup_distance(z1, z2, metric);
        if (before == 0.0) {
            ++report.skipped;
            continue;
        }
        const double after =
            sup_distance(bellman_backup(z1, mdp, policy), bellman_backup(z2, mdp, policy), metric);
        const double ratio = after / before;
        report.samples.push_back({p, ratio});
        report.max_ratio = std::max(report.max_ratio, ratio);
    }
    return report;
}

// ---------------------------------------------------------------------------

namespace {

std::uint64_t saturating_add(std::uint64_t a, std::uint64_t b) {
    const std::uint64_t c = a + b;
    return c < a ? std::numeric_limits<std::uint64_t>::max() : c;
}

std::uint64_t saturating_mul(std::uint64_t a, std::uint64_t b) {
    if (a != 0 && b > std::numeric_limits<std::uint64_t>::max() / a) return std::numeric_limits<std::uint64_t>::max();
    return a * b;
}

std::uint64_t positive_count(const RewardDistribution& r) {
    return static_cast<std::uint64_t>(std::count_if(r.begin(), r.end(), [](const auto& x) { return x.prob > 0.0; }));
}

} // namespace

std::uint64_t count_return_paths(const TabularMDP& mdp, const Policy& policy, int horizon) {
    if (horizon < 1) throw ParameterError("horizon must be at least 1");
    check_policy(policy, mdp);
    const int n_s = mdp.states();
    const int n_a = mdp.actions();
    // paths[s][a] for the remaining horizon h, built from h = 1 upward.
    std::vector<std::vector<std::uint64_t>> paths(n_s, std::vector<std::uint64_t>(n_a, 0));
    for (int h = 1; h <= horizon; ++h) {
        std::vector<std::vector<std::uint64_t>> next(n_s, std::vector<std::uint64_t>(n_a, 0));
        for (int s = 0; s < n_s; ++s) {
            for (int a = 0; a < n_a; ++a) {
                std::uint64_t branches = 0;
                const auto& row = mdp.transition(s, a);
                for (int sn = 0; sn < n_s; ++sn) {
                    if (row[sn] == 0.0) continue;
                    if (h == 1) {
                        branches = saturating_add(branches, 1);
                        continue;
                    }
                    for (int an = 0; an < n_a; ++an) {
                        if (policy.prob(sn, an) > 0.0) branches = saturating_add(branches, paths[sn][an]);
                    }
                }
                next[s][a] = saturating_mul(positive_count(mdp.reward(s, a)), branches);
            }
        }
        paths = std::move(next);
    }
    std::uint64_t total = 0;
    for (const auto& row : paths) {
        for (auto c : row) total = saturating_add(total, c);
    }
    return total;
}

ExactReturnResult exact_return_distribution(const TabularMDP& mdp, const Policy& policy, const SupportGrid& grid,
                                            int horizon) {
    const std::uint64_t paths = count_return_paths(mdp, policy, horizon);
    if (paths > kMaxOraclePaths) {
        throw SizeError("exact return enumeration needs " + std::to_string(paths) + " paths, above the guard of " +
                        std::to_string(kMaxOraclePaths));
    }
    const double gamma = mdp.gamma();
    std::vector<std::vector<CategoricalDistribution>> out(mdp.states());
    for (int s0 = 0; s0 < mdp.states(); ++s0) {
        for (int a0 = 0; a0 < mdp.actions(); ++a0) {
            Projector proj(grid);
            std::function<void(int, int, int, double, double, double)> walk =
                [&](int s, int a, int depth, double ret, double prob, double discount) {
                    const auto& row = mdp.transition(s, a);
                    for (const auto& r : mdp.reward(s, a)) {
                        if (r.prob == 0.0) continue;
                        const double g = ret + discount * r.value;
                        for (int sn = 0; sn < mdp.states(); ++sn) {
                            const double pr = prob * r.prob * row[sn];
                            if (row[sn] == 0.0) continue;
                            if (depth + 1 == horizon) {
                                proj.add(g, pr);
                                continue;
                            }
                            for (int an = 0; an < mdp.actions(); ++an) {
                                const double pa = policy.prob(sn, an);
                                if (pa == 0.0) continue;
                                walk(sn, an, depth + 1, g, pr * pa, discount * gamma);
                            }
                        }
                    }
                };
            walk(s0, a0, 0, 0.0, 1.0, 1.0);
            out[s0].push_back(proj.result());
        }
    }
    ExactReturnResult result{ReturnDistributionTable(grid, std::move(out)), 0.0, paths};
    result.truncation_bound = std::pow(gamma, horizon) * mdp.max_abs_reward() / (1.0 - gamma);
    return result;
}

double projection_mean_error(const SupportGrid& grid, double lo, double hi) {
    const double m0 = grid.midpoint(0);
    const double mk = grid.midpoint(grid.bins() - 1);
    return std::max({0.0, m0 - lo, hi - mk});
}

// ---------------------------------------------------------------------------

namespace {

ValueTable iterate_q(const TabularMDP& mdp, double tol, const std::function<double(const ValueTable&, int)>& next_value) {
    if (!(tol > 0.0)) throw ParameterError("tolerance must be positive");
    const int n_s = mdp.states();
    const int n_a = mdp.actions();
    const double gamma = mdp.gamma();
    ValueTable q{std::vector<std::vector<double>>(n_s, std::vector<double>(n_a, 0.0))};
    // ||Q_{n+1} - Q_n|| <= tol (1 - gamma) / gamma implies ||Q_{n+1} - Q*|| <= tol.
    const double stop = gamma > 0.0 ? tol * (1.0 - gamma) / gamma : std::numeric_limits<double>::infinity();
    for (int iter = 0; iter < 1'000'000; ++iter) {
        std::vector<double> v(n_s);
        for (int s = 0; s < n_s; ++s) v[s] = next_value(q, s);
        ValueTable fresh = q;
        double delta = 0.0;
        for (int s = 0; s < n_s; ++s) {
            for (int a = 0; a < n_a; ++a) {
                double acc = mdp.expected_reward(s, a);
                const auto& row = mdp.transition(s, a);
                for (int sn = 0; sn < n_s; ++sn) acc += gamma * row[sn] * v[sn];
                delta = std::max(delta, std::abs(acc - q.q[s][a]));
                fresh.q[s][a] = acc;
            }
        }
        q = std::move(fresh);
        if (delta <= stop) return q;
    }
    throw NumericError("value iteration did not converge");
}

} // namespace

ValueTable classical_value_iteration(const TabularMDP& mdp, double tol) {
    return iterate_q(mdp, tol, [](const ValueTable& q, int s) {
        return *std::max_element(q.q[s].begin(), q.q[s].end());
    });
}

ValueTable policy_evaluation(const TabularMDP& mdp, const Policy& policy, double tol) {
    check_policy(policy, mdp);
    return iterate_q(mdp, tol, [&](const ValueTable& q, int s) {
        double v = 0.0;
        for (int a = 0; a < q.actions(); ++a) v += policy.prob(s, a) * q.q[s][a];
        return v;
    });
}

} // namespace fzilab
