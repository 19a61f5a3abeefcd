#include "fzilab/core.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

namespace fzilab {

namespace {

std::string describe(const char* what, const std::string& detail) {
    return std::string(what) + ": " + detail;
}

} // namespace

void require_probability_vector(std::span<const double> v, double tol, const char* what) {
    if (v.empty()) throw ParameterError(describe(what, "empty probability vector"));
    double total = 0.0;
    for (double x : v) {
        if (!std::isfinite(x)) throw ParameterError(describe(what, "non-finite probability"));
        if (x < -tol || x > 1.0 + tol) {
            throw ParameterError(describe(what, "probability outside [0,1]: " + std::to_string(x)));
        }
        total += x;
    }
    if (std::abs(total - 1.0) > tol) {
        throw ParameterError(describe(what, "probabilities sum to " + std::to_string(total)));
    }
}

// ---------------------------------------------------------------------------

SupportGrid::SupportGrid(double l0, double lk, int k) : l0_(l0), lk_(lk), k_(k) {
    if (!std::isfinite(l0) || !std::isfinite(lk)) throw ParameterError("grid edges must be finite");
    if (!(l0 < lk)) throw ParameterError("grid requires l0 < lk");
    if (k < 1) throw ParameterError("grid requires k >= 1");
    width_ = (lk - l0) / k;
    if (!(width_ > 0.0)) throw ParameterError("grid bin width underflows");
}

double SupportGrid::edge(int i) const {
    if (i == k_) return lk_;
    return l0_ + width_ * i;
}

double SupportGrid::midpoint(int i) const { return 0.5 * (edge(i) + edge(i + 1)); }

Eigen::VectorXd SupportGrid::midpoints() const {
    Eigen::VectorXd m(k_);
    for (int i = 0; i < k_; ++i) m[i] = midpoint(i);
    return m;
}

int SupportGrid::bin_of(double value) const {
    if (value <= edge(1)) return 0;
    if (value > edge(k_ - 1)) return k_ - 1;
    int i = static_cast<int>(std::ceil((value - l0_) / width_)) - 1;
    i = std::clamp(i, 0, k_ - 1);
    // Rounding in the division can land one bin off; settle against the edges.
    while (i > 0 && value <= edge(i)) --i;
    while (i < k_ - 1 && value > edge(i + 1)) ++i;
    return i;
}

// ---------------------------------------------------------------------------

CategoricalDistribution::CategoricalDistribution(SupportGrid grid, Eigen::VectorXd mass, double tol)
    : grid_(grid), mass_(std::move(mass)) {
    if (mass_.size() != grid_.bins()) {
        throw ShapeError("mass vector has " + std::to_string(mass_.size()) + " entries, grid has " +
                         std::to_string(grid_.bins()) + " bins");
    }
    require_probability_vector({mass_.data(), static_cast<std::size_t>(mass_.size())}, tol,
                               "categorical distribution");
}

CategoricalDistribution CategoricalDistribution::dirac(const SupportGrid& grid, int bin) {
    if (bin < 0 || bin >= grid.bins()) throw ParameterError("dirac bin out of range");
    Eigen::VectorXd m = Eigen::VectorXd::Zero(grid.bins());
    m[bin] = 1.0;
    return {grid, std::move(m)};
}

CategoricalDistribution CategoricalDistribution::uniform(const SupportGrid& grid) {
    return {grid, Eigen::VectorXd::Constant(grid.bins(), 1.0 / grid.bins())};
}

double CategoricalDistribution::mean() const { return grid_.midpoints().dot(mass_); }

Eigen::VectorXd CategoricalDistribution::cdf() const {
    Eigen::VectorXd f(mass_.size());
    double acc = 0.0;
    for (Eigen::Index i = 0; i < mass_.size(); ++i) {
        acc += mass_[i];
        f[i] = acc;
    }
    return f;
}

// ---------------------------------------------------------------------------

QuantileDistribution::QuantileDistribution(std::vector<double> atoms) : atoms_(std::move(atoms)) {
    if (atoms_.empty()) throw ParameterError("quantile distribution needs at least one atom");
    for (double x : atoms_) {
        if (!std::isfinite(x)) throw ParameterError("quantile atoms must be finite");
    }
    if (!std::is_sorted(atoms_.begin(), atoms_.end())) {
        throw ParameterError("quantile atoms must be non-decreasing");
    }
}

double QuantileDistribution::mean() const {
    double total = 0.0;
    for (double x : atoms_) total += x;
    return total / static_cast<double>(atoms_.size());
}

// ---------------------------------------------------------------------------

TabularMDP::TabularMDP(std::vector<std::vector<std::vector<double>>> transition,
                       std::vector<std::vector<RewardDistribution>> reward, double gamma)
    : transition_(std::move(transition)), reward_(std::move(reward)), gamma_(gamma) {
    // gamma = 0 is admitted so that myopic (reward-only) targets can be built.
    if (!(gamma_ >= 0.0 && gamma_ < 1.0)) throw ParameterError("gamma must lie in [0, 1)");
    n_states_ = static_cast<int>(transition_.size());
    if (n_states_ < 1) throw ParameterError("MDP needs at least one state");
    n_actions_ = static_cast<int>(transition_[0].size());
    if (n_actions_ < 1) throw ParameterError("MDP needs at least one action");
    if (static_cast<int>(reward_.size()) != n_states_) throw ShapeError("reward table state count mismatch");
    for (int s = 0; s < n_states_; ++s) {
        if (static_cast<int>(transition_[s].size()) != n_actions_ ||
            static_cast<int>(reward_[s].size()) != n_actions_) {
            throw ShapeError("ragged action dimension at state " + std::to_string(s));
        }
        for (int a = 0; a < n_actions_; ++a) {
            const auto& row = transition_[s][a];
            if (static_cast<int>(row.size()) != n_states_) throw ShapeError("transition row has wrong length");
            require_probability_vector(row, kProbTol, "transition row");
            const auto& rd = reward_[s][a];
            if (rd.empty()) throw ParameterError("empty reward distribution");
            std::vector<double> probs;
            probs.reserve(rd.size());
            for (const auto& atom : rd) {
                if (!std::isfinite(atom.value)) throw ParameterError("reward values must be finite");
                probs.push_back(atom.prob);
            }
            require_probability_vector(probs, kProbTol, "reward distribution");
        }
    }
}

double TabularMDP::expected_reward(int s, int a) const {
    double e = 0.0;
    for (const auto& atom : reward_[s][a]) e += atom.value * atom.prob;
    return e;
}

double TabularMDP::max_abs_reward() const {
    double m = 0.0;
    for (const auto& per_state : reward_) {
        for (const auto& rd : per_state) {
            for (const auto& atom : rd) {
                if (atom.prob > 0.0) m = std::max(m, std::abs(atom.value));
            }
        }
    }
    return m;
}

// ---------------------------------------------------------------------------

Policy::Policy(std::vector<std::vector<double>> probs) : probs_(std::move(probs)) {
    if (probs_.empty()) throw ParameterError("policy needs at least one state");
    const std::size_t n_actions = probs_[0].size();
    for (const auto& row : probs_) {
        if (row.size() != n_actions) throw ShapeError("ragged policy table");
        require_probability_vector(row, kProbTol, "policy row");
    }
}

Policy Policy::uniform(int n_states, int n_actions) {
    if (n_states < 1 || n_actions < 1) throw ParameterError("policy dimensions must be positive");
    return Policy(std::vector<std::vector<double>>(
        n_states, std::vector<double>(n_actions, 1.0 / n_actions)));
}

Policy Policy::deterministic(const std::vector<int>& actions, int n_actions) {
    std::vector<std::vector<double>> probs(actions.size(), std::vector<double>(n_actions, 0.0));
    for (std::size_t s = 0; s < actions.size(); ++s) {
        if (actions[s] < 0 || actions[s] >= n_actions) throw ParameterError("action id out of range");
        probs[s][actions[s]] = 1.0;
    }
    return Policy(std::move(probs));
}

// ---------------------------------------------------------------------------

FeatureMap::FeatureMap(std::vector<Eigen::VectorXd> features, double norm_bound)
    : features_(std::move(features)), norm_bound_(norm_bound) {
    if (features_.empty()) throw ParameterError("feature map needs at least one state");
    dim_ = static_cast<int>(features_[0].size());
    if (dim_ < 1) throw ParameterError("feature dimension must be positive");
    if (!(norm_bound_ > 0.0) || !std::isfinite(norm_bound_)) {
        throw ParameterError("feature norm bound must be positive and finite");
    }
    for (std::size_t s = 0; s < features_.size(); ++s) {
        const auto& x = features_[s];
        if (x.size() != dim_) throw ShapeError("ragged feature map");
        if (!x.allFinite()) throw NumericError("non-finite feature at state " + std::to_string(s));
        if (x.norm() > norm_bound_ * (1.0 + 1e-12)) {
            throw ParameterError("feature norm exceeds bound at state " + std::to_string(s));
        }
    }
}

bool FeatureMap::operator==(const FeatureMap& other) const {
    if (norm_bound_ != other.norm_bound_ || features_.size() != other.features_.size()) return false;
    for (std::size_t s = 0; s < features_.size(); ++s) {
        if (features_[s].size() != other.features_[s].size() || features_[s] != other.features_[s]) {
            return false;
        }
    }
    return true;
}

// ---------------------------------------------------------------------------

TransitionSample sample_transition(const TabularMDP& mdp, int s, int a, Rng& rng) {
    TransitionSample out{s, a, 0.0, 0};
    const auto& rd = mdp.reward(s, a);
    std::vector<double> probs;
    probs.reserve(rd.size());
    for (const auto& atom : rd) probs.push_back(atom.prob);
    out.r = rd[rng.categorical(probs)].value;
    out.s_next = static_cast<int>(rng.categorical(mdp.transition(s, a)));
    return out;
}

TabularMDP make_chain_mdp(int length, const ChainRewards& rewards, double gamma) {
    if (length < 2) throw ParameterError("chain length must be at least 2");
    if (!(gamma > 0.0 && gamma < 1.0)) throw ParameterError("chain gamma must lie in (0, 1)");
    constexpr int kAdvance = 0;
    constexpr int kStay = 1;
    const int last = length - 1;
    std::vector<std::vector<std::vector<double>>> p(
        length, std::vector<std::vector<double>>(2, std::vector<double>(length, 0.0)));
    std::vector<std::vector<RewardDistribution>> r(length, std::vector<RewardDistribution>(2));
    for (int s = 0; s < length; ++s) {
        if (s == last) {
            p[s][kAdvance][s] = 1.0;
            p[s][kStay][s] = 1.0;
            r[s][kAdvance] = {{rewards.absorbing, 1.0}};
            r[s][kStay] = {{rewards.absorbing, 1.0}};
            continue;
        }
        p[s][kAdvance][s + 1] = 1.0;
        p[s][kStay][s] = 1.0;
        r[s][kAdvance] = (s == last - 1) ? rewards.terminal : RewardDistribution{{0.0, 1.0}};
        r[s][kStay] = {{0.0, 1.0}};
    }
    return {std::move(p), std::move(r), gamma};
}

TabularMDP make_absorbing_mdp(double reward, double gamma) {
    if (!(gamma > 0.0 && gamma < 1.0)) throw ParameterError("gamma must lie in (0, 1)");
    return {{{{1.0}}}, {{{{reward, 1.0}}}}, gamma};
}

TabularMDP make_random_mdp(int n_states, int n_actions, int reward_support_size, std::uint64_t seed,
                           double gamma) {
    if (n_states < 1 || n_actions < 1 || reward_support_size < 1) {
        throw ParameterError("random MDP counts must be at least 1");
    }
    Rng rng(seed);
    std::vector<std::vector<std::vector<double>>> p(n_states, std::vector<std::vector<double>>(n_actions));
    std::vector<std::vector<RewardDistribution>> r(n_states, std::vector<RewardDistribution>(n_actions));
    for (int s = 0; s < n_states; ++s) {
        for (int a = 0; a < n_actions; ++a) {
            p[s][a] = rng.simplex(n_states);
            const auto probs = rng.simplex(reward_support_size);
            auto& rd = r[s][a];
            for (int j = 0; j < reward_support_size; ++j) rd.push_back({rng.uniform(), probs[j]});
            std::sort(rd.begin(), rd.end(),
                      [](const RewardAtom& x, const RewardAtom& y) { return x.value < y.value; });
        }
    }
    return {std::move(p), std::move(r), gamma};
}

FeatureMap make_onehot_features(int n_states) {
    if (n_states < 1) throw ParameterError("one-hot features need n_states >= 1");
    std::vector<Eigen::VectorXd> x(n_states, Eigen::VectorXd::Zero(n_states));
    for (int s = 0; s < n_states; ++s) x[s][s] = 1.0;
    return {std::move(x), 1.0};
}

FeatureMap make_circle_features(int n_states, double radius) {
    if (n_states < 1) throw ParameterError("circle features need n_states >= 1");
    if (!(radius > 0.0)) throw ParameterError("circle radius must be positive");
    std::vector<Eigen::VectorXd> x;
    x.reserve(n_states);
    for (int s = 0; s < n_states; ++s) {
        const double phi = 2.0 * std::numbers::pi * s / n_states;
        Eigen::VectorXd v(2);
        v << radius * std::cos(phi), radius * std::sin(phi);
        x.push_back(v);
    }
    return {std::move(x), radius};
}

FeatureMap make_random_features(int n_states, int dim, double norm_bound, std::uint64_t seed) {
    if (n_states < 1 || dim < 1) throw ParameterError("random features need positive dimensions");
    Rng rng(seed);
    std::vector<Eigen::VectorXd> x(n_states, Eigen::VectorXd(dim));
    double largest = 0.0;
    for (auto& v : x) {
        for (int j = 0; j < dim; ++j) v[j] = rng.normal();
        largest = std::max(largest, v.norm());
    }
    for (auto& v : x) v *= norm_bound / largest;
    return {std::move(x), norm_bound};
}

} // namespace fzilab
