#include "fzilab/experiments.hpp"

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "fzilab/csv.hpp"
#include "fzilab/svg.hpp"

namespace fzilab {

namespace fs = std::filesystem;

bool RunOutcome::all_pass() const {
    return std::all_of(checks.begin(), checks.end(), [](const Check& c) { return c.pass; });
}

namespace {

const char* kExperiments[] = {"probe", "contraction", "stability", "acceleration", "fqi", "fzi", "variance"};

[[noreturn]] void config_error(const std::string& what) { throw ConfigError(what); }

const Json& section(const Json& j, const char* key) {
    if (!j.is_object() || !j.contains(key)) config_error(std::string("config is missing '") + key + "'");
    return j.at(key);
}

template <typename T>
T value(const Json& j, const char* key) {
    const Json& v = section(j, key);
    try {
        return v.get<T>();
    } catch (const nlohmann::json::exception&) {
        config_error(std::string("config field '") + key + "' has the wrong type");
    }
}

template <typename T>
T value_or(const Json& j, const char* key, T fallback) {
    if (!j.is_object() || !j.contains(key) || j.at(key).is_null()) return fallback;
    return value<T>(j, key);
}

const Json& params_of(const RunConfig& c) {
    static const Json empty = Json::object();
    return c.config.contains("params") ? c.config.at("params") : empty;
}

std::uint64_t shift(std::uint64_t seed, std::int64_t offset) { return seed + static_cast<std::uint64_t>(offset); }

std::string fnv1a_hex(const std::string& data) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : data) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016" PRIx64, h);
    return buf;
}

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

TabularMDP with_gamma(const TabularMDP& mdp, double gamma) {
    std::vector<std::vector<std::vector<double>>> p(mdp.states());
    std::vector<std::vector<RewardDistribution>> r(mdp.states());
    for (int s = 0; s < mdp.states(); ++s) {
        for (int a = 0; a < mdp.actions(); ++a) {
            p[s].push_back(mdp.transition(s, a));
            r[s].push_back(mdp.reward(s, a));
        }
    }
    return {std::move(p), std::move(r), gamma};
}

RewardDistribution reward_atoms(const Json& j) {
    RewardDistribution out;
    if (!j.is_array()) config_error("reward atoms must be an array of {value, prob}");
    for (const auto& a : j) out.push_back({value<double>(a, "value"), value<double>(a, "prob")});
    return out;
}

struct Environment {
    TabularMDP mdp;
    std::optional<FeatureMap> features;
    std::optional<SupportGrid> grid;
};

Environment build_environment(const RunConfig& c) {
    const Json& e = section(c.config, "environment");
    const std::string type = value<std::string>(e, "type");
    if (type == "absorbing") {
        return {make_absorbing_mdp(value<double>(e, "reward"), value<double>(e, "gamma")), {}, {}};
    }
    if (type == "chain") {
        ChainRewards rewards;
        if (e.contains("terminal")) rewards.terminal = reward_atoms(e.at("terminal"));
        rewards.absorbing = value_or<double>(e, "absorbing", 0.0);
        return {make_chain_mdp(value<int>(e, "length"), rewards, value<double>(e, "gamma")), {}, {}};
    }
    if (type == "random") {
        return {make_random_mdp(value<int>(e, "states"), value<int>(e, "actions"), value_or<int>(e, "rewardSupport", 1),
                                shift(value<std::uint64_t>(e, "seed"), c.seed_offset), value_or<double>(e, "gamma", 0.9)),
                {},
                {}};
    }
    if (type == "inline") return {mdp_from_json(section(e, "mdp")), {}, {}};
    if (type == "file") {
        fs::path p = value<std::string>(e, "path");
        if (p.is_relative()) p = fs::path(c.base_dir) / p;
        const Json doc = read_json_file(p.string());
        Environment env{mdp_from_json(section(doc, "mdp")), {}, {}};
        if (doc.contains("features")) env.features = features_from_json(doc.at("features"));
        if (doc.contains("grid")) env.grid = grid_from_json(doc.at("grid"));
        return env;
    }
    config_error("unknown environment type '" + type + "'");
}

FeatureMap build_features(const RunConfig& c, int n_states, const std::optional<FeatureMap>& from_file) {
    if (!c.config.contains("features")) {
        if (from_file) return *from_file;
        return make_onehot_features(n_states);
    }
    const Json& f = c.config.at("features");
    const std::string type = value<std::string>(f, "type");
    FeatureMap out = [&]() -> FeatureMap {
        if (type == "onehot") return make_onehot_features(n_states);
        if (type == "circle") return make_circle_features(n_states, value_or<double>(f, "radius", 1.0));
        if (type == "random") {
            return make_random_features(n_states, value<int>(f, "dim"), value_or<double>(f, "normBound", 1.0),
                                        shift(value<std::uint64_t>(f, "seed"), c.seed_offset));
        }
        if (type == "inline") return features_from_json(f);
        if (type == "file" && from_file) return *from_file;
        config_error("unknown features type '" + type + "'");
    }();
    if (out.states() != n_states) config_error("feature map has a different state count than the environment");
    return out;
}

SupportGrid build_grid(const RunConfig& c, const std::optional<SupportGrid>& from_file) {
    if (c.config.contains("grid")) return grid_from_json(c.config.at("grid"));
    if (from_file) return *from_file;
    config_error("config is missing 'grid'");
}

CategoricalModel build_init(const Json& init, const SupportGrid& grid, const FeatureMap& features, int n_actions,
                            std::int64_t offset) {
    const std::string type = value_or<std::string>(init, "type", "zeros");
    if (type == "zeros") return CategoricalModel(grid, features, n_actions);
    if (type == "gaussian") {
        return CategoricalModel::gaussian(grid, features, n_actions, shift(value<std::uint64_t>(init, "seed"), offset),
                                          value_or<double>(init, "stddev", 0.01));
    }
    config_error("unknown init type '" + type + "'");
}

/// Problem for the variance and acceleration experiments.
VarianceProblem build_problem(const RunConfig& c) {
    const Json& p = section(c.config, "problem");
    const std::string type = value<std::string>(p, "type");
    if (type == "teacher") {
        const int n = value<int>(section(c.config, "features"), "states");
        FeatureMap features = build_features(c, n, std::nullopt);
        const SupportGrid grid = build_grid(c, std::nullopt);
        std::vector<Eigen::MatrixXd> theta;
        for (const auto& block : section(p, "theta")) {
            Eigen::MatrixXd m(grid.bins(), features.dim());
            if (static_cast<int>(block.size()) != grid.bins()) config_error("teacher theta must have k rows");
            for (int i = 0; i < grid.bins(); ++i) {
                if (static_cast<int>(block[i].size()) != features.dim()) config_error("teacher theta rows must have d entries");
                for (int j = 0; j < features.dim(); ++j) m(i, j) = block[i][j].get<double>();
            }
            theta.push_back(std::move(m));
        }
        const CategoricalModel teacher(grid, features, std::move(theta));
        std::vector<double> weights = value_or<std::vector<double>>(
            p, "weights", std::vector<double>(teacher.states() * teacher.actions(),
                                              1.0 / (teacher.states() * teacher.actions())));
        return make_teacher_problem(teacher, weights);
    }
    if (type == "targets") {
        const int n = value<int>(section(c.config, "features"), "states");
        FeatureMap features = build_features(c, n, std::nullopt);
        const SupportGrid grid = build_grid(c, std::nullopt);
        const int n_actions = value_or<int>(p, "actions", 1);
        VarianceProblem problem{CategoricalModel(grid, features, n_actions), {}};
        for (const auto& cell : section(p, "cells")) {
            const int s = value<int>(cell, "state");
            const int a = value_or<int>(cell, "action", 0);
            if (s < 0 || s >= n || a < 0 || a >= n_actions) config_error("target cell (state, action) out of range");
            const auto mass = value<std::vector<double>>(cell, "p");
            if (static_cast<int>(mass.size()) != grid.bins()) config_error("target p must have k entries");
            problem.cells.push_back(
                {s, a, value<double>(cell, "weight"),
                 TargetHistogram(grid, Eigen::Map<const Eigen::VectorXd>(mass.data(), grid.bins()))});
        }
        return problem;
    }
    if (type == "bellman") {
        const World w = build_world(c);
        const auto init = build_init(value_or<Json>(p, "init", Json::object()), w.grid, w.features, w.mdp.actions(),
                                     c.seed_offset);
        return make_bellman_problem(init, w.mdp);
    }
    config_error("unknown problem type '" + type + "'");
}

std::string seed_tag(std::uint64_t seed) { return std::to_string(seed); }

class Outputs {
public:
    Outputs(fs::path dir, RunOutcome& outcome) : dir_(std::move(dir)), outcome_(outcome) {}

    void write(const std::string& name, const std::string& content) {
        std::ofstream out(dir_ / name, std::ios::binary);
        if (!out) config_error("cannot write '" + (dir_ / name).string() + "'");
        out << content;
        outcome_.files.push_back(name);
    }

    void json(const std::string& name, const Json& j) { write(name, j.dump(2) + "\n"); }

private:
    fs::path dir_;
    RunOutcome& outcome_;
};

void add_check(RunOutcome& o, std::string name, bool pass, std::string detail) {
    o.checks.push_back({std::move(name), pass, std::move(detail)});
}

std::string fmt_g(double v) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

// ---------------------------------------------------------------------------

struct ProbeParams {
    std::vector<ProbeShape> shapes;
    int samples = 10000;
    int pairs = 10000;
    int convexity_pairs = 10000;
    double pair_spacing = 0.0;
};

ProbeParams probe_params(const RunConfig& c) {
    const Json& p = params_of(c);
    ProbeParams out;
    if (p.contains("shapes")) {
        for (const auto& s : p.at("shapes")) {
            ProbeShape shape;
            shape.k = value_or<int>(s, "k", 5);
            shape.d = value_or<int>(s, "d", 3);
            shape.norm_bound = value_or<double>(s, "l", 1.0);
            shape.theta_scale = value_or<double>(s, "thetaScale", 1.0);
            if (shape.k < 1 || shape.d < 1 || !(shape.norm_bound > 0.0)) config_error("probe shape needs k, d >= 1 and l > 0");
            out.shapes.push_back(shape);
        }
    } else {
        out.shapes.push_back({});
    }
    out.samples = value_or<int>(p, "samples", out.samples);
    out.pairs = value_or<int>(p, "pairs", out.pairs);
    out.convexity_pairs = value_or<int>(p, "convexityPairs", out.convexity_pairs);
    out.pair_spacing = value_or<double>(p, "pairSpacing", 0.0);
    if (out.samples < 1 || out.pairs < 1 || out.convexity_pairs < 1) config_error("probe counts must be positive");
    return out;
}

void run_probe(const RunConfig& c, Outputs& out, RunOutcome& o) {
    const auto p = probe_params(c);
    CsvWriter csv({"seed", "probe", "k", "d", "l", "theta_scale", "samples", "max_grad_norm", "lipschitz_bound",
                   "max_curvature_ratio", "smoothness_bound", "convexity_violations", "skipped_pairs"});
    Json reports = Json::array();
    PlotSeries grad{"grad/bound", {}, {}};
    PlotSeries curv{"curvature/bound", {}, {}};
    int index = 0;
    for (std::uint64_t seed : c.seeds) {
        for (std::size_t si = 0; si < p.shapes.size(); ++si) {
            const auto& shape = p.shapes[si];
            const std::uint64_t base = sub_seed(seed, si);
            LossProbeReport r = probe_lipschitz(shape, p.samples, sub_seed(base, 0));
            const auto sm = probe_smoothness(shape, p.pairs, sub_seed(base, 1), p.pair_spacing);
            r.max_curvature_ratio = sm.max_curvature_ratio;
            r.skipped_pairs = sm.skipped_pairs;
            r.convexity_violations = probe_convexity(shape, p.convexity_pairs, sub_seed(base, 2));
            csv.row({std::to_string(seed), std::to_string(si), std::to_string(shape.k), std::to_string(shape.d),
                     format_double(shape.norm_bound), format_double(shape.theta_scale), std::to_string(p.samples),
                     format_double(r.max_grad_norm), format_double(r.lipschitz_bound),
                     format_double(r.max_curvature_ratio), format_double(r.smoothness_bound),
                     std::to_string(r.convexity_violations), std::to_string(r.skipped_pairs)});
            Json jr = to_json(r);
            jr["seed"] = seed;
            jr["pairs"] = p.pairs;
            jr["convexityPairs"] = p.convexity_pairs;
            reports.push_back(jr);
            grad.x.push_back(index);
            grad.y.push_back(r.max_grad_norm / r.lipschitz_bound);
            curv.x.push_back(index);
            curv.y.push_back(r.max_curvature_ratio / r.smoothness_bound);
            ++index;
            const std::string tag = " k=" + std::to_string(shape.k) + " d=" + std::to_string(shape.d) +
                                    " l=" + fmt_g(shape.norm_bound) + " seed=" + seed_tag(seed);
            add_check(o, "lipschitz" + tag, r.max_grad_norm <= r.lipschitz_bound,
                      "max " + fmt_g(r.max_grad_norm) + " <= k*l " + fmt_g(r.lipschitz_bound));
            add_check(o, "smoothness" + tag, r.max_curvature_ratio <= r.smoothness_bound + 1e-9,
                      "max " + fmt_g(r.max_curvature_ratio) + " <= k*l^2 " + fmt_g(r.smoothness_bound));
            add_check(o, "convexity" + tag, r.convexity_violations == 0,
                      std::to_string(r.convexity_violations) + " violations in " + std::to_string(p.convexity_pairs));
        }
    }
    out.write("probes.csv", csv.str());
    PlotOptions opts;
    opts.title = "Probe maxima relative to their bounds";
    opts.x_label = "probe";
    opts.y_label = "ratio to bound";
    out.write("probes.svg", render_line_plot({grad, curv}, opts));
    o.summary = Json{{"reports", reports}};
}

// ---------------------------------------------------------------------------

struct ContractionParams {
    std::vector<double> gammas;
    std::vector<Metric> metrics;
    int pairs = 100;
};

ContractionParams contraction_params(const RunConfig& c, const TabularMDP& mdp) {
    const Json& p = params_of(c);
    ContractionParams out;
    out.gammas = value_or<std::vector<double>>(p, "gammas", {mdp.gamma()});
    for (double g : out.gammas) {
        if (!(g >= 0.0 && g < 1.0)) config_error("contraction gammas must lie in [0, 1)");
    }
    for (const auto& m : value_or<std::vector<std::string>>(p, "metrics", {"cramer", "wasserstein1"})) {
        try {
            out.metrics.push_back(metric_from_string(m));
        } catch (const ParameterError& e) {
            config_error(e.what());
        }
    }
    out.pairs = value_or<int>(p, "pairs", out.pairs);
    if (out.pairs < 1) config_error("contraction pairs must be positive");
    return out;
}

void run_contraction(const RunConfig& c, Outputs& out, RunOutcome& o) {
    const World w = build_world(c);
    const auto p = contraction_params(c, w.mdp);
    const Policy policy = Policy::uniform(w.mdp.states(), w.mdp.actions());
    CsvWriter csv({"seed", "pair", "ratio", "metric", "gamma"});
    Json reports = Json::array();
    for (std::uint64_t seed : c.seeds) {
        for (std::size_t gi = 0; gi < p.gammas.size(); ++gi) {
            const TabularMDP mdp = with_gamma(w.mdp, p.gammas[gi]);
            for (std::size_t mi = 0; mi < p.metrics.size(); ++mi) {
                const auto r = contraction_probe(mdp, policy, w.grid, p.metrics[mi], p.pairs,
                                                 sub_seed(seed, gi * 8 + mi));
                for (const auto& s : r.samples) {
                    csv.row({std::to_string(seed), std::to_string(s.pair), format_double(s.ratio),
                             to_string(r.metric), format_double(r.gamma)});
                }
                reports.push_back(to_json(r));
                add_check(o,
                          "contraction " + to_string(r.metric) + " gamma=" + fmt_g(r.gamma) + " seed=" + seed_tag(seed),
                          r.pass(),
                          "max ratio " + fmt_g(r.max_ratio) + " <= " + fmt_g(r.rate) + " + " + fmt_g(r.slack));
            }
        }
    }
    const std::string text = csv.str();
    out.write("contraction.csv", text);
    out.write("contraction.svg", plot_csv(parse_csv(text), PlotKind::Contraction));
    o.summary = Json{{"reports", reports}};
}

// ---------------------------------------------------------------------------

struct StabilityParams {
    std::vector<int> ns;
    StabilityConfig base;
    double max_doubling_ratio = 0.75;
};

StabilityParams stability_params(const RunConfig& c, const World& w) {
    const Json& p = params_of(c);
    StabilityParams out;
    out.ns = value_or<std::vector<int>>(p, "n", {64});
    out.base.steps = value_or<std::int64_t>(p, "steps", 500);
    out.base.seeds = value_or<int>(p, "sgdSeeds", 20);
    out.base.held_out = value_or<int>(p, "heldOut", 64);
    out.max_doubling_ratio = value_or<double>(p, "maxDoublingRatio", 0.75);
    const double limit = max_stable_step(w.grid, w.features);
    if (p.contains("stepSize") && p.at("stepSize").is_string()) {
        if (p.at("stepSize").get<std::string>() != "max") config_error("stepSize must be a number or \"max\"");
        out.base.step_size = limit;
    } else {
        out.base.step_size = value_or<double>(p, "stepSize", limit);
    }
    if (!(out.base.step_size > 0.0) || out.base.step_size > limit * (1.0 + 1e-12)) {
        config_error("stability stepSize " + fmt_g(out.base.step_size) + " violates lambda <= 2/(k l^2) = " +
                     fmt_g(limit));
    }
    for (int n : out.ns) {
        if (n < 2) config_error("stability n must be at least 2");
    }
    if (out.base.steps < 1 || out.base.seeds < 1 || out.base.held_out < 1) {
        config_error("stability steps, sgdSeeds and heldOut must be positive");
    }
    return out;
}

void run_stability(const RunConfig& c, Outputs& out, RunOutcome& o) {
    const World w = build_world(c);
    const auto p = stability_params(c, w);
    CsvWriter csv({"seed", "n", "T", "k", "l", "step_size", "empirical_sup", "theoretical_bound", "pass",
                   "seeds_touching_replacement"});
    Json results = Json::array();
    std::vector<PlotSeries> series;
    for (std::uint64_t seed : c.seeds) {
        PlotSeries s{"seed " + seed_tag(seed), {}, {}};
        std::vector<double> sups;
        for (int n : p.ns) {
            StabilityConfig cfg = p.base;
            cfg.n = n;
            cfg.seed = seed;
            const auto r = stability_experiment(w.mdp, w.features, w.grid, cfg);
            csv.row({std::to_string(seed), std::to_string(n), std::to_string(r.steps), std::to_string(r.k),
                     format_double(r.l), format_double(cfg.step_size), format_double(r.empirical_sup),
                     format_double(r.theoretical_bound), r.pass ? "true" : "false",
                     std::to_string(r.seeds_touching_replacement)});
            Json jr = to_json(r);
            jr["seed"] = seed;
            jr["stepSize"] = cfg.step_size;
            results.push_back(jr);
            s.x.push_back(n);
            s.y.push_back(r.empirical_sup);
            sups.push_back(r.empirical_sup);
            add_check(o, "stability bound n=" + std::to_string(n) + " seed=" + seed_tag(seed), r.pass,
                      "sup " + fmt_g(r.empirical_sup) + " <= 4kT/n " + fmt_g(r.theoretical_bound));
        }
        for (std::size_t i = 1; i < p.ns.size(); ++i) {
            if (p.ns[i] != 2 * p.ns[i - 1]) continue;
            const double ratio = sups[i - 1] > 0.0 ? sups[i] / sups[i - 1] : INFINITY;
            add_check(o,
                      "stability doubling n=" + std::to_string(p.ns[i - 1]) + "->" + std::to_string(p.ns[i]) +
                          " seed=" + seed_tag(seed),
                      ratio <= p.max_doubling_ratio, "ratio " + fmt_g(ratio) + " <= " + fmt_g(p.max_doubling_ratio));
        }
        series.push_back(std::move(s));
    }
    out.write("stability.csv", csv.str());
    PlotOptions opts;
    opts.title = "Empirical stability against n";
    opts.x_label = "n";
    opts.y_label = "sup |L - L'|";
    opts.log_x = true;
    out.write("stability.svg", render_line_plot(series, opts));
    o.summary = Json{{"results", results}};
}

// ---------------------------------------------------------------------------

struct AccelerationParams {
    AccelerationConfig cfg;
    std::string regime = "small";
    std::map<TargetKind, double> expected;
    double tolerance = 0.7;
    double min_separation = 1.0;
};

AccelerationParams acceleration_params(const RunConfig& c) {
    const Json& p = params_of(c);
    AccelerationParams out;
    out.cfg.taus = value_or<std::vector<double>>(p, "taus", out.cfg.taus);
    out.cfg.kinds.clear();
    for (const auto& k : value_or<std::vector<std::string>>(p, "kinds", {"expectation", "full"})) {
        try {
            out.cfg.kinds.push_back(target_kind_from_string(k));
        } catch (const ParameterError& e) {
            config_error(e.what());
        }
    }
    out.cfg.seeds = c.seeds;
    out.cfg.step_cap = value_or<std::int64_t>(p, "stepCap", out.cfg.step_cap);
    const std::string rule = value_or<std::string>(p, "stepRule", "tau-scaled");
    if (rule == "tau-scaled") {
        out.cfg.step_rule = StepRule::TauScaled;
    } else if (rule == "fixed") {
        out.cfg.step_rule = StepRule::Fixed;
    } else {
        config_error("stepRule must be tau-scaled or fixed");
    }
    if (p.contains("epsilon") && p.at("epsilon").is_number()) {
        out.cfg.epsilon = p.at("epsilon").get<double>();
        if (!(out.cfg.epsilon > 0.0 && out.cfg.epsilon <= 1.0)) config_error("epsilon must lie in (0, 1]");
    }
    out.regime = value_or<std::string>(p, "regime", "small");
    if (out.regime != "small" && out.regime != "large") config_error("regime must be small or large");
    out.expected[TargetKind::Expectation] = 4.0;
    out.expected[TargetKind::Full] = 2.0;
    if (p.contains("expectedSlopes")) {
        for (const auto& [k, v] : p.at("expectedSlopes").items()) out.expected[target_kind_from_string(k)] = v.get<double>();
    }
    out.tolerance = value_or<double>(p, "slopeTolerance", out.tolerance);
    out.min_separation = value_or<double>(p, "minSeparation", out.min_separation);
    for (double t : out.cfg.taus) {
        if (!(t > 0.0)) config_error("every tau must be positive");
    }
    if (out.cfg.step_cap < 1) config_error("stepCap must be positive");
    return out;
}

void run_acceleration(const RunConfig& c, Outputs& out, RunOutcome& o, int workers) {
    const auto problem = build_problem(c);
    auto p = acceleration_params(c);
    p.cfg.workers = workers;
    const auto result = acceleration_experiment(problem, p.cfg);
    CsvWriter csv({"target_kind", "tau", "seed", "steps", "avg_sq_grad", "reached", "step_size", "objective_gap",
                   "kappa", "sigma2"});
    Json cells = Json::array();
    for (auto cell : result.cells) {
        cell.regime = p.regime;
        csv.row({to_string(cell.kind), format_double(cell.tau), std::to_string(cell.seed), std::to_string(cell.steps),
                 format_double(cell.avg_sq_grad), cell.reached ? "true" : "false", format_double(cell.step_size),
                 format_double(cell.objective_gap), format_double(cell.kappa), format_double(cell.sigma2)});
        cells.push_back(to_json(cell));
    }
    Json slopes = Json::object();
    for (const auto& [kind, fit] : result.slopes) {
        slopes[to_string(kind)] = Json{{"slope", std::isfinite(fit.slope) ? Json(fit.slope) : Json(nullptr)},
                                       {"intercept", std::isfinite(fit.intercept) ? Json(fit.intercept) : Json(nullptr)},
                                       {"points", fit.points}};
    }
    if (p.regime == "small") {
        for (const auto& [kind, fit] : result.slopes) {
            const double want = p.expected.count(kind) ? p.expected.at(kind) : NAN;
            const bool ok = std::isfinite(fit.slope) && std::abs(fit.slope - want) <= p.tolerance;
            add_check(o, "slope " + to_string(kind), ok,
                      "slope " + fmt_g(fit.slope) + " over " + std::to_string(fit.points) + " taus, expected " +
                          fmt_g(want) + " +- " + fmt_g(p.tolerance));
        }
        if (result.slopes.count(TargetKind::Expectation) && result.slopes.count(TargetKind::Full)) {
            const double sep = result.slopes.at(TargetKind::Expectation).slope - result.slopes.at(TargetKind::Full).slope;
            add_check(o, "slope separation", std::isfinite(sep) && sep >= p.min_separation,
                      "expectation - full = " + fmt_g(sep) + " >= " + fmt_g(p.min_separation));
        }
    } else {
        const double tau_min = *std::min_element(p.cfg.taus.begin(), p.cfg.taus.end());
        for (const auto& cell : result.cells) {
            if (cell.kind != TargetKind::Full) continue;
            const double bound = 4.0 * cell.kappa * cell.kappa * cell.sigma2;
            const std::string tag = " tau=" + fmt_g(cell.tau) + " seed=" + seed_tag(cell.seed);
            if (cell.tau == tau_min) {
                add_check(o, "large-kappa stall" + tag, !cell.reached,
                          "avg sq grad " + fmt_g(cell.avg_sq_grad) + " after " + std::to_string(cell.steps) + " steps");
            }
            if (!cell.reached) {
                add_check(o, "large-kappa plateau" + tag, cell.avg_sq_grad <= bound,
                          "plateau " + fmt_g(cell.avg_sq_grad) + " <= 4 kappa^2 sigma^2 " + fmt_g(bound));
            }
        }
    }
    const std::string text = csv.str();
    out.write("complexity.csv", text);
    out.write("complexity.svg", plot_csv(parse_csv(text), PlotKind::Complexity));
    o.summary = Json{{"regime", p.regime},
                     {"epsilon", result.epsilon},
                     {"sigma2Init", result.sigma2_init},
                     {"kappaInit", result.kappa_init},
                     {"slopes", slopes},
                     {"cells", cells}};
}

// ---------------------------------------------------------------------------

void run_variance(const RunConfig& c, Outputs& out, RunOutcome& o) {
    const auto problem = build_problem(c);
    const Json& p = params_of(c);
    const int samples = value_or<int>(p, "samples", 4000);
    const int pilot_samples = value_or<int>(p, "pilotSamples", samples);
    const bool exact = value_or<bool>(p, "exact", false);
    if (!exact && (samples < 2 || pilot_samples < 2)) config_error("variance samples must be at least 2");
    CsvWriter csv({"seed", "targetKind", "sigma2", "sigmaHat2", "kappa", "epsilon", "bound", "pass"});
    Json results = Json::array();
    PlotSeries full{"full variance", {}, {}};
    PlotSeries bound{"mixture bound", {}, {}};
    for (std::uint64_t seed : c.seeds) {
        VarianceOptions opts;
        opts.n_samples = samples;
        opts.exact = exact;
        opts.seed = sub_seed(seed, 1);
        double eps = 0.0;
        if (p.contains("epsilon") && p.at("epsilon").is_number()) {
            eps = p.at("epsilon").get<double>();
        } else {
            VarianceOptions pilot = opts;
            pilot.n_samples = pilot_samples;
            pilot.seed = sub_seed(seed, 0);
            eps = default_epsilon(problem, pilot);
        }
        opts.epsilon = {eps};
        const auto est = estimate_gradient_variance(problem, opts);
        const bool pass = check_mixture_bound(est, est.full_variance);
        const std::string kappa = est.kappa_defined ? format_double(est.kappa) : "";
        const std::string ps = pass ? "true" : "false";
        csv.row({std::to_string(seed), "expectation", format_double(est.sigma2), format_double(est.sigma_hat2), kappa,
                 format_double(eps), format_double(est.mixture_bound), ps});
        csv.row({std::to_string(seed), "mu", format_double(est.sigma2), format_double(est.sigma_hat2), kappa,
                 format_double(eps), format_double(est.mixture_bound), ps});
        csv.row({std::to_string(seed), "full", format_double(est.full_variance), format_double(est.sigma_hat2), kappa,
                 format_double(eps), format_double(est.mixture_bound), ps});
        Json je = to_json(est);
        je["seed"] = seed;
        je["pass"] = pass;
        results.push_back(je);
        full.x.push_back(static_cast<double>(full.x.size()));
        full.y.push_back(est.full_variance);
        bound.x.push_back(static_cast<double>(bound.x.size()));
        bound.y.push_back(est.mixture_bound);
        add_check(o, "mixture bound seed=" + seed_tag(seed), pass,
                  "full " + fmt_g(est.full_variance) + " <= bound " + fmt_g(est.mixture_bound) + " + 3 SE (" +
                      fmt_g(est.bound_gap_se) + "), eps " + fmt_g(eps) + ", kappa " + fmt_g(est.kappa) +
                      ", jensen bound " + fmt_g(est.jensen_bound));
    }
    out.write("variance.csv", csv.str());
    PlotOptions opts;
    opts.title = "Full-target variance against the mixture bound";
    opts.x_label = "seed index";
    opts.y_label = "variance";
    out.write("variance.svg", render_line_plot({full, bound}, opts));
    o.summary = Json{{"results", results}};
}

// ---------------------------------------------------------------------------

struct FittedParams {
    FittedConfig fitted;
    SgdConfig sgd;
    Json init = Json::object();
    Json checks = Json::object();
    /// Only every traceStride-th step (plus the last) goes to the trace files.
    int trace_stride = 1;
};

SgdConfig sgd_from(const Json& j, SgdConfig base) {
    if (j.contains("stepSize")) {
        if (j.at("stepSize").is_array()) {
            base.steps = j.at("stepSize").get<std::vector<double>>();
        } else {
            base.steps = {value<double>(j, "stepSize")};
        }
    }
    base.max_steps = value_or<std::int64_t>(j, "steps", base.max_steps);
    try {
        base.validate();
    } catch (const ParameterError& e) {
        config_error(std::string("sgd: ") + e.what());
    }
    return base;
}

FittedParams fitted_params(const RunConfig& c) {
    const Json& p = params_of(c);
    FittedParams out;
    const Json fj = value_or<Json>(p, "fitted", Json::object());
    out.fitted.n_samples = value_or<int>(fj, "n", out.fitted.n_samples);
    out.fitted.target_freeze_period = value_or<int>(fj, "targetFreezePeriod", 0);
    out.fitted.outer_iters = value_or<int>(fj, "outerIters", out.fitted.outer_iters);
    try {
        out.fitted.validate();
    } catch (const ParameterError& e) {
        config_error(std::string("fitted: ") + e.what());
    }
    out.sgd = sgd_from(value_or<Json>(p, "sgd", Json::object()), out.sgd);
    out.init = value_or<Json>(p, "init", Json::object());
    out.checks = value_or<Json>(p, "checks", Json::object());
    out.trace_stride = value_or<int>(p, "traceStride", 1);
    if (out.trace_stride < 1) config_error("traceStride must be positive");
    return out;
}

ExperimentTrace thinned(const ExperimentTrace& trace, int stride) {
    if (stride == 1) return trace;
    ExperimentTrace out;
    for (std::size_t i = 0; i < trace.records.size(); ++i) {
        if (i % stride == 0 || i + 1 == trace.records.size()) out.records.push_back(trace.records[i]);
    }
    return out;
}

/// Two-series step-indexed parameter gradient norms.
std::string grad_norm_csv(const std::vector<std::pair<std::string, const ExperimentTrace*>>& traces, int stride) {
    std::vector<std::string> header{"step"};
    std::size_t len = 0;
    for (const auto& [name, t] : traces) {
        header.push_back(name);
        len = std::max(len, t->records.size());
    }
    CsvWriter w(header);
    for (std::size_t i = 0; i < len; ++i) {
        if (i % stride != 0 && i + 1 != len) continue;
        std::vector<std::string> row{std::to_string(i)};
        for (const auto& [name, t] : traces) row.push_back(i < t->records.size() ? format_double(t->records[i].grad_norm_theta) : "");
        w.row(row);
    }
    return w.str();
}

void run_fitted(const RunConfig& c, Outputs& out, RunOutcome& o, FittedMode mode) {
    const World w = build_world(c);
    const auto p = fitted_params(c);
    const auto& checks = p.checks;
    const double kl = w.grid.bins() * w.features.norm_bound();
    const std::string mode_name = mode == FittedMode::FZI ? "fzi" : "fqi";
    Json results = Json::array();
    for (std::uint64_t seed : c.seeds) {
        SgdConfig sgd = p.sgd;
        sgd.seed = seed;
        const auto init = build_init(p.init, w.grid, w.features, w.mdp.actions(), c.seed_offset);
        const auto run = mode == FittedMode::FZI ? neural_fzi(w.mdp, w.features, w.grid, p.fitted, sgd, init)
                                                 : neural_fqi(w.mdp, w.features, w.grid, p.fitted, sgd, init);
        const std::string tag = " seed=" + seed_tag(seed);
        out.write("trace_" + mode_name + "_s" + seed_tag(seed) + ".csv", trace_csv(thinned(run.trace, p.trace_stride)));
        out.json("model_" + mode_name + "_s" + seed_tag(seed) + ".json", to_json(run.model));
        Json jr{{"seed", seed}, {"steps", run.trace.records.size()}};
        double max_norm = 0.0;
        for (const auto& r : run.trace.records) max_norm = std::max(max_norm, r.grad_norm_theta);
        jr["maxGradNormTheta"] = max_norm;

        if (checks.contains("value")) {
            const Json& v = checks.at("value");
            const int s = value_or<int>(v, "state", 0);
            const int a = v.contains("action") ? value<int>(v, "action") : greedy_action(run.model, s);
            double target = 0.0;
            if (v.contains("oracle")) {
                if (value<std::string>(v, "oracle") != "value-iteration") config_error("value oracle must be value-iteration");
                target = classical_value_iteration(w.mdp, 1e-10).at(s, a);
            } else {
                target = value<double>(v, "target");
            }
            double tol = value<double>(v, "tolerance");
            if (value_or<bool>(v, "addProjectionError", false)) tol += w.grid.width() / 2.0;
            const double got = model_expectation(run.model, s, a);
            jr["value"] = got;
            jr["valueTarget"] = target;
            add_check(o, mode_name + " value" + tag, std::abs(got - target) <= tol,
                      "Q(" + std::to_string(s) + "," + std::to_string(a) + ") = " + fmt_g(got) + ", target " +
                          fmt_g(target) + " +- " + fmt_g(tol));
        }
        if (checks.contains("maxBinMass")) {
            const Json& v = checks.at("maxBinMass");
            const int s = value_or<int>(v, "state", 0);
            const int a = value_or<int>(v, "action", 0);
            const double m = softmax_probs(run.model, s, a).maxCoeff();
            jr["maxBinMass"] = m;
            add_check(o, mode_name + " max-bin mass" + tag, m >= value<double>(v, "min"),
                      "max mass " + fmt_g(m) + " >= " + fmt_g(value<double>(v, "min")));
        }
        if (checks.contains("rewardTV")) {
            const double limit = value<double>(checks.at("rewardTV"), "max");
            double worst = 0.0;
            for (int s = 0; s < w.mdp.states(); ++s) {
                for (int a = 0; a < w.mdp.actions(); ++a) {
                    const auto target = project_categorical(w.mdp.reward(s, a), w.grid);
                    const double tv = 0.5 * (softmax_probs(run.model, s, a) - target.mass()).cwiseAbs().sum();
                    worst = std::max(worst, tv);
                }
            }
            jr["rewardTV"] = worst;
            add_check(o, mode_name + " reward total variation" + tag, worst <= limit,
                      "max TV " + fmt_g(worst) + " <= " + fmt_g(limit));
        }
        if (checks.contains("rewardMean")) {
            const double tol = value<double>(checks.at("rewardMean"), "tolerance");
            double worst = 0.0;
            for (int s = 0; s < w.mdp.states(); ++s) {
                for (int a = 0; a < w.mdp.actions(); ++a) {
                    worst = std::max(worst, std::abs(model_expectation(run.model, s, a) - w.mdp.expected_reward(s, a)));
                }
            }
            jr["rewardMeanError"] = worst;
            add_check(o, mode_name + " reward mean" + tag, worst <= tol, "max error " + fmt_g(worst) + " <= " + fmt_g(tol));
        }
        if (value_or<bool>(checks, "gradBound", false)) {
            add_check(o, mode_name + " gradient bound" + tag, max_norm <= kl,
                      "max grad norm " + fmt_g(max_norm) + " <= k*l " + fmt_g(kl) + " over " +
                          std::to_string(run.trace.records.size()) + " steps");
        }
        if (checks.contains("compareFqi")) {
            if (mode != FittedMode::FZI) config_error("compareFqi applies to fzi runs");
            const Json& cmp = checks.at("compareFqi");
            SgdConfig fsgd = sgd_from(value_or<Json>(cmp, "sgd", Json::object()), p.sgd);
            fsgd.seed = seed;
            const auto fqi = neural_fqi(w.mdp, w.features, w.grid, p.fitted, fsgd, init);
            out.write("trace_fqi_s" + seed_tag(seed) + ".csv", trace_csv(fqi.trace));
            const std::string gcsv = grad_norm_csv({{"fzi", &run.trace}, {"fqi", &fqi.trace}}, p.trace_stride);
            out.write("grad_norms_s" + seed_tag(seed) + ".csv", gcsv);
            out.write("grad_norms_s" + seed_tag(seed) + ".svg", plot_csv(parse_csv(gcsv), PlotKind::GradNorms));

            // At initialisation, against oracle targets: Q* for the squared
            // loss and the projected Dirac at Q* for the categorical loss.
            const auto q = classical_value_iteration(w.mdp, 1e-10);
            CsvWriter icsv({"s", "a", "target", "fqi_grad_norm", "fzi_grad_norm", "ratio"});
            double min_ratio = INFINITY;
            for (int s = 0; s < w.mdp.states(); ++s) {
                for (int a = 0; a < w.mdp.actions(); ++a) {
                    const double y = q.at(s, a);
                    const RewardAtom atom{y, 1.0};
                    const TargetHistogram target(project_categorical(std::span(&atom, 1), w.grid));
                    const double gq = row_norm_sum(classical_squared_loss_gradient(y, init, s, a));
                    const double gz = row_norm_sum(categorical_loss_gradient(target, init, s, a));
                    const double ratio = gq / gz;
                    min_ratio = std::min(min_ratio, ratio);
                    icsv.row({std::to_string(s), std::to_string(a), format_double(y), format_double(gq),
                              format_double(gz), format_double(ratio)});
                }
            }
            out.write("init_compare_s" + seed_tag(seed) + ".csv", icsv.str());
            const double need = value_or<double>(cmp, "minRatio", 10.0);
            jr["initRatio"] = min_ratio;
            add_check(o, "fqi/fzi gradient ratio at init" + tag, min_ratio >= need,
                      "min ratio " + fmt_g(min_ratio) + " >= " + fmt_g(need));
            double fzi_first = run.trace.records.empty() ? 0.0 : run.trace.records.front().grad_norm_theta;
            double fqi_first = fqi.trace.records.empty() ? 0.0 : fqi.trace.records.front().grad_norm_theta;
            jr["firstStepRatio"] = fzi_first > 0.0 ? fqi_first / fzi_first : INFINITY;
        } else {
            const std::string gcsv = grad_norm_csv({{mode_name, &run.trace}}, p.trace_stride);
            out.write("grad_norms_s" + seed_tag(seed) + ".csv", gcsv);
            out.write("grad_norms_s" + seed_tag(seed) + ".svg", plot_csv(parse_csv(gcsv), PlotKind::GradNorms));
        }
        results.push_back(jr);
    }
    o.summary = Json{{"mode", mode_name}, {"results", results}};
}

} // namespace

// ---------------------------------------------------------------------------

std::string config_hash(const Json& config) { return fnv1a_hex(config.dump()); }

std::int64_t seed_offset_from_env() {
    const char* v = std::getenv("FZI_LAB_SEED_OFFSET");
    if (!v || !*v) return 0;
    char* end = nullptr;
    errno = 0;
    const long long x = std::strtoll(v, &end, 10);
    if (errno != 0 || *end != '\0') throw ConfigError(std::string("FZI_LAB_SEED_OFFSET is not an integer: '") + v + "'");
    return x;
}

RunConfig parse_run_config(const Json& document, const std::string& base_dir, std::int64_t seed_offset) {
    if (!document.is_object()) config_error("config must be a JSON object");
    Json config = document;
    std::int64_t offset = seed_offset;
    std::string dir = base_dir;
    if (document.contains("manifest")) {
        config = section(document, "config");
        offset = value<std::int64_t>(document, "seedOffset");
        dir = value_or<std::string>(document, "baseDir", base_dir);
    }
    if (!config.is_object()) config_error("config must be a JSON object");
    if (value_or<int>(config, "schemaVersion", -1) != kSchemaVersion) {
        config_error("config needs \"schemaVersion\": " + std::to_string(kSchemaVersion));
    }
    RunConfig rc;
    rc.config = config;
    rc.experiment = value<std::string>(config, "experiment");
    if (std::find(std::begin(kExperiments), std::end(kExperiments), rc.experiment) == std::end(kExperiments)) {
        config_error("unknown experiment '" + rc.experiment + "'");
    }
    const auto& seeds = section(config, "seeds");
    if (!seeds.is_array() || seeds.empty()) config_error("seeds must be a nonempty array");
    for (const auto& s : seeds) {
        if (!s.is_number_integer() || s.get<std::int64_t>() < 0) config_error("seeds must be nonnegative integers");
        rc.seeds.push_back(shift(s.get<std::uint64_t>(), offset));
    }
    rc.seed_offset = offset;
    rc.base_dir = dir;
    return rc;
}

RunConfig load_run_config(const std::string& path, std::int64_t seed_offset) {
    const Json doc = read_json_file(path);
    return parse_run_config(doc, fs::absolute(path).parent_path().string(), seed_offset);
}

World build_world(const RunConfig& config) {
    Environment env = build_environment(config);
    FeatureMap features = build_features(config, env.mdp.states(), env.features);
    SupportGrid grid = build_grid(config, env.grid);
    return {std::move(env.mdp), std::move(features), grid};
}

void validate_run_config(const RunConfig& c) {
    try {
        const std::string& e = c.experiment;
        if (e == "probe") {
            probe_params(c);
        } else if (e == "contraction") {
            const World w = build_world(c);
            contraction_params(c, w.mdp);
        } else if (e == "stability") {
            const World w = build_world(c);
            stability_params(c, w);
        } else if (e == "acceleration") {
            validate(build_problem(c));
            acceleration_params(c);
        } else if (e == "variance") {
            validate(build_problem(c));
        } else {
            const World w = build_world(c);
            fitted_params(c);
        }
    } catch (const ConfigError&) {
        throw;
    } catch (const Error& err) {
        throw ConfigError(err.what());
    }
}

RunOutcome run_experiment(const RunConfig& c, const std::string& out_dir, int workers) {
    validate_run_config(c);
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) config_error("cannot create output directory '" + out_dir + "': " + ec.message());
    RunOutcome o;
    o.experiment = c.experiment;
    Outputs out(out_dir, o);
    const std::string& e = c.experiment;
    if (e == "probe") {
        run_probe(c, out, o);
    } else if (e == "contraction") {
        run_contraction(c, out, o);
    } else if (e == "stability") {
        run_stability(c, out, o);
    } else if (e == "acceleration") {
        run_acceleration(c, out, o, workers);
    } else if (e == "variance") {
        run_variance(c, out, o);
    } else if (e == "fqi") {
        run_fitted(c, out, o, FittedMode::FQI);
    } else {
        run_fitted(c, out, o, FittedMode::FZI);
    }

    Json checks = Json::array();
    for (const auto& ch : o.checks) checks.push_back(Json{{"name", ch.name}, {"pass", ch.pass}, {"detail", ch.detail}});
    o.summary["checks"] = checks;
    o.summary["allPass"] = o.all_pass();
    out.json("summary.json", o.summary);

    Json files = Json::array();
    for (const auto& f : o.files) files.push_back(Json{{"file", f}, {"fnv1a", fnv1a_hex(read_file(fs::path(out_dir) / f))}});
    Json seeds = Json::array();
    for (auto s : c.seeds) seeds.push_back(s);
    const Json manifest{{"manifest", kSchemaVersion},
                        {"libraryVersion", kLibraryVersion},
                        {"experiment", c.experiment},
                        {"configHash", config_hash(c.config)},
                        {"seedOffset", c.seed_offset},
                        {"seeds", seeds},
                        {"baseDir", c.base_dir},
                        {"config", c.config},
                        {"outputs", files}};
    write_json_file((fs::path(out_dir) / "manifest.json").string(), manifest);
    return o;
}

} // namespace fzilab
