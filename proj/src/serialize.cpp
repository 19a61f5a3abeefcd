#include "fzilab/serialize.hpp"

#include <fstream>
#include <sstream>

namespace fzilab {

namespace {

const Json& field(const Json& j, const char* key) {
    if (!j.is_object() || !j.contains(key)) throw ConfigError(std::string("missing field '") + key + "'");
    return j.at(key);
}

template <typename T>
T get(const Json& j, const char* key) {
    try {
        return field(j, key).get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("field '") + key + "': " + e.what());
    }
}

Json vector_json(const Eigen::VectorXd& v) {
    Json out = Json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v[i]);
    return out;
}

Eigen::VectorXd vector_from(const Json& j) {
    if (!j.is_array()) throw ConfigError("expected an array of numbers");
    Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
    for (std::size_t i = 0; i < j.size(); ++i) {
        if (!j[i].is_number()) throw ConfigError("expected an array of numbers");
        v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
    }
    return v;
}

} // namespace

Json to_json(const SupportGrid& grid) { return Json{{"l0", grid.lower()}, {"lk", grid.upper()}, {"k", grid.bins()}}; }

SupportGrid grid_from_json(const Json& j) {
    return {get<double>(j, "l0"), get<double>(j, "lk"), get<int>(j, "k")};
}

Json to_json(const FeatureMap& features) {
    Json vecs = Json::array();
    for (const auto& v : features.all()) vecs.push_back(vector_json(v));
    return Json{{"normBound", features.norm_bound()}, {"vectors", vecs}};
}

FeatureMap features_from_json(const Json& j) {
    std::vector<Eigen::VectorXd> vecs;
    for (const auto& v : field(j, "vectors")) vecs.push_back(vector_from(v));
    return {std::move(vecs), get<double>(j, "normBound")};
}

Json to_json(const TabularMDP& mdp) {
    Json transition = Json::array();
    Json reward = Json::array();
    for (int s = 0; s < mdp.states(); ++s) {
        Json ts = Json::array();
        Json rs = Json::array();
        for (int a = 0; a < mdp.actions(); ++a) {
            ts.push_back(mdp.transition(s, a));
            Json atoms = Json::array();
            for (const auto& r : mdp.reward(s, a)) atoms.push_back(Json{{"value", r.value}, {"prob", r.prob}});
            rs.push_back(atoms);
        }
        transition.push_back(ts);
        reward.push_back(rs);
    }
    return Json{{"gamma", mdp.gamma()}, {"transition", transition}, {"reward", reward}};
}

TabularMDP mdp_from_json(const Json& j) {
    try {
        auto transition = field(j, "transition").get<std::vector<std::vector<std::vector<double>>>>();
        std::vector<std::vector<RewardDistribution>> reward;
        for (const auto& rs : field(j, "reward")) {
            std::vector<RewardDistribution> row;
            for (const auto& atoms : rs) {
                RewardDistribution d;
                for (const auto& a : atoms) d.push_back({get<double>(a, "value"), get<double>(a, "prob")});
                row.push_back(std::move(d));
            }
            reward.push_back(std::move(row));
        }
        return {std::move(transition), std::move(reward), get<double>(j, "gamma")};
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("mdp: ") + e.what());
    }
}

Json to_json(const World& world) {
    return Json{{"mdp", to_json(world.mdp)}, {"features", to_json(world.features)}, {"grid", to_json(world.grid)}};
}

World world_from_json(const Json& j) {
    return {mdp_from_json(field(j, "mdp")), features_from_json(field(j, "features")), grid_from_json(field(j, "grid"))};
}

Json to_json(const CategoricalModel& model) {
    Json theta = Json::array();
    for (const auto& block : model.theta()) {
        Json rows = Json::array();
        for (Eigen::Index i = 0; i < block.rows(); ++i) rows.push_back(vector_json(block.row(i).transpose()));
        theta.push_back(rows);
    }
    return Json{{"grid", to_json(model.grid())}, {"features", to_json(model.features())}, {"theta", theta}};
}

CategoricalModel model_from_json(const Json& j) {
    const auto grid = grid_from_json(field(j, "grid"));
    auto features = features_from_json(field(j, "features"));
    std::vector<Eigen::MatrixXd> theta;
    for (const auto& rows : field(j, "theta")) {
        Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()), features.dim());
        for (std::size_t i = 0; i < rows.size(); ++i) {
            const auto v = vector_from(rows[i]);
            if (v.size() != features.dim()) throw ShapeError("theta row length does not match feature dimension");
            m.row(static_cast<Eigen::Index>(i)) = v.transpose();
        }
        theta.push_back(std::move(m));
    }
    return {grid, std::move(features), std::move(theta)};
}

Json to_json(const ReturnDistributionTable& table) {
    Json mass = Json::array();
    for (int s = 0; s < table.states(); ++s) {
        Json row = Json::array();
        for (int a = 0; a < table.actions(); ++a) row.push_back(vector_json(table.at(s, a).mass()));
        mass.push_back(row);
    }
    return Json{{"grid", to_json(table.grid())}, {"mass", mass}};
}

ReturnDistributionTable table_from_json(const Json& j) {
    const auto grid = grid_from_json(field(j, "grid"));
    std::vector<std::vector<CategoricalDistribution>> dists;
    for (const auto& row : field(j, "mass")) {
        std::vector<CategoricalDistribution> r;
        for (const auto& m : row) r.emplace_back(grid, vector_from(m), kArithTol);
        dists.push_back(std::move(r));
    }
    return {grid, std::move(dists)};
}

Json to_json(const LossProbeReport& r) {
    return Json{{"k", r.k},
                {"l", r.l},
                {"samples", r.samples},
                {"maxGradNorm", r.max_grad_norm},
                {"lipschitzBound", r.lipschitz_bound},
                {"maxCurvatureRatio", r.max_curvature_ratio},
                {"smoothnessBound", r.smoothness_bound},
                {"convexityViolations", r.convexity_violations},
                {"skippedPairs", r.skipped_pairs}};
}

Json to_json(const VarianceEstimate& e) {
    return Json{{"sigma2", e.sigma2},
                {"sigmaHat2", e.sigma_hat2},
                {"kappa", e.kappa_defined ? Json(e.kappa) : Json(nullptr)},
                {"fullVariance", e.full_variance},
                {"nSamples", e.n_samples},
                {"epsilon", e.epsilon},
                {"mixtureBound", e.mixture_bound},
                {"jensenBound", e.jensen_bound},
                {"sigma2SE", e.sigma2_se},
                {"sigmaHat2SE", e.sigma_hat2_se},
                {"fullVarianceSE", e.full_variance_se},
                {"boundGapSE", e.bound_gap_se}};
}

Json to_json(const StabilityResult& r) {
    return Json{{"k", r.k},
                {"l", r.l},
                {"T", r.steps},
                {"n", r.n},
                {"empiricalSup", r.empirical_sup},
                {"theoreticalBound", r.theoretical_bound},
                {"pass", r.pass},
                {"seedsTouchingReplacement", r.seeds_touching_replacement}};
}

Json to_json(const StationarityResult& r) {
    return Json{{"tau", r.tau},
                {"targetKind", to_string(r.kind)},
                {"seed", r.seed},
                {"stepsUsed", r.steps},
                {"avgSqGradNorm", r.avg_sq_grad},
                {"reachedTau", r.reached},
                {"kappaRegime", r.regime},
                {"stepSize", r.step_size},
                {"objectiveGap", r.objective_gap},
                {"kappa", r.kappa},
                {"sigma2", r.sigma2}};
}

Json to_json(const ContractionReport& r) {
    return Json{{"metric", to_string(r.metric)}, {"gamma", r.gamma},    {"seed", r.seed},
                {"maxRatio", r.max_ratio},       {"rate", r.rate},      {"slack", r.slack},
                {"pairs", r.samples.size()},     {"skipped", r.skipped}, {"pass", r.pass()}};
}

Json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    try {
        return Json::parse(ss.str());
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("'" + path + "' is not valid JSON: " + e.what());
    }
}

void write_json_file(const std::string& path, const Json& j) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write '" + path + "'");
    out << j.dump(2) << '\n';
}

} // namespace fzilab
