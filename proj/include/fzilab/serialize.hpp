#pragma once

#include <string>

#include <json.hpp>

#include "fzilab/bellman.hpp"
#include "fzilab/core.hpp"
#include "fzilab/decomposition.hpp"
#include "fzilab/fitted.hpp"
#include "fzilab/losses.hpp"
#include "fzilab/model.hpp"

namespace fzilab {

using Json = nlohmann::ordered_json;

// Grid: {"l0", "lk", "k"}.
Json to_json(const SupportGrid& grid);
SupportGrid grid_from_json(const Json& j);

// Features: {"normBound", "vectors": [[...], ...]}.
Json to_json(const FeatureMap& features);
FeatureMap features_from_json(const Json& j);

// MDP: {"gamma", "transition": [s][a][s'], "reward": [s][a] -> [{"value","prob"}]}.
Json to_json(const TabularMDP& mdp);
TabularMDP mdp_from_json(const Json& j);

/// {"mdp", "features", "grid"} document.
struct World {
    TabularMDP mdp;
    FeatureMap features;
    SupportGrid grid;
};
Json to_json(const World& world);
World world_from_json(const Json& j);

// Checkpoint: {"grid", "features", "theta": [a][i][j]}.
Json to_json(const CategoricalModel& model);
CategoricalModel model_from_json(const Json& j);

// Table: {"grid", "mass": [s][a][i]}.
Json to_json(const ReturnDistributionTable& table);
ReturnDistributionTable table_from_json(const Json& j);

Json to_json(const LossProbeReport& r);
Json to_json(const VarianceEstimate& e);
Json to_json(const StabilityResult& r);
Json to_json(const StationarityResult& r);
Json to_json(const ContractionReport& r);

/// Reads and parses a JSON file; throws ConfigError on I/O or syntax errors.
Json read_json_file(const std::string& path);
/// Writes j.dump(2) plus a trailing newline.
void write_json_file(const std::string& path, const Json& j);

} // namespace fzilab
