#pragma once

#include <string>

#include "json.hpp"
#include "lrppo/mlp.hpp"

namespace lrppo::ad {

// Versioned JSON container for one parameter set: layer shapes, weights,
// optimizer moments, step counter. Lossless (doubles round-trip exactly).
nlohmann::json params_to_json(const ScorerParams& params);
ScorerParams params_from_json(const nlohmann::json& j);

}  // namespace lrppo::ad
