#pragma once

#include <json.hpp>

#include "sgg/model.hpp"

namespace sgg {

// Canonical JSON echo of a training configuration, embedded in checkpoints
// and command manifests so a run can be reproduced from either.
nlohmann::ordered_json config_to_json(const TrainConfig& c);
TrainConfig config_from_json(const nlohmann::ordered_json& j);

} // namespace sgg
