#pragma once

#include "json.hpp"
#include "spat/numkit.hpp"

namespace spat::numkit {

// Checkpoint schema for a single dense stack:
//   {"dims": [in, h1, ..., out], "activations": ["relu", ...], "weights": [flat params]}
// The flat weight array is the net's parameter vector (per layer: row-major
// out x in weight block, then bias block). JSON numbers round-trip doubles
// exactly, so save/load is bit-exact.
nlohmann::json net_to_json(const DenseNet& net);
DenseNet net_from_json(const nlohmann::json& j);

}  // namespace spat::numkit
