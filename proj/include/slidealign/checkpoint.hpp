#pragma once

#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "slidealign/param.hpp"

namespace sa {

// Versioned binary container of named parameter tensors plus a JSON metadata
// blob (model config, training provenance). Tensor payloads are raw IEEE-754
// doubles in little-endian byte order, so save/load round-trips bit-exactly.
struct Checkpoint {
    nlohmann::json meta;
    std::vector<std::pair<std::string, Tensor>> tensors;
};

void save_checkpoint(const std::string& path, const nlohmann::json& meta, const ParamStore& store);

Checkpoint load_checkpoint(const std::string& path);

// Copy every checkpoint tensor whose name starts with `prefix` into the
// matching store parameter. Missing parameters or shape mismatches are
// errors. Returns the number of tensors applied.
int apply_checkpoint(const Checkpoint& ck, ParamStore& store, std::string_view prefix = "");

// Full restore: every store parameter must be covered by the checkpoint.
void restore_checkpoint(const Checkpoint& ck, ParamStore& store);

}  // namespace sa
