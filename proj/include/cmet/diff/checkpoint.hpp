#pragma once

#include <map>
#include <string>

#include <json.hpp>

#include "cmet/diff/parameters.hpp"

namespace cmet::diff {

// Binary layout (little-endian):
//   "METCKPT1", u32 version, u32 entry count,
//   per entry: u32 name length, name bytes, u32 rank, u64 dims[rank], u64 offset,
//   u64 total element count, f64 data[total].
// Metadata (model kind, config, step, seed, ...) lives in "<path>.json".

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Writes parameter values; with `with_optimizer`, Adam moments are stored as
/// extra entries "<name>@m" and "<name>@v". metadata["step"] is set from
/// store.step.
void save_checkpoint(const std::string& path, const ParameterStore& store, nlohmann::json metadata,
                     bool with_optimizer = false);

/// Raw entries by name.
std::map<std::string, Tensor> read_checkpoint(const std::string& path);

nlohmann::json read_checkpoint_metadata(const std::string& path);

/// Loads values (and moments when present) into a store with the same names
/// and shapes; restores store.step from the metadata. Throws BadFormat or
/// ShapeMismatch.
void load_checkpoint(const std::string& path, ParameterStore& store);

}  // namespace cmet::diff
