#pragma once

#include <optional>
#include <string>

#include "vaeatk/hiervae.hpp"
#include "vaeatk/vae.hpp"

namespace vaeatk {

// Versioned model container: a magic line, a JSON header (format tag,
// architecture, caller metadata, tensor directory) and the raw little-endian
// double payload of every named parameter. Parameter round trips are
// bit-exact.
inline constexpr const char* kCheckpointFormat = "vaeatk.checkpoint.v1";

void save_checkpoint(const std::string& path, const VaeModel& model,
                     const std::string& meta_json = "{}");
void save_checkpoint(const std::string& path, const HierarchicalVae& model,
                     const std::string& meta_json = "{}");

struct LoadedCheckpoint {
  std::string kind;  // "vae" | "hier"
  std::optional<VaeModel> vae;
  std::optional<HierarchicalVae> hier;
  std::string meta_json;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace vaeatk
