#pragma once

#include <string>
#include <vector>

#include <json.hpp>

namespace vidqa {

// The complete legal key set with desk-scale defaults; validation walks this
// tree, so a key absent here is unknown everywhere.
nlohmann::json default_run_config();

// Rejects keys missing from the default tree and values whose JSON type
// disagrees with the default.
void validate_config(const nlohmann::json& cfg);

// Applies one dotted-path assignment such as "--train.epochs=5" (the leading
// dashes are optional). Values parse as JSON when possible and fall back to
// plain strings. Assignments without '=' are usage errors.
void apply_override(nlohmann::json& cfg, const std::string& assignment);

// defaults < file < overrides. An empty path skips the file layer.
nlohmann::json resolve_config(const std::string& config_path,
                              const std::vector<std::string>& overrides);

// 16 hex digits over the canonical dump, excluding keys that do not change
// results: the output root, the seed (named in the directory itself) and the
// inspect query.
std::string config_hash(const nlohmann::json& cfg);

// <out>/<config hash>-s<seed>
std::string run_dir_for(const nlohmann::json& cfg);

}  // namespace vidqa
