#include "vidqa/config.hpp"

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include "vidqa/errors.hpp"

namespace vidqa {

nlohmann::json default_run_config() {
  using nlohmann::json;
  json video = {{"layers", 2},      {"dim", 32},        {"heads", 4},
                {"patch", 16},      {"max_frames", 4},  {"max_patches", 4},
                {"dropout", 0.0}};
  json text = {{"layers", 2},       {"dim", 32},        {"heads", 4},
               {"max_seq_len", 32}, {"dropout", 0.0}};
  json reasoner_video = video;
  reasoner_video["max_frames"] = 8;

  return json{
      {"seed", 7},
      {"out", "runs"},
      {"data",
       {{"num_videos", 64},
        {"num_entities", 4},
        {"num_actions", 4},
        {"frames", 8},
        {"frame_size", 32}}},
      {"lexicon",
       {{"verbs", "data/verbs.txt"},
        {"nouns", "data/nouns.txt"},
        {"top_k", 1000}}},
      {"templates",
       {{"entity", json::array({"A video of a {}."})},
        {"action", json::array({"A video contains the action of {}."})}}},
      {"prompter",
       {{"video", video},
        {"text", text},
        {"proj_dim", 32},
        {"normalize", true},
        {"share_towers", false},
        {"sample_frames", 4},
        {"input_size", 32},
        {"crop_size", 24},
        {"temporal_crops", 4},
        {"spatial_crops", 4},
        {"mask_lo", 0.3},
        {"mask_hi", 0.5},
        {"filter_threshold", 0.1}}},
      {"pretrain",
       {{"batch_size", 8},
        {"epochs", 20},
        {"base_lr", 3e-3},
        {"clip_norm", 1.0},
        {"weight_decay", 0.001}}},
      {"reasoner",
       {{"video", reasoner_video},
        {"text", text},
        {"fusion_layers", 2},
        {"fusion_heads", 4},
        {"fusion_dropout", 0.0},
        {"answer_mode", "mc"},
        {"loss",
         {{"mode", "gated"},
          {"alpha", 0.5},
          {"gate_hidden", 0},
          {"gate_dropout", 0.1}}}}},
      {"train",
       {{"batch_size", 8},
        {"epochs", 60},
        {"base_lr", 1e-2},
        {"clip_norm", 1.0},
        {"weight_decay", 0.001},
        {"holdout_fraction", 0.25},
        {"max_missing_fraction", 0.5}}},
      {"query", {{"video_id", ""}, {"top_k", 5}, {"kind", "both"}}},
  };
}

namespace {

std::string kind_name(const nlohmann::json& v) {
  if (v.is_number()) return "number";
  return v.type_name();
}

void check_against(const nlohmann::json& value, const nlohmann::json& schema,
                   const std::string& path) {
  if (schema.is_object()) {
    if (!value.is_object())
      throw ConfigError("config key " + path + " must be an object");
    for (const auto& [key, sub] : value.items()) {
      std::string sub_path = path.empty() ? key : path + "." + key;
      auto it = schema.find(key);
      if (it == schema.end())
        throw ConfigError("unknown config key: " + sub_path);
      check_against(sub, *it, sub_path);
    }
    return;
  }
  if (schema.is_number() && value.is_number()) return;
  if (schema.type() == value.type()) {
    if (schema.is_array() && !schema.empty()) {
      for (const auto& elem : value)
        if (elem.type() != schema.front().type() &&
            !(elem.is_number() && schema.front().is_number()))
          throw ConfigError("config key " + path + " has mixed element types");
    }
    return;
  }
  throw ConfigError("config key " + path + " must be a " + kind_name(schema) +
                    ", got " + kind_name(value));
}

void deep_merge(nlohmann::json& base, const nlohmann::json& layer) {
  for (const auto& [key, sub] : layer.items()) {
    if (sub.is_object() && base.contains(key) && base[key].is_object())
      deep_merge(base[key], sub);
    else
      base[key] = sub;
  }
}

}  // namespace

void validate_config(const nlohmann::json& cfg) {
  check_against(cfg, default_run_config(), "");
}

void apply_override(nlohmann::json& cfg, const std::string& assignment) {
  std::string body = assignment;
  if (body.rfind("--", 0) == 0) body = body.substr(2);
  std::size_t eq = body.find('=');
  if (eq == std::string::npos || eq == 0)
    throw std::invalid_argument("override must look like key=value: " +
                                assignment);
  std::string key = body.substr(0, eq);
  std::string raw = body.substr(eq + 1);

  nlohmann::json value;
  try {
    value = nlohmann::json::parse(raw);
  } catch (const nlohmann::json::parse_error&) {
    value = raw;
  }

  // Walk the dotted path, creating nothing: the key must already exist.
  nlohmann::json* node = &cfg;
  std::string walked;
  std::size_t start = 0;
  while (true) {
    std::size_t dot = key.find('.', start);
    std::string part = key.substr(start, dot - start);
    walked = walked.empty() ? part : walked + "." + part;
    if (!node->is_object() || !node->contains(part))
      throw ConfigError("unknown config key: " + walked);
    node = &(*node)[part];
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  if (node->is_object())
    throw ConfigError("config key " + key + " is a section, not a value");
  if (node->is_number() && !value.is_number() && value.is_string()) {
    // A bare numeric string has already parsed as a number above; anything
    // else left as a string cannot fill a numeric slot.
    throw ConfigError("config key " + key + " must be a number, got: " + raw);
  }
  *node = value;
  check_against(cfg, default_run_config(), "");
}

nlohmann::json resolve_config(const std::string& config_path,
                              const std::vector<std::string>& overrides) {
  nlohmann::json cfg = default_run_config();
  if (!config_path.empty()) {
    std::ifstream in(config_path, std::ios::binary);
    if (!in) throw ConfigError("cannot open config file: " + config_path);
    nlohmann::json file_cfg;
    try {
      file_cfg = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
      throw ConfigError("config file " + config_path + ": " + e.what());
    }
    check_against(file_cfg, default_run_config(), "");
    deep_merge(cfg, file_cfg);
  }
  for (const std::string& assignment : overrides) apply_override(cfg, assignment);
  validate_config(cfg);
  return cfg;
}

std::string config_hash(const nlohmann::json& cfg) {
  nlohmann::json hashed = cfg;
  hashed.erase("out");
  hashed.erase("seed");
  hashed.erase("query");
  std::string dump = hashed.dump();
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : dump) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string run_dir_for(const nlohmann::json& cfg) {
  return cfg.at("out").get<std::string>() + "/" + config_hash(cfg) + "-s" +
         std::to_string(cfg.at("seed").get<std::uint64_t>());
}

}  // namespace vidqa
