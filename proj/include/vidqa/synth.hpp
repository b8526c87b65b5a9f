#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vidqa/text.hpp"
#include "vidqa/video.hpp"

namespace vidqa {

// Synthetic scenes: one colored shape (the entity) follows one motion pattern
// (the action). Entity classes are single-noun shapes, action classes single
// verbs, so lexicon extraction and prompt templates line up with the labels.

std::vector<std::string> synth_entity_names(std::size_t n);  // 2..8
std::vector<std::string> synth_action_names(std::size_t n);  // 2..6

struct SynthConfig {
  std::size_t num_videos = 64;
  std::size_t num_entities = 4;
  std::size_t num_actions = 4;
  std::size_t frames = 32;
  std::size_t frame_size = 32;  // square frames, >= 16
};

struct CaptionPair {
  std::string video_id;
  std::string kind;  // "entity" | "action"
  std::string caption;
};

struct SynthDataset {
  SynthConfig config;
  std::uint64_t seed = 0;
  std::vector<QASample> samples;       // one per video
  std::vector<CaptionPair> captions;   // two per video
  std::vector<std::size_t> entity_of;  // per video
  std::vector<std::size_t> action_of;
};

std::string synth_video_id(std::size_t index);

// Deterministic render of video `index`; depends only on (config, seed,
// index, entity, action).
VideoTensor render_synth_video(const SynthConfig& config, std::uint64_t seed,
                               std::size_t index, std::size_t entity,
                               std::size_t action);

// Builds labels, questions, candidates and captions. Entity/action classes
// cycle through a balanced grid: with 64 videos and a 4x4 grid every pair
// appears exactly 4 times. Videos themselves come from render_synth_video.
SynthDataset generate_synth_dataset(const SynthConfig& config, std::uint64_t seed);

// Caption wording matches the default prompt templates on purpose: the
// pretrained prompter then scores template prompts in-distribution.
extern const char* const kEntityCaptionTemplate;
extern const char* const kActionCaptionTemplate;
extern const char* const kDefaultEntityPromptTemplate;
extern const char* const kDefaultActionPromptTemplate;

}  // namespace vidqa
