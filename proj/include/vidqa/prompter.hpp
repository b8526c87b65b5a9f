#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "vidqa/encoders.hpp"
#include "vidqa/text.hpp"
#include "vidqa/video.hpp"

namespace vidqa {

struct DualEncoderConfig {
  VideoEncoderConfig video;
  TextEncoderConfig text;
  std::size_t proj_dim = 32;
  // Cosine rather than the raw dot keeps logits bounded for the
  // temperature-scaled softmax; switchable to study the plain-dot variant.
  bool normalize = true;
};

// Video tower, text tower and projection head trained jointly with the
// contrastive objective.
class DualEncoder {
 public:
  DualEncoder(ParamMap& params, const std::string& prefix,
              const DualEncoderConfig& config, const RngStream& master);
  // Encoder summary vectors, [1 x d], before projection.
  Tensor video_cls(const VideoTensor& video, const ForwardCtx& ctx) const;
  Tensor text_cls(const std::vector<int>& ids, const ForwardCtx& ctx) const;
  const ProjectionHead& head() const { return head_; }
  const DualEncoderConfig& config() const { return config_; }

 private:
  DualEncoderConfig config_;
  VideoEncoder video_;
  TextEncoder text_;
  ProjectionHead head_;
};

// Symmetric contrastive loss from a [B x B] similarity matrix whose row i /
// column i are positives: sum over rows of -log softmax diagonals, computed
// in both directions and averaged. inv_tau is a [1] tensor so the
// temperature learns with everything else.
Tensor vtc_from_similarity(const Tensor& S, const Tensor& inv_tau);

// Projects and matches batches of encoder summaries ([1 x d] rows each,
// positives aligned by position), then applies vtc_from_similarity. B >= 2.
Tensor vtc_loss(const std::vector<Tensor>& video_cls,
                const std::vector<Tensor>& text_cls, const ProjectionHead& head,
                bool normalize);

struct PrompterConfig {
  DualEncoderConfig encoder;
  bool share_towers = false;
  std::size_t sample_frames = 4;
  std::size_t input_size = 32;    // crops are resized back to this
  std::size_t crop_size = 24;
  std::size_t temporal_crops = 4;  // per video, action branch
  std::size_t spatial_crops = 4;   // per video, entity branch
  double mask_lo = 0.3;            // pretraining patch-mask fraction range
  double mask_hi = 0.5;
  double filter_threshold = 0.1;
};

// Two dual encoders (optionally one shared instance): the action branch
// scores verb prompts against temporal crops, the entity branch scores noun
// prompts against spatial crops. Frozen after pretraining; heuristic
// generation refuses to run until then.
class Prompter {
 public:
  Prompter(const PrompterConfig& config, const Vocabulary& vocab,
           std::uint64_t seed);
  const PrompterConfig& config() const { return config_; }
  const Vocabulary& vocab() const { return vocab_; }
  std::uint64_t seed() const { return seed_; }

  ParamMap& params() { return params_; }
  const ParamMap& params() const { return params_; }

  DualEncoder& branch(const std::string& kind);
  const DualEncoder& branch(const std::string& kind) const;

  bool frozen() const { return frozen_; }
  void freeze() { frozen_ = true; }

  void save(const std::string& path) const;
  static Prompter load(const std::string& path);

 private:
  PrompterConfig config_;
  Vocabulary vocab_;
  std::uint64_t seed_ = 0;
  bool frozen_ = false;
  ParamMap params_;
  std::unique_ptr<DualEncoder> action_;
  std::unique_ptr<DualEncoder> entity_;  // null when towers are shared
};

nlohmann::json prompter_config_json(const PrompterConfig& config);
PrompterConfig prompter_config_from_json(const nlohmann::json& j);

struct HeuristicDistribution {
  std::string video_id;
  std::string kind;            // "action" | "entity"
  std::vector<double> scores;  // one per prompt-set word, sums to 1
  std::vector<std::pair<std::string, double>> top;  // up to 5, score-descending
  std::size_t crop_count = 0;
  bool kept = true;
};

// Element-wise mean of equal-length probability vectors.
std::vector<double> average_distributions(
    const std::vector<std::vector<double>>& dists);

// Projected prompt-row embeddings, [rows x proj_dim], evaluation mode.
Tensor encode_prompt_rows(const DualEncoder& enc, const PromptSet& prompts,
                          const Vocabulary& vocab);

// Shared core: sample frames, crop per branch kind, embed each crop, score
// all prompt rows, average per-word over templates, softmax at the frozen
// temperature, then average the per-crop distributions.
HeuristicDistribution heuristics_with_prompts(const Prompter& prompter,
                                              const VideoTensor& video,
                                              const PromptSet& prompts,
                                              const Tensor& prompt_proj,
                                              RngStream& rng);
HeuristicDistribution action_heuristics(const Prompter& prompter,
                                        const VideoTensor& video,
                                        const PromptSet& prompts, RngStream& rng);
HeuristicDistribution entity_heuristics(const Prompter& prompter,
                                        const VideoTensor& video,
                                        const PromptSet& prompts, RngStream& rng);

// Pass-through when max(scores) >= threshold (inclusive), absent otherwise.
std::optional<HeuristicDistribution> filter_heuristic(
    const HeuristicDistribution& dist, double threshold = 0.1);

void save_heuristic_store(const std::string& path,
                          const std::vector<HeuristicDistribution>& entries);
std::vector<HeuristicDistribution> load_heuristic_store(const std::string& path);

}  // namespace vidqa
