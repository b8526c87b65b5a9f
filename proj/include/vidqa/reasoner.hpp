#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "vidqa/encoders.hpp"
#include "vidqa/prompter.hpp"
#include "vidqa/text.hpp"
#include "vidqa/video.hpp"

namespace vidqa {

struct LossConfig {
  std::string mode = "gated";  // "fixed" | "gated" | "disabled"
  double alpha = 0.5;
  std::size_t gate_hidden = 0;  // 0 picks model dim / 2
  double gate_dropout = 0.1;
};

struct ReasonerConfig {
  VideoEncoderConfig video;
  TextEncoderConfig text;
  std::size_t fusion_layers = 2;
  std::size_t fusion_heads = 4;
  double fusion_dropout = 0.0;
  std::size_t action_words = 0;    // action head output size
  std::size_t entity_words = 0;    // entity head output size
  std::string answer_mode = "mc";  // "mc" | "oe"
  std::size_t answer_vocab = 0;    // oe mode only
  LossConfig loss;
};

nlohmann::json reasoner_config_json(const ReasonerConfig& config);
ReasonerConfig reasoner_config_from_json(const nlohmann::json& j);

struct FusionOutput {
  Tensor e_cls;  // [1 x d], the fused text summary
  Tensor seq;    // [(text + video tokens) x d], text rows first
  std::size_t text_tokens = 0;
  std::size_t video_tokens = 0;
};

struct Prediction {
  Tensor logits;              // rank-1 over the answer space
  std::size_t predicted = 0;  // argmax, ties to the lowest index
};

// QA model: its own unimodal towers (parameters independent of any prompter),
// fusion blocks that let the question attend into the video, classifier
// heads for answers and for the two heuristic distributions, and the
// question-conditioned gate that balances the heuristic losses.
class Reasoner {
 public:
  Reasoner(const ReasonerConfig& config, std::uint64_t seed);

  const ReasonerConfig& config() const { return config_; }
  std::uint64_t seed() const { return seed_; }
  ParamMap& params() { return params_; }
  const ParamMap& params() const { return params_; }

  // Unimodal token sequences; video row 0 / text row 0 carry the summaries.
  Tensor video_tokens(const VideoTensor& video, const ForwardCtx& ctx) const;
  Tensor text_tokens(const std::vector<int>& ids, const ForwardCtx& ctx) const;
  // Question summary for the gate, [1 x d].
  Tensor question_cls(const std::vector<int>& ids, const ForwardCtx& ctx) const;

  // Stacked blocks of text self-attention, text-to-video cross-attention and
  // feed-forward, all pre-norm residual. Video tokens pass through unchanged
  // and are appended after the fused text rows.
  FusionOutput fuse(const Tensor& video_tokens, const Tensor& text_tokens,
                    const ForwardCtx& ctx) const;

  // Independent affine heads + softmax; rank-1 distributions.
  Tensor action_probs(const Tensor& e_cls) const;
  Tensor entity_probs(const Tensor& e_cls) const;

  // MC: one scalar per candidate summary, softmaxed across candidates.
  Prediction predict_mc(const std::vector<Tensor>& candidate_cls) const;
  // OE: logits over the global answer vocabulary.
  Prediction predict_oe(const Tensor& e_cls) const;

  // g = sigmoid(out(dropout(gelu(hidden(t_cls))))), [1]. The output layer
  // starts at zero so training begins from the balanced g = 0.5.
  Tensor gate(const Tensor& question_cls, const ForwardCtx& ctx) const;

  void save(const std::string& path) const;
  static Reasoner load(const std::string& path);

 private:
  struct FusionBlock {
    LayerNormParams ln_self;
    Attention self_attn;
    LayerNormParams ln_cross;
    Attention cross_attn;
    LayerNormParams ln_ffn;
    Ffn ffn;
  };

  ReasonerConfig config_;
  std::uint64_t seed_ = 0;
  ParamMap params_;
  std::unique_ptr<VideoEncoder> video_;
  std::unique_ptr<TextEncoder> text_;
  std::vector<FusionBlock> fusion_;
  LayerNormParams fusion_ln_;
  Linear action_head_;
  Linear entity_head_;
  Linear answer_head_;
  Linear gate_hidden_;
  Linear gate_out_;
};

// Soft cross entropy against a stored heuristic distribution; a filtered
// (absent) heuristic contributes an exact zero.
Tensor tam_loss(const Tensor& action_probs,
                const std::optional<HeuristicDistribution>& heuristic);
Tensor sem_loss(const Tensor& entity_probs,
                const std::optional<HeuristicDistribution>& heuristic);

// Cross entropy of the softmaxed logits against ground truth index y.
Tensor pred_loss(const Prediction& prediction, std::size_t y);

// fixed:    pred + alpha * tam + (1 - alpha) * sem
// gated:    pred + g * tam + (1 - g) * sem   (gradients reach the gate via g)
// disabled: pred
Tensor total_loss(const Tensor& pred, const Tensor& tam, const Tensor& sem,
                  const LossConfig& config, const Tensor& g = Tensor());

}  // namespace vidqa
