#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "vidqa/ops.hpp"
#include "vidqa/rng.hpp"
#include "vidqa/tensor.hpp"
#include "vidqa/video.hpp"

namespace vidqa {

// Named, insertion-ordered trainable tensors. Initialization draws from a
// stream derived from the parameter name, so adding or reordering modules
// never shifts another parameter's initial values.
class ParamMap {
 public:
  Tensor create(const std::string& name, Shape shape, double init_std,
                const RngStream& master);
  Tensor create_full(const std::string& name, Shape shape, double fill);
  const Tensor& at(const std::string& name) const;
  bool has(const std::string& name) const { return index_.count(name) != 0; }
  const std::vector<std::pair<std::string, Tensor>>& items() const { return items_; }
  std::size_t scalar_count() const;

 private:
  Tensor insert(const std::string& name, Tensor t);
  std::vector<std::pair<std::string, Tensor>> items_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Per-forward switches. `rng` drives dropout and is only consulted while
// training; evaluation passes are deterministic.
struct ForwardCtx {
  bool training = false;
  RngStream* rng = nullptr;
};

struct Linear {
  Tensor w;  // [in x out]
  Tensor b;  // [out]
  static Linear make(ParamMap& params, const std::string& prefix, std::size_t in,
                     std::size_t out, const RngStream& master);
  Tensor operator()(const Tensor& x) const { return add_bias(matmul(x, w), b); }
};

struct LayerNormParams {
  Tensor gain, bias;
  static LayerNormParams make(ParamMap& params, const std::string& prefix,
                              std::size_t dim);
  Tensor operator()(const Tensor& x) const { return layer_norm_rows(x, gain, bias); }
};

// Multi-head scaled dot-product attention over pre-projected rows; returns
// the concatenated head outputs without the output projection.
Tensor attend_heads(const Tensor& q, const Tensor& k, const Tensor& v,
                    std::size_t heads);

struct Attention {
  Linear q, k, v, o;
  std::size_t heads = 1;
  static Attention make(ParamMap& params, const std::string& prefix, std::size_t dim,
                        std::size_t heads, const RngStream& master);
  // Full self/cross attention: rows of `qx` attend to rows of `kvx`.
  Tensor operator()(const Tensor& qx, const Tensor& kvx) const;
};

struct Ffn {
  Linear expand, contract;  // dim -> 2*dim -> dim with gelu between
  static Ffn make(ParamMap& params, const std::string& prefix, std::size_t dim,
                  const RngStream& master);
  Tensor operator()(const Tensor& x, double drop, const ForwardCtx& ctx) const;
};

Tensor maybe_dropout(const Tensor& x, double rate, const ForwardCtx& ctx);

struct TextEncoderConfig {
  std::size_t layers = 2;
  std::size_t dim = 32;
  std::size_t heads = 4;
  std::size_t max_seq_len = 32;
  std::size_t vocab_size = 0;
  double dropout = 0.0;
};

// Bidirectional transformer over token ids. Position 0 carries the sequence
// summary used as the text embedding.
class TextEncoder {
 public:
  TextEncoder(ParamMap& params, const std::string& prefix,
              const TextEncoderConfig& config, const RngStream& master);
  // [n x dim]; n = ids.size().
  Tensor forward(const std::vector<int>& ids, const ForwardCtx& ctx) const;
  const TextEncoderConfig& config() const { return config_; }

 private:
  struct Block {
    LayerNormParams ln1;
    Attention attn;
    LayerNormParams ln2;
    Ffn ffn;
  };
  TextEncoderConfig config_;
  Tensor tok_emb_;  // [vocab x dim]
  Tensor pos_emb_;  // [max_seq_len x dim]
  std::vector<Block> blocks_;
  LayerNormParams final_ln_;
};

struct VideoEncoderConfig {
  std::size_t layers = 2;
  std::size_t dim = 32;
  std::size_t heads = 4;
  std::size_t patch = 16;
  std::size_t max_frames = 8;
  std::size_t max_patches = 16;  // per frame
  double dropout = 0.0;
};

struct VideoTokens {
  Tensor seq;  // [(1 + frames*patches) x dim], row 0 is the summary token
  std::size_t frames = 0;
  std::size_t patches = 0;
};

// Transformer with divided space-time attention: each block first attends
// across frames at a fixed spatial location, then across patches within each
// frame (the summary token joins every frame and its per-frame outputs are
// averaged), then applies the feed-forward.
class VideoEncoder {
 public:
  VideoEncoder(ParamMap& params, const std::string& prefix,
               const VideoEncoderConfig& config, const RngStream& master);
  VideoTokens forward(const VideoTensor& video, const ForwardCtx& ctx) const;
  const VideoEncoderConfig& config() const { return config_; }

  // [frames*patches x 3*patch*patch] ungraded leaf; patches scan the frame
  // row-major and flatten in channel, row, column order.
  static Tensor patch_matrix(const VideoTensor& video, std::size_t patch);

 private:
  struct Block {
    LayerNormParams ln_t;
    Attention temporal;
    LayerNormParams ln_s;
    Attention spatial;
    LayerNormParams ln_f;
    Ffn ffn;
  };
  VideoEncoderConfig config_;
  Linear patch_proj_;
  Tensor cls_;           // [1 x dim]
  Tensor spatial_pos_;   // [max_patches x dim]
  Tensor temporal_pos_;  // [max_frames x dim]
  std::vector<Block> blocks_;
  LayerNormParams final_ln_;
};

// Maps encoder outputs into a shared space for contrastive matching. The
// temperature is stored as its log and learned with everything else.
struct ProjectionHead {
  Linear video, text;
  Tensor log_tau;  // [1], init log(0.07)
  static ProjectionHead make(ParamMap& params, const std::string& prefix,
                             std::size_t dim, std::size_t proj_dim,
                             const RngStream& master);
  Tensor project_video(const Tensor& cls_rows) const { return video(cls_rows); }
  Tensor project_text(const Tensor& cls_rows) const { return text(cls_rows); }
  // exp(-log_tau) as a scalar tensor, for in-graph temperature scaling.
  Tensor inv_tau() const;
  double tau() const;
};

// [Bv x Bt] similarities between row embeddings; cosine when normalize is
// set, raw dot products otherwise.
Tensor similarity_matrix(const Tensor& video_emb, const Tensor& text_emb,
                         bool normalize);

}  // namespace vidqa
