#include "vidqa/encoders.hpp"

#include <cmath>
#include <stdexcept>

#include "vidqa/errors.hpp"

namespace vidqa {

Tensor ParamMap::insert(const std::string& name, Tensor t) {
  if (index_.count(name)) throw StateError("parameter already registered: " + name);
  index_[name] = items_.size();
  items_.emplace_back(name, t);
  return t;
}

Tensor ParamMap::create(const std::string& name, Shape shape, double init_std,
                        const RngStream& master) {
  std::size_t n = shape_numel(shape);
  std::vector<double> vals(n, 0.0);
  if (init_std > 0.0) {
    RngStream s = master.derive(name);
    for (double& v : vals) v = s.normal(0.0, init_std);
  }
  return insert(name, Tensor::leaf(std::move(shape), std::move(vals), true));
}

Tensor ParamMap::create_full(const std::string& name, Shape shape, double fill) {
  return insert(name, Tensor::full(std::move(shape), fill, true));
}

const Tensor& ParamMap::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw StateError("no such parameter: " + name);
  return items_[it->second].second;
}

std::size_t ParamMap::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : items_) n += t.size();
  return n;
}

Linear Linear::make(ParamMap& params, const std::string& prefix, std::size_t in,
                    std::size_t out, const RngStream& master) {
  Linear l;
  l.w = params.create(prefix + ".w", {in, out}, 0.02, master);
  l.b = params.create_full(prefix + ".b", {out}, 0.0);
  return l;
}

LayerNormParams LayerNormParams::make(ParamMap& params, const std::string& prefix,
                                      std::size_t dim) {
  LayerNormParams ln;
  ln.gain = params.create_full(prefix + ".gain", {dim}, 1.0);
  ln.bias = params.create_full(prefix + ".bias", {dim}, 0.0);
  return ln;
}

Tensor attend_heads(const Tensor& q, const Tensor& k, const Tensor& v,
                    std::size_t heads) {
  std::size_t d = q.cols();
  if (heads == 0 || d % heads != 0)
    throw ConfigError("attend_heads: dim " + std::to_string(d) +
                      " not divisible by heads " + std::to_string(heads));
  std::size_t dh = d / heads;
  double temp = std::sqrt(static_cast<double>(dh));
  std::vector<Tensor> outs;
  outs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    Tensor qh = slice_cols(q, h * dh, (h + 1) * dh);
    Tensor kh = slice_cols(k, h * dh, (h + 1) * dh);
    Tensor vh = slice_cols(v, h * dh, (h + 1) * dh);
    Tensor a = softmax_rows(matmul(qh, transpose(kh)), temp);
    outs.push_back(matmul(a, vh));
  }
  return heads == 1 ? outs[0] : concat_cols(outs);
}

Attention Attention::make(ParamMap& params, const std::string& prefix, std::size_t dim,
                          std::size_t heads, const RngStream& master) {
  if (heads == 0 || dim % heads != 0)
    throw ConfigError("attention: dim " + std::to_string(dim) +
                      " not divisible by heads " + std::to_string(heads));
  Attention a;
  a.q = Linear::make(params, prefix + ".q", dim, dim, master);
  a.k = Linear::make(params, prefix + ".k", dim, dim, master);
  a.v = Linear::make(params, prefix + ".v", dim, dim, master);
  a.o = Linear::make(params, prefix + ".o", dim, dim, master);
  a.heads = heads;
  return a;
}

Tensor Attention::operator()(const Tensor& qx, const Tensor& kvx) const {
  return o(attend_heads(q(qx), k(kvx), v(kvx), heads));
}

Ffn Ffn::make(ParamMap& params, const std::string& prefix, std::size_t dim,
              const RngStream& master) {
  Ffn f;
  f.expand = Linear::make(params, prefix + ".expand", dim, 2 * dim, master);
  f.contract = Linear::make(params, prefix + ".contract", 2 * dim, dim, master);
  return f;
}

Tensor Ffn::operator()(const Tensor& x, double drop, const ForwardCtx& ctx) const {
  return maybe_dropout(contract(gelu(expand(x))), drop, ctx);
}

Tensor maybe_dropout(const Tensor& x, double rate, const ForwardCtx& ctx) {
  if (!ctx.training || rate <= 0.0) return x;
  if (ctx.rng == nullptr)
    throw StateError("training forward pass needs an rng for dropout");
  return dropout(x, rate, *ctx.rng, true);
}

TextEncoder::TextEncoder(ParamMap& params, const std::string& prefix,
                         const TextEncoderConfig& config, const RngStream& master)
    : config_(config) {
  if (config.vocab_size == 0) throw ConfigError("text encoder: vocab_size not set");
  if (config.layers == 0) throw ConfigError("text encoder: need at least one layer");
  if (config.heads == 0 || config.dim % config.heads != 0)
    throw ConfigError("text encoder: dim not divisible by heads");
  tok_emb_ = params.create(prefix + ".tok_emb", {config.vocab_size, config.dim}, 0.02,
                           master);
  pos_emb_ = params.create(prefix + ".pos_emb", {config.max_seq_len, config.dim}, 0.02,
                           master);
  for (std::size_t i = 0; i < config.layers; ++i) {
    std::string bp = prefix + ".block" + std::to_string(i);
    blocks_.push_back({LayerNormParams::make(params, bp + ".ln1", config.dim),
                       Attention::make(params, bp + ".attn", config.dim, config.heads,
                                       master),
                       LayerNormParams::make(params, bp + ".ln2", config.dim),
                       Ffn::make(params, bp + ".ffn", config.dim, master)});
  }
  final_ln_ = LayerNormParams::make(params, prefix + ".final_ln", config.dim);
}

Tensor TextEncoder::forward(const std::vector<int>& ids, const ForwardCtx& ctx) const {
  if (ids.empty()) throw ShapeError("text encoder: empty token sequence");
  if (ids.size() > config_.max_seq_len)
    throw ShapeError("text encoder: sequence length " + std::to_string(ids.size()) +
                     " exceeds max " + std::to_string(config_.max_seq_len));
  for (int id : ids)
    if (id < 0 || static_cast<std::size_t>(id) >= config_.vocab_size)
      throw DataError("text encoder: token id " + std::to_string(id) +
                      " outside vocabulary of " + std::to_string(config_.vocab_size));
  Tensor x = add(embed_rows(tok_emb_, ids), slice_rows(pos_emb_, 0, ids.size()));
  for (const Block& b : blocks_) {
    Tensor xl = b.ln1(x);
    x = add(x, maybe_dropout(b.attn(xl, xl), config_.dropout, ctx));
    x = add(x, b.ffn(b.ln2(x), config_.dropout, ctx));
  }
  return final_ln_(x);
}

VideoEncoder::VideoEncoder(ParamMap& params, const std::string& prefix,
                           const VideoEncoderConfig& config, const RngStream& master)
    : config_(config) {
  if (config.patch == 0) throw ConfigError("video encoder: patch must be positive");
  if (config.layers == 0) throw ConfigError("video encoder: need at least one layer");
  if (config.heads == 0 || config.dim % config.heads != 0)
    throw ConfigError("video encoder: dim not divisible by heads");
  std::size_t pdim = 3 * config.patch * config.patch;
  patch_proj_ = Linear::make(params, prefix + ".patch_proj", pdim, config.dim, master);
  cls_ = params.create(prefix + ".cls", {1, config.dim}, 0.02, master);
  spatial_pos_ =
      params.create(prefix + ".spatial_pos", {config.max_patches, config.dim}, 0.02,
                    master);
  temporal_pos_ =
      params.create(prefix + ".temporal_pos", {config.max_frames, config.dim}, 0.02,
                    master);
  for (std::size_t i = 0; i < config.layers; ++i) {
    std::string bp = prefix + ".block" + std::to_string(i);
    blocks_.push_back({LayerNormParams::make(params, bp + ".ln_t", config.dim),
                       Attention::make(params, bp + ".temporal", config.dim,
                                       config.heads, master),
                       LayerNormParams::make(params, bp + ".ln_s", config.dim),
                       Attention::make(params, bp + ".spatial", config.dim, config.heads,
                                       master),
                       LayerNormParams::make(params, bp + ".ln_f", config.dim),
                       Ffn::make(params, bp + ".ffn", config.dim, master)});
  }
  final_ln_ = LayerNormParams::make(params, prefix + ".final_ln", config.dim);
}

Tensor VideoEncoder::patch_matrix(const VideoTensor& video, std::size_t patch) {
  if (patch == 0 || video.height % patch != 0 || video.width % patch != 0)
    throw ShapeError("patch_matrix: frame " + std::to_string(video.height) + "x" +
                     std::to_string(video.width) + " not divisible by patch " +
                     std::to_string(patch));
  std::size_t gh = video.height / patch;
  std::size_t gw = video.width / patch;
  std::size_t rows = video.frames * gh * gw;
  std::size_t cols = video.channels * patch * patch;
  std::vector<double> out;
  out.reserve(rows * cols);
  for (std::size_t f = 0; f < video.frames; ++f)
    for (std::size_t py = 0; py < gh; ++py)
      for (std::size_t px = 0; px < gw; ++px)
        for (std::size_t c = 0; c < video.channels; ++c)
          for (std::size_t y = 0; y < patch; ++y)
            for (std::size_t x = 0; x < patch; ++x)
              out.push_back(video.at(c, f, py * patch + y, px * patch + x));
  return Tensor::leaf({rows, cols}, std::move(out), false);
}

VideoTokens VideoEncoder::forward(const VideoTensor& video, const ForwardCtx& ctx) const {
  if (video.channels != 3)
    throw ShapeError("video encoder: expected 3 channels, got " +
                     std::to_string(video.channels));
  std::size_t patch = config_.patch;
  if (video.height % patch != 0 || video.width % patch != 0)
    throw ShapeError("video encoder: frame size not divisible by patch");
  std::size_t P = (video.height / patch) * (video.width / patch);
  std::size_t F = video.frames;
  if (F == 0) throw ShapeError("video encoder: no frames");
  if (F > config_.max_frames)
    throw ShapeError("video encoder: " + std::to_string(F) + " frames exceed max " +
                     std::to_string(config_.max_frames));
  if (P > config_.max_patches)
    throw ShapeError("video encoder: " + std::to_string(P) + " patches exceed max " +
                     std::to_string(config_.max_patches));

  std::vector<std::size_t> sidx(F * P), tidx(F * P);
  for (std::size_t f = 0; f < F; ++f)
    for (std::size_t p = 0; p < P; ++p) {
      sidx[f * P + p] = p;
      tidx[f * P + p] = f;
    }
  Tensor x = patch_proj_(patch_matrix(video, patch));
  x = add(x, gather_rows(spatial_pos_, sidx));
  x = add(x, gather_rows(temporal_pos_, tidx));
  Tensor cls = cls_;

  double drop = config_.dropout;
  for (const Block& b : blocks_) {
    // Across frames, one spatial location at a time.
    Tensor xl = b.ln_t(x);
    Tensor q = b.temporal.q(xl), k = b.temporal.k(xl), v = b.temporal.v(xl);
    std::vector<Tensor> groups;
    groups.reserve(P);
    for (std::size_t p = 0; p < P; ++p) {
      std::vector<std::size_t> idx(F);
      for (std::size_t f = 0; f < F; ++f) idx[f] = f * P + p;
      groups.push_back(attend_heads(gather_rows(q, idx), gather_rows(k, idx),
                                    gather_rows(v, idx), b.temporal.heads));
    }
    Tensor y = P == 1 ? groups[0] : concat_rows(groups);
    std::vector<std::size_t> perm(F * P);
    for (std::size_t f = 0; f < F; ++f)
      for (std::size_t p = 0; p < P; ++p) perm[f * P + p] = p * F + f;
    x = add(x, maybe_dropout(b.temporal.o(gather_rows(y, perm)), drop, ctx));

    // Within each frame, summary token included; its per-frame updates are
    // averaged.
    Tensor z = concat_rows({cls, x});
    Tensor zl = b.ln_s(z);
    Tensor sq = b.spatial.q(zl), sk = b.spatial.k(zl), sv = b.spatial.v(zl);
    std::vector<Tensor> cls_parts, tok_parts;
    cls_parts.reserve(F);
    tok_parts.reserve(F);
    for (std::size_t f = 0; f < F; ++f) {
      std::vector<std::size_t> idx(P + 1);
      idx[0] = 0;
      for (std::size_t p = 0; p < P; ++p) idx[p + 1] = 1 + f * P + p;
      Tensor out = attend_heads(gather_rows(sq, idx), gather_rows(sk, idx),
                                gather_rows(sv, idx), b.spatial.heads);
      cls_parts.push_back(slice_rows(out, 0, 1));
      tok_parts.push_back(slice_rows(out, 1, P + 1));
    }
    Tensor cls_att = F == 1 ? cls_parts[0] : mean_rows(concat_rows(cls_parts));
    Tensor tok_att = F == 1 ? tok_parts[0] : concat_rows(tok_parts);
    cls = add(cls, maybe_dropout(b.spatial.o(cls_att), drop, ctx));
    x = add(x, maybe_dropout(b.spatial.o(tok_att), drop, ctx));

    Tensor zf = concat_rows({cls, x});
    Tensor zf2 = add(zf, b.ffn(b.ln_f(zf), drop, ctx));
    cls = slice_rows(zf2, 0, 1);
    x = slice_rows(zf2, 1, 1 + F * P);
  }
  VideoTokens result;
  result.seq = final_ln_(concat_rows({cls, x}));
  result.frames = F;
  result.patches = P;
  return result;
}

ProjectionHead ProjectionHead::make(ParamMap& params, const std::string& prefix,
                                    std::size_t dim, std::size_t proj_dim,
                                    const RngStream& master) {
  ProjectionHead h;
  h.video = Linear::make(params, prefix + ".video", dim, proj_dim, master);
  h.text = Linear::make(params, prefix + ".text", dim, proj_dim, master);
  h.log_tau = params.create_full(prefix + ".log_tau", {1}, std::log(0.07));
  return h;
}

Tensor ProjectionHead::inv_tau() const { return exp_elem(scale(log_tau, -1.0)); }

double ProjectionHead::tau() const { return std::exp(log_tau.value()[0]); }

Tensor similarity_matrix(const Tensor& video_emb, const Tensor& text_emb,
                         bool normalize) {
  Tensor v = normalize ? l2_normalize_rows(video_emb) : video_emb;
  Tensor t = normalize ? l2_normalize_rows(text_emb) : text_emb;
  return matmul(v, transpose(t));
}

}  // namespace vidqa
