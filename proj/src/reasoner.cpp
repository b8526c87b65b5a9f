#include "vidqa/reasoner.hpp"

#include <stdexcept>

#include "vidqa/checkpoint.hpp"
#include "vidqa/errors.hpp"

namespace vidqa {

namespace {

void validate_loss_config(const LossConfig& loss) {
  if (loss.mode != "fixed" && loss.mode != "gated" && loss.mode != "disabled")
    throw ConfigError("loss mode must be fixed, gated or disabled, got " + loss.mode);
  if (loss.alpha < 0.0 || loss.alpha > 1.0)
    throw ConfigError("loss alpha must lie in [0,1], got " + std::to_string(loss.alpha));
  if (loss.gate_dropout < 0.0 || loss.gate_dropout >= 1.0)
    throw ConfigError("gate dropout must lie in [0,1)");
}

std::size_t argmax_lowest(const std::vector<double>& v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

}  // namespace

nlohmann::json reasoner_config_json(const ReasonerConfig& c) {
  nlohmann::json j;
  j["video"] = {{"layers", c.video.layers},       {"dim", c.video.dim},
                {"heads", c.video.heads},         {"patch", c.video.patch},
                {"max_frames", c.video.max_frames},
                {"max_patches", c.video.max_patches},
                {"dropout", c.video.dropout}};
  j["text"] = {{"layers", c.text.layers},         {"dim", c.text.dim},
               {"heads", c.text.heads},           {"max_seq_len", c.text.max_seq_len},
               {"vocab_size", c.text.vocab_size}, {"dropout", c.text.dropout}};
  j["fusion_layers"] = c.fusion_layers;
  j["fusion_heads"] = c.fusion_heads;
  j["fusion_dropout"] = c.fusion_dropout;
  j["action_words"] = c.action_words;
  j["entity_words"] = c.entity_words;
  j["answer_mode"] = c.answer_mode;
  j["answer_vocab"] = c.answer_vocab;
  j["loss"] = {{"mode", c.loss.mode},
               {"alpha", c.loss.alpha},
               {"gate_hidden", c.loss.gate_hidden},
               {"gate_dropout", c.loss.gate_dropout}};
  return j;
}

ReasonerConfig reasoner_config_from_json(const nlohmann::json& j) {
  ReasonerConfig c;
  const auto& v = j.at("video");
  c.video.layers = v.at("layers").get<std::size_t>();
  c.video.dim = v.at("dim").get<std::size_t>();
  c.video.heads = v.at("heads").get<std::size_t>();
  c.video.patch = v.at("patch").get<std::size_t>();
  c.video.max_frames = v.at("max_frames").get<std::size_t>();
  c.video.max_patches = v.at("max_patches").get<std::size_t>();
  c.video.dropout = v.at("dropout").get<double>();
  const auto& t = j.at("text");
  c.text.layers = t.at("layers").get<std::size_t>();
  c.text.dim = t.at("dim").get<std::size_t>();
  c.text.heads = t.at("heads").get<std::size_t>();
  c.text.max_seq_len = t.at("max_seq_len").get<std::size_t>();
  c.text.vocab_size = t.at("vocab_size").get<std::size_t>();
  c.text.dropout = t.at("dropout").get<double>();
  c.fusion_layers = j.at("fusion_layers").get<std::size_t>();
  c.fusion_heads = j.at("fusion_heads").get<std::size_t>();
  c.fusion_dropout = j.at("fusion_dropout").get<double>();
  c.action_words = j.at("action_words").get<std::size_t>();
  c.entity_words = j.at("entity_words").get<std::size_t>();
  c.answer_mode = j.at("answer_mode").get<std::string>();
  c.answer_vocab = j.at("answer_vocab").get<std::size_t>();
  const auto& l = j.at("loss");
  c.loss.mode = l.at("mode").get<std::string>();
  c.loss.alpha = l.at("alpha").get<double>();
  c.loss.gate_hidden = l.at("gate_hidden").get<std::size_t>();
  c.loss.gate_dropout = l.at("gate_dropout").get<double>();
  return c;
}

Reasoner::Reasoner(const ReasonerConfig& config, std::uint64_t seed)
    : config_(config), seed_(seed) {
  if (config.video.dim != config.text.dim)
    throw ConfigError("reasoner: video dim " + std::to_string(config.video.dim) +
                      " differs from text dim " + std::to_string(config.text.dim));
  std::size_t d = config.text.dim;
  if (config.fusion_layers == 0)
    throw ConfigError("reasoner: need at least one fusion block");
  if (config.fusion_heads == 0 || d % config.fusion_heads != 0)
    throw ConfigError("reasoner: dim not divisible by fusion heads");
  if (config.action_words == 0 || config.entity_words == 0)
    throw ConfigError("reasoner: heuristic head sizes must be positive");
  if (config.answer_mode != "mc" && config.answer_mode != "oe")
    throw ConfigError("reasoner: answer mode must be mc or oe, got " +
                      config.answer_mode);
  if (config.answer_mode == "oe" && config.answer_vocab == 0)
    throw ConfigError("reasoner: oe mode needs a positive answer vocabulary");
  validate_loss_config(config.loss);

  RngStream master(seed);
  video_ = std::make_unique<VideoEncoder>(params_, "video", config.video, master);
  text_ = std::make_unique<TextEncoder>(params_, "text", config.text, master);
  fusion_.reserve(config.fusion_layers);
  for (std::size_t i = 0; i < config.fusion_layers; ++i) {
    std::string p = "fuse.block" + std::to_string(i);
    FusionBlock b;
    b.ln_self = LayerNormParams::make(params_, p + ".ln_self", d);
    b.self_attn = Attention::make(params_, p + ".self", d, config.fusion_heads, master);
    b.ln_cross = LayerNormParams::make(params_, p + ".ln_cross", d);
    b.cross_attn =
        Attention::make(params_, p + ".cross", d, config.fusion_heads, master);
    b.ln_ffn = LayerNormParams::make(params_, p + ".ln_ffn", d);
    b.ffn = Ffn::make(params_, p + ".ffn", d, master);
    fusion_.push_back(std::move(b));
  }
  fusion_ln_ = LayerNormParams::make(params_, "fuse.final", d);
  action_head_ = Linear::make(params_, "head.action", d, config.action_words, master);
  entity_head_ = Linear::make(params_, "head.entity", d, config.entity_words, master);
  std::size_t answer_out = config.answer_mode == "mc" ? 1 : config.answer_vocab;
  answer_head_ = Linear::make(params_, "head.answer", d, answer_out, master);

  std::size_t hidden = config.loss.gate_hidden == 0 ? d / 2 : config.loss.gate_hidden;
  if (hidden == 0) throw ConfigError("reasoner: gate hidden dim must be positive");
  gate_hidden_ = Linear::make(params_, "gate.hidden", d, hidden, master);
  gate_out_.w = params_.create_full("gate.out.w", {hidden, 1}, 0.0);
  gate_out_.b = params_.create_full("gate.out.b", {1}, 0.0);
}

Tensor Reasoner::video_tokens(const VideoTensor& video, const ForwardCtx& ctx) const {
  return video_->forward(video, ctx).seq;
}

Tensor Reasoner::text_tokens(const std::vector<int>& ids, const ForwardCtx& ctx) const {
  return text_->forward(ids, ctx);
}

Tensor Reasoner::question_cls(const std::vector<int>& ids, const ForwardCtx& ctx) const {
  return slice_rows(text_->forward(ids, ctx), 0, 1);
}

FusionOutput Reasoner::fuse(const Tensor& video_tokens, const Tensor& text_tokens,
                            const ForwardCtx& ctx) const {
  if (video_tokens.ndim() != 2 || text_tokens.ndim() != 2 ||
      video_tokens.cols() != text_tokens.cols())
    throw ShapeError("fuse: video tokens " + shape_str(video_tokens.shape()) +
                     " and text tokens " + shape_str(text_tokens.shape()) +
                     " must share the model dim");
  double drop = config_.fusion_dropout;
  Tensor x = text_tokens;
  for (const FusionBlock& b : fusion_) {
    Tensor xs = b.ln_self(x);
    x = add(x, maybe_dropout(b.self_attn(xs, xs), drop, ctx));
    x = add(x, maybe_dropout(b.cross_attn(b.ln_cross(x), video_tokens), drop, ctx));
    x = add(x, b.ffn(b.ln_ffn(x), drop, ctx));
  }
  x = fusion_ln_(x);
  FusionOutput out;
  out.e_cls = slice_rows(x, 0, 1);
  out.seq = concat_rows({x, video_tokens});
  out.text_tokens = text_tokens.rows();
  out.video_tokens = video_tokens.rows();
  return out;
}

Tensor Reasoner::action_probs(const Tensor& e_cls) const {
  return softmax(row_vector(action_head_(e_cls), 0));
}

Tensor Reasoner::entity_probs(const Tensor& e_cls) const {
  return softmax(row_vector(entity_head_(e_cls), 0));
}

Prediction Reasoner::predict_mc(const std::vector<Tensor>& candidate_cls) const {
  if (config_.answer_mode != "mc")
    throw StateError("predict_mc on a reasoner configured for " + config_.answer_mode);
  if (candidate_cls.empty())
    throw std::invalid_argument("predict_mc: empty candidate list");
  std::vector<Tensor> scores;
  scores.reserve(candidate_cls.size());
  for (const Tensor& cls : candidate_cls) scores.push_back(answer_head_(cls));
  Prediction pred;
  pred.logits = row_vector(concat_cols(scores), 0);
  pred.predicted = argmax_lowest(pred.logits.value());
  return pred;
}

Prediction Reasoner::predict_oe(const Tensor& e_cls) const {
  if (config_.answer_mode != "oe")
    throw StateError("predict_oe on a reasoner configured for " + config_.answer_mode);
  Prediction pred;
  pred.logits = row_vector(answer_head_(e_cls), 0);
  pred.predicted = argmax_lowest(pred.logits.value());
  return pred;
}

Tensor Reasoner::gate(const Tensor& question_cls, const ForwardCtx& ctx) const {
  Tensor h = gelu(gate_hidden_(question_cls));
  h = maybe_dropout(h, config_.loss.gate_dropout, ctx);
  return sigmoid(row_vector(gate_out_(h), 0));
}

void Reasoner::save(const std::string& path) const {
  nlohmann::json config = reasoner_config_json(config_);
  config["seed"] = seed_;
  save_checkpoint(path, "reasoner", false, config, params_);
}

Reasoner Reasoner::load(const std::string& path) {
  LoadedCheckpoint ckpt = load_checkpoint(path);
  if (ckpt.kind != "reasoner")
    throw DataError(path + ": checkpoint kind '" + ckpt.kind + "', expected reasoner");
  ReasonerConfig config = reasoner_config_from_json(ckpt.config);
  Reasoner r(config, ckpt.config.at("seed").get<std::uint64_t>());
  restore_params(ckpt, r.params_);
  return r;
}

namespace {

Tensor heuristic_term(const Tensor& probs,
                      const std::optional<HeuristicDistribution>& heuristic) {
  if (!heuristic.has_value()) return Tensor::scalar(0.0);
  Tensor target = Tensor::leaf({heuristic->scores.size()}, heuristic->scores);
  return soft_cross_entropy(target, probs);
}

}  // namespace

Tensor tam_loss(const Tensor& action_probs,
                const std::optional<HeuristicDistribution>& heuristic) {
  return heuristic_term(action_probs, heuristic);
}

Tensor sem_loss(const Tensor& entity_probs,
                const std::optional<HeuristicDistribution>& heuristic) {
  return heuristic_term(entity_probs, heuristic);
}

Tensor pred_loss(const Prediction& prediction, std::size_t y) {
  std::size_t n = prediction.logits.size();
  if (y >= n)
    throw std::invalid_argument("pred_loss: answer index " + std::to_string(y) +
                                " outside " + std::to_string(n) + " options");
  std::vector<double> one_hot(n, 0.0);
  one_hot[y] = 1.0;
  return soft_cross_entropy(Tensor::leaf({n}, std::move(one_hot)),
                            softmax(prediction.logits));
}

Tensor total_loss(const Tensor& pred, const Tensor& tam, const Tensor& sem,
                  const LossConfig& config, const Tensor& g) {
  validate_loss_config(config);
  if (config.mode == "disabled") return pred;
  if (config.mode == "fixed") {
    return add(pred, add(scale(tam, config.alpha), scale(sem, 1.0 - config.alpha)));
  }
  if (!g.defined())
    throw StateError("total_loss: gated mode needs the gate weight");
  Tensor inverse = sub(Tensor::scalar(1.0), g);
  return add(pred, add(scale_by(tam, g), scale_by(sem, inverse)));
}

}  // namespace vidqa
