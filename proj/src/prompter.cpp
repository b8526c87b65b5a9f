#include "vidqa/prompter.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "vidqa/checkpoint.hpp"
#include "vidqa/errors.hpp"

namespace vidqa {

DualEncoder::DualEncoder(ParamMap& params, const std::string& prefix,
                         const DualEncoderConfig& config, const RngStream& master)
    : config_(config),
      video_(params, prefix + ".video", config.video, master),
      text_(params, prefix + ".text", config.text, master),
      head_(ProjectionHead::make(params, prefix + ".proj", config.video.dim,
                                 config.proj_dim, master)) {
  if (config.video.dim != config.text.dim)
    throw ConfigError("dual encoder: video dim " + std::to_string(config.video.dim) +
                      " differs from text dim " + std::to_string(config.text.dim));
}

Tensor DualEncoder::video_cls(const VideoTensor& video, const ForwardCtx& ctx) const {
  return slice_rows(video_.forward(video, ctx).seq, 0, 1);
}

Tensor DualEncoder::text_cls(const std::vector<int>& ids, const ForwardCtx& ctx) const {
  return slice_rows(text_.forward(ids, ctx), 0, 1);
}

Tensor vtc_from_similarity(const Tensor& S, const Tensor& inv_tau) {
  if (S.ndim() != 2 || S.rows() != S.cols())
    throw ShapeError("vtc: similarity matrix must be square, got " +
                     shape_str(S.shape()));
  std::size_t b = S.rows();
  if (b < 2)
    throw std::invalid_argument("vtc: batch of " + std::to_string(b) +
                                " has no negatives, need >= 2");
  Tensor scaled = scale_by(S, inv_tau);
  // Per-direction sums are built independently and combined with one
  // commutative add, so transposing S swaps the directions bitwise.
  auto direction_sum = [b](const Tensor& p) {
    Tensor acc;
    for (std::size_t i = 0; i < b; ++i) {
      Tensor diag = slice_cols(slice_rows(p, i, i + 1), i, i + 1);
      Tensor term = scale(sum(log_elem(diag)), -1.0);
      acc = acc.defined() ? add(acc, term) : term;
    }
    return acc;
  };
  Tensor v2t = direction_sum(softmax_rows(scaled));
  Tensor t2v = direction_sum(softmax_rows(transpose(scaled)));
  return scale(add(v2t, t2v), 0.5);
}

Tensor vtc_loss(const std::vector<Tensor>& video_cls,
                const std::vector<Tensor>& text_cls, const ProjectionHead& head,
                bool normalize) {
  if (video_cls.size() != text_cls.size())
    throw ShapeError("vtc: " + std::to_string(video_cls.size()) + " videos vs " +
                     std::to_string(text_cls.size()) + " texts");
  if (video_cls.size() < 2)
    throw std::invalid_argument("vtc: batch of " + std::to_string(video_cls.size()) +
                                " has no negatives, need >= 2");
  Tensor v = head.project_video(concat_rows(video_cls));
  Tensor t = head.project_text(concat_rows(text_cls));
  return vtc_from_similarity(similarity_matrix(v, t, normalize), head.inv_tau());
}

Prompter::Prompter(const PrompterConfig& config, const Vocabulary& vocab,
                   std::uint64_t seed)
    : config_(config), vocab_(vocab), seed_(seed) {
  if (config.sample_frames == 0)
    throw ConfigError("prompter: sample_frames must be positive");
  if (config.crop_size == 0 || config.crop_size > config.input_size)
    throw ConfigError("prompter: crop_size must be in [1, input_size]");
  if (config.temporal_crops == 0 || config.spatial_crops == 0)
    throw ConfigError("prompter: crop counts must be positive");
  if (config.mask_lo < 0.0 || config.mask_hi > 1.0 || config.mask_lo > config.mask_hi)
    throw ConfigError("prompter: mask fraction range invalid");
  if (config.encoder.text.vocab_size != vocab.size())
    throw ConfigError("prompter: text encoder vocab_size " +
                      std::to_string(config.encoder.text.vocab_size) +
                      " does not match vocabulary of " + std::to_string(vocab.size()));
  RngStream master(seed);
  if (config.share_towers) {
    action_ = std::make_unique<DualEncoder>(params_, "enc", config.encoder, master);
  } else {
    action_ = std::make_unique<DualEncoder>(params_, "action", config.encoder, master);
    entity_ = std::make_unique<DualEncoder>(params_, "entity", config.encoder, master);
  }
}

DualEncoder& Prompter::branch(const std::string& kind) {
  if (kind != "action" && kind != "entity")
    throw std::invalid_argument("prompter: unknown branch " + kind);
  if (config_.share_towers || kind == "action") return *action_;
  return *entity_;
}

const DualEncoder& Prompter::branch(const std::string& kind) const {
  return const_cast<Prompter*>(this)->branch(kind);
}

nlohmann::json prompter_config_json(const PrompterConfig& c) {
  nlohmann::json j;
  j["video"] = {{"layers", c.encoder.video.layers},   {"dim", c.encoder.video.dim},
                {"heads", c.encoder.video.heads},     {"patch", c.encoder.video.patch},
                {"max_frames", c.encoder.video.max_frames},
                {"max_patches", c.encoder.video.max_patches},
                {"dropout", c.encoder.video.dropout}};
  j["text"] = {{"layers", c.encoder.text.layers},
               {"dim", c.encoder.text.dim},
               {"heads", c.encoder.text.heads},
               {"max_seq_len", c.encoder.text.max_seq_len},
               {"vocab_size", c.encoder.text.vocab_size},
               {"dropout", c.encoder.text.dropout}};
  j["proj_dim"] = c.encoder.proj_dim;
  j["normalize"] = c.encoder.normalize;
  j["share_towers"] = c.share_towers;
  j["sample_frames"] = c.sample_frames;
  j["input_size"] = c.input_size;
  j["crop_size"] = c.crop_size;
  j["temporal_crops"] = c.temporal_crops;
  j["spatial_crops"] = c.spatial_crops;
  j["mask_lo"] = c.mask_lo;
  j["mask_hi"] = c.mask_hi;
  j["filter_threshold"] = c.filter_threshold;
  return j;
}

PrompterConfig prompter_config_from_json(const nlohmann::json& j) {
  PrompterConfig c;
  const auto& v = j.at("video");
  c.encoder.video.layers = v.at("layers").get<std::size_t>();
  c.encoder.video.dim = v.at("dim").get<std::size_t>();
  c.encoder.video.heads = v.at("heads").get<std::size_t>();
  c.encoder.video.patch = v.at("patch").get<std::size_t>();
  c.encoder.video.max_frames = v.at("max_frames").get<std::size_t>();
  c.encoder.video.max_patches = v.at("max_patches").get<std::size_t>();
  c.encoder.video.dropout = v.at("dropout").get<double>();
  const auto& t = j.at("text");
  c.encoder.text.layers = t.at("layers").get<std::size_t>();
  c.encoder.text.dim = t.at("dim").get<std::size_t>();
  c.encoder.text.heads = t.at("heads").get<std::size_t>();
  c.encoder.text.max_seq_len = t.at("max_seq_len").get<std::size_t>();
  c.encoder.text.vocab_size = t.at("vocab_size").get<std::size_t>();
  c.encoder.text.dropout = t.at("dropout").get<double>();
  c.encoder.proj_dim = j.at("proj_dim").get<std::size_t>();
  c.encoder.normalize = j.at("normalize").get<bool>();
  c.share_towers = j.at("share_towers").get<bool>();
  c.sample_frames = j.at("sample_frames").get<std::size_t>();
  c.input_size = j.at("input_size").get<std::size_t>();
  c.crop_size = j.at("crop_size").get<std::size_t>();
  c.temporal_crops = j.at("temporal_crops").get<std::size_t>();
  c.spatial_crops = j.at("spatial_crops").get<std::size_t>();
  c.mask_lo = j.at("mask_lo").get<double>();
  c.mask_hi = j.at("mask_hi").get<double>();
  c.filter_threshold = j.at("filter_threshold").get<double>();
  return c;
}

void Prompter::save(const std::string& path) const {
  nlohmann::json config = prompter_config_json(config_);
  config["seed"] = seed_;
  nlohmann::json vj;
  vj["words"] = vocab_.words;
  vj["counts"] = vocab_.counts;
  config["vocabulary"] = vj;
  save_checkpoint(path, "prompter", frozen_, config, params_);
}

Prompter Prompter::load(const std::string& path) {
  LoadedCheckpoint ckpt = load_checkpoint(path);
  if (ckpt.kind != "prompter")
    throw DataError(path + ": checkpoint kind '" + ckpt.kind + "', expected prompter");
  PrompterConfig config = prompter_config_from_json(ckpt.config);
  std::vector<std::string> words =
      ckpt.config.at("vocabulary").at("words").get<std::vector<std::string>>();
  std::vector<std::int64_t> counts =
      ckpt.config.at("vocabulary").at("counts").get<std::vector<std::int64_t>>();
  std::vector<std::pair<std::string, std::int64_t>> pairs;
  for (std::size_t i = 0; i < words.size(); ++i)
    pairs.emplace_back(words[i], i < counts.size() ? counts[i] : 0);
  Vocabulary vocab = Vocabulary::from_counts(std::move(pairs));
  Prompter p(config, vocab, ckpt.config.at("seed").get<std::uint64_t>());
  restore_params(ckpt, p.params_);
  p.frozen_ = ckpt.frozen;
  return p;
}

std::vector<double> average_distributions(
    const std::vector<std::vector<double>>& dists) {
  if (dists.empty()) throw std::invalid_argument("no distributions to average");
  std::size_t n = dists.front().size();
  std::vector<double> out(n, 0.0);
  for (const auto& d : dists) {
    if (d.size() != n)
      throw std::invalid_argument("distribution length mismatch");
    for (std::size_t i = 0; i < n; ++i) out[i] += d[i];
  }
  for (double& v : out) v /= static_cast<double>(dists.size());
  return out;
}

Tensor encode_prompt_rows(const DualEncoder& enc, const PromptSet& prompts,
                          const Vocabulary& vocab) {
  if (prompts.prompts.empty())
    throw std::invalid_argument("heuristics: empty prompt set");
  NoGradGuard guard;
  ForwardCtx ctx;
  std::vector<Tensor> rows;
  rows.reserve(prompts.prompts.size());
  for (const std::string& prompt : prompts.prompts)
    rows.push_back(enc.text_cls(convert_oe(tokenize(prompt, vocab)), ctx));
  return enc.head().project_text(concat_rows(rows));
}

HeuristicDistribution heuristics_with_prompts(const Prompter& prompter,
                                              const VideoTensor& video,
                                              const PromptSet& prompts,
                                              const Tensor& prompt_proj,
                                              RngStream& rng) {
  if (!prompter.frozen())
    throw StateError("heuristics require a frozen prompter");
  if (prompts.kind != "action" && prompts.kind != "entity")
    throw std::invalid_argument("heuristics: unknown prompt kind " + prompts.kind);
  if (prompts.prompts.empty())
    throw std::invalid_argument("heuristics: empty prompt set");
  if (prompt_proj.rows() != prompts.prompts.size())
    throw ShapeError("heuristics: " + std::to_string(prompt_proj.rows()) +
                     " prompt embeddings for " + std::to_string(prompts.prompts.size()) +
                     " prompts");

  NoGradGuard guard;
  ForwardCtx ctx;
  const PrompterConfig& cfg = prompter.config();
  const DualEncoder& enc = prompter.branch(prompts.kind);

  VideoTensor clip = sample_frames(video, cfg.sample_frames, rng);
  std::vector<std::pair<VideoTensor, CropSpec>> crops =
      prompts.kind == "action"
          ? temporal_crop_set(clip, cfg.temporal_crops, cfg.crop_size, cfg.crop_size,
                              rng)
          : spatial_crop_set(clip, cfg.spatial_crops, cfg.crop_size, cfg.crop_size,
                             rng);

  std::size_t words = prompts.num_words();
  double tau = enc.head().tau();
  std::vector<std::vector<double>> per_crop;
  per_crop.reserve(crops.size());
  for (const auto& [crop, spec] : crops) {
    VideoTensor sized = resize_video(crop, cfg.input_size, cfg.input_size);
    Tensor v = enc.head().project_video(enc.video_cls(sized, ctx));
    Tensor sims = similarity_matrix(v, prompt_proj, enc.config().normalize);
    // Word logit = mean similarity over that word's template rows.
    std::vector<double> logits(words, 0.0);
    std::vector<std::size_t> counts(words, 0);
    for (std::size_t r = 0; r < prompts.prompts.size(); ++r) {
      logits[prompts.word_index[r]] += sims.value()[r];
      counts[prompts.word_index[r]] += 1;
    }
    for (std::size_t w = 0; w < words; ++w)
      logits[w] /= static_cast<double>(counts[w]);
    per_crop.push_back(softmax(Tensor::leaf({words}, std::move(logits)), tau).value());
  }

  HeuristicDistribution dist;
  dist.kind = prompts.kind;
  dist.scores = average_distributions(per_crop);
  dist.crop_count = crops.size();

  std::vector<std::string> word_names = prompts.distribution_words();
  std::vector<std::size_t> order(words);
  for (std::size_t i = 0; i < words; ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return dist.scores[a] > dist.scores[b];
  });
  for (std::size_t i = 0; i < std::min<std::size_t>(5, words); ++i)
    dist.top.emplace_back(word_names[order[i]], dist.scores[order[i]]);
  return dist;
}

HeuristicDistribution action_heuristics(const Prompter& prompter,
                                        const VideoTensor& video,
                                        const PromptSet& prompts, RngStream& rng) {
  if (prompts.kind != "action")
    throw std::invalid_argument("action_heuristics got prompt kind " + prompts.kind);
  Tensor proj = encode_prompt_rows(prompter.branch("action"), prompts,
                                   prompter.vocab());
  return heuristics_with_prompts(prompter, video, prompts, proj, rng);
}

HeuristicDistribution entity_heuristics(const Prompter& prompter,
                                        const VideoTensor& video,
                                        const PromptSet& prompts, RngStream& rng) {
  if (prompts.kind != "entity")
    throw std::invalid_argument("entity_heuristics got prompt kind " + prompts.kind);
  Tensor proj = encode_prompt_rows(prompter.branch("entity"), prompts,
                                   prompter.vocab());
  return heuristics_with_prompts(prompter, video, prompts, proj, rng);
}

std::optional<HeuristicDistribution> filter_heuristic(
    const HeuristicDistribution& dist, double threshold) {
  double mx = 0.0;
  for (double s : dist.scores) mx = std::max(mx, s);
  if (mx >= threshold) return dist;
  return std::nullopt;
}

void save_heuristic_store(const std::string& path,
                          const std::vector<HeuristicDistribution>& entries) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open " + path + " for writing");
  for (const HeuristicDistribution& e : entries) {
    nlohmann::json j;
    j["video_id"] = e.video_id;
    j["kind"] = e.kind;
    j["scores"] = e.scores;
    nlohmann::json top = nlohmann::json::array();
    for (const auto& [word, score] : e.top)
      top.push_back({{"word", word}, {"score", score}});
    j["top"] = top;
    j["kept"] = e.kept;
    j["crop_count"] = e.crop_count;
    out << j.dump() << "\n";
  }
  if (!out) throw DataError("short write to " + path);
}

std::vector<HeuristicDistribution> load_heuristic_store(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  std::vector<HeuristicDistribution> entries;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw FormatError(path + ":" + std::to_string(line_no) +
                        ": malformed json: " + e.what());
    }
    try {
      HeuristicDistribution d;
      d.video_id = j.at("video_id").get<std::string>();
      d.kind = j.at("kind").get<std::string>();
      d.scores = j.at("scores").get<std::vector<double>>();
      for (const auto& t : j.at("top"))
        d.top.emplace_back(t.at("word").get<std::string>(),
                           t.at("score").get<double>());
      d.kept = j.at("kept").get<bool>();
      d.crop_count = j.at("crop_count").get<std::size_t>();
      entries.push_back(std::move(d));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(path + ":" + std::to_string(line_no) +
                        ": missing fields: " + e.what());
    }
  }
  return entries;
}

}  // namespace vidqa
