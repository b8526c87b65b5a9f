#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "vidqa/errors.hpp"
#include "vidqa/grad_check.hpp"
#include "vidqa/prompter.hpp"
#include "vidqa/checkpoint.hpp"
#include "vidqa/synth.hpp"

using namespace vidqa;

namespace {

Vocabulary test_vocab() {
  std::vector<std::string> corpus;
  for (const std::string& w : synth_entity_names(8))
    corpus.push_back("A video of a " + w + ".");
  for (const std::string& w : synth_action_names(6))
    corpus.push_back("A video contains the action of " + w + ".");
  corpus.push_back("someone is doing something");
  return Vocabulary::build(corpus);
}

PrompterConfig small_config(std::size_t vocab_size) {
  PrompterConfig cfg;
  cfg.encoder.video.layers = 1;
  cfg.encoder.video.dim = 16;
  cfg.encoder.video.heads = 2;
  cfg.encoder.video.patch = 16;
  cfg.encoder.video.max_frames = 4;
  cfg.encoder.video.max_patches = 4;
  cfg.encoder.text.layers = 1;
  cfg.encoder.text.dim = 16;
  cfg.encoder.text.heads = 2;
  cfg.encoder.text.max_seq_len = 16;
  cfg.encoder.text.vocab_size = vocab_size;
  cfg.encoder.proj_dim = 8;
  cfg.sample_frames = 4;
  cfg.input_size = 32;
  cfg.crop_size = 24;
  cfg.temporal_crops = 2;
  cfg.spatial_crops = 2;
  return cfg;
}

VideoTensor scene_video(std::size_t entity, std::size_t action, std::uint64_t seed) {
  SynthConfig sc;
  sc.num_videos = 1;
  sc.num_entities = 8;
  sc.num_actions = 6;
  sc.frames = 8;
  sc.frame_size = 32;
  return render_synth_video(sc, seed, 0, entity, action);
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<double> unit(const std::vector<double>& v) {
  double sq = 0.0;
  for (double x : v) sq += x * x;
  double nrm = std::sqrt(sq);
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] / nrm;
  return out;
}

std::size_t argmax_of(const std::vector<double>& v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

}  // namespace

TEST_CASE("contrastive loss matches closed-form values") {
  Tensor eye = Tensor::leaf({2, 2}, {1.0, 0.0, 0.0, 1.0});
  Tensor one = Tensor::scalar(1.0);
  double l_eye = vtc_from_similarity(eye, one).value()[0];
  CHECK(std::abs(l_eye - 0.626523) < 1e-6);
  // Each row contributes -log(e / (e + 1)) = log1p(exp(-1)) in both directions.
  CHECK(l_eye == doctest::Approx(2.0 * std::log1p(std::exp(-1.0))).epsilon(1e-12));

  Tensor flat = Tensor::leaf({2, 2}, {0.0, 0.0, 0.0, 0.0});
  double l_flat = vtc_from_similarity(flat, one).value()[0];
  CHECK(std::abs(l_flat - 1.386294) < 1e-6);

  // Sharper temperature on the identity tightens the loss.
  Tensor two = Tensor::scalar(2.0);
  double l_sharp = vtc_from_similarity(eye, two).value()[0];
  CHECK(l_sharp == doctest::Approx(2.0 * std::log1p(std::exp(-2.0))).epsilon(1e-12));
  CHECK(l_sharp < l_eye);

  Tensor flat3 = Tensor::leaf({3, 3}, std::vector<double>(9, 0.25));
  double l3 = vtc_from_similarity(flat3, one).value()[0];
  CHECK(l3 == doctest::Approx(3.0 * std::log(3.0)).epsilon(1e-12));
}

TEST_CASE("contrastive loss is exactly symmetric under transposition") {
  RngStream rng(314);
  Tensor inv = Tensor::scalar(1.7);
  for (int rep = 0; rep < 10; ++rep) {
    std::size_t b = 2 + rng.uniform_index(4);
    std::vector<double> s(b * b), st(b * b);
    for (double& x : s) x = rng.normal();
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t j = 0; j < b; ++j) st[j * b + i] = s[i * b + j];
    double a = vtc_from_similarity(Tensor::leaf({b, b}, s), inv).value()[0];
    double c = vtc_from_similarity(Tensor::leaf({b, b}, st), inv).value()[0];
    CHECK(a == c);
  }
}

TEST_CASE("contrastive loss rejects degenerate batches") {
  Tensor one = Tensor::scalar(1.0);
  CHECK_THROWS_AS(vtc_from_similarity(Tensor::leaf({1, 1}, {0.5}), one),
                  std::invalid_argument);
  CHECK_THROWS_AS(
      vtc_from_similarity(Tensor::leaf({2, 3}, std::vector<double>(6, 0.0)), one),
      ShapeError);

  RngStream master(8);
  ParamMap params;
  ProjectionHead head = ProjectionHead::make(params, "proj", 4, 3, master);
  std::vector<Tensor> vs = {Tensor::leaf({1, 4}, {1, 0, 0, 0})};
  std::vector<Tensor> ts = {Tensor::leaf({1, 4}, {0, 1, 0, 0})};
  CHECK_THROWS_AS(vtc_loss(vs, ts, head, true), std::invalid_argument);
  vs.push_back(Tensor::leaf({1, 4}, {0, 0, 1, 0}));
  CHECK_THROWS_AS(vtc_loss(vs, ts, head, true), ShapeError);
}

TEST_CASE("contrastive loss stays finite with duplicated pairs") {
  RngStream master(9);
  ParamMap params;
  ProjectionHead head = ProjectionHead::make(params, "proj", 4, 3, master);
  Tensor v = Tensor::leaf({1, 4}, {0.3, -0.2, 0.9, 0.1});
  Tensor t = Tensor::leaf({1, 4}, {-0.5, 0.4, 0.2, 0.8});
  std::vector<Tensor> vs = {v, v, Tensor::leaf({1, 4}, {1.0, 1.0, -1.0, 0.0})};
  std::vector<Tensor> ts = {t, t, Tensor::leaf({1, 4}, {0.0, -1.0, 1.0, 1.0})};
  Tensor loss = vtc_loss(vs, ts, head, true);
  CHECK(all_finite(loss));
  CHECK(loss.value()[0] > 0.0);
}

TEST_CASE("projections and temperature learn from the contrastive loss") {
  RngStream master(31);
  ParamMap params;
  ProjectionHead head = ProjectionHead::make(params, "proj", 6, 4, master);
  RngStream data = master.derive("data");
  std::vector<Tensor> vs, ts;
  for (int i = 0; i < 3; ++i) {
    std::vector<double> a(6), b(6);
    for (double& x : a) x = data.normal();
    for (double& x : b) x = data.normal();
    vs.push_back(Tensor::leaf({1, 6}, std::move(a), true));
    ts.push_back(Tensor::leaf({1, 6}, std::move(b), true));
  }
  auto fn = [&](const std::vector<Tensor>&) { return vtc_loss(vs, ts, head, true); };
  std::vector<Tensor> inputs = {vs[0],       ts[1],       head.video.w,
                                head.text.w, head.text.b, head.log_tau};
  double err = grad_check(fn, inputs, 1e-5);
  CHECK(err < 1e-5);
}

TEST_CASE("crop score averaging is the plain element-wise mean") {
  std::vector<double> avg =
      average_distributions({{0.6, 0.3, 0.1}, {0.4, 0.5, 0.1}});
  REQUIRE(avg.size() == 3);
  CHECK(avg[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(avg[1] == doctest::Approx(0.4).epsilon(1e-12));
  CHECK(avg[2] == doctest::Approx(0.1).epsilon(1e-12));

  std::vector<double> single = average_distributions({{0.25, 0.75}});
  CHECK(single == std::vector<double>{0.25, 0.75});

  CHECK_THROWS_AS(average_distributions({}), std::invalid_argument);
  CHECK_THROWS_AS(average_distributions({{0.5, 0.5}, {1.0}}), std::invalid_argument);
}

TEST_CASE("heuristic scores match a hand-rolled oracle") {
  Vocabulary vocab = test_vocab();
  Prompter p(small_config(vocab.size()), vocab, 404);
  p.freeze();
  VideoTensor video = scene_video(0, 0, 11);

  std::vector<std::string> words = {"drift", "rise", "grow"};
  std::vector<std::string> templates = {kDefaultActionPromptTemplate,
                                        "Someone is {}."};
  PromptSet prompts = instantiate_templates(words, templates, "action");
  REQUIRE(prompts.prompts.size() == 6);
  REQUIRE(prompts.num_words() == 3);

  RngStream rng = RngStream(99).derive("heur");
  HeuristicDistribution dist = action_heuristics(p, video, prompts, rng);
  REQUIRE(dist.scores.size() == 3);
  CHECK(dist.crop_count == p.config().temporal_crops);

  // Replay the pipeline by hand: same stream seed gives the same frame
  // sample and crops, then score with plain double loops.
  NoGradGuard guard;
  ForwardCtx ctx;
  const PrompterConfig& cfg = p.config();
  const DualEncoder& enc = p.branch("action");
  std::vector<std::vector<double>> prompt_vecs;
  for (const std::string& text : prompts.prompts) {
    Tensor row = enc.head().project_text(
        enc.text_cls(convert_oe(tokenize(text, vocab)), ctx));
    prompt_vecs.push_back(unit(row.value()));
  }
  RngStream replay = RngStream(99).derive("heur");
  VideoTensor clip = sample_frames(video, cfg.sample_frames, replay);
  auto crops = temporal_crop_set(clip, cfg.temporal_crops, cfg.crop_size,
                                 cfg.crop_size, replay);
  double tau = enc.head().tau();
  std::vector<double> mean(3, 0.0);
  for (const auto& [crop, spec] : crops) {
    VideoTensor sized = resize_video(crop, cfg.input_size, cfg.input_size);
    std::vector<double> v = unit(enc.head().project_video(enc.video_cls(sized, ctx)).value());
    std::vector<double> logits(3, 0.0);
    std::vector<std::size_t> counts(3, 0);
    for (std::size_t r = 0; r < prompts.prompts.size(); ++r) {
      double dot = 0.0;
      for (std::size_t j = 0; j < v.size(); ++j) dot += v[j] * prompt_vecs[r][j];
      logits[prompts.word_index[r]] += dot;
      counts[prompts.word_index[r]] += 1;
    }
    for (std::size_t w = 0; w < 3; ++w)
      logits[w] /= static_cast<double>(counts[w]);
    double mx = *std::max_element(logits.begin(), logits.end());
    double total = 0.0;
    std::vector<double> e(3);
    for (std::size_t w = 0; w < 3; ++w) {
      e[w] = std::exp((logits[w] - mx) / tau);
      total += e[w];
    }
    for (std::size_t w = 0; w < 3; ++w) mean[w] += e[w] / total;
  }
  for (std::size_t w = 0; w < 3; ++w) {
    mean[w] /= static_cast<double>(crops.size());
    CHECK(std::abs(mean[w] - dist.scores[w]) < 1e-10);
  }
}

TEST_CASE("heuristic output is a probability vector with sorted top words") {
  Vocabulary vocab = test_vocab();
  Prompter p(small_config(vocab.size()), vocab, 21);
  p.freeze();
  VideoTensor video = scene_video(2, 3, 5);

  PromptSet prompts = instantiate_templates(
      synth_entity_names(6), {kDefaultEntityPromptTemplate}, "entity");
  RngStream rng = RngStream(3).derive("gen");
  HeuristicDistribution dist = entity_heuristics(p, video, prompts, rng);

  CHECK(dist.kind == "entity");
  CHECK(dist.crop_count == p.config().spatial_crops);
  REQUIRE(dist.scores.size() == 6);
  double total = 0.0;
  for (double s : dist.scores) {
    CHECK(s >= 0.0);
    total += s;
  }
  CHECK(total == doctest::Approx(1.0).epsilon(1e-9));
  REQUIRE(dist.top.size() == 5);
  for (std::size_t i = 1; i < dist.top.size(); ++i)
    CHECK(dist.top[i - 1].second >= dist.top[i].second);
  CHECK(dist.top[0].second == *std::max_element(dist.scores.begin(), dist.scores.end()));
  CHECK(dist.kept);
}

TEST_CASE("identical prompt texts give an exactly uniform distribution") {
  Vocabulary vocab = test_vocab();
  Prompter p(small_config(vocab.size()), vocab, 66);
  p.freeze();
  VideoTensor video = scene_video(1, 1, 7);

  PromptSet same;
  same.kind = "action";
  same.words = {"drift", "rise", "fall"};
  same.prompts = {"a video", "a video", "a video"};
  same.word_index = {0, 1, 2};

  RngStream rng = RngStream(12).derive("gen");
  HeuristicDistribution dist = action_heuristics(p, video, same, rng);
  REQUIRE(dist.scores.size() == 3);
  CHECK(dist.scores[0] == dist.scores[1]);
  CHECK(dist.scores[1] == dist.scores[2]);
  CHECK(dist.scores[0] == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  // All tied: top keeps the original word order.
  CHECK(dist.top[0].first == "drift");
  CHECK(dist.top[1].first == "rise");
  CHECK(dist.top[2].first == "fall");
}

TEST_CASE("a single-word prompt set scores exactly one") {
  Vocabulary vocab = test_vocab();
  Prompter p(small_config(vocab.size()), vocab, 67);
  p.freeze();
  VideoTensor video = scene_video(0, 2, 3);
  PromptSet prompts =
      instantiate_templates({"drift"}, {kDefaultActionPromptTemplate}, "action");
  RngStream rng = RngStream(4).derive("gen");
  HeuristicDistribution dist = action_heuristics(p, video, prompts, rng);
  REQUIRE(dist.scores.size() == 1);
  CHECK(dist.scores[0] == 1.0);
  REQUIRE(dist.top.size() == 1);
  CHECK(dist.top[0].first == "drift");
}

TEST_CASE("temperature rescaling never changes the top word of a single crop") {
  Vocabulary vocab = test_vocab();
  PrompterConfig cfg = small_config(vocab.size());
  cfg.temporal_crops = 1;
  Prompter p(cfg, vocab, 505);
  p.freeze();
  VideoTensor video = scene_video(3, 1, 19);
  PromptSet prompts = instantiate_templates(
      synth_action_names(6), {kDefaultActionPromptTemplate}, "action");

  RngStream rng = RngStream(7).derive("gen");
  HeuristicDistribution base = action_heuristics(p, video, prompts, rng);
  std::size_t want = argmax_of(base.scores);

  Tensor log_tau = p.branch("action").head().log_tau;
  double orig = log_tau.value()[0];
  for (double c : {0.5, 2.0, 10.0}) {
    log_tau.raw_value()[0] = orig + std::log(c);
    RngStream again = RngStream(7).derive("gen");
    HeuristicDistribution scaled = action_heuristics(p, video, prompts, again);
    CHECK(argmax_of(scaled.scores) == want);
    CHECK(scaled.scores != base.scores);
  }
  log_tau.raw_value()[0] = orig;
}

TEST_CASE("heuristic generation is deterministic and leaves parameters untouched") {
  Vocabulary vocab = test_vocab();
  Prompter p(small_config(vocab.size()), vocab, 88);
  p.freeze();
  std::uint64_t before = params_checksum(p.params());
  VideoTensor video = scene_video(4, 4, 23);
  PromptSet prompts = instantiate_templates(
      synth_entity_names(5), {kDefaultEntityPromptTemplate}, "entity");

  RngStream r1 = RngStream(1001).derive("gen");
  RngStream r2 = RngStream(1001).derive("gen");
  HeuristicDistribution a = entity_heuristics(p, video, prompts, r1);
  HeuristicDistribution b = entity_heuristics(p, video, prompts, r2);
  CHECK(a.scores == b.scores);
  CHECK(a.top == b.top);
  CHECK(params_checksum(p.params()) == before);
}

TEST_CASE("heuristics refuse an unfrozen prompter and mismatched inputs") {
  Vocabulary vocab = test_vocab();
  Prompter p(small_config(vocab.size()), vocab, 13);
  VideoTensor video = scene_video(0, 0, 2);
  PromptSet action = instantiate_templates({"drift", "rise"},
                                           {kDefaultActionPromptTemplate}, "action");
  PromptSet entity = instantiate_templates({"square", "circle"},
                                           {kDefaultEntityPromptTemplate}, "entity");
  RngStream rng = RngStream(5).derive("gen");
  CHECK_THROWS_AS(action_heuristics(p, video, action, rng), StateError);

  p.freeze();
  CHECK_THROWS_AS(action_heuristics(p, video, entity, rng), std::invalid_argument);
  CHECK_THROWS_AS(entity_heuristics(p, video, action, rng), std::invalid_argument);

  Tensor proj = encode_prompt_rows(p.branch("action"), action, vocab);
  CHECK(proj.rows() == 2);
  CHECK(proj.cols() == p.config().encoder.proj_dim);
  Tensor wrong = slice_rows(proj, 0, 1);
  CHECK_THROWS_AS(heuristics_with_prompts(p, video, action, wrong, rng), ShapeError);

  PromptSet empty;
  empty.kind = "action";
  CHECK_THROWS_AS(action_heuristics(p, video, empty, rng), std::invalid_argument);
  CHECK_THROWS_AS(p.branch("either"), std::invalid_argument);
}

TEST_CASE("low-confidence distributions are filtered inclusively") {
  HeuristicDistribution weak;
  weak.scores.assign(12, 0.91 / 11.0);
  weak.scores[0] = 0.09;  // max score, still under the cut
  CHECK_FALSE(filter_heuristic(weak, 0.1).has_value());

  HeuristicDistribution strong;
  strong.video_id = "video_0001";
  strong.scores = {0.35, 0.4, 0.25};
  auto kept = filter_heuristic(strong, 0.1);
  REQUIRE(kept.has_value());
  CHECK(kept->video_id == "video_0001");
  CHECK(kept->scores == strong.scores);

  HeuristicDistribution edge;
  edge.scores = std::vector<double>(10, 0.1);
  CHECK(filter_heuristic(edge, 0.1).has_value());
}

TEST_CASE("heuristic store round trips byte for byte") {
  Vocabulary vocab = test_vocab();
  Prompter p(small_config(vocab.size()), vocab, 30);
  p.freeze();
  PromptSet prompts = instantiate_templates(
      synth_action_names(4), {kDefaultActionPromptTemplate}, "action");
  std::vector<HeuristicDistribution> entries;
  for (std::size_t i = 0; i < 3; ++i) {
    RngStream rng = RngStream(40).derive("store", i);
    HeuristicDistribution d =
        action_heuristics(p, scene_video(i, i, 50 + i), prompts, rng);
    d.video_id = synth_video_id(i);
    if (i == 2) d.kept = false;
    entries.push_back(std::move(d));
  }

  std::string path1 = "store_a.jsonl";
  std::string path2 = "store_b.jsonl";
  save_heuristic_store(path1, entries);
  std::vector<HeuristicDistribution> loaded = load_heuristic_store(path1);
  REQUIRE(loaded.size() == entries.size());
  for (std::size_t i = 0; i < entries.size(); ++i) {
    CHECK(loaded[i].video_id == entries[i].video_id);
    CHECK(loaded[i].kind == entries[i].kind);
    CHECK(loaded[i].scores == entries[i].scores);
    CHECK(loaded[i].top == entries[i].top);
    CHECK(loaded[i].kept == entries[i].kept);
    CHECK(loaded[i].crop_count == entries[i].crop_count);
  }
  save_heuristic_store(path2, loaded);
  CHECK(slurp(path1) == slurp(path2));

  std::ofstream bad("store_bad.jsonl", std::ios::trunc);
  bad << "{\"video_id\": \"v\"}\n{not json\n";
  bad.close();
  CHECK_THROWS_AS(load_heuristic_store("store_bad.jsonl"), FormatError);
  std::remove(path1.c_str());
  std::remove(path2.c_str());
  std::remove("store_bad.jsonl");
}

TEST_CASE("prompter checkpoints round trip including vocabulary and freeze state") {
  Vocabulary vocab = test_vocab();
  Prompter p(small_config(vocab.size()), vocab, 99);
  p.freeze();
  std::string path1 = "prompter_a.ckpt";
  std::string path2 = "prompter_b.ckpt";
  p.save(path1);

  Prompter q = Prompter::load(path1);
  CHECK(q.frozen());
  CHECK(q.seed() == 99);
  CHECK(q.vocab().words == vocab.words);
  CHECK(q.vocab().counts == vocab.counts);
  CHECK(q.config().crop_size == p.config().crop_size);
  CHECK(q.config().encoder.video.dim == p.config().encoder.video.dim);
  CHECK(params_checksum(q.params()) == params_checksum(p.params()));
  q.save(path2);
  CHECK(slurp(path1) == slurp(path2));

  // Loaded prompters must produce identical heuristics.
  VideoTensor video = scene_video(1, 2, 9);
  PromptSet prompts = instantiate_templates(
      synth_action_names(3), {kDefaultActionPromptTemplate}, "action");
  RngStream r1 = RngStream(6).derive("gen");
  RngStream r2 = RngStream(6).derive("gen");
  CHECK(action_heuristics(p, video, prompts, r1).scores ==
        action_heuristics(q, video, prompts, r2).scores);

  // An unfrozen prompter stays unfrozen across the round trip.
  Prompter fresh(small_config(vocab.size()), vocab, 100);
  fresh.save("prompter_c.ckpt");
  CHECK_FALSE(Prompter::load("prompter_c.ckpt").frozen());

  std::remove(path1.c_str());
  std::remove(path2.c_str());
  std::remove("prompter_c.ckpt");
}

TEST_CASE("prompter loading rejects corruption and foreign checkpoints") {
  Vocabulary vocab = test_vocab();
  Prompter p(small_config(vocab.size()), vocab, 7);
  std::string path = "prompter_x.ckpt";
  p.save(path);

  std::string bytes = slurp(path);
  std::string flipped = bytes;
  flipped.back() = static_cast<char>(flipped.back() ^ 0x1);
  std::ofstream(path, std::ios::binary | std::ios::trunc) << flipped;
  CHECK_THROWS_AS(Prompter::load(path), FormatError);

  std::ofstream(path, std::ios::binary | std::ios::trunc)
      << bytes.substr(0, bytes.size() / 2);
  CHECK_THROWS_AS(Prompter::load(path), FormatError);

  std::string magicless = bytes;
  magicless[0] = 'X';
  std::ofstream(path, std::ios::binary | std::ios::trunc) << magicless;
  CHECK_THROWS_AS(Prompter::load(path), FormatError);

  ParamMap other;
  other.create_full("w", {2}, 0.5);
  save_checkpoint(path, "reasoner", false, nlohmann::json::object(), other);
  CHECK_THROWS_AS(Prompter::load(path), DataError);
  CHECK_THROWS_AS(Prompter::load("no_such_file.ckpt"), DataError);
  std::remove(path.c_str());
}

TEST_CASE("shared towers use one encoder for both branches") {
  Vocabulary vocab = test_vocab();
  PrompterConfig cfg = small_config(vocab.size());
  cfg.share_towers = true;
  Prompter shared(cfg, vocab, 55);
  CHECK(&shared.branch("action") == &shared.branch("entity"));
  CHECK(shared.params().items().front().first.rfind("enc.", 0) == 0);

  PrompterConfig split_cfg = small_config(vocab.size());
  Prompter split(split_cfg, vocab, 55);
  CHECK(&split.branch("action") != &split.branch("entity"));
  CHECK(split.params().scalar_count() == 2 * shared.params().scalar_count());

  shared.freeze();
  VideoTensor video = scene_video(0, 1, 4);
  PromptSet prompts = instantiate_templates(
      synth_entity_names(3), {kDefaultEntityPromptTemplate}, "entity");
  RngStream rng = RngStream(2).derive("gen");
  HeuristicDistribution dist = entity_heuristics(shared, video, prompts, rng);
  CHECK(dist.scores.size() == 3);

  shared.save("prompter_sh.ckpt");
  Prompter back = Prompter::load("prompter_sh.ckpt");
  CHECK(&back.branch("action") == &back.branch("entity"));
  CHECK(params_checksum(back.params()) == params_checksum(shared.params()));
  std::remove("prompter_sh.ckpt");
}

TEST_CASE("prompter validates its configuration") {
  Vocabulary vocab = test_vocab();
  PrompterConfig good = small_config(vocab.size());

  PrompterConfig c = good;
  c.encoder.text.vocab_size = vocab.size() + 1;
  CHECK_THROWS_AS(Prompter(c, vocab, 1), ConfigError);

  c = good;
  c.crop_size = 0;
  CHECK_THROWS_AS(Prompter(c, vocab, 1), ConfigError);
  c = good;
  c.crop_size = good.input_size + 1;
  CHECK_THROWS_AS(Prompter(c, vocab, 1), ConfigError);
  c = good;
  c.sample_frames = 0;
  CHECK_THROWS_AS(Prompter(c, vocab, 1), ConfigError);
  c = good;
  c.temporal_crops = 0;
  CHECK_THROWS_AS(Prompter(c, vocab, 1), ConfigError);
  c = good;
  c.mask_lo = 0.6;
  c.mask_hi = 0.4;
  CHECK_THROWS_AS(Prompter(c, vocab, 1), ConfigError);
  c = good;
  c.encoder.text.dim = 24;
  CHECK_THROWS_AS(Prompter(c, vocab, 1), ConfigError);

  nlohmann::json j = prompter_config_json(good);
  PrompterConfig round = prompter_config_from_json(j);
  CHECK(round.encoder.video.dim == good.encoder.video.dim);
  CHECK(round.encoder.text.max_seq_len == good.encoder.text.max_seq_len);
  CHECK(round.encoder.proj_dim == good.encoder.proj_dim);
  CHECK(round.encoder.normalize == good.encoder.normalize);
  CHECK(round.share_towers == good.share_towers);
  CHECK(round.sample_frames == good.sample_frames);
  CHECK(round.crop_size == good.crop_size);
  CHECK(round.mask_hi == good.mask_hi);
  CHECK(round.filter_threshold == good.filter_threshold);
}
