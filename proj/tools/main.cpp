#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "vidqa/config.hpp"
#include "vidqa/errors.hpp"
#include "vidqa/grad_check.hpp"
#include "vidqa/ops.hpp"
#include "vidqa/prompter.hpp"
#include "vidqa/reasoner.hpp"
#include "vidqa/rng.hpp"
#include "vidqa/synth.hpp"
#include "vidqa/tensor.hpp"
#include "vidqa/text.hpp"
#include "vidqa/training.hpp"
#include "vidqa/video.hpp"

namespace fs = std::filesystem;
using namespace vidqa;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void print_usage(std::ostream& os) {
  os << "usage: vidqa <command> [--config=FILE] [--key=value ...]\n"
        "\n"
        "commands:\n"
        "  gen-data            render the synthetic video set, manifest and captions\n"
        "  extract-vocab       mine action/entity terms and build the token vocabulary\n"
        "  make-prompts        instantiate prompt templates over the mined terms\n"
        "  pretrain-prompter   contrastive pretraining of the dual-encoder prompter\n"
        "  gen-heuristics      score prompts against videos into the heuristic store\n"
        "  train-qa            fine-tune the reasoner with heuristic supervision\n"
        "  eval                evaluate a trained reasoner over the full manifest\n"
        "  inspect-heuristics  dump top-scoring words for one video id\n"
        "  grad-check          finite-difference verification of gradients\n"
        "\n"
        "pipeline artifacts land in <out>/<config-hash>-s<seed>/\n";
}

nlohmann::json parse_common(const std::vector<std::string>& args) {
  std::string config_path;
  std::vector<std::string> overrides;
  for (const std::string& a : args) {
    if (a.rfind("--config=", 0) == 0) {
      config_path = a.substr(9);
    } else if (a.rfind("--", 0) == 0) {
      if (a.find('=') == std::string::npos)
        throw UsageError("flags take the form --key=value: " + a);
      overrides.push_back(a);
    } else {
      throw UsageError("unexpected argument: " + a);
    }
  }
  return resolve_config(config_path, overrides);
}

struct Run {
  nlohmann::json cfg;
  std::string dir;
  std::uint64_t seed = 0;

  std::string path(const std::string& name) const { return dir + "/" + name; }
};

Run prepare(const std::vector<std::string>& args) {
  Run run;
  run.cfg = parse_common(args);
  run.dir = run_dir_for(run.cfg);
  run.seed = run.cfg.at("seed").get<std::uint64_t>();
  fs::create_directories(run.dir);
  std::ofstream out(run.path("resolved_config.json"), std::ios::binary);
  if (!out) throw DataError("cannot write " + run.path("resolved_config.json"));
  out << run.cfg.dump(2) << "\n";
  return run;
}

void write_captions(const std::string& path, const std::vector<CaptionPair>& captions) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  for (const CaptionPair& c : captions) {
    nlohmann::json j{{"video_id", c.video_id}, {"kind", c.kind}, {"caption", c.caption}};
    out << j.dump() << "\n";
  }
}

std::vector<CaptionPair> read_captions(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  std::vector<CaptionPair> captions;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line);
    captions.push_back({j.at("video_id").get<std::string>(),
                        j.at("kind").get<std::string>(),
                        j.at("caption").get<std::string>()});
  }
  return captions;
}

void write_terms(const std::string& path,
                 const std::vector<std::pair<std::string, std::int64_t>>& terms) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  for (const auto& [word, count] : terms) out << word << "\t" << count << "\n";
}

std::vector<std::string> read_term_words(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  std::vector<std::string> words;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    words.push_back(line.substr(0, line.find('\t')));
  }
  return words;
}

SynthConfig synth_config_of(const nlohmann::json& cfg) {
  const nlohmann::json& d = cfg.at("data");
  SynthConfig sc;
  sc.num_videos = d.at("num_videos").get<std::size_t>();
  sc.num_entities = d.at("num_entities").get<std::size_t>();
  sc.num_actions = d.at("num_actions").get<std::size_t>();
  sc.frames = d.at("frames").get<std::size_t>();
  sc.frame_size = d.at("frame_size").get<std::size_t>();
  return sc;
}

VideoSource run_video_source(const Run& run) {
  std::string dir = run.dir;
  return [dir](const QASample& s) { return load_video(dir + "/" + s.video_path); };
}

int cmd_gen_data(const std::vector<std::string>& args) {
  Run run = prepare(args);
  SynthConfig sc = synth_config_of(run.cfg);
  SynthDataset data = generate_synth_dataset(sc, run.seed);
  fs::create_directories(run.path("videos"));
  for (std::size_t i = 0; i < data.samples.size(); ++i) {
    VideoTensor v =
        render_synth_video(sc, run.seed, i, data.entity_of[i], data.action_of[i]);
    store_video(run.dir + "/" + data.samples[i].video_path, v);
  }
  save_manifest(run.path("manifest.jsonl"), data.samples);
  write_captions(run.path("captions.jsonl"), data.captions);
  std::cout << "wrote " << data.samples.size() << " videos, manifest and captions to "
            << run.dir << "\n";
  return 0;
}

std::string template_text(std::string t) {
  std::size_t pos = t.find("{}");
  if (pos != std::string::npos) t.replace(pos, 2, " ");
  return t;
}

int cmd_extract_vocab(const std::vector<std::string>& args) {
  Run run = prepare(args);
  std::vector<QASample> samples = load_manifest(run.path("manifest.jsonl"));
  std::vector<CaptionPair> captions = read_captions(run.path("captions.jsonl"));
  const nlohmann::json& lex_cfg = run.cfg.at("lexicon");
  Lexicon lexicon = Lexicon::load(lex_cfg.at("verbs").get<std::string>(),
                                  lex_cfg.at("nouns").get<std::string>());
  std::size_t top_k = lex_cfg.at("top_k").get<std::size_t>();

  auto actions = extract_top_terms(samples, lexicon, TermKind::kAction, top_k);
  auto entities = extract_top_terms(samples, lexicon, TermKind::kEntity, top_k);
  write_terms(run.path("terms_action.tsv"), actions);
  write_terms(run.path("terms_entity.tsv"), entities);

  std::vector<std::string> corpus;
  for (const QASample& s : samples) {
    corpus.push_back(s.question);
    for (const std::string& c : s.candidates) corpus.push_back(c);
  }
  for (const CaptionPair& c : captions) corpus.push_back(c.caption);
  for (const char* kind : {"entity", "action"})
    for (const auto& t : run.cfg.at("templates").at(kind))
      corpus.push_back(template_text(t.get<std::string>()));
  Vocabulary vocab = Vocabulary::build(corpus);
  vocab.save_tsv(run.path("vocab.tsv"));
  std::cout << "terms: " << actions.size() << " action, " << entities.size()
            << " entity; vocabulary size " << vocab.size() << "\n";
  return 0;
}

int cmd_make_prompts(const std::vector<std::string>& args) {
  Run run = prepare(args);
  for (const char* kind : {"action", "entity"}) {
    std::vector<std::string> words =
        read_term_words(run.path(std::string("terms_") + kind + ".tsv"));
    std::vector<std::string> templates =
        run.cfg.at("templates").at(kind).get<std::vector<std::string>>();
    PromptSet prompts = instantiate_templates(words, templates, kind);
    prompts.save_jsonl(run.path(std::string("prompts_") + kind + ".jsonl"));
    std::cout << kind << ": " << prompts.prompts.size() << " prompts over "
              << prompts.num_words() << " words\n";
  }
  return 0;
}

int cmd_pretrain_prompter(const std::vector<std::string>& args) {
  Run run = prepare(args);
  Vocabulary vocab = Vocabulary::load_tsv(run.path("vocab.tsv"));
  nlohmann::json pj = run.cfg.at("prompter");
  pj["text"]["vocab_size"] = vocab.size();
  Prompter prompter(prompter_config_from_json(pj), vocab, run.seed);

  std::vector<PretrainPair> pairs;
  for (const CaptionPair& c : read_captions(run.path("captions.jsonl")))
    pairs.push_back({load_video(run.path("videos/" + c.video_id + ".vten")),
                     c.caption, c.kind});

  const nlohmann::json& pt = run.cfg.at("pretrain");
  PretrainRunConfig rc;
  rc.batch_size = pt.at("batch_size").get<std::size_t>();
  rc.epochs = pt.at("epochs").get<std::size_t>();
  rc.base_lr = pt.at("base_lr").get<double>();
  rc.clip_norm = pt.at("clip_norm").get<double>();
  rc.opt.weight_decay = pt.at("weight_decay").get<double>();
  rc.log_path = run.path("pretrain_log.csv");
  rc.checkpoint_path = run.path("prompter.ckpt");
  PretrainOutput out = run_pretrain(prompter, pairs, rc, run.seed);
  std::cout << "pretrained on " << pairs.size() << " pairs over " << out.log.size()
            << " steps; frozen checkpoint " << rc.checkpoint_path << "\n";
  return 0;
}

int cmd_gen_heuristics(const std::vector<std::string>& args) {
  Run run = prepare(args);
  Prompter prompter = Prompter::load(run.path("prompter.ckpt"));
  if (!prompter.frozen()) throw StateError("prompter not frozen");
  PromptSet action_prompts = PromptSet::load_jsonl(run.path("prompts_action.jsonl"));
  PromptSet entity_prompts = PromptSet::load_jsonl(run.path("prompts_entity.jsonl"));
  std::vector<QASample> samples = load_manifest(run.path("manifest.jsonl"));
  double threshold = run.cfg.at("prompter").at("filter_threshold").get<double>();

  std::vector<HeuristicDistribution> entries;
  std::size_t kept = 0;
  std::unordered_set<std::string> seen;
  for (const QASample& s : samples) {
    std::string id = s.video_id();
    if (!seen.insert(id).second) continue;
    VideoTensor video = load_video(run.dir + "/" + s.video_path);
    RngStream rng = RngStream(run.seed).derive("heuristics/" + id);
    for (HeuristicDistribution dist :
         {action_heuristics(prompter, video, action_prompts, rng),
          entity_heuristics(prompter, video, entity_prompts, rng)}) {
      dist.video_id = id;
      dist.kept = filter_heuristic(dist, threshold).has_value();
      kept += dist.kept ? 1 : 0;
      entries.push_back(std::move(dist));
    }
  }
  save_heuristic_store(run.path("heuristics.jsonl"), entries);
  std::cout << "heuristics for " << seen.size() << " videos: " << entries.size()
            << " entries, " << kept << " kept\n";
  return 0;
}

int cmd_train_qa(const std::vector<std::string>& args) {
  Run run = prepare(args);
  Vocabulary vocab = Vocabulary::load_tsv(run.path("vocab.tsv"));
  std::vector<QASample> samples = load_manifest(run.path("manifest.jsonl"));
  std::vector<HeuristicDistribution> store =
      load_heuristic_store(run.path("heuristics.jsonl"));
  PromptSet action_prompts = PromptSet::load_jsonl(run.path("prompts_action.jsonl"));
  PromptSet entity_prompts = PromptSet::load_jsonl(run.path("prompts_entity.jsonl"));

  nlohmann::json rj = run.cfg.at("reasoner");
  rj["text"]["vocab_size"] = vocab.size();
  rj["action_words"] = action_prompts.num_words();
  rj["entity_words"] = entity_prompts.num_words();
  rj["answer_vocab"] = rj.at("answer_mode").get<std::string>() == "oe"
                           ? collect_answers(samples).size()
                           : 0;
  Reasoner reasoner(reasoner_config_from_json(rj), run.seed);

  const nlohmann::json& tr = run.cfg.at("train");
  QARunConfig rc;
  rc.batch_size = tr.at("batch_size").get<std::size_t>();
  rc.epochs = tr.at("epochs").get<std::size_t>();
  rc.base_lr = tr.at("base_lr").get<double>();
  rc.clip_norm = tr.at("clip_norm").get<double>();
  rc.holdout_fraction = tr.at("holdout_fraction").get<double>();
  rc.max_missing_fraction = tr.at("max_missing_fraction").get<double>();
  rc.opt.weight_decay = tr.at("weight_decay").get<double>();
  rc.log_path = run.path("train_log.csv");
  rc.checkpoint_path = run.path("reasoner.ckpt");
  rc.report_path = run.path("eval_report.json");
  QATrainOutput out = run_train_qa(reasoner, vocab, samples, store, rc, run.seed,
                                   run_video_source(run));
  std::cout << "trained on " << out.train_indices.size() << " samples, held out "
            << out.eval_indices.size() << "; train accuracy " << out.train_accuracy
            << ", held-out accuracy " << out.report.accuracy_overall << "\n";
  return 0;
}

int cmd_eval(const std::vector<std::string>& args) {
  Run run = prepare(args);
  Reasoner reasoner = Reasoner::load(run.path("reasoner.ckpt"));
  Vocabulary vocab = Vocabulary::load_tsv(run.path("vocab.tsv"));
  std::vector<QASample> samples = load_manifest(run.path("manifest.jsonl"));
  EvalReport report = evaluate(reasoner, vocab, samples, collect_answers(samples),
                               run.seed, run_video_source(run));
  std::ofstream out(run.path("eval_full_report.json"), std::ios::binary);
  if (!out) throw DataError("cannot write " + run.path("eval_full_report.json"));
  out << eval_report_json(report).dump(2) << "\n";
  std::cout << "accuracy " << report.accuracy_overall << " over "
            << report.num_samples << " samples\n";
  return 0;
}

int cmd_inspect_heuristics(const std::vector<std::string>& args) {
  Run run = prepare(args);
  const nlohmann::json& q = run.cfg.at("query");
  std::string id = q.at("video_id").get<std::string>();
  if (id.empty())
    throw UsageError("inspect-heuristics needs --query.video_id=<id>");
  std::string kind = q.at("kind").get<std::string>();
  if (kind != "action" && kind != "entity" && kind != "both")
    throw ConfigError("query.kind must be action, entity or both");
  std::size_t top_k = q.at("top_k").get<std::size_t>();
  double threshold = run.cfg.at("prompter").at("filter_threshold").get<double>();

  bool found = false;
  for (const HeuristicDistribution& e :
       load_heuristic_store(run.path("heuristics.jsonl"))) {
    if (e.video_id != id) continue;
    if (kind != "both" && e.kind != kind) continue;
    found = true;
    std::string line = id + " " + e.kind + ":";
    std::size_t n = std::min(top_k, e.top.size());
    for (std::size_t i = 0; i < n; ++i) {
      char item[80];
      std::snprintf(item, sizeof item, "%s%s %.3f", i == 0 ? " " : " / ",
                    e.top[i].first.c_str(), e.top[i].second);
      line += item;
    }
    if (!e.kept) {
      double top_score = e.top.empty() ? 0.0 : e.top.front().second;
      char note[48];
      std::snprintf(note, sizeof note, " (discarded: max %.2f < %.2f)", top_score,
                    threshold);
      line += note;
    }
    std::cout << line << "\n";
  }
  if (!found) throw DataError("no heuristic entries for video id " + id);
  return 0;
}

Tensor rnd_leaf(Shape shape, RngStream& rng, bool requires_grad = true) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = rng.uniform(-1.5, 1.5);
  return Tensor::leaf(std::move(shape), std::move(v), requires_grad);
}

// Fixed weight with coordinates bounded away from zero, so no output
// coordinate of the op under test gets a vanishing (noise-dominated) slot in
// the relative-error denominator.
Tensor rnd_weight(Shape shape, RngStream& rng) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v)
    x = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.5, 1.5);
  return Tensor::leaf(std::move(shape), std::move(v), false);
}

struct GradCase {
  const char* name;
  double tol;
  std::function<double(RngStream&)> once;  // one repetition's worst error
};

std::vector<GradCase> primitive_grad_cases() {
  auto w1 = [](const Tensor& x, const Tensor& w) { return sum(mul(x, w)); };
  std::vector<GradCase> cases;
  auto add_case = [&](const char* name, std::function<double(RngStream&)> fn) {
    cases.push_back({name, 1e-6, std::move(fn)});
  };

  add_case("add", [w1](RngStream& rng) {
    Tensor a = rnd_leaf({3, 4}, rng), b = rnd_leaf({3, 4}, rng);
    Tensor w = rnd_weight({3, 4}, rng);
    return grad_check(
        [&](const std::vector<Tensor>& in) { return w1(add(in[0], in[1]), w); },
        {a, b});
  });
  add_case("sub", [w1](RngStream& rng) {
    Tensor a = rnd_leaf({3, 4}, rng), b = rnd_leaf({3, 4}, rng);
    Tensor w = rnd_weight({3, 4}, rng);
    return grad_check(
        [&](const std::vector<Tensor>& in) { return w1(sub(in[0], in[1]), w); },
        {a, b});
  });
  add_case("mul", [w1](RngStream& rng) {
    Tensor a = rnd_leaf({3, 4}, rng), b = rnd_leaf({3, 4}, rng);
    Tensor w = rnd_weight({3, 4}, rng);
    return grad_check(
        [&](const std::vector<Tensor>& in) { return w1(mul(in[0], in[1]), w); },
        {a, b});
  });
  add_case("scale", [w1](RngStream& rng) {
    Tensor a = rnd_leaf({3, 4}, rng);
    Tensor w = rnd_weight({3, 4}, rng);
    double c = rng.uniform(0.3, 2.0);
    return grad_check(
        [&](const std::vector<Tensor>& in) { return w1(scale(in[0], c), w); }, {a});
  });
  add_case("scale_by", [w1](RngStream& rng) {
    Tensor a = rnd_leaf({3, 4}, rng);
    Tensor s = Tensor::leaf({1}, {rng.uniform(0.3, 2.0)}, true);
    Tensor w = rnd_weight({3, 4}, rng);
    return grad_check(
        [&](const std::vector<Tensor>& in) { return w1(scale_by(in[0], in[1]), w); },
        {a, s});
  });
  add_case("add_bias", [w1](RngStream& rng) {
    Tensor a = rnd_leaf({3, 4}, rng), v = rnd_leaf({4}, rng);
    Tensor w = rnd_weight({3, 4}, rng);
    return grad_check(
        [&](const std::vector<Tensor>& in) { return w1(add_bias(in[0], in[1]), w); },
        {a, v});
  });
  add_case("matmul", [w1](RngStream& rng) {
    Tensor a = rnd_leaf({3, 4}, rng), b = rnd_leaf({4, 2}, rng);
    Tensor w = rnd_weight({3, 2}, rng);
    return grad_check(
        [&](const std::vector<Tensor>& in) { return w1(matmul(in[0], in[1]), w); },
        {a, b});
  });
  add_case("transpose", [w1](RngStream& rng) {
    Tensor a = rnd_leaf({3, 4}, rng);
    Tensor w = rnd_weight({4, 3}, rng);
    return grad_check(
        [&](const std::vector<Tensor>& in) { return w1(transpose(in[0]), w); }, {a});
  });
  add_case("gather_rows", [w1](RngStream& rng) {
    Tensor a = rnd_leaf({3, 4}, rng);
    Tensor w = rnd_weight({4, 4}, rng);
    return grad_check(
        [&](const std::vector<Tensor>& in) {
          return w1(gather_rows(in[0], {0, 2, 2, 1}), w);
        },
        {a});
  });
  add_case("slice_rows", [w1](RngStream& rng) {
    Tensor a = rnd_leaf({3, 4}, rng);
    Tensor w = rnd_weight({2, 4}, rng);
    return grad_check(
        [&](const std::vector<Tensor>& in) { return w1(slice_rows(in[0], 1, 3), w); },
        {a});
  });
  add_case("slice_cols", [w1](RngStream& rng) {
    Tensor a = rnd_leaf({3, 4}, rng);
    Tensor w = rnd_weight({3, 3}, rng);
    return grad_check(
        [&](const std::vector<Tensor>& in) { return w1(slice_cols(in[0], 1, 4), w); },
        {a});
  });
  add_case("concat_rows", [w1](RngStream& rng) {
    Tensor a = rnd_leaf({2, 4}, rng), b = rnd_leaf({3, 4}, rng);
    Tensor w = rnd_weight({5, 4}, rng);
    return grad_check(
        [&](const std::vector<Tensor>& in) {
          return w1(concat_rows({in[0], in[1]}), w);
        },
        {a, b});
  });
  add_case("concat_cols", [w1](RngStream& rng) {
    Tensor a = rnd_leaf({3, 2}, rng), b = rnd_leaf({3, 3}, rng);
    Tensor w = rnd_weight({3, 5}, rng);
    return grad_check(
        [&](const std::vector<Tensor>& in) {
          return w1(concat_cols({in[0], in[1]}), w);
        },
        {a, b});
  });
  add_case("as_row", [w1](RngStream& rng) {
    Tensor v = rnd_leaf({4}, rng);
    Tensor w = rnd_weight({1, 4}, rng);
    return grad_check(
        [&](const std::vector<Tensor>& in) { return w1(as_row(in[0]), w); }, {v});
  });
  add_case("row_vector", [w1](RngStream& rng) {
    Tensor a = rnd_leaf({3, 4}, rng);
    Tensor w = rnd_weight({4}, rng);
    return grad_check(
        [&](const std::vector<Tensor>& in) { return w1(row_vector(in[0], 1), w); },
        {a});
  });
  add_case("sum", [](RngStream& rng) {
    Tensor a = rnd_leaf({3, 4}, rng);
    double c = rng.uniform(0.5, 1.5);
    return grad_check(
        [&](const std::vector<Tensor>& in) { return scale(sum(in[0]), c); }, {a});
  });
  add_case("mean", [](RngStream& rng) {
    Tensor a = rnd_leaf({3, 4}, rng);
    double c = rng.uniform(0.5, 1.5);
    return grad_check(
        [&](const std::vector<Tensor>& in) { return scale(mean(in[0]), c); }, {a});
  });
  add_case("mean_rows", [w1](RngStream& rng) {
    Tensor a = rnd_leaf({3, 4}, rng);
    Tensor w = rnd_weight({1, 4}, rng);
    return grad_check(
        [&](const std::vector<Tensor>& in) { return w1(mean_rows(in[0]), w); }, {a});
  });
  add_case("gelu", [w1](RngStream& rng) {
    Tensor a = rnd_leaf({3, 4}, rng);
    Tensor w = rnd_weight({3, 4}, rng);
    return grad_check(
        [&](const std::vector<Tensor>& in) { return w1(gelu(in[0]), w); }, {a});
  });
  add_case("sigmoid", [w1](RngStream& rng) {
    Tensor a = rnd_leaf({3, 4}, rng);
    Tensor w = rnd_weight({3, 4}, rng);
    return grad_check(
        [&](const std::vector<Tensor>& in) { return w1(sigmoid(in[0]), w); }, {a});
  });
  add_case("exp", [w1](RngStream& rng) {
    Tensor a = rnd_leaf({3, 4}, rng);
    Tensor w = rnd_weight({3, 4}, rng);
    return grad_check(
        [&](const std::vector<Tensor>& in) {
          return w1(exp_elem(scale(in[0], 0.5)), w);
        },
        {a});
  });
  add_case("log", [w1](RngStream& rng) {
    std::vector<double> v(12);
    for (double& x : v) x = rng.uniform(0.2, 2.0);
    Tensor a = Tensor::leaf({3, 4}, std::move(v), true);
    Tensor w = rnd_weight({3, 4}, rng);
    return grad_check(
        [&](const std::vector<Tensor>& in) { return w1(log_elem(in[0]), w); }, {a});
  });
  add_case("softmax", [w1](RngStream& rng) {
    Tensor v = rnd_leaf({5}, rng);
    Tensor w = rnd_weight({5}, rng);
    return grad_check(
        [&](const std::vector<Tensor>& in) { return w1(softmax(in[0], 0.7), w); },
        {v});
  });
  add_case("softmax_rows", [w1](RngStream& rng) {
    Tensor a = rnd_leaf({3, 4}, rng);
    Tensor w = rnd_weight({3, 4}, rng);
    return grad_check(
        [&](const std::vector<Tensor>& in) {
          return w1(softmax_rows(in[0], 0.7), w);
        },
        {a});
  });
  add_case("l2_normalize_rows", [w1](RngStream& rng) {
    Tensor a = rnd_leaf({3, 4}, rng);
    Tensor w = rnd_weight({3, 4}, rng);
    return grad_check(
        [&](const std::vector<Tensor>& in) { return w1(l2_normalize_rows(in[0]), w); },
        {a});
  });
  add_case("layer_norm_rows", [w1](RngStream& rng) {
    Tensor a = rnd_leaf({3, 4}, rng);
    Tensor g = rnd_leaf({4}, rng), b = rnd_leaf({4}, rng);
    Tensor w = rnd_weight({3, 4}, rng);
    return grad_check(
        [&](const std::vector<Tensor>& in) {
          return w1(layer_norm_rows(in[0], in[1], in[2]), w);
        },
        {a, g, b});
  });
  add_case("dropout", [w1](RngStream& rng) {
    Tensor a = rnd_leaf({3, 4}, rng);
    Tensor w = rnd_weight({3, 4}, rng);
    std::uint64_t mask_seed = rng.next_u64();
    // A fresh stream per evaluation repeats the same mask, keeping the
    // function pure as the checker requires.
    return grad_check(
        [&](const std::vector<Tensor>& in) {
          RngStream r(mask_seed);
          return w1(dropout(in[0], 0.4, r, true), w);
        },
        {a});
  });
  add_case("soft_cross_entropy", [](RngStream& rng) {
    Tensor t = rnd_leaf({5}, rng), p = rnd_leaf({5}, rng);
    double c = rng.uniform(0.5, 1.5);
    return grad_check(
        [&](const std::vector<Tensor>& in) {
          return scale(soft_cross_entropy(softmax(in[0], 1.0), softmax(in[1], 1.0)),
                       c);
        },
        {t, p});
  });
  add_case("embed_rows", [w1](RngStream& rng) {
    Tensor table = rnd_leaf({4, 3}, rng);
    Tensor w = rnd_weight({4, 3}, rng);
    return grad_check(
        [&](const std::vector<Tensor>& in) {
          return w1(embed_rows(in[0], {0, 1, 1, 3}), w);
        },
        {table});
  });
  return cases;
}

// One representative parameter per reasoner component, each with the step
// size its error regime needs: attention score projections start at 0.02
// scale and are noise-limited (wider step), embeddings are curvature-limited
// (narrower step).
double composed_reasoner_err(std::vector<std::pair<std::string, double>>& rows) {
  ReasonerConfig cfg;
  cfg.video.layers = 1;
  cfg.video.dim = 8;
  cfg.video.heads = 2;
  cfg.video.patch = 8;
  cfg.video.max_frames = 2;
  cfg.video.max_patches = 4;
  cfg.text.layers = 1;
  cfg.text.dim = 8;
  cfg.text.heads = 2;
  cfg.text.max_seq_len = 12;
  cfg.text.vocab_size = 12;
  cfg.fusion_layers = 1;
  cfg.fusion_heads = 2;
  cfg.action_words = 3;
  cfg.entity_words = 4;
  cfg.answer_mode = "mc";
  Reasoner r(cfg, 37);
  {
    // The zero-initialized gate output would zero every gradient behind it.
    RngStream perk(101);
    Tensor w = r.params().at("gate.out.w");
    for (double& x : w.raw_value()) x = perk.normal(0.0, 0.25);
  }

  RngStream vid_rng(3);
  VideoTensor video = VideoTensor::zeros(3, 2, 16, 16);
  for (double& x : video.data) x = vid_rng.uniform();
  std::vector<std::vector<int>> candidate_ids = {
      {0, 4, 7, 1, 5}, {0, 4, 7, 1, 6}, {0, 4, 7, 1, 8}};
  std::vector<int> question_ids = {0, 4, 7};
  HeuristicDistribution h_action;
  h_action.scores = {0.5, 0.3, 0.2};
  HeuristicDistribution h_entity;
  h_entity.scores = {0.4, 0.3, 0.2, 0.1};
  LossConfig gated;
  gated.mode = "gated";

  auto sample_loss = [&](const std::vector<Tensor>&) {
    ForwardCtx ctx;
    Tensor vid = r.video_tokens(video, ctx);
    std::vector<Tensor> cls;
    for (const auto& ids : candidate_ids)
      cls.push_back(r.fuse(vid, r.text_tokens(ids, ctx), ctx).e_cls);
    Prediction pred = r.predict_mc(cls);
    Tensor pooled = mean_rows(concat_rows(cls));
    Tensor tam = tam_loss(r.action_probs(pooled), h_action);
    Tensor sem = sem_loss(r.entity_probs(pooled), h_entity);
    Tensor g = r.gate(r.question_cls(question_ids, ctx), ctx);
    return total_loss(pred_loss(pred, 1), tam, sem, gated, g);
  };

  struct Probe {
    const char* name;
    double eps;
  };
  const Probe probes[] = {{"video.cls", 1e-4},
                          {"video.patch_proj.b", 1e-4},
                          {"video.block0.temporal.q.w", 1e-3},
                          {"text.tok_emb", 1e-4},
                          {"fuse.block0.self.v.w", 1e-4},
                          {"fuse.block0.cross.q.w", 1e-3},
                          {"fuse.block0.ffn.contract.w", 1e-4},
                          {"head.action.w", 1e-4},
                          {"head.entity.b", 1e-4},
                          {"head.answer.w", 1e-4},
                          {"gate.hidden.w", 1e-4},
                          {"gate.out.w", 1e-4}};
  double worst = 0.0;
  for (const Probe& p : probes) {
    double err = grad_check(sample_loss, {r.params().at(p.name)}, p.eps);
    rows.emplace_back(p.name, err);
    worst = std::max(worst, err);
  }
  return worst;
}

int cmd_grad_check(const std::vector<std::string>& args) {
  nlohmann::json cfg = parse_common(args);
  std::uint64_t seed = cfg.at("seed").get<std::uint64_t>();
  constexpr int kReps = 100;

  bool all_ok = true;
  auto report = [&](const std::string& name, double err, double tol) {
    bool ok = err < tol;
    all_ok = all_ok && ok;
    std::printf("%-34s max_err %.3e  tol %.0e  %s\n", name.c_str(), err, tol,
                ok ? "ok" : "FAIL");
  };

  for (const GradCase& c : primitive_grad_cases()) {
    RngStream rng = RngStream(seed).derive(std::string("grad/") + c.name);
    double worst = 0.0;
    for (int rep = 0; rep < kReps; ++rep) worst = std::max(worst, c.once(rng));
    report(c.name, worst, c.tol);
  }

  std::vector<std::pair<std::string, double>> rows;
  composed_reasoner_err(rows);
  for (const auto& [name, err] : rows) report("reasoner-loss/" + name, err, 1e-4);

  std::printf("%s\n", all_ok ? "all gradients ok" : "gradient check FAILED");
  return all_ok ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  if (args.empty()) {
    print_usage(std::cerr);
    return 1;
  }
  std::string cmd = args.front();
  args.erase(args.begin());
  try {
    if (cmd == "gen-data") return cmd_gen_data(args);
    if (cmd == "extract-vocab") return cmd_extract_vocab(args);
    if (cmd == "make-prompts") return cmd_make_prompts(args);
    if (cmd == "pretrain-prompter") return cmd_pretrain_prompter(args);
    if (cmd == "gen-heuristics") return cmd_gen_heuristics(args);
    if (cmd == "train-qa") return cmd_train_qa(args);
    if (cmd == "eval") return cmd_eval(args);
    if (cmd == "inspect-heuristics") return cmd_inspect_heuristics(args);
    if (cmd == "grad-check") return cmd_grad_check(args);
    std::cerr << "unknown command: " << cmd << "\n";
    print_usage(std::cerr);
    return 1;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
