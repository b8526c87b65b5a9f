#include "vidqa/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

#include "vidqa/checkpoint.hpp"
#include "vidqa/errors.hpp"

namespace vidqa {

void adamw_step(std::vector<Tensor>& params, OptimizerState& state, double lr) {
  const AdamWConfig& c = state.config;
  if (state.m.empty() && state.v.empty()) {
    state.m.resize(params.size());
    state.v.resize(params.size());
  }
  if (state.m.size() != params.size() || state.v.size() != params.size())
    throw ShapeError("optimizer state tracks a different parameter list");
  state.step += 1;
  double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params[i];
    if (!p.requires_grad()) continue;
    std::vector<double>& x = p.raw_value();
    const std::vector<double>& g = p.grad();
    if (!g.empty() && g.size() != x.size())
      throw ShapeError("gradient size does not match its parameter");
    std::vector<double>& m = state.m[i];
    std::vector<double>& v = state.v[i];
    if (m.empty()) {
      m.assign(x.size(), 0.0);
      v.assign(x.size(), 0.0);
    }
    if (m.size() != x.size())
      throw ShapeError("optimizer moments do not match parameter shape");
    for (std::size_t k = 0; k < x.size(); ++k) {
      double gk = g.empty() ? 0.0 : g[k];
      m[k] = c.beta1 * m[k] + (1.0 - c.beta1) * gk;
      v[k] = c.beta2 * v[k] + (1.0 - c.beta2) * gk * gk;
      double mhat = m[k] / bc1;
      double vhat = v[k] / bc2;
      x[k] = x[k] - lr * mhat / (std::sqrt(vhat) + c.eps) -
             lr * c.weight_decay * x[k];
    }
  }
}

double lr_at(std::int64_t t, const Schedule& schedule) {
  if (schedule.total_steps <= 0)
    throw std::invalid_argument("schedule needs total_steps > 0");
  if (t < 0) throw std::invalid_argument("negative schedule step");
  if (t > schedule.total_steps) {
    std::fprintf(stderr,
                 "warning: step %lld is past the schedule end %lld, lr clamped to 0\n",
                 static_cast<long long>(t),
                 static_cast<long long>(schedule.total_steps));
    return 0.0;
  }
  return schedule.base_lr *
         (1.0 - static_cast<double>(t) / static_cast<double>(schedule.total_steps));
}

double clip_global_norm(const std::vector<Tensor>& params, double max_norm) {
  if (max_norm <= 0.0) throw std::invalid_argument("max_norm must be positive");
  double sq = 0.0;
  for (const Tensor& p : params) {
    if (!p.requires_grad()) continue;
    for (double gk : p.grad()) sq += gk * gk;
  }
  double norm = std::sqrt(sq);
  if (norm > max_norm) {
    double scale = max_norm / norm;
    for (const Tensor& p : params) {
      if (!p.requires_grad()) continue;
      for (double& gk : p.node()->grad) gk *= scale;
    }
  }
  return norm;
}

std::vector<std::size_t> epoch_shuffle(std::size_t n, std::uint64_t seed,
                                       const std::string& purpose,
                                       std::size_t epoch) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  RngStream rng = RngStream(seed).derive(purpose, epoch);
  rng.shuffle(idx);
  return idx;
}

void write_loss_log(const std::string& path, const std::vector<TrainLogRow>& rows) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open loss log for writing: " + path);
  out << "step,lr,loss,loss_pred,loss_tam,loss_sem,gate_mean\n";
  char buf[64];
  auto put = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    out << ',' << buf;
  };
  for (const TrainLogRow& r : rows) {
    out << r.step;
    put(r.lr);
    put(r.loss);
    put(r.loss_pred);
    put(r.loss_tam);
    put(r.loss_sem);
    put(r.gate_mean);
    out << '\n';
  }
  if (!out) throw DataError("failed writing loss log: " + path);
}

std::vector<PretrainPair> synth_pretrain_pairs(const SynthDataset& data) {
  std::vector<PretrainPair> pairs;
  pairs.reserve(data.captions.size());
  for (std::size_t i = 0; i < data.entity_of.size(); ++i) {
    VideoTensor video = render_synth_video(data.config, data.seed, i,
                                           data.entity_of[i], data.action_of[i]);
    for (std::size_t c = 2 * i; c < 2 * i + 2 && c < data.captions.size(); ++c)
      pairs.push_back({video, data.captions[c].caption, data.captions[c].kind});
  }
  return pairs;
}

namespace {

std::vector<int> with_cls(const TokenSequence& ids) {
  std::vector<int> out;
  out.reserve(ids.size() + 1);
  out.push_back(Vocabulary::kCls);
  out.insert(out.end(), ids.begin(), ids.end());
  return out;
}

}  // namespace

PretrainOutput run_pretrain(Prompter& prompter,
                            const std::vector<PretrainPair>& pairs,
                            const PretrainRunConfig& run, std::uint64_t seed) {
  if (pairs.empty()) throw std::invalid_argument("pretraining dataset is empty");
  if (prompter.frozen()) throw StateError("prompter is already frozen");
  if (run.batch_size < 2)
    throw std::invalid_argument("contrastive batches need at least 2 pairs");
  if (run.epochs == 0) throw std::invalid_argument("epochs must be positive");

  std::vector<std::size_t> action_pool, entity_pool;
  std::vector<std::vector<int>> caption_ids(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    if (pairs[i].kind == "action")
      action_pool.push_back(i);
    else if (pairs[i].kind == "entity")
      entity_pool.push_back(i);
    else
      throw std::invalid_argument("unknown pair kind: " + pairs[i].kind);
    caption_ids[i] = with_cls(tokenize(pairs[i].caption, prompter.vocab()));
  }

  auto usable_batches = [&](std::size_t pool) {
    std::size_t full = pool / run.batch_size;
    return full + (pool % run.batch_size >= 2 ? 1 : 0);
  };
  std::size_t per_epoch =
      usable_batches(action_pool.size()) + usable_batches(entity_pool.size());
  if (per_epoch == 0)
    throw std::invalid_argument("not enough pairs for a contrastive batch");

  Schedule schedule{run.base_lr,
                    static_cast<std::int64_t>(per_epoch * run.epochs)};
  std::vector<Tensor> trainables;
  for (const auto& [name, t] : prompter.params().items()) trainables.push_back(t);
  OptimizerState opt;
  opt.config = run.opt;

  const PrompterConfig& cfg = prompter.config();
  PretrainOutput out;
  std::int64_t step = 0;
  for (std::size_t epoch = 0; epoch < run.epochs; ++epoch) {
    auto make_batches = [&](const std::vector<std::size_t>& pool,
                            const char* purpose) {
      std::vector<std::size_t> order =
          epoch_shuffle(pool.size(), seed, purpose, epoch);
      std::vector<std::vector<std::size_t>> batches;
      for (std::size_t s = 0; s < order.size(); s += run.batch_size) {
        std::size_t e = std::min(order.size(), s + run.batch_size);
        if (e - s < 2) break;
        std::vector<std::size_t> b;
        for (std::size_t k = s; k < e; ++k) b.push_back(pool[order[k]]);
        batches.push_back(std::move(b));
      }
      return batches;
    };
    auto action_batches = make_batches(action_pool, "shuffle/action");
    auto entity_batches = make_batches(entity_pool, "shuffle/entity");

    std::size_t ai = 0, ei = 0;
    bool action_turn = true;
    while (ai < action_batches.size() || ei < entity_batches.size()) {
      std::string kind;
      const std::vector<std::size_t>* batch;
      if ((action_turn || ei >= entity_batches.size()) &&
          ai < action_batches.size()) {
        batch = &action_batches[ai++];
        kind = "action";
      } else {
        batch = &entity_batches[ei++];
        kind = "entity";
      }
      action_turn = !action_turn;

      RngStream aug =
          RngStream(seed).derive("aug", static_cast<std::uint64_t>(step));
      RngStream drop =
          RngStream(seed).derive("dropout", static_cast<std::uint64_t>(step));
      ForwardCtx ctx{true, &drop};
      const DualEncoder& enc = prompter.branch(kind);
      std::vector<Tensor> vcls, tcls;
      for (std::size_t pi : *batch) {
        VideoTensor clip = sample_frames(pairs[pi].video, cfg.sample_frames, aug);
        VideoTensor cropped =
            kind == "action"
                ? temporal_crop(clip, cfg.crop_size, cfg.crop_size, aug).first
                : spatial_crop(clip, cfg.crop_size, cfg.crop_size, aug).first;
        VideoTensor resized =
            resize_video(cropped, cfg.input_size, cfg.input_size);
        VideoTensor masked = random_mask(resized, cfg.mask_lo, cfg.mask_hi,
                                         cfg.encoder.video.patch, aug);
        vcls.push_back(enc.video_cls(masked, ctx));
        tcls.push_back(enc.text_cls(caption_ids[pi], ctx));
      }
      Tensor loss = vtc_loss(vcls, tcls, enc.head(), cfg.encoder.normalize);
      for (Tensor& t : trainables) t.zero_grad();
      loss.backward();
      clip_global_norm(trainables, run.clip_norm);
      double lr = lr_at(step, schedule);
      adamw_step(trainables, opt, lr);
      TrainLogRow row;
      row.step = step;
      row.lr = lr;
      row.loss = loss.item();
      out.log.push_back(row);
      ++step;
    }
  }

  prompter.freeze();
  if (!run.log_path.empty()) write_loss_log(run.log_path, out.log);
  if (!run.checkpoint_path.empty()) prompter.save(run.checkpoint_path);
  out.checksum = params_checksum(prompter.params());
  return out;
}

nlohmann::json eval_report_json(const EvalReport& report) {
  nlohmann::json by = nlohmann::json::object();
  for (const auto& [type, acc] : report.accuracy_by_question_type) by[type] = acc;
  return nlohmann::json{{"accuracy_overall", report.accuracy_overall},
                        {"accuracy_by_question_type", by},
                        {"num_samples", report.num_samples},
                        {"seed", report.seed}};
}

std::vector<std::string> collect_answers(const std::vector<QASample>& samples) {
  std::vector<std::string> answers;
  std::unordered_set<std::string> seen;
  for (const QASample& s : samples) {
    if (s.answer_index < 0 ||
        static_cast<std::size_t>(s.answer_index) >= s.candidates.size())
      throw DataError("answer index out of range for " + s.video_path);
    const std::string& a = s.candidates[static_cast<std::size_t>(s.answer_index)];
    if (seen.insert(a).second) answers.push_back(a);
  }
  return answers;
}

namespace {

VideoSource default_source() {
  return [](const QASample& s) { return load_video(s.video_path); };
}

}  // namespace

EvalReport evaluate(const Reasoner& reasoner, const Vocabulary& vocab,
                    const std::vector<QASample>& samples,
                    const std::vector<std::string>& answers, std::uint64_t seed,
                    const VideoSource& video_source) {
  NoGradGuard no_grad;
  ForwardCtx ctx;
  VideoSource source = video_source ? video_source : default_source();
  const bool open_ended = reasoner.config().answer_mode == "oe";
  std::unordered_map<std::string, std::size_t> answer_id;
  for (std::size_t i = 0; i < answers.size(); ++i) answer_id[answers[i]] = i;

  std::map<std::string, std::pair<std::size_t, std::size_t>> by_type;
  std::size_t correct = 0;
  for (const QASample& s : samples) {
    Tensor vid = reasoner.video_tokens(source(s), ctx);
    TokenSequence question = tokenize(s.question, vocab);
    bool ok = false;
    if (open_ended) {
      Tensor txt = reasoner.text_tokens(convert_oe(question), ctx);
      Prediction pred = reasoner.predict_oe(reasoner.fuse(vid, txt, ctx).e_cls);
      auto it = answer_id.find(s.candidates[static_cast<std::size_t>(s.answer_index)]);
      ok = it != answer_id.end() && pred.predicted == it->second;
    } else {
      std::vector<Tensor> cls;
      for (const std::string& cand : s.candidates) {
        Tensor txt = reasoner.text_tokens(
            convert_mc(question, tokenize(cand, vocab)), ctx);
        cls.push_back(reasoner.fuse(vid, txt, ctx).e_cls);
      }
      Prediction pred = reasoner.predict_mc(cls);
      ok = pred.predicted == static_cast<std::size_t>(s.answer_index);
    }
    auto& bucket = by_type[s.question_type];
    bucket.second += 1;
    if (ok) {
      bucket.first += 1;
      correct += 1;
    }
  }

  EvalReport report;
  report.num_samples = samples.size();
  report.seed = seed;
  report.accuracy_overall =
      samples.empty() ? 0.0
                      : static_cast<double>(correct) /
                            static_cast<double>(samples.size());
  for (const auto& [type, counts] : by_type)
    report.accuracy_by_question_type[type] =
        static_cast<double>(counts.first) / static_cast<double>(counts.second);
  return report;
}

QATrainOutput run_train_qa(Reasoner& reasoner, const Vocabulary& vocab,
                           const std::vector<QASample>& samples,
                           const std::vector<HeuristicDistribution>& store,
                           const QARunConfig& run, std::uint64_t seed,
                           const VideoSource& video_source) {
  if (samples.empty()) throw std::invalid_argument("manifest is empty");
  if (run.epochs == 0) throw std::invalid_argument("epochs must be positive");
  if (run.batch_size == 0) throw std::invalid_argument("batch_size must be positive");
  if (run.holdout_fraction < 0.0 || run.holdout_fraction >= 1.0)
    throw ConfigError("holdout_fraction must be in [0,1)");
  if (run.max_missing_fraction < 0.0 || run.max_missing_fraction > 1.0)
    throw ConfigError("max_missing_fraction must be in [0,1]");

  std::unordered_map<std::string, const HeuristicDistribution*> action_h, entity_h;
  for (const HeuristicDistribution& h : store) {
    if (h.kind == "action")
      action_h[h.video_id] = &h;
    else if (h.kind == "entity")
      entity_h[h.video_id] = &h;
    else
      throw DataError("unknown heuristic kind: " + h.kind);
  }
  std::unordered_set<std::string> video_ids;
  for (const QASample& s : samples) video_ids.insert(s.video_id());
  std::size_t missing = 0;
  for (const std::string& id : video_ids)
    if (!action_h.count(id) && !entity_h.count(id)) ++missing;
  if (static_cast<double>(missing) >
      run.max_missing_fraction * static_cast<double>(video_ids.size()))
    throw DataError("heuristic store is missing " + std::to_string(missing) +
                    " of " + std::to_string(video_ids.size()) + " video ids");

  const ReasonerConfig& cfg = reasoner.config();
  const bool open_ended = cfg.answer_mode == "oe";
  std::vector<std::string> answers = collect_answers(samples);
  std::unordered_map<std::string, std::size_t> answer_id;
  for (std::size_t i = 0; i < answers.size(); ++i) answer_id[answers[i]] = i;
  if (open_ended && cfg.answer_vocab != answers.size())
    throw ConfigError("answer_vocab " + std::to_string(cfg.answer_vocab) +
                      " does not match " + std::to_string(answers.size()) +
                      " distinct answers");

  QATrainOutput out;
  {
    std::vector<std::size_t> order =
        epoch_shuffle(samples.size(), seed, "holdout", 0);
    std::size_t eval_n = static_cast<std::size_t>(
        std::floor(run.holdout_fraction * static_cast<double>(samples.size())));
    out.eval_indices.assign(order.begin(), order.begin() + eval_n);
    out.train_indices.assign(order.begin() + eval_n, order.end());
    std::sort(out.eval_indices.begin(), out.eval_indices.end());
    std::sort(out.train_indices.begin(), out.train_indices.end());
  }
  if (out.train_indices.empty())
    throw std::invalid_argument("holdout leaves no training samples");

  VideoSource source = video_source ? video_source : default_source();
  std::unordered_map<std::string, VideoTensor> video_cache;
  auto video_of = [&](const QASample& s) -> const VideoTensor& {
    auto it = video_cache.find(s.video_path);
    if (it == video_cache.end())
      it = video_cache.emplace(s.video_path, source(s)).first;
    return it->second;
  };

  struct Prepared {
    std::vector<int> question_ids;               // [CLS] question
    std::vector<std::vector<int>> candidate_ids; // MC rows
    std::size_t answer = 0;
    const HeuristicDistribution* action = nullptr;
    const HeuristicDistribution* entity = nullptr;
  };
  std::vector<Prepared> prep(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const QASample& s = samples[i];
    TokenSequence question = tokenize(s.question, vocab);
    prep[i].question_ids = convert_oe(question);
    if (open_ended) {
      prep[i].answer =
          answer_id.at(s.candidates[static_cast<std::size_t>(s.answer_index)]);
    } else {
      for (const std::string& cand : s.candidates)
        prep[i].candidate_ids.push_back(
            convert_mc(question, tokenize(cand, vocab)));
      prep[i].answer = static_cast<std::size_t>(s.answer_index);
    }
    std::string id = s.video_id();
    auto ah = action_h.find(id);
    if (ah != action_h.end() && ah->second->kept) prep[i].action = ah->second;
    auto eh = entity_h.find(id);
    if (eh != entity_h.end() && eh->second->kept) prep[i].entity = eh->second;
  }

  const LossConfig& loss_cfg = cfg.loss;
  const bool gated = loss_cfg.mode == "gated";
  const bool with_heuristics = loss_cfg.mode != "disabled";

  std::vector<Tensor> trainables;
  for (const auto& [name, t] : reasoner.params().items()) trainables.push_back(t);
  OptimizerState opt;
  opt.config = run.opt;
  std::size_t steps_per_epoch =
      (out.train_indices.size() + run.batch_size - 1) / run.batch_size;
  Schedule schedule{run.base_lr,
                    static_cast<std::int64_t>(steps_per_epoch * run.epochs)};

  std::int64_t step = 0;
  for (std::size_t epoch = 0; epoch < run.epochs; ++epoch) {
    std::vector<std::size_t> order =
        epoch_shuffle(out.train_indices.size(), seed, "shuffle/qa", epoch);
    for (std::size_t start = 0; start < order.size(); start += run.batch_size) {
      std::size_t end = std::min(order.size(), start + run.batch_size);
      RngStream drop =
          RngStream(seed).derive("dropout", static_cast<std::uint64_t>(step));
      ForwardCtx ctx{true, &drop};

      std::vector<Tensor> sample_losses;
      double pred_sum = 0.0, tam_sum = 0.0, sem_sum = 0.0, gate_sum = 0.0;
      for (std::size_t k = start; k < end; ++k) {
        std::size_t si = out.train_indices[order[k]];
        const QASample& s = samples[si];
        const Prepared& p = prep[si];
        Tensor vid = reasoner.video_tokens(video_of(s), ctx);
        Prediction pred;
        Tensor pooled;
        if (open_ended) {
          Tensor e_cls =
              reasoner.fuse(vid, reasoner.text_tokens(p.question_ids, ctx), ctx)
                  .e_cls;
          pred = reasoner.predict_oe(e_cls);
          pooled = e_cls;
        } else {
          std::vector<Tensor> cls;
          for (const std::vector<int>& ids : p.candidate_ids)
            cls.push_back(
                reasoner.fuse(vid, reasoner.text_tokens(ids, ctx), ctx).e_cls);
          pred = reasoner.predict_mc(cls);
          pooled = mean_rows(concat_rows(cls));
        }
        Tensor lp = pred_loss(pred, p.answer);
        Tensor tam = Tensor::scalar(0.0);
        Tensor sem = Tensor::scalar(0.0);
        if (with_heuristics) {
          std::optional<HeuristicDistribution> ha, he;
          if (p.action) ha = *p.action;
          if (p.entity) he = *p.entity;
          tam = tam_loss(reasoner.action_probs(pooled), ha);
          sem = sem_loss(reasoner.entity_probs(pooled), he);
        }
        Tensor g;
        if (gated) g = reasoner.gate(reasoner.question_cls(p.question_ids, ctx), ctx);
        sample_losses.push_back(total_loss(lp, tam, sem, loss_cfg, g));
        pred_sum += lp.item();
        tam_sum += tam.item();
        sem_sum += sem.item();
        if (gated) gate_sum += g.item();
      }
      Tensor batch_total = sample_losses.front();
      for (std::size_t k = 1; k < sample_losses.size(); ++k)
        batch_total = add(batch_total, sample_losses[k]);
      double inv_n = 1.0 / static_cast<double>(sample_losses.size());
      batch_total = scale(batch_total, inv_n);

      for (Tensor& t : trainables) t.zero_grad();
      batch_total.backward();
      clip_global_norm(trainables, run.clip_norm);
      double lr = lr_at(step, schedule);
      adamw_step(trainables, opt, lr);

      TrainLogRow row;
      row.step = step;
      row.lr = lr;
      row.loss = batch_total.item();
      row.loss_pred = pred_sum * inv_n;
      row.loss_tam = tam_sum * inv_n;
      row.loss_sem = sem_sum * inv_n;
      row.gate_mean = gated ? gate_sum * inv_n
                            : (loss_cfg.mode == "fixed" ? loss_cfg.alpha : 0.0);
      out.log.push_back(row);
      ++step;
    }
  }

  std::vector<QASample> train_split, eval_split;
  for (std::size_t i : out.train_indices) train_split.push_back(samples[i]);
  for (std::size_t i : out.eval_indices) eval_split.push_back(samples[i]);
  out.train_accuracy =
      evaluate(reasoner, vocab, train_split, answers, seed, source)
          .accuracy_overall;
  const std::vector<QASample>& eval_set =
      eval_split.empty() ? train_split : eval_split;
  out.report = evaluate(reasoner, vocab, eval_set, answers, seed, source);

  if (!run.log_path.empty()) write_loss_log(run.log_path, out.log);
  if (!run.checkpoint_path.empty()) reasoner.save(run.checkpoint_path);
  if (!run.report_path.empty()) {
    std::ofstream rf(run.report_path, std::ios::binary | std::ios::trunc);
    if (!rf) throw DataError("cannot open report for writing: " + run.report_path);
    rf << eval_report_json(out.report).dump(2) << '\n';
  }
  return out;
}

}  // namespace vidqa
