#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "vidqa/prompter.hpp"
#include "vidqa/reasoner.hpp"
#include "vidqa/synth.hpp"

namespace vidqa {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.001;
};

// Moment buffers aligned by position with the parameter list handed to
// adamw_step; the same list must be passed on every step.
struct OptimizerState {
  AdamWConfig config;
  std::int64_t step = 0;
  std::vector<std::vector<double>> m, v;
};

// Decoupled-weight-decay update reading gradients off the tensors. An empty
// gradient buffer counts as zeros; tensors without requires_grad are skipped.
void adamw_step(std::vector<Tensor>& params, OptimizerState& state, double lr);

struct Schedule {
  double base_lr = 5e-5;
  std::int64_t total_steps = 1;
};

// Linear decay base_lr * (1 - t/T). Steps past the end clamp to zero with a
// stderr warning.
double lr_at(std::int64_t t, const Schedule& schedule);

// Scales gradients in place so their global L2 norm is at most max_norm;
// returns the pre-clip norm.
double clip_global_norm(const std::vector<Tensor>& params, double max_norm);

// Permutation of 0..n-1 drawn from a stream derived per (seed, purpose,
// epoch), so every epoch reshuffles and every run replays exactly.
std::vector<std::size_t> epoch_shuffle(std::size_t n, std::uint64_t seed,
                                       const std::string& purpose,
                                       std::size_t epoch);

struct TrainLogRow {
  std::int64_t step = 0;
  double lr = 0.0;
  double loss = 0.0;
  double loss_pred = 0.0;
  double loss_tam = 0.0;
  double loss_sem = 0.0;
  double gate_mean = 0.0;
};

// CSV with header step,lr,loss,loss_pred,loss_tam,loss_sem,gate_mean.
// Doubles print with full round-trip precision, so identical rows give
// identical bytes.
void write_loss_log(const std::string& path, const std::vector<TrainLogRow>& rows);

struct PretrainPair {
  VideoTensor video;
  std::string caption;
  std::string kind;  // "action" | "entity"
};

// Renders every dataset video once and pairs it with both captions.
std::vector<PretrainPair> synth_pretrain_pairs(const SynthDataset& data);

struct PretrainRunConfig {
  std::size_t batch_size = 8;
  std::size_t epochs = 2;
  double base_lr = 5e-5;
  double clip_norm = 1.0;
  AdamWConfig opt;
  std::string log_path;         // empty skips the CSV
  std::string checkpoint_path;  // empty skips the checkpoint
};

struct PretrainOutput {
  std::vector<TrainLogRow> log;
  std::uint64_t checksum = 0;  // parameter checksum after freezing
};

// Contrastive pretraining over (video, caption) pairs: batches alternate
// between the action branch (temporal crops) and the entity branch (spatial
// crops), with masking applied after the resize. Freezes the prompter at the
// end and, when asked, saves the frozen checkpoint.
PretrainOutput run_pretrain(Prompter& prompter,
                            const std::vector<PretrainPair>& pairs,
                            const PretrainRunConfig& run, std::uint64_t seed);

struct EvalReport {
  double accuracy_overall = 0.0;
  std::map<std::string, double> accuracy_by_question_type;
  std::size_t num_samples = 0;
  std::uint64_t seed = 0;
};

nlohmann::json eval_report_json(const EvalReport& report);

struct QARunConfig {
  std::size_t batch_size = 8;
  std::size_t epochs = 2;
  double base_lr = 5e-5;
  double clip_norm = 1.0;
  double holdout_fraction = 0.25;   // 0 evaluates on the training split
  double max_missing_fraction = 0.5;
  AdamWConfig opt;
  std::string log_path;
  std::string checkpoint_path;
  std::string report_path;
};

struct QATrainOutput {
  std::vector<TrainLogRow> log;
  EvalReport report;
  std::vector<std::size_t> train_indices;
  std::vector<std::size_t> eval_indices;
  double train_accuracy = 0.0;
};

// Distinct ground-truth answer strings in first-appearance order; the open
// ended answer space.
std::vector<std::string> collect_answers(const std::vector<QASample>& samples);

using VideoSource = std::function<VideoTensor(const QASample&)>;

// Fine-tunes the reasoner on the manifest with heuristic supervision from an
// offline store. Store entries are keyed by (video id, kind); ids absent from
// the store or marked not kept contribute a zero heuristic term. Videos load
// from sample.video_path unless a source override is given.
QATrainOutput run_train_qa(Reasoner& reasoner, const Vocabulary& vocab,
                           const std::vector<QASample>& samples,
                           const std::vector<HeuristicDistribution>& store,
                           const QARunConfig& run, std::uint64_t seed,
                           const VideoSource& video_source = {});

// Accuracy of the reasoner on the given samples, overall and per question
// type. Evaluation mode, no gradients.
EvalReport evaluate(const Reasoner& reasoner, const Vocabulary& vocab,
                    const std::vector<QASample>& samples,
                    const std::vector<std::string>& answers, std::uint64_t seed,
                    const VideoSource& video_source = {});

}  // namespace vidqa
