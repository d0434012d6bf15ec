#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "nlohmann/json.hpp"
#include "sspext/checkpoint.hpp"
#include "sspext/corpus.hpp"
#include "sspext/evalharness.hpp"
#include "sspext/selfsup.hpp"

namespace sspext {

struct TrainingConfig {
  std::string phase = "pretrain";  // "pretrain" | "finetune"
  double learning_rate = 1e-4;     // 1e-5 under finetune_defaults()
  int max_epochs = 30;
  int batch_size = 8;              // documents per step
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 5.0;          // global gradient-norm bound
  int patience = 3;                // epochs without dev improvement
  uint64_t rng_seed = 0;

  static TrainingConfig pretrain_defaults();
  static TrainingConfig finetune_defaults();
  void validate() const;
};

// Cross-entropy over the logistic selection head; probabilities clamped to
// [1e-7, 1-1e-7] inside bce_masked.
template <typename S>
Var<S> build_finetune_loss(Tape<S>& tape, const ParameterVars<S>& pv,
                           const std::vector<std::vector<int>>& sentences,
                           const std::vector<int>& labels, Rng* dropout_rng = nullptr) {
  if (sentences.size() != labels.size())
    throw std::invalid_argument("finetune loss: label length mismatch");
  Var<S> s = encode_sentences(tape, pv, sentences);
  Var<S> d = contextualize(tape, pv, s, std::vector<char>(sentences.size(), 1), dropout_rng);
  Var<S> probs = head_scores(tape, pv, d, HeadKind::kSelect);
  return bce_masked(probs, labels, std::vector<char>(labels.size(), 1));
}

class AdamOptimizer {
 public:
  AdamOptimizer(const ModelParameters<float>& params, const TrainingConfig& cfg);

  // Clips the global gradient norm, then applies one Adam update. grads are in
  // for_each_tensor order; empty entries mean zero gradient.
  void step(ModelParameters<float>& params, std::vector<MatF>& grads);

  int steps_taken() const { return t_; }

 private:
  double lr_, beta1_, beta2_, eps_, clip_;
  int t_ = 0;
  std::vector<MatF> m_, v_;
};

double global_grad_norm(const std::vector<MatF>& grads);
void clip_gradients(std::vector<MatF>& grads, double max_norm);

// Per-document loss assembly: return the loss node, or skipped=true to leave
// the document out of this batch.
using DocLossFn =
    std::function<DocLoss<float>(Tape<float>&, const ParameterVars<float>&, size_t doc_index)>;

struct EpochResult {
  double mean_loss = 0.0;  // over non-skipped documents
  int skipped = 0;
};

EpochResult train_epoch(ModelParameters<float>& params, size_t n_docs, const DocLossFn& loss_fn,
                        AdamOptimizer& opt, const TrainingConfig& cfg, int epoch);

struct PretrainEpoch {
  int epoch = 0;
  double train_loss = 0.0;
  double dev_loss = 0.0;
};

struct PretrainResult {
  ModelParameters<float> best_params;
  int best_epoch = 0;
  double best_dev_loss = 0.0;
  std::vector<PretrainEpoch> history;
};

// Pre-train on one corruption task with dev-loss early stopping. Dev
// corruption instances are generated once and reused every epoch so the dev
// loss is comparable across epochs.
PretrainResult run_pretrain(const std::vector<EncodedDocument>& train,
                            const std::vector<EncodedDocument>& dev, CorruptionTask task,
                            const ModelParameters<float>& init_params,
                            const CorruptionConfig& corruption, const TrainingConfig& training);

struct FinetuneEpoch {
  int epoch = 0;
  double train_loss = 0.0;
  double rouge1 = 0.0, rouge2 = 0.0, rougel = 0.0;  // dev scores
};

struct FinetuneResult {
  ModelParameters<float> best_params;
  int best_epoch = 0;
  CorpusRouge best_dev;
  std::vector<FinetuneEpoch> history;
};

// Fine-tune on oracle labels; model selection and early stopping by dev
// ROUGE-2. Every training document must carry labels.
FinetuneResult run_finetune(const std::vector<EncodedDocument>& train, const EvalCorpus& dev,
                            const ModelParameters<float>& init_params,
                            const TrainingConfig& training, int threads = 1);

void write_pretrain_history_csv(const std::string& path,
                                const std::vector<PretrainEpoch>& history);
void write_finetune_history_csv(const std::string& path,
                                const std::vector<FinetuneEpoch>& history);

// ---- run configuration --------------------------------------------------------

struct RunConfig {
  ModelConfig model;
  CorruptionConfig corruption;
  TrainingConfig training;
  CorpusLimits limits;
};

// key=value lines, '#' comments; unknown keys are errors.
void apply_config_entry(RunConfig& cfg, const std::string& key, const std::string& value);
void load_config_file(RunConfig& cfg, const std::string& path);
nlohmann::json config_snapshot(const RunConfig& cfg);

}  // namespace sspext
