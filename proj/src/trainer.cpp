#include "sspext/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace sspext {

TrainingConfig TrainingConfig::pretrain_defaults() {
  TrainingConfig cfg;
  cfg.phase = "pretrain";
  cfg.learning_rate = 1e-4;
  return cfg;
}

TrainingConfig TrainingConfig::finetune_defaults() {
  TrainingConfig cfg;
  cfg.phase = "finetune";
  cfg.learning_rate = 1e-5;
  return cfg;
}

void TrainingConfig::validate() const {
  if (phase != "pretrain" && phase != "finetune")
    throw std::invalid_argument("training config: unknown phase " + phase);
  // zero is allowed so a no-op epoch can be exercised; negative rates are not.
  if (learning_rate < 0.0)
    throw std::invalid_argument("training config: learning_rate must be non-negative");
  if (max_epochs < 1) throw std::invalid_argument("training config: max_epochs must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("training config: batch_size must be >= 1");
  if (patience < 1) throw std::invalid_argument("training config: patience must be >= 1");
  if (clip_norm <= 0.0) throw std::invalid_argument("training config: clip_norm must be positive");
}

AdamOptimizer::AdamOptimizer(const ModelParameters<float>& params, const TrainingConfig& cfg)
    : lr_(cfg.learning_rate), beta1_(cfg.beta1), beta2_(cfg.beta2), eps_(cfg.eps),
      clip_(cfg.clip_norm) {
  params.for_each_tensor([this](const std::string&, const MatF& t) {
    m_.push_back(MatF::Zero(t.rows(), t.cols()));
    v_.push_back(MatF::Zero(t.rows(), t.cols()));
  });
}

double global_grad_norm(const std::vector<MatF>& grads) {
  double sq = 0.0;
  for (const MatF& g : grads)
    if (g.size() != 0) sq += g.cast<double>().squaredNorm();
  return std::sqrt(sq);
}

void clip_gradients(std::vector<MatF>& grads, double max_norm) {
  const double norm = global_grad_norm(grads);
  if (norm <= max_norm || norm == 0.0) return;
  const float s = static_cast<float>(max_norm / norm);
  for (MatF& g : grads)
    if (g.size() != 0) g *= s;
}

void AdamOptimizer::step(ModelParameters<float>& params, std::vector<MatF>& grads) {
  if (grads.size() != m_.size()) throw std::invalid_argument("optimizer: gradient count mismatch");
  clip_gradients(grads, clip_);
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, t_);
  const double bc2 = 1.0 - std::pow(beta2_, t_);
  size_t i = 0;
  params.for_each_tensor([this, &grads, &i, bc1, bc2](const std::string&, MatF& t) {
    const MatF& g = grads[i];
    if (g.size() != 0) {
      m_[i] = static_cast<float>(beta1_) * m_[i] + static_cast<float>(1.0 - beta1_) * g;
      v_[i] = (static_cast<float>(beta2_) * v_[i].array() +
               static_cast<float>(1.0 - beta2_) * g.array().square())
                  .matrix();
      const auto m_hat = m_[i].array() / static_cast<float>(bc1);
      const auto v_hat = v_[i].array() / static_cast<float>(bc2);
      t.array() -= static_cast<float>(lr_) * m_hat / (v_hat.sqrt() + static_cast<float>(eps_));
    }
    ++i;
  });
}

EpochResult train_epoch(ModelParameters<float>& params, size_t n_docs, const DocLossFn& loss_fn,
                        AdamOptimizer& opt, const TrainingConfig& cfg, int epoch) {
  if (n_docs == 0) throw std::invalid_argument("train_epoch: empty data");
  std::vector<size_t> order(n_docs);
  std::iota(order.begin(), order.end(), size_t{0});
  Rng shuffle_rng(derive_seed(cfg.rng_seed, "shuffle", static_cast<uint64_t>(epoch), 0));
  shuffle_rng.shuffle(order);

  double loss_sum = 0.0;
  size_t loss_count = 0;
  int skipped = 0;
  int batch_index = 0;
  for (size_t start = 0; start < n_docs; start += cfg.batch_size, ++batch_index) {
    const size_t end = std::min(n_docs, start + static_cast<size_t>(cfg.batch_size));
    Tape<float> tape;
    ParameterVars<float> pv = register_parameters(tape, params, /*trainable=*/true);
    std::vector<Var<float>> losses;
    for (size_t k = start; k < end; ++k) {
      DocLoss<float> dl = loss_fn(tape, pv, order[k]);
      if (dl.skipped) {
        ++skipped;
        continue;
      }
      losses.push_back(dl.loss);
    }
    if (losses.empty()) continue;
    Var<float> batch_loss =
        mean_scalars(std::span<const Var<float>>(losses.data(), losses.size()));
    if (!std::isfinite(batch_loss.scalar()))
      throw std::runtime_error("non-finite loss in batch " + std::to_string(batch_index));
    for (const Var<float>& l : losses) {
      loss_sum += l.scalar();
      ++loss_count;
    }
    tape.backward(batch_loss);
    std::vector<MatF> grads;
    grads.reserve(pv.tensor_ids.size());
    for (int id : pv.tensor_ids) grads.push_back(tape.node(id).grad);
    opt.step(params, grads);
  }
  EpochResult res;
  res.mean_loss = loss_count ? loss_sum / static_cast<double>(loss_count) : 0.0;
  res.skipped = skipped;
  return res;
}

namespace {

// Deterministic per-document corruption; one instance per (seed_tag, doc).
std::optional<CorruptedDocument> corrupt_for_task(const EncodedDocument& doc, CorruptionTask task,
                                                  const ReplacePool* pool,
                                                  const CorruptionConfig& corruption,
                                                  uint64_t seed) {
  Rng rng(seed);
  switch (task) {
    case CorruptionTask::kMask: {
      auto cd = corrupt_mask(doc, corruption, rng);
      if (cd && cd->pool.size() < 2) return std::nullopt;  // no negatives to rank against
      return cd;
    }
    case CorruptionTask::kReplace: return corrupt_replace(doc, *pool, corruption, rng);
    case CorruptionTask::kSwitch: return corrupt_switch(doc, corruption, rng);
  }
  throw std::logic_error("corrupt_for_task: unknown task");
}

double mean_pretrain_dev_loss(const ModelParameters<float>& params,
                              const std::vector<CorruptedDocument>& dev_instances,
                              const CorruptionConfig& corruption) {
  if (dev_instances.empty()) return std::numeric_limits<double>::quiet_NaN();
  double sum = 0.0;
  size_t count = 0;
  for (const CorruptedDocument& cd : dev_instances) {
    Tape<float> tape;
    ParameterVars<float> pv = register_parameters(tape, params, /*trainable=*/false);
    DocLoss<float> dl = build_pretrain_loss(tape, pv, cd, static_cast<float>(corruption.margin));
    if (dl.skipped) continue;
    sum += dl.loss.scalar();
    ++count;
  }
  return count ? sum / static_cast<double>(count) : std::numeric_limits<double>::quiet_NaN();
}

}  // namespace

PretrainResult run_pretrain(const std::vector<EncodedDocument>& train,
                            const std::vector<EncodedDocument>& dev, CorruptionTask task,
                            const ModelParameters<float>& init_params,
                            const CorruptionConfig& corruption, const TrainingConfig& training) {
  training.validate();
  corruption.validate();
  if (train.empty()) throw std::invalid_argument("run_pretrain: empty training corpus");

  ReplacePool pool;
  if (task == CorruptionTask::kReplace) {
    Rng pool_rng(derive_seed(corruption.rng_seed, "replacepool", 0, 0));
    pool = build_replace_pool(std::span<const EncodedDocument>(train.data(), train.size()),
                              corruption, pool_rng);
  }

  // Fixed dev instances so the dev loss measures the same problem every epoch.
  std::vector<CorruptedDocument> dev_instances;
  for (const EncodedDocument& doc : dev) {
    auto cd = corrupt_for_task(doc, task, &pool, corruption,
                               derive_seed(corruption.rng_seed, "devcorrupt", 0, fnv1a(doc.id)));
    if (cd) dev_instances.push_back(std::move(*cd));
  }

  ModelParameters<float> params = init_params;
  AdamOptimizer opt(params, training);
  PretrainResult result;
  result.best_params = params;
  result.best_dev_loss = std::numeric_limits<double>::infinity();
  int since_best = 0;

  for (int epoch = 0; epoch < training.max_epochs; ++epoch) {
    DocLossFn loss_fn = [&](Tape<float>& tape, const ParameterVars<float>& pv,
                            size_t doc_index) -> DocLoss<float> {
      const EncodedDocument& doc = train[doc_index];
      auto cd = corrupt_for_task(
          doc, task, &pool, corruption,
          derive_seed(corruption.rng_seed, "corrupt", static_cast<uint64_t>(epoch),
                      fnv1a(doc.id)));
      if (!cd) return {{}, true};
      return build_pretrain_loss(tape, pv, *cd, static_cast<float>(corruption.margin));
    };
    EpochResult er = train_epoch(params, train.size(), loss_fn, opt, training, epoch);
    double dev_loss = mean_pretrain_dev_loss(params, dev_instances, corruption);
    if (std::isnan(dev_loss)) dev_loss = er.mean_loss;  // no usable dev instances

    result.history.push_back({epoch, er.mean_loss, dev_loss});
    if (dev_loss < result.best_dev_loss) {
      result.best_dev_loss = dev_loss;
      result.best_epoch = epoch;
      result.best_params = params;
      since_best = 0;
    } else if (++since_best >= training.patience) {
      break;
    }
  }
  return result;
}

FinetuneResult run_finetune(const std::vector<EncodedDocument>& train, const EvalCorpus& dev,
                            const ModelParameters<float>& init_params,
                            const TrainingConfig& training, int threads) {
  training.validate();
  if (train.empty()) throw std::invalid_argument("run_finetune: empty training corpus");
  for (const EncodedDocument& doc : train)
    if (!doc.labels || doc.labels->size() != doc.sentence_ids.size())
      throw std::invalid_argument("run_finetune: document missing labels: " + doc.id);
  if (dev.docs.empty()) throw std::invalid_argument("run_finetune: empty dev corpus");

  ModelParameters<float> params = init_params;
  AdamOptimizer opt(params, training);
  FinetuneResult result;
  result.best_params = params;
  double best_r2 = -1.0;
  int since_best = 0;

  for (int epoch = 0; epoch < training.max_epochs; ++epoch) {
    DocLossFn loss_fn = [&train](Tape<float>& tape, const ParameterVars<float>& pv,
                                 size_t doc_index) -> DocLoss<float> {
      const EncodedDocument& doc = train[doc_index];
      return {build_finetune_loss(tape, pv, doc.sentence_ids, *doc.labels), false};
    };
    EpochResult er = train_epoch(params, train.size(), loss_fn, opt, training, epoch);
    CorpusRouge scores = evaluate_model(params, dev, 3, threads);
    result.history.push_back({epoch, er.mean_loss, scores.rouge1, scores.rouge2, scores.rougel});
    if (scores.rouge2 > best_r2) {
      best_r2 = scores.rouge2;
      result.best_epoch = epoch;
      result.best_dev = scores;
      result.best_params = params;
      since_best = 0;
    } else if (++since_best >= training.patience) {
      break;
    }
  }
  return result;
}

void write_pretrain_history_csv(const std::string& path,
                                const std::vector<PretrainEpoch>& history) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("could not open history for writing: " + path);
  out << "epoch,train_loss,dev_loss\n";
  for (const PretrainEpoch& e : history)
    out << e.epoch << "," << e.train_loss << "," << e.dev_loss << "\n";
}

void write_finetune_history_csv(const std::string& path,
                                const std::vector<FinetuneEpoch>& history) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("could not open history for writing: " + path);
  out << "epoch,train_loss,rouge1,rouge2,rougel\n";
  for (const FinetuneEpoch& e : history)
    out << e.epoch << "," << e.train_loss << "," << e.rouge1 << "," << e.rouge2 << ","
        << e.rougel << "\n";
}

// ---- run configuration --------------------------------------------------------

void apply_config_entry(RunConfig& cfg, const std::string& key, const std::string& value) {
  auto as_int = [&value, &key]() {
    try {
      size_t pos = 0;
      int v = std::stoi(value, &pos);
      if (pos != value.size()) throw std::invalid_argument("");
      return v;
    } catch (const std::exception&) {
      throw std::invalid_argument("config: bad integer for " + key + ": " + value);
    }
  };
  auto as_double = [&value, &key]() {
    try {
      size_t pos = 0;
      double v = std::stod(value, &pos);
      if (pos != value.size()) throw std::invalid_argument("");
      return v;
    } catch (const std::exception&) {
      throw std::invalid_argument("config: bad number for " + key + ": " + value);
    }
  };
  auto as_bool = [&value, &key]() {
    if (value == "true" || value == "1") return true;
    if (value == "false" || value == "0") return false;
    throw std::invalid_argument("config: bad boolean for " + key + ": " + value);
  };

  if (key == "d_w") cfg.model.d_w = as_int();
  else if (key == "d_h") cfg.model.d_h = as_int();
  else if (key == "n_layers") cfg.model.n_layers = as_int();
  else if (key == "n_heads") cfg.model.n_heads = as_int();
  else if (key == "d_ff") cfg.model.d_ff = as_int();
  else if (key == "dropout") cfg.model.dropout = as_double();
  else if (key == "p_mask") cfg.corruption.p_mask = as_double();
  else if (key == "p_replace") cfg.corruption.p_replace = as_double();
  else if (key == "p_switch") cfg.corruption.p_switch = as_double();
  else if (key == "margin") cfg.corruption.margin = as_double();
  else if (key == "replace_pool_docs") cfg.corruption.replace_pool_docs = as_int();
  else if (key == "force_minimum") cfg.corruption.force_minimum = as_bool();
  else if (key == "learning_rate") cfg.training.learning_rate = as_double();
  else if (key == "max_epochs") cfg.training.max_epochs = as_int();
  else if (key == "batch_size") cfg.training.batch_size = as_int();
  else if (key == "patience") cfg.training.patience = as_int();
  else if (key == "clip_norm") cfg.training.clip_norm = as_double();
  else if (key == "max_sentences") cfg.limits.max_sentences_per_doc = as_int();
  else if (key == "max_tokens") cfg.limits.max_tokens_per_sentence = as_int();
  else throw std::invalid_argument("config: unknown key " + key);
}

void load_config_file(RunConfig& cfg, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("could not open config file: " + path);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    auto trim = [](std::string s) {
      const char* ws = " \t\r";
      const size_t b = s.find_first_not_of(ws);
      if (b == std::string::npos) return std::string();
      const size_t e = s.find_last_not_of(ws);
      return s.substr(b, e - b + 1);
    };
    line = trim(line);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("config: missing '=' at line " + std::to_string(lineno) + " of " +
                               path);
    apply_config_entry(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
}

nlohmann::json config_snapshot(const RunConfig& cfg) {
  nlohmann::json j;
  j["model"] = model_config_to_json(cfg.model);
  j["corruption"] = {{"p_mask", cfg.corruption.p_mask},
                     {"p_replace", cfg.corruption.p_replace},
                     {"p_switch", cfg.corruption.p_switch},
                     {"margin", cfg.corruption.margin},
                     {"replace_pool_docs", cfg.corruption.replace_pool_docs},
                     {"force_minimum", cfg.corruption.force_minimum},
                     {"rng_seed", cfg.corruption.rng_seed}};
  j["training"] = {{"phase", cfg.training.phase},
                   {"learning_rate", cfg.training.learning_rate},
                   {"max_epochs", cfg.training.max_epochs},
                   {"batch_size", cfg.training.batch_size},
                   {"optimizer", "adam"},
                   {"beta1", cfg.training.beta1},
                   {"beta2", cfg.training.beta2},
                   {"eps", cfg.training.eps},
                   {"clip_norm", cfg.training.clip_norm},
                   {"patience", cfg.training.patience},
                   {"rng_seed", cfg.training.rng_seed}};
  j["limits"] = {{"max_sentences", cfg.limits.max_sentences_per_doc},
                 {"max_tokens", cfg.limits.max_tokens_per_sentence}};
  return j;
}

}  // namespace sspext
