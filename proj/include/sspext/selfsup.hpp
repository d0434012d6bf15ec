#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sspext/corpus.hpp"
#include "sspext/model.hpp"
#include "sspext/types.hpp"

namespace sspext {

enum class CorruptionTask { kMask, kReplace, kSwitch };

std::string task_name(CorruptionTask task);
CorruptionTask parse_task(const std::string& name);

struct CorruptionConfig {
  double p_mask = 0.25;
  double p_replace = 0.25;
  double p_switch = 0.25;
  double margin = 0.5;          // hinge margin γ
  int replace_pool_docs = 10000;
  bool force_minimum = true;    // guarantee at least one corruption per document
  uint64_t rng_seed = 0;

  void validate() const;
};

struct CorruptedDocument {
  std::string base_id;
  CorruptionTask task = CorruptionTask::kMask;
  std::vector<std::vector<int>> sentences;
  std::vector<int> labels;                   // replace/switch: 0/1 per position
  std::vector<int> masked_positions;         // mask task, ascending
  std::vector<int> gold_pool_index;          // parallel to masked_positions
  std::vector<std::vector<int>> pool;        // mask: originals; replace: used substitutes
  std::vector<std::string> pool_source_ids;  // parallel to pool (replace task)
};

struct ReplacePool {
  struct Entry {
    std::string source_doc_id;
    std::vector<int> sentence;
  };
  std::vector<Entry> entries;
};

// Mask each position independently with p_mask; masked originals go to the
// candidate pool with their gold index recorded. Returns nullopt for
// documents with fewer than 2 sentences (skipped, not fatal).
std::optional<CorruptedDocument> corrupt_mask(const EncodedDocument& doc,
                                              const CorruptionConfig& cfg, Rng& rng);

// Sample min(replace_pool_docs, |corpus|) documents without replacement and
// enter all their sentences. Throws if the corpus has fewer than 2 documents.
ReplacePool build_replace_pool(std::span<const EncodedDocument> corpus,
                               const CorruptionConfig& cfg, Rng& rng);

// Replace each position independently with p_replace by a uniform pool entry
// from another document. Throws if no eligible entries exist.
CorruptedDocument corrupt_replace(const EncodedDocument& doc, const ReplacePool& pool,
                                  const CorruptionConfig& cfg, Rng& rng);

// Select positions with p_switch (forced to a uniform distinct pair when fewer
// than 2 are drawn) and apply a uniform derangement so no selected sentence
// stays in place. Returns nullopt for documents with fewer than 2 sentences or
// when duplicates make a content-changing derangement impossible.
std::optional<CorruptedDocument> corrupt_switch(const EncodedDocument& doc,
                                                const CorruptionConfig& cfg, Rng& rng);

// Inspection record: {base_id, task, labels, masked_positions, pool_source_ids}.
std::string corruption_to_json(const CorruptedDocument& cd);

// Θ(i,j) = cos(D_i, S_j); either vector all-zero gives 0.
double mask_score(const VecD& a, const VecD& b);

// ---- per-document loss assemblies (shared by trainer and gradient checks) ----

template <typename S>
struct DocLoss {
  Var<S> loss;
  bool skipped = false;
};

// ℓ_m: for each masked position, hinge max{0, γ − Θ(i,gold) + Θ(i,k)} averaged
// over non-gold pool entries k, then over masked positions. Pools smaller than
// 2 are skipped (no negatives to rank against).
template <typename S>
Var<S> mask_loss(Tape<S>& tape, std::span<const Var<S>> masked_reprs,
                 std::span<const Var<S>> pool_reprs, std::span<const int> gold_indices,
                 S margin) {
  if (masked_reprs.size() != gold_indices.size())
    throw std::invalid_argument("mask_loss: gold index per masked position required");
  if (pool_reprs.size() < 2) throw std::invalid_argument("mask_loss: pool must have >= 2 entries");
  std::vector<Var<S>> per_position;
  per_position.reserve(masked_reprs.size());
  for (size_t m = 0; m < masked_reprs.size(); ++m) {
    const int gold = gold_indices[m];
    if (gold < 0 || gold >= static_cast<int>(pool_reprs.size()))
      throw std::invalid_argument("mask_loss: gold index out of range");
    Var<S> theta_gold = cosine(masked_reprs[m], pool_reprs[gold]);
    std::vector<Var<S>> hinges;
    hinges.reserve(pool_reprs.size() - 1);
    for (size_t k = 0; k < pool_reprs.size(); ++k) {
      if (static_cast<int>(k) == gold) continue;
      Var<S> theta_k = cosine(masked_reprs[m], pool_reprs[k]);
      hinges.push_back(relu(add_scalar(sub(theta_k, theta_gold), margin)));
    }
    per_position.push_back(mean_scalars(std::span<const Var<S>>(hinges.data(), hinges.size())));
  }
  return mean_scalars(std::span<const Var<S>>(per_position.data(), per_position.size()));
}

// ℓ_r / ℓ_s: MSE of the raw head output against 0/1 labels over real positions.
template <typename S>
Var<S> position_loss(Var<S> head_outputs, const std::vector<int>& labels,
                     std::vector<char> real_mask) {
  if (static_cast<size_t>(head_outputs.rows()) != labels.size())
    throw std::invalid_argument("position_loss: label length mismatch");
  Mat<S> targets(labels.size(), 1);
  for (size_t i = 0; i < labels.size(); ++i) targets(i, 0) = static_cast<S>(labels[i]);
  return mse_masked(head_outputs, std::move(targets), std::move(real_mask));
}

// Full mask-task loss for one corrupted document.
template <typename S>
DocLoss<S> build_mask_loss(Tape<S>& tape, const ParameterVars<S>& pv,
                           const CorruptedDocument& cd, S margin, Rng* dropout_rng = nullptr) {
  if (cd.pool.size() < 2) return {{}, true};
  Var<S> s = encode_sentences(tape, pv, cd.sentences);
  Var<S> d = contextualize(tape, pv, s, std::vector<char>(cd.sentences.size(), 1), dropout_rng);
  std::vector<Var<S>> masked_reprs, pool_reprs;
  masked_reprs.reserve(cd.masked_positions.size());
  for (int pos : cd.masked_positions) masked_reprs.push_back(slice_rows(d, pos, 1));
  pool_reprs.reserve(cd.pool.size());
  for (const auto& sent : cd.pool) pool_reprs.push_back(encode_sentence(tape, pv, sent));
  return {mask_loss(tape, std::span<const Var<S>>(masked_reprs.data(), masked_reprs.size()),
                    std::span<const Var<S>>(pool_reprs.data(), pool_reprs.size()),
                    std::span<const int>(cd.gold_pool_index.data(), cd.gold_pool_index.size()),
                    margin),
          false};
}

// Full replace/switch-task loss for one corrupted document.
template <typename S>
DocLoss<S> build_corruption_position_loss(Tape<S>& tape, const ParameterVars<S>& pv,
                                          const CorruptedDocument& cd,
                                          Rng* dropout_rng = nullptr) {
  Var<S> s = encode_sentences(tape, pv, cd.sentences);
  Var<S> d = contextualize(tape, pv, s, std::vector<char>(cd.sentences.size(), 1), dropout_rng);
  HeadKind kind = cd.task == CorruptionTask::kReplace ? HeadKind::kReplace : HeadKind::kSwitch;
  Var<S> outputs = head_scores(tape, pv, d, kind);
  return {position_loss(outputs, cd.labels, std::vector<char>(cd.labels.size(), 1)), false};
}

// Dispatch on the corrupted document's task.
template <typename S>
DocLoss<S> build_pretrain_loss(Tape<S>& tape, const ParameterVars<S>& pv,
                               const CorruptedDocument& cd, S margin,
                               Rng* dropout_rng = nullptr) {
  if (cd.task == CorruptionTask::kMask) return build_mask_loss(tape, pv, cd, margin, dropout_rng);
  return build_corruption_position_loss(tape, pv, cd, dropout_rng);
}

}  // namespace sspext
