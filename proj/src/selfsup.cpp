#include "sspext/selfsup.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

#include "nlohmann/json.hpp"

namespace sspext {

using nlohmann::json;

std::string task_name(CorruptionTask task) {
  switch (task) {
    case CorruptionTask::kMask: return "mask";
    case CorruptionTask::kReplace: return "replace";
    case CorruptionTask::kSwitch: return "switch";
  }
  throw std::logic_error("task_name: unknown task");
}

CorruptionTask parse_task(const std::string& name) {
  if (name == "mask") return CorruptionTask::kMask;
  if (name == "replace") return CorruptionTask::kReplace;
  if (name == "switch") return CorruptionTask::kSwitch;
  throw std::invalid_argument("unknown task: " + name);
}

void CorruptionConfig::validate() const {
  for (double p : {p_mask, p_replace, p_switch})
    if (p < 0.0 || p > 1.0)
      throw std::invalid_argument("corruption config: probabilities must be in [0,1]");
  if (margin <= 0.0) throw std::invalid_argument("corruption config: margin must be positive");
  if (replace_pool_docs < 1)
    throw std::invalid_argument("corruption config: replace_pool_docs must be positive");
}

std::optional<CorruptedDocument> corrupt_mask(const EncodedDocument& doc,
                                              const CorruptionConfig& cfg, Rng& rng) {
  cfg.validate();
  const size_t n = doc.sentence_ids.size();
  if (n < 2) return std::nullopt;

  std::vector<int> chosen;
  for (size_t i = 0; i < n; ++i)
    if (rng.bernoulli(cfg.p_mask)) chosen.push_back(static_cast<int>(i));
  if (chosen.empty() && cfg.force_minimum)
    chosen.push_back(static_cast<int>(rng.next_int(n)));

  CorruptedDocument cd;
  cd.base_id = doc.id;
  cd.task = CorruptionTask::kMask;
  cd.sentences = doc.sentence_ids;
  for (int pos : chosen) {
    cd.pool.push_back(doc.sentence_ids[pos]);
    cd.masked_positions.push_back(pos);
    cd.gold_pool_index.push_back(static_cast<int>(cd.pool.size()) - 1);
    cd.sentences[pos] = {Vocabulary::kMaskSent};
  }
  return cd;
}

ReplacePool build_replace_pool(std::span<const EncodedDocument> corpus,
                               const CorruptionConfig& cfg, Rng& rng) {
  cfg.validate();
  if (corpus.size() < 2)
    throw std::runtime_error("build_replace_pool: corpus must have at least 2 documents");
  std::vector<size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), size_t{0});
  rng.shuffle(order);
  const size_t take = std::min<size_t>(static_cast<size_t>(cfg.replace_pool_docs), corpus.size());
  ReplacePool pool;
  for (size_t k = 0; k < take; ++k) {
    const EncodedDocument& d = corpus[order[k]];
    for (const auto& sent : d.sentence_ids) pool.entries.push_back({d.id, sent});
  }
  return pool;
}

CorruptedDocument corrupt_replace(const EncodedDocument& doc, const ReplacePool& pool,
                                  const CorruptionConfig& cfg, Rng& rng) {
  cfg.validate();
  std::vector<size_t> eligible;
  for (size_t k = 0; k < pool.entries.size(); ++k)
    if (pool.entries[k].source_doc_id != doc.id) eligible.push_back(k);
  if (eligible.empty()) throw std::runtime_error("corrupt_replace: no eligible pool entries");

  CorruptedDocument cd;
  cd.base_id = doc.id;
  cd.task = CorruptionTask::kReplace;
  cd.sentences = doc.sentence_ids;
  cd.labels.assign(doc.sentence_ids.size(), 0);
  for (size_t i = 0; i < doc.sentence_ids.size(); ++i) {
    if (!rng.bernoulli(cfg.p_replace)) continue;
    const ReplacePool::Entry& e = pool.entries[eligible[rng.next_int(eligible.size())]];
    cd.sentences[i] = e.sentence;
    cd.labels[i] = 1;
    cd.pool.push_back(e.sentence);
    cd.pool_source_ids.push_back(e.source_doc_id);
  }
  return cd;
}

namespace {

// Uniform derangement of positions 0..k-1 by rejection sampling.
std::vector<size_t> random_derangement(size_t k, Rng& rng) {
  std::vector<size_t> perm(k);
  while (true) {
    std::iota(perm.begin(), perm.end(), size_t{0});
    rng.shuffle(perm);
    bool fixed_point = false;
    for (size_t i = 0; i < k; ++i) fixed_point |= (perm[i] == i);
    if (!fixed_point) return perm;
  }
}

// True iff applying perm to the selected positions changes content everywhere.
bool content_changes_everywhere(const std::vector<std::vector<int>>& sentences,
                                const std::vector<int>& selected,
                                const std::vector<size_t>& perm) {
  for (size_t i = 0; i < selected.size(); ++i)
    if (sentences[selected[perm[i]]] == sentences[selected[i]]) return false;
  return true;
}

}  // namespace

std::optional<CorruptedDocument> corrupt_switch(const EncodedDocument& doc,
                                                const CorruptionConfig& cfg, Rng& rng) {
  cfg.validate();
  const size_t n = doc.sentence_ids.size();
  if (n < 2) return std::nullopt;

  constexpr int kSelectionAttempts = 20;
  constexpr int kDerangementAttempts = 100;
  for (int sel_try = 0; sel_try < kSelectionAttempts; ++sel_try) {
    std::vector<int> selected;
    for (size_t i = 0; i < n; ++i)
      if (rng.bernoulli(cfg.p_switch)) selected.push_back(static_cast<int>(i));
    if (selected.size() < 2) {
      if (!cfg.force_minimum) {
        CorruptedDocument cd;
        cd.base_id = doc.id;
        cd.task = CorruptionTask::kSwitch;
        cd.sentences = doc.sentence_ids;
        cd.labels.assign(n, 0);
        return cd;
      }
      const size_t a = rng.next_int(n);
      size_t b = rng.next_int(n - 1);
      if (b >= a) ++b;
      selected = {static_cast<int>(std::min(a, b)), static_cast<int>(std::max(a, b))};
    }

    for (int att = 0; att < kDerangementAttempts; ++att) {
      std::vector<size_t> perm = random_derangement(selected.size(), rng);
      if (!content_changes_everywhere(doc.sentence_ids, selected, perm)) continue;
      CorruptedDocument cd;
      cd.base_id = doc.id;
      cd.task = CorruptionTask::kSwitch;
      cd.sentences = doc.sentence_ids;
      cd.labels.assign(n, 0);
      for (size_t i = 0; i < selected.size(); ++i) {
        cd.sentences[selected[i]] = doc.sentence_ids[selected[perm[i]]];
        cd.labels[selected[i]] = 1;
      }
      return cd;
    }
    // Duplicates in the selection made every derangement degenerate at some
    // position; draw a fresh selection.
  }
  return std::nullopt;
}

std::string corruption_to_json(const CorruptedDocument& cd) {
  json j;
  j["base_id"] = cd.base_id;
  j["task"] = task_name(cd.task);
  j["labels"] = cd.labels;
  j["masked_positions"] = cd.masked_positions;
  j["pool_source_ids"] = cd.pool_source_ids;
  return j.dump();
}

double mask_score(const VecD& a, const VecD& b) {
  if (a.size() != b.size()) throw std::invalid_argument("mask_score: dimension mismatch");
  const double na = a.norm(), nb = b.norm();
  if (na == 0.0 || nb == 0.0) return 0.0;
  return a.dot(b) / (na * nb);
}

}  // namespace sspext
