#include "sspext/rouge.hpp"

#include <algorithm>
#include <stdexcept>
#include <unordered_map>

namespace sspext {

namespace {

double safe_f1(double p, double r) { return p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0; }

// n-gram keys as tokens joined with an unlikely separator byte.
std::unordered_map<std::string, int> ngram_counts(std::span<const std::string> toks, int n) {
  std::unordered_map<std::string, int> counts;
  if (static_cast<int>(toks.size()) < n) return counts;
  for (size_t i = 0; i + n <= toks.size(); ++i) {
    std::string key;
    for (int k = 0; k < n; ++k) {
      if (k) key += '\x1f';
      key += toks[i + k];
    }
    counts[key]++;
  }
  return counts;
}

size_t lcs_length(std::span<const std::string> a, std::span<const std::string> b) {
  const size_t na = a.size(), nb = b.size();
  if (na == 0 || nb == 0) return 0;
  std::vector<size_t> prev(nb + 1, 0), cur(nb + 1, 0);
  for (size_t i = 1; i <= na; ++i) {
    for (size_t j = 1; j <= nb; ++j) {
      if (a[i - 1] == b[j - 1])
        cur[j] = prev[j - 1] + 1;
      else
        cur[j] = std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[nb];
}

TokenSeq concat_sentences(const std::vector<std::vector<std::string>>& sents) {
  TokenSeq out;
  for (const auto& s : sents) out.insert(out.end(), s.begin(), s.end());
  return out;
}

TokenSeq concat_selected(const Document& doc, std::span<const int> indices) {
  TokenSeq out;
  for (int i : indices) out.insert(out.end(), doc.sentences[i].begin(), doc.sentences[i].end());
  return out;
}

double oracle_objective(std::span<const std::string> cand, std::span<const std::string> summary) {
  return 0.5 * (rouge_n(cand, summary, 1).f1 + rouge_n(cand, summary, 2).f1);
}

}  // namespace

RougeScore rouge_n(std::span<const std::string> candidate, std::span<const std::string> reference,
                   int n) {
  if (n < 1) throw std::invalid_argument("rouge_n: n must be >= 1");

  auto cand = ngram_counts(candidate, n);
  auto ref = ngram_counts(reference, n);
  int64_t cand_total = 0, ref_total = 0, matches = 0;
  for (const auto& [g, c] : cand) cand_total += c;
  for (const auto& [g, c] : ref) ref_total += c;
  for (const auto& [g, c] : cand) {
    auto it = ref.find(g);
    if (it != ref.end()) matches += std::min(c, it->second);
  }

  RougeScore s;
  s.precision = cand_total > 0 ? static_cast<double>(matches) / cand_total : 0.0;
  s.recall = ref_total > 0 ? static_cast<double>(matches) / ref_total : 0.0;
  s.f1 = safe_f1(s.precision, s.recall);
  return s;
}

RougeScore rouge_l(std::span<const std::string> candidate, std::span<const std::string> reference) {
  const double l = static_cast<double>(lcs_length(candidate, reference));
  RougeScore s;
  s.precision = candidate.empty() ? 0.0 : l / candidate.size();
  s.recall = reference.empty() ? 0.0 : l / reference.size();
  s.f1 = safe_f1(s.precision, s.recall);
  return s;
}

std::vector<OracleStep> oracle_selection_steps(const Document& doc, int max_select) {
  const int n = static_cast<int>(doc.sentences.size());
  std::vector<OracleStep> steps;
  TokenSeq summary = concat_sentences(doc.summary);
  if (summary.empty() || n == 0) return steps;

  std::vector<int> selected;
  std::vector<char> in_selection(n, 0);
  double best_so_far = 0.0;
  while (static_cast<int>(selected.size()) < max_select) {
    int best_idx = -1;
    double best_obj = best_so_far;
    for (int i = 0; i < n; ++i) {
      if (in_selection[i]) continue;
      std::vector<int> trial = selected;
      trial.push_back(i);
      std::sort(trial.begin(), trial.end());
      double obj = oracle_objective(concat_selected(doc, trial), summary);
      if (obj > best_obj) {  // strict: ties keep the earlier (lower) index
        best_obj = obj;
        best_idx = i;
      }
    }
    if (best_idx < 0) break;
    selected.push_back(best_idx);
    in_selection[best_idx] = 1;
    best_so_far = best_obj;
    steps.push_back({best_idx, best_obj});
  }
  return steps;
}

std::vector<int> oracle_labels(const Document& doc, int max_select) {
  if (doc.sentences.empty()) throw std::invalid_argument("oracle_labels: document has no sentences");
  std::vector<int> labels(doc.sentences.size(), 0);
  for (const auto& step : oracle_selection_steps(doc, max_select)) labels[step.index] = 1;
  return labels;
}

CorpusRouge corpus_rouge(std::span<const std::vector<int>> selections,
                         std::span<const Document> docs) {
  if (selections.size() != docs.size())
    throw std::invalid_argument("corpus_rouge: selections/docs size mismatch");
  if (docs.empty()) throw std::invalid_argument("corpus_rouge: empty corpus");

  double sum1 = 0.0, sum2 = 0.0, suml = 0.0;
  for (size_t d = 0; d < docs.size(); ++d) {
    std::vector<int> indices = selections[d];
    std::sort(indices.begin(), indices.end());
    indices.erase(std::unique(indices.begin(), indices.end()), indices.end());
    for (int i : indices) {
      if (i < 0 || i >= static_cast<int>(docs[d].sentences.size()))
        throw std::out_of_range("corpus_rouge: selection index out of range in document " +
                                docs[d].id);
    }
    TokenSeq cand = concat_selected(docs[d], indices);
    TokenSeq ref = concat_sentences(docs[d].summary);
    sum1 += rouge_n(cand, ref, 1).f1;
    sum2 += rouge_n(cand, ref, 2).f1;
    suml += rouge_l(cand, ref).f1;
  }
  const double inv = 100.0 / static_cast<double>(docs.size());
  return {sum1 * inv, sum2 * inv, suml * inv};
}

}  // namespace sspext
