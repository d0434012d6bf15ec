#pragma once

#include <span>
#include <string>
#include <vector>

#include "sspext/corpus.hpp"

namespace sspext {

struct RougeScore {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

using TokenSeq = std::vector<std::string>;

// N-gram overlap with multiset-clipped matches. A side with zero n-grams
// scores 0 on the corresponding ratio.
RougeScore rouge_n(std::span<const std::string> candidate, std::span<const std::string> reference,
                   int n);

// Longest-common-subsequence based score.
RougeScore rouge_l(std::span<const std::string> candidate, std::span<const std::string> reference);

// Greedy oracle labeling: repeatedly add the sentence (lowest index on ties)
// maximizing the gain in G = mean(ROUGE-1 F1, ROUGE-2 F1) of the selection
// against the concatenated summary; stop when no strictly positive gain or
// max_select reached.
std::vector<int> oracle_labels(const Document& doc, int max_select);

// Selection order and objective value after each greedy step.
struct OracleStep {
  int index;
  double objective;
};
std::vector<OracleStep> oracle_selection_steps(const Document& doc, int max_select);

struct CorpusRouge {
  double rouge1 = 0.0;  // mean F1 x 100
  double rouge2 = 0.0;
  double rougel = 0.0;
};

// Mean per-document F1 over concatenated selected sentences vs concatenated
// summary, scaled by 100.
CorpusRouge corpus_rouge(std::span<const std::vector<int>> selections,
                         std::span<const Document> docs);

}  // namespace sspext
