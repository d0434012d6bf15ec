#pragma once

#include <string>
#include <vector>

#include "sspext/corpus.hpp"
#include "sspext/model.hpp"
#include "sspext/rouge.hpp"

namespace sspext {

// Raw documents paired with their encoded forms; ROUGE reads the raw tokens,
// the model reads the ids.
struct EvalCorpus {
  std::vector<Document> docs;
  std::vector<EncodedDocument> encoded;
};

EvalCorpus make_eval_corpus(std::vector<Document> docs, const Vocabulary& vocab,
                            const CorpusLimits& limits = {});

// Indices of the k largest scores, ties broken toward the lower index,
// returned ascending. k is capped at the number of scores.
std::vector<int> top_k_indices(const std::vector<double>& scores, int k);

// Top-k positions by selection-head probability, in document order.
std::vector<int> select_sentences(const ModelParameters<float>& params,
                                  const EncodedDocument& doc, int k = 3);

std::vector<int> lead3(const Document& doc);

// Model inference over a corpus; deterministic regardless of thread count.
std::vector<std::vector<int>> select_corpus(const ModelParameters<float>& params,
                                            const EvalCorpus& corpus, int k = 3, int threads = 1);

CorpusRouge evaluate_model(const ModelParameters<float>& params, const EvalCorpus& corpus,
                           int k = 3, int threads = 1);
CorpusRouge evaluate_lead3(const std::vector<Document>& docs);

// CSV report: header "method,metric,value", one row per ROUGE metric.
void write_eval_csv(const std::string& path, const std::string& method, const CorpusRouge& r);

// JSONL dump of per-document selections: {"id": ..., "indices": [...]}.
void write_selections_jsonl(const std::string& path, const std::vector<Document>& docs,
                            const std::vector<std::vector<int>>& selections);

// One fine-tuning trajectory: dev ROUGE per epoch.
struct CurvePoint {
  int epoch = 0;
  double rouge1 = 0.0, rouge2 = 0.0, rougel = 0.0;
};

struct CurveHistory {
  std::string method;
  std::vector<CurvePoint> points;
};

// Reads a fine-tune history CSV (epoch,train_loss,rouge1,rouge2,rougel); the
// method name defaults to the file stem.
CurveHistory read_history_csv(const std::string& path);

// Long-format CSV "method,epoch,metric,value", rows sorted by (method, epoch,
// metric), values passed through unmodified.
void emit_curves(const std::vector<CurveHistory>& histories, const std::string& path);

}  // namespace sspext
