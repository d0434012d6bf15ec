#include "sspext/evalharness.hpp"

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <thread>
#include <tuple>

#include "nlohmann/json.hpp"

namespace sspext {

EvalCorpus make_eval_corpus(std::vector<Document> docs, const Vocabulary& vocab,
                            const CorpusLimits& limits) {
  EvalCorpus ec;
  ec.encoded.reserve(docs.size());
  for (const Document& d : docs) ec.encoded.push_back(encode(d, vocab, limits));
  ec.docs = std::move(docs);
  return ec;
}

std::vector<int> top_k_indices(const std::vector<double>& scores, int k) {
  const int n = static_cast<int>(scores.size());
  const int take = std::min(k, n);
  if (take <= 0) return {};
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  // stable partial sort by (-score, index): equal scores keep the lower index.
  std::stable_sort(order.begin(), order.end(),
                   [&scores](int a, int b) { return scores[a] > scores[b]; });
  std::vector<int> out(order.begin(), order.begin() + take);
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<int> select_sentences(const ModelParameters<float>& params,
                                  const EncodedDocument& doc, int k) {
  if (doc.sentence_ids.empty()) throw std::invalid_argument("select_sentences: empty document");
  VecF probs = selection_probabilities(params, doc.sentence_ids);
  std::vector<double> scores(probs.data(), probs.data() + probs.size());
  return top_k_indices(scores, k);
}

std::vector<int> lead3(const Document& doc) {
  const int n = std::min<int>(3, static_cast<int>(doc.sentences.size()));
  std::vector<int> out(n);
  std::iota(out.begin(), out.end(), 0);
  return out;
}

std::vector<std::vector<int>> select_corpus(const ModelParameters<float>& params,
                                            const EvalCorpus& corpus, int k, int threads) {
  std::vector<std::vector<int>> selections(corpus.encoded.size());
  const int workers = std::max(1, threads);
  if (workers == 1 || corpus.encoded.size() < 2) {
    for (size_t i = 0; i < corpus.encoded.size(); ++i)
      selections[i] = select_sentences(params, corpus.encoded[i], k);
    return selections;
  }
  std::atomic<size_t> next{0};
  auto worker = [&]() {
    while (true) {
      const size_t i = next.fetch_add(1);
      if (i >= corpus.encoded.size()) return;
      selections[i] = select_sentences(params, corpus.encoded[i], k);
    }
  };
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
  return selections;
}

CorpusRouge evaluate_model(const ModelParameters<float>& params, const EvalCorpus& corpus,
                           int k, int threads) {
  std::vector<std::vector<int>> selections = select_corpus(params, corpus, k, threads);
  return corpus_rouge(std::span<const std::vector<int>>(selections.data(), selections.size()),
                      std::span<const Document>(corpus.docs.data(), corpus.docs.size()));
}

CorpusRouge evaluate_lead3(const std::vector<Document>& docs) {
  std::vector<std::vector<int>> selections;
  selections.reserve(docs.size());
  for (const Document& d : docs) selections.push_back(lead3(d));
  return corpus_rouge(std::span<const std::vector<int>>(selections.data(), selections.size()),
                      std::span<const Document>(docs.data(), docs.size()));
}

void write_eval_csv(const std::string& path, const std::string& method, const CorpusRouge& r) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("could not open report for writing: " + path);
  out << "method,metric,value\n";
  out << method << ",rouge1," << r.rouge1 << "\n";
  out << method << ",rouge2," << r.rouge2 << "\n";
  out << method << ",rougel," << r.rougel << "\n";
}

void write_selections_jsonl(const std::string& path, const std::vector<Document>& docs,
                            const std::vector<std::vector<int>>& selections) {
  if (docs.size() != selections.size())
    throw std::invalid_argument("write_selections_jsonl: size mismatch");
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("could not open selections file for writing: " + path);
  for (size_t i = 0; i < docs.size(); ++i) {
    nlohmann::json j;
    j["id"] = docs[i].id;
    j["indices"] = selections[i];
    out << j.dump() << "\n";
  }
}

CurveHistory read_history_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("could not open history file: " + path);
  CurveHistory h;
  h.method = std::filesystem::path(path).stem().string();
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("empty history file: " + path);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string field;
    std::vector<std::string> fields;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (fields.size() < 5) throw std::runtime_error("malformed history row in " + path);
    CurvePoint p;
    p.epoch = std::stoi(fields[0]);
    p.rouge1 = std::stod(fields[2]);
    p.rouge2 = std::stod(fields[3]);
    p.rougel = std::stod(fields[4]);
    h.points.push_back(p);
  }
  return h;
}

void emit_curves(const std::vector<CurveHistory>& histories, const std::string& path) {
  if (histories.empty()) throw std::invalid_argument("emit_curves: no histories");
  struct Row {
    std::string method;
    int epoch;
    std::string metric;
    double value;
  };
  std::vector<Row> rows;
  for (const CurveHistory& h : histories) {
    for (const CurvePoint& p : h.points) {
      rows.push_back({h.method, p.epoch, "rouge1", p.rouge1});
      rows.push_back({h.method, p.epoch, "rouge2", p.rouge2});
      rows.push_back({h.method, p.epoch, "rougel", p.rougel});
    }
  }
  std::sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) {
    return std::tie(a.method, a.epoch, a.metric) < std::tie(b.method, b.epoch, b.metric);
  });
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("could not open curves file for writing: " + path);
  out << "method,epoch,metric,value\n";
  for (const Row& r : rows)
    out << r.method << "," << r.epoch << "," << r.metric << "," << r.value << "\n";
}

}  // namespace sspext
