#include "sspext/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include "nlohmann/json.hpp"

#include "sspext/types.hpp"

namespace sspext {

namespace {

const char* kSpecialTokens[] = {"<pad>", "<unk_word>", "<mask_sent>"};

bool is_split_punct(char32_t c) {
  switch (c) {
    case '.': case ',': case '!': case '?': case ';': case ':':
    case '\'': case '"': case '(': case ')': case '[': case ']':
      return true;
    default:
      return false;
  }
}

bool is_unicode_space(char32_t c) {
  if (c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v') return true;
  if (c == 0x00a0 || c == 0x1680 || c == 0x2028 || c == 0x2029 || c == 0x202f ||
      c == 0x205f || c == 0x3000 || c == 0x0085)
    return true;
  return c >= 0x2000 && c <= 0x200a;
}

// Decode one UTF-8 codepoint; malformed bytes pass through as single units so
// tokenization never fails on odd input.
char32_t next_codepoint(std::string_view s, size_t& i) {
  unsigned char c = s[i];
  size_t len = 1;
  char32_t cp = c;
  if (c >= 0xf0) len = 4; else if (c >= 0xe0) len = 3; else if (c >= 0xc0) len = 2;
  if (len > 1 && i + len <= s.size()) {
    cp = c & (0xff >> (len + 1));
    bool ok = true;
    for (size_t k = 1; k < len; ++k) {
      unsigned char cc = s[i + k];
      if ((cc & 0xc0) != 0x80) { ok = false; break; }
      cp = (cp << 6) | (cc & 0x3f);
    }
    if (!ok) { cp = c; len = 1; }
  } else {
    len = 1;
  }
  i += len;
  return cp;
}

void append_codepoint(std::string& out, char32_t cp) {
  if (cp < 0x80) {
    out += static_cast<char>(cp);
  } else if (cp < 0x800) {
    out += static_cast<char>(0xc0 | (cp >> 6));
    out += static_cast<char>(0x80 | (cp & 0x3f));
  } else if (cp < 0x10000) {
    out += static_cast<char>(0xe0 | (cp >> 12));
    out += static_cast<char>(0x80 | ((cp >> 6) & 0x3f));
    out += static_cast<char>(0x80 | (cp & 0x3f));
  } else {
    out += static_cast<char>(0xf0 | (cp >> 18));
    out += static_cast<char>(0x80 | ((cp >> 12) & 0x3f));
    out += static_cast<char>(0x80 | ((cp >> 6) & 0x3f));
    out += static_cast<char>(0x80 | (cp & 0x3f));
  }
}

using json = nlohmann::json;

std::vector<std::vector<std::string>> tokenize_block(const json& arr, IngestStats* stats,
                                                     std::vector<int>* labels) {
  std::vector<std::vector<std::string>> out;
  size_t idx = 0;
  for (const auto& raw : arr) {
    auto toks = tokenize(raw.get<std::string>());
    if (toks.empty()) {
      if (stats) stats->dropped_sentences++;
      if (labels && idx < labels->size()) labels->erase(labels->begin() + idx);
      continue;
    }
    out.push_back(std::move(toks));
    ++idx;
  }
  return out;
}

void apply_limits(Document& doc, const CorpusLimits& limits) {
  if (static_cast<int>(doc.sentences.size()) > limits.max_sentences_per_doc) {
    doc.sentences.resize(limits.max_sentences_per_doc);
    if (doc.labels) doc.labels->resize(limits.max_sentences_per_doc);
  }
  for (auto& sent : doc.sentences) {
    if (static_cast<int>(sent.size()) > limits.max_tokens_per_sentence)
      sent.resize(limits.max_tokens_per_sentence);
  }
}

Document parse_tokenized_line(const json& j, int line_no) {
  Document doc;
  doc.id = j.at("id").get<std::string>();
  for (const auto& sent : j.at("sentences")) {
    doc.sentences.push_back(sent.get<std::vector<std::string>>());
    if (doc.sentences.back().empty())
      throw std::runtime_error("empty sentence in document " + doc.id + " at line " +
                               std::to_string(line_no));
  }
  for (const auto& sent : j.at("summary")) doc.summary.push_back(sent.get<std::vector<std::string>>());
  if (j.contains("labels")) {
    doc.labels = j.at("labels").get<std::vector<int>>();
    if (doc.labels->size() != doc.sentences.size())
      throw std::runtime_error("label length mismatch: " + doc.id);
  }
  if (doc.sentences.empty())
    throw std::runtime_error("document with no sentences: " + doc.id);
  return doc;
}

}  // namespace

std::vector<std::string> tokenize(std::string_view raw) {
  std::vector<std::string> tokens;
  std::string cur;
  size_t i = 0;
  while (i < raw.size()) {
    char32_t cp = next_codepoint(raw, i);
    if (is_unicode_space(cp)) {
      if (!cur.empty()) { tokens.push_back(std::move(cur)); cur.clear(); }
    } else if (is_split_punct(cp)) {
      if (!cur.empty()) { tokens.push_back(std::move(cur)); cur.clear(); }
      tokens.push_back(std::string(1, static_cast<char>(cp)));
    } else {
      if (cp < 0x80 && cp >= 'A' && cp <= 'Z') cp = cp - 'A' + 'a';
      append_codepoint(cur, cp);
    }
  }
  if (!cur.empty()) tokens.push_back(std::move(cur));
  return tokens;
}

std::vector<Document> ingest_corpus(const std::string& path, const CorpusLimits& limits,
                                    IngestStats* stats) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open corpus file: " + path);

  std::vector<Document> docs;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception&) {
      throw std::runtime_error("malformed JSON at line " + std::to_string(line_no));
    }
    if (!j.contains("id") || !j.contains("sentences") || !j.contains("summary"))
      throw std::runtime_error("missing required field at line " + std::to_string(line_no));

    Document doc;
    doc.id = j["id"].get<std::string>();
    if (j.contains("labels")) {
      auto labels = j["labels"].get<std::vector<int>>();
      if (labels.size() != j["sentences"].size())
        throw std::runtime_error("label length mismatch: " + doc.id);
      doc.labels = std::move(labels);
    }
    doc.sentences = tokenize_block(j["sentences"], stats,
                                   doc.labels ? &*doc.labels : nullptr);
    doc.summary = tokenize_block(j["summary"], nullptr, nullptr);
    if (doc.sentences.empty()) {
      if (stats) stats->rejected_empty++;
      continue;
    }
    apply_limits(doc, limits);
    docs.push_back(std::move(doc));
    if (stats) stats->kept++;
  }
  return docs;
}

void save_corpus(const std::vector<Document>& docs, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write corpus file: " + path);
  for (const auto& doc : docs) {
    json j;
    j["id"] = doc.id;
    j["sentences"] = doc.sentences;
    j["summary"] = doc.summary;
    if (doc.labels) j["labels"] = *doc.labels;
    out << j.dump() << "\n";
  }
}

std::vector<Document> load_corpus(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open corpus file: " + path);
  std::vector<Document> docs;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception&) {
      throw std::runtime_error("malformed JSON at line " + std::to_string(line_no));
    }
    docs.push_back(parse_tokenized_line(j, line_no));
  }
  return docs;
}

Vocabulary build_vocabulary(std::span<const Document> docs, int min_count) {
  if (docs.empty()) throw std::runtime_error("cannot build vocabulary from empty corpus");
  if (min_count < 1) throw std::invalid_argument("min_count must be >= 1");

  std::unordered_map<std::string, int64_t> counts;
  for (const auto& doc : docs) {
    for (const auto& sent : doc.sentences)
      for (const auto& tok : sent) counts[tok]++;
    for (const auto& sent : doc.summary)
      for (const auto& tok : sent) counts[tok]++;
  }

  std::vector<std::pair<std::string, int64_t>> kept;
  kept.reserve(counts.size());
  for (auto& [tok, c] : counts)
    if (c >= min_count) kept.emplace_back(tok, c);
  std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });

  Vocabulary vocab;
  for (const char* tok : kSpecialTokens) {
    vocab.token_to_id.emplace(tok, vocab.size());
    vocab.id_to_token.push_back(tok);
  }
  for (auto& [tok, c] : kept) {
    if (vocab.token_to_id.count(tok)) continue;
    vocab.token_to_id.emplace(tok, vocab.size());
    vocab.id_to_token.push_back(tok);
  }
  return vocab;
}

void save_vocabulary(const Vocabulary& vocab, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write vocabulary file: " + path);
  for (const auto& tok : vocab.id_to_token) out << tok << "\n";
}

Vocabulary load_vocabulary(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open vocabulary file: " + path);
  Vocabulary vocab;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) break;
    if (vocab.token_to_id.count(line))
      throw std::runtime_error("duplicate token in vocabulary file: " + line);
    vocab.token_to_id.emplace(line, vocab.size());
    vocab.id_to_token.push_back(line);
  }
  if (vocab.size() < 3 || vocab.id_to_token[0] != kSpecialTokens[0] ||
      vocab.id_to_token[1] != kSpecialTokens[1] || vocab.id_to_token[2] != kSpecialTokens[2])
    throw std::runtime_error("vocabulary file missing reserved special tokens: " + path);
  return vocab;
}

uint64_t vocabulary_hash(const Vocabulary& vocab) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (const auto& tok : vocab.id_to_token) {
    h = fnv1a(tok, h);
    h = fnv1a("\n", h);
  }
  return h;
}

EncodedDocument encode(const Document& doc, const Vocabulary& vocab, const CorpusLimits& limits) {
  EncodedDocument enc;
  enc.id = doc.id;
  int n_sents = std::min<int>(static_cast<int>(doc.sentences.size()), limits.max_sentences_per_doc);
  enc.sentence_ids.reserve(n_sents);
  for (int i = 0; i < n_sents; ++i) {
    const auto& sent = doc.sentences[i];
    int n_toks = std::min<int>(static_cast<int>(sent.size()), limits.max_tokens_per_sentence);
    std::vector<int> ids(n_toks);
    for (int t = 0; t < n_toks; ++t) ids[t] = vocab.lookup(sent[t]);
    enc.sentence_ids.push_back(std::move(ids));
  }
  if (doc.labels) {
    enc.labels = std::vector<int>(doc.labels->begin(), doc.labels->begin() + n_sents);
  }
  return enc;
}

std::vector<std::vector<std::string>> decode(const EncodedDocument& doc, const Vocabulary& vocab) {
  std::vector<std::vector<std::string>> out;
  out.reserve(doc.sentence_ids.size());
  for (const auto& sent : doc.sentence_ids) {
    std::vector<std::string> toks;
    toks.reserve(sent.size());
    for (int id : sent) {
      if (id < 0 || id >= vocab.size())
        throw std::out_of_range("token id out of vocabulary range");
      toks.push_back(vocab.id_to_token[id]);
    }
    out.push_back(std::move(toks));
  }
  return out;
}

}  // namespace sspext
