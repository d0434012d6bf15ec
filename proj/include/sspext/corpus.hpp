#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace sspext {

// One article: tokenized sentences, tokenized reference summary, optional
// per-sentence 0/1 extraction labels.
struct Document {
  std::string id;
  std::vector<std::vector<std::string>> sentences;
  std::vector<std::vector<std::string>> summary;
  std::optional<std::vector<int>> labels;
};

struct CorpusLimits {
  int max_sentences_per_doc = 50;
  int max_tokens_per_sentence = 100;
};

struct IngestStats {
  int kept = 0;
  int rejected_empty = 0;      // documents with zero non-empty sentences
  int dropped_sentences = 0;   // whitespace-only sentences removed
};

// Lowercase, split punctuation .,!?;:'"()[] into standalone tokens, split on
// whitespace. Whitespace-only input yields an empty sequence.
std::vector<std::string> tokenize(std::string_view raw);

// Read raw JSONL ({id, sentences, summary, labels?}), tokenize and apply
// limits. Malformed lines and label length mismatches throw.
std::vector<Document> ingest_corpus(const std::string& path, const CorpusLimits& limits,
                                    IngestStats* stats = nullptr);

// Tokenized-corpus persistence (JSONL with sentences/summary as token arrays).
void save_corpus(const std::vector<Document>& docs, const std::string& path);
std::vector<Document> load_corpus(const std::string& path);

struct Vocabulary {
  static constexpr int kPad = 0;
  static constexpr int kUnkWord = 1;
  static constexpr int kMaskSent = 2;

  std::unordered_map<std::string, int> token_to_id;
  std::vector<std::string> id_to_token;

  int size() const { return static_cast<int>(id_to_token.size()); }
  int lookup(const std::string& token) const {
    auto it = token_to_id.find(token);
    return it == token_to_id.end() ? kUnkWord : it->second;
  }
};

// Tokens appearing >= min_count times across sentences and summaries, ids by
// descending frequency then lexicographic order, after the 3 special tokens.
Vocabulary build_vocabulary(std::span<const Document> docs, int min_count);

// One token per line, line number = id, specials first.
void save_vocabulary(const Vocabulary& vocab, const std::string& path);
Vocabulary load_vocabulary(const std::string& path);

uint64_t vocabulary_hash(const Vocabulary& vocab);

struct EncodedDocument {
  std::string id;
  std::vector<std::vector<int>> sentence_ids;
  std::optional<std::vector<int>> labels;
};

EncodedDocument encode(const Document& doc, const Vocabulary& vocab, const CorpusLimits& limits);
std::vector<std::vector<std::string>> decode(const EncodedDocument& doc, const Vocabulary& vocab);

}  // namespace sspext
