#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "sspext/corpus.hpp"

using namespace sspext;

namespace {

std::string temp_file(const std::string& name, const std::string& contents) {
  const auto path = std::filesystem::temp_directory_path() / ("sspext_corpus_" + name);
  std::ofstream out(path);
  out << contents;
  out.close();
  return path.string();
}

std::vector<std::string> toks(std::initializer_list<const char*> items) {
  return std::vector<std::string>(items.begin(), items.end());
}

}  // namespace

TEST_CASE("tokenize lowercases and splits punctuation") {
  CHECK(tokenize("The cat sat.") == toks({"the", "cat", "sat", "."}));
  CHECK(tokenize("Hello, World!") == toks({"hello", ",", "world", "!"}));
  CHECK(tokenize("a(b)[c]") == toks({"a", "(", "b", ")", "[", "c", "]"}));
  CHECK(tokenize("don't \"quote\"") == toks({"don", "'", "t", "\"", "quote", "\""}));
  CHECK(tokenize("a:b;c?") == toks({"a", ":", "b", ";", "c", "?"}));
}

TEST_CASE("tokenize handles whitespace variants") {
  CHECK(tokenize("").empty());
  CHECK(tokenize("   \t \r\n ").empty());
  CHECK(tokenize("a  b\tc\nd") == toks({"a", "b", "c", "d"}));
  // U+00A0 no-break space and U+2003 em space separate tokens.
  CHECK(tokenize("a\xc2\xa0measured") == toks({"a", "measured"}));
  CHECK(tokenize("x\xe2\x80\x83y") == toks({"x", "y"}));
}

TEST_CASE("tokenize passes non-ASCII through without case folding") {
  CHECK(tokenize("Caf\xc3\xa9 Buzz") == toks({"caf\xc3\xa9", "buzz"}));
  CHECK(tokenize("\xc3\x89tude") == toks({"\xc3\x89tude"}));
}

TEST_CASE("ingest_corpus tokenizes, drops empty sentences, rejects empty docs") {
  const std::string jsonl =
      R"({"id":"d1","sentences":["The cat sat.","   "],"summary":["The cat."],"labels":[1,0]})"
      "\n"
      R"({"id":"d2","sentences":["   "],"summary":["x"]})"
      "\n"
      R"({"id":"d3","sentences":["a b"],"summary":["a"]})"
      "\n";
  const std::string path = temp_file("ingest.jsonl", jsonl);
  IngestStats stats;
  auto docs = ingest_corpus(path, CorpusLimits{}, &stats);

  REQUIRE(docs.size() == 2);
  CHECK(stats.kept == 2);
  CHECK(stats.rejected_empty == 1);
  CHECK(stats.dropped_sentences == 2);

  CHECK(docs[0].id == "d1");
  REQUIRE(docs[0].sentences.size() == 1);
  CHECK(docs[0].sentences[0] == toks({"the", "cat", "sat", "."}));
  REQUIRE(docs[0].labels.has_value());
  // The label of the dropped whitespace-only sentence is dropped with it.
  CHECK(*docs[0].labels == std::vector<int>{1});
  CHECK(docs[0].summary.size() == 1);
  CHECK(docs[0].summary[0] == toks({"the", "cat", "."}));

  CHECK(docs[1].id == "d3");
  CHECK_FALSE(docs[1].labels.has_value());
}

TEST_CASE("ingest_corpus reports malformed JSON with line numbers") {
  const std::string path = temp_file(
      "bad.jsonl",
      R"({"id":"a","sentences":["x"],"summary":["y"]})" "\nnot json at all\n");
  CHECK_THROWS_WITH(ingest_corpus(path, CorpusLimits{}, nullptr),
                    "malformed JSON at line 2");
}

TEST_CASE("ingest_corpus reports missing fields and label mismatches") {
  const std::string missing = temp_file("missing.jsonl", R"({"id":"a","sentences":["x"]})" "\n");
  CHECK_THROWS_WITH(ingest_corpus(missing, CorpusLimits{}, nullptr),
                    "missing required field at line 1");

  const std::string mismatch = temp_file(
      "mismatch.jsonl",
      R"({"id":"docX","sentences":["a","b"],"summary":["s"],"labels":[1]})" "\n");
  CHECK_THROWS_WITH(ingest_corpus(mismatch, CorpusLimits{}, nullptr),
                    "label length mismatch: docX");
}

TEST_CASE("ingest_corpus applies sentence and token limits") {
  const std::string path = temp_file(
      "limits.jsonl",
      R"({"id":"d","sentences":["a b c d e","f g","h i"],"summary":["s"],"labels":[1,0,1]})" "\n");
  CorpusLimits limits;
  limits.max_sentences_per_doc = 2;
  limits.max_tokens_per_sentence = 3;
  auto docs = ingest_corpus(path, limits, nullptr);
  REQUIRE(docs.size() == 1);
  REQUIRE(docs[0].sentences.size() == 2);
  CHECK(docs[0].sentences[0] == toks({"a", "b", "c"}));
  CHECK(docs[0].sentences[1] == toks({"f", "g"}));
  CHECK(*docs[0].labels == std::vector<int>{1, 0});
}

TEST_CASE("save_corpus and load_corpus round-trip") {
  std::vector<Document> docs(2);
  docs[0].id = "one";
  docs[0].sentences = {toks({"a", "b"}), toks({"c"})};
  docs[0].summary = {toks({"a"})};
  docs[0].labels = std::vector<int>{1, 0};
  docs[1].id = "two";
  docs[1].sentences = {toks({"x", "y", "z"})};
  docs[1].summary = {toks({"x"}), toks({"z"})};

  const auto path = (std::filesystem::temp_directory_path() / "sspext_corpus_rt.jsonl").string();
  save_corpus(docs, path);
  auto loaded = load_corpus(path);

  REQUIRE(loaded.size() == 2);
  CHECK(loaded[0].id == docs[0].id);
  CHECK(loaded[0].sentences == docs[0].sentences);
  CHECK(loaded[0].summary == docs[0].summary);
  CHECK(loaded[0].labels == docs[0].labels);
  CHECK(loaded[1].sentences == docs[1].sentences);
  CHECK_FALSE(loaded[1].labels.has_value());
}

TEST_CASE("load_corpus validates tokenized documents") {
  const std::string empty_sent = temp_file(
      "load_empty.jsonl", R"({"id":"e","sentences":[["a"],[]],"summary":[["s"]]})" "\n");
  CHECK_THROWS(load_corpus(empty_sent));

  const std::string mismatch = temp_file(
      "load_mismatch.jsonl",
      R"({"id":"m","sentences":[["a"]],"summary":[["s"]],"labels":[1,0]})" "\n");
  CHECK_THROWS_WITH(load_corpus(mismatch), "label length mismatch: m");
}

TEST_CASE("build_vocabulary orders by frequency then lexicographically") {
  std::vector<Document> docs(1);
  docs[0].id = "d";
  // zz x3, aa x2, bb x2, once x1; summary tokens count too.
  docs[0].sentences = {toks({"zz", "zz", "aa"}), toks({"bb", "aa", "once"})};
  docs[0].summary = {toks({"zz", "bb"})};

  Vocabulary vocab = build_vocabulary(docs, 2);
  CHECK(vocab.id_to_token[Vocabulary::kPad] == "<pad>");
  CHECK(vocab.id_to_token[Vocabulary::kUnkWord] == "<unk_word>");
  CHECK(vocab.id_to_token[Vocabulary::kMaskSent] == "<mask_sent>");
  REQUIRE(vocab.size() == 6);
  CHECK(vocab.id_to_token[3] == "zz");   // freq 3
  CHECK(vocab.id_to_token[4] == "aa");   // freq 2, ties broken lexicographically
  CHECK(vocab.id_to_token[5] == "bb");
  CHECK(vocab.lookup("once") == Vocabulary::kUnkWord);
  CHECK(vocab.lookup("zz") == 3);
}

TEST_CASE("vocabulary persistence and hashing") {
  std::vector<Document> docs(1);
  docs[0].id = "d";
  docs[0].sentences = {toks({"red", "red", "blue", "blue"})};
  docs[0].summary = {toks({"red"})};
  Vocabulary vocab = build_vocabulary(docs, 2);

  const auto path = (std::filesystem::temp_directory_path() / "sspext_vocab.txt").string();
  save_vocabulary(vocab, path);
  Vocabulary loaded = load_vocabulary(path);
  CHECK(loaded.id_to_token == vocab.id_to_token);
  CHECK(vocabulary_hash(loaded) == vocabulary_hash(vocab));

  Vocabulary other = vocab;
  other.id_to_token.push_back("extra");
  other.token_to_id["extra"] = other.size() - 1;
  CHECK(vocabulary_hash(other) != vocabulary_hash(vocab));
}

TEST_CASE("load_vocabulary rejects files without the special tokens") {
  const std::string path = temp_file("vocab_bad.txt", "<pad>\n<unk_word>\nnot_mask\n");
  CHECK_THROWS(load_vocabulary(path));
}

TEST_CASE("encode maps OOV tokens to <unk_word> and decode round-trips") {
  std::vector<Document> train(1);
  train[0].id = "t";
  train[0].sentences = {toks({"known", "known", "words", "words"})};
  train[0].summary = {toks({"known"})};
  Vocabulary vocab = build_vocabulary(train, 2);

  Document doc;
  doc.id = "d";
  doc.sentences = {toks({"known", "mystery"}), toks({"words"})};
  doc.summary = {toks({"known"})};
  doc.labels = std::vector<int>{1, 0};

  EncodedDocument enc = encode(doc, vocab, CorpusLimits{});
  REQUIRE(enc.sentence_ids.size() == 2);
  CHECK(enc.sentence_ids[0][0] == vocab.lookup("known"));
  CHECK(enc.sentence_ids[0][1] == Vocabulary::kUnkWord);
  CHECK(*enc.labels == std::vector<int>{1, 0});

  auto decoded = decode(enc, vocab);
  CHECK(decoded[0] == toks({"known", "<unk_word>"}));
  CHECK(decoded[1] == toks({"words"}));
}

TEST_CASE("encode enforces limits") {
  Vocabulary vocab;
  vocab.id_to_token = {"<pad>", "<unk_word>", "<mask_sent>", "a"};
  for (int i = 0; i < vocab.size(); ++i) vocab.token_to_id[vocab.id_to_token[i]] = i;

  Document doc;
  doc.id = "d";
  doc.sentences = {toks({"a", "a", "a"}), toks({"a"}), toks({"a"})};
  doc.summary = {toks({"a"})};
  doc.labels = std::vector<int>{1, 0, 1};

  CorpusLimits limits;
  limits.max_sentences_per_doc = 2;
  limits.max_tokens_per_sentence = 2;
  EncodedDocument enc = encode(doc, vocab, limits);
  REQUIRE(enc.sentence_ids.size() == 2);
  CHECK(enc.sentence_ids[0].size() == 2);
  CHECK(*enc.labels == std::vector<int>{1, 0});
}
