// Command-line front end: corpus ingestion, oracle labeling, pre-training,
// fine-tuning, evaluation, learning curves, and gradient checks.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "sspext/checkpoint.hpp"
#include "sspext/corpus.hpp"
#include "sspext/evalharness.hpp"
#include "sspext/gradcheck.hpp"
#include "sspext/rouge.hpp"
#include "sspext/selfsup.hpp"
#include "sspext/trainer.hpp"

namespace {

using namespace sspext;

uint64_t resolve_seed(std::optional<uint64_t> flag_seed) {
  if (flag_seed) return *flag_seed;
  if (const char* env = std::getenv("SSPEXT_SEED")) return std::strtoull(env, nullptr, 10);
  return 0;
}

void write_snapshot(const std::string& path, const nlohmann::json& snapshot) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("could not write config snapshot: " + path);
  out << snapshot.dump(2) << "\n";
}

std::string hash_hex(uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// Deterministic trailing split when no explicit dev corpus is given.
void split_dev(std::vector<EncodedDocument>& train, std::vector<EncodedDocument>& dev) {
  const size_t n = train.size();
  if (n < 2) return;
  const size_t dev_n = std::max<size_t>(1, n / 10);
  dev.assign(train.end() - static_cast<long>(dev_n), train.end());
  train.resize(n - dev_n);
}

std::vector<EncodedDocument> encode_all(const std::vector<Document>& docs,
                                        const Vocabulary& vocab, const CorpusLimits& limits) {
  std::vector<EncodedDocument> out;
  out.reserve(docs.size());
  for (const Document& d : docs) out.push_back(encode(d, vocab, limits));
  return out;
}

int run_ingest(const std::string& input, const std::string& out, const std::string& vocab_path,
               int min_count, const CorpusLimits& limits, const std::string& snapshot_path) {
  IngestStats stats;
  std::vector<Document> docs = ingest_corpus(input, limits, &stats);
  save_corpus(docs, out);
  Vocabulary vocab = build_vocabulary(std::span<const Document>(docs.data(), docs.size()),
                                      min_count);
  save_vocabulary(vocab, vocab_path);

  nlohmann::json snap;
  snap["command"] = "ingest";
  snap["input"] = input;
  snap["out"] = out;
  snap["vocab"] = vocab_path;
  snap["min_count"] = min_count;
  snap["limits"] = {{"max_sentences", limits.max_sentences_per_doc},
                    {"max_tokens", limits.max_tokens_per_sentence}};
  snap["stats"] = {{"kept", stats.kept},
                   {"rejected_empty", stats.rejected_empty},
                   {"dropped_sentences", stats.dropped_sentences}};
  snap["vocab_size"] = vocab.size();
  snap["vocab_hash"] = hash_hex(vocabulary_hash(vocab));
  write_snapshot(snapshot_path.empty() ? out + ".config.json" : snapshot_path, snap);

  std::cout << "ingested " << stats.kept << " documents (" << stats.rejected_empty
            << " rejected, " << stats.dropped_sentences << " sentences dropped), vocab "
            << vocab.size() << "\n";
  return 0;
}

int run_label(const std::string& corpus_path, const std::string& out, int max_select,
              const std::string& snapshot_path) {
  std::vector<Document> docs = load_corpus(corpus_path);
  for (Document& d : docs) d.labels = oracle_labels(d, max_select);
  const std::string target = out.empty() ? corpus_path : out;
  save_corpus(docs, target);

  nlohmann::json snap;
  snap["command"] = "label";
  snap["corpus"] = corpus_path;
  snap["out"] = target;
  snap["max_select"] = max_select;
  write_snapshot(snapshot_path.empty() ? target + ".config.json" : snapshot_path, snap);

  std::cout << "labeled " << docs.size() << " documents\n";
  return 0;
}

int run_pretrain_cmd(const std::string& corpus_path, const std::string& vocab_path,
                     const std::string& task_str, const std::string& config_path,
                     std::optional<uint64_t> seed_flag, const std::string& out,
                     const std::string& dev_path, const std::string& history_path,
                     const std::string& dump_path, const std::string& snapshot_path) {
  RunConfig cfg;
  cfg.training = TrainingConfig::pretrain_defaults();
  if (!config_path.empty()) load_config_file(cfg, config_path);
  const uint64_t seed = resolve_seed(seed_flag);
  cfg.training.rng_seed = seed;
  cfg.corruption.rng_seed = seed;
  cfg.model.validate();

  Vocabulary vocab = load_vocabulary(vocab_path);
  std::vector<Document> docs = load_corpus(corpus_path);
  std::vector<EncodedDocument> train = encode_all(docs, vocab, cfg.limits);
  std::vector<EncodedDocument> dev;
  if (!dev_path.empty()) {
    std::vector<Document> dev_docs = load_corpus(dev_path);
    dev = encode_all(dev_docs, vocab, cfg.limits);
  } else {
    split_dev(train, dev);
  }

  const CorruptionTask task = parse_task(task_str);
  ModelParameters<float> init = init_parameters<float>(cfg.model, static_cast<int>(vocab.size()),
                                                       derive_seed(seed, "init", 0, 0));

  if (!dump_path.empty()) {
    ReplacePool pool;
    if (task == CorruptionTask::kReplace) {
      Rng pool_rng(derive_seed(seed, "replacepool", 0, 0));
      pool = build_replace_pool(std::span<const EncodedDocument>(train.data(), train.size()),
                                cfg.corruption, pool_rng);
    }
    std::ofstream dump(dump_path, std::ios::trunc);
    if (!dump) throw std::runtime_error("could not open corruption dump: " + dump_path);
    for (const EncodedDocument& doc : train) {
      Rng rng(derive_seed(seed, "corrupt", 0, fnv1a(doc.id)));
      std::optional<CorruptedDocument> cd;
      switch (task) {
        case CorruptionTask::kMask: cd = corrupt_mask(doc, cfg.corruption, rng); break;
        case CorruptionTask::kReplace:
          cd = corrupt_replace(doc, pool, cfg.corruption, rng);
          break;
        case CorruptionTask::kSwitch: cd = corrupt_switch(doc, cfg.corruption, rng); break;
      }
      if (cd) dump << corruption_to_json(*cd) << "\n";
    }
  }

  PretrainResult result = sspext::run_pretrain(train, dev, task, init, cfg.corruption,
                                               cfg.training);

  nlohmann::json snapshot = config_snapshot(cfg);
  snapshot["command"] = "pretrain";
  snapshot["task"] = task_str;
  snapshot["corpus"] = corpus_path;
  snapshot["vocab"] = vocab_path;
  snapshot["seed"] = seed;
  snapshot["vocab_hash"] = hash_hex(vocabulary_hash(vocab));

  nlohmann::json meta;
  meta["phase"] = "pretrain";
  meta["task"] = task_str;
  meta["epoch"] = result.best_epoch;
  meta["vocab_hash"] = hash_hex(vocabulary_hash(vocab));
  meta["config"] = snapshot;
  save_checkpoint(result.best_params, meta, out);
  write_pretrain_history_csv(history_path.empty() ? out + ".history.csv" : history_path,
                             result.history);
  write_snapshot(snapshot_path.empty() ? out + ".config.json" : snapshot_path, snapshot);

  std::cout << "pretrain " << task_str << ": best epoch " << result.best_epoch << ", dev loss "
            << result.best_dev_loss << " (" << result.history.size() << " epochs)\n";
  return 0;
}

int run_finetune_cmd(const std::string& corpus_path, const std::string& vocab_path,
                     const std::string& init_path, const std::string& reuse_str,
                     const std::string& config_path, std::optional<uint64_t> seed_flag,
                     const std::string& out, const std::string& dev_path,
                     const std::string& history_path, int threads,
                     const std::string& snapshot_path) {
  RunConfig cfg;
  cfg.training = TrainingConfig::finetune_defaults();
  if (!config_path.empty()) load_config_file(cfg, config_path);
  const uint64_t seed = resolve_seed(seed_flag);
  cfg.training.rng_seed = seed;
  cfg.model.validate();

  Vocabulary vocab = load_vocabulary(vocab_path);
  const std::string vhash = hash_hex(vocabulary_hash(vocab));
  std::vector<Document> docs = load_corpus(corpus_path);
  std::vector<EncodedDocument> train = encode_all(docs, vocab, cfg.limits);

  if (dev_path.empty()) throw std::runtime_error("finetune requires --dev");
  EvalCorpus dev = make_eval_corpus(load_corpus(dev_path), vocab, cfg.limits);

  const ReuseMode reuse = parse_reuse(reuse_str);
  ModelParameters<float> init;
  if (!init_path.empty()) {
    Checkpoint ckpt = load_checkpoint(init_path);
    if (ckpt.metadata.value("vocab_hash", "") != vhash)
      throw std::runtime_error("checkpoint vocabulary hash mismatch");
    if (reuse == ReuseMode::kFull) {
      cfg.model = ckpt.params.config;  // architecture comes with the weights
    }
    init = init_parameters<float>(cfg.model, static_cast<int>(vocab.size()),
                                  derive_seed(seed, "init", 0, 0));
    overlay_checkpoint(init, ckpt, reuse);
  } else {
    if (reuse != ReuseMode::kNone)
      throw std::runtime_error("reuse mode " + reuse_str + " requires --init");
    init = init_parameters<float>(cfg.model, static_cast<int>(vocab.size()),
                                  derive_seed(seed, "init", 0, 0));
  }

  FinetuneResult result = sspext::run_finetune(train, dev, init, cfg.training, threads);

  nlohmann::json snapshot = config_snapshot(cfg);
  snapshot["command"] = "finetune";
  snapshot["corpus"] = corpus_path;
  snapshot["vocab"] = vocab_path;
  snapshot["dev"] = dev_path;
  snapshot["init"] = init_path;
  snapshot["reuse"] = reuse_str;
  snapshot["seed"] = seed;
  snapshot["vocab_hash"] = vhash;

  nlohmann::json meta;
  meta["phase"] = "finetune";
  meta["task"] = "";
  meta["epoch"] = result.best_epoch;
  meta["vocab_hash"] = vhash;
  meta["config"] = snapshot;
  save_checkpoint(result.best_params, meta, out);
  write_finetune_history_csv(history_path.empty() ? out + ".history.csv" : history_path,
                             result.history);
  write_snapshot(snapshot_path.empty() ? out + ".config.json" : snapshot_path, snapshot);

  std::cout << "finetune: best epoch " << result.best_epoch << ", dev rouge2 "
            << result.best_dev.rouge2 << " (" << result.history.size() << " epochs)\n";
  return 0;
}

int run_evaluate(const std::string& model_path, const std::string& baseline,
                 const std::string& corpus_path, const std::string& vocab_path, int k, int threads,
                 const std::string& report_path, const std::string& selections_path,
                 const std::string& snapshot_path) {
  std::vector<Document> docs = load_corpus(corpus_path);
  CorpusRouge scores;
  std::string method;
  std::vector<std::vector<int>> selections;

  if (!baseline.empty()) {
    if (baseline != "lead3") throw std::runtime_error("unknown baseline: " + baseline);
    method = "lead3";
    selections.reserve(docs.size());
    for (const Document& d : docs) selections.push_back(lead3(d));
  } else {
    if (model_path.empty()) throw std::runtime_error("evaluate needs --model or --baseline");
    if (vocab_path.empty()) throw std::runtime_error("evaluate --model needs --vocab");
    Checkpoint ckpt = load_checkpoint(model_path);
    Vocabulary vocab = load_vocabulary(vocab_path);
    if (ckpt.metadata.value("vocab_hash", "") != hash_hex(vocabulary_hash(vocab)))
      throw std::runtime_error("checkpoint vocabulary hash mismatch");
    EvalCorpus ec = make_eval_corpus(docs, vocab, CorpusLimits{});
    selections = select_corpus(ckpt.params, ec, k, threads);
    docs = std::move(ec.docs);
    method = "model";
  }
  scores = corpus_rouge(std::span<const std::vector<int>>(selections.data(), selections.size()),
                        std::span<const Document>(docs.data(), docs.size()));

  std::cout << "rouge1 " << scores.rouge1 << "\nrouge2 " << scores.rouge2 << "\nrougel "
            << scores.rougel << "\n";
  if (!report_path.empty()) write_eval_csv(report_path, method, scores);
  if (!selections_path.empty()) write_selections_jsonl(selections_path, docs, selections);

  nlohmann::json snap;
  snap["command"] = "evaluate";
  snap["corpus"] = corpus_path;
  snap["method"] = method;
  snap["model"] = model_path;
  snap["k"] = k;
  snap["rouge1"] = scores.rouge1;
  snap["rouge2"] = scores.rouge2;
  snap["rougel"] = scores.rougel;
  write_snapshot(snapshot_path.empty()
                     ? (report_path.empty() ? "evaluate.config.json" : report_path + ".config.json")
                     : snapshot_path,
                 snap);
  return 0;
}

int run_curves(const std::vector<std::string>& history_paths, const std::string& out,
               const std::string& snapshot_path) {
  std::vector<CurveHistory> histories;
  histories.reserve(history_paths.size());
  for (const std::string& p : history_paths) histories.push_back(read_history_csv(p));
  emit_curves(histories, out);

  nlohmann::json snap;
  snap["command"] = "curves";
  snap["histories"] = history_paths;
  snap["out"] = out;
  write_snapshot(snapshot_path.empty() ? out + ".config.json" : snapshot_path, snap);
  std::cout << "wrote " << out << "\n";
  return 0;
}

int run_gradcheck(const std::string& snapshot_path) {
  GradCheckReport report = run_gradient_checks();
  for (const auto& e : report.entries)
    std::cout << e.loss_name << " max relative error " << e.max_rel_error << "\n";
  const bool ok = report.all_below(1e-4);
  std::cout << (ok ? "gradcheck passed" : "gradcheck FAILED") << " (threshold 1e-4)\n";

  nlohmann::json snap;
  snap["command"] = "gradcheck";
  snap["threshold"] = 1e-4;
  for (const auto& e : report.entries) snap["max_rel_error"][e.loss_name] = e.max_rel_error;
  write_snapshot(snapshot_path.empty() ? "gradcheck.config.json" : snapshot_path, snap);
  return ok ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hierarchical extractive summarization with self-supervised pre-training"};
  app.require_subcommand(1);

  std::string input, out, vocab_path, corpus_path, config_path, dev_path, history_path;
  std::string task_str, init_path, reuse_str = "none", model_path, baseline, report_path;
  std::string selections_path, dump_path, snapshot_path;
  std::vector<std::string> history_paths;
  std::optional<uint64_t> seed_flag;
  int max_select = 3, min_count = 5, k = 3, threads = 1;
  CorpusLimits limits;

  auto* ingest = app.add_subcommand("ingest", "tokenize a JSONL corpus and build the vocabulary");
  ingest->add_option("--input", input, "raw JSONL input")->required();
  ingest->add_option("--out", out, "tokenized corpus output")->required();
  ingest->add_option("--vocab", vocab_path, "vocabulary output")->required();
  ingest->add_option("--min-count", min_count, "vocabulary frequency cutoff");
  ingest->add_option("--max-sentences", limits.max_sentences_per_doc, "per-document cap");
  ingest->add_option("--max-tokens", limits.max_tokens_per_sentence, "per-sentence cap");
  ingest->add_option("--snapshot", snapshot_path, "config snapshot path");

  auto* label = app.add_subcommand("label", "attach greedy oracle labels");
  label->add_option("--corpus", corpus_path, "tokenized corpus")->required();
  label->add_option("--out", out, "output path (default: rewrite input)");
  label->add_option("--max-select", max_select, "greedy selection cap");
  label->add_option("--snapshot", snapshot_path, "config snapshot path");

  auto* pretrain = app.add_subcommand("pretrain", "pre-train on a corruption task");
  pretrain->add_option("--task", task_str, "mask|replace|switch")->required();
  pretrain->add_option("--corpus", corpus_path, "tokenized corpus")->required();
  pretrain->add_option("--vocab", vocab_path, "vocabulary file")->required();
  pretrain->add_option("--config", config_path, "key=value config file");
  pretrain->add_option("--seed", seed_flag, "rng seed (fallback: SSPEXT_SEED)");
  pretrain->add_option("--out", out, "checkpoint output")->required();
  pretrain->add_option("--dev", dev_path, "dev corpus (default: trailing 10% split)");
  pretrain->add_option("--history", history_path, "loss history CSV path");
  pretrain->add_option("--dump-corruptions", dump_path, "JSONL dump of epoch-0 instances");
  pretrain->add_option("--snapshot", snapshot_path, "config snapshot path");

  auto* finetune = app.add_subcommand("finetune", "fine-tune on oracle labels");
  finetune->add_option("--corpus", corpus_path, "labeled tokenized corpus")->required();
  finetune->add_option("--vocab", vocab_path, "vocabulary file")->required();
  finetune->add_option("--init", init_path, "initial checkpoint");
  finetune->add_option("--reuse", reuse_str, "full|sentenc|none");
  finetune->add_option("--config", config_path, "key=value config file");
  finetune->add_option("--seed", seed_flag, "rng seed (fallback: SSPEXT_SEED)");
  finetune->add_option("--out", out, "checkpoint output")->required();
  finetune->add_option("--dev", dev_path, "dev corpus for ROUGE model selection")->required();
  finetune->add_option("--history", history_path, "ROUGE history CSV path");
  finetune->add_option("--threads", threads, "dev inference worker threads");
  finetune->add_option("--snapshot", snapshot_path, "config snapshot path");

  auto* evaluate = app.add_subcommand("evaluate", "score selections against summaries");
  evaluate->add_option("--model", model_path, "checkpoint to evaluate");
  evaluate->add_option("--baseline", baseline, "baseline name (lead3)");
  evaluate->add_option("--corpus", corpus_path, "tokenized corpus")->required();
  evaluate->add_option("--vocab", vocab_path, "vocabulary file (with --model)");
  evaluate->add_option("--k", k, "sentences to select");
  evaluate->add_option("--threads", threads, "inference worker threads");
  evaluate->add_option("--report", report_path, "CSV report path");
  evaluate->add_option("--selections", selections_path, "JSONL selections dump");
  evaluate->add_option("--snapshot", snapshot_path, "config snapshot path");

  auto* curves = app.add_subcommand("curves", "merge histories into a long-format CSV");
  curves->add_option("--history", history_paths, "fine-tune history CSVs")
      ->required()
      ->expected(-1);
  curves->add_option("--out", out, "output CSV")->required();
  curves->add_option("--snapshot", snapshot_path, "config snapshot path");

  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient verification");
  gradcheck->add_option("--snapshot", snapshot_path, "config snapshot path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (ingest->parsed())
      return run_ingest(input, out, vocab_path, min_count, limits, snapshot_path);
    if (label->parsed()) return run_label(corpus_path, out, max_select, snapshot_path);
    if (pretrain->parsed())
      return run_pretrain_cmd(corpus_path, vocab_path, task_str, config_path, seed_flag, out,
                              dev_path, history_path, dump_path, snapshot_path);
    if (finetune->parsed())
      return run_finetune_cmd(corpus_path, vocab_path, init_path, reuse_str, config_path,
                              seed_flag, out, dev_path, history_path, threads, snapshot_path);
    if (evaluate->parsed())
      return run_evaluate(model_path, baseline, corpus_path, vocab_path, k, threads, report_path,
                          selections_path, snapshot_path);
    if (curves->parsed()) return run_curves(history_paths, out, snapshot_path);
    if (gradcheck->parsed()) return run_gradcheck(snapshot_path);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
