#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "doctest.h"
#include "sspext/selfsup.hpp"

using namespace sspext;

namespace {

// n distinct 3-token sentences.
EncodedDocument make_doc(const std::string& id, int n, int base = 10) {
  EncodedDocument d;
  d.id = id;
  for (int i = 0; i < n; ++i) d.sentence_ids.push_back({base + i, base + i + 1, base + i + 2});
  return d;
}

std::multiset<std::vector<int>> sentence_bag(const std::vector<std::vector<int>>& sents) {
  return {sents.begin(), sents.end()};
}

VecD vec2(double x, double y) {
  VecD v(2);
  v << x, y;
  return v;
}

ModelConfig toy_config() {
  ModelConfig c;
  c.d_w = 4;
  c.d_h = 3;
  c.n_layers = 1;
  c.n_heads = 2;
  c.d_ff = 8;
  return c;
}

}  // namespace

TEST_CASE("task names round-trip and reject unknowns") {
  CHECK(task_name(CorruptionTask::kMask) == "mask");
  CHECK(task_name(CorruptionTask::kReplace) == "replace");
  CHECK(task_name(CorruptionTask::kSwitch) == "switch");
  CHECK(parse_task("mask") == CorruptionTask::kMask);
  CHECK(parse_task("switch") == CorruptionTask::kSwitch);
  CHECK_THROWS_WITH(parse_task("rotate"), "unknown task: rotate");
}

TEST_CASE("corruption config validation") {
  CorruptionConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  CorruptionConfig bad_p = cfg;
  bad_p.p_mask = 1.5;
  CHECK_THROWS(bad_p.validate());
  CorruptionConfig bad_margin = cfg;
  bad_margin.margin = 0.0;
  CHECK_THROWS(bad_margin.validate());
  CorruptionConfig bad_pool = cfg;
  bad_pool.replace_pool_docs = 0;
  CHECK_THROWS(bad_pool.validate());
}

TEST_CASE("corrupt_mask: degenerate documents are skipped") {
  CorruptionConfig cfg;
  Rng rng(1);
  CHECK_FALSE(corrupt_mask(make_doc("one", 1), cfg, rng).has_value());
  CHECK(corrupt_mask(make_doc("two", 2), cfg, rng).has_value());
}

TEST_CASE("corrupt_mask: p=0 with forced minimum masks exactly one position") {
  EncodedDocument doc = make_doc("d", 6);
  CorruptionConfig cfg;
  cfg.p_mask = 0.0;
  Rng rng(5);
  auto cd = corrupt_mask(doc, cfg, rng);
  REQUIRE(cd.has_value());
  REQUIRE(cd->masked_positions.size() == 1);
  REQUIRE(cd->pool.size() == 1);
  const int pos = cd->masked_positions[0];
  CHECK(cd->sentences[pos] == std::vector<int>{Vocabulary::kMaskSent});
  CHECK(cd->pool[0] == doc.sentence_ids[pos]);
  CHECK(cd->gold_pool_index == std::vector<int>{0});
}

TEST_CASE("corrupt_mask: p=1 masks every position") {
  EncodedDocument doc = make_doc("d", 5);
  CorruptionConfig cfg;
  cfg.p_mask = 1.0;
  Rng rng(9);
  auto cd = corrupt_mask(doc, cfg, rng);
  REQUIRE(cd.has_value());
  REQUIRE(cd->masked_positions.size() == 5);
  for (int i = 0; i < 5; ++i) {
    CHECK(cd->masked_positions[i] == i);
    CHECK(cd->gold_pool_index[i] == i);
    CHECK(cd->sentences[i] == std::vector<int>{Vocabulary::kMaskSent});
    CHECK(cd->pool[i] == doc.sentence_ids[i]);
  }
}

TEST_CASE("corrupt_mask: p=0 without forced minimum is the identity") {
  EncodedDocument doc = make_doc("d", 5);
  CorruptionConfig cfg;
  cfg.p_mask = 0.0;
  cfg.force_minimum = false;
  Rng rng(3);
  auto cd = corrupt_mask(doc, cfg, rng);
  REQUIRE(cd.has_value());
  CHECK(cd->masked_positions.empty());
  CHECK(cd->pool.empty());
  CHECK(cd->sentences == doc.sentence_ids);
}

TEST_CASE("corrupt_mask: frozen fixture and rerun determinism") {
  EncodedDocument doc = make_doc("g", 10);
  CorruptionConfig cfg;  // p_mask = 0.25
  Rng rng(77);
  auto cd = corrupt_mask(doc, cfg, rng);
  REQUIRE(cd.has_value());
  CHECK(cd->masked_positions == std::vector<int>{3});

  Rng rerun(77);
  auto cd2 = corrupt_mask(doc, cfg, rerun);
  CHECK(cd->masked_positions == cd2->masked_positions);
  CHECK(cd->sentences == cd2->sentences);
}

TEST_CASE("corrupt_mask invariants hold over randomized documents") {
  CorruptionConfig cfg;
  cfg.p_mask = 0.3;
  Rng rng(111);
  for (int trial = 0; trial < 300; ++trial) {
    const int n = 2 + static_cast<int>(rng.next_int(9));
    EncodedDocument doc = make_doc("t" + std::to_string(trial), n,
                                   10 + static_cast<int>(rng.next_int(50)));
    auto cd = corrupt_mask(doc, cfg, rng);
    REQUIRE(cd.has_value());
    REQUIRE(!cd->masked_positions.empty());  // forced minimum
    CHECK(std::is_sorted(cd->masked_positions.begin(), cd->masked_positions.end()));
    REQUIRE(cd->pool.size() == cd->masked_positions.size());
    std::set<int> masked(cd->masked_positions.begin(), cd->masked_positions.end());
    CHECK(masked.size() == cd->masked_positions.size());
    for (size_t m = 0; m < cd->masked_positions.size(); ++m) {
      const int pos = cd->masked_positions[m];
      CHECK(cd->sentences[pos] == std::vector<int>{Vocabulary::kMaskSent});
      CHECK(cd->pool[cd->gold_pool_index[m]] == doc.sentence_ids[pos]);
    }
    for (int i = 0; i < n; ++i)
      if (!masked.count(i)) CHECK(cd->sentences[i] == doc.sentence_ids[i]);
  }
}

TEST_CASE("build_replace_pool samples documents without replacement") {
  std::vector<EncodedDocument> corpus;
  for (int i = 0; i < 5; ++i) corpus.push_back(make_doc("doc" + std::to_string(i), 3, 10 * i));
  CorruptionConfig cfg;

  Rng rng(7);
  ReplacePool all = build_replace_pool(corpus, cfg, rng);
  CHECK(all.entries.size() == 15);  // every sentence of every doc

  cfg.replace_pool_docs = 1;
  Rng rng2(7);
  ReplacePool one = build_replace_pool(corpus, cfg, rng2);
  CHECK(one.entries.size() == 3);
  std::set<std::string> sources;
  for (const auto& e : one.entries) sources.insert(e.source_doc_id);
  CHECK(sources.size() == 1);

  Rng a(13), b(13);
  ReplacePool pa = build_replace_pool(corpus, cfg, a);
  ReplacePool pb = build_replace_pool(corpus, cfg, b);
  REQUIRE(pa.entries.size() == pb.entries.size());
  for (size_t i = 0; i < pa.entries.size(); ++i)
    CHECK(pa.entries[i].source_doc_id == pb.entries[i].source_doc_id);

  std::vector<EncodedDocument> tiny{make_doc("solo", 2)};
  CHECK_THROWS_WITH(build_replace_pool(tiny, cfg, a),
                    "build_replace_pool: corpus must have at least 2 documents");
}

TEST_CASE("corrupt_replace: labels reflect actual substitutions") {
  EncodedDocument doc = make_doc("mine", 6, 100);
  ReplacePool pool;
  for (int i = 0; i < 4; ++i) pool.entries.push_back({"other", {500 + i, 501 + i}});

  CorruptionConfig cfg;
  cfg.p_replace = 0.0;
  Rng rng(15);
  CorruptedDocument none = corrupt_replace(doc, pool, cfg, rng);
  CHECK(none.sentences == doc.sentence_ids);
  CHECK(std::count(none.labels.begin(), none.labels.end(), 1) == 0);
  CHECK(none.pool.empty());

  cfg.p_replace = 1.0;
  CorruptedDocument all = corrupt_replace(doc, pool, cfg, rng);
  CHECK(std::count(all.labels.begin(), all.labels.end(), 1) == 6);
  REQUIRE(all.pool.size() == 6);
  REQUIRE(all.pool_source_ids.size() == 6);
  for (size_t i = 0; i < 6; ++i) {
    CHECK(all.sentences[i] != doc.sentence_ids[i]);
    CHECK(all.sentences[i] == all.pool[i]);
    CHECK(all.pool_source_ids[i] == "other");
  }

  cfg.p_replace = 0.5;
  for (int trial = 0; trial < 100; ++trial) {
    CorruptedDocument cd = corrupt_replace(doc, pool, cfg, rng);
    REQUIRE(cd.labels.size() == 6);
    for (size_t i = 0; i < 6; ++i) {
      if (cd.labels[i])
        CHECK(cd.sentences[i] != doc.sentence_ids[i]);
      else
        CHECK(cd.sentences[i] == doc.sentence_ids[i]);
    }
  }
}

TEST_CASE("corrupt_replace never draws from the same document") {
  EncodedDocument doc = make_doc("self", 4);
  ReplacePool pool;
  pool.entries.push_back({"self", {1, 2, 3}});
  CorruptionConfig cfg;
  cfg.p_replace = 1.0;
  Rng rng(1);
  CHECK_THROWS_WITH(corrupt_replace(doc, pool, cfg, rng),
                    "corrupt_replace: no eligible pool entries");

  pool.entries.push_back({"other", {7, 8, 9}});
  CorruptedDocument cd = corrupt_replace(doc, pool, cfg, rng);
  for (const auto& src : cd.pool_source_ids) CHECK(src == "other");
}

TEST_CASE("corrupt_switch: degenerate documents are skipped") {
  CorruptionConfig cfg;
  Rng rng(2);
  CHECK_FALSE(corrupt_switch(make_doc("one", 1), cfg, rng).has_value());
}

TEST_CASE("corrupt_switch: p=0 with forced minimum swaps exactly one distinct pair") {
  EncodedDocument doc = make_doc("d", 7);
  CorruptionConfig cfg;
  cfg.p_switch = 0.0;
  Rng rng(19);
  for (int trial = 0; trial < 50; ++trial) {
    auto cd = corrupt_switch(doc, cfg, rng);
    REQUIRE(cd.has_value());
    std::vector<int> ones;
    for (size_t i = 0; i < cd->labels.size(); ++i)
      if (cd->labels[i]) ones.push_back(static_cast<int>(i));
    REQUIRE(ones.size() == 2);
    const int i = ones[0], j = ones[1];
    CHECK(i < j);
    CHECK(cd->sentences[i] == doc.sentence_ids[j]);
    CHECK(cd->sentences[j] == doc.sentence_ids[i]);
  }
}

TEST_CASE("corrupt_switch: p=0 without forced minimum is the identity") {
  EncodedDocument doc = make_doc("d", 5);
  CorruptionConfig cfg;
  cfg.p_switch = 0.0;
  cfg.force_minimum = false;
  Rng rng(23);
  auto cd = corrupt_switch(doc, cfg, rng);
  REQUIRE(cd.has_value());
  CHECK(cd->sentences == doc.sentence_ids);
  CHECK(std::count(cd->labels.begin(), cd->labels.end(), 1) == 0);
}

TEST_CASE("corrupt_switch: p=1 deranges every position of a distinct document") {
  EncodedDocument doc = make_doc("d", 5);
  CorruptionConfig cfg;
  cfg.p_switch = 1.0;
  Rng rng(29);
  auto cd = corrupt_switch(doc, cfg, rng);
  REQUIRE(cd.has_value());
  CHECK(std::count(cd->labels.begin(), cd->labels.end(), 1) == 5);
  CHECK(sentence_bag(cd->sentences) == sentence_bag(doc.sentence_ids));
  for (int i = 0; i < 5; ++i) CHECK(cd->sentences[i] != doc.sentence_ids[i]);
}

TEST_CASE("corrupt_switch: all-duplicate documents cannot be switched") {
  EncodedDocument doc;
  doc.id = "dup";
  for (int i = 0; i < 3; ++i) doc.sentence_ids.push_back({42, 43});
  CorruptionConfig cfg;
  cfg.p_switch = 1.0;
  Rng rng(31);
  CHECK_FALSE(corrupt_switch(doc, cfg, rng).has_value());
}

TEST_CASE("corrupt_switch invariants over randomized documents with duplicates") {
  CorruptionConfig cfg;
  cfg.p_switch = 0.4;
  Rng rng(37);
  int produced = 0;
  for (int trial = 0; trial < 300; ++trial) {
    EncodedDocument doc;
    doc.id = "t" + std::to_string(trial);
    const int n = 2 + static_cast<int>(rng.next_int(7));
    for (int i = 0; i < n; ++i) {
      // Small token space so duplicate sentences occur regularly.
      doc.sentence_ids.push_back({static_cast<int>(rng.next_int(4)),
                                  static_cast<int>(rng.next_int(4))});
    }
    auto cd = corrupt_switch(doc, cfg, rng);
    if (!cd) continue;
    ++produced;
    REQUIRE(cd->labels.size() == doc.sentence_ids.size());
    CHECK(sentence_bag(cd->sentences) == sentence_bag(doc.sentence_ids));
    for (size_t i = 0; i < cd->labels.size(); ++i) {
      if (cd->labels[i])
        CHECK(cd->sentences[i] != doc.sentence_ids[i]);
      else
        CHECK(cd->sentences[i] == doc.sentence_ids[i]);
    }
  }
  CHECK(produced > 200);  // most documents admit a content-changing derangement
}

TEST_CASE("corrupt_switch: frozen fixture") {
  EncodedDocument doc = make_doc("g", 10);
  CorruptionConfig cfg;  // p_switch = 0.25
  Rng rng(78);
  auto cd = corrupt_switch(doc, cfg, rng);
  REQUIRE(cd.has_value());
  CHECK(cd->labels == std::vector<int>{0, 0, 1, 0, 0, 0, 0, 0, 0, 1});
  CHECK(cd->sentences[2] == doc.sentence_ids[9]);
  CHECK(cd->sentences[9] == doc.sentence_ids[2]);
}

TEST_CASE("corruption_to_json carries the inspection fields") {
  EncodedDocument doc = make_doc("jdoc", 4);
  CorruptionConfig cfg;
  cfg.p_mask = 1.0;
  Rng rng(41);
  auto cd = corrupt_mask(doc, cfg, rng);
  const std::string j = corruption_to_json(*cd);
  CHECK(j.find("\"base_id\":\"jdoc\"") != std::string::npos);
  CHECK(j.find("\"task\":\"mask\"") != std::string::npos);
  CHECK(j.find("\"masked_positions\":[0,1,2,3]") != std::string::npos);
  CHECK(j.find("\"labels\"") != std::string::npos);
  CHECK(j.find("\"pool_source_ids\"") != std::string::npos);
}

TEST_CASE("mask_score hand values") {
  CHECK(mask_score(vec2(1, 0), vec2(1, 0)) == doctest::Approx(1.0));
  CHECK(mask_score(vec2(1, 0), vec2(0, 1)) == doctest::Approx(0.0));
  CHECK(mask_score(vec2(1, 0), vec2(1, 1)) == doctest::Approx(1.0 / std::sqrt(2.0)));
  CHECK(mask_score(vec2(1, 0), vec2(-1, 0)) == doctest::Approx(-1.0));
  CHECK(mask_score(vec2(0, 0), vec2(1, 1)) == 0.0);
  VecD three(3);
  three << 1, 2, 3;
  CHECK_THROWS_WITH(mask_score(three, vec2(1, 0)), "mask_score: dimension mismatch");
}

TEST_CASE("mask_loss hand values") {
  Tape<double> tape;
  auto v = [&](double x, double y) {
    MatD m(1, 2);
    m << x, y;
    return tape.constant(m);
  };

  // Gold perfectly aligned, negative anti-aligned: hinge is inactive.
  {
    Var<double> m = v(1, 0);
    const Var<double> masked[] = {m};
    const Var<double> pool[] = {v(1, 0), v(-1, 0)};
    const int gold[] = {0};
    Var<double> loss = mask_loss<double>(tape, masked, pool, gold, 0.5);
    CHECK(loss.scalar() == doctest::Approx(0.0));
  }

  // Θ_gold = 0.8, Θ_k = 0.6, margin 0.5: hinge = 0.5 - 0.8 + 0.6 = 0.3.
  {
    const Var<double> masked[] = {v(1, 0)};
    const Var<double> pool[] = {v(0.8, 0.6), v(0.6, 0.8)};
    const int gold[] = {0};
    Var<double> loss = mask_loss<double>(tape, masked, pool, gold, 0.5);
    CHECK(loss.scalar() == doctest::Approx(0.3));
  }

  // Identical gold and negative: hinge equals the margin exactly.
  {
    const Var<double> masked[] = {v(1, 0)};
    const Var<double> pool[] = {v(1, 1), v(1, 1)};
    const int gold[] = {0};
    Var<double> loss = mask_loss<double>(tape, masked, pool, gold, 0.5);
    CHECK(loss.scalar() == doctest::Approx(0.5));
  }

  // Two negatives: hinges 0.3 and 0 average to 0.15.
  {
    const Var<double> masked[] = {v(1, 0)};
    const Var<double> pool[] = {v(0.8, 0.6), v(0.6, 0.8), v(-1, 0)};
    const int gold[] = {0};
    Var<double> loss = mask_loss<double>(tape, masked, pool, gold, 0.5);
    CHECK(loss.scalar() == doctest::Approx(0.15));
  }

  // Validation.
  {
    const Var<double> masked[] = {v(1, 0)};
    const Var<double> pool_small[] = {v(1, 0)};
    const int gold[] = {0};
    CHECK_THROWS_WITH(mask_loss<double>(tape, masked, pool_small, gold, 0.5),
                      "mask_loss: pool must have >= 2 entries");
    const Var<double> pool[] = {v(1, 0), v(0, 1)};
    const int bad_gold[] = {5};
    CHECK_THROWS_WITH(mask_loss<double>(tape, masked, pool, bad_gold, 0.5),
                      "mask_loss: gold index out of range");
  }
}

TEST_CASE("position_loss hand values") {
  Tape<double> tape;
  MatD perfect(3, 1);
  perfect << 1.0, 0.0, 1.0;
  Var<double> p = tape.constant(perfect);
  Var<double> zero = position_loss(p, {1, 0, 1}, std::vector<char>{1, 1, 1});
  CHECK(zero.scalar() == doctest::Approx(0.0));

  MatD half(1, 1);
  half << 0.5;
  Var<double> h = tape.constant(half);
  Var<double> quarter = position_loss(h, {1}, std::vector<char>{1});
  CHECK(quarter.scalar() == doctest::Approx(0.25));

  CHECK_THROWS_WITH(position_loss(h, {1, 0}, std::vector<char>{1, 1}),
                    "position_loss: label length mismatch");
  CHECK_THROWS_WITH(position_loss(h, {1}, std::vector<char>{0}),
                    "mse_masked: zero real positions");
}

TEST_CASE("build_mask_loss skips single-entry pools and scores real ones") {
  auto params = init_parameters<double>(toy_config(), 12, 51);
  Tape<double> tape;
  auto pv = register_parameters(tape, params, false);

  EncodedDocument doc = make_doc("d", 5, 3);
  CorruptionConfig cfg;
  cfg.p_mask = 0.0;  // forced minimum: pool of exactly one entry
  Rng rng(53);
  auto one = corrupt_mask(doc, cfg, rng);
  DocLoss<double> skipped = build_mask_loss(tape, pv, *one, 0.5);
  CHECK(skipped.skipped);

  cfg.p_mask = 0.6;
  std::optional<CorruptedDocument> multi;
  do {
    multi = corrupt_mask(doc, cfg, rng);
  } while (multi->pool.size() < 2);
  DocLoss<double> scored = build_mask_loss(tape, pv, *multi, 0.5);
  CHECK_FALSE(scored.skipped);
  CHECK(std::isfinite(scored.loss.scalar()));
  CHECK(scored.loss.scalar() >= 0.0);
}

TEST_CASE("build_corruption_position_loss and dispatch") {
  auto params = init_parameters<double>(toy_config(), 12, 57);
  params.switch_head.w.setZero();
  params.switch_head.b.setZero();
  Tape<double> tape;
  auto pv = register_parameters(tape, params, false);

  EncodedDocument doc = make_doc("d", 4, 3);
  CorruptionConfig cfg;
  cfg.p_switch = 0.0;
  cfg.force_minimum = false;
  Rng rng(59);
  auto identity = corrupt_switch(doc, cfg, rng);
  REQUIRE(identity.has_value());

  // Zeroed switch head emits 0 everywhere and every label is 0: exact zero loss.
  DocLoss<double> zero = build_pretrain_loss(tape, pv, *identity, 0.5);
  CHECK_FALSE(zero.skipped);
  CHECK(zero.loss.scalar() == doctest::Approx(0.0));

  cfg.p_switch = 1.0;
  cfg.force_minimum = true;
  auto sw = corrupt_switch(doc, cfg, rng);
  REQUIRE(sw.has_value());
  DocLoss<double> active = build_pretrain_loss(tape, pv, *sw, 0.5);
  // All labels are 1 and the head emits 0: MSE is exactly 1.
  CHECK(active.loss.scalar() == doctest::Approx(1.0));

  ReplacePool pool;
  pool.entries.push_back({"other", {7, 8}});
  cfg.p_replace = 1.0;
  CorruptedDocument rep = corrupt_replace(doc, pool, cfg, rng);
  DocLoss<double> rep_loss = build_pretrain_loss(tape, pv, rep, 0.5);
  CHECK_FALSE(rep_loss.skipped);
  CHECK(std::isfinite(rep_loss.loss.scalar()));
}
