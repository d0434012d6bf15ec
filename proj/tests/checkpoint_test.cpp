#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "sspext/checkpoint.hpp"

using namespace sspext;

namespace {

ModelConfig toy_config() {
  ModelConfig c;
  c.d_w = 4;
  c.d_h = 3;
  c.n_layers = 2;
  c.n_heads = 2;
  c.d_ff = 8;
  return c;
}

std::string tmp(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("sspext_ckpt_" + name)).string();
}

std::vector<char> read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

bool params_equal(const ModelParameters<float>& a, const ModelParameters<float>& b) {
  bool equal = true;
  size_t i = 0;
  std::vector<const MatF*> bt;
  b.for_each_tensor([&](const std::string&, const MatF& t) { bt.push_back(&t); });
  a.for_each_tensor([&](const std::string&, const MatF& t) {
    equal = equal && (t.rows() == bt[i]->rows()) && (t.cols() == bt[i]->cols()) &&
            (t == *bt[i]);
    ++i;
  });
  return equal && i == bt.size();
}

}  // namespace

TEST_CASE("model config survives the JSON round trip") {
  ModelConfig c = toy_config();
  c.dropout = 0.1;
  ModelConfig back = model_config_from_json(model_config_to_json(c));
  CHECK(back.d_w == c.d_w);
  CHECK(back.d_h == c.d_h);
  CHECK(back.n_layers == c.n_layers);
  CHECK(back.n_heads == c.n_heads);
  CHECK(back.d_ff == c.d_ff);
  CHECK(back.dropout == c.dropout);
}

TEST_CASE("checkpoints round-trip bit-exactly") {
  auto params = init_parameters<float>(toy_config(), 20, 123);
  nlohmann::json meta;
  meta["model"] = model_config_to_json(params.config);
  meta["phase"] = "pretrain";
  meta["task"] = "switch";
  meta["epoch"] = 7;

  const std::string path = tmp("roundtrip.bin");
  save_checkpoint(params, meta, path);
  Checkpoint loaded = load_checkpoint(path);

  CHECK(loaded.metadata["phase"] == "pretrain");
  CHECK(loaded.metadata["task"] == "switch");
  CHECK(loaded.metadata["epoch"] == 7);
  CHECK(loaded.params.config.d_h == 3);
  CHECK(loaded.params.tensor_count() == params.tensor_count());
  CHECK(params_equal(loaded.params, params));

  // Saving the loaded parameters again reproduces the identical byte stream.
  const std::string path2 = tmp("roundtrip2.bin");
  save_checkpoint(loaded.params, loaded.metadata, path2);
  CHECK(read_bytes(path) == read_bytes(path2));
}

TEST_CASE("checkpoint header starts with the magic") {
  auto params = init_parameters<float>(toy_config(), 5, 1);
  nlohmann::json meta;
  meta["model"] = model_config_to_json(params.config);
  const std::string path = tmp("magic.bin");
  save_checkpoint(params, meta, path);
  std::vector<char> bytes = read_bytes(path);
  REQUIRE(bytes.size() > 8);
  CHECK(std::string(bytes.data(), 8) == "SSPEXT01");
}

TEST_CASE("corrupted magic is rejected") {
  auto params = init_parameters<float>(toy_config(), 5, 1);
  nlohmann::json meta;
  meta["model"] = model_config_to_json(params.config);
  const std::string path = tmp("badmagic.bin");
  save_checkpoint(params, meta, path);

  std::vector<char> bytes = read_bytes(path);
  bytes[0] = 'X';
  {
    std::ofstream out(path, std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }
  CHECK_THROWS_WITH(load_checkpoint(path), "bad checkpoint magic");
}

TEST_CASE("truncated checkpoints are rejected at any cut point") {
  auto params = init_parameters<float>(toy_config(), 5, 1);
  nlohmann::json meta;
  meta["model"] = model_config_to_json(params.config);
  const std::string full = tmp("full.bin");
  save_checkpoint(params, meta, full);
  std::vector<char> bytes = read_bytes(full);

  const std::string cut = tmp("cut.bin");
  for (size_t keep : {size_t{4}, size_t{20}, bytes.size() / 2, bytes.size() - 3}) {
    {
      std::ofstream out(cut, std::ios::binary);
      out.write(bytes.data(), static_cast<std::streamsize>(keep));
    }
    CHECK_THROWS_AS(load_checkpoint(cut), std::runtime_error);
  }
}

TEST_CASE("overlay full copies every tensor") {
  auto source = init_parameters<float>(toy_config(), 20, 7);
  nlohmann::json meta;
  meta["model"] = model_config_to_json(source.config);
  const std::string path = tmp("overlay_full.bin");
  save_checkpoint(source, meta, path);
  Checkpoint ckpt = load_checkpoint(path);

  auto fresh = init_parameters<float>(toy_config(), 20, 999);
  REQUIRE_FALSE(params_equal(fresh, source));
  overlay_checkpoint(fresh, ckpt, ReuseMode::kFull);
  CHECK(params_equal(fresh, source));
}

TEST_CASE("overlay sentenc copies only the embedding and recurrent encoder") {
  auto source = init_parameters<float>(toy_config(), 20, 7);
  nlohmann::json meta;
  meta["model"] = model_config_to_json(source.config);
  const std::string path = tmp("overlay_enc.bin");
  save_checkpoint(source, meta, path);
  Checkpoint ckpt = load_checkpoint(path);

  auto fresh = init_parameters<float>(toy_config(), 20, 999);
  const auto before = fresh;
  overlay_checkpoint(fresh, ckpt, ReuseMode::kSentenceEncoderOnly);

  CHECK(fresh.embedding == source.embedding);
  CHECK(fresh.fwd.wx == source.fwd.wx);
  CHECK(fresh.fwd.wh == source.fwd.wh);
  CHECK(fresh.fwd.b == source.fwd.b);
  CHECK(fresh.bwd.wx == source.bwd.wx);
  // Attention layers and heads keep their fresh initialization.
  CHECK(fresh.layers[0].wq == before.layers[0].wq);
  CHECK(fresh.layers[1].ff_w1 == before.layers[1].ff_w1);
  CHECK(fresh.select_head.w == before.select_head.w);
  CHECK(fresh.switch_head.w == before.switch_head.w);
}

TEST_CASE("overlay none leaves the fresh parameters untouched") {
  auto source = init_parameters<float>(toy_config(), 20, 7);
  nlohmann::json meta;
  meta["model"] = model_config_to_json(source.config);
  const std::string path = tmp("overlay_none.bin");
  save_checkpoint(source, meta, path);
  Checkpoint ckpt = load_checkpoint(path);

  auto fresh = init_parameters<float>(toy_config(), 20, 999);
  const auto before = fresh;
  overlay_checkpoint(fresh, ckpt, ReuseMode::kNone);
  CHECK(params_equal(fresh, before));
}

TEST_CASE("overlay rejects shape mismatches") {
  auto source = init_parameters<float>(toy_config(), 20, 7);
  nlohmann::json meta;
  meta["model"] = model_config_to_json(source.config);
  const std::string path = tmp("overlay_shape.bin");
  save_checkpoint(source, meta, path);
  Checkpoint ckpt = load_checkpoint(path);

  auto fresh = init_parameters<float>(toy_config(), 30, 999);  // bigger vocab
  CHECK_THROWS(overlay_checkpoint(fresh, ckpt, ReuseMode::kSentenceEncoderOnly));
}

TEST_CASE("reuse mode names parse both ways") {
  CHECK(reuse_name(ReuseMode::kFull) == "full");
  CHECK(reuse_name(ReuseMode::kSentenceEncoderOnly) == "sentenc");
  CHECK(reuse_name(ReuseMode::kNone) == "none");
  CHECK(parse_reuse("full") == ReuseMode::kFull);
  CHECK(parse_reuse("sentenc") == ReuseMode::kSentenceEncoderOnly);
  CHECK(parse_reuse("none") == ReuseMode::kNone);
  CHECK_THROWS(parse_reuse("everything"));
}
