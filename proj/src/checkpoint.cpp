#include "sspext/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>
#include <vector>

namespace sspext {

namespace {

void write_u32(std::ostream& out, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t read_u32(std::istream& in) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw std::runtime_error("truncated checkpoint");
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

void write_f32(std::ostream& out, float v) {
  uint32_t bits;
  std::memcpy(&bits, &v, 4);
  write_u32(out, bits);
}

float read_f32(std::istream& in) {
  uint32_t bits = read_u32(in);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

}  // namespace

nlohmann::json model_config_to_json(const ModelConfig& config) {
  return {{"d_w", config.d_w},           {"d_h", config.d_h},   {"n_layers", config.n_layers},
          {"n_heads", config.n_heads},   {"d_ff", config.d_ff}, {"dropout", config.dropout}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.d_w = j.at("d_w").get<int>();
  c.d_h = j.at("d_h").get<int>();
  c.n_layers = j.at("n_layers").get<int>();
  c.n_heads = j.at("n_heads").get<int>();
  c.d_ff = j.at("d_ff").get<int>();
  c.dropout = j.at("dropout").get<double>();
  c.validate();
  return c;
}

void save_checkpoint(const ModelParameters<float>& params, const nlohmann::json& metadata,
                     const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("could not open checkpoint for writing: " + path);
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));

  nlohmann::json meta = metadata;
  meta["model"] = model_config_to_json(params.config);
  const std::string meta_str = meta.dump();
  write_u32(out, static_cast<uint32_t>(meta_str.size()));
  out.write(meta_str.data(), static_cast<std::streamsize>(meta_str.size()));

  write_u32(out, static_cast<uint32_t>(params.tensor_count()));
  params.for_each_tensor([&out](const std::string& name, const MatF& t) {
    write_u32(out, static_cast<uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u32(out, 2);
    write_u32(out, static_cast<uint32_t>(t.rows()));
    write_u32(out, static_cast<uint32_t>(t.cols()));
    for (Eigen::Index r = 0; r < t.rows(); ++r)
      for (Eigen::Index c = 0; c < t.cols(); ++c) write_f32(out, t(r, c));
  });
  if (!out) throw std::runtime_error("failed writing checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("could not open checkpoint: " + path);
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw std::runtime_error("bad checkpoint magic");

  const uint32_t meta_len = read_u32(in);
  std::string meta_str(meta_len, '\0');
  if (!in.read(meta_str.data(), meta_len)) throw std::runtime_error("truncated checkpoint");
  nlohmann::json metadata;
  try {
    metadata = nlohmann::json::parse(meta_str);
  } catch (const nlohmann::json::parse_error&) {
    throw std::runtime_error("bad checkpoint metadata");
  }

  std::map<std::string, MatF> tensors;
  const uint32_t count = read_u32(in);
  for (uint32_t i = 0; i < count; ++i) {
    const uint32_t name_len = read_u32(in);
    std::string name(name_len, '\0');
    if (!in.read(name.data(), name_len)) throw std::runtime_error("truncated checkpoint");
    const uint32_t rank = read_u32(in);
    if (rank != 2) throw std::runtime_error("bad checkpoint tensor rank");
    const uint32_t rows = read_u32(in);
    const uint32_t cols = read_u32(in);
    MatF t(rows, cols);
    for (uint32_t r = 0; r < rows; ++r)
      for (uint32_t c = 0; c < cols; ++c) t(r, c) = read_f32(in);
    tensors.emplace(std::move(name), std::move(t));
  }

  Checkpoint ckpt;
  ckpt.metadata = metadata;
  ModelConfig config = model_config_from_json(metadata.at("model"));
  auto emb = tensors.find("embedding");
  if (emb == tensors.end()) throw std::runtime_error("checkpoint missing embedding tensor");
  ckpt.params.config = config;
  model_detail::allocate(ckpt.params, static_cast<int>(emb->second.rows()));

  size_t used = 0;
  ckpt.params.for_each_tensor([&tensors, &used](const std::string& name, MatF& t) {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw std::runtime_error("checkpoint missing tensor: " + name);
    if (it->second.rows() != t.rows() || it->second.cols() != t.cols())
      throw std::runtime_error("checkpoint tensor shape mismatch: " + name);
    t = it->second;
    ++used;
  });
  if (used != tensors.size()) throw std::runtime_error("checkpoint has unexpected extra tensors");
  return ckpt;
}

std::string reuse_name(ReuseMode mode) {
  switch (mode) {
    case ReuseMode::kFull: return "full";
    case ReuseMode::kSentenceEncoderOnly: return "sentenc";
    case ReuseMode::kNone: return "none";
  }
  throw std::logic_error("reuse_name: unknown mode");
}

ReuseMode parse_reuse(const std::string& name) {
  if (name == "full") return ReuseMode::kFull;
  if (name == "sentenc") return ReuseMode::kSentenceEncoderOnly;
  if (name == "none") return ReuseMode::kNone;
  throw std::invalid_argument("unknown reuse mode: " + name);
}

void overlay_checkpoint(ModelParameters<float>& params, const Checkpoint& ckpt, ReuseMode mode) {
  if (mode == ReuseMode::kNone) return;
  std::map<std::string, const MatF*> source;
  ckpt.params.for_each_tensor(
      [&source](const std::string& name, const MatF& t) { source.emplace(name, &t); });
  params.for_each_tensor([&source, mode](const std::string& name, MatF& t) {
    const bool encoder_tensor =
        name == "embedding" || name.rfind("sent_enc.", 0) == 0;
    if (mode == ReuseMode::kSentenceEncoderOnly && !encoder_tensor) return;
    auto it = source.find(name);
    if (it == source.end()) throw std::runtime_error("checkpoint missing tensor: " + name);
    if (it->second->rows() != t.rows() || it->second->cols() != t.cols())
      throw std::runtime_error("checkpoint tensor shape mismatch: " + name);
    t = *it->second;
  });
}

}  // namespace sspext
