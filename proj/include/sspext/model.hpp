#pragma once

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "sspext/corpus.hpp"
#include "sspext/graph.hpp"
#include "sspext/types.hpp"

namespace sspext {

struct ModelConfig {
  int d_w = 100;      // word embedding width
  int d_h = 200;      // recurrent hidden size per direction
  int n_layers = 5;   // self-attention depth
  int n_heads = 4;
  int d_ff = 1024;    // feed-forward width
  double dropout = 0.0;

  int d_m() const { return 2 * d_h; }  // sentence width = concat of both directions

  void validate() const {
    if (d_w < 1 || d_h < 1 || n_layers < 1 || n_heads < 1 || d_ff < 1)
      throw std::invalid_argument("model config: dimensions must be positive");
    if (d_m() % n_heads != 0)
      throw std::invalid_argument("model config: d_m must be divisible by n_heads");
    if (dropout < 0.0 || dropout >= 1.0)
      throw std::invalid_argument("model config: dropout must be in [0,1)");
  }
};

template <typename S>
struct LstmWeights {
  Mat<S> wx;  // d_w x 4*d_h, gate order [input, forget, output, candidate]
  Mat<S> wh;  // d_h x 4*d_h
  Mat<S> b;   // 1 x 4*d_h
};

template <typename S>
struct AttentionLayer {
  Mat<S> wq, bq, wk, bk, wv, bv, wo, bo;  // projections d_m x d_m, biases 1 x d_m
  Mat<S> ln1_g, ln1_b;                    // post-attention layer norm
  Mat<S> ff_w1, ff_b1, ff_w2, ff_b2;      // d_m x d_ff, 1 x d_ff, d_ff x d_m, 1 x d_m
  Mat<S> ln2_g, ln2_b;                    // post-feed-forward layer norm
};

template <typename S>
struct AffineHead {
  Mat<S> w;  // d_m x 1
  Mat<S> b;  // 1 x 1
};

template <typename S>
struct ModelParameters {
  ModelConfig config;
  Mat<S> embedding;  // |V| x d_w
  LstmWeights<S> fwd, bwd;
  std::vector<AttentionLayer<S>> layers;
  AffineHead<S> select_head, replace_head, switch_head;

  // Visit every tensor with a stable name, in a fixed order shared by
  // initialization, checkpointing, and gradient bookkeeping.
  template <typename Fn>
  void for_each_tensor(Fn&& fn) {
    fn("embedding", embedding);
    fn("sent_enc.fwd.wx", fwd.wx);
    fn("sent_enc.fwd.wh", fwd.wh);
    fn("sent_enc.fwd.b", fwd.b);
    fn("sent_enc.bwd.wx", bwd.wx);
    fn("sent_enc.bwd.wh", bwd.wh);
    fn("sent_enc.bwd.b", bwd.b);
    for (size_t i = 0; i < layers.size(); ++i) {
      const std::string p = "attn." + std::to_string(i) + ".";
      auto& l = layers[i];
      fn(p + "wq", l.wq);
      fn(p + "bq", l.bq);
      fn(p + "wk", l.wk);
      fn(p + "bk", l.bk);
      fn(p + "wv", l.wv);
      fn(p + "bv", l.bv);
      fn(p + "wo", l.wo);
      fn(p + "bo", l.bo);
      fn(p + "ln1_g", l.ln1_g);
      fn(p + "ln1_b", l.ln1_b);
      fn(p + "ff_w1", l.ff_w1);
      fn(p + "ff_b1", l.ff_b1);
      fn(p + "ff_w2", l.ff_w2);
      fn(p + "ff_b2", l.ff_b2);
      fn(p + "ln2_g", l.ln2_g);
      fn(p + "ln2_b", l.ln2_b);
    }
    fn("head.select.w", select_head.w);
    fn("head.select.b", select_head.b);
    fn("head.replace.w", replace_head.w);
    fn("head.replace.b", replace_head.b);
    fn("head.switch.w", switch_head.w);
    fn("head.switch.b", switch_head.b);
  }

  template <typename Fn>
  void for_each_tensor(Fn&& fn) const {
    const_cast<ModelParameters*>(this)->for_each_tensor(
        [&fn](const std::string& name, Mat<S>& t) { fn(name, static_cast<const Mat<S>&>(t)); });
  }

  size_t tensor_count() const {
    size_t n = 0;
    for_each_tensor([&n](const std::string&, const Mat<S>&) { ++n; });
    return n;
  }

  bool all_finite() const {
    bool ok = true;
    for_each_tensor([&ok](const std::string&, const Mat<S>& t) { ok = ok && t.allFinite(); });
    return ok;
  }
};

namespace model_detail {

template <typename S>
void allocate(ModelParameters<S>& p, int vocab_size) {
  const ModelConfig& c = p.config;
  const int dm = c.d_m();
  p.embedding.resize(vocab_size, c.d_w);
  for (auto* dir : {&p.fwd, &p.bwd}) {
    dir->wx.resize(c.d_w, 4 * c.d_h);
    dir->wh.resize(c.d_h, 4 * c.d_h);
    dir->b.resize(1, 4 * c.d_h);
  }
  p.layers.resize(c.n_layers);
  for (auto& l : p.layers) {
    l.wq.resize(dm, dm);   l.bq.resize(1, dm);
    l.wk.resize(dm, dm);   l.bk.resize(1, dm);
    l.wv.resize(dm, dm);   l.bv.resize(1, dm);
    l.wo.resize(dm, dm);   l.bo.resize(1, dm);
    l.ln1_g.resize(1, dm); l.ln1_b.resize(1, dm);
    l.ff_w1.resize(dm, c.d_ff);  l.ff_b1.resize(1, c.d_ff);
    l.ff_w2.resize(c.d_ff, dm); l.ff_b2.resize(1, dm);
    l.ln2_g.resize(1, dm); l.ln2_b.resize(1, dm);
  }
  for (auto* h : {&p.select_head, &p.replace_head, &p.switch_head}) {
    h->w.resize(dm, 1);
    h->b.resize(1, 1);
  }
}

template <typename S>
void fill_uniform(Mat<S>& t, double a, Rng& rng) {
  for (Eigen::Index r = 0; r < t.rows(); ++r)
    for (Eigen::Index c = 0; c < t.cols(); ++c)
      t(r, c) = static_cast<S>(rng.uniform(-a, a));
}

inline bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace model_detail

// Deterministic initialization: embeddings uniform in [-0.1, 0.1], weight
// matrices uniform in [-a, a] with a = sqrt(6 / (fan_in + fan_out)), biases
// zero, layer-norm gains one. Fill order follows for_each_tensor.
template <typename S>
ModelParameters<S> init_parameters(const ModelConfig& config, int vocab_size, uint64_t seed) {
  config.validate();
  if (vocab_size < 1) throw std::invalid_argument("init_parameters: vocab_size must be positive");
  ModelParameters<S> p;
  p.config = config;
  model_detail::allocate(p, vocab_size);
  Rng rng(seed);
  p.for_each_tensor([&rng](const std::string& name, Mat<S>& t) {
    if (name == "embedding") {
      model_detail::fill_uniform(t, 0.1, rng);
    } else if (model_detail::ends_with(name, "_g")) {
      t.setOnes();  // layer-norm gains
    } else if (t.rows() == 1) {
      t.setZero();  // biases and layer-norm offsets are the only row vectors
    } else {
      const double a = std::sqrt(6.0 / static_cast<double>(t.rows() + t.cols()));
      model_detail::fill_uniform(t, a, rng);
    }
  });
  return p;
}

// ---- pre-trained word vectors ----------------------------------------------

struct WordVectors {
  int dim = 0;
  std::unordered_map<std::string, std::vector<double>> vectors;
};

// Text format: one "token v1 ... vd" entry per line.
inline WordVectors load_word_vectors(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("could not open word vector file: " + path);
  WordVectors wv;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string token;
    ss >> token;
    std::vector<double> vec;
    double v;
    while (ss >> v) vec.push_back(v);
    if (vec.empty()) continue;
    if (wv.dim == 0) wv.dim = static_cast<int>(vec.size());
    if (static_cast<int>(vec.size()) != wv.dim)
      throw std::runtime_error("word vector file has inconsistent dimensions");
    wv.vectors.emplace(std::move(token), std::move(vec));
  }
  return wv;
}

template <typename S>
void apply_word_vectors(ModelParameters<S>& params, const Vocabulary& vocab,
                        const WordVectors& wv) {
  if (wv.dim != params.config.d_w)
    throw std::runtime_error("word vector dimension mismatch: file has " +
                             std::to_string(wv.dim) + ", model expects " +
                             std::to_string(params.config.d_w));
  for (int id = 0; id < static_cast<int>(vocab.size()); ++id) {
    auto it = wv.vectors.find(vocab.id_to_token[id]);
    if (it == wv.vectors.end()) continue;
    for (int c = 0; c < wv.dim; ++c) params.embedding(id, c) = static_cast<S>(it->second[c]);
  }
}

// ---- tape registration -------------------------------------------------------

template <typename S>
struct LstmVars {
  Var<S> wx, wh, b;
};

template <typename S>
struct AttentionLayerVars {
  Var<S> wq, bq, wk, bk, wv, bv, wo, bo;
  Var<S> ln1_g, ln1_b;
  Var<S> ff_w1, ff_b1, ff_w2, ff_b2;
  Var<S> ln2_g, ln2_b;
};

template <typename S>
struct AffineHeadVars {
  Var<S> w, b;
};

template <typename S>
struct ParameterVars {
  ModelConfig config;
  Var<S> embedding;
  LstmVars<S> fwd, bwd;
  std::vector<AttentionLayerVars<S>> layers;
  AffineHeadVars<S> select_head, replace_head, switch_head;
  std::vector<int> tensor_ids;  // node ids in for_each_tensor order
};

// Push every parameter tensor onto the tape (trainable => leaf). tensor_ids
// lets callers read gradients back in the canonical order.
template <typename S>
ParameterVars<S> register_parameters(Tape<S>& tape, const ModelParameters<S>& params,
                                     bool trainable) {
  ParameterVars<S> pv;
  pv.config = params.config;
  pv.layers.resize(params.layers.size());
  std::unordered_map<std::string, Var<S>> by_name;
  params.for_each_tensor([&](const std::string& name, const Mat<S>& t) {
    Var<S> v = trainable ? tape.leaf(t) : tape.constant(t);
    pv.tensor_ids.push_back(v.id);
    by_name.emplace(name, v);
  });
  pv.embedding = by_name.at("embedding");
  pv.fwd = {by_name.at("sent_enc.fwd.wx"), by_name.at("sent_enc.fwd.wh"),
            by_name.at("sent_enc.fwd.b")};
  pv.bwd = {by_name.at("sent_enc.bwd.wx"), by_name.at("sent_enc.bwd.wh"),
            by_name.at("sent_enc.bwd.b")};
  for (size_t i = 0; i < pv.layers.size(); ++i) {
    const std::string p = "attn." + std::to_string(i) + ".";
    auto& l = pv.layers[i];
    l.wq = by_name.at(p + "wq");       l.bq = by_name.at(p + "bq");
    l.wk = by_name.at(p + "wk");       l.bk = by_name.at(p + "bk");
    l.wv = by_name.at(p + "wv");       l.bv = by_name.at(p + "bv");
    l.wo = by_name.at(p + "wo");       l.bo = by_name.at(p + "bo");
    l.ln1_g = by_name.at(p + "ln1_g"); l.ln1_b = by_name.at(p + "ln1_b");
    l.ff_w1 = by_name.at(p + "ff_w1"); l.ff_b1 = by_name.at(p + "ff_b1");
    l.ff_w2 = by_name.at(p + "ff_w2"); l.ff_b2 = by_name.at(p + "ff_b2");
    l.ln2_g = by_name.at(p + "ln2_g"); l.ln2_b = by_name.at(p + "ln2_b");
  }
  pv.select_head = {by_name.at("head.select.w"), by_name.at("head.select.b")};
  pv.replace_head = {by_name.at("head.replace.w"), by_name.at("head.replace.b")};
  pv.switch_head = {by_name.at("head.switch.w"), by_name.at("head.switch.b")};
  return pv;
}

// ---- forward pass ------------------------------------------------------------

// S_i: last forward state ++ last backward state of a bidirectional pass.
template <typename S>
Var<S> encode_sentence(Tape<S>& tape, const ParameterVars<S>& pv, const std::vector<int>& ids) {
  if (ids.empty()) throw std::invalid_argument("encode_sentence: empty sentence");
  Var<S> x = embed_rows(pv.embedding, ids);
  Var<S> hf = lstm_last_state(x, pv.fwd.wx, pv.fwd.wh, pv.fwd.b);
  Var<S> hb = lstm_last_state(reverse_rows(x), pv.bwd.wx, pv.bwd.wh, pv.bwd.b);
  return concat_cols(hf, hb);  // 1 x d_m
}

template <typename S>
Var<S> encode_sentences(Tape<S>& tape, const ParameterVars<S>& pv,
                        const std::vector<std::vector<int>>& sentences) {
  if (sentences.empty()) throw std::invalid_argument("encode_sentences: empty document");
  std::vector<Var<S>> rows;
  rows.reserve(sentences.size());
  for (const auto& s : sentences) rows.push_back(encode_sentence(tape, pv, s));
  return concat_rows(std::span<const Var<S>>(rows.data(), rows.size()));  // n x d_m
}

template <typename S>
Mat<S> sinusoidal_positions(Eigen::Index n, Eigen::Index d) {
  Mat<S> pe(n, d);
  for (Eigen::Index pos = 0; pos < n; ++pos) {
    for (Eigen::Index i = 0; i < d; i += 2) {
      const double angle = static_cast<double>(pos) /
                           std::pow(10000.0, static_cast<double>(i) / static_cast<double>(d));
      pe(pos, i) = static_cast<S>(std::sin(angle));
      if (i + 1 < d) pe(pos, i + 1) = static_cast<S>(std::cos(angle));
    }
  }
  return pe;
}

// Per-layer attention weights for tests and diagnostics: one n x n matrix per
// head per layer, rows = query positions.
template <typename S>
struct AttentionTrace {
  std::vector<std::vector<Mat<S>>> layers;
};

// D_i: sinusoidal positions added, then n_layers of post-LN multi-head
// self-attention with padded positions excluded from the attention weights.
template <typename S>
Var<S> contextualize(Tape<S>& tape, const ParameterVars<S>& pv, Var<S> sent_reprs,
                     std::vector<char> real_mask, Rng* dropout_rng = nullptr,
                     AttentionTrace<S>* trace = nullptr) {
  const Eigen::Index n = sent_reprs.rows();
  const int dm = pv.config.d_m();
  if (sent_reprs.cols() != dm) throw std::invalid_argument("contextualize: width must be d_m");
  if (static_cast<Eigen::Index>(real_mask.size()) != n)
    throw std::invalid_argument("contextualize: mask length mismatch");
  bool any_real = false;
  for (char c : real_mask) any_real |= (c != 0);
  if (!any_real) throw std::invalid_argument("contextualize: all positions padded");

  const int heads = pv.config.n_heads;
  const int dk = dm / heads;
  const S inv_sqrt_dk = S(1) / static_cast<S>(std::sqrt(static_cast<double>(dk)));
  const S rate = static_cast<S>(pv.config.dropout);

  Var<S> h = add(sent_reprs, tape.constant(sinusoidal_positions<S>(n, dm)));
  if (trace) trace->layers.assign(pv.layers.size(), {});

  for (size_t li = 0; li < pv.layers.size(); ++li) {
    const auto& l = pv.layers[li];
    Var<S> q = add_rowwise(matmul(h, l.wq), l.bq);
    Var<S> k = add_rowwise(matmul(h, l.wk), l.bk);
    Var<S> v = add_rowwise(matmul(h, l.wv), l.bv);
    std::vector<Var<S>> head_outs;
    head_outs.reserve(heads);
    for (int hd = 0; hd < heads; ++hd) {
      Var<S> qh = slice_cols(q, hd * dk, dk);
      Var<S> kh = slice_cols(k, hd * dk, dk);
      Var<S> vh = slice_cols(v, hd * dk, dk);
      Var<S> scores = scale(matmul(qh, transpose(kh)), inv_sqrt_dk);
      Var<S> attn = masked_softmax_rows(scores, real_mask);
      if (trace) trace->layers[li].push_back(attn.value());
      head_outs.push_back(matmul(attn, vh));
    }
    Var<S> cat = concat_cols(std::span<const Var<S>>(head_outs.data(), head_outs.size()));
    Var<S> attn_out = add_rowwise(matmul(cat, l.wo), l.bo);
    if (dropout_rng && rate > S(0)) attn_out = dropout(attn_out, rate, *dropout_rng);
    h = layer_norm_rows(add(h, attn_out), l.ln1_g, l.ln1_b);

    Var<S> ff = add_rowwise(matmul(relu(add_rowwise(matmul(h, l.ff_w1), l.ff_b1)), l.ff_w2),
                            l.ff_b2);
    if (dropout_rng && rate > S(0)) ff = dropout(ff, rate, *dropout_rng);
    h = layer_norm_rows(add(h, ff), l.ln2_g, l.ln2_b);
  }
  return h;
}

enum class HeadKind { kSelect, kReplace, kSwitch };

// Affine head over every row of D; the selection head applies a logistic
// activation, replace/switch stay raw for the MSE objectives.
template <typename S>
Var<S> head_scores(Tape<S>& tape, const ParameterVars<S>& pv, Var<S> contextual, HeadKind kind) {
  const AffineHeadVars<S>& head = kind == HeadKind::kSelect    ? pv.select_head
                                  : kind == HeadKind::kReplace ? pv.replace_head
                                                               : pv.switch_head;
  Var<S> raw = add_rowwise(matmul(contextual, head.w), head.b);
  return kind == HeadKind::kSelect ? sigmoid(raw) : raw;
}

// Convenience: full inference producing selection probabilities for one doc.
template <typename S>
Vec<S> selection_probabilities(const ModelParameters<S>& params,
                               const std::vector<std::vector<int>>& sentences) {
  Tape<S> tape;
  ParameterVars<S> pv = register_parameters(tape, params, /*trainable=*/false);
  Var<S> s = encode_sentences(tape, pv, sentences);
  Var<S> d = contextualize(tape, pv, s, std::vector<char>(sentences.size(), 1));
  Var<S> probs = head_scores(tape, pv, d, HeadKind::kSelect);
  return probs.value().col(0);
}

}  // namespace sspext
