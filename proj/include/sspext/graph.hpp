#pragma once

#include <cmath>
#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

#include "sspext/types.hpp"

namespace sspext {

// Reverse-mode tape over dense Eigen matrices. Nodes are created in forward
// order; backward() replays registered closures in reverse. Values live on the
// tape, so closures only capture node ids and cached forward state.
template <typename Scalar>
class Tape;

template <typename Scalar>
struct Var {
  Tape<Scalar>* tape = nullptr;
  int id = -1;

  bool valid() const { return tape != nullptr && id >= 0; }
  const Mat<Scalar>& value() const { return tape->node(id).value; }
  const Mat<Scalar>& grad() const { return tape->node(id).grad; }
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  Scalar scalar() const { return value()(0, 0); }
  bool requires_grad() const { return tape->node(id).requires_grad; }
};

template <typename Scalar>
class Tape {
 public:
  struct Node {
    Mat<Scalar> value;
    Mat<Scalar> grad;
    bool requires_grad = false;
    std::function<void(Tape&, const Mat<Scalar>&)> backprop;  // empty for leaves
  };

  Var<Scalar> leaf(Mat<Scalar> value) { return push(std::move(value), true); }

  Var<Scalar> constant(Mat<Scalar> value) { return push(std::move(value), false); }

  Var<Scalar> constant_scalar(Scalar v) {
    Mat<Scalar> m(1, 1);
    m(0, 0) = v;
    return constant(std::move(m));
  }

  Var<Scalar> push(Mat<Scalar> value, bool requires_grad) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return {this, static_cast<int>(nodes_.size()) - 1};
  }

  Node& node(int id) { return nodes_[id]; }
  const Node& node(int id) const { return nodes_[id]; }
  size_t size() const { return nodes_.size(); }

  // Accumulate into a node's gradient, sizing it on first touch.
  void accumulate(int id, const Mat<Scalar>& g) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0) n.grad = Mat<Scalar>::Zero(n.value.rows(), n.value.cols());
    n.grad += g;
  }

  void backward(Var<Scalar> root) {
    if (root.tape != this) throw std::invalid_argument("backward: root from another tape");
    if (root.value().rows() != 1 || root.value().cols() != 1)
      throw std::invalid_argument("backward: root must be a scalar node");
    for (auto& n : nodes_) n.grad.resize(0, 0);
    Mat<Scalar> one(1, 1);
    one(0, 0) = Scalar(1);
    accumulate(root.id, one);
    for (int i = root.id; i >= 0; --i) {
      Node& n = nodes_[i];
      if (n.backprop && n.requires_grad && n.grad.size() != 0) n.backprop(*this, n.grad);
    }
  }

  void clear() { nodes_.clear(); }

 private:
  std::vector<Node> nodes_;
};

namespace graph_detail {

template <typename Scalar>
bool any_grad(std::initializer_list<Var<Scalar>> vars) {
  for (const auto& v : vars)
    if (v.requires_grad()) return true;
  return false;
}

// Push an op node; `back(tape, upstream_grad)` distributes the gradient.
template <typename S, typename Back>
Var<S> make_op(Tape<S>& t, Mat<S> value, bool rg, Back&& back) {
  Var<S> out = t.push(std::move(value), rg);
  if (rg) t.node(out.id).backprop = std::forward<Back>(back);
  return out;
}

}  // namespace graph_detail

// ---- linear algebra --------------------------------------------------------

template <typename S>
Var<S> matmul(Var<S> a, Var<S> b) {
  Tape<S>& t = *a.tape;
  if (a.cols() != b.rows()) throw std::invalid_argument("matmul: inner dimension mismatch");
  bool rg = graph_detail::any_grad<S>({a, b});
  int ai = a.id, bi = b.id;
  return graph_detail::make_op(
      t, Mat<S>(a.value() * b.value()), rg, [ai, bi](Tape<S>& tp, const Mat<S>& g) {
        if (tp.node(ai).requires_grad) tp.accumulate(ai, g * tp.node(bi).value.transpose());
        if (tp.node(bi).requires_grad) tp.accumulate(bi, tp.node(ai).value.transpose() * g);
      });
}

template <typename S>
Var<S> transpose(Var<S> a) {
  Tape<S>& t = *a.tape;
  int ai = a.id;
  return graph_detail::make_op(t, Mat<S>(a.value().transpose()), a.requires_grad(),
                               [ai](Tape<S>& tp, const Mat<S>& g) {
                                 tp.accumulate(ai, g.transpose());
                               });
}

template <typename S>
Var<S> add(Var<S> a, Var<S> b) {
  Tape<S>& t = *a.tape;
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw std::invalid_argument("add: shape mismatch");
  bool rg = graph_detail::any_grad<S>({a, b});
  int ai = a.id, bi = b.id;
  return graph_detail::make_op(t, Mat<S>(a.value() + b.value()), rg,
                               [ai, bi](Tape<S>& tp, const Mat<S>& g) {
                                 tp.accumulate(ai, g);
                                 tp.accumulate(bi, g);
                               });
}

template <typename S>
Var<S> sub(Var<S> a, Var<S> b) {
  Tape<S>& t = *a.tape;
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw std::invalid_argument("sub: shape mismatch");
  bool rg = graph_detail::any_grad<S>({a, b});
  int ai = a.id, bi = b.id;
  return graph_detail::make_op(t, Mat<S>(a.value() - b.value()), rg,
                               [ai, bi](Tape<S>& tp, const Mat<S>& g) {
                                 tp.accumulate(ai, g);
                                 tp.accumulate(bi, Mat<S>(-g));
                               });
}

// Add a 1 x d row vector to every row.
template <typename S>
Var<S> add_rowwise(Var<S> a, Var<S> bias) {
  Tape<S>& t = *a.tape;
  if (bias.rows() != 1 || bias.cols() != a.cols())
    throw std::invalid_argument("add_rowwise: bias must be 1 x cols");
  bool rg = graph_detail::any_grad<S>({a, bias});
  int ai = a.id, bi = bias.id;
  Mat<S> value = a.value();
  value.rowwise() += bias.value().row(0);
  return graph_detail::make_op(t, std::move(value), rg, [ai, bi](Tape<S>& tp, const Mat<S>& g) {
    tp.accumulate(ai, g);
    if (tp.node(bi).requires_grad) tp.accumulate(bi, Mat<S>(g.colwise().sum()));
  });
}

template <typename S>
Var<S> cmul(Var<S> a, Var<S> b) {
  Tape<S>& t = *a.tape;
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw std::invalid_argument("cmul: shape mismatch");
  bool rg = graph_detail::any_grad<S>({a, b});
  int ai = a.id, bi = b.id;
  return graph_detail::make_op(
      t, Mat<S>(a.value().cwiseProduct(b.value())), rg, [ai, bi](Tape<S>& tp, const Mat<S>& g) {
        if (tp.node(ai).requires_grad) tp.accumulate(ai, g.cwiseProduct(tp.node(bi).value));
        if (tp.node(bi).requires_grad) tp.accumulate(bi, g.cwiseProduct(tp.node(ai).value));
      });
}

template <typename S>
Var<S> scale(Var<S> a, S c) {
  Tape<S>& t = *a.tape;
  int ai = a.id;
  return graph_detail::make_op(t, Mat<S>(a.value() * c), a.requires_grad(),
                               [ai, c](Tape<S>& tp, const Mat<S>& g) {
                                 tp.accumulate(ai, Mat<S>(g * c));
                               });
}

template <typename S>
Var<S> add_scalar(Var<S> a, S c) {
  Tape<S>& t = *a.tape;
  int ai = a.id;
  return graph_detail::make_op(t, Mat<S>((a.value().array() + c).matrix()), a.requires_grad(),
                               [ai](Tape<S>& tp, const Mat<S>& g) { tp.accumulate(ai, g); });
}

// ---- activations -----------------------------------------------------------

template <typename S>
Var<S> sigmoid(Var<S> a) {
  Tape<S>& t = *a.tape;
  Mat<S> y = a.value().unaryExpr([](S x) {
    return x >= S(0) ? S(1) / (S(1) + std::exp(-x))
                     : std::exp(x) / (S(1) + std::exp(x));
  });
  int ai = a.id;
  Var<S> out = graph_detail::make_op(t, std::move(y), a.requires_grad(), nullptr);
  if (a.requires_grad()) {
    int oi = out.id;
    t.node(oi).backprop = [ai, oi](Tape<S>& tp, const Mat<S>& g) {
      const Mat<S>& y = tp.node(oi).value;
      tp.accumulate(ai, Mat<S>((g.array() * y.array() * (S(1) - y.array())).matrix()));
    };
  }
  return out;
}

template <typename S>
Var<S> tanh_act(Var<S> a) {
  Tape<S>& t = *a.tape;
  Mat<S> y = a.value().array().tanh().matrix();
  int ai = a.id;
  Var<S> out = graph_detail::make_op(t, std::move(y), a.requires_grad(), nullptr);
  if (a.requires_grad()) {
    int oi = out.id;
    t.node(oi).backprop = [ai, oi](Tape<S>& tp, const Mat<S>& g) {
      const Mat<S>& y = tp.node(oi).value;
      tp.accumulate(ai, Mat<S>((g.array() * (S(1) - y.array().square())).matrix()));
    };
  }
  return out;
}

template <typename S>
Var<S> relu(Var<S> a) {
  Tape<S>& t = *a.tape;
  int ai = a.id;
  return graph_detail::make_op(t, Mat<S>(a.value().cwiseMax(S(0))), a.requires_grad(),
                               [ai](Tape<S>& tp, const Mat<S>& g) {
                                 const Mat<S>& x = tp.node(ai).value;
                                 Mat<S> gx = (x.array() > S(0)).select(g, Mat<S>::Zero(g.rows(), g.cols()));
                                 tp.accumulate(ai, gx);
                               });
}

// ---- shape ops --------------------------------------------------------------

template <typename S>
Var<S> concat_rows(std::span<const Var<S>> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no parts");
  Tape<S>& t = *parts[0].tape;
  Eigen::Index cols = parts[0].cols(), rows = 0;
  bool rg = false;
  for (const auto& p : parts) {
    if (p.cols() != cols) throw std::invalid_argument("concat_rows: column mismatch");
    rows += p.rows();
    rg = rg || p.requires_grad();
  }
  Mat<S> value(rows, cols);
  std::vector<int> ids;
  std::vector<Eigen::Index> offsets;
  Eigen::Index r = 0;
  for (const auto& p : parts) {
    value.middleRows(r, p.rows()) = p.value();
    ids.push_back(p.id);
    offsets.push_back(r);
    r += p.rows();
  }
  return graph_detail::make_op(t, std::move(value), rg,
                               [ids, offsets](Tape<S>& tp, const Mat<S>& g) {
                                 for (size_t k = 0; k < ids.size(); ++k) {
                                   Eigen::Index n = tp.node(ids[k]).value.rows();
                                   tp.accumulate(ids[k], Mat<S>(g.middleRows(offsets[k], n)));
                                 }
                               });
}

template <typename S>
Var<S> concat_cols(std::span<const Var<S>> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no parts");
  Tape<S>& t = *parts[0].tape;
  Eigen::Index rows = parts[0].rows(), cols = 0;
  bool rg = false;
  for (const auto& p : parts) {
    if (p.rows() != rows) throw std::invalid_argument("concat_cols: row mismatch");
    cols += p.cols();
    rg = rg || p.requires_grad();
  }
  Mat<S> value(rows, cols);
  std::vector<int> ids;
  std::vector<Eigen::Index> offsets;
  Eigen::Index c = 0;
  for (const auto& p : parts) {
    value.middleCols(c, p.cols()) = p.value();
    ids.push_back(p.id);
    offsets.push_back(c);
    c += p.cols();
  }
  return graph_detail::make_op(t, std::move(value), rg,
                               [ids, offsets](Tape<S>& tp, const Mat<S>& g) {
                                 for (size_t k = 0; k < ids.size(); ++k) {
                                   Eigen::Index n = tp.node(ids[k]).value.cols();
                                   tp.accumulate(ids[k], Mat<S>(g.middleCols(offsets[k], n)));
                                 }
                               });
}

template <typename S>
Var<S> concat_cols(Var<S> a, Var<S> b) {
  const Var<S> parts[] = {a, b};
  return concat_cols(std::span<const Var<S>>(parts, 2));
}

template <typename S>
Var<S> slice_rows(Var<S> a, Eigen::Index start, Eigen::Index n) {
  Tape<S>& t = *a.tape;
  if (start < 0 || n < 1 || start + n > a.rows())
    throw std::invalid_argument("slice_rows: out of range");
  int ai = a.id;
  return graph_detail::make_op(t, Mat<S>(a.value().middleRows(start, n)), a.requires_grad(),
                               [ai, start, n](Tape<S>& tp, const Mat<S>& g) {
                                 auto& node = tp.node(ai);
                                 if (!node.requires_grad) return;
                                 if (node.grad.size() == 0)
                                   node.grad = Mat<S>::Zero(node.value.rows(), node.value.cols());
                                 node.grad.middleRows(start, n) += g;
                               });
}

template <typename S>
Var<S> slice_cols(Var<S> a, Eigen::Index start, Eigen::Index n) {
  Tape<S>& t = *a.tape;
  if (start < 0 || n < 1 || start + n > a.cols())
    throw std::invalid_argument("slice_cols: out of range");
  int ai = a.id;
  return graph_detail::make_op(t, Mat<S>(a.value().middleCols(start, n)), a.requires_grad(),
                               [ai, start, n](Tape<S>& tp, const Mat<S>& g) {
                                 auto& node = tp.node(ai);
                                 if (!node.requires_grad) return;
                                 if (node.grad.size() == 0)
                                   node.grad = Mat<S>::Zero(node.value.rows(), node.value.cols());
                                 node.grad.middleCols(start, n) += g;
                               });
}

template <typename S>
Var<S> reverse_rows(Var<S> a) {
  Tape<S>& t = *a.tape;
  int ai = a.id;
  return graph_detail::make_op(t, Mat<S>(a.value().colwise().reverse()), a.requires_grad(),
                               [ai](Tape<S>& tp, const Mat<S>& g) {
                                 tp.accumulate(ai, Mat<S>(g.colwise().reverse()));
                               });
}

// Gather rows of an embedding table; backward scatter-adds.
template <typename S>
Var<S> embed_rows(Var<S> table, std::vector<int> ids) {
  Tape<S>& t = *table.tape;
  for (int id : ids)
    if (id < 0 || id >= table.rows()) throw std::out_of_range("embed_rows: id out of range");
  Mat<S> value(static_cast<Eigen::Index>(ids.size()), table.cols());
  for (size_t i = 0; i < ids.size(); ++i) value.row(i) = table.value().row(ids[i]);
  int ti = table.id;
  return graph_detail::make_op(t, std::move(value), table.requires_grad(),
                               [ti, ids = std::move(ids)](Tape<S>& tp, const Mat<S>& g) {
                                 auto& node = tp.node(ti);
                                 if (node.grad.size() == 0)
                                   node.grad = Mat<S>::Zero(node.value.rows(), node.value.cols());
                                 for (size_t i = 0; i < ids.size(); ++i)
                                   node.grad.row(ids[i]) += g.row(i);
                               });
}

// ---- softmax / normalization ------------------------------------------------

// Row-wise softmax restricted to allowed columns; excluded entries are 0.
template <typename S>
Var<S> masked_softmax_rows(Var<S> a, std::vector<char> allowed_cols) {
  Tape<S>& t = *a.tape;
  if (static_cast<Eigen::Index>(allowed_cols.size()) != a.cols())
    throw std::invalid_argument("masked_softmax_rows: mask size mismatch");
  bool any_allowed = false;
  for (char c : allowed_cols) any_allowed |= (c != 0);
  if (!any_allowed) throw std::invalid_argument("masked_softmax_rows: no allowed columns");

  const Mat<S>& x = a.value();
  Mat<S> y = Mat<S>::Zero(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    S mx = -std::numeric_limits<S>::infinity();
    for (Eigen::Index c = 0; c < x.cols(); ++c)
      if (allowed_cols[c] && x(r, c) > mx) mx = x(r, c);
    S z = S(0);
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      if (!allowed_cols[c]) continue;
      y(r, c) = std::exp(x(r, c) - mx);
      z += y(r, c);
    }
    for (Eigen::Index c = 0; c < x.cols(); ++c)
      if (allowed_cols[c]) y(r, c) /= z;
  }
  int ai = a.id;
  Var<S> out = graph_detail::make_op(t, std::move(y), a.requires_grad(), nullptr);
  if (a.requires_grad()) {
    int oi = out.id;
    t.node(oi).backprop = [ai, oi, allowed = std::move(allowed_cols)](Tape<S>& tp,
                                                                      const Mat<S>& g) {
      const Mat<S>& y = tp.node(oi).value;
      Mat<S> gx = Mat<S>::Zero(g.rows(), g.cols());
      for (Eigen::Index r = 0; r < g.rows(); ++r) {
        S dot = S(0);
        for (Eigen::Index c = 0; c < g.cols(); ++c)
          if (allowed[c]) dot += g(r, c) * y(r, c);
        for (Eigen::Index c = 0; c < g.cols(); ++c)
          if (allowed[c]) gx(r, c) = y(r, c) * (g(r, c) - dot);
      }
      tp.accumulate(ai, gx);
    };
  }
  return out;
}

// Row-wise layer normalization with learned gain and bias (each 1 x d).
template <typename S>
Var<S> layer_norm_rows(Var<S> a, Var<S> gain, Var<S> bias, S eps = S(1e-5)) {
  Tape<S>& t = *a.tape;
  const Eigen::Index d = a.cols();
  if (gain.rows() != 1 || gain.cols() != d || bias.rows() != 1 || bias.cols() != d)
    throw std::invalid_argument("layer_norm_rows: gain/bias must be 1 x cols");

  const Mat<S>& x = a.value();
  Mat<S> xhat(x.rows(), d);
  Vec<S> inv_std(x.rows());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    S mu = x.row(r).mean();
    S var = (x.row(r).array() - mu).square().mean();
    S is = S(1) / std::sqrt(var + eps);
    inv_std(r) = is;
    xhat.row(r) = (x.row(r).array() - mu) * is;
  }
  Mat<S> y = xhat;
  y.array().rowwise() *= gain.value().row(0).array();
  y.rowwise() += bias.value().row(0);

  bool rg = graph_detail::any_grad<S>({a, gain, bias});
  int ai = a.id, gi = gain.id, bi = bias.id;
  return graph_detail::make_op(
      t, std::move(y), rg,
      [ai, gi, bi, xhat = std::move(xhat), inv_std = std::move(inv_std), d](
          Tape<S>& tp, const Mat<S>& g) {
        const Mat<S>& gain = tp.node(gi).value;
        if (tp.node(gi).requires_grad)
          tp.accumulate(gi, Mat<S>(g.cwiseProduct(xhat).colwise().sum()));
        if (tp.node(bi).requires_grad) tp.accumulate(bi, Mat<S>(g.colwise().sum()));
        if (tp.node(ai).requires_grad) {
          Mat<S> gx(g.rows(), d);
          for (Eigen::Index r = 0; r < g.rows(); ++r) {
            Eigen::Array<S, 1, Eigen::Dynamic> gy =
                g.row(r).array() * gain.row(0).array();
            S mean_gy = gy.mean();
            S mean_gy_xhat = (gy * xhat.row(r).array()).mean();
            gx.row(r) =
                ((gy - mean_gy - xhat.row(r).array() * mean_gy_xhat) * inv_std(r)).matrix();
          }
          tp.accumulate(ai, gx);
        }
      });
}

// ---- reductions and losses ---------------------------------------------------

template <typename S>
Var<S> sum_all(Var<S> a) {
  Tape<S>& t = *a.tape;
  Mat<S> v(1, 1);
  v(0, 0) = a.value().sum();
  int ai = a.id;
  return graph_detail::make_op(t, std::move(v), a.requires_grad(),
                               [ai](Tape<S>& tp, const Mat<S>& g) {
                                 auto& n = tp.node(ai);
                                 tp.accumulate(
                                     ai, Mat<S>(Mat<S>::Constant(n.value.rows(), n.value.cols(),
                                                                 g(0, 0))));
                               });
}

template <typename S>
Var<S> mean_all(Var<S> a) {
  return scale(sum_all(a), S(1) / static_cast<S>(a.value().size()));
}

template <typename S>
Var<S> sum_scalars(std::span<const Var<S>> parts) {
  if (parts.empty()) throw std::invalid_argument("sum_scalars: no parts");
  Tape<S>& t = *parts[0].tape;
  S total = S(0);
  bool rg = false;
  std::vector<int> ids;
  for (const auto& p : parts) {
    if (p.rows() != 1 || p.cols() != 1)
      throw std::invalid_argument("sum_scalars: parts must be scalars");
    total += p.scalar();
    rg = rg || p.requires_grad();
    ids.push_back(p.id);
  }
  Mat<S> v(1, 1);
  v(0, 0) = total;
  return graph_detail::make_op(t, std::move(v), rg, [ids](Tape<S>& tp, const Mat<S>& g) {
    for (int id : ids) tp.accumulate(id, g);
  });
}

template <typename S>
Var<S> mean_scalars(std::span<const Var<S>> parts) {
  if (parts.empty()) throw std::invalid_argument("mean_scalars: no parts");
  return scale(sum_scalars(parts), S(1) / static_cast<S>(parts.size()));
}

template <typename S>
Var<S> square(Var<S> a) {
  Tape<S>& t = *a.tape;
  int ai = a.id;
  return graph_detail::make_op(t, Mat<S>(a.value().array().square().matrix()), a.requires_grad(),
                               [ai](Tape<S>& tp, const Mat<S>& g) {
                                 tp.accumulate(
                                     ai, Mat<S>(S(2) * g.cwiseProduct(tp.node(ai).value)));
                               });
}

// Cosine similarity of two same-shaped tensors viewed as flat vectors.
// Either side all-zero gives value 0 with zero gradient.
template <typename S>
Var<S> cosine(Var<S> a, Var<S> b) {
  Tape<S>& t = *a.tape;
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw std::invalid_argument("cosine: shape mismatch");
  const S na = a.value().norm(), nb = b.value().norm();
  Mat<S> v(1, 1);
  const bool degenerate = (na == S(0) || nb == S(0));
  const S dot = degenerate ? S(0) : (a.value().array() * b.value().array()).sum();
  v(0, 0) = degenerate ? S(0) : dot / (na * nb);
  bool rg = !degenerate && graph_detail::any_grad<S>({a, b});
  int ai = a.id, bi = b.id;
  const S c = v(0, 0);
  return graph_detail::make_op(t, std::move(v), rg,
                               [ai, bi, na, nb, c](Tape<S>& tp, const Mat<S>& g) {
                                 const S s = g(0, 0);
                                 const Mat<S>& av = tp.node(ai).value;
                                 const Mat<S>& bv = tp.node(bi).value;
                                 if (tp.node(ai).requires_grad)
                                   tp.accumulate(ai, Mat<S>(s * (bv / (na * nb) - av * (c / (na * na)))));
                                 if (tp.node(bi).requires_grad)
                                   tp.accumulate(bi, Mat<S>(s * (av / (na * nb) - bv * (c / (nb * nb)))));
                               });
}

// Mean squared error against constant targets over real positions.
template <typename S>
Var<S> mse_masked(Var<S> pred, Mat<S> targets, std::vector<char> real) {
  Tape<S>& t = *pred.tape;
  if (pred.rows() != targets.rows() || pred.cols() != targets.cols())
    throw std::invalid_argument("mse_masked: shape mismatch");
  if (static_cast<size_t>(pred.rows()) != real.size())
    throw std::invalid_argument("mse_masked: mask must have one entry per row");
  int n_real = 0;
  for (char c : real) n_real += (c != 0);
  if (n_real == 0) throw std::invalid_argument("mse_masked: zero real positions");

  S total = S(0);
  for (Eigen::Index r = 0; r < pred.rows(); ++r)
    if (real[r]) total += (pred.value().row(r) - targets.row(r)).array().square().sum();
  Mat<S> v(1, 1);
  v(0, 0) = total / static_cast<S>(n_real);
  int pi = pred.id;
  return graph_detail::make_op(
      t, std::move(v), pred.requires_grad(),
      [pi, targets = std::move(targets), real = std::move(real), n_real](Tape<S>& tp,
                                                                         const Mat<S>& g) {
        const Mat<S>& p = tp.node(pi).value;
        Mat<S> gp = Mat<S>::Zero(p.rows(), p.cols());
        const S s = S(2) * g(0, 0) / static_cast<S>(n_real);
        for (Eigen::Index r = 0; r < p.rows(); ++r)
          if (real[r]) gp.row(r) = s * (p.row(r) - targets.row(r));
        tp.accumulate(pi, gp);
      });
}

// Mean binary cross-entropy of probabilities against 0/1 targets over real
// positions; probabilities are clamped to [1e-7, 1-1e-7] before the log.
template <typename S>
Var<S> bce_masked(Var<S> probs, std::vector<int> labels, std::vector<char> real) {
  Tape<S>& t = *probs.tape;
  if (probs.cols() != 1) throw std::invalid_argument("bce_masked: probs must be n x 1");
  if (static_cast<size_t>(probs.rows()) != labels.size() || labels.size() != real.size())
    throw std::invalid_argument("bce_masked: size mismatch");
  int n_real = 0;
  for (char c : real) n_real += (c != 0);
  if (n_real == 0) throw std::invalid_argument("bce_masked: zero real positions");

  const S lo = S(1e-7), hi = S(1) - S(1e-7);
  S total = S(0);
  for (Eigen::Index r = 0; r < probs.rows(); ++r) {
    if (!real[r]) continue;
    S p = std::min(hi, std::max(lo, probs.value()(r, 0)));
    total += labels[r] ? -std::log(p) : -std::log(S(1) - p);
  }
  Mat<S> v(1, 1);
  v(0, 0) = total / static_cast<S>(n_real);
  int pi = probs.id;
  return graph_detail::make_op(
      t, std::move(v), probs.requires_grad(),
      [pi, labels = std::move(labels), real = std::move(real), n_real, lo, hi](
          Tape<S>& tp, const Mat<S>& g) {
        const Mat<S>& p = tp.node(pi).value;
        Mat<S> gp = Mat<S>::Zero(p.rows(), 1);
        const S s = g(0, 0) / static_cast<S>(n_real);
        for (Eigen::Index r = 0; r < p.rows(); ++r) {
          if (!real[r]) continue;
          S pc = p(r, 0);
          if (pc <= lo || pc >= hi) continue;  // clamped region: zero slope
          gp(r, 0) = s * (labels[r] ? -S(1) / pc : S(1) / (S(1) - pc));
        }
        tp.accumulate(pi, gp);
      });
}

// Inverted-mask dropout; rate 0 is the identity.
template <typename S>
Var<S> dropout(Var<S> a, S rate, Rng& rng) {
  if (rate <= S(0)) return a;
  if (rate >= S(1)) throw std::invalid_argument("dropout: rate must be < 1");
  Tape<S>& t = *a.tape;
  Mat<S> mask(a.rows(), a.cols());
  const S keep = S(1) - rate;
  for (Eigen::Index r = 0; r < mask.rows(); ++r)
    for (Eigen::Index c = 0; c < mask.cols(); ++c)
      mask(r, c) = rng.bernoulli(static_cast<double>(rate)) ? S(0) : S(1) / keep;
  int ai = a.id;
  // Materialize the value before make_op: the lambda capture moves `mask`, and
  // argument evaluation order is unspecified.
  Mat<S> value = a.value().cwiseProduct(mask);
  return graph_detail::make_op(t, std::move(value), a.requires_grad(),
                               [ai, mask = std::move(mask)](Tape<S>& tp, const Mat<S>& g) {
                                 tp.accumulate(ai, Mat<S>(g.cwiseProduct(mask)));
                               });
}

// Full LSTM pass over a token-embedding sequence returning the final hidden
// state (1 x d_h). x is T x d_w; wx is d_w x 4*d_h, wh is d_h x 4*d_h, b is
// 1 x 4*d_h with gate order [input, forget, output, candidate].
template <typename S>
Var<S> lstm_last_state(Var<S> x, Var<S> wx, Var<S> wh, Var<S> b) {
  Tape<S>& t = *x.tape;
  const Eigen::Index T = x.rows();
  const Eigen::Index dh = wh.rows();
  if (T < 1) throw std::invalid_argument("lstm_last_state: empty sequence");
  if (wx.cols() != 4 * dh || wh.cols() != 4 * dh || b.cols() != 4 * dh || b.rows() != 1 ||
      wx.rows() != x.cols())
    throw std::invalid_argument("lstm_last_state: weight shape mismatch");

  using RowA = Eigen::Array<S, 1, Eigen::Dynamic>;
  Mat<S> gi(T, dh), gf(T, dh), go(T, dh), gc(T, dh), cs(T, dh), hs(T, dh);
  RowA h = RowA::Zero(dh), c = RowA::Zero(dh);
  for (Eigen::Index s = 0; s < T; ++s) {
    Mat<S> z = x.value().row(s) * wx.value() + h.matrix() * wh.value() + b.value();
    RowA zi = z.leftCols(dh).array(), zf = z.middleCols(dh, dh).array(),
         zo = z.middleCols(2 * dh, dh).array(), zc = z.rightCols(dh).array();
    RowA i = S(1) / (S(1) + (-zi).exp());
    RowA f = S(1) / (S(1) + (-zf).exp());
    RowA o = S(1) / (S(1) + (-zo).exp());
    RowA g = zc.tanh();
    c = f * c + i * g;
    h = o * c.tanh();
    gi.row(s) = i; gf.row(s) = f; go.row(s) = o; gc.row(s) = g;
    cs.row(s) = c; hs.row(s) = h;
  }
  Mat<S> value = hs.row(T - 1);

  bool rg = graph_detail::any_grad<S>({x, wx, wh, b});
  int xi = x.id, wxi = wx.id, whi = wh.id, bi = b.id;
  return graph_detail::make_op(
      t, std::move(value), rg,
      [xi, wxi, whi, bi, T, dh, gi = std::move(gi), gf = std::move(gf), go = std::move(go),
       gc = std::move(gc), cs = std::move(cs), hs = std::move(hs)](Tape<S>& tp, const Mat<S>& gout) {
        const Mat<S>& xv = tp.node(xi).value;
        const Mat<S>& wxv = tp.node(wxi).value;
        const Mat<S>& whv = tp.node(whi).value;
        using RowA = Eigen::Array<S, 1, Eigen::Dynamic>;

        Mat<S> dwx = Mat<S>::Zero(wxv.rows(), wxv.cols());
        Mat<S> dwh = Mat<S>::Zero(whv.rows(), whv.cols());
        Mat<S> db = Mat<S>::Zero(1, 4 * dh);
        Mat<S> dx = Mat<S>::Zero(xv.rows(), xv.cols());

        RowA dh_next = gout.row(0).array();
        RowA dc_next = RowA::Zero(dh);
        for (Eigen::Index s = T - 1; s >= 0; --s) {
          RowA i = gi.row(s).array(), f = gf.row(s).array(), o = go.row(s).array(),
               g = gc.row(s).array(), c = cs.row(s).array();
          RowA tanh_c = c.tanh();
          RowA dch = dc_next + dh_next * o * (S(1) - tanh_c.square());
          RowA do_ = dh_next * tanh_c;
          RowA di = dch * g;
          RowA dg = dch * i;
          RowA c_prev = s > 0 ? RowA(cs.row(s - 1).array()) : RowA(RowA::Zero(dh));
          RowA df = dch * c_prev;

          Mat<S> dz(1, 4 * dh);
          dz.leftCols(dh) = (di * i * (S(1) - i)).matrix();
          dz.middleCols(dh, dh) = (df * f * (S(1) - f)).matrix();
          dz.middleCols(2 * dh, dh) = (do_ * o * (S(1) - o)).matrix();
          dz.rightCols(dh) = (dg * (S(1) - g.square())).matrix();

          dwx.noalias() += xv.row(s).transpose() * dz;
          if (s > 0) dwh.noalias() += hs.row(s - 1).transpose() * dz;
          db += dz;
          dx.row(s) = dz * wxv.transpose();
          dh_next = s > 0 ? RowA((dz * whv.transpose()).array()) : RowA(RowA::Zero(dh));
          dc_next = dch * f;
        }
        if (tp.node(xi).requires_grad) tp.accumulate(xi, dx);
        if (tp.node(wxi).requires_grad) tp.accumulate(wxi, dwx);
        if (tp.node(whi).requires_grad) tp.accumulate(whi, dwh);
        if (tp.node(bi).requires_grad) tp.accumulate(bi, db);
      });
}

}  // namespace sspext
