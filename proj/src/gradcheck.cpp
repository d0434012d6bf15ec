#include "sspext/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>

#include "sspext/model.hpp"
#include "sspext/selfsup.hpp"
#include "sspext/trainer.hpp"

namespace sspext {

double GradCheckReport::overall_max() const {
  double m = 0.0;
  for (const Entry& e : entries) m = std::max(m, e.max_rel_error);
  return m;
}

bool GradCheckReport::all_below(double threshold) const {
  if (entries.empty()) return false;
  for (const Entry& e : entries)
    if (!(e.max_rel_error < threshold)) return false;
  return true;
}

namespace {

using LossFn = std::function<Var<double>(Tape<double>&, const ParameterVars<double>&)>;

double eval_loss(const ModelParameters<double>& params, const LossFn& fn) {
  Tape<double> tape;
  ParameterVars<double> pv = register_parameters(tape, params, /*trainable=*/false);
  return fn(tape, pv).scalar();
}

// Max relative error over every parameter element, comparing the analytic
// gradient against (f(p+h) - f(p-h)) / 2h.
double check_loss(const ModelParameters<double>& base, const LossFn& fn) {
  Tape<double> tape;
  ParameterVars<double> pv = register_parameters(tape, base, /*trainable=*/true);
  Var<double> loss = fn(tape, pv);
  tape.backward(loss);
  std::vector<MatD> analytic;
  analytic.reserve(pv.tensor_ids.size());
  for (int id : pv.tensor_ids) {
    const auto& node = tape.node(id);
    analytic.push_back(node.grad.size() != 0
                           ? node.grad
                           : MatD(MatD::Zero(node.value.rows(), node.value.cols())));
  }

  ModelParameters<double> params = base;
  double max_rel = 0.0;
  size_t ti = 0;
  params.for_each_tensor([&](const std::string&, MatD& t) {
    for (Eigen::Index r = 0; r < t.rows(); ++r) {
      for (Eigen::Index c = 0; c < t.cols(); ++c) {
        const double orig = t(r, c);
        const double h = 1e-5 * std::max(1.0, std::abs(orig));
        t(r, c) = orig + h;
        const double up = eval_loss(params, fn);
        t(r, c) = orig - h;
        const double down = eval_loss(params, fn);
        t(r, c) = orig;
        const double numeric = (up - down) / (2.0 * h);
        const double a = analytic[ti](r, c);
        const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-4});
        max_rel = std::max(max_rel, rel);
      }
    }
    ++ti;
  });
  return max_rel;
}

}  // namespace

GradCheckReport run_gradient_checks() {
  ModelConfig toy;
  toy.d_w = 4;
  toy.d_h = 3;  // d_m = 6
  toy.n_layers = 1;
  toy.n_heads = 2;
  toy.d_ff = 8;
  toy.dropout = 0.0;
  const int vocab_size = 10;
  ModelParameters<double> params = init_parameters<double>(toy, vocab_size, 42);

  EncodedDocument doc_a;
  doc_a.id = "toy_a";
  doc_a.sentence_ids = {{3, 4}, {5, 6}, {7, 8}};
  EncodedDocument doc_b;
  doc_b.id = "toy_b";
  doc_b.sentence_ids = {{4, 9}, {3, 7}, {6, 5}};

  CorruptionConfig cc;
  cc.margin = 0.5;
  cc.replace_pool_docs = 2;

  cc.p_mask = 1.0;
  Rng mask_rng(7);
  CorruptedDocument masked = *corrupt_mask(doc_a, cc, mask_rng);

  Rng pool_rng(8);
  const EncodedDocument corpus[] = {doc_a, doc_b};
  ReplacePool pool = build_replace_pool(std::span<const EncodedDocument>(corpus, 2), cc, pool_rng);
  cc.p_replace = 0.5;
  Rng replace_rng(9);
  CorruptedDocument replaced = corrupt_replace(doc_a, pool, cc, replace_rng);

  cc.p_switch = 1.0;
  Rng switch_rng(10);
  CorruptedDocument switched = *corrupt_switch(doc_a, cc, switch_rng);

  const std::vector<int> finetune_labels = {1, 0, 1};

  GradCheckReport report;
  report.entries.push_back(
      {"mask", check_loss(params, [&masked](Tape<double>& t, const ParameterVars<double>& pv) {
         return build_mask_loss(t, pv, masked, 0.5).loss;
       })});
  report.entries.push_back(
      {"replace", check_loss(params, [&replaced](Tape<double>& t, const ParameterVars<double>& pv) {
         return build_corruption_position_loss(t, pv, replaced).loss;
       })});
  report.entries.push_back(
      {"switch", check_loss(params, [&switched](Tape<double>& t, const ParameterVars<double>& pv) {
         return build_corruption_position_loss(t, pv, switched).loss;
       })});
  report.entries.push_back(
      {"finetune",
       check_loss(params, [&doc_a, &finetune_labels](Tape<double>& t,
                                                     const ParameterVars<double>& pv) {
         return build_finetune_loss(t, pv, doc_a.sentence_ids, finetune_labels);
       })});
  return report;
}

}  // namespace sspext
