#pragma once

// Inference-time attention optimization: plain gradient descent on the
// alignment-layer attention logits of one sentence pair, unidirectional or
// jointly under a forward and a backward model, plus bidirectional link
// extraction via the Hadamard merge.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

#include "nalign/align_set.hpp"
#include "nalign/common.hpp"
#include "nalign/model.hpp"
#include "nalign/objectives.hpp"
#include "nalign/tensor.hpp"

namespace nalign {

struct OptConfig {
  int steps = 3;               // unidirectional default; 10 with contiguity
  double learning_rate = 1.0;  // plain gradient descent step size
  double lambda = 0.0;         // contiguity interpolation during optimization
  bool optimize_logits = true;
  bool include_eos_ce = true;  // include the EOS prediction in the CE term
  ContiguityConfig contiguity;

  void validate() const {
    if (steps < 0) throw ContractError("attopt: steps must be >= 0");
    if (learning_rate <= 0.0)
      throw ContractError("attopt: learning rate must be positive");
    if (!optimize_logits)
      throw ContractError(
          "attopt: only logit-space optimization is supported; softmax keeps "
          "the attention columns normalized");
    if (lambda < 0.0) throw ContractError("attopt: lambda must be >= 0");
  }
};

// Everything needed to score the observed tokens of one direction under a
// given attention matrix, with the model held fixed: the alignment-layer
// value vectors for the attended side and the detached output projection.
struct AlignScoringContext {
  TensorF values;  // (attended length incl. EOS) x hidden
  TensorF out_w;   // hidden x vocab, detached
  TensorF out_b;   // 1 x vocab, detached
  std::vector<int> targets;  // predicted tokens incl. the terminal EOS

  bool ready() const { return !targets.empty(); }
};

inline AlignScoringContext make_scoring_context(
    const TranslationModel& model, const AlignmentLayer& layer,
    const std::vector<int>& src_ids, const std::vector<int>& tgt_ids) {
  AlignScoringContext ctx;
  auto enc = encode(model, src_ids);
  ctx.values = matmul(enc.align_kv, layer.wv).detached();
  ctx.out_w = layer.out_w.detached();
  ctx.out_b = layer.out_b.detached();
  ctx.targets = tgt_ids;
  return ctx;
}

namespace detail {

// CE of the observed tokens given column-stochastic attention over the
// attended side (columns indexed by predicted positions).
inline TensorF scoring_ce(const TensorF& probs_cols,
                          const AlignScoringContext& ctx,
                          bool include_eos_ce) {
  auto context = matmul(transpose(probs_cols), ctx.values);
  auto logits = add_rowwise(matmul(context, ctx.out_w), ctx.out_b);
  if (include_eos_ce) return cross_entropy(logits, ctx.targets);
  std::size_t m = ctx.targets.size() - 1;
  std::vector<int> real_targets(ctx.targets.begin(), ctx.targets.end() - 1);
  return cross_entropy(slice(logits, 0, m, 0, logits.cols()), real_targets);
}

}  // namespace detail

struct UniOptResult {
  AttentionState state;
  std::vector<double> loss_trace;  // length steps + 1
  std::vector<double> ce_trace;    // CE component at the same points
};

// Gradient descent on the alignment-layer attention logits for one pair,
// initialized from the forward pass, minimizing CE + lambda * L_C with all
// model parameters fixed. Logit dropout is never applied here.
inline UniOptResult optimize_unidirectional(const TranslationModel& model,
                                            const AlignmentLayer& layer,
                                            const std::vector<int>& src_ids,
                                            const std::vector<int>& tgt_ids,
                                            const OptConfig& cfg) {
  cfg.validate();
  auto pass = frozen_pass(model, src_ids, tgt_ids);
  auto init = alignment_forward(layer, pass.align_kv, pass.dec_states);
  auto ctx = make_scoring_context(model, layer, src_ids, tgt_ids);

  TensorF leaf = init.att.logits.detached();
  leaf.set_requires_grad(true);
  UniOptResult out;
  ContiguityConfig ccfg = cfg.contiguity;
  auto eval_loss = [&](bool with_grad) {
    auto probs = softmax(leaf, 0);
    auto ce = detail::scoring_ce(probs, ctx, cfg.include_eos_ce);
    auto total = ce;
    if (cfg.lambda > 0.0)
      total = add(ce, scale(contiguity_loss(probs, ccfg, true),
                            static_cast<Real>(cfg.lambda)));
    out.ce_trace.push_back(static_cast<double>(ce.at(0, 0)));
    out.loss_trace.push_back(static_cast<double>(total.at(0, 0)));
    return total;
  };
  for (int step = 0; step < cfg.steps; ++step) {
    GradGraph<Real> graph;
    auto loss = eval_loss(true);
    if (!std::isfinite(out.loss_trace.back()))
      throw NumericError("attopt: non-finite loss at step " +
                         std::to_string(step));
    graph.backward(loss);
    const auto& g = leaf.grad();
    auto& v = leaf.values();
    for (std::size_t i = 0; i < v.size(); ++i)
      v[i] -= static_cast<Real>(cfg.learning_rate) * g[i];
    leaf.zero_grad();
  }
  eval_loss(false);  // record the final point of the trace

  out.state.logits = leaf.detached();
  out.state.probs = softmax(out.state.logits, 0);
  out.state.n_src = init.att.n_src;
  out.state.m_tgt = init.att.m_tgt;
  out.state.includes_eos = true;
  return out;
}

// ---------------------------------------------------------------------------
// Bidirectional optimization on shared logits

struct BidirState {
  TensorF a_logits;  // (n+1) x (m+1), forward-model orientation, source-major
  std::size_t n_src = 0;
  std::size_t m_tgt = 0;
  AlignScoringContext fwd;  // scores y under softmax(A_L)
  AlignScoringContext bwd;  // scores x under softmax(A_L^T)
  std::vector<double> loss_trace;  // length steps + 1 after optimization
};

// (A_L)_init = ((A_L)_F + (A_L)_B^T) / 2.
inline BidirState init_bidirectional(const AttentionState& state_f,
                                     const AttentionState& state_b) {
  if (state_f.logits.rows() != state_b.logits.cols() ||
      state_f.logits.cols() != state_b.logits.rows())
    throw ShapeError("init_bidirectional: incompatible shapes " +
                     state_f.logits.shape_str() + " vs " +
                     state_b.logits.shape_str() + " transposed");
  BidirState out;
  out.a_logits = TensorF(state_f.logits.rows(), state_f.logits.cols());
  for (std::size_t i = 0; i < out.a_logits.rows(); ++i)
    for (std::size_t j = 0; j < out.a_logits.cols(); ++j)
      out.a_logits.at(i, j) =
          Real(0.5) * (state_f.logits.at(i, j) + state_b.logits.at(j, i));
  out.n_src = state_f.n_src;
  out.m_tgt = state_f.m_tgt;
  return out;
}

// Forward passes through both models, averaged initialization, and scoring
// contexts for the joint loss.
inline BidirState prepare_bidirectional(const TranslationModel& model_f,
                                        const AlignmentLayer& layer_f,
                                        const TranslationModel& model_b,
                                        const AlignmentLayer& layer_b,
                                        const std::vector<int>& src_ids,
                                        const std::vector<int>& tgt_ids) {
  auto pass_f = frozen_pass(model_f, src_ids, tgt_ids);
  auto fwd = alignment_forward(layer_f, pass_f.align_kv, pass_f.dec_states);
  auto pass_b = frozen_pass(model_b, tgt_ids, src_ids);
  auto bwd = alignment_forward(layer_b, pass_b.align_kv, pass_b.dec_states);
  BidirState state = init_bidirectional(fwd.att, bwd.att);
  state.fwd = make_scoring_context(model_f, layer_f, src_ids, tgt_ids);
  state.bwd = make_scoring_context(model_b, layer_b, tgt_ids, src_ids);
  return state;
}

// Descends L = L_F + L_B + lambda * L_C on the shared logits.
inline void optimize_bidirectional(BidirState& state, const OptConfig& cfg) {
  cfg.validate();
  if (!state.fwd.ready() || !state.bwd.ready())
    throw ContractError(
        "optimize_bidirectional: scoring contexts are not attached");
  TensorF leaf = state.a_logits.detached();
  leaf.set_requires_grad(true);
  state.loss_trace.clear();
  ContiguityConfig ccfg = cfg.contiguity;
  auto eval_loss = [&] {
    auto probs_f = softmax(leaf, 0);
    auto loss = detail::scoring_ce(probs_f, state.fwd, cfg.include_eos_ce);
    auto probs_b = softmax(transpose(leaf), 0);
    loss = add(loss, detail::scoring_ce(probs_b, state.bwd,
                                        cfg.include_eos_ce));
    if (cfg.lambda > 0.0)
      loss = add(loss, scale(contiguity_loss(probs_f, ccfg, true),
                             static_cast<Real>(cfg.lambda)));
    state.loss_trace.push_back(static_cast<double>(loss.at(0, 0)));
    return loss;
  };
  for (int step = 0; step < cfg.steps; ++step) {
    GradGraph<Real> graph;
    auto loss = eval_loss();
    if (!std::isfinite(state.loss_trace.back()))
      throw NumericError("attopt: non-finite bidirectional loss at step " +
                         std::to_string(step));
    graph.backward(loss);
    const auto& g = leaf.grad();
    auto& v = leaf.values();
    for (std::size_t i = 0; i < v.size(); ++i)
      v[i] -= static_cast<Real>(cfg.learning_rate) * g[i];
    leaf.zero_grad();
  }
  eval_loss();
  state.a_logits = leaf.detached();
}

// Column-stochastic attention of the current shared logits (forward
// orientation).
inline AttentionState bidir_attention(const BidirState& state) {
  AttentionState out;
  out.logits = state.a_logits.detached();
  out.probs = softmax(out.logits, 0);
  out.n_src = state.n_src;
  out.m_tgt = state.m_tgt;
  out.includes_eos = true;
  return out;
}

// A_M = softmax(A_L) ⊙ softmax(A_L^T)^T; emits the min(n, m) real-token
// cells with the largest merged scores, ties toward the smaller (s, t).
inline AlignmentSet extract_bidirectional(const BidirState& state) {
  std::size_t n = state.n_src, m = state.m_tgt;
  auto a_f = softmax(state.a_logits, 0);
  auto a_b = transpose(softmax(transpose(state.a_logits), 0));
  auto merged = mul(a_f, a_b);
  struct Cell {
    Real value;
    int s, t;
  };
  std::vector<Cell> cells;
  cells.reserve(n * m);
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t t = 0; t < m; ++t)
      cells.push_back({merged.at(s, t), static_cast<int>(s) + 1,
                       static_cast<int>(t) + 1});
  std::size_t want = std::min(n, m);
  std::sort(cells.begin(), cells.end(), [](const Cell& a, const Cell& b) {
    if (a.value != b.value) return a.value > b.value;
    if (a.s != b.s) return a.s < b.s;
    return a.t < b.t;
  });
  AlignmentSet out;
  for (std::size_t i = 0; i < want && i < cells.size(); ++i)
    out.insert_sure(cells[i].s, cells[i].t);
  return out;
}

}  // namespace nalign
