#pragma once

// Training objectives beyond plain translation: the contiguity loss over
// attention matrices, the guided alignment loss, and the training loops for
// the alignment layer (cross-entropy + contiguity) and the full-context
// layer (guided).

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "nalign/align_set.hpp"
#include "nalign/common.hpp"
#include "nalign/data.hpp"
#include "nalign/model.hpp"
#include "nalign/tensor.hpp"

namespace nalign {

struct ContiguityConfig {
  std::size_t kernel_size = 2;
  double lambda = 1.0;  // interpolation factor during training
  double logit_dropout = 0.1;
  bool mask_eos = true;

  // 0.5 for the 2x2 kernel; scaled so a fully covered window stays <= 1.
  double kernel_value() const {
    return 2.0 / static_cast<double>(kernel_size * kernel_size);
  }

  void validate() const {
    if (kernel_size == 0)
      throw ContractError("contiguity: kernel size must be >= 1");
    if (lambda < 0.0)
      throw ContractError("contiguity: lambda must be non-negative");
  }
};

// L_C = -sum_t log(max_s conv(A, K)[s, t]) over the EOS-masked attention
// matrix. Columns of `probs` must be probability distributions; `has_eos`
// says whether the last row/column belong to the EOS token.
template <typename T>
Tensor<T> contiguity_loss(const Tensor<T>& probs, const ContiguityConfig& cfg,
                          bool has_eos) {
  cfg.validate();
  std::size_t rows = probs.rows(), cols = probs.cols();
  if (rows == 0 || cols == 0)
    throw ContractError("contiguity: empty attention matrix");
  for (std::size_t t = 0; t < cols; ++t) {
    T sum = 0;
    for (std::size_t s = 0; s < rows; ++s) {
      T v = probs.at(s, t);
      if (v < T(-1e-4))
        throw ContractError("contiguity: negative attention probability");
      sum += v;
    }
    if (std::abs(static_cast<double>(sum) - 1.0) > 1e-4)
      throw ContractError(
          "contiguity: column " + std::to_string(t + 1) +
          " is not a probability distribution (sum " +
          std::to_string(static_cast<double>(sum)) + ")");
  }
  Tensor<T> masked = probs;
  if (has_eos && cfg.mask_eos) {
    if (rows < 2 || cols < 2)
      throw ContractError("contiguity: nothing left after EOS masking");
    masked = slice(probs, 0, rows - 1, 0, cols - 1);
  }
  auto windows = conv_window(masked, cfg.kernel_size,
                             static_cast<T>(cfg.kernel_value()));
  auto best = max_over_axis(windows, 0);
  return scale(sum_all(log(best)), T(-1));
}

// Supervision for one sentence: the aligned source position for every real
// target position, with unaligned tokens pointing at the source EOS.
struct GuidedAlignment {
  std::vector<int> source_of;  // 1-based; size = number of real target tokens

  // Reduces an alignment set to one source per target: the smallest linked
  // source position, or the EOS position for unaligned tokens.
  static GuidedAlignment from_links(const AlignmentSet& links,
                                    std::size_t m_tgt, std::size_t eos_pos) {
    GuidedAlignment g;
    g.source_of.assign(m_tgt, static_cast<int>(eos_pos));
    for (std::size_t t = 1; t <= m_tgt; ++t) {
      for (const auto& [s, lt] : links.links) {
        if (lt == static_cast<int>(t)) {
          g.source_of[t - 1] = s;
          break;  // links are ordered, the first hit is the smallest s
        }
      }
    }
    return g;
  }
};

// L_a = -(1/m) sum_t log(A[a_t, t]) over real target positions.
template <typename T>
Tensor<T> guided_loss(const Tensor<T>& probs, const GuidedAlignment& g,
                      bool has_eos) {
  std::size_t m = has_eos ? probs.cols() - 1 : probs.cols();
  if (g.source_of.size() != m)
    throw ContractError("guided loss: " + std::to_string(g.source_of.size()) +
                        " supervised positions for " + std::to_string(m) +
                        " target tokens");
  std::vector<std::pair<std::size_t, std::size_t>> cells;
  cells.reserve(m);
  for (std::size_t t = 0; t < m; ++t) {
    int s = g.source_of[t];
    if (s < 1 || static_cast<std::size_t>(s) > probs.rows())
      throw IndexError("guided loss: source position " + std::to_string(s) +
                       " outside attention of " + std::to_string(probs.rows()) +
                       " rows");
    cells.emplace_back(static_cast<std::size_t>(s) - 1, t);
  }
  return scale(sum_all(log(gather_cells(probs, cells))),
               static_cast<T>(-1.0 / static_cast<double>(m)));
}

// ---------------------------------------------------------------------------
// Alignment-layer training

struct LayerTrainConfig {
  std::size_t updates = 150;
  std::size_t batch_tokens = 1000;
  double peak_lr = 3e-3;
  std::size_t warmup = 15;
  std::uint64_t seed = 1;
  ContiguityConfig contiguity;
};

namespace detail {

class BatchIterator {
 public:
  BatchIterator(std::size_t corpus_size, std::uint64_t seed)
      : rng_(seed, 20) {
    order_.resize(corpus_size);
    for (std::size_t i = 0; i < corpus_size; ++i) order_[i] = i;
    rng_.shuffle(order_);
  }

  std::size_t next() {
    if (pos_ == order_.size()) {
      rng_.shuffle(order_);
      pos_ = 0;
    }
    return order_[pos_++];
  }

 private:
  RngStream rng_;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
};

inline void check_finite_loss(double v, const char* stage, std::size_t update) {
  if (!std::isfinite(v))
    throw NumericError(std::string(stage) + ": non-finite loss at update " +
                       std::to_string(update + 1));
}

}  // namespace detail

// Trains only the alignment-layer parameters against CE + lambda * L_C with
// position-wise dropout on the attention logits. The translation model must
// be frozen; its parameters are untouched.
inline std::vector<double> train_alignment_layer(
    const TranslationModel& model, AlignmentLayer& layer,
    const EncodedCorpus& corpus, const LayerTrainConfig& cfg) {
  if (!model.frozen)
    throw ContractError(
        "train_alignment_layer: translation model must be frozen");
  if (corpus.size() == 0)
    throw DataError("train_alignment_layer: empty corpus");
  cfg.contiguity.validate();
  auto params = layer.parameters();
  OptimizerState<Real> opt;
  opt.peak_lr = cfg.peak_lr;
  opt.warmup = cfg.warmup;
  detail::BatchIterator batches(corpus.size(), cfg.seed);
  RngStream dropout_rng(cfg.seed, 21);
  std::vector<double> trace;
  trace.reserve(cfg.updates);
  double lambda = cfg.contiguity.lambda;
  for (std::size_t update = 0; update < cfg.updates; ++update) {
    std::vector<std::size_t> batch;
    std::size_t tokens = 0;
    while (tokens < cfg.batch_tokens) {
      std::size_t i = batches.next();
      batch.push_back(i);
      tokens += corpus.tgt[i].size();
      if (batch.size() == corpus.size()) break;
    }
    Real inv_tokens = static_cast<Real>(1.0 / static_cast<double>(tokens));
    double batch_loss = 0;
    for (std::size_t i : batch) {
      auto ctx = frozen_pass(model, corpus.src[i], corpus.tgt[i]);
      GradGraph<Real> graph;
      auto fwd = alignment_forward(layer, ctx.align_kv, ctx.dec_states,
                                   cfg.contiguity.logit_dropout, &dropout_rng);
      auto loss = cross_entropy(fwd.vocab_logits, corpus.tgt[i]);
      if (lambda > 0.0) {
        auto lc = contiguity_loss(fwd.att.probs, cfg.contiguity, true);
        loss = add(loss, scale(lc, static_cast<Real>(lambda)));
      }
      loss = scale(loss, inv_tokens);
      graph.backward(loss);
      batch_loss += static_cast<double>(loss.at(0, 0));
    }
    detail::check_finite_loss(batch_loss, "train_alignment_layer", update);
    adam_step(params, opt, opt.scheduled_lr());
    zero_grads(params);
    trace.push_back(batch_loss);
  }
  return trace;
}

struct GuidedTrainConfig {
  std::size_t updates = 150;
  std::size_t batch_tokens = 1000;
  double peak_lr = 3e-3;
  std::size_t warmup = 15;
  std::uint64_t seed = 1;
};

// Trains only the full-context alignment layer with the guided loss. The
// supervising alignments come from any AlignmentSet source, one set per
// sentence; unaligned target tokens are supervised toward the source EOS.
inline std::vector<double> train_guided(
    const TranslationModel& model, AlignmentLayer& layer,
    const EncodedCorpus& corpus, const std::vector<AlignmentSet>& alignments,
    const GuidedTrainConfig& cfg) {
  if (!model.frozen)
    throw ContractError("train_guided: translation model must be frozen");
  if (!layer.cfg.full_context)
    throw ContractError("train_guided: layer is not the full-context variant");
  if (alignments.size() != corpus.size())
    throw DataError("train_guided: " + std::to_string(alignments.size()) +
                    " alignment lines for " + std::to_string(corpus.size()) +
                    " sentences");
  if (corpus.size() == 0) throw DataError("train_guided: empty corpus");
  auto params = layer.parameters();
  OptimizerState<Real> opt;
  opt.peak_lr = cfg.peak_lr;
  opt.warmup = cfg.warmup;
  detail::BatchIterator batches(corpus.size(), cfg.seed);
  std::vector<double> trace;
  trace.reserve(cfg.updates);
  for (std::size_t update = 0; update < cfg.updates; ++update) {
    std::vector<std::size_t> batch;
    std::size_t tokens = 0;
    while (tokens < cfg.batch_tokens) {
      std::size_t i = batches.next();
      batch.push_back(i);
      tokens += corpus.tgt[i].size();
      if (batch.size() == corpus.size()) break;
    }
    Real inv_sentences = static_cast<Real>(1.0 / static_cast<double>(batch.size()));
    double batch_loss = 0;
    for (std::size_t i : batch) {
      std::size_t m = corpus.tgt[i].size() - 1;
      std::size_t eos_pos = corpus.src[i].size();
      auto guide = GuidedAlignment::from_links(alignments[i], m, eos_pos);
      auto ctx = frozen_pass(model, corpus.src[i], corpus.tgt[i]);
      GradGraph<Real> graph;
      auto fwd = alignment_forward(layer, ctx.align_kv, ctx.dec_states);
      auto loss = scale(guided_loss(fwd.att.probs, guide, true), inv_sentences);
      graph.backward(loss);
      batch_loss += static_cast<double>(loss.at(0, 0));
    }
    detail::check_finite_loss(batch_loss, "train_guided", update);
    adam_step(params, opt, opt.scheduled_lr());
    zero_grads(params);
    trace.push_back(batch_loss);
  }
  return trace;
}

// ---------------------------------------------------------------------------
// Evaluation-mode loss measurements (no dropout)

inline double mean_layer_loss(const TranslationModel& model,
                              const AlignmentLayer& layer,
                              const EncodedCorpus& corpus, double lambda,
                              const ContiguityConfig& ccfg,
                              std::size_t limit = 0) {
  std::size_t n = limit == 0 ? corpus.size() : std::min(limit, corpus.size());
  double total = 0;
  std::size_t tokens = 0;
  for (std::size_t i = 0; i < n; ++i) {
    auto ctx = frozen_pass(model, corpus.src[i], corpus.tgt[i]);
    auto fwd = alignment_forward(layer, ctx.align_kv, ctx.dec_states);
    double ce = static_cast<double>(
        cross_entropy(fwd.vocab_logits, corpus.tgt[i]).at(0, 0));
    if (lambda > 0.0)
      ce += lambda * static_cast<double>(
                         contiguity_loss(fwd.att.probs, ccfg, true).at(0, 0));
    total += ce;
    tokens += corpus.tgt[i].size();
  }
  return total / static_cast<double>(tokens);
}

inline double mean_guided_loss(const TranslationModel& model,
                               const AlignmentLayer& layer,
                               const EncodedCorpus& corpus,
                               const std::vector<AlignmentSet>& alignments,
                               std::size_t limit = 0) {
  std::size_t n = limit == 0 ? corpus.size() : std::min(limit, corpus.size());
  double total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t m = corpus.tgt[i].size() - 1;
    auto guide =
        GuidedAlignment::from_links(alignments[i], m, corpus.src[i].size());
    auto ctx = frozen_pass(model, corpus.src[i], corpus.tgt[i]);
    auto fwd = alignment_forward(layer, ctx.align_kv, ctx.dec_states);
    total += static_cast<double>(guided_loss(fwd.att.probs, guide, true).at(0, 0));
  }
  return total / static_cast<double>(n);
}

// Forced-decoding perplexity per target token (EOS included).
inline double forced_perplexity_translation(const TranslationModel& model,
                                            const EncodedCorpus& corpus,
                                            std::size_t limit = 0) {
  std::size_t n = limit == 0 ? corpus.size() : std::min(limit, corpus.size());
  double total = 0;
  std::size_t tokens = 0;
  for (std::size_t i = 0; i < n; ++i) {
    auto ctx = frozen_pass(model, corpus.src[i], corpus.tgt[i]);
    total += static_cast<double>(
        cross_entropy(ctx.dec_logits, corpus.tgt[i]).at(0, 0));
    tokens += corpus.tgt[i].size();
  }
  return std::exp(total / static_cast<double>(tokens));
}

inline double forced_perplexity_alignment(const TranslationModel& model,
                                          const AlignmentLayer& layer,
                                          const EncodedCorpus& corpus,
                                          std::size_t limit = 0) {
  std::size_t n = limit == 0 ? corpus.size() : std::min(limit, corpus.size());
  double total = 0;
  std::size_t tokens = 0;
  for (std::size_t i = 0; i < n; ++i) {
    auto ctx = frozen_pass(model, corpus.src[i], corpus.tgt[i]);
    auto fwd = alignment_forward(layer, ctx.align_kv, ctx.dec_states);
    total += static_cast<double>(
        cross_entropy(fwd.vocab_logits, corpus.tgt[i]).at(0, 0));
    tokens += corpus.tgt[i].size();
  }
  return std::exp(total / static_cast<double>(tokens));
}

}  // namespace nalign
