#pragma once

// The downscaled transformer translation model, the single-head alignment
// layer on top of it (autoregressive and full-context variants), argmax link
// extraction, and the NALN checkpoint format.

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "nalign/align_set.hpp"
#include "nalign/common.hpp"
#include "nalign/data.hpp"
#include "nalign/rng.hpp"
#include "nalign/tensor.hpp"

namespace nalign {

using Real = float;
using TensorF = Tensor<Real>;

// ---------------------------------------------------------------------------
// Configuration

struct ModelConfig {
  std::size_t embedding_size = 64;
  std::size_t hidden_units = 256;  // feed-forward width
  std::size_t encoder_layers = 2;
  std::size_t decoder_layers = 1;
  std::size_t heads = 4;
  std::size_t align_heads = 1;
  std::size_t align_hidden = 32;  // alignment-layer attention width
  double dropout = 0.1;
  std::size_t src_vocab = 0;
  std::size_t tgt_vocab = 0;
  std::size_t max_len = 256;

  // Hyperparameters used in the reference experiments.
  static ModelConfig paper_scale() {
    ModelConfig c;
    c.embedding_size = 256;
    c.hidden_units = 512;
    c.encoder_layers = 6;
    c.decoder_layers = 3;
    c.heads = 8;
    c.align_hidden = 256;
    return c;
  }

  std::size_t head_dim() const { return embedding_size / heads; }

  void validate() const {
    if (embedding_size == 0 || hidden_units == 0 || encoder_layers == 0 ||
        decoder_layers == 0 || heads == 0 || align_hidden == 0)
      throw ContractError("model config: sizes must be positive");
    if (embedding_size % heads != 0)
      throw ContractError("model config: embedding size " +
                          std::to_string(embedding_size) +
                          " not divisible by " + std::to_string(heads) +
                          " heads");
    if (src_vocab < 3 || tgt_vocab < 3)
      throw ContractError("model config: vocabularies not set");
    if (dropout < 0.0 || dropout >= 1.0)
      throw ContractError("model config: dropout must be in [0, 1)");
  }
};

// ---------------------------------------------------------------------------
// Parameter blocks

struct LayerNormParams {
  TensorF gain, bias;
};

struct AttentionParams {
  TensorF wq, wk, wv, wo;
};

struct FfnParams {
  TensorF w1, b1, w2, b2;
};

struct EncoderLayerParams {
  LayerNormParams ln1, ln2;
  AttentionParams self;
  FfnParams ffn;
};

struct DecoderLayerParams {
  LayerNormParams ln1, ln2, ln3;
  AttentionParams self, cross;
  FfnParams ffn;
};

namespace detail {

inline TensorF init_fan_in(std::size_t rows, std::size_t cols,
                           RngStream& rng) {
  Real bound = static_cast<Real>(1.0 / std::sqrt(static_cast<double>(rows)));
  auto t = TensorF::uniform(rows, cols, rng, -bound, bound);
  t.set_requires_grad(true);
  return t;
}

inline TensorF init_zeros(std::size_t rows, std::size_t cols) {
  auto t = TensorF::zeros(rows, cols);
  t.set_requires_grad(true);
  return t;
}

inline LayerNormParams init_ln(std::size_t d) {
  LayerNormParams p;
  p.gain = TensorF::full(1, d, Real(1));
  p.gain.set_requires_grad(true);
  p.bias = init_zeros(1, d);
  return p;
}

inline AttentionParams init_att(std::size_t d, RngStream& rng) {
  AttentionParams p;
  p.wq = init_fan_in(d, d, rng);
  p.wk = init_fan_in(d, d, rng);
  p.wv = init_fan_in(d, d, rng);
  p.wo = init_fan_in(d, d, rng);
  return p;
}

inline FfnParams init_ffn(std::size_t d, std::size_t h, RngStream& rng) {
  FfnParams p;
  p.w1 = init_fan_in(d, h, rng);
  p.b1 = init_zeros(1, h);
  p.w2 = init_fan_in(h, d, rng);
  p.b2 = init_zeros(1, d);
  return p;
}

}  // namespace detail

enum class Direction { kForward, kBackward };

inline const char* direction_name(Direction d) {
  return d == Direction::kForward ? "fwd" : "bwd";
}

// ---------------------------------------------------------------------------
// Translation model

struct TranslationModel {
  ModelConfig cfg;
  Direction direction = Direction::kForward;

  TensorF src_emb, tgt_emb;  // vocab x emb
  std::vector<EncoderLayerParams> encoder;
  LayerNormParams encoder_ln;
  std::vector<DecoderLayerParams> decoder;
  LayerNormParams decoder_ln;
  TensorF out_w, out_b;  // emb x vocab, 1 x vocab

  bool frozen = false;

  TranslationModel() = default;

  TranslationModel(ModelConfig config, Direction dir, std::uint64_t seed)
      : cfg(config), direction(dir) {
    cfg.validate();
    RngStream rng(seed, 10);
    std::size_t d = cfg.embedding_size;
    src_emb = detail::init_fan_in(cfg.src_vocab, d, rng);
    tgt_emb = detail::init_fan_in(cfg.tgt_vocab, d, rng);
    for (std::size_t l = 0; l < cfg.encoder_layers; ++l) {
      EncoderLayerParams p;
      p.ln1 = detail::init_ln(d);
      p.self = detail::init_att(d, rng);
      p.ln2 = detail::init_ln(d);
      p.ffn = detail::init_ffn(d, cfg.hidden_units, rng);
      encoder.push_back(std::move(p));
    }
    encoder_ln = detail::init_ln(d);
    for (std::size_t l = 0; l < cfg.decoder_layers; ++l) {
      DecoderLayerParams p;
      p.ln1 = detail::init_ln(d);
      p.self = detail::init_att(d, rng);
      p.ln2 = detail::init_ln(d);
      p.cross = detail::init_att(d, rng);
      p.ln3 = detail::init_ln(d);
      p.ffn = detail::init_ffn(d, cfg.hidden_units, rng);
      decoder.push_back(std::move(p));
    }
    decoder_ln = detail::init_ln(d);
    out_w = detail::init_fan_in(d, cfg.tgt_vocab, rng);
    out_b = detail::init_zeros(1, cfg.tgt_vocab);
  }

  std::vector<std::pair<std::string, TensorF>> named_parameters() const {
    std::vector<std::pair<std::string, TensorF>> out;
    auto ln = [&out](const std::string& p, const LayerNormParams& l) {
      out.emplace_back(p + ".gain", l.gain);
      out.emplace_back(p + ".bias", l.bias);
    };
    auto att = [&out](const std::string& p, const AttentionParams& a) {
      out.emplace_back(p + ".wq", a.wq);
      out.emplace_back(p + ".wk", a.wk);
      out.emplace_back(p + ".wv", a.wv);
      out.emplace_back(p + ".wo", a.wo);
    };
    auto ffn = [&out](const std::string& p, const FfnParams& f) {
      out.emplace_back(p + ".w1", f.w1);
      out.emplace_back(p + ".b1", f.b1);
      out.emplace_back(p + ".w2", f.w2);
      out.emplace_back(p + ".b2", f.b2);
    };
    out.emplace_back("src_emb", src_emb);
    out.emplace_back("tgt_emb", tgt_emb);
    for (std::size_t l = 0; l < encoder.size(); ++l) {
      std::string p = "enc." + std::to_string(l);
      ln(p + ".ln1", encoder[l].ln1);
      att(p + ".self", encoder[l].self);
      ln(p + ".ln2", encoder[l].ln2);
      ffn(p + ".ffn", encoder[l].ffn);
    }
    ln("enc.final_ln", encoder_ln);
    for (std::size_t l = 0; l < decoder.size(); ++l) {
      std::string p = "dec." + std::to_string(l);
      ln(p + ".ln1", decoder[l].ln1);
      att(p + ".self", decoder[l].self);
      ln(p + ".ln2", decoder[l].ln2);
      att(p + ".cross", decoder[l].cross);
      ln(p + ".ln3", decoder[l].ln3);
      ffn(p + ".ffn", decoder[l].ffn);
    }
    ln("dec.final_ln", decoder_ln);
    out.emplace_back("out_w", out_w);
    out.emplace_back("out_b", out_b);
    return out;
  }

  std::vector<TensorF> parameters() const {
    std::vector<TensorF> out;
    for (auto& [name, t] : named_parameters()) out.push_back(t);
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : parameters()) n += p.numel();
    return n;
  }

  void freeze() {
    for (auto& p : parameters()) p.set_requires_grad(false);
    frozen = true;
  }

  std::uint64_t checksum() const {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (const auto& [name, t] : named_parameters()) {
      h = fnv1a64(name, h);
      h = fnv1a64(t.values().data(), t.values().size() * sizeof(Real), h);
    }
    return h;
  }
};

// ---------------------------------------------------------------------------
// Attention building blocks

// Scaled dot-product logits: Q K^T / sqrt(d), rows are query positions.
template <typename T>
Tensor<T> att_logits(const Tensor<T>& q, const Tensor<T>& k) {
  if (q.cols() != k.cols())
    throw ShapeError("att_logits: key width mismatch: " + q.shape_str() +
                     " vs " + k.shape_str());
  return scale(matmul(q, transpose(k)),
               static_cast<T>(1.0 / std::sqrt(static_cast<double>(q.cols()))));
}

// Row-stochastic attention weights.
template <typename T>
Tensor<T> att_probs(const Tensor<T>& logits) {
  return softmax(logits, 1);
}

// Mixture of values under the attention weights.
template <typename T>
Tensor<T> att_apply(const Tensor<T>& probs, const Tensor<T>& values) {
  return matmul(probs, values);
}

namespace detail {

inline TensorF causal_mask(std::size_t len) {
  TensorF m(len, len);
  for (std::size_t i = 0; i < len; ++i)
    for (std::size_t j = i + 1; j < len; ++j) m.at(i, j) = Real(-1e9);
  return m;
}

inline TensorF positional_encoding(std::size_t len, std::size_t d) {
  TensorF pe(len, d);
  for (std::size_t pos = 0; pos < len; ++pos)
    for (std::size_t i = 0; i < d; ++i) {
      double angle = static_cast<double>(pos) /
                     std::pow(10000.0, 2.0 * (i / 2) / static_cast<double>(d));
      pe.at(pos, i) = static_cast<Real>(i % 2 == 0 ? std::sin(angle)
                                                   : std::cos(angle));
    }
  return pe;
}

inline TensorF maybe_dropout(const TensorF& x, double rate, RngStream* rng) {
  if (!rng || rate <= 0.0) return x;
  return dropout(x, rate, *rng);
}

inline TensorF multi_head_attention(const AttentionParams& p,
                                    const TensorF& q_in, const TensorF& kv_in,
                                    std::size_t heads, bool causal) {
  auto q = matmul(q_in, p.wq);
  auto k = matmul(kv_in, p.wk);
  auto v = matmul(kv_in, p.wv);
  auto qs = split_cols(q, heads);
  auto ks = split_cols(k, heads);
  auto vs = split_cols(v, heads);
  TensorF mask;
  if (causal) mask = causal_mask(q_in.rows());
  std::vector<TensorF> ctx;
  ctx.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    auto logits = att_logits(qs[h], ks[h]);
    if (causal) logits = add(logits, mask);
    ctx.push_back(att_apply(att_probs(logits), vs[h]));
  }
  return matmul(concat_cols(ctx), p.wo);
}

inline TensorF embed_sequence(const TensorF& table, const std::vector<int>& ids,
                              std::size_t max_len, double drop_rate,
                              RngStream* rng) {
  if (ids.empty()) throw ContractError("embed: empty sequence");
  if (ids.size() > max_len)
    throw ContractError("embed: sequence of length " +
                        std::to_string(ids.size()) +
                        " exceeds configured maximum " +
                        std::to_string(max_len));
  std::size_t d = table.cols();
  auto emb = scale(embedding_lookup(table, ids),
                   static_cast<Real>(std::sqrt(static_cast<double>(d))));
  auto pe = positional_encoding(ids.size(), d);
  return maybe_dropout(add(emb, pe), drop_rate, rng);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Encoder / decoder forward passes

struct EncodeResult {
  TensorF encoder_out;  // (n+1) x emb, includes the EOS row
  TensorF embeddings;   // scaled token embeddings + positional encoding
  TensorF align_kv;     // embeddings + encoder_out, keys/values for alignment
};

// Dropout is active iff `rng` is given (training mode).
inline EncodeResult encode(const TranslationModel& model,
                           const std::vector<int>& src_ids,
                           RngStream* rng = nullptr) {
  if (src_ids.empty()) throw ContractError("encode: empty source sequence");
  if (src_ids.back() != Vocab::kEos)
    throw ContractError("encode: source sequence must end with EOS");
  double p = model.cfg.dropout;
  auto x = detail::embed_sequence(model.src_emb, src_ids, model.cfg.max_len,
                                  p, rng);
  TensorF embeddings = x;
  for (const auto& layer : model.encoder) {
    auto n1 = layer_norm(x, layer.ln1.gain, layer.ln1.bias);
    auto h = detail::multi_head_attention(layer.self, n1, n1, model.cfg.heads,
                                          false);
    x = add(x, detail::maybe_dropout(h, p, rng));
    auto n2 = layer_norm(x, layer.ln2.gain, layer.ln2.bias);
    auto f = matmul(relu(add_rowwise(matmul(n2, layer.ffn.w1), layer.ffn.b1)),
                    layer.ffn.w2);
    f = add_rowwise(f, layer.ffn.b2);
    x = add(x, detail::maybe_dropout(f, p, rng));
  }
  EncodeResult out;
  out.encoder_out = layer_norm(x, model.encoder_ln.gain, model.encoder_ln.bias);
  out.embeddings = embeddings;
  out.align_kv = add(out.embeddings, out.encoder_out);
  return out;
}

struct DecodeResult {
  TensorF states;  // (m+1) x emb, top decoder layer after final norm
  TensorF logits;  // (m+1) x tgt_vocab
};

// Forced decoding over the observed target (which must end with EOS). The
// decoder input is the EOS-started shift of `tgt_ids`, so row t predicts
// tgt_ids[t] under a causal mask.
inline DecodeResult decode_translation(const TranslationModel& model,
                                       const TensorF& encoder_out,
                                       const std::vector<int>& tgt_ids,
                                       RngStream* rng = nullptr) {
  if (tgt_ids.empty()) throw ContractError("decode: empty target sequence");
  if (tgt_ids.back() != Vocab::kEos)
    throw ContractError("decode: target sequence must end with EOS");
  std::vector<int> input(tgt_ids.size());
  input[0] = Vocab::kEos;
  for (std::size_t i = 1; i < tgt_ids.size(); ++i) input[i] = tgt_ids[i - 1];
  double p = model.cfg.dropout;
  auto x = detail::embed_sequence(model.tgt_emb, input, model.cfg.max_len, p,
                                  rng);
  for (const auto& layer : model.decoder) {
    auto n1 = layer_norm(x, layer.ln1.gain, layer.ln1.bias);
    auto h = detail::multi_head_attention(layer.self, n1, n1, model.cfg.heads,
                                          true);
    x = add(x, detail::maybe_dropout(h, p, rng));
    auto n2 = layer_norm(x, layer.ln2.gain, layer.ln2.bias);
    auto cr = detail::multi_head_attention(layer.cross, n2, encoder_out,
                                           model.cfg.heads, false);
    x = add(x, detail::maybe_dropout(cr, p, rng));
    auto n3 = layer_norm(x, layer.ln3.gain, layer.ln3.bias);
    auto f = matmul(relu(add_rowwise(matmul(n3, layer.ffn.w1), layer.ffn.b1)),
                    layer.ffn.w2);
    f = add_rowwise(f, layer.ffn.b2);
    x = add(x, detail::maybe_dropout(f, p, rng));
  }
  DecodeResult out;
  out.states = layer_norm(x, model.decoder_ln.gain, model.decoder_ln.bias);
  out.logits = add_rowwise(matmul(out.states, model.out_w), model.out_b);
  return out;
}

// ---------------------------------------------------------------------------
// Alignment layer

struct AlignmentLayerConfig {
  std::size_t model_dim = 64;
  std::size_t hidden = 32;
  std::size_t vocab = 0;
  bool full_context = false;
};

struct AlignmentLayer {
  AlignmentLayerConfig cfg;

  // unmasked self-attention sublayer (full-context variant only)
  LayerNormParams self_ln;
  TensorF self_wq, self_wk, self_wv, self_wo;
  // single-head cross attention
  TensorF wq, wk, wv;  // model_dim x hidden
  // vocab projection from the context vector
  TensorF out_w, out_b;  // hidden x vocab, 1 x vocab

  AlignmentLayer() = default;

  AlignmentLayer(AlignmentLayerConfig config, std::uint64_t seed)
      : cfg(config) {
    if (cfg.model_dim == 0 || cfg.hidden == 0 || cfg.vocab < 3)
      throw ContractError("alignment layer config: sizes must be positive");
    RngStream rng(seed, 11);
    std::size_t d = cfg.model_dim, h = cfg.hidden;
    if (cfg.full_context) {
      self_ln = detail::init_ln(d);
      self_wq = detail::init_fan_in(d, h, rng);
      self_wk = detail::init_fan_in(d, h, rng);
      self_wv = detail::init_fan_in(d, h, rng);
      self_wo = detail::init_fan_in(h, d, rng);
    }
    wq = detail::init_fan_in(d, h, rng);
    wk = detail::init_fan_in(d, h, rng);
    wv = detail::init_fan_in(d, h, rng);
    out_w = detail::init_fan_in(h, cfg.vocab, rng);
    out_b = detail::init_zeros(1, cfg.vocab);
  }

  std::vector<std::pair<std::string, TensorF>> named_parameters() const {
    std::vector<std::pair<std::string, TensorF>> out;
    if (cfg.full_context) {
      out.emplace_back("self_ln.gain", self_ln.gain);
      out.emplace_back("self_ln.bias", self_ln.bias);
      out.emplace_back("self_wq", self_wq);
      out.emplace_back("self_wk", self_wk);
      out.emplace_back("self_wv", self_wv);
      out.emplace_back("self_wo", self_wo);
    }
    out.emplace_back("wq", wq);
    out.emplace_back("wk", wk);
    out.emplace_back("wv", wv);
    out.emplace_back("out_w", out_w);
    out.emplace_back("out_b", out_b);
    return out;
  }

  std::vector<TensorF> parameters() const {
    std::vector<TensorF> out;
    for (auto& [name, t] : named_parameters()) out.push_back(t);
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : parameters()) n += p.numel();
    return n;
  }
};

// Attention state for one sentence pair: logits and probabilities stored
// source-major (source positions as rows, target positions as columns, both
// including the EOS row/column). Every column of `probs` sums to 1.
struct AttentionState {
  TensorF logits;
  TensorF probs;
  std::size_t n_src = 0;  // real source tokens, EOS excluded
  std::size_t m_tgt = 0;  // real target tokens, EOS excluded
  bool includes_eos = true;
};

struct AlignmentForward {
  AttentionState att;
  TensorF logits_tm;     // target-major attention logits (graph-connected)
  TensorF probs_tm;      // target-major attention probabilities
  TensorF vocab_logits;  // (m+1) x vocab, graph-connected
  TensorF log_probs;     // detached log softmax of vocab_logits
};

// Runs the alignment layer on frozen source keys/values and decoder states.
// With `logit_dropout` > 0 and an rng, position-wise dropout is applied to
// the attention logits before the softmax (training only).
inline AlignmentForward alignment_forward(const AlignmentLayer& layer,
                                          const TensorF& src_kv,
                                          const TensorF& dec_states,
                                          double logit_dropout = 0.0,
                                          RngStream* rng = nullptr) {
  if (src_kv.cols() != layer.cfg.model_dim ||
      dec_states.cols() != layer.cfg.model_dim)
    throw ShapeError("alignment_forward: expected width " +
                     std::to_string(layer.cfg.model_dim) + ", got kv " +
                     src_kv.shape_str() + " and states " +
                     dec_states.shape_str());
  TensorF q_in = dec_states;
  if (layer.cfg.full_context) {
    // unmasked self-attention over all decoder states (future included)
    auto n = layer_norm(q_in, layer.self_ln.gain, layer.self_ln.bias);
    auto q = matmul(n, layer.self_wq);
    auto k = matmul(n, layer.self_wk);
    auto v = matmul(n, layer.self_wv);
    auto ctx = att_apply(att_probs(att_logits(q, k)), v);
    q_in = add(q_in, matmul(ctx, layer.self_wo));
  }
  auto q = matmul(q_in, layer.wq);
  auto k = matmul(src_kv, layer.wk);
  auto v = matmul(src_kv, layer.wv);
  auto logits_tm = att_logits(q, k);  // (m+1) x (n+1)
  if (rng && logit_dropout > 0.0)
    logits_tm = dropout(logits_tm, logit_dropout, *rng);
  auto probs_tm = att_probs(logits_tm);
  auto context = att_apply(probs_tm, v);
  AlignmentForward out;
  out.logits_tm = logits_tm;
  out.probs_tm = probs_tm;
  out.vocab_logits = add_rowwise(matmul(context, layer.out_w), layer.out_b);
  out.att.logits = transpose(logits_tm);
  out.att.probs = transpose(probs_tm);
  out.att.n_src = src_kv.rows() - 1;
  out.att.m_tgt = dec_states.rows() - 1;
  out.att.includes_eos = true;
  // detached per-row log softmax for reporting
  {
    std::size_t r = out.vocab_logits.rows(), c = out.vocab_logits.cols();
    out.log_probs = TensorF(r, c);
    for (std::size_t i = 0; i < r; ++i) {
      Real mx = out.vocab_logits.at(i, 0);
      for (std::size_t j = 1; j < c; ++j)
        mx = std::max(mx, out.vocab_logits.at(i, j));
      double sum = 0;
      for (std::size_t j = 0; j < c; ++j)
        sum += std::exp(static_cast<double>(out.vocab_logits.at(i, j) - mx));
      Real lse = mx + static_cast<Real>(std::log(sum));
      for (std::size_t j = 0; j < c; ++j)
        out.log_probs.at(i, j) = out.vocab_logits.at(i, j) - lse;
    }
  }
  return out;
}

// Frozen-model states for one sentence pair (eval mode, no dropout).
struct SentenceContext {
  TensorF align_kv;
  TensorF dec_states;
  TensorF dec_logits;
};

inline SentenceContext frozen_pass(const TranslationModel& model,
                                   const std::vector<int>& src_ids,
                                   const std::vector<int>& tgt_ids) {
  auto enc = encode(model, src_ids);
  auto dec = decode_translation(model, enc.encoder_out, tgt_ids);
  return {enc.align_kv, dec.states, dec.logits};
}

// One link per real target token, chosen by the argmax source position of
// its attention column. Columns whose argmax lands on the source EOS row
// stay unaligned. Ties resolve to the smallest source index.
inline AlignmentSet extract_argmax_links(const AttentionState& state) {
  AlignmentSet out;
  const TensorF& a = state.probs;
  std::size_t rows = a.rows();
  std::size_t cols = state.includes_eos ? state.m_tgt : a.cols();
  std::size_t eos_row = state.includes_eos ? rows - 1 : rows;
  for (std::size_t t = 0; t < cols; ++t) {
    std::size_t best = 0;
    Real bv = a.at(0, t);
    for (std::size_t s = 1; s < rows; ++s)
      if (a.at(s, t) > bv) {
        bv = a.at(s, t);
        best = s;
      }
    if (best == eos_row) continue;  // unaligned target token
    out.insert_sure(static_cast<int>(best) + 1, static_cast<int>(t) + 1);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints: magic "NALN", u32 version, little-endian; a manifest of named
// tensors (name, dtype code, shape) followed by raw 32-bit values in
// manifest order.

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  TensorF tensor;
};

namespace detail {

inline void put_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t get_u32(std::istream& in, const std::string& path) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4))
    throw DataError("checkpoint '" + path + "' is truncated");
  return static_cast<std::uint32_t>(b[0]) |
         (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) |
         (static_cast<std::uint32_t>(b[3]) << 24);
}

inline void put_f32(std::ostream& out, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(out, bits);
}

inline float get_f32(std::istream& in, const std::string& path) {
  std::uint32_t bits = get_u32(in, path);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

}  // namespace detail

inline void save_checkpoint(const std::string& path,
                            const std::vector<NamedTensor>& items) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint '" + path + "'");
  out.write("NALN", 4);
  detail::put_u32(out, kCheckpointVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(items.size()));
  for (const auto& item : items) {
    detail::put_u32(out, static_cast<std::uint32_t>(item.name.size()));
    out.write(item.name.data(),
              static_cast<std::streamsize>(item.name.size()));
    out.put(0);  // dtype code: f32
    detail::put_u32(out, 2);
    detail::put_u32(out, static_cast<std::uint32_t>(item.tensor.rows()));
    detail::put_u32(out, static_cast<std::uint32_t>(item.tensor.cols()));
  }
  for (const auto& item : items)
    for (float v : item.tensor.values()) detail::put_f32(out, v);
  if (!out) throw DataError("failed writing checkpoint '" + path + "'");
}

inline std::vector<NamedTensor> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint '" + path + "'");
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, "NALN", 4) != 0)
    throw DataError("'" + path + "' is not a NALN checkpoint");
  std::uint32_t version = detail::get_u32(in, path);
  if (version != kCheckpointVersion)
    throw DataError("checkpoint '" + path + "' has unsupported version " +
                    std::to_string(version));
  std::uint32_t count = detail::get_u32(in, path);
  std::vector<NamedTensor> items;
  items.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    std::uint32_t name_len = detail::get_u32(in, path);
    std::string name(name_len, '\0');
    if (!in.read(name.data(), name_len))
      throw DataError("checkpoint '" + path + "' is truncated");
    int dtype = in.get();
    if (dtype != 0)
      throw DataError("checkpoint '" + path + "': unsupported dtype code " +
                      std::to_string(dtype));
    std::uint32_t ndim = detail::get_u32(in, path);
    if (ndim != 2)
      throw DataError("checkpoint '" + path + "': expected rank-2 tensors");
    std::uint32_t rows = detail::get_u32(in, path);
    std::uint32_t cols = detail::get_u32(in, path);
    items.push_back({std::move(name), TensorF(rows, cols)});
  }
  for (auto& item : items)
    for (auto& v : item.tensor.values()) v = detail::get_f32(in, path);
  return items;
}

namespace detail {

inline NamedTensor meta_scalar(const std::string& name, double v) {
  return {name, TensorF::scalar(static_cast<Real>(v))};
}

class TensorDict {
 public:
  TensorDict(std::vector<NamedTensor> items, std::string path)
      : items_(std::move(items)), path_(std::move(path)) {}

  const TensorF& get(const std::string& name) const {
    for (const auto& item : items_)
      if (item.name == name) return item.tensor;
    throw DataError("checkpoint '" + path_ + "' is missing tensor '" + name +
                    "'");
  }

  double value(const std::string& name) const {
    return static_cast<double>(get(name).at(0, 0));
  }

  void copy_into(const std::string& name, TensorF dst) const {
    const TensorF& src = get(name);
    if (src.rows() != dst.rows() || src.cols() != dst.cols())
      throw DataError("checkpoint '" + path_ + "': tensor '" + name +
                      "' has shape " + src.shape_str() + ", expected " +
                      dst.shape_str());
    dst.values() = src.values();
  }

 private:
  std::vector<NamedTensor> items_;
  std::string path_;
};

}  // namespace detail

inline void save_translation_model(const std::string& path,
                                   const TranslationModel& model) {
  std::vector<NamedTensor> items;
  items.push_back(detail::meta_scalar("meta.kind", 0));
  items.push_back(detail::meta_scalar(
      "meta.direction", model.direction == Direction::kForward ? 0 : 1));
  items.push_back(detail::meta_scalar("cfg.embedding_size",
                                      static_cast<double>(model.cfg.embedding_size)));
  items.push_back(detail::meta_scalar("cfg.hidden_units",
                                      static_cast<double>(model.cfg.hidden_units)));
  items.push_back(detail::meta_scalar("cfg.encoder_layers",
                                      static_cast<double>(model.cfg.encoder_layers)));
  items.push_back(detail::meta_scalar("cfg.decoder_layers",
                                      static_cast<double>(model.cfg.decoder_layers)));
  items.push_back(detail::meta_scalar("cfg.heads",
                                      static_cast<double>(model.cfg.heads)));
  items.push_back(detail::meta_scalar("cfg.align_hidden",
                                      static_cast<double>(model.cfg.align_hidden)));
  items.push_back(detail::meta_scalar("cfg.dropout", model.cfg.dropout));
  items.push_back(detail::meta_scalar("cfg.src_vocab",
                                      static_cast<double>(model.cfg.src_vocab)));
  items.push_back(detail::meta_scalar("cfg.tgt_vocab",
                                      static_cast<double>(model.cfg.tgt_vocab)));
  items.push_back(detail::meta_scalar("cfg.max_len",
                                      static_cast<double>(model.cfg.max_len)));
  for (const auto& [name, t] : model.named_parameters())
    items.push_back({name, t});
  save_checkpoint(path, items);
}

inline TranslationModel load_translation_model(const std::string& path,
                                               bool freeze = true) {
  detail::TensorDict dict(load_checkpoint(path), path);
  if (dict.value("meta.kind") != 0)
    throw DataError("checkpoint '" + path +
                    "' is not a translation model; pass the output of "
                    "train-translation");
  ModelConfig cfg;
  cfg.embedding_size = static_cast<std::size_t>(dict.value("cfg.embedding_size"));
  cfg.hidden_units = static_cast<std::size_t>(dict.value("cfg.hidden_units"));
  cfg.encoder_layers = static_cast<std::size_t>(dict.value("cfg.encoder_layers"));
  cfg.decoder_layers = static_cast<std::size_t>(dict.value("cfg.decoder_layers"));
  cfg.heads = static_cast<std::size_t>(dict.value("cfg.heads"));
  cfg.align_hidden = static_cast<std::size_t>(dict.value("cfg.align_hidden"));
  cfg.dropout = dict.value("cfg.dropout");
  cfg.src_vocab = static_cast<std::size_t>(dict.value("cfg.src_vocab"));
  cfg.tgt_vocab = static_cast<std::size_t>(dict.value("cfg.tgt_vocab"));
  cfg.max_len = static_cast<std::size_t>(dict.value("cfg.max_len"));
  Direction dir = dict.value("meta.direction") == 0 ? Direction::kForward
                                                    : Direction::kBackward;
  TranslationModel model(cfg, dir, 0);
  for (const auto& [name, t] : model.named_parameters())
    dict.copy_into(name, t);
  if (freeze) model.freeze();
  return model;
}

inline void save_alignment_layer(const std::string& path,
                                 const AlignmentLayer& layer) {
  std::vector<NamedTensor> items;
  items.push_back(detail::meta_scalar("meta.kind", 1));
  items.push_back(detail::meta_scalar("cfg.model_dim",
                                      static_cast<double>(layer.cfg.model_dim)));
  items.push_back(detail::meta_scalar("cfg.hidden",
                                      static_cast<double>(layer.cfg.hidden)));
  items.push_back(detail::meta_scalar("cfg.vocab",
                                      static_cast<double>(layer.cfg.vocab)));
  items.push_back(detail::meta_scalar("cfg.full_context",
                                      layer.cfg.full_context ? 1 : 0));
  for (const auto& [name, t] : layer.named_parameters())
    items.push_back({name, t});
  save_checkpoint(path, items);
}

inline AlignmentLayer load_alignment_layer(const std::string& path) {
  detail::TensorDict dict(load_checkpoint(path), path);
  if (dict.value("meta.kind") != 1)
    throw DataError("checkpoint '" + path +
                    "' is not an alignment layer; pass the output of "
                    "train-align-layer or guided-train");
  AlignmentLayerConfig cfg;
  cfg.model_dim = static_cast<std::size_t>(dict.value("cfg.model_dim"));
  cfg.hidden = static_cast<std::size_t>(dict.value("cfg.hidden"));
  cfg.vocab = static_cast<std::size_t>(dict.value("cfg.vocab"));
  cfg.full_context = dict.value("cfg.full_context") != 0;
  AlignmentLayer layer(cfg, 0);
  for (const auto& [name, t] : layer.named_parameters())
    dict.copy_into(name, t);
  return layer;
}

}  // namespace nalign
