#pragma once

// Staged pipeline: translation training, alignment-layer training,
// (attention-optimized) alignment, bidirectional optimization, guided
// training, symmetrization and evaluation, plus the flat key = value
// configuration format and per-stage run manifests.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "nalign/attopt.hpp"
#include "nalign/common.hpp"
#include "nalign/data.hpp"
#include "nalign/eval.hpp"
#include "nalign/model.hpp"
#include "nalign/objectives.hpp"
#include "nalign/symmetrize.hpp"
#include "nalign/tensor.hpp"

namespace nalign {

// ---------------------------------------------------------------------------
// Translation training

struct TranslationTrainConfig {
  std::size_t updates = 400;
  std::size_t batch_tokens = 1000;
  double peak_lr = 3e-3;
  std::size_t warmup = 40;
  std::uint64_t seed = 1;
};

// Standard seq2seq training: token-mean cross entropy, Adam with linear
// warmup and inverse-sqrt decay, dropout from the model config. A fixed
// number of updates, no early stopping.
inline std::vector<double> train_translation(TranslationModel& model,
                                             const EncodedCorpus& corpus,
                                             const TranslationTrainConfig& cfg) {
  if (model.frozen)
    throw ContractError("train_translation: model is frozen");
  if (corpus.size() == 0) throw DataError("train_translation: empty corpus");
  auto params = model.parameters();
  OptimizerState<Real> opt;
  opt.peak_lr = cfg.peak_lr;
  opt.warmup = cfg.warmup;
  detail::BatchIterator batches(corpus.size(), cfg.seed);
  RngStream dropout_rng(cfg.seed, 22);
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
    Real inv_tokens = static_cast<Real>(1.0 / static_cast<double>(tokens));
    double batch_loss = 0;
    for (std::size_t i : batch) {
      GradGraph<Real> graph;
      auto enc = encode(model, corpus.src[i], &dropout_rng);
      auto dec = decode_translation(model, enc.encoder_out, corpus.tgt[i],
                                    &dropout_rng);
      auto loss = scale(cross_entropy(dec.logits, corpus.tgt[i]), inv_tokens);
      graph.backward(loss);
      batch_loss += static_cast<double>(loss.at(0, 0));
    }
    detail::check_finite_loss(batch_loss, "train_translation", update);
    adam_step(params, opt, opt.scheduled_lr());
    zero_grads(params);
    trace.push_back(batch_loss);
  }
  return trace;
}

// Forced-decoding next-token argmax accuracy (EOS predictions included).
inline double forced_decoding_accuracy(const TranslationModel& model,
                                       const EncodedCorpus& corpus,
                                       std::size_t limit = 0) {
  std::size_t n = limit == 0 ? corpus.size() : std::min(limit, corpus.size());
  std::size_t hits = 0, total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    auto ctx = frozen_pass(model, corpus.src[i], corpus.tgt[i]);
    for (std::size_t t = 0; t < corpus.tgt[i].size(); ++t) {
      std::size_t best = 0;
      Real bv = ctx.dec_logits.at(t, 0);
      for (std::size_t j = 1; j < ctx.dec_logits.cols(); ++j)
        if (ctx.dec_logits.at(t, j) > bv) {
          bv = ctx.dec_logits.at(t, j);
          best = j;
        }
      hits += best == static_cast<std::size_t>(corpus.tgt[i][t]) ? 1 : 0;
      ++total;
    }
  }
  return static_cast<double>(hits) / static_cast<double>(total);
}

// ---------------------------------------------------------------------------
// Pipeline configuration (flat "section.key = value" text, CLI overrides)

struct PipelineConfig {
  ModelConfig model;

  std::size_t train_updates = 400;
  double train_peak_lr = 3e-3;
  std::size_t train_warmup = 40;

  std::size_t align_updates = 150;
  double align_peak_lr = 3e-3;
  std::size_t align_warmup = 15;

  std::size_t guided_updates = 150;
  double guided_peak_lr = 1e-2;
  std::size_t guided_warmup = 15;

  std::size_t batch_tokens = 1000;

  ContiguityConfig contiguity;  // training-time contiguity (lambda 1.0)

  int opt_steps = -1;          // -1: 3 without contiguity, 10 with
  double opt_learning_rate = 1.0;
  double opt_lambda = 1.0;     // unidirectional attention optimization
  double bidir_lambda = 5.0;   // joint bidirectional optimization
  bool opt_include_eos_ce = true;

  SynthConfig synth;

  std::uint64_t seed = 1;
  unsigned workers = 2;
  Indexing indexing = Indexing::kZeroBased;

  OptConfig opt_config(bool bidirectional) const {
    OptConfig c;
    c.learning_rate = opt_learning_rate;
    c.lambda = bidirectional ? bidir_lambda : opt_lambda;
    c.steps = opt_steps >= 0 ? opt_steps : (c.lambda > 0.0 ? 10 : 3);
    c.include_eos_ce = opt_include_eos_ce;
    c.contiguity = contiguity;
    return c;
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  std::istringstream ss(value);
  T out;
  ss >> out;
  if (ss.fail() || !ss.eof())
    throw UsageError("config: bad value '" + value + "' for " + key);
  return out;
}

}  // namespace detail

inline void apply_config_entry(PipelineConfig& cfg, const std::string& key,
                               const std::string& value) {
  using detail::parse_number;
  auto num = [&](auto& field) {
    field = parse_number<std::decay_t<decltype(field)>>(key, value);
  };
  if (key == "model.embedding_size") num(cfg.model.embedding_size);
  else if (key == "model.hidden_units") num(cfg.model.hidden_units);
  else if (key == "model.encoder_layers") num(cfg.model.encoder_layers);
  else if (key == "model.decoder_layers") num(cfg.model.decoder_layers);
  else if (key == "model.heads") num(cfg.model.heads);
  else if (key == "model.align_hidden") num(cfg.model.align_hidden);
  else if (key == "model.dropout") num(cfg.model.dropout);
  else if (key == "model.max_len") num(cfg.model.max_len);
  else if (key == "train.updates") num(cfg.train_updates);
  else if (key == "train.peak_lr") num(cfg.train_peak_lr);
  else if (key == "train.warmup") num(cfg.train_warmup);
  else if (key == "align.updates") num(cfg.align_updates);
  else if (key == "align.peak_lr") num(cfg.align_peak_lr);
  else if (key == "align.warmup") num(cfg.align_warmup);
  else if (key == "guided.updates") num(cfg.guided_updates);
  else if (key == "guided.peak_lr") num(cfg.guided_peak_lr);
  else if (key == "guided.warmup") num(cfg.guided_warmup);
  else if (key == "batch_tokens") num(cfg.batch_tokens);
  else if (key == "contiguity.kernel") num(cfg.contiguity.kernel_size);
  else if (key == "contiguity.lambda") num(cfg.contiguity.lambda);
  else if (key == "contiguity.logit_dropout") num(cfg.contiguity.logit_dropout);
  else if (key == "contiguity.mask_eos") {
    int v;
    v = parse_number<int>(key, value);
    cfg.contiguity.mask_eos = v != 0;
  } else if (key == "opt.steps") num(cfg.opt_steps);
  else if (key == "opt.learning_rate") num(cfg.opt_learning_rate);
  else if (key == "opt.lambda") num(cfg.opt_lambda);
  else if (key == "opt.include_eos_ce") {
    int v = parse_number<int>(key, value);
    cfg.opt_include_eos_ce = v != 0;
  } else if (key == "bidir.lambda") num(cfg.bidir_lambda);
  else if (key == "synth.vocab") num(cfg.synth.vocab);
  else if (key == "synth.sentences") num(cfg.synth.sentences);
  else if (key == "synth.min_len") num(cfg.synth.min_len);
  else if (key == "synth.max_len") num(cfg.synth.max_len);
  else if (key == "synth.window") num(cfg.synth.reorder_window);
  else if (key == "synth.split_prob") num(cfg.synth.split_prob);
  else if (key == "seed") num(cfg.seed);
  else if (key == "workers") num(cfg.workers);
  else if (key == "indexing") {
    int v = parse_number<int>(key, value);
    if (v != 0 && v != 1) throw UsageError("config: indexing must be 0 or 1");
    cfg.indexing = v == 0 ? Indexing::kZeroBased : Indexing::kOneBased;
  } else {
    throw UsageError("config: unknown key '" + key + "'");
  }
}

inline void load_config_file(PipelineConfig& cfg, const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open config file '" + path + "'");
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto t = detail::trim(line);
    if (t.empty() || t[0] == '#') continue;
    auto eq = t.find('=');
    if (eq == std::string::npos)
      throw ParseError("config '" + path + "': expected key = value", lineno,
                       1);
    apply_config_entry(cfg, detail::trim(t.substr(0, eq)),
                       detail::trim(t.substr(eq + 1)));
  }
}

inline std::string serialize_config(const PipelineConfig& cfg) {
  char buf[64];
  auto fmt = [&buf](double v) {
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    return std::string(buf);
  };
  std::map<std::string, std::string> kv;
  kv["model.embedding_size"] = std::to_string(cfg.model.embedding_size);
  kv["model.hidden_units"] = std::to_string(cfg.model.hidden_units);
  kv["model.encoder_layers"] = std::to_string(cfg.model.encoder_layers);
  kv["model.decoder_layers"] = std::to_string(cfg.model.decoder_layers);
  kv["model.heads"] = std::to_string(cfg.model.heads);
  kv["model.align_hidden"] = std::to_string(cfg.model.align_hidden);
  kv["model.dropout"] = fmt(cfg.model.dropout);
  kv["model.max_len"] = std::to_string(cfg.model.max_len);
  kv["train.updates"] = std::to_string(cfg.train_updates);
  kv["train.peak_lr"] = fmt(cfg.train_peak_lr);
  kv["train.warmup"] = std::to_string(cfg.train_warmup);
  kv["align.updates"] = std::to_string(cfg.align_updates);
  kv["align.peak_lr"] = fmt(cfg.align_peak_lr);
  kv["align.warmup"] = std::to_string(cfg.align_warmup);
  kv["guided.updates"] = std::to_string(cfg.guided_updates);
  kv["guided.peak_lr"] = fmt(cfg.guided_peak_lr);
  kv["guided.warmup"] = std::to_string(cfg.guided_warmup);
  kv["batch_tokens"] = std::to_string(cfg.batch_tokens);
  kv["contiguity.kernel"] = std::to_string(cfg.contiguity.kernel_size);
  kv["contiguity.lambda"] = fmt(cfg.contiguity.lambda);
  kv["contiguity.logit_dropout"] = fmt(cfg.contiguity.logit_dropout);
  kv["contiguity.mask_eos"] = cfg.contiguity.mask_eos ? "1" : "0";
  kv["opt.steps"] = std::to_string(cfg.opt_steps);
  kv["opt.learning_rate"] = fmt(cfg.opt_learning_rate);
  kv["opt.lambda"] = fmt(cfg.opt_lambda);
  kv["opt.include_eos_ce"] = cfg.opt_include_eos_ce ? "1" : "0";
  kv["bidir.lambda"] = fmt(cfg.bidir_lambda);
  kv["synth.vocab"] = std::to_string(cfg.synth.vocab);
  kv["synth.sentences"] = std::to_string(cfg.synth.sentences);
  kv["synth.min_len"] = std::to_string(cfg.synth.min_len);
  kv["synth.max_len"] = std::to_string(cfg.synth.max_len);
  kv["synth.window"] = std::to_string(cfg.synth.reorder_window);
  kv["synth.split_prob"] = fmt(cfg.synth.split_prob);
  kv["seed"] = std::to_string(cfg.seed);
  kv["workers"] = std::to_string(cfg.workers);
  kv["indexing"] = cfg.indexing == Indexing::kZeroBased ? "0" : "1";
  std::string out;
  for (const auto& [k, v] : kv) out += k + " = " + v + "\n";
  return out;
}

inline std::uint64_t config_hash(const PipelineConfig& cfg) {
  return fnv1a64(serialize_config(cfg));
}

// Every stage output gets a "<output>.manifest" with the effective config
// hash, the seed, and the toolkit version.
inline void write_manifest(const std::string& output_path,
                           const std::string& command,
                           const PipelineConfig& cfg) {
  std::ofstream out(output_path + ".manifest", std::ios::binary);
  if (!out)
    throw DataError("cannot write manifest for '" + output_path + "'");
  char hex[32];
  std::snprintf(hex, sizeof(hex), "%016llx",
                static_cast<unsigned long long>(config_hash(cfg)));
  out << "command\t" << command << "\n";
  out << "config\t" << hex << "\n";
  out << "seed\t" << cfg.seed << "\n";
  out << "version\t" << kVersion << "\n";
}

// ---------------------------------------------------------------------------
// Stage helpers

inline void require_stage_input(const std::string& path,
                                const std::string& producing_stage) {
  if (!std::filesystem::exists(path))
    throw DataError("input '" + path + "' not found; produce it with '" +
                    producing_stage + "'");
}

struct LoadedModel {
  TranslationModel model;
  Vocab src_vocab;  // vocabulary of the model's own source side
  Vocab tgt_vocab;
};

inline void save_model_with_vocabs(const std::string& path,
                                   const TranslationModel& model,
                                   const Vocab& src_vocab,
                                   const Vocab& tgt_vocab) {
  save_translation_model(path, model);
  src_vocab.save(path + ".src.vocab");
  tgt_vocab.save(path + ".tgt.vocab");
}

inline LoadedModel load_model_with_vocabs(const std::string& path) {
  require_stage_input(path, "train-translation");
  LoadedModel out{load_translation_model(path), Vocab::load(path + ".src.vocab"),
                  Vocab::load(path + ".tgt.vocab")};
  return out;
}

// Encodes the corpus in the orientation the model expects. For a
// backward-direction model the corpus sides are swapped so that alignments
// can be transposed back into file orientation afterwards.
inline EncodedCorpus encode_for_model(const LoadedModel& lm,
                                      const Corpus& corpus) {
  const Corpus* c = &corpus;
  Corpus swapped;
  if (lm.model.direction == Direction::kBackward) {
    swapped = corpus.reversed();
    c = &swapped;
  }
  return EncodedCorpus::from(*c, lm.src_vocab, lm.tgt_vocab);
}

inline AlignmentSet transpose_links(const AlignmentSet& a) {
  AlignmentSet out;
  for (const auto& [s, t] : a.links) {
    if (a.sure.count({s, t}))
      out.insert_sure(t, s);
    else
      out.insert_possible(t, s);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Stage implementations (shared by the CLI and the test suites)

inline void stage_gen_synthetic(const PipelineConfig& cfg,
                                const std::string& out_prefix) {
  auto result = generate_synthetic(cfg.synth, cfg.seed);
  write_token_lines(out_prefix + ".src", result.corpus.src);
  write_token_lines(out_prefix + ".tgt", result.corpus.tgt);
  write_pharaoh(out_prefix + ".gold", result.gold, cfg.indexing);
  write_manifest(out_prefix, "gen-synthetic", cfg);
}

inline void stage_train_translation(const PipelineConfig& cfg,
                                    const std::string& src_path,
                                    const std::string& tgt_path,
                                    Direction direction,
                                    const std::string& out_path) {
  require_stage_input(src_path, "gen-synthetic (or provide a corpus)");
  require_stage_input(tgt_path, "gen-synthetic (or provide a corpus)");
  Corpus corpus = Corpus::load(src_path, tgt_path);
  if (direction == Direction::kBackward) corpus = corpus.reversed();
  Vocab src_vocab = Vocab::build(corpus.src);
  Vocab tgt_vocab = Vocab::build(corpus.tgt);
  ModelConfig mcfg = cfg.model;
  mcfg.src_vocab = src_vocab.size();
  mcfg.tgt_vocab = tgt_vocab.size();
  TranslationModel model(mcfg, direction, cfg.seed);
  auto corpus_ids = EncodedCorpus::from(corpus, src_vocab, tgt_vocab);
  TranslationTrainConfig tcfg;
  tcfg.updates = cfg.train_updates;
  tcfg.batch_tokens = cfg.batch_tokens;
  tcfg.peak_lr = cfg.train_peak_lr;
  tcfg.warmup = cfg.train_warmup;
  tcfg.seed = cfg.seed;
  train_translation(model, corpus_ids, tcfg);
  save_model_with_vocabs(out_path, model, src_vocab, tgt_vocab);
  write_manifest(out_path, "train-translation", cfg);
}

inline void stage_train_align_layer(const PipelineConfig& cfg,
                                    const std::string& model_path,
                                    const std::string& src_path,
                                    const std::string& tgt_path,
                                    const std::string& out_path) {
  auto lm = load_model_with_vocabs(model_path);
  require_stage_input(src_path, "gen-synthetic (or provide a corpus)");
  require_stage_input(tgt_path, "gen-synthetic (or provide a corpus)");
  auto corpus = encode_for_model(lm, Corpus::load(src_path, tgt_path));
  AlignmentLayerConfig lcfg;
  lcfg.model_dim = lm.model.cfg.embedding_size;
  lcfg.hidden = lm.model.cfg.align_hidden;
  lcfg.vocab = lm.model.cfg.tgt_vocab;
  AlignmentLayer layer(lcfg, cfg.seed + 1);
  LayerTrainConfig tcfg;
  tcfg.updates = cfg.align_updates;
  tcfg.batch_tokens = cfg.batch_tokens;
  tcfg.peak_lr = cfg.align_peak_lr;
  tcfg.warmup = cfg.align_warmup;
  tcfg.seed = cfg.seed;
  tcfg.contiguity = cfg.contiguity;
  train_alignment_layer(lm.model, layer, corpus, tcfg);
  save_alignment_layer(out_path, layer);
  write_manifest(out_path, "train-align-layer", cfg);
}

// Forward-pass argmax alignment, optionally preceded by attention
// optimization. Output links are always in corpus-file orientation.
inline void stage_align(const PipelineConfig& cfg,
                        const std::string& model_path,
                        const std::string& layer_path,
                        const std::string& src_path,
                        const std::string& tgt_path,
                        const std::string& out_path, bool att_opt,
                        std::size_t limit = 0) {
  auto lm = load_model_with_vocabs(model_path);
  require_stage_input(layer_path, "train-align-layer (or guided-train)");
  AlignmentLayer layer = load_alignment_layer(layer_path);
  if (layer.cfg.vocab != lm.model.cfg.tgt_vocab)
    throw DataError("alignment layer '" + layer_path +
                    "' does not match model '" + model_path + "'");
  if (att_opt && layer.cfg.full_context)
    throw UsageError(
        "attention optimization needs the autoregressive layer; the "
        "full-context layer has no next-token objective to optimize");
  require_stage_input(src_path, "gen-synthetic (or provide a corpus)");
  require_stage_input(tgt_path, "gen-synthetic (or provide a corpus)");
  auto corpus = encode_for_model(lm, Corpus::load(src_path, tgt_path));
  std::size_t n = limit == 0 ? corpus.size() : std::min(limit, corpus.size());
  std::vector<AlignmentSet> links(n);
  OptConfig ocfg = cfg.opt_config(false);
  parallel_for(n, cfg.workers, [&](std::size_t i) {
    AttentionState state;
    if (att_opt) {
      state = optimize_unidirectional(lm.model, layer, corpus.src[i],
                                      corpus.tgt[i], ocfg)
                  .state;
    } else {
      auto ctx = frozen_pass(lm.model, corpus.src[i], corpus.tgt[i]);
      state = alignment_forward(layer, ctx.align_kv, ctx.dec_states).att;
    }
    auto set = extract_argmax_links(state);
    links[i] = lm.model.direction == Direction::kBackward
                   ? transpose_links(set)
                   : set;
  });
  write_pharaoh(out_path, links, cfg.indexing);
  write_manifest(out_path, "align", cfg);
}

inline void stage_bidir_align(const PipelineConfig& cfg,
                              const std::string& fwd_model_path,
                              const std::string& fwd_layer_path,
                              const std::string& bwd_model_path,
                              const std::string& bwd_layer_path,
                              const std::string& src_path,
                              const std::string& tgt_path,
                              const std::string& out_path,
                              std::size_t limit = 0) {
  auto fwd = load_model_with_vocabs(fwd_model_path);
  auto bwd = load_model_with_vocabs(bwd_model_path);
  if (fwd.model.direction != Direction::kForward)
    throw DataError("'" + fwd_model_path + "' is not a forward-direction model");
  if (bwd.model.direction != Direction::kBackward)
    throw DataError("'" + bwd_model_path + "' is not a backward-direction model");
  if (fwd.model.cfg.tgt_vocab != bwd.model.cfg.src_vocab ||
      fwd.model.cfg.src_vocab != bwd.model.cfg.tgt_vocab)
    throw DataError(
        "forward and backward models were not trained on matching corpora");
  require_stage_input(fwd_layer_path, "train-align-layer");
  require_stage_input(bwd_layer_path, "train-align-layer");
  AlignmentLayer fwd_layer = load_alignment_layer(fwd_layer_path);
  AlignmentLayer bwd_layer = load_alignment_layer(bwd_layer_path);
  if (fwd_layer.cfg.full_context || bwd_layer.cfg.full_context)
    throw UsageError(
        "bidirectional optimization needs autoregressive alignment layers");
  require_stage_input(src_path, "gen-synthetic (or provide a corpus)");
  require_stage_input(tgt_path, "gen-synthetic (or provide a corpus)");
  auto corpus = encode_for_model(fwd, Corpus::load(src_path, tgt_path));
  std::size_t n = limit == 0 ? corpus.size() : std::min(limit, corpus.size());
  std::vector<AlignmentSet> links(n);
  OptConfig ocfg = cfg.opt_config(true);
  parallel_for(n, cfg.workers, [&](std::size_t i) {
    auto state = prepare_bidirectional(fwd.model, fwd_layer, bwd.model,
                                       bwd_layer, corpus.src[i],
                                       corpus.tgt[i]);
    optimize_bidirectional(state, ocfg);
    links[i] = extract_bidirectional(state);
  });
  write_pharaoh(out_path, links, cfg.indexing);
  write_manifest(out_path, "bidir-align", cfg);
}

inline void stage_guided_train(const PipelineConfig& cfg,
                               const std::string& model_path,
                               const std::string& align_path,
                               const std::string& src_path,
                               const std::string& tgt_path,
                               const std::string& out_path) {
  auto lm = load_model_with_vocabs(model_path);
  require_stage_input(align_path, "bidir-align (or align)");
  auto alignments = read_pharaoh(align_path, cfg.indexing);
  require_stage_input(src_path, "gen-synthetic (or provide a corpus)");
  require_stage_input(tgt_path, "gen-synthetic (or provide a corpus)");
  auto corpus = encode_for_model(lm, Corpus::load(src_path, tgt_path));
  if (lm.model.direction == Direction::kBackward) {
    for (auto& a : alignments) a = transpose_links(a);
  }
  AlignmentLayerConfig lcfg;
  lcfg.model_dim = lm.model.cfg.embedding_size;
  lcfg.hidden = lm.model.cfg.align_hidden;
  lcfg.vocab = lm.model.cfg.tgt_vocab;
  lcfg.full_context = true;
  AlignmentLayer layer(lcfg, cfg.seed + 2);
  GuidedTrainConfig gcfg;
  gcfg.updates = cfg.guided_updates;
  gcfg.batch_tokens = cfg.batch_tokens;
  gcfg.peak_lr = cfg.guided_peak_lr;
  gcfg.warmup = cfg.guided_warmup;
  gcfg.seed = cfg.seed;
  train_guided(lm.model, layer, corpus, alignments, gcfg);
  save_alignment_layer(out_path, layer);
  write_manifest(out_path, "guided-train", cfg);
}

inline void stage_symmetrize(const PipelineConfig& cfg,
                             const std::string& fwd_path,
                             const std::string& bwd_path,
                             const std::string& method,
                             const std::string& out_path) {
  require_stage_input(fwd_path, "align");
  require_stage_input(bwd_path, "align");
  auto fwd = read_pharaoh(fwd_path, cfg.indexing);
  auto bwd = read_pharaoh(bwd_path, cfg.indexing);
  if (fwd.size() != bwd.size())
    throw DataError("alignment files disagree: " + std::to_string(fwd.size()) +
                    " vs " + std::to_string(bwd.size()) + " lines");
  std::vector<AlignmentSet> out(fwd.size());
  for (std::size_t i = 0; i < fwd.size(); ++i) {
    if (method == "intersect")
      out[i] = intersect(fwd[i], bwd[i]);
    else if (method == "union")
      out[i] = unite(fwd[i], bwd[i]);
    else if (method == "grow-diag")
      out[i] = grow_diag(fwd[i], bwd[i], false);
    else if (method == "grow-diag-final")
      out[i] = grow_diag(fwd[i], bwd[i], true);
    else
      throw UsageError("unknown symmetrization method '" + method +
                       "'; expected intersect|union|grow-diag|grow-diag-final");
  }
  write_pharaoh(out_path, out, cfg.indexing);
  write_manifest(out_path, "symmetrize", cfg);
}

struct EvaluateRequest {
  std::string gold_path;
  std::vector<std::string> hyp_paths;
  std::vector<std::string> labels;  // parallel to hyp_paths
  std::size_t limit = 0;
};

inline std::string stage_evaluate(const PipelineConfig& cfg,
                                  const EvaluateRequest& req) {
  require_stage_input(req.gold_path, "gen-synthetic (or provide gold links)");
  auto gold = read_pharaoh(req.gold_path, cfg.indexing);
  if (req.limit > 0 && gold.size() > req.limit) gold.resize(req.limit);
  std::vector<ReportRow> rows;
  for (std::size_t h = 0; h < req.hyp_paths.size(); ++h) {
    require_stage_input(req.hyp_paths[h], "align (or symmetrize)");
    auto hyp = read_pharaoh(req.hyp_paths[h], cfg.indexing);
    if (req.limit > 0 && hyp.size() > req.limit) hyp.resize(req.limit);
    rows.push_back({req.labels[h], evaluate_corpus(hyp, gold)});
  }
  return format_report(rows);
}

}  // namespace nalign
