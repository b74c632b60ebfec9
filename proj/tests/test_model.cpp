#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>

#include <nalign/model.hpp>

using namespace nalign;
using Catch::Approx;

namespace {

ModelConfig tiny_config(std::size_t vocab = 10) {
  ModelConfig cfg;
  cfg.embedding_size = 16;
  cfg.hidden_units = 32;
  cfg.encoder_layers = 2;
  cfg.decoder_layers = 1;
  cfg.heads = 4;
  cfg.align_hidden = 8;
  cfg.src_vocab = vocab;
  cfg.tgt_vocab = vocab;
  cfg.max_len = 32;
  return cfg;
}

std::filesystem::path temp_file(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "nalign_model_tests";
  std::filesystem::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST_CASE("encode shapes, determinism and alignment keys", "[model]") {
  TranslationModel model(tiny_config(), Direction::kForward, 3);
  std::vector<int> ids = {4, 5, 6, 7, Vocab::kEos};
  auto a = encode(model, ids);
  auto b = encode(model, ids);
  REQUIRE(a.encoder_out.rows() == ids.size());
  REQUIRE(a.encoder_out.cols() == model.cfg.embedding_size);
  REQUIRE(a.encoder_out.values() == b.encoder_out.values());
  // keys/values are the elementwise sum of embeddings and encoder output
  for (std::size_t i = 0; i < a.align_kv.numel(); ++i)
    REQUIRE(a.align_kv.values()[i] ==
            Approx(a.embeddings.values()[i] + a.encoder_out.values()[i]));

  REQUIRE_THROWS_AS(encode(model, {}), ContractError);
  REQUIRE_THROWS_AS(encode(model, {4, 5}), ContractError);  // missing EOS
  std::vector<int> toolong(model.cfg.max_len + 1, 4);
  toolong.back() = Vocab::kEos;
  REQUIRE_THROWS_AS(encode(model, toolong), ContractError);
}

TEST_CASE("decoder is causal", "[model]") {
  TranslationModel model(tiny_config(), Direction::kForward, 4);
  std::vector<int> src = {3, 4, 5, Vocab::kEos};
  auto enc = encode(model, src);
  std::vector<int> tgt = {6, 7, 8, 9, Vocab::kEos};
  auto d1 = decode_translation(model, enc.encoder_out, tgt);
  REQUIRE(d1.logits.rows() == tgt.size());
  REQUIRE(d1.logits.cols() == model.cfg.tgt_vocab);

  // altering tokens after position t leaves logits at <= t unchanged
  std::vector<int> tgt2 = tgt;
  tgt2[3] = 3;
  auto d2 = decode_translation(model, enc.encoder_out, tgt2);
  for (std::size_t t = 0; t <= 3; ++t)
    for (std::size_t j = 0; j < model.cfg.tgt_vocab; ++j)
      REQUIRE(d1.logits.at(t, j) == d2.logits.at(t, j));
  bool differs = false;
  for (std::size_t j = 0; j < model.cfg.tgt_vocab; ++j)
    differs = differs || d1.logits.at(4, j) != d2.logits.at(4, j);
  REQUIRE(differs);
}

TEST_CASE("attention trio reproduces reference single-head attention",
          "[model]") {
  RngStream rng(17);
  std::size_t m = 5, n = 7, d = 12;
  auto q = TensorF::uniform(m, d, rng, -1, 1);
  auto k = TensorF::uniform(n, d, rng, -1, 1);
  auto v = TensorF::uniform(n, d, rng, -1, 1);
  auto ctx = att_apply(att_probs(att_logits(q, k)), v);

  // plain reference in double
  for (std::size_t i = 0; i < m; ++i) {
    std::vector<double> logits(n, 0.0);
    for (std::size_t j = 0; j < n; ++j) {
      double dot = 0;
      for (std::size_t x = 0; x < d; ++x)
        dot += static_cast<double>(q.at(i, x)) * k.at(j, x);
      logits[j] = dot / std::sqrt(static_cast<double>(d));
    }
    double mx = *std::max_element(logits.begin(), logits.end());
    double sum = 0;
    for (auto& l : logits) {
      l = std::exp(l - mx);
      sum += l;
    }
    for (auto& l : logits) l /= sum;
    for (std::size_t x = 0; x < d; ++x) {
      double ref = 0;
      for (std::size_t j = 0; j < n; ++j) ref += logits[j] * v.at(j, x);
      REQUIRE(static_cast<double>(ctx.at(i, x)) == Approx(ref).margin(1e-5));
    }
  }
}

TEST_CASE("alignment forward produces column-stochastic attention",
          "[model]") {
  auto cfg = tiny_config();
  TranslationModel model(cfg, Direction::kForward, 5);
  model.freeze();
  AlignmentLayerConfig lcfg;
  lcfg.model_dim = cfg.embedding_size;
  lcfg.hidden = cfg.align_hidden;
  lcfg.vocab = cfg.tgt_vocab;
  AlignmentLayer layer(lcfg, 6);

  std::vector<int> src = {3, 4, 5, 6, Vocab::kEos};
  std::vector<int> tgt = {7, 8, 9, Vocab::kEos};
  auto enc = encode(model, src);
  auto dec = decode_translation(model, enc.encoder_out, tgt);
  auto fwd = alignment_forward(layer, enc.align_kv, dec.states);

  REQUIRE(fwd.att.logits.rows() == src.size());
  REQUIRE(fwd.att.logits.cols() == tgt.size());
  REQUIRE(fwd.att.n_src == src.size() - 1);
  REQUIRE(fwd.att.m_tgt == tgt.size() - 1);
  for (std::size_t t = 0; t < fwd.att.probs.cols(); ++t) {
    double sum = 0;
    for (std::size_t s = 0; s < fwd.att.probs.rows(); ++s)
      sum += fwd.att.probs.at(s, t);
    REQUIRE(sum == Approx(1.0).margin(1e-6));
  }
  // token log-probs are normalized per row
  for (std::size_t t = 0; t < fwd.log_probs.rows(); ++t) {
    double sum = 0;
    for (std::size_t j = 0; j < fwd.log_probs.cols(); ++j)
      sum += std::exp(static_cast<double>(fwd.log_probs.at(t, j)));
    REQUIRE(sum == Approx(1.0).margin(1e-4));
  }

  // a single source position receives all attention and its value vector
  // becomes the context
  RngStream rng(9);
  auto kv1 = TensorF::uniform(1, cfg.embedding_size, rng, -1, 1);
  auto single = alignment_forward(layer, kv1, dec.states);
  for (std::size_t t = 0; t < single.probs_tm.rows(); ++t)
    REQUIRE(single.probs_tm.at(t, 0) == Approx(1.0));
  auto v1 = matmul(kv1, layer.wv);
  auto expected = add_rowwise(matmul(v1, layer.out_w), layer.out_b);
  for (std::size_t j = 0; j < single.vocab_logits.cols(); ++j)
    REQUIRE(single.vocab_logits.at(0, j) == Approx(expected.at(0, j)));

  REQUIRE_THROWS_AS(
      alignment_forward(layer, TensorF::zeros(3, 7), dec.states), ShapeError);
}

TEST_CASE("full context layer sees the future, autoregressive does not",
          "[model]") {
  auto cfg = tiny_config();
  TranslationModel model(cfg, Direction::kForward, 5);
  model.freeze();
  AlignmentLayerConfig lcfg;
  lcfg.model_dim = cfg.embedding_size;
  lcfg.hidden = cfg.align_hidden;
  lcfg.vocab = cfg.tgt_vocab;
  AlignmentLayer ar(lcfg, 6);
  lcfg.full_context = true;
  AlignmentLayer fc(lcfg, 6);

  std::vector<int> src = {3, 4, 5, 6, Vocab::kEos};
  std::vector<int> tgt1 = {7, 8, 9, Vocab::kEos};
  std::vector<int> tgt2 = {7, 8, 3, Vocab::kEos};  // future token differs
  auto enc = encode(model, src);
  auto st1 = decode_translation(model, enc.encoder_out, tgt1).states;
  auto st2 = decode_translation(model, enc.encoder_out, tgt2).states;

  std::size_t t = 1;  // column before the perturbed position
  auto ar1 = alignment_forward(ar, enc.align_kv, st1);
  auto ar2 = alignment_forward(ar, enc.align_kv, st2);
  for (std::size_t s = 0; s < ar1.att.probs.rows(); ++s)
    REQUIRE(ar1.att.probs.at(s, t) == ar2.att.probs.at(s, t));

  auto fc1 = alignment_forward(fc, enc.align_kv, st1);
  auto fc2 = alignment_forward(fc, enc.align_kv, st2);
  bool changed = false;
  for (std::size_t s = 0; s < fc1.att.probs.rows(); ++s)
    changed = changed || fc1.att.probs.at(s, t) != fc2.att.probs.at(s, t);
  REQUIRE(changed);
}

TEST_CASE("argmax link extraction", "[model]") {
  // identity attention, no EOS
  AttentionState id;
  id.probs = TensorF::from_rows(3, 3, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  id.logits = id.probs;
  id.n_src = 3;
  id.m_tgt = 3;
  id.includes_eos = false;
  REQUIRE(extract_argmax_links(id).links ==
          std::set<Link>{{1, 1}, {2, 2}, {3, 3}});

  // single column picks its argmax
  AttentionState col;
  col.probs = TensorF::from_rows(3, 1, {0.2f, 0.5f, 0.3f});
  col.logits = col.probs;
  col.n_src = 3;
  col.m_tgt = 1;
  col.includes_eos = false;
  REQUIRE(extract_argmax_links(col).links == std::set<Link>{{2, 1}});

  // EOS argmax leaves the token unaligned; ties go to the smaller source
  AttentionState eos;
  eos.probs = TensorF::from_rows(3, 3,
                                 {0.1f, 0.4f, 0.4f,    // real source 1
                                  0.1f, 0.0f, 0.4f,    // real source 2
                                  0.8f, 0.6f, 0.2f});  // EOS row
  eos.logits = eos.probs;
  eos.n_src = 2;
  eos.m_tgt = 2;
  eos.includes_eos = true;
  // column 1: EOS wins -> unaligned; column 2: EOS wins again
  REQUIRE(extract_argmax_links(eos).links.empty());

  AttentionState tie;
  tie.probs = TensorF::from_rows(2, 1, {0.5f, 0.5f});
  tie.logits = tie.probs;
  tie.n_src = 2;
  tie.m_tgt = 1;
  tie.includes_eos = false;
  REQUIRE(extract_argmax_links(tie).links == std::set<Link>{{1, 1}});
}

TEST_CASE("checkpoint round trip", "[model]") {
  auto cfg = tiny_config(12);
  cfg.decoder_layers = 2;
  TranslationModel model(cfg, Direction::kBackward, 77);
  auto path = temp_file("model.naln");
  save_translation_model(path.string(), model);
  auto back = load_translation_model(path.string());
  REQUIRE(back.direction == Direction::kBackward);
  REQUIRE(back.frozen);
  REQUIRE(back.cfg.decoder_layers == 2);
  REQUIRE(back.cfg.src_vocab == 12);
  auto a = model.named_parameters();
  auto b = back.named_parameters();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    REQUIRE(a[i].first == b[i].first);
    REQUIRE(a[i].second.values() == b[i].second.values());  // bit identical
  }
  REQUIRE(back.checksum() == model.checksum());

  AlignmentLayerConfig lcfg;
  lcfg.model_dim = cfg.embedding_size;
  lcfg.hidden = cfg.align_hidden;
  lcfg.vocab = cfg.tgt_vocab;
  lcfg.full_context = true;
  AlignmentLayer layer(lcfg, 8);
  auto lpath = temp_file("layer.naln");
  save_alignment_layer(lpath.string(), layer);
  auto lback = load_alignment_layer(lpath.string());
  REQUIRE(lback.cfg.full_context);
  REQUIRE(lback.named_parameters().size() == layer.named_parameters().size());
  for (std::size_t i = 0; i < layer.parameters().size(); ++i)
    REQUIRE(lback.parameters()[i].values() == layer.parameters()[i].values());

  // wrong kind and wrong format are data errors
  REQUIRE_THROWS_AS(load_translation_model(lpath.string()), DataError);
  auto bogus = temp_file("bogus.naln");
  std::ofstream(bogus) << "not a checkpoint";
  REQUIRE_THROWS_AS(load_checkpoint(bogus.string()), DataError);
  REQUIRE_THROWS_AS(load_checkpoint(temp_file("missing.naln").string()),
                    DataError);
}

TEST_CASE("alignment layer stays small relative to the translation model",
          "[model]") {
  // desk-scale defaults with the synthetic-task vocabulary
  ModelConfig cfg;
  cfg.src_vocab = 53;
  cfg.tgt_vocab = 53;
  TranslationModel model(cfg, Direction::kForward, 1);
  AlignmentLayerConfig lcfg;
  lcfg.model_dim = cfg.embedding_size;
  lcfg.hidden = cfg.align_hidden;
  lcfg.vocab = cfg.tgt_vocab;
  AlignmentLayer ar(lcfg, 2);
  lcfg.full_context = true;
  AlignmentLayer fc(lcfg, 2);
  double total = static_cast<double>(model.parameter_count());
  REQUIRE(static_cast<double>(ar.parameter_count()) / total < 0.10);
  REQUIRE(static_cast<double>(fc.parameter_count()) / total < 0.10);
}

TEST_CASE("freezing clears gradient requirements", "[model]") {
  TranslationModel model(tiny_config(), Direction::kForward, 2);
  for (const auto& p : model.parameters()) REQUIRE(p.requires_grad());
  model.freeze();
  REQUIRE(model.frozen);
  for (const auto& p : model.parameters()) REQUIRE(!p.requires_grad());
}
