// Command-line front end for the alignment toolkit. Each subcommand maps to
// one pipeline stage; stage outputs are checkpoints or Pharaoh alignment
// files plus a run manifest.

#include <cstdio>
#include <exception>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include <nalign/pipeline.hpp>

namespace {

using nalign::PipelineConfig;

struct CommonArgs {
  std::string config_path;
  std::uint64_t seed = 1;
  unsigned workers = 2;
  int indexing = 0;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path,
                  "flat key = value configuration file");
  cmd->add_option("--seed", args.seed, "random seed");
  cmd->add_option("--workers", args.workers,
                  "parallel workers for per-sentence stages");
  cmd->add_option("--indexing", args.indexing,
                  "alignment file indexing: 0 or 1 based")
      ->check(CLI::IsMember({0, 1}));
}

PipelineConfig build_config(CLI::App* cmd, const CommonArgs& args) {
  PipelineConfig cfg;
  if (!args.config_path.empty())
    nalign::load_config_file(cfg, args.config_path);
  if (cmd->count("--seed")) cfg.seed = args.seed;
  if (cmd->count("--workers")) cfg.workers = args.workers;
  if (cmd->count("--indexing"))
    cfg.indexing = args.indexing == 0 ? nalign::Indexing::kZeroBased
                                      : nalign::Indexing::kOneBased;
  return cfg;
}

void write_or_print(const std::string& path, const std::string& text) {
  if (path.empty()) {
    std::cout << text;
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw nalign::DataError("cannot write report '" + path + "'");
  out << text;
}

std::string basename_of(const std::string& path) {
  auto pos = path.find_last_of('/');
  return pos == std::string::npos ? path : path.substr(pos + 1);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"nalign: transformer-based word alignment toolkit"};
  app.require_subcommand(1);

  try {
    // ------------------------------------------------------------ synthetic
    {
      auto* cmd = app.add_subcommand(
          "gen-synthetic", "generate a parallel corpus with gold alignments");
      auto common = std::make_shared<CommonArgs>();
      auto out = std::make_shared<std::string>();
      auto vocab = std::make_shared<std::size_t>(50);
      auto sentences = std::make_shared<std::size_t>(5000);
      auto min_len = std::make_shared<std::size_t>(5);
      auto max_len = std::make_shared<std::size_t>(15);
      auto window = std::make_shared<std::size_t>(2);
      auto split_prob = std::make_shared<double>(0.1);
      add_common(cmd, *common);
      cmd->add_option("--output", *out, "output prefix (.src/.tgt/.gold)")
          ->required();
      cmd->add_option("--vocab", *vocab, "vocabulary size");
      cmd->add_option("--sentences", *sentences, "number of sentence pairs");
      cmd->add_option("--min-len", *min_len, "minimum sentence length");
      cmd->add_option("--max-len", *max_len, "maximum sentence length");
      cmd->add_option("--window", *window, "local reordering window");
      cmd->add_option("--split-prob", *split_prob,
                      "probability of doubling a target token");
      cmd->callback([=] {
        auto cfg = build_config(cmd, *common);
        if (cmd->count("--vocab")) cfg.synth.vocab = *vocab;
        if (cmd->count("--sentences")) cfg.synth.sentences = *sentences;
        if (cmd->count("--min-len")) cfg.synth.min_len = *min_len;
        if (cmd->count("--max-len")) cfg.synth.max_len = *max_len;
        if (cmd->count("--window")) cfg.synth.reorder_window = *window;
        if (cmd->count("--split-prob")) cfg.synth.split_prob = *split_prob;
        nalign::stage_gen_synthetic(cfg, *out);
      });
    }

    // ------------------------------------------------------------- training
    {
      auto* cmd = app.add_subcommand("train-translation",
                                     "train the transformer translation model");
      auto common = std::make_shared<CommonArgs>();
      auto src = std::make_shared<std::string>();
      auto tgt = std::make_shared<std::string>();
      auto out = std::make_shared<std::string>();
      auto direction = std::make_shared<std::string>("fwd");
      auto updates = std::make_shared<std::size_t>();
      auto batch_tokens = std::make_shared<std::size_t>();
      add_common(cmd, *common);
      cmd->add_option("--src", *src, "source corpus")->required();
      cmd->add_option("--tgt", *tgt, "target corpus")->required();
      cmd->add_option("--output", *out, "model checkpoint path")->required();
      cmd->add_option("--direction", *direction, "fwd: src->tgt, bwd: tgt->src")
          ->check(CLI::IsMember({"fwd", "bwd"}));
      cmd->add_option("--updates", *updates, "number of optimizer updates");
      cmd->add_option("--batch-tokens", *batch_tokens,
                      "target tokens per batch");
      cmd->callback([=] {
        auto cfg = build_config(cmd, *common);
        if (cmd->count("--updates")) cfg.train_updates = *updates;
        if (cmd->count("--batch-tokens")) cfg.batch_tokens = *batch_tokens;
        nalign::stage_train_translation(
            cfg, *src, *tgt,
            *direction == "fwd" ? nalign::Direction::kForward
                                : nalign::Direction::kBackward,
            *out);
      });
    }
    {
      auto* cmd = app.add_subcommand(
          "train-align-layer",
          "train the alignment layer on a frozen translation model");
      auto common = std::make_shared<CommonArgs>();
      auto model = std::make_shared<std::string>();
      auto src = std::make_shared<std::string>();
      auto tgt = std::make_shared<std::string>();
      auto out = std::make_shared<std::string>();
      auto lambda = std::make_shared<double>();
      auto kernel = std::make_shared<std::size_t>();
      auto updates = std::make_shared<std::size_t>();
      auto batch_tokens = std::make_shared<std::size_t>();
      add_common(cmd, *common);
      cmd->add_option("--model", *model, "translation model checkpoint")
          ->required();
      cmd->add_option("--src", *src, "source corpus")->required();
      cmd->add_option("--tgt", *tgt, "target corpus")->required();
      cmd->add_option("--output", *out, "alignment layer checkpoint")
          ->required();
      cmd->add_option("--lambda", *lambda,
                      "contiguity interpolation factor (0 disables)");
      cmd->add_option("--kernel", *kernel, "contiguity kernel size");
      cmd->add_option("--updates", *updates, "number of optimizer updates");
      cmd->add_option("--batch-tokens", *batch_tokens,
                      "target tokens per batch");
      cmd->callback([=] {
        auto cfg = build_config(cmd, *common);
        if (cmd->count("--lambda")) cfg.contiguity.lambda = *lambda;
        if (cmd->count("--kernel")) cfg.contiguity.kernel_size = *kernel;
        if (cmd->count("--updates")) cfg.align_updates = *updates;
        if (cmd->count("--batch-tokens")) cfg.batch_tokens = *batch_tokens;
        nalign::stage_train_align_layer(cfg, *model, *src, *tgt, *out);
      });
    }

    // ------------------------------------------------------------- aligning
    {
      auto* cmd = app.add_subcommand(
          "align", "extract alignments from a model and alignment layer");
      auto common = std::make_shared<CommonArgs>();
      auto model = std::make_shared<std::string>();
      auto layer = std::make_shared<std::string>();
      auto src = std::make_shared<std::string>();
      auto tgt = std::make_shared<std::string>();
      auto out = std::make_shared<std::string>();
      auto att_opt = std::make_shared<bool>(false);
      auto steps = std::make_shared<int>();
      auto lambda = std::make_shared<double>();
      auto limit = std::make_shared<std::size_t>(0);
      add_common(cmd, *common);
      cmd->add_option("--model", *model, "translation model checkpoint")
          ->required();
      cmd->add_option("--layer", *layer, "alignment layer checkpoint")
          ->required();
      cmd->add_option("--src", *src, "source corpus")->required();
      cmd->add_option("--tgt", *tgt, "target corpus")->required();
      cmd->add_option("--output", *out, "Pharaoh alignment output")
          ->required();
      cmd->add_flag("--att-opt", *att_opt,
                    "run attention optimization before extraction");
      cmd->add_option("--steps", *steps, "gradient descent steps");
      cmd->add_option("--lambda", *lambda,
                      "contiguity factor during optimization");
      cmd->add_option("--limit", *limit, "align only the first N pairs");
      cmd->callback([=] {
        auto cfg = build_config(cmd, *common);
        if (cmd->count("--steps")) cfg.opt_steps = *steps;
        if (cmd->count("--lambda")) cfg.opt_lambda = *lambda;
        nalign::stage_align(cfg, *model, *layer, *src, *tgt, *out, *att_opt,
                            *limit);
      });
    }
    {
      auto* cmd = app.add_subcommand(
          "bidir-align",
          "jointly optimize shared attention logits under both models");
      auto common = std::make_shared<CommonArgs>();
      auto fwd_model = std::make_shared<std::string>();
      auto fwd_layer = std::make_shared<std::string>();
      auto bwd_model = std::make_shared<std::string>();
      auto bwd_layer = std::make_shared<std::string>();
      auto src = std::make_shared<std::string>();
      auto tgt = std::make_shared<std::string>();
      auto out = std::make_shared<std::string>();
      auto steps = std::make_shared<int>();
      auto lambda = std::make_shared<double>();
      auto limit = std::make_shared<std::size_t>(0);
      add_common(cmd, *common);
      cmd->add_option("--fwd-model", *fwd_model, "forward model checkpoint")
          ->required();
      cmd->add_option("--fwd-layer", *fwd_layer, "forward alignment layer")
          ->required();
      cmd->add_option("--bwd-model", *bwd_model, "backward model checkpoint")
          ->required();
      cmd->add_option("--bwd-layer", *bwd_layer, "backward alignment layer")
          ->required();
      cmd->add_option("--src", *src, "source corpus")->required();
      cmd->add_option("--tgt", *tgt, "target corpus")->required();
      cmd->add_option("--output", *out, "Pharaoh alignment output")
          ->required();
      cmd->add_option("--steps", *steps, "gradient descent steps");
      cmd->add_option("--lambda", *lambda,
                      "contiguity factor for the joint loss");
      cmd->add_option("--limit", *limit, "align only the first N pairs");
      cmd->callback([=] {
        auto cfg = build_config(cmd, *common);
        if (cmd->count("--steps")) cfg.opt_steps = *steps;
        if (cmd->count("--lambda")) cfg.bidir_lambda = *lambda;
        nalign::stage_bidir_align(cfg, *fwd_model, *fwd_layer, *bwd_model,
                                  *bwd_layer, *src, *tgt, *out, *limit);
      });
    }
    {
      auto* cmd = app.add_subcommand(
          "guided-train",
          "train the full-context alignment layer from given alignments");
      auto common = std::make_shared<CommonArgs>();
      auto model = std::make_shared<std::string>();
      auto align = std::make_shared<std::string>();
      auto src = std::make_shared<std::string>();
      auto tgt = std::make_shared<std::string>();
      auto out = std::make_shared<std::string>();
      auto updates = std::make_shared<std::size_t>();
      auto batch_tokens = std::make_shared<std::size_t>();
      add_common(cmd, *common);
      cmd->add_option("--model", *model, "translation model checkpoint")
          ->required();
      cmd->add_option("--align", *align,
                      "supervising alignments (Pharaoh, corpus orientation)")
          ->required();
      cmd->add_option("--src", *src, "source corpus")->required();
      cmd->add_option("--tgt", *tgt, "target corpus")->required();
      cmd->add_option("--output", *out, "alignment layer checkpoint")
          ->required();
      cmd->add_option("--updates", *updates, "number of optimizer updates");
      cmd->add_option("--batch-tokens", *batch_tokens,
                      "target tokens per batch");
      cmd->callback([=] {
        auto cfg = build_config(cmd, *common);
        if (cmd->count("--updates")) cfg.guided_updates = *updates;
        if (cmd->count("--batch-tokens")) cfg.batch_tokens = *batch_tokens;
        nalign::stage_guided_train(cfg, *model, *align, *src, *tgt, *out);
      });
    }

    // --------------------------------------------------- merge and evaluate
    {
      auto* cmd = app.add_subcommand(
          "symmetrize", "merge forward and backward hard alignments");
      auto common = std::make_shared<CommonArgs>();
      auto fwd = std::make_shared<std::string>();
      auto bwd = std::make_shared<std::string>();
      auto method = std::make_shared<std::string>("grow-diag");
      auto out = std::make_shared<std::string>();
      add_common(cmd, *common);
      cmd->add_option("--fwd", *fwd, "forward alignment file")->required();
      cmd->add_option("--bwd", *bwd, "backward alignment file")->required();
      cmd->add_option("--method", *method,
                      "intersect|union|grow-diag|grow-diag-final");
      cmd->add_option("--output", *out, "merged alignment output")->required();
      cmd->callback([=] {
        auto cfg = build_config(cmd, *common);
        nalign::stage_symmetrize(cfg, *fwd, *bwd, *method, *out);
      });
    }
    {
      auto* cmd = app.add_subcommand(
          "evaluate", "AER, precision and recall against gold alignments");
      auto common = std::make_shared<CommonArgs>();
      auto gold = std::make_shared<std::string>();
      auto hyps = std::make_shared<std::vector<std::string>>();
      auto labels = std::make_shared<std::vector<std::string>>();
      auto out = std::make_shared<std::string>();
      auto limit = std::make_shared<std::size_t>(0);
      add_common(cmd, *common);
      cmd->add_option("--gold", *gold, "gold alignment file")->required();
      cmd->add_option("--hyp", *hyps, "hypothesis alignment file (repeatable)")
          ->required();
      cmd->add_option("--label", *labels,
                      "row label per hypothesis (default: file basename)");
      cmd->add_option("--output", *out, "write the report here (else stdout)");
      cmd->add_option("--limit", *limit, "evaluate only the first N lines");
      cmd->callback([=] {
        auto cfg = build_config(cmd, *common);
        nalign::EvaluateRequest req;
        req.gold_path = *gold;
        req.hyp_paths = *hyps;
        req.limit = *limit;
        for (std::size_t i = 0; i < hyps->size(); ++i)
          req.labels.push_back(i < labels->size() ? (*labels)[i]
                                                  : basename_of((*hyps)[i]));
        write_or_print(*out, nalign::stage_evaluate(cfg, req));
      });
    }

    // ------------------------------------------------------------- subwords
    {
      auto* cmd = app.add_subcommand("learn-bpe",
                                     "learn a joint BPE merge table");
      auto inputs = std::make_shared<std::vector<std::string>>();
      auto merges = std::make_shared<std::size_t>(1000);
      auto out = std::make_shared<std::string>();
      cmd->add_option("--input", *inputs, "corpus file (repeatable, joint)")
          ->required();
      cmd->add_option("--merges", *merges, "number of merge operations");
      cmd->add_option("--output", *out, "merge table file")->required();
      cmd->callback([=] {
        std::vector<std::vector<std::string>> lines;
        for (const auto& path : *inputs) {
          auto part = nalign::read_token_lines(path);
          lines.insert(lines.end(), part.begin(), part.end());
        }
        nalign::save_bpe_table(*out, nalign::learn_bpe(lines, *merges));
      });
    }
    {
      auto* cmd = app.add_subcommand(
          "apply-bpe", "segment a corpus with a learned merge table");
      auto table = std::make_shared<std::string>();
      auto input = std::make_shared<std::string>();
      auto out = std::make_shared<std::string>();
      cmd->add_option("--table", *table, "merge table from learn-bpe")
          ->required();
      cmd->add_option("--input", *input, "corpus file")->required();
      cmd->add_option("--output", *out,
                      "segmented output (subword map goes to <output>.map)")
          ->required();
      cmd->callback([=] {
        auto rank = nalign::bpe_ranks(nalign::load_bpe_table(*table));
        auto lines = nalign::read_token_lines(*input);
        std::vector<std::vector<std::string>> seg;
        std::vector<nalign::SubwordMap> maps;
        for (const auto& words : lines) {
          auto s = nalign::apply_bpe(rank, words);
          seg.push_back(std::move(s.subwords));
          maps.push_back(std::move(s.word_of));
        }
        nalign::write_token_lines(*out, seg);
        nalign::save_subword_maps(*out + ".map", maps);
      });
    }
    {
      auto* cmd = app.add_subcommand(
          "project-alignments",
          "project subword alignments onto word alignments");
      auto common = std::make_shared<CommonArgs>();
      auto align = std::make_shared<std::string>();
      auto src_map = std::make_shared<std::string>();
      auto tgt_map = std::make_shared<std::string>();
      auto out = std::make_shared<std::string>();
      add_common(cmd, *common);
      cmd->add_option("--align", *align, "subword alignment file")->required();
      cmd->add_option("--src-map", *src_map, "source subword map")->required();
      cmd->add_option("--tgt-map", *tgt_map, "target subword map")->required();
      cmd->add_option("--output", *out, "word alignment output")->required();
      cmd->callback([=] {
        auto cfg = build_config(cmd, *common);
        auto sub = nalign::read_pharaoh(*align, cfg.indexing);
        auto smaps = nalign::load_subword_maps(*src_map);
        auto tmaps = nalign::load_subword_maps(*tgt_map);
        if (sub.size() != smaps.size() || sub.size() != tmaps.size())
          throw nalign::DataError(
              "project: line counts disagree (" + std::to_string(sub.size()) +
              " alignments, " + std::to_string(smaps.size()) +
              " source maps, " + std::to_string(tmaps.size()) +
              " target maps)");
        std::vector<nalign::AlignmentSet> words(sub.size());
        for (std::size_t i = 0; i < sub.size(); ++i)
          words[i] = nalign::project_to_words(sub[i], smaps[i], tmaps[i]);
        nalign::write_pharaoh(*out, words, cfg.indexing);
      });
    }

    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const nalign::UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const nalign::ContractError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const nalign::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 4;
  } catch (const nalign::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
