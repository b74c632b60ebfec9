#pragma once

// Corpus ingestion, vocabularies, joint BPE, subword/word alignment
// projection, Pharaoh alignment files, and the synthetic parallel corpus
// generator used for desk-scale experiments.

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "nalign/align_set.hpp"
#include "nalign/common.hpp"
#include "nalign/rng.hpp"

namespace nalign {

// ---------------------------------------------------------------------------
// Vocabulary

class Vocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kEos = 2;

  Vocab() {
    id2tok_ = {"<pad>", "<unk>", "</s>"};
    for (std::size_t i = 0; i < id2tok_.size(); ++i)
      tok2id_[id2tok_[i]] = static_cast<int>(i);
  }

  // Frequency-descending order, ties broken lexicographically.
  static Vocab build(const std::vector<std::vector<std::string>>& sentences) {
    std::map<std::string, std::size_t> freq;
    for (const auto& s : sentences)
      for (const auto& t : s) ++freq[t];
    std::vector<std::pair<std::string, std::size_t>> items(freq.begin(),
                                                           freq.end());
    std::sort(items.begin(), items.end(), [](const auto& a, const auto& b) {
      if (a.second != b.second) return a.second > b.second;
      return a.first < b.first;
    });
    Vocab v;
    for (const auto& [tok, n] : items) v.add(tok);
    return v;
  }

  int add(const std::string& tok) {
    auto it = tok2id_.find(tok);
    if (it != tok2id_.end()) return it->second;
    int id = static_cast<int>(id2tok_.size());
    id2tok_.push_back(tok);
    tok2id_[tok] = id;
    return id;
  }

  int id(const std::string& tok) const {
    auto it = tok2id_.find(tok);
    return it == tok2id_.end() ? kUnk : it->second;
  }

  const std::string& token(int id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= id2tok_.size())
      throw IndexError("vocab: id " + std::to_string(id) + " out of range");
    return id2tok_[static_cast<std::size_t>(id)];
  }

  std::size_t size() const { return id2tok_.size(); }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write vocabulary file '" + path + "'");
    for (const auto& t : id2tok_) out << t << '\n';
  }

  static Vocab load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
      throw DataError("cannot open vocabulary file '" + path +
                      "'; it is written alongside the model by "
                      "train-translation");
    Vocab v;
    v.id2tok_.clear();
    v.tok2id_.clear();
    std::string line;
    while (std::getline(in, line)) {
      v.tok2id_[line] = static_cast<int>(v.id2tok_.size());
      v.id2tok_.push_back(line);
    }
    if (v.id2tok_.size() < 3 || v.id2tok_[0] != "<pad>" ||
        v.id2tok_[1] != "<unk>" || v.id2tok_[2] != "</s>")
      throw DataError("vocabulary file '" + path +
                      "' does not start with <pad>/<unk>/</s>");
    return v;
  }

 private:
  std::vector<std::string> id2tok_;
  std::unordered_map<std::string, int> tok2id_;
};

inline std::vector<int> to_ids_with_eos(const Vocab& v,
                                        const std::vector<std::string>& toks) {
  std::vector<int> ids;
  ids.reserve(toks.size() + 1);
  for (const auto& t : toks) ids.push_back(v.id(t));
  ids.push_back(Vocab::kEos);
  return ids;
}

// ---------------------------------------------------------------------------
// Corpus

inline std::vector<std::string> split_tokens(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream ss(line);
  std::string tok;
  while (ss >> tok) out.push_back(std::move(tok));
  return out;
}

inline std::vector<std::vector<std::string>> read_token_lines(
    const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open corpus file '" + path + "'");
  std::vector<std::vector<std::string>> out;
  std::string line;
  while (std::getline(in, line)) out.push_back(split_tokens(line));
  return out;
}

struct Corpus {
  std::vector<std::vector<std::string>> src;
  std::vector<std::vector<std::string>> tgt;

  std::size_t size() const { return src.size(); }

  static Corpus load(const std::string& src_path, const std::string& tgt_path) {
    Corpus c;
    c.src = read_token_lines(src_path);
    c.tgt = read_token_lines(tgt_path);
    if (c.src.size() != c.tgt.size())
      throw DataError("corpus files disagree: '" + src_path + "' has " +
                      std::to_string(c.src.size()) + " lines, '" + tgt_path +
                      "' has " + std::to_string(c.tgt.size()));
    return c;
  }

  Corpus reversed() const {
    Corpus c;
    c.src = tgt;
    c.tgt = src;
    return c;
  }
};

// Id sequences with the terminal EOS appended, ready for the model.
struct EncodedCorpus {
  std::vector<std::vector<int>> src;
  std::vector<std::vector<int>> tgt;

  std::size_t size() const { return src.size(); }

  static EncodedCorpus from(const Corpus& c, const Vocab& src_vocab,
                            const Vocab& tgt_vocab) {
    EncodedCorpus e;
    e.src.reserve(c.size());
    e.tgt.reserve(c.size());
    for (std::size_t i = 0; i < c.size(); ++i) {
      if (c.src[i].empty() || c.tgt[i].empty())
        throw DataError("corpus line " + std::to_string(i + 1) +
                        " has an empty sentence");
      e.src.push_back(to_ids_with_eos(src_vocab, c.src[i]));
      e.tgt.push_back(to_ids_with_eos(tgt_vocab, c.tgt[i]));
    }
    return e;
  }
};

// ---------------------------------------------------------------------------
// Byte pair encoding (suffix-style end-of-word marker)

inline constexpr const char* kBpeEndOfWord = "</w>";

using BpeMerge = std::pair<std::string, std::string>;

inline std::vector<std::string> utf8_chars(const std::string& word) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < word.size()) {
    unsigned char c = static_cast<unsigned char>(word[i]);
    std::size_t len = c < 0x80 ? 1 : c < 0xE0 ? 2 : c < 0xF0 ? 3 : 4;
    if (i + len > word.size()) len = 1;  // tolerate malformed bytes
    out.push_back(word.substr(i, len));
    i += len;
  }
  return out;
}

inline std::vector<std::string> word_to_symbols(const std::string& word) {
  auto syms = utf8_chars(word);
  if (!syms.empty()) syms.back() += kBpeEndOfWord;
  return syms;
}

// Greedy most-frequent-pair merges over the joint corpus; frequency ties are
// broken by lexicographic pair order.
inline std::vector<BpeMerge> learn_bpe(
    const std::vector<std::vector<std::string>>& corpus, std::size_t merges) {
  std::map<std::vector<std::string>, std::size_t> words;
  for (const auto& sent : corpus)
    for (const auto& w : sent) ++words[word_to_symbols(w)];
  if (words.empty()) throw DataError("learn-bpe: empty corpus");
  std::vector<BpeMerge> table;
  for (std::size_t step = 0; step < merges; ++step) {
    std::map<BpeMerge, std::size_t> pair_freq;
    for (const auto& [syms, n] : words)
      for (std::size_t i = 0; i + 1 < syms.size(); ++i)
        pair_freq[{syms[i], syms[i + 1]}] += n;
    if (pair_freq.empty()) break;
    BpeMerge best;
    std::size_t best_n = 0;
    for (const auto& [p, n] : pair_freq)
      if (n > best_n) {  // map iteration is lex order, first wins ties
        best_n = n;
        best = p;
      }
    table.push_back(best);
    std::map<std::vector<std::string>, std::size_t> next;
    std::string joined = best.first + best.second;
    for (const auto& [syms, n] : words) {
      std::vector<std::string> merged;
      merged.reserve(syms.size());
      for (std::size_t i = 0; i < syms.size(); ++i) {
        if (i + 1 < syms.size() && syms[i] == best.first &&
            syms[i + 1] == best.second) {
          merged.push_back(joined);
          ++i;
        } else {
          merged.push_back(syms[i]);
        }
      }
      next[merged] += n;
    }
    words = std::move(next);
  }
  return table;
}

// Applies merges by rank until no learned pair remains in the sequence.
inline std::vector<std::string> apply_bpe_symbols(
    const std::map<BpeMerge, std::size_t>& rank,
    std::vector<std::string> syms) {
  while (syms.size() > 1) {
    std::size_t best_rank = rank.size();
    std::size_t best_i = 0;
    for (std::size_t i = 0; i + 1 < syms.size(); ++i) {
      auto it = rank.find({syms[i], syms[i + 1]});
      if (it != rank.end() && it->second < best_rank) {
        best_rank = it->second;
        best_i = i;
      }
    }
    if (best_rank == rank.size()) break;
    syms[best_i] += syms[best_i + 1];
    syms.erase(syms.begin() + static_cast<std::ptrdiff_t>(best_i) + 1);
  }
  return syms;
}

inline std::map<BpeMerge, std::size_t> bpe_ranks(
    const std::vector<BpeMerge>& table) {
  std::map<BpeMerge, std::size_t> rank;
  for (std::size_t i = 0; i < table.size(); ++i) rank[table[i]] = i;
  return rank;
}

// For each subword, the 1-based index of the word it came from.
using SubwordMap = std::vector<int>;

struct BpeSentence {
  std::vector<std::string> subwords;
  SubwordMap word_of;
};

inline BpeSentence apply_bpe(const std::map<BpeMerge, std::size_t>& rank,
                             const std::vector<std::string>& words) {
  BpeSentence out;
  for (std::size_t w = 0; w < words.size(); ++w) {
    auto pieces = apply_bpe_symbols(rank, word_to_symbols(words[w]));
    for (auto& p : pieces) {
      out.subwords.push_back(std::move(p));
      out.word_of.push_back(static_cast<int>(w) + 1);
    }
  }
  return out;
}

// Strips end-of-word markers and rejoins pieces into words.
inline std::vector<std::string> bpe_to_words(
    const std::vector<std::string>& subwords) {
  std::vector<std::string> words;
  std::string cur;
  const std::string marker = kBpeEndOfWord;
  for (const auto& s : subwords) {
    if (s.size() >= marker.size() &&
        s.compare(s.size() - marker.size(), marker.size(), marker) == 0) {
      cur += s.substr(0, s.size() - marker.size());
      words.push_back(cur);
      cur.clear();
    } else {
      cur += s;
    }
  }
  if (!cur.empty()) words.push_back(cur);
  return words;
}

inline void save_bpe_table(const std::string& path,
                           const std::vector<BpeMerge>& table) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write merge table '" + path + "'");
  for (const auto& [a, b] : table) out << a << ' ' << b << '\n';
}

inline std::vector<BpeMerge> load_bpe_table(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw DataError("cannot open merge table '" + path +
                    "'; produce it with learn-bpe");
  std::vector<BpeMerge> table;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto sp = line.find(' ');
    if (sp == std::string::npos || sp == 0 || sp + 1 >= line.size())
      throw ParseError("merge table '" + path + "': expected two symbols",
                       lineno, 1);
    table.emplace_back(line.substr(0, sp), line.substr(sp + 1));
  }
  return table;
}

// Word pair (i, j) is aligned iff any of their subwords were aligned.
inline AlignmentSet project_to_words(const AlignmentSet& sub,
                                     const SubwordMap& src_map,
                                     const SubwordMap& tgt_map) {
  AlignmentSet out;
  auto lookup = [](const SubwordMap& m, int pos, const char* side) {
    if (pos < 1 || static_cast<std::size_t>(pos) > m.size())
      throw DataError(std::string("project: ") + side + " subword index " +
                      std::to_string(pos) + " outside map of size " +
                      std::to_string(m.size()));
    return m[static_cast<std::size_t>(pos) - 1];
  };
  for (const auto& [s, t] : sub.links) {
    int ws = lookup(src_map, s, "source");
    int wt = lookup(tgt_map, t, "target");
    if (sub.sure.count({s, t}))
      out.insert_sure(ws, wt);
    else
      out.insert_possible(ws, wt);
  }
  return out;
}

inline void save_subword_maps(const std::string& path,
                              const std::vector<SubwordMap>& maps) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write subword map '" + path + "'");
  for (const auto& m : maps) {
    for (std::size_t i = 0; i < m.size(); ++i)
      out << (i ? " " : "") << m[i];
    out << '\n';
  }
}

inline std::vector<SubwordMap> load_subword_maps(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw DataError("cannot open subword map '" + path +
                    "'; apply-bpe writes it next to its output");
  std::vector<SubwordMap> maps;
  std::string line;
  while (std::getline(in, line)) {
    SubwordMap m;
    std::istringstream ss(line);
    int v;
    while (ss >> v) m.push_back(v);
    maps.push_back(std::move(m));
  }
  return maps;
}

// ---------------------------------------------------------------------------
// Pharaoh alignment files ("s-t" sure, "s?t" possible)

enum class Indexing { kZeroBased, kOneBased };

inline std::vector<AlignmentSet> parse_pharaoh(std::istream& in,
                                               Indexing indexing,
                                               const std::string& origin) {
  std::vector<AlignmentSet> sets;
  std::string line;
  std::size_t lineno = 0;
  int offset = indexing == Indexing::kZeroBased ? 1 : 0;
  while (std::getline(in, line)) {
    ++lineno;
    AlignmentSet set;
    std::size_t i = 0;
    while (i < line.size()) {
      if (line[i] == ' ' || line[i] == '\t') {
        ++i;
        continue;
      }
      std::size_t start = i;
      while (i < line.size() && line[i] != ' ' && line[i] != '\t') ++i;
      std::string tok = line.substr(start, i - start);
      std::size_t sep = tok.find_first_of("-?");
      bool ok = sep != std::string::npos && sep > 0 && sep + 1 < tok.size();
      int s = 0, t = 0;
      if (ok) {
        try {
          std::size_t used = 0;
          s = std::stoi(tok.substr(0, sep), &used);
          ok = used == sep;
          std::size_t used2 = 0;
          t = std::stoi(tok.substr(sep + 1), &used2);
          ok = ok && used2 == tok.size() - sep - 1;
        } catch (const std::exception&) {
          ok = false;
        }
      }
      if (ok) {
        s += offset;
        t += offset;
        ok = s >= 1 && t >= 1;
      }
      if (!ok)
        throw ParseError(origin + ": malformed alignment token '" + tok + "'",
                         lineno, start + 1);
      if (tok[sep] == '-')
        set.insert_sure(s, t);
      else
        set.insert_possible(s, t);
    }
    sets.push_back(std::move(set));
  }
  return sets;
}

inline std::vector<AlignmentSet> read_pharaoh(const std::string& path,
                                              Indexing indexing) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open alignment file '" + path + "'");
  return parse_pharaoh(in, indexing, path);
}

inline void write_pharaoh(std::ostream& out,
                          const std::vector<AlignmentSet>& sets,
                          Indexing indexing) {
  int offset = indexing == Indexing::kZeroBased ? 1 : 0;
  for (const auto& set : sets) {
    bool first = true;
    for (const auto& [s, t] : set.links) {
      if (!first) out << ' ';
      first = false;
      out << (s - offset) << (set.sure.count({s, t}) ? '-' : '?')
          << (t - offset);
    }
    out << '\n';
  }
}

inline void write_pharaoh(const std::string& path,
                          const std::vector<AlignmentSet>& sets,
                          Indexing indexing) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write alignment file '" + path + "'");
  write_pharaoh(out, sets, indexing);
}

// ---------------------------------------------------------------------------
// Synthetic parallel corpus with gold alignments known by construction

struct SynthConfig {
  std::size_t vocab = 50;
  std::size_t sentences = 5000;
  std::size_t min_len = 5;
  std::size_t max_len = 15;
  std::size_t reorder_window = 2;  // block size for local permutations
  double split_prob = 0.1;         // chance a target token is doubled
};

struct SynthResult {
  Corpus corpus;
  std::vector<AlignmentSet> gold;
};

// Target is a token-wise relabeling of the source through a seeded
// permutation, locally permuted within windows and with occasional doubled
// tokens; gold links follow the construction.
inline SynthResult generate_synthetic(const SynthConfig& cfg,
                                      std::uint64_t seed) {
  if (cfg.vocab == 0 || cfg.sentences == 0 || cfg.min_len == 0 ||
      cfg.min_len > cfg.max_len)
    throw ContractError("generate_synthetic: invalid configuration");
  std::vector<std::size_t> mapping(cfg.vocab);
  for (std::size_t i = 0; i < cfg.vocab; ++i) mapping[i] = i;
  RngStream perm_rng(seed, 1);
  perm_rng.shuffle(mapping);

  RngStream rng(seed, 2);
  SynthResult out;
  for (std::size_t s = 0; s < cfg.sentences; ++s) {
    std::size_t len = cfg.min_len + rng.below(cfg.max_len - cfg.min_len + 1);
    std::vector<std::size_t> src_ids(len);
    for (auto& id : src_ids) id = rng.below(cfg.vocab);

    // target item = (source position, target word id)
    std::vector<std::pair<std::size_t, std::size_t>> items(len);
    for (std::size_t i = 0; i < len; ++i) items[i] = {i, mapping[src_ids[i]]};
    std::size_t w = std::max<std::size_t>(1, cfg.reorder_window);
    for (std::size_t b = 0; b + 1 < len; b += w) {
      std::size_t e = std::min(b + w, len);
      for (std::size_t i = e - b; i > 1; --i) {
        std::size_t j = rng.below(i);
        std::swap(items[b + i - 1], items[b + j]);
      }
    }

    std::vector<std::string> src_toks(len);
    for (std::size_t i = 0; i < len; ++i)
      src_toks[i] = "s" + std::to_string(src_ids[i]);
    std::vector<std::string> tgt_toks;
    AlignmentSet gold;
    for (const auto& [src_pos, tid] : items) {
      std::size_t copies = rng.next_uniform() < cfg.split_prob ? 2 : 1;
      for (std::size_t rep = 0; rep < copies; ++rep) {
        tgt_toks.push_back("t" + std::to_string(tid));
        gold.insert_sure(static_cast<int>(src_pos) + 1,
                         static_cast<int>(tgt_toks.size()));
      }
    }
    out.corpus.src.push_back(std::move(src_toks));
    out.corpus.tgt.push_back(std::move(tgt_toks));
    out.gold.push_back(std::move(gold));
  }
  return out;
}

inline void write_token_lines(const std::string& path,
                              const std::vector<std::vector<std::string>>& ls) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write corpus file '" + path + "'");
  for (const auto& sent : ls) {
    for (std::size_t i = 0; i < sent.size(); ++i)
      out << (i ? " " : "") << sent[i];
    out << '\n';
  }
}

}  // namespace nalign
