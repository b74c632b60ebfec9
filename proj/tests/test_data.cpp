#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <nalign/data.hpp>
#include <nalign/eval.hpp>

using namespace nalign;

namespace {
std::filesystem::path temp_file(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "nalign_data_tests";
  std::filesystem::create_directories(dir);
  return dir / name;
}
}  // namespace

TEST_CASE("vocab build order and specials", "[data]") {
  std::vector<std::vector<std::string>> sents = {{"b", "a", "b"}, {"c", "b"}};
  auto v = Vocab::build(sents);
  REQUIRE(v.size() == 6);
  REQUIRE(v.token(Vocab::kPad) == "<pad>");
  REQUIRE(v.token(Vocab::kUnk) == "<unk>");
  REQUIRE(v.token(Vocab::kEos) == "</s>");
  REQUIRE(v.id("b") == 3);  // most frequent first
  REQUIRE(v.id("a") == 4);  // ties lexicographic
  REQUIRE(v.id("c") == 5);
  REQUIRE(v.id("zzz") == Vocab::kUnk);

  auto path = temp_file("vocab.txt");
  v.save(path.string());
  auto v2 = Vocab::load(path.string());
  REQUIRE(v2.size() == v.size());
  REQUIRE(v2.id("c") == 5);
}

TEST_CASE("corpus line count mismatch", "[data]") {
  auto sp = temp_file("c.src"), tp = temp_file("c.tgt");
  std::ofstream(sp) << "a b\nc\n";
  std::ofstream(tp) << "x y\n";
  REQUIRE_THROWS_AS(Corpus::load(sp.string(), tp.string()), DataError);
}

TEST_CASE("bpe learning", "[data]") {
  // zero merges: character-level with end-of-word markers
  auto table0 = learn_bpe({{"ab", "c"}}, 0);
  REQUIRE(table0.empty());
  auto seg = apply_bpe(bpe_ranks(table0), {"ab", "c"});
  REQUIRE(seg.subwords == std::vector<std::string>{"a", "b</w>", "c</w>"});
  REQUIRE(seg.word_of == SubwordMap{1, 1, 2});

  // "aaab" repeated: most frequent first pair is (a, a)
  auto table = learn_bpe({{"aaab", "aaab", "aaab"}}, 1);
  REQUIRE(table.size() == 1);
  REQUIRE(table[0] == BpeMerge{"a", "a"});

  REQUIRE_THROWS_AS(learn_bpe({{}, {}}, 3), DataError);
}

TEST_CASE("bpe application round trip and idempotence", "[data]") {
  std::vector<std::vector<std::string>> corpus = {
      {"low", "lower", "lowest"}, {"new", "newer", "widest"}, {"low", "new"}};
  auto table = learn_bpe(corpus, 12);
  auto rank = bpe_ranks(table);
  for (const auto& sent : corpus) {
    auto seg = apply_bpe(rank, sent);
    REQUIRE(bpe_to_words(seg.subwords) == sent);
    // word indices cover every subword and never decrease
    REQUIRE(seg.word_of.size() == seg.subwords.size());
    for (std::size_t i = 1; i < seg.word_of.size(); ++i)
      REQUIRE(seg.word_of[i] >= seg.word_of[i - 1]);
    // applying the merge loop to already-merged symbols changes nothing
    REQUIRE(apply_bpe_symbols(rank, seg.subwords) == seg.subwords);
  }
  // unknown characters fall back to single characters
  auto seg = apply_bpe(rank, {"qzx"});
  REQUIRE(seg.subwords == std::vector<std::string>{"q", "z", "x</w>"});

  auto path = temp_file("merges.txt");
  save_bpe_table(path.string(), table);
  REQUIRE(load_bpe_table(path.string()) == table);
}

TEST_CASE("pharaoh parsing and writing", "[data]") {
  {
    std::istringstream in("0-0 1-1\n");
    auto sets = parse_pharaoh(in, Indexing::kZeroBased, "test");
    REQUIRE(sets.size() == 1);
    REQUIRE(sets[0].links == std::set<Link>{{1, 1}, {2, 2}});
    REQUIRE(sets[0].sure == sets[0].links);
  }
  {
    std::istringstream in("0-0 1?2\n");
    auto sets = parse_pharaoh(in, Indexing::kZeroBased, "test");
    REQUIRE(sets[0].sure == std::set<Link>{{1, 1}});
    REQUIRE(sets[0].links == std::set<Link>{{1, 1}, {2, 3}});
  }
  {
    std::istringstream in("1-1\n2-2 junk 3-3\n");
    try {
      parse_pharaoh(in, Indexing::kZeroBased, "test");
      FAIL("expected ParseError");
    } catch (const ParseError& e) {
      REQUIRE(e.line() == 2);
      REQUIRE(e.column() == 5);
    }
  }
  {
    // 1-based files must not contain index 0
    std::istringstream in("0-0\n");
    REQUIRE_THROWS_AS(parse_pharaoh(in, Indexing::kOneBased, "test"),
                      ParseError);
  }
  {
    // write-then-read identity, including possible links and empty lines
    std::vector<AlignmentSet> sets(3);
    sets[0].insert_sure(1, 1);
    sets[0].insert_possible(2, 3);
    sets[2].insert_sure(4, 2);
    std::ostringstream out;
    write_pharaoh(out, sets, Indexing::kZeroBased);
    std::istringstream in(out.str());
    auto back = parse_pharaoh(in, Indexing::kZeroBased, "test");
    REQUIRE(back.size() == sets.size());
    for (std::size_t i = 0; i < sets.size(); ++i) REQUIRE(back[i] == sets[i]);
  }
}

TEST_CASE("subword to word projection", "[data]") {
  AlignmentSet sub;
  sub.insert_sure(1, 1);
  sub.insert_sure(2, 1);

  // identity maps leave links unchanged
  auto id = project_to_words(sub, {1, 2}, {1, 2});
  REQUIRE(id.links == sub.links);

  // two subwords of word 1 collapse to a single link
  auto merged = project_to_words(sub, {1, 1}, {1});
  REQUIRE(merged.links == std::set<Link>{{1, 1}});

  AlignmentSet quad;
  quad.insert_sure(1, 1);
  quad.insert_sure(1, 2);
  quad.insert_sure(2, 1);
  quad.insert_sure(2, 2);
  auto one = project_to_words(quad, {1, 1}, {1, 1});
  REQUIRE(one.links == std::set<Link>{{1, 1}});

  REQUIRE_THROWS_AS(project_to_words(sub, {1}, {1, 2}), DataError);
}

TEST_CASE("projection preserves AER on word-boundary-trivial segmentation",
          "[data]") {
  // every word is one subword, so projection must be exactly identity
  AlignmentSet gold;
  gold.insert_sure(1, 2);
  gold.insert_sure(2, 1);
  gold.insert_possible(3, 3);
  AlignmentSet hyp;
  hyp.insert_sure(1, 2);
  hyp.insert_sure(3, 3);
  SubwordMap src_map{1, 2, 3}, tgt_map{1, 2, 3};
  auto hyp_w = project_to_words(hyp, src_map, tgt_map);
  auto direct = aer(hyp, gold);
  auto projected = aer(hyp_w, gold);
  REQUIRE(projected.aer == Catch::Approx(direct.aer));
  REQUIRE(projected.precision == Catch::Approx(direct.precision));
  REQUIRE(projected.recall == Catch::Approx(direct.recall));
}

TEST_CASE("synthetic corpus construction", "[data]") {
  // window 1 and split 0: pure relabeling, diagonal gold
  SynthConfig plain;
  plain.vocab = 20;
  plain.sentences = 50;
  plain.min_len = 3;
  plain.max_len = 8;
  plain.reorder_window = 1;
  plain.split_prob = 0.0;
  auto r = generate_synthetic(plain, 7);
  REQUIRE(r.corpus.size() == 50);
  for (std::size_t i = 0; i < r.corpus.size(); ++i) {
    REQUIRE(r.corpus.src[i].size() == r.corpus.tgt[i].size());
    for (std::size_t j = 0; j < r.corpus.src[i].size(); ++j)
      REQUIRE(r.gold[i].contains(static_cast<int>(j) + 1,
                                 static_cast<int>(j) + 1));
    REQUIRE(r.gold[i].size() == r.corpus.src[i].size());
  }

  // doubling yields two gold links onto one source token
  SynthConfig split = plain;
  split.split_prob = 1.0;
  auto rs = generate_synthetic(split, 7);
  for (std::size_t i = 0; i < rs.corpus.size(); ++i) {
    REQUIRE(rs.corpus.tgt[i].size() == 2 * rs.corpus.src[i].size());
    for (std::size_t j = 0; j < rs.corpus.src[i].size(); ++j) {
      int s = static_cast<int>(j) + 1;
      REQUIRE(rs.gold[i].contains(s, 2 * s - 1));
      REQUIRE(rs.gold[i].contains(s, 2 * s));
      REQUIRE(rs.corpus.tgt[i][2 * j] == rs.corpus.tgt[i][2 * j + 1]);
    }
  }

  // same seed reproduces byte-identical corpora; different seed does not
  SynthConfig cfg;
  cfg.sentences = 30;
  auto a = generate_synthetic(cfg, 99);
  auto b = generate_synthetic(cfg, 99);
  auto c = generate_synthetic(cfg, 100);
  REQUIRE(a.corpus.src == b.corpus.src);
  REQUIRE(a.corpus.tgt == b.corpus.tgt);
  REQUIRE(a.corpus.src != c.corpus.src);
  for (std::size_t i = 0; i < a.gold.size(); ++i) {
    REQUIRE(a.gold[i] == b.gold[i]);
    a.gold[i].validate();
    // every target token carries at least one gold link
    std::set<int> covered;
    for (auto [s, t] : a.gold[i].links) {
      REQUIRE(s >= 1);
      REQUIRE(static_cast<std::size_t>(s) <= a.corpus.src[i].size());
      covered.insert(t);
    }
    REQUIRE(covered.size() == a.corpus.tgt[i].size());
  }
}
