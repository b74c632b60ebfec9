#pragma once

// Hard-alignment symmetrization heuristics over forward/backward link sets.

#include <cstdlib>
#include <set>
#include <vector>

#include "nalign/align_set.hpp"

namespace nalign {

inline AlignmentSet intersect(const AlignmentSet& f, const AlignmentSet& b) {
  std::set<Link> out;
  for (const auto& l : f.links)
    if (b.links.count(l)) out.insert(l);
  return AlignmentSet(out);
}

inline AlignmentSet unite(const AlignmentSet& f, const AlignmentSet& b) {
  std::set<Link> out = f.links;
  out.insert(b.links.begin(), b.links.end());
  return AlignmentSet(out);
}

namespace detail {

inline bool adjacent(const Link& a, const Link& b) {
  return std::abs(a.first - b.first) <= 1 && std::abs(a.second - b.second) <= 1;
}

}  // namespace detail

// Grow-diagonal: start from the intersection and repeatedly add union links
// that touch the current set in the 8-neighborhood and whose source or
// target word is still unaligned, sweeping target-major ascending until a
// fixpoint. With `final_pass`, any remaining union link with an unaligned
// source or target word is added afterwards.
inline AlignmentSet grow_diag(const AlignmentSet& f, const AlignmentSet& b,
                              bool final_pass) {
  std::set<Link> current = intersect(f, b).links;
  // target-major ascending scan order
  std::vector<Link> candidates;
  {
    std::set<Link> uni = unite(f, b).links;
    candidates.assign(uni.begin(), uni.end());
    std::sort(candidates.begin(), candidates.end(),
              [](const Link& x, const Link& y) {
                if (x.second != y.second) return x.second < y.second;
                return x.first < y.first;
              });
  }
  std::set<int> src_aligned, tgt_aligned;
  for (const auto& l : current) {
    src_aligned.insert(l.first);
    tgt_aligned.insert(l.second);
  }
  bool grew = true;
  while (grew) {
    grew = false;
    for (const auto& cand : candidates) {
      if (current.count(cand)) continue;
      if (src_aligned.count(cand.first) && tgt_aligned.count(cand.second))
        continue;
      bool touches = false;
      for (const auto& l : current)
        if (detail::adjacent(cand, l)) {
          touches = true;
          break;
        }
      if (!touches) continue;
      current.insert(cand);
      src_aligned.insert(cand.first);
      tgt_aligned.insert(cand.second);
      grew = true;
    }
  }
  if (final_pass) {
    for (const auto& cand : candidates) {
      if (current.count(cand)) continue;
      if (src_aligned.count(cand.first) && tgt_aligned.count(cand.second))
        continue;
      current.insert(cand);
      src_aligned.insert(cand.first);
      tgt_aligned.insert(cand.second);
    }
  }
  return AlignmentSet(current);
}

}  // namespace nalign
