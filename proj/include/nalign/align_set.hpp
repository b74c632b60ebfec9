#pragma once

#include <set>
#include <string>
#include <utility>

#include "nalign/common.hpp"

namespace nalign {

// One source/target position pair, 1-based.
using Link = std::pair<int, int>;

// A set of alignment links. For gold data `links` is the possible set P and
// `sure` the sure subset S (S == P when the annotation has no possible
// marks). Hypothesis sets keep sure == links.
struct AlignmentSet {
  std::set<Link> links;
  std::set<Link> sure;

  AlignmentSet() = default;
  explicit AlignmentSet(std::set<Link> all) : links(all), sure(std::move(all)) {}
  AlignmentSet(std::set<Link> all, std::set<Link> s)
      : links(std::move(all)), sure(std::move(s)) {
    validate();
  }

  void insert_sure(int s, int t) {
    links.emplace(s, t);
    sure.emplace(s, t);
  }
  void insert_possible(int s, int t) { links.emplace(s, t); }

  bool contains(int s, int t) const { return links.count({s, t}) > 0; }
  std::size_t size() const { return links.size(); }
  bool empty() const { return links.empty(); }

  void validate() const {
    for (const auto& l : sure)
      if (!links.count(l))
        throw ContractError("alignment set: sure link (" +
                            std::to_string(l.first) + "," +
                            std::to_string(l.second) +
                            ") missing from possible set");
    for (const auto& l : links)
      if (l.first < 1 || l.second < 1)
        throw ContractError("alignment set: link (" +
                            std::to_string(l.first) + "," +
                            std::to_string(l.second) + ") is not 1-based");
  }

  bool operator==(const AlignmentSet& o) const {
    return links == o.links && sure == o.sure;
  }
};

}  // namespace nalign
