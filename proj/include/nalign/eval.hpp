#pragma once

// Alignment error rate, precision, recall against sure/possible gold links,
// and plain-text report generation.

#include <cstdio>
#include <string>
#include <vector>

#include "nalign/align_set.hpp"

namespace nalign {

struct AerCounts {
  std::size_t hyp_and_sure = 0;  // |A ∩ S|
  std::size_t hyp_and_poss = 0;  // |A ∩ P|
  std::size_t hyp = 0;           // |A|
  std::size_t sure = 0;          // |S|

  AerCounts& operator+=(const AerCounts& o) {
    hyp_and_sure += o.hyp_and_sure;
    hyp_and_poss += o.hyp_and_poss;
    hyp += o.hyp;
    sure += o.sure;
    return *this;
  }
};

struct AerResult {
  double aer = 0.0;
  double precision = 1.0;
  double recall = 1.0;
  AerCounts counts;
};

inline AerCounts count_links(const AlignmentSet& hyp,
                             const AlignmentSet& gold) {
  gold.validate();
  AerCounts c;
  c.hyp = hyp.links.size();
  c.sure = gold.sure.size();
  for (const auto& l : hyp.links) {
    if (gold.sure.count(l)) ++c.hyp_and_sure;
    if (gold.links.count(l)) ++c.hyp_and_poss;
  }
  return c;
}

inline AerResult result_from_counts(const AerCounts& c) {
  AerResult r;
  r.counts = c;
  double denom = static_cast<double>(c.hyp + c.sure);
  r.aer = denom > 0.0
              ? 1.0 - static_cast<double>(c.hyp_and_sure + c.hyp_and_poss) /
                          denom
              : 0.0;
  r.precision = c.hyp > 0 ? static_cast<double>(c.hyp_and_poss) /
                                static_cast<double>(c.hyp)
                          : 1.0;
  r.recall = c.sure > 0 ? static_cast<double>(c.hyp_and_sure) /
                              static_cast<double>(c.sure)
                        : 1.0;
  return r;
}

// AER = 1 - (|A∩S| + |A∩P|) / (|A| + |S|)
inline AerResult aer(const AlignmentSet& hyp, const AlignmentSet& gold) {
  return result_from_counts(count_links(hyp, gold));
}

// Corpus-level micro-average: counts are summed across sentences first.
inline AerResult evaluate_corpus(const std::vector<AlignmentSet>& hyps,
                                 const std::vector<AlignmentSet>& golds) {
  if (hyps.empty()) throw DataError("evaluate: empty corpus");
  if (hyps.size() != golds.size())
    throw DataError("evaluate: hypothesis has " + std::to_string(hyps.size()) +
                    " sentences but gold has " + std::to_string(golds.size()) +
                    " (first unmatched line " +
                    std::to_string(std::min(hyps.size(), golds.size()) + 1) +
                    ")");
  AerCounts total;
  for (std::size_t i = 0; i < hyps.size(); ++i)
    total += count_links(hyps[i], golds[i]);
  return result_from_counts(total);
}

struct ReportRow {
  std::string name;
  AerResult result;
};

// Aligned-column table followed by machine-readable "metric<TAB>value" lines.
inline std::string format_report(const std::vector<ReportRow>& rows) {
  std::size_t widest = 6;
  for (const auto& r : rows) widest = std::max(widest, r.name.size());
  std::string out;
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%-*s  %8s  %9s  %8s  %7s\n",
                static_cast<int>(widest), "system", "AER", "precision",
                "recall", "links");
  out += buf;
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%-*s  %8.4f  %9.4f  %8.4f  %7zu\n",
                  static_cast<int>(widest), r.name.c_str(), r.result.aer,
                  r.result.precision, r.result.recall, r.result.counts.hyp);
    out += buf;
  }
  out += "\n";
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%s.aer\t%.6f\n", r.name.c_str(),
                  r.result.aer);
    out += buf;
    std::snprintf(buf, sizeof(buf), "%s.precision\t%.6f\n", r.name.c_str(),
                  r.result.precision);
    out += buf;
    std::snprintf(buf, sizeof(buf), "%s.recall\t%.6f\n", r.name.c_str(),
                  r.result.recall);
    out += buf;
  }
  return out;
}

}  // namespace nalign
