#pragma once

// Fixtures and brute-force oracles shared by the unit tests and the
// acceptance runner. The oracles deliberately avoid the library's own
// ranking and curve helpers.

#include <algorithm>
#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "passatt/passatt.hpp"

namespace passatt::testing {

/// Instance over whitespace-separated `text`; spans are [start, end) token offsets.
inline Instance make_instance(const std::string& text, std::size_t hs, std::size_t he, std::size_t ts, std::size_t te,
                              const std::string& head_id = "A", const std::string& tail_id = "B",
                              const std::string& label = "NA") {
  Instance inst;
  inst.text_tokens = split_words(text);
  inst.head = {head_id, join_tokens(inst.text_tokens, hs, he), {hs, he}};
  inst.tail = {tail_id, join_tokens(inst.text_tokens, ts, te), {ts, te}};
  inst.source_label = label;
  return inst;
}

/// Instance of `n` filler words with one-token mentions at 0 and n-1.
inline Instance filler_instance(std::size_t n, const std::string& word = "w") {
  std::string text;
  for (std::size_t i = 0; i < n; ++i) text += (i ? " " : "") + (i == 0 ? std::string("H") : i + 1 == n ? "T" : word);
  return make_instance(text, 0, 1, n - 1, n);
}

inline Bag make_bag(std::vector<Instance> instances, std::set<RelationId> gold = {}) {
  Bag b;
  b.key = {instances.front().head.entity_id, instances.front().tail.entity_id};
  b.instances = std::move(instances);
  b.gold_relations = std::move(gold);
  return b;
}

// ---------------------------------------------------------------------------
// Metric oracles over a hit sequence (best first).

struct OraclePoint {
  double p, r;
};

inline std::vector<OraclePoint> oracle_curve(const std::vector<bool>& hits, std::size_t positives) {
  std::vector<OraclePoint> out;
  for (std::size_t k = 1; k <= hits.size(); ++k) {
    std::size_t c = 0;
    for (std::size_t i = 0; i < k; ++i) c += hits[i];
    out.push_back({static_cast<double>(c) / static_cast<double>(k),
                   static_cast<double>(c) / static_cast<double>(positives)});
  }
  return out;
}

/// Trapezoids with the curve extended flat to recall 0.
inline double oracle_auc(const std::vector<bool>& hits, std::size_t positives) {
  const auto pts = oracle_curve(hits, positives);
  std::vector<OraclePoint> ext{{pts.front().p, 0.0}};
  ext.insert(ext.end(), pts.begin(), pts.end());
  double a = 0.0;
  for (std::size_t i = 1; i < ext.size(); ++i) a += 0.5 * (ext[i].r - ext[i - 1].r) * (ext[i].p + ext[i - 1].p);
  return a;
}

inline double oracle_p_at(const std::vector<bool>& hits, std::size_t k) {
  std::size_t c = 0;
  for (std::size_t i = 0; i < k; ++i) c += hits[i];
  return static_cast<double>(c) / static_cast<double>(k);
}

inline double oracle_best_f1(const std::vector<bool>& hits, std::size_t positives) {
  double best = 0.0;
  for (const auto& pt : oracle_curve(hits, positives))
    if (pt.p + pt.r > 0) best = std::max(best, 2 * pt.p * pt.r / (pt.p + pt.r));
  return best;
}

/// Entry of a ranked list for the macro oracle.
struct OracleEntry {
  double conf;
  std::string head, tail;
  int rel;
  bool hit;
};

/// Sorts by confidence, then bag, then relation, the way the evaluator must.
inline std::vector<OracleEntry> oracle_sort(std::vector<OracleEntry> v) {
  std::sort(v.begin(), v.end(), [](const OracleEntry& a, const OracleEntry& b) {
    if (a.conf != b.conf) return a.conf > b.conf;
    if (a.head != b.head) return a.head < b.head;
    if (a.tail != b.tail) return a.tail < b.tail;
    return a.rel < b.rel;
  });
  return v;
}

inline double oracle_macro_f1(const std::vector<OracleEntry>& sorted, int num_relations) {
  double total = 0.0;
  int classes = 0;
  for (int r = 0; r < num_relations; ++r) {
    std::vector<bool> hits;
    std::size_t pos = 0;
    for (const auto& e : sorted)
      if (e.rel == r) {
        hits.push_back(e.hit);
        pos += e.hit;
      }
    if (pos == 0) continue;
    total += oracle_best_f1(hits, pos);
    ++classes;
  }
  return total / classes;
}

/// Redraws every weight and bias (layer norms excepted) at the given scale.
/// At the 0.02 init the query/key gradients sit near 1e-9, below what central
/// differences resolve against a 1e-8 denominator floor.
inline void redraw_for_gradcheck(NamedParams<double>& params, double std, std::uint64_t seed) {
  Rng rng(seed);
  for (auto& [name, p] : params) {
    if (name.find("ln") != std::string::npos) continue;
    auto& v = p.mutable_value();
    v = truncated_normal<double>(v.rows(), v.cols(), std, rng);
  }
}

}  // namespace passatt::testing
