#pragma once

// Bag-level ranked-triple evaluation: every (bag, non-NA relation) pair is
// scored, the pairs are ranked by confidence, and precision/recall are read
// off at every rank.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "passatt/data_model.hpp"
#include "passatt/error.hpp"
#include "passatt/model.hpp"

namespace passatt {

struct ScoredTriple {
  BagKey bag;
  RelationId relation = 0;
  double confidence = 0.0;
  bool hit = false;
};

struct RankedTriples {
  std::vector<ScoredTriple> entries;  // best first
  std::size_t total_gold_positives = 0;
};

/// Confidence descending; ties by (bag key, relation id) ascending.
inline bool ranks_before(const ScoredTriple& a, const ScoredTriple& b) {
  if (a.confidence != b.confidence) return a.confidence > b.confidence;
  if (a.bag != b.bag) return a.bag < b.bag;
  return a.relation < b.relation;
}

inline RankedTriples make_ranking(std::vector<ScoredTriple> entries, std::size_t total_gold_positives) {
  std::sort(entries.begin(), entries.end(), ranks_before);
  return {std::move(entries), total_gold_positives};
}

/// Scores every bag against every relation given per-bag confidence vectors.
inline RankedTriples rank_from_confidences(const std::vector<Bag>& bags,
                                           const std::vector<std::vector<double>>& confidences) {
  if (bags.size() != confidences.size()) throw MetricError("rank_from_confidences: bag/score count mismatch");
  std::vector<ScoredTriple> entries;
  std::size_t positives = 0;
  for (std::size_t b = 0; b < bags.size(); ++b) {
    positives += bags[b].gold_relations.size();
    for (std::size_t r = 0; r < confidences[b].size(); ++r) {
      const auto rel = static_cast<RelationId>(r);
      entries.push_back({bags[b].key, rel, confidences[b][r], bags[b].gold_relations.contains(rel)});
    }
  }
  return make_ranking(std::move(entries), positives);
}

/// Evaluation passages use a fixed per-bag seed, so repeated calls agree.
template <class T>
std::vector<std::vector<double>> score_bags(const Model<T>& model, const std::vector<Bag>& bags,
                                            std::uint64_t eval_seed) {
  std::vector<std::vector<double>> out;
  out.reserve(bags.size());
  for (const auto& bag : bags) out.push_back(model.predict(bag, eval_passage_seed(eval_seed, bag.key)));
  return out;
}

template <class T>
RankedTriples rank_triples(const Model<T>& model, const std::vector<Bag>& bags, std::uint64_t eval_seed) {
  return rank_from_confidences(bags, score_bags(model, bags, eval_seed));
}

struct PrPoint {
  double precision = 0.0;
  double recall = 0.0;
};

inline std::vector<PrPoint> pr_curve(const RankedTriples& rt) {
  if (rt.total_gold_positives == 0) throw MetricError("no positive triples");
  std::vector<PrPoint> pts;
  pts.reserve(rt.entries.size());
  std::size_t hits = 0;
  const auto total = static_cast<double>(rt.total_gold_positives);
  for (std::size_t k = 0; k < rt.entries.size(); ++k) {
    if (rt.entries[k].hit) ++hits;
    pts.push_back({static_cast<double>(hits) / static_cast<double>(k + 1), static_cast<double>(hits) / total});
  }
  return pts;
}

/// Trapezoids over (recall, precision), starting from (0, precision at rank 1).
inline double auc(const std::vector<PrPoint>& pts) {
  if (pts.empty()) throw MetricError("auc: empty PR curve");
  double area = 0.0;
  double prev_r = 0.0;
  double prev_p = pts.front().precision;
  for (const auto& pt : pts) {
    area += (pt.recall - prev_r) * (pt.precision + prev_p) / 2.0;
    prev_r = pt.recall;
    prev_p = pt.precision;
  }
  return area;
}

inline double p_at_k(const RankedTriples& rt, std::size_t k) {
  if (k == 0 || k > rt.entries.size())
    throw MetricError("P@" + std::to_string(k) + " undefined for " + std::to_string(rt.entries.size()) + " entries");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < k; ++i) hits += rt.entries[i].hit ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(k);
}

/// Best F1 over all rank thresholds.
inline double micro_f1(const std::vector<PrPoint>& pts) {
  if (pts.empty()) throw MetricError("micro_f1: empty PR curve");
  double best = 0.0;
  for (const auto& pt : pts) {
    const double s = pt.precision + pt.recall;
    if (s > 0.0) best = std::max(best, 2.0 * pt.precision * pt.recall / s);
  }
  return best;
}

/// Mean over relations with at least one gold positive of that relation's
/// best F1 on its own sub-ranking.
inline double macro_f1(const RankedTriples& rt, std::size_t num_relations) {
  std::vector<RankedTriples> per_class(num_relations);
  for (const auto& e : rt.entries) {
    if (e.relation < 0 || static_cast<std::size_t>(e.relation) >= num_relations)
      throw MetricError("macro_f1: relation id outside inventory");
    auto& cls = per_class[static_cast<std::size_t>(e.relation)];
    cls.entries.push_back(e);
    if (e.hit) ++cls.total_gold_positives;
  }
  double total = 0.0;
  std::size_t included = 0;
  for (const auto& cls : per_class) {
    if (cls.total_gold_positives == 0) continue;
    total += micro_f1(pr_curve(cls));
    ++included;
  }
  if (included == 0) throw MetricError("no positive triples");
  return total / static_cast<double>(included);
}

struct MetricsReport {
  double auc = 0.0;
  std::optional<double> p_at_100, p_at_200, p_at_300, p_at_m;
  double micro_f1 = 0.0;
  double macro_f1 = 0.0;
  std::size_t entries = 0;
  std::size_t total_gold_positives = 0;
  std::vector<PrPoint> pr_points;
};

/// P@k is left empty when the ranking is shorter than k; P@m needs all three.
inline MetricsReport evaluate_ranking(const RankedTriples& rt, std::size_t num_relations) {
  MetricsReport r;
  r.pr_points = pr_curve(rt);
  r.auc = auc(r.pr_points);
  r.micro_f1 = micro_f1(r.pr_points);
  r.macro_f1 = macro_f1(rt, num_relations);
  r.entries = rt.entries.size();
  r.total_gold_positives = rt.total_gold_positives;
  auto at = [&](std::size_t k) -> std::optional<double> {
    if (k > rt.entries.size()) return std::nullopt;
    return p_at_k(rt, k);
  };
  r.p_at_100 = at(100);
  r.p_at_200 = at(200);
  r.p_at_300 = at(300);
  if (r.p_at_100 && r.p_at_200 && r.p_at_300) r.p_at_m = (*r.p_at_100 + *r.p_at_200 + *r.p_at_300) / 3.0;
  return r;
}

template <class T>
MetricsReport evaluate_model(const Model<T>& model, const std::vector<Bag>& bags, std::uint64_t eval_seed) {
  return evaluate_ranking(rank_triples(model, bags, eval_seed), model.num_relations());
}

inline nlohmann::json to_json(const MetricsReport& r) {
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  return {{"auc", r.auc},
          {"p_at_100", opt(r.p_at_100)},
          {"p_at_200", opt(r.p_at_200)},
          {"p_at_300", opt(r.p_at_300)},
          {"p_at_m", opt(r.p_at_m)},
          {"micro_f1", r.micro_f1},
          {"macro_f1", r.macro_f1},
          {"entries", r.entries},
          {"total_gold_positives", r.total_gold_positives}};
}

inline MetricsReport metrics_from_json(const nlohmann::json& j) {
  auto opt = [&](const char* k) -> std::optional<double> {
    if (!j.contains(k) || j[k].is_null()) return std::nullopt;
    return j[k].get<double>();
  };
  MetricsReport r;
  r.auc = j.at("auc").get<double>();
  r.p_at_100 = opt("p_at_100");
  r.p_at_200 = opt("p_at_200");
  r.p_at_300 = opt("p_at_300");
  r.p_at_m = opt("p_at_m");
  r.micro_f1 = j.at("micro_f1").get<double>();
  r.macro_f1 = j.at("macro_f1").get<double>();
  r.entries = j.value("entries", std::size_t{0});
  r.total_gold_positives = j.value("total_gold_positives", std::size_t{0});
  return r;
}

/// rank,precision,recall
inline void write_pr_csv(std::ostream& out, const std::vector<PrPoint>& pts) {
  out << "rank,precision,recall\n";
  out.precision(10);
  for (std::size_t k = 0; k < pts.size(); ++k) out << (k + 1) << ',' << pts[k].precision << ',' << pts[k].recall << '\n';
}

inline void write_pr_csv(const std::string& path, const std::vector<PrPoint>& pts) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path + "'");
  write_pr_csv(out, pts);
}

}  // namespace passatt
