#pragma once

// Diagnostics over a frozen model: entity permutation test, PAD-attention
// statistics, and AUC by passage length.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "passatt/data_model.hpp"
#include "passatt/error.hpp"
#include "passatt/evaluation.hpp"
#include "passatt/model.hpp"
#include "passatt/passage.hpp"
#include "passatt/random.hpp"

namespace passatt {

// ---------------------------------------------------------------------------
// Entity permutation

enum class Slot { kHead, kTail };

struct Replacement {
  BagKey original_key;
  Slot slot = Slot::kHead;
  std::string original_entity;
  std::string replacement_entity;
  std::string replacement_surface;
};

struct PermutationPlan {
  std::uint64_t seed = 0;
  std::vector<Replacement> replacements;
  std::vector<BagKey> skipped;  // non-NA bags without a legal replacement
};

struct PermutedSplit {
  std::vector<Bag> bags;
  PermutationPlan plan;
};

/// First surface seen for each entity id.
inline std::map<std::string, std::string> collect_surfaces(const std::vector<Bag>& bags) {
  std::map<std::string, std::string> out;
  for (const auto& b : bags)
    for (const auto& inst : b.instances) {
      out.try_emplace(inst.head.entity_id, inst.head.surface);
      out.try_emplace(inst.tail.entity_id, inst.tail.surface);
    }
  return out;
}

inline std::vector<std::string> split_words(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

/// Replaces the head or tail mention of `inst` with a new entity.
inline Instance rewrite_mention(const Instance& inst, Slot slot, const std::string& entity,
                                const std::string& surface) {
  Instance out = inst;
  EntityMention& target = slot == Slot::kHead ? out.head : out.tail;
  EntityMention& other = slot == Slot::kHead ? out.tail : out.head;
  const auto words = split_words(surface);
  if (words.empty()) throw ValidationError("replacement surface for '" + entity + "' is empty");
  const TokenSpan old = target.span;
  out.text_tokens.erase(out.text_tokens.begin() + static_cast<std::ptrdiff_t>(old.start),
                        out.text_tokens.begin() + static_cast<std::ptrdiff_t>(old.end));
  out.text_tokens.insert(out.text_tokens.begin() + static_cast<std::ptrdiff_t>(old.start), words.begin(),
                         words.end());
  target.entity_id = entity;
  target.surface = join_tokens(words, 0, words.size());
  target.span = {old.start, old.start + words.size()};
  if (other.span.start >= old.end) {
    other.span.start = other.span.start - old.size() + words.size();
    other.span.end = other.span.end - old.size() + words.size();
  }
  validate_instance(out);
  return out;
}

/// For every non-NA bag, swaps the head or the tail for a same-type entity
/// such that the new pair carries no triple in `combined_kb` and collides with
/// no other bag of the split. NA bags are copied unchanged.
inline PermutedSplit permute_entities(const std::vector<Bag>& test_bags, const KnowledgeBase& combined_kb,
                                      const std::map<std::string, std::string>& surfaces, std::uint64_t seed) {
  const TypeMap& types = combined_kb.entity_types;
  if (types.empty()) throw ConfigError("entity permutation needs entity types; provide a type map");
  std::map<std::string, std::vector<std::string>> by_type;
  for (const auto& [id, type] : types) by_type[type].push_back(id);

  std::set<BagKey> taken;
  for (const auto& b : test_bags) taken.insert(b.key);

  PermutedSplit out;
  out.plan.seed = seed;
  for (const auto& bag : test_bags) {
    if (bag.is_na()) {
      out.bags.push_back(bag);
      continue;
    }
    auto type_of = [&](const std::string& id) -> const std::string& {
      auto it = types.find(id);
      if (it == types.end()) throw ConfigError("no entity type for '" + id + "'");
      return it->second;
    };
    struct Candidate {
      Slot slot;
      std::string entity;
    };
    std::vector<Candidate> candidates;
    auto consider = [&](Slot slot) {
      const std::string& fixed = slot == Slot::kHead ? bag.key.tail : bag.key.head;
      const std::string& current = slot == Slot::kHead ? bag.key.head : bag.key.tail;
      for (const auto& e : by_type[type_of(current)]) {
        if (e == current || e == fixed || !surfaces.contains(e)) continue;
        BagKey key = slot == Slot::kHead ? BagKey{e, fixed} : BagKey{fixed, e};
        if (combined_kb.has_pair(key.head, key.tail) || taken.contains(key)) continue;
        candidates.push_back({slot, e});
      }
    };
    consider(Slot::kHead);
    consider(Slot::kTail);
    if (candidates.empty()) {
      out.plan.skipped.push_back(bag.key);
      continue;
    }
    Rng rng(mix_seed(seed, key_hash(bag.key)));
    const Candidate& pick = candidates[uniform_index(rng, candidates.size())];
    const std::string& surface = surfaces.at(pick.entity);
    Bag nb;
    nb.key = pick.slot == Slot::kHead ? BagKey{pick.entity, bag.key.tail} : BagKey{bag.key.head, pick.entity};
    nb.gold_relations = bag.gold_relations;
    for (const auto& inst : bag.instances) nb.instances.push_back(rewrite_mention(inst, pick.slot, pick.entity, surface));
    taken.insert(nb.key);
    out.plan.replacements.push_back({bag.key, pick.slot, pick.slot == Slot::kHead ? bag.key.head : bag.key.tail,
                                     pick.entity, surface});
    out.bags.push_back(std::move(nb));
  }
  return out;
}

inline nlohmann::json to_json(const Replacement& r) {
  return {{"head", r.original_key.head},
          {"tail", r.original_key.tail},
          {"slot", r.slot == Slot::kHead ? "head" : "tail"},
          {"original", r.original_entity},
          {"replacement", r.replacement_entity},
          {"replacement_surface", r.replacement_surface}};
}

/// One JSON record per replacement, then one per skipped bag.
inline void write_plan(std::ostream& out, const PermutationPlan& plan) {
  for (const auto& r : plan.replacements) {
    auto j = to_json(r);
    j["seed"] = plan.seed;
    out << j.dump() << '\n';
  }
  for (const auto& k : plan.skipped)
    out << nlohmann::json{{"head", k.head}, {"tail", k.tail}, {"skipped", true}, {"seed", plan.seed}}.dump() << '\n';
}

// ---------------------------------------------------------------------------
// PAD attention

struct PadAttentionStats {
  double avg_pad_mass_positive = 0.0;  // percent
  double avg_pad_mass_negative = 0.0;  // percent
  std::size_t n_bags_sampled = 0;
  std::size_t n_bags_qualifying = 0;
  std::size_t n_positive_triples = 0;
  std::size_t n_negative_triples = 0;
};

/// Percentage of one attention row that falls on PAD positions.
template <class Row>
double pad_mass_percent(const Row& attention_row, const std::vector<bool>& attn_mask) {
  double m = 0.0;
  for (std::size_t j = 0; j < attn_mask.size(); ++j)
    if (!attn_mask[j]) m += static_cast<double>(attention_row(static_cast<Eigen::Index>(j)));
  return 100.0 * m;
}

/// Exact gold-set match at `threshold`.
inline bool correctly_labelled(const std::vector<double>& conf, const std::set<RelationId>& gold, double threshold) {
  for (std::size_t r = 0; r < conf.size(); ++r) {
    const bool predicted = conf[r] > threshold;
    if (predicted != gold.contains(static_cast<RelationId>(r))) return false;
  }
  return true;
}

template <class T>
PadAttentionStats pad_attention_stats(const Model<T>& model, const std::vector<Bag>& bags, std::size_t sample_n,
                                      std::uint64_t seed, double threshold = 0.5, std::uint64_t eval_seed = 17) {
  if (!model.is_passage_att()) throw ConfigError("PAD attention statistics need a passage_att model");
  if (!model.passage_head().attend_pad) throw ConfigError("PAD attention statistics need attend_pad=true");
  nx::NoGradGuard guard;

  struct Item {
    nx::Mat<T> attention;
    std::vector<bool> mask;
    std::set<RelationId> gold;
  };
  std::vector<Item> qualifying;
  for (const auto& bag : bags) {
    if (bag.is_na()) continue;
    auto pred = model.forward(bag, eval_passage_seed(eval_seed, bag.key));
    std::vector<double> conf(static_cast<std::size_t>(pred.confidences.size()));
    for (std::size_t i = 0; i < conf.size(); ++i) conf[i] = static_cast<double>(pred.confidences.value().data()[i]);
    if (!correctly_labelled(conf, bag.gold_relations, threshold)) continue;
    qualifying.push_back({std::move(pred.attention), pred.passage->attn_mask, bag.gold_relations});
  }

  PadAttentionStats s;
  s.n_bags_qualifying = qualifying.size();
  std::vector<std::size_t> pick(qualifying.size());
  for (std::size_t i = 0; i < pick.size(); ++i) pick[i] = i;
  if (pick.size() > sample_n) {
    Rng rng(seed);
    shuffle(pick, rng);
    pick.resize(sample_n);
  }
  s.n_bags_sampled = pick.size();
  double pos = 0.0, neg = 0.0;
  for (std::size_t i : pick) {
    const Item& it = qualifying[i];
    for (Eigen::Index r = 0; r < it.attention.rows(); ++r) {
      const double mass = pad_mass_percent(it.attention.row(r), it.mask);
      if (it.gold.contains(static_cast<RelationId>(r))) {
        pos += mass;
        ++s.n_positive_triples;
      } else {
        neg += mass;
        ++s.n_negative_triples;
      }
    }
  }
  if (s.n_positive_triples) s.avg_pad_mass_positive = pos / static_cast<double>(s.n_positive_triples);
  if (s.n_negative_triples) s.avg_pad_mass_negative = neg / static_cast<double>(s.n_negative_triples);
  return s;
}

inline nlohmann::json to_json(const PadAttentionStats& s) {
  return {{"avg_pad_mass_positive", s.avg_pad_mass_positive}, {"avg_pad_mass_negative", s.avg_pad_mass_negative},
          {"n_bags_sampled", s.n_bags_sampled},               {"n_bags_qualifying", s.n_bags_qualifying},
          {"n_positive_triples", s.n_positive_triples},       {"n_negative_triples", s.n_negative_triples}};
}

// ---------------------------------------------------------------------------
// Length bins

/// Passage size before truncation: [CLS] plus every instance with markers and [SEP].
inline std::size_t passage_token_count(const Bag& bag) {
  std::size_t n = 1;
  for (const auto& inst : bag.instances) n += inst.text_tokens.size() + 5;
  return n;
}

struct LengthBin {
  std::size_t lower_edge = 0;  // inclusive quantile edge
  std::size_t min_tokens = 0;  // smallest member (0 when empty)
  std::size_t max_tokens = 0;
  std::size_t n_bags = 0;
  std::optional<double> auc;  // undefined without positives
};

/// Equal-count quantile edges over the non-NA bags' token counts. A bag goes
/// to the last bin whose edge does not exceed its count.
inline std::vector<std::size_t> assign_length_bins(const std::vector<std::size_t>& counts, std::size_t num_bins,
                                                   std::vector<std::size_t>* edges_out = nullptr) {
  if (num_bins < 1) throw ConfigError("num_bins must be >= 1");
  std::vector<std::size_t> sorted = counts;
  std::sort(sorted.begin(), sorted.end());
  std::vector<std::size_t> edges(num_bins, 0);
  if (!sorted.empty())
    for (std::size_t b = 0; b < num_bins; ++b) edges[b] = sorted[b * sorted.size() / num_bins];
  std::vector<std::size_t> bin(counts.size());
  for (std::size_t i = 0; i < counts.size(); ++i) {
    std::size_t chosen = 0;
    for (std::size_t b = 0; b < num_bins; ++b)
      if (edges[b] <= counts[i]) chosen = b;
    bin[i] = chosen;
  }
  if (edges_out) *edges_out = edges;
  return bin;
}

/// AUC per bin over that bin's non-NA bags plus every NA bag.
inline std::vector<LengthBin> length_bins_from_scores(const std::vector<Bag>& bags,
                                                      const std::vector<std::vector<double>>& confidences,
                                                      std::size_t num_bins) {
  std::vector<std::size_t> positive_idx, counts;
  std::vector<std::size_t> na_idx;
  for (std::size_t i = 0; i < bags.size(); ++i) {
    if (bags[i].is_na()) {
      na_idx.push_back(i);
    } else {
      positive_idx.push_back(i);
      counts.push_back(passage_token_count(bags[i]));
    }
  }
  std::vector<std::size_t> edges;
  const auto assignment = assign_length_bins(counts, num_bins, &edges);
  std::vector<LengthBin> out(num_bins);
  for (std::size_t b = 0; b < num_bins; ++b) {
    out[b].lower_edge = edges[b];
    std::vector<Bag> subset;
    std::vector<std::vector<double>> scores;
    for (std::size_t k = 0; k < positive_idx.size(); ++k) {
      if (assignment[k] != b) continue;
      const std::size_t c = counts[k];
      out[b].min_tokens = out[b].n_bags == 0 ? c : std::min(out[b].min_tokens, c);
      out[b].max_tokens = std::max(out[b].max_tokens, c);
      ++out[b].n_bags;
      subset.push_back(bags[positive_idx[k]]);
      scores.push_back(confidences[positive_idx[k]]);
    }
    if (out[b].n_bags == 0) continue;
    for (std::size_t i : na_idx) {
      subset.push_back(bags[i]);
      scores.push_back(confidences[i]);
    }
    RankedTriples rt = rank_from_confidences(subset, scores);
    if (rt.total_gold_positives > 0) out[b].auc = auc(pr_curve(rt));
  }
  return out;
}

template <class T>
std::vector<LengthBin> length_bins(const Model<T>& model, const std::vector<Bag>& bags, std::size_t num_bins = 7,
                                   std::uint64_t eval_seed = 17) {
  return length_bins_from_scores(bags, score_bags(model, bags, eval_seed), num_bins);
}

inline void write_bins_csv(std::ostream& out, const std::vector<LengthBin>& bins) {
  out << "bin,lower_edge,min_tokens,max_tokens,n_bags,auc\n";
  out.precision(10);
  for (std::size_t b = 0; b < bins.size(); ++b) {
    const auto& x = bins[b];
    out << b << ',' << x.lower_edge << ',' << x.min_tokens << ',' << x.max_tokens << ',' << x.n_bags << ',';
    if (x.auc) out << *x.auc;
    out << '\n';
  }
}

// ---------------------------------------------------------------------------
// Side-by-side comparison

struct ComparisonRow {
  std::string metric;
  std::optional<double> a, b;
  std::optional<double> delta() const {
    if (!a || !b) return std::nullopt;
    return *b - *a;
  }
};

inline std::vector<ComparisonRow> compare_reports(const MetricsReport& a, const MetricsReport& b) {
  return {{"auc", a.auc, b.auc},
          {"p_at_100", a.p_at_100, b.p_at_100},
          {"p_at_200", a.p_at_200, b.p_at_200},
          {"p_at_300", a.p_at_300, b.p_at_300},
          {"p_at_m", a.p_at_m, b.p_at_m},
          {"micro_f1", a.micro_f1, b.micro_f1},
          {"macro_f1", a.macro_f1, b.macro_f1}};
}

}  // namespace passatt
