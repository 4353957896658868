#pragma once

// Instances, bags, relation inventories and knowledge bases, plus the
// line-delimited JSON dataset format they are read from and written to.

#include <compare>
#include <cstddef>
#include <fstream>
#include <istream>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "passatt/error.hpp"

namespace passatt {

using RelationId = int;
inline constexpr RelationId kNaRelation = -1;

struct TokenSpan {
  std::size_t start = 0;
  std::size_t end = 0;  // exclusive
  std::size_t size() const { return end - start; }
  bool overlaps(const TokenSpan& o) const { return start < o.end && o.start < end; }
  friend bool operator==(const TokenSpan&, const TokenSpan&) = default;
};

struct EntityMention {
  std::string entity_id;
  std::string surface;
  TokenSpan span;
  friend bool operator==(const EntityMention&, const EntityMention&) = default;
};

struct Instance {
  std::vector<std::string> text_tokens;
  EntityMention head;
  EntityMention tail;
  std::optional<std::string> language;
  std::string source_label;
  friend bool operator==(const Instance&, const Instance&) = default;
};

inline std::string join_tokens(const std::vector<std::string>& tokens, std::size_t begin, std::size_t end) {
  std::string out;
  for (std::size_t i = begin; i < end; ++i) {
    if (i > begin) out += ' ';
    out += tokens[i];
  }
  return out;
}

/// Throws ValidationError when an Instance invariant is broken.
inline void validate_instance(const Instance& inst) {
  const std::size_t n = inst.text_tokens.size();
  auto check_mention = [&](const EntityMention& m, const char* role) {
    if (m.span.start >= m.span.end || m.span.end > n) {
      throw ValidationError(std::string(role) + " span [" + std::to_string(m.span.start) + "," +
                            std::to_string(m.span.end) + ") out of range for " + std::to_string(n) + " tokens");
    }
    if (join_tokens(inst.text_tokens, m.span.start, m.span.end) != m.surface) {
      throw ValidationError(std::string(role) + " surface '" + m.surface + "' does not match its span");
    }
  };
  check_mention(inst.head, "head");
  check_mention(inst.tail, "tail");
  if (inst.head.span.overlaps(inst.tail.span)) throw ValidationError("head and tail spans overlap");
}

struct BagKey {
  std::string head;
  std::string tail;
  auto operator<=>(const BagKey&) const = default;
  bool operator==(const BagKey&) const = default;
  std::string str() const { return "(" + head + ", " + tail + ")"; }
};

struct BagKeyHash {
  std::size_t operator()(const BagKey& k) const {
    return std::hash<std::string>{}(k.head) * 31u ^ std::hash<std::string>{}(k.tail);
  }
};

struct Bag {
  BagKey key;
  std::vector<Instance> instances;
  std::set<RelationId> gold_relations;
  bool is_na() const { return gold_relations.empty(); }
};

class RelationInventory {
 public:
  RelationInventory() = default;

  /// `names` must contain `na_name`; the remaining names get ids 0..N-1 in order.
  RelationInventory(std::vector<std::string> names, std::string na_name)
      : names_(std::move(names)), na_name_(std::move(na_name)) {
    bool saw_na = false;
    std::set<std::string> seen;
    for (const auto& n : names_) {
      if (!seen.insert(n).second) throw ValidationError("duplicate relation name '" + n + "'");
      if (n == na_name_) {
        saw_na = true;
        continue;
      }
      ids_.emplace(n, static_cast<RelationId>(relations_.size()));
      relations_.push_back(n);
    }
    if (!saw_na) throw ValidationError("NA relation '" + na_name_ + "' missing from inventory");
  }

  /// First line is the NA name.
  static RelationInventory load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open relation inventory '" + path + "'");
    std::vector<std::string> names;
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      names.push_back(line);
    }
    if (names.empty()) throw ValidationError("relation inventory '" + path + "' is empty");
    std::string na = names.front();
    return RelationInventory(std::move(names), na);
  }

  void save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw Error("cannot write relation inventory '" + path + "'");
    out << na_name_ << '\n';
    for (const auto& n : relations_) out << n << '\n';
  }

  /// Number of non-NA relations.
  std::size_t size() const { return relations_.size(); }
  const std::string& na_name() const { return na_name_; }
  const std::vector<std::string>& names() const { return names_; }
  const std::string& name(RelationId id) const { return id == kNaRelation ? na_name_ : relations_.at(id); }

  /// kNaRelation for the NA name, nullopt for unknown names.
  std::optional<RelationId> find(const std::string& name) const {
    if (name == na_name_) return kNaRelation;
    auto it = ids_.find(name);
    if (it == ids_.end()) return std::nullopt;
    return it->second;
  }

 private:
  std::vector<std::string> names_;
  std::string na_name_;
  std::vector<std::string> relations_;
  std::unordered_map<std::string, RelationId> ids_;
};

struct Triple {
  std::string head;
  RelationId relation = 0;
  std::string tail;
  auto operator<=>(const Triple&) const = default;
  bool operator==(const Triple&) const = default;
};

using TypeMap = std::map<std::string, std::string>;

struct KnowledgeBase {
  std::set<Triple> triples;
  TypeMap entity_types;

  bool has_pair(const std::string& head, const std::string& tail) const {
    for (auto it = triples.lower_bound(Triple{head, std::numeric_limits<RelationId>::min(), ""});
         it != triples.end() && it->head == head; ++it) {
      if (it->tail == tail) return true;
    }
    return false;
  }

  /// Entity pairs that carry at least one triple.
  std::set<BagKey> pairs() const {
    std::set<BagKey> out;
    for (const auto& t : triples) out.insert(BagKey{t.head, t.tail});
    return out;
  }
};

// ---------------------------------------------------------------------------
// Dataset format

inline nlohmann::json mention_to_json(const EntityMention& m) {
  return {{"id", m.entity_id}, {"name", m.surface}, {"span", {m.span.start, m.span.end}}};
}

inline nlohmann::json instance_to_json(const Instance& inst) {
  nlohmann::json j;
  j["tokens"] = inst.text_tokens;
  j["h"] = mention_to_json(inst.head);
  j["t"] = mention_to_json(inst.tail);
  j["relation"] = inst.source_label;
  if (inst.language) j["lang"] = *inst.language;
  return j;
}

namespace detail {

inline EntityMention mention_from_json(const nlohmann::json& j, const char* role) {
  if (!j.is_object()) throw Error(std::string("field '") + role + "' must be an object");
  EntityMention m;
  m.entity_id = j.at("id").get<std::string>();
  m.surface = j.at("name").get<std::string>();
  const auto& span = j.at("span");
  if (!span.is_array() || span.size() != 2) throw Error(std::string(role) + ".span must be [start,end]");
  auto s = span[0].get<long long>();
  auto e = span[1].get<long long>();
  if (s < 0 || e < 0) throw Error(std::string(role) + ".span must be non-negative");
  m.span = {static_cast<std::size_t>(s), static_cast<std::size_t>(e)};
  return m;
}

}  // namespace detail

/// Parses one record. Throws passatt::Error (not ParseError; callers attach line numbers).
inline Instance instance_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw Error("record must be a JSON object");
  Instance inst;
  inst.text_tokens = j.at("tokens").get<std::vector<std::string>>();
  inst.head = detail::mention_from_json(j.at("h"), "h");
  inst.tail = detail::mention_from_json(j.at("t"), "t");
  inst.source_label = j.at("relation").get<std::string>();
  if (j.contains("lang") && !j["lang"].is_null()) inst.language = j["lang"].get<std::string>();
  return inst;
}

inline std::vector<Instance> read_dataset(std::istream& in, const RelationInventory& inventory) {
  std::vector<Instance> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    Instance inst;
    try {
      inst = instance_from_json(nlohmann::json::parse(line));
      validate_instance(inst);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(lineno, e.what());
    } catch (const Error& e) {
      throw ParseError(lineno, e.what());
    }
    if (!inventory.find(inst.source_label)) {
      throw ParseError(lineno, "unknown relation '" + inst.source_label + "'");
    }
    out.push_back(std::move(inst));
  }
  return out;
}

inline std::vector<Instance> load_dataset(const std::string& path, const RelationInventory& inventory) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open dataset '" + path + "'");
  return read_dataset(in, inventory);
}

inline void write_dataset(std::ostream& out, const std::vector<Instance>& instances) {
  for (const auto& inst : instances) out << instance_to_json(inst).dump() << '\n';
}

inline void save_dataset(const std::string& path, const std::vector<Instance>& instances) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write dataset '" + path + "'");
  write_dataset(out, instances);
}

/// "entity_id<TAB>type" per line.
inline TypeMap load_type_map(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open type map '" + path + "'");
  TypeMap types;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto tab = line.find('\t');
    if (tab == std::string::npos) throw ParseError(lineno, "expected entity_id<TAB>type");
    types[line.substr(0, tab)] = line.substr(tab + 1);
  }
  return types;
}

inline void save_type_map(const std::string& path, const TypeMap& types) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write type map '" + path + "'");
  for (const auto& [id, type] : types) out << id << '\t' << type << '\n';
}

// ---------------------------------------------------------------------------
// Bags and KB

/// One bag per ordered entity pair, in order of first appearance.
inline std::vector<Bag> group_bags(const std::vector<Instance>& instances, const RelationInventory& inventory) {
  std::vector<Bag> bags;
  std::unordered_map<BagKey, std::size_t, BagKeyHash> index;
  for (const auto& inst : instances) {
    BagKey key{inst.head.entity_id, inst.tail.entity_id};
    auto [it, fresh] = index.try_emplace(key, bags.size());
    if (fresh) bags.push_back(Bag{key, {}, {}});
    Bag& bag = bags[it->second];
    bag.instances.push_back(inst);
    auto rel = inventory.find(inst.source_label);
    if (!rel) throw ValidationError("unknown relation '" + inst.source_label + "'");
    if (*rel != kNaRelation) bag.gold_relations.insert(*rel);
  }
  return bags;
}

inline std::vector<Instance> flatten_bags(const std::vector<Bag>& bags) {
  std::vector<Instance> out;
  for (const auto& b : bags) out.insert(out.end(), b.instances.begin(), b.instances.end());
  return out;
}

inline KnowledgeBase build_kb(const std::vector<Bag>& bags, TypeMap types = {}) {
  KnowledgeBase kb;
  for (const auto& bag : bags) {
    for (RelationId r : bag.gold_relations) kb.triples.insert(Triple{bag.key.head, r, bag.key.tail});
  }
  kb.entity_types = std::move(types);
  return kb;
}

}  // namespace passatt
