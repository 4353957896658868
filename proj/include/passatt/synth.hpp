#pragma once

// Deterministic synthetic distant-supervision corpora: typed entities, a
// ground-truth KB, templated sentences per relation, and distractor sentences
// that inject at-least-one style label noise into positive bags.

#include <cctype>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "passatt/data_model.hpp"
#include "passatt/error.hpp"
#include "passatt/random.hpp"

namespace passatt {

struct RelationSpec {
  std::string name;
  std::string head_type;
  std::string tail_type;
  std::vector<std::string> templates;  // "{h}" / "{t}" mark the entity slots
};

struct SynthSpec {
  std::vector<std::string> types{"person", "city", "organization", "country"};
  int entities_per_type = 60;
  std::vector<RelationSpec> relations;
  std::vector<std::string> distractor_templates;
  int n_bags = 600;
  int bag_size_min = 1;
  int bag_size_max = 8;
  double noise_rate = 0.3;
  double na_bag_fraction = 0.3;
  /// Chance that a positive pair also holds a second relation with the same signature.
  double multi_label_rate = 0.15;
  double train_fraction = 0.7;
  double dev_fraction = 0.1;
  std::string na_name = "NA";
  std::uint64_t seed = 2024;

  /// 4 types, 6 relations, 600 bags, noise 0.3.
  static SynthSpec defaults() {
    SynthSpec s;
    s.relations = {
        {"born_in", "person", "city",
         {"{h} was born in {t} .", "{h} , a native of {t} , spoke on friday .", "born in {t} , {h} moved away early ."}},
        {"lives_in", "person", "city",
         {"{h} lives in {t} with family .", "{h} , a resident of {t} , agreed .", "{h} has made a home in {t} ."}},
        {"works_for", "person", "organization",
         {"{h} works for {t} .", "{h} , an employee of {t} , declined to comment .", "{t} hired {h} last year ."}},
        {"founded", "person", "organization",
         {"{h} founded {t} in the nineties .", "{t} was started by {h} .", "{h} , the founder of {t} , retired ."}},
        {"located_in", "city", "country",
         {"{h} is a city in {t} .", "{h} lies in the north of {t} .", "the {t} city of {h} grew fast ."}},
        {"headquartered_in", "organization", "city",
         {"{h} is based in {t} .", "{h} has its headquarters in {t} .", "{t} hosts the main office of {h} ."}},
    };
    s.distractor_templates = {
        "{h} and {t} appeared in the same report .",
        "the meeting mentioned {h} and {t} briefly .",
        "{t} was discussed after {h} spoke .",
        "reporters asked about {h} and {t} on monday .",
        "a story about {h} also named {t} .",
        "{h} was seen on television near a banner for {t} .",
    };
    return s;
  }

  void validate() const {
    if (relations.empty()) throw ConfigError("synth: need at least one relation");
    std::set<std::string> known(types.begin(), types.end());
    std::set<std::string> names;
    for (const auto& r : relations) {
      if (r.templates.empty()) throw ConfigError("synth: relation '" + r.name + "' has no templates");
      if (!known.contains(r.head_type) || !known.contains(r.tail_type))
        throw ConfigError("synth: relation '" + r.name + "' uses an unknown type");
      if (r.name == na_name || !names.insert(r.name).second)
        throw ConfigError("synth: duplicate or reserved relation name '" + r.name + "'");
      for (const auto& t : r.templates)
        if (t.find("{h}") == std::string::npos || t.find("{t}") == std::string::npos)
          throw ConfigError("synth: template '" + t + "' lacks an entity slot");
    }
    for (const auto& t : distractor_templates)
      if (t.find("{h}") == std::string::npos || t.find("{t}") == std::string::npos)
        throw ConfigError("synth: template '" + t + "' lacks an entity slot");
    if (noise_rate > 0 && distractor_templates.empty()) throw ConfigError("synth: noise needs distractor templates");
    if (na_bag_fraction > 0 && distractor_templates.empty())
      throw ConfigError("synth: NA bags need distractor templates");
    if (!(noise_rate >= 0 && noise_rate < 1)) throw ConfigError("synth: noise_rate must lie in [0, 1)");
    if (!(na_bag_fraction >= 0 && na_bag_fraction <= 1)) throw ConfigError("synth: na_bag_fraction must lie in [0, 1]");
    if (bag_size_min < 1 || bag_size_max < bag_size_min) throw ConfigError("synth: bad bag size range");
    if (entities_per_type < 2) throw ConfigError("synth: need at least 2 entities per type");
    if (n_bags < 1) throw ConfigError("synth: n_bags must be >= 1");
    if (train_fraction < 0 || dev_fraction < 0 || train_fraction + dev_fraction > 1)
      throw ConfigError("synth: split fractions must be non-negative and sum to at most 1");
  }

  RelationInventory inventory() const {
    std::vector<std::string> names{na_name};
    for (const auto& r : relations) names.push_back(r.name);
    return RelationInventory(names, na_name);
  }
};

/// Which template produced an instance: a relation name or "distractor".
struct TemplateTag {
  std::string expresses;
  int template_index = 0;
  bool is_distractor() const { return expresses == "distractor"; }
};

struct SynthSplit {
  std::vector<Bag> bags;
  std::vector<std::vector<TemplateTag>> tags;  // parallel to bags[i].instances
};

struct SynthCorpus {
  RelationInventory inventory;
  SynthSplit train, dev, test;
  KnowledgeBase kb;  // triples of every split plus the type map
  std::map<std::string, std::string> surfaces;
};

namespace detail {

inline std::string entity_surface(const std::string& type, int index) {
  std::string prefix = type.substr(0, 3);
  prefix[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(prefix[0])));
  return prefix + std::to_string(index);
}

inline Instance realize(const std::string& tmpl, const std::string& head_id, const std::string& head_surface,
                        const std::string& tail_id, const std::string& tail_surface, const std::string& label) {
  Instance inst;
  inst.source_label = label;
  std::istringstream in(tmpl);
  for (std::string w; in >> w;) {
    if (w == "{h}") {
      inst.head = {head_id, head_surface, {inst.text_tokens.size(), inst.text_tokens.size() + 1}};
      inst.text_tokens.push_back(head_surface);
    } else if (w == "{t}") {
      inst.tail = {tail_id, tail_surface, {inst.text_tokens.size(), inst.text_tokens.size() + 1}};
      inst.text_tokens.push_back(tail_surface);
    } else {
      inst.text_tokens.push_back(w);
    }
  }
  return inst;
}

}  // namespace detail

inline SynthCorpus generate(const SynthSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  SynthCorpus corpus;
  corpus.inventory = spec.inventory();

  std::map<std::string, std::vector<std::string>> entities;
  for (const auto& type : spec.types) {
    for (int i = 0; i < spec.entities_per_type; ++i) {
      std::string id = type + ":" + std::to_string(i);
      corpus.kb.entity_types[id] = type;
      corpus.surfaces[id] = detail::entity_surface(type, i);
      entities[type].push_back(id);
    }
  }

  const int n_na = static_cast<int>(std::lround(spec.n_bags * spec.na_bag_fraction));
  const int n_pos = spec.n_bags - n_na;
  std::set<BagKey> used;
  struct Draft {
    BagKey key;
    std::set<RelationId> gold;
  };
  std::vector<Draft> drafts;
  const int max_attempts = 1000 * spec.n_bags + 1000;
  int attempts = 0;

  auto draw_pair = [&](const RelationSpec& r) {
    const auto& hs = entities[r.head_type];
    const auto& ts = entities[r.tail_type];
    return BagKey{hs[uniform_index(rng, hs.size())], ts[uniform_index(rng, ts.size())]};
  };

  while (static_cast<int>(drafts.size()) < n_pos) {
    if (++attempts > max_attempts) throw ConfigError("synth: too few entities for the requested positive bags");
    const auto r = static_cast<RelationId>(uniform_index(rng, spec.relations.size()));
    const auto& rs = spec.relations[static_cast<std::size_t>(r)];
    BagKey key = draw_pair(rs);
    if (key.head == key.tail || used.contains(key)) continue;
    std::set<RelationId> gold{r};
    if (uniform_unit(rng) < spec.multi_label_rate) {
      std::vector<RelationId> same;
      for (std::size_t o = 0; o < spec.relations.size(); ++o)
        if (static_cast<RelationId>(o) != r && spec.relations[o].head_type == rs.head_type &&
            spec.relations[o].tail_type == rs.tail_type)
          same.push_back(static_cast<RelationId>(o));
      if (!same.empty()) gold.insert(same[uniform_index(rng, same.size())]);
    }
    used.insert(key);
    for (RelationId g : gold) corpus.kb.triples.insert(Triple{key.head, g, key.tail});
    drafts.push_back({key, gold});
  }
  attempts = 0;
  while (static_cast<int>(drafts.size()) < spec.n_bags) {
    if (++attempts > max_attempts) throw ConfigError("synth: too few entities for the requested NA bags");
    const auto& rs = spec.relations[uniform_index(rng, spec.relations.size())];
    BagKey key = draw_pair(rs);
    if (key.head == key.tail || used.contains(key) || corpus.kb.has_pair(key.head, key.tail)) continue;
    used.insert(key);
    drafts.push_back({key, {}});
  }

  std::vector<Bag> bags;
  std::vector<std::vector<TemplateTag>> tags;
  for (const auto& d : drafts) {
    const std::string& hs = corpus.surfaces.at(d.key.head);
    const std::string& ts = corpus.surfaces.at(d.key.tail);
    int size = spec.bag_size_min + static_cast<int>(uniform_index(
                                       rng, static_cast<std::size_t>(spec.bag_size_max - spec.bag_size_min + 1)));
    Bag bag{d.key, {}, d.gold};
    std::vector<TemplateTag> bag_tags;
    auto add_distractor = [&](const std::string& label) {
      const auto ti = uniform_index(rng, spec.distractor_templates.size());
      bag.instances.push_back(detail::realize(spec.distractor_templates[ti], d.key.head, hs, d.key.tail, ts, label));
      bag_tags.push_back({"distractor", static_cast<int>(ti)});
    };
    if (d.gold.empty()) {
      for (int i = 0; i < size; ++i) add_distractor(spec.na_name);
    } else {
      const auto gold_count = static_cast<int>(d.gold.size());
      auto distractors = [&](int s) { return static_cast<int>(std::floor(spec.noise_rate * s)); };
      while (size - distractors(size) < gold_count) ++size;
      const int n_distract = distractors(size);
      const std::vector<RelationId> gold(d.gold.begin(), d.gold.end());
      for (int i = 0; i < size - n_distract; ++i) {
        const RelationId r = i < gold_count ? gold[static_cast<std::size_t>(i)] : gold[uniform_index(rng, gold.size())];
        const auto& rs = spec.relations[static_cast<std::size_t>(r)];
        const auto ti = uniform_index(rng, rs.templates.size());
        bag.instances.push_back(detail::realize(rs.templates[ti], d.key.head, hs, d.key.tail, ts, rs.name));
        bag_tags.push_back({rs.name, static_cast<int>(ti)});
      }
      // Distant supervision labels every sentence of the pair with a KB relation.
      for (int i = 0; i < n_distract; ++i)
        add_distractor(spec.relations[static_cast<std::size_t>(gold[uniform_index(rng, gold.size())])].name);
    }
    const auto perm = permutation(bag.instances.size(), rng);
    Bag shuffled{bag.key, {}, bag.gold_relations};
    std::vector<TemplateTag> shuffled_tags;
    for (std::size_t i : perm) {
      shuffled.instances.push_back(bag.instances[i]);
      shuffled_tags.push_back(bag_tags[i]);
    }
    bags.push_back(std::move(shuffled));
    tags.push_back(std::move(shuffled_tags));
  }

  const auto order = permutation(bags.size(), rng);
  const auto n_train = static_cast<std::size_t>(std::lround(spec.train_fraction * static_cast<double>(bags.size())));
  const auto n_dev = static_cast<std::size_t>(std::lround(spec.dev_fraction * static_cast<double>(bags.size())));
  for (std::size_t i = 0; i < order.size(); ++i) {
    SynthSplit& split = i < n_train ? corpus.train : (i < n_train + n_dev ? corpus.dev : corpus.test);
    split.bags.push_back(bags[order[i]]);
    split.tags.push_back(tags[order[i]]);
  }
  return corpus;
}

/// Tag sidecar: one JSON record per dataset line, in the same order.
inline void write_tags(std::ostream& out, const SynthSplit& split) {
  for (const auto& bag_tags : split.tags)
    for (const auto& t : bag_tags)
      out << nlohmann::json{{"expresses", t.expresses}, {"template", t.template_index}}.dump() << '\n';
}

}  // namespace passatt
