#pragma once

// Vocabulary with reserved special tokens, entity-marker insertion, and
// construction of the fixed-length "passage of instances" for a bag.

#include <algorithm>
#include <array>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "passatt/data_model.hpp"
#include "passatt/error.hpp"
#include "passatt/random.hpp"

namespace passatt {

using TokenId = std::int32_t;

namespace special {
inline constexpr TokenId kCls = 0;
inline constexpr TokenId kSep = 1;
inline constexpr TokenId kPad = 2;
inline constexpr TokenId kUnk = 3;
inline constexpr TokenId kHeadOpen = 4;
inline constexpr TokenId kHeadClose = 5;
inline constexpr TokenId kTailOpen = 6;
inline constexpr TokenId kTailClose = 7;
inline constexpr std::size_t kCount = 8;
inline const std::array<std::string, kCount> kNames = {"[CLS]", "[SEP]", "[PAD]", "[UNK]", "<h>", "</h>", "<t>", "</t>"};
}  // namespace special

/// Reserved tokens own ids 0..7. Corpus words live in a separate map, so a
/// literal "[PAD]" in text gets its own id instead of the reserved one.
class Vocabulary {
 public:
  Vocabulary() {
    for (const auto& n : special::kNames) tokens_.push_back(n);
  }

  TokenId add(const std::string& word) {
    auto [it, fresh] = ids_.try_emplace(word, static_cast<TokenId>(tokens_.size()));
    if (fresh) tokens_.push_back(word);
    return it->second;
  }

  TokenId id(const std::string& word) const {
    auto it = ids_.find(word);
    return it == ids_.end() ? special::kUnk : it->second;
  }

  bool contains(const std::string& word) const { return ids_.contains(word); }
  const std::string& token(TokenId id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  std::size_t size() const { return tokens_.size(); }

  /// One token per line; line number is the id.
  void save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw Error("cannot write vocabulary '" + path + "'");
    for (const auto& t : tokens_) out << t << '\n';
  }

  static Vocabulary load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open vocabulary '" + path + "'");
    Vocabulary v;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (lineno < special::kCount) {
        if (line != special::kNames[lineno]) {
          throw ParseError(lineno + 1, "expected reserved token " + special::kNames[lineno]);
        }
      } else if (v.add(line) != static_cast<TokenId>(lineno)) {
        throw ParseError(lineno + 1, "duplicate vocabulary entry '" + line + "'");
      }
      ++lineno;
    }
    if (lineno < special::kCount) throw ParseError(lineno, "vocabulary is missing reserved tokens");
    return v;
  }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> ids_;
};

/// Words with corpus frequency >= min_count, ordered by descending count then lexicographically.
inline Vocabulary build_vocab(const std::vector<Instance>& instances, std::size_t min_count = 1) {
  if (min_count < 1) throw ValidationError("min_count must be >= 1");
  std::map<std::string, std::size_t> counts;
  for (const auto& inst : instances)
    for (const auto& tok : inst.text_tokens) ++counts[tok];
  std::vector<std::pair<std::string, std::size_t>> kept;
  for (auto& [tok, c] : counts)
    if (c >= min_count) kept.emplace_back(tok, c);
  std::stable_sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  Vocabulary v;
  for (const auto& [tok, c] : kept) v.add(tok);
  return v;
}

struct EncodedInstance {
  std::vector<TokenId> ids;
  // Offsets of <h>, </h>, <t>, </t> inside `ids`.
  std::array<std::size_t, 4> markers{};
};

inline EncodedInstance encode_instance(const Instance& inst, const Vocabulary& vocab) {
  validate_instance(inst);
  EncodedInstance out;
  out.ids.reserve(inst.text_tokens.size() + 4);
  const auto& h = inst.head.span;
  const auto& t = inst.tail.span;
  for (std::size_t i = 0; i < inst.text_tokens.size(); ++i) {
    if (i == h.start) {
      out.markers[0] = out.ids.size();
      out.ids.push_back(special::kHeadOpen);
    }
    if (i == t.start) {
      out.markers[2] = out.ids.size();
      out.ids.push_back(special::kTailOpen);
    }
    out.ids.push_back(vocab.id(inst.text_tokens[i]));
    if (i + 1 == h.end) {
      out.markers[1] = out.ids.size();
      out.ids.push_back(special::kHeadClose);
    }
    if (i + 1 == t.end) {
      out.markers[3] = out.ids.size();
      out.ids.push_back(special::kTailClose);
    }
  }
  return out;
}

struct InstanceRange {
  std::size_t start = 0;
  std::size_t end = 0;
};

struct Passage {
  BagKey key;
  std::vector<TokenId> token_ids;
  std::vector<bool> attn_mask;  // true = non-PAD
  std::vector<InstanceRange> instance_boundaries;
  std::vector<std::array<std::size_t, 4>> marker_positions;
  std::vector<std::size_t> included;
  std::vector<std::size_t> skipped_oversized;
  std::size_t content_length = 0;
  std::size_t pre_truncation_token_count = 0;

  std::size_t max_len() const { return token_ids.size(); }
  std::size_t pad_count() const { return token_ids.size() - content_length; }
};

/// Draws instances in a seed-determined order and appends each (plus one [SEP])
/// until the next one would overflow `max_len` or the bag is exhausted.
/// Instances that cannot fit even alone are skipped and listed in `skipped_oversized`.
inline Passage build_passage(const Bag& bag, const Vocabulary& vocab, std::size_t max_len, std::uint64_t seed) {
  if (bag.instances.empty()) throw ValidationError("bag " + bag.key.str() + " has no instances");
  std::vector<EncodedInstance> encoded;
  encoded.reserve(bag.instances.size());
  Passage p;
  p.key = bag.key;
  p.pre_truncation_token_count = 1;
  for (const auto& inst : bag.instances) {
    encoded.push_back(encode_instance(inst, vocab));
    p.pre_truncation_token_count += encoded.back().ids.size() + 1;
  }

  Rng rng(seed);
  const auto order = permutation(encoded.size(), rng);

  p.token_ids.reserve(max_len);
  p.token_ids.push_back(special::kCls);
  for (std::size_t idx : order) {
    const auto& enc = encoded[idx];
    const std::size_t need = enc.ids.size() + 1;
    if (1 + need > max_len) {
      p.skipped_oversized.push_back(idx);
      continue;
    }
    if (p.token_ids.size() + need > max_len) break;
    const std::size_t start = p.token_ids.size();
    p.token_ids.insert(p.token_ids.end(), enc.ids.begin(), enc.ids.end());
    p.instance_boundaries.push_back({start, start + enc.ids.size()});
    p.marker_positions.push_back({start + enc.markers[0], start + enc.markers[1], start + enc.markers[2],
                                  start + enc.markers[3]});
    p.included.push_back(idx);
    p.token_ids.push_back(special::kSep);
  }
  if (p.included.empty()) {
    throw ValidationError("no instance of bag " + bag.key.str() + " fits in " + std::to_string(max_len) + " tokens");
  }
  p.content_length = p.token_ids.size();
  p.token_ids.resize(max_len, special::kPad);
  p.attn_mask.assign(max_len, false);
  std::fill(p.attn_mask.begin(), p.attn_mask.begin() + static_cast<std::ptrdiff_t>(p.content_length), true);
  return p;
}

inline std::uint64_t key_hash(const BagKey& key) {
  return stable_hash(key.tail, stable_hash("\x1f", stable_hash(key.head)));
}

/// Seed for evaluation passages: fixed per bag.
inline std::uint64_t eval_passage_seed(std::uint64_t base, const BagKey& key) {
  return mix_seed(base, key_hash(key));
}

/// Seed for training passages: re-drawn every epoch.
inline std::uint64_t train_passage_seed(std::uint64_t base, std::uint64_t epoch, const BagKey& key) {
  return mix_seed(base, epoch + 1, key_hash(key));
}

}  // namespace passatt
