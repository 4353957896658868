#pragma once

// Aggregation heads.
//
// PassageAttHead: per-relation dot-product attention over every passage
// position, then one binary classifier shared by all relations.
// IntraBagHead: the instance-level baselines (att, avg, one, shared_q) over
// independently encoded instances.

#include <cstddef>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "passatt/data_model.hpp"
#include "passatt/encoder.hpp"
#include "passatt/error.hpp"
#include "passatt/tensor.hpp"

namespace passatt {

template <class T>
struct PassageAttHead {
  nx::Tensor<T> relation_queries;   // N × d
  nx::Tensor<T> classifier_weight;  // d × 1
  nx::Tensor<T> classifier_bias;    // 1 × 1
  bool attend_pad = true;

  std::size_t num_relations() const { return static_cast<std::size_t>(relation_queries.rows()); }

  NamedParams<T> named_parameters() const {
    return {{"head.relation_queries", relation_queries},
            {"head.classifier.weight", classifier_weight},
            {"head.classifier.bias", classifier_bias}};
  }
};

template <class T>
PassageAttHead<T> init_passage_att_head(std::size_t num_relations, int hidden_dim, std::uint64_t seed,
                                        bool attend_pad = true) {
  Rng rng(seed);
  PassageAttHead<T> h;
  h.classifier_weight = nx::Tensor<T>(truncated_normal<T>(hidden_dim, 1, kInitStd, rng), true);
  h.classifier_bias = nx::Tensor<T>::zeros(1, 1, true);
  h.relation_queries =
      nx::Tensor<T>(truncated_normal<T>(static_cast<nx::Index>(num_relations), hidden_dim, kInitStd, rng), true);
  h.attend_pad = attend_pad;
  return h;
}

template <class T>
struct PassageSummary {
  nx::Tensor<T> summaries;  // N × d
  nx::Tensor<T> attention;  // N × L, rows sum to 1
};

/// α^i = softmax_j ⟨r_i, z_j⟩ over all L positions (PAD masked out when
/// attend_pad is false); summary_i = Σ_j α^i_j z_j.
template <class T>
PassageSummary<T> summarize_passage(const EncoderOutput<T>& enc, const PassageAttHead<T>& head) {
  if (enc.embeddings.cols() != head.relation_queries.cols())
    throw ShapeError("summarize_passage: embedding width " + std::to_string(enc.embeddings.cols()) +
                     " != query width " + std::to_string(head.relation_queries.cols()));
  nx::Tensor<T> logits = nx::matmul_nt(head.relation_queries, enc.embeddings);
  nx::Mat<T> mask;
  if (!head.attend_pad) mask = nx::additive_mask<T>({true}, enc.attn_mask);
  nx::Tensor<T> attention = nx::softmax_rows(logits, mask);
  return {nx::matmul(attention, enc.embeddings), attention};
}

/// c_i = sigmoid(⟨w, summary_i⟩ + b) with one (w, b) for every relation. Returns N × 1.
template <class T>
nx::Tensor<T> score_triples(const nx::Tensor<T>& summaries, const PassageAttHead<T>& head) {
  return nx::sigmoid(nx::matmul(summaries, head.classifier_weight) + head.classifier_bias);
}

inline constexpr double kConfidenceClip = 1e-7;

/// Mean binary cross-entropy over relations, confidences clipped to [1e-7, 1-1e-7].
template <class T>
nx::Tensor<T> multilabel_loss(const nx::Tensor<T>& confidences, const std::vector<T>& gold) {
  if (static_cast<nx::Index>(gold.size()) != confidences.size())
    throw ShapeError("multilabel_loss: gold has " + std::to_string(gold.size()) + " labels, confidences " +
                     confidences.shape_str());
  nx::Mat<T> y(confidences.rows(), confidences.cols());
  for (nx::Index i = 0; i < y.size(); ++i) y.data()[i] = gold[static_cast<std::size_t>(i)];
  nx::Mat<T> not_y = (T(1) - y.array()).matrix();
  const T lo = static_cast<T>(kConfidenceClip);
  nx::Tensor<T> c = nx::clip(confidences, lo, T(1) - lo);
  nx::Tensor<T> pos = nx::mask_mul(nx::log(c), y);
  nx::Tensor<T> neg = nx::mask_mul(nx::log(nx::affine(c, T(-1), T(1))), not_y);
  return nx::scale(nx::mean(pos + neg), T(-1));
}

/// {0,1}^N indicator of a bag's gold relations.
template <class T>
std::vector<T> gold_vector(const std::set<RelationId>& gold, std::size_t num_relations) {
  std::vector<T> y(num_relations, T(0));
  for (RelationId r : gold) {
    if (r < 0 || static_cast<std::size_t>(r) >= num_relations)
      throw ValidationError("gold relation id " + std::to_string(r) + " outside inventory");
    y[static_cast<std::size_t>(r)] = T(1);
  }
  return y;
}

// ---------------------------------------------------------------------------
// Intra-bag baselines

enum class IntraBagMode { kAtt, kAvg, kOne, kSharedQuery };

inline IntraBagMode parse_intra_bag_mode(const std::string& s) {
  if (s == "att") return IntraBagMode::kAtt;
  if (s == "avg") return IntraBagMode::kAvg;
  if (s == "one") return IntraBagMode::kOne;
  if (s == "shared_q") return IntraBagMode::kSharedQuery;
  throw ConfigError("unknown intra-bag mode '" + s + "' (expected att, avg, one or shared_q)");
}

inline std::string to_string(IntraBagMode m) {
  switch (m) {
    case IntraBagMode::kAtt: return "att";
    case IntraBagMode::kAvg: return "avg";
    case IntraBagMode::kOne: return "one";
    case IntraBagMode::kSharedQuery: return "shared_q";
  }
  return "?";
}

template <class T>
struct IntraBagHead {
  IntraBagMode mode = IntraBagMode::kAtt;
  nx::Tensor<T> relation_queries;  // N × d', att only
  nx::Tensor<T> shared_query;      // d' × 1, shared_q only
  nx::Tensor<T> class_weight;      // N × d'
  nx::Tensor<T> class_bias;        // N × 1

  std::size_t num_relations() const { return static_cast<std::size_t>(class_weight.rows()); }

  NamedParams<T> named_parameters() const {
    NamedParams<T> out{{"head.class_weight", class_weight}, {"head.class_bias", class_bias}};
    if (mode == IntraBagMode::kAtt) out.emplace_back("head.relation_queries", relation_queries);
    if (mode == IntraBagMode::kSharedQuery) out.emplace_back("head.shared_query", shared_query);
    return out;
  }
};

/// The scoring layer is drawn first, so heads of different modes built from
/// one seed share identical class weights and biases.
template <class T>
IntraBagHead<T> init_intra_bag_head(IntraBagMode mode, std::size_t num_relations, int repr_dim,
                                    std::uint64_t seed) {
  Rng rng(seed);
  const auto n = static_cast<nx::Index>(num_relations);
  IntraBagHead<T> h;
  h.mode = mode;
  h.class_weight = nx::Tensor<T>(truncated_normal<T>(n, repr_dim, kInitStd, rng), true);
  h.class_bias = nx::Tensor<T>::zeros(n, 1, true);
  nx::Mat<T> queries = truncated_normal<T>(n, repr_dim, kInitStd, rng);
  nx::Mat<T> shared = truncated_normal<T>(repr_dim, 1, kInitStd, rng);
  if (mode == IntraBagMode::kAtt) h.relation_queries = nx::Tensor<T>(std::move(queries), true);
  if (mode == IntraBagMode::kSharedQuery) h.shared_query = nx::Tensor<T>(std::move(shared), true);
  return h;
}

template <class T>
struct IntraBagOutput {
  nx::Tensor<T> confidences;  // N × 1
  nx::Mat<T> attention;       // N × n (att), 1 × n (shared_q), uniform for avg; empty for one
};

/// `instances` holds E(t_i) row-wise (n × d').
template <class T>
IntraBagOutput<T> intra_bag_forward(const nx::Tensor<T>& instances, const IntraBagHead<T>& head) {
  if (instances.rows() < 1) throw ShapeError("intra_bag_forward: bag has no instance encodings");
  if (instances.cols() != head.class_weight.cols())
    throw ShapeError("intra_bag_forward: instance width " + std::to_string(instances.cols()) + " != head width " +
                     std::to_string(head.class_weight.cols()));
  const nx::Index n = instances.rows();
  IntraBagOutput<T> out;
  switch (head.mode) {
    case IntraBagMode::kAtt: {
      nx::Tensor<T> alpha = nx::softmax_rows(nx::matmul_nt(head.relation_queries, instances));  // N × n
      nx::Tensor<T> per_relation = nx::matmul(alpha, instances);                                // N × d'
      nx::Tensor<T> logits = nx::sum_cols(per_relation * head.class_weight) + head.class_bias;
      out.confidences = nx::sigmoid(logits);
      out.attention = alpha.value();
      break;
    }
    case IntraBagMode::kAvg: {
      nx::Tensor<T> bag = nx::mean_rows(instances);  // 1 × d'
      out.confidences = nx::sigmoid(nx::matmul_nt(head.class_weight, bag) + head.class_bias);
      out.attention = nx::Mat<T>::Constant(1, n, T(1) / static_cast<T>(n));
      break;
    }
    case IntraBagMode::kOne: {
      nx::Tensor<T> per_instance =
          nx::sigmoid(nx::matmul_nt(instances, head.class_weight) + nx::transpose(head.class_bias));  // n × N
      out.confidences = nx::transpose(nx::max_rows(per_instance));
      break;
    }
    case IntraBagMode::kSharedQuery: {
      nx::Tensor<T> alpha = nx::softmax_rows(nx::transpose(nx::matmul(instances, head.shared_query)));  // 1 × n
      nx::Tensor<T> bag = nx::matmul(alpha, instances);                                                // 1 × d'
      out.confidences = nx::sigmoid(nx::matmul_nt(head.class_weight, bag) + head.class_bias);
      out.attention = alpha.value();
      break;
    }
  }
  return out;
}

/// E(t) = [z_<h> ; z_<t>] for an instance encoded alone as [CLS] tokens [SEP].
template <class T>
nx::Tensor<T> encode_instance_repr(const Instance& inst, const Vocabulary& vocab, const EncoderParams<T>& params,
                                   const EncoderConfig& cfg, bool train_mode = false, Rng* rng = nullptr) {
  EncodedInstance enc = encode_instance(inst, vocab);
  std::vector<TokenId> ids;
  ids.reserve(enc.ids.size() + 2);
  ids.push_back(special::kCls);
  ids.insert(ids.end(), enc.ids.begin(), enc.ids.end());
  ids.push_back(special::kSep);
  if (ids.size() > static_cast<std::size_t>(cfg.max_len)) {
    // Keep the markers in view: cut trailing context first.
    const std::size_t last_marker = 1 + std::max(enc.markers[1], enc.markers[3]);
    if (last_marker + 2 > static_cast<std::size_t>(cfg.max_len))
      throw ValidationError("instance too long for the encoder even after truncation");
    ids.resize(static_cast<std::size_t>(cfg.max_len));
    ids.back() = special::kSep;
  }
  std::vector<bool> mask(ids.size(), true);
  EncoderOutput<T> out = encode<T>(std::span<const TokenId>(ids), mask, params, cfg, train_mode, rng);
  const std::vector<std::size_t> rows{1 + enc.markers[0], 1 + enc.markers[2]};
  nx::Tensor<T> picked = nx::gather_rows<T>(out.embeddings, rows);  // 2 × d
  return nx::concat_cols<T>({nx::gather_rows<T>(picked, std::vector<std::size_t>{0}),
                             nx::gather_rows<T>(picked, std::vector<std::size_t>{1})});
}

}  // namespace passatt
