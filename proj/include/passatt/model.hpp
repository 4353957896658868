#pragma once

// Encoder + aggregation head bundles that share one forward() contract, so
// the trainer, evaluator and analyses work with either scheme.

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "passatt/checkpoint_io.hpp"
#include "passatt/encoder.hpp"
#include "passatt/heads.hpp"
#include "passatt/passage.hpp"

namespace passatt {

struct ModelConfig {
  /// "passage_att", or an intra-bag mode: "att", "avg", "one", "shared_q".
  std::string kind = "passage_att";
  bool attend_pad = true;
  /// Intra-bag baselines encode at most this many instances per bag.
  int max_instances = 16;

  bool is_passage_att() const { return kind == "passage_att"; }
  void validate() const {
    if (!is_passage_att()) parse_intra_bag_mode(kind);
    if (max_instances < 1) throw ConfigError("model.max_instances must be >= 1");
  }
};

template <class T>
struct BagPrediction {
  nx::Tensor<T> confidences;        // N × 1
  nx::Mat<T> attention;             // N × L (passage_att) or over instances (baselines)
  std::optional<Passage> passage;   // passage_att only
};

template <class T>
class Model {
 public:
  Model(ModelConfig cfg, EncoderConfig enc_cfg, std::shared_ptr<const Vocabulary> vocab, std::size_t num_relations,
        std::uint64_t seed)
      : config_(std::move(cfg)), encoder_config_(enc_cfg), vocab_(std::move(vocab)) {
    config_.validate();
    if (!vocab_) throw ConfigError("model needs a vocabulary");
    if (encoder_config_.vocab_size == 0) encoder_config_.vocab_size = static_cast<int>(vocab_->size());
    if (static_cast<std::size_t>(encoder_config_.vocab_size) < vocab_->size())
      throw ConfigError("encoder.vocab_size smaller than the vocabulary");
    encoder_config_.validate();
    if (num_relations == 0) throw ConfigError("model needs at least one non-NA relation");
    encoder_ = init_encoder_params<T>(encoder_config_, mix_seed(seed, 1));
    if (config_.is_passage_att()) {
      head_ = init_passage_att_head<T>(num_relations, encoder_config_.hidden_dim, mix_seed(seed, 2),
                                       config_.attend_pad);
    } else {
      head_ = init_intra_bag_head<T>(parse_intra_bag_mode(config_.kind), num_relations,
                                     2 * encoder_config_.hidden_dim, mix_seed(seed, 2));
    }
  }

  const ModelConfig& config() const { return config_; }
  const EncoderConfig& encoder_config() const { return encoder_config_; }
  const Vocabulary& vocab() const { return *vocab_; }
  std::shared_ptr<const Vocabulary> vocab_ptr() const { return vocab_; }
  const EncoderParams<T>& encoder() const { return encoder_; }
  EncoderParams<T>& encoder() { return encoder_; }
  std::size_t num_relations() const {
    return std::visit([](const auto& h) { return h.num_relations(); }, head_);
  }
  bool is_passage_att() const { return config_.is_passage_att(); }
  const PassageAttHead<T>& passage_head() const { return std::get<PassageAttHead<T>>(head_); }
  PassageAttHead<T>& passage_head() { return std::get<PassageAttHead<T>>(head_); }
  const IntraBagHead<T>& intra_head() const { return std::get<IntraBagHead<T>>(head_); }
  IntraBagHead<T>& intra_head() { return std::get<IntraBagHead<T>>(head_); }

  NamedParams<T> named_parameters() const {
    NamedParams<T> out = encoder_.named_parameters();
    auto h = std::visit([](const auto& head) { return head.named_parameters(); }, head_);
    out.insert(out.end(), h.begin(), h.end());
    return out;
  }

  /// `passage_seed` fixes instance order (passage_att) or instance sampling (baselines).
  BagPrediction<T> forward(const Bag& bag, std::uint64_t passage_seed, bool train_mode = false,
                           Rng* dropout_rng = nullptr) const {
    BagPrediction<T> out;
    if (is_passage_att()) {
      Passage p = build_passage(bag, *vocab_, static_cast<std::size_t>(encoder_config_.max_len), passage_seed);
      EncoderOutput<T> enc = encode<T>(p, encoder_, encoder_config_, train_mode, dropout_rng);
      const auto& head = passage_head();
      PassageSummary<T> s = summarize_passage(enc, head);
      out.confidences = score_triples(s.summaries, head);
      out.attention = s.attention.value();
      out.passage = std::move(p);
      return out;
    }
    std::vector<std::size_t> chosen(bag.instances.size());
    for (std::size_t i = 0; i < chosen.size(); ++i) chosen[i] = i;
    if (chosen.size() > static_cast<std::size_t>(config_.max_instances)) {
      Rng rng(passage_seed);
      shuffle(chosen, rng);
      chosen.resize(static_cast<std::size_t>(config_.max_instances));
      std::sort(chosen.begin(), chosen.end());
    }
    std::vector<nx::Tensor<T>> reprs;
    for (std::size_t i : chosen)
      reprs.push_back(
          encode_instance_repr<T>(bag.instances[i], *vocab_, encoder_, encoder_config_, train_mode, dropout_rng));
    IntraBagOutput<T> o = intra_bag_forward(nx::concat_rows(reprs), intra_head());
    out.confidences = o.confidences;
    out.attention = std::move(o.attention);
    return out;
  }

  /// Confidences only, without recording a graph.
  std::vector<double> predict(const Bag& bag, std::uint64_t passage_seed) const {
    nx::NoGradGuard guard;
    auto pred = forward(bag, passage_seed);
    std::vector<double> c(static_cast<std::size_t>(pred.confidences.size()));
    for (std::size_t i = 0; i < c.size(); ++i) c[i] = static_cast<double>(pred.confidences.value().data()[i]);
    return c;
  }

  void store(TensorFile& file) const {
    for (const auto& [name, t] : named_parameters()) file.add<T>(name, t.value());
  }

  /// Copies parameter values from `file`; shapes must match.
  void restore(const TensorFile& file) {
    for (auto& [name, t] : named_parameters()) {
      const StoredTensor& s = file.at(name);
      nx::Mat<T> m = s.as_matrix<T>();
      if (m.rows() != t.rows() || m.cols() != t.cols())
        throw Error("checkpoint tensor '" + name + "' has shape [" + std::to_string(m.rows()) + "x" +
                    std::to_string(m.cols()) + "], model expects " + t.shape_str());
      nx::Tensor<T> handle = t;
      handle.mutable_value() = std::move(m);
    }
  }

 private:
  ModelConfig config_;
  EncoderConfig encoder_config_;
  std::shared_ptr<const Vocabulary> vocab_;
  EncoderParams<T> encoder_;
  std::variant<PassageAttHead<T>, IntraBagHead<T>> head_;
};

}  // namespace passatt
