#pragma once

// Post-LN transformer encoder with two-sided padding masks: non-PAD queries
// attend only to non-PAD keys, and PAD positions skip the attention sublayer
// entirely (their residual stream sees a zero attention update). A PAD
// output therefore depends only on its position index and the parameters.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "passatt/error.hpp"
#include "passatt/passage.hpp"
#include "passatt/random.hpp"
#include "passatt/tensor.hpp"

namespace passatt {

template <class T>
using NamedParams = std::vector<std::pair<std::string, nx::Tensor<T>>>;

enum class PositionalKind { kLearned, kSinusoidal };

struct EncoderConfig {
  int num_layers = 2;
  int num_heads = 4;
  int hidden_dim = 64;
  int ffn_dim = 256;
  int max_len = 128;
  int vocab_size = 0;
  double dropout_rate = 0.1;
  PositionalKind positional = PositionalKind::kLearned;

  static EncoderConfig desk(int vocab_size) {
    EncoderConfig c;
    c.vocab_size = vocab_size;
    return c;
  }

  /// BERT-base geometry. Not exercised by the test suite.
  static EncoderConfig paper_scale(int vocab_size) {
    EncoderConfig c;
    c.num_layers = 12;
    c.num_heads = 12;
    c.hidden_dim = 768;
    c.ffn_dim = 3072;
    c.max_len = 512;
    c.vocab_size = vocab_size;
    return c;
  }

  void validate() const {
    if (num_layers < 1) throw ConfigError("encoder.num_layers must be >= 1");
    if (num_heads < 1 || hidden_dim < 1 || hidden_dim % num_heads != 0)
      throw ConfigError("encoder.hidden_dim must be a positive multiple of encoder.num_heads");
    if (ffn_dim < 1) throw ConfigError("encoder.ffn_dim must be >= 1");
    if (max_len < 2) throw ConfigError("encoder.max_len must be >= 2");
    if (vocab_size < static_cast<int>(special::kCount))
      throw ConfigError("encoder.vocab_size must cover the reserved tokens");
    if (dropout_rate < 0.0 || dropout_rate >= 1.0) throw ConfigError("encoder.dropout_rate must lie in [0, 1)");
  }
};

/// Truncated normal at two standard deviations.
template <class T>
nx::Mat<T> truncated_normal(nx::Index rows, nx::Index cols, double stddev, Rng& rng) {
  nx::Mat<T> m(rows, cols);
  for (nx::Index i = 0; i < m.size(); ++i) {
    double z;
    do {
      double u1 = uniform_unit(rng);
      double u2 = uniform_unit(rng);
      if (u1 <= 0.0) u1 = 0x1.0p-53;
      z = std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
    } while (std::abs(z) > 2.0);
    m.data()[i] = static_cast<T>(z * stddev);
  }
  return m;
}

inline constexpr double kInitStd = 0.02;

template <class T>
struct EncoderLayer {
  nx::Tensor<T> wq, bq, wk, wv, bv, wo, bo;  // no key bias: it shifts each logit row uniformly
  nx::Tensor<T> ln1_gain, ln1_bias;
  nx::Tensor<T> w1, b1, w2, b2;
  nx::Tensor<T> ln2_gain, ln2_bias;
};

template <class T>
struct EncoderParams {
  nx::Tensor<T> token_embedding;
  nx::Tensor<T> position_embedding;  // learned: max_len × d; sinusoidal: constant table
  nx::Tensor<T> embed_ln_gain, embed_ln_bias;
  std::vector<EncoderLayer<T>> layers;

  NamedParams<T> named_parameters() const {
    NamedParams<T> out{{"encoder.token_embedding", token_embedding}};
    if (position_embedding.requires_grad()) out.emplace_back("encoder.position_embedding", position_embedding);
    out.emplace_back("encoder.embed_ln.gain", embed_ln_gain);
    out.emplace_back("encoder.embed_ln.bias", embed_ln_bias);
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const auto& l = layers[i];
      const std::string p = "encoder.layer" + std::to_string(i) + ".";
      for (auto& [n, t] : std::initializer_list<std::pair<const char*, const nx::Tensor<T>&>>{
               {"attn.wq", l.wq}, {"attn.bq", l.bq}, {"attn.wk", l.wk}, {"attn.wv", l.wv},
               {"attn.bv", l.bv}, {"attn.wo", l.wo}, {"attn.bo", l.bo},
               {"ln1.gain", l.ln1_gain}, {"ln1.bias", l.ln1_bias}, {"ffn.w1", l.w1}, {"ffn.b1", l.b1},
               {"ffn.w2", l.w2}, {"ffn.b2", l.b2}, {"ln2.gain", l.ln2_gain}, {"ln2.bias", l.ln2_bias}})
        out.emplace_back(p + n, t);
    }
    return out;
  }
};

template <class T>
nx::Mat<T> sinusoidal_table(int max_len, int dim) {
  nx::Mat<T> m(max_len, dim);
  for (int pos = 0; pos < max_len; ++pos)
    for (int i = 0; i < dim; ++i) {
      double angle = pos / std::pow(10000.0, 2.0 * (i / 2) / dim);
      m(pos, i) = static_cast<T>(i % 2 == 0 ? std::sin(angle) : std::cos(angle));
    }
  return m;
}

/// Truncated-normal (std 0.02) weights, zero biases, unit layer-norm gains.
template <class T>
EncoderParams<T> init_encoder_params(const EncoderConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  const nx::Index d = cfg.hidden_dim, f = cfg.ffn_dim;
  auto weight = [&](nx::Index r, nx::Index c) { return nx::Tensor<T>(truncated_normal<T>(r, c, kInitStd, rng), true); };
  auto zeros = [](nx::Index c) { return nx::Tensor<T>::zeros(1, c, true); };
  auto ones = [](nx::Index c) { return nx::Tensor<T>(nx::Mat<T>::Ones(1, c), true); };

  EncoderParams<T> p;
  p.token_embedding = weight(cfg.vocab_size, d);
  p.position_embedding = cfg.positional == PositionalKind::kLearned
                             ? weight(cfg.max_len, d)
                             : nx::Tensor<T>(sinusoidal_table<T>(cfg.max_len, cfg.hidden_dim));
  p.embed_ln_gain = ones(d);
  p.embed_ln_bias = zeros(d);
  for (int i = 0; i < cfg.num_layers; ++i) {
    EncoderLayer<T> l;
    l.wq = weight(d, d);
    l.bq = zeros(d);
    l.wk = weight(d, d);
    l.wv = weight(d, d);
    l.bv = zeros(d);
    l.wo = weight(d, d);
    l.bo = zeros(d);
    l.ln1_gain = ones(d);
    l.ln1_bias = zeros(d);
    l.w1 = weight(d, f);
    l.b1 = zeros(f);
    l.w2 = weight(f, d);
    l.b2 = zeros(d);
    l.ln2_gain = ones(d);
    l.ln2_bias = zeros(d);
    p.layers.push_back(std::move(l));
  }
  return p;
}

template <class T>
struct EncoderOutput {
  nx::Tensor<T> embeddings;  // L × d
  std::vector<bool> attn_mask;
};

/// Optional capture of per-layer, per-head attention probabilities (L × L).
template <class T>
struct EncoderTrace {
  std::vector<std::vector<nx::Mat<T>>> attention;
};

template <class T>
EncoderOutput<T> encode(std::span<const TokenId> token_ids, const std::vector<bool>& attn_mask,
                        const EncoderParams<T>& params, const EncoderConfig& cfg, bool train_mode = false,
                        Rng* dropout_rng = nullptr, EncoderTrace<T>* trace = nullptr) {
  const std::size_t len = token_ids.size();
  if (len == 0 || len > static_cast<std::size_t>(cfg.max_len))
    throw ShapeError("encode: sequence length " + std::to_string(len) + " outside [1, " +
                     std::to_string(cfg.max_len) + "]");
  if (attn_mask.size() != len) throw ShapeError("encode: mask length differs from sequence length");
  for (TokenId id : token_ids)
    if (id < 0 || id >= cfg.vocab_size)
      throw ShapeError("encode: token id " + std::to_string(id) + " >= vocab_size " + std::to_string(cfg.vocab_size));
  const bool dropout_on = train_mode && cfg.dropout_rate > 0.0;
  if (dropout_on && dropout_rng == nullptr) throw Error("encode: train_mode with dropout needs an rng");

  using nx::Tensor;
  const auto L = static_cast<nx::Index>(len);
  const nx::Index d = cfg.hidden_dim;
  const nx::Index heads = cfg.num_heads;
  const nx::Index dh = d / heads;
  const T inv_sqrt_dh = T(1) / std::sqrt(static_cast<T>(dh));

  auto drop = [&](const Tensor<T>& x) { return dropout_on ? nx::dropout(x, cfg.dropout_rate, *dropout_rng) : x; };

  std::vector<std::size_t> positions(len);
  for (std::size_t i = 0; i < len; ++i) positions[i] = i;
  Tensor<T> x = nx::embedding<T, TokenId>(params.token_embedding, token_ids) +
                nx::gather_rows<T>(params.position_embedding, positions);
  x = drop(nx::layer_norm(x, params.embed_ln_gain, params.embed_ln_bias));

  const nx::Mat<T> key_query_mask = nx::additive_mask<T>(attn_mask, attn_mask);
  nx::Mat<T> query_rows(L, 1);
  for (nx::Index i = 0; i < L; ++i) query_rows(i, 0) = attn_mask[static_cast<std::size_t>(i)] ? T(1) : T(0);

  if (trace) trace->attention.clear();
  for (const auto& layer : params.layers) {
    Tensor<T> q = nx::matmul(x, layer.wq) + layer.bq;
    Tensor<T> k = nx::matmul(x, layer.wk);
    Tensor<T> v = nx::matmul(x, layer.wv) + layer.bv;
    std::vector<Tensor<T>> contexts;
    if (trace) trace->attention.emplace_back();
    for (nx::Index h = 0; h < heads; ++h) {
      Tensor<T> qh = nx::slice_cols(q, h * dh, dh);
      Tensor<T> kh = nx::slice_cols(k, h * dh, dh);
      Tensor<T> vh = nx::slice_cols(v, h * dh, dh);
      Tensor<T> probs = nx::softmax_rows(nx::scale(nx::matmul_nt(qh, kh), inv_sqrt_dh), key_query_mask);
      if (trace) trace->attention.back().push_back(probs.value());
      contexts.push_back(nx::matmul(drop(probs), vh));
    }
    Tensor<T> attn = nx::matmul(nx::concat_cols(contexts), layer.wo) + layer.bo;
    attn = nx::mask_mul(drop(attn), query_rows);
    Tensor<T> h1 = nx::layer_norm(x + attn, layer.ln1_gain, layer.ln1_bias);
    Tensor<T> ffn = nx::matmul(nx::gelu(nx::matmul(h1, layer.w1) + layer.b1), layer.w2) + layer.b2;
    x = nx::layer_norm(h1 + drop(ffn), layer.ln2_gain, layer.ln2_bias);
  }
  return EncoderOutput<T>{x, attn_mask};
}

template <class T>
EncoderOutput<T> encode(const Passage& passage, const EncoderParams<T>& params, const EncoderConfig& cfg,
                        bool train_mode = false, Rng* dropout_rng = nullptr, EncoderTrace<T>* trace = nullptr) {
  if (passage.max_len() != static_cast<std::size_t>(cfg.max_len))
    throw ShapeError("encode: passage length " + std::to_string(passage.max_len()) + " != max_len " +
                     std::to_string(cfg.max_len));
  return encode<T>(std::span<const TokenId>(passage.token_ids), passage.attn_mask, params, cfg, train_mode,
                   dropout_rng, trace);
}

}  // namespace passatt
