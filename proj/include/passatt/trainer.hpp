#pragma once

#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "passatt/checkpoint_io.hpp"
#include "passatt/error.hpp"
#include "passatt/evaluation.hpp"
#include "passatt/heads.hpp"
#include "passatt/model.hpp"
#include "passatt/random.hpp"

namespace passatt {

struct TrainConfig {
  double learning_rate = 2e-5;
  double weight_decay = 1e-5;
  int batch_size = 16;
  int max_epochs = 10;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::optional<double> grad_clip_norm;
  std::uint64_t seed = 13;
  /// Validate every this many optimizer steps; 0 validates at the end of each epoch.
  int eval_every = 0;
  std::uint64_t eval_seed = 17;

  void validate() const {
    if (!(learning_rate > 0)) throw ConfigError("trainer.learning_rate must be positive");
    if (weight_decay < 0) throw ConfigError("trainer.weight_decay must be non-negative");
    if (batch_size < 1) throw ConfigError("trainer.batch_size must be >= 1");
    if (max_epochs < 0) throw ConfigError("trainer.max_epochs must be >= 0");
    if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1)) throw ConfigError("trainer betas must lie in [0, 1)");
    if (!(adam_eps > 0)) throw ConfigError("trainer.adam_eps must be positive");
    if (grad_clip_norm && !(*grad_clip_norm > 0)) throw ConfigError("trainer.grad_clip_norm must be positive");
    if (eval_every < 0) throw ConfigError("trainer.eval_every must be >= 0");
  }

  std::string fingerprint() const {
    std::ostringstream s;
    s.precision(17);
    s << learning_rate << '|' << weight_decay << '|' << batch_size << '|' << max_epochs << '|' << beta1 << '|'
      << beta2 << '|' << adam_eps << '|' << (grad_clip_norm ? *grad_clip_norm : -1.0) << '|' << seed << '|'
      << eval_every << '|' << eval_seed;
    return s.str();
  }
};

/// Adam with decoupled weight decay: p ← p·(1 − lr·wd) − lr·m̂/(√v̂ + ε).
template <class T>
class AdamW {
 public:
  struct Moments {
    nx::Mat<T> m, v;
  };

  explicit AdamW(const TrainConfig& cfg) : cfg_(cfg) {}

  void step(const NamedParams<T>& params) {
    ++t_;
    const T b1 = static_cast<T>(cfg_.beta1), b2 = static_cast<T>(cfg_.beta2);
    const T bc1 = T(1) - static_cast<T>(std::pow(cfg_.beta1, static_cast<double>(t_)));
    const T bc2 = T(1) - static_cast<T>(std::pow(cfg_.beta2, static_cast<double>(t_)));
    const T lr = static_cast<T>(cfg_.learning_rate);
    const T decay = T(1) - lr * static_cast<T>(cfg_.weight_decay);
    const T eps = static_cast<T>(cfg_.adam_eps);
    for (const auto& [name, p] : params) {
      auto& mo = moments_[name];
      if (mo.m.size() == 0) {
        mo.m = nx::Mat<T>::Zero(p.rows(), p.cols());
        mo.v = nx::Mat<T>::Zero(p.rows(), p.cols());
      }
      nx::Tensor<T> handle = p;
      nx::Mat<T>& value = handle.mutable_value();
      if (handle.has_grad()) {
        const nx::Mat<T> g = handle.grad();
        mo.m = b1 * mo.m + (T(1) - b1) * g;
        mo.v = b2 * mo.v + (T(1) - b2) * g.cwiseAbs2();
      } else {
        mo.m *= b1;
        mo.v *= b2;
      }
      value *= decay;
      value.array() -= lr * (mo.m.array() / bc1) / ((mo.v.array() / bc2).sqrt() + eps);
    }
  }

  std::int64_t steps() const { return t_; }
  void set_steps(std::int64_t t) { t_ = t; }
  std::map<std::string, Moments>& moments() { return moments_; }
  const std::map<std::string, Moments>& moments() const { return moments_; }

 private:
  TrainConfig cfg_;
  std::int64_t t_ = 0;
  std::map<std::string, Moments> moments_;
};

template <class T>
double global_grad_norm(const NamedParams<T>& params) {
  double sq = 0.0;
  for (const auto& [name, p] : params)
    if (p.has_grad()) sq += static_cast<double>(p.grad().squaredNorm());
  return std::sqrt(sq);
}

template <class T>
void zero_grads(const NamedParams<T>& params) {
  for (auto [name, p] : params) p.zero_grad();
}

namespace detail {
inline std::string exact_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}
inline double parse_double(const std::string& s) {
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc()) throw Error("bad number '" + s + "' in checkpoint metadata");
  return v;
}
}  // namespace detail

template <class T>
struct Checkpoint {
  std::vector<std::pair<std::string, nx::Mat<T>>> params;
  std::map<std::string, typename AdamW<T>::Moments> moments;
  std::int64_t epoch = 0;  // completed epochs
  std::int64_t step = 0;   // optimizer steps taken
  std::string config_hash;
  double best_val_auc = -1.0;  // -1 when no validation ran
  std::map<std::string, std::string> extra_meta;

  static Checkpoint capture(const Model<T>& model, const AdamW<T>* opt) {
    Checkpoint c;
    for (const auto& [name, t] : model.named_parameters()) c.params.emplace_back(name, t.value());
    if (opt) c.moments = opt->moments();
    return c;
  }

  void apply_to(Model<T>& model) const {
    TensorFile f;
    for (const auto& [name, m] : params) f.add<T>(name, m);
    model.restore(f);
  }

  TensorFile to_file() const {
    TensorFile f;
    f.meta = extra_meta;
    f.meta["epoch"] = std::to_string(epoch);
    f.meta["step"] = std::to_string(step);
    f.meta["config_hash"] = config_hash;
    f.meta["best_val_auc"] = detail::exact_double(best_val_auc);
    for (const auto& [name, m] : params) f.add<T>(name, m);
    for (const auto& [name, mo] : moments) {
      f.add<T>("adam.m/" + name, mo.m);
      f.add<T>("adam.v/" + name, mo.v);
    }
    return f;
  }

  static Checkpoint from_file(const TensorFile& f) {
    Checkpoint c;
    c.extra_meta = f.meta;
    auto take = [&](const char* k) {
      auto it = c.extra_meta.find(k);
      if (it == c.extra_meta.end()) throw Error(std::string("checkpoint metadata lacks '") + k + "'");
      std::string v = it->second;
      c.extra_meta.erase(it);
      return v;
    };
    c.epoch = std::stoll(take("epoch"));
    c.step = std::stoll(take("step"));
    c.config_hash = take("config_hash");
    c.best_val_auc = detail::parse_double(take("best_val_auc"));
    for (const auto& t : f.tensors) {
      if (t.name.rfind("adam.m/", 0) == 0) {
        c.moments[t.name.substr(7)].m = t.as_matrix<T>();
      } else if (t.name.rfind("adam.v/", 0) == 0) {
        c.moments[t.name.substr(7)].v = t.as_matrix<T>();
      } else {
        c.params.emplace_back(t.name, t.as_matrix<T>());
      }
    }
    return c;
  }

  void save(const std::string& path) const { write_tensor_file(path, to_file()); }
  static Checkpoint load(const std::string& path) { return from_file(read_tensor_file(path)); }
};

struct TrainLogRecord {
  std::int64_t step = 0;
  std::int64_t epoch = 0;
  double loss = 0.0;
  double lr = 0.0;
  std::optional<double> val_auc;
};

template <class T>
struct TrainResult {
  Checkpoint<T> best;  // best validation AUC (or last state when no dev split)
  Checkpoint<T> last;  // resume point
  std::vector<double> step_losses;
};

/// Trains `model` in place; on return the model holds the best checkpoint's
/// parameters. `resume` continues from a `last` checkpoint of an earlier run.
template <class T>
TrainResult<T> train(Model<T>& model, const std::vector<Bag>& train_bags, const std::vector<Bag>& dev_bags,
                     const TrainConfig& cfg, const std::type_identity_t<Checkpoint<T>>* resume = nullptr,
                     const std::function<void(const TrainLogRecord&)>& log = {}) {
  cfg.validate();
  if (train_bags.empty()) throw TrainingError("train split is empty");
  const std::string hash = std::to_string(stable_hash(cfg.fingerprint() + "|" + model.config().kind));
  const NamedParams<T> params = model.named_parameters();
  AdamW<T> opt(cfg);
  TrainResult<T> result;
  std::int64_t epoch = 0, step = 0;
  double best_auc = -1.0;
  std::optional<Checkpoint<T>> best;

  if (resume) {
    resume->apply_to(model);
    opt.moments() = resume->moments;
    opt.set_steps(resume->step);
    epoch = resume->epoch;
    step = resume->step;
    best_auc = resume->best_val_auc;
  }

  auto snapshot = [&] {
    Checkpoint<T> c = Checkpoint<T>::capture(model, &opt);
    c.epoch = epoch;
    c.step = step;
    c.config_hash = hash;
    c.best_val_auc = best_auc;
    return c;
  };

  auto validate = [&]() -> std::optional<double> {
    if (dev_bags.empty()) return std::nullopt;
    bool any_positive = false;
    for (const auto& b : dev_bags) any_positive = any_positive || !b.is_na();
    if (!any_positive) return std::nullopt;
    const double a = evaluate_model(model, dev_bags, cfg.eval_seed).auc;
    if (a > best_auc) {
      best_auc = a;
      best = snapshot();
    }
    return a;
  };

  const std::size_t n = train_bags.size();
  const std::size_t relations = model.num_relations();
  for (; epoch < cfg.max_epochs;) {
    Rng order_rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(epoch), 0x0bad5eedULL));
    const auto order = permutation(n, order_rng);
    for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(n, start + static_cast<std::size_t>(cfg.batch_size));
      const T inv_batch = T(1) / static_cast<T>(end - start);
      double batch_loss = 0.0;
      for (std::size_t i = start; i < end; ++i) {
        const Bag& bag = train_bags[order[i]];
        Rng dropout_rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(step), i));
        auto pred = model.forward(bag, train_passage_seed(cfg.seed, static_cast<std::uint64_t>(epoch), bag.key), true,
                                  &dropout_rng);
        nx::Tensor<T> loss = multilabel_loss(pred.confidences, gold_vector<T>(bag.gold_relations, relations));
        const double lv = static_cast<double>(loss.item());
        if (!std::isfinite(lv))
          throw TrainingError("non-finite loss at step " + std::to_string(step) + " for bag " + bag.key.str());
        batch_loss += lv;
        nx::backward(nx::scale(loss, inv_batch));
      }
      if (cfg.grad_clip_norm) {
        const double norm = global_grad_norm(params);
        if (norm > *cfg.grad_clip_norm) {
          const T f = static_cast<T>(*cfg.grad_clip_norm / norm);
          for (const auto& [name, p] : params)
            if (p.has_grad()) p.node()->grad *= f;
        }
      }
      opt.step(params);
      zero_grads(params);
      ++step;
      batch_loss /= static_cast<double>(end - start);
      result.step_losses.push_back(batch_loss);
      TrainLogRecord rec{step, epoch, batch_loss, cfg.learning_rate, std::nullopt};
      if (cfg.eval_every > 0 && step % cfg.eval_every == 0) rec.val_auc = validate();
      if (log) log(rec);
    }
    ++epoch;
    if (cfg.eval_every == 0) {
      auto a = validate();
      if (log && a) log(TrainLogRecord{step, epoch, std::numeric_limits<double>::quiet_NaN(), cfg.learning_rate, a});
    }
  }

  result.last = snapshot();
  if (best) {
    best->best_val_auc = best_auc;
    result.best = std::move(*best);
    result.best.apply_to(model);
  } else {
    result.best = result.last;
  }
  return result;
}

}  // namespace passatt
