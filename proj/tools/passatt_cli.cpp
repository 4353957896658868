// passatt: batch command-line front end.
//
//   passatt <command> [--config FILE] [--set section.key=value ...] [flags]
//
// Configuration is a JSON object; defaults are merged under the file, then
// flags. The effective configuration is written to every output directory.

#include <CLI11.hpp>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <json.hpp>
#include <sstream>
#include <string>
#include <vector>

#include "passatt/passatt.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace passatt;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigViolations : std::runtime_error {
  std::vector<std::string> items;
  explicit ConfigViolations(std::vector<std::string> v) : std::runtime_error("invalid configuration"), items(std::move(v)) {}
};

// ---------------------------------------------------------------------------
// Configuration

json encoder_to_json(const EncoderConfig& e) {
  return {{"num_layers", e.num_layers},     {"num_heads", e.num_heads}, {"hidden_dim", e.hidden_dim},
          {"ffn_dim", e.ffn_dim},           {"max_len", e.max_len},     {"dropout_rate", e.dropout_rate},
          {"positional", e.positional == PositionalKind::kLearned ? "learned" : "sinusoidal"}};
}

EncoderConfig encoder_from_json(const json& j) {
  EncoderConfig e;
  e.num_layers = j.at("num_layers").get<int>();
  e.num_heads = j.at("num_heads").get<int>();
  e.hidden_dim = j.at("hidden_dim").get<int>();
  e.ffn_dim = j.at("ffn_dim").get<int>();
  e.max_len = j.at("max_len").get<int>();
  e.dropout_rate = j.at("dropout_rate").get<double>();
  const auto pos = j.at("positional").get<std::string>();
  if (pos != "learned" && pos != "sinusoidal") throw ConfigError("encoder.positional must be learned or sinusoidal");
  e.positional = pos == "learned" ? PositionalKind::kLearned : PositionalKind::kSinusoidal;
  if (j.contains("vocab_size")) e.vocab_size = j.at("vocab_size").get<int>();
  return e;
}

json model_to_json(const ModelConfig& m) {
  return {{"kind", m.kind}, {"attend_pad", m.attend_pad}, {"max_instances", m.max_instances}};
}

ModelConfig model_from_json(const json& j) {
  ModelConfig m;
  m.kind = j.at("kind").get<std::string>();
  m.attend_pad = j.at("attend_pad").get<bool>();
  m.max_instances = j.at("max_instances").get<int>();
  return m;
}

json trainer_to_json(const TrainConfig& t) {
  return {{"learning_rate", t.learning_rate},
          {"weight_decay", t.weight_decay},
          {"batch_size", t.batch_size},
          {"max_epochs", t.max_epochs},
          {"beta1", t.beta1},
          {"beta2", t.beta2},
          {"adam_eps", t.adam_eps},
          {"grad_clip_norm", t.grad_clip_norm ? json(*t.grad_clip_norm) : json(nullptr)},
          {"seed", t.seed},
          {"eval_every", t.eval_every},
          {"eval_seed", t.eval_seed}};
}

TrainConfig trainer_from_json(const json& j) {
  TrainConfig t;
  t.learning_rate = j.at("learning_rate").get<double>();
  t.weight_decay = j.at("weight_decay").get<double>();
  t.batch_size = j.at("batch_size").get<int>();
  t.max_epochs = j.at("max_epochs").get<int>();
  t.beta1 = j.at("beta1").get<double>();
  t.beta2 = j.at("beta2").get<double>();
  t.adam_eps = j.at("adam_eps").get<double>();
  if (!j.at("grad_clip_norm").is_null()) t.grad_clip_norm = j.at("grad_clip_norm").get<double>();
  t.seed = j.at("seed").get<std::uint64_t>();
  t.eval_every = j.at("eval_every").get<int>();
  t.eval_seed = j.at("eval_seed").get<std::uint64_t>();
  return t;
}

json defaults() {
  const SynthSpec s = SynthSpec::defaults();
  return {
      {"seed", 1},
      {"precision", "float"},
      {"output_dir", "run"},
      {"checkpoint", ""},
      {"resume", ""},
      {"data", {{"train", ""}, {"dev", ""}, {"test", ""}, {"relations", ""}, {"types", ""}}},
      {"vocab", {{"path", ""}, {"min_count", 1}}},
      {"encoder", encoder_to_json(EncoderConfig::desk(0))},
      {"model", model_to_json(ModelConfig{})},
      {"trainer", trainer_to_json(TrainConfig{})},
      {"evaluation", {{"eval_seed", 17}}},
      {"analysis",
       {{"pad_sample_n", 1000}, {"pad_seed", 3}, {"threshold", 0.5}, {"num_bins", 7}, {"permute_seed", 7}}},
      {"synth",
       {{"n_bags", s.n_bags},
        {"entities_per_type", s.entities_per_type},
        {"bag_size_min", s.bag_size_min},
        {"bag_size_max", s.bag_size_max},
        {"noise_rate", s.noise_rate},
        {"na_bag_fraction", s.na_bag_fraction},
        {"multi_label_rate", s.multi_label_rate},
        {"train_fraction", s.train_fraction},
        {"dev_fraction", s.dev_fraction},
        {"seed", s.seed}}},
  };
}

/// Overlays `src` onto `dst`, recording keys that `dst` does not know and type clashes.
void merge_into(json& dst, const json& src, const std::string& where, std::vector<std::string>& errors) {
  for (auto it = src.begin(); it != src.end(); ++it) {
    const std::string key = where.empty() ? it.key() : where + "." + it.key();
    if (!dst.contains(it.key())) {
      errors.push_back("unknown key '" + key + "'");
      continue;
    }
    json& slot = dst[it.key()];
    if (slot.is_object()) {
      if (!it->is_object()) {
        errors.push_back("'" + key + "' must be an object");
        continue;
      }
      merge_into(slot, *it, key, errors);
    } else if (slot.is_number_integer() && it->is_number_float()) {
      errors.push_back("'" + key + "' must be an integer");
    } else if (slot.is_null() || it->is_null() || slot.type() == it->type() ||
               (slot.is_number() && it->is_number())) {
      slot = *it;
    } else {
      errors.push_back("'" + key + "' has the wrong type (expected " + std::string(slot.type_name()) + ")");
    }
  }
}

/// "a.b.c=value" into a nested object; the value is JSON when it parses, otherwise a string.
json assignment(const std::string& text) {
  const auto eq = text.find('=');
  if (eq == std::string::npos || eq == 0) throw UsageError("--set expects key=value, got '" + text + "'");
  const std::string path = text.substr(0, eq), raw = text.substr(eq + 1);
  json value = json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;
  json out = value;
  std::vector<std::string> parts;
  std::stringstream ss(path);
  for (std::string p; std::getline(ss, p, '.');) parts.push_back(p);
  for (auto it = parts.rbegin(); it != parts.rend(); ++it) out = json{{*it, out}};
  return out;
}

struct Invocation {
  std::string config_file;
  std::vector<std::string> sets;
  json flags = json::object();  // dedicated flags, already nested
};

json effective_config(const Invocation& inv) {
  json cfg = defaults();
  std::vector<std::string> errors;
  if (!inv.config_file.empty()) {
    std::ifstream in(inv.config_file);
    if (!in) throw UsageError("cannot open config file '" + inv.config_file + "'");
    json file = json::parse(in, nullptr, false);
    if (file.is_discarded() || !file.is_object())
      throw ConfigViolations({"config file '" + inv.config_file + "' is not a JSON object"});
    merge_into(cfg, file, "", errors);
  }
  for (const auto& s : inv.sets) merge_into(cfg, assignment(s), "", errors);
  merge_into(cfg, inv.flags, "", errors);

  auto check = [&](auto&& fn) {
    try {
      fn();
    } catch (const std::exception& e) {
      errors.push_back(e.what());
    }
  };
  check([&] {
    auto e = encoder_from_json(cfg["encoder"]);
    e.vocab_size = static_cast<int>(special::kCount);  // the real size is known once a vocabulary exists
    e.validate();
  });
  check([&] { model_from_json(cfg["model"]).validate(); });
  check([&] { trainer_from_json(cfg["trainer"]).validate(); });
  const auto precision = cfg["precision"].get<std::string>();
  if (precision != "float" && precision != "double") errors.push_back("precision must be float or double");
  if (cfg["vocab"]["min_count"].get<int>() < 1) errors.push_back("vocab.min_count must be >= 1");
  const auto& a = cfg["analysis"];
  if (a["num_bins"].get<int>() < 1) errors.push_back("analysis.num_bins must be >= 1");
  if (a["pad_sample_n"].get<int>() < 1) errors.push_back("analysis.pad_sample_n must be >= 1");
  if (!(a["threshold"].get<double>() > 0 && a["threshold"].get<double>() < 1))
    errors.push_back("analysis.threshold must lie in (0, 1)");
  if (!errors.empty()) throw ConfigViolations(errors);
  return cfg;
}

SynthSpec synth_spec(const json& j) {
  SynthSpec s = SynthSpec::defaults();
  s.n_bags = j.at("n_bags").get<int>();
  s.entities_per_type = j.at("entities_per_type").get<int>();
  s.bag_size_min = j.at("bag_size_min").get<int>();
  s.bag_size_max = j.at("bag_size_max").get<int>();
  s.noise_rate = j.at("noise_rate").get<double>();
  s.na_bag_fraction = j.at("na_bag_fraction").get<double>();
  s.multi_label_rate = j.at("multi_label_rate").get<double>();
  s.train_fraction = j.at("train_fraction").get<double>();
  s.dev_fraction = j.at("dev_fraction").get<double>();
  s.seed = j.at("seed").get<std::uint64_t>();
  return s;
}

// ---------------------------------------------------------------------------
// Artifacts

fs::path prepare_output(const json& cfg, const std::string& command) {
  fs::path dir = cfg["output_dir"].get<std::string>();
  fs::create_directories(dir);
  json echo = cfg;
  echo["command"] = command;
  std::ofstream(dir / "config.json") << echo.dump(2) << '\n';
  std::ofstream(dir / "seed.txt") << cfg["seed"].get<std::uint64_t>() << '\n';
  return dir;
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out << j.dump(2) << '\n';
}

const std::string& require_path(const json& cfg, const std::string& section, const std::string& key,
                                const std::string& flag, const std::string& command) {
  const json& slot = section.empty() ? cfg[key] : cfg[section][key];
  if (slot.get<std::string>().empty()) throw UsageError(command + " requires " + flag);
  return slot.get_ref<const std::string&>();
}

std::vector<Bag> load_split(const std::string& path, const RelationInventory& inv) {
  return group_bags(load_dataset(path, inv), inv);
}

json inventory_json(const RelationInventory& inv) { return inv.names(); }

RelationInventory inventory_from_json(const json& j) {
  auto names = j.get<std::vector<std::string>>();
  if (names.empty()) throw Error("checkpoint relation list is empty");
  const std::string na = names.front();
  return RelationInventory(std::move(names), na);
}

json vocab_json(const Vocabulary& v) {
  json words = json::array();
  for (std::size_t i = special::kCount; i < v.size(); ++i) words.push_back(v.token(static_cast<TokenId>(i)));
  return words;
}

Vocabulary vocab_from_json(const json& j) {
  Vocabulary v;
  for (const auto& w : j) v.add(w.get<std::string>());
  return v;
}

/// A checkpoint carries everything needed to rebuild its model.
struct LoadedModel {
  std::string precision;
  ModelConfig model;
  EncoderConfig encoder;
  RelationInventory inventory;
  std::shared_ptr<const Vocabulary> vocab;
  TensorFile file;
};

LoadedModel load_checkpoint(const std::string& path) {
  LoadedModel m;
  m.file = read_tensor_file(path);
  auto meta = [&](const char* key) -> json {
    auto it = m.file.meta.find(key);
    if (it == m.file.meta.end()) throw Error(std::string("checkpoint lacks metadata '") + key + "'");
    return json::parse(it->second);
  };
  m.precision = meta("precision").get<std::string>();
  m.model = model_from_json(meta("model_config"));
  m.encoder = encoder_from_json(meta("encoder_config"));
  m.inventory = inventory_from_json(meta("relations"));
  m.vocab = std::make_shared<Vocabulary>(vocab_from_json(meta("vocab")));
  return m;
}

std::map<std::string, std::string> checkpoint_meta(const std::string& precision, const ModelConfig& mc,
                                                   const EncoderConfig& ec, const RelationInventory& inv,
                                                   const Vocabulary& vocab) {
  return {{"precision", json(precision).dump()},
          {"model_config", model_to_json(mc).dump()},
          {"encoder_config", [&] {
             json e = encoder_to_json(ec);
             e["vocab_size"] = ec.vocab_size;
             return e.dump();
           }()},
          {"relations", inventory_json(inv).dump()},
          {"vocab", vocab_json(vocab).dump()}};
}

/// Calls fn(model) with a Model<float> or Model<double> restored from the checkpoint.
template <class Fn>
void with_model(const LoadedModel& lm, Fn&& fn) {
  auto run = [&]<class T>(std::type_identity<T>) {
    Model<T> model(lm.model, lm.encoder, lm.vocab, lm.inventory.size(), 0);
    Checkpoint<T>::from_file(lm.file).apply_to(model);
    fn(model);
  };
  if (lm.precision == "double")
    run(std::type_identity<double>{});
  else
    run(std::type_identity<float>{});
}

std::string fmt_opt(const std::optional<double>& v) {
  if (!v) return "-";
  std::ostringstream s;
  s << std::fixed << std::setprecision(4) << *v;
  return s.str();
}

// ---------------------------------------------------------------------------
// Commands

int cmd_gen_synth(const json& cfg) {
  const fs::path dir = prepare_output(cfg, "gen-synth");
  const SynthCorpus c = generate(synth_spec(cfg["synth"]));
  c.inventory.save((dir / "relations.txt").string());
  save_type_map((dir / "types.tsv").string(), c.kb.entity_types);
  json summary{{"relations", c.inventory.size()}};
  for (const auto& [name, split] : {std::pair{"train", &c.train}, {"dev", &c.dev}, {"test", &c.test}}) {
    save_dataset((dir / (std::string(name) + ".jsonl")).string(), flatten_bags(split->bags));
    std::ofstream tags(dir / (std::string(name) + "_tags.jsonl"));
    write_tags(tags, *split);
    std::size_t na = 0;
    for (const auto& b : split->bags) na += b.is_na();
    summary[name] = {{"bags", split->bags.size()}, {"na_bags", na}};
  }
  write_json(dir / "summary.json", summary);
  std::cout << "wrote synthetic corpus to " << dir.string() << '\n';
  return 0;
}

int cmd_build_vocab(const json& cfg) {
  const auto& train = require_path(cfg, "data", "train", "--train", "build-vocab");
  const auto& rel = require_path(cfg, "data", "relations", "--relations", "build-vocab");
  const fs::path dir = prepare_output(cfg, "build-vocab");
  const auto inv = RelationInventory::load(rel);
  const Vocabulary v = build_vocab(load_dataset(train, inv), cfg["vocab"]["min_count"].get<std::size_t>());
  v.save((dir / "vocab.txt").string());
  write_json(dir / "summary.json", {{"vocab_size", v.size()}});
  std::cout << "vocabulary of " << v.size() << " tokens written to " << (dir / "vocab.txt").string() << '\n';
  return 0;
}

int cmd_train(const json& cfg) {
  const auto& train_path = require_path(cfg, "data", "train", "--train", "train");
  const auto& rel = require_path(cfg, "data", "relations", "--relations", "train");
  const fs::path dir = prepare_output(cfg, "train");
  const auto inv = RelationInventory::load(rel);
  const auto train_bags = load_split(train_path, inv);
  std::vector<Bag> dev_bags;
  if (!cfg["data"]["dev"].get<std::string>().empty()) dev_bags = load_split(cfg["data"]["dev"], inv);

  const std::string vocab_path = cfg["vocab"]["path"];
  auto vocab = std::make_shared<Vocabulary>(
      vocab_path.empty() ? build_vocab(flatten_bags(train_bags), cfg["vocab"]["min_count"].get<std::size_t>())
                         : Vocabulary::load(vocab_path));
  vocab->save((dir / "vocab.txt").string());

  const ModelConfig mc = model_from_json(cfg["model"]);
  EncoderConfig ec = encoder_from_json(cfg["encoder"]);
  ec.vocab_size = static_cast<int>(vocab->size());
  const TrainConfig tc = trainer_from_json(cfg["trainer"]);
  const std::string precision = cfg["precision"];
  const auto meta = checkpoint_meta(precision, mc, ec, inv, *vocab);

  std::ofstream log(dir / "train_log.jsonl");
  auto on_log = [&](const TrainLogRecord& r) {
    json rec{{"step", r.step},
             {"epoch", r.epoch},
             {"loss", std::isfinite(r.loss) ? json(r.loss) : json(nullptr)},
             {"lr", r.lr},
             {"val_auc", r.val_auc ? json(*r.val_auc) : json(nullptr)}};
    log << rec.dump() << '\n';
    if (r.val_auc) std::cerr << "epoch " << r.epoch << " step " << r.step << " val_auc " << *r.val_auc << '\n';
  };

  json summary;
  auto run = [&]<class T>(std::type_identity<T>) {
    Model<T> model(mc, ec, vocab, inv.size(), cfg["seed"].get<std::uint64_t>());
    std::optional<Checkpoint<T>> resume;
    if (!cfg["resume"].get<std::string>().empty()) resume = Checkpoint<T>::load(cfg["resume"].get<std::string>());
    const auto t0 = std::chrono::steady_clock::now();
    auto result = train(model, train_bags, dev_bags, tc, resume ? &*resume : nullptr, on_log);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    for (auto* ck : {&result.best, &result.last}) ck->extra_meta = meta;
    result.best.save((dir / "best.ckpt").string());
    result.last.save((dir / "last.ckpt").string());
    summary = {{"train_bags", train_bags.size()},
               {"dev_bags", dev_bags.size()},
               {"steps", result.last.step},
               {"epochs", result.last.epoch},
               {"best_val_auc", result.best.best_val_auc >= 0 ? json(result.best.best_val_auc) : json(nullptr)},
               {"seconds", secs},
               {"checkpoint", (dir / "best.ckpt").string()}};
  };
  if (precision == "double")
    run(std::type_identity<double>{});
  else
    run(std::type_identity<float>{});
  write_json(dir / "summary.json", summary);
  std::cout << summary.dump(2) << '\n';
  return 0;
}

int cmd_eval(const json& cfg) {
  const auto& ckpt = require_path(cfg, "", "checkpoint", "--checkpoint", "eval");
  const auto& test = require_path(cfg, "data", "test", "--test", "eval");
  const fs::path dir = prepare_output(cfg, "eval");
  const auto lm = load_checkpoint(ckpt);
  const auto bags = load_split(test, lm.inventory);
  const auto seed = cfg["evaluation"]["eval_seed"].get<std::uint64_t>();
  with_model(lm, [&](const auto& model) {
    const auto rt = rank_triples(model, bags, seed);
    const auto report = evaluate_ranking(rt, lm.inventory.size());
    write_json(dir / "metrics.json", to_json(report));
    write_pr_csv((dir / "pr_curve.csv").string(), pr_curve(rt));
    std::cout << to_json(report).dump(2) << '\n';
  });
  return 0;
}

int cmd_analyze_pad(const json& cfg) {
  const auto& ckpt = require_path(cfg, "", "checkpoint", "--checkpoint", "analyze-pad");
  const auto& test = require_path(cfg, "data", "test", "--test", "analyze-pad");
  const fs::path dir = prepare_output(cfg, "analyze-pad");
  const auto lm = load_checkpoint(ckpt);
  const auto bags = load_split(test, lm.inventory);
  const auto& a = cfg["analysis"];
  with_model(lm, [&](const auto& model) {
    const auto stats =
        pad_attention_stats(model, bags, a["pad_sample_n"].get<std::size_t>(), a["pad_seed"].get<std::uint64_t>(),
                            a["threshold"].get<double>(), cfg["evaluation"]["eval_seed"].get<std::uint64_t>());
    write_json(dir / "pad_stats.json", to_json(stats));
    std::cout << to_json(stats).dump(2) << '\n';
  });
  return 0;
}

int cmd_analyze_bins(const json& cfg) {
  const auto& ckpt = require_path(cfg, "", "checkpoint", "--checkpoint", "analyze-bins");
  const auto& test = require_path(cfg, "data", "test", "--test", "analyze-bins");
  const fs::path dir = prepare_output(cfg, "analyze-bins");
  const auto lm = load_checkpoint(ckpt);
  const auto bags = load_split(test, lm.inventory);
  with_model(lm, [&](const auto& model) {
    const auto bins = length_bins(model, bags, cfg["analysis"]["num_bins"].get<std::size_t>(),
                                  cfg["evaluation"]["eval_seed"].get<std::uint64_t>());
    std::ofstream csv(dir / "length_bins.csv");
    write_bins_csv(csv, bins);
    write_bins_csv(std::cout, bins);
  });
  return 0;
}

int cmd_permute_test(const json& cfg) {
  const auto& test = require_path(cfg, "data", "test", "--test", "permute-test");
  const auto& rel = require_path(cfg, "data", "relations", "--relations", "permute-test");
  const auto& types = require_path(cfg, "data", "types", "--types", "permute-test");
  const fs::path dir = prepare_output(cfg, "permute-test");
  const auto inv = RelationInventory::load(rel);
  const auto test_bags = load_split(test, inv);
  std::vector<Bag> all = test_bags;
  for (const char* split : {"train", "dev"}) {
    const std::string p = cfg["data"][split];
    if (p.empty()) continue;
    auto more = load_split(p, inv);
    all.insert(all.end(), more.begin(), more.end());
  }
  const auto kb = build_kb(all, load_type_map(types));
  const auto out = permute_entities(test_bags, kb, collect_surfaces(all), cfg["analysis"]["permute_seed"]);
  save_dataset((dir / "test_permuted.jsonl").string(), flatten_bags(out.bags));
  {
    std::ofstream plan(dir / "permutation_plan.jsonl");
    write_plan(plan, out.plan);
  }
  json summary{{"input_bags", test_bags.size()},
               {"output_bags", out.bags.size()},
               {"replacements", out.plan.replacements.size()},
               {"skipped", out.plan.skipped.size()}};
  if (!cfg["checkpoint"].get<std::string>().empty()) {
    const auto lm = load_checkpoint(cfg["checkpoint"]);
    with_model(lm, [&](const auto& model) {
      const auto seed = cfg["evaluation"]["eval_seed"].get<std::uint64_t>();
      summary["original_auc"] = evaluate_model(model, test_bags, seed).auc;
      summary["permuted_auc"] = evaluate_model(model, out.bags, seed).auc;
    });
  }
  write_json(dir / "summary.json", summary);
  std::cout << summary.dump(2) << '\n';
  return 0;
}

MetricsReport read_report(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open metrics file '" + path + "'");
  return metrics_from_json(json::parse(in));
}

int cmd_compare(const std::string& a_path, const std::string& b_path, const std::string& out_dir) {
  const auto rows = compare_reports(read_report(a_path), read_report(b_path));
  std::cout << std::left << std::setw(10) << "metric" << std::right << std::setw(10) << "A" << std::setw(10) << "B"
            << std::setw(10) << "B-A" << '\n';
  json table = json::array();
  for (const auto& r : rows) {
    std::cout << std::left << std::setw(10) << r.metric << std::right << std::setw(10) << fmt_opt(r.a)
              << std::setw(10) << fmt_opt(r.b) << std::setw(10) << fmt_opt(r.delta()) << '\n';
    auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
    table.push_back({{"metric", r.metric}, {"a", opt(r.a)}, {"b", opt(r.b)}, {"delta", opt(r.delta())}});
  }
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    write_json(fs::path(out_dir) / "compare.json", {{"a", a_path}, {"b", b_path}, {"rows", table}});
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"passage-level attention relation extraction"};
  app.require_subcommand(1);
  Invocation inv;

  struct Flag {
    std::string name, path, help;
  };
  // Dedicated flags are shorthands for config keys.
  const std::vector<Flag> path_flags{
      {"--out", "output_dir", "output directory"},
      {"--checkpoint", "checkpoint", "checkpoint file"},
      {"--resume", "resume", "checkpoint to continue training from"},
      {"--train", "data.train", "training split (JSONL)"},
      {"--dev", "data.dev", "validation split (JSONL)"},
      {"--test", "data.test", "test split (JSONL)"},
      {"--relations", "data.relations", "relation inventory (NA first)"},
      {"--types", "data.types", "entity type map (TSV)"},
      {"--vocab", "vocab.path", "vocabulary file"},
      {"--precision", "precision", "float or double"},
      {"--kind", "model.kind", "passage_att, att, avg, one or shared_q"},
  };
  std::map<std::string, std::string> path_values;
  std::optional<std::uint64_t> seed;
  std::optional<int> epochs;
  std::optional<double> lr;
  std::optional<bool> attend_pad;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", inv.config_file, "JSON config file");
    sub->add_option("--set", inv.sets, "override a config key, e.g. --set trainer.batch_size=8");
    for (const auto& f : path_flags) sub->add_option(f.name, path_values[f.path], f.help);
    sub->add_option("--seed", seed, "model initialisation seed");
    sub->add_option("--epochs", epochs, "trainer.max_epochs");
    sub->add_option("--lr", lr, "trainer.learning_rate");
    sub->add_option("--attend-pad", attend_pad, "model.attend_pad (true/false)");
  };

  const std::vector<std::pair<std::string, std::string>> commands{
      {"gen-synth", "generate the synthetic corpus"},
      {"build-vocab", "build a vocabulary from the training split"},
      {"train", "train a model and write checkpoints"},
      {"eval", "evaluate a checkpoint on a split"},
      {"analyze-pad", "PAD attention statistics"},
      {"analyze-bins", "AUC by passage length bin"},
      {"permute-test", "entity permutation of the test split"},
  };
  std::map<std::string, CLI::App*> subs;
  for (const auto& [name, help] : commands) add_common(subs[name] = app.add_subcommand(name, help));

  std::string cmp_a, cmp_b, cmp_out;
  auto* compare = app.add_subcommand("compare", "compare two metrics.json files");
  compare->add_option("a", cmp_a, "first metrics.json")->required();
  compare->add_option("b", cmp_b, "second metrics.json")->required();
  compare->add_option("--out", cmp_out, "directory for compare.json");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    if (compare->parsed()) return cmd_compare(cmp_a, cmp_b, cmp_out);

    std::string command;
    for (const auto& [name, sub] : subs)
      if (sub->parsed()) command = name;

    for (const auto& [path, value] : path_values)
      if (!value.empty()) inv.flags.merge_patch(assignment(path + "=" + json(value).dump()));
    if (seed) inv.flags["seed"] = *seed;
    if (epochs) inv.flags["trainer"]["max_epochs"] = *epochs;
    if (lr) inv.flags["trainer"]["learning_rate"] = *lr;
    if (attend_pad) inv.flags["model"]["attend_pad"] = *attend_pad;
    const json cfg = effective_config(inv);

    if (command == "gen-synth") return cmd_gen_synth(cfg);
    if (command == "build-vocab") return cmd_build_vocab(cfg);
    if (command == "train") return cmd_train(cfg);
    if (command == "eval") return cmd_eval(cfg);
    if (command == "analyze-pad") return cmd_analyze_pad(cfg);
    if (command == "analyze-bins") return cmd_analyze_bins(cfg);
    if (command == "permute-test") return cmd_permute_test(cfg);
    throw UsageError("unknown command");
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 2;
  } catch (const ConfigViolations& e) {
    std::cerr << "configuration error:\n";
    for (const auto& v : e.items) std::cerr << "  - " << v << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
