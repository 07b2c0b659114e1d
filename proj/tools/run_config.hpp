#pragma once

// Declarative run configuration: one JSON document with a section per stage.
// Command-line flags override fields; the effective document is written to
// every run directory.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "pvinspect/pvinspect.hpp"

namespace pvinspect::cli {

struct CurateSettings {
  std::vector<QuotaPolicy> quotas = {{DefectClass::Crack, 0.4}};
  bool augment = true;
  AugmentPlan plan;
  // Classes to augment; empty means every class below plan.target_min.
  std::vector<DefectClass> augment_classes;
  SplitSpec split;
};

struct CorruptSettings {
  CorruptionKind kind = CorruptionKind::GaussianNoise;
  int severity = 1;
  SeverityTable table;
};

struct EvalSettings {
  double band_lo = 0.5;
  double band_hi = 1.0;
  bool plot = false;
};

enum class EnvKind { Bandit, Chain };

struct RlSettings {
  rl::ToyTrainConfig train;
  std::size_t steps = 500;
  EnvKind env = EnvKind::Bandit;
  std::vector<double> bandit_rewards = {1.0, 0.0};
  std::size_t chain_vocab = 3;
  std::vector<int> chain_target = {0, 1, 2};
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
  CurateSettings curate;
  CorruptSettings corrupt;
  EvalSettings eval;
  RlSettings rl;

  // Every problem found, so they can be reported together.
  std::vector<std::string> problems() const {
    std::vector<std::string> out;
    auto check = [&](auto&& fn) {
      try {
        fn();
      } catch (const Error& e) {
        out.push_back(e.what());
      }
    };
    if (jobs < 1) out.push_back("jobs must be positive");
    for (const auto& q : curate.quotas) check([&] { q.validate(); });
    check([&] { curate.plan.validate(); });
    check([&] { curate.split.validate(); });
    check([&] { CorruptionSpec{corrupt.kind, corrupt.severity, seed}.validate(); });
    check([&] { corrupt.table.validate(); });
    if (!(eval.band_lo >= 0.0 && eval.band_lo < eval.band_hi && eval.band_hi <= 1.0))
      out.push_back("eval band must satisfy 0 <= lo < hi <= 1");
    check([&] { rl.train.validate(); });
    if (rl.env == EnvKind::Bandit && rl.bandit_rewards.size() < 2) out.push_back("bandit needs at least 2 arms");
    if (rl.env == EnvKind::Chain) {
      if (rl.chain_vocab < 2 || rl.chain_target.empty()) out.push_back("chain needs vocab >= 2 and a target");
      for (int a : rl.chain_target)
        if (a < 0 || static_cast<std::size_t>(a) >= rl.chain_vocab) out.push_back("chain target outside vocabulary");
    }
    return out;
  }

  void validate() const {
    const auto p = problems();
    if (p.empty()) return;
    std::string msg = "invalid configuration:";
    for (const auto& s : p) msg += "\n  - " + s;
    throw config_error("ConfigInvalid", msg);
  }
};

inline nlohmann::ordered_json to_json(const RunConfig& c) {
  using J = nlohmann::ordered_json;
  J j;
  j["seed"] = c.seed;
  j["jobs"] = c.jobs;

  J quotas = J::array();
  for (const auto& q : c.curate.quotas) quotas.push_back({{"class", canonical_name(q.cls)}, {"retention", q.retention_fraction}});
  J ops = J::array();
  for (const auto& op : c.curate.plan.ops) ops.push_back({{"op", canonical_name(op.kind)}, {"params", op.params}});
  J classes = J::array();
  for (auto cls : c.curate.augment_classes) classes.push_back(canonical_name(cls));
  j["curate"] = {
      {"quotas", quotas},
      {"augment",
       {{"enabled", c.curate.augment},
        {"target_min", c.curate.plan.target_min},
        {"target_max", c.curate.plan.target_max},
        {"ops", ops},
        {"classes", classes}}},
      {"split", {{"train", c.curate.split.train}, {"val", c.curate.split.val}, {"test", c.curate.split.test}}},
  };
  j["corrupt"] = {{"kind", canonical_name(c.corrupt.kind)}, {"severity", c.corrupt.severity}, {"table", to_json(c.corrupt.table)}};
  j["eval"] = {{"band", {c.eval.band_lo, c.eval.band_hi}}, {"plot", c.eval.plot}};
  const auto& t = c.rl.train;
  J env;
  if (c.rl.env == EnvKind::Bandit)
    env = {{"type", "bandit"}, {"rewards", c.rl.bandit_rewards}};
  else
    env = {{"type", "chain"}, {"vocab", c.rl.chain_vocab}, {"target", c.rl.chain_target}};
  j["rl"] = {
      {"method", to_string(t.method)},
      {"k", t.k},
      {"steps", c.rl.steps},
      {"groups_per_step", t.groups_per_step},
      {"rloo_lr", t.rloo_lr},
      {"ppo",
       {{"clip_eps", t.ppo.clip_eps},
        {"kl_beta", t.ppo.kl_beta},
        {"actor_lr", t.ppo.actor_lr},
        {"batch_size", t.ppo.batch_size},
        {"epochs", t.ppo_epochs}}},
      {"gae", {{"gamma", t.gae.gamma}, {"lambda", t.gae.lambda}}},
      {"env", env},
  };
  return j;
}

// Overlays a (possibly partial) document onto the defaults.
inline RunConfig run_config_from_json(const nlohmann::json& j) {
  RunConfig c;
  try {
    c.seed = j.value("seed", c.seed);
    c.jobs = j.value("jobs", c.jobs);
    if (auto cu = j.find("curate"); cu != j.end()) {
      if (cu->contains("quotas")) {
        c.curate.quotas.clear();
        for (const auto& q : cu->at("quotas"))
          c.curate.quotas.push_back({parse_label(q.at("class").get<std::string>()), q.at("retention").get<double>()});
      }
      if (auto a = cu->find("augment"); a != cu->end()) {
        c.curate.augment = a->value("enabled", c.curate.augment);
        c.curate.plan.target_min = a->value("target_min", c.curate.plan.target_min);
        c.curate.plan.target_max = a->value("target_max", c.curate.plan.target_max);
        if (a->contains("ops")) {
          c.curate.plan.ops.clear();
          for (const auto& op : a->at("ops")) {
            const auto kind = parse_augment_kind(op.at("op").get<std::string>());
            c.curate.plan.ops.push_back(
                {kind, op.contains("params") ? op.at("params").get<std::vector<double>>() : allowed_params(kind)});
          }
        }
        if (a->contains("classes"))
          for (const auto& s : a->at("classes")) c.curate.augment_classes.push_back(parse_label(s.get<std::string>()));
      }
      if (auto s = cu->find("split"); s != cu->end()) {
        c.curate.split.train = s->value("train", c.curate.split.train);
        c.curate.split.val = s->value("val", c.curate.split.val);
        c.curate.split.test = s->value("test", c.curate.split.test);
      }
    }
    if (auto co = j.find("corrupt"); co != j.end()) {
      if (co->contains("kind")) c.corrupt.kind = parse_corruption_kind(co->at("kind").get<std::string>());
      c.corrupt.severity = co->value("severity", c.corrupt.severity);
      if (co->contains("table")) c.corrupt.table = severity_table_from_json(co->at("table"));
    }
    if (auto ev = j.find("eval"); ev != j.end()) {
      if (ev->contains("band")) {
        const auto band = ev->at("band").get<std::vector<double>>();
        if (band.size() != 2) throw config_error("ConfigInvalid", "eval.band needs two values");
        c.eval.band_lo = band[0];
        c.eval.band_hi = band[1];
      }
      c.eval.plot = ev->value("plot", c.eval.plot);
    }
    if (auto r = j.find("rl"); r != j.end()) {
      auto& t = c.rl.train;
      if (r->contains("method")) t.method = rl::parse_method(r->at("method").get<std::string>());
      t.k = r->value("k", t.k);
      c.rl.steps = r->value("steps", c.rl.steps);
      t.groups_per_step = r->value("groups_per_step", t.groups_per_step);
      t.rloo_lr = r->value("rloo_lr", t.rloo_lr);
      if (auto p = r->find("ppo"); p != r->end()) {
        t.ppo.clip_eps = p->value("clip_eps", t.ppo.clip_eps);
        t.ppo.kl_beta = p->value("kl_beta", t.ppo.kl_beta);
        t.ppo.actor_lr = p->value("actor_lr", t.ppo.actor_lr);
        t.ppo.batch_size = p->value("batch_size", t.ppo.batch_size);
        t.ppo_epochs = p->value("epochs", t.ppo_epochs);
      }
      if (auto g = r->find("gae"); g != r->end()) {
        t.gae.gamma = g->value("gamma", t.gae.gamma);
        t.gae.lambda = g->value("lambda", t.gae.lambda);
      }
      if (auto e = r->find("env"); e != r->end()) {
        const auto type = e->value("type", std::string("bandit"));
        if (type == "bandit") {
          c.rl.env = EnvKind::Bandit;
          if (e->contains("rewards")) c.rl.bandit_rewards = e->at("rewards").get<std::vector<double>>();
        } else if (type == "chain") {
          c.rl.env = EnvKind::Chain;
          c.rl.chain_vocab = e->value("vocab", c.rl.chain_vocab);
          if (e->contains("target")) c.rl.chain_target = e->at("target").get<std::vector<int>>();
        } else {
          throw config_error("ConfigInvalid", "unknown rl.env.type '" + type + "'");
        }
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw config_error("ConfigInvalid", std::string("malformed configuration: ") + e.what());
  } catch (const Error& e) {
    throw config_error("ConfigInvalid", e.what());
  }
  return c;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw config_error("ConfigNotFound", "cannot open config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw config_error("ConfigInvalid", "config " + path.string() + ": " + e.what());
  }
  return run_config_from_json(j);
}

}  // namespace pvinspect::cli
