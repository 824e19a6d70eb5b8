#pragma once

#include <cmath>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "tsdcfl/common.hpp"
#include "tsdcfl/learning.hpp"

namespace tsdcfl::config {

enum class Scheme { Tsdcfl, Cyclic, FracRep };

inline std::string to_string(Scheme s) {
  switch (s) {
    case Scheme::Tsdcfl: return "tsdcfl";
    case Scheme::Cyclic: return "cyclic";
    default: return "fracrep";
  }
}

inline Scheme scheme_from_string(const std::string& s) {
  if (s == "tsdcfl") return Scheme::Tsdcfl;
  if (s == "cyclic") return Scheme::Cyclic;
  if (s == "fracrep") return Scheme::FracRep;
  throw ConfigError("unknown scheme '" + s + "' (expected tsdcfl, cyclic or fracrep)");
}

// Fully resolved experiment configuration. Slot length T is normalized to 1;
// all rates are per slot.
struct ExperimentConfig {
  Scheme scheme = Scheme::Tsdcfl;
  uint64_t seed = 1;
  int epochs = 200;

  int workers = 6;
  std::vector<int> cores;         // speed class per worker
  std::vector<double> power;      // transmit power p_m
  std::vector<double> delta;      // energy per CPU cycle
  std::vector<double> xi;         // server cycles per delivered bit
  std::vector<double> lambda;     // fairness weight

  int partitions = 6;
  int m1 = 0;           // 0 = ceil(workers/2)
  int s_max = 2;
  int s_init = 1;
  int baseline_s = -1;  // -1 = s_max

  double channels = 3.0;
  std::string channels_mode = "const";  // const | poisson
  double channels_max = 6.0;
  double r_lo = 1600.0;
  double r_hi = 3200.0;
  double eh_max = 4.0;
  double server_cycles = 50.0;

  double v_weight = 10.0;
  double alpha = 0.5;
  bool theta_auto = true;
  double theta_value = 0.0;

  learn::TaskKind task = learn::TaskKind::LeastSquares;
  int dimension = 10;
  int samples = 120;
  double eta = 0.01;
  double noise_sigma = 0.1;
  std::string dataset_csv;

  double cycles_per_partition = 24.0;
  double cycles_per_core = 1.0;
  int t_comp = 0;  // 0 = auto-calibrated per epoch
  double epoch_deadline_factor = 30.0;

  int straggle_min = 1;
  int straggle_max = 2;
  double slowdown = 10.0;

  double gradient_bits = 0.0;  // 0 = dimension * 64
  int stage1_extra_copies = 0;

  bool slot_trace = true;

  int resolved_m1() const { return m1 > 0 ? m1 : (workers + 1) / 2; }
  int resolved_baseline_s() const { return baseline_s >= 0 ? baseline_s : s_max; }
  double resolved_gradient_bits() const { return gradient_bits > 0 ? gradient_bits : dimension * 64.0; }
  double worker_cycles_per_slot(int m) const { return cores[m] * cycles_per_core; }
  double max_cycles_per_slot() const {
    double f = 0;
    for (int m = 0; m < workers; ++m) f = std::max(f, worker_cycles_per_slot(m));
    return f;
  }
  double theta(int m) const {
    if (!theta_auto) return theta_value;
    return eh_max + power[m] * 1.0 + max_cycles_per_slot() * delta[m];
  }
};

namespace detail {

inline std::vector<double> broadcast(const nlohmann::json& v, int n, const std::string& name,
                                     std::vector<std::string>& issues) {
  std::vector<double> out;
  if (v.is_number()) {
    out.assign(n, v.get<double>());
  } else if (v.is_array()) {
    if (static_cast<int>(v.size()) != n) {
      issues.push_back(name + ": array length " + std::to_string(v.size()) + " != workers " +
                       std::to_string(n));
      out.assign(n, 1.0);
    } else {
      for (const auto& x : v) out.push_back(x.get<double>());
    }
  } else {
    issues.push_back(name + ": expected number or array");
    out.assign(n, 1.0);
  }
  return out;
}

inline void check_known_keys(const nlohmann::json& obj, const std::vector<std::string>& known,
                             const std::string& scope, std::vector<std::string>& issues) {
  for (const auto& [key, _] : obj.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end())
      issues.push_back(scope + ": unknown key '" + key + "'");
  }
}

}  // namespace detail

inline ExperimentConfig parse_config(const nlohmann::json& j) {
  std::vector<std::string> issues;
  ExperimentConfig cfg;
  if (!j.is_object()) throw ConfigError("config root must be a JSON object");

  detail::check_known_keys(j,
                           {"scheme", "seed", "epochs", "workers", "partitions", "m1", "s_max",
                            "s_init", "baseline_s", "slot", "scheduler", "learning", "compute",
                            "straggler", "gradient_bits", "stage1_extra_copies", "output"},
                           "config", issues);

  auto get = [&](const char* key, auto fallback) -> decltype(fallback) {
    using T = decltype(fallback);
    if (!j.contains(key)) return fallback;
    try {
      return j.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
      issues.push_back(std::string(key) + ": wrong type");
      return fallback;
    }
  };

  if (j.contains("scheme")) {
    try {
      cfg.scheme = scheme_from_string(j.at("scheme").get<std::string>());
    } catch (const std::exception& e) {
      issues.push_back(e.what());
    }
  }
  cfg.seed = get("seed", cfg.seed);
  cfg.epochs = get("epochs", cfg.epochs);
  cfg.partitions = get("partitions", cfg.partitions);
  cfg.m1 = get("m1", cfg.m1);
  cfg.s_max = get("s_max", cfg.s_max);
  cfg.s_init = get("s_init", cfg.s_init);
  cfg.baseline_s = get("baseline_s", cfg.baseline_s);
  cfg.gradient_bits = get("gradient_bits", cfg.gradient_bits);
  cfg.stage1_extra_copies = get("stage1_extra_copies", cfg.stage1_extra_copies);

  nlohmann::json workers = j.value("workers", nlohmann::json::object());
  detail::check_known_keys(workers, {"count", "cores", "power", "delta", "xi", "lambda"}, "workers",
                           issues);
  cfg.workers = workers.value("count", cfg.workers);
  if (cfg.workers < 1) {
    issues.push_back("workers.count must be >= 1");
    cfg.workers = 1;
  }
  if (workers.contains("cores")) {
    const auto& c = workers.at("cores");
    if (c.is_array()) {
      if (static_cast<int>(c.size()) != cfg.workers) {
        issues.push_back("workers.cores length must equal workers.count");
      } else {
        cfg.cores.clear();
        for (const auto& x : c) cfg.cores.push_back(x.get<int>());
      }
    } else if (c.is_number_integer()) {
      cfg.cores.assign(cfg.workers, c.get<int>());
    } else {
      issues.push_back("workers.cores: expected integer or array");
    }
  }
  if (cfg.cores.empty()) {
    static const int kDefaultCores[6] = {2, 2, 4, 4, 8, 8};
    for (int m = 0; m < cfg.workers; ++m) cfg.cores.push_back(kDefaultCores[m % 6]);
  }
  for (int c : cfg.cores)
    if (c <= 0) issues.push_back("workers.cores entries must be positive");
  cfg.power = detail::broadcast(workers.value("power", nlohmann::json(1.0)), cfg.workers,
                                "workers.power", issues);
  cfg.delta = detail::broadcast(workers.value("delta", nlohmann::json(0.1)), cfg.workers,
                                "workers.delta", issues);
  cfg.xi = detail::broadcast(workers.value("xi", nlohmann::json(0.01)), cfg.workers, "workers.xi",
                             issues);
  cfg.lambda = detail::broadcast(workers.value("lambda", nlohmann::json(1.0)), cfg.workers,
                                 "workers.lambda", issues);
  for (double p : cfg.power)
    if (!(p > 0)) issues.push_back("workers.power must be positive");
  for (double d : cfg.delta)
    if (!(d > 0)) issues.push_back("workers.delta must be positive");
  for (double x : cfg.xi)
    if (!(x > 0)) issues.push_back("workers.xi must be positive");
  for (double l : cfg.lambda)
    if (!(l > 0)) issues.push_back("workers.lambda must be positive");

  nlohmann::json slot = j.value("slot", nlohmann::json::object());
  detail::check_known_keys(
      slot, {"channels", "channels_mode", "channels_max", "r_range", "eh_max", "server_cycles"},
      "slot", issues);
  cfg.channels = slot.value("channels", cfg.channels);
  cfg.channels_mode = slot.value("channels_mode", cfg.channels_mode);
  cfg.channels_max = slot.value("channels_max", cfg.channels_max);
  if (slot.contains("r_range")) {
    const auto& r = slot.at("r_range");
    if (!r.is_array() || r.size() != 2) {
      issues.push_back("slot.r_range must be [lo, hi]");
    } else {
      cfg.r_lo = r[0].get<double>();
      cfg.r_hi = r[1].get<double>();
    }
  }
  cfg.eh_max = slot.value("eh_max", cfg.eh_max);
  cfg.server_cycles = slot.value("server_cycles", cfg.server_cycles);
  if (cfg.channels_mode != "const" && cfg.channels_mode != "poisson")
    issues.push_back("slot.channels_mode must be const or poisson");
  if (!(cfg.r_lo > 0) || cfg.r_hi < cfg.r_lo) issues.push_back("slot.r_range must satisfy 0 < lo <= hi");
  if (cfg.channels < 0) issues.push_back("slot.channels must be >= 0");
  if (cfg.eh_max < 0) issues.push_back("slot.eh_max must be >= 0");
  if (cfg.server_cycles < 0) issues.push_back("slot.server_cycles must be >= 0");

  nlohmann::json sched = j.value("scheduler", nlohmann::json::object());
  detail::check_known_keys(sched, {"v", "alpha", "theta"}, "scheduler", issues);
  cfg.v_weight = sched.value("v", cfg.v_weight);
  cfg.alpha = sched.value("alpha", cfg.alpha);
  if (sched.contains("theta")) {
    const auto& th = sched.at("theta");
    if (th.is_string() && th.get<std::string>() == "auto") {
      cfg.theta_auto = true;
    } else if (th.is_number()) {
      cfg.theta_auto = false;
      cfg.theta_value = th.get<double>();
      if (cfg.theta_value < 0) issues.push_back("scheduler.theta must be >= 0");
    } else {
      issues.push_back("scheduler.theta must be a number or \"auto\"");
    }
  }
  if (!(cfg.v_weight > 0)) issues.push_back("scheduler.v must be positive");
  if (!(cfg.alpha > 0) || cfg.alpha > 1) issues.push_back("scheduler.alpha must be in (0, 1]");

  nlohmann::json learning = j.value("learning", nlohmann::json::object());
  detail::check_known_keys(
      learning, {"task", "dimension", "samples", "eta", "noise_sigma", "dataset_csv"}, "learning",
      issues);
  if (learning.contains("task")) {
    try {
      cfg.task = learn::task_from_string(learning.at("task").get<std::string>());
    } catch (const std::exception& e) {
      issues.push_back(e.what());
    }
  }
  cfg.dimension = learning.value("dimension", cfg.dimension);
  cfg.samples = learning.value("samples", cfg.samples);
  cfg.eta = learning.value("eta", cfg.eta);
  cfg.noise_sigma = learning.value("noise_sigma", cfg.noise_sigma);
  cfg.dataset_csv = learning.value("dataset_csv", cfg.dataset_csv);
  if (cfg.dimension < 1) issues.push_back("learning.dimension must be >= 1");
  if (cfg.samples < cfg.partitions) issues.push_back("learning.samples must be >= partitions");
  if (!(cfg.eta > 0)) issues.push_back("learning.eta must be positive");
  if (cfg.noise_sigma < 0) issues.push_back("learning.noise_sigma must be >= 0");

  nlohmann::json compute = j.value("compute", nlohmann::json::object());
  detail::check_known_keys(
      compute, {"cycles_per_partition", "cycles_per_core", "t_comp", "epoch_deadline_factor"},
      "compute", issues);
  cfg.cycles_per_partition = compute.value("cycles_per_partition", cfg.cycles_per_partition);
  cfg.cycles_per_core = compute.value("cycles_per_core", cfg.cycles_per_core);
  cfg.t_comp = compute.value("t_comp", cfg.t_comp);
  cfg.epoch_deadline_factor = compute.value("epoch_deadline_factor", cfg.epoch_deadline_factor);
  if (!(cfg.cycles_per_partition > 0)) issues.push_back("compute.cycles_per_partition must be positive");
  if (!(cfg.cycles_per_core > 0)) issues.push_back("compute.cycles_per_core must be positive");
  if (cfg.t_comp < 0) issues.push_back("compute.t_comp must be >= 0 (0 = auto)");
  if (cfg.epoch_deadline_factor < 1) issues.push_back("compute.epoch_deadline_factor must be >= 1");

  nlohmann::json straggler = j.value("straggler", nlohmann::json::object());
  detail::check_known_keys(straggler, {"min_per_epoch", "max_per_epoch", "slowdown"}, "straggler",
                           issues);
  cfg.straggle_min = straggler.value("min_per_epoch", cfg.straggle_min);
  cfg.straggle_max = straggler.value("max_per_epoch", cfg.straggle_max);
  cfg.slowdown = straggler.value("slowdown", cfg.slowdown);
  if (cfg.straggle_min < 0 || cfg.straggle_max < cfg.straggle_min || cfg.straggle_max > cfg.workers)
    issues.push_back("straggler: need 0 <= min_per_epoch <= max_per_epoch <= workers");
  if (!(cfg.slowdown >= 1)) issues.push_back("straggler.slowdown must be >= 1");

  nlohmann::json output = j.value("output", nlohmann::json::object());
  detail::check_known_keys(output, {"slot_trace"}, "output", issues);
  cfg.slot_trace = output.value("slot_trace", cfg.slot_trace);

  if (cfg.epochs < 1) issues.push_back("epochs must be >= 1");
  if (cfg.partitions < 1) issues.push_back("partitions must be >= 1");
  if (cfg.s_max < 0 || cfg.s_max >= cfg.workers)
    issues.push_back("s_max must be in [0, workers-1]");
  if (cfg.s_init < 0 || cfg.s_init > cfg.s_max) issues.push_back("s_init must be in [0, s_max]");
  if (cfg.m1 < 0 || cfg.m1 > cfg.workers) issues.push_back("m1 must be in [0, workers] (0 = auto)");
  if (cfg.baseline_s < -1 || cfg.baseline_s >= cfg.workers)
    issues.push_back("baseline_s must be in [-1, workers-1]");
  if (cfg.stage1_extra_copies < 0) issues.push_back("stage1_extra_copies must be >= 0");
  if (cfg.gradient_bits < 0) issues.push_back("gradient_bits must be >= 0 (0 = auto)");

  const int bs = cfg.resolved_baseline_s();
  if (cfg.scheme != Scheme::Tsdcfl && cfg.partitions != cfg.workers)
    issues.push_back("baseline schemes require partitions == workers");
  if (cfg.scheme == Scheme::Cyclic && cfg.workers < bs + 1)
    issues.push_back("cyclic repetition requires workers >= baseline_s + 1");
  if (cfg.scheme == Scheme::FracRep && cfg.workers % (bs + 1) != 0)
    issues.push_back("fractional repetition requires (baseline_s + 1) | workers");

  if (!issues.empty()) {
    std::string msg = "invalid configuration:";
    for (const auto& issue : issues) msg += "\n  - " + issue;
    throw ConfigError(msg);
  }
  return cfg;
}

// Canonical echo with every default materialized; parse(config_to_json(c))
// reproduces c exactly.
inline nlohmann::json config_to_json(const ExperimentConfig& cfg) {
  nlohmann::json j;
  j["scheme"] = to_string(cfg.scheme);
  j["seed"] = cfg.seed;
  j["epochs"] = cfg.epochs;
  j["workers"] = {{"count", cfg.workers}, {"cores", cfg.cores},   {"power", cfg.power},
                  {"delta", cfg.delta},   {"xi", cfg.xi},         {"lambda", cfg.lambda}};
  j["partitions"] = cfg.partitions;
  j["m1"] = cfg.m1;
  j["s_max"] = cfg.s_max;
  j["s_init"] = cfg.s_init;
  j["baseline_s"] = cfg.baseline_s;
  j["slot"] = {{"channels", cfg.channels},       {"channels_mode", cfg.channels_mode},
               {"channels_max", cfg.channels_max}, {"r_range", {cfg.r_lo, cfg.r_hi}},
               {"eh_max", cfg.eh_max},           {"server_cycles", cfg.server_cycles}};
  j["scheduler"] = {{"v", cfg.v_weight}, {"alpha", cfg.alpha}};
  if (cfg.theta_auto)
    j["scheduler"]["theta"] = "auto";
  else
    j["scheduler"]["theta"] = cfg.theta_value;
  j["learning"] = {{"task", learn::to_string(cfg.task)}, {"dimension", cfg.dimension},
                   {"samples", cfg.samples},             {"eta", cfg.eta},
                   {"noise_sigma", cfg.noise_sigma},     {"dataset_csv", cfg.dataset_csv}};
  j["compute"] = {{"cycles_per_partition", cfg.cycles_per_partition},
                  {"cycles_per_core", cfg.cycles_per_core},
                  {"t_comp", cfg.t_comp},
                  {"epoch_deadline_factor", cfg.epoch_deadline_factor}};
  j["straggler"] = {{"min_per_epoch", cfg.straggle_min},
                    {"max_per_epoch", cfg.straggle_max},
                    {"slowdown", cfg.slowdown}};
  j["gradient_bits"] = cfg.gradient_bits;
  j["stage1_extra_copies"] = cfg.stage1_extra_copies;
  j["output"] = {{"slot_trace", cfg.slot_trace}};
  return j;
}

}  // namespace tsdcfl::config
