#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <deque>
#include <map>
#include <numeric>
#include <vector>

#include "tsdcfl/coding.hpp"
#include "tsdcfl/common.hpp"
#include "tsdcfl/config.hpp"
#include "tsdcfl/learning.hpp"
#include "tsdcfl/report.hpp"
#include "tsdcfl/rng.hpp"
#include "tsdcfl/scheduler.hpp"

namespace tsdcfl::sim {

using config::ExperimentConfig;
using config::Scheme;

// ---------------------------------------------------------------------------
// Straggler history and prediction
// ---------------------------------------------------------------------------

struct StragglerHistory {
  std::vector<int> counts;         // observed straggler count per epoch
  std::vector<double> worker_ema;  // per-worker straggle frequency estimate
};

// EMA of observed counts, ceil'd and clamped to s_max; s_init before any
// observation exists.
inline int predict_stragglers(const StragglerHistory& history, double alpha, int s_max, int s_init) {
  if (!(alpha > 0) || alpha > 1) throw std::invalid_argument("predict_stragglers: alpha in (0,1]");
  if (history.counts.empty()) return std::min(s_init, s_max);
  double ema = history.counts.front();
  for (size_t i = 1; i < history.counts.size(); ++i)
    ema = alpha * history.counts[i] + (1.0 - alpha) * ema;
  const int s = static_cast<int>(std::ceil(ema - 1e-12));
  return std::clamp(s, 0, s_max);
}

// Exact Poisson-binomial tail: expected decodable bits for a tolerance-s code
// under independent per-worker straggling.
inline double expected_arrival_exhaustive(const std::vector<double>& probs, int s, int partitions,
                                          double gradient_bits) {
  std::vector<double> dist{1.0};
  for (double p : probs) {
    std::vector<double> next(dist.size() + 1, 0.0);
    for (size_t c = 0; c < dist.size(); ++c) {
      next[c] += dist[c] * (1.0 - p);
      next[c + 1] += dist[c] * p;
    }
    dist.swap(next);
  }
  double tolerated = 0.0;
  for (int c = 0; c <= s && c < static_cast<int>(dist.size()); ++c) tolerated += dist[c];
  return tolerated * partitions * gradient_bits;
}

inline double expected_arrival_mc(const std::vector<double>& probs, int s, int partitions,
                                  double gradient_bits, Rng& rng, int samples = 20000) {
  int tolerated = 0;
  for (int it = 0; it < samples; ++it) {
    int count = 0;
    for (double p : probs) count += rng.uniform() < p ? 1 : 0;
    tolerated += count <= s ? 1 : 0;
  }
  return static_cast<double>(tolerated) / samples * partitions * gradient_bits;
}

inline double expected_arrival_data(const std::vector<double>& probs, int s, int partitions,
                                    double gradient_bits, Rng* mc_rng = nullptr) {
  if (probs.size() <= 8 || mc_rng == nullptr)
    return expected_arrival_exhaustive(probs, s, partitions, gradient_bits);
  return expected_arrival_mc(probs, s, partitions, gradient_bits, *mc_rng);
}

// Argmax of expected arrival data over s in {0..s_max}; ties prefer the
// smaller (less redundant) tolerance. The EMA prediction seeds the candidate
// scan order but every tolerance is evaluated.
inline int choose_coding_params(const StragglerHistory& history, const std::vector<double>& probs,
                                double alpha, int s_max, int s_init, int partitions,
                                double gradient_bits, Rng* mc_rng = nullptr) {
  int best = predict_stragglers(history, alpha, s_max, s_init);
  double best_value = expected_arrival_data(probs, best, partitions, gradient_bits, mc_rng);
  for (int s = 0; s <= s_max; ++s) {
    if (s == best) continue;
    const double value = expected_arrival_data(probs, s, partitions, gradient_bits, mc_rng);
    if (value > best_value + 1e-9 || (std::abs(value - best_value) <= 1e-9 && s < best)) {
      best = s;
      best_value = value;
    }
  }
  return best;
}

// ---------------------------------------------------------------------------
// World state
// ---------------------------------------------------------------------------

struct Message {
  double bits = 0.0;
  int epoch = -1;
  bool coded = false;
  int payload = -1;  // partition id for partials, code row index for coded
};

struct CompTask {
  int partition = -1;
  double cycles_left = 0.0;
};

struct WorkerRuntime {
  std::deque<CompTask> compute;
  std::vector<char> computed;       // per-partition flags, current epoch
  std::deque<Message> pending;      // produced but not yet admitted
  std::deque<Message> inflight;     // admitted; front partially delivered
  double inflight_sent = 0.0;       // delivered bits of the front message
  std::vector<Message> fresh;       // completions awaiting next-slot arrival
  double slowdown = 1.0;
  bool emit_partials = false;
  std::vector<int> stage1_assigned;
  int coded_row = -1;
  std::vector<int> coded_support;   // original partition ids
  bool coded_sent = false;
};

struct EpochPlan {
  int epoch = 0;
  int s_predicted = 0;
  int s_used = 0;
  std::vector<int> stage1_workers;
  std::vector<std::vector<int>> stage1_assignment;  // parallel to stage1_workers
  int t_comp = 1;
  int epoch_deadline = 1;
  std::vector<int> injected;
  // Filled at census (TSDCFL) or upfront (baselines).
  std::vector<char> durable;       // partitions covered by completed workers
  std::vector<int> reduced_cols;   // original partition id per stage-2 column
  coding::CodeMatrix stage2;       // rows x reduced columns
  std::vector<int> stage2_rows;    // worker id per row
};

struct World {
  ExperimentConfig cfg;
  std::vector<sched::WorkerState> states;
  std::vector<WorkerRuntime> rt;
  sched::ServerState server;
  Rng world_rng{1};
  long long slot = 0;
  StragglerHistory history;
  sched::DriftBounds bounds;
  std::vector<double> admitted_total;       // per worker, all epochs
  double q_sum = 0, h_sum = 0, e_sum = 0, server_sum = 0;
  std::vector<report::SlotTraceRow>* trace = nullptr;
  double copies_this_epoch = 0;
  std::vector<double> admitted_this_epoch;
  std::vector<Eigen::VectorXd> partials;    // per partition, at epoch-start weights
};

inline World make_world(const ExperimentConfig& cfg) {
  World w;
  w.cfg = cfg;
  w.world_rng = Rng(derive_seed(cfg.seed, "world"));
  w.states.resize(cfg.workers);
  w.rt.resize(cfg.workers);
  for (int m = 0; m < cfg.workers; ++m) {
    auto& s = w.states[m];
    s.p = cfg.power[m];
    s.delta = cfg.delta[m];
    s.xi = cfg.xi[m];
    s.lambda = cfg.lambda[m];
    s.speed = static_cast<double>(cfg.cores[m]);
    s.f = cfg.worker_cycles_per_slot(m);
    s.theta = cfg.theta(m);
    s.e = s.theta;
    w.rt[m].computed.assign(cfg.partitions, 0);
  }
  w.server.f_slot = cfg.server_cycles;
  w.history.worker_ema.assign(cfg.workers, static_cast<double>(cfg.s_init) / cfg.workers);
  w.admitted_total.assign(cfg.workers, 0.0);
  w.admitted_this_epoch.assign(cfg.workers, 0.0);
  w.bounds.d_max = (cfg.partitions + 1) * cfg.resolved_gradient_bits();
  w.bounds.r_max = cfg.r_hi;
  w.bounds.f_max = cfg.max_cycles_per_slot();
  w.bounds.eh_max = cfg.eh_max;
  w.bounds.f_server_max = cfg.server_cycles;
  w.bounds.t_slot = 1.0;
  return w;
}

// Stochastic per-slot observation. `offered` is the gradient bits available
// for admission (new completions plus any re-offered backlog); it lags
// production by one slot.
inline sched::SlotObservation sample_world(const ExperimentConfig& cfg,
                                           const std::vector<double>& offered, Rng& rng) {
  const int m = cfg.workers;
  sched::SlotObservation obs;
  obs.d_arrival.resize(m);
  obs.e_harvest.resize(m);
  obs.channel.resize(m);
  for (int i = 0; i < m; ++i) {
    obs.channel[i] = rng.uniform(cfg.r_lo, cfg.r_hi);
    obs.e_harvest[i] = rng.uniform(0.0, cfg.eh_max);
    obs.d_arrival[i] = offered[i];
  }
  if (cfg.channels_mode == "poisson") {
    // Knuth sampling, clipped at channels_max.
    const double limit = std::exp(-cfg.channels);
    int k = 0;
    double prod = 1.0;
    do {
      ++k;
      prod *= rng.uniform();
    } while (prod > limit && k < 1000);
    obs.channels = std::min(static_cast<double>(k - 1), cfg.channels_max);
  } else {
    obs.channels = cfg.channels;
  }
  return obs;
}

// Deterministic midpoint observation for calibration runs.
inline sched::SlotObservation pinned_world(const ExperimentConfig& cfg,
                                           const std::vector<double>& offered) {
  const int m = cfg.workers;
  sched::SlotObservation obs;
  obs.d_arrival = offered;
  obs.e_harvest.assign(m, cfg.eh_max / 2.0);
  obs.channel.assign(m, (cfg.r_lo + cfg.r_hi) / 2.0);
  obs.channels = cfg.channels;
  return obs;
}

namespace detail {

// Move buffered completions into the pending pool; returns per-worker pool
// bits (the admission-eligible amount this slot).
inline std::vector<double> merge_and_pool(World& world) {
  std::vector<double> pool(world.cfg.workers, 0.0);
  for (int m = 0; m < world.cfg.workers; ++m) {
    auto& rt = world.rt[m];
    for (auto& msg : rt.fresh) rt.pending.push_back(msg);
    rt.fresh.clear();
    for (const auto& msg : rt.pending) pool[m] += msg.bits;
  }
  return pool;
}

inline void emit_coded_if_ready(World& world, int m, int epoch) {
  auto& rt = world.rt[m];
  if (rt.coded_row < 0 || rt.coded_sent) return;
  for (int k : rt.coded_support)
    if (!rt.computed[k]) return;
  if (rt.coded_support.empty()) return;
  Message msg;
  msg.bits = world.cfg.resolved_gradient_bits();
  msg.epoch = epoch;
  msg.coded = true;
  msg.payload = rt.coded_row;
  rt.fresh.push_back(msg);
  rt.coded_sent = true;
}

inline void apply_compute(World& world, int m, double cycles, int epoch) {
  auto& rt = world.rt[m];
  double left = cycles;
  while (left > 1e-12 && !rt.compute.empty()) {
    auto& task = rt.compute.front();
    const double take = std::min(left, task.cycles_left);
    task.cycles_left -= take;
    left -= take;
    if (task.cycles_left <= 1e-12) {
      const int k = task.partition;
      rt.compute.pop_front();
      if (!rt.computed[k]) {
        rt.computed[k] = 1;
        world.copies_this_epoch += 1;
      }
      if (rt.emit_partials) {
        Message msg;
        msg.bits = world.cfg.resolved_gradient_bits();
        msg.epoch = epoch;
        msg.coded = false;
        msg.payload = k;
        rt.fresh.push_back(msg);
      }
      emit_coded_if_ready(world, m, epoch);
    }
  }
}

// One slot: decisions, queue dynamics, compute progress, message delivery.
// Returns the messages fully delivered to the server this slot.
inline std::vector<std::pair<int, Message>> advance_slot(World& world,
                                                         const sched::SlotObservation& obs,
                                                         int epoch) {
  const auto& cfg = world.cfg;
  const int m = cfg.workers;
  for (int i = 0; i < m; ++i) world.states[i].r = obs.channel[i];

  const double l_before = sched::lyapunov_value(world.states, world.server);
  sched::SlotDecision dec = sched::decide_slot(world.states, world.server, obs, cfg.v_weight, 1.0);

  double bound_rhs = 0.0;
  const bool tracing = world.trace != nullptr;
  if (tracing)
    bound_rhs = sched::drift_penalty_bound(world.states, world.server, dec, obs, cfg.v_weight,
                                           world.bounds);
  std::vector<report::SlotTraceRow> rows;
  if (tracing) {
    rows.resize(m);
    for (int i = 0; i < m; ++i) {
      auto& r = rows[i];
      r.t = world.slot;
      r.worker = i;
      r.q = world.states[i].q;
      r.h = world.states[i].h;
      r.e = world.states[i].e;
      r.r = world.states[i].r_cycles;
      r.y = dec.y[i];
      r.d = dec.d[i];
      r.v = dec.v[i];
      r.c = dec.c[i];
      r.e_store = dec.e_store[i];
      r.bound_rhs = bound_rhs;
    }
  }

  // Admission moves whole pending messages into the transmit queue.
  std::vector<std::pair<int, Message>> received;
  for (int i = 0; i < m; ++i) {
    if (dec.d[i] > 0) {
      auto& rt = world.rt[i];
      while (!rt.pending.empty()) {
        rt.inflight.push_back(rt.pending.front());
        rt.pending.pop_front();
      }
    }
    world.admitted_total[i] += dec.d[i];
    world.admitted_this_epoch[i] += dec.d[i];
  }

  sched::step_queues(world.states, world.server, dec, obs);

  double penalty = 0.0;
  for (int i = 0; i < m; ++i) {
    penalty += std::log2(1.0 + dec.y[i]);
    // Deliver transmitted bits through the in-flight FIFO.
    double c = dec.c[i];
    auto& rt = world.rt[i];
    while (c > 1e-12 && !rt.inflight.empty()) {
      auto& front = rt.inflight.front();
      const double need = front.bits - rt.inflight_sent;
      const double take = std::min(c, need);
      rt.inflight_sent += take;
      c -= take;
      if (front.bits - rt.inflight_sent <= 1e-9) {
        received.emplace_back(i, front);
        rt.inflight.pop_front();
        rt.inflight_sent = 0.0;
      }
    }
    apply_compute(world, i, dec.f_used[i], epoch);
  }

  for (int i = 0; i < m; ++i) {
    world.q_sum += world.states[i].q;
    world.h_sum += world.states[i].h;
    world.e_sum += world.states[i].e;
  }
  world.server_sum += world.server.r_server;

  if (tracing) {
    const double l_after = sched::lyapunov_value(world.states, world.server);
    const double lhs = l_after - l_before - cfg.v_weight * penalty;
    for (auto& r : rows) {
      r.drift_lhs = lhs;
      world.trace->push_back(r);
    }
  }
  ++world.slot;
  return received;
}

inline void reset_epoch_runtime(World& world) {
  for (int m = 0; m < world.cfg.workers; ++m) {
    auto& rt = world.rt[m];
    rt.compute.clear();
    rt.pending.clear();
    rt.fresh.clear();
    std::fill(rt.computed.begin(), rt.computed.end(), 0);
    rt.slowdown = 1.0;
    rt.emit_partials = false;
    rt.stage1_assigned.clear();
    rt.coded_row = -1;
    rt.coded_support.clear();
    rt.coded_sent = false;
    world.states[m].r_cycles = 0.0;
  }
  world.copies_this_epoch = 0;
  std::fill(world.admitted_this_epoch.begin(), world.admitted_this_epoch.end(), 0.0);
}

inline void push_tasks(World& world, int m, const std::vector<int>& partitions) {
  auto& rt = world.rt[m];
  double cycles = 0.0;
  for (int k : partitions) {
    if (rt.computed[k]) continue;
    CompTask task;
    task.partition = k;
    task.cycles_left = world.cfg.cycles_per_partition * rt.slowdown;
    cycles += task.cycles_left;
    rt.compute.push_back(task);
  }
  world.states[m].r_cycles += cycles;
}

// Speed-proportional loads summing to partitions + extra, placed as
// consecutive arcs on the partition ring. Fractional shares are floored and
// the leftovers go one at a time to the worker whose completion time grows
// least, keeping proportional finish times nearly simultaneous.
inline std::vector<std::vector<int>> stage1_arcs(const ExperimentConfig& cfg,
                                                 const std::vector<int>& workers) {
  std::vector<double> speeds;
  for (int m : workers) speeds.push_back(static_cast<double>(cfg.cores[m]));
  const double speed_sum = std::accumulate(speeds.begin(), speeds.end(), 0.0);
  const int total = cfg.partitions + cfg.stage1_extra_copies;
  const int n = static_cast<int>(workers.size());
  std::vector<int> loads(n, 0);
  int assigned = 0;
  for (int i = 0; i < n; ++i) {
    loads[i] = static_cast<int>(std::floor(total * speeds[i] / speed_sum + 1e-12));
    assigned += loads[i];
  }
  while (assigned < total) {
    int best = 0;
    for (int i = 1; i < n; ++i) {
      const double a = (loads[i] + 1) / speeds[i];
      const double b = (loads[best] + 1) / speeds[best];
      if (a < b - 1e-12 || (std::abs(a - b) <= 1e-12 && speeds[i] > speeds[best])) best = i;
    }
    ++loads[best];
    ++assigned;
  }
  if (total >= n) {
    for (int i = 0; i < n; ++i) {
      while (loads[i] == 0) {
        int donor = 0;
        for (int j = 1; j < n; ++j)
          if (loads[j] > loads[donor]) donor = j;
        if (loads[donor] <= 1) break;
        --loads[donor];
        ++loads[i];
      }
    }
  }
  std::vector<std::vector<int>> arcs(n);
  int offset = 0;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < loads[i]; ++j) arcs[i].push_back((offset + j) % cfg.partitions);
    offset += loads[i];
  }
  return arcs;
}

}  // namespace detail

// Straggler-free dry run of an assignment with midpoint observations; returns
// the median slot at which a worker finished delivering its messages. Used to
// auto-calibrate T_comp and the epoch deadline.
inline int calibration_median_slots(const ExperimentConfig& cfg,
                                    const std::vector<int>& workers,
                                    const std::vector<std::vector<int>>& assignment, bool coded) {
  World shadow = make_world(cfg);
  for (size_t i = 0; i < workers.size(); ++i) {
    const int m = workers[i];
    auto& rt = shadow.rt[m];
    if (coded) {
      rt.coded_row = static_cast<int>(i);
      rt.coded_support = assignment[i];
    } else {
      rt.emit_partials = true;
      rt.stage1_assigned = assignment[i];
    }
    detail::push_tasks(shadow, m, assignment[i]);
  }
  std::vector<int> done(cfg.workers, 0);
  std::map<int, std::vector<char>> partial_left;
  for (size_t i = 0; i < workers.size(); ++i) {
    std::vector<char> left(cfg.partitions, 0);
    for (int k : assignment[i]) left[k] = 1;
    partial_left[workers[i]] = left;
  }
  std::vector<int> finish;
  const int cap = 5000;
  int completed = 0;
  for (int t = 1; t <= cap && completed < static_cast<int>(workers.size()); ++t) {
    auto pool = detail::merge_and_pool(shadow);
    auto obs = pinned_world(cfg, pool);
    auto received = detail::advance_slot(shadow, obs, 0);
    for (const auto& [m, msg] : received) {
      if (done[m]) continue;
      bool finished = false;
      if (msg.coded) {
        finished = true;
      } else {
        auto& left = partial_left[m];
        left[msg.payload] = 0;
        finished = std::none_of(left.begin(), left.end(), [](char c) { return c != 0; });
      }
      if (finished) {
        done[m] = 1;
        finish.push_back(t);
        ++completed;
      }
    }
  }
  while (static_cast<int>(finish.size()) < static_cast<int>(workers.size())) finish.push_back(cap);
  std::sort(finish.begin(), finish.end());
  return std::max(1, finish[(finish.size() - 1) / 2]);
}

inline coding::CodeMatrix baseline_code(const ExperimentConfig& cfg) {
  const int s = cfg.resolved_baseline_s();
  return cfg.scheme == Scheme::Cyclic ? coding::cyclic_repetition(cfg.workers, s)
                                      : coding::fractional_repetition(cfg.workers, s);
}

// Per-epoch plan. For TSDCFL: straggler prediction, tolerance choice, random
// stage-1 worker selection, speed-proportional placement, calibrated T_comp.
// Baselines start every worker on the fixed code.
inline EpochPlan build_epoch_plan(World& world, int epoch) {
  const auto& cfg = world.cfg;
  EpochPlan plan;
  plan.epoch = epoch;
  plan.s_predicted = predict_stragglers(world.history, cfg.alpha, cfg.s_max, cfg.s_init);

  {
    Rng inject_rng(derive_seed(cfg.seed, "inject", epoch));
    const int span = cfg.straggle_max - cfg.straggle_min + 1;
    const int count = cfg.straggle_min + static_cast<int>(inject_rng.uniform_int(span));
    plan.injected = inject_rng.sample_without_replacement(cfg.workers, count);
    std::sort(plan.injected.begin(), plan.injected.end());
  }

  if (cfg.scheme != Scheme::Tsdcfl) {
    plan.s_used = cfg.resolved_baseline_s();
    plan.stage2 = baseline_code(cfg);
    plan.reduced_cols.resize(cfg.partitions);
    std::iota(plan.reduced_cols.begin(), plan.reduced_cols.end(), 0);
    plan.stage2_rows.resize(cfg.workers);
    std::iota(plan.stage2_rows.begin(), plan.stage2_rows.end(), 0);
    plan.t_comp = 0;
    return plan;
  }

  plan.s_used = choose_coding_params(world.history, world.history.worker_ema, cfg.alpha, cfg.s_max,
                                     cfg.s_init, cfg.partitions, cfg.resolved_gradient_bits());
  Rng m1_rng(derive_seed(cfg.seed, "m1", epoch));
  plan.stage1_workers = m1_rng.sample_without_replacement(cfg.workers, cfg.resolved_m1());
  std::sort(plan.stage1_workers.begin(), plan.stage1_workers.end());
  plan.stage1_assignment = detail::stage1_arcs(cfg, plan.stage1_workers);
  plan.t_comp = cfg.t_comp > 0
                    ? cfg.t_comp
                    : calibration_median_slots(cfg, plan.stage1_workers, plan.stage1_assignment,
                                               /*coded=*/false);
  return plan;
}

struct CensusResult {
  std::vector<int> completed_workers;  // Mc
  int kc = 0;
  int s_effective = 0;
};

// Census per the two-stage model: Kc is the union of completed workers'
// assignments; everything else is coded in stage 2. Continuing workers keep
// their remaining columns (already-computed partials are reused, not
// recomputed), new workers fill every column up to s+1 copies. Degrades the
// tolerance if the remaining workers cannot support it.
inline CensusResult run_census(World& world, EpochPlan& plan, const std::vector<char>& delivered) {
  const auto& cfg = world.cfg;
  CensusResult census;

  std::vector<char> is_stage1(cfg.workers, 0), complete(cfg.workers, 0);
  std::vector<char> durable(cfg.partitions, 0);
  for (size_t i = 0; i < plan.stage1_workers.size(); ++i) {
    const int m = plan.stage1_workers[i];
    is_stage1[m] = 1;
    bool all = true;
    for (int k : plan.stage1_assignment[i])
      if (!delivered[k]) all = false;
    if (all) {
      complete[m] = 1;
      census.completed_workers.push_back(m);
      for (int k : plan.stage1_assignment[i]) durable[k] = 1;
    }
  }
  for (int k = 0; k < cfg.partitions; ++k) census.kc += durable[k] ? 1 : 0;
  plan.durable = durable;

  plan.reduced_cols.clear();
  std::vector<int> col_of(cfg.partitions, -1);
  for (int k = 0; k < cfg.partitions; ++k) {
    if (!durable[k]) {
      col_of[k] = static_cast<int>(plan.reduced_cols.size());
      plan.reduced_cols.push_back(k);
    }
  }

  plan.stage2_rows.clear();
  for (int m = 0; m < cfg.workers; ++m)
    if (!complete[m]) plan.stage2_rows.push_back(m);

  const int rows = static_cast<int>(plan.stage2_rows.size());
  const int k_rem = static_cast<int>(plan.reduced_cols.size());
  std::vector<double> speeds;
  std::vector<std::vector<int>> held(rows);
  std::vector<bool> is_new(rows, false);
  for (int r = 0; r < rows; ++r) {
    const int m = plan.stage2_rows[r];
    speeds.push_back(static_cast<double>(cfg.cores[m]));
    if (is_stage1[m]) {
      for (int k : world.rt[m].stage1_assigned)
        if (col_of[k] >= 0) held[r].push_back(col_of[k]);
      std::sort(held[r].begin(), held[r].end());
    } else {
      is_new[r] = true;
    }
  }

  int s_eff = plan.s_used;
  coding::BoolMask support;
  while (true) {
    try {
      support = coding::build_support(k_rem, s_eff, speeds, held, is_new);
      break;
    } catch (const InfeasibleAssignment&) {
      if (s_eff == 0) throw;
      --s_eff;
    }
  }
  census.s_effective = s_eff;
  plan.stage2 = coding::fill_code_matrix(support, coding::build_auxiliary(s_eff, rows));

  // Rewire worker roles: continuing workers drop partial emission, everyone
  // in a row computes exactly its support columns.
  for (int r = 0; r < rows; ++r) {
    const int m = plan.stage2_rows[r];
    auto& rt = world.rt[m];
    rt.emit_partials = false;
    rt.pending.clear();
    rt.fresh.erase(std::remove_if(rt.fresh.begin(), rt.fresh.end(),
                                  [](const Message& msg) { return !msg.coded; }),
                   rt.fresh.end());
    rt.coded_row = r;
    rt.coded_support.clear();
    for (int c = 0; c < k_rem; ++c)
      if (support(r, c)) rt.coded_support.push_back(plan.reduced_cols[c]);

    std::map<int, double> progress;
    for (const auto& task : rt.compute) progress[task.partition] = task.cycles_left;
    rt.compute.clear();
    world.states[m].r_cycles = 0.0;
    double cycles = 0.0;
    for (int k : rt.coded_support) {
      if (rt.computed[k]) continue;
      CompTask task;
      task.partition = k;
      const auto it = progress.find(k);
      task.cycles_left = it != progress.end() ? it->second : cfg.cycles_per_partition * rt.slowdown;
      cycles += task.cycles_left;
      rt.compute.push_back(task);
    }
    world.states[m].r_cycles = cycles;
    detail::emit_coded_if_ready(world, m, plan.epoch);
  }
  // Workers whose rows are complete (Mc) stop computing.
  for (int m : census.completed_workers) {
    world.rt[m].compute.clear();
    world.states[m].r_cycles = 0.0;
  }
  return census;
}

// One training epoch. Updates the model in place on decode success.
inline report::EpochReport run_epoch(learn::Model& model, const std::vector<learn::Partition>& parts,
                                     const learn::Dataset& data, EpochPlan& plan, World& world) {
  const auto& cfg = world.cfg;
  const int k_total = cfg.partitions;

  world.partials.resize(k_total);
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(model.w.size());
  for (int k = 0; k < k_total; ++k) {
    world.partials[k] = learn::partial_gradient(model, parts[k]);
    mean += world.partials[k];
  }
  Eigen::VectorXd full_gradient = mean;
  mean /= static_cast<double>(k_total);
  double zeta_sq = 0.0;
  for (int k = 0; k < k_total; ++k) zeta_sq += (world.partials[k] - mean).squaredNorm();
  zeta_sq /= static_cast<double>(k_total);

  report::EpochReport rep;
  rep.epoch = plan.epoch;
  rep.s_predicted = plan.s_predicted;
  rep.s_used = plan.s_used;
  rep.m1 = static_cast<int>(plan.stage1_workers.size());
  rep.t_comp = plan.t_comp;
  rep.zeta_sq = zeta_sq;
  rep.grad_sq_norm = full_gradient.squaredNorm();

  detail::reset_epoch_runtime(world);
  for (int m : plan.injected) world.rt[m].slowdown = cfg.slowdown;

  const bool two_stage = cfg.scheme == Scheme::Tsdcfl;
  std::vector<char> delivered(k_total, 0);
  int delivered_count = 0;

  if (two_stage) {
    for (size_t i = 0; i < plan.stage1_workers.size(); ++i) {
      const int m = plan.stage1_workers[i];
      world.rt[m].emit_partials = true;
      world.rt[m].stage1_assigned = plan.stage1_assignment[i];
      detail::push_tasks(world, m, plan.stage1_assignment[i]);
    }
  } else {
    for (int r = 0; r < static_cast<int>(plan.stage2_rows.size()); ++r) {
      const int m = plan.stage2_rows[r];
      auto& rt = world.rt[m];
      rt.coded_row = r;
      for (int c = 0; c < plan.stage2.cols(); ++c)
        if (plan.stage2.support(r, c)) rt.coded_support.push_back(plan.reduced_cols[c]);
      detail::push_tasks(world, m, rt.coded_support);
    }
  }

  const int deadline =
      plan.epoch_deadline > 1
          ? plan.epoch_deadline
          : static_cast<int>(std::lround(cfg.epoch_deadline_factor * std::max(plan.t_comp, 1)));
  plan.epoch_deadline = deadline;

  // Decoding follows the pattern-based strategy: one row of the decode matrix
  // covers a survivor set missing at most s code words, so the server fires a
  // decode once no more than s non-trivial rows are outstanding.
  auto count_nonzero_rows = [&]() {
    int n = 0;
    for (int r = 0; r < plan.stage2.rows(); ++r) {
      bool any = false;
      for (int c = 0; c < plan.stage2.cols(); ++c)
        if (plan.stage2.support(r, c)) any = true;
      n += any ? 1 : 0;
    }
    return n;
  };

  std::vector<char> arrived;
  std::vector<Eigen::VectorXd> coded_values;
  int decode_tolerance = 0;
  int nonzero_rows = 0;
  if (!two_stage) {
    arrived.assign(plan.stage2_rows.size(), 0);
    coded_values.assign(plan.stage2_rows.size(), Eigen::VectorXd());
    decode_tolerance = cfg.resolved_baseline_s();
    nonzero_rows = count_nonzero_rows();
  }

  bool success = false;
  bool in_stage2 = !two_stage;
  bool new_arrivals = false;
  int arrived_nonzero = 0;
  Eigen::VectorXd decoded = Eigen::VectorXd::Zero(model.w.size());
  int slots_used = 0;

  for (int t = 0; t < deadline && !success; ++t) {
    if (two_stage && !in_stage2 && t == plan.t_comp) {
      const auto census = run_census(world, plan, delivered);
      rep.mc = static_cast<int>(census.completed_workers.size());
      rep.kc = census.kc;
      rep.s_used = census.s_effective;
      arrived.assign(plan.stage2_rows.size(), 0);
      coded_values.assign(plan.stage2_rows.size(), Eigen::VectorXd());
      decode_tolerance = census.s_effective;
      nonzero_rows = count_nonzero_rows();
      arrived_nonzero = 0;
      in_stage2 = true;
    }

    auto pool = detail::merge_and_pool(world);
    auto obs = sample_world(cfg, pool, world.world_rng);
    auto received = detail::advance_slot(world, obs, plan.epoch);
    ++slots_used;

    for (const auto& [m, msg] : received) {
      if (msg.epoch != plan.epoch) continue;  // stale bits from an earlier epoch
      if (!msg.coded) {
        if (!in_stage2 && !delivered[msg.payload]) {
          delivered[msg.payload] = 1;
          ++delivered_count;
        }
        continue;  // post-census partials are redundant
      }
      if (in_stage2 && !arrived[msg.payload]) {
        arrived[msg.payload] = 1;
        ++arrived_nonzero;
        std::vector<const Eigen::VectorXd*> ptrs;
        ptrs.reserve(plan.reduced_cols.size());
        for (int k : plan.reduced_cols) ptrs.push_back(&world.partials[k]);
        coded_values[msg.payload] = coding::encode_partials(
            plan.stage2, msg.payload, ptrs, static_cast<int>(model.w.size()));
        new_arrivals = true;
      }
    }

    if (!in_stage2 && delivered_count == k_total) {
      decoded = full_gradient;  // every partial is durable; no coding needed
      rep.mc = 0;
      for (size_t i = 0; i < plan.stage1_workers.size(); ++i) {
        bool all = true;
        for (int k : plan.stage1_assignment[i])
          if (!delivered[k]) all = false;
        rep.mc += all ? 1 : 0;
      }
      rep.kc = k_total;
      success = true;
      break;
    }

    if (in_stage2 && new_arrivals && arrived_nonzero >= nonzero_rows - decode_tolerance) {
      new_arrivals = false;
      std::vector<int> survivors;
      for (size_t r = 0; r < arrived.size(); ++r)
        if (arrived[r]) survivors.push_back(static_cast<int>(r));
      const auto res = coding::decode(plan.stage2, survivors);
      if (res.success) {
        rep.c2 = std::max(rep.c2, res.coefficients.cwiseAbs().maxCoeff());
        decoded = Eigen::VectorXd::Zero(model.w.size());
        for (int k = 0; k < k_total; ++k)
          if (two_stage && plan.durable[k]) decoded += world.partials[k];
        std::vector<Eigen::VectorXd> coded;
        for (int r : survivors) coded.push_back(coded_values[r]);
        decoded += coding::aggregate_decode(res.coefficients, coded);
        success = true;
      }
    }
  }

  rep.iteration_time = slots_used;
  rep.decode_success = success;
  log_debug("epoch " + std::to_string(plan.epoch) + " scheme " + config::to_string(cfg.scheme) +
            ": " + (success ? "decoded" : "FAILED") + " after " + std::to_string(slots_used) +
            " slots (t_comp " + std::to_string(plan.t_comp) + ", mc " + std::to_string(rep.mc) +
            ", kc " + std::to_string(rep.kc) + ")");
  rep.copies_computed = world.copies_this_epoch;
  rep.admitted_bits = world.admitted_this_epoch;

  if (two_stage) rep.c1 = 1.0;  // uncoded stage-1 words and unit durable coefficients
  if (plan.stage2.rows() > 0 && plan.stage2.cols() > 0) {
    double max_entry = 0.0;
    for (int r = 0; r < plan.stage2.rows(); ++r)
      for (int c = 0; c < plan.stage2.cols(); ++c)
        max_entry = std::max(max_entry, std::abs(plan.stage2.entries(r, c)));
    rep.c2 = std::max(rep.c2, max_entry);
  }

  for (size_t r = 0; r < plan.stage2_rows.size(); ++r) {
    bool has_support = false;
    for (int c = 0; c < plan.stage2.cols(); ++c)
      if (plan.stage2.support(static_cast<int>(r), c)) has_support = true;
    if (has_support && (arrived.empty() || !arrived[r]))
      rep.observed_stragglers.push_back(plan.stage2_rows[r]);
  }

  if (success) {
    model = learn::sgd_step(model, decoded, cfg.eta);
  }
  rep.loss = learn::loss(model, data.samples);
  rep.accuracy = learn::accuracy(model, data.samples);

  // Abandon unfinished work; bits already admitted keep draining.
  for (int m = 0; m < cfg.workers; ++m) {
    world.rt[m].compute.clear();
    world.rt[m].pending.clear();
    world.rt[m].fresh.clear();
    world.states[m].r_cycles = 0.0;
  }

  // Record the straggle observation.
  world.history.counts.push_back(static_cast<int>(rep.observed_stragglers.size()));
  std::vector<char> late(cfg.workers, 0);
  for (int m : rep.observed_stragglers) late[m] = 1;
  for (int m = 0; m < cfg.workers; ++m)
    world.history.worker_ema[m] =
        cfg.alpha * late[m] + (1.0 - cfg.alpha) * world.history.worker_ema[m];
  return rep;
}

// Reference slot count for the baseline deadline: calibrated once per run.
inline int baseline_reference_slots(const ExperimentConfig& cfg, const EpochPlan& plan) {
  if (cfg.t_comp > 0) return cfg.t_comp;
  std::vector<std::vector<int>> assignment;
  for (size_t r = 0; r < plan.stage2_rows.size(); ++r) {
    std::vector<int> cols;
    for (int c = 0; c < plan.stage2.cols(); ++c)
      if (plan.stage2.support(static_cast<int>(r), c)) cols.push_back(plan.reduced_cols[c]);
    assignment.push_back(cols);
  }
  return calibration_median_slots(cfg, plan.stage2_rows, assignment, /*coded=*/true);
}

inline report::RunReport run_experiment(const ExperimentConfig& cfg) {
  learn::Dataset data = cfg.dataset_csv.empty()
                            ? learn::make_synthetic(cfg.task, cfg.samples, cfg.dimension,
                                                    cfg.noise_sigma, derive_seed(cfg.seed, "dataset"))
                            : learn::load_csv_dataset(cfg.dataset_csv, cfg.task);
  if (data.dim != cfg.dimension && !cfg.dataset_csv.empty())
    throw ConfigError("dataset dimension " + std::to_string(data.dim) +
                      " does not match learning.dimension " + std::to_string(cfg.dimension));
  const auto parts = learn::partition_dataset(data, cfg.partitions, derive_seed(cfg.seed, "partition"));

  learn::Model model{Eigen::VectorXd::Zero(data.dim), cfg.task};

  report::RunReport out;
  out.config_echo = config::config_to_json(cfg);
  out.scheme = config::to_string(cfg.scheme);
  out.seed = cfg.seed;

  World world = make_world(cfg);
  if (cfg.slot_trace) world.trace = &out.slot_trace;

  const double f_init = learn::partitioned_objective(model, parts);
  double c1_max = 0, c2_max = 0, zeta_max = 0, grad_sq_sum = 0;

  // Baseline deadlines are identical across epochs; calibrate once.
  int cached_baseline_reference = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    EpochPlan plan = build_epoch_plan(world, epoch);
    if (cfg.scheme != Scheme::Tsdcfl) {
      if (cached_baseline_reference == 0)
        cached_baseline_reference = baseline_reference_slots(cfg, plan);
      plan.epoch_deadline = static_cast<int>(
          std::lround(cfg.epoch_deadline_factor * std::max(cached_baseline_reference, 1)));
    }
    auto rep = run_epoch(model, parts, data, plan, world);
    c1_max = std::max(c1_max, rep.c1);
    c2_max = std::max(c2_max, rep.c2);
    zeta_max = std::max(zeta_max, rep.zeta_sq);
    grad_sq_sum += rep.grad_sq_norm;
    out.total_copies += rep.copies_computed;
    out.failed_epochs += rep.decode_success ? 0 : 1;
    out.epochs.push_back(std::move(rep));
  }

  const int n = static_cast<int>(out.epochs.size());
  std::vector<double> times;
  for (const auto& e : out.epochs) {
    out.mean_iteration_time += e.iteration_time;
    times.push_back(e.iteration_time);
  }
  out.mean_iteration_time /= std::max(n, 1);
  std::sort(times.begin(), times.end());
  out.median_iteration_time = times.empty() ? 0.0 : times[(times.size() - 1) / 2];
  out.final_loss = out.epochs.empty() ? f_init : out.epochs.back().loss;
  out.final_accuracy = out.epochs.empty() ? 0.0 : out.epochs.back().accuracy;
  out.decode_success_rate = n > 0 ? 1.0 - static_cast<double>(out.failed_epochs) / n : 0.0;
  out.c1_max = c1_max;
  out.c2_max = c2_max;
  out.zeta_sq_max = zeta_max;
  out.mean_grad_sq_norm = n > 0 ? grad_sq_sum / n : 0.0;

  std::vector<double> mean_admitted(cfg.workers, 0.0);
  for (int m = 0; m < cfg.workers; ++m)
    mean_admitted[m] = world.slot > 0 ? world.admitted_total[m] / world.slot : 0.0;
  out.fairness = sched::fairness_index(mean_admitted);
  const double slots = static_cast<double>(std::max<long long>(world.slot, 1));
  out.mean_q = world.q_sum / (slots * cfg.workers);
  out.mean_h = world.h_sum / (slots * cfg.workers);
  out.mean_battery = world.e_sum / (slots * cfg.workers);
  out.mean_server_backlog = world.server_sum / slots;

  if (cfg.task == learn::TaskKind::LeastSquares) {
    out.lipschitz = learn::lipschitz_least_squares(parts);
    const Eigen::VectorXd opt = learn::least_squares_optimum(parts);
    out.f_star = learn::partitioned_objective({opt, cfg.task}, parts);
    out.f_init = f_init;
    learn::BoundParams bp;
    bp.lipschitz = out.lipschitz;
    bp.eta = cfg.eta;
    bp.iterations = std::max(n, 1);
    bp.partitions = cfg.partitions;
    bp.tau_max = 0.0;
    bp.workers = cfg.workers;
    bp.c1 = c1_max;
    bp.c2 = c2_max;
    bp.zeta_sq = zeta_max;
    out.convergence_bound = learn::convergence_bound_rhs(bp, out.f_init, out.f_star);
  }
  return out;
}

}  // namespace tsdcfl::sim
