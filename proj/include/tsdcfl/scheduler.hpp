#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "tsdcfl/common.hpp"
#include "tsdcfl/rng.hpp"

namespace tsdcfl::sched {

// Per-worker queues and rates. q/h are bits, e is stored energy, r_cycles is
// the outstanding gradient computation. r and f vary per slot.
struct WorkerState {
  double q = 0.0;         // data backlog Q
  double h = 0.0;         // virtual admission queue H
  double e = 0.0;         // battery backlog E
  double r_cycles = 0.0;  // outstanding compute R

  double p = 1.0;      // transmit power
  double r = 0.0;      // channel capacity this slot
  double f = 0.0;      // CPU cycles available this slot
  double delta = 0.1;  // energy per CPU cycle
  double xi = 0.01;    // server cycles per delivered bit
  double speed = 1.0;  // task rate W
  double lambda = 1.0; // fairness weight
  double theta = 0.0;  // battery perturbation
};

struct ServerState {
  double r_server = 0.0;  // outstanding server cycles
  double f_slot = 0.0;    // server cycles processed per slot (F)
};

struct SlotObservation {
  std::vector<double> d_arrival;   // arrival bits per worker
  std::vector<double> e_harvest;   // harvestable energy per worker
  std::vector<double> channel;     // channel capacity per worker
  double channels = 0.0;           // available sub-channels L(t)
};

struct SlotDecision {
  std::vector<double> y;        // auxiliary admission
  std::vector<double> d;        // admitted bits
  std::vector<double> v;        // transmission time
  std::vector<double> e_store;  // harvested energy kept
  // Derived quantities, filled by decide_slot / consumed by step_queues.
  std::vector<double> c;       // bits transmitted
  std::vector<double> e_up;    // upload energy
  std::vector<double> e_com;   // compute energy
  std::vector<double> f_used;  // CPU cycles actually spent
};

// y* maximizes V log2(1+y) - H y over [0, D]: zero when V/ln2 <= H, D when
// H = 0, otherwise the stationary point of V/((1+y)ln2) - H clamped to D.
// For lambda != 1 the objective V log2(1+lambda y) - H y is solved by a
// golden-section search instead.
inline double solve_auxiliary_y(double v_weight, double h, double d_arr, double lambda = 1.0) {
  if (d_arr <= 0) return 0.0;
  const double ln2 = std::log(2.0);
  if (lambda == 1.0) {
    if (h == 0.0) return d_arr;
    if (v_weight / ln2 - h <= 0.0) return 0.0;
    return std::min(v_weight / (h * ln2) - 1.0, d_arr);
  }
  auto objective = [&](double y) { return v_weight * std::log2(1.0 + lambda * y) - h * y; };
  double lo = 0.0, hi = d_arr;
  const double phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double x1 = hi - phi * (hi - lo), x2 = lo + phi * (hi - lo);
  double f1 = objective(x1), f2 = objective(x2);
  for (int it = 0; it < 200 && hi - lo > 1e-12 * std::max(1.0, d_arr); ++it) {
    if (f1 < f2) {
      lo = x1;
      x1 = x2;
      f1 = f2;
      x2 = lo + phi * (hi - lo);
      f2 = objective(x2);
    } else {
      hi = x2;
      x2 = x1;
      f2 = f1;
      x1 = hi - phi * (hi - lo);
      f1 = objective(x1);
    }
  }
  double best = 0.5 * (lo + hi);
  for (double cand : {0.0, d_arr})
    if (objective(cand) > objective(best)) best = cand;
  return best;
}

// Bang-bang minimizer of (Q - H) d over [0, D]; the Q == H tie admits 0.
inline double solve_admission_d(double q, double h, double d_arr) {
  return q >= h ? 0.0 : std::max(d_arr, 0.0);
}

// Greedy knapsack over the shared budget T*L. Per-worker utility rate is
// E p + max(Q - R_server xi, 0) r; transmission time is capped by the slot,
// the battery E/p and the backlog Q/r. Non-positive utility gets no time.
inline std::vector<double> solve_transmission_v(const std::vector<WorkerState>& workers,
                                                const ServerState& server, double t_slot,
                                                double channels) {
  const int m = static_cast<int>(workers.size());
  std::vector<double> v(m, 0.0);
  double budget = t_slot * channels;
  if (budget <= 0) return v;
  std::vector<int> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> utility(m, 0.0);
  for (int i = 0; i < m; ++i) {
    const auto& w = workers[i];
    utility[i] = w.e * w.p + std::max(w.q - server.r_server * w.xi, 0.0) * w.r;
  }
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return utility[a] > utility[b]; });
  for (int i : order) {
    if (budget <= 0) break;
    const auto& w = workers[i];
    if (utility[i] <= 0) continue;
    double cap = std::min(t_slot, budget);
    cap = std::min(cap, w.p > 0 ? w.e / w.p : cap);
    cap = std::min(cap, w.r > 0 ? w.q / w.r : 0.0);
    if (cap <= 0) continue;
    v[i] = cap;
    budget -= cap;
  }
  return v;
}

// Harvest everything while the perturbed battery coefficient is negative,
// nothing otherwise. theta = 0 recovers the literal rule (never harvest while
// E > 0), which starves the battery; the default theta leaves headroom for a
// worst-case slot spend.
inline double solve_energy_store(double battery, double e_harvest, double theta) {
  return battery - theta < 0 ? std::max(e_harvest, 0.0) : 0.0;
}

inline double default_theta(const WorkerState& w, double eh_max, double t_slot, double f_max) {
  return eh_max + w.p * t_slot + f_max * w.delta;
}

// One slot of decisions in the P4..P7 order: auxiliary y, admission d,
// transmission v, compute energy, harvest. Compute cycles are clamped so that
// e_up + e_com never exceeds the battery (C4).
inline SlotDecision decide_slot(const std::vector<WorkerState>& workers, const ServerState& server,
                                const SlotObservation& obs, double v_weight, double t_slot) {
  const int m = static_cast<int>(workers.size());
  SlotDecision dec;
  dec.y.resize(m);
  dec.d.resize(m);
  dec.e_store.resize(m);
  dec.c.resize(m);
  dec.e_up.resize(m);
  dec.e_com.resize(m);
  dec.f_used.resize(m);
  for (int i = 0; i < m; ++i) {
    dec.y[i] = solve_auxiliary_y(v_weight, workers[i].h, obs.d_arrival[i], workers[i].lambda);
    dec.d[i] = solve_admission_d(workers[i].q, workers[i].h, obs.d_arrival[i]);
  }
  dec.v = solve_transmission_v(workers, server, t_slot, obs.channels);
  for (int i = 0; i < m; ++i) {
    const auto& w = workers[i];
    dec.e_up[i] = w.p * dec.v[i];
    const double energy_left = std::max(w.e - dec.e_up[i], 0.0);
    double f_used = std::min(w.f, w.r_cycles);
    if (w.delta > 0) f_used = std::min(f_used, energy_left / w.delta);
    dec.f_used[i] = std::max(f_used, 0.0);
    dec.e_com[i] = dec.f_used[i] * w.delta;
    dec.e_store[i] = solve_energy_store(w.e, obs.e_harvest[i], w.theta);
    dec.c[i] = std::min(w.q, w.r * dec.v[i]);
  }
  return dec;
}

// Queue dynamics: Q' = Q + d - c, H' = max(H + y - d, 0),
// E' = E - e_up - e_com + e_store, R' = max(R - f, 0),
// R_server' = max(R_server - F, 0) + sum c xi.
inline void step_queues(std::vector<WorkerState>& workers, ServerState& server,
                        const SlotDecision& dec, const SlotObservation& obs) {
  const int m = static_cast<int>(workers.size());
  double served = 0.0;
  for (int i = 0; i < m; ++i) {
    auto& w = workers[i];
    if (dec.e_up[i] + dec.e_com[i] > w.e + 1e-9)
      throw EnergyViolation("worker " + std::to_string(i) + " spends " +
                            format_double(dec.e_up[i] + dec.e_com[i]) + " with battery " +
                            format_double(w.e));
    const double c = std::min(w.q, dec.c[i]);
    w.q = w.q + dec.d[i] - c;
    w.h = std::max(w.h + dec.y[i] - dec.d[i], 0.0);
    w.e = std::max(w.e - dec.e_up[i] - dec.e_com[i] + dec.e_store[i], 0.0);
    w.r_cycles = std::max(w.r_cycles - dec.f_used[i], 0.0);
    served += c * w.xi;
    (void)obs;
  }
  server.r_server = std::max(server.r_server - server.f_slot, 0.0) + served;
}

inline double lyapunov_value(const std::vector<WorkerState>& workers, const ServerState& server) {
  double acc = server.r_server * server.r_server;
  for (const auto& w : workers)
    acc += w.h * w.h + w.q * w.q + w.e * w.e + w.r_cycles * w.r_cycles;
  return 0.5 * acc;
}

struct DriftBounds {
  double d_max = 0.0;        // largest admissible arrival
  double r_max = 0.0;        // largest channel capacity
  double f_max = 0.0;        // largest per-slot CPU budget
  double eh_max = 0.0;       // largest harvest
  double f_server_max = 0.0; // largest server budget F
  double t_slot = 1.0;
};

// Drift-plus-penalty upper bound with realized queues and decisions. Two
// squared increments in the constant bracket are tightened to keep the bound
// sound: (e_up + e_com)^2 is bounded by the square of the worst-case total
// spend, and the server inflow (sum c xi)^2 by the square of the summed
// per-worker maxima.
inline double drift_penalty_bound(const std::vector<WorkerState>& workers, const ServerState& server,
                                  const SlotDecision& dec, const SlotObservation& obs, double v_weight,
                                  const DriftBounds& bounds) {
  const int m = static_cast<int>(workers.size());
  double constant = bounds.f_server_max * bounds.f_server_max;
  double linear = 0.0;
  double penalty = 0.0;
  double server_in = 0.0;
  double server_in_max = 0.0;
  for (int i = 0; i < m; ++i) {
    const auto& w = workers[i];
    const double c_max = bounds.r_max * bounds.t_slot;
    const double spend_max = w.p * bounds.t_slot + bounds.f_max * w.delta;
    constant += 3.0 * bounds.d_max * bounds.d_max + c_max * c_max + spend_max * spend_max +
                bounds.eh_max * bounds.eh_max + bounds.f_max * bounds.f_max;
    server_in_max += c_max * w.xi;
    const double c = std::min(w.q, dec.c[i]);
    linear += w.q * (dec.d[i] - c);
    linear += w.h * (dec.y[i] - dec.d[i]);
    linear += w.e * (dec.e_store[i] - dec.e_up[i] - dec.e_com[i]);
    linear -= w.r_cycles * dec.f_used[i];
    server_in += c * w.xi;
    penalty += std::log2(1.0 + dec.y[i]);
  }
  constant += server_in_max * server_in_max;
  linear += server.r_server * (server_in - server.f_slot);
  (void)obs;
  return 0.5 * constant - v_weight * penalty + linear;
}

// Jain index over per-worker time-averaged admissions.
inline double fairness_index(const std::vector<double>& mean_admitted) {
  if (mean_admitted.empty()) throw std::invalid_argument("fairness_index: empty input");
  double sum = 0.0, sq = 0.0;
  for (double x : mean_admitted) {
    sum += x;
    sq += x * x;
  }
  if (sq == 0.0) return 1.0;
  return sum * sum / (static_cast<double>(mean_admitted.size()) * sq);
}

// Standalone episode with i.i.d. observations, used by the stability and
// drift diagnostics.
struct EpisodeParams {
  int workers = 4;
  double t_slot = 1.0;
  double channels = 2.0;
  double d_max = 400.0;    // arrivals uniform in [0, d_max]
  double eh_max = 4.0;
  double r_lo = 400.0;
  double r_hi = 800.0;
  double power = 1.0;
  double delta = 0.1;
  double xi = 0.01;
  double f_cap = 4.0;      // per-slot CPU budget
  double f_server = 50.0;
  double v_weight = 10.0;
  double lambda = 1.0;
  double compute_load = 2.0;  // mean cycles entering R per slot
};

struct EpisodeStats {
  std::vector<double> mean_admitted;        // per worker
  double throughput = 0.0;                  // sum log2(1 + mean admitted)
  double max_drift_violation = 0.0;         // max over slots of lhs - rhs
  bool drift_ok = true;
  // Per-queue decile diagnostics: averages over the middle and final 10% of
  // the episode, maximized over workers.
  double q_mid = 0.0, q_final = 0.0;
  double h_mid = 0.0, h_final = 0.0;
  double e_mid = 0.0, e_final = 0.0;
  double server_mid = 0.0, server_final = 0.0;
};

inline EpisodeStats run_scheduler_episode(const EpisodeParams& params, int slots, uint64_t seed) {
  Rng rng(seed);
  const int m = params.workers;
  std::vector<WorkerState> workers(m);
  for (int i = 0; i < m; ++i) {
    auto& w = workers[i];
    w.p = params.power;
    w.delta = params.delta;
    w.xi = params.xi;
    w.lambda = params.lambda;
    w.theta = params.eh_max + w.p * params.t_slot + params.f_cap * w.delta;
    w.e = w.theta;
    w.f = params.f_cap;
  }
  ServerState server;
  server.f_slot = params.f_server;

  DriftBounds bounds;
  bounds.d_max = params.d_max;
  bounds.r_max = params.r_hi;
  bounds.f_max = params.f_cap;
  bounds.eh_max = params.eh_max;
  bounds.f_server_max = params.f_server;
  bounds.t_slot = params.t_slot;

  EpisodeStats stats;
  stats.mean_admitted.assign(m, 0.0);
  std::vector<double> q_sum_mid(m, 0.0), q_sum_fin(m, 0.0);
  double h_mid = 0, h_fin = 0, e_mid = 0, e_fin = 0, s_mid = 0, s_fin = 0, q_mid = 0, q_fin = 0;
  const int mid_lo = slots * 45 / 100, mid_hi = slots * 55 / 100;
  const int fin_lo = slots * 90 / 100;
  int mid_n = 0, fin_n = 0;

  SlotObservation obs;
  obs.d_arrival.resize(m);
  obs.e_harvest.resize(m);
  obs.channel.resize(m);
  obs.channels = params.channels;
  for (int t = 0; t < slots; ++t) {
    for (int i = 0; i < m; ++i) {
      obs.d_arrival[i] = rng.uniform(0.0, params.d_max);
      obs.e_harvest[i] = rng.uniform(0.0, params.eh_max);
      obs.channel[i] = rng.uniform(params.r_lo, params.r_hi);
      workers[i].r = obs.channel[i];
      workers[i].r_cycles += rng.uniform(0.0, 2.0 * params.compute_load);
    }
    const double l_before = lyapunov_value(workers, server);
    SlotDecision dec = decide_slot(workers, server, obs, params.v_weight, params.t_slot);
    const double rhs = drift_penalty_bound(workers, server, dec, obs, params.v_weight, bounds);
    double penalty = 0.0;
    for (int i = 0; i < m; ++i) {
      stats.mean_admitted[i] += dec.d[i];
      penalty += std::log2(1.0 + dec.y[i]);
    }
    step_queues(workers, server, dec, obs);
    const double lhs = lyapunov_value(workers, server) - l_before - params.v_weight * penalty;
    stats.max_drift_violation = std::max(stats.max_drift_violation, lhs - rhs);

    const bool in_mid = t >= mid_lo && t < mid_hi;
    const bool in_fin = t >= fin_lo;
    if (in_mid || in_fin) {
      double qmax = 0, hmax = 0, emax = 0;
      for (const auto& w : workers) {
        qmax = std::max(qmax, w.q);
        hmax = std::max(hmax, w.h);
        emax = std::max(emax, w.e);
      }
      if (in_mid) {
        q_mid += qmax;
        h_mid += hmax;
        e_mid += emax;
        s_mid += server.r_server;
        ++mid_n;
      }
      if (in_fin) {
        q_fin += qmax;
        h_fin += hmax;
        e_fin += emax;
        s_fin += server.r_server;
        ++fin_n;
      }
    }
  }
  for (int i = 0; i < m; ++i) {
    stats.mean_admitted[i] /= static_cast<double>(slots);
    stats.throughput += std::log2(1.0 + stats.mean_admitted[i]);
  }
  stats.drift_ok = stats.max_drift_violation <= 1e-6;
  if (mid_n > 0) {
    stats.q_mid = q_mid / mid_n;
    stats.h_mid = h_mid / mid_n;
    stats.e_mid = e_mid / mid_n;
    stats.server_mid = s_mid / mid_n;
  }
  if (fin_n > 0) {
    stats.q_final = q_fin / fin_n;
    stats.h_final = h_fin / fin_n;
    stats.e_final = e_fin / fin_n;
    stats.server_final = s_fin / fin_n;
  }
  return stats;
}

}  // namespace tsdcfl::sched
