// Acceptance suite: one pass/fail line per criterion, exit nonzero on any
// failure. Tolerances are fixed here, not configurable.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "tsdcfl/config.hpp"
#include "tsdcfl/report.hpp"
#include "tsdcfl/sim.hpp"
#include "tsdcfl/verify.hpp"

using namespace tsdcfl;

namespace {

int g_failures = 0;

void outcome(int id, bool pass, const std::string& summary) {
  std::printf("[%s] C%d: %s\n", pass ? "PASS" : "FAIL", id, summary.c_str());
  std::fflush(stdout);
  if (!pass) ++g_failures;
}

config::ExperimentConfig profile(config::Scheme scheme, uint64_t seed, int epochs) {
  auto cfg = config::parse_config(nlohmann::json::object());
  cfg.scheme = scheme;
  cfg.seed = seed;
  cfg.epochs = epochs;
  cfg.slot_trace = false;
  return cfg;
}

// Exact one-sided sign test: P(X >= wins) for X ~ Binomial(n, 1/2).
double sign_test_p(int wins, int n) {
  double p = 0.0;
  for (int k = wins; k <= n; ++k) {
    double c = 1.0;
    for (int i = 0; i < k; ++i) c = c * (n - i) / (i + 1);
    p += c * std::pow(0.5, n);
  }
  return p;
}

void criterion_1_2_coding() {
  const auto started = std::chrono::steady_clock::now();
  const auto result = verify::run_verification(6, 8, 2);
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  std::string detail = std::to_string(result.censuses) + " censuses, " +
                       std::to_string(result.patterns) + " patterns in " + format_double(secs) +
                       "s";
  bool two_stage_ok = true, baseline_ok = true;
  for (const auto& w : result.witnesses) {
    if (w.census == "cyclic" || w.census == "fracrep")
      baseline_ok = false;
    else
      two_stage_ok = false;
  }
  outcome(1, two_stage_ok && secs < 300.0,
          "exhaustive two-stage span/decode/recovery sweep (" + detail + ")");
  outcome(2, baseline_ok, "cyclic and fractional repetition pass the same decode sweep");
}

void criterion_3_epoch_equivalence() {
  std::vector<report::RunReport> runs;
  for (auto scheme : {config::Scheme::Tsdcfl, config::Scheme::Cyclic, config::Scheme::FracRep})
    runs.push_back(sim::run_experiment(profile(scheme, 1, 200)));
  double worst = 0.0;
  int compared = 0;
  bool ok = true;
  for (int e = 0; e < 200; ++e) {
    bool all_decode = true;
    for (const auto& r : runs) all_decode = all_decode && r.epochs[e].decode_success;
    if (!all_decode) continue;
    ++compared;
    for (size_t i = 1; i < runs.size(); ++i)
      worst = std::max(worst, std::abs(runs[0].epochs[e].loss - runs[i].epochs[e].loss));
  }
  ok = compared == 200 && worst < 1e-6;
  outcome(3, ok,
          "per-epoch loss trajectories agree across schemes (" + std::to_string(compared) +
              "/200 epochs decoded everywhere, max gap " + format_double(worst) + ")");
}

void criterion_4_time_improvement() {
  const int seeds = 20, epochs = 200;
  int wins_cyclic = 0, wins_frac = 0;
  double mean_ts = 0, mean_cy = 0, mean_fr = 0;
  for (int seed = 1; seed <= seeds; ++seed) {
    const double ts = sim::run_experiment(profile(config::Scheme::Tsdcfl, seed, epochs))
                          .mean_iteration_time;
    const double cy = sim::run_experiment(profile(config::Scheme::Cyclic, seed, epochs))
                          .mean_iteration_time;
    const double fr = sim::run_experiment(profile(config::Scheme::FracRep, seed, epochs))
                          .mean_iteration_time;
    wins_cyclic += ts < cy ? 1 : 0;
    wins_frac += ts < fr ? 1 : 0;
    mean_ts += ts / seeds;
    mean_cy += cy / seeds;
    mean_fr += fr / seeds;
  }
  const double p_cy = sign_test_p(wins_cyclic, seeds);
  const double p_fr = sign_test_p(wins_frac, seeds);
  const bool ok = mean_ts < mean_cy && mean_ts < mean_fr && p_cy < 0.01 && p_fr < 0.01;
  outcome(4, ok,
          "mean iteration time " + format_double(mean_ts) + " vs cyclic " + format_double(mean_cy) +
              " (wins " + std::to_string(wins_cyclic) + "/20, p=" + format_double(p_cy) +
              ") and fracrep " + format_double(mean_fr) + " (wins " + std::to_string(wins_frac) +
              "/20, p=" + format_double(p_fr) + ")");
}

void criterion_5_closed_forms() {
  Rng rng(1234);
  bool y_ok = true, d_ok = true;
  for (int trial = 0; trial < 1000; ++trial) {
    const double v = rng.uniform(0.1, 50.0);
    const double h = rng.uniform(0.0, 20.0);
    const double d = rng.uniform(0.0, 10.0);
    if (std::abs(sched::solve_auxiliary_y(v, h, d) - oracles::grid_best_y(v, h, d)) > 1e-4 + 1e-9)
      y_ok = false;
  }
  for (int trial = 0; trial < 1000; ++trial) {
    const double q = rng.uniform(0.0, 10.0);
    const double h = rng.uniform(0.0, 10.0);
    const double d = rng.uniform(0.0, 5.0);
    if (std::abs(sched::solve_admission_d(q, h, d) - oracles::grid_best_d(q, h, d)) > 1e-4 + 1e-9)
      d_ok = false;
  }
  bool v_ok = true;
  double worst_ratio = 1.0;
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<sched::WorkerState> workers(3);
    for (auto& w : workers) {
      w.q = rng.uniform(0.0, 400.0);
      w.e = rng.uniform(0.0, 3.0);
      w.p = rng.uniform(0.5, 2.0);
      w.r = rng.uniform(100.0, 800.0);
      w.xi = rng.uniform(0.005, 0.02);
    }
    sched::ServerState server;
    server.r_server = rng.uniform(0.0, 5000.0);
    const auto v = sched::solve_transmission_v(workers, server, 1.0, 1.0);
    const double mine = oracles::transmission_objective(workers, server, v);
    const double best = oracles::grid_best_transmission(workers, server, 1.0, 1.0);
    if (best > 0) worst_ratio = std::min(worst_ratio, mine / best);
    if (mine < 0.95 * best - 1e-9) v_ok = false;
  }
  outcome(5, y_ok && d_ok && v_ok,
          "closed forms match grid oracles; greedy transmission at " +
              format_double(worst_ratio * 100) + "% of grid optimum (>= 95% required)");
}

void criterion_6_drift_bound() {
  bool ok = true;
  double worst = -1e300;
  for (uint64_t seed = 1; seed <= 10; ++seed) {
    sched::EpisodeParams params;
    params.workers = 4;
    const auto stats = sched::run_scheduler_episode(params, 1000, seed);
    worst = std::max(worst, stats.max_drift_violation);
    ok = ok && stats.drift_ok;
  }
  outcome(6, ok,
          "per-slot drift-plus-penalty within the bound on 10x1000 slots (max excess " +
              format_double(worst) + ")");
}

void criterion_7_stability() {
  sched::EpisodeParams params;
  params.workers = 4;
  params.channels = 1.0;
  params.r_lo = 0.5;
  params.r_hi = 1.5;
  params.d_max = 2.0;
  params.power = 0.2;
  params.f_server = 5.0;
  params.f_cap = 2.0;
  params.compute_load = 1.0;
  const auto stats = sched::run_scheduler_episode(params, 50000, 77);
  const bool stable = stats.q_final <= 2.0 * std::max(stats.q_mid, 1.0) &&
                      stats.h_final <= 2.0 * std::max(stats.h_mid, 1.0) &&
                      stats.e_final <= 2.0 * std::max(stats.e_mid, 1.0) &&
                      stats.server_final <= 2.0 * std::max(stats.server_mid, 1.0);
  double last = -1.0;
  bool monotone = true;
  std::string curve;
  for (double v : {1.0, 10.0, 100.0}) {
    auto p = params;
    p.v_weight = v;
    const auto s = sched::run_scheduler_episode(p, 50000, 4242);
    monotone = monotone && s.throughput >= last - 1e-9;
    last = s.throughput;
    curve += (curve.empty() ? "" : " -> ") + format_double(s.throughput);
  }
  outcome(7, stable && monotone,
          "50k-slot queues stable (final/mid Q " + format_double(stats.q_final) + "/" +
              format_double(stats.q_mid) + "); throughput nondecreasing in V: " + curve);
}

void criterion_8_theorem_bound() {
  auto cfg = profile(config::Scheme::Tsdcfl, 3, 500);
  cfg.dimension = 10;
  cfg.task = learn::TaskKind::LeastSquares;
  const auto run = sim::run_experiment(cfg);
  const bool ok = run.failed_epochs == 0 && run.mean_grad_sq_norm <= run.convergence_bound;
  outcome(8, ok,
          "measured mean gradient norm " + format_double(run.mean_grad_sq_norm) +
              " <= bound " + format_double(run.convergence_bound));
}

void criterion_9_gradients() {
  Rng rng(5);
  double worst = 0.0;
  for (learn::TaskKind task : {learn::TaskKind::LeastSquares, learn::TaskKind::Logistic}) {
    for (int trial = 0; trial < 50; ++trial) {
      const int dim = 4;
      learn::Model model{Eigen::VectorXd(dim), task};
      for (int i = 0; i < dim; ++i) model.w(i) = rng.normal();
      learn::Partition part;
      part.index = trial;
      for (int i = 0; i < 20; ++i) {
        learn::Sample s;
        s.x = Eigen::VectorXd(dim);
        for (int j = 0; j < dim; ++j) s.x(j) = rng.normal();
        const double resp = rng.normal();
        s.y = task == learn::TaskKind::LeastSquares ? resp : (resp >= 0 ? 1.0 : -1.0);
        part.samples.push_back(s);
      }
      const auto fd = oracles::finite_difference_gradient(model, part);
      worst = std::max(worst,
                       (learn::partial_gradient(model, part) - fd).cwiseAbs().maxCoeff());
    }
  }
  const auto data = learn::make_synthetic(learn::TaskKind::LeastSquares, 80, 3, 0.1, 11);
  const auto parts = learn::partition_dataset(data, 4, 11);
  const auto opt = learn::least_squares_optimum(parts);
  learn::Model model{Eigen::VectorXd::Zero(3), learn::TaskKind::LeastSquares};
  const double eta = 1.0 / learn::lipschitz_least_squares(parts);
  for (int it = 0; it < 3000; ++it)
    model = learn::sgd_step(model, learn::full_gradient_oracle(model, parts), eta);
  const double gap = (model.w - opt).cwiseAbs().maxCoeff();
  outcome(9, worst < 1e-6 && gap < 1e-6,
          "finite-difference agreement " + format_double(worst) + "; optimum gap " +
              format_double(gap));
}

void criterion_10_determinism() {
  auto cfg = profile(config::Scheme::Tsdcfl, 9, 40);
  cfg.slot_trace = true;
  const auto a = sim::run_experiment(cfg);
  const auto b = sim::run_experiment(cfg);
  const bool ok = report::report_to_json(a).dump() == report::report_to_json(b).dump() &&
                  report::epoch_csv(a) == report::epoch_csv(b) &&
                  report::slot_trace_csv(a.slot_trace) == report::slot_trace_csv(b.slot_trace);
  outcome(10, ok, "repeated runs serialize byte-identically");
}

}  // namespace

int main() {
  criterion_1_2_coding();
  criterion_3_epoch_equivalence();
  criterion_4_time_improvement();
  criterion_5_closed_forms();
  criterion_6_drift_bound();
  criterion_7_stability();
  criterion_8_theorem_bound();
  criterion_9_gradients();
  criterion_10_determinism();
  if (g_failures > 0) {
    std::printf("%d criterion(s) failed\n", g_failures);
    return 1;
  }
  std::printf("all acceptance criteria pass\n");
  return 0;
}
