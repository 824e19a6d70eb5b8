// Independent test-side oracles: brute-force enumeration, grid searches and
// finite differences. Nothing here may call the implementation paths it
// checks.
#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <vector>

#include "tsdcfl/coding.hpp"
#include "tsdcfl/learning.hpp"
#include "tsdcfl/rng.hpp"
#include "tsdcfl/scheduler.hpp"

namespace oracles {

// Visit every k-subset of {0..n-1}.
inline void for_each_subset(int n, int k, const std::function<void(const std::vector<int>&)>& fn) {
  std::vector<int> idx(k);
  std::function<void(int, int)> rec = [&](int pos, int start) {
    if (pos == k) {
      fn(idx);
      return;
    }
    for (int i = start; i <= n - (k - pos); ++i) {
      idx[pos] = i;
      rec(pos + 1, i + 1);
    }
  };
  rec(0, 0);
}

// Does the all-ones row lie in the row span of the given rows? Rank test via
// column-pivoted QR on the stacked system, independent of coding::decode.
inline bool ones_in_rowspan(const std::vector<Eigen::RowVectorXd>& rows, int cols, double tol = 1e-8) {
  if (rows.empty()) return false;
  Eigen::MatrixXd a(cols, static_cast<int>(rows.size()));
  for (size_t j = 0; j < rows.size(); ++j) a.col(static_cast<int>(j)) = rows[j].transpose();
  Eigen::MatrixXd stacked(cols, static_cast<int>(rows.size()) + 1);
  stacked.leftCols(a.cols()) = a;
  stacked.col(a.cols()) = Eigen::VectorXd::Ones(cols);
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr_a(a), qr_s(stacked);
  qr_a.setThreshold(tol);
  qr_s.setThreshold(tol);
  return qr_a.rank() == qr_s.rank();
}

// Exhaustive per-pattern decodability of a code matrix for exactly s
// stragglers.
inline bool decodes_all_patterns(const tsdcfl::coding::CodeMatrix& code, int s) {
  const int m = static_cast<int>(code.rows());
  const int k = static_cast<int>(code.cols());
  bool ok = true;
  for_each_subset(m, s, [&](const std::vector<int>& stragglers) {
    std::vector<bool> out(m, false);
    for (int r : stragglers) out[r] = true;
    std::vector<Eigen::RowVectorXd> rows;
    for (int r = 0; r < m; ++r)
      if (!out[r]) rows.push_back(code.entries.row(r));
    if (!ones_in_rowspan(rows, k)) ok = false;
  });
  return ok;
}

// Relative max-norm error of the reconstruction Sum a_m * coded_m vs the
// direct partition sum, from scratch.
inline double recovery_error(const tsdcfl::coding::CodeMatrix& code, const std::vector<int>& survivors,
                             const Eigen::VectorXd& coeffs, const std::vector<Eigen::VectorXd>& partials) {
  const int dim = static_cast<int>(partials.front().size());
  Eigen::VectorXd direct = Eigen::VectorXd::Zero(dim);
  for (const auto& g : partials) direct += g;
  Eigen::VectorXd rebuilt = Eigen::VectorXd::Zero(dim);
  for (size_t j = 0; j < survivors.size(); ++j) {
    const int r = survivors[j];
    Eigen::VectorXd coded = Eigen::VectorXd::Zero(dim);
    for (int c = 0; c < code.cols(); ++c) coded += code.entries(r, c) * partials[c];
    rebuilt += coeffs(static_cast<int>(j)) * coded;
  }
  const double scale = std::max(direct.cwiseAbs().maxCoeff(), 1e-30);
  return (rebuilt - direct).cwiseAbs().maxCoeff() / scale;
}

inline std::vector<Eigen::VectorXd> random_partials(int k, int dim, tsdcfl::Rng& rng) {
  std::vector<Eigen::VectorXd> out(k);
  for (int i = 0; i < k; ++i) {
    out[i].resize(dim);
    for (int j = 0; j < dim; ++j) out[i](j) = rng.normal();
  }
  return out;
}

// Grid maximizer of V log2(1 + lambda y) - H y over [0, d_max].
inline double grid_best_y(double v, double h, double d_max, double lambda = 1.0, double step = 1e-4) {
  double best = 0.0, best_val = -1e300;
  for (double y = 0.0; y <= d_max + step / 2; y += step) {
    const double yy = std::min(y, d_max);
    const double val = v * std::log2(1.0 + lambda * yy) - h * yy;
    if (val > best_val) {
      best_val = val;
      best = yy;
    }
  }
  return best;
}

// Grid minimizer of (Q - H) d over [0, d_max].
inline double grid_best_d(double q, double h, double d_max, double step = 1e-4) {
  double best = 0.0, best_val = 1e300;
  for (double d = 0.0; d <= d_max + step / 2; d += step) {
    const double dd = std::min(d, d_max);
    const double val = (q - h) * dd;
    if (val < best_val) {
      best_val = val;
      best = dd;
    }
  }
  return best;
}

inline double transmission_objective(const std::vector<tsdcfl::sched::WorkerState>& workers,
                                     const tsdcfl::sched::ServerState& server,
                                     const std::vector<double>& v) {
  double obj = 0.0;
  for (size_t i = 0; i < workers.size(); ++i) {
    const auto& w = workers[i];
    const double c = std::min(w.q, w.r * v[i]);
    obj += w.e * w.p * v[i] + std::max(w.q - server.r_server * w.xi, 0.0) * c;
  }
  return obj;
}

// Exhaustive grid over per-worker transmission times within the scheduler's
// feasible box (v <= T, E/p, Q/r; sum v <= T L). Three workers only.
inline double grid_best_transmission(const std::vector<tsdcfl::sched::WorkerState>& workers,
                                     const tsdcfl::sched::ServerState& server, double t_slot,
                                     double channels, double step = 0.05) {
  const double budget = t_slot * channels;
  std::vector<double> caps;
  for (const auto& w : workers) {
    double cap = t_slot;
    if (w.p > 0) cap = std::min(cap, w.e / w.p);
    cap = std::min(cap, w.r > 0 ? w.q / w.r : 0.0);
    caps.push_back(std::max(cap, 0.0));
  }
  double best = 0.0;
  std::vector<double> v(3, 0.0);
  for (double v0 = 0.0; v0 <= caps[0] + step / 2; v0 += step) {
    v[0] = std::min(v0, caps[0]);
    for (double v1 = 0.0; v1 <= caps[1] + step / 2; v1 += step) {
      v[1] = std::min(v1, caps[1]);
      if (v[0] + v[1] > budget) break;
      for (double v2 = 0.0; v2 <= caps[2] + step / 2; v2 += step) {
        v[2] = std::min(v2, caps[2]);
        if (v[0] + v[1] + v[2] > budget) break;
        best = std::max(best, transmission_objective(workers, server, v));
      }
    }
  }
  return best;
}

// Central finite differences of the partition mean loss.
inline Eigen::VectorXd finite_difference_gradient(const tsdcfl::learn::Model& model,
                                                  const tsdcfl::learn::Partition& part,
                                                  double eps = 1e-6) {
  Eigen::VectorXd g(model.w.size());
  tsdcfl::learn::Model probe = model;
  for (int i = 0; i < model.w.size(); ++i) {
    probe.w = model.w;
    probe.w(i) += eps;
    const double hi = tsdcfl::learn::loss(probe, part.samples);
    probe.w(i) = model.w(i) - eps;
    const double lo = tsdcfl::learn::loss(probe, part.samples);
    g(i) = (hi - lo) / (2 * eps);
  }
  return g;
}

}  // namespace oracles
