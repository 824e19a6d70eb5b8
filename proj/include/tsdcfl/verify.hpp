#pragma once

#include <Eigen/Dense>
#include <functional>
#include <string>
#include <vector>

#include "tsdcfl/coding.hpp"
#include "tsdcfl/rng.hpp"

namespace tsdcfl::verify {

struct Witness {
  int workers = 0;
  int partitions = 0;
  int tolerance = 0;
  std::string census;
  std::string pattern;
  std::string reason;
};

struct SweepResult {
  long long configurations = 0;
  long long censuses = 0;
  long long patterns = 0;
  std::vector<Witness> witnesses;
  bool ok() const { return witnesses.empty(); }
};

using ProgressFn = std::function<void(const std::string&)>;

namespace detail {

inline std::string join(const std::vector<int>& xs) {
  std::string out = "{";
  for (size_t i = 0; i < xs.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(xs[i]);
  }
  return out + "}";
}

// Speed classes cycled from the reference heterogeneous profile.
inline std::vector<double> sweep_speeds(int workers) {
  static const double kCores[6] = {2, 2, 4, 4, 8, 8};
  std::vector<double> speeds(workers);
  for (int m = 0; m < workers; ++m) speeds[m] = kCores[m % 6];
  return speeds;
}

// Contiguous speed-proportional arcs covering all partitions.
inline std::vector<std::vector<int>> sweep_arcs(int partitions, const std::vector<double>& speeds) {
  const int n = static_cast<int>(speeds.size());
  double speed_sum = 0;
  for (double s : speeds) speed_sum += s;
  std::vector<int> loads(n, 0);
  int assigned = 0;
  for (int i = 0; i < n; ++i) {
    loads[i] = static_cast<int>(std::floor(partitions * speeds[i] / speed_sum + 1e-12));
    assigned += loads[i];
  }
  while (assigned < partitions) {
    int best = 0;
    for (int i = 1; i < n; ++i)
      if ((loads[i] + 1) / speeds[i] < (loads[best] + 1) / speeds[best]) best = i;
    ++loads[best];
    ++assigned;
  }
  std::vector<std::vector<int>> arcs(n);
  int offset = 0;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < loads[i]; ++j) arcs[i].push_back(offset + j);
    offset += loads[i];
  }
  return arcs;
}

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

inline std::vector<Eigen::VectorXd> draw_partials(int k, int dim, Rng& rng) {
  std::vector<Eigen::VectorXd> out(k);
  for (int i = 0; i < k; ++i) {
    out[i].resize(dim);
    for (int j = 0; j < dim; ++j) out[i](j) = rng.normal();
  }
  return out;
}

}  // namespace detail

// Exhaustive check of one two-stage census: builds the reduced code, compares
// check_span_condition against per-pattern threshold decoding, and verifies
// exact recovery of the partition sum. `corrupt` flips one filled entry to
// prove the checks can fail.
inline void check_two_stage_census(int workers, int partitions, int s, int m1,
                                   const std::vector<std::vector<int>>& arcs,
                                   const std::vector<char>& complete_set, Rng& rng,
                                   SweepResult& result, bool corrupt = false) {
  using namespace coding;
  std::vector<int> completed_workers;
  std::vector<char> complete(workers, 0);
  std::vector<char> delivered(partitions, 0);
  for (int i = 0; i < m1; ++i) {
    if (complete_set[i]) {
      complete[i] = 1;
      completed_workers.push_back(i);
      for (int k : arcs[i]) delivered[k] = 1;
    }
  }
  int kc = 0;
  for (int k = 0; k < partitions; ++k) kc += delivered[k];

  auto witness = [&](const std::string& census, const std::string& pattern, const std::string& why) {
    result.witnesses.push_back({workers, partitions, s, census, pattern, why});
  };
  const std::string census_tag =
      "Mc=" + detail::join(completed_workers) + " Kc=" + std::to_string(kc);

  ++result.censuses;
  if (kc == partitions) return;  // no-coding shortcut: durable partials cover everything

  std::vector<int> reduced_cols, col_of(partitions, -1);
  for (int k = 0; k < partitions; ++k) {
    if (!delivered[k]) {
      col_of[k] = static_cast<int>(reduced_cols.size());
      reduced_cols.push_back(k);
    }
  }
  std::vector<int> rows;
  for (int m = 0; m < workers; ++m)
    if (!complete[m]) rows.push_back(m);

  const auto speeds_all = detail::sweep_speeds(workers);
  std::vector<double> speeds;
  std::vector<std::vector<int>> held(rows.size());
  std::vector<bool> is_new(rows.size(), false);
  for (size_t r = 0; r < rows.size(); ++r) {
    const int m = rows[r];
    speeds.push_back(speeds_all[m]);
    if (m < m1) {
      for (int k : arcs[m])
        if (col_of[k] >= 0) held[r].push_back(col_of[k]);
    } else {
      is_new[r] = true;
    }
  }

  CodeMatrix reduced;
  try {
    const auto support =
        build_support(static_cast<int>(reduced_cols.size()), s, speeds, held, is_new);
    reduced = fill_code_matrix(support, build_auxiliary(s, static_cast<int>(rows.size())));
  } catch (const InfeasibleAssignment&) {
    return;  // census not reachable at this tolerance
  }
  if (corrupt) {
    // Zero one supported entry: the column loses a copy, so some tolerated
    // straggler pattern must now fail to decode.
    for (int r = 0; r < reduced.rows() && corrupt; ++r)
      for (int c = 0; c < reduced.cols() && corrupt; ++c)
        if (reduced.support(r, c)) {
          reduced.entries(r, c) = 0.0;
          corrupt = false;
        }
  }

  // Effective full-width matrices for the span condition.
  CodeMatrix b1 = CodeMatrix::zero(m1, partitions);
  for (int i = 0; i < m1; ++i) {
    if (complete[i]) {
      for (int k : arcs[i]) {
        b1.entries(i, k) = 1.0;
        b1.support(i, k) = true;
      }
    }
  }
  CodeMatrix b2 = CodeMatrix::zero(workers - m1, partitions);
  for (size_t r = 0; r < rows.size(); ++r) {
    const int m = rows[r];
    for (size_t c = 0; c < reduced_cols.size(); ++c) {
      if (!reduced.support(static_cast<int>(r), static_cast<int>(c))) continue;
      const double value = reduced.entries(static_cast<int>(r), static_cast<int>(c));
      if (m < m1) {
        b1.entries(m, reduced_cols[c]) = value;
        b1.support(m, reduced_cols[c]) = true;
      } else {
        b2.entries(m - m1, reduced_cols[c]) = value;
        b2.support(m - m1, reduced_cols[c]) = true;
      }
    }
  }
  const bool span = check_span_condition(b1, b2, completed_workers, s);

  const int dim = 3;
  const auto partials = detail::draw_partials(partitions, dim, rng);
  Eigen::VectorXd durable = Eigen::VectorXd::Zero(dim);
  Eigen::VectorXd full = Eigen::VectorXd::Zero(dim);
  for (int k = 0; k < partitions; ++k) {
    full += partials[k];
    if (delivered[k]) durable += partials[k];
  }
  std::vector<const Eigen::VectorXd*> remaining;
  for (int k : reduced_cols) remaining.push_back(&partials[k]);

  bool all_patterns_ok = true;
  const int n_rows = static_cast<int>(rows.size());
  for (int failures = 0; failures <= std::min(s, n_rows - 1); ++failures) {
    detail::for_each_subset(n_rows, failures, [&](const std::vector<int>& out) {
      ++result.patterns;
      std::vector<char> straggling(n_rows, 0);
      for (int r : out) straggling[r] = 1;
      std::vector<int> survivors;
      for (int r = 0; r < n_rows; ++r)
        if (!straggling[r]) survivors.push_back(r);
      const auto res = decode(reduced, survivors);
      if (!res.success) {
        all_patterns_ok = false;
        witness(census_tag, detail::join(out), "decode failed, residual " + format_double(res.residual));
        return;
      }
      std::vector<Eigen::VectorXd> coded;
      for (int r : survivors) coded.push_back(encode_partials(reduced, r, remaining, dim));
      const Eigen::VectorXd rebuilt = durable + aggregate_decode(res.coefficients, coded);
      const double rel = (rebuilt - full).cwiseAbs().maxCoeff() /
                         std::max(full.cwiseAbs().maxCoeff(), 1e-30);
      if (rel >= kRecoveryRelTolerance) {
        all_patterns_ok = false;
        witness(census_tag, detail::join(out), "recovery error " + format_double(rel));
      }
    });
  }
  if (span != all_patterns_ok)
    witness(census_tag, "-", std::string("span condition ") + (span ? "true" : "false") +
                                 " disagrees with per-pattern decoding");
}

// Every census split reachable in the grid: any subset of stage-1 workers can
// be the completed set at T_comp.
inline void sweep_two_stage_config(int workers, int partitions, int s, Rng& rng,
                                   SweepResult& result) {
  const int m1 = (workers + 1) / 2;
  const auto speeds = detail::sweep_speeds(workers);
  std::vector<double> stage1_speeds(speeds.begin(), speeds.begin() + m1);
  const auto arcs = detail::sweep_arcs(partitions, stage1_speeds);

  std::vector<char> complete_set(m1, 0);
  for (int mask = 0; mask < (1 << m1); ++mask) {
    for (int i = 0; i < m1; ++i) complete_set[i] = (mask >> i) & 1;
    check_two_stage_census(workers, partitions, s, m1, arcs, complete_set, rng, result);
  }
  ++result.configurations;
}

inline void sweep_baseline(const coding::CodeMatrix& code, int s, Rng& rng, SweepResult& result,
                           const std::string& tag) {
  using namespace coding;
  const int workers = static_cast<int>(code.rows());
  const int partitions = static_cast<int>(code.cols());
  const bool span = check_span_condition(code, CodeMatrix::zero(0, partitions), {}, s);

  const int dim = 3;
  const auto partials = detail::draw_partials(partitions, dim, rng);
  Eigen::VectorXd full = Eigen::VectorXd::Zero(dim);
  for (const auto& g : partials) full += g;
  std::vector<const Eigen::VectorXd*> ptrs;
  for (const auto& g : partials) ptrs.push_back(&g);

  bool all_ok = true;
  for (int failures = 0; failures <= s; ++failures) {
    detail::for_each_subset(workers, failures, [&](const std::vector<int>& out) {
      ++result.patterns;
      std::vector<char> straggling(workers, 0);
      for (int r : out) straggling[r] = 1;
      std::vector<int> survivors;
      for (int r = 0; r < workers; ++r)
        if (!straggling[r]) survivors.push_back(r);
      const auto res = decode(code, survivors);
      bool ok = res.success;
      if (ok) {
        std::vector<Eigen::VectorXd> coded;
        for (int r : survivors) coded.push_back(encode_partials(code, r, ptrs, dim));
        const Eigen::VectorXd rebuilt = aggregate_decode(res.coefficients, coded);
        ok = (rebuilt - full).cwiseAbs().maxCoeff() /
                 std::max(full.cwiseAbs().maxCoeff(), 1e-30) <
             kRecoveryRelTolerance;
      }
      if (!ok) {
        all_ok = false;
        result.witnesses.push_back(
            {workers, partitions, s, tag, detail::join(out), "baseline decode failed"});
      }
    });
  }
  if (span != all_ok)
    result.witnesses.push_back({workers, partitions, s, tag, "-", "span/decode disagreement"});
  ++result.configurations;
}

// Full grid: two-stage configurations plus the Cyclic/Fractional Repetition
// parity set. A corrupted matrix (negative control) must produce witnesses.
inline SweepResult run_verification(int max_workers, int max_partitions, int max_s,
                                    bool corrupt = false, const ProgressFn& progress = {}) {
  SweepResult result;
  Rng rng(20240901);
  for (int workers = 2; workers <= max_workers; ++workers) {
    for (int partitions = 1; partitions <= max_partitions; ++partitions) {
      for (int s = 0; s <= std::min(max_s, workers - 1); ++s) {
        const auto before = result.witnesses.size();
        sweep_two_stage_config(workers, partitions, s, rng, result);
        if (progress) {
          progress("two-stage M=" + std::to_string(workers) + " K=" + std::to_string(partitions) +
                   " s=" + std::to_string(s) + " " +
                   (result.witnesses.size() == before ? "PASS" : "FAIL"));
        }
      }
    }
  }
  for (auto [m, s] : {std::pair{3, 1}, {3, 2}, {5, 1}, {5, 2}}) {
    const auto before = result.witnesses.size();
    sweep_baseline(coding::cyclic_repetition(m, s), s, rng, result, "cyclic");
    if (progress)
      progress("cyclic M=" + std::to_string(m) + " s=" + std::to_string(s) + " " +
               (result.witnesses.size() == before ? "PASS" : "FAIL"));
  }
  for (auto [m, s] : {std::pair{4, 1}, {6, 1}, {6, 2}}) {
    const auto before = result.witnesses.size();
    sweep_baseline(coding::fractional_repetition(m, s), s, rng, result, "fracrep");
    if (progress)
      progress("fracrep M=" + std::to_string(m) + " s=" + std::to_string(s) + " " +
               (result.witnesses.size() == before ? "PASS" : "FAIL"));
  }
  if (corrupt) {
    // Deliberately corrupted five-worker reference census: must be caught.
    const auto arcs = detail::sweep_arcs(7, {2, 2, 4});
    const std::vector<char> complete_set = {1, 1, 0};
    check_two_stage_census(5, 7, 1, 3, arcs, complete_set, rng, result, /*corrupt=*/true);
  }
  return result;
}

}  // namespace tsdcfl::verify
