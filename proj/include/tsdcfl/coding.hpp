#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <functional>
#include <nlohmann/json.hpp>
#include <numeric>
#include <vector>

#include "tsdcfl/common.hpp"

namespace tsdcfl::coding {

using BoolMask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

inline constexpr double kDecodeTolerance = 1e-8;
inline constexpr double kRecoveryRelTolerance = 1e-9;

// Rows are worker code words, columns are data partitions. Structural zeros
// (support == false) are exact zeros in entries.
struct CodeMatrix {
  Eigen::MatrixXd entries;
  BoolMask support;

  Eigen::Index rows() const { return entries.rows(); }
  Eigen::Index cols() const { return entries.cols(); }

  static CodeMatrix zero(Eigen::Index rows, Eigen::Index cols) {
    CodeMatrix m;
    m.entries = Eigen::MatrixXd::Zero(rows, cols);
    m.support = BoolMask::Constant(rows, cols, false);
    return m;
  }

  bool structurally_consistent() const {
    if (entries.rows() != support.rows() || entries.cols() != support.cols()) return false;
    for (Eigen::Index r = 0; r < rows(); ++r)
      for (Eigen::Index c = 0; c < cols(); ++c)
        if (!support(r, c) && entries(r, c) != 0.0) return false;
    return true;
  }

  int column_degree(Eigen::Index col) const {
    int deg = 0;
    for (Eigen::Index r = 0; r < rows(); ++r)
      if (support(r, col)) ++deg;
    return deg;
  }
};

struct StragglerPattern {
  std::vector<int> straggler_set;
  int total_workers = 0;
};

// One row of the decoding strategy: coefficients over the surviving workers.
struct DecodeResult {
  Eigen::VectorXd coefficients;
  double residual = 0.0;
  bool success = false;
};

// (s+1) x width matrix whose every (s+1)-column minor is invertible.
struct AuxiliaryMatrix {
  Eigen::MatrixXd entries;
  int tolerance() const { return static_cast<int>(entries.rows()) - 1; }
  int width() const { return static_cast<int>(entries.cols()); }
};

// Vandermonde on nodes 2..width+1 (powers 0..s). Distinct positive nodes make
// every minor nonzero; node 1 is reserved as the reconstruction point, so all
// solved code entries stay nonzero.
inline AuxiliaryMatrix build_auxiliary(int s, int width) {
  if (s < 0 || width < s + 1)
    throw std::invalid_argument("build_auxiliary: need width >= s+1, got s=" + std::to_string(s) +
                                " width=" + std::to_string(width));
  AuxiliaryMatrix aux;
  aux.entries.resize(s + 1, width);
  for (int j = 0; j < width; ++j) {
    const double node = static_cast<double>(j + 2);
    double p = 1.0;
    for (int i = 0; i <= s; ++i) {
      aux.entries(i, j) = p;
      p *= node;
    }
  }
  return aux;
}

namespace detail {

// Largest-remainder rounding of total * weight_i / sum(weights) to integers
// summing to total. Ties go to the lower index.
inline std::vector<int> largest_remainder(double total, const std::vector<double>& weights) {
  const double wsum = std::accumulate(weights.begin(), weights.end(), 0.0);
  const int n = static_cast<int>(weights.size());
  std::vector<int> out(n, 0);
  if (n == 0 || total <= 0) return out;
  std::vector<double> rem(n, 0.0);
  int assigned = 0;
  for (int i = 0; i < n; ++i) {
    const double share = wsum > 0 ? total * weights[i] / wsum : total / n;
    out[i] = static_cast<int>(std::floor(share + 1e-12));
    rem[i] = share - out[i];
    assigned += out[i];
  }
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return rem[a] > rem[b]; });
  for (int i = 0; assigned < static_cast<int>(std::llround(total)); ++i) {
    out[order[i % n]] += 1;
    ++assigned;
  }
  return out;
}

}  // namespace detail

// Stage-2 support construction. Rows cover all post-census workers: continuing
// workers keep the columns they already hold (is_new=false), new workers
// receive speed-proportional quotas of the missing copies (largest-remainder
// rounding) placed cyclically. Every column ends with exactly s+1 structural
// nonzeros; excess continuing copies are trimmed from the highest row index
// down.
inline BoolMask build_support(int k_rem, int s, const std::vector<double>& speeds,
                              const std::vector<std::vector<int>>& held_columns,
                              const std::vector<bool>& is_new) {
  const int rows = static_cast<int>(speeds.size());
  if (k_rem < 1) throw std::invalid_argument("build_support: k_rem must be >= 1");
  if (s < 0) throw std::invalid_argument("build_support: s must be >= 0");
  if (static_cast<int>(held_columns.size()) != rows || static_cast<int>(is_new.size()) != rows)
    throw std::invalid_argument("build_support: per-row argument size mismatch");

  BoolMask support = BoolMask::Constant(rows, k_rem, false);
  for (int r = 0; r < rows; ++r) {
    if (is_new[r] && !held_columns[r].empty())
      throw std::invalid_argument("build_support: new workers cannot hold prior copies");
    for (int c : held_columns[r]) {
      if (c < 0 || c >= k_rem) throw std::invalid_argument("build_support: held column out of range");
      support(r, c) = true;
    }
  }

  // Trim columns already above s+1 copies, dropping highest-index holders.
  std::vector<int> degree(k_rem, 0);
  for (int c = 0; c < k_rem; ++c) {
    for (int r = 0; r < rows; ++r)
      if (support(r, c)) ++degree[c];
    for (int r = rows - 1; r >= 0 && degree[c] > s + 1; --r) {
      if (support(r, c)) {
        support(r, c) = false;
        --degree[c];
      }
    }
  }

  std::vector<int> new_rows;
  for (int r = 0; r < rows; ++r)
    if (is_new[r]) new_rows.push_back(r);

  int total_need = 0;
  for (int c = 0; c < k_rem; ++c) {
    const int need = s + 1 - degree[c];
    if (need > static_cast<int>(new_rows.size()))
      throw InfeasibleAssignment("column " + std::to_string(c) + " needs " + std::to_string(need) +
                                 " distinct new workers but only " + std::to_string(new_rows.size()) +
                                 " are available");
    total_need += need;
  }
  if (total_need == 0) return support;

  std::vector<double> new_speeds;
  for (int r : new_rows) new_speeds.push_back(speeds[r]);
  std::vector<int> quota = detail::largest_remainder(total_need, new_speeds);

  std::vector<int> load(new_rows.size(), 0);
  size_t ring = 0;
  auto assign = [&](int c, size_t slot) {
    support(new_rows[slot], c) = true;
    ++degree[c];
    ++load[slot];
  };
  for (int c = 0; c < k_rem; ++c) {
    while (degree[c] < s + 1) {
      bool placed = false;
      for (size_t step = 0; step < new_rows.size(); ++step) {
        const size_t slot = (ring + step) % new_rows.size();
        if (quota[slot] > 0 && !support(new_rows[slot], c)) {
          assign(c, slot);
          --quota[slot];
          ring = (slot + 1) % new_rows.size();
          placed = true;
          break;
        }
      }
      if (placed) continue;
      // Quota concentrated on rows already covering this column: move one
      // planned copy to the least-loaded eligible row.
      size_t best = new_rows.size();
      for (size_t slot = 0; slot < new_rows.size(); ++slot) {
        if (support(new_rows[slot], c)) continue;
        if (best == new_rows.size() || load[slot] < load[best]) best = slot;
      }
      if (best == new_rows.size())
        throw InfeasibleAssignment("column " + std::to_string(c) + " cannot reach degree " +
                                   std::to_string(s + 1));
      size_t donor = 0;
      for (size_t slot = 1; slot < new_rows.size(); ++slot)
        if (quota[slot] > quota[donor]) donor = slot;
      --quota[donor];
      assign(c, best);
    }
  }
  return support;
}

// Solve each column against the auxiliary matrix: the s+1 supported values of
// column k satisfy aux|_rows(k) * b = 1, so any auxiliary row combination that
// zeroes s workers still reconstructs the unit column sum.
inline CodeMatrix fill_code_matrix(const BoolMask& support, const AuxiliaryMatrix& aux) {
  const int rows = static_cast<int>(support.rows());
  const int cols = static_cast<int>(support.cols());
  const int need = static_cast<int>(aux.entries.rows());
  if (aux.width() != rows)
    throw std::invalid_argument("fill_code_matrix: auxiliary width must equal support rows");

  CodeMatrix code = CodeMatrix::zero(rows, cols);
  code.support = support;
  for (int c = 0; c < cols; ++c) {
    std::vector<int> holders;
    for (int r = 0; r < rows; ++r)
      if (support(r, c)) holders.push_back(r);
    if (static_cast<int>(holders.size()) != need)
      throw std::invalid_argument("fill_code_matrix: column " + std::to_string(c) + " has degree " +
                                  std::to_string(holders.size()) + ", expected " + std::to_string(need));
    Eigen::MatrixXd sub(need, need);
    for (int j = 0; j < need; ++j) sub.col(j) = aux.entries.col(holders[j]);
    Eigen::FullPivLU<Eigen::MatrixXd> lu(sub);
    if (!lu.isInvertible())
      throw SingularSubmatrix("auxiliary submatrix for column " + std::to_string(c) +
                              " is singular (T1 violated)");
    const Eigen::VectorXd b = lu.solve(Eigen::VectorXd::Ones(need));
    for (int j = 0; j < need; ++j) code.entries(holders[j], c) = b(j);
  }
  return code;
}

// Least-squares witness that the all-ones row lies in the span of the
// surviving code words. Coefficients are reported even on failure.
inline DecodeResult decode(const CodeMatrix& code, const std::vector<int>& survivors,
                           double tolerance = kDecodeTolerance) {
  if (survivors.empty()) throw std::invalid_argument("decode: survivors must be nonempty");
  const int k = static_cast<int>(code.cols());
  const int n = static_cast<int>(survivors.size());
  DecodeResult result;
  if (k == 0) {
    result.coefficients = Eigen::VectorXd::Zero(n);
    result.residual = 0.0;
    result.success = true;
    return result;
  }
  Eigen::MatrixXd at(k, n);
  for (int j = 0; j < n; ++j) {
    const int r = survivors[j];
    if (r < 0 || r >= code.rows()) throw std::invalid_argument("decode: survivor index out of range");
    at.col(j) = code.entries.row(r).transpose();
  }
  const Eigen::VectorXd ones = Eigen::VectorXd::Ones(k);
  result.coefficients = at.colPivHouseholderQr().solve(ones);
  result.residual = (at * result.coefficients - ones).cwiseAbs().maxCoeff();
  result.success = result.residual < tolerance;
  return result;
}

// Span condition over every survivor set of size M - s that keeps all
// completed workers. Completed workers delivered their partials one partition
// at a time, so each of their supported columns counts as an independently
// available unit row; everyone else contributes a single code word.
inline bool check_span_condition(const CodeMatrix& stage1, const CodeMatrix& stage2,
                                 const std::vector<int>& completed_rows, int s,
                                 double tolerance = kDecodeTolerance) {
  const int rows1 = static_cast<int>(stage1.rows());
  const int rows2 = static_cast<int>(stage2.rows());
  const int total = rows1 + rows2;
  int k = 0;
  if (rows1 > 0) k = static_cast<int>(stage1.cols());
  if (rows2 > 0) {
    if (rows1 > 0 && stage1.cols() != stage2.cols())
      throw std::invalid_argument("check_span_condition: column count mismatch");
    k = static_cast<int>(stage2.cols());
  }
  if (total == 0 || k == 0) return false;

  std::vector<bool> completed(total, false);
  for (int r : completed_rows) {
    if (r < 0 || r >= total) throw std::invalid_argument("check_span_condition: bad completed row");
    completed[r] = true;
  }

  auto worker_row = [&](int r) -> Eigen::RowVectorXd {
    return r < rows1 ? stage1.entries.row(r) : stage2.entries.row(r - rows1);
  };
  auto worker_support = [&](int r, int c) -> bool {
    return r < rows1 ? stage1.support(r, c) : stage2.support(r - rows1, c);
  };

  std::vector<int> optional_rows;
  for (int r = 0; r < total; ++r)
    if (!completed[r]) optional_rows.push_back(r);

  const int n_opt = static_cast<int>(optional_rows.size());
  const int drop = std::min(s, n_opt);

  std::vector<Eigen::RowVectorXd> base_rows;
  for (int r = 0; r < total; ++r) {
    if (!completed[r]) continue;
    for (int c = 0; c < k; ++c) {
      if (worker_support(r, c)) {
        Eigen::RowVectorXd unit = Eigen::RowVectorXd::Zero(k);
        unit(c) = 1.0;
        base_rows.push_back(unit);
      }
    }
  }

  const Eigen::VectorXd ones = Eigen::VectorXd::Ones(k);
  std::vector<int> pattern(drop);
  std::function<bool(int, int)> every_pattern = [&](int pos, int start) -> bool {
    if (pos == drop) {
      std::vector<bool> out(total, false);
      for (int idx : pattern) out[optional_rows[idx]] = true;
      std::vector<Eigen::RowVectorXd> live = base_rows;
      for (int r : optional_rows)
        if (!out[r]) live.push_back(worker_row(r));
      if (live.empty()) return false;
      Eigen::MatrixXd at(k, static_cast<int>(live.size()));
      for (size_t j = 0; j < live.size(); ++j) at.col(static_cast<int>(j)) = live[j].transpose();
      const Eigen::VectorXd a = at.colPivHouseholderQr().solve(ones);
      return (at * a - ones).cwiseAbs().maxCoeff() < tolerance;
    }
    for (int i = start; i <= n_opt - (drop - pos); ++i) {
      pattern[pos] = i;
      if (!every_pattern(pos + 1, i + 1)) return false;
    }
    return true;
  };
  return every_pattern(0, 0);
}

// Coded partial gradient of one worker: sum of row[k] * g_k over the row's
// structural support.
inline Eigen::VectorXd encode_partials(const CodeMatrix& code, int row,
                                       const std::vector<const Eigen::VectorXd*>& partials, int dim) {
  if (row < 0 || row >= code.rows()) throw std::invalid_argument("encode_partials: row out of range");
  if (static_cast<int>(partials.size()) != code.cols())
    throw std::invalid_argument("encode_partials: partial count must equal column count");
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(dim);
  for (int c = 0; c < code.cols(); ++c) {
    if (!code.support(row, c)) continue;
    if (partials[c] == nullptr)
      throw MissingPartial("partition " + std::to_string(c) + " gradient missing for row " +
                           std::to_string(row));
    acc += code.entries(row, c) * (*partials[c]);
  }
  return acc;
}

inline Eigen::VectorXd aggregate_decode(const Eigen::VectorXd& coefficients,
                                        const std::vector<Eigen::VectorXd>& coded) {
  if (static_cast<size_t>(coefficients.size()) != coded.size())
    throw std::invalid_argument("aggregate_decode: length mismatch");
  if (coded.empty()) return Eigen::VectorXd();
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(coded.front().size());
  for (size_t i = 0; i < coded.size(); ++i) acc += coefficients(static_cast<int>(i)) * coded[i];
  return acc;
}

// Worker m covers partitions {m, ..., m+s} mod M over K = M partitions.
inline CodeMatrix cyclic_repetition(int workers, int s) {
  if (s < 0 || workers < s + 1)
    throw std::invalid_argument("cyclic_repetition: need workers >= s+1");
  BoolMask support = BoolMask::Constant(workers, workers, false);
  for (int m = 0; m < workers; ++m)
    for (int j = 0; j <= s; ++j) support(m, (m + j) % workers) = true;
  return fill_code_matrix(support, build_auxiliary(s, workers));
}

// s+1 disjoint groups, each covering all partitions with 0/1 rows.
inline CodeMatrix fractional_repetition(int workers, int s) {
  if (s < 0 || workers < 1) throw std::invalid_argument("fractional_repetition: bad arguments");
  if (workers % (s + 1) != 0)
    throw IndivisibleWorkers("fractional repetition needs (s+1) | workers, got workers=" +
                             std::to_string(workers) + " s=" + std::to_string(s));
  const int group_size = workers / (s + 1);
  CodeMatrix code = CodeMatrix::zero(workers, workers);
  for (int g = 0; g <= s; ++g) {
    for (int j = 0; j < group_size; ++j) {
      const int row = g * group_size + j;
      for (int c = j * (s + 1); c < (j + 1) * (s + 1); ++c) {
        code.support(row, c) = true;
        code.entries(row, c) = 1.0;
      }
    }
  }
  return code;
}

inline nlohmann::json to_json(const CodeMatrix& code) {
  nlohmann::json j;
  j["rows"] = code.rows();
  j["cols"] = code.cols();
  auto& entries = j["entries"] = nlohmann::json::array();
  auto& support = j["support"] = nlohmann::json::array();
  for (Eigen::Index r = 0; r < code.rows(); ++r) {
    for (Eigen::Index c = 0; c < code.cols(); ++c) {
      entries.push_back(code.entries(r, c));
      support.push_back(code.support(r, c) ? 1 : 0);
    }
  }
  return j;
}

inline CodeMatrix code_matrix_from_json(const nlohmann::json& j) {
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  const auto& entries = j.at("entries");
  const auto& support = j.at("support");
  if (static_cast<Eigen::Index>(entries.size()) != rows * cols ||
      static_cast<Eigen::Index>(support.size()) != rows * cols)
    throw ConfigError("code matrix JSON has inconsistent sizes");
  CodeMatrix code = CodeMatrix::zero(rows, cols);
  Eigen::Index i = 0;
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c, ++i) {
      code.entries(r, c) = entries[i].get<double>();
      code.support(r, c) = support[i].get<int>() != 0;
    }
  }
  if (!code.structurally_consistent())
    throw ConfigError("code matrix JSON has nonzero entries outside support");
  return code;
}

}  // namespace tsdcfl::coding
