#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "tsdcfl/common.hpp"
#include "tsdcfl/rng.hpp"

namespace tsdcfl::learn {

enum class TaskKind { LeastSquares, Logistic };

inline std::string to_string(TaskKind task) {
  return task == TaskKind::LeastSquares ? "least_squares" : "logistic";
}

inline TaskKind task_from_string(const std::string& s) {
  if (s == "least_squares") return TaskKind::LeastSquares;
  if (s == "logistic") return TaskKind::Logistic;
  throw ConfigError("unknown task '" + s + "' (expected least_squares or logistic)");
}

struct Sample {
  Eigen::VectorXd x;
  double y = 0.0;
};

struct Dataset {
  std::vector<Sample> samples;
  int dim = 0;
};

struct Partition {
  int index = 0;
  std::vector<Sample> samples;
};

struct Model {
  Eigen::VectorXd w;
  TaskKind task = TaskKind::LeastSquares;
};

// Deterministic shuffle then round-robin split; sizes differ by at most one.
inline std::vector<Partition> partition_dataset(const Dataset& data, int k, uint64_t seed) {
  const int n = static_cast<int>(data.samples.size());
  if (k < 1) throw std::invalid_argument("partition_dataset: k must be >= 1");
  if (n < k)
    throw TooFewSamples("dataset has " + std::to_string(n) + " samples, need at least " +
                        std::to_string(k));
  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(order);
  std::vector<Partition> parts(k);
  for (int j = 0; j < k; ++j) parts[j].index = j;
  for (int i = 0; i < n; ++i) parts[i % k].samples.push_back(data.samples[order[i]]);
  return parts;
}

inline double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// Mean of per-sample loss gradients over the partition. Least squares uses
// l = (wx - y)^2 / 2; logistic uses l = ln(1 + exp(-y wx)) with y in {-1,+1}.
inline Eigen::VectorXd partial_gradient(const Model& model, const Partition& part) {
  if (part.samples.empty()) throw EmptyPartition("partition " + std::to_string(part.index) + " is empty");
  Eigen::VectorXd g = Eigen::VectorXd::Zero(model.w.size());
  for (const Sample& s : part.samples) {
    const double z = model.w.dot(s.x);
    if (model.task == TaskKind::LeastSquares) {
      g += (z - s.y) * s.x;
    } else {
      g += -s.y * sigmoid(-s.y * z) * s.x;
    }
  }
  return g / static_cast<double>(part.samples.size());
}

inline Model sgd_step(Model model, const Eigen::VectorXd& gradient, double eta) {
  if (gradient.size() != model.w.size()) throw std::invalid_argument("sgd_step: dimension mismatch");
  if (!(eta > 0)) throw std::invalid_argument("sgd_step: eta must be positive");
  model.w -= eta * gradient;
  return model;
}

// Direct sum of all partial gradients; the decode-equivalence oracle.
inline Eigen::VectorXd full_gradient_oracle(const Model& model, const std::vector<Partition>& parts) {
  Eigen::VectorXd g = Eigen::VectorXd::Zero(model.w.size());
  for (const auto& p : parts) g += partial_gradient(model, p);
  return g;
}

inline double loss(const Model& model, const std::vector<Sample>& samples) {
  if (samples.empty()) return 0.0;
  double acc = 0.0;
  for (const Sample& s : samples) {
    const double z = model.w.dot(s.x);
    if (model.task == TaskKind::LeastSquares) {
      acc += 0.5 * (z - s.y) * (z - s.y);
    } else {
      const double m = -s.y * z;
      acc += m > 0 ? m + std::log1p(std::exp(-m)) : std::log1p(std::exp(m));
    }
  }
  return acc / static_cast<double>(samples.size());
}

// Classification accuracy; defined for the logistic task only.
inline double accuracy(const Model& model, const std::vector<Sample>& samples) {
  if (model.task != TaskKind::Logistic || samples.empty())
    return std::numeric_limits<double>::quiet_NaN();
  int hits = 0;
  for (const Sample& s : samples) {
    const double pred = model.w.dot(s.x) >= 0 ? 1.0 : -1.0;
    if (pred == s.y) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(samples.size());
}

// Objective whose gradient is the sum of partial gradients.
inline double partitioned_objective(const Model& model, const std::vector<Partition>& parts) {
  double acc = 0.0;
  for (const auto& p : parts) acc += loss(model, p.samples);
  return acc;
}

struct BoundParams {
  double lipschitz = 0.0;   // L
  double eta = 0.0;         // step size
  double iterations = 1.0;  // P
  double partitions = 1.0;  // K
  double tau_max = 0.0;     // maximum staleness
  double workers = 1.0;     // m
  double c1 = 0.0;          // stage-1 coefficient maximum
  double c2 = 0.0;          // stage-2 coefficient maximum
  double zeta_sq = 0.0;     // gradient variance bound
};

inline double convergence_bound_rhs(const BoundParams& bp, double f_init, double f_star) {
  if (!(bp.eta > 0) || !(bp.iterations > 0) || !(bp.partitions > 0))
    throw std::invalid_argument("convergence_bound_rhs: eta, P and K must be positive");
  const double first = 2.0 / (bp.eta * bp.iterations) * (f_init - f_star);
  const double second = 3.0 * bp.lipschitz * bp.eta / bp.partitions * (1.0 + bp.eta * bp.tau_max) *
                        bp.workers * (bp.c1 + bp.c2) * bp.zeta_sq;
  return first + second;
}

// Gaussian features, planted weights, additive label noise. Logistic labels
// are the sign of the noisy linear response.
inline Dataset make_synthetic(TaskKind task, int n, int dim, double noise_sigma, uint64_t seed) {
  Rng rng(seed);
  Eigen::VectorXd planted(dim);
  for (int i = 0; i < dim; ++i) planted(i) = rng.normal();
  Dataset data;
  data.dim = dim;
  data.samples.resize(n);
  for (int i = 0; i < n; ++i) {
    Eigen::VectorXd x(dim);
    for (int j = 0; j < dim; ++j) x(j) = rng.normal();
    const double response = planted.dot(x) + noise_sigma * rng.normal();
    data.samples[i].x = std::move(x);
    data.samples[i].y = task == TaskKind::LeastSquares ? response : (response >= 0 ? 1.0 : -1.0);
  }
  return data;
}

// Header `f0,...,fd,label`; decimal floats. Logistic labels may be {0,1} or
// {-1,+1}; zeros are mapped to -1.
inline Dataset load_csv_dataset(const std::string& path, TaskKind task) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open dataset file: " + path);
  std::string line;
  if (!std::getline(in, line)) throw ConfigError("dataset file is empty: " + path);
  int dim = 0;
  {
    std::stringstream header(line);
    std::string col;
    std::vector<std::string> cols;
    while (std::getline(header, col, ',')) cols.push_back(col);
    if (cols.size() < 2 || cols.back() != "label")
      throw ConfigError("dataset header must be f0,...,fd,label");
    dim = static_cast<int>(cols.size()) - 1;
  }
  Dataset data;
  data.dim = dim;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::stringstream row(line);
    std::string field;
    std::vector<double> vals;
    while (std::getline(row, field, ',')) {
      try {
        vals.push_back(std::stod(field));
      } catch (const std::exception&) {
        throw ConfigError(path + ":" + std::to_string(lineno) + ": non-numeric field '" + field + "'");
      }
    }
    if (static_cast<int>(vals.size()) != dim + 1)
      throw ConfigError(path + ":" + std::to_string(lineno) + ": expected " + std::to_string(dim + 1) +
                        " fields, got " + std::to_string(vals.size()));
    Sample s;
    s.x = Eigen::Map<Eigen::VectorXd>(vals.data(), dim);
    s.y = vals[dim];
    if (task == TaskKind::Logistic && s.y == 0.0) s.y = -1.0;
    data.samples.push_back(std::move(s));
  }
  if (data.samples.empty()) throw ConfigError("dataset has no rows: " + path);
  return data;
}

// Minimizer of the partitioned least-squares objective via normal equations.
inline Eigen::VectorXd least_squares_optimum(const std::vector<Partition>& parts) {
  if (parts.empty() || parts.front().samples.empty())
    throw std::invalid_argument("least_squares_optimum: empty partitions");
  const int dim = static_cast<int>(parts.front().samples.front().x.size());
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(dim, dim);
  Eigen::VectorXd b = Eigen::VectorXd::Zero(dim);
  for (const auto& p : parts) {
    const double inv = 1.0 / static_cast<double>(p.samples.size());
    for (const Sample& s : p.samples) {
      a += inv * s.x * s.x.transpose();
      b += inv * s.y * s.x;
    }
  }
  return a.ldlt().solve(b);
}

// Lipschitz constant of the summed least-squares gradient.
inline double lipschitz_least_squares(const std::vector<Partition>& parts) {
  if (parts.empty() || parts.front().samples.empty())
    throw std::invalid_argument("lipschitz_least_squares: empty partitions");
  const int dim = static_cast<int>(parts.front().samples.front().x.size());
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(dim, dim);
  for (const auto& p : parts) {
    const double inv = 1.0 / static_cast<double>(p.samples.size());
    for (const Sample& s : p.samples) a += inv * s.x * s.x.transpose();
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a);
  return es.eigenvalues().maxCoeff();
}

}  // namespace tsdcfl::learn
