#pragma once

#include <algorithm>
#include <fstream>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "tsdcfl/common.hpp"

namespace tsdcfl::report {

struct EpochReport {
  int epoch = 0;
  double iteration_time = 0.0;  // slots until decode
  int t_comp = 0;
  int s_predicted = 0;
  int s_used = 0;
  int m1 = 0;
  int mc = 0;
  int kc = 0;
  bool decode_success = false;
  std::vector<int> observed_stragglers;
  double loss = 0.0;
  double accuracy = 0.0;
  double copies_computed = 0.0;
  double c1 = 0.0;  // stage-1 coefficient maximum
  double c2 = 0.0;  // stage-2 coefficient maximum
  double zeta_sq = 0.0;
  double grad_sq_norm = 0.0;
  std::vector<double> admitted_bits;  // per worker
};

struct SlotTraceRow {
  long long t = 0;
  int worker = 0;
  double q = 0, h = 0, e = 0, r = 0;
  double y = 0, d = 0, v = 0, c = 0, e_store = 0;
  double bound_rhs = 0, drift_lhs = 0;
};

struct RunReport {
  nlohmann::json config_echo;
  std::string scheme;
  uint64_t seed = 0;
  std::vector<EpochReport> epochs;
  std::vector<SlotTraceRow> slot_trace;

  // Aggregates.
  double mean_iteration_time = 0.0;
  double median_iteration_time = 0.0;
  double final_loss = 0.0;
  double final_accuracy = 0.0;
  double fairness = 0.0;
  double mean_q = 0.0;
  double mean_h = 0.0;
  double mean_battery = 0.0;
  double mean_server_backlog = 0.0;
  double decode_success_rate = 0.0;
  int failed_epochs = 0;
  double total_copies = 0.0;
  double c1_max = 0.0;
  double c2_max = 0.0;
  double zeta_sq_max = 0.0;
  double mean_grad_sq_norm = 0.0;  // (1/P) sum ||g(w_l)||^2
  double lipschitz = 0.0;          // least-squares task only
  double f_init = 0.0;
  double f_star = 0.0;
  double convergence_bound = 0.0;
};

inline nlohmann::json epoch_to_json(const EpochReport& e) {
  return nlohmann::json{{"epoch", e.epoch},
                        {"iteration_time", e.iteration_time},
                        {"t_comp", e.t_comp},
                        {"s_predicted", e.s_predicted},
                        {"s_used", e.s_used},
                        {"m1", e.m1},
                        {"mc", e.mc},
                        {"kc", e.kc},
                        {"decode_success", e.decode_success},
                        {"observed_stragglers", e.observed_stragglers},
                        {"loss", e.loss},
                        {"accuracy", e.accuracy},
                        {"copies_computed", e.copies_computed},
                        {"c1", e.c1},
                        {"c2", e.c2},
                        {"zeta_sq", e.zeta_sq},
                        {"grad_sq_norm", e.grad_sq_norm},
                        {"admitted_bits", e.admitted_bits}};
}

inline nlohmann::json report_to_json(const RunReport& r) {
  nlohmann::json j;
  j["config"] = r.config_echo;
  j["scheme"] = r.scheme;
  j["seed"] = r.seed;
  j["epochs_completed"] = r.epochs.size();
  j["aggregates"] = {{"mean_iteration_time", r.mean_iteration_time},
                     {"median_iteration_time", r.median_iteration_time},
                     {"final_loss", r.final_loss},
                     {"final_accuracy", r.final_accuracy},
                     {"fairness", r.fairness},
                     {"mean_q", r.mean_q},
                     {"mean_h", r.mean_h},
                     {"mean_battery", r.mean_battery},
                     {"mean_server_backlog", r.mean_server_backlog},
                     {"decode_success_rate", r.decode_success_rate},
                     {"failed_epochs", r.failed_epochs},
                     {"total_copies", r.total_copies},
                     {"c1_max", r.c1_max},
                     {"c2_max", r.c2_max},
                     {"zeta_sq_max", r.zeta_sq_max},
                     {"mean_grad_sq_norm", r.mean_grad_sq_norm},
                     {"lipschitz", r.lipschitz},
                     {"f_init", r.f_init},
                     {"f_star", r.f_star},
                     {"convergence_bound", r.convergence_bound}};
  auto& eps = j["epoch_reports"] = nlohmann::json::array();
  for (const auto& e : r.epochs) eps.push_back(epoch_to_json(e));
  return j;
}

inline std::string join_indices(const std::vector<int>& xs) {
  std::string out;
  for (size_t i = 0; i < xs.size(); ++i) {
    if (i) out += ';';
    out += std::to_string(xs[i]);
  }
  return out;
}

inline void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << content;
  if (!out) throw IoError("write failed: " + path);
}

inline void write_report_json(const RunReport& r, const std::string& path) {
  write_text_file(path, report_to_json(r).dump(2) + "\n");
}

inline std::string epoch_csv_header(int workers) {
  std::string h =
      "epoch,iteration_time,t_comp,s_predicted,s_used,m1,mc,kc,decode_success,"
      "observed_stragglers,loss,accuracy,copies_computed,c1,c2,zeta_sq,grad_sq_norm";
  for (int m = 0; m < workers; ++m) h += ",admitted_m" + std::to_string(m);
  return h;
}

inline std::string epoch_csv(const RunReport& r) {
  const int workers = r.epochs.empty() ? 0 : static_cast<int>(r.epochs.front().admitted_bits.size());
  std::string out = epoch_csv_header(workers) + "\n";
  for (const auto& e : r.epochs) {
    out += std::to_string(e.epoch);
    out += ',' + format_double(e.iteration_time);
    out += ',' + std::to_string(e.t_comp);
    out += ',' + std::to_string(e.s_predicted);
    out += ',' + std::to_string(e.s_used);
    out += ',' + std::to_string(e.m1);
    out += ',' + std::to_string(e.mc);
    out += ',' + std::to_string(e.kc);
    out += ',' + std::string(e.decode_success ? "1" : "0");
    out += ',' + csv_field(join_indices(e.observed_stragglers));
    out += ',' + format_double(e.loss);
    out += ',' + format_double(e.accuracy);
    out += ',' + format_double(e.copies_computed);
    out += ',' + format_double(e.c1);
    out += ',' + format_double(e.c2);
    out += ',' + format_double(e.zeta_sq);
    out += ',' + format_double(e.grad_sq_norm);
    for (double a : e.admitted_bits) out += ',' + format_double(a);
    out += '\n';
  }
  return out;
}

inline std::string slot_trace_csv(const std::vector<SlotTraceRow>& rows) {
  std::string out = "t,worker,Q,H,E,R,y,d,v,c,e_store,bound_rhs,drift_lhs\n";
  for (const auto& s : rows) {
    out += std::to_string(s.t);
    out += ',' + std::to_string(s.worker);
    out += ',' + format_double(s.q);
    out += ',' + format_double(s.h);
    out += ',' + format_double(s.e);
    out += ',' + format_double(s.r);
    out += ',' + format_double(s.y);
    out += ',' + format_double(s.d);
    out += ',' + format_double(s.v);
    out += ',' + format_double(s.c);
    out += ',' + format_double(s.e_store);
    out += ',' + format_double(s.bound_rhs);
    out += ',' + format_double(s.drift_lhs);
    out += '\n';
  }
  return out;
}

// Tidy long-format rows: scheme, epoch, wall_time, metric, value. Wall time is
// the running sum of iteration times.
inline std::string plot_data_csv(const std::vector<RunReport>& reports) {
  std::string out = "scheme,epoch,wall_time,metric,value\n";
  for (const auto& r : reports) {
    double wall = 0.0;
    for (const auto& e : r.epochs) {
      wall += e.iteration_time;
      for (const auto& [metric, value] :
           {std::pair<const char*, double>{"loss", e.loss},
            {"accuracy", e.accuracy},
            {"iteration_time", e.iteration_time}}) {
        out += r.scheme;
        out += ',' + std::to_string(e.epoch);
        out += ',' + format_double(wall);
        out += ',';
        out += metric;
        out += ',' + format_double(value);
        out += '\n';
      }
    }
  }
  return out;
}

inline std::string comparison_csv(const std::vector<RunReport>& reports) {
  std::string out = "scheme,epoch,loss,iteration_time\n";
  for (const auto& r : reports) {
    for (const auto& e : r.epochs) {
      out += r.scheme;
      out += ',' + std::to_string(e.epoch);
      out += ',' + format_double(e.loss);
      out += ',' + format_double(e.iteration_time);
      out += '\n';
    }
  }
  return out;
}

}  // namespace tsdcfl::report
