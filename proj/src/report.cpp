#include "twipr/report.hpp"

#include "twipr/errors.hpp"

#include <fmt/format.h>
#include <fmt/ostream.h>

#include <fstream>
#include <sstream>
#include <vector>

namespace twipr {

namespace {

constexpr const char* kStateNames[6] = {"phi", "theta", "phi_dot", "theta_dot", "gamma",
                                        "gamma_dot"};

std::string seconds(Nanos t) {
  const long long ns = t.count();
  const char* sign = ns < 0 ? "-" : "";
  const long long a = ns < 0 ? -ns : ns;
  return fmt::format("{}{}.{:09d}", sign, a / 1000000000, a % 1000000000);
}

void append_state(std::string& line, const StateVector& x) {
  for (int i = 0; i < 6; ++i) line += fmt::format(",{:.17g}", x(i));
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  return out;
}

}  // namespace

void write_trace_csv(std::ostream& out, const Trace& trace) {
  out << kTraceHeader << '\n';
  out << fmt::format("# mode={} seed={} config_hash={} loop_close_k={} fallen={}\n",
                     to_string(trace.mode), trace.seed, trace.config_hash,
                     trace.loop_close_k ? std::to_string(*trace.loop_close_k) : "none",
                     trace.fallen ? 1 : 0);
  std::string header = "k,t_m,t_rh,t_rr,t_a,d_c3,eps,omega,flags";
  for (const char* prefix : {"true", "meas", "ref"}) {
    for (const char* s : kStateNames) header += fmt::format(",{}_{}", prefix, s);
  }
  header += ",u_l,u_r\n";
  out << header;

  std::string line;
  for (const TraceRow& r : trace.rows) {
    const CycleTiming& t = r.timing;
    line = fmt::format("{},{},{},{},{},{},{},{},{}", t.k, seconds(t.t_m), seconds(t.t_rh),
                       t.t_rr ? seconds(*t.t_rr) : "", seconds(t.t_a), seconds(t.d_c3),
                       t.eps ? 1 : 0, r.omega, r.flags);
    append_state(line, r.x_true);
    append_state(line, r.x_meas);
    append_state(line, r.x_ref);
    line += fmt::format(",{:.17g},{:.17g}\n", r.u(0), r.u(1));
    out << line;
  }
}

void write_trace_csv(const std::filesystem::path& path, const Trace& trace) {
  auto out = open_out(path);
  write_trace_csv(out, trace);
  if (!out) throw std::runtime_error("error writing " + path.string());
}

void write_rmse_csv(const std::filesystem::path& path, const TrialSet& set) {
  auto out = open_out(path);
  out << kRmseHeader << '\n';
  out << "trial,seed,k0,k_end,rmse_phi,rmse_theta,rmse_gamma\n";
  if (set.has_aggregate) {
    const RmseReport& a = set.aggregate;
    std::size_t row = 0;
    for (std::size_t i = 0; i < set.traces.size(); ++i) {
      const Trace& t = set.traces[i];
      if (t.fallen || !t.loop_close_k) continue;
      const auto& v = a.per_trial.at(row++);
      out << fmt::format("{},{},{},{},{:.17g},{:.17g},{:.17g}\n", i, t.seed, a.k0, a.k_end,
                         v[0], v[1], v[2]);
    }
    out << fmt::format("mean,,{},{},{:.17g},{:.17g},{:.17g}\n", a.k0, a.k_end, a.phi, a.theta,
                       a.gamma);
  }
  if (!out) throw std::runtime_error("error writing " + path.string());
}

RmseReport read_rmse_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kRmseHeader) {
    throw ConfigError(path.string() + ": not an RMSE file (expected '" + kRmseHeader + "')");
  }
  std::getline(in, line);  // column names
  RmseReport rep;
  bool have_mean = false;
  int lineno = 2;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto cells = split(line);
    if (cells.size() != 7) {
      throw ConfigError(fmt::format("{}:{}: expected 7 columns", path.string(), lineno));
    }
    try {
      const std::uint64_t k0 = std::stoull(cells[2]);
      const std::uint64_t k_end = std::stoull(cells[3]);
      const std::array<double, 3> v{std::stod(cells[4]), std::stod(cells[5]),
                                    std::stod(cells[6])};
      if (cells[0] == "mean") {
        rep.k0 = k0;
        rep.k_end = k_end;
        rep.phi = v[0];
        rep.theta = v[1];
        rep.gamma = v[2];
        have_mean = true;
      } else {
        rep.per_trial.push_back(v);
      }
    } catch (const std::logic_error&) {
      throw ConfigError(fmt::format("{}:{}: malformed number", path.string(), lineno));
    }
  }
  if (!have_mean) throw ConfigError(path.string() + ": no mean row (all trials fell?)");
  return rep;
}

std::string format_comparison(const RmseReport& local, const RmseReport& ncs) {
  if (local.k0 != ncs.k0 || local.k_end != ncs.k_end) {
    throw ContractError(fmt::format("RMSE windows differ: local [{}, {}) vs NCS [{}, {})",
                                    local.k0, local.k_end, ncs.k0, ncs.k_end));
  }
  auto ratio = [](double a, double b) {
    if (a == b) return std::string("1.000");
    return a == 0.0 ? std::string("inf") : fmt::format("{:.3f}", b / a);
  };
  std::string out = fmt::format("{:<12}{:>12}{:>12}{:>12}\n", "", "Local", "NCS", "NCS/Local");
  const std::array<std::pair<const char*, std::pair<double, double>>, 3> rows{{
      {"RMSE_Phi", {local.phi, ncs.phi}},
      {"RMSE_Theta", {local.theta, ncs.theta}},
      {"RMSE_gamma", {local.gamma, ncs.gamma}},
  }};
  for (const auto& [name, v] : rows) {
    out += fmt::format("{:<12}{:>12.4f}{:>12.4f}{:>12}\n", name, v.first, v.second,
                       ratio(v.first, v.second));
  }
  out += fmt::format("window k in [{}, {})\n", local.k0, local.k_end);
  return out;
}

std::string format_summary(const Scenario& scn, const TrialSet& set) {
  std::string out = fmt::format("scenario    {}\nmode        {}\nconfig_hash {}\n", scn.name,
                                to_string(scn.mode), scn.config_hash);
  out += fmt::format("trials      {} (seeds {}..{})\nfallen      {}\ndegraded    {} cycles\n",
                     set.traces.size(), scn.seed, scn.seed + set.traces.size() - 1, set.fallen,
                     set.degraded_cycles);
  if (set.has_aggregate) {
    const RmseReport& a = set.aggregate;
    out += fmt::format("window      k in [{}, {})\n", a.k0, a.k_end);
    out += fmt::format("{:<12}{:>12}\n", "", "mean");
    out += fmt::format("{:<12}{:>12.4f}\n", "RMSE_Phi", a.phi);
    out += fmt::format("{:<12}{:>12.4f}\n", "RMSE_Theta", a.theta);
    out += fmt::format("{:<12}{:>12.4f}\n", "RMSE_gamma", a.gamma);
  } else {
    out += "no RMSE: no trial stayed upright\n";
  }
  return out;
}

void write_sweep_header(std::ostream& out) {
  out << kSweepHeader << '\n'
      << "parameter,value,trials,fallen,fall_rate,degraded_cycles,k0,k_end,rmse_phi,"
         "rmse_theta,rmse_gamma\n";
}

void write_sweep_row(std::ostream& out, const SweepRow& row) {
  const TrialSet& s = row.result;
  const double rate = row.trials ? static_cast<double>(s.fallen) / row.trials : 0.0;
  out << fmt::format("{},{:.17g},{},{},{:.17g},{}", row.parameter, row.value, row.trials,
                     s.fallen, rate, s.degraded_cycles);
  if (s.has_aggregate) {
    const RmseReport& a = s.aggregate;
    out << fmt::format(",{},{},{:.17g},{:.17g},{:.17g}\n", a.k0, a.k_end, a.phi, a.theta,
                       a.gamma);
  } else {
    out << ",,,,,\n";
  }
}

}  // namespace twipr
