#pragma once

#include "twipr/sim.hpp"

#include <filesystem>
#include <ostream>
#include <string>

namespace twipr {

inline constexpr const char* kTraceHeader = "# twipr-trace v1";
inline constexpr const char* kRmseHeader = "# twipr-rmse v1";
inline constexpr const char* kSweepHeader = "# twipr-sweep v1";

void write_trace_csv(std::ostream& out, const Trace& trace);
void write_trace_csv(const std::filesystem::path& path, const Trace& trace);

// Per-trial rows (upright trials, by seed) and a final "mean" row.
void write_rmse_csv(const std::filesystem::path& path, const TrialSet& set);

// Reads back the mean row and the per-trial values. Throws ConfigError for a
// missing file or a malformed one.
RmseReport read_rmse_csv(const std::filesystem::path& path);

// Rows RMSE_Phi, RMSE_Theta, RMSE_gamma; columns Local, NCS and NCS/Local.
// Throws ContractError when the windows differ.
std::string format_comparison(const RmseReport& local, const RmseReport& ncs);

std::string format_summary(const Scenario& scn, const TrialSet& set);

struct SweepRow {
  std::string parameter;
  double value = 0.0;
  TrialSet result;
  std::size_t trials = 0;
};

void write_sweep_header(std::ostream& out);
void write_sweep_row(std::ostream& out, const SweepRow& row);

}  // namespace twipr
