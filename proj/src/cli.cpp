#include "twipr/cli.hpp"

#include "twipr/config.hpp"
#include "twipr/errors.hpp"
#include "twipr/lqr.hpp"
#include "twipr/report.hpp"
#include "twipr/sim.hpp"
#include "twipr/wire.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>
#include <fmt/ostream.h>

#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace twipr {

namespace fs = std::filesystem;

namespace {

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<int> trials;
  std::optional<std::string> mode;
};

Scenario prepare(const std::string& name, const Overrides& o) {
  Scenario scn = load_scenario(find_scenario(name));
  if (o.seed) scn.seed = *o.seed;
  if (o.trials) scn.trials = *o.trials;
  if (o.mode) {
    if (*o.mode == "local") {
      scn.mode = Mode::local;
    } else if (*o.mode == "networked") {
      scn.mode = Mode::networked;
    } else if (*o.mode == "wire") {
      scn.mode = Mode::wire;
    } else {
      throw ConfigError("--mode must be local, networked or wire");
    }
  }
  scn.validate();
  scn.config_hash = config_hash(scn);
  return scn;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) {
    throw std::runtime_error("cannot create output directory " + dir.string());
  }
}

int cmd_run(const std::string& scenario, const fs::path& out_dir, const Overrides& o,
            std::ostream& out) {
  const Scenario scn = prepare(scenario, o);
  const TrialSet set = run_trials(scn);

  ensure_dir(out_dir);
  for (std::size_t i = 0; i < set.traces.size(); ++i) {
    write_trace_csv(out_dir / fmt::format("trace_{:03d}.csv", i), set.traces[i]);
  }
  write_rmse_csv(out_dir / "rmse.csv", set);
  {
    std::ofstream cfg(out_dir / "scenario.json");
    cfg << to_json(scn).dump(2) << '\n';
    if (!cfg) throw std::runtime_error("cannot write scenario.json");
  }
  const std::string summary = format_summary(scn, set);
  {
    std::ofstream s(out_dir / "summary.txt");
    s << summary;
    if (!s) throw std::runtime_error("cannot write summary.txt");
  }
  out << summary;
  return set.fallen == set.traces.size() ? kExitAllFell : kExitOk;
}

fs::path rmse_file(const fs::path& p) { return fs::is_directory(p) ? p / "rmse.csv" : p; }

int cmd_compare(const fs::path& local, const fs::path& ncs, const std::string& out_file,
                std::ostream& out) {
  const RmseReport a = read_rmse_csv(rmse_file(local));
  const RmseReport b = read_rmse_csv(rmse_file(ncs));
  const std::string table = format_comparison(a, b);
  out << table;
  if (!out_file.empty()) {
    std::ofstream f(out_file);
    f << table;
    if (!f) throw std::runtime_error("cannot write " + out_file);
  }
  return kExitOk;
}

int cmd_sweep(const std::string& scenario, const std::string& param,
              const std::vector<double>& grid, const std::string& out_file, const Overrides& o,
              std::ostream& out) {
  const Scenario base = prepare(scenario, o);
  if (grid.empty()) throw ConfigError("--grid needs at least one value");

  std::ofstream file;
  if (!out_file.empty()) {
    if (const auto parent = fs::path(out_file).parent_path(); !parent.empty()) ensure_dir(parent);
    file.open(out_file);
    if (!file) throw std::runtime_error("cannot write " + out_file);
    write_sweep_header(file);
  }
  write_sweep_header(out);
  bool all_fell = true;
  for (const double v : grid) {
    Scenario scn = base;
    if (param == "loss-rate") {
      if (scn.mode == Mode::local) scn.mode = Mode::networked;
      scn.channel.loss = LossModel{};
      scn.channel.loss.kind = v > 0.0 ? LossModel::Kind::bernoulli : LossModel::Kind::none;
      scn.channel.loss.p = v;
    } else if (param == "delay") {
      if (scn.mode == Mode::local) scn.mode = Mode::networked;
      scn.channel.downlink = DelayModel::constant(v);
    } else if (param == "M") {
      if (v < 0.0 || v != static_cast<int>(v)) throw ConfigError("M grid values must be integers");
      scn.netctrl.horizon = static_cast<int>(v);
    } else {
      throw ConfigError("--param must be loss-rate, delay or M");
    }
    scn.validate();
    scn.config_hash = config_hash(scn);
    SweepRow row{param, v, run_trials(scn), static_cast<std::size_t>(scn.trials)};
    all_fell = all_fell && row.result.fallen == row.trials;
    write_sweep_row(out, row);
    if (file.is_open()) write_sweep_row(file, row);
  }
  if (file.is_open() && !file) throw std::runtime_error("error writing " + out_file);
  return all_fell ? kExitAllFell : kExitOk;
}

}  // namespace

void print_protocol(std::ostream& out, int horizon) {
  out << fmt::format("protocol version {}, little-endian, CRC-32 (zlib polynomial)\n\n",
                     kProtocolVersion);
  out << fmt::format("MeasurementPacket ({} bytes)\n", kMeasurementPacketSize);
  out << "offset  size  type  field\n";
  const char* meas[][4] = {{"0", "1", "u8", "version"},
                           {"1", "8", "u64", "k"},
                           {"9", "8", "u64", "t_m [us]"},
                           {"17", "8", "f64", "theta_dot_meas [rad/s]"},
                           {"25", "8", "f64", "phi_ml_meas [rad]"},
                           {"33", "8", "f64", "phi_mr_meas [rad]"},
                           {"41", "1", "u8", "omega_echo (0xFF: calibration frame)"},
                           {"42", "4", "u32", "crc32 of bytes [0, 42)"}};
  for (const auto& r : meas) out << fmt::format("{:>6}  {:>4}  {:<4}  {}\n", r[0], r[1], r[2], r[3]);

  const std::size_t size = control_packet_size(horizon);
  out << fmt::format("\nControlPacket, M = {} ({} bytes = 19 + 16 (M + 1))\n", horizon, size);
  out << "offset  size  type  field\n";
  out << fmt::format("{:>6}  {:>4}  {:<4}  {}\n", 0, 1, "u8", "version");
  out << fmt::format("{:>6}  {:>4}  {:<4}  {}\n", 1, 8, "u64", "origin cycle k");
  out << fmt::format("{:>6}  {:>4}  {:<4}  {}\n", 9, 1, "u8", "M");
  out << fmt::format("{:>6}  {:>4}  {:<4}  {}\n", 10, 1, "u8", "flags (bit 0: loop closed)");
  out << fmt::format("{:>6}  {:>4}  {:<4}  {}\n", 11, 4, "u32", "uplink delay t_rh - t_m [us]");
  for (int c = 0; c <= horizon; ++c) {
    out << fmt::format("{:>6}  {:>4}  {:<4}  u(k+{}) left [V]\n", 15 + 16 * c, 8, "f64", c);
    out << fmt::format("{:>6}  {:>4}  {:<4}  u(k+{}) right [V]\n", 23 + 16 * c, 8, "f64", c);
  }
  out << fmt::format("{:>6}  {:>4}  {:<4}  crc32 of bytes [0, {})\n", size - 4, 4, "u32",
                     size - 4);
}

int run_cli(int argc, char** argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Networked LQR control of a two-wheeled inverted pendulum robot"};
  app.require_subcommand(1);

  Overrides ov;
  std::uint64_t seed = 0;
  int trials = 0;
  std::string mode;
  auto add_overrides = [&](CLI::App* cmd) {
    cmd->add_option("--seed", seed, "base seed (trial i uses seed + i)");
    cmd->add_option("--trials", trials, "number of trials")->check(CLI::PositiveNumber);
    cmd->add_option("--mode", mode, "local | networked | wire");
  };

  std::string scenario;
  std::string out_dir;
  auto* run = app.add_subcommand("run", "run a scenario and write traces and RMSE");
  run->add_option("--scenario", scenario, "scenario name or JSON file")->required();
  run->add_option("--out", out_dir, "output directory (default out/<scenario name>)");
  add_overrides(run);

  std::string local_path;
  std::string ncs_path;
  std::string table_out;
  auto* compare = app.add_subcommand("compare", "side-by-side RMSE table");
  compare->add_option("--local", local_path, "run directory or rmse.csv")->required();
  compare->add_option("--ncs", ncs_path, "run directory or rmse.csv")->required();
  compare->add_option("--out", table_out, "also write the table to this file");

  std::string param;
  std::vector<double> grid;
  std::string sweep_out;
  auto* sweep = app.add_subcommand("sweep", "aggregate RMSE and fall rate over a grid");
  sweep->add_option("--scenario", scenario, "scenario name or JSON file")->required();
  sweep->add_option("--param", param, "loss-rate | delay | M")->required();
  sweep->add_option("--grid", grid, "comma-separated values")->required()->delimiter(',');
  sweep->add_option("--out", sweep_out, "sweep CSV file");
  add_overrides(sweep);

  int horizon = 3;
  auto* dump = app.add_subcommand("protocol-dump", "print the wire packet layouts");
  dump->add_option("--M", horizon, "control horizon")->check(CLI::Range(0, 254));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }
  if (run->count("--seed") || sweep->count("--seed")) ov.seed = seed;
  if (run->count("--trials") || sweep->count("--trials")) ov.trials = trials;
  if (run->count("--mode") || sweep->count("--mode")) ov.mode = mode;

  try {
    if (*run) {
      if (out_dir.empty()) out_dir = (fs::path("out") / fs::path(scenario).stem()).string();
      return cmd_run(scenario, out_dir, ov, out);
    }
    if (*compare) return cmd_compare(local_path, ncs_path, table_out, out);
    if (*sweep) return cmd_sweep(scenario, param, grid, sweep_out, ov, out);
    if (*dump) {
      print_protocol(out, horizon);
      return kExitOk;
    }
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const DareError& e) {
    err << "design error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const ContractError& e) {
    err << "error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    err << "i/o error: " << e.what() << '\n';
    return kExitIo;
  }
  return kExitConfig;
}

}  // namespace twipr
