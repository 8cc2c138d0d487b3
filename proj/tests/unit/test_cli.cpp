#include "twipr/cli.hpp"

#include <doctest.h>
#include <json.hpp>

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Result {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

const fs::path& workdir() {
  static const fs::path dir = [] {
    const fs::path d = fs::temp_directory_path() / ("twipr_cli_" + std::to_string(::getpid()));
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

Result cli(const std::string& args) {
  const char* exe = std::getenv("TWIPR_CLI");
  REQUIRE_MESSAGE(exe != nullptr, "TWIPR_CLI must point at the command-line tool");
  const fs::path out = workdir() / "stdout.txt";
  const fs::path err = workdir() / "stderr.txt";
  const std::string cmd = std::string("cd '") + TWIPR_SOURCE_DIR + "' && '" + exe + "' " + args +
                          " >'" + out.string() + "' 2>'" + err.string() + "'";
  const int status = std::system(cmd.c_str());
  Result r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out);
  r.err = slurp(err);
  return r;
}

json shipped_json(const std::string& name) {
  json j = json::parse(slurp(fs::path(TWIPR_SOURCE_DIR) / "scenarios" / (name + ".json")));
  j["robot"] = (fs::path(TWIPR_SOURCE_DIR) / "config" / "robot_ev3.json").string();
  return j;
}

fs::path write_json(const std::string& file, const json& j) {
  const fs::path p = workdir() / file;
  std::ofstream(p) << j.dump(2);
  return p;
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> cells;
  std::stringstream ss(line);
  std::string c;
  while (std::getline(ss, c, ',')) cells.push_back(c);
  return cells;
}

// Data rows of a sweep CSV (header and column names skipped).
std::vector<std::vector<std::string>> sweep_rows(const fs::path& p) {
  std::ifstream in(p);
  std::string line;
  std::getline(in, line);
  REQUIRE(line == "# twipr-sweep v1");
  std::getline(in, line);
  std::vector<std::vector<std::string>> rows;
  while (std::getline(in, line)) rows.push_back(split(line));
  return rows;
}

std::vector<std::string> mean_row(const fs::path& rmse) {
  std::ifstream in(rmse);
  std::string line;
  while (std::getline(in, line)) {
    if (line.rfind("mean,", 0) == 0) return split(line);
  }
  FAIL("no mean row in " << rmse);
  return {};
}

void write_rmse(const fs::path& p, std::uint64_t k0, std::uint64_t k_end, double phi,
                double theta, double gamma) {
  std::ofstream out(p);
  out << "# twipr-rmse v1\ntrial,seed,k0,k_end,rmse_phi,rmse_theta,rmse_gamma\n";
  out << "0,1," << k0 << ',' << k_end << ',' << phi << ',' << theta << ',' << gamma << '\n';
  out << "mean,," << k0 << ',' << k_end << ',' << phi << ',' << theta << ',' << gamma << '\n';
}

}  // namespace

TEST_CASE("run writes one trace per trial plus RMSE and summary") {
  const fs::path out = workdir() / "local";
  const Result r = cli("run --scenario local_tracking --trials 10 --out '" + out.string() + "'");
  REQUIRE(r.code == 0);
  for (int i = 0; i < 10; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "trace_%03d.csv", i);
    CHECK(fs::exists(out / name));
  }
  CHECK_FALSE(fs::exists(out / "trace_010.csv"));
  CHECK(fs::exists(out / "rmse.csv"));
  CHECK(fs::exists(out / "scenario.json"));
  CHECK(slurp(out / "summary.txt") == r.out);
  CHECK(r.out.find("RMSE_Theta") != std::string::npos);
  CHECK(slurp(out / "trace_000.csv").rfind("# twipr-trace v1\n", 0) == 0);
  CHECK(slurp(out / "rmse.csv").rfind("# twipr-rmse v1\n", 0) == 0);
}

TEST_CASE("repeated runs with one seed are byte-identical") {
  const fs::path a = workdir() / "det_a";
  const fs::path b = workdir() / "det_b";
  REQUIRE(cli("run --scenario networked_tracking --seed 42 --out '" + a.string() + "'").code == 0);
  REQUIRE(cli("run --scenario networked_tracking --seed 42 --out '" + b.string() + "'").code == 0);
  std::size_t files = 0;
  for (const auto& e : fs::directory_iterator(a)) {
    const fs::path other = b / e.path().filename();
    REQUIRE(fs::exists(other));
    CHECK(slurp(e.path()) == slurp(other));
    ++files;
  }
  CHECK(files == 13);
  CHECK(slurp(a / "trace_000.csv").find("seed=42 ") != std::string::npos);
}

TEST_CASE("configuration errors exit with code 1 and say what is wrong") {
  SUBCASE("missing Q names the key") {
    json j = shipped_json("local_tracking");
    j["lqr"].erase("Q");
    const Result r = cli("run --scenario '" + write_json("noq.json", j).string() + "'");
    CHECK(r.code == 1);
    CHECK(r.err.find("lqr.Q") != std::string::npos);
  }
  SUBCASE("syntax error reports line and column") {
    const fs::path p = workdir() / "broken.json";
    std::ofstream(p) << "{\n  \"name\": \"x\",\n  \"Ts\": ,\n}\n";
    const Result r = cli("run --scenario '" + p.string() + "'");
    CHECK(r.code == 1);
    CHECK(r.err.find("broken.json:3:") != std::string::npos);
  }
  SUBCASE("unknown key") {
    json j = shipped_json("local_tracking");
    j["channel"]["timout"] = 0.03;
    const Result r = cli("run --scenario '" + write_json("typo.json", j).string() + "'");
    CHECK(r.code == 1);
    CHECK(r.err.find("timout") != std::string::npos);
  }
  SUBCASE("unknown scenario and bad flags") {
    CHECK(cli("run --scenario no_such_scenario").code == 1);
    CHECK(cli("run --scenario local_tracking --mode sideways").code == 1);
    CHECK(cli("frobnicate").code == 1);
  }
}

TEST_CASE("all trials falling exits with code 2") {
  json j = shipped_json("local_stabilization");
  json robot = json::parse(slurp(fs::path(TWIPR_SOURCE_DIR) / "config" / "robot_ev3.json"));
  robot["max_voltage"] = 0.2;
  j["robot"] = robot;
  j["trials"] = 2;
  j["lift"]["duration"] = 0.0;
  j["lift"]["start_pitch"] = 0.2;
  const fs::path out = workdir() / "fell";
  const Result r = cli("run --scenario '" + write_json("weak.json", j).string() + "' --out '" +
                       out.string() + "'");
  CHECK(r.code == 2);
  CHECK(fs::exists(out / "trace_001.csv"));
}

TEST_CASE("unwritable output exits with code 3") {
  const fs::path file = workdir() / "plain_file";
  std::ofstream(file) << "x";
  const Result r =
      cli("run --scenario local_stabilization --trials 1 --out '" + (file / "sub").string() + "'");
  CHECK(r.code == 3);
}

TEST_CASE("compare renders the side-by-side table") {
  SUBCASE("identical inputs give unit ratios") {
    const fs::path a = workdir() / "same.csv";
    write_rmse(a, 40, 571, 22.5, 0.0167, 0.0494);
    const Result r = cli("compare --local '" + a.string() + "' --ncs '" + a.string() + "'");
    REQUIRE(r.code == 0);
    std::size_t ones = 0;
    for (std::size_t pos = 0; (pos = r.out.find("1.000", pos)) != std::string::npos; ++pos) ++ones;
    CHECK(ones == 3);
    for (const char* row : {"RMSE_Phi", "RMSE_Theta", "RMSE_gamma", "Local", "NCS"}) {
      CHECK(r.out.find(row) != std::string::npos);
    }
  }
  SUBCASE("hardware table values") {
    const fs::path a = workdir() / "ref_local.csv";
    const fs::path b = workdir() / "ref_ncs.csv";
    write_rmse(a, 0, 100, 2.4141, 0.0116, 0.0849);
    write_rmse(b, 0, 100, 2.4512, 0.0192, 0.0888);
    const fs::path table = workdir() / "table.txt";
    const Result r = cli("compare --local '" + a.string() + "' --ncs '" + b.string() +
                         "' --out '" + table.string() + "'");
    REQUIRE(r.code == 0);
    CHECK(r.out.find("1.655") != std::string::npos);
    CHECK(r.out.find("0.0116") != std::string::npos);
    CHECK(r.out.find("0.0192") != std::string::npos);
    CHECK(slurp(table) == r.out);
  }
  SUBCASE("window mismatch is rejected") {
    const fs::path a = workdir() / "w1.csv";
    const fs::path b = workdir() / "w2.csv";
    write_rmse(a, 40, 571, 1, 1, 1);
    write_rmse(b, 41, 571, 1, 1, 1);
    const Result r = cli("compare --local '" + a.string() + "' --ncs '" + b.string() + "'");
    CHECK(r.code == 1);
    CHECK(r.err.find("window") != std::string::npos);
  }
  SUBCASE("run directories are accepted") {
    const fs::path d = workdir() / "cmp_run";
    REQUIRE(cli("run --scenario local_stabilization --trials 2 --out '" + d.string() + "'").code ==
            0);
    const Result r = cli("compare --local '" + d.string() + "' --ncs '" + d.string() + "'");
    CHECK(r.code == 0);
  }
}

TEST_CASE("sweep") {
  SUBCASE("zero loss reproduces a plain run") {
    json j = shipped_json("networked_tracking");
    j["trials"] = 3;
    j["channel"]["loss"] = {{"kind", "none"}};
    const fs::path scn = write_json("noloss.json", j);
    const fs::path run_dir = workdir() / "noloss_run";
    REQUIRE(cli("run --scenario '" + scn.string() + "' --out '" + run_dir.string() + "'").code == 0);
    const fs::path csv = workdir() / "sweep0.csv";
    REQUIRE(cli("sweep --scenario '" + scn.string() + "' --param loss-rate --grid 0 --out '" +
                csv.string() + "'")
                .code == 0);
    const auto rows = sweep_rows(csv);
    REQUIRE(rows.size() == 1);
    const auto mean = mean_row(run_dir / "rmse.csv");
    REQUIRE(rows[0].size() == 11);
    for (int i = 0; i < 5; ++i) CHECK(rows[0][6 + i] == mean[2 + i]);
  }
  SUBCASE("fall rate does not decrease with the loss rate") {
    json j = shipped_json("networked_tracking");
    j["trials"] = 4;
    const fs::path csv = workdir() / "sweep_loss.csv";
    REQUIRE(cli("sweep --scenario '" + write_json("lossy.json", j).string() +
                "' --param loss-rate --grid 0,0.05,0.1,0.2 --out '" + csv.string() + "'")
                .code == 0);
    const auto rows = sweep_rows(csv);
    REQUIRE(rows.size() == 4);
    double prev = -1.0;
    for (const auto& r : rows) {
      const double rate = std::stod(r[4]);
      CHECK(rate >= prev);
      prev = rate;
    }
  }
  SUBCASE("only a horizon of three covers three-loss bursts") {
    json j = shipped_json("networked_tracking");
    j["trials"] = 2;
    j["channel"]["loss"] = {{"kind", "none"}};
    j["channel"]["uplink"] = {{"kind", "constant"}, {"value", 0.004}};
    j["channel"]["downlink"] = {{"kind", "constant"}, {"value", 0.006}};
    j["channel"]["forced_bursts"] = {{"start", 80}, {"period", 40}, {"length", 3}};
    const fs::path csv = workdir() / "sweep_m.csv";
    const Result r = cli("sweep --scenario '" + write_json("bursts.json", j).string() +
                         "' --param M --grid 0,1,2,3 --out '" + csv.string() + "'");
    REQUIRE(r.code != 1);
    const auto rows = sweep_rows(csv);
    REQUIRE(rows.size() == 4);
    for (int m = 0; m < 3; ++m) CHECK(std::stoull(rows[m][5]) > 0);
    CHECK(std::stoull(rows[3][5]) == 0);
  }
  SUBCASE("bad parameter") {
    CHECK(cli("sweep --scenario networked_tracking --param speed --grid 1").code == 1);
  }
}

TEST_CASE("protocol dump prints both layouts") {
  const Result r = cli("protocol-dump --M 3");
  REQUIRE(r.code == 0);
  CHECK(r.out.find("MeasurementPacket (46 bytes)") != std::string::npos);
  CHECK(r.out.find("83 bytes") != std::string::npos);
  CHECK(r.out.find("    79     4  u32   crc32") != std::string::npos);
  std::ostringstream direct;
  twipr::print_protocol(direct, 3);
  CHECK(direct.str() == r.out);
}
