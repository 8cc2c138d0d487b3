#include "twipr/errors.hpp"
#include "twipr/sim.hpp"
#include "twipr/wire.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <poll.h>
#include <signal.h>
#include <sys/prctl.h>
#include <sys/socket.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cmath>
#include <cstring>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace twipr {

namespace {

using Clock = std::chrono::steady_clock;

struct Datagram {
  std::vector<std::uint8_t> bytes;
  std::uint16_t from_port = 0;
};

class UdpSocket {
 public:
  UdpSocket(const std::string& host, int port) {
    fd_ = ::socket(AF_INET, SOCK_DGRAM, 0);
    if (fd_ < 0) throw std::runtime_error(std::string("socket: ") + std::strerror(errno));
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(static_cast<std::uint16_t>(port));
    if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
      ::close(fd_);
      throw ConfigError("wire.host is not an IPv4 address: " + host);
    }
    if (::bind(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0) {
      const std::string err = std::strerror(errno);
      ::close(fd_);
      throw std::runtime_error("bind " + host + ":" + std::to_string(port) + ": " + err);
    }
    socklen_t len = sizeof addr;
    ::getsockname(fd_, reinterpret_cast<sockaddr*>(&addr), &len);
    port_ = ntohs(addr.sin_port);
    addr_ = addr.sin_addr;
  }
  ~UdpSocket() { close(); }
  UdpSocket(const UdpSocket&) = delete;
  UdpSocket& operator=(const UdpSocket&) = delete;

  void close() {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
  }
  std::uint16_t port() const { return port_; }

  void send_to(std::uint16_t port, std::span<const std::uint8_t> bytes) const {
    sockaddr_in to{};
    to.sin_family = AF_INET;
    to.sin_port = htons(port);
    to.sin_addr = addr_;
    const auto n = ::sendto(fd_, bytes.data(), bytes.size(), 0,
                            reinterpret_cast<const sockaddr*>(&to), sizeof to);
    if (n < 0) throw std::runtime_error(std::string("sendto: ") + std::strerror(errno));
  }

  // Waits until `deadline`; empty on timeout.
  std::optional<Datagram> receive(Clock::time_point deadline) const {
    for (;;) {
      const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(
          deadline - Clock::now() + std::chrono::microseconds(999));
      pollfd p{fd_, POLLIN, 0};
      const int r = ::poll(&p, 1, static_cast<int>(std::max<long long>(0, left.count())));
      if (r < 0 && errno == EINTR) continue;
      if (r < 0) throw std::runtime_error(std::string("poll: ") + std::strerror(errno));
      if (r == 0) {
        if (Clock::now() >= deadline) return std::nullopt;
        continue;
      }
      Datagram d;
      d.bytes.resize(kMaxDatagram);
      sockaddr_in from{};
      socklen_t len = sizeof from;
      const auto n = ::recvfrom(fd_, d.bytes.data(), d.bytes.size(), 0,
                                reinterpret_cast<sockaddr*>(&from), &len);
      if (n < 0) {
        if (errno == EINTR) continue;
        throw std::runtime_error(std::string("recvfrom: ") + std::strerror(errno));
      }
      d.bytes.resize(static_cast<std::size_t>(n));
      d.from_port = ntohs(from.sin_port);
      return d;
    }
  }

 private:
  int fd_ = -1;
  std::uint16_t port_ = 0;
  in_addr addr_{};
};

struct Ports {
  std::uint16_t robot;
  std::uint16_t controller;
  std::uint16_t proxy;
};

std::uint64_t micros(Nanos t) { return static_cast<std::uint64_t>(t.count() / 1000); }

Clock::time_point forever() { return Clock::now() + std::chrono::hours(24); }

// ---------------------------------------------------------------- controller

[[noreturn]] void controller_main(const Scenario& scn, const Design& design,
                                  const UdpSocket& sock, Ports ports, Clock::time_point epoch) {
  ControllerNode ctrl(scn, design);
  std::vector<SensorFrame> calib;
  bool calibrated = false;
  for (;;) {
    const auto dg = sock.receive(forever());
    if (!dg) continue;
    const auto decoded = decode_measurement(dg->bytes);
    if (!std::holds_alternative<MeasurementPacket>(decoded)) continue;
    const auto& mp = std::get<MeasurementPacket>(decoded);
    const SensorFrame frame{mp.k, mp.theta_dot, mp.phi_ml, mp.phi_mr};
    if (mp.omega_echo == kCalibrationEcho) {
      calib.push_back(frame);
      if (calib.size() == scn.bias_window) {
        ctrl.calibrate(calib);
        calibrated = true;
      }
      continue;
    }
    if (!calibrated) throw ContractError("controller received a frame before calibration");
    ctrl.on_frame(frame);
    const ControlMatrix m = ctrl.network_matrix(mp.k, mp.omega_echo);

    ControlPacket cp;
    cp.k = m.origin;
    cp.flags = ctrl.loop_closed() ? control_flags::loop_closed : 0;
    if (scn.wire.pace) {
      const auto since = std::chrono::duration_cast<Nanos>(Clock::now() - epoch);
      const auto up = static_cast<long long>(micros(since)) - static_cast<long long>(mp.t_m_us);
      cp.uplink_us = static_cast<std::uint32_t>(std::clamp<long long>(up, 0, UINT32_MAX));
    }
    cp.values = m.columns;
    sock.send_to(ports.proxy, encode(cp));
  }
}

// --------------------------------------------------------------------- proxy

[[noreturn]] void proxy_main(const Scenario& scn, const UdpSocket& sock, Ports ports,
                             std::uint64_t trial_seed) {
  Channel channel(scn.channel, scn.Ts, derive_seed(trial_seed, kChannelStream));
  const Nanos Ts = to_nanos(scn.Ts);
  const Nanos timeout = to_nanos(scn.channel.timeout);
  const Nanos compute = to_nanos(scn.channel.compute_time);
  std::map<std::uint64_t, CycleOutcome> outcomes;
  // Paced mode holds packets for their sampled delay.
  std::multimap<Clock::time_point, std::pair<std::uint16_t, std::vector<std::uint8_t>>> held;

  for (;;) {
    const auto deadline = held.empty() ? forever() : held.begin()->first;
    const auto dg = sock.receive(deadline);
    const auto now = Clock::now();
    while (!held.empty() && held.begin()->first <= now) {
      sock.send_to(held.begin()->second.first, held.begin()->second.second);
      held.erase(held.begin());
    }
    if (!dg) continue;

    if (dg->from_port == ports.robot) {
      const auto decoded = decode_measurement(dg->bytes);
      if (std::holds_alternative<MeasurementPacket>(decoded) &&
          std::get<MeasurementPacket>(decoded).omega_echo != kCalibrationEcho) {
        const std::uint64_t k = std::get<MeasurementPacket>(decoded).k;
        const Nanos t_m = Ts * static_cast<long long>(k);
        const CycleOutcome out = channel.sample_cycle(k, t_m);
        outcomes[k] = out;
        if (scn.wire.pace) {
          held.emplace(now + (out.t_rh - t_m), std::make_pair(ports.controller, dg->bytes));
          continue;
        }
      }
      sock.send_to(ports.controller, dg->bytes);
    } else if (dg->from_port == ports.controller) {
      const auto decoded = decode_control(dg->bytes);
      if (!std::holds_alternative<ControlPacket>(decoded)) continue;
      const std::uint64_t k = std::get<ControlPacket>(decoded).k;
      const auto it = outcomes.find(k);
      if (it == outcomes.end()) continue;
      const CycleOutcome out = it->second;
      outcomes.erase(outcomes.begin(), std::next(it));
      const Nanos t_m = Ts * static_cast<long long>(k);
      if (scn.wire.pace) {
        if (!out.t_rr) continue;
        held.emplace(now + (*out.t_rr - out.t_rh - compute),
                     std::make_pair(ports.robot, dg->bytes));
      } else if (!classify_loss(out.t_rr, t_m, timeout)) {
        sock.send_to(ports.robot, dg->bytes);
      }
    }
  }
}

template <class F>
pid_t spawn(F&& body) {
  const pid_t parent = ::getpid();
  const pid_t pid = ::fork();
  if (pid < 0) throw std::runtime_error(std::string("fork: ") + std::strerror(errno));
  if (pid == 0) {
    // Handlers installed by the host program do not belong in the peer.
    for (int sig : {SIGTERM, SIGINT, SIGSEGV, SIGABRT, SIGFPE, SIGILL, SIGBUS}) {
      ::signal(sig, SIG_DFL);
    }
    ::prctl(PR_SET_PDEATHSIG, SIGTERM);
    if (::getppid() != parent) ::_exit(0);
    try {
      body();
    } catch (...) {
    }
    ::_exit(1);
  }
  return pid;
}

class Children {
 public:
  void add(pid_t pid) { pids_.push_back(pid); }
  // Throws when a child process has terminated early.
  void check() {
    for (pid_t& pid : pids_) {
      int status = 0;
      if (pid > 0 && ::waitpid(pid, &status, WNOHANG) == pid) {
        pid = -1;
        throw std::runtime_error("wire deployment: a peer process exited unexpectedly");
      }
    }
  }
  ~Children() {
    for (pid_t pid : pids_) {
      if (pid > 0) ::kill(pid, SIGTERM);
    }
    for (pid_t pid : pids_) {
      if (pid <= 0) continue;
      int status = 0;
      while (::waitpid(pid, &status, 0) < 0 && errno == EINTR) {
      }
    }
  }

 private:
  std::vector<pid_t> pids_;
};

}  // namespace

Trace run_wire_deployment(const Scenario& scn, std::uint64_t trial_seed) {
  if (scn.measurement == Measurement::perfect) {
    throw ConfigError("perfect measurement is not available in wire mode");
  }
  const Design design = make_design(scn);

  UdpSocket robot_sock(scn.wire.host, scn.wire.robot_port);
  std::optional<UdpSocket> ctrl_sock(std::in_place, scn.wire.host, scn.wire.controller_port);
  std::optional<UdpSocket> proxy_sock(std::in_place, scn.wire.host, scn.wire.proxy_port);
  const Ports ports{robot_sock.port(), ctrl_sock->port(), proxy_sock->port()};
  const auto epoch = Clock::now();

  Children children;
  children.add(spawn([&] {
    robot_sock.close();
    proxy_sock->close();
    controller_main(scn, design, *ctrl_sock, ports, epoch);
  }));
  children.add(spawn([&] {
    robot_sock.close();
    ctrl_sock->close();
    proxy_main(scn, *proxy_sock, ports, trial_seed);
  }));
  ctrl_sock.reset();
  proxy_sock.reset();

  RobotNode robot(scn, design, trial_seed);
  const Nanos Ts = to_nanos(scn.Ts);
  const Nanos timeout = to_nanos(scn.channel.timeout);
  // Replays the proxy's impairment schedule for the timestamp columns in
  // lock-step mode, where no wall-clock delay is realized.
  Channel schedule(scn.channel, scn.Ts, derive_seed(trial_seed, kChannelStream));

  for (const SensorFrame& f : robot.calibration_frames()) {
    MeasurementPacket mp{kProtocolVersion, f.k, 0, f.theta_dot_meas, f.phi_ml_meas,
                         f.phi_mr_meas, kCalibrationEcho};
    robot_sock.send_to(ports.proxy, encode(mp));
  }

  Trace trace;
  trace.mode = Mode::wire;
  trace.seed = trial_seed;
  trace.config_hash = scn.config_hash;
  const std::size_t n = scn.cycles();
  trace.rows.reserve(n);
  const auto wall = [&](Nanos t) { return epoch + std::chrono::duration_cast<Clock::duration>(t); };
  bool late = false;

  for (std::uint64_t k = 0; k < n; ++k) {
    const Nanos t_m = Ts * static_cast<long long>(k);
    TraceRow row;
    row.timing.k = k;
    row.timing.t_m = t_m;
    row.x_true = robot.true_state();
    if (late) row.flags |= flag::deadline_miss;
    late = false;

    const int echo = robot.omega_echo();
    const SensorFrame frame = robot.sense(k);
    row.x_meas = robot.measured_state();
    row.x_ref = design.reference.at(k);
    MeasurementPacket mp{kProtocolVersion,
                         k,
                         micros(t_m),
                         frame.theta_dot_meas,
                         frame.phi_ml_meas,
                         frame.phi_mr_meas,
                         static_cast<std::uint8_t>(std::min(echo, 254))};
    robot_sock.send_to(ports.proxy, encode(mp));

    const auto deadline =
        scn.wire.pace ? wall(t_m + timeout)
                      : Clock::now() + std::chrono::duration_cast<Clock::duration>(
                                           std::chrono::duration<double>(
                                               k == 0 ? scn.wire.startup_timeout
                                                      : scn.wire.reply_timeout));
    std::optional<ControlPacket> arrival;
    std::optional<Nanos> t_arrival;
    while (!arrival) {
      const auto dg = robot_sock.receive(deadline);
      if (!dg) break;
      const auto decoded = decode_control(dg->bytes);
      if (!std::holds_alternative<ControlPacket>(decoded)) continue;
      const auto& cp = std::get<ControlPacket>(decoded);
      if (cp.k != k) {
        row.flags |= flag::deadline_miss;  // stale packet from an earlier cycle
        continue;
      }
      arrival = cp;
      t_arrival = std::chrono::duration_cast<Nanos>(Clock::now() - epoch);
    }
    if (!arrival) children.check();
    const bool eps = !arrival;

    if (scn.wire.pace) {
      if (arrival) {
        row.timing.t_rh = t_m + Nanos(static_cast<long long>(arrival->uplink_us) * 1000);
        row.timing.t_rr = t_arrival;
      } else {
        row.timing.t_rh = t_m;
      }
    } else {
      const CycleOutcome out = schedule.sample_cycle(k, t_m);
      row.timing.t_rh = out.t_rh;
      row.timing.t_rr = out.t_rr;
      if (classify_loss(out.t_rr, t_m, timeout) != eps) row.flags |= flag::deadline_miss;
    }
    row.timing.eps = eps;

    std::optional<ControlMatrix> matrix;
    if (arrival) {
      if (arrival->horizon() != scn.netctrl.horizon) {
        throw ContractError("control packet horizon does not match netctrl.M");
      }
      matrix = ControlMatrix{arrival->k, arrival->values};
    }
    const RobotDecision d = robot.buffer().step(std::move(matrix), eps);
    robot.set_omega_echo(d.omega);

    const bool on_time = !eps && row.timing.t_rr && *row.timing.t_rr - t_m < Ts;
    if (scn.channel.dilate) {
      row.timing.t_a = t_m + Ts;
      if (on_time) row.timing.d_c3 = Ts - (*row.timing.t_rr - t_m);
    } else {
      row.timing.t_a = on_time ? *row.timing.t_rr : t_m + timeout;
    }
    row.u = d.input;
    row.omega = d.omega;
    if (d.fresh) row.flags |= flag::fresh;
    if (d.degraded) row.flags |= flag::degraded;
    if (d.cold) row.flags |= flag::cold;
    if (!robot.loop_closed()) row.flags |= flag::loop_open;
    robot.actuate(std::max(row.timing.t_a, robot.now()), row.u);

    bool fell = false;
    try {
      robot.advance_to(t_m + Ts);
      fell = std::abs(robot.true_state()(idx::theta)) >= scn.fall_pitch;
    } catch (const DivergenceError&) {
      fell = true;
    }
    if (fell) row.flags |= flag::fallen;
    trace.rows.push_back(std::move(row));
    if (fell) {
      trace.fallen = true;
      break;
    }
    if (scn.wire.pace) {
      const auto next = wall(t_m + Ts);
      if (Clock::now() > next) {
        late = true;
      } else {
        std::this_thread::sleep_until(next);
      }
    }
  }
  trace.loop_close_k = robot.loop_close_k();
  return trace;
}

}  // namespace twipr
