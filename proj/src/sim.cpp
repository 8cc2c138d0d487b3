#include "twipr/sim.hpp"

#include "twipr/errors.hpp"
#include "twipr/wire.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <limits>
#include <string>
#include <thread>
#include <tuple>

namespace twipr {

const char* to_string(Mode m) {
  switch (m) {
    case Mode::local:
      return "local";
    case Mode::networked:
      return "networked";
    case Mode::wire:
      return "wire";
  }
  return "?";
}

void Scenario::validate() const {
  if (!(Ts > 0.0) || !std::isfinite(Ts)) throw ConfigError("Ts must be > 0");
  if (!(duration >= Ts) || !std::isfinite(duration)) {
    throw ConfigError("duration must cover at least one cycle");
  }
  if (trials < 1) throw ConfigError("trials must be >= 1");
  if (substeps < 1) throw ConfigError("substeps must be >= 1");
  if (!(backlash >= 0.0)) throw ConfigError("backlash must be >= 0");
  if (!(fall_pitch > 0.0)) throw ConfigError("fall_pitch must be > 0");
  if (!(lift.duration >= 0.0)) throw ConfigError("lift.duration must be >= 0");
  if (!(lift.close_threshold > 0.0)) throw ConfigError("lift.close_threshold must be > 0");
  if (std::abs(lift.start_pitch) >= fall_pitch) {
    throw ConfigError("lift.start_pitch must be smaller than fall_pitch");
  }
  if (netctrl.horizon < 0 || netctrl.horizon > 254) {
    throw ConfigError("netctrl.M must be in [0, 254]");
  }
  if (netctrl.substeps < 1) throw ConfigError("netctrl.substeps must be >= 1");
  robot.validate();
  weights.validate(6, 2);
  noise.validate();
  if (mode != Mode::local) channel.validate(Ts);
  if (mode == Mode::wire && measurement == Measurement::perfect) {
    throw ConfigError("perfect measurement is not available in wire mode");
  }
  if (mode == Mode::wire && control_packet_size(netctrl.horizon) > kMaxDatagram) {
    throw ConfigError("netctrl.M too large for one datagram in wire mode");
  }
}

std::size_t Scenario::cycles() const {
  return static_cast<std::size_t>(std::max<long long>(1, std::llround(duration / Ts)));
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  // splitmix64 finalizer over the combined value
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

Design make_design(const Scenario& scn) {
  scn.validate();
  Design d;
  d.lin = make_linear_model(scn.robot, scn.Ts);
  d.lqr = lqr_gain(d.lin.Ad, d.lin.Bd, scn.weights.Q, scn.weights.R);
  d.K = d.lqr.gain();
  const std::size_t horizon = scn.cycles() + static_cast<std::size_t>(scn.netctrl.horizon) + 2;
  if (scn.reference && !scn.reference->empty()) {
    d.reference = generate_reference(*scn.reference, scn.Ts, horizon);
  } else {
    d.reference.x_ref.assign(horizon, StateVector::Zero());
  }
  return d;
}

// ---------------------------------------------------------------- RobotNode

RobotNode::RobotNode(const Scenario& scn, const Design& design, std::uint64_t trial_seed)
    : scn_(scn),
      design_(design),
      sensor_rng_(derive_seed(trial_seed, kSensorStream)),
      est_(EstimatorState::initial(scn.lift.start_pitch)),
      Ts_(to_nanos(scn.Ts)),
      backlash_(BacklashState::centered(InputVector::Zero(), scn.backlash)),
      buffer_(scn.netctrl.horizon) {
  x_ = lift_pose(Nanos{0});
}

StateVector RobotNode::lift_pose(Nanos t) const {
  StateVector x = StateVector::Zero();
  const double T = scn_.lift.duration;
  const double t_s = to_seconds(t);
  if (T > 0.0 && t_s < T) {
    x(idx::theta) = scn_.lift.start_pitch * (1.0 - t_s / T);
    x(idx::theta_dot) = -scn_.lift.start_pitch / T;
  } else if (T <= 0.0) {
    x(idx::theta) = scn_.lift.start_pitch;
  }
  return x;
}

std::vector<SensorFrame> RobotNode::calibration_frames() {
  std::vector<SensorFrame> frames;
  if (scn_.measurement == Measurement::perfect) return frames;
  StateVector held = StateVector::Zero();
  held(idx::theta) = scn_.lift.start_pitch;
  frames.reserve(scn_.bias_window);
  for (std::size_t i = 0; i < scn_.bias_window; ++i) {
    frames.push_back(simulate_sensors(held, i, scn_.noise, scn_.robot.wheel_radius,
                                      scn_.robot.track_width, sensor_rng_));
  }
  bias_ = estimate_bias(frames, scn_.bias_window);
  return frames;
}

SensorFrame RobotNode::sense(std::uint64_t k) {
  const SensorFrame frame = simulate_sensors(x_, k, scn_.noise, scn_.robot.wheel_radius,
                                             scn_.robot.track_width, sensor_rng_);
  if (scn_.measurement == Measurement::perfect) {
    x_meas_ = x_;
  } else {
    std::tie(x_meas_, est_) = reconstruct_state(frame, est_, bias_, scn_.Ts,
                                                scn_.robot.wheel_radius, scn_.robot.track_width);
  }
  if (!closed_ && (scn_.lift.duration <= 0.0 ||
                   std::abs(x_meas_(idx::theta)) < scn_.lift.close_threshold)) {
    closed_ = true;
    close_k_ = k;
  }
  return frame;
}

void RobotNode::actuate(Nanos t_a, const InputVector& u) {
  if (t_a < now_) throw ContractError("RobotNode::actuate: actuation time in the past");
  pending_.emplace_back(t_a, u);
  std::stable_sort(pending_.begin(), pending_.end(),
                   [](const auto& a, const auto& b) { return a.first < b.first; });
}

void RobotNode::integrate_segment(Nanos from, Nanos to) {
  if (!closed_) {
    x_ = lift_pose(to);
    return;
  }
  if (scn_.plant == PlantKind::linear) {
    if (to - from != Ts_) {
      throw ContractError("linear plant needs actuations aligned with sampling instants");
    }
    x_ = design_.lin.Ad * x_ + design_.lin.Bd * u_eff_;
    if (!x_.allFinite() || x_.cwiseAbs().maxCoeff() > kOverflowGuard) {
      throw DivergenceError("plant state exceeded the overflow guard: the robot fell");
    }
    return;
  }
  const double len = to_seconds(to - from);
  const int steps = std::max(
      1, static_cast<int>(std::ceil(scn_.substeps * static_cast<double>((to - from).count()) /
                                    static_cast<double>(Ts_.count()) - 1e-12)));
  x_ = integrate(x_, u_eff_, len, scn_.robot, steps);
}

void RobotNode::advance_to(Nanos t) {
  while (now_ < t) {
    while (!pending_.empty() && pending_.front().first <= now_) {
      std::tie(u_eff_, backlash_) = apply_backlash(pending_.front().second, backlash_);
      pending_.erase(pending_.begin());
    }
    Nanos next = t;
    if (!pending_.empty() && pending_.front().first < next) next = pending_.front().first;
    integrate_segment(now_, next);
    now_ = next;
  }
}

// ----------------------------------------------------------- ControllerNode

ControllerNode::ControllerNode(const Scenario& scn, const Design& design)
    : scn_(scn),
      design_(design),
      est_(EstimatorState::initial(scn.lift.start_pitch)),
      net_(scn.netctrl, design.K, design.lin, scn.robot, scn.backlash,
           scn.channel.dilate || scn.mode == Mode::local),
      refs_(static_cast<std::size_t>(scn.netctrl.horizon) + 1, StateVector::Zero()) {}

void ControllerNode::calibrate(std::span<const SensorFrame> frames) {
  if (scn_.measurement == Measurement::perfect) return;
  bias_ = estimate_bias(frames, scn_.bias_window);
}

const StateVector& ControllerNode::on_frame(const SensorFrame& frame, const StateVector* truth) {
  if (scn_.measurement == Measurement::perfect) {
    if (truth == nullptr) throw ContractError("perfect measurement needs the true state");
    x_meas_ = *truth;
  } else {
    std::tie(x_meas_, est_) = reconstruct_state(frame, est_, bias_, scn_.Ts,
                                                scn_.robot.wheel_radius, scn_.robot.track_width);
  }
  if (!closed_ && (scn_.lift.duration <= 0.0 ||
                   std::abs(x_meas_(idx::theta)) < scn_.lift.close_threshold)) {
    closed_ = true;
  }
  return x_meas_;
}

InputVector ControllerNode::local_input(std::uint64_t k) const {
  if (!closed_) return InputVector::Zero();
  return tracking_law(design_.K, x_meas_, design_.reference.at(k), scn_.robot.max_voltage);
}

ControlMatrix ControllerNode::network_matrix(std::uint64_t k, int omega_echo) {
  if (!closed_) return net_.idle(k);
  const std::size_t lead = scn_.channel.dilate ? 1 : 0;
  for (std::size_t i = 0; i < refs_.size(); ++i) refs_[i] = design_.reference.at(k + lead + i);
  return net_.compute(k, x_meas_, omega_echo, refs_);
}

// ------------------------------------------------------------------- trials

namespace {

Trace simulate(const Scenario& scn, std::uint64_t trial_seed) {
  const Design design = make_design(scn);
  RobotNode robot(scn, design, trial_seed);
  ControllerNode ctrl(scn, design);
  const auto frames = robot.calibration_frames();
  ctrl.calibrate(frames);

  std::optional<Channel> channel;
  if (scn.mode == Mode::networked) {
    channel.emplace(scn.channel, scn.Ts, derive_seed(trial_seed, kChannelStream));
  }
  const Nanos Ts = to_nanos(scn.Ts);
  const Nanos timeout = to_nanos(scn.channel.timeout);

  Trace trace;
  trace.mode = scn.mode;
  trace.seed = trial_seed;
  trace.config_hash = scn.config_hash;
  const std::size_t n = scn.cycles();
  trace.rows.reserve(n);

  for (std::uint64_t k = 0; k < n; ++k) {
    const Nanos t_m = Ts * static_cast<long long>(k);
    TraceRow row;
    row.timing.k = k;
    row.timing.t_m = t_m;
    row.x_true = robot.true_state();

    const int echo = robot.omega_echo();
    const SensorFrame frame = robot.sense(k);
    ctrl.on_frame(frame, &row.x_true);
    row.x_meas = robot.measured_state();
    row.x_ref = design.reference.at(k);

    if (scn.mode == Mode::local) {
      row.u = ctrl.local_input(k);
      row.timing.t_rh = t_m;
      row.timing.t_rr = t_m;
      row.timing.t_a = t_m;
      row.timing.eps = false;
      row.omega = 1;
      row.flags |= flag::fresh;
    } else {
      const CycleOutcome out = channel->sample_cycle(k, t_m);
      ControlMatrix m = ctrl.network_matrix(k, echo);
      const bool eps = classify_loss(out.t_rr, t_m, timeout);
      const RobotDecision d =
          robot.buffer().step(eps ? std::nullopt : std::optional<ControlMatrix>(std::move(m)),
                              eps);
      robot.set_omega_echo(d.omega);
      row.timing.t_rh = out.t_rh;
      row.timing.t_rr = out.t_rr;
      row.timing.eps = eps;
      if (scn.channel.dilate) {
        if (!eps) {
          const Dilation dl = dilate_actuation(t_m, out.t_rr, Ts);
          row.timing.d_c3 = dl.d_c3;
          row.timing.t_a = dl.t_a;
        } else {
          row.timing.t_a = t_m + Ts;
        }
      } else {
        row.timing.t_a = eps ? t_m + timeout : *out.t_rr;
      }
      row.u = d.input;
      row.omega = d.omega;
      if (d.fresh) row.flags |= flag::fresh;
      if (d.degraded) row.flags |= flag::degraded;
      if (d.cold) row.flags |= flag::cold;
    }
    if (!robot.loop_closed()) row.flags |= flag::loop_open;
    robot.actuate(row.timing.t_a, row.u);

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
  }
  trace.loop_close_k = robot.loop_close_k();
  return trace;
}

}  // namespace

Trace run_trial(const Scenario& scn, std::uint64_t trial_seed) {
  if (scn.mode == Mode::wire) return run_wire_deployment(scn, trial_seed);
  return simulate(scn, trial_seed);
}

Trace run_stabilization(const Scenario& scn, std::uint64_t trial_seed) {
  Scenario s = scn;
  s.reference.reset();
  return run_trial(s, trial_seed);
}

Trace run_tracking(const Scenario& scn, std::uint64_t trial_seed) {
  if (!scn.reference) throw ConfigError("tracking run needs a reference");
  return run_trial(scn, trial_seed);
}

// --------------------------------------------------------------------- RMSE

RmseReport compute_rmse(const Trace& trace, std::uint64_t k0, std::uint64_t k_end) {
  if (!(k0 < k_end)) throw ContractError("compute_rmse: empty window");
  if (k_end > trace.rows.size()) throw ContractError("compute_rmse: window beyond the trace");
  std::array<std::vector<double>, 3> err;
  for (std::uint64_t k = k0; k < k_end; ++k) {
    const TraceRow& r = trace.rows[k];
    if (r.k() != k) throw ContractError("compute_rmse: trace rows are not indexed by k");
    err[0].push_back(r.x_meas(idx::phi) - r.x_ref(idx::phi));
    err[1].push_back(r.x_meas(idx::theta));
    err[2].push_back(r.x_meas(idx::gamma) - r.x_ref(idx::gamma));
  }
  // Scaled by the largest error: no overflow, and a constant error c gives |c| exactly.
  auto rms = [](const std::vector<double>& e) {
    double peak = 0.0;
    for (double v : e) peak = std::max(peak, std::abs(v));
    if (peak == 0.0) return 0.0;
    double s = 0.0;
    for (double v : e) s += (v / peak) * (v / peak);
    return peak * std::sqrt(s / static_cast<double>(e.size()));
  };
  RmseReport rep;
  rep.phi = rms(err[0]);
  rep.theta = rms(err[1]);
  rep.gamma = rms(err[2]);
  rep.k0 = k0;
  rep.k_end = k_end;
  rep.per_trial.push_back({rep.phi, rep.theta, rep.gamma});
  return rep;
}

RmseReport aggregate_trials(std::span<const RmseReport> reports) {
  if (reports.empty()) throw ContractError("aggregate_trials: no reports");
  RmseReport out;
  out.k0 = reports.front().k0;
  out.k_end = reports.front().k_end;
  for (const auto& r : reports) {
    if (r.k0 != out.k0 || r.k_end != out.k_end) {
      throw ContractError("aggregate_trials: inconsistent RMSE windows");
    }
    out.per_trial.push_back({r.phi, r.theta, r.gamma});
  }
  const auto n = static_cast<double>(out.per_trial.size());
  for (const auto& v : out.per_trial) {
    out.phi += v[0] / n;
    out.theta += v[1] / n;
    out.gamma += v[2] / n;
  }
  return out;
}

TrialSet run_trials(const Scenario& scn) {
  scn.validate();
  const auto n = static_cast<std::size_t>(scn.trials);
  TrialSet set;
  set.traces.resize(n);
  std::vector<std::exception_ptr> errors(n);

  // Wire deployments own sockets and child processes; keep them sequential.
  const std::size_t workers =
      scn.mode == Mode::wire
          ? 1
          : std::min<std::size_t>(n, std::max(1u, std::thread::hardware_concurrency()));
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        set.traces[i] = run_trial(scn, scn.seed + i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  if (workers <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  std::uint64_t k0 = 0;
  std::uint64_t k_end = std::numeric_limits<std::uint64_t>::max();
  std::vector<const Trace*> upright;
  for (const auto& t : set.traces) {
    for (const auto& r : t.rows) {
      if (r.flags & flag::degraded) ++set.degraded_cycles;
    }
    // A trial that never closed the loop has no benchmark window either.
    if (t.fallen || !t.loop_close_k) {
      ++set.fallen;
      continue;
    }
    upright.push_back(&t);
    k0 = std::max(k0, *t.loop_close_k);
    k_end = std::min<std::uint64_t>(k_end, t.rows.size());
  }
  if (!upright.empty() && k0 < k_end) {
    std::vector<RmseReport> reports;
    for (const Trace* t : upright) reports.push_back(compute_rmse(*t, k0, k_end));
    set.aggregate = aggregate_trials(reports);
    set.has_aggregate = true;
  }
  return set;
}

}  // namespace twipr
