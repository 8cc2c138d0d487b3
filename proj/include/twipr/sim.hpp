#pragma once

#include "twipr/channel.hpp"
#include "twipr/estimation.hpp"
#include "twipr/lqr.hpp"
#include "twipr/model.hpp"
#include "twipr/netctrl.hpp"

#include <array>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace twipr {

enum class Mode { local, networked, wire };
enum class PlantKind { nonlinear, linear };
enum class Measurement { estimated, perfect };

const char* to_string(Mode m);

// Manual start: the body is carried open-loop from start_pitch to upright over
// `duration`; the loop closes (and the robot is let go) at the first cycle whose
// measured pitch is within close_threshold. duration = 0 starts the robot free
// at start_pitch with the loop closed from cycle 0.
struct LiftSpec {
  double start_pitch = 0.3;
  double duration = 1.0;
  double close_threshold = 0.02;
};

struct WireSettings {
  std::string host = "127.0.0.1";
  int robot_port = 0;       // 0: ephemeral
  int controller_port = 0;
  int proxy_port = 0;
  bool pace = false;        // wall-clock Ts ticks instead of lock-step
  double reply_timeout = 0.1;    // lock-step wait for a control packet [s, wall clock]
  double startup_timeout = 5.0;  // [s]
};

struct Scenario {
  std::string name = "scenario";
  Mode mode = Mode::local;
  double duration = 20.0;  // [s]
  double Ts = 0.035;       // [s]
  int trials = 1;
  std::uint64_t seed = 1;
  RobotParams robot;
  LqrWeights weights = LqrWeights::reference_weights();
  std::optional<ReferenceSpec> reference;
  LiftSpec lift;
  ChannelConfig channel;
  SensorNoise noise;
  NetCtrlConfig netctrl;
  PlantKind plant = PlantKind::nonlinear;
  Measurement measurement = Measurement::estimated;
  double backlash = 0.02;   // half-width of the dead zone
  int substeps = 8;
  std::size_t bias_window = kDefaultBiasWindow;
  double fall_pitch = 1.0;  // |theta| at which the body is considered on the floor [rad]
  WireSettings wire;
  std::string config_hash;  // filled by the loader

  void validate() const;
  std::size_t cycles() const;
};

namespace flag {
inline constexpr unsigned loop_open = 1u << 0;
inline constexpr unsigned fresh = 1u << 1;
inline constexpr unsigned degraded = 1u << 2;
inline constexpr unsigned cold = 1u << 3;
inline constexpr unsigned fallen = 1u << 4;
inline constexpr unsigned deadline_miss = 1u << 5;
}  // namespace flag

struct TraceRow {
  CycleTiming timing;
  StateVector x_true = StateVector::Zero();
  StateVector x_meas = StateVector::Zero();
  StateVector x_ref = StateVector::Zero();
  InputVector u = InputVector::Zero();
  int omega = 0;
  unsigned flags = 0;

  std::uint64_t k() const { return timing.k; }
};

struct Trace {
  std::vector<TraceRow> rows;
  Mode mode = Mode::local;
  std::uint64_t seed = 0;
  std::string config_hash;
  std::optional<std::uint64_t> loop_close_k;
  bool fallen = false;
};

// Derived stream seeds for one trial.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);
inline constexpr std::uint64_t kSensorStream = 1;
inline constexpr std::uint64_t kChannelStream = 2;

// Everything the two ends of the loop share at start-up.
struct Design {
  LinearModel lin;
  LqrDesign lqr;
  GainMatrix K;
  ReferenceTrajectory reference;
};

Design make_design(const Scenario& scn);

// Robot side: plant, sensors, its own copy of the estimator (for the trace and
// for the release decision) and, when networked, the input buffer.
class RobotNode {
 public:
  RobotNode(const Scenario& scn, const Design& design, std::uint64_t trial_seed);

  // Quasi-static frames with the robot held at its start pose. Call before the
  // first cycle; the node calibrates its own estimator with them.
  std::vector<SensorFrame> calibration_frames();

  // Reads the sensors at t_m^k and updates the robot-side estimate.
  SensorFrame sense(std::uint64_t k);
  Nanos now() const { return now_; }

  const StateVector& true_state() const { return x_; }
  const StateVector& measured_state() const { return x_meas_; }
  bool loop_closed() const { return closed_; }
  std::optional<std::uint64_t> loop_close_k() const { return close_k_; }

  // Schedules a new motor command at absolute time t_a (>= current time).
  void actuate(Nanos t_a, const InputVector& u);

  // Propagates the plant up to t (exclusive of actuations scheduled at t).
  // Throws DivergenceError when the robot falls.
  void advance_to(Nanos t);

  RobotBuffer& buffer() { return buffer_; }
  // omega of the previous cycle as echoed to the controller (0: no matrix yet).
  int omega_echo() const { return omega_echo_; }
  void set_omega_echo(int omega) { omega_echo_ = omega; }

 private:
  StateVector lift_pose(Nanos t) const;
  void integrate_segment(Nanos from, Nanos to);

  const Scenario& scn_;
  const Design& design_;
  std::mt19937_64 sensor_rng_;
  StateVector x_ = StateVector::Zero();
  StateVector x_meas_ = StateVector::Zero();
  EstimatorState est_;
  GyroBias bias_;
  bool closed_ = false;
  std::optional<std::uint64_t> close_k_;
  Nanos now_{0};
  Nanos Ts_;
  InputVector u_eff_ = InputVector::Zero();
  BacklashState backlash_;
  std::vector<std::pair<Nanos, InputVector>> pending_;
  RobotBuffer buffer_;
  int omega_echo_ = 0;
};

// Controller side: estimator fed by raw frames, loop-closure decision, and
// either the local law or the networked matrix builder.
class ControllerNode {
 public:
  ControllerNode(const Scenario& scn, const Design& design);

  void calibrate(std::span<const SensorFrame> frames);
  // Returns the measured state of this frame. `truth` is required (and used
  // verbatim) for perfect-measurement scenarios.
  const StateVector& on_frame(const SensorFrame& frame, const StateVector* truth = nullptr);
  bool loop_closed() const { return closed_; }

  InputVector local_input(std::uint64_t k) const;
  ControlMatrix network_matrix(std::uint64_t k, int omega_echo);

 private:
  const Scenario& scn_;
  const Design& design_;
  EstimatorState est_;
  GyroBias bias_;
  StateVector x_meas_ = StateVector::Zero();
  bool closed_ = false;
  NetworkedController net_;
  std::vector<StateVector> refs_;
};

// One closed-loop trial in simulated time (local or networked). For
// networked runs a perfect-measurement scenario reads the true state.
Trace run_trial(const Scenario& scn, std::uint64_t trial_seed);

// Benchmark entry points. run_tracking requires scn.reference.
Trace run_stabilization(const Scenario& scn, std::uint64_t trial_seed);
Trace run_tracking(const Scenario& scn, std::uint64_t trial_seed);

struct RmseReport {
  double phi = 0.0;
  double theta = 0.0;
  double gamma = 0.0;
  std::uint64_t k0 = 0;
  std::uint64_t k_end = 0;  // exclusive
  std::vector<std::array<double, 3>> per_trial;
};

// Root-mean-square tracking errors of the measured phi, theta, gamma over the
// half-open window [k0, k_end). Throws ContractError for an empty window or one
// outside the trace.
RmseReport compute_rmse(const Trace& trace, std::uint64_t k0, std::uint64_t k_end);

// Per-index mean over trials sharing one window (ContractError otherwise).
RmseReport aggregate_trials(std::span<const RmseReport> reports);

struct TrialSet {
  std::vector<Trace> traces;
  RmseReport aggregate;        // over the trials that stayed upright
  std::size_t fallen = 0;
  std::size_t degraded_cycles = 0;
  bool has_aggregate = false;
};

// Runs scn.trials trials (seeds scn.seed + i) on worker threads and reports
// RMSE over the common window [max loop-close index, shortest trace length).
TrialSet run_trials(const Scenario& scn);

}  // namespace twipr
