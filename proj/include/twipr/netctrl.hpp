#pragma once

#include "twipr/model.hpp"

#include <cstdint>
#include <deque>
#include <limits>
#include <map>
#include <optional>
#include <span>

namespace twipr {

// Predicted inputs for the actuation instants of cycles origin .. origin + M.
struct ControlMatrix {
  std::uint64_t origin = 0;
  Eigen::Matrix2Xd columns;  // 2 x (M + 1)

  int horizon() const { return static_cast<int>(columns.cols()) - 1; }
  InputVector column(int i) const { return columns.col(i); }
};

struct BuildOptions {
  std::uint64_t origin = 0;
  double v_max = std::numeric_limits<double>::infinity();
  // Reference at each column's actuation instant; empty means regulation to zero.
  std::span<const StateVector> refs = {};
  // true: the first column acts one sampling period after the measurement
  // (dilated actuation). false: it acts at the measurement instant.
  bool lead = true;
};

// State at t_m + Ts from the measured state with the input held: the plant's
// RK4 integrator without noise or backlash.
StateVector predict_nonlinear(const StateVector& x_meas, const InputVector& u, double Ts,
                              const RobotParams& p, int substeps = 8);

// Linear-model prediction x(i) = Ad x(i-1) + Bd f_bl(u(i-1)) seeded with
// x(-1) = x_meas, u(-1) = u_d; column i is sat(-K (x(i) - ref_i)). The backlash
// copy starts centred on u_d.
ControlMatrix build_control_matrix_linear(const StateVector& x_meas, const InputVector& u_d,
                                          const GainMatrix& K, const StateMatrix& Ad,
                                          const InputMatrix& Bd, double backlash_half_width,
                                          int M, const BuildOptions& opt = {});

// Same recursion with each step integrating the nonlinear dynamics over Ts.
ControlMatrix build_control_matrix_nonlinear(const StateVector& x_meas, const InputVector& u_d,
                                             const GainMatrix& K, double Ts,
                                             const RobotParams& p, int M,
                                             const BuildOptions& opt = {}, int substeps = 8);

struct RobotDecision {
  InputVector input = InputVector::Zero();
  int omega = 0;          // periods since the buffered matrix arrived (0: none yet)
  bool fresh = false;     // a matrix was accepted this cycle
  bool degraded = false;  // omega > M + 1: last column held
  bool cold = false;      // no matrix ever received: zero input
};

// Robot-side buffer U* and column selector omega.
class RobotBuffer {
 public:
  explicit RobotBuffer(int horizon);

  // `arrival` must be present iff eps is false (ContractError otherwise).
  RobotDecision step(std::optional<ControlMatrix> arrival, bool eps);

  int horizon() const { return horizon_; }
  const std::optional<ControlMatrix>& current() const { return current_; }

 private:
  int horizon_;
  std::optional<ControlMatrix> current_;
  std::deque<bool> eps_window_;  // most recent first, length <= M + 1
  std::uint64_t since_last_ = 0;
};

enum class Predictor { linear, nonlinear };

struct NetCtrlConfig {
  int horizon = 3;
  Predictor predictor = Predictor::linear;
  int substeps = 8;
};

// Controller-side half of the networked loop: keeps the matrices it sent so the
// robot's omega echo identifies the input being applied.
class NetworkedController {
 public:
  NetworkedController(NetCtrlConfig cfg, GainMatrix K, LinearModel lin, RobotParams params,
                      double backlash_half_width, bool lead);

  // Input applied by the robot during cycle k, given its echo of omega(k-1).
  InputVector applied_input(std::uint64_t k, int omega_echo) const;

  ControlMatrix compute(std::uint64_t k, const StateVector& x_meas, int omega_echo,
                        std::span<const StateVector> refs);
  // All-zero matrix (loop open).
  ControlMatrix idle(std::uint64_t k);

  const NetCtrlConfig& config() const { return cfg_; }

 private:
  void remember(const ControlMatrix& m);

  NetCtrlConfig cfg_;
  GainMatrix K_;
  LinearModel lin_;
  RobotParams params_;
  double backlash_;
  bool lead_;
  std::map<std::uint64_t, Eigen::Matrix2Xd> sent_;
};

}  // namespace twipr
