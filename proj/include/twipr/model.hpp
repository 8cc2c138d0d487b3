#pragma once

#include <Eigen/Dense>

#include <utility>

namespace twipr {

using StateVector = Eigen::Matrix<double, 6, 1>;
using InputVector = Eigen::Vector2d;
using StateMatrix = Eigen::Matrix<double, 6, 6>;
using InputMatrix = Eigen::Matrix<double, 6, 2>;
using GainMatrix = Eigen::Matrix<double, 2, 6>;

// Component indices of StateVector: [phi, theta, phi_dot, theta_dot, gamma, gamma_dot].
namespace idx {
inline constexpr int phi = 0;
inline constexpr int theta = 1;
inline constexpr int phi_dot = 2;
inline constexpr int theta_dot = 3;
inline constexpr int gamma = 4;
inline constexpr int gamma_dot = 5;
}  // namespace idx

// Physical parameters of the two-wheeled robot: rigid body on two wheels,
// each wheel driven by a DC motor whose electrical time constant is neglected.
// Defaults describe a LEGO-EV3-sized robot (SI units throughout).
struct RobotParams {
  double wheel_radius = 0.028;      // r [m]
  double track_width = 0.12;        // W [m]
  double body_mass = 0.8;           // [kg]
  double wheel_mass = 0.03;         // per wheel [kg]
  double com_height = 0.07;         // axle to body centre of mass [m]
  double pitch_inertia = 1.3067e-3; // body about its COM, pitch axis [kg m^2]
  double yaw_inertia = 1.3867e-3;   // body about vertical axis [kg m^2]
  double wheel_inertia = 1.176e-5;  // per wheel about axle [kg m^2]
  double motor_inertia = 3.0e-3;    // rotor + gearbox reflected to the wheel [kg m^2]
  double torque_constant = 0.317;   // [N m / A]
  double back_emf_constant = 0.468; // [V s / rad]
  double armature_resistance = 6.69;// [Ohm]
  double motor_friction = 0.0022;   // viscous, body <-> motor shaft [N m s / rad]
  double ground_friction = 0.0;     // viscous, wheel <-> floor [N m s / rad]
  double gravity = 9.81;            // [m / s^2]
  double max_voltage = 8.0;         // saturation limit [V]

  // Throws ConfigError naming the first offending field.
  void validate() const;
};

// Nonlinear continuous-time dynamics x_dot = f(x, u). Throws std::invalid_argument
// on non-finite arguments.
StateVector dynamics(const StateVector& x, const InputVector& u, const RobotParams& p);

struct ContinuousModel {
  StateMatrix A;
  InputMatrix B;
};

// Closed-form Jacobians of dynamics() at the upright equilibrium (x = 0, u = 0).
ContinuousModel linearize(const RobotParams& p);

struct LinearModel {
  StateMatrix A;
  InputMatrix B;
  StateMatrix Ad;
  InputMatrix Bd;
  double Ts = 0.0;
};

// Forward Euler: Ad = I + Ts A, Bd = Ts B. Throws ConfigError for Ts <= 0.
std::pair<StateMatrix, InputMatrix> discretize(const StateMatrix& A, const InputMatrix& B,
                                               double Ts);

LinearModel make_linear_model(const RobotParams& p, double Ts);

// Play-operator backlash between motor command and effective drive. `output`
// is the engaged position of the coupling; the engagement offset u - output
// stays within [-half_width, half_width].
struct BacklashState {
  double half_width = 0.0;
  InputVector output = InputVector::Zero();

  // Coupling centred on u: the next apply_backlash(u, .) passes u through.
  static BacklashState centered(const InputVector& u, double half_width);
  InputVector offset(const InputVector& u) const { return u - output; }
};

std::pair<InputVector, BacklashState> apply_backlash(const InputVector& u,
                                                     const BacklashState& s);

// Divergence threshold used by integrate(): any |x_i| above it means the robot fell.
inline constexpr double kOverflowGuard = 1e6;

// Fixed-step RK4 of dynamics() over dt with `substeps` equal steps and the input
// held constant. Throws DivergenceError when the overflow guard trips.
StateVector integrate(const StateVector& x, const InputVector& u, double dt,
                      const RobotParams& p, int substeps = 8);

InputVector saturate(const InputVector& u, double limit);

}  // namespace twipr
