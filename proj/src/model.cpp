#include "twipr/model.hpp"

#include "twipr/errors.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace twipr {

namespace {

void require_positive(double v, const char* name) {
  if (!(v > 0.0) || !std::isfinite(v)) {
    throw ConfigError(std::string("robot parameter '") + name + "' must be finite and > 0");
  }
}

void require_nonnegative(double v, const char* name) {
  if (!(v >= 0.0) || !std::isfinite(v)) {
    throw ConfigError(std::string("robot parameter '") + name + "' must be finite and >= 0");
  }
}

// Lumped motor constants: drive gain alpha [N m / V] and back-EMF damping beta
// [N m s / rad].
struct MotorTerms {
  double alpha;
  double beta;
};

MotorTerms motor_terms(const RobotParams& p) {
  return {p.torque_constant / p.armature_resistance,
          p.torque_constant * p.back_emf_constant / p.armature_resistance + p.motor_friction};
}

}  // namespace

void RobotParams::validate() const {
  require_positive(wheel_radius, "wheel_radius");
  require_positive(track_width, "track_width");
  require_positive(body_mass, "body_mass");
  require_positive(wheel_mass, "wheel_mass");
  require_positive(com_height, "com_height");
  require_positive(pitch_inertia, "pitch_inertia");
  require_positive(yaw_inertia, "yaw_inertia");
  require_positive(wheel_inertia, "wheel_inertia");
  require_nonnegative(motor_inertia, "motor_inertia");
  require_positive(torque_constant, "torque_constant");
  require_positive(back_emf_constant, "back_emf_constant");
  require_positive(armature_resistance, "armature_resistance");
  require_nonnegative(motor_friction, "motor_friction");
  require_nonnegative(ground_friction, "ground_friction");
  require_positive(gravity, "gravity");
  require_positive(max_voltage, "max_voltage");
  if (!(wheel_radius < track_width)) {
    throw ConfigError("robot parameters must satisfy wheel_radius < track_width");
  }
}

StateVector dynamics(const StateVector& x, const InputVector& u, const RobotParams& p) {
  if (!x.allFinite() || !u.allFinite()) {
    throw std::invalid_argument("dynamics: non-finite state or input");
  }
  const double r = p.wheel_radius;
  const double W = p.track_width;
  const double M = p.body_mass;
  const double m = p.wheel_mass;
  const double L = p.com_height;
  const double Jm = p.motor_inertia;
  const double Jw = p.wheel_inertia;
  const auto [alpha, beta] = motor_terms(p);

  const double theta = x(idx::theta);
  const double phi_dot = x(idx::phi_dot);
  const double theta_dot = x(idx::theta_dot);
  const double gamma_dot = x(idx::gamma_dot);
  const double s = std::sin(theta);
  const double c = std::cos(theta);
  const double u_sum = u(0) + u(1);
  const double u_diff = u(1) - u(0);

  // Wheel/pitch generalized forces.
  const double f_phi = alpha * u_sum - 2.0 * (beta + p.ground_friction) * phi_dot +
                       2.0 * beta * theta_dot;
  const double f_theta = -alpha * u_sum + 2.0 * beta * phi_dot - 2.0 * beta * theta_dot;

  // Mass matrix of the (phi, theta) subsystem.
  const double m11 = (2.0 * m + M) * r * r + 2.0 * Jw + 2.0 * Jm;
  const double m12 = M * L * r * c - 2.0 * Jm;
  const double m22 = M * L * L + p.pitch_inertia + 2.0 * Jm;

  const double rhs1 = f_phi + M * L * r * theta_dot * theta_dot * s;
  const double rhs2 = f_theta + M * p.gravity * L * s + M * L * L * gamma_dot * gamma_dot * s * c;
  const double det = m11 * m22 - m12 * m12;
  const double phi_ddot = (m22 * rhs1 - m12 * rhs2) / det;
  const double theta_ddot = (m11 * rhs2 - m12 * rhs1) / det;

  const double yaw_gain = W / (2.0 * r);
  const double m33 = 0.5 * m * W * W + p.yaw_inertia + yaw_gain * yaw_gain * 2.0 * (Jw + Jm) +
                     M * L * L * s * s;
  const double f_gamma = yaw_gain * alpha * u_diff -
                         2.0 * yaw_gain * yaw_gain * (beta + p.ground_friction) * gamma_dot;
  const double gamma_ddot = (f_gamma - 2.0 * M * L * L * theta_dot * gamma_dot * s * c) / m33;

  StateVector dx;
  dx << phi_dot, theta_dot, phi_ddot, theta_ddot, gamma_dot, gamma_ddot;
  return dx;
}

ContinuousModel linearize(const RobotParams& p) {
  p.validate();
  const double r = p.wheel_radius;
  const double W = p.track_width;
  const double M = p.body_mass;
  const double m = p.wheel_mass;
  const double L = p.com_height;
  const double Jm = p.motor_inertia;
  const double Jw = p.wheel_inertia;
  const auto [alpha, beta] = motor_terms(p);
  const double beta_w = beta + p.ground_friction;

  Eigen::Matrix2d mass;
  mass << (2.0 * m + M) * r * r + 2.0 * Jw + 2.0 * Jm, M * L * r - 2.0 * Jm,
      M * L * r - 2.0 * Jm, M * L * L + p.pitch_inertia + 2.0 * Jm;
  const Eigen::Matrix2d mass_inv = mass.inverse();

  // Columns: phi, theta, phi_dot, theta_dot.
  Eigen::Matrix<double, 2, 4> forces;
  forces << 0.0, 0.0, -2.0 * beta_w, 2.0 * beta,
      0.0, M * p.gravity * L, 2.0 * beta, -2.0 * beta;
  Eigen::Matrix2d drive;
  drive << alpha, alpha, -alpha, -alpha;

  ContinuousModel lin;
  lin.A.setZero();
  lin.B.setZero();
  lin.A(idx::phi, idx::phi_dot) = 1.0;
  lin.A(idx::theta, idx::theta_dot) = 1.0;
  lin.A(idx::gamma, idx::gamma_dot) = 1.0;
  lin.A.block<2, 4>(idx::phi_dot, 0) = mass_inv * forces;
  lin.B.block<2, 2>(idx::phi_dot, 0) = mass_inv * drive;

  const double yaw_gain = W / (2.0 * r);
  const double m33 = 0.5 * m * W * W + p.yaw_inertia + yaw_gain * yaw_gain * 2.0 * (Jw + Jm);
  lin.A(idx::gamma_dot, idx::gamma_dot) = -2.0 * yaw_gain * yaw_gain * beta_w / m33;
  lin.B(idx::gamma_dot, 0) = -yaw_gain * alpha / m33;
  lin.B(idx::gamma_dot, 1) = yaw_gain * alpha / m33;
  return lin;
}

std::pair<StateMatrix, InputMatrix> discretize(const StateMatrix& A, const InputMatrix& B,
                                               double Ts) {
  if (!(Ts > 0.0) || !std::isfinite(Ts)) {
    throw ConfigError("discretize: sampling period must be > 0");
  }
  StateMatrix Ad = StateMatrix::Identity() + Ts * A;
  InputMatrix Bd = Ts * B;
  return {Ad, Bd};
}

LinearModel make_linear_model(const RobotParams& p, double Ts) {
  const auto [A, B] = linearize(p);
  const auto [Ad, Bd] = discretize(A, B, Ts);
  return {A, B, Ad, Bd, Ts};
}

BacklashState BacklashState::centered(const InputVector& u, double half_width) {
  return {half_width, u};
}

std::pair<InputVector, BacklashState> apply_backlash(const InputVector& u,
                                                     const BacklashState& s) {
  BacklashState next = s;
  for (int i = 0; i < 2; ++i) {
    next.output(i) = std::clamp(s.output(i), u(i) - s.half_width, u(i) + s.half_width);
  }
  return {next.output, next};
}

StateVector integrate(const StateVector& x, const InputVector& u, double dt,
                      const RobotParams& p, int substeps) {
  if (!(dt > 0.0) || substeps < 1) {
    throw std::invalid_argument("integrate: dt must be > 0 and substeps >= 1");
  }
  const double h = dt / substeps;
  StateVector s = x;
  for (int i = 0; i < substeps; ++i) {
    const StateVector k1 = dynamics(s, u, p);
    const StateVector k2 = dynamics(s + 0.5 * h * k1, u, p);
    const StateVector k3 = dynamics(s + 0.5 * h * k2, u, p);
    const StateVector k4 = dynamics(s + h * k3, u, p);
    s += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    if (!s.allFinite() || s.cwiseAbs().maxCoeff() > kOverflowGuard) {
      throw DivergenceError("plant state exceeded the overflow guard: the robot fell");
    }
  }
  return s;
}

InputVector saturate(const InputVector& u, double limit) {
  return u.cwiseMax(-limit).cwiseMin(limit);
}

}  // namespace twipr
