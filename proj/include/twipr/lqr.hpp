#pragma once

#include "twipr/model.hpp"

#include <Eigen/Dense>

#include <filesystem>
#include <stdexcept>
#include <vector>

namespace twipr {

struct LqrWeights {
  Eigen::MatrixXd Q;
  Eigen::MatrixXd R;

  // Q = diag(1, 1e3, 1, 1, 1e6, 1), R = diag(1e4, 1e4).
  static LqrWeights reference_weights();
  // Q symmetric PSD, R symmetric PD; throws ConfigError.
  void validate(Eigen::Index states, Eigen::Index inputs) const;
};

struct DareOptions {
  double tolerance = 1e-9;
  int max_iter = 10000;
};

class DareError : public std::runtime_error {
 public:
  DareError(const std::string& what, double residual)
      : std::runtime_error(what), residual_(residual) {}
  double residual() const { return residual_; }

 private:
  double residual_;
};

// max |P - (A'PA - A'PB (R + B'PB)^-1 B'PA + Q)|
double dare_residual(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B,
                     const Eigen::MatrixXd& Q, const Eigen::MatrixXd& R,
                     const Eigen::MatrixXd& P);

// Stabilizing solution of the discrete algebraic Riccati equation. Throws
// ConfigError for invalid weights and DareError when the residual bound
// |res|_max <= tol (1 + |P|_max) is not met within max_iter iterations.
Eigen::MatrixXd solve_dare(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B,
                           const Eigen::MatrixXd& Q, const Eigen::MatrixXd& R,
                           const DareOptions& opts = {});

struct LqrDesign {
  Eigen::MatrixXd P;
  Eigen::MatrixXd K;
  double closed_loop_radius = 0.0;

  GainMatrix gain() const;  // K as the fixed 2x6 type; throws on size mismatch
};

// K = (R + B'PB)^-1 B'PA, certified by rho(A - BK) < 1 (DareError otherwise).
LqrDesign lqr_gain(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B,
                   const Eigen::MatrixXd& Q, const Eigen::MatrixXd& R,
                   const DareOptions& opts = {});

double spectral_radius(const Eigen::MatrixXd& M);

// u = sat(-K x)
InputVector control_law(const GainMatrix& K, const StateVector& x, double v_max);
// u = sat(-K (x - x_ref))
InputVector tracking_law(const GainMatrix& K, const StateVector& x, const StateVector& x_ref,
                         double v_max);

struct ReferenceStep {
  double onset = 0.0;      // [s]
  double amplitude = 0.0;  // change of the filtered signal
};

struct ReferenceSpec {
  std::vector<ReferenceStep> phi_dot_steps;  // [rad/s]
  std::vector<ReferenceStep> gamma_steps;    // [rad]
  double filter_tau = 0.5;                   // first-order low-pass [s]

  bool empty() const { return phi_dot_steps.empty() && gamma_steps.empty(); }
};

struct ReferenceTrajectory {
  std::vector<StateVector> x_ref;

  // Holds the last sample beyond the generated horizon; zero when empty.
  const StateVector& at(std::size_t k) const;
  std::size_t size() const { return x_ref.size(); }
};

// Low-pass filtered steps for phi_dot and gamma; phi by Ts-integration,
// gamma_dot by backward difference, theta and theta_dot identically zero.
ReferenceTrajectory generate_reference(const ReferenceSpec& spec, double Ts,
                                       std::size_t horizon);

// Plain-text matrix dump (one row per line, whitespace separated).
void export_gain(const std::filesystem::path& path, const Eigen::MatrixXd& K);

}  // namespace twipr
