#include "twipr/lqr.hpp"

#include "twipr/errors.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>

namespace twipr {

namespace {

double max_abs(const Eigen::MatrixXd& M) { return M.cwiseAbs().maxCoeff(); }

Eigen::MatrixXd riccati_map(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B,
                            const Eigen::MatrixXd& Q, const Eigen::MatrixXd& R,
                            const Eigen::MatrixXd& P) {
  const Eigen::MatrixXd BtP = B.transpose() * P;
  const Eigen::MatrixXd S = R + BtP * B;
  return A.transpose() * P * A - (BtP * A).transpose() * S.ldlt().solve(BtP * A) + Q;
}

}  // namespace

LqrWeights LqrWeights::reference_weights() {
  LqrWeights w;
  w.Q = Eigen::VectorXd((Eigen::VectorXd(6) << 1.0, 1e3, 1.0, 1.0, 1e6, 1.0).finished())
            .asDiagonal();
  w.R = Eigen::Vector2d(1e4, 1e4).asDiagonal();
  return w;
}

void LqrWeights::validate(Eigen::Index states, Eigen::Index inputs) const {
  if (Q.rows() != states || Q.cols() != states) {
    throw ConfigError("lqr.Q must be " + std::to_string(states) + "x" + std::to_string(states));
  }
  if (R.rows() != inputs || R.cols() != inputs) {
    throw ConfigError("lqr.R must be " + std::to_string(inputs) + "x" + std::to_string(inputs));
  }
  if (!Q.allFinite() || !R.allFinite()) throw ConfigError("lqr weights must be finite");
  const double q_scale = 1.0 + max_abs(Q);
  if (max_abs(Q - Q.transpose()) > 1e-12 * q_scale) throw ConfigError("lqr.Q must be symmetric");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(Q);
  if (eig.eigenvalues().minCoeff() < -1e-12 * q_scale) {
    throw ConfigError("lqr.Q must be positive semidefinite");
  }
  if (max_abs(R - R.transpose()) > 1e-12 * (1.0 + max_abs(R))) {
    throw ConfigError("lqr.R must be symmetric");
  }
  if (R.llt().info() != Eigen::Success) throw ConfigError("lqr.R must be positive definite");
}

double dare_residual(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B,
                     const Eigen::MatrixXd& Q, const Eigen::MatrixXd& R,
                     const Eigen::MatrixXd& P) {
  return max_abs(P - riccati_map(A, B, Q, R, P));
}

Eigen::MatrixXd solve_dare(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B,
                           const Eigen::MatrixXd& Q, const Eigen::MatrixXd& R,
                           const DareOptions& opts) {
  const Eigen::Index n = A.rows();
  if (A.cols() != n || B.rows() != n) throw ConfigError("solve_dare: dimension mismatch");
  LqrWeights{Q, R}.validate(n, B.cols());

  // Structure-preserving doubling: step j accounts for 2^j Riccati iterations
  // started from P = Q, so convergence is quadratic even when the closed loop
  // has poles close to the unit circle.
  const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(n, n);
  Eigen::MatrixXd Ak = A;
  Eigen::MatrixXd G = B * R.llt().solve(B.transpose());
  Eigen::MatrixXd H = Q;
  int iter = 0;
  for (; iter < opts.max_iter; ++iter) {
    const Eigen::PartialPivLU<Eigen::MatrixXd> W(I + G * H);
    const Eigen::MatrixXd WinvA = W.solve(Ak);
    const Eigen::MatrixXd WinvG = W.solve(G);
    Eigen::MatrixXd H_next = H + Ak.transpose() * H * WinvA;
    G = G + Ak * WinvG * Ak.transpose();
    Ak = Ak * WinvA;
    H_next = 0.5 * (H_next + H_next.transpose());
    G = 0.5 * (G + G.transpose());
    const double step = max_abs(H_next - H);
    H = std::move(H_next);
    if (!H.allFinite()) break;
    if (step <= 1e-15 * (1.0 + max_abs(H)) || max_abs(Ak) < 1e-300) break;
  }

  Eigen::MatrixXd P = H;
  double residual = P.allFinite() ? dare_residual(A, B, Q, R, P)
                                  : std::numeric_limits<double>::infinity();
  // Polish rounding error with plain fixed-point sweeps if needed.
  for (; P.allFinite() && residual > opts.tolerance * (1.0 + max_abs(P)) &&
         iter < opts.max_iter;
       ++iter) {
    P = riccati_map(A, B, Q, R, P);
    P = 0.5 * (P + P.transpose());
    residual = dare_residual(A, B, Q, R, P);
  }
  if (!P.allFinite() || residual > opts.tolerance * (1.0 + max_abs(P))) {
    throw DareError("solve_dare: no convergence after " + std::to_string(iter) +
                        " iterations (residual " + std::to_string(residual) + ")",
                    residual);
  }
  return P;
}

GainMatrix LqrDesign::gain() const {
  if (K.rows() != 2 || K.cols() != 6) throw ContractError("LqrDesign::gain: K is not 2x6");
  return K;
}

double spectral_radius(const Eigen::MatrixXd& M) {
  return M.eigenvalues().cwiseAbs().maxCoeff();
}

LqrDesign lqr_gain(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B,
                   const Eigen::MatrixXd& Q, const Eigen::MatrixXd& R,
                   const DareOptions& opts) {
  LqrDesign d;
  d.P = solve_dare(A, B, Q, R, opts);
  const Eigen::MatrixXd BtP = B.transpose() * d.P;
  d.K = (R + BtP * B).ldlt().solve(BtP * A);
  d.closed_loop_radius = spectral_radius(A - B * d.K);
  if (!(d.closed_loop_radius < 1.0)) {
    throw DareError("lqr_gain: closed loop not Schur stable (spectral radius " +
                        std::to_string(d.closed_loop_radius) + ")",
                    dare_residual(A, B, Q, R, d.P));
  }
  return d;
}

InputVector control_law(const GainMatrix& K, const StateVector& x, double v_max) {
  return saturate(-K * x, v_max);
}

InputVector tracking_law(const GainMatrix& K, const StateVector& x, const StateVector& x_ref,
                         double v_max) {
  return saturate(-K * (x - x_ref), v_max);
}

const StateVector& ReferenceTrajectory::at(std::size_t k) const {
  static const StateVector zero = StateVector::Zero();
  if (x_ref.empty()) return zero;
  return k < x_ref.size() ? x_ref[k] : x_ref.back();
}

ReferenceTrajectory generate_reference(const ReferenceSpec& spec, double Ts,
                                       std::size_t horizon) {
  if (!(spec.filter_tau > 0.0)) throw ConfigError("reference.filter_tau must be > 0");
  if (!(Ts > 0.0)) throw ConfigError("reference: Ts must be > 0");
  const double a = std::exp(-Ts / spec.filter_tau);

  // Unfiltered step signal at sample k; a step at t_on is active from
  // k_on = round(t_on / Ts) on.
  auto target = [Ts](const std::vector<ReferenceStep>& steps, std::size_t k) {
    double v = 0.0;
    for (const auto& s : steps) {
      const auto k_on = static_cast<long long>(std::llround(s.onset / Ts));
      if (static_cast<long long>(k) >= k_on) v += s.amplitude;
    }
    return v;
  };

  ReferenceTrajectory ref;
  ref.x_ref.reserve(horizon);
  double phi_dot = 0.0;
  double gamma = 0.0;
  double phi = 0.0;
  double gamma_prev = 0.0;
  for (std::size_t k = 0; k < horizon; ++k) {
    if (k > 0) {
      phi_dot = a * phi_dot + (1.0 - a) * target(spec.phi_dot_steps, k - 1);
      gamma = a * gamma + (1.0 - a) * target(spec.gamma_steps, k - 1);
    }
    phi = phi + Ts * phi_dot;
    const double gamma_dot = (gamma - gamma_prev) / Ts;
    gamma_prev = gamma;

    StateVector x = StateVector::Zero();
    x(idx::phi) = phi;
    x(idx::phi_dot) = phi_dot;
    x(idx::gamma) = gamma;
    x(idx::gamma_dot) = gamma_dot;
    ref.x_ref.push_back(x);
  }
  return ref;
}

void export_gain(const std::filesystem::path& path, const Eigen::MatrixXd& K) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write gain file " + path.string());
  out << std::setprecision(17);
  for (Eigen::Index i = 0; i < K.rows(); ++i) {
    for (Eigen::Index j = 0; j < K.cols(); ++j) out << (j ? " " : "") << K(i, j);
    out << '\n';
  }
}

}  // namespace twipr
