#include "twipr/estimation.hpp"

#include "twipr/errors.hpp"

#include <cmath>
#include <numeric>
#include <string>

namespace twipr {

void SensorNoise::validate() const {
  if (!(gyro_std >= 0.0)) throw ConfigError("noise.gyro_std must be >= 0");
  if (!(encoder_resolution >= 0.0)) throw ConfigError("noise.encoder_resolution must be >= 0");
  if (!std::isfinite(gyro_bias)) throw ConfigError("noise.gyro_bias must be finite");
}

double quantize(double angle, double resolution) {
  if (resolution <= 0.0) return angle;
  return std::floor(angle / resolution) * resolution;
}

SensorFrame simulate_sensors(const StateVector& x, std::uint64_t k, const SensorNoise& noise,
                             double wheel_radius, double track_width, std::mt19937_64& rng) {
  // Always draw, so the stream position does not depend on the noise level.
  std::normal_distribution<double> gauss(0.0, 1.0);
  const double n = gauss(rng);

  const double half_spread = track_width * x(idx::gamma) / (2.0 * wheel_radius);
  const double wheel_l = x(idx::phi) - half_spread;
  const double wheel_r = x(idx::phi) + half_spread;

  SensorFrame f;
  f.k = k;
  f.theta_dot_meas = x(idx::theta_dot) + noise.gyro_bias + noise.gyro_std * n;
  f.phi_ml_meas = quantize(wheel_l - x(idx::theta), noise.encoder_resolution);
  f.phi_mr_meas = quantize(wheel_r - x(idx::theta), noise.encoder_resolution);
  return f;
}

GyroBias estimate_bias(std::span<const SensorFrame> frames, std::size_t min_frames) {
  if (frames.size() < min_frames || frames.empty()) {
    throw ConfigError("bias estimation needs at least " + std::to_string(min_frames) +
                      " quasi-static frames, got " + std::to_string(frames.size()));
  }
  const double sum = std::accumulate(frames.begin(), frames.end(), 0.0,
                                     [](double acc, const SensorFrame& f) {
                                       return acc + f.theta_dot_meas;
                                     });
  return {sum / static_cast<double>(frames.size())};
}

std::pair<StateVector, EstimatorState> reconstruct_state(const SensorFrame& frame,
                                                         const EstimatorState& est,
                                                         GyroBias bias, double Ts,
                                                         double wheel_radius,
                                                         double track_width) {
  if (frame.k != est.next_k) {
    throw ContractError("reconstruct_state: expected frame " + std::to_string(est.next_k) +
                        ", got " + std::to_string(frame.k));
  }
  const double theta_dot = frame.theta_dot_meas - bias.b;
  const double theta = est.primed ? est.theta + Ts * theta_dot : est.theta;
  const double phi = 0.5 * (frame.phi_ml_meas + frame.phi_mr_meas) + theta;
  const double gamma = wheel_radius / track_width * (frame.phi_mr_meas - frame.phi_ml_meas);
  const double phi_dot = est.primed ? (phi - est.phi) / Ts : 0.0;
  const double gamma_dot = est.primed ? (gamma - est.gamma) / Ts : 0.0;

  StateVector x;
  x << phi, theta, phi_dot, theta_dot, gamma, gamma_dot;
  return {x, EstimatorState{theta, phi, gamma, frame.k + 1, true}};
}

}  // namespace twipr
