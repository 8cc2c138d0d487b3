#pragma once

#include "twipr/model.hpp"

#include <cstdint>
#include <numbers>
#include <random>
#include <span>
#include <utility>

namespace twipr {

// Raw sensor readings of one sampling instant.
struct SensorFrame {
  std::uint64_t k = 0;
  double theta_dot_meas = 0.0;  // gyro [rad/s]
  double phi_ml_meas = 0.0;     // left motor encoder [rad]
  double phi_mr_meas = 0.0;     // right motor encoder [rad]
};

struct SensorNoise {
  double gyro_std = 0.05;                               // [rad/s]
  double encoder_resolution = 2.0 * std::numbers::pi / 360.0;  // [rad]; 0 disables quantization
  double gyro_bias = 0.02;                              // true bias [rad/s]

  static SensorNoise none() { return {0.0, 0.0, 0.0}; }
  void validate() const;
};

struct GyroBias {
  double b = 0.0;
};

inline constexpr std::size_t kDefaultBiasWindow = 100;

// Floor quantization to integer multiples of `resolution` (identity for 0).
double quantize(double angle, double resolution);

// Gyro reads theta_dot + bias + noise; each encoder reads its motor shaft angle
// relative to the body (wheel angle - theta), quantized.
SensorFrame simulate_sensors(const StateVector& x, std::uint64_t k, const SensorNoise& noise,
                             double wheel_radius, double track_width, std::mt19937_64& rng);

// Arithmetic mean of the gyro over a quasi-static window. Throws ConfigError when
// fewer than `min_frames` frames are supplied.
GyroBias estimate_bias(std::span<const SensorFrame> frames,
                       std::size_t min_frames = kDefaultBiasWindow);

// Recursion memory of the reconstruction. Before the first frame the estimator
// is unprimed; the first frame fixes theta = theta0 and zero rates.
struct EstimatorState {
  double theta = 0.0;
  double phi = 0.0;
  double gamma = 0.0;
  std::uint64_t next_k = 0;
  bool primed = false;

  static EstimatorState initial(double theta0, std::uint64_t first_k = 0) {
    return {theta0, 0.0, 0.0, first_k, false};
  }
};

// Measured state from gyro and encoders by the backward-difference recursion.
// Throws ContractError when frame.k is not the expected next index.
std::pair<StateVector, EstimatorState> reconstruct_state(const SensorFrame& frame,
                                                         const EstimatorState& est,
                                                         GyroBias bias, double Ts,
                                                         double wheel_radius,
                                                         double track_width);

}  // namespace twipr
