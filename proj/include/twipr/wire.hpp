#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <span>
#include <variant>
#include <vector>

namespace twipr {

struct Scenario;
struct Trace;

inline constexpr std::uint8_t kProtocolVersion = 1;
inline constexpr std::size_t kMeasurementPacketSize = 46;
inline constexpr std::size_t kControlPacketOverhead = 19;
inline constexpr std::size_t kMaxDatagram = 1500;
// omega-echo value marking quasi-static calibration frames.
inline constexpr std::uint8_t kCalibrationEcho = 0xFF;

namespace control_flags {
inline constexpr std::uint8_t loop_closed = 1u << 0;
}

constexpr std::size_t control_packet_size(int horizon) {
  return kControlPacketOverhead + 16 * static_cast<std::size_t>(horizon + 1);
}

struct MeasurementPacket {
  std::uint8_t version = kProtocolVersion;
  std::uint64_t k = 0;
  std::uint64_t t_m_us = 0;
  double theta_dot = 0.0;
  double phi_ml = 0.0;
  double phi_mr = 0.0;
  std::uint8_t omega_echo = 0;

  bool operator==(const MeasurementPacket&) const = default;
};

struct ControlPacket {
  std::uint8_t version = kProtocolVersion;
  std::uint64_t k = 0;  // origin cycle
  std::uint8_t flags = 0;
  std::uint32_t uplink_us = 0;  // t_rh - t_m as observed by the controller
  Eigen::Matrix2Xd values = Eigen::Matrix2Xd::Zero(2, 1);  // 2 x (M + 1)

  int horizon() const { return static_cast<int>(values.cols()) - 1; }
  bool operator==(const ControlPacket& o) const {
    return version == o.version && k == o.k && flags == o.flags && uplink_us == o.uplink_us &&
           values.cols() == o.values.cols() && values == o.values;
  }
};

enum class DecodeError { corrupt, truncated, version_mismatch };

const char* to_string(DecodeError e);

template <class Packet>
using Decoded = std::variant<Packet, DecodeError>;

// Encoders throw std::invalid_argument for out-of-range fields (non-finite
// values, horizon outside [0, 254]).
std::vector<std::uint8_t> encode(const MeasurementPacket& p);
std::vector<std::uint8_t> encode(const ControlPacket& p);

Decoded<MeasurementPacket> decode_measurement(std::span<const std::uint8_t> bytes);
Decoded<ControlPacket> decode_control(std::span<const std::uint8_t> bytes);

// Robot emulator, controller and impairment proxy as three processes talking
// UDP on the loopback interface. Throws std::runtime_error on socket failure.
Trace run_wire_deployment(const Scenario& scn, std::uint64_t trial_seed);

}  // namespace twipr
