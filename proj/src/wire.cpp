#include "twipr/wire.hpp"

#include <zlib.h>

#include <bit>
#include <cmath>
#include <cstring>
#include <stdexcept>

namespace twipr {

static_assert(std::endian::native == std::endian::little,
              "the wire codec assumes a little-endian host");

namespace {

std::uint32_t crc(std::span<const std::uint8_t> bytes) {
  return static_cast<std::uint32_t>(
      crc32(0L, bytes.data(), static_cast<uInt>(bytes.size())));
}

template <class T>
void put(std::vector<std::uint8_t>& out, std::size_t offset, T v) {
  std::memcpy(out.data() + offset, &v, sizeof(T));
}

template <class T>
T get(std::span<const std::uint8_t> in, std::size_t offset) {
  T v;
  std::memcpy(&v, in.data() + offset, sizeof(T));
  return v;
}

void seal(std::vector<std::uint8_t>& out) {
  const std::size_t body = out.size() - 4;
  put<std::uint32_t>(out, body, crc(std::span(out).first(body)));
}

bool sealed(std::span<const std::uint8_t> in) {
  const std::size_t body = in.size() - 4;
  return get<std::uint32_t>(in, body) == crc(in.first(body));
}

}  // namespace

const char* to_string(DecodeError e) {
  switch (e) {
    case DecodeError::corrupt:
      return "CORRUPT";
    case DecodeError::truncated:
      return "TRUNCATED";
    case DecodeError::version_mismatch:
      return "VERSION_MISMATCH";
  }
  return "?";
}

// MeasurementPacket: version@0 k@1 t_m_us@9 theta_dot@17 phi_ml@25 phi_mr@33
// omega_echo@41 crc32@42
std::vector<std::uint8_t> encode(const MeasurementPacket& p) {
  if (!std::isfinite(p.theta_dot) || !std::isfinite(p.phi_ml) || !std::isfinite(p.phi_mr)) {
    throw std::invalid_argument("MeasurementPacket: non-finite sensor value");
  }
  std::vector<std::uint8_t> out(kMeasurementPacketSize);
  put(out, 0, p.version);
  put(out, 1, p.k);
  put(out, 9, p.t_m_us);
  put(out, 17, p.theta_dot);
  put(out, 25, p.phi_ml);
  put(out, 33, p.phi_mr);
  put(out, 41, p.omega_echo);
  seal(out);
  return out;
}

Decoded<MeasurementPacket> decode_measurement(std::span<const std::uint8_t> in) {
  if (in.size() < kMeasurementPacketSize) return DecodeError::truncated;
  if (in.size() > kMeasurementPacketSize) return DecodeError::corrupt;
  if (!sealed(in)) return DecodeError::corrupt;
  MeasurementPacket p;
  p.version = get<std::uint8_t>(in, 0);
  if (p.version != kProtocolVersion) return DecodeError::version_mismatch;
  p.k = get<std::uint64_t>(in, 1);
  p.t_m_us = get<std::uint64_t>(in, 9);
  p.theta_dot = get<double>(in, 17);
  p.phi_ml = get<double>(in, 25);
  p.phi_mr = get<double>(in, 33);
  p.omega_echo = get<std::uint8_t>(in, 41);
  if (!std::isfinite(p.theta_dot) || !std::isfinite(p.phi_ml) || !std::isfinite(p.phi_mr)) {
    return DecodeError::corrupt;
  }
  return p;
}

// ControlPacket: version@0 k@1 M@9 flags@10 uplink_us@11 values@15 (column
// major, 16 bytes per column) crc32 trailer
std::vector<std::uint8_t> encode(const ControlPacket& p) {
  const int M = p.horizon();
  if (M < 0 || M > 254) throw std::invalid_argument("ControlPacket: horizon outside [0, 254]");
  if (!p.values.allFinite()) throw std::invalid_argument("ControlPacket: non-finite input");
  std::vector<std::uint8_t> out(control_packet_size(M));
  put(out, 0, p.version);
  put(out, 1, p.k);
  put(out, 9, static_cast<std::uint8_t>(M));
  put(out, 10, p.flags);
  put(out, 11, p.uplink_us);
  std::size_t off = 15;
  for (int c = 0; c <= M; ++c) {
    for (int r = 0; r < 2; ++r, off += 8) put(out, off, p.values(r, c));
  }
  seal(out);
  return out;
}

Decoded<ControlPacket> decode_control(std::span<const std::uint8_t> in) {
  if (in.size() < control_packet_size(0)) return DecodeError::truncated;
  const int M = get<std::uint8_t>(in, 9);
  const std::size_t expected = control_packet_size(M);
  if (in.size() < expected) return DecodeError::truncated;
  if (in.size() > expected) return DecodeError::corrupt;
  if (!sealed(in)) return DecodeError::corrupt;
  ControlPacket p;
  p.version = get<std::uint8_t>(in, 0);
  if (p.version != kProtocolVersion) return DecodeError::version_mismatch;
  if (M > 254) return DecodeError::corrupt;
  p.k = get<std::uint64_t>(in, 1);
  p.flags = get<std::uint8_t>(in, 10);
  p.uplink_us = get<std::uint32_t>(in, 11);
  p.values.resize(2, M + 1);
  std::size_t off = 15;
  for (int c = 0; c <= M; ++c) {
    for (int r = 0; r < 2; ++r, off += 8) p.values(r, c) = get<double>(in, off);
  }
  if (!p.values.allFinite()) return DecodeError::corrupt;
  return p;
}

}  // namespace twipr
