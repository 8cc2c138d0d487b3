#include "twipr/config.hpp"
#include "twipr/sim.hpp"
#include "twipr/wire.hpp"

#include <doctest.h>

#include <cmath>
#include <cstring>
#include <limits>
#include <random>

using namespace twipr;

namespace {

using Bytes = std::vector<std::uint8_t>;

template <class T>
bool is_error(const Decoded<T>& d, DecodeError e) {
  return std::holds_alternative<DecodeError>(d) && std::get<DecodeError>(d) == e;
}

MeasurementPacket random_measurement(std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 10.0);
  MeasurementPacket p;
  p.k = rng();
  p.t_m_us = rng();
  p.theta_dot = g(rng);
  p.phi_ml = g(rng);
  p.phi_mr = g(rng);
  p.omega_echo = static_cast<std::uint8_t>(rng());
  return p;
}

ControlPacket random_control(std::mt19937_64& rng, int M) {
  std::normal_distribution<double> g(0.0, 5.0);
  ControlPacket p;
  p.k = rng();
  p.flags = static_cast<std::uint8_t>(rng() & 1);
  p.uplink_us = static_cast<std::uint32_t>(rng());
  p.values.resize(2, M + 1);
  for (int c = 0; c <= M; ++c) p.values.col(c) = Eigen::Vector2d(g(rng), g(rng));
  return p;
}

std::uint64_t le64(const Bytes& b, std::size_t off) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | b[off + i];
  return v;
}

Scenario wire_scenario(double duration) {
  Scenario scn = load_scenario(find_scenario("networked_stabilization"));
  scn.mode = Mode::wire;
  scn.duration = duration;
  scn.trials = 1;
  scn.noise = SensorNoise::none();
  return scn;
}

}  // namespace

TEST_CASE("measurement packet layout and round trip") {
  const MeasurementPacket zero{};
  const Bytes b = encode(zero);
  CHECK(b.size() == kMeasurementPacketSize);
  const auto d = decode_measurement(b);
  REQUIRE(std::holds_alternative<MeasurementPacket>(d));
  CHECK(std::get<MeasurementPacket>(d) == zero);

  MeasurementPacket p;
  p.k = 0x0102030405060708ull;
  p.t_m_us = 35000;
  p.theta_dot = 0.25;
  p.omega_echo = 3;
  const Bytes q = encode(p);
  CHECK(q[0] == kProtocolVersion);
  CHECK(le64(q, 1) == p.k);
  CHECK(q[1] == 0x08);
  CHECK(le64(q, 9) == 35000);
  double td;
  std::memcpy(&td, q.data() + 17, 8);
  CHECK(td == 0.25);
  CHECK(q[41] == 3);

  std::mt19937_64 rng(1);
  for (int i = 0; i < 1000; ++i) {
    const MeasurementPacket r = random_measurement(rng);
    const auto back = decode_measurement(encode(r));
    REQUIRE(std::holds_alternative<MeasurementPacket>(back));
    CHECK(std::get<MeasurementPacket>(back) == r);
  }
}

TEST_CASE("control packet layout and round trip") {
  std::mt19937_64 rng(2);
  CHECK(control_packet_size(3) == 83);
  CHECK(encode(random_control(rng, 3)).size() == 83);
  for (int M : {0, 1, 3, 10, 254}) {
    for (int i = 0; i < 50; ++i) {
      const ControlPacket p = random_control(rng, M);
      const Bytes b = encode(p);
      CHECK(b.size() == control_packet_size(M));
      CHECK(b[9] == M);
      const auto back = decode_control(b);
      REQUIRE(std::holds_alternative<ControlPacket>(back));
      CHECK(std::get<ControlPacket>(back) == p);
    }
  }
  ControlPacket p = random_control(rng, 1);
  const Bytes b = encode(p);
  double v;
  std::memcpy(&v, b.data() + 15 + 16, 8);
  CHECK(v == p.values(0, 1));
  std::memcpy(&v, b.data() + 15 + 24, 8);
  CHECK(v == p.values(1, 1));
}

TEST_CASE("single bit flips are detected") {
  std::mt19937_64 rng(3);
  const Bytes m = encode(random_measurement(rng));
  const Bytes c = encode(random_control(rng, 3));
  for (int i = 0; i < 100; ++i) {
    Bytes a = m;
    const std::size_t bit = rng() % (a.size() * 8);
    a[bit / 8] ^= static_cast<std::uint8_t>(1u << (bit % 8));
    CHECK(is_error(decode_measurement(a), DecodeError::corrupt));

    Bytes b = c;
    // Flipping the M byte changes the expected length instead.
    std::size_t cbit;
    do {
      cbit = rng() % (b.size() * 8);
    } while (cbit / 8 == 9);
    b[cbit / 8] ^= static_cast<std::uint8_t>(1u << (cbit % 8));
    CHECK(is_error(decode_control(b), DecodeError::corrupt));
  }
}

TEST_CASE("length and version errors are distinct") {
  std::mt19937_64 rng(4);
  Bytes m = encode(random_measurement(rng));
  CHECK(is_error(decode_measurement(Bytes(m.begin(), m.end() - 1)), DecodeError::truncated));
  CHECK(is_error(decode_measurement(Bytes{}), DecodeError::truncated));
  Bytes longer = m;
  longer.push_back(0);
  CHECK(is_error(decode_measurement(longer), DecodeError::corrupt));

  Bytes c = encode(random_control(rng, 3));
  CHECK(is_error(decode_control(Bytes(c.begin(), c.end() - 16)), DecodeError::truncated));
  CHECK(is_error(decode_control(Bytes(c.begin(), c.begin() + 10)), DecodeError::truncated));

  // Re-encode with another version byte and a valid checksum.
  MeasurementPacket v2;
  v2.version = 2;
  CHECK(is_error(decode_measurement(encode(v2)), DecodeError::version_mismatch));
  ControlPacket c2 = random_control(rng, 2);
  c2.version = 7;
  CHECK(is_error(decode_control(encode(c2)), DecodeError::version_mismatch));

  CHECK(std::string(to_string(DecodeError::corrupt)) == "CORRUPT");
  CHECK(std::string(to_string(DecodeError::truncated)) == "TRUNCATED");
  CHECK(std::string(to_string(DecodeError::version_mismatch)) == "VERSION_MISMATCH");
}

TEST_CASE("encoders reject out-of-range fields") {
  MeasurementPacket p;
  p.phi_ml = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(encode(p), std::invalid_argument);
  ControlPacket c;
  c.values(0, 0) = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(encode(c), std::invalid_argument);
  c.values = Eigen::Matrix2Xd::Zero(2, 256);
  CHECK_THROWS_AS(encode(c), std::invalid_argument);
}

TEST_CASE("random buffers decode to a packet or a typed error") {
  std::mt19937_64 rng(5);
  std::size_t ok = 0;
  for (int i = 0; i < 100000; ++i) {
    // Favour sizes near the real layouts so the checksum path is reached.
    const std::size_t n = i % 3 == 0 ? rng() % (kMaxDatagram + 1)
                          : i % 3 == 1 ? kMeasurementPacketSize
                                       : control_packet_size(static_cast<int>(rng() % 5));
    Bytes b(n);
    for (auto& x : b) x = static_cast<std::uint8_t>(rng());
    if (n > 9 && i % 3 == 2) b[9] = static_cast<std::uint8_t>((n - 35) / 16);
    const auto m = decode_measurement(b);
    const auto c = decode_control(b);
    ok += std::holds_alternative<MeasurementPacket>(m) + std::holds_alternative<ControlPacket>(c);
  }
  CHECK(ok == 0);
}

TEST_CASE("loopback deployment matches the in-process simulation") {
  Scenario wire = wire_scenario(3.0);
  wire.channel.loss.p_good_to_bad = 0.1;
  Scenario sim = wire;
  sim.mode = Mode::networked;
  const Trace a = run_trial(sim, 3);
  const Trace b = run_trial(wire, 3);
  REQUIRE(a.rows.size() == b.rows.size());
  CHECK(a.loop_close_k == b.loop_close_k);
  int losses = 0;
  for (std::size_t k = 0; k < a.rows.size(); ++k) {
    const TraceRow& x = a.rows[k];
    const TraceRow& y = b.rows[k];
    CHECK(x.timing.eps == y.timing.eps);
    CHECK(x.omega == y.omega);
    CHECK((x.x_true - y.x_true).cwiseAbs().maxCoeff() <= 1e-9);
    CHECK((x.u - y.u).cwiseAbs().maxCoeff() <= 1e-9);
    CHECK((y.flags & flag::deadline_miss) == 0);
    losses += x.timing.eps;
  }
  CHECK(losses > 0);
}

TEST_CASE("proxy drop list shows up as exactly those losses") {
  Scenario scn = wire_scenario(1.5);
  scn.channel.uplink = DelayModel::constant(0.002);
  scn.channel.downlink = DelayModel::constant(0.004);
  scn.channel.loss = LossModel{};
  scn.channel.forced_losses = {10, 11, 12};
  const Trace t = run_trial(scn, 1);
  REQUIRE(t.rows.size() == scn.cycles());
  for (const TraceRow& r : t.rows) {
    const bool dropped = r.k() >= 10 && r.k() <= 12;
    CHECK(r.timing.eps == dropped);
  }
}

TEST_CASE("a downlink slower than the timeout loses every cycle") {
  Scenario scn = wire_scenario(0.7);
  scn.channel.uplink = DelayModel::constant(0.0);
  scn.channel.downlink = DelayModel::constant(0.040);
  scn.channel.loss = LossModel{};
  const Trace t = run_trial(scn, 1);
  REQUIRE(t.rows.size() == scn.cycles());
  for (const TraceRow& r : t.rows) {
    CHECK(r.timing.eps);
    CHECK(r.omega == 0);
  }
}
