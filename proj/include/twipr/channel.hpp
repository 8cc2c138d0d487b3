#pragma once

#include <chrono>
#include <cstdint>
#include <deque>
#include <optional>
#include <random>
#include <set>
#include <string>

namespace twipr {

using Nanos = std::chrono::nanoseconds;

// Seconds to integer nanoseconds (rounded to nearest).
Nanos to_nanos(double seconds);
double to_seconds(Nanos t);

struct DelayModel {
  enum class Kind { constant, uniform, shifted_exponential };
  Kind kind = Kind::constant;
  double a = 0.0;  // constant value | lower bound | shift   [s]
  double b = 0.0;  // unused        | upper bound | mean of the exponential part [s]

  static DelayModel constant(double d) { return {Kind::constant, d, 0.0}; }
  static DelayModel uniform(double lo, double hi) { return {Kind::uniform, lo, hi}; }
  static DelayModel shifted_exponential(double shift, double mean) {
    return {Kind::shifted_exponential, shift, mean};
  }

  // Inverse-CDF sample from one uniform draw in [0, 1).
  double sample(double uniform01) const;
  void validate(const std::string& name) const;
};

struct LossModel {
  enum class Kind { none, bernoulli, gilbert_elliott };
  Kind kind = Kind::none;
  double p = 0.0;              // bernoulli loss probability
  double p_good_to_bad = 0.0;  // gilbert-elliott transitions
  double p_bad_to_good = 1.0;
  double loss_in_good = 0.0;
  double loss_in_bad = 1.0;

  // Long-run loss rate of the process.
  double stationary_loss_rate() const;
  void validate() const;
};

// Periodic forced downlink losses: `length` consecutive cycles every `period`
// cycles, starting at cycle `start`.
struct ForcedBursts {
  std::uint64_t start = 0;
  std::uint64_t period = 0;  // 0 disables
  std::uint64_t length = 0;

  bool covers(std::uint64_t k) const;
};

struct ChannelConfig {
  DelayModel uplink = DelayModel::constant(0.0);
  DelayModel downlink = DelayModel::constant(0.0);
  double compute_time = 0.001;  // controller processing between t_rh and downlink send [s]
  LossModel loss;
  std::set<std::uint64_t> forced_losses;
  ForcedBursts forced_bursts;
  double timeout = 0.030;       // tau_o [s]
  bool dilate = true;           // equalize the actuation delay to Ts

  void validate(double Ts) const;
};

// Timestamps of one control cycle. t_rr is empty when the downlink packet was
// never delivered.
struct CycleTiming {
  std::uint64_t k = 0;
  Nanos t_m{0};
  Nanos t_rh{0};
  std::optional<Nanos> t_rr;
  Nanos d_c3{0};
  Nanos t_a{0};
  bool eps = true;
};

struct CycleOutcome {
  Nanos t_rh{0};
  std::optional<Nanos> t_rr;
};

// Discrete-event model of the asymmetric link. One instance per run; every
// cycle consumes exactly four uniforms from the stream (uplink delay, downlink
// delay, loss draw, Markov transition), so configurations sharing a seed are
// coupled through common random numbers.
class Channel {
 public:
  Channel(ChannelConfig cfg, double Ts, std::uint64_t seed);

  // Cycles must be sampled in increasing order of k.
  CycleOutcome sample_cycle(std::uint64_t k, Nanos t_m);

  const ChannelConfig& config() const { return cfg_; }

 private:
  ChannelConfig cfg_;
  Nanos Ts_;
  std::mt19937_64 rng_;
  bool bad_state_ = false;
};

// eps(k) = 1 iff never delivered or t_rr - t_m >= tau_o.
bool classify_loss(const std::optional<Nanos>& t_rr, Nanos t_m, Nanos timeout);

struct Dilation {
  Nanos d_c3;
  Nanos t_a;
};

// d_c3 = Ts - (t_rr - t_m), t_a = t_rr + d_c3. Throws ContractError for a lost
// packet or one that arrived at or after t_m + Ts.
Dilation dilate_actuation(Nanos t_m, const std::optional<Nanos>& t_rr, Nanos Ts);

// Per-cycle loss indicators plus the current run of consecutive losses.
class LossRecord {
 public:
  void push(bool eps);
  std::uint64_t run_length() const { return run_; }
  std::uint64_t total_losses() const { return losses_; }
  const std::deque<bool>& history() const { return eps_; }

 private:
  std::deque<bool> eps_;
  std::uint64_t run_ = 0;
  std::uint64_t losses_ = 0;
};

}  // namespace twipr
