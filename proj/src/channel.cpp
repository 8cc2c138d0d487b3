#include "twipr/channel.hpp"

#include "twipr/errors.hpp"

#include <cmath>

namespace twipr {

Nanos to_nanos(double seconds) { return Nanos(std::llround(seconds * 1e9)); }

double to_seconds(Nanos t) { return static_cast<double>(t.count()) * 1e-9; }

double DelayModel::sample(double u) const {
  switch (kind) {
    case Kind::constant:
      return a;
    case Kind::uniform:
      return a + (b - a) * u;
    case Kind::shifted_exponential:
      return a - b * std::log1p(-u);
  }
  return a;
}

void DelayModel::validate(const std::string& name) const {
  if (!std::isfinite(a) || !std::isfinite(b) || a < 0.0 || b < 0.0) {
    throw ConfigError("channel." + name + ": delay parameters must be finite and >= 0");
  }
  if (kind == Kind::uniform && b < a) {
    throw ConfigError("channel." + name + ": uniform delay needs max >= min");
  }
}

double LossModel::stationary_loss_rate() const {
  switch (kind) {
    case Kind::none:
      return 0.0;
    case Kind::bernoulli:
      return p;
    case Kind::gilbert_elliott: {
      const double denom = p_good_to_bad + p_bad_to_good;
      const double pi_bad = denom > 0.0 ? p_good_to_bad / denom : 0.0;
      return pi_bad * loss_in_bad + (1.0 - pi_bad) * loss_in_good;
    }
  }
  return 0.0;
}

void LossModel::validate() const {
  for (double v : {p, p_good_to_bad, p_bad_to_good, loss_in_good, loss_in_bad}) {
    if (!(v >= 0.0 && v <= 1.0)) throw ConfigError("channel.loss: probabilities must lie in [0, 1]");
  }
}

bool ForcedBursts::covers(std::uint64_t k) const {
  if (period == 0 || length == 0 || k < start) return false;
  return (k - start) % period < length;
}

void ChannelConfig::validate(double Ts) const {
  uplink.validate("uplink");
  downlink.validate("downlink");
  loss.validate();
  if (!(compute_time >= 0.0)) throw ConfigError("channel.compute_time must be >= 0");
  if (!(timeout > 0.0 && timeout < Ts)) {
    throw ConfigError("channel.timeout must satisfy 0 < timeout < Ts");
  }
}

Channel::Channel(ChannelConfig cfg, double Ts, std::uint64_t seed)
    : cfg_(std::move(cfg)), Ts_(to_nanos(Ts)), rng_(seed) {
  cfg_.validate(Ts);
}

CycleOutcome Channel::sample_cycle(std::uint64_t k, Nanos t_m) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const double u_up = unif(rng_);
  const double u_down = unif(rng_);
  const double u_loss = unif(rng_);
  const double u_markov = unif(rng_);

  CycleOutcome out;
  out.t_rh = t_m + to_nanos(cfg_.uplink.sample(u_up));
  const Nanos t_send = out.t_rh + to_nanos(cfg_.compute_time);

  bool lost = false;
  switch (cfg_.loss.kind) {
    case LossModel::Kind::none:
      break;
    case LossModel::Kind::bernoulli:
      lost = u_loss < cfg_.loss.p;
      break;
    case LossModel::Kind::gilbert_elliott:
      bad_state_ = bad_state_ ? !(u_markov < cfg_.loss.p_bad_to_good)
                              : (u_markov < cfg_.loss.p_good_to_bad);
      lost = u_loss < (bad_state_ ? cfg_.loss.loss_in_bad : cfg_.loss.loss_in_good);
      break;
  }
  if (cfg_.forced_losses.contains(k) || cfg_.forced_bursts.covers(k)) lost = true;
  if (!lost) out.t_rr = t_send + to_nanos(cfg_.downlink.sample(u_down));
  return out;
}

bool classify_loss(const std::optional<Nanos>& t_rr, Nanos t_m, Nanos timeout) {
  return !t_rr || (*t_rr - t_m) >= timeout;
}

Dilation dilate_actuation(Nanos t_m, const std::optional<Nanos>& t_rr, Nanos Ts) {
  if (!t_rr) throw ContractError("dilate_actuation: cycle was lost");
  const Nanos d_c3 = Ts - (*t_rr - t_m);
  if (d_c3 <= Nanos(0)) {
    throw ContractError("dilate_actuation: packet arrived after t_m + Ts");
  }
  return {d_c3, *t_rr + d_c3};
}

void LossRecord::push(bool eps) {
  eps_.push_back(eps);
  if (eps) {
    ++run_;
    ++losses_;
  } else {
    run_ = 0;
  }
}

}  // namespace twipr
