#include "twipr/netctrl.hpp"

#include "twipr/errors.hpp"

#include <algorithm>
#include <string>
#include <tuple>

namespace twipr {

namespace {

constexpr std::size_t kSentHistory = 512;

const StateVector& ref_at(const BuildOptions& opt, int i) {
  static const StateVector zero = StateVector::Zero();
  return opt.refs.empty() ? zero : opt.refs[static_cast<std::size_t>(i)];
}

void check_refs(const BuildOptions& opt, int M) {
  if (M < 0) throw ContractError("control matrix horizon must be >= 0");
  if (!opt.refs.empty() && opt.refs.size() != static_cast<std::size_t>(M + 1)) {
    throw ContractError("control matrix: need M + 1 reference samples");
  }
}

}  // namespace

StateVector predict_nonlinear(const StateVector& x_meas, const InputVector& u, double Ts,
                              const RobotParams& p, int substeps) {
  return integrate(x_meas, u, Ts, p, substeps);
}

ControlMatrix build_control_matrix_linear(const StateVector& x_meas, const InputVector& u_d,
                                          const GainMatrix& K, const StateMatrix& Ad,
                                          const InputMatrix& Bd, double backlash_half_width,
                                          int M, const BuildOptions& opt) {
  check_refs(opt, M);
  ControlMatrix out{opt.origin, Eigen::Matrix2Xd(2, M + 1)};
  BacklashState bl = BacklashState::centered(u_d, backlash_half_width);
  StateVector x = x_meas;
  InputVector u = u_d;
  for (int i = 0; i <= M; ++i) {
    if (opt.lead || i > 0) {
      InputVector u_eff;
      std::tie(u_eff, bl) = apply_backlash(u, bl);
      x = Ad * x + Bd * u_eff;
    }
    u = saturate(-K * (x - ref_at(opt, i)), opt.v_max);
    if (!opt.lead && i == 0) bl = BacklashState::centered(u, backlash_half_width);
    out.columns.col(i) = u;
  }
  return out;
}

ControlMatrix build_control_matrix_nonlinear(const StateVector& x_meas, const InputVector& u_d,
                                             const GainMatrix& K, double Ts,
                                             const RobotParams& p, int M,
                                             const BuildOptions& opt, int substeps) {
  check_refs(opt, M);
  ControlMatrix out{opt.origin, Eigen::Matrix2Xd(2, M + 1)};
  StateVector x = x_meas;
  InputVector u = u_d;
  for (int i = 0; i <= M; ++i) {
    if (opt.lead || i > 0) x = predict_nonlinear(x, u, Ts, p, substeps);
    u = saturate(-K * (x - ref_at(opt, i)), opt.v_max);
    out.columns.col(i) = u;
  }
  return out;
}

RobotBuffer::RobotBuffer(int horizon) : horizon_(horizon) {
  if (horizon < 0) throw ConfigError("netctrl.M must be >= 0");
}

RobotDecision RobotBuffer::step(std::optional<ControlMatrix> arrival, bool eps) {
  if (eps == arrival.has_value()) {
    throw ContractError("RobotBuffer::step: arrival must be present iff eps(k) = 0");
  }
  if (arrival && arrival->horizon() != horizon_) {
    throw ContractError("RobotBuffer::step: matrix horizon " +
                        std::to_string(arrival->horizon()) + " does not match M = " +
                        std::to_string(horizon_));
  }
  eps_window_.push_front(eps);
  if (eps_window_.size() > static_cast<std::size_t>(horizon_ + 1)) eps_window_.pop_back();

  RobotDecision d;
  if (!eps) {
    current_ = std::move(arrival);
    since_last_ = 0;
    d.fresh = true;
  } else if (current_) {
    ++since_last_;
  }
  if (!current_) {
    d.cold = true;
    return d;
  }

  // omega = 1 + min{ l in 0..M : eps(k - l) = 0 }
  for (std::size_t l = 0; l < eps_window_.size(); ++l) {
    if (!eps_window_[l]) {
      d.omega = static_cast<int>(l) + 1;
      d.input = current_->column(d.omega - 1);
      return d;
    }
  }
  d.omega = static_cast<int>(since_last_) + 1;
  d.degraded = true;
  d.input = current_->column(horizon_);
  return d;
}

NetworkedController::NetworkedController(NetCtrlConfig cfg, GainMatrix K, LinearModel lin,
                                         RobotParams params, double backlash_half_width,
                                         bool lead)
    : cfg_(cfg),
      K_(K),
      lin_(lin),
      params_(params),
      backlash_(backlash_half_width),
      lead_(lead) {
  if (cfg_.horizon < 0 || cfg_.horizon > 254) throw ConfigError("netctrl.M must be in [0, 254]");
}

InputVector NetworkedController::applied_input(std::uint64_t k, int omega_echo) const {
  if (omega_echo <= 0 || k == 0) return InputVector::Zero();
  const auto back = static_cast<std::uint64_t>(omega_echo);  // (k-1) - (omega-1)
  if (back > k) return InputVector::Zero();
  const auto it = sent_.find(k - back);
  if (it == sent_.end()) return InputVector::Zero();
  const int col = std::min(omega_echo, cfg_.horizon + 1) - 1;
  return it->second.col(col);
}

ControlMatrix NetworkedController::compute(std::uint64_t k, const StateVector& x_meas,
                                           int omega_echo, std::span<const StateVector> refs) {
  BuildOptions opt;
  opt.origin = k;
  opt.v_max = params_.max_voltage;
  opt.refs = refs;
  opt.lead = lead_;
  const InputVector u_d = applied_input(k, omega_echo);
  ControlMatrix m =
      cfg_.predictor == Predictor::linear
          ? build_control_matrix_linear(x_meas, u_d, K_, lin_.Ad, lin_.Bd, backlash_,
                                        cfg_.horizon, opt)
          : build_control_matrix_nonlinear(x_meas, u_d, K_, lin_.Ts, params_, cfg_.horizon,
                                           opt, cfg_.substeps);
  remember(m);
  return m;
}

ControlMatrix NetworkedController::idle(std::uint64_t k) {
  ControlMatrix m{k, Eigen::Matrix2Xd::Zero(2, cfg_.horizon + 1)};
  remember(m);
  return m;
}

void NetworkedController::remember(const ControlMatrix& m) {
  sent_[m.origin] = m.columns;
  while (sent_.size() > kSentHistory) sent_.erase(sent_.begin());
}

}  // namespace twipr
