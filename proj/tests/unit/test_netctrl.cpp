#include "twipr/errors.hpp"
#include "twipr/lqr.hpp"
#include "twipr/netctrl.hpp"

#include <doctest.h>

#include <cmath>
#include <random>
#include <set>
#include <vector>

using namespace twipr;

namespace {

constexpr double kTs = 0.035;

struct Fixture {
  RobotParams params;
  LinearModel lin = make_linear_model(params, kTs);
  GainMatrix K = lqr_gain(lin.Ad, lin.Bd, LqrWeights::reference_weights().Q,
                          LqrWeights::reference_weights().R)
                     .gain();
};

const Fixture& fx() {
  static const Fixture f;
  return f;
}

double max_gap(const ControlMatrix& a, const ControlMatrix& b) {
  return (a.columns - b.columns).cwiseAbs().maxCoeff();
}

// Zero-order-hold discretization of the linearized model by fine RK4 on x' = Ax + Bu.
std::pair<StateMatrix, InputMatrix> exact_discretization(const ContinuousModel& m, double Ts) {
  auto step = [&](StateVector x, const InputVector& u) {
    const int n = 2000;
    const double h = Ts / n;
    for (int i = 0; i < n; ++i) {
      const StateVector k1 = m.A * x + m.B * u;
      const StateVector k2 = m.A * (x + 0.5 * h * k1) + m.B * u;
      const StateVector k3 = m.A * (x + 0.5 * h * k2) + m.B * u;
      const StateVector k4 = m.A * (x + h * k3) + m.B * u;
      x += h / 6 * (k1 + 2 * k2 + 2 * k3 + k4);
    }
    return x;
  };
  StateMatrix Ad;
  InputMatrix Bd;
  for (int j = 0; j < 6; ++j) Ad.col(j) = step(StateVector::Unit(j), InputVector::Zero());
  for (int j = 0; j < 2; ++j) Bd.col(j) = step(StateVector::Zero(), InputVector::Unit(j));
  return {Ad, Bd};
}

StateVector random_state(std::mt19937_64& rng, double scale) {
  std::uniform_real_distribution<double> d(-scale, scale);
  StateVector x;
  for (int i = 0; i < 6; ++i) x(i) = d(rng);
  return x;
}

struct LoopResult {
  std::vector<ControlMatrix> matrices;
  std::vector<InputVector> applied;
  std::vector<int> omega;
};

// Exact-linear networked loop with perfect measurements and dilated actuation:
// the decision of cycle k acts over [t_m^{k+1}, t_m^{k+2}).
LoopResult linear_loop(const StateVector& x0, int cycles, const std::set<int>& losses,
                       int M = 3) {
  const Fixture& f = fx();
  NetworkedController ctrl(NetCtrlConfig{M, Predictor::linear, 8}, f.K, f.lin, f.params, 0.0,
                           true);
  RobotBuffer buf(M);
  StateVector x = x0;
  InputVector active = InputVector::Zero();
  int echo = 0;
  LoopResult r;
  for (int k = 0; k < cycles; ++k) {
    const ControlMatrix m = ctrl.compute(k, x, echo, {});
    const bool eps = losses.contains(k);
    const RobotDecision d = buf.step(eps ? std::nullopt : std::optional(m), eps);
    echo = d.omega;
    r.matrices.push_back(m);
    r.applied.push_back(d.input);
    r.omega.push_back(d.omega);
    x = f.lin.Ad * x + f.lin.Bd * active;
    active = d.input;
  }
  return r;
}

}  // namespace

TEST_CASE("prediction over one sampling period") {
  const Fixture& f = fx();
  CHECK(predict_nonlinear(StateVector::Zero(), InputVector::Zero(), kTs, f.params) ==
        StateVector::Zero());

  StateVector x;
  x << 0.3, 0.1, 1.0, -0.4, 0.2, 0.5;
  const InputVector u(1.5, -0.5);
  CHECK((predict_nonlinear(x, u, kTs, f.params) - integrate(x, u, kTs, f.params))
            .cwiseAbs()
            .maxCoeff() <= 1e-10);

  // One Euler step differs by O(Ts^2).
  auto euler_gap = [&](double Ts) {
    return (predict_nonlinear(x, u, Ts, f.params) - (x + Ts * dynamics(x, u, f.params)))
        .cwiseAbs()
        .maxCoeff();
  };
  const double ratio = euler_gap(kTs) / euler_gap(kTs / 2);
  CHECK(ratio > 3.0);
  CHECK(ratio < 5.0);
}

TEST_CASE("linear control matrix") {
  const Fixture& f = fx();
  SUBCASE("zero state and input give zero columns") {
    const ControlMatrix m = build_control_matrix_linear(StateVector::Zero(), InputVector::Zero(),
                                                        f.K, f.lin.Ad, f.lin.Bd, 0.02, 3);
    CHECK(m.columns.cols() == 4);
    CHECK(m.columns.isZero(0.0));
  }
  SUBCASE("M = 0 is one recursion step") {
    StateVector x;
    x << 0.1, 0.02, -0.3, 0.1, 0.01, 0.0;
    const InputVector ud(0.4, -0.2);
    const ControlMatrix m = build_control_matrix_linear(x, ud, f.K, f.lin.Ad, f.lin.Bd, 0.02, 0);
    CHECK(m.columns.cols() == 1);
    const InputVector expect = -f.K * (f.lin.Ad * x + f.lin.Bd * ud);
    CHECK((m.column(0) - expect).cwiseAbs().maxCoeff() <= 1e-12);
  }
  SUBCASE("matches a hand-rolled recursion") {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 50; ++trial) {
      const StateVector x = random_state(rng, 0.1);
      const InputVector ud = random_state(rng, 1.0).head<2>();
      const ControlMatrix m =
          build_control_matrix_linear(x, ud, f.K, f.lin.Ad, f.lin.Bd, 0.0, 3);
      StateVector xi = x;
      InputVector ui = ud;
      for (int i = 0; i <= 3; ++i) {
        xi = f.lin.Ad * xi + f.lin.Bd * ui;
        ui = -f.K * xi;
        CHECK((m.column(i) - ui).cwiseAbs().maxCoeff() <= 1e-12);
      }
    }
  }
  SUBCASE("backlash copy starts centred on the applied input") {
    StateVector x;
    x << 0.0, 0.05, 0.0, 0.0, 0.0, 0.0;
    const InputVector ud(0.3, 0.3);
    const double delta = 0.5;
    const ControlMatrix m = build_control_matrix_linear(x, ud, f.K, f.lin.Ad, f.lin.Bd, delta, 1);
    const StateVector x1 = f.lin.Ad * x + f.lin.Bd * ud;
    const InputVector u0 = -f.K * x1;
    InputVector eff;
    for (int c = 0; c < 2; ++c) eff(c) = std::clamp(ud(c), u0(c) - delta, u0(c) + delta);
    const StateVector x2 = f.lin.Ad * x1 + f.lin.Bd * eff;
    CHECK((m.column(0) - u0).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK((m.column(1) - (-f.K * x2)).cwiseAbs().maxCoeff() <= 1e-12);
  }
  SUBCASE("without lead the first column acts on the measurement itself") {
    StateVector x;
    x << 0.1, 0.02, -0.3, 0.1, 0.01, 0.0;
    BuildOptions opt;
    opt.lead = false;
    const ControlMatrix m =
        build_control_matrix_linear(x, InputVector::Zero(), f.K, f.lin.Ad, f.lin.Bd, 0.0, 2, opt);
    CHECK((m.column(0) - (-f.K * x)).cwiseAbs().maxCoeff() <= 1e-12);
    const StateVector x1 = f.lin.Ad * x + f.lin.Bd * m.column(0);
    CHECK((m.column(1) - (-f.K * x1)).cwiseAbs().maxCoeff() <= 1e-12);
  }
  SUBCASE("references and saturation") {
    std::vector<StateVector> refs(4, StateVector::Zero());
    for (int i = 0; i < 4; ++i) refs[i](idx::phi) = 0.1 * i;
    BuildOptions opt;
    opt.refs = refs;
    opt.v_max = 0.5;
    StateVector x = StateVector::Zero();
    x(idx::theta) = 0.2;
    const ControlMatrix m =
        build_control_matrix_linear(x, InputVector::Zero(), f.K, f.lin.Ad, f.lin.Bd, 0.0, 3, opt);
    CHECK(m.columns.cwiseAbs().maxCoeff() <= 0.5);
    std::vector<StateVector> short_refs(2, StateVector::Zero());
    opt.refs = short_refs;
    CHECK_THROWS_AS(build_control_matrix_linear(x, InputVector::Zero(), f.K, f.lin.Ad, f.lin.Bd,
                                                0.0, 3, opt),
                    ContractError);
  }
}

TEST_CASE("nonlinear control matrix") {
  const Fixture& f = fx();
  CHECK(build_control_matrix_nonlinear(StateVector::Zero(), InputVector::Zero(), f.K, kTs,
                                       f.params, 3)
            .columns.isZero(0.0));

  const auto [Ad, Bd] = exact_discretization(linearize(f.params), kTs);
  SUBCASE("agrees with the linearized model near the origin") {
    std::mt19937_64 rng(21);
    for (int trial = 0; trial < 20; ++trial) {
      StateVector x = random_state(rng, 1.0);
      x *= 1e-4 / x.norm();
      const ControlMatrix nl =
          build_control_matrix_nonlinear(x, InputVector::Zero(), f.K, kTs, f.params, 3, {}, 200);
      const ControlMatrix li =
          build_control_matrix_linear(x, InputVector::Zero(), f.K, Ad, Bd, 0.0, 3);
      CHECK(max_gap(nl, li) <= 1e-6);
    }
  }
  SUBCASE("differs at large pitch") {
    StateVector x = StateVector::Zero();
    x(idx::theta) = 0.3;
    const ControlMatrix nl =
        build_control_matrix_nonlinear(x, InputVector::Zero(), f.K, kTs, f.params, 3);
    CHECK(max_gap(nl, build_control_matrix_linear(x, InputVector::Zero(), f.K, Ad, Bd, 0.0, 3)) >
          1e-3);
    CHECK(max_gap(nl, build_control_matrix_linear(x, InputVector::Zero(), f.K, f.lin.Ad,
                                                  f.lin.Bd, 0.0, 3)) > 1e-3);
  }
}

TEST_CASE("robot buffer column selection") {
  auto matrix = [](std::uint64_t origin) {
    ControlMatrix m{origin, Eigen::Matrix2Xd(2, 4)};
    for (int c = 0; c < 4; ++c) m.columns.col(c) = InputVector(origin * 10.0 + c, -c);
    return m;
  };
  SUBCASE("fresh matrix applies its first column") {
    RobotBuffer b(3);
    const RobotDecision d = b.step(matrix(0), false);
    CHECK(d.omega == 1);
    CHECK(d.fresh);
    CHECK(d.input == matrix(0).column(0));
  }
  SUBCASE("one loss applies the second column of the previous matrix") {
    RobotBuffer b(3);
    b.step(matrix(4), false);
    const RobotDecision d = b.step(std::nullopt, true);
    CHECK(d.omega == 2);
    CHECK_FALSE(d.fresh);
    CHECK(d.input == matrix(4).column(1));
  }
  SUBCASE("three losses apply the last column for the fourth period") {
    RobotBuffer b(3);
    b.step(matrix(7), false);
    RobotDecision d;
    for (int i = 0; i < 3; ++i) d = b.step(std::nullopt, true);
    CHECK(d.omega == 4);
    CHECK(d.input == matrix(7).column(3));
    CHECK_FALSE(d.degraded);
    d = b.step(std::nullopt, true);
    CHECK(d.omega == 5);
    CHECK(d.degraded);
    CHECK(d.input == matrix(7).column(3));
  }
  SUBCASE("cold start without a matrix applies zero") {
    RobotBuffer b(3);
    const RobotDecision d = b.step(std::nullopt, true);
    CHECK(d.cold);
    CHECK(d.omega == 0);
    CHECK(d.input == InputVector::Zero());
  }
  SUBCASE("contract violations") {
    RobotBuffer b(3);
    CHECK_THROWS_AS(b.step(matrix(0), true), ContractError);
    CHECK_THROWS_AS(b.step(std::nullopt, false), ContractError);
    ControlMatrix wrong{0, Eigen::Matrix2Xd::Zero(2, 2)};
    CHECK_THROWS_AS(b.step(wrong, false), ContractError);
    CHECK_THROWS_AS(RobotBuffer(-1), ConfigError);
  }
  SUBCASE("omega minus one is the current loss run") {
    std::mt19937_64 rng(8);
    std::bernoulli_distribution lose(0.4);
    RobotBuffer b(3);
    std::uint64_t run = 0;
    bool have = false;
    for (std::uint64_t k = 0; k < 5000; ++k) {
      const bool eps = lose(rng);
      const RobotDecision d = b.step(eps ? std::nullopt : std::optional(matrix(k)), eps);
      run = eps ? run + 1 : 0;
      have = have || !eps;
      if (have) {
        CHECK(static_cast<std::uint64_t>(d.omega) - 1 == run);
        CHECK(d.degraded == (run > 3));
      } else {
        CHECK(d.cold);
      }
    }
  }
}

TEST_CASE("controller knows the applied input from the echo") {
  const Fixture& f = fx();
  NetworkedController c(NetCtrlConfig{}, f.K, f.lin, f.params, 0.0, true);
  StateVector x = StateVector::Zero();
  x(idx::theta) = 0.05;
  const ControlMatrix m0 = c.compute(0, x, 0, {});
  CHECK(c.applied_input(1, 1) == m0.column(0));
  CHECK(c.applied_input(3, 3) == m0.column(2));
  CHECK(c.applied_input(4, 4) == m0.column(3));
  CHECK(c.applied_input(5, 5) == m0.column(3));
  CHECK(c.applied_input(1, 0) == InputVector::Zero());
  CHECK(c.idle(1).columns.isZero(0.0));
  CHECK(c.applied_input(2, 1) == InputVector::Zero());
}

TEST_CASE("columns shift by one per cycle on the exact linear plant") {
  StateVector x0;
  x0 << 0.2, 0.05, -0.5, 0.1, 0.02, -0.05;
  const LoopResult r = linear_loop(x0, 100, {});
  double worst = 0.0;
  for (std::size_t k = 0; k + 1 < r.matrices.size(); ++k) {
    for (int i = 0; i < 3; ++i) {
      worst = std::max(worst, (r.matrices[k].column(i + 1) - r.matrices[k + 1].column(i))
                                  .cwiseAbs()
                                  .maxCoeff());
    }
  }
  CHECK(worst <= 1e-9);
}

TEST_CASE("a single loss is invisible on the exact linear plant") {
  StateVector x0;
  x0 << 0.2, 0.05, -0.5, 0.1, 0.02, -0.05;
  const LoopResult clean = linear_loop(x0, 100, {});
  for (int lost : {1, 20, 57}) {
    const LoopResult r = linear_loop(x0, 100, {lost});
    for (std::size_t k = 0; k < clean.applied.size(); ++k) {
      CHECK((r.applied[k] - clean.applied[k]).cwiseAbs().maxCoeff() <= 1e-9);
    }
  }
  // Up to M consecutive losses are covered as well.
  const LoopResult burst = linear_loop(x0, 100, {30, 31, 32});
  for (std::size_t k = 0; k < clean.applied.size(); ++k) {
    CHECK((burst.applied[k] - clean.applied[k]).cwiseAbs().maxCoeff() <= 1e-9);
  }
  CHECK(burst.omega[32] == 4);

  // A loss before any matrix arrived has nothing to fall back on.
  const LoopResult cold = linear_loop(x0, 3, {0});
  CHECK(cold.applied[0] == InputVector::Zero());
  CHECK(cold.applied[0] != clean.applied[0]);
}

TEST_CASE("zero is absorbing") {
  const LoopResult r = linear_loop(StateVector::Zero(), 50, {5, 6, 7, 8, 9});
  for (const auto& m : r.matrices) CHECK(m.columns.isZero(0.0));
  for (const auto& u : r.applied) CHECK(u == InputVector::Zero());
}
