#include <cmath>
#include <complex>
#include <numbers>
#include <random>

#include <catch2/catch_amalgamated.hpp>

#include "vvo/convexity.hpp"
#include "vvo/feeder.hpp"
#include "vvo/feeder_json.hpp"
#include "vvo/powerflow.hpp"

using namespace vvo;

namespace {

const std::string kDataDir = VVO_DATA_DIR;

/// Single-phase two-bus network with one PV at the load bus. The voltage base
/// sqrt(1/1000) kV against a 1 kVA phase base makes ohm and kvar columns read
/// as per-unit.
FeederModel pv_two_bus(double r_pu, double x_pu) {
    FeederModel m;
    m.base_mva = 3e-3;
    m.source_bus = "s";
    m.source_voltage_pu = 1.0;
    const double kv = 0.0316227766016838;
    m.buses = {{"s", PhaseSet::from_string("a"), kv}, {"l", PhaseSet::from_string("a"), kv}};
    Branch br;
    br.id = "s-l";
    br.from_bus = "s";
    br.to_bus = "l";
    br.phases = PhaseSet::from_string("a");
    br.z_ohm[0][0] = Complex(r_pu, x_pu);
    m.branches = {br};
    PvInverter pv;
    pv.bus = "l";
    pv.phases = PhaseSet::from_string("a");
    pv.rated_kva = 1.2;  // 1.2 pu of the 1 kVA phase base
    pv.rated_kw = 1.0;
    m.pvs = {pv};
    m.validate();
    return m;
}

DispatchSnapshot snapshot(const FeederModel& m, Complex load_pu, double pv_p_kw, double pv_q_kvar) {
    DispatchSnapshot snap;
    snap.loads = InjectionSet::zeros(m);
    snap.loads.add_constant_power(m.bus_index.at("l"), 0, load_pu);
    snap.pv_p_kw = {pv_p_kw};
    snap.pv_q_kvar = {pv_q_kvar};
    return snap;
}

/// Closed-form |I|^2 as a function of the PV reactive injection q (pu),
/// independent of the solver: the receiving voltage solves the two-bus
/// quadratic with net reactive draw Q_L - q.
double closed_form_i2(double r, double x, double p_load, double q_load, double q_pv) {
    const double p = p_load, q = q_load - q_pv;
    const double a = r * p + x * q;
    const double b = x * p - r * q;
    const double c = 1.0 - 2.0 * a;
    const double disc = c * c - 4.0 * (a * a + b * b);
    const double v2sq = (c + std::sqrt(disc)) / 2.0;
    return (p * p + q * q) / v2sq;
}

}  // namespace

TEST_CASE("convexity denominator in closed form", "[convexity]") {
    CHECK(single_phase_condition(0.05, 0.1, 0.0, 0.0, 1.0) == 1.0);
    CHECK(single_phase_condition(0.0, 0.0, 0.7, 0.3, 1.0) == 1.0);
    CHECK_THAT(single_phase_condition(0.01, 0.02, 0.5, 0.2, 1.0),
               Catch::Matchers::WithinAbs(0.982, 1e-12));
    REQUIRE_THROWS_AS(single_phase_condition(0.01, 0.02, 0.5, 0.2, 0.0), std::invalid_argument);
}

TEST_CASE("numeric second derivative is positive where the condition holds", "[convexity]") {
    const FeederModel m = pv_two_bus(0.02, 0.06);
    const PowerFlowSolver solver(m);
    const DispatchSnapshot snap = snapshot(m, {0.5, 0.25}, 0.3, 0.1);

    // Condition value at the operating point, from a direct solve.
    const PowerFlowSolution sol = solver.solve(snapshot_injections(m, snap), snap.taps);
    const Complex s_send = sol.v[0][0] * std::conj(sol.branch_i[0][0]);
    const double d = single_phase_condition(0.02, 0.06, s_send.real(), s_send.imag(),
                                            std::abs(sol.v[1][0]));
    REQUIRE(d > 0.1);
    CHECK(numeric_second_derivative(solver, snap, 0, 1e-3 * 1.2) >= 0.0);
}

TEST_CASE("near-lossless branch reproduces the quadratic current law", "[convexity]") {
    // Tiny impedance keeps V near 1, where |I|^2 = P^2 + (Q_L - q)^2 up to
    // O(z): the second derivative w.r.t. q approaches 2.
    const FeederModel m = pv_two_bus(1e-5, 1e-5);
    const PowerFlowSolver solver(m);
    const DispatchSnapshot snap = snapshot(m, {0.5, 0.2}, 0.0, 0.0);
    const double fd = numeric_second_derivative(solver, snap, 0, 1e-3);
    CHECK_THAT(fd, Catch::Matchers::WithinRel(2.0, 1e-3));

    // Cross-check against the closed-form current expression differentiated
    // numerically at much finer spacing.
    const double h = 1e-5;
    const double cf = (closed_form_i2(1e-5, 1e-5, 0.5, 0.2, h) -
                       2 * closed_form_i2(1e-5, 1e-5, 0.5, 0.2, 0.0) +
                       closed_form_i2(1e-5, 1e-5, 0.5, 0.2, -h)) / (h * h);
    CHECK_THAT(fd, Catch::Matchers::WithinRel(cf, 1e-4));
}

TEST_CASE("finite-difference estimates are Richardson-consistent", "[convexity]") {
    const FeederModel m = pv_two_bus(0.02, 0.05);
    const PowerFlowSolver solver(m);
    const DispatchSnapshot snap = snapshot(m, {0.4, 0.15}, 0.2, 0.05);
    const double f_h = numeric_second_derivative(solver, snap, 0, 2e-3);
    const double f_h2 = numeric_second_derivative(solver, snap, 0, 1e-3);
    CHECK_THAT(f_h, Catch::Matchers::WithinRel(f_h2, 5e-4));
    REQUIRE_THROWS_AS(numeric_second_derivative(solver, snap, 0, 0.0), std::invalid_argument);
}

TEST_CASE("condition and numeric curvature agree across random operating points", "[convexity]") {
    std::mt19937 rng(31);
    std::uniform_real_distribution<double> rd(0.005, 0.06), pd(0.1, 0.7), qd(-0.2, 0.35);
    int checked = 0;
    for (int k = 0; k < 60; ++k) {
        const double r = rd(rng), x = 1.5 * rd(rng);
        const FeederModel m = pv_two_bus(r, x);
        const PowerFlowSolver solver(m);
        const double q_pv = std::clamp(qd(rng), -1.0, 1.0);
        const DispatchSnapshot snap = snapshot(m, {pd(rng), qd(rng)}, 0.0, q_pv);
        PowerFlowSolution sol;
        try {
            sol = solver.solve(snapshot_injections(m, snap), snap.taps);
        } catch (const ConvergenceError&) {
            continue;
        }
        const Complex s = sol.v[0][0] * std::conj(sol.branch_i[0][0]);
        const double d = single_phase_condition(r, x, s.real(), s.imag(), std::abs(sol.v[1][0]));
        if (d <= 0.1) continue;
        ++checked;
        REQUIRE(numeric_second_derivative(solver, snap, 0, 1e-3) >= -1e-6);
    }
    REQUIRE(checked > 30);
}

TEST_CASE("assumption signs behave at no load and under stress", "[convexity]") {
    const FeederModel m = pv_two_bus(0.02, 0.06);
    const PowerFlowSolver solver(m);

    SECTION("no load on a near-lossless line: all second derivatives are tiny") {
        // The quadratic loss terms contribute exactly 2r and 2x to the flow
        // curvatures, so the vanishing case needs a near-zero impedance.
        const FeederModel ll = pv_two_bus(1e-4, 2e-4);
        const PowerFlowSolver ll_solver(ll);
        const DispatchSnapshot snap = snapshot(ll, {0.0, 0.0}, 0.0, 0.0);
        const AssumptionSigns s = assumption_check(ll_solver, snap, 0, 1e-3);
        CHECK(std::abs(s.d2y_dq2) < 1e-3);
        CHECK(std::abs(s.d2p_dq2) < 1e-3);
        CHECK(std::abs(s.d2q_dq2) < 1e-3);
    }
    SECTION("loaded: voltage squared is concave in q") {
        const DispatchSnapshot snap = snapshot(m, {0.6, 0.3}, 0.0, 0.0);
        const AssumptionSigns s = assumption_check(solver, snap, 0, 1e-3);
        CHECK(s.d2y_dq2 <= 1e-6);
    }
    SECTION("central difference is symmetric in the perturbation ordering") {
        const DispatchSnapshot snap = snapshot(m, {0.5, 0.2}, 0.1, 0.05);
        const AssumptionSigns s1 = assumption_check(solver, snap, 0, 1e-3);
        const AssumptionSigns s2 = assumption_check(solver, snap, 0, 1e-3);
        CHECK(s1.d2y_dq2 == s2.d2y_dq2);
        CHECK(s1.d2p_dq2 == s2.d2p_dq2);
    }
}

TEST_CASE("assumption check on the 4-bus fixture at node 4", "[convexity]") {
    const FeederModel m = load_feeder(kDataDir + "/feeders/ieee4.json");
    const PowerFlowSolver solver(m);
    DispatchSnapshot snap;
    snap.loads = build_injections(m, {1.0, 1.0}, {0.0, 0.0}, {0.0, 0.0});
    snap.pv_p_kw = {0.0, 0.0};
    snap.pv_q_kvar = {0.0, 0.0};
    const AssumptionSigns s = assumption_check(solver, snap, 1, 3.6);
    CHECK(s.d2y_dq2 <= 1e-6);
}

TEST_CASE("three-phase loss expansion reduces to the balanced diagonal case", "[convexity]") {
    ComplexMat3 z{};
    z[0][0] = {0.05, 0.12};
    z[1][1] = {0.05, 0.12};
    z[2][2] = {0.05, 0.12};
    const double p = 0.4, q = 0.2, y = 1.0;
    const Complex loss = three_phase_loss_expansion(z, p, 0, 0, q, 0, 0, y);
    const Complex expect = (p * p + q * q) * (z[0][0] + z[1][1] + z[2][2]) / y;
    CHECK_THAT(std::abs(loss - expect), Catch::Matchers::WithinAbs(0.0, 1e-15));

    CHECK(std::abs(three_phase_loss_expansion(z, 0, 0, 0, 0, 0, 0, 1.0)) == 0.0);
    REQUIRE_THROWS_AS(three_phase_loss_expansion(z, 1, 0, 0, 1, 0, 0, 0.0),
                      std::invalid_argument);
}

namespace {

/// Phase currents for the expansion's conventions: phase A is the reference,
/// B leads by 120 degrees and C lags by 120, all at voltage magnitude sqrt(y).
std::array<Complex, 3> currents_at_120(double p, double dp1, double dp2, double q, double dq1,
                                       double dq2, double y) {
    const double v = std::sqrt(y);
    const Complex sa(p, q), sb(p + dp1, q + dq1), sc(p + dp2, q + dq2);
    const Complex va = std::polar(v, 0.0);
    const Complex vb = std::polar(v, 2.0 * std::numbers::pi / 3.0);
    const Complex vc = std::polar(v, -2.0 * std::numbers::pi / 3.0);
    return {std::conj(sa / va), std::conj(sb / vb), std::conj(sc / vc)};
}

Complex direct_loss(const ComplexMat3& z, const std::array<Complex, 3>& i) {
    Complex loss{};
    for (int m = 0; m < 3; ++m)
        for (int n = 0; n < 3; ++n) loss += z[m][n] * i[m] * std::conj(i[n]);
    return loss;
}

ComplexMat3 coupled_z() {
    ComplexMat3 z{};
    z[0][0] = {0.3465, 1.0179};
    z[1][1] = {0.3375, 1.0478};
    z[2][2] = {0.3414, 1.0348};
    z[0][1] = z[1][0] = Complex(0.1560, 0.5017);
    z[0][2] = z[2][0] = Complex(0.1580, 0.4236);
    z[1][2] = z[2][1] = Complex(0.1535, 0.3849);
    return z;
}

}  // namespace

TEST_CASE("loss expansion matches the phasor sum under the 120-degree assumption",
          "[convexity]") {
    const ComplexMat3 z = coupled_z();
    const double p = 0.5, q = 0.22, y = 0.98;

    SECTION("balanced flows match exactly") {
        const Complex expanded = three_phase_loss_expansion(z, p, 0, 0, q, 0, 0, y);
        const Complex direct = direct_loss(z, currents_at_120(p, 0, 0, q, 0, 0, y));
        CHECK_THAT(std::abs(expanded - direct), Catch::Matchers::WithinAbs(0.0, 1e-12));
    }
    SECTION("small imbalances agree to second order") {
        const double dp1 = 0.02, dp2 = -0.015, dq1 = 0.01, dq2 = 0.008;
        const Complex expanded = three_phase_loss_expansion(z, p, dp1, dp2, q, dq1, dq2, y);
        const Complex direct = direct_loss(z, currents_at_120(p, dp1, dp2, q, dq1, dq2, y));
        const double scale = std::abs(z[0][0]) * (dp1 * dp1 + dp2 * dp2 + dq1 * dq1 + dq2 * dq2 +
                                                  2 * (std::abs(dp1 * dp2) + std::abs(dq1 * dq2)));
        CHECK(std::abs(expanded - direct) < 10.0 * scale / y);
    }
}

TEST_CASE("loss expansion is invariant under consistent phase relabeling", "[convexity]") {
    const ComplexMat3 z = coupled_z();
    const double p = 0.45, q = 0.2, y = 1.0;
    const double dp1 = 0.004, dp2 = -0.003, dq1 = 0.002, dq2 = 0.0015;

    // Relabel (a,b,c) -> (b,c,a): the new reference phase carries P+dp1, and
    // the impedance matrix permutes rows and columns accordingly.
    ComplexMat3 zr{};
    const int perm[3] = {1, 2, 0};
    for (int m = 0; m < 3; ++m)
        for (int n = 0; n < 3; ++n) zr[m][n] = z[perm[m]][perm[n]];
    const Complex orig = three_phase_loss_expansion(z, p, dp1, dp2, q, dq1, dq2, y);
    const Complex relabeled = three_phase_loss_expansion(
        zr, p + dp1, dp2 - dp1, -dp1, q + dq1, dq2 - dq1, -dq1, y);
    // The expansion drops quadratic imbalance terms, so relabeling agrees to
    // the same order.
    const double q2 = dp1 * dp1 + dp2 * dp2 + dq1 * dq1 + dq2 * dq2;
    CHECK(std::abs(orig - relabeled) < 50.0 * q2);
}

TEST_CASE("expansion error grows smoothly with imposed angle error", "[convexity]") {
    const ComplexMat3 z = coupled_z();
    const double p = 0.5, q = 0.2, y = 1.0;
    const Complex expanded = three_phase_loss_expansion(z, p, 0, 0, q, 0, 0, y);
    double prev_err = 0.0;
    for (double eps_deg : {0.0, 1.0, 2.0, 4.0}) {
        const double eps = eps_deg * std::numbers::pi / 180.0;
        const double v = std::sqrt(y);
        const std::array<Complex, 3> i = {
            std::conj(Complex(p, q) / std::polar(v, 0.0)),
            std::conj(Complex(p, q) / std::polar(v, 2.0 * std::numbers::pi / 3.0 + eps)),
            std::conj(Complex(p, q) / std::polar(v, -2.0 * std::numbers::pi / 3.0 - eps))};
        const double err = std::abs(direct_loss(z, i) - expanded);
        CHECK(err >= prev_err - 1e-12);
        prev_err = err;
    }
}
