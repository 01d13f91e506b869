#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include <catch2/catch_amalgamated.hpp>

#include "vvo/feeder.hpp"
#include "vvo/feeder_json.hpp"
#include "vvo/powerflow.hpp"

using namespace vvo;
using nlohmann::json;

namespace {

const std::string kDataDir = VVO_DATA_DIR;

/// Closed-form receiving-end solution of the single-phase two-bus feeder with
/// a constant-power load: the voltage magnitude solves a quadratic in |V|^2.
/// Independent of the sweep solver.
struct TwoBusOracle {
    double v2_mag;
    double i_mag;
    Complex loss;
};

TwoBusOracle two_bus_oracle(double v1, double r, double x, double p, double q) {
    const double a = r * p + x * q;
    const double b = x * p - r * q;
    const double c = v1 * v1 - 2.0 * a;
    const double disc = c * c - 4.0 * (a * a + b * b);
    REQUIRE(disc >= 0.0);
    const double v2sq = (c + std::sqrt(disc)) / 2.0;
    const double i2 = (p * p + q * q) / v2sq;
    return {std::sqrt(v2sq), std::sqrt(i2), Complex(r, x) * i2};
}

/// Single-phase two-bus model working directly in per-unit: the voltage base
/// sqrt(1/1000) kV with a 1 kVA phase base makes both the ohm and kVA columns
/// read as per-unit numbers.
FeederModel two_bus_model(double r_pu, double x_pu) {
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
    m.validate();
    return m;
}

InjectionSet constant_power_at(const FeederModel& m, const std::string& bus, int phase,
                               Complex s_pu) {
    InjectionSet inj = InjectionSet::zeros(m);
    inj.add_constant_power(m.bus_index.at(bus), phase, s_pu);
    return inj;
}

}  // namespace

TEST_CASE("no-load feeder solves flat with zero loss", "[powerflow]") {
    const FeederModel m = load_feeder(kDataDir + "/feeders/ieee4.json");
    const PowerFlowSolution sol = solve_power_flow(m, InjectionSet::zeros(m), {});
    for (std::size_t b = 0; b < m.buses.size(); ++b) {
        for (int p = 0; p < kPhaseCount; ++p) {
            if (!m.buses[b].phases.has(p)) continue;
            CHECK_THAT(std::abs(sol.v[b][p]), Catch::Matchers::WithinAbs(1.0, 1e-12));
        }
    }
    // Angles are 0, -120, +120 degrees.
    CHECK_THAT(std::arg(sol.v[3][1]) * 180.0 / std::numbers::pi,
               Catch::Matchers::WithinAbs(-120.0, 1e-9));
    CHECK_THAT(std::arg(sol.v[3][2]) * 180.0 / std::numbers::pi,
               Catch::Matchers::WithinAbs(120.0, 1e-9));
    CHECK(std::abs(sol.total_loss) < 1e-15);
    for (const auto& i3 : sol.branch_i)
        for (const Complex& i : i3) CHECK(std::abs(i) < 1e-15);
}

TEST_CASE("two-bus solve matches the closed-form oracle", "[powerflow]") {
    const double r = 0.01, x = 0.02;
    const FeederModel m = two_bus_model(r, x);
    const Complex s_load(0.5, 0.2);

    const PowerFlowSolution sol = solve_power_flow(m, constant_power_at(m, "l", 0, s_load), {});
    const TwoBusOracle expect = two_bus_oracle(1.0, r, x, s_load.real(), s_load.imag());

    CHECK_THAT(std::abs(sol.v[1][0]), Catch::Matchers::WithinAbs(expect.v2_mag, 1e-8));
    CHECK_THAT(std::abs(sol.branch_i[0][0]), Catch::Matchers::WithinAbs(expect.i_mag, 1e-8));
    CHECK_THAT(sol.total_loss.real(), Catch::Matchers::WithinAbs(expect.loss.real(), 1e-8));
    CHECK_THAT(sol.total_loss.imag(), Catch::Matchers::WithinAbs(expect.loss.imag(), 1e-8));
}

TEST_CASE("two-bus oracle agreement across random operating points", "[powerflow]") {
    std::mt19937 rng(7);
    std::uniform_real_distribution<double> rd(0.002, 0.05), pd(0.05, 0.8), qd(-0.3, 0.4);
    for (int k = 0; k < 50; ++k) {
        const double r = rd(rng), x = 2.0 * rd(rng);
        const double p = pd(rng), q = qd(rng);
        const FeederModel m = two_bus_model(r, x);
        const PowerFlowSolution sol = solve_power_flow(m, constant_power_at(m, "l", 0, {p, q}), {});
        const TwoBusOracle expect = two_bus_oracle(1.0, r, x, p, q);
        REQUIRE_THAT(std::abs(sol.v[1][0]), Catch::Matchers::WithinAbs(expect.v2_mag, 1e-8));
        REQUIRE_THAT(sol.total_loss.real(), Catch::Matchers::WithinAbs(expect.loss.real(), 1e-8));
    }
}

TEST_CASE("4-bus fixture at peak load violates the low ANSI limit without support",
          "[powerflow]") {
    const FeederModel m = load_feeder(kDataDir + "/feeders/ieee4.json");
    const std::vector<double> load_mult{1.0, 1.0};
    const std::vector<double> pv_zero{0.0, 0.0};
    const PowerFlowSolution sol =
        solve_power_flow(m, build_injections(m, load_mult, pv_zero, pv_zero), {});
    const std::size_t bus4 = m.bus_index.at("4");
    for (int p = 0; p < kPhaseCount; ++p) CHECK(std::abs(sol.v[bus4][p]) < 0.95);
}

TEST_CASE("branch loss reduces to r|I|^2 + j x|I|^2 without mutual coupling", "[powerflow]") {
    const FeederModel m = two_bus_model(0.03, 0.07);
    const PowerFlowSolution sol = solve_power_flow(m, constant_power_at(m, "l", 0, {0.4, 0.1}), {});
    const double i2 = std::norm(sol.branch_i[0][0]);
    const Complex loss = branch_loss(m, sol, "s-l");
    CHECK_THAT(loss.real(), Catch::Matchers::WithinRel(0.03 * i2, 1e-12));
    CHECK_THAT(loss.imag(), Catch::Matchers::WithinRel(0.07 * i2, 1e-12));
    CHECK(branch_loss(m, sol, "s-l") == sol.branch_s_loss[0]);
    REQUIRE_THROWS_AS(branch_loss(m, sol, "bogus"), std::out_of_range);
}

TEST_CASE("mutually coupled branch loss equals the terminal power difference", "[powerflow]") {
    // Unbalanced two-bus three-phase case with full mutual coupling.
    FeederModel m;
    m.base_mva = 3e-3;
    m.source_bus = "s";
    m.source_voltage_pu = 1.0;
    const double kv = 0.0316227766016838;
    m.buses = {{"s", PhaseSet::all(), kv}, {"l", PhaseSet::all(), kv}};
    Branch br;
    br.id = "s-l";
    br.from_bus = "s";
    br.to_bus = "l";
    br.phases = PhaseSet::all();
    const Complex zs(0.02, 0.05), zm(0.008, 0.02);
    for (int a = 0; a < 3; ++a)
        for (int b = 0; b < 3; ++b) br.z_ohm[a][b] = a == b ? zs : zm;
    m.branches = {br};
    m.validate();

    InjectionSet inj = InjectionSet::zeros(m);
    inj.add_constant_power(1, 0, {0.30, 0.10});
    inj.add_constant_power(1, 1, {0.05, 0.02});
    inj.add_constant_power(1, 2, {0.45, -0.05});
    const PowerFlowSolution sol = solve_power_flow(m, inj, {});

    Complex s_in{}, s_out{};
    for (int p = 0; p < 3; ++p) {
        s_in += sol.v[0][p] * std::conj(sol.branch_i[0][p]);
        s_out += sol.v[1][p] * std::conj(sol.branch_i[0][p]);
    }
    const Complex loss = branch_loss(m, sol, "s-l");
    CHECK_THAT(loss.real(), Catch::Matchers::WithinAbs((s_in - s_out).real(), 1e-10));
    CHECK_THAT(loss.imag(), Catch::Matchers::WithinAbs((s_in - s_out).imag(), 1e-10));
    CHECK(loss.real() >= 0.0);
}

TEST_CASE("power balance holds to 1e-8 pu on the bundled feeders", "[powerflow]") {
    for (const std::string file : {"/feeders/ieee4.json", "/feeders/feeder13.json"}) {
        const FeederModel m = load_feeder(kDataDir + file);
        const std::vector<double> mult(m.loads.size(), 0.9);
        std::vector<double> pv_p(m.pvs.size()), pv_q(m.pvs.size());
        for (std::size_t i = 0; i < m.pvs.size(); ++i) {
            pv_p[i] = 0.5 * m.pvs[i].rated_kw;
            pv_q[i] = 0.25 * m.pvs[i].rated_kva;
        }
        const PowerFlowSolution sol =
            solve_power_flow(m, build_injections(m, mult, pv_p, pv_q), taps_of(m));
        CHECK(std::abs(sol.source_power - sol.load_power - sol.total_loss) < 1e-8);
        CHECK(sol.total_loss.real() >= 0.0);
    }
}

TEST_CASE("zero current means zero branch loss", "[powerflow]") {
    const FeederModel m = two_bus_model(0.01, 0.02);
    const PowerFlowSolution sol = solve_power_flow(m, InjectionSet::zeros(m), {});
    CHECK(std::abs(branch_loss(m, sol, "s-l")) < 1e-15);
}

TEST_CASE("solution is invariant under file element reordering", "[powerflow]") {
    const json base = json::parse(R"({
      "base_mva": 2.0, "source": {"bus": "s", "voltage_pu": 1.0},
      "buses": [
        {"id": "s", "phases": "abc", "base_kv": 2.4},
        {"id": "a", "phases": "abc", "base_kv": 2.4},
        {"id": "b", "phases": "abc", "base_kv": 2.4},
        {"id": "c", "phases": "abc", "base_kv": 2.4}
      ],
      "branches": [
        {"id": "s-a", "from": "s", "to": "a", "phases": "abc",
         "z": [[[0.1,0.3],[0.02,0.08],[0.02,0.08]],[[0.02,0.08],[0.1,0.3],[0.02,0.08]],[[0.02,0.08],[0.02,0.08],[0.1,0.3]]]},
        {"id": "a-b", "from": "a", "to": "b", "phases": "abc",
         "z": [[[0.2,0.5],[0.04,0.1],[0.04,0.1]],[[0.04,0.1],[0.2,0.5],[0.04,0.1]],[[0.04,0.1],[0.04,0.1],[0.2,0.5]]]},
        {"id": "a-c", "from": "a", "to": "c", "phases": "abc",
         "z": [[[0.15,0.4],[0.03,0.09],[0.03,0.09]],[[0.03,0.09],[0.15,0.4],[0.03,0.09]],[[0.03,0.09],[0.03,0.09],[0.15,0.4]]]}
      ],
      "loads": [
        {"bus": "b", "per_phase": [{"phase": "a", "kw": 150, "kvar": 70}], "zip": [0.4,0.3,0.3]},
        {"bus": "c", "per_phase": [{"phase": "c", "kw": 120, "kvar": 60}], "zip": [1,0,0]}
      ],
      "pvs": [], "regulators": []
    })");

    json shuffled = base;
    std::swap(shuffled["buses"][1], shuffled["buses"][3]);
    std::swap(shuffled["buses"][0], shuffled["buses"][2]);
    std::swap(shuffled["branches"][0], shuffled["branches"][2]);
    std::swap(shuffled["loads"][0], shuffled["loads"][1]);

    const FeederModel m1 = parse_feeder(base);
    const FeederModel m2 = parse_feeder(shuffled);
    const std::vector<double> mult1(m1.loads.size(), 1.0);
    const PowerFlowSolution s1 = solve_power_flow(m1, build_injections(m1, mult1, {}, {}), {});
    const PowerFlowSolution s2 = solve_power_flow(m2, build_injections(m2, mult1, {}, {}), {});

    for (const std::string bus : {"a", "b", "c"}) {
        const auto i1 = m1.bus_index.at(bus), i2 = m2.bus_index.at(bus);
        for (int p = 0; p < 3; ++p)
            CHECK_THAT(std::abs(s1.v[i1][p] - s2.v[i2][p]), Catch::Matchers::WithinAbs(0.0, 1e-12));
    }
    CHECK_THAT(std::abs(s1.total_loss - s2.total_loss), Catch::Matchers::WithinAbs(0.0, 1e-14));
}

TEST_CASE("balanced fixture loses equally in all three phases", "[powerflow]") {
    const FeederModel m = load_feeder(kDataDir + "/feeders/ieee4.json");
    const std::vector<double> mult{1.0, 1.0};
    const PowerFlowSolution sol =
        solve_power_flow(m, build_injections(m, mult, {0.0, 0.0}, {0.0, 0.0}), {});
    for (std::size_t bi = 0; bi < m.branches.size(); ++bi) {
        // Per-phase loss shares: z row times currents.
        std::array<double, 3> phase_loss{};
        const double z_base =
            PowerFlowSolver::z_base_ohm(m, m.bus_index.at(m.branches[bi].to_bus));
        for (int a = 0; a < 3; ++a) {
            Complex acc{};
            for (int b = 0; b < 3; ++b)
                acc += (m.branches[bi].z_ohm[a][b] / z_base) * sol.branch_i[bi][a] *
                       std::conj(sol.branch_i[bi][b]);
            phase_loss[a] = acc.real();
        }
        CHECK(std::abs(phase_loss[0] - phase_loss[1]) < 1e-9);
        CHECK(std::abs(phase_loss[1] - phase_loss[2]) < 1e-9);
    }
}

TEST_CASE("sweep residuals shrink monotonically near convergence", "[powerflow]") {
    const FeederModel m = load_feeder(kDataDir + "/feeders/feeder13.json");
    const std::vector<double> mult(m.loads.size(), 1.0);
    const PowerFlowSolution sol = solve_power_flow(
        m, build_injections(m, mult, std::vector<double>(4, 0.0), std::vector<double>(4, 0.0)),
        taps_of(m));
    REQUIRE(sol.mismatch_history.size() >= 4);
    const auto& h = sol.mismatch_history;
    for (std::size_t k = h.size() - 3; k < h.size(); ++k) CHECK(h[k] <= h[k - 1]);
}

TEST_CASE("solver reports non-convergence on an infeasible load", "[powerflow]") {
    const FeederModel m = two_bus_model(0.1, 0.3);
    REQUIRE_THROWS_AS(solve_power_flow(m, constant_power_at(m, "l", 0, {50.0, 20.0}), {}),
                      ConvergenceError);
}

TEST_CASE("zero-impedance branch is rejected", "[powerflow]") {
    FeederModel m = two_bus_model(0.01, 0.02);
    m.branches[0].z_ohm[0][0] = Complex{};
    m.validate();
    REQUIRE_THROWS_AS(solve_power_flow(m, InjectionSet::zeros(m), {}), SolverError);
}

TEST_CASE("regulator tap boosts downstream voltage as an ideal ratio", "[powerflow]") {
    FeederModel m = two_bus_model(0.01, 0.02);
    Regulator reg;
    reg.branch = "s-l";
    m.regulators = {reg};
    m.validate();

    TapSet taps{{0, 0, 0}};
    const PowerFlowSolution flat = solve_power_flow(m, InjectionSet::zeros(m), taps);
    CHECK_THAT(std::abs(flat.v[1][0]), Catch::Matchers::WithinAbs(1.0, 1e-12));

    taps[0] = {8, 0, 0};
    const PowerFlowSolution boosted = solve_power_flow(m, InjectionSet::zeros(m), taps);
    CHECK_THAT(std::abs(boosted.v[1][0]), Catch::Matchers::WithinAbs(1.05, 1e-12));

    // Loaded case still balances power across the ideal ratio.
    const PowerFlowSolution loaded =
        solve_power_flow(m, constant_power_at(m, "l", 0, {0.3, 0.1}), taps);
    CHECK(std::abs(loaded.source_power - loaded.load_power - loaded.total_loss) < 1e-8);
}
