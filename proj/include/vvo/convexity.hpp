#pragma once

#include <cmath>
#include <limits>

#include "vvo/powerflow.hpp"

namespace vvo {

/// Denominator of the closed-form second derivative of the squared branch
/// current with respect to local reactive injection, evaluated at a single
/// phase operating point. Non-negative D certifies local convexity.
inline double single_phase_condition(double r, double x, double p, double q_total, double v) {
    if (v <= 0.0) throw std::invalid_argument("single_phase_condition: voltage must be positive");
    const double y = v * v;
    return 1.0 - 2.0 * r * p / y - 2.0 * x * q_total / y;
}

namespace detail {

/// Squared current magnitude (pu) summed over the monitored branch's phases.
inline double monitored_i2(const FeederModel& model, const PowerFlowSolution& sol,
                           std::size_t pv_index) {
    const Branch& br = model.branch(model.pvs[pv_index].monitored_branch);
    const std::size_t bi = model.branch_index.at(br.id);
    double i2 = 0.0;
    for (int p = 0; p < kPhaseCount; ++p)
        if (br.phases.has(p)) i2 += std::norm(sol.branch_i[bi][p]);
    return i2;
}

}  // namespace detail

/// Central-difference estimate of d^2(|I|^2)/dq^2 for one inverter, from full
/// power-flow solves at q-h, q, q+h around the snapshot operating point.
/// Units: pu per kvar^2.
inline double numeric_second_derivative(const PowerFlowSolver& solver, const DispatchSnapshot& snap,
                                        std::size_t pv_index, double h_kvar) {
    if (h_kvar <= 0.0) throw std::invalid_argument("numeric_second_derivative: h must be positive");
    const FeederModel& model = solver.model();
    const double q0 = snap.pv_q_kvar[pv_index];
    double f[3];
    const double qs[3] = {q0 - h_kvar, q0, q0 + h_kvar};
    for (int k = 0; k < 3; ++k) {
        const InjectionSet inj = snapshot_injections(model, snap, pv_index, qs[k]);
        const PowerFlowSolution sol = solver.solve(inj, snap.taps);
        f[k] = detail::monitored_i2(model, sol, pv_index);
    }
    return (f[2] - 2.0 * f[1] + f[0]) / (h_kvar * h_kvar);
}

/// Numerically checked signs of the second derivatives underpinning the
/// convexity condition: voltage squared at the inverter bus, and active /
/// reactive sending-end flow on the monitored branch, each w.r.t. the local
/// reactive dispatch.
struct AssumptionSigns {
    double d2y_dq2 = 0.0;  // y = mean |V|^2 over the inverter's phases
    double d2p_dq2 = 0.0;  // P = sending-end active flow, pu
    double d2q_dq2 = 0.0;  // Q = sending-end reactive flow, pu
};

inline AssumptionSigns assumption_check(const PowerFlowSolver& solver, const DispatchSnapshot& snap,
                                        std::size_t pv_index, double h_kvar) {
    if (h_kvar <= 0.0) throw std::invalid_argument("assumption_check: h must be positive");
    const FeederModel& model = solver.model();
    const PvInverter& pv = model.pvs[pv_index];
    const std::size_t bus = model.bus_index.at(pv.bus);
    const std::size_t bi = model.branch_index.at(pv.monitored_branch);
    const std::size_t from = model.bus_index.at(model.branches[bi].from_bus);

    const double q0 = snap.pv_q_kvar[pv_index];
    double y[3], pf[3], qf[3];
    const double qs[3] = {q0 - h_kvar, q0, q0 + h_kvar};
    for (int k = 0; k < 3; ++k) {
        const InjectionSet inj = snapshot_injections(model, snap, pv_index, qs[k]);
        const PowerFlowSolution sol = solver.solve(inj, snap.taps);
        double v2 = 0.0;
        int n = 0;
        Complex s{};
        for (int p = 0; p < kPhaseCount; ++p) {
            if (pv.phases.has(p)) {
                v2 += std::norm(sol.v[bus][p]);
                ++n;
            }
            if (model.branches[bi].phases.has(p))
                s += sol.v[from][p] * std::conj(sol.branch_i[bi][p]);
        }
        y[k] = v2 / n;
        pf[k] = s.real();
        qf[k] = s.imag();
    }
    const double h2 = h_kvar * h_kvar;
    return {(y[2] - 2 * y[1] + y[0]) / h2, (pf[2] - 2 * pf[1] + pf[0]) / h2,
            (qf[2] - 2 * qf[1] + qf[0]) / h2};
}

/// Closed-form three-phase branch loss expanded in phase-A-referenced power
/// flows. Phase B carries P+dp1, Q+dq1+q and phase C carries P+dp2, Q+dq2+q;
/// the expansion assumes exact 120-degree phase displacement (with phase B
/// leading) and drops terms quadratic in the imbalances. y is the squared
/// voltage magnitude.
inline Complex three_phase_loss_expansion(const ComplexMat3& z, double p, double dp1, double dp2,
                                          double q_total, double dq1, double dq2, double y) {
    if (y <= 0.0) throw std::invalid_argument("three_phase_loss_expansion: y must be positive");
    const Complex zaa = z[0][0], zbb = z[1][1], zcc = z[2][2];
    const Complex zab = z[0][1], zac = z[0][2], zbc = z[1][2];
    const double s2 = p * p + q_total * q_total;
    const double root3 = std::sqrt(3.0);

    Complex loss = s2 * (zaa + zbb + zcc - zab - zac - zbc);
    loss += (p * dp1 + q_total * dq1) * (2.0 * zbb - zab - zbc);
    loss += (p * dp2 + q_total * dq2) * (2.0 * zcc - zac - zbc);
    loss += root3 * (p * dq1 - q_total * dp1) * (zab - zbc);
    loss += root3 * (p * dq2 - q_total * dp2) * (zbc - zac);
    return loss / y;
}

/// Per-inverter convexity verdict at one simulation step.
struct ConvexityRecord {
    long step = 0;
    std::string pv_bus;
    double denominator = 0.0;       // closed-form condition value
    double numeric_d2 = 0.0;        // finite-difference d2(|I|^2)/dq2
    double numerator = 0.0;         // implied numerator K = d2 * denominator
    bool numerator_nonneg = false;
    bool satisfied = false;
};

inline constexpr double kConvexitySignTolerance = 1e-6;

/// Evaluates both the analytic condition and the numeric second derivative at
/// a snapshot. P and Q+q are taken from the solved sending-end flow of the
/// monitored branch (per-phase means), V from the inverter bus.
inline ConvexityRecord evaluate_convexity(const PowerFlowSolver& solver,
                                          const DispatchSnapshot& snap, std::size_t pv_index,
                                          double h_kvar, long step = 0) {
    const FeederModel& model = solver.model();
    const PvInverter& pv = model.pvs[pv_index];
    const std::size_t bus = model.bus_index.at(pv.bus);
    const std::size_t bi = model.branch_index.at(pv.monitored_branch);
    const std::size_t from = model.bus_index.at(model.branches[bi].from_bus);

    const InjectionSet inj = snapshot_injections(model, snap);
    const PowerFlowSolution sol = solver.solve(inj, snap.taps);

    // Worst-phase condition value across the branch's phases.
    double denom = std::numeric_limits<double>::infinity();
    const double z_base = PowerFlowSolver::z_base_ohm(model, model.bus_index.at(model.branches[bi].to_bus));
    for (int p = 0; p < kPhaseCount; ++p) {
        if (!model.branches[bi].phases.has(p)) continue;
        const Complex z = model.branches[bi].z_ohm[p][p] / z_base;
        const Complex s = sol.v[from][p] * std::conj(sol.branch_i[bi][p]);
        const double v = std::abs(sol.v[bus][p]);
        denom = std::min(denom, single_phase_condition(z.real(), z.imag(), s.real(), s.imag(), v));
    }

    ConvexityRecord rec;
    rec.step = step;
    rec.pv_bus = pv.bus;
    rec.denominator = denom;
    rec.numeric_d2 = numeric_second_derivative(solver, snap, pv_index, h_kvar);
    rec.numerator = rec.numeric_d2 * denom;
    rec.numerator_nonneg = rec.numerator >= -kConvexitySignTolerance;
    rec.satisfied = denom >= 0.0 && rec.numeric_d2 >= -kConvexitySignTolerance;
    return rec;
}

}  // namespace vvo
