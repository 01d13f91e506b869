#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include "vvo/control.hpp"
#include "vvo/powerflow.hpp"

namespace vvo {

enum class OracleMode { Auto, Exhaustive, CoordinateDescent };

struct OracleOptions {
    int grid_points = 21;          // per PV, spanning [-Q_max, +Q_max]
    OracleMode mode = OracleMode::Auto;
    long exhaustive_budget = 10000; // max solves for the exhaustive mode
    double penalty_gain = 10.0;     // K_p, applied per bus phase
    int max_sweeps = 12;            // coordinate-descent cycles
};

struct OracleResult {
    std::vector<double> q_kvar;  // per PV
    double loss_pu = 0.0;        // real network loss at the optimum
    double objective = 0.0;      // loss + voltage penalty
    long evaluations = 0;
};

namespace detail {

inline double dispatch_objective(const PowerFlowSolver& solver, const DispatchSnapshot& snap,
                                 double penalty_gain) {
    const FeederModel& model = solver.model();
    const PowerFlowSolution sol = solver.solve(snapshot_injections(model, snap), snap.taps);
    double obj = sol.total_loss.real();
    for (std::size_t b = 0; b < model.buses.size(); ++b)
        for (int p = 0; p < kPhaseCount; ++p)
            if (model.buses[b].phases.has(p))
                obj += voltage_penalty(std::abs(sol.v[b][p]), penalty_gain);
    return obj;
}

/// Grid values ordered by increasing magnitude so that ties in the objective
/// resolve toward the smallest dispatch.
inline std::vector<double> dispatch_grid(double q_max, int points) {
    std::vector<double> grid;
    grid.reserve(points);
    const int half = points / 2;
    const double step = points > 1 ? q_max / half : 0.0;
    grid.push_back(0.0);
    for (int k = 1; k <= half; ++k) {
        grid.push_back(k * step);
        grid.push_back(-k * step);
    }
    return grid;
}

}  // namespace detail

/// Exhaustive (or cyclic coordinate-descent) minimization of network loss
/// plus voltage penalty over per-PV reactive dispatch within capability.
/// Deterministic: grids are enumerated smallest-|q| first and only strict
/// improvements move the incumbent.
inline OracleResult brute_force_dispatch(const PowerFlowSolver& solver, DispatchSnapshot snap,
                                         const OracleOptions& options = {}) {
    const FeederModel& model = solver.model();
    const std::size_t n_pv = model.pvs.size();
    OracleResult result;
    result.q_kvar.assign(n_pv, 0.0);

    std::vector<std::vector<double>> grids(n_pv);
    double combos = n_pv == 0 ? 0.0 : 1.0;
    for (std::size_t i = 0; i < n_pv; ++i) {
        const double q_max =
            q_capacity(model.pvs[i].rated_kva, std::min(snap.pv_p_kw[i], model.pvs[i].rated_kva));
        grids[i] = detail::dispatch_grid(q_max, options.grid_points);
        combos *= static_cast<double>(grids[i].size());
    }

    snap.pv_q_kvar.assign(n_pv, 0.0);
    if (n_pv == 0) {
        result.objective = detail::dispatch_objective(solver, snap, options.penalty_gain);
        result.loss_pu = solver.solve(snapshot_injections(model, snap), snap.taps).total_loss.real();
        result.evaluations = 1;
        return result;
    }

    OracleMode mode = options.mode;
    if (mode == OracleMode::Auto)
        mode = combos <= static_cast<double>(options.exhaustive_budget) ? OracleMode::Exhaustive
                                                                        : OracleMode::CoordinateDescent;
    if (mode == OracleMode::Exhaustive && combos > static_cast<double>(options.exhaustive_budget))
        throw std::invalid_argument("brute_force_dispatch: exhaustive grid exceeds the solve budget");

    long evals = 0;
    double best = std::numeric_limits<double>::infinity();

    if (mode == OracleMode::Exhaustive) {
        std::vector<std::size_t> idx(n_pv, 0);
        std::vector<double> q(n_pv);
        while (true) {
            for (std::size_t i = 0; i < n_pv; ++i) q[i] = grids[i][idx[i]];
            snap.pv_q_kvar = q;
            const double obj = detail::dispatch_objective(solver, snap, options.penalty_gain);
            ++evals;
            if (obj < best) {
                best = obj;
                result.q_kvar = q;
            }
            std::size_t d = 0;
            while (d < n_pv && ++idx[d] == grids[d].size()) idx[d++] = 0;
            if (d == n_pv) break;
        }
    } else {
        // Cyclic coordinate descent on the same grids, from zero dispatch, until
        // a full sweep makes no move.
        snap.pv_q_kvar.assign(n_pv, 0.0);
        best = detail::dispatch_objective(solver, snap, options.penalty_gain);
        ++evals;
        result.q_kvar = snap.pv_q_kvar;
        for (int sweep = 0; sweep < options.max_sweeps; ++sweep) {
            bool moved = false;
            for (std::size_t i = 0; i < n_pv; ++i) {
                double best_q = result.q_kvar[i];
                for (double q : grids[i]) {
                    if (q == best_q) continue;
                    snap.pv_q_kvar = result.q_kvar;
                    snap.pv_q_kvar[i] = q;
                    const double obj = detail::dispatch_objective(solver, snap, options.penalty_gain);
                    ++evals;
                    if (obj < best) {
                        best = obj;
                        best_q = q;
                        moved = true;
                    }
                }
                result.q_kvar[i] = best_q;
            }
            if (!moved) break;
        }
    }

    snap.pv_q_kvar = result.q_kvar;
    result.objective = best;
    result.loss_pu = solver.solve(snapshot_injections(model, snap), snap.taps).total_loss.real();
    result.evaluations = evals;
    return result;
}

}  // namespace vvo
