#pragma once

#include <cmath>
#include <numbers>
#include <optional>
#include <vector>

#include "vvo/feeder.hpp"

namespace vvo {

struct SolverError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ConvergenceError : SolverError {
    ConvergenceError(int iterations, double mismatch)
        : SolverError("power flow did not converge after " + std::to_string(iterations) +
                      " iterations (mismatch " + std::to_string(mismatch) + " pu)"),
          iterations(iterations), mismatch(mismatch) {}
    int iterations;
    double mismatch;
};

/// Per-bus per-phase complex power demand in per-unit, split into ZIP parts.
/// Consumption is positive; PV output enters as negative constant-power draw.
/// The constant-current and constant-impedance parts are referenced to 1.0 pu
/// voltage magnitude.
struct InjectionSet {
    struct BusInjection {
        Complex3 s_p{};  // constant power
        Complex3 s_i{};  // constant current
        Complex3 s_z{};  // constant impedance
    };
    std::vector<BusInjection> at;

    static InjectionSet zeros(const FeederModel& model) {
        InjectionSet inj;
        inj.at.resize(model.buses.size());
        return inj;
    }

    void add_constant_power(std::size_t bus, int phase, Complex s_pu) {
        at[bus].s_p[phase] += s_pu;
    }

    /// Net complex draw at the given voltage magnitude.
    Complex demand(std::size_t bus, int phase, double v_mag) const {
        const BusInjection& b = at[bus];
        return b.s_p[phase] + b.s_i[phase] * v_mag + b.s_z[phase] * (v_mag * v_mag);
    }
};

/// Scales every load by its multiplier and adds PV output (kW generation and
/// kvar dispatch per inverter, split evenly over the inverter's phases).
inline InjectionSet build_injections(const FeederModel& model,
                                     const std::vector<double>& load_mult,
                                     const std::vector<double>& pv_p_kw,
                                     const std::vector<double>& pv_q_kvar) {
    if (load_mult.size() != model.loads.size() || pv_p_kw.size() != model.pvs.size() ||
        pv_q_kvar.size() != model.pvs.size())
        throw std::invalid_argument("build_injections: size mismatch with model");

    InjectionSet inj = InjectionSet::zeros(model);
    const double s_base = model.s_base_phase_kva();
    for (std::size_t li = 0; li < model.loads.size(); ++li) {
        const Load& ld = model.loads[li];
        const std::size_t bus = model.bus_index.at(ld.bus);
        for (int p = 0; p < kPhaseCount; ++p) {
            if (!ld.phases.has(p)) continue;
            const Complex s = Complex(ld.kw[p], ld.kvar[p]) * (load_mult[li] / s_base);
            inj.at[bus].s_p[p] += s * ld.zip[0];
            inj.at[bus].s_i[p] += s * ld.zip[1];
            inj.at[bus].s_z[p] += s * ld.zip[2];
        }
    }
    for (std::size_t pi = 0; pi < model.pvs.size(); ++pi) {
        const PvInverter& pv = model.pvs[pi];
        const std::size_t bus = model.bus_index.at(pv.bus);
        const int n = pv.phases.count();
        const Complex s = Complex(pv_p_kw[pi], pv_q_kvar[pi]) / (double(n) * s_base);
        for (int p = 0; p < kPhaseCount; ++p)
            if (pv.phases.has(p)) inj.at[bus].s_p[p] -= s;
    }
    return inj;
}

using TapSet = std::vector<std::array<int, 3>>;

inline TapSet taps_of(const FeederModel& model) {
    TapSet taps;
    taps.reserve(model.regulators.size());
    for (const Regulator& reg : model.regulators) taps.push_back(reg.taps);
    return taps;
}

struct PowerFlowSolution {
    std::vector<Complex3> v;            // per bus per phase, pu
    std::vector<Complex3> branch_i;     // per branch per phase, pu (to-side current)
    std::vector<Complex> branch_s_loss; // per branch, pu
    Complex total_loss{};
    Complex source_power{};             // injected at the source bus, pu
    Complex load_power{};               // net ZIP demand at solved voltages, pu
    int iterations = 0;
    double max_mismatch = 0.0;
    std::vector<double> mismatch_history;
};

struct SolverOptions {
    double tolerance_pu = 1e-10;
    int max_iterations = 60;
};

/// Backward/forward sweep (current summation) solver for radial unbalanced
/// feeders. Construction converts branch impedances to per-unit and freezes
/// the sweep order; solve() is const and reentrant.
class PowerFlowSolver {
  public:
    explicit PowerFlowSolver(const FeederModel& model, SolverOptions options = {})
        : model_(&model), options_(options) {
        const std::size_t nb = model.buses.size();
        z_pu_.resize(model.branches.size());
        from_.resize(model.branches.size());
        to_.resize(model.branches.size());
        reg_of_branch_.assign(model.branches.size(), -1);
        children_.resize(nb);
        for (std::size_t bi = 0; bi < model.branches.size(); ++bi) {
            const Branch& br = model.branches[bi];
            from_[bi] = model.bus_index.at(br.from_bus);
            to_[bi] = model.bus_index.at(br.to_bus);
            children_[from_[bi]].push_back(bi);
            const double z_base = z_base_ohm(model, to_[bi]);
            for (int m = 0; m < kPhaseCount; ++m)
                for (int n = 0; n < kPhaseCount; ++n)
                    z_pu_[bi][m][n] = br.z_ohm[m][n] / z_base;
            for (int p = 0; p < kPhaseCount; ++p)
                if (br.phases.has(p) && z_pu_[bi][p][p] == Complex{})
                    throw SolverError("branch '" + br.id + "' has zero self impedance on phase " +
                                      std::string(1, kPhaseNames[p]));
        }
        for (std::size_t ri = 0; ri < model.regulators.size(); ++ri)
            reg_of_branch_[model.branch_index.at(model.regulators[ri].branch)] = static_cast<int>(ri);
    }

    const FeederModel& model() const { return *model_; }

    static double z_base_ohm(const FeederModel& model, std::size_t bus) {
        const double kv = model.buses[bus].base_kv_ln;
        return kv * kv * 1000.0 / model.s_base_phase_kva();
    }

    PowerFlowSolution solve(const InjectionSet& inj, const TapSet& taps,
                            const PowerFlowSolution* warm_start = nullptr) const {
        const FeederModel& model = *model_;
        if (inj.at.size() != model.buses.size())
            throw std::invalid_argument("injection set does not match the model");
        if (taps.size() != model.regulators.size())
            throw std::invalid_argument("tap set does not match the model's regulators");

        const std::size_t nb = model.buses.size();
        PowerFlowSolution sol;
        sol.v.assign(nb, Complex3{});
        if (warm_start && warm_start->v.size() == nb) {
            sol.v = warm_start->v;
        } else {
            for (std::size_t b = 0; b < nb; ++b)
                for (int p = 0; p < kPhaseCount; ++p)
                    if (model.buses[b].phases.has(p)) sol.v[b][p] = flat_voltage(p, 1.0);
        }
        for (int p = 0; p < kPhaseCount; ++p)
            sol.v[model.source_index][p] = model.buses[model.source_index].phases.has(p)
                                               ? flat_voltage(p, model.source_voltage_pu)
                                               : Complex{};

        std::vector<Complex3> i_draw(nb);
        sol.branch_i.assign(model.branches.size(), Complex3{});

        bool converged = false;
        for (int iter = 1; iter <= options_.max_iterations; ++iter) {
            // Nodal ZIP currents at the present voltage estimate.
            for (std::size_t b = 0; b < nb; ++b) {
                for (int p = 0; p < kPhaseCount; ++p) {
                    i_draw[b][p] = Complex{};
                    if (!model.buses[b].phases.has(p)) continue;
                    const Complex v = sol.v[b][p];
                    const double mag = std::abs(v);
                    if (mag < 1e-9) continue;  // collapsed; shows up as mismatch
                    i_draw[b][p] = std::conj(inj.demand(b, p, mag) / v);
                }
            }
            // Backward: aggregate branch currents toward the source. A branch
            // with a regulator reflects its current upstream scaled by the
            // ideal ratio.
            for (auto it = model.branch_order.rbegin(); it != model.branch_order.rend(); ++it) {
                const std::size_t bi = *it;
                Complex3 i = i_draw[to_[bi]];
                for (std::size_t child : children_[to_[bi]]) {
                    for (int p = 0; p < kPhaseCount; ++p)
                        i[p] += branch_ratio(child, taps, p) * sol.branch_i[child][p];
                }
                sol.branch_i[bi] = i;
            }
            // Forward: propagate voltages from the source.
            double mismatch = 0.0;
            for (std::size_t bi : model.branch_order) {
                const Branch& br = model.branches[bi];
                for (int p = 0; p < kPhaseCount; ++p) {
                    if (!br.phases.has(p)) {
                        sol.v[to_[bi]][p] = Complex{};
                        continue;
                    }
                    Complex drop{};
                    for (int n = 0; n < kPhaseCount; ++n)
                        drop += z_pu_[bi][p][n] * sol.branch_i[bi][n];
                    const Complex v_new = branch_ratio(bi, taps, p) * sol.v[from_[bi]][p] - drop;
                    mismatch = std::max(mismatch, std::abs(v_new - sol.v[to_[bi]][p]));
                    sol.v[to_[bi]][p] = v_new;
                }
            }
            sol.iterations = iter;
            sol.max_mismatch = mismatch;
            sol.mismatch_history.push_back(mismatch);
            if (mismatch < options_.tolerance_pu) {
                converged = true;
                break;
            }
        }
        if (!converged) throw ConvergenceError(sol.iterations, sol.max_mismatch);

        finalize(sol, inj, taps);
        return sol;
    }

  private:
    static Complex flat_voltage(int phase, double mag) {
        constexpr double deg120 = 2.0 * std::numbers::pi / 3.0;
        const double angle = phase == 0 ? 0.0 : (phase == 1 ? -deg120 : deg120);
        return std::polar(mag, angle);
    }

    double branch_ratio(std::size_t branch, const TapSet& taps, int phase) const {
        const int ri = reg_of_branch_[branch];
        if (ri < 0) return 1.0;
        return 1.0 + taps[static_cast<std::size_t>(ri)][phase] * model_->regulators[ri].step;
    }

    void finalize(PowerFlowSolution& sol, const InjectionSet& inj, const TapSet& taps) const {
        const FeederModel& model = *model_;
        sol.branch_s_loss.assign(model.branches.size(), Complex{});
        sol.total_loss = Complex{};
        for (std::size_t bi = 0; bi < model.branches.size(); ++bi) {
            Complex loss{};
            for (int m = 0; m < kPhaseCount; ++m)
                for (int n = 0; n < kPhaseCount; ++n)
                    loss += z_pu_[bi][m][n] * sol.branch_i[bi][m] * std::conj(sol.branch_i[bi][n]);
            sol.branch_s_loss[bi] = loss;
            sol.total_loss += loss;
        }
        sol.source_power = Complex{};
        for (std::size_t child : children_[model.source_index]) {
            for (int p = 0; p < kPhaseCount; ++p) {
                const Complex i = branch_ratio(child, taps, p) * sol.branch_i[child][p];
                sol.source_power += sol.v[model.source_index][p] * std::conj(i);
            }
        }
        sol.load_power = Complex{};
        for (std::size_t b = 0; b < model.buses.size(); ++b) {
            for (int p = 0; p < kPhaseCount; ++p) {
                if (!model.buses[b].phases.has(p)) continue;
                const double mag = std::abs(sol.v[b][p]);
                if (b != model.source_index) sol.load_power += inj.demand(b, p, mag);
            }
        }
    }

    const FeederModel* model_;
    SolverOptions options_;
    std::vector<ComplexMat3> z_pu_;
    std::vector<std::size_t> from_, to_;
    std::vector<int> reg_of_branch_;
    std::vector<std::vector<std::size_t>> children_;
};

inline PowerFlowSolution solve_power_flow(const FeederModel& model, const InjectionSet& inj,
                                          const TapSet& taps, SolverOptions options = {}) {
    return PowerFlowSolver(model, options).solve(inj, taps);
}

inline Complex branch_loss(const FeederModel& model, const PowerFlowSolution& sol,
                           const std::string& branch_id) {
    return sol.branch_s_loss[model.branch_index.at(branch_id)];
}

inline Complex total_loss(const PowerFlowSolution& sol) { return sol.total_loss; }

/// One operating point handed to the dispatch oracle and convexity checks:
/// loads and PV active power are fixed, PV reactive dispatch is the free
/// variable.
struct DispatchSnapshot {
    InjectionSet loads;              // loads only, no PV contribution
    std::vector<double> pv_p_kw;     // per PV
    std::vector<double> pv_q_kvar;   // per PV operating point
    TapSet taps;
};

/// Injections for a snapshot with one PV's reactive output overridden.
inline InjectionSet snapshot_injections(const FeederModel& model, const DispatchSnapshot& snap,
                                        std::optional<std::size_t> pv_override = {},
                                        double q_kvar = 0.0) {
    InjectionSet inj = snap.loads;
    const double s_base = model.s_base_phase_kva();
    for (std::size_t pi = 0; pi < model.pvs.size(); ++pi) {
        const PvInverter& pv = model.pvs[pi];
        const std::size_t bus = model.bus_index.at(pv.bus);
        const double q = (pv_override && *pv_override == pi) ? q_kvar : snap.pv_q_kvar[pi];
        const Complex s = Complex(snap.pv_p_kw[pi], q) / (double(pv.phases.count()) * s_base);
        for (int p = 0; p < kPhaseCount; ++p)
            if (pv.phases.has(p)) inj.at[bus].s_p[p] -= s;
    }
    return inj;
}

}  // namespace vvo
