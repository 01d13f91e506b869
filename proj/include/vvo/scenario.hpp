#pragma once

#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "vvo/control.hpp"
#include "vvo/convexity.hpp"
#include "vvo/feeder.hpp"
#include "vvo/oracle.hpp"
#include "vvo/powerflow.hpp"
#include "vvo/profiles.hpp"

namespace vvo {

struct ScenarioError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class ControllerKind { EsAdaptive, FixedDroop, None, Oracle };

inline const char* to_string(ControllerKind k) {
    switch (k) {
    case ControllerKind::EsAdaptive: return "es-adaptive";
    case ControllerKind::FixedDroop: return "fixed-droop";
    case ControllerKind::None: return "none";
    case ControllerKind::Oracle: return "oracle";
    }
    return "?";
}

inline ControllerKind controller_kind_from_string(const std::string& s) {
    if (s == "es-adaptive") return ControllerKind::EsAdaptive;
    if (s == "fixed-droop") return ControllerKind::FixedDroop;
    if (s == "none") return ControllerKind::None;
    if (s == "oracle") return ControllerKind::Oracle;
    throw std::invalid_argument("unknown controller kind '" + s + "'");
}

/// Controller settings applied to every inverter in a run. Fields mirror
/// InverterController; SSE gains scale with each inverter's rating.
struct ControllerParams {
    double v_min = 0.80;
    double v_max = 1.20;
    double v_ref_init = 1.00;
    double deadband = 0.02;
    double q0_init_kvar = 0.0;

    double es_amplitude = 0.005;
    int es_period_steps = 10;       // dither period, in inner steps
    double es_washout_ratio = 5.0;  // omega / omega_h
    double es_gain = 40.0;
    double es_max_step_pu = 0.002;

    double hysteresis_mu = 0.3;
    bool hysteresis_enabled = true;
    double penalty_gain = 10.0;
    double sse_gain_factor = 0.5;   // K_Q = factor * rated_kva
    double sse_q0_large_factor = 0.2;
    int sse_window = 10;
    int sse_window_small = 8;
    ObjectiveKind objective = ObjectiveKind::CurrentSquared;
};

struct ScenarioConfig {
    double hours = 24.0;
    double dt_s = 30.0;
    ControllerKind controller = ControllerKind::EsAdaptive;
    ControllerParams params;
    bool regulators_enabled = true;
    bool high_variance_solar = false;
    std::string profiles_dir;                 // empty -> builtin profiles
    double substation_pu = 0.0;               // 0 -> feeder file value
    std::uint64_t seed = 2024;
    double price_per_kwh = 0.08;
    int settle_steps = 0;                     // unrecorded pre-run steps
    int oracle_interval_steps = 10;           // re-dispatch cadence for the oracle
    OracleOptions oracle;
    bool convexity_report = false;
    int convexity_stride = 10;                // numeric check every Nth step
    SolverOptions solver;
};

/// One row of simulation output.
struct StepRecord {
    long step = 0;
    double time_s = 0.0;
    bool converged = true;
    double balance_residual_pu = 0.0;
    std::vector<double> v_mag;        // bus-phase magnitudes, model order
    std::vector<double> pv_v_ref;
    std::vector<double> pv_q0_kvar;
    std::vector<double> pv_q_kvar;
    std::vector<double> pv_q_max_kvar;
    std::vector<double> pv_objective;
    std::vector<std::array<int, 3>> reg_taps;
    double total_loss_kw = 0.0;
    double penalty_sum = 0.0;
};

struct ScenarioSummary {
    std::string controller;
    long steps = 0;
    double dt_s = 0.0;
    double kwh_loss = 0.0;
    double min_voltage_pu = 0.0;
    double max_voltage_pu = 0.0;
    long ansi_violation_bus_steps = 0;
    std::vector<double> oscillation_index_kvar;  // per PV
    double oscillation_index_max_kvar = 0.0;
    double price_per_kwh = 0.0;
    double energy_cost_usd = 0.0;
    long diverged_steps = 0;
    std::optional<double> loss_gap_vs_oracle_pct;
};

struct ScenarioResult {
    std::vector<StepRecord> records;
    ScenarioSummary summary;
    std::vector<ConvexityRecord> convexity;
};

inline constexpr double kAnsiLow = 0.95;
inline constexpr double kAnsiHigh = 1.05;

/// Max-over-windows standard deviation of step-to-step dispatch changes;
/// sliding windows of 20 deltas.
inline double oscillation_index(const std::vector<double>& q_series, int window = 20) {
    const int n = static_cast<int>(q_series.size()) - 1;
    if (n < window) window = n;
    if (window <= 1) return 0.0;
    std::vector<double> deltas(n);
    for (int i = 0; i < n; ++i) deltas[i] = q_series[i + 1] - q_series[i];
    double worst = 0.0;
    for (int start = 0; start + window <= n; ++start) {
        double mean = 0.0;
        for (int i = 0; i < window; ++i) mean += deltas[start + i];
        mean /= window;
        double var = 0.0;
        for (int i = 0; i < window; ++i) {
            const double d = deltas[start + i] - mean;
            var += d * d;
        }
        worst = std::max(worst, std::sqrt(var / window));
    }
    return worst;
}

inline ScenarioSummary summarize(const std::vector<StepRecord>& records, double dt_s,
                                 double price_per_kwh) {
    if (records.empty()) throw std::invalid_argument("summarize: no records");
    ScenarioSummary s;
    s.steps = static_cast<long>(records.size());
    s.dt_s = dt_s;
    s.price_per_kwh = price_per_kwh;
    s.min_voltage_pu = std::numeric_limits<double>::infinity();
    s.max_voltage_pu = 0.0;
    const std::size_t n_pv = records.front().pv_q_kvar.size();
    std::vector<std::vector<double>> q_series(n_pv);

    for (const StepRecord& r : records) {
        s.kwh_loss += r.total_loss_kw * dt_s / 3600.0;
        for (double v : r.v_mag) {
            s.min_voltage_pu = std::min(s.min_voltage_pu, v);
            s.max_voltage_pu = std::max(s.max_voltage_pu, v);
            if (v < kAnsiLow || v > kAnsiHigh) ++s.ansi_violation_bus_steps;
        }
        for (std::size_t p = 0; p < n_pv; ++p) q_series[p].push_back(r.pv_q_kvar[p]);
        if (!r.converged) ++s.diverged_steps;
    }
    for (std::size_t p = 0; p < n_pv; ++p) {
        s.oscillation_index_kvar.push_back(oscillation_index(q_series[p]));
        s.oscillation_index_max_kvar =
            std::max(s.oscillation_index_max_kvar, s.oscillation_index_kvar.back());
    }
    s.energy_cost_usd = s.kwh_loss * price_per_kwh;
    return s;
}

namespace detail {

struct PvRuntime {
    std::size_t bus = 0;
    std::size_t branch = 0;
    ComplexMat3 z_pu{};
};

inline double bus_phase_mean_v(const PowerFlowSolution& sol, std::size_t bus, PhaseSet phases) {
    double sum = 0.0;
    int n = 0;
    for (int p = 0; p < kPhaseCount; ++p)
        if (phases.has(p)) {
            sum += std::abs(sol.v[bus][p]);
            ++n;
        }
    return n > 0 ? sum / n : 0.0;
}

}  // namespace detail

/// Quasi-static time-series run: profiles drive injections, regulators and
/// controllers act on the previous step's solution, the solver closes each
/// step. Deterministic for a fixed config.
class ScenarioEngine {
  public:
    ScenarioEngine(const FeederModel& model, const ScenarioConfig& config)
        : model_(model), config_(config) {
        if (config.substation_pu > 0.0) model_.source_voltage_pu = config.substation_pu;
        model_.validate();
        if (!config.profiles_dir.empty())
            profiles_ = load_profiles_dir(config.profiles_dir);
        else
            profiles_ = builtin_profiles(config.high_variance_solar, config.seed);
    }

    const FeederModel& model() const { return model_; }

    ScenarioResult run() {
        const long steps = static_cast<long>(std::llround(config_.hours * 3600.0 / config_.dt_s));
        if (steps <= 0) throw ScenarioError("scenario horizon must cover at least one step");

        PowerFlowSolver solver(model_, config_.solver);
        std::vector<detail::PvRuntime> runtime = pv_runtime(solver);
        std::vector<InverterController> ctrls = make_controllers();
        TapSet taps = taps_of(model_);
        std::vector<double> q_cmd(model_.pvs.size(), 0.0);
        std::vector<double> oracle_q(model_.pvs.size(), 0.0);

        ScenarioResult result;
        result.records.reserve(static_cast<std::size_t>(steps));

        // Sensing bootstrap: solve the first instant with initial dispatch so
        // controllers have a causal measurement for step 0.
        PowerFlowSolution prev = solver.solve(injections_at(0.0, q_cmd), taps);
        long diverged = 0;

        for (long k = -config_.settle_steps; k < steps; ++k) {
            const double t = std::max(0.0, static_cast<double>(k)) * config_.dt_s;

            if (config_.regulators_enabled) {
                for (std::size_t ri = 0; ri < model_.regulators.size(); ++ri) {
                    Regulator reg = model_.regulators[ri];
                    reg.taps = taps[ri];
                    const Branch& br = model_.branch(reg.branch);
                    const std::size_t to = model_.bus_index.at(br.to_bus);
                    std::array<double, 3> v{};
                    for (int p = 0; p < kPhaseCount; ++p) v[p] = std::abs(prev.v[to][p]);
                    taps[ri] = regulator_step(reg, v, br.phases).taps;
                }
            }

            const std::vector<double> pv_p = pv_active_power(t);
            if (config_.controller == ControllerKind::Oracle) {
                if ((k + config_.settle_steps) % config_.oracle_interval_steps == 0) {
                    DispatchSnapshot snap{loads_at(t), pv_p, oracle_q, taps};
                    OracleOptions opts = config_.oracle;
                    opts.penalty_gain = config_.params.penalty_gain;
                    oracle_q = brute_force_dispatch(solver, snap, opts).q_kvar;
                }
                for (std::size_t i = 0; i < q_cmd.size(); ++i) {
                    const double cap =
                        q_capacity(model_.pvs[i].rated_kva, std::min(pv_p[i], model_.pvs[i].rated_kva));
                    q_cmd[i] = std::clamp(oracle_q[i], -cap, cap);
                }
            } else if (config_.controller != ControllerKind::None) {
                for (std::size_t i = 0; i < ctrls.size(); ++i) {
                    Measurements meas;
                    meas.v_pu = detail::bus_phase_mean_v(prev, runtime[i].bus, model_.pvs[i].phases);
                    meas.i_branch_pu = prev.branch_i[runtime[i].branch];
                    meas.branch_phases = model_.branches[runtime[i].branch].phases;
                    if (config_.params.objective == ObjectiveKind::BranchLoss)
                        meas.branch_z_pu = &runtime[i].z_pu;
                    meas.p_pv_kw = pv_p[i];
                    q_cmd[i] = controller_step(ctrls[i], meas, config_.dt_s);
                }
            }

            bool converged = true;
            try {
                prev = solver.solve(injections_at(t, q_cmd, &pv_p), taps, &prev);
            } catch (const ConvergenceError&) {
                converged = false;
                ++diverged;
            }

            if (k < 0) continue;
            result.records.push_back(make_record(k, t, converged, prev, ctrls, q_cmd, taps, pv_p));

            if (config_.convexity_report && k % config_.convexity_stride == 0 && converged) {
                DispatchSnapshot snap{loads_at(t), pv_p, q_cmd, taps};
                for (std::size_t i = 0; i < model_.pvs.size(); ++i) {
                    const double h = 1e-3 * model_.pvs[i].rated_kva;
                    try {
                        result.convexity.push_back(evaluate_convexity(solver, snap, i, h, k));
                    } catch (const ConvergenceError&) {
                        // Perturbed solve failed; leave this sample out.
                    }
                }
            }
        }

        if (diverged > std::max<long>(1, steps / 100))
            throw ScenarioError("more than 1% of steps failed to converge (" +
                                std::to_string(diverged) + " of " + std::to_string(steps) + ")");

        result.summary = summarize(result.records, config_.dt_s, config_.price_per_kwh);
        result.summary.controller = to_string(config_.controller);
        return result;
    }

    InjectionSet loads_at(double t) const {
        std::vector<double> mult(model_.loads.size());
        for (std::size_t i = 0; i < mult.size(); ++i) mult[i] = profiles_.load_multiplier(i, t);
        return build_injections(model_, mult, std::vector<double>(model_.pvs.size(), 0.0),
                                std::vector<double>(model_.pvs.size(), 0.0));
    }

    std::vector<double> pv_active_power(double t) const {
        std::vector<double> p(model_.pvs.size());
        const double solar = profiles_.solar_multiplier(t);
        for (std::size_t i = 0; i < p.size(); ++i)
            p[i] = std::min(model_.pvs[i].rated_kw * solar, model_.pvs[i].rated_kva);
        return p;
    }

    DispatchSnapshot snapshot_at(double t, const TapSet& taps) const {
        return {loads_at(t), pv_active_power(t), std::vector<double>(model_.pvs.size(), 0.0), taps};
    }

  private:
    InjectionSet injections_at(double t, const std::vector<double>& q_kvar,
                               const std::vector<double>* pv_p = nullptr) const {
        std::vector<double> mult(model_.loads.size());
        for (std::size_t i = 0; i < mult.size(); ++i) mult[i] = profiles_.load_multiplier(i, t);
        return build_injections(model_, mult, pv_p ? *pv_p : pv_active_power(t), q_kvar);
    }

    std::vector<detail::PvRuntime> pv_runtime(const PowerFlowSolver& solver) const {
        std::vector<detail::PvRuntime> rt(model_.pvs.size());
        for (std::size_t i = 0; i < model_.pvs.size(); ++i) {
            rt[i].bus = model_.bus_index.at(model_.pvs[i].bus);
            rt[i].branch = model_.branch_index.at(model_.pvs[i].monitored_branch);
            const Branch& br = model_.branches[rt[i].branch];
            const double z_base =
                PowerFlowSolver::z_base_ohm(model_, model_.bus_index.at(br.to_bus));
            for (int m = 0; m < kPhaseCount; ++m)
                for (int n = 0; n < kPhaseCount; ++n) rt[i].z_pu[m][n] = br.z_ohm[m][n] / z_base;
        }
        return rt;
    }

    std::vector<InverterController> make_controllers() const {
        std::vector<InverterController> ctrls;
        const ControllerParams& p = config_.params;
        for (const PvInverter& pv : model_.pvs) {
            InverterController c = InverterController::for_pv(pv);
            c.droop.v_min = p.v_min;
            c.droop.v_max = p.v_max;
            c.droop.v_ref = p.v_ref_init;
            c.droop.deadband = p.deadband;
            c.droop.q0_kvar = p.q0_init_kvar;
            c.es.mu_hat = p.v_ref_init;
            c.es.amplitude = p.es_amplitude;
            c.es.omega = 2.0 * std::numbers::pi / (p.es_period_steps * config_.dt_s);
            c.es.omega_h = c.es.omega / p.es_washout_ratio;
            c.es.gain = p.es_gain;
            c.es.max_step_pu = p.es_max_step_pu;
            c.hysteresis_mu = p.hysteresis_mu;
            c.hysteresis_enabled = p.hysteresis_enabled;
            c.penalty_gain = p.penalty_gain;
            c.objective = p.objective;
            c.sse.gain_kvar_per_puv = p.sse_gain_factor * pv.rated_kva;
            c.sse.q0_large_kvar = p.sse_q0_large_factor * pv.rated_kva;
            c.sse.window = p.sse_window;
            c.sse.window_nominal = p.sse_window;
            c.sse.window_small = p.sse_window_small;
            if (config_.controller == ControllerKind::FixedDroop) {
                c.es_enabled = false;
                c.sse_enabled = false;
            }
            ctrls.push_back(std::move(c));
        }
        return ctrls;
    }

    StepRecord make_record(long k, double t, bool converged, const PowerFlowSolution& sol,
                           const std::vector<InverterController>& ctrls,
                           const std::vector<double>& q_cmd, const TapSet& taps,
                           const std::vector<double>& pv_p) const {
        StepRecord r;
        r.step = k;
        r.time_s = t;
        r.converged = converged;
        r.balance_residual_pu =
            std::abs(sol.source_power - sol.load_power - sol.total_loss);
        for (std::size_t b = 0; b < model_.buses.size(); ++b)
            for (int p = 0; p < kPhaseCount; ++p)
                if (model_.buses[b].phases.has(p)) r.v_mag.push_back(std::abs(sol.v[b][p]));
        for (std::size_t i = 0; i < model_.pvs.size(); ++i) {
            const bool has_ctrl = config_.controller == ControllerKind::EsAdaptive ||
                                  config_.controller == ControllerKind::FixedDroop;
            r.pv_v_ref.push_back(has_ctrl ? ctrls[i].droop.v_ref : 0.0);
            r.pv_q0_kvar.push_back(has_ctrl ? ctrls[i].droop.q0_kvar : 0.0);
            r.pv_q_kvar.push_back(q_cmd[i]);
            r.pv_q_max_kvar.push_back(
                q_capacity(model_.pvs[i].rated_kva, std::min(pv_p[i], model_.pvs[i].rated_kva)));
            r.pv_objective.push_back(has_ctrl ? ctrls[i].last_objective : 0.0);
        }
        r.reg_taps = taps;
        // total_loss sums per-phase pu values, so the per-phase base converts to kW.
        r.total_loss_kw = sol.total_loss.real() * model_.s_base_phase_kva();
        double pen = 0.0;
        for (double v : r.v_mag) pen += voltage_penalty(v, config_.params.penalty_gain);
        r.penalty_sum = pen;
        return r;
    }

    FeederModel model_;
    ScenarioConfig config_;
    ProfileSet profiles_;
};

inline ScenarioResult run_scenario(const FeederModel& model, const ScenarioConfig& config) {
    return ScenarioEngine(model, config).run();
}

}  // namespace vvo
