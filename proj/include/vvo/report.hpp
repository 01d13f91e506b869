#pragma once

#include <cstdio>
#include <fstream>
#include <ostream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "vvo/scenario.hpp"

namespace vvo {

namespace detail {

inline void append_g9(std::string& out, double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    out += buf;
}

}  // namespace detail

/// Fixed column order (see README): step, time_s, converged,
/// balance_residual_pu, one v_<bus>_<phase> per present bus phase, then per PV
/// vref/q0/qpv/qmax/obj, per regulator taps, loss and penalty. Floats carry
/// nine significant digits.
inline std::string steps_csv_header(const FeederModel& model) {
    std::string h = "step,time_s,converged,balance_residual_pu";
    for (const Bus& b : model.buses)
        for (int p = 0; p < kPhaseCount; ++p)
            if (b.phases.has(p)) h += ",v_" + b.id + "_" + kPhaseNames[p];
    for (const PvInverter& pv : model.pvs) {
        const std::string tag = "pv_" + pv.bus;
        h += "," + tag + "_vref," + tag + "_q0_kvar," + tag + "_qpv_kvar," + tag + "_qmax_kvar," +
             tag + "_obj";
    }
    for (const Regulator& reg : model.regulators)
        for (int p = 0; p < kPhaseCount; ++p)
            h += ",tap_" + reg.branch + "_" + kPhaseNames[p];
    h += ",loss_kw,penalty";
    return h;
}

inline std::string steps_csv(const FeederModel& model, const std::vector<StepRecord>& records) {
    std::string out = steps_csv_header(model);
    out += '\n';
    for (const StepRecord& r : records) {
        out += std::to_string(r.step);
        out += ',';
        detail::append_g9(out, r.time_s);
        out += r.converged ? ",1" : ",0";
        out += ',';
        detail::append_g9(out, r.balance_residual_pu);
        for (double v : r.v_mag) {
            out += ',';
            detail::append_g9(out, v);
        }
        for (std::size_t i = 0; i < r.pv_q_kvar.size(); ++i) {
            out += ',';
            detail::append_g9(out, r.pv_v_ref[i]);
            out += ',';
            detail::append_g9(out, r.pv_q0_kvar[i]);
            out += ',';
            detail::append_g9(out, r.pv_q_kvar[i]);
            out += ',';
            detail::append_g9(out, r.pv_q_max_kvar[i]);
            out += ',';
            detail::append_g9(out, r.pv_objective[i]);
        }
        for (const auto& taps : r.reg_taps)
            for (int p = 0; p < kPhaseCount; ++p) out += ',' + std::to_string(taps[p]);
        out += ',';
        detail::append_g9(out, r.total_loss_kw);
        out += ',';
        detail::append_g9(out, r.penalty_sum);
        out += '\n';
    }
    return out;
}

inline std::string convexity_csv(const std::vector<ConvexityRecord>& records) {
    std::string out = "step,pv_bus,denominator,numeric_d2,numerator,numerator_nonneg,satisfied\n";
    for (const ConvexityRecord& r : records) {
        out += std::to_string(r.step);
        out += ',' + r.pv_bus + ',';
        detail::append_g9(out, r.denominator);
        out += ',';
        detail::append_g9(out, r.numeric_d2);
        out += ',';
        detail::append_g9(out, r.numerator);
        out += r.numerator_nonneg ? ",1" : ",0";
        out += r.satisfied ? ",1\n" : ",0\n";
    }
    return out;
}

inline nlohmann::json summary_json(const ScenarioSummary& s) {
    nlohmann::json j;
    j["controller"] = s.controller;
    j["steps"] = s.steps;
    j["dt_s"] = s.dt_s;
    j["kwh_loss"] = s.kwh_loss;
    j["min_voltage_pu"] = s.min_voltage_pu;
    j["max_voltage_pu"] = s.max_voltage_pu;
    j["ansi_violation_bus_steps"] = s.ansi_violation_bus_steps;
    j["oscillation_index_kvar"] = s.oscillation_index_kvar;
    j["oscillation_index_max_kvar"] = s.oscillation_index_max_kvar;
    j["price_per_kwh"] = s.price_per_kwh;
    j["energy_cost_usd"] = s.energy_cost_usd;
    j["diverged_steps"] = s.diverged_steps;
    if (s.loss_gap_vs_oracle_pct)
        j["loss_gap_vs_oracle_pct"] = *s.loss_gap_vs_oracle_pct;
    else
        j["loss_gap_vs_oracle_pct"] = nullptr;
    return j;
}

}  // namespace vvo
