#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <span>
#include <utility>
#include <vector>

#include "vvo/feeder.hpp"

namespace vvo {

/// Reactive capability left after active production, from the inverter's
/// apparent-power rating. Q limits are symmetric: Q_min = -Q_max.
inline double q_capacity(double rated_kva, double p_kw) {
    if (p_kw < 0.0 || p_kw > rated_kva)
        throw std::invalid_argument("q_capacity: active power outside [0, rated_kva]");
    return std::sqrt(rated_kva * rated_kva - p_kw * p_kw);
}

/// Volt-VAR droop curve parameters. The flat segment (deadband) spans
/// [v_left, v_right] around v_ref; output saturates at Q_max below v_min and
/// at Q_min above v_max.
struct DroopParams {
    double v_min = 0.80;
    double v_max = 1.20;
    double v_ref = 1.00;
    double deadband = 0.02;
    double q0_kvar = 0.0;

    double v_left() const { return v_ref - deadband / 2.0; }
    double v_right() const { return v_ref + deadband / 2.0; }

    void check() const {
        if (!(v_min < v_left() && v_left() <= v_right() && v_right() < v_max))
            throw std::invalid_argument("droop params must satisfy v_min < v_left <= v_right < v_max");
    }
};

/// Piecewise-linear Volt-VAR map: saturation, linear rise, deadband, linear
/// fall, saturation. Continuous in v and non-increasing for valid params.
inline double droop_eval(const DroopParams& dp, double v_pu, double q_min, double q_max) {
    dp.check();
    if (v_pu <= dp.v_min) return q_max;
    if (v_pu < dp.v_left())
        return -(q_max - dp.q0_kvar) / (dp.v_left() - dp.v_min) * (v_pu - dp.v_left()) + dp.q0_kvar;
    if (v_pu <= dp.v_right()) return dp.q0_kvar;
    if (v_pu < dp.v_max)
        return -(q_min - dp.q0_kvar) / (dp.v_right() - dp.v_max) * (v_pu - dp.v_right()) + dp.q0_kvar;
    return q_min;
}

/// First-order reactive-power inertia: convex combination of the previous
/// dispatch and the fresh droop output.
inline double hysteresis_update(double q_prev_kvar, double q_new_kvar, double mu) {
    if (mu <= 0.0 || mu > 1.0) throw std::invalid_argument("hysteresis mu must lie in (0, 1]");
    return (1.0 - mu) * q_prev_kvar + mu * q_new_kvar;
}

/// Linear penalty outside the ANSI band [0.95, 1.05]; zero inside.
inline double voltage_penalty(double v_pu, double k_p) {
    if (v_pu <= 0.95) return (0.95 - v_pu) * k_p;
    if (v_pu >= 1.05) return (v_pu - 1.05) * k_p;
    return 0.0;
}

/// Discrete-time extremum seeker over the droop reference voltage.
///
/// Each step: high-pass the objective sample through a washout filter,
/// demodulate with the sinusoidal dither, integrate against the gradient, and
/// emit the dithered reference. Positive gain seeks a minimum. Per-step motion
/// of the estimate is slew-limited so that transient spikes in the objective
/// cannot throw the reference across its search range.
struct ExtremumSeeker {
    double mu_hat = 1.00;                                // reference estimate, pu
    double amplitude = 0.005;                            // dither amplitude, pu
    double omega = 2.0 * std::numbers::pi / 300.0;       // dither frequency, rad/s
    double omega_h = 2.0 * std::numbers::pi / 1500.0;    // washout cutoff, rad/s
    double gain = 40.0;
    double max_step_pu = 0.002;                          // slew limit on mu_hat per step
    double search_lo = 0.95;
    double search_hi = 1.05;

    double phase = 0.0;
    double prev_y = 0.0;
    double eta = 0.0;
    bool primed = false;
    long step_count = 0;
};

/// Advances the seeker by one sample of the objective; returns the new
/// reference voltage (estimate plus dither), clamped to the search range.
inline double es_step(ExtremumSeeker& es, double y, double dt_s) {
    if (dt_s <= 0.0) throw std::invalid_argument("es_step: dt must be positive");
    const double dither = std::sin(es.phase);
    if (!es.primed) {
        es.prev_y = y;
        es.primed = true;
    }
    const double alpha = 1.0 / (1.0 + es.omega_h * dt_s);
    es.eta = alpha * (es.eta + y - es.prev_y);
    es.prev_y = y;

    const double xi = es.amplitude * dither * es.eta;
    const double delta = std::clamp(-es.gain * xi * dt_s, -es.max_step_pu, es.max_step_pu);
    es.mu_hat = std::clamp(es.mu_hat + delta, es.search_lo, es.search_hi);
    const double mu = std::clamp(es.mu_hat + es.amplitude * dither, es.search_lo, es.search_hi);

    es.phase += es.omega * dt_s;
    if (es.phase > 2.0 * std::numbers::pi) es.phase -= 2.0 * std::numbers::pi;
    ++es.step_count;
    return mu;
}

/// Outer-loop droop-offset adaptation from the accumulated voltage tracking
/// error. Large corrections shorten the next averaging window.
struct SseAdapter {
    int window = 10;          // current T, in inner steps
    int window_nominal = 10;
    int window_small = 8;
    double gain_kvar_per_puv = 0.0;  // K_Q
    double q0_large_kvar = 0.0;      // threshold for window shortening
    long update_count = 0;           // k_n
};

struct SseUpdate {
    double q0_kvar;
    int next_window;
    double sse;
};

/// Applies one outer-loop update from a full window of (V, V_ref) samples.
inline SseUpdate sse_update(SseAdapter& sse, std::span<const std::pair<double, double>> window,
                            double q0_prev_kvar, double q_min, double q_max) {
    if (window.empty()) throw std::invalid_argument("sse_update: empty window");
    double err = 0.0;
    for (const auto& [v, v_ref] : window) err += v - v_ref;
    const double q0 = std::clamp(q0_prev_kvar - sse.gain_kvar_per_puv * err, q_min, q_max);
    const int next =
        std::abs(q0 - q0_prev_kvar) >= sse.q0_large_kvar ? sse.window_small : sse.window_nominal;
    ++sse.update_count;
    sse.window = next;
    return {q0, next, err};
}

enum class ObjectiveKind { CurrentSquared, BranchLoss };

/// Local measurements available to one inverter: own-bus voltage and the
/// upstream branch currents, optionally with that branch's per-unit impedance
/// when the loss objective is in use.
struct Measurements {
    double v_pu = 1.0;
    Complex3 i_branch_pu{};
    PhaseSet branch_phases;
    const ComplexMat3* branch_z_pu = nullptr;
    double p_pv_kw = 0.0;
};

/// Complete per-inverter controller state: droop parameters, extremum seeker,
/// outer-loop adapter and the hysteresis memory. Each instance is owned and
/// stepped by exactly one caller and never reads another controller's state.
struct InverterController {
    double rated_kva = 0.0;
    DroopParams droop;
    ExtremumSeeker es;
    SseAdapter sse;
    bool es_enabled = true;
    bool sse_enabled = true;
    bool hysteresis_enabled = true;
    double hysteresis_mu = 0.3;
    double penalty_gain = 10.0;  // K_p
    ObjectiveKind objective = ObjectiveKind::CurrentSquared;

    double q_pv_kvar = 0.0;  // hysteresis memory, also the last command
    std::vector<std::pair<double, double>> window_samples;

    // Step diagnostics.
    double last_objective = 0.0;
    double last_q_max = 0.0;

    static InverterController for_pv(const PvInverter& pv) {
        InverterController c;
        c.rated_kva = pv.rated_kva;
        c.sse.gain_kvar_per_puv = 0.5 * pv.rated_kva;
        c.sse.q0_large_kvar = 0.2 * pv.rated_kva;
        return c;
    }
};

inline double controller_objective(const InverterController& c, const Measurements& m) {
    double y = 0.0;
    if (c.objective == ObjectiveKind::BranchLoss && m.branch_z_pu != nullptr) {
        Complex loss{};
        for (int a = 0; a < kPhaseCount; ++a)
            for (int b = 0; b < kPhaseCount; ++b)
                loss += (*m.branch_z_pu)[a][b] * m.i_branch_pu[a] * std::conj(m.i_branch_pu[b]);
        y = loss.real();
    } else {
        for (int p = 0; p < kPhaseCount; ++p)
            if (m.branch_phases.has(p)) y += std::norm(m.i_branch_pu[p]);
    }
    return y + voltage_penalty(m.v_pu, c.penalty_gain);
}

/// One inner-loop pass: objective, reference update, capacity refresh,
/// outer-loop boundary handling, then droop and hysteresis. Returns the
/// reactive dispatch command in kvar, always within the live capability.
inline double controller_step(InverterController& c, const Measurements& m, double dt_s) {
    const double y = controller_objective(c, m);
    if (c.es_enabled) c.droop.v_ref = es_step(c.es, y, dt_s);

    const double q_max = q_capacity(c.rated_kva, std::min(m.p_pv_kw, c.rated_kva));
    const double q_min = -q_max;
    c.droop.q0_kvar = std::clamp(c.droop.q0_kvar, q_min, q_max);

    if (c.sse_enabled) {
        c.window_samples.emplace_back(m.v_pu, c.droop.v_ref);
        if (static_cast<int>(c.window_samples.size()) >= c.sse.window) {
            const SseUpdate upd = sse_update(c.sse, c.window_samples, c.droop.q0_kvar, q_min, q_max);
            c.droop.q0_kvar = upd.q0_kvar;
            c.window_samples.clear();
        }
    }

    const double q_droop = droop_eval(c.droop, m.v_pu, q_min, q_max);
    double q_cmd = c.hysteresis_enabled ? hysteresis_update(c.q_pv_kvar, q_droop, c.hysteresis_mu)
                                        : q_droop;
    q_cmd = std::clamp(q_cmd, q_min, q_max);

    c.q_pv_kvar = q_cmd;
    c.last_objective = y;
    c.last_q_max = q_max;
    return q_cmd;
}

}  // namespace vvo
