#pragma once

#include <cmath>
#include <limits>
#include <numbers>
#include <span>
#include <stdexcept>
#include <vector>

#include "vvo/scenario.hpp"

namespace vvo {

struct PhaseAnalysis {
    double delta_theta_deg = 0.0;  // phase of trace A minus phase of trace B
    double amplitude_ratio = 0.0;  // amplitude A / amplitude B
    double amplitude_a = 0.0;
    double amplitude_b = 0.0;
};

namespace detail {

struct DemodResult {
    double amplitude;
    double theta_rad;
};

/// Synchronous demodulation at omega over an integer number of periods,
/// jointly fitted with an offset and a linear trend so slow dispatch drift
/// does not leak into the quadrature component. Least squares on the basis
/// {1, k, sin(w t_k), cos(w t_k)} via its 4x4 normal equations.
inline DemodResult demodulate(std::span<const double> q, double dt_s, double omega) {
    const std::size_t n = q.size();
    double ata[4][4] = {};
    double aty[4] = {};
    for (std::size_t k = 0; k < n; ++k) {
        const double wt = omega * k * dt_s;
        const double basis[4] = {1.0, static_cast<double>(k), std::sin(wt), std::cos(wt)};
        for (int i = 0; i < 4; ++i) {
            aty[i] += basis[i] * q[k];
            for (int j = 0; j < 4; ++j) ata[i][j] += basis[i] * basis[j];
        }
    }
    // Gaussian elimination with partial pivoting.
    double m[4][5];
    for (int i = 0; i < 4; ++i) {
        for (int j = 0; j < 4; ++j) m[i][j] = ata[i][j];
        m[i][4] = aty[i];
    }
    for (int col = 0; col < 4; ++col) {
        int pivot = col;
        for (int r = col + 1; r < 4; ++r)
            if (std::abs(m[r][col]) > std::abs(m[pivot][col])) pivot = r;
        for (int j = 0; j < 5; ++j) std::swap(m[col][j], m[pivot][j]);
        if (m[col][col] == 0.0) continue;  // degenerate basis; coefficient stays zero
        for (int r = 0; r < 4; ++r) {
            if (r == col) continue;
            const double f = m[r][col] / m[col][col];
            for (int j = col; j < 5; ++j) m[r][j] -= f * m[col][j];
        }
    }
    double coef[4] = {};
    for (int i = 0; i < 4; ++i) coef[i] = m[i][i] != 0.0 ? m[i][4] / m[i][i] : 0.0;
    const double a = coef[2], b = coef[3];  // sin and cos coefficients
    return {std::hypot(a, b), std::atan2(b, a)};
}

inline double wrap_deg(double deg) {
    while (deg > 180.0) deg -= 360.0;
    while (deg < -180.0) deg += 360.0;
    return deg;
}

}  // namespace detail

/// Compares the dither-frequency components of two reactive dispatch traces.
/// Requires at least four full dither periods of samples; windows are trimmed
/// to an integer number of periods.
inline PhaseAnalysis perturbation_phase_analysis(std::span<const double> q_a,
                                                 std::span<const double> q_b, double dt_s,
                                                 double omega) {
    if (q_a.size() != q_b.size())
        throw std::invalid_argument("perturbation_phase_analysis: traces differ in length");
    const double period_steps = 2.0 * std::numbers::pi / (omega * dt_s);
    const std::size_t usable =
        static_cast<std::size_t>(std::floor(q_a.size() / period_steps)) *
        static_cast<std::size_t>(std::llround(period_steps));
    if (std::floor(q_a.size() / period_steps) < 4.0)
        throw std::invalid_argument(
            "perturbation_phase_analysis: need at least 4 dither periods of samples");

    const auto da = detail::demodulate(q_a.first(usable), dt_s, omega);
    const auto db = detail::demodulate(q_b.first(usable), dt_s, omega);
    PhaseAnalysis out;
    out.amplitude_a = da.amplitude;
    out.amplitude_b = db.amplitude;
    out.amplitude_ratio = db.amplitude != 0.0 ? da.amplitude / db.amplitude
                                              : std::numeric_limits<double>::infinity();
    out.delta_theta_deg =
        detail::wrap_deg((da.theta_rad - db.theta_rad) * 180.0 / std::numbers::pi);
    return out;
}

/// Convenience overload pulling two PV dispatch traces out of step records.
inline PhaseAnalysis perturbation_phase_analysis(const std::vector<StepRecord>& records,
                                                 std::size_t pv_a, std::size_t pv_b, double dt_s,
                                                 double omega, std::size_t first_step = 0,
                                                 std::size_t count = 0) {
    if (count == 0) count = records.size() - first_step;
    std::vector<double> qa, qb;
    qa.reserve(count);
    qb.reserve(count);
    for (std::size_t k = first_step; k < first_step + count && k < records.size(); ++k) {
        qa.push_back(records[k].pv_q_kvar[pv_a]);
        qb.push_back(records[k].pv_q_kvar[pv_b]);
    }
    return perturbation_phase_analysis(qa, qb, dt_s, omega);
}

}  // namespace vvo
