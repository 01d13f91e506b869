#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "vvo/feeder.hpp"

namespace vvo {

/// Daily multiplier shape sampled uniformly over 24 hours. Values apply to
/// rated load P/Q or PV rated power. Lookup interpolates linearly and wraps,
/// so runs longer than a day repeat the shape.
struct TimeSeriesProfile {
    std::string name;
    double dt_s = 30.0;
    std::vector<double> samples;

    double span_s() const { return dt_s * static_cast<double>(samples.size()); }

    double value_at(double t_s) const {
        if (samples.empty()) throw std::invalid_argument("profile '" + name + "' is empty");
        if (samples.size() == 1) return samples[0];
        const double span = span_s();
        double t = std::fmod(t_s, span);
        if (t < 0) t += span;
        const double pos = t / dt_s;
        const std::size_t i0 = static_cast<std::size_t>(pos) % samples.size();
        const std::size_t i1 = (i0 + 1) % samples.size();
        const double frac = pos - std::floor(pos);
        return samples[i0] + (samples[i1] - samples[i0]) * frac;
    }

    void check() const {
        for (double s : samples)
            if (!(s >= 0.0)) throw ValidationError("profile '" + name + "' has a negative sample");
    }
};

/// CSV with header "index,multiplier". The sample spacing is inferred so the
/// rows span 24 hours.
inline TimeSeriesProfile load_profile_csv(const std::string& path, const std::string& name = "") {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open profile file '" + path + "'");
    TimeSeriesProfile prof;
    prof.name = name.empty() ? path : name;
    std::string line;
    if (!std::getline(in, line) || line.rfind("index,multiplier", 0) != 0)
        throw ParseError("profile '" + path + "' must start with header 'index,multiplier'");
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto comma = line.find(',');
        if (comma == std::string::npos)
            throw ParseError("profile '" + path + "' has a row without a comma");
        try {
            prof.samples.push_back(std::stod(line.substr(comma + 1)));
        } catch (const std::exception&) {
            throw ParseError("profile '" + path + "' has a non-numeric multiplier");
        }
    }
    if (prof.samples.empty()) throw ParseError("profile '" + path + "' has no samples");
    prof.dt_s = 86400.0 / static_cast<double>(prof.samples.size());
    prof.check();
    return prof;
}

inline void save_profile_csv(const TimeSeriesProfile& prof, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ParseError("cannot write profile file '" + path + "'");
    out << "index,multiplier\n";
    char buf[64];
    for (std::size_t i = 0; i < prof.samples.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%zu,%.9g\n", i, prof.samples[i]);
        out << buf;
    }
}

namespace detail {

inline double piecewise_linear(double hour, const std::vector<std::pair<double, double>>& pts) {
    if (hour <= pts.front().first) return pts.front().second;
    for (std::size_t i = 1; i < pts.size(); ++i) {
        if (hour <= pts[i].first) {
            const double f = (hour - pts[i - 1].first) / (pts[i].first - pts[i - 1].first);
            return pts[i - 1].second + f * (pts[i].second - pts[i - 1].second);
        }
    }
    return pts.back().second;
}

inline double bell(double hour, double center, double width) {
    const double u = (hour - center) / width;
    return std::exp(-0.5 * u * u);
}

}  // namespace detail

inline constexpr int kDailySamples30s = 2880;

/// Clear-sky solar shape with two short cloud dips around hours 10 and 12.
inline TimeSeriesProfile builtin_smooth_solar() {
    TimeSeriesProfile prof;
    prof.name = "solar-smooth";
    prof.dt_s = 30.0;
    prof.samples.resize(kDailySamples30s);
    for (int k = 0; k < kDailySamples30s; ++k) {
        const double h = k * 30.0 / 3600.0;
        double v = 0.0;
        if (h > 5.8 && h < 18.4) {
            const double x = (h - 5.8) / (18.4 - 5.8);
            v = std::pow(std::sin(std::numbers::pi * x), 1.6);
        }
        v *= 1.0 - 0.55 * detail::bell(h, 10.0, 0.18) - 0.60 * detail::bell(h, 12.0, 0.22);
        prof.samples[k] = std::max(0.0, v);
    }
    return prof;
}

/// Smooth solar shape modulated by bounded AR(1) jitter, deterministic for a
/// given seed. The jitter is scaled so both shapes carry the same daily
/// energy to within a percent.
inline TimeSeriesProfile builtin_highvar_solar(std::uint64_t seed) {
    TimeSeriesProfile smooth = builtin_smooth_solar();
    TimeSeriesProfile prof;
    prof.name = "solar-highvar";
    prof.dt_s = 30.0;
    prof.samples.resize(kDailySamples30s);

    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> uni(-1.0, 1.0);
    double j = 1.0;
    double sum_smooth = 0.0, sum_raw = 0.0;
    for (int k = 0; k < kDailySamples30s; ++k) {
        j = std::clamp(1.0 + 0.94 * (j - 1.0) + 0.06 * uni(rng), 0.30, 1.15);
        prof.samples[k] = smooth.samples[k] * j;
        sum_smooth += smooth.samples[k];
        sum_raw += prof.samples[k];
    }
    const double scale = sum_raw > 0.0 ? sum_smooth / sum_raw : 1.0;
    for (double& s : prof.samples) s = std::min(1.10, s * scale);
    return prof;
}

/// Residential-style shape: high at midnight, overnight trough, evening peak,
/// flat final hour.
inline TimeSeriesProfile builtin_load_shape_1() {
    static const std::vector<std::pair<double, double>> pts = {
        {0.0, 0.85}, {1.5, 0.76}, {4.0, 0.58}, {6.0, 0.62}, {8.0, 0.72},
        {10.0, 0.67}, {12.0, 0.63}, {14.0, 0.64}, {16.0, 0.70}, {17.5, 0.80},
        {19.0, 0.97}, {20.0, 1.00}, {21.5, 0.98}, {22.5, 0.93}, {23.0, 0.90},
        {24.0, 0.90}};
    TimeSeriesProfile prof;
    prof.name = "load-1";
    prof.dt_s = 30.0;
    prof.samples.resize(kDailySamples30s);
    for (int k = 0; k < kDailySamples30s; ++k)
        prof.samples[k] = detail::piecewise_linear(k * 30.0 / 3600.0, pts);
    return prof;
}

/// Commercial-style shape: midday plateau, mild evening, flat final hour.
inline TimeSeriesProfile builtin_load_shape_2() {
    static const std::vector<std::pair<double, double>> pts = {
        {0.0, 0.80}, {3.0, 0.64}, {5.5, 0.60}, {8.0, 0.78}, {10.0, 0.88},
        {12.0, 0.92}, {14.0, 0.89}, {16.0, 0.86}, {18.0, 0.88}, {20.0, 0.92},
        {22.0, 0.88}, {23.0, 0.85}, {24.0, 0.85}};
    TimeSeriesProfile prof;
    prof.name = "load-2";
    prof.dt_s = 30.0;
    prof.samples.resize(kDailySamples30s);
    for (int k = 0; k < kDailySamples30s; ++k)
        prof.samples[k] = detail::piecewise_linear(k * 30.0 / 3600.0, pts);
    return prof;
}

/// The profile bundle a scenario draws from: one solar shape plus two load
/// shapes assigned to loads alternately by index.
struct ProfileSet {
    TimeSeriesProfile solar;
    TimeSeriesProfile load1;
    TimeSeriesProfile load2;

    double load_multiplier(std::size_t load_index, double t_s) const {
        return (load_index % 2 == 0 ? load1 : load2).value_at(t_s);
    }
    double solar_multiplier(double t_s) const { return solar.value_at(t_s); }
};

inline ProfileSet builtin_profiles(bool high_variance, std::uint64_t seed) {
    return {high_variance ? builtin_highvar_solar(seed) : builtin_smooth_solar(),
            builtin_load_shape_1(), builtin_load_shape_2()};
}

/// Loads solar.csv, load1.csv and load2.csv from a directory.
inline ProfileSet load_profiles_dir(const std::string& dir) {
    return {load_profile_csv(dir + "/solar.csv", "solar"),
            load_profile_csv(dir + "/load1.csv", "load1"),
            load_profile_csv(dir + "/load2.csv", "load2")};
}

}  // namespace vvo
