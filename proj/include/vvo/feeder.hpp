#pragma once

#include <array>
#include <complex>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace vvo {

using Complex = std::complex<double>;
using Complex3 = std::array<Complex, 3>;
using ComplexMat3 = std::array<std::array<Complex, 3>, 3>;

enum class Phase : int { A = 0, B = 1, C = 2 };
inline constexpr int kPhaseCount = 3;
inline constexpr char kPhaseNames[kPhaseCount] = {'a', 'b', 'c'};

/// Set of phases present on a bus, branch, load or inverter.
class PhaseSet {
  public:
    PhaseSet() = default;
    explicit PhaseSet(std::uint8_t mask) : mask_(mask & 0x7) {}

    static PhaseSet all() { return PhaseSet(0x7); }

    /// Parse strings like "abc", "a", "bc".
    static PhaseSet from_string(const std::string& s) {
        std::uint8_t mask = 0;
        for (char c : s) {
            switch (c) {
            case 'a': case 'A': mask |= 1; break;
            case 'b': case 'B': mask |= 2; break;
            case 'c': case 'C': mask |= 4; break;
            default:
                throw std::invalid_argument("unknown phase character '" + std::string(1, c) + "'");
            }
        }
        return PhaseSet(mask);
    }

    std::string to_string() const {
        std::string s;
        for (int p = 0; p < kPhaseCount; ++p)
            if (has(p)) s.push_back(kPhaseNames[p]);
        return s;
    }

    bool has(int phase) const { return (mask_ >> phase) & 1; }
    bool has(Phase p) const { return has(static_cast<int>(p)); }
    void add(int phase) { mask_ |= std::uint8_t(1 << phase); }
    bool empty() const { return mask_ == 0; }
    bool subset_of(PhaseSet other) const { return (mask_ & ~other.mask_) == 0; }
    int count() const { return (mask_ & 1) + ((mask_ >> 1) & 1) + ((mask_ >> 2) & 1); }
    std::uint8_t mask() const { return mask_; }

    bool operator==(const PhaseSet&) const = default;

  private:
    std::uint8_t mask_ = 0;
};

struct Bus {
    std::string id;
    PhaseSet phases;
    double base_kv_ln = 0.0;  // line-to-neutral kV
};

/// Series element between two buses. Impedance is a full 3x3 matrix in ohms
/// with self terms on the diagonal and mutual coupling off-diagonal; rows and
/// columns of absent phases are zero.
struct Branch {
    std::string id;
    std::string from_bus;
    std::string to_bus;
    PhaseSet phases;
    ComplexMat3 z_ohm{};
};

/// Spot load with a ZIP composition. zip = {constant-power, constant-current,
/// constant-impedance} fractions applied to both P and Q.
struct Load {
    std::string bus;
    PhaseSet phases;
    std::array<double, 3> kw{};
    std::array<double, 3> kvar{};
    std::array<double, 3> zip{1.0, 0.0, 0.0};
};

struct PvInverter {
    std::string bus;
    PhaseSet phases;
    double rated_kva = 0.0;
    double rated_kw = 0.0;
    std::string monitored_branch;  // upstream branch, derived at load time
};

/// Step voltage regulator on a branch, modeled as an ideal per-phase ratio
/// 1 + tap * step. Taps move at most one position per control action.
struct Regulator {
    static constexpr int kMaxTap = 16;

    std::string branch;
    std::array<int, 3> taps{0, 0, 0};
    double setpoint_pu = 1.0;
    double bandwidth_pu = 0.02;
    double step = 0.00625;

    double ratio(int phase) const { return 1.0 + taps[phase] * step; }
};

struct ParseError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ValidationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Immutable electrical model of a radial feeder. Index maps and the tree
/// structure are built by validate(); the model is safe to share read-only
/// across concurrent scenario runs afterwards.
struct FeederModel {
    double base_mva = 1.0;
    std::string source_bus;
    double source_voltage_pu = 1.0;
    std::string notes;

    std::vector<Bus> buses;
    std::vector<Branch> branches;
    std::vector<Load> loads;
    std::vector<PvInverter> pvs;
    std::vector<Regulator> regulators;

    // Derived by validate().
    std::map<std::string, std::size_t> bus_index;
    std::map<std::string, std::size_t> branch_index;
    std::vector<int> parent_branch;           // per bus, -1 at source
    std::vector<std::size_t> branch_order;    // parents before children
    std::size_t source_index = 0;

    double s_base_phase_kva() const { return base_mva * 1000.0 / 3.0; }

    const Bus& bus(const std::string& id) const {
        auto it = bus_index.find(id);
        if (it == bus_index.end()) throw ValidationError("unknown bus '" + id + "'");
        return buses[it->second];
    }
    const Branch& branch(const std::string& id) const {
        auto it = branch_index.find(id);
        if (it == branch_index.end()) throw ValidationError("unknown branch '" + id + "'");
        return branches[it->second];
    }

    void validate();
};

/// Returns the unique tree edge from `bus_id` toward the source.
inline const Branch& upstream_branch(const FeederModel& model, const std::string& bus_id) {
    auto it = model.bus_index.find(bus_id);
    if (it == model.bus_index.end()) throw ValidationError("unknown bus '" + bus_id + "'");
    if (bus_id == model.source_bus)
        throw ValidationError("bus '" + bus_id + "' is the source and has no upstream branch");
    return model.branches[static_cast<std::size_t>(model.parent_branch[it->second])];
}

inline void FeederModel::validate() {
    if (buses.empty()) throw ValidationError("feeder has no buses");
    if (base_mva <= 0.0) throw ValidationError("base_mva must be positive");
    if (source_voltage_pu <= 0.0) throw ValidationError("source voltage must be positive");

    bus_index.clear();
    for (std::size_t i = 0; i < buses.size(); ++i) {
        const Bus& b = buses[i];
        if (b.phases.empty()) throw ValidationError("bus '" + b.id + "' has no phases");
        if (b.base_kv_ln <= 0.0) throw ValidationError("bus '" + b.id + "' base_kv must be positive");
        if (!bus_index.emplace(b.id, i).second)
            throw ValidationError("duplicate bus id '" + b.id + "'");
    }
    auto src = bus_index.find(source_bus);
    if (src == bus_index.end()) throw ValidationError("source bus '" + source_bus + "' not defined");
    source_index = src->second;

    branch_index.clear();
    for (std::size_t i = 0; i < branches.size(); ++i) {
        const Branch& br = branches[i];
        if (!branch_index.emplace(br.id, i).second)
            throw ValidationError("duplicate branch id '" + br.id + "'");
        auto f = bus_index.find(br.from_bus);
        auto t = bus_index.find(br.to_bus);
        if (f == bus_index.end() || t == bus_index.end())
            throw ValidationError("branch '" + br.id + "' references an unknown bus");
        if (br.phases.empty()) throw ValidationError("branch '" + br.id + "' has no phases");
        if (!br.phases.subset_of(buses[f->second].phases) ||
            !br.phases.subset_of(buses[t->second].phases))
            throw ValidationError("branch '" + br.id + "' uses phases missing on its end buses");
        for (int m = 0; m < kPhaseCount; ++m) {
            for (int n = 0; n < kPhaseCount; ++n) {
                const Complex zmn = br.z_ohm[m][n];
                if (std::abs(zmn - br.z_ohm[n][m]) > 1e-12)
                    throw ValidationError("branch '" + br.id + "' impedance matrix is not symmetric");
                if ((!br.phases.has(m) || !br.phases.has(n)) && zmn != Complex{})
                    throw ValidationError("branch '" + br.id + "' has impedance on an absent phase");
            }
            if (br.phases.has(m) && br.z_ohm[m][m].real() < 0.0)
                throw ValidationError("branch '" + br.id + "' has negative self resistance");
        }
    }

    // Radiality: BFS over the undirected branch set discovers the tree and
    // rejects cycles; orientation (from_bus upstream) is checked afterwards so
    // cyclic files report the cycle rather than an orientation complaint.
    std::vector<std::vector<std::size_t>> incident(buses.size());
    for (std::size_t i = 0; i < branches.size(); ++i) {
        incident[bus_index[branches[i].from_bus]].push_back(i);
        incident[bus_index[branches[i].to_bus]].push_back(i);
    }
    parent_branch.assign(buses.size(), -1);
    std::vector<char> visited(buses.size(), 0);
    std::vector<std::size_t> queue{source_index};
    visited[source_index] = 1;
    branch_order.clear();
    std::vector<char> branch_used(branches.size(), 0);
    for (std::size_t head = 0; head < queue.size(); ++head) {
        const std::size_t b = queue[head];
        for (std::size_t bi : incident[b]) {
            if (branch_used[bi]) continue;
            const Branch& br = branches[bi];
            const std::size_t other =
                bus_index[br.from_bus] == b ? bus_index[br.to_bus] : bus_index[br.from_bus];
            if (visited[other]) {
                throw ValidationError("feeder is non-radial: branch '" + br.id +
                                      "' closes a cycle at bus '" + buses[other].id + "'");
            }
            branch_used[bi] = 1;
            visited[other] = 1;
            parent_branch[other] = static_cast<int>(bi);
            branch_order.push_back(bi);
            queue.push_back(other);
        }
    }
    for (std::size_t i = 0; i < buses.size(); ++i) {
        if (!visited[i])
            throw ValidationError("bus '" + buses[i].id + "' is not reachable from the source");
        if (parent_branch[i] >= 0 &&
            branches[static_cast<std::size_t>(parent_branch[i])].to_bus != buses[i].id)
            throw ValidationError("branch '" + branches[parent_branch[i]].id +
                                  "' is oriented against the source; from_bus must be the "
                                  "upstream end");
    }

    for (const Load& ld : loads) {
        auto it = bus_index.find(ld.bus);
        if (it == bus_index.end()) throw ValidationError("load references unknown bus '" + ld.bus + "'");
        if (!ld.phases.subset_of(buses[it->second].phases))
            throw ValidationError("load at bus '" + ld.bus + "' uses phases missing on the bus");
        double zip_sum = 0.0;
        for (double f : ld.zip) {
            if (f < 0.0 || f > 1.0)
                throw ValidationError("load at bus '" + ld.bus + "' has a ZIP fraction outside [0,1]");
            zip_sum += f;
        }
        if (std::abs(zip_sum - 1.0) > 1e-9)
            throw ValidationError("load at bus '" + ld.bus + "' ZIP fractions must sum to 1");
    }

    for (PvInverter& pv : pvs) {
        auto it = bus_index.find(pv.bus);
        if (it == bus_index.end()) throw ValidationError("PV references unknown bus '" + pv.bus + "'");
        if (!pv.phases.subset_of(buses[it->second].phases))
            throw ValidationError("PV at bus '" + pv.bus + "' uses phases missing on the bus");
        if (pv.rated_kva <= 0.0)
            throw ValidationError("PV at bus '" + pv.bus + "' rated_kva must be positive");
        if (pv.rated_kw > pv.rated_kva)
            throw ValidationError("PV at bus '" + pv.bus + "' rated_kw exceeds rated_kva");
        const Branch& up = upstream_branch(*this, pv.bus);
        if (!pv.monitored_branch.empty() && pv.monitored_branch != up.id)
            throw ValidationError("PV at bus '" + pv.bus + "' monitored_branch must be '" + up.id + "'");
        pv.monitored_branch = up.id;
    }

    for (const Regulator& reg : regulators) {
        if (branch_index.find(reg.branch) == branch_index.end())
            throw ValidationError("regulator references unknown branch '" + reg.branch + "'");
        if (reg.bandwidth_pu <= 0.0)
            throw ValidationError("regulator on branch '" + reg.branch + "' bandwidth must be positive");
        for (int t : reg.taps)
            if (t < -Regulator::kMaxTap || t > Regulator::kMaxTap)
                throw ValidationError("regulator on branch '" + reg.branch + "' tap out of range");
    }
}

/// One control action: per phase, if the controlled voltage is outside the
/// half-bandwidth around the setpoint, the tap moves one position toward
/// reducing the error, clamped to the tap range.
inline Regulator regulator_step(Regulator reg, const std::array<double, 3>& v_mag_pu,
                                PhaseSet phases) {
    for (int p = 0; p < kPhaseCount; ++p) {
        if (!phases.has(p)) continue;
        const double err = v_mag_pu[p] - reg.setpoint_pu;
        if (err > reg.bandwidth_pu / 2.0)
            reg.taps[p] = std::max(reg.taps[p] - 1, -Regulator::kMaxTap);
        else if (err < -reg.bandwidth_pu / 2.0)
            reg.taps[p] = std::min(reg.taps[p] + 1, Regulator::kMaxTap);
    }
    return reg;
}

}  // namespace vvo
