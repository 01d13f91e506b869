#pragma once

#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "vvo/feeder.hpp"

namespace vvo {

namespace detail {

inline ComplexMat3 parse_z_matrix(const nlohmann::json& jz, const std::string& branch_id) {
    if (!jz.is_array() || jz.size() != 3)
        throw ParseError("branch '" + branch_id + "': z must be a 3x3 array of [r,x] pairs");
    ComplexMat3 z{};
    for (int m = 0; m < 3; ++m) {
        const auto& row = jz[m];
        if (!row.is_array() || row.size() != 3)
            throw ParseError("branch '" + branch_id + "': z row " + std::to_string(m) + " must have 3 entries");
        for (int n = 0; n < 3; ++n) {
            const auto& cell = row[n];
            if (!cell.is_array() || cell.size() != 2)
                throw ParseError("branch '" + branch_id + "': z entries must be [r,x] pairs");
            z[m][n] = Complex(cell[0].get<double>(), cell[1].get<double>());
        }
    }
    return z;
}

inline nlohmann::json z_matrix_to_json(const ComplexMat3& z) {
    nlohmann::json jz = nlohmann::json::array();
    for (int m = 0; m < 3; ++m) {
        nlohmann::json row = nlohmann::json::array();
        for (int n = 0; n < 3; ++n)
            row.push_back({z[m][n].real(), z[m][n].imag()});
        jz.push_back(row);
    }
    return jz;
}

}  // namespace detail

/// Builds and validates a FeederModel from the feeder JSON document.
inline FeederModel parse_feeder(const nlohmann::json& j) {
    FeederModel model;
    try {
        model.base_mva = j.at("base_mva").get<double>();
        model.source_bus = j.at("source").at("bus").get<std::string>();
        model.source_voltage_pu = j.at("source").at("voltage_pu").get<double>();
        if (j.contains("notes")) model.notes = j.at("notes").get<std::string>();

        for (const auto& jb : j.at("buses")) {
            Bus b;
            b.id = jb.at("id").get<std::string>();
            b.phases = PhaseSet::from_string(jb.at("phases").get<std::string>());
            b.base_kv_ln = jb.at("base_kv").get<double>();
            model.buses.push_back(std::move(b));
        }
        for (const auto& jb : j.at("branches")) {
            Branch br;
            br.id = jb.at("id").get<std::string>();
            br.from_bus = jb.at("from").get<std::string>();
            br.to_bus = jb.at("to").get<std::string>();
            br.phases = PhaseSet::from_string(jb.at("phases").get<std::string>());
            br.z_ohm = detail::parse_z_matrix(jb.at("z"), br.id);
            model.branches.push_back(std::move(br));
        }
        if (j.contains("loads")) {
            for (const auto& jl : j.at("loads")) {
                Load ld;
                ld.bus = jl.at("bus").get<std::string>();
                for (const auto& jp : jl.at("per_phase")) {
                    const PhaseSet ph = PhaseSet::from_string(jp.at("phase").get<std::string>());
                    if (ph.count() != 1)
                        throw ParseError("load at bus '" + ld.bus + "': per_phase entries name one phase");
                    for (int p = 0; p < kPhaseCount; ++p) {
                        if (!ph.has(p)) continue;
                        if (ld.phases.has(p))
                            throw ParseError("load at bus '" + ld.bus + "': duplicate phase entry");
                        ld.phases.add(p);
                        ld.kw[p] = jp.at("kw").get<double>();
                        ld.kvar[p] = jp.at("kvar").get<double>();
                    }
                }
                if (jl.contains("zip")) {
                    const auto& jz = jl.at("zip");
                    if (!jz.is_array() || jz.size() != 3)
                        throw ParseError("load at bus '" + ld.bus + "': zip must be [pq,i,z]");
                    for (int k = 0; k < 3; ++k) ld.zip[k] = jz[k].get<double>();
                }
                model.loads.push_back(std::move(ld));
            }
        }
        if (j.contains("pvs")) {
            for (const auto& jp : j.at("pvs")) {
                PvInverter pv;
                pv.bus = jp.at("bus").get<std::string>();
                pv.phases = PhaseSet::from_string(jp.at("phases").get<std::string>());
                pv.rated_kva = jp.at("rated_kva").get<double>();
                pv.rated_kw = jp.at("rated_kw").get<double>();
                if (jp.contains("monitored_branch"))
                    pv.monitored_branch = jp.at("monitored_branch").get<std::string>();
                model.pvs.push_back(std::move(pv));
            }
        }
        if (j.contains("regulators")) {
            for (const auto& jr : j.at("regulators")) {
                Regulator reg;
                reg.branch = jr.at("branch").get<std::string>();
                reg.setpoint_pu = jr.at("setpoint_pu").get<double>();
                reg.bandwidth_pu = jr.at("bandwidth_pu").get<double>();
                if (jr.contains("step")) reg.step = jr.at("step").get<double>();
                model.regulators.push_back(std::move(reg));
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("malformed feeder file: ") + e.what());
    }

    model.validate();
    return model;
}

inline nlohmann::json serialize_feeder(const FeederModel& model) {
    nlohmann::json j;
    j["base_mva"] = model.base_mva;
    j["source"] = {{"bus", model.source_bus}, {"voltage_pu", model.source_voltage_pu}};
    if (!model.notes.empty()) j["notes"] = model.notes;

    j["buses"] = nlohmann::json::array();
    for (const Bus& b : model.buses)
        j["buses"].push_back({{"id", b.id}, {"phases", b.phases.to_string()}, {"base_kv", b.base_kv_ln}});

    j["branches"] = nlohmann::json::array();
    for (const Branch& br : model.branches) {
        j["branches"].push_back({{"id", br.id},
                                 {"from", br.from_bus},
                                 {"to", br.to_bus},
                                 {"phases", br.phases.to_string()},
                                 {"z", detail::z_matrix_to_json(br.z_ohm)}});
    }

    j["loads"] = nlohmann::json::array();
    for (const Load& ld : model.loads) {
        nlohmann::json per_phase = nlohmann::json::array();
        for (int p = 0; p < kPhaseCount; ++p) {
            if (!ld.phases.has(p)) continue;
            per_phase.push_back({{"phase", std::string(1, kPhaseNames[p])},
                                 {"kw", ld.kw[p]},
                                 {"kvar", ld.kvar[p]}});
        }
        j["loads"].push_back({{"bus", ld.bus}, {"per_phase", per_phase}, {"zip", ld.zip}});
    }

    j["pvs"] = nlohmann::json::array();
    for (const PvInverter& pv : model.pvs) {
        j["pvs"].push_back({{"bus", pv.bus},
                            {"phases", pv.phases.to_string()},
                            {"rated_kva", pv.rated_kva},
                            {"rated_kw", pv.rated_kw},
                            {"monitored_branch", pv.monitored_branch}});
    }

    j["regulators"] = nlohmann::json::array();
    for (const Regulator& reg : model.regulators) {
        j["regulators"].push_back({{"branch", reg.branch},
                                   {"setpoint_pu", reg.setpoint_pu},
                                   {"bandwidth_pu", reg.bandwidth_pu},
                                   {"step", reg.step}});
    }
    return j;
}

inline FeederModel load_feeder(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open feeder file '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("feeder file '" + path + "' is not valid JSON: " + e.what());
    }
    return parse_feeder(j);
}

inline void save_feeder(const FeederModel& model, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ParseError("cannot write feeder file '" + path + "'");
    out << serialize_feeder(model).dump(2) << '\n';
}

}  // namespace vvo
