// Command-line front end: run QSTS scenarios, compare controllers against the
// dispatch oracle, inspect single snapshots, emit convexity reports, and
// validate feeder files.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "vvo/analysis.hpp"
#include "vvo/feeder_json.hpp"
#include "vvo/oracle.hpp"
#include "vvo/report.hpp"
#include "vvo/scenario.hpp"

namespace fs = std::filesystem;
using namespace vvo;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitSimulation = 2;

struct CommonOptions {
    std::string feeder;
    std::string controller = "es-adaptive";
    double hours = 24.0;
    double dt_s = 30.0;
    std::string profiles_dir;
    double substation_pu = 0.0;
    std::string regulators = "on";
    std::string objective = "i2";
    std::string band;
    std::uint64_t seed = 2024;
    double price_per_kwh = 0.08;
    bool convexity_report = false;
    std::string out;
    bool force = false;
    bool high_variance = false;
};

void add_common_flags(CLI::App* cmd, CommonOptions& opt, bool needs_out) {
    cmd->add_option("--feeder", opt.feeder, "Feeder JSON file")->required();
    cmd->add_option("--hours", opt.hours, "Simulated horizon in hours")
        ->capture_default_str();
    cmd->add_option("--dt", opt.dt_s, "Inner time step in seconds")->capture_default_str();
    cmd->add_option("--profiles-dir", opt.profiles_dir,
                    "Directory with solar.csv/load1.csv/load2.csv (default: builtin shapes)");
    cmd->add_option("--substation-pu", opt.substation_pu,
                    "Override the source voltage (0 keeps the feeder file value)")
        ->capture_default_str();
    cmd->add_option("--regulators", opt.regulators, "Regulator stepping: on|off")
        ->check(CLI::IsMember({"on", "off"}))
        ->capture_default_str();
    cmd->add_option("--objective", opt.objective,
                    "Controller objective: i2 (branch current squared) or sloss (branch loss)")
        ->check(CLI::IsMember({"i2", "sloss"}))
        ->capture_default_str();
    cmd->add_option("--band", opt.band, "Droop band as VMIN:VMAX, e.g. 0.88:1.12");
    cmd->add_option("--seed", opt.seed, "Seed for the high-variance profile jitter")
        ->capture_default_str();
    cmd->add_option("--price-per-kwh", opt.price_per_kwh, "Energy price for the cost metric")
        ->capture_default_str();
    cmd->add_flag("--convexity-report", opt.convexity_report,
                  "Sample the convexity condition during the run (extra solves)");
    cmd->add_flag("--high-variance", opt.high_variance,
                  "Use the high-variance builtin solar shape");
    if (needs_out) {
        cmd->add_option("--out", opt.out, "Output directory")->required();
        cmd->add_flag("--force", opt.force, "Overwrite existing output files");
    }
}

ScenarioConfig make_config(const CommonOptions& opt) {
    ScenarioConfig cfg;
    cfg.hours = opt.hours;
    cfg.dt_s = opt.dt_s;
    cfg.controller = controller_kind_from_string(opt.controller);
    cfg.profiles_dir = opt.profiles_dir;
    cfg.substation_pu = opt.substation_pu;
    cfg.regulators_enabled = opt.regulators == "on";
    cfg.seed = opt.seed;
    cfg.price_per_kwh = opt.price_per_kwh;
    cfg.convexity_report = opt.convexity_report;
    cfg.high_variance_solar = opt.high_variance;
    cfg.params.objective =
        opt.objective == "sloss" ? ObjectiveKind::BranchLoss : ObjectiveKind::CurrentSquared;
    // The fixed-droop baseline is the traditional static curve without the
    // reactive-power inertia of the proposed controller.
    if (cfg.controller == ControllerKind::FixedDroop) cfg.params.hysteresis_enabled = false;
    if (!opt.band.empty()) {
        const auto colon = opt.band.find(':');
        if (colon == std::string::npos)
            throw CLI::ValidationError("--band", "expected VMIN:VMAX");
        cfg.params.v_min = std::stod(opt.band.substr(0, colon));
        cfg.params.v_max = std::stod(opt.band.substr(colon + 1));
    }
    return cfg;
}

void write_file(const fs::path& path, const std::string& content, bool force) {
    if (fs::exists(path) && !force)
        throw std::runtime_error("refusing to overwrite '" + path.string() +
                                 "' (pass --force to allow)");
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
    out << content;
}

void write_outputs(const fs::path& dir, const FeederModel& model, const ScenarioResult& res,
                   bool force) {
    fs::create_directories(dir);
    write_file(dir / "steps.csv", steps_csv(model, res.records), force);
    write_file(dir / "summary.json", summary_json(res.summary).dump(2) + "\n", force);
    if (!res.convexity.empty())
        write_file(dir / "convexity.csv", convexity_csv(res.convexity), force);
}

void print_summary(const ScenarioSummary& s) {
    std::printf("%-12s loss %10.2f kWh  cost $%8.2f  V in [%.4f, %.4f] pu  "
                "violations %ld  osc %8.2f kvar\n",
                s.controller.c_str(), s.kwh_loss, s.energy_cost_usd, s.min_voltage_pu,
                s.max_voltage_pu, s.ansi_violation_bus_steps, s.oscillation_index_max_kvar);
}

int cmd_run(const CommonOptions& opt) {
    const FeederModel model = load_feeder(opt.feeder);
    const ScenarioConfig cfg = make_config(opt);
    ScenarioEngine engine(model, cfg);
    const ScenarioResult res = engine.run();
    write_outputs(opt.out, engine.model(), res, opt.force);
    print_summary(res.summary);
    std::printf("wrote %s/steps.csv and summary.json\n", opt.out.c_str());
    return kExitOk;
}

int cmd_compare(const CommonOptions& opt) {
    const FeederModel model = load_feeder(opt.feeder);
    const ControllerKind kinds[] = {ControllerKind::Oracle, ControllerKind::EsAdaptive,
                                    ControllerKind::FixedDroop};
    std::vector<ScenarioSummary> summaries;
    fs::create_directories(opt.out);
    for (ControllerKind kind : kinds) {
        CommonOptions run_opt = opt;
        run_opt.controller = to_string(kind);
        ScenarioConfig cfg = make_config(run_opt);
        ScenarioEngine engine(model, cfg);
        const ScenarioResult res = engine.run();
        write_outputs(fs::path(opt.out) / to_string(kind), engine.model(), res, opt.force);
        summaries.push_back(res.summary);
    }
    const double oracle_kwh = summaries[0].kwh_loss;
    nlohmann::json table = nlohmann::json::array();
    std::printf("controller      kWh loss    gap vs oracle   min V     violations\n");
    for (ScenarioSummary& s : summaries) {
        if (s.controller != "oracle" && oracle_kwh > 0.0)
            s.loss_gap_vs_oracle_pct = 100.0 * (s.kwh_loss - oracle_kwh) / oracle_kwh;
        std::printf("%-12s %10.2f %14s   %.4f    %ld\n", s.controller.c_str(), s.kwh_loss,
                    s.loss_gap_vs_oracle_pct
                        ? (std::to_string(*s.loss_gap_vs_oracle_pct).substr(0, 6) + "%").c_str()
                        : "-",
                    s.min_voltage_pu, s.ansi_violation_bus_steps);
        table.push_back(summary_json(s));
    }
    write_file(fs::path(opt.out) / "compare.json", table.dump(2) + "\n", opt.force);
    return kExitOk;
}

int cmd_oracle(const CommonOptions& opt) {
    const FeederModel model = load_feeder(opt.feeder);
    ScenarioConfig cfg = make_config(opt);
    cfg.controller = ControllerKind::Oracle;
    ScenarioEngine engine(model, cfg);

    // Snapshot at the requested hour (the --hours flag doubles as the
    // snapshot time for this subcommand).
    const double t = opt.hours * 3600.0;
    const PowerFlowSolver solver(engine.model());
    DispatchSnapshot snap = engine.snapshot_at(t, taps_of(engine.model()));
    OracleOptions oracle_opts;
    oracle_opts.penalty_gain = cfg.params.penalty_gain;
    const OracleResult res = brute_force_dispatch(solver, snap, oracle_opts);

    nlohmann::json j;
    j["hour"] = opt.hours;
    j["objective"] = res.objective;
    j["loss_kw"] = res.loss_pu * engine.model().s_base_phase_kva();
    j["evaluations"] = res.evaluations;
    j["q_kvar"] = nlohmann::json::object();
    std::printf("snapshot at hour %.2f: loss %.2f kW, %ld solves\n", opt.hours,
                res.loss_pu * engine.model().s_base_phase_kva(), res.evaluations);
    for (std::size_t i = 0; i < model.pvs.size(); ++i) {
        j["q_kvar"][model.pvs[i].bus] = res.q_kvar[i];
        std::printf("  PV at %-6s -> %8.1f kvar\n", model.pvs[i].bus.c_str(), res.q_kvar[i]);
    }
    if (!opt.out.empty()) {
        fs::create_directories(opt.out);
        write_file(fs::path(opt.out) / "oracle.json", j.dump(2) + "\n", opt.force);
    }
    return kExitOk;
}

int cmd_check_convexity(CommonOptions opt) {
    opt.convexity_report = true;
    const FeederModel model = load_feeder(opt.feeder);
    ScenarioConfig cfg = make_config(opt);
    cfg.convexity_report = true;
    ScenarioEngine engine(model, cfg);
    const ScenarioResult res = engine.run();
    write_outputs(opt.out, engine.model(), res, opt.force);

    long bad = 0;
    for (const ConvexityRecord& r : res.convexity)
        if (!r.satisfied) ++bad;
    std::printf("%zu convexity samples, %ld unsatisfied\n", res.convexity.size(), bad);
    return kExitOk;
}

int cmd_validate(const CommonOptions& opt) {
    const FeederModel model = load_feeder(opt.feeder);
    std::printf("OK: %zu buses, %zu branches, %zu loads, %zu PVs, %zu regulators; source %s\n",
                model.buses.size(), model.branches.size(), model.loads.size(), model.pvs.size(),
                model.regulators.size(), model.source_bus.c_str());
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Quasi-static Volt-VAR simulation for radial unbalanced feeders"};
    app.require_subcommand(1);

    CommonOptions run_opt, cmp_opt, oracle_opt, conv_opt, val_opt;

    CLI::App* run = app.add_subcommand("run", "Run one scenario and write CSV + JSON outputs");
    add_common_flags(run, run_opt, true);
    run->add_option("--controller", run_opt.controller,
                    "Controller: es-adaptive|fixed-droop|none|oracle")
        ->check(CLI::IsMember({"es-adaptive", "fixed-droop", "none", "oracle"}))
        ->capture_default_str();

    CLI::App* cmp = app.add_subcommand(
        "compare", "Run oracle, es-adaptive and fixed-droop on one config side by side");
    add_common_flags(cmp, cmp_opt, true);

    CLI::App* orc = app.add_subcommand("oracle", "Brute-force dispatch at one snapshot");
    add_common_flags(orc, oracle_opt, false);
    orc->add_option("--out", oracle_opt.out, "Optional output directory for oracle.json");
    orc->add_flag("--force", oracle_opt.force, "Overwrite existing output files");

    CLI::App* conv = app.add_subcommand("check-convexity",
                                        "Run a scenario with per-step convexity reporting");
    add_common_flags(conv, conv_opt, true);

    CLI::App* val = app.add_subcommand("validate", "Load and validate a feeder file");
    val->add_option("--feeder", val_opt.feeder, "Feeder JSON file")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (run->parsed()) return cmd_run(run_opt);
        if (cmp->parsed()) return cmd_compare(cmp_opt);
        if (orc->parsed()) return cmd_oracle(oracle_opt);
        if (conv->parsed()) return cmd_check_convexity(conv_opt);
        if (val->parsed()) return cmd_validate(val_opt);
    } catch (const ParseError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "simulation error: " << e.what() << '\n';
        return kExitSimulation;
    }
    return kExitUsage;
}
