// pmuopp command-line tool. Exit codes: 0 success, 2 numerical non-convergence, 3 input/config error.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "pmuopp/case_io.hpp"
#include "pmuopp/experiment.hpp"
#include "pmuopp/integrator.hpp"
#include "pmuopp/mhe.hpp"
#include "pmuopp/observability.hpp"
#include "pmuopp/placement.hpp"
#include "pmuopp/steady_state.hpp"

using namespace pmuopp;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitNumerical = 2;
constexpr int kExitInput = 3;

struct RunConfig {
    std::string case_path;
    std::string sidecar;
    std::string config;
    std::string out;
    std::string scheme = "bdf3";
    std::string mode = "mu";
    std::string governor = "stable";
    std::string recursion = "exact";
    std::string jacobian = "exact";
    double mu = 1e-6;
    double h = 0.1;
    double t_end = 30;
    double alpha_l = 2;
    std::optional<double> alpha_r;
    double renewables = 0.2;
    double noise = 2;
    int N_o = 10;
    std::uint64_t seed = 42;
    double nr_tol = 1e-2;
    int nr_max_iter = 10;
    double guess_alpha = 4;
    int gn_max_iter = 200;
    double gn_tol = 1e-4;
    double h_g = 0.1;
    int threads = 1;
    std::vector<double> mu_list;
    std::vector<int> placement;
    bool all_buses = false;
    std::optional<int> p;
    std::optional<double> fraction;
    std::vector<double> fractions{0.2, 0.4, 0.6, 0.8};
    bool brute_force = false;
    double brute_force_cap = 1e6;
};

// Values from --config apply to every option not given on the command line.
class ConfigBinder {
public:
    template <class T>
    CLI::Option* add(CLI::App& app, const std::string& flag, const std::string& key, T& target, const std::string& help) {
        CLI::Option* o = app.add_option(flag, target, help);
        setters_.push_back({o, key, [&target](const json& v) { target = v.get<T>(); }});
        return o;
    }
    template <class T>
    CLI::Option* add(CLI::App& app, const std::string& flag, const std::string& key, std::optional<T>& target,
                     const std::string& help) {
        CLI::Option* o = app.add_option(flag, target, help);
        setters_.push_back({o, key, [&target](const json& v) { target = v.get<T>(); }});
        return o;
    }
    CLI::Option* flag(CLI::App& app, const std::string& flag, const std::string& key, bool& target, const std::string& help) {
        CLI::Option* o = app.add_flag(flag, target, help);
        setters_.push_back({o, key, [&target](const json& v) { target = v.get<bool>(); }});
        return o;
    }

    void apply(const json& cfg) const {
        if (!cfg.is_object()) throw ConfigError("config file must hold a JSON object");
        for (auto it = cfg.begin(); it != cfg.end(); ++it) {
            // Several subcommands bind the same field; a flag on any of them wins.
            const Setter* target = nullptr;
            bool given = false;
            for (const auto& s : setters_) {
                if (s.key != it.key()) continue;
                target = &s;
                given = given || s.option->count() > 0;
            }
            if (!target) throw ConfigError("unknown config key '" + it.key() + "'");
            if (given) continue;
            try {
                target->set(it.value());
            } catch (const json::exception& e) {
                throw ConfigError("config key '" + it.key() + "': " + e.what());
            }
        }
    }

private:
    struct Setter {
        CLI::Option* option;
        std::string key;
        std::function<void(const json&)> set;
    };
    std::vector<Setter> setters_;
};

NetworkCase load(const RunConfig& rc) {
    const CaseLoad cl = load_case(rc.case_path, rc.sidecar.empty() ? std::nullopt : std::optional<fs::path>(rc.sidecar));
    for (const auto& w : cl.warnings) std::cerr << "warning: " << w << "\n";
    return cl.net;
}

SimConfig sim_config(const RunConfig& rc) {
    SimConfig c;
    if (rc.mode == "mu") {
        c.mode = Mode::MU;
    } else if (rc.mode == "ndae") {
        c.mode = Mode::NDAE;
    } else {
        throw ConfigError("mode must be 'ndae' or 'mu'");
    }
    c.mu = rc.mu;
    c.t_end = rc.t_end;
    c.nr_tol = rc.nr_tol;
    c.nr_max_iter = rc.nr_max_iter;
    c.governor_sign = governor_sign_from_string(rc.governor);
    c.validate();
    if (!(rc.h > 0)) throw ConfigError("h must be positive");
    return c;
}

Disturbance disturbance(const RunConfig& rc) {
    return Disturbance{rc.alpha_l, rc.alpha_r.value_or(rc.alpha_l), rc.renewables};
}

ExperimentConfig experiment_config(const RunConfig& rc) {
    ExperimentConfig e;
    e.scheme = rc.scheme;
    e.h = rc.h;
    e.mu = rc.mu;
    e.alpha_L = rc.alpha_l;
    e.alpha_R = rc.alpha_r.value_or(rc.alpha_l);
    e.renewable_fraction = rc.renewables;
    e.noise_pct = rc.noise;
    e.seed = rc.seed;
    e.N_o = rc.N_o;
    e.guess_alpha = rc.guess_alpha;
    e.governor_sign = governor_sign_from_string(rc.governor);
    e.recursion = chain_recursion_from_string(rc.recursion);
    e.jacobian = gn_jacobian_from_string(rc.jacobian);
    e.h_g = rc.h_g;
    e.gn_tol = rc.gn_tol;
    e.gn_max_iter = rc.gn_max_iter;
    e.threads = rc.threads;
    parse_scheme(e.scheme, e.h);
    return e;
}

// Writes to --out, or stdout when it is empty.
void emit(const RunConfig& rc, const std::function<void(std::ostream&)>& body) {
    if (rc.out.empty()) {
        body(std::cout);
        std::cout.flush();
        return;
    }
    std::ofstream f(rc.out);
    if (!f) throw ConfigError("cannot write " + rc.out);
    body(f);
}

std::string csv_number(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    std::ostringstream s;
    s << std::setprecision(17) << v;
    return s.str();
}

int cmd_convert(const std::string& in, const std::string& out, const std::string& sidecar) {
    const CaseLoad cl = load_case(in, sidecar.empty() ? std::nullopt : std::optional<fs::path>(sidecar));
    for (const auto& w : cl.warnings) std::cerr << "warning: " << w << "\n";
    std::ofstream f(out);
    if (!f) throw ConfigError("cannot write " + out);
    f << case_to_json(cl.net).dump(2) << "\n";
    return kExitOk;
}

int cmd_simulate(const RunConfig& rc) {
    const NetworkCase net = with_renewables(load(rc), rc.renewables);
    const SimConfig cfg = sim_config(rc);
    const Scheme s = parse_scheme(rc.scheme, rc.h);
    const SteadyState ss = init_steady_state(net, cfg.model());
    const Trajectory tr = simulate(ss.x0, ss.u0, net, s, cfg, disturbance(rc));
    emit(rc, [&](std::ostream& os) { write_trajectory_csv(os, tr); });
    return kExitOk;
}

int cmd_validate_mu(const RunConfig& rc) {
    if (rc.mu_list.empty()) throw ConfigError("--mu-list needs at least one value");
    const NetworkCase net = with_renewables(load(rc), rc.renewables);
    SimConfig base = sim_config(rc);
    const Scheme s = parse_scheme(rc.scheme, rc.h);
    const SteadyState ss = init_steady_state(net, base.model());
    SimConfig ref = base;
    ref.mode = Mode::NDAE;
    const Trajectory R = simulate(ss.x0, ss.u0, net, s, ref, disturbance(rc));
    emit(rc, [&](std::ostream& os) {
        os << "mu,converged,rmse,error_norm,bound\n";
        for (double mu : rc.mu_list) {
            SimConfig c = base;
            c.mode = Mode::MU;
            c.mu = mu;
            c.validate();
            const double bound = 10.0 * mu * std::sqrt(rc.t_end);
            // Large mu can destabilize the relaxed system; that is reported, not fatal.
            std::optional<Trajectory> T;
            try {
                T = simulate(ss.x0, ss.u0, net, s, c, disturbance(rc));
            } catch (const ConvergenceError& e) {
                std::cerr << "mu = " << mu << ": " << e.what() << "\n";
            } catch (const SingularityError& e) {
                std::cerr << "mu = " << mu << ": " << e.what() << "\n";
            }
            const double inf = std::numeric_limits<double>::infinity();
            os << csv_number(mu) << "," << (T ? "true" : "false") << "," << csv_number(T ? rmse(*T, R) : inf) << ","
               << csv_number(T ? error_norm(*T, R) : inf) << "," << csv_number(bound) << "\n";
        }
    });
    return kExitOk;
}

int cmd_estimate(const RunConfig& rc) {
    const NetworkCase raw = load(rc);
    if (!rc.all_buses && rc.placement.empty()) throw ConfigError("empty placement: give --placement or --all");
    const Experiment e = make_experiment(raw, experiment_config(rc));
    const SensorSelection sel = rc.all_buses ? SensorSelection::all(e.N()) : SensorSelection(rc.placement, e.N());
    const GnReport r = run_estimate(e, sel, rc.noise);
    json j = to_json(r);
    j["selection"] = sel.buses();
    emit(rc, [&](std::ostream& os) { os << j.dump(2) << "\n"; });
    return kExitOk;
}

int resolve_p(const RunConfig& rc, int N) {
    if (rc.p && rc.fraction) throw ConfigError("give either --p or --fraction");
    const int p = rc.p ? *rc.p : rc.fraction ? p_from_fraction(*rc.fraction, N) : -1;
    if (p < 0) throw ConfigError("missing --p or --fraction");
    if (p > N) throw ConfigError("p = " + std::to_string(p) + " exceeds the " + std::to_string(N) + " candidate buses");
    return p;
}

int cmd_place(const RunConfig& rc) {
    const NetworkCase raw = load(rc);
    const int p = resolve_p(rc, raw.N());
    const Experiment e = make_experiment(raw, experiment_config(rc));
    const GramianStage g = gramian_stage(e);
    const PlacementProblem pr{g.contributions, p};
    const PlacementResult r = solve_apriori(pr);
    json j = to_json(r);
    if (rc.brute_force) {
        const PlacementResult b = solve_bruteforce(pr, rc.brute_force_cap, rc.threads);
        j["verified"] = b.Z_star == r.Z_star;
    }
    std::vector<double> t;
    for (const auto& c : g.contributions) t.push_back(c.trace);
    j["per_bus_trace"] = t;
    j["estimate_epsilon"] = std::isfinite(g.estimate.epsilon) ? json(g.estimate.epsilon) : json(nullptr);
    emit(rc, [&](std::ostream& os) { os << j.dump(2) << "\n"; });
    return kExitOk;
}

int cmd_sweep(const RunConfig& rc) {
    const NetworkCase raw = load(rc);
    const int N = raw.N();
    if (rc.fractions.empty()) throw ConfigError("--fractions needs at least one value");
    std::vector<int> ps;
    for (double f : rc.fractions) ps.push_back(p_from_fraction(f, N));
    std::sort(ps.begin(), ps.end());
    const Experiment e = make_experiment(raw, experiment_config(rc));
    const GramianStage g = gramian_stage(e);
    const auto rs = place_all(g.contributions, ps);
    // Nesting up to and including each row.
    emit(rc, [&](std::ostream& os) {
        os << "p";
        for (int b = 1; b <= N; ++b) os << ",bus_" << b;
        os << ",objective,epsilon,nested\n";
        for (std::size_t k = 0; k < rs.size(); ++k) {
            const auto& r = rs[k];
            std::vector<char> on(N + 1, 0);
            for (int b : r.Z_star) on[b] = 1;
            os << r.p;
            for (int b = 1; b <= N; ++b) os << "," << int(on[b]);
            const double eps = evaluate_placement(e, r.Z_star, rc.noise);
            const std::vector<PlacementResult> prefix(rs.begin(), rs.begin() + static_cast<long>(k) + 1);
            os << "," << csv_number(r.objective) << "," << csv_number(eps) << "," << (nesting_check(prefix) ? "true" : "false") << "\n";
        }
    });
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    RunConfig rc;
    ConfigBinder cb;
    CLI::App app{"Power-grid simulation, moving horizon estimation and PMU placement"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "pmuopp 1.0");
    // -h is free for the step size.
    app.set_help_flag("--help", "print this help and exit");

    auto common = [&](CLI::App* s, bool needs_case = true) {
        auto* c = cb.add(*s, "--case", "case", rc.case_path, "MATPOWER .m or canonical .json case");
        if (needs_case) c->check(CLI::ExistingFile);
        cb.add(*s, "--sidecar", "sidecar", rc.sidecar, "generator dynamic data (default <case>.dyn.json)");
        s->add_option("--config", rc.config, "JSON file with defaults for any option (keys as option names)");
        cb.add(*s, "--out,-o", "out", rc.out, "output file (default stdout)");
        cb.add(*s, "--scheme", "scheme", rc.scheme, "be | bdf1..bdf5 | ti")->capture_default_str();
        cb.add(*s, "--mu", "mu", rc.mu, "mu-NDAE relaxation")->capture_default_str();
        cb.add(*s, "--h", "h", rc.h, "step size in seconds")->capture_default_str();
        cb.add(*s, "--alpha-l", "alpha_l", rc.alpha_l, "load disturbance in percent")->capture_default_str();
        cb.add(*s, "--alpha-r", "alpha_r", rc.alpha_r, "renewable disturbance in percent (default alpha-l)");
        cb.add(*s, "--renewables", "renewables", rc.renewables, "renewable share of each load")->capture_default_str();
        cb.add(*s, "--governor", "governor", rc.governor, "stable | printed")->capture_default_str();
        s->add_option("--threads", rc.threads, "worker threads")->capture_default_str()->check(CLI::PositiveNumber);
    };
    auto estimation = [&](CLI::App* s) {
        cb.add(*s, "--noise", "noise", rc.noise, "measurement noise in percent")->capture_default_str();
        cb.add(*s, "--N-o,--horizon", "N_o", rc.N_o, "observation horizon in steps")->capture_default_str();
        cb.add(*s, "--seed", "seed", rc.seed, "noise seed")->capture_default_str();
        cb.add(*s, "--guess-alpha", "guess_alpha", rc.guess_alpha, "load offset of the assumed initial state, percent")->capture_default_str();
        cb.add(*s, "--gn-max-iter", "gn_max_iter", rc.gn_max_iter, "Gauss-Newton iteration cap")->capture_default_str();
        cb.add(*s, "--gn-tol", "gn_tol", rc.gn_tol, "Gauss-Newton residual tolerance")->capture_default_str();
        cb.add(*s, "--h-g", "h_g", rc.h_g, "Gauss-Newton step length")->capture_default_str();
        cb.add(*s, "--recursion", "recursion", rc.recursion, "sensitivity chain: exact | paper")->capture_default_str();
        cb.add(*s, "--jacobian", "jacobian", rc.jacobian, "Gauss-Newton Jacobian: exact | paper")->capture_default_str();
    };
    auto simulation = [&](CLI::App* s) {
        cb.add(*s, "--mode", "mode", rc.mode, "ndae | mu")->capture_default_str();
        cb.add(*s, "--t-end", "t_end", rc.t_end, "simulated seconds")->capture_default_str();
        cb.add(*s, "--nr-tol", "nr_tol", rc.nr_tol, "Newton increment tolerance")->capture_default_str();
        cb.add(*s, "--nr-max-iter", "nr_max_iter", rc.nr_max_iter, "Newton iteration cap")->capture_default_str();
    };

    std::string conv_in, conv_out;
    auto* convert = app.add_subcommand("convert", "MATPOWER .m case to canonical JSON");
    convert->add_option("input", conv_in, "case file")->required();
    convert->add_option("output", conv_out, "JSON output")->required();
    convert->add_option("--sidecar", rc.sidecar, "generator dynamic data (default <case>.dyn.json)");

    auto* simulate_cmd = app.add_subcommand("simulate", "trajectory CSV: t,delta_1..,omega_..,E_p_..,T_M_..,P_G_..,Q_G_..,v_..,theta_..");
    common(simulate_cmd);
    simulation(simulate_cmd);

    auto* validate = app.add_subcommand("validate-mu", "mu-NDAE vs NDAE error per mu; CSV columns mu,converged,rmse,error_norm,bound");
    common(validate);
    simulation(validate);
    cb.add(*validate, "--mu-list", "mu_list", rc.mu_list, "mu values to sweep")->delimiter(',')->required();

    auto* estimate = app.add_subcommand("estimate", "initial-state estimate JSON for a placement");
    common(estimate);
    estimation(estimate);
    cb.add(*estimate, "--placement", "placement", rc.placement, "comma-separated bus numbers")->delimiter(',');
    cb.flag(*estimate, "--all", "all", rc.all_buses, "measure every bus");

    auto* place = app.add_subcommand("place", "trace-optimal placement JSON");
    common(place);
    estimation(place);
    cb.add(*place, "--p", "p", rc.p, "number of PMUs");
    cb.add(*place, "--fraction", "fraction", rc.fraction, "PMUs as a fraction of the buses (rounded half up)");
    cb.flag(*place, "--brute-force", "brute_force", rc.brute_force, "verify against exhaustive enumeration");
    cb.add(*place, "--brute-force-cap", "brute_force_cap", rc.brute_force_cap, "largest subset count to enumerate")->capture_default_str();

    auto* sweep = app.add_subcommand("sweep", "placements over p fractions; CSV columns p,bus_1..bus_N,objective,epsilon,nested");
    common(sweep);
    estimation(sweep);
    cb.add(*sweep, "--fractions", "fractions", rc.fractions, "PMU fractions")->delimiter(',');

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitInput;
    }

    try {
        if (!rc.config.empty()) {
            cb.apply(read_json_file(rc.config));
            if (rc.case_path.empty() && !convert->parsed()) throw ConfigError("no case given");
        }
        if (convert->parsed()) return cmd_convert(conv_in, conv_out, rc.sidecar);
        if (rc.case_path.empty()) throw ConfigError("--case is required");
        if (simulate_cmd->parsed()) return cmd_simulate(rc);
        if (validate->parsed()) return cmd_validate_mu(rc);
        if (estimate->parsed()) return cmd_estimate(rc);
        if (place->parsed()) return cmd_place(rc);
        if (sweep->parsed()) return cmd_sweep(rc);
    } catch (const ConvergenceError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitNumerical;
    } catch (const SingularityError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitNumerical;
    } catch (const InitializationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitNumerical;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitInput;
    } catch (const json::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitInput;
    }
    return kExitInput;
}
