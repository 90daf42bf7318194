#pragma once

// Estimation and placement pipeline on a disturbed case:
// truth window -> synthetic PMU data -> MHE estimate x0_hat -> Gramian along the
// window simulated from x0_hat -> trace-optimal placements -> estimation error per placement.

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "pmuopp/case_io.hpp"
#include "pmuopp/integrator.hpp"
#include "pmuopp/mhe.hpp"
#include "pmuopp/netmodel.hpp"
#include "pmuopp/observability.hpp"
#include "pmuopp/placement.hpp"
#include "pmuopp/selection.hpp"
#include "pmuopp/steady_state.hpp"

namespace pmuopp {

struct ExperimentConfig {
    std::string scheme = "bdf3";
    double h = 0.1;
    double mu = 1e-6;
    double alpha_L = 2;  // percent
    double alpha_R = 2;
    double renewable_fraction = 0.2;
    double noise_pct = 2;
    std::uint64_t seed = 42;
    int N_o = 10;
    // The estimator starts from the equilibrium of the case with loads off by this much.
    double guess_alpha = 4;
    double nr_tol = 1e-10;
    int nr_max_iter = 20;
    GovernorSign governor_sign = GovernorSign::Stable;
    ChainRecursion recursion = ChainRecursion::Exact;
    GnJacobian jacobian = GnJacobian::Exact;
    double h_g = 0.1;
    double gn_tol = 1e-4;
    int gn_max_iter = 200;
    int threads = 1;

    void validate() const {
        if (!(h > 0)) throw ConfigError("h must be positive");
        if (!(mu > 0)) throw ConfigError("mu must be positive");
        if (N_o < 2) throw ConfigError("N_o must be at least 2");
        if (!(noise_pct >= 0)) throw ConfigError("noise_pct must be nonnegative");
        if (!(renewable_fraction >= 0 && renewable_fraction < 1)) throw ConfigError("renewable_fraction must lie in [0, 1)");
        if (threads < 1) throw ConfigError("threads must be at least 1");
    }
};

struct Experiment {
    ExperimentConfig config;
    NetworkCase net;  // with renewables
    SteadyState ss;
    WindowModel model;
    Trajectory truth;  // N_o states
    StateVector guess;
    Eigen::VectorXd lower, upper;

    int N() const { return net.N(); }

    MheConfig mhe_config() const {
        MheConfig m;
        m.N_o = config.N_o;
        m.h_g = config.h_g;
        m.gn_tol = config.gn_tol;
        m.gn_max_iter = config.gn_max_iter;
        m.lower = lower;
        m.upper = upper;
        m.initial_guess = guess;
        m.jacobian = config.jacobian;
        return m;
    }
};

inline Experiment make_experiment(const NetworkCase& raw, const ExperimentConfig& ec) {
    ec.validate();
    Experiment e;
    e.config = ec;
    e.net = with_renewables(raw, ec.renewable_fraction);
    SimConfig cfg;
    cfg.mode = Mode::MU;
    cfg.mu = ec.mu;
    cfg.nr_tol = ec.nr_tol;
    cfg.nr_max_iter = ec.nr_max_iter;
    cfg.governor_sign = ec.governor_sign;
    e.ss = init_steady_state(e.net, cfg.model());
    const Disturbance d{ec.alpha_L, ec.alpha_R, ec.renewable_fraction};
    e.model = WindowModel{e.ss.u0, LoadSchedule{e.net, apply_disturbance(e.net, d)}, parse_scheme(ec.scheme, ec.h), cfg};
    e.truth = simulate_schedule(e.ss.x0, e.ss.u0, e.model.loads, e.model.scheme, cfg, ec.N_o - 1);
    const Disturbance dg{ec.guess_alpha, ec.guess_alpha, ec.renewable_fraction};
    e.guess = init_steady_state(apply_disturbance(e.net, dg), cfg.model()).x0;
    std::tie(e.lower, e.upper) = default_bounds(e.ss.x0, e.net.omega0);
    return e;
}

inline MeasurementSeries measure(const Experiment& e, const SensorSelection& sel, double noise_pct) {
    return synthesize_measurements(e.truth, sel, noise_pct, e.config.seed, e.config.N_o);
}

inline GnReport run_estimate(const Experiment& e, const SensorSelection& sel, double noise_pct) {
    return gauss_newton_estimate(measure(e, sel, noise_pct), e.model, e.mhe_config(), &e.ss.x0);
}

// Estimation error for a placement; infinity when the estimator cannot produce one.
inline double evaluate_placement(const Experiment& e, const std::vector<int>& Z, double noise_pct) {
    try {
        const GnReport r = run_estimate(e, SensorSelection(Z, e.N()), noise_pct);
        if (!r.observable || !std::isfinite(r.epsilon)) return std::numeric_limits<double>::infinity();
        return r.epsilon;
    } catch (const ConvergenceError&) {
        return std::numeric_limits<double>::infinity();
    } catch (const SingularityError&) {
        return std::numeric_limits<double>::infinity();
    }
}

struct GramianStage {
    GnReport estimate;  // full-placement estimate the sensitivities are evaluated at
    SensitivityChain chain;
    std::vector<GramianContribution> contributions;
};

// Contributions along the window simulated from a given x_0.
inline std::vector<GramianContribution> contributions_at(const Experiment& e, const StateVector& x0, SensitivityChain* chain_out = nullptr) {
    const Trajectory w = simulate_schedule(x0, e.model.u, e.model.loads, e.model.scheme, e.model.cfg, e.config.N_o - 1);
    SensitivityChain ch = propagate_chain(w, e.model.u, e.model.loads, e.model.scheme, e.model.cfg, e.config.N_o, e.config.recursion);
    auto cs = per_sensor_contributions(ch, e.N(), e.config.threads);
    if (chain_out) *chain_out = std::move(ch);
    return cs;
}

// x0_hat comes from every candidate bus measured at the configured noise level.
inline GramianStage gramian_stage(const Experiment& e) {
    GramianStage g;
    g.estimate = run_estimate(e, SensorSelection::all(e.N()), e.config.noise_pct);
    g.contributions = contributions_at(e, g.estimate.x0_hat, &g.chain);
    return g;
}

inline std::vector<PlacementResult> place_all(const std::vector<GramianContribution>& cs, const std::vector<int>& ps) {
    std::vector<PlacementResult> out;
    for (int p : ps) out.push_back(solve_apriori(PlacementProblem{cs, p}));
    return out;
}

}  // namespace pmuopp
