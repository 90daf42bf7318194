#pragma once

// Implicit time stepping of the NDAE and its mu-relaxation with BE, BDF(k) and trapezoidal schemes.

#include <cmath>
#include <iomanip>
#include <limits>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "pmuopp/dynamics.hpp"
#include "pmuopp/errors.hpp"
#include "pmuopp/netmodel.hpp"
#include "pmuopp/state.hpp"

namespace pmuopp {

enum class Method { BE, BDF, TI };
enum class Mode { NDAE, MU };
// Step Jacobian used for TI: the exact derivative of the step residual, or the
// variant that sums the current and previous model Jacobians.
enum class TiJacobian { Exact, Summed };

struct BdfCoefficients {
    double beta = 1;
    std::vector<double> alpha;
};

inline BdfCoefficients bdf_coefficients(int k) {
    if (k < 1 || k > 5) throw DomainError("BDF order must lie in 1..5, got " + std::to_string(k));
    auto binom = [](int n, int r) {
        double c = 1;
        for (int i = 1; i <= r; ++i) c = c * (n - r + i) / i;
        return c;
    };
    double harmonic = 0;
    for (int s = 1; s <= k; ++s) harmonic += 1.0 / s;
    BdfCoefficients out;
    out.beta = 1.0 / harmonic;
    for (int s = 1; s <= k; ++s) {
        double sum = 0;
        for (int j = s; j <= k; ++j) sum += binom(j, s) / j;
        out.alpha.push_back((s % 2 == 1 ? 1.0 : -1.0) * out.beta * sum);
    }
    return out;
}

struct Scheme {
    Method method = Method::BDF;
    int k_g = 1;
    double h = 0.1;
    double beta = 1;
    std::vector<double> alpha{1.0};
    double h_tilde = 0.1;

    static Scheme be(double h) {
        Scheme s = bdf(1, h);
        s.method = Method::BE;
        return s;
    }
    static Scheme bdf(int k, double h) {
        const auto c = bdf_coefficients(k);
        return Scheme{Method::BDF, k, h, c.beta, c.alpha, c.beta * h};
    }
    static Scheme ti(double h) { return Scheme{Method::TI, 1, h, 0.5, {1.0}, 0.5 * h}; }

    // Number of previous states the step residual needs.
    int order() const { return k_g; }

    // Scheme actually used at step k >= 1: BDF ramps its order up while history accumulates.
    Scheme at_step(int k) const {
        if (method != Method::BDF || k >= k_g) return *this;
        Scheme s = bdf(std::max(k, 1), h);
        return s;
    }

    std::string name() const {
        switch (method) {
            case Method::BE: return "be";
            case Method::TI: return "ti";
            case Method::BDF: return "bdf" + std::to_string(k_g);
        }
        return "?";
    }
};

inline Scheme parse_scheme(const std::string& s, double h) {
    if (s == "be") return Scheme::be(h);
    if (s == "ti") return Scheme::ti(h);
    if (s.size() == 4 && s.rfind("bdf", 0) == 0 && s[3] >= '1' && s[3] <= '5') return Scheme::bdf(s[3] - '0', h);
    throw ConfigError("unknown scheme '" + s + "' (expected be, bdf1..bdf5 or ti)");
}

struct SimConfig {
    Mode mode = Mode::MU;
    double mu = 1e-6;
    double t_end = 30;
    double nr_tol = 1e-2;
    int nr_max_iter = 10;
    GovernorSign governor_sign = GovernorSign::Stable;
    TiJacobian ti_jacobian = TiJacobian::Exact;

    ModelOptions model() const { return {governor_sign}; }
    void validate() const {
        if (mode == Mode::MU && !(mu > 0)) throw ConfigError("mu must be positive in mu-NDAE mode");
        if (nr_max_iter < 1) throw ConfigError("nr_max_iter must be at least 1");
        if (!(nr_tol > 0)) throw ConfigError("nr_tol must be positive");
        if (!(t_end >= 0)) throw ConfigError("t_end must be nonnegative");
    }
};

// Load data in force at the current step and at the previous one (TI evaluates both).
struct StepLoads {
    const NetworkCase& now;
    const NetworkCase& prev;

    explicit StepLoads(const NetworkCase& c) : now(c), prev(c) {}
    StepLoads(const NetworkCase& n, const NetworkCase& p) : now(n), prev(p) {}
};

// Loads for a disturbance applied from the first step onward.
struct LoadSchedule {
    NetworkCase base;
    NetworkCase disturbed;

    const NetworkCase& at(int k) const { return k <= 0 ? base : disturbed; }
    StepLoads step(int k) const { return StepLoads(at(k), at(k - 1)); }
};

struct Trajectory {
    std::vector<double> times;
    std::vector<StateVector> states;
    std::vector<int> newton_iters;

    std::size_t size() const { return states.size(); }
};

namespace detail {

inline Eigen::VectorXd model_rhs(const StateVector& x, const InputVector& u, const NetworkCase& c, const SimConfig& cfg) {
    Eigen::VectorXd r(x.size());
    const int nd = x.layout().n_d();
    r.head(nd) = eval_f(x, u, c, cfg.model());
    r.tail(x.size() - nd) = eval_g(x, c);
    return r;
}

inline void check_history(std::span<const StateVector> history, const Scheme& s) {
    if (static_cast<int>(history.size()) < s.order())
        throw StateError("history holds " + std::to_string(history.size()) + " states, scheme " + s.name() +
                         " needs " + std::to_string(s.order()));
}

// Part of the step residual that does not depend on x_k:
//   mu mode:   -E_mu sum_s alpha_s x_{k-s}   (TI: -E_mu x_{k-1} - h~ [f; g](x_{k-1}))
//   NDAE mode: same on differential rows, zero on algebraic rows.
inline Eigen::VectorXd step_constant(std::span<const StateVector> history, const InputVector& u, StepLoads loads,
                                     const Scheme& s, const SimConfig& cfg) {
    const StateLayout& l = history.back().layout();
    const int n = l.n(), nd = l.n_d();
    const std::size_t m = history.size();
    Eigen::VectorXd c = Eigen::VectorXd::Zero(n);
    for (int j = 1; j <= s.order(); ++j) c -= s.alpha[j - 1] * history[m - j].values();
    if (cfg.mode == Mode::MU) c.tail(n - nd) *= cfg.mu;
    if (s.method == Method::TI) c -= s.h_tilde * model_rhs(history[m - 1], u, loads.prev, cfg);
    if (cfg.mode == Mode::NDAE) c.tail(n - nd).setZero();
    return c;
}

inline Eigen::VectorXd residual_from(const StateVector& x_k, const Eigen::VectorXd& constant, const InputVector& u,
                                     StepLoads loads, const Scheme& s, const SimConfig& cfg) {
    const StateLayout& l = x_k.layout();
    const int n = l.n(), nd = l.n_d();
    const Eigen::VectorXd rhs = model_rhs(x_k, u, loads.now, cfg);
    Eigen::VectorXd phi(n);
    phi.head(nd) = x_k.values().head(nd) - s.h_tilde * rhs.head(nd);
    if (cfg.mode == Mode::MU) {
        phi.tail(n - nd) = cfg.mu * x_k.values().tail(n - nd) - s.h_tilde * rhs.tail(n - nd);
    } else {
        phi.tail(n - nd) = rhs.tail(n - nd);
    }
    return phi + constant;
}

}  // namespace detail

// Step residual phi(x_k); history is ordered oldest first, so history.back() is x_{k-1}.
inline Eigen::VectorXd implicit_residual_phi(const StateVector& x_k, std::span<const StateVector> history,
                                             const InputVector& u, StepLoads loads, const Scheme& scheme,
                                             const SimConfig& cfg) {
    detail::check_history(history, scheme);
    return detail::residual_from(x_k, detail::step_constant(history, u, loads, scheme, cfg), u, loads, scheme, cfg);
}

// Derivative of the step residual with respect to x_k.
inline Eigen::MatrixXd assemble_step_jacobian(const StateVector& x_k, std::span<const StateVector> history,
                                              const InputVector& u, StepLoads loads, const Scheme& scheme,
                                              const SimConfig& cfg) {
    detail::check_history(history, scheme);
    const StateLayout& l = x_k.layout();
    const int n = l.n(), nd = l.n_d();
    const Eigen::MatrixXd Jk = eval_jacobian(x_k, u, loads.now, cfg.model());
    Eigen::MatrixXd J = Jk;
    if (scheme.method == Method::TI && cfg.ti_jacobian == TiJacobian::Summed)
        J += eval_jacobian(history.back(), u, loads.prev, cfg.model());
    Eigen::MatrixXd A(n, n);
    A.topRows(nd) = -scheme.h_tilde * J.topRows(nd);
    A.topLeftCorner(nd, nd).diagonal().array() += 1.0;
    if (cfg.mode == Mode::MU) {
        A.bottomRows(n - nd) = -scheme.h_tilde * J.bottomRows(n - nd);
        A.bottomRightCorner(n - nd, n - nd).diagonal().array() += cfg.mu;
    } else {
        A.bottomRows(n - nd) = Jk.bottomRows(n - nd);
    }
    return A;
}

struct NewtonResult {
    StateVector x;
    int iterations = 0;
    double last_increment = 0;
};

namespace detail {

inline Eigen::VectorXd checked_solve(const Eigen::MatrixXd& A, const Eigen::VectorXd& b) {
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(A);
    const double rc = lu.rcond();
    if (!(rc > 1e-16)) throw SingularityError("step Jacobian is singular (rcond " + std::to_string(rc) + ")");
    return lu.solve(b);
}

}  // namespace detail

inline NewtonResult newton_step(const StateVector& x_guess, std::span<const StateVector> history, const InputVector& u,
                                StepLoads loads, const Scheme& scheme, const SimConfig& cfg) {
    detail::check_history(history, scheme);
    const Eigen::VectorXd constant = detail::step_constant(history, u, loads, scheme, cfg);
    NewtonResult r{x_guess, 0, 0};
    for (int it = 1; it <= cfg.nr_max_iter; ++it) {
        const Eigen::VectorXd phi = detail::residual_from(r.x, constant, u, loads, scheme, cfg);
        const Eigen::MatrixXd A = assemble_step_jacobian(r.x, history, u, loads, scheme, cfg);
        const Eigen::VectorXd dx = detail::checked_solve(A, -phi);
        if (!dx.allFinite()) throw ConvergenceError("Newton increment is not finite", std::numeric_limits<double>::infinity());
        r.x.values() += dx;
        r.iterations = it;
        r.last_increment = dx.norm();
        if (r.last_increment < cfg.nr_tol) return r;
    }
    throw ConvergenceError("Newton did not converge in " + std::to_string(cfg.nr_max_iter) +
                               " iterations (last increment " + std::to_string(r.last_increment) + ")",
                           r.last_increment);
}

// Steps k = 1..steps from x0; loads(k) supplies the load data at step k.
inline Trajectory simulate_schedule(const StateVector& x0, const InputVector& u, const LoadSchedule& loads,
                                    const Scheme& scheme, const SimConfig& cfg, int steps) {
    cfg.validate();
    if (cfg.mode == Mode::NDAE) {
        const double g0 = eval_g(x0, loads.base).cwiseAbs().maxCoeff();
        if (g0 > 1e-6) throw StateError("initial state is not consistent (|g| = " + std::to_string(g0) + ")");
    }
    Trajectory tr;
    tr.times.reserve(steps + 1);
    tr.states.reserve(steps + 1);
    tr.newton_iters.reserve(steps + 1);
    tr.times.push_back(0.0);
    tr.states.push_back(x0);
    tr.newton_iters.push_back(0);
    for (int k = 1; k <= steps; ++k) {
        const Scheme s = scheme.at_step(k);
        const std::span<const StateVector> hist(tr.states.data() + (k - s.order()), s.order());
        try {
            NewtonResult nr = newton_step(tr.states.back(), hist, u, loads.step(k), s, cfg);
            tr.states.push_back(std::move(nr.x));
            tr.newton_iters.push_back(nr.iterations);
        } catch (const ConvergenceError& e) {
            throw ConvergenceError(std::string(e.what()) + " at step " + std::to_string(k), e.last_norm(), k);
        } catch (const SingularityError& e) {
            throw SingularityError(std::string(e.what()) + " at step " + std::to_string(k));
        }
        tr.times.push_back(k * scheme.h);
    }
    return tr;
}

inline int step_count(double t_end, double h) { return static_cast<int>(std::llround(t_end / h)); }

inline Trajectory simulate(const StateVector& x0, const InputVector& u, const NetworkCase& c, const Scheme& scheme,
                           const SimConfig& cfg, const Disturbance& d) {
    const LoadSchedule loads{c, apply_disturbance(c, d)};
    return simulate_schedule(x0, u, loads, scheme, cfg, step_count(cfg.t_end, scheme.h));
}

inline void check_aligned(const Trajectory& a, const Trajectory& b) {
    if (a.size() != b.size()) throw DimensionError("trajectories have different lengths");
    for (std::size_t k = 0; k < a.size(); ++k) {
        if (std::abs(a.times[k] - b.times[k]) > 1e-9 * std::max(1.0, std::abs(a.times[k])))
            throw DimensionError("trajectory time grids are misaligned");
        if (a.states[k].size() != b.states[k].size()) throw DimensionError("trajectory state sizes differ");
    }
}

// sqrt(sum_k ||a_k - b_k||^2 / t) over steps k = 1..t (step 0 is shared initial data).
inline double rmse(const Trajectory& a, const Trajectory& b) {
    check_aligned(a, b);
    if (a.size() < 2) return a.size() == 1 ? (a.states[0].values() - b.states[0].values()).norm() : 0.0;
    double sum = 0;
    for (std::size_t k = 1; k < a.size(); ++k) sum += (a.states[k].values() - b.states[k].values()).squaredNorm();
    return std::sqrt(sum / static_cast<double>(a.size() - 1));
}

// sqrt(sum_k ||a_k - b_k||^2) over k = 1..t.
inline double error_norm(const Trajectory& a, const Trajectory& b) {
    check_aligned(a, b);
    double sum = 0;
    for (std::size_t k = 1; k < a.size(); ++k) sum += (a.states[k].values() - b.states[k].values()).squaredNorm();
    return std::sqrt(sum);
}

// Every stride-th state, e.g. to align a fine reference run with a coarse grid.
inline Trajectory subsample(const Trajectory& t, int stride) {
    Trajectory out;
    for (std::size_t k = 0; k < t.size(); k += stride) {
        out.times.push_back(t.times[k]);
        out.states.push_back(t.states[k]);
        out.newton_iters.push_back(t.newton_iters[k]);
    }
    return out;
}

inline std::vector<std::string> state_names(const StateLayout& l) {
    std::vector<std::string> names;
    auto add = [&](const char* base, int count) {
        for (int i = 1; i <= count; ++i) names.push_back(std::string(base) + "_" + std::to_string(i));
    };
    add("delta", l.G);
    add("omega", l.G);
    add("E_p", l.G);
    add("T_M", l.G);
    add("P_G", l.G);
    add("Q_G", l.G);
    add("v", l.N);
    add("theta", l.N);
    return names;
}

inline void write_trajectory_csv(std::ostream& os, const Trajectory& t) {
    if (t.states.empty()) return;
    os << "t";
    for (const auto& n : state_names(t.states[0].layout())) os << ',' << n;
    os << '\n';
    os << std::setprecision(17);
    for (std::size_t k = 0; k < t.size(); ++k) {
        os << t.times[k];
        const auto& x = t.states[k].values();
        for (Eigen::Index i = 0; i < x.size(); ++i) os << ',' << x[i];
        os << '\n';
    }
}

}  // namespace pmuopp
