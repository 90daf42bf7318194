#pragma once

// Moving horizon estimation of x_0 by damped Gauss-Newton on the stacked
// measurement and discretized-model residual
//   r(q) = [ y_k - C~ x_k            k = 0..N_o-1 ;
//            r_x,0 ;  phi_k(x_k; x_{k-1}, ...)   k = 1..N_o-1 ]
// where q = [x_0; ...; x_{N_o-1}]. The window has no predecessor of x_0, so its
// model block only asks x_0 to satisfy the algebraic constraints under the
// pre-disturbance loads (scaled like the algebraic rows of phi).

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <json.hpp>

#include "pmuopp/dynamics.hpp"
#include "pmuopp/errors.hpp"
#include "pmuopp/integrator.hpp"
#include "pmuopp/selection.hpp"
#include "pmuopp/state.hpp"

namespace pmuopp {

enum class GnJacobian { Exact, Paper };

inline GnJacobian gn_jacobian_from_string(const std::string& s) {
    if (s == "exact") return GnJacobian::Exact;
    if (s == "paper") return GnJacobian::Paper;
    throw ConfigError("jacobian must be 'exact' or 'paper'");
}

struct MheConfig {
    int N_o = 10;
    double h_g = 0.1;
    double gn_tol = 1e-4;
    int gn_max_iter = 200;
    Eigen::VectorXd lower;  // empty: unbounded
    Eigen::VectorXd upper;
    StateVector initial_guess;
    GnJacobian jacobian = GnJacobian::Exact;
    double ridge = 1e-10;

    void validate(const StateLayout& l) const {
        if (N_o < 2) throw ConfigError("N_o must be at least 2");
        if (!(h_g > 0 && h_g <= 1)) throw ConfigError("h_g must lie in (0, 1]");
        if (!(gn_tol > 0)) throw ConfigError("gn_tol must be positive");
        if (gn_max_iter < 0) throw ConfigError("gn_max_iter must be nonnegative");
        if (initial_guess.layout() != l) throw DimensionError("initial guess does not match the case");
        if (lower.size() != upper.size()) throw ConfigError("bounds must both be given or both be empty");
        if (lower.size() != 0) {
            if (lower.size() != l.n()) throw DimensionError("bounds do not match the state dimension");
            if ((lower.array() > upper.array()).any()) throw ConfigError("bounds are not ordered");
        }
    }
};

struct MeasurementSeries {
    Eigen::MatrixXd y;  // N_o x n_p
    double noise_pct = 0;
    std::uint64_t seed = 0;
    SensorSelection selection;

    int N_o() const { return static_cast<int>(y.rows()); }
};

// Noise is drawn for every bus channel (k, bus, v then theta) before selection,
// so a bus sees the same noise whatever else is selected.
inline MeasurementSeries synthesize_measurements(const Trajectory& traj, const SensorSelection& sel, double noise_pct,
                                                 std::uint64_t seed, int N_o = -1) {
    if (N_o < 0) N_o = static_cast<int>(traj.size());
    if (N_o < 1 || static_cast<int>(traj.size()) < N_o)
        throw DimensionError("trajectory holds " + std::to_string(traj.size()) + " states, window needs " + std::to_string(N_o));
    if (!(noise_pct >= 0)) throw ConfigError("noise_pct must be nonnegative");
    const StateLayout& l = traj.states.front().layout();
    const auto rows = sel.state_rows(l);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> z(0.0, 1.0);
    std::vector<int> col_of(l.n(), -1);
    for (std::size_t i = 0; i < rows.size(); ++i) col_of[rows[i]] = static_cast<int>(i);

    MeasurementSeries m{Eigen::MatrixXd(N_o, sel.n_p()), noise_pct, seed, sel};
    const double s = noise_pct / 100.0;
    for (int k = 0; k < N_o; ++k) {
        const StateVector& x = traj.states[k];
        for (int b = 0; b < l.N; ++b) {
            for (int idx : {l.v(b), l.theta(b)}) {
                const double eta = s * std::abs(x[idx]) * z(rng);
                if (col_of[idx] >= 0) m.y(k, col_of[idx]) = x[idx] + eta;
            }
        }
    }
    return m;
}

struct StackedStates {
    StateLayout layout;
    int N_o = 0;
    Eigen::VectorXd q;

    static StackedStates from_states(std::span<const StateVector> xs) {
        if (xs.empty()) throw DimensionError("cannot stack an empty window");
        StackedStates s{xs.front().layout(), static_cast<int>(xs.size()), Eigen::VectorXd(xs.size() * xs.front().size())};
        const int n = s.layout.n();
        for (int k = 0; k < s.N_o; ++k) {
            if (xs[k].layout() != s.layout) throw DimensionError("window states have mixed layouts");
            s.q.segment(k * n, n) = xs[k].values();
        }
        return s;
    }
    static StackedStates from_trajectory(const Trajectory& t, int N_o) {
        if (static_cast<int>(t.size()) < N_o) throw DimensionError("trajectory shorter than the window");
        return from_states(std::span<const StateVector>(t.states.data(), N_o));
    }

    StateVector state(int k) const { return StateVector(layout, q.segment(k * layout.n(), layout.n())); }
    std::vector<StateVector> states() const {
        std::vector<StateVector> out;
        out.reserve(N_o);
        for (int k = 0; k < N_o; ++k) out.push_back(state(k));
        return out;
    }
};

// Everything the window residual needs besides q and the measurements.
struct WindowModel {
    InputVector u;
    LoadSchedule loads;
    Scheme scheme;
    SimConfig cfg;
};

namespace detail {

inline void check_window(const StackedStates& q, const MeasurementSeries& m) {
    if (q.N_o != m.N_o()) throw DimensionError("state window has " + std::to_string(q.N_o) + " steps, measurements " + std::to_string(m.N_o()));
    if (q.q.size() != static_cast<Eigen::Index>(q.N_o) * q.layout.n()) throw DimensionError("stacked vector has the wrong length");
    if (m.selection.candidates() != q.layout.N) throw DimensionError("selection does not match the case");
}

// Algebraic-row weight applied to g(x_0): -h~ in mu mode, 1 in NDAE mode.
inline double initial_block_weight(const WindowModel& w) { return w.cfg.mode == Mode::MU ? -w.scheme.h_tilde : 1.0; }

}  // namespace detail

inline Eigen::VectorXd build_residual(const StackedStates& q, const MeasurementSeries& m, const WindowModel& w) {
    detail::check_window(q, m);
    const StateLayout& l = q.layout;
    const int n = l.n(), nd = l.n_d(), No = q.N_o, np = m.selection.n_p();
    const auto xs = q.states();
    Eigen::VectorXd r(No * np + No * n);
    for (int k = 0; k < No; ++k) r.segment(k * np, np) = m.y.row(k).transpose() - m.selection.measure(xs[k]);
    const int off = No * np;
    r.segment(off, nd).setZero();
    r.segment(off + nd, n - nd) = detail::initial_block_weight(w) * eval_g(xs[0], w.loads.at(0));
    for (int k = 1; k < No; ++k) {
        const Scheme s = w.scheme.at_step(k);
        const std::span<const StateVector> hist(xs.data() + (k - s.order()), s.order());
        r.segment(off + k * n, n) = implicit_residual_phi(xs[k], hist, w.u, w.loads.step(k), s, w.cfg);
    }
    return r;
}

inline Eigen::SparseMatrix<double> build_gn_jacobian(const StackedStates& q, const MeasurementSeries& m, const WindowModel& w,
                                                     GnJacobian variant = GnJacobian::Exact) {
    detail::check_window(q, m);
    const StateLayout& l = q.layout;
    const int n = l.n(), nd = l.n_d(), No = q.N_o, np = m.selection.n_p();
    const auto xs = q.states();
    const auto rows = m.selection.state_rows(l);
    const Eigen::VectorXd emu = e_mu_diagonal(l, w.cfg.mode == Mode::MU ? w.cfg.mu : 0.0);
    std::vector<Eigen::Triplet<double>> t;

    auto add_dense = [&](int r0, int c0, const Eigen::MatrixXd& B) {
        for (Eigen::Index j = 0; j < B.cols(); ++j)
            for (Eigen::Index i = 0; i < B.rows(); ++i)
                if (B(i, j) != 0.0) t.emplace_back(r0 + static_cast<int>(i), c0 + static_cast<int>(j), B(i, j));
    };

    for (int k = 0; k < No; ++k)
        for (int i = 0; i < np; ++i) t.emplace_back(k * np + i, k * n + rows[i], -1.0);

    const int off = No * np;
    const Eigen::MatrixXd J0 = eval_jacobian(xs[0], w.u, w.loads.at(0), w.cfg.model());
    add_dense(off + nd, 0, detail::initial_block_weight(w) * J0.bottomRows(n - nd));

    for (int k = 1; k < No; ++k) {
        const Scheme s = w.scheme.at_step(k);
        const std::span<const StateVector> hist(xs.data() + (k - s.order()), s.order());
        const StepLoads loads = w.loads.step(k);
        add_dense(off + k * n, k * n, assemble_step_jacobian(xs[k], hist, w.u, loads, s, w.cfg));
        if (variant == GnJacobian::Paper) continue;
        if (s.method == Method::TI) {
            Eigen::MatrixXd C = -s.h_tilde * eval_jacobian(xs[k - 1], w.u, loads.prev, w.cfg.model());
            if (w.cfg.mode == Mode::NDAE) C.bottomRows(n - nd).setZero();
            C.diagonal() -= emu;
            add_dense(off + k * n, (k - 1) * n, C);
        } else {
            for (int sidx = 1; sidx <= s.order(); ++sidx)
                for (int i = 0; i < n; ++i)
                    if (emu[i] != 0.0) t.emplace_back(off + k * n + i, (k - sidx) * n + i, -s.alpha[sidx - 1] * emu[i]);
        }
    }
    Eigen::SparseMatrix<double> J(No * np + No * n, No * n);
    J.setFromTriplets(t.begin(), t.end());
    return J;
}

struct GnReport {
    StateVector x0_hat;
    int iterations = 0;
    std::vector<double> residual_norms;
    double epsilon = std::numeric_limits<double>::quiet_NaN();
    bool converged = false;
    bool rank_deficient = false;
    bool observable = true;
};

inline double estimation_error(const StateVector& x0_hat, const StateVector& x0) {
    if (x0_hat.layout() != x0.layout()) throw DimensionError("estimate and truth have different layouts");
    const double d = x0.values().norm();
    if (d == 0.0) throw DomainError("estimation error is undefined for a zero true state");
    return (x0_hat.values() - x0.values()).norm() / d;
}

namespace detail {

inline void project(Eigen::Ref<Eigen::VectorXd> x0, const MheConfig& c) {
    if (c.lower.size() == 0) return;
    x0 = x0.cwiseMax(c.lower).cwiseMin(c.upper);
}

// Least-squares step of the normal equations. x_0 coordinates sitting on a bound
// that the step would push outward are held fixed and the system is re-solved.
inline bool bounded_gn_step(const Eigen::SparseMatrix<double>& JtJ, const Eigen::VectorXd& rhs,
                            const Eigen::Ref<const Eigen::VectorXd>& x0, const MheConfig& c, Eigen::VectorXd& step,
                            bool& rank_deficient) {
    const Eigen::Index dim = JtJ.rows();
    std::vector<char> fixed(static_cast<std::size_t>(dim), 0);
    for (int pass = 0; pass < 8; ++pass) {
        Eigen::SparseMatrix<double> A = JtJ;
        Eigen::VectorXd b = rhs;
        bool any_fixed = false;
        for (Eigen::Index i = 0; i < dim; ++i) any_fixed = any_fixed || fixed[i];
        if (any_fixed) {
            A.prune([&](Eigen::Index i, Eigen::Index j, double) { return !fixed[i] && !fixed[j]; });
            std::vector<Eigen::Triplet<double>> d;
            for (Eigen::Index i = 0; i < dim; ++i)
                if (fixed[i]) {
                    d.emplace_back(i, i, 1.0);
                    b[i] = 0;
                }
            Eigen::SparseMatrix<double> D(dim, dim);
            D.setFromTriplets(d.begin(), d.end());
            A += D;
        }
        Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt(A);
        bool ok = ldlt.info() == Eigen::Success;
        if (ok) {
            const auto D = ldlt.vectorD();
            ok = D.minCoeff() > 1e-14 * D.cwiseAbs().maxCoeff();
        }
        if (!ok) {
            rank_deficient = true;
            Eigen::SparseMatrix<double> I(dim, dim);
            I.setIdentity();
            ldlt.compute(A + c.ridge * I);
            if (ldlt.info() != Eigen::Success) throw SingularityError("Gauss-Newton normal equations are singular");
        }
        step = ldlt.solve(b);
        if (!step.allFinite()) return false;
        if (c.lower.size() == 0) return true;
        bool changed = false;
        for (Eigen::Index i = 0; i < x0.size(); ++i) {
            if (fixed[i]) continue;
            // The update is x - h_g * step.
            if ((x0[i] <= c.lower[i] && step[i] > 0) || (x0[i] >= c.upper[i] && step[i] < 0)) {
                fixed[i] = 1;
                changed = true;
            }
        }
        if (!changed) return true;
    }
    return true;
}

// Initial window: simulate forward from the guess; fall back to a constant window.
inline StackedStates initial_window(const StateVector& x0, const WindowModel& w, int N_o) {
    try {
        return StackedStates::from_trajectory(simulate_schedule(x0, w.u, w.loads, w.scheme, w.cfg, N_o - 1), N_o);
    } catch (const Error&) {
        return StackedStates::from_states(std::vector<StateVector>(N_o, x0));
    }
}

}  // namespace detail

inline GnReport gauss_newton_estimate(const MeasurementSeries& m, const WindowModel& w, const MheConfig& mc,
                                      const StateVector* truth = nullptr) {
    const StateLayout l = mc.initial_guess.layout();
    mc.validate(l);
    if (m.N_o() != mc.N_o) throw DimensionError("measurement window has " + std::to_string(m.N_o()) + " steps, N_o is " + std::to_string(mc.N_o));
    GnReport rep;
    rep.x0_hat = mc.initial_guess;
    if (m.selection.empty()) {
        rep.observable = false;
        if (truth) rep.epsilon = estimation_error(rep.x0_hat, *truth);
        return rep;
    }

    StateVector guess = mc.initial_guess;
    detail::project(guess.values(), mc);
    StackedStates q = detail::initial_window(guess, w, mc.N_o);
    const int n = l.n();

    for (int it = 0;; ++it) {
        const Eigen::VectorXd r = build_residual(q, m, w);
        const double norm = r.norm();
        if (!std::isfinite(norm)) break;
        rep.residual_norms.push_back(norm);
        if (norm < mc.gn_tol) {
            rep.converged = true;
            break;
        }
        if (it == mc.gn_max_iter) break;

        const Eigen::SparseMatrix<double> J = build_gn_jacobian(q, m, w, mc.jacobian);
        Eigen::VectorXd step;
        if (!detail::bounded_gn_step(J.transpose() * J, J.transpose() * r, q.q.head(n), mc, step, rep.rank_deficient)) break;
        q.q -= mc.h_g * step;
        detail::project(q.q.head(n), mc);
        rep.iterations = it + 1;
    }
    rep.x0_hat = q.state(0);
    if (truth) rep.epsilon = estimation_error(rep.x0_hat, *truth);
    return rep;
}

// Box around a reference operating point: +-20% (at least 0.05) on algebraic states,
// wide physical ranges on differential states.
inline std::pair<Eigen::VectorXd, Eigen::VectorXd> default_bounds(const StateVector& ref, double omega0) {
    const StateLayout& l = ref.layout();
    Eigen::VectorXd lo(l.n()), hi(l.n());
    for (int i = 0; i < l.G; ++i) {
        lo[l.delta(i)] = ref[l.delta(i)] - std::numbers::pi;
        hi[l.delta(i)] = ref[l.delta(i)] + std::numbers::pi;
        lo[l.omega(i)] = 0.95 * omega0;
        hi[l.omega(i)] = 1.05 * omega0;
        for (int idx : {l.e_p(i), l.t_m(i)}) {
            const double w = std::max(std::abs(ref[idx]), 1.0);
            lo[idx] = ref[idx] - w;
            hi[idx] = ref[idx] + w;
        }
    }
    for (int i = l.n_d(); i < l.n(); ++i) {
        const double w = std::max(0.2 * std::abs(ref[i]), 0.05);
        lo[i] = ref[i] - w;
        hi[i] = ref[i] + w;
    }
    return {lo, hi};
}

inline nlohmann::json to_json(const GnReport& r) {
    nlohmann::json j;
    j["x0_hat"] = std::vector<double>(r.x0_hat.values().data(), r.x0_hat.values().data() + r.x0_hat.size());
    j["iterations"] = r.iterations;
    j["residual_norms"] = r.residual_norms;
    j["epsilon"] = std::isfinite(r.epsilon) ? nlohmann::json(r.epsilon) : nlohmann::json(nullptr);
    j["converged"] = r.converged;
    j["rank_deficient"] = r.rank_deficient;
    j["observable"] = r.observable;
    return j;
}

}  // namespace pmuopp
