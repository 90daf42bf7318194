#pragma once

// Observability of x_0 over an MHE window: sensitivities dx_j/dx_0 of the implicit
// schemes, the stacked measurement Jacobian J, the Gramian W_o = J^T J and its
// per-bus decomposition W_o = sum_i W_o,i.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "pmuopp/dynamics.hpp"
#include "pmuopp/errors.hpp"
#include "pmuopp/integrator.hpp"
#include "pmuopp/selection.hpp"
#include "pmuopp/state.hpp"

namespace pmuopp {

enum class ChainRecursion { Exact, Paper };

inline ChainRecursion chain_recursion_from_string(const std::string& s) {
    if (s == "exact") return ChainRecursion::Exact;
    if (s == "paper") return ChainRecursion::Paper;
    throw ConfigError("recursion must be 'exact' or 'paper'");
}

struct SensitivityChain {
    std::vector<Eigen::MatrixXd> steps;  // dx_j/dx_0, j = 0..N_o-1

    int N_o() const { return static_cast<int>(steps.size()); }
};

namespace detail {

inline void require_mu(const SimConfig& cfg) {
    if (cfg.mode != Mode::MU) throw ConfigError("sensitivities need the mu-NDAE model");
}

inline Eigen::MatrixXd solve_square(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B) {
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(A);
    if (!(lu.rcond() > 1e-16)) throw SingularityError("sensitivity system is singular (rcond " + std::to_string(lu.rcond()) + ")");
    return lu.solve(B);
}

}  // namespace detail

// dx_j/dx_{j-s} for s = 1..order, from A_g S_s = R_s with
// R_s = alpha_s E_mu (BE/BDF) or E_mu + h~ J(x_{j-1}) (TI).
inline std::vector<Eigen::MatrixXd> step_sensitivity(const StateVector& x_j, std::span<const StateVector> history,
                                                     const InputVector& u, StepLoads loads, const Scheme& s,
                                                     const SimConfig& cfg) {
    detail::require_mu(cfg);
    const Eigen::MatrixXd A = assemble_step_jacobian(x_j, history, u, loads, s, cfg);
    const Eigen::VectorXd emu = e_mu_diagonal(x_j.layout(), cfg.mu);
    std::vector<Eigen::MatrixXd> out;
    if (s.method == Method::TI) {
        Eigen::MatrixXd R = s.h_tilde * eval_jacobian(history.back(), u, loads.prev, cfg.model());
        R.diagonal() += emu;
        out.push_back(detail::solve_square(A, R));
        return out;
    }
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(A);
    if (!(lu.rcond() > 1e-16)) throw SingularityError("sensitivity system is singular (rcond " + std::to_string(lu.rcond()) + ")");
    const Eigen::MatrixXd AinvE = lu.solve(Eigen::MatrixXd(emu.asDiagonal()));
    for (int k = 1; k <= s.order(); ++k) out.push_back(s.alpha[k - 1] * AinvE);
    return out;
}

// The explicit 2x2 block expressions for dx_j/dx_{j-1} (BE and TI only):
//   BE: [[A_d^-1, h~ F_a A_a^-1 mu], [h~ G_d A_d^-1 / mu, A_a^-1 mu]]
//   TI: [[A_d^-1 A_d^+, h~ (F_a A_a^-1 A_a^+ + F_a')], [h~ (G_d A_d^-1 A_d^+ + G_d') / mu, A_a^-1 A_a^+]]
// with A_d = I - h~ F_d, A_a = mu I - h~ G_a and primes/plus signs evaluated at x_{j-1}.
inline Eigen::MatrixXd step_sensitivity_blockwise(const StateVector& x_j, std::span<const StateVector> history,
                                                  const InputVector& u, StepLoads loads, const Scheme& s,
                                                  const SimConfig& cfg) {
    detail::require_mu(cfg);
    if (!(s.method == Method::BE || s.method == Method::TI || (s.method == Method::BDF && s.k_g == 1)))
        throw ConfigError("blockwise sensitivities exist for BE and TI only");
    if (history.empty()) throw StateError("blockwise sensitivity needs x_{j-1}");
    const StateLayout& l = x_j.layout();
    const int nd = l.n_d(), na = l.n_a();
    const double ht = s.h_tilde, mu = cfg.mu;
    const JacobianBlocks Jj = eval_jacobian_blocks(x_j, u, loads.now, cfg.model());
    const Eigen::MatrixXd Id = Eigen::MatrixXd::Identity(nd, nd), Ia = Eigen::MatrixXd::Identity(na, na);
    const Eigen::MatrixXd Ad = Id - ht * Jj.F_xd;
    const Eigen::MatrixXd Aa = mu * Ia - ht * Jj.G_xa;
    Eigen::MatrixXd S(l.n(), l.n());
    if (s.method == Method::TI) {
        const JacobianBlocks Jp = eval_jacobian_blocks(history.back(), u, loads.prev, cfg.model());
        const Eigen::MatrixXd dd = detail::solve_square(Ad, Id + ht * Jp.F_xd);
        const Eigen::MatrixXd aa = detail::solve_square(Aa, mu * Ia + ht * Jp.G_xa);
        S.topLeftCorner(nd, nd) = dd;
        S.topRightCorner(nd, na) = ht * (Jj.F_xa * aa + Jp.F_xa);
        S.bottomLeftCorner(na, nd) = ht * (Jj.G_xd * dd + Jp.G_xd) / mu;
        S.bottomRightCorner(na, na) = aa;
    } else {
        const Eigen::MatrixXd dd = detail::solve_square(Ad, Id);
        const Eigen::MatrixXd aa = detail::solve_square(Aa, mu * Ia);
        S.topLeftCorner(nd, nd) = dd;
        S.topRightCorner(nd, na) = ht * Jj.F_xa * aa;
        S.bottomLeftCorner(na, nd) = ht * Jj.G_xd * dd / mu;
        S.bottomRightCorner(na, na) = aa;
    }
    return S;
}

// Sensitivities along a simulated window (window.states[0] = x_0, loads per step).
//   Exact: dx_j/dx_0 = sum_s S_s(j) dx_{j-s}/dx_0 over the order used at step j.
//   Paper: one-step products below the full order k; from j >= k,
//          dx_j/dx_0 = D_j dx_{j-k}/dx_0 with D_j = A_g^-1 E_mu sum_s alpha_s dx_{j-s}/dx_{j-k}
//          and dx_a/dx_b built from single-step (alpha_1-only) factors. BE and TI use the
//          blockwise one-step expressions.
inline SensitivityChain propagate_chain(const Trajectory& window, const InputVector& u, const LoadSchedule& loads,
                                        const Scheme& scheme, const SimConfig& cfg, int N_o,
                                        ChainRecursion recursion = ChainRecursion::Exact) {
    detail::require_mu(cfg);
    if (N_o < 1) throw ConfigError("N_o must be at least 1");
    if (static_cast<int>(window.size()) < N_o)
        throw DimensionError("window holds " + std::to_string(window.size()) + " states, N_o is " + std::to_string(N_o));
    const int n = window.states.front().size();
    const auto& xs = window.states;
    SensitivityChain c;
    c.steps.reserve(N_o);
    c.steps.push_back(Eigen::MatrixXd::Identity(n, n));
    auto hist = [&](int j, const Scheme& s) { return std::span<const StateVector>(xs.data() + (j - s.order()), s.order()); };

    if (recursion == ChainRecursion::Exact) {
        for (int j = 1; j < N_o; ++j) {
            const Scheme s = scheme.at_step(j);
            const auto S = step_sensitivity(xs[j], hist(j, s), u, loads.step(j), s, cfg);
            Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(n, n);
            for (int k = 1; k <= s.order(); ++k) acc.noalias() += S[k - 1] * c.steps[j - k];
            c.steps.push_back(std::move(acc));
        }
        return c;
    }

    if (scheme.method != Method::BDF || scheme.k_g == 1) {
        for (int j = 1; j < N_o; ++j) {
            const Scheme s = scheme.at_step(j);
            c.steps.push_back(step_sensitivity_blockwise(xs[j], hist(j, s), u, loads.step(j), s, cfg) * c.steps[j - 1]);
        }
        return c;
    }

    const int kg = scheme.k_g;
    const Eigen::VectorXd emu = e_mu_diagonal(xs.front().layout(), cfg.mu);
    // Single-step factors dx_j/dx_{j-1} keeping only the alpha_1 term.
    std::vector<Eigen::MatrixXd> one(N_o);
    std::vector<Eigen::MatrixXd> AinvE(N_o);
    for (int j = 1; j < N_o; ++j) {
        const Scheme s = scheme.at_step(j);
        const Eigen::MatrixXd A = assemble_step_jacobian(xs[j], hist(j, s), u, loads.step(j), s, cfg);
        AinvE[j] = detail::solve_square(A, Eigen::MatrixXd(emu.asDiagonal()));
        one[j] = s.alpha[0] * AinvE[j];
    }
    auto span_product = [&](int a, int b) {  // dx_a/dx_b for a >= b
        Eigen::MatrixXd P = Eigen::MatrixXd::Identity(n, n);
        for (int m = b + 1; m <= a; ++m) P = one[m] * P;
        return P;
    };
    for (int j = 1; j < N_o; ++j) {
        if (j < kg) {
            c.steps.push_back(one[j] * c.steps[j - 1]);
            continue;
        }
        const Scheme s = scheme.at_step(j);
        Eigen::MatrixXd inner = Eigen::MatrixXd::Zero(n, n);
        for (int k = 1; k <= s.order(); ++k) inner += s.alpha[k - 1] * span_product(j - k, j - kg);
        c.steps.push_back(AinvE[j] * inner * c.steps[j - kg]);
    }
    return c;
}

// Rows j*n_p + r hold row r of C~ dx_j/dx_0.
inline Eigen::MatrixXd build_observation_jacobian(const SensitivityChain& chain, const SensorSelection& sel) {
    if (chain.steps.empty()) throw DimensionError("empty sensitivity chain");
    const int n = static_cast<int>(chain.steps.front().cols());
    // The layout follows from n = 6G + 2N.
    const int N = sel.candidates();
    if ((n - 2 * N) % 6 != 0) throw DimensionError("chain dimension does not match the selection");
    const StateLayout l((n - 2 * N) / 6, N);
    const auto rows = sel.state_rows(l);
    const int np = sel.n_p();
    Eigen::MatrixXd J(chain.N_o() * np, n);
    for (int j = 0; j < chain.N_o(); ++j)
        for (int r = 0; r < np; ++r) J.row(j * np + r) = chain.steps[j].row(rows[r]);
    return J;
}

inline constexpr double kConditionFloor = 1e-300;
inline constexpr double kIllConditionedRatio = 1e-8;

struct ObservabilityReport {
    Eigen::MatrixXd W_o;
    double trace = 0;
    Eigen::VectorXd eigenvalues;  // ascending
    double min_eig = 0;
    double max_eig = 0;
    double condition_number = 0;
    int numerical_rank = 0;

    bool ill_conditioned() const { return !(min_eig >= kIllConditionedRatio * max_eig) || max_eig == 0; }
};

namespace detail {

// Rank counts singular values of J (square roots of the Gramian spectrum) above sigma_max * n * eps * 1e3.
inline void fill_spectrum(ObservabilityReport& r, const Eigen::VectorXd& sigma) {
    const int n = static_cast<int>(r.W_o.rows());
    r.min_eig = n ? r.eigenvalues.minCoeff() : 0.0;
    r.max_eig = n ? r.eigenvalues.maxCoeff() : 0.0;
    r.condition_number = r.max_eig / std::max(r.min_eig, kConditionFloor);
    const double smax = sigma.size() ? sigma.maxCoeff() : 0.0;
    const double thr = smax * n * std::numeric_limits<double>::epsilon() * 1e3;
    r.numerical_rank = 0;
    if (smax > 0)
        for (Eigen::Index i = 0; i < sigma.size(); ++i)
            if (sigma[i] > thr) ++r.numerical_rank;
}

}  // namespace detail

inline ObservabilityReport gramian(const Eigen::MatrixXd& J) {
    ObservabilityReport r;
    const Eigen::Index n = J.cols();
    r.W_o = J.transpose() * J;
    r.W_o = 0.5 * (r.W_o + r.W_o.transpose()).eval();
    r.trace = r.W_o.trace();
    Eigen::VectorXd sigma = Eigen::VectorXd::Zero(0);
    if (J.rows() > 0 && n > 0) sigma = Eigen::BDCSVD<Eigen::MatrixXd>(J).singularValues();
    Eigen::VectorXd ev = Eigen::VectorXd::Zero(n);
    for (Eigen::Index i = 0; i < sigma.size(); ++i) ev[n - 1 - i] = sigma[i] * sigma[i];
    r.eigenvalues = ev;
    detail::fill_spectrum(r, sigma);
    return r;
}

// Report for a Gramian given directly (a sum of contributions).
inline ObservabilityReport gramian_from_matrix(const Eigen::MatrixXd& W) {
    ObservabilityReport r;
    r.W_o = 0.5 * (W + W.transpose());
    r.trace = r.W_o.trace();
    const Eigen::Index n = W.rows();
    Eigen::VectorXd sigma(n);
    r.eigenvalues = Eigen::VectorXd::Zero(n);
    if (n > 0) {
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(r.W_o, Eigen::EigenvaluesOnly);
        r.eigenvalues = es.eigenvalues();
        for (Eigen::Index i = 0; i < n; ++i) sigma[i] = std::sqrt(std::max(r.eigenvalues[i], 0.0));
    }
    detail::fill_spectrum(r, sigma);
    return r;
}

struct GramianContribution {
    int bus = 0;  // 1-based
    Eigen::MatrixXd W;
    double trace = 0;      // on the shared dyadic grid
    double trace_raw = 0;  // unrounded trace(W)
};

// Rounds every trace to a multiple of 2^(e-52), where 2^e bounds their total, so any
// subset sum is exact in double precision and independent of summation order.
inline void quantize_traces(std::vector<GramianContribution>& cs) {
    double total = 0;
    for (const auto& c : cs) total += c.trace_raw;
    if (!(total > 0)) {
        for (auto& c : cs) c.trace = 0;
        return;
    }
    const int e = std::ilogb(total) + 2;
    const double unit = std::ldexp(1.0, e - 52);
    for (auto& c : cs) c.trace = std::nearbyint(c.trace_raw / unit) * unit;
}

// W_o,i = J_i^T J_i for the single-bus selection {i}, accumulated over j ascending, v before theta.
inline std::vector<GramianContribution> per_sensor_contributions(const SensitivityChain& chain, int candidates,
                                                                 int threads = 1) {
    if (chain.steps.empty()) throw DimensionError("empty sensitivity chain");
    const int n = static_cast<int>(chain.steps.front().cols());
    if ((n - 2 * candidates) % 6 != 0 || n <= 2 * candidates) throw DimensionError("chain dimension does not match the bus count");
    const StateLayout l((n - 2 * candidates) / 6, candidates);
    std::vector<GramianContribution> out(candidates);
    auto work = [&](int b) {
        Eigen::MatrixXd W = Eigen::MatrixXd::Zero(n, n);
        for (const auto& S : chain.steps) {
            for (int idx : {l.v(b), l.theta(b)}) {
                const Eigen::VectorXd r = S.row(idx).transpose();
                W.noalias() += r * r.transpose();
            }
        }
        out[b] = GramianContribution{b + 1, std::move(W), 0, 0};
        out[b].trace_raw = out[b].W.trace();
    };
    threads = std::max(1, std::min(threads, candidates));
    if (threads == 1) {
        for (int b = 0; b < candidates; ++b) work(b);
    } else {
        std::vector<std::jthread> pool;
        for (int t = 0; t < threads; ++t)
            pool.emplace_back([&, t] {
                for (int b = t; b < candidates; b += threads) work(b);
            });
    }
    quantize_traces(out);
    return out;
}

// Sum of the contributions of the selected buses, in ascending bus order.
inline Eigen::MatrixXd sum_contributions(const std::vector<GramianContribution>& cs, const std::vector<int>& buses) {
    if (cs.empty()) throw DimensionError("no contributions");
    std::vector<int> sorted = buses;
    std::sort(sorted.begin(), sorted.end());
    const Eigen::Index n = cs.front().W.rows();
    Eigen::MatrixXd W = Eigen::MatrixXd::Zero(n, n);
    for (int b : sorted) {
        const auto it = std::find_if(cs.begin(), cs.end(), [b](const GramianContribution& c) { return c.bus == b; });
        if (it == cs.end()) throw ValidationError("no contribution for bus " + std::to_string(b));
        W += it->W;
    }
    return W;
}

inline double sum_traces(const std::vector<GramianContribution>& cs, const std::vector<int>& buses) {
    std::vector<int> sorted = buses;
    std::sort(sorted.begin(), sorted.end());
    double t = 0;
    for (int b : sorted) {
        const auto it = std::find_if(cs.begin(), cs.end(), [b](const GramianContribution& c) { return c.bus == b; });
        if (it == cs.end()) throw ValidationError("no contribution for bus " + std::to_string(b));
        t += it->trace;
    }
    return t;
}

inline nlohmann::json to_json(const ObservabilityReport& r, const SensorSelection& sel,
                              const std::vector<GramianContribution>& per_bus = {}) {
    nlohmann::json j;
    j["selection"] = sel.buses();
    j["trace"] = r.trace;
    j["min_eig"] = r.min_eig;
    j["max_eig"] = r.max_eig;
    j["condition_number"] = r.condition_number;
    j["numerical_rank"] = r.numerical_rank;
    std::vector<double> t;
    for (const auto& c : per_bus) t.push_back(c.trace);
    j["per_bus_trace"] = t;
    return j;
}

}  // namespace pmuopp
