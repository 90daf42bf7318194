#pragma once

// Newton AC power flow in polar coordinates. Generator reactive limits are not enforced.

#include <cmath>
#include <complex>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "pmuopp/errors.hpp"
#include "pmuopp/netmodel.hpp"

namespace pmuopp {

struct PowerFlowResult {
    NetworkCase net;  // bus v/theta and generator P_G/Q_G updated
    int iterations = 0;
    double max_mismatch = 0;
};

namespace detail {

inline Eigen::VectorXcd complex_injection(const NetworkCase& c, const Eigen::VectorXcd& V) {
    const Eigen::MatrixXcd Y = c.Y.G.cast<std::complex<double>>() + std::complex<double>(0, 1) * c.Y.B.cast<std::complex<double>>();
    return V.cwiseProduct((Y * V).conjugate());
}

}  // namespace detail

// Net scheduled injection at each bus using the generator dispatch currently stored in the case.
inline Eigen::VectorXcd scheduled_injection(const NetworkCase& c) {
    Eigen::VectorXcd s(c.N());
    for (int i = 0; i < c.N(); ++i) {
        const auto& b = c.buses[i];
        s[i] = {b.P_R - b.P_L, b.Q_R - b.Q_L};
    }
    for (const auto& g : c.gens) s[g.bus - 1] += std::complex<double>(g.P_G, g.Q_G);
    return s;
}

// Largest balance mismatch (pu) of the case's own bus voltages and generator dispatch.
inline double power_flow_mismatch(const NetworkCase& c, int* worst_bus = nullptr) {
    Eigen::VectorXcd V(c.N());
    for (int i = 0; i < c.N(); ++i) V[i] = std::polar(c.buses[i].v, c.buses[i].theta);
    const Eigen::VectorXcd mis = scheduled_injection(c) - detail::complex_injection(c, V);
    double worst = 0;
    for (int i = 0; i < c.N(); ++i) {
        const double m = std::max(std::abs(mis[i].real()), std::abs(mis[i].imag()));
        if (m > worst) {
            worst = m;
            if (worst_bus) *worst_bus = c.buses[i].orig_id;
        }
    }
    return worst;
}

inline PowerFlowResult solve_power_flow(const NetworkCase& in, double tol = 1e-11, int max_iter = 30) {
    using cd = std::complex<double>;
    PowerFlowResult res{in, 0, 0};
    NetworkCase& c = res.net;
    const int n = c.N();
    const auto by_bus = generators_by_bus(c);

    // Regulated buses hold the setpoint of their first generator.
    for (int i = 0; i < n; ++i)
        if (c.buses[i].kind != BusKind::PQ && !by_bus[i].empty()) c.buses[i].v = c.gens[by_bus[i][0]].v_set;

    std::vector<int> pv_pq, pq;
    for (int i = 0; i < n; ++i) {
        if (c.buses[i].kind != BusKind::Slack) pv_pq.push_back(i);
        if (c.buses[i].kind == BusKind::PQ) pq.push_back(i);
    }
    const int na = static_cast<int>(pv_pq.size()), nm = static_cast<int>(pq.size());

    const Eigen::MatrixXcd Y = c.Y.G.cast<cd>() + cd(0, 1) * c.Y.B.cast<cd>();
    Eigen::VectorXd vm(n), va(n);
    for (int i = 0; i < n; ++i) {
        vm[i] = c.buses[i].v;
        va[i] = c.buses[i].theta;
    }
    const Eigen::VectorXcd sched = scheduled_injection(c);

    auto voltage = [&] {
        Eigen::VectorXcd V(n);
        for (int i = 0; i < n; ++i) V[i] = std::polar(vm[i], va[i]);
        return V;
    };
    auto mismatch = [&](const Eigen::VectorXcd& V) {
        const Eigen::VectorXcd mis = sched - V.cwiseProduct((Y * V).conjugate());
        Eigen::VectorXd F(na + nm);
        for (int k = 0; k < na; ++k) F[k] = mis[pv_pq[k]].real();
        for (int k = 0; k < nm; ++k) F[na + k] = mis[pq[k]].imag();
        return F;
    };

    Eigen::VectorXcd V = voltage();
    Eigen::VectorXd F = mismatch(V);
    int it = 0;
    while (F.lpNorm<Eigen::Infinity>() > tol) {
        if (it >= max_iter) break;
        ++it;
        const Eigen::VectorXcd I = Y * V;
        Eigen::VectorXcd Vn(n);
        for (int i = 0; i < n; ++i) Vn[i] = V[i] / std::abs(V[i]);
        // dS/dVa = j diag(V) conj(diag(I) - Y diag(V)); dS/dVm = diag(V) conj(Y diag(Vn)) + conj(diag(I)) diag(Vn)
        Eigen::MatrixXcd dVa = -(Y * V.asDiagonal().toDenseMatrix());
        dVa.diagonal() += I;
        dVa = cd(0, 1) * (V.asDiagonal() * dVa.conjugate());
        Eigen::MatrixXcd dVm = V.asDiagonal() * (Y * Vn.asDiagonal().toDenseMatrix()).conjugate();
        for (int i = 0; i < n; ++i) dVm(i, i) += std::conj(I[i]) * Vn[i];

        Eigen::MatrixXd J(na + nm, na + nm);
        for (int r = 0; r < na; ++r) {
            for (int k = 0; k < na; ++k) J(r, k) = dVa(pv_pq[r], pv_pq[k]).real();
            for (int k = 0; k < nm; ++k) J(r, na + k) = dVm(pv_pq[r], pq[k]).real();
        }
        for (int r = 0; r < nm; ++r) {
            for (int k = 0; k < na; ++k) J(na + r, k) = dVa(pq[r], pv_pq[k]).imag();
            for (int k = 0; k < nm; ++k) J(na + r, na + k) = dVm(pq[r], pq[k]).imag();
        }
        const Eigen::VectorXd dx = J.partialPivLu().solve(F);
        for (int k = 0; k < na; ++k) va[pv_pq[k]] += dx[k];
        for (int k = 0; k < nm; ++k) vm[pq[k]] += dx[na + k];
        V = voltage();
        F = mismatch(V);
    }
    res.iterations = it;

    // Slack absorbs real power, regulated buses absorb reactive power.
    const Eigen::VectorXcd S = V.cwiseProduct((Y * V).conjugate());
    for (int i = 0; i < n; ++i) {
        c.buses[i].v = vm[i];
        c.buses[i].theta = va[i];
        const auto& gens = by_bus[i];
        if (gens.empty()) continue;
        const auto& b = c.buses[i];
        if (b.kind == BusKind::Slack) {
            double others = 0;
            for (std::size_t k = 1; k < gens.size(); ++k) others += c.gens[gens[k]].P_G;
            c.gens[gens[0]].P_G = S[i].real() + b.P_L - b.P_R - others;
        }
        if (b.kind != BusKind::PQ) {
            const double q = (S[i].imag() + b.Q_L - b.Q_R) / static_cast<double>(gens.size());
            for (int g : gens) c.gens[g].Q_G = q;
        }
    }
    int worst_bus = 0;
    res.max_mismatch = power_flow_mismatch(c, &worst_bus);
    if (!(res.max_mismatch <= 1e-6))
        throw InitializationError("power flow did not converge; worst mismatch " + std::to_string(res.max_mismatch) +
                                  " pu at bus " + std::to_string(worst_bus));
    return res;
}

}  // namespace pmuopp
