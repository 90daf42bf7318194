#pragma once

// Right-hand sides of the two-axis generator / network model and their analytic Jacobians.
//
//   delta'  = omega - omega0
//   omega'  = (T_M - P_G - D (omega - omega0)) / M
//   E_p'    = (-(x_d/x_d') E_p + ((x_d - x_d')/x_d') v cos(delta - theta) + E_fd) / T_d0'
//   T_M'    = (-T_M - (omega - omega0)/R_D + T_r) / T_CH        (stable sign; printed sign uses +T_M)
//
//   0 = E_p v sin(d)/x_d' - (x_q - x_d')/(2 x_d' x_q) v^2 sin(2d) - P_G
//   0 = E_p v cos(d)/x_d' - v^2 (cos^2(d)/x_d' + sin^2(d)/x_q) - Q_G           d = delta - theta
//   0 = P_G - P_L + P_R - sum_j v_i v_j (G_ij cos t_ij + B_ij sin t_ij)
//   0 = Q_G - Q_L + Q_R - sum_j v_i v_j (G_ij sin t_ij - B_ij cos t_ij)       t_ij = theta_i - theta_j

#include <cmath>
#include <string>

#include <Eigen/Dense>

#include "pmuopp/errors.hpp"
#include "pmuopp/netmodel.hpp"
#include "pmuopp/state.hpp"

namespace pmuopp {

enum class GovernorSign { Stable, Printed };

inline GovernorSign governor_sign_from_string(const std::string& s) {
    if (s == "stable") return GovernorSign::Stable;
    if (s == "printed") return GovernorSign::Printed;
    throw ConfigError("governor_sign must be 'stable' or 'printed'");
}

struct ModelOptions {
    GovernorSign governor_sign = GovernorSign::Stable;
};

struct JacobianBlocks {
    Eigen::MatrixXd F_xd, F_xa, G_xd, G_xa;

    // [[F_xd, F_xa], [G_xd, G_xa]]
    Eigen::MatrixXd full() const {
        const auto nd = F_xd.rows(), na = G_xa.rows();
        Eigen::MatrixXd J(nd + na, nd + na);
        J << F_xd, F_xa, G_xd, G_xa;
        return J;
    }
};

namespace detail {

inline void check_dims(const StateVector& x, const NetworkCase& c) {
    if (x.layout().G != c.G() || x.layout().N != c.N()) throw DimensionError("state layout does not match case");
}

inline void check_dims(const InputVector& u, const NetworkCase& c) {
    if (u.E_fd.size() != c.G() || u.T_r.size() != c.G()) throw DimensionError("input vector does not match case");
}

inline double governor_gain(ModelOptions opt) { return opt.governor_sign == GovernorSign::Stable ? -1.0 : 1.0; }

}  // namespace detail

inline Eigen::VectorXd eval_f(const StateVector& x, const InputVector& u, const NetworkCase& c, ModelOptions opt = {}) {
    detail::check_dims(x, c);
    detail::check_dims(u, c);
    const StateLayout& l = x.layout();
    const int G = l.G;
    const double w0 = c.omega0;
    const double kg = detail::governor_gain(opt);
    Eigen::VectorXd f(l.n_d());
    for (int i = 0; i < G; ++i) {
        const auto& g = c.gens[i];
        const int b = g.bus - 1;
        const double dw = x[l.omega(i)] - w0;
        const double d = x[l.delta(i)] - x[l.theta(b)];
        const double v = x[l.v(b)];
        f[l.delta(i)] = dw;
        f[l.omega(i)] = (x[l.t_m(i)] - x[l.p_g(i)] - g.D * dw) / g.M;
        f[l.e_p(i)] = (-(g.x_d / g.x_d_p) * x[l.e_p(i)] + ((g.x_d - g.x_d_p) / g.x_d_p) * v * std::cos(d) + u.E_fd[i]) / g.T_d0_p;
        f[l.t_m(i)] = (kg * x[l.t_m(i)] - dw / g.R_D + u.T_r[i]) / g.T_CH;
    }
    return f;
}

inline Eigen::VectorXd eval_g(const StateVector& x, const NetworkCase& c) {
    detail::check_dims(x, c);
    const StateLayout& l = x.layout();
    const int G = l.G, N = l.N;
    Eigen::VectorXd g(l.n_a());
    for (int i = 0; i < G; ++i) {
        const auto& p = c.gens[i];
        const int b = p.bus - 1;
        const double d = x[l.delta(i)] - x[l.theta(b)];
        const double v = x[l.v(b)], e = x[l.e_p(i)];
        const double s = std::sin(d), co = std::cos(d);
        g[i] = e * v * s / p.x_d_p - (p.x_q - p.x_d_p) / (2.0 * p.x_d_p * p.x_q) * v * v * std::sin(2.0 * d) - x[l.p_g(i)];
        g[G + i] = e * v * co / p.x_d_p - v * v * (co * co / p.x_d_p + s * s / p.x_q) - x[l.q_g(i)];
    }
    for (int b = 0; b < N; ++b) {
        const auto& bus = c.buses[b];
        double pinj = 0, qinj = 0;
        const double vb = x[l.v(b)], tb = x[l.theta(b)];
        for (int j : c.Y.pattern[b]) {
            const double t = tb - x[l.theta(j)];
            const double Gij = c.Y.G(b, j), Bij = c.Y.B(b, j);
            const double vv = vb * x[l.v(j)];
            pinj += vv * (Gij * std::cos(t) + Bij * std::sin(t));
            qinj += vv * (Gij * std::sin(t) - Bij * std::cos(t));
        }
        g[2 * G + b] = -bus.P_L + bus.P_R - pinj;
        g[2 * G + N + b] = -bus.Q_L + bus.Q_R - qinj;
    }
    for (int i = 0; i < G; ++i) {
        const int b = c.gens[i].bus - 1;
        g[2 * G + b] += x[l.p_g(i)];
        g[2 * G + N + b] += x[l.q_g(i)];
    }
    return g;
}

inline JacobianBlocks eval_jacobian_blocks(const StateVector& x, const InputVector& u, const NetworkCase& c,
                                           ModelOptions opt = {}) {
    detail::check_dims(x, c);
    detail::check_dims(u, c);
    const StateLayout& l = x.layout();
    const int G = l.G, N = l.N, nd = l.n_d(), na = l.n_a();
    const double kg = detail::governor_gain(opt);
    JacobianBlocks J{Eigen::MatrixXd::Zero(nd, nd), Eigen::MatrixXd::Zero(nd, na), Eigen::MatrixXd::Zero(na, nd),
                     Eigen::MatrixXd::Zero(na, na)};
    // Column offsets inside x_a.
    auto a_pg = [&](int i) { return i; };
    auto a_qg = [&](int i) { return G + i; };
    auto a_v = [&](int b) { return 2 * G + b; };
    auto a_th = [&](int b) { return 2 * G + N + b; };

    for (int i = 0; i < G; ++i) {
        const auto& p = c.gens[i];
        const int b = p.bus - 1;
        const double d = x[l.delta(i)] - x[l.theta(b)];
        const double v = x[l.v(b)], e = x[l.e_p(i)];
        const double s = std::sin(d), co = std::cos(d);
        const double cx = (p.x_d - p.x_d_p) / p.x_d_p;

        J.F_xd(l.delta(i), l.omega(i)) = 1.0;
        J.F_xd(l.omega(i), l.omega(i)) = -p.D / p.M;
        J.F_xd(l.omega(i), l.t_m(i)) = 1.0 / p.M;
        J.F_xa(l.omega(i), a_pg(i)) = -1.0 / p.M;
        J.F_xd(l.e_p(i), l.e_p(i)) = -(p.x_d / p.x_d_p) / p.T_d0_p;
        J.F_xd(l.e_p(i), l.delta(i)) = -cx * v * s / p.T_d0_p;
        J.F_xa(l.e_p(i), a_v(b)) = cx * co / p.T_d0_p;
        J.F_xa(l.e_p(i), a_th(b)) = cx * v * s / p.T_d0_p;
        J.F_xd(l.t_m(i), l.t_m(i)) = kg / p.T_CH;
        J.F_xd(l.t_m(i), l.omega(i)) = -1.0 / (p.R_D * p.T_CH);

        const double k = (p.x_q - p.x_d_p) / (2.0 * p.x_d_p * p.x_q);
        const double dP_dd = e * v * co / p.x_d_p - 2.0 * k * v * v * std::cos(2.0 * d);
        const double dQ_dd = -e * v * s / p.x_d_p + v * v * std::sin(2.0 * d) * (1.0 / p.x_d_p - 1.0 / p.x_q);
        J.G_xd(i, l.delta(i)) = dP_dd;
        J.G_xd(i, l.e_p(i)) = v * s / p.x_d_p;
        J.G_xa(i, a_pg(i)) = -1.0;
        J.G_xa(i, a_v(b)) = e * s / p.x_d_p - 2.0 * k * v * std::sin(2.0 * d);
        J.G_xa(i, a_th(b)) = -dP_dd;
        J.G_xd(G + i, l.delta(i)) = dQ_dd;
        J.G_xd(G + i, l.e_p(i)) = v * co / p.x_d_p;
        J.G_xa(G + i, a_qg(i)) = -1.0;
        J.G_xa(G + i, a_v(b)) = e * co / p.x_d_p - 2.0 * v * (co * co / p.x_d_p + s * s / p.x_q);
        J.G_xa(G + i, a_th(b)) = -dQ_dd;

        J.G_xa(2 * G + b, a_pg(i)) += 1.0;
        J.G_xa(2 * G + N + b, a_qg(i)) += 1.0;
    }

    for (int b = 0; b < N; ++b) {
        const int rp = 2 * G + b, rq = 2 * G + N + b;
        const double vb = x[l.v(b)], tb = x[l.theta(b)];
        double dP_dvb = 0, dQ_dvb = 0, dP_dtb = 0, dQ_dtb = 0;
        for (int j : c.Y.pattern[b]) {
            const double t = tb - x[l.theta(j)];
            const double Gij = c.Y.G(b, j), Bij = c.Y.B(b, j);
            const double vj = x[l.v(j)];
            const double a = Gij * std::cos(t) + Bij * std::sin(t);   // P kernel
            const double q = Gij * std::sin(t) - Bij * std::cos(t);   // Q kernel
            dP_dvb += vj * a;
            dQ_dvb += vj * q;
            if (j == b) continue;
            // da/dt = -q, dq/dt = a
            dP_dtb += vb * vj * (-q);
            dQ_dtb += vb * vj * a;
            J.G_xa(rp, a_v(j)) -= vb * a;
            J.G_xa(rq, a_v(j)) -= vb * q;
            J.G_xa(rp, a_th(j)) -= vb * vj * q;
            J.G_xa(rq, a_th(j)) -= -vb * vj * a;
        }
        dP_dvb += vb * c.Y.G(b, b);
        dQ_dvb -= vb * c.Y.B(b, b);
        J.G_xa(rp, a_v(b)) -= dP_dvb;
        J.G_xa(rq, a_v(b)) -= dQ_dvb;
        J.G_xa(rp, a_th(b)) -= dP_dtb;
        J.G_xa(rq, a_th(b)) -= dQ_dtb;
    }
    return J;
}

// Full n x n Jacobian [[F_xd, F_xa], [G_xd, G_xa]].
inline Eigen::MatrixXd eval_jacobian(const StateVector& x, const InputVector& u, const NetworkCase& c, ModelOptions opt = {}) {
    return eval_jacobian_blocks(x, u, c, opt).full();
}

// Structural nonzero count of G_xa implied by the generator placement and admittance graph.
inline long g_xa_pattern_nonzeros(const NetworkCase& c) {
    const int G = c.G();
    long nnz = 0;
    // Stator rows: own P_G or Q_G, plus v and theta of the terminal bus.
    nnz += 2L * G * 3;
    // Balance rows: generator columns at the bus, v and theta of every structural neighbour.
    nnz += 2L * G;
    for (int b = 0; b < c.N(); ++b) nnz += 2L * 2 * static_cast<long>(c.Y.pattern[b].size());
    return nnz;
}

}  // namespace pmuopp
