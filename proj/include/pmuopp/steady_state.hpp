#pragma once

// Equilibrium initial condition from a solved power flow (two-axis back-solve).

#include <cmath>
#include <complex>
#include <numbers>
#include <string>

#include "pmuopp/dynamics.hpp"
#include "pmuopp/errors.hpp"
#include "pmuopp/netmodel.hpp"
#include "pmuopp/powerflow.hpp"
#include "pmuopp/state.hpp"

namespace pmuopp {

struct SteadyState {
    StateVector x0;
    InputVector u0;
    int power_flow_iterations = 0;
};

inline constexpr double kSteadyStateTol = 1e-8;

inline SteadyState init_steady_state(const NetworkCase& c, ModelOptions opt = {}) {
    const PowerFlowResult pf = solve_power_flow(c);
    const NetworkCase& s = pf.net;
    const StateLayout l(s);
    StateVector x(l);
    InputVector u{Eigen::VectorXd(l.G), Eigen::VectorXd(l.G)};

    for (int b = 0; b < l.N; ++b) {
        x[l.v(b)] = s.buses[b].v;
        x[l.theta(b)] = s.buses[b].theta;
    }
    for (int i = 0; i < l.G; ++i) {
        const auto& g = s.gens[i];
        const int b = g.bus - 1;
        const double v = s.buses[b].v, th = s.buses[b].theta;
        const std::complex<double> V = std::polar(v, th);
        const std::complex<double> I = std::conj(std::complex<double>(g.P_G, g.Q_G) / V);
        const std::complex<double> Eq = V + std::complex<double>(0, g.x_q) * I;
        // Keep delta on the branch closest to the terminal angle.
        const double delta = th + std::arg(Eq / std::polar(1.0, th));
        // Rotate into the machine frame: (d + jq) = z * exp(-j(delta - pi/2)).
        const std::complex<double> rot = std::polar(1.0, -(delta - std::numbers::pi / 2));
        const double Vq = (V * rot).imag();
        const double Id = (I * rot).real();
        const double E = Vq + g.x_d_p * Id;
        const double d = delta - th;

        x[l.delta(i)] = delta;
        x[l.omega(i)] = s.omega0;
        x[l.e_p(i)] = E;
        x[l.t_m(i)] = g.P_G;
        x[l.p_g(i)] = g.P_G;
        x[l.q_g(i)] = g.Q_G;
        u.E_fd[i] = (g.x_d / g.x_d_p) * E - ((g.x_d - g.x_d_p) / g.x_d_p) * v * std::cos(d);
        u.T_r[i] = opt.governor_sign == GovernorSign::Stable ? g.P_G : -g.P_G;
    }

    const Eigen::VectorXd f = eval_f(x, u, s, opt);
    const Eigen::VectorXd gr = eval_g(x, s);
    Eigen::Index worst_f = 0, worst_g = 0;
    const double fmax = f.cwiseAbs().maxCoeff(&worst_f);
    const double gmax = gr.cwiseAbs().maxCoeff(&worst_g);
    if (!(fmax <= kSteadyStateTol) || !(gmax <= kSteadyStateTol)) {
        std::string where;
        if (gmax > fmax && worst_g >= 2 * l.G) {
            const int b = static_cast<int>((worst_g - 2 * l.G) % l.N);
            where = " at bus " + std::to_string(s.buses[b].orig_id);
        }
        throw InitializationError("steady state residual too large (|f| = " + std::to_string(fmax) +
                                  ", |g| = " + std::to_string(gmax) + ")" + where);
    }
    return {std::move(x), std::move(u), pf.iterations};
}

}  // namespace pmuopp
