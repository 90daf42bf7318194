#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <string>

#include <Eigen/Dense>

#include "pmuopp/case_io.hpp"
#include "pmuopp/netmodel.hpp"
#include "pmuopp/state.hpp"
#include "pmuopp/steady_state.hpp"

namespace pmuopp::test {

inline std::string data_path(const std::string& file) { return std::string(PMUOPP_DATA_DIR) + "/" + file; }

inline const NetworkCase& case9() {
    static const NetworkCase c = load_case(data_path("case9.m")).net;
    return c;
}

inline const NetworkCase& case39() {
    static const NetworkCase c = load_case(data_path("case39.m")).net;
    return c;
}

// Case 9 with the default renewable split, and its equilibrium.
inline const NetworkCase& case9r() {
    static const NetworkCase c = with_renewables(case9(), 0.2);
    return c;
}

inline const SteadyState& case9_ss() {
    static const SteadyState s = init_steady_state(case9r());
    return s;
}

// Equilibrium with relative perturbations of the given size on every entry.
inline StateVector perturbed(const StateVector& x, double rel, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(-rel, rel);
    StateVector y = x;
    for (int i = 0; i < y.size(); ++i) y[i] += u(rng) * std::max(std::abs(y[i]), 0.1);
    return y;
}

// Central-difference Jacobian of a vector function, column by column.
inline Eigen::MatrixXd fd_jacobian(const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& f, const Eigen::VectorXd& x,
                                   double step = 1e-6) {
    const Eigen::VectorXd f0 = f(x);
    Eigen::MatrixXd J(f0.size(), x.size());
    for (Eigen::Index j = 0; j < x.size(); ++j) {
        const double h = step * std::max(1.0, std::abs(x[j]));
        Eigen::VectorXd xp = x, xm = x;
        xp[j] += h;
        xm[j] -= h;
        J.col(j) = (f(xp) - f(xm)) / (2 * h);
    }
    return J;
}

inline double rel_error(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    const double scale = std::max(b.lpNorm<Eigen::Infinity>(), 1e-300);
    return (a - b).lpNorm<Eigen::Infinity>() / scale;
}

}  // namespace pmuopp::test
