#pragma once

// Flat state layout shared by every module:
//   x_d = [delta(G); omega(G); E_p(G); T_M(G)]          n_d = 4G
//   x_a = [P_G(G); Q_G(G); v(N); theta(N)]              n_a = 2G + 2N
// Generator and bus indices below are 0-based.

#include <Eigen/Dense>

#include "pmuopp/errors.hpp"
#include "pmuopp/netmodel.hpp"

namespace pmuopp {

struct StateLayout {
    int G = 0;
    int N = 0;

    StateLayout() = default;
    StateLayout(int gens, int buses) : G(gens), N(buses) {}
    explicit StateLayout(const NetworkCase& c) : G(c.G()), N(c.N()) {}

    int n_d() const { return 4 * G; }
    int n_a() const { return 2 * G + 2 * N; }
    int n() const { return n_d() + n_a(); }

    int delta(int i) const { return i; }
    int omega(int i) const { return G + i; }
    int e_p(int i) const { return 2 * G + i; }
    int t_m(int i) const { return 3 * G + i; }
    int p_g(int i) const { return 4 * G + i; }
    int q_g(int i) const { return 5 * G + i; }
    int v(int b) const { return 6 * G + b; }
    int theta(int b) const { return 6 * G + N + b; }

    bool operator==(const StateLayout&) const = default;
};

class StateVector {
public:
    StateVector() = default;
    explicit StateVector(StateLayout layout) : layout_(layout), x_(Eigen::VectorXd::Zero(layout.n())) {}
    StateVector(StateLayout layout, Eigen::VectorXd values) : layout_(layout), x_(std::move(values)) {
        if (x_.size() != layout_.n()) throw DimensionError("state vector length does not match layout");
    }

    const StateLayout& layout() const { return layout_; }
    const Eigen::VectorXd& values() const { return x_; }
    Eigen::VectorXd& values() { return x_; }
    int size() const { return static_cast<int>(x_.size()); }

    auto differential() const { return x_.head(layout_.n_d()); }
    auto algebraic() const { return x_.tail(layout_.n_a()); }

    auto delta() const { return x_.segment(0, layout_.G); }
    auto omega() const { return x_.segment(layout_.G, layout_.G); }
    auto e_p() const { return x_.segment(2 * layout_.G, layout_.G); }
    auto t_m() const { return x_.segment(3 * layout_.G, layout_.G); }
    auto p_g() const { return x_.segment(4 * layout_.G, layout_.G); }
    auto q_g() const { return x_.segment(5 * layout_.G, layout_.G); }
    auto v() const { return x_.segment(6 * layout_.G, layout_.N); }
    auto theta() const { return x_.segment(6 * layout_.G + layout_.N, layout_.N); }

    double& operator[](int i) { return x_[i]; }
    double operator[](int i) const { return x_[i]; }

private:
    StateLayout layout_;
    Eigen::VectorXd x_;
};

struct InputVector {
    Eigen::VectorXd E_fd;
    Eigen::VectorXd T_r;
};

// Selects differential/algebraic rows scaled as in E_mu: 1 on x_d, mu on x_a.
inline Eigen::VectorXd e_mu_diagonal(const StateLayout& l, double mu) {
    Eigen::VectorXd d(l.n());
    d.head(l.n_d()).setOnes();
    d.tail(l.n_a()).setConstant(mu);
    return d;
}

}  // namespace pmuopp
