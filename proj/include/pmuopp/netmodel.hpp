#pragma once

// Static grid description: buses, branches, generators and the bus admittance matrix.

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "pmuopp/errors.hpp"

namespace pmuopp {

inline constexpr double kDefaultOmega0 = 120.0 * std::numbers::pi;

enum class BusKind { Slack, PV, PQ };

inline const char* to_string(BusKind k) {
    switch (k) {
        case BusKind::Slack: return "slack";
        case BusKind::PV: return "PV";
        case BusKind::PQ: return "PQ";
    }
    return "?";
}

inline BusKind bus_kind_from_string(const std::string& s) {
    if (s == "slack") return BusKind::Slack;
    if (s == "PV") return BusKind::PV;
    if (s == "PQ") return BusKind::PQ;
    throw ParseError("unknown bus kind '" + s + "'");
}

// All power quantities in per unit on the case base, angles in radians.
struct BusRecord {
    int id = 0;        // contiguous 1..N
    int orig_id = 0;   // identifier used in the source file
    BusKind kind = BusKind::PQ;
    double P_L = 0, Q_L = 0;
    double v = 1, theta = 0;
    double P_R = 0, Q_R = 0;
    double Gs = 0, Bs = 0;  // shunt admittance

    bool operator==(const BusRecord&) const = default;
};

struct Branch {
    int from = 0, to = 0;  // contiguous bus ids
    double r = 0, x = 0, b = 0;
    double ratio = 0;  // 0 means nominal (1.0), as in MATPOWER
    double angle = 0;  // phase shift, rad
    bool in_service = true;

    bool operator==(const Branch&) const = default;
};

struct GeneratorParams {
    int bus = 0;  // contiguous bus id
    double M = 0, D = 0;
    double x_d = 0, x_q = 0, x_d_p = 0;
    double T_d0_p = 0, T_CH = 0, R_D = 0;
    // Dispatch from the source file; P_G, Q_G are overwritten by the power flow.
    double P_G = 0, Q_G = 0, v_set = 1;

    bool operator==(const GeneratorParams&) const = default;
};

struct AdmittanceMatrix {
    Eigen::MatrixXd G;
    Eigen::MatrixXd B;
    // Structural neighbours of each bus (0-based, self included, ascending).
    std::vector<std::vector<int>> pattern;

    int size() const { return static_cast<int>(G.rows()); }
};

struct NetworkCase {
    std::string name;
    double base_mva = 100;
    double omega0 = kDefaultOmega0;
    std::vector<BusRecord> buses;
    std::vector<Branch> branches;
    std::vector<GeneratorParams> gens;
    AdmittanceMatrix Y;

    int N() const { return static_cast<int>(buses.size()); }
    int G() const { return static_cast<int>(gens.size()); }

    // Field-by-field equality of the source data (Y is derived and not compared).
    bool same_data(const NetworkCase& o) const {
        return name == o.name && base_mva == o.base_mva && omega0 == o.omega0 && buses == o.buses &&
               branches == o.branches && gens == o.gens;
    }
};

struct Disturbance {
    double alpha_L = 0;  // percent
    double alpha_R = 0;  // percent
    double renewable_fraction = 0.2;
};

inline AdmittanceMatrix build_admittance(const NetworkCase& c) {
    const int n = c.N();
    Eigen::MatrixXcd Y = Eigen::MatrixXcd::Zero(n, n);
    std::vector<std::set<int>> nb(n);
    for (int i = 0; i < n; ++i) nb[i].insert(i);

    for (const auto& br : c.branches) {
        if (!br.in_service) continue;
        if (br.r == 0.0 && br.x == 0.0)
            throw SingularityError("zero-impedance branch " + std::to_string(br.from) + "-" + std::to_string(br.to));
        const int f = br.from - 1, t = br.to - 1;
        const std::complex<double> ys = 1.0 / std::complex<double>(br.r, br.x);
        const std::complex<double> ych(0.0, br.b / 2.0);
        const double tap = br.ratio == 0.0 ? 1.0 : br.ratio;
        const std::complex<double> ratio = std::polar(tap, br.angle);
        Y(f, f) += (ys + ych) / (tap * tap);
        Y(f, t) += -ys / std::conj(ratio);
        Y(t, f) += -ys / ratio;
        Y(t, t) += ys + ych;
        nb[f].insert(t);
        nb[t].insert(f);
    }
    for (int i = 0; i < n; ++i) Y(i, i) += std::complex<double>(c.buses[i].Gs, c.buses[i].Bs);

    AdmittanceMatrix out;
    out.G = Y.real();
    out.B = Y.imag();
    out.pattern.resize(n);
    for (int i = 0; i < n; ++i) out.pattern[i].assign(nb[i].begin(), nb[i].end());
    return out;
}

// Checks the invariants of a freshly assembled case and builds Y.
inline void finalize_case(NetworkCase& c) {
    if (c.buses.empty()) throw ValidationError("case has no buses");
    if (!(c.base_mva > 0)) throw ValidationError("base MVA must be positive");
    if (!(c.omega0 > 0)) throw ValidationError("omega0 must be positive");
    int slack = 0;
    std::set<int> orig;
    for (int i = 0; i < c.N(); ++i) {
        const auto& b = c.buses[i];
        if (b.id != i + 1) throw ValidationError("bus ids must be contiguous 1..N");
        if (!orig.insert(b.orig_id).second) throw ValidationError("duplicate bus id " + std::to_string(b.orig_id));
        if (!(b.v > 0)) throw ValidationError("non-positive voltage at bus " + std::to_string(b.orig_id));
        if (b.P_R < 0 || b.Q_R < 0) throw ValidationError("negative renewable injection at bus " + std::to_string(b.orig_id));
        if (b.kind == BusKind::Slack) ++slack;
    }
    if (slack != 1) throw ValidationError("case must have exactly one slack bus, found " + std::to_string(slack));
    for (const auto& br : c.branches)
        if (br.from < 1 || br.from > c.N() || br.to < 1 || br.to > c.N())
            throw ValidationError("branch references unknown bus");
    if (c.gens.empty()) throw ValidationError("case has no generators");
    for (const auto& g : c.gens) {
        const std::string where = " (generator at bus " + std::to_string(g.bus) + ")";
        if (g.bus < 1 || g.bus > c.N()) throw ValidationError("generator references unknown bus" + where);
        for (double p : {g.M, g.D, g.x_d, g.x_q, g.x_d_p, g.T_d0_p, g.T_CH, g.R_D})
            if (!(p > 0)) throw ValidationError("generator parameters must be strictly positive" + where);
        if (g.x_d < g.x_d_p || g.x_q < g.x_d_p) throw ValidationError("need x_d >= x_d' and x_q >= x_d'" + where);
    }
    c.Y = build_admittance(c);
}

inline NetworkCase apply_disturbance(const NetworkCase& c, const Disturbance& d) {
    NetworkCase out = c;
    const double kl = 1.0 + d.alpha_L / 100.0;
    const double kr = 1.0 + d.alpha_R / 100.0;
    for (auto& b : out.buses) {
        b.P_L *= kl;
        b.Q_L *= kl;
        b.P_R *= kr;
        b.Q_R *= kr;
    }
    return out;
}

// Splits each file load into a gross load and a renewable injection so that the
// net withdrawal (and therefore the solved power flow) is unchanged:
// P_L = P_file / (1 - f), P_R = f * P_L.
inline NetworkCase with_renewables(const NetworkCase& c, double fraction) {
    if (!(fraction >= 0.0 && fraction < 1.0)) throw DomainError("renewable fraction must lie in [0, 1)");
    NetworkCase out = c;
    // A negative net load cannot carry a nonnegative renewable share; it stays plain load.
    auto split = [fraction](double& load, double& ren) {
        const double net = load - ren;
        if (net > 0) {
            load = net / (1.0 - fraction);
            ren = fraction * load;
        } else {
            load = net;
            ren = 0;
        }
    };
    for (auto& b : out.buses) {
        split(b.P_L, b.P_R);
        split(b.Q_L, b.Q_R);
    }
    return out;
}

// Generators attached to each bus (0-based bus -> list of generator indices).
inline std::vector<std::vector<int>> generators_by_bus(const NetworkCase& c) {
    std::vector<std::vector<int>> out(c.N());
    for (int i = 0; i < c.G(); ++i) out[c.gens[i].bus - 1].push_back(i);
    return out;
}

}  // namespace pmuopp
