#pragma once

// PMU placements: a set of buses, each reporting (v, theta).

#include <algorithm>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "pmuopp/errors.hpp"
#include "pmuopp/state.hpp"

namespace pmuopp {

class SensorSelection {
public:
    SensorSelection() = default;

    // buses are 1-based; duplicates and ordering are normalized.
    SensorSelection(std::vector<int> buses, int candidates) : buses_(std::move(buses)), candidates_(candidates) {
        std::sort(buses_.begin(), buses_.end());
        if (std::adjacent_find(buses_.begin(), buses_.end()) != buses_.end())
            throw ValidationError("sensor selection lists a bus twice");
        for (int b : buses_)
            if (b < 1 || b > candidates_)
                throw ValidationError("bus " + std::to_string(b) + " is not a candidate (1.." + std::to_string(candidates_) + ")");
    }

    static SensorSelection all(int candidates) {
        std::vector<int> b(candidates);
        for (int i = 0; i < candidates; ++i) b[i] = i + 1;
        return {std::move(b), candidates};
    }
    static SensorSelection single(int bus, int candidates) { return {{bus}, candidates}; }

    const std::vector<int>& buses() const { return buses_; }
    int candidates() const { return candidates_; }
    int p() const { return static_cast<int>(buses_.size()); }
    int n_p() const { return 2 * p(); }
    bool empty() const { return buses_.empty(); }

    // State indices read by the measurement map, in row order (v before theta, ascending bus).
    std::vector<int> state_rows(const StateLayout& l) const {
        check(l);
        std::vector<int> r;
        r.reserve(n_p());
        for (int b : buses_) {
            r.push_back(l.v(b - 1));
            r.push_back(l.theta(b - 1));
        }
        return r;
    }

    Eigen::VectorXd measure(const StateVector& x) const {
        const auto rows = state_rows(x.layout());
        Eigen::VectorXd y(rows.size());
        for (std::size_t i = 0; i < rows.size(); ++i) y[static_cast<Eigen::Index>(i)] = x[rows[i]];
        return y;
    }

    // C~ as a dense 2p x n matrix.
    Eigen::MatrixXd matrix(const StateLayout& l) const {
        const auto rows = state_rows(l);
        Eigen::MatrixXd C = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(rows.size()), l.n());
        for (std::size_t i = 0; i < rows.size(); ++i) C(static_cast<Eigen::Index>(i), rows[i]) = 1.0;
        return C;
    }

    bool operator==(const SensorSelection&) const = default;

private:
    void check(const StateLayout& l) const {
        if (l.N != candidates_) throw DimensionError("selection candidates do not match the bus count");
    }

    std::vector<int> buses_;
    int candidates_ = 0;
};

}  // namespace pmuopp
