#pragma once

// Trace-optimal PMU placement. The objective trace(sum_{i in Z} W_o,i) = sum_{i in Z} trace_i
// is modular, so the p largest contributions form the optimum; exhaustive enumeration
// is kept as an independent check.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <limits>
#include <numeric>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "pmuopp/errors.hpp"
#include "pmuopp/observability.hpp"

namespace pmuopp {

enum class PlacementMethod { Apriori, BruteForce };

inline const char* to_string(PlacementMethod m) { return m == PlacementMethod::Apriori ? "apriori" : "bruteforce"; }

class EnumerationCapError : public Error {
public:
    EnumerationCapError(double count, double cap)
        : Error("brute force would enumerate " + std::to_string(static_cast<long double>(count)) + " subsets (cap " +
                std::to_string(static_cast<long double>(cap)) + ")"),
          count_(count) {}
    double count() const noexcept { return count_; }

private:
    double count_;
};

struct PlacementProblem {
    std::vector<GramianContribution> contributions;
    int p = 0;

    // Candidate buses must be 1..N, each exactly once (any input order).
    void validate() const {
        const int N = static_cast<int>(contributions.size());
        std::vector<char> seen(N + 1, 0);
        for (const auto& c : contributions) {
            if (c.bus < 1 || c.bus > N || seen[c.bus]) throw ValidationError("contributions must cover buses 1..N exactly once");
            seen[c.bus] = 1;
        }
        if (p < 0 || p > N) throw DomainError("p = " + std::to_string(p) + " is outside 0.." + std::to_string(N));
    }
};

struct PlacementResult {
    int p = 0;
    std::vector<int> Z_star;  // ascending
    double objective = 0;
    ObservabilityReport conditioning;
    PlacementMethod method = PlacementMethod::Apriori;
    std::uint64_t provenance = 0;  // fingerprint of the contributions

    bool condition_flag() const { return conditioning.ill_conditioned(); }
};

namespace detail {

// Traces indexed by bus - 1.
inline std::vector<double> traces_by_bus(const std::vector<GramianContribution>& cs) {
    std::vector<double> t(cs.size());
    for (const auto& c : cs) t[c.bus - 1] = c.trace;
    return t;
}

inline std::uint64_t fingerprint(const std::vector<double>& traces) {
    std::uint64_t h = 1469598103934665603ULL;
    for (double t : traces) {
        std::uint64_t bits;
        std::memcpy(&bits, &t, sizeof bits);
        for (int k = 0; k < 8; ++k) {
            h ^= (bits >> (8 * k)) & 0xffU;
            h *= 1099511628211ULL;
        }
    }
    return h;
}

inline PlacementResult finish(const PlacementProblem& pr, std::vector<int> Z, PlacementMethod m) {
    std::sort(Z.begin(), Z.end());
    const auto t = traces_by_bus(pr.contributions);
    PlacementResult r;
    r.p = pr.p;
    r.method = m;
    r.provenance = fingerprint(t);
    for (int b : Z) r.objective += t[b - 1];
    const Eigen::Index n = pr.contributions.empty() ? 0 : pr.contributions.front().W.rows();
    r.conditioning = gramian_from_matrix(Z.empty() ? Eigen::MatrixXd::Zero(n, n) : sum_contributions(pr.contributions, Z));
    r.Z_star = std::move(Z);
    return r;
}

}  // namespace detail

inline double binomial(int n, int k) {
    if (k < 0 || k > n) return 0;
    k = std::min(k, n - k);
    double r = 1;
    for (int i = 1; i <= k; ++i) r = r * (n - k + i) / i;
    return std::round(r);
}

// Top-p by trace; equal traces go to the lower bus index.
inline PlacementResult solve_apriori(const PlacementProblem& pr) {
    pr.validate();
    const auto t = detail::traces_by_bus(pr.contributions);
    std::vector<int> order(t.size());
    std::iota(order.begin(), order.end(), 1);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return t[a - 1] > t[b - 1] || (t[a - 1] == t[b - 1] && a < b); });
    return detail::finish(pr, std::vector<int>(order.begin(), order.begin() + pr.p), PlacementMethod::Apriori);
}

namespace detail {

struct SubsetSearch {
    const std::vector<double>& t;
    int N, p;
    std::vector<int> cur, best;
    double best_value = -std::numeric_limits<double>::infinity();

    // Subsets are visited in lexicographic order, so keeping only strict improvements
    // leaves the lexicographically smallest optimum.
    void dfs(int start, int depth, double sum) {
        if (depth == p) {
            if (sum > best_value) {
                best_value = sum;
                best = cur;
            }
            return;
        }
        const int last = N - (p - depth);
        if (depth == p - 1) {
            for (int i = start; i <= last; ++i) {
                const double s = sum + t[i];
                if (s > best_value) {
                    best_value = s;
                    cur[depth] = i;
                    best = cur;
                }
            }
            return;
        }
        for (int i = start; i <= last; ++i) {
            cur[depth] = i;
            dfs(i + 1, depth + 1, sum + t[i]);
        }
    }
};

}  // namespace detail

// Exhaustive search over all p-subsets; workers split on the first element.
inline PlacementResult solve_bruteforce(const PlacementProblem& pr, double cap = 1e6, int threads = 1) {
    pr.validate();
    const int N = static_cast<int>(pr.contributions.size()), p = pr.p;
    const double count = binomial(N, p);
    if (count > cap) throw EnumerationCapError(count, cap);
    if (p == 0) return detail::finish(pr, {}, PlacementMethod::BruteForce);
    const auto t = detail::traces_by_bus(pr.contributions);
    const int firsts = N - p + 1;
    std::vector<detail::SubsetSearch> parts;
    parts.reserve(firsts);
    for (int f = 0; f < firsts; ++f) parts.push_back(detail::SubsetSearch{t, N, p, std::vector<int>(p), {}});
    auto run = [&](int f) {
        auto& s = parts[f];
        s.cur[0] = f;
        if (p == 1) {
            s.best_value = t[f];
            s.best = s.cur;
        } else {
            s.dfs(f + 1, 1, t[f]);
        }
    };
    threads = std::max(1, std::min(threads, firsts));
    if (threads == 1) {
        for (int f = 0; f < firsts; ++f) run(f);
    } else {
        std::vector<std::jthread> pool;
        for (int w = 0; w < threads; ++w)
            pool.emplace_back([&, w] {
                for (int f = w; f < firsts; f += threads) run(f);
            });
    }
    // Ties keep the smaller first element, i.e. the lexicographically smaller set.
    int win = 0;
    for (int f = 1; f < firsts; ++f)
        if (parts[f].best_value > parts[win].best_value) win = f;
    std::vector<int> Z;
    for (int i : parts[win].best) Z.push_back(i + 1);
    return detail::finish(pr, std::move(Z), PlacementMethod::BruteForce);
}

// True iff each placement contains the previous one. Results must come from one
// contributions set and be ordered by p.
inline bool nesting_check(const std::vector<PlacementResult>& rs) {
    for (std::size_t k = 1; k < rs.size(); ++k) {
        if (rs[k].provenance != rs[0].provenance) throw ValidationError("placements come from different contribution sets");
        if (rs[k].p < rs[k - 1].p) throw ValidationError("placements are not ordered by p");
    }
    for (std::size_t k = 1; k < rs.size(); ++k)
        if (!std::includes(rs[k].Z_star.begin(), rs[k].Z_star.end(), rs[k - 1].Z_star.begin(), rs[k - 1].Z_star.end()))
            return false;
    return true;
}

// Sensor count for a fraction of the candidates, rounded half up.
inline int p_from_fraction(double fraction, int candidates) {
    if (!(fraction >= 0 && fraction <= 1)) throw ConfigError("p fraction must lie in [0, 1]");
    return static_cast<int>(std::floor(fraction * candidates + 0.5 + 1e-9));
}

inline nlohmann::json to_json(const PlacementResult& r) {
    nlohmann::json j;
    j["p"] = r.p;
    j["Z_star"] = r.Z_star;
    j["objective"] = r.objective;
    j["condition_flag"] = r.condition_flag();
    j["method"] = to_string(r.method);
    return j;
}

}  // namespace pmuopp
