#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "brwre/barrier.hpp"
#include "brwre/env.hpp"
#include "brwre/rng.hpp"
#include "brwre/stats.hpp"
#include "brwre/tilt.hpp"

namespace brwre {

// Level hitting times of a single walk under the tilted law; H[0] = 0 and
// tau_k = H[k] - H[k-1] are independent across levels.
struct HittingPath {
    std::vector<double> H;  // size n+1

    int64_t n() const { return static_cast<int64_t>(H.size()) - 1; }
    double tau(int64_t k) const {
        return H[static_cast<std::size_t>(k)] - H[static_cast<std::size_t>(k - 1)];
    }
    void validate() const {
        for (std::size_t k = 1; k < H.size(); ++k)
            if (!(H[k] > H[k - 1])) throw error("HittingPath: H must be strictly increasing");
    }
};

struct WalkerStats {
    long long truncation_events = 0;  // excursions that left the phi window
    long long jumps = 0;
};

// One increment tau_k: run the h-transformed jump process from k-1 until it
// first hits k. Holding rates are site-dependent, total rate 1 - V(x). If an
// excursion leaves the valid phi window the attempt is discarded and
// resampled (counted; the window is sized so this is ~ never).
inline double sample_tau(const Environment& env, const TiltSolution& tilt,
                         const PhiProfile& phi, int64_t k, Rng& rng,
                         WalkerStats* stats = nullptr) {
    if (k < 1 || k > phi.n) throw error("sample_tau: level outside phi profile");
    const int64_t floor_level = phi.level_min() + 1;
    for (;;) {
        int64_t x = k - 1;
        double t = 0.0;
        bool truncated = false;
        while (x < k) {
            const JumpRates jr = h_transform_rates(env, tilt, phi, x);
            t += rng.exponential(jr.total());
            if (stats) ++stats->jumps;
            if (rng.uniform() * jr.total() < jr.right) {
                ++x;
            } else {
                --x;
                if (x < floor_level) {
                    truncated = true;
                    break;
                }
            }
        }
        if (!truncated) return t;
        if (stats) ++stats->truncation_events;
    }
}

inline HittingPath sample_hitting_path(const Environment& env, const TiltSolution& tilt,
                                       const PhiProfile& phi, int64_t n, Rng& rng,
                                       WalkerStats* stats = nullptr) {
    HittingPath path;
    path.H.assign(static_cast<std::size_t>(n + 1), 0.0);
    for (int64_t k = 1; k <= n; ++k)
        path.H[static_cast<std::size_t>(k)] =
            path.H[static_cast<std::size_t>(k - 1)] + sample_tau(env, tilt, phi, k, rng, stats);
    return path;
}

// Discrete-level barrier event for the hitting-time path: the clearance
//   y + H_k - K_k/theta* - profile(k)
// must be nonnegative at every level and the terminal clearance must land in
// [j_lo, j_hi]. The index set is {0..n}, so no intra-level correction enters.
inline ProbEstimate estimate_barrier_prob_rw(const Environment& env, const TiltSolution& tilt,
                                             const PhiProfile& phi, const BarrierEvent& event,
                                             long long reps, Rng& rng,
                                             WalkerStats* stats = nullptr) {
    if (reps <= 0) throw error("estimate_barrier_prob_rw: reps must be positive");
    event.validate();
    const int64_t n = event.profile.n;
    if (n > phi.n) throw error("estimate_barrier_prob_rw: profile longer than phi profile");

    // K_k/theta* from the same phi values the sampler uses
    std::vector<double> k_over_theta(static_cast<std::size_t>(n + 1), 0.0);
    for (int64_t k = 1; k <= n; ++k)
        k_over_theta[static_cast<std::size_t>(k)] =
            k_over_theta[static_cast<std::size_t>(k - 1)] - phi.log_phi(k) / tilt.theta_star;

    RunningStat acc;
    for (long long r = 0; r < reps; ++r) {
        double h = 0.0;
        double clearance = event.start_y - event.profile.value(0);
        bool alive = clearance >= 0.0;
        for (int64_t k = 1; k <= n && alive; ++k) {
            h += sample_tau(env, tilt, phi, k, rng, stats);
            clearance = event.start_y + h - k_over_theta[static_cast<std::size_t>(k)] -
                        event.profile.value(k);
            if (clearance < 0.0) alive = false;
        }
        const bool hit =
            alive && clearance >= event.j_lo && clearance <= event.j_hi;
        acc.add(hit ? 1.0 : 0.0);
    }
    ProbEstimate est;
    est.p_hat = acc.mean();
    est.se = acc.se();
    est.reps = reps;
    est.seed = rng.seed();
    return est;
}

struct McPhiEstimate {
    double estimate = 0.0;
    double se = 0.0;
    long long reps = 0;
    long long truncated = 0;
    double truncation_bias_bound = 0.0;  // mean weight carried by truncated paths
};

// Direct Monte Carlo of E_{k-1}[exp(int_0^{H_k} V(X_s) ds)] for the plain
// rate-1 walk. Test oracle only: the untilted hitting times are heavy, so
// k is restricted to <= 3 and long paths are cut at a step budget, each
// contributing its weight so far (an overestimate by at most that weight,
// since the remaining factor lies in (0,1] for V <= 0).
inline McPhiEstimate mc_phi_oracle(const Environment& env, double eta, int64_t k,
                                   long long reps, Rng& rng,
                                   long long step_budget = 1'000'000) {
    if (k < 1 || k > 3) throw error("mc_phi_oracle: k must be in {1,2,3}");
    if (eta > 0.0) throw error("mc_phi_oracle: eta must be <= 0");
    RunningStat acc;
    long long truncated = 0;
    double trunc_weight = 0.0;
    for (long long r = 0; r < reps; ++r) {
        int64_t x = k - 1;
        double log_w = 0.0;
        long long steps = 0;
        bool cut = false;
        while (x < k) {
            const double v = env.zeta(x) + eta;
            const double hold = rng.exponential(1.0);
            log_w += v * hold;
            x += (rng.uniform() < 0.5) ? 1 : -1;
            if (x < env.x_min()) {
                // walk left past the window: weight is already astronomically
                // small, treat as a truncated path
                cut = true;
                break;
            }
            if (++steps >= step_budget) {
                cut = true;
                break;
            }
        }
        const double w = std::exp(log_w);
        acc.add(w);
        if (cut) {
            ++truncated;
            trunc_weight += w;
        }
    }
    McPhiEstimate out;
    out.estimate = acc.mean();
    out.se = acc.se();
    out.reps = reps;
    out.truncated = truncated;
    out.truncation_bias_bound = trunc_weight / static_cast<double>(reps);
    return out;
}

}  // namespace brwre
