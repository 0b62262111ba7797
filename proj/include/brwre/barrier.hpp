#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include <json.hpp>

#include "brwre/rng.hpp"
#include "brwre/stats.hpp"
#include "brwre/tilt.hpp"

namespace brwre {

// Gaussian process with piecewise-constant local variance: the increment over
// [k-1, k] is Normal(0, xi2[k]). Integer-time marginals match the centered
// hitting-time sums the tilted walk produces.
struct GaussLaw {
    std::vector<double> xi2;  // index 1..n, [0] unused

    int64_t n() const { return static_cast<int64_t>(xi2.size()) - 1; }

    static GaussLaw from_table(const CenteringTable& t) {
        GaussLaw g;
        g.xi2 = t.xi2;
        return g;
    }

    void validate() const {
        if (xi2.size() < 1) throw error("GaussLaw: empty");
        for (std::size_t k = 1; k < xi2.size(); ++k)
            if (!(xi2[k] > 0.0)) throw error("GaussLaw: local variance must be positive");
    }
};

enum class Interp { linear, variance_adapted };

// Interpolation between (t1,x1) and (t2,x2) weighted by the local variance,
// so the interpolant moves in proportion to accumulated variance rather than
// time. Endpoints are reproduced exactly.
inline double adapted_interpolation(double x1, double x2, int64_t t1, int64_t t2,
                                    const std::vector<double>& xi2, double s) {
    if (t2 <= t1) throw error("adapted_interpolation: need t1 < t2");
    if (s < static_cast<double>(t1) || s > static_cast<double>(t2))
        throw error("adapted_interpolation: s outside [t1, t2]");
    double total = 0.0;
    for (int64_t k = t1 + 1; k <= t2; ++k) total += xi2[static_cast<std::size_t>(k)];
    const double ceil_s = std::ceil(s);
    const int64_t ks = static_cast<int64_t>(ceil_s);
    double before = 0.0;  // accumulated variance strictly before floor(s)
    for (int64_t k = t1 + 1; k < ks; ++k) before += xi2[static_cast<std::size_t>(k)];
    const double frac = (ks > t1) ? (s - static_cast<double>(ks - 1)) : 0.0;
    const double partial = (ks > t1 && ks <= t2)
                               ? frac * xi2[static_cast<std::size_t>(ks)]
                               : 0.0;
    const double w2 = (before + partial) / total;
    return x1 * (1.0 - w2) + x2 * w2;
}

// Piecewise barrier over [0, n], values pinned at integer times. Between
// integers the barrier is the chord of its endpoint values (for profiles
// specified at every integer the variance-adapted rule coincides with the
// chord inside each unit interval, so the mode only matters for how sparse
// anchors were expanded into integer values).
struct BarrierProfile {
    int64_t n = 0;
    std::vector<double> values;  // size n+1
    Interp interp = Interp::linear;
    std::string label;
    std::vector<double> xi2;  // retained when interp == variance_adapted

    double value(int64_t k) const {
        if (k < 0 || k > n) throw error("BarrierProfile: index out of range");
        return values[static_cast<std::size_t>(k)];
    }

    double interpolate(double s) const {
        if (s < 0.0 || s > static_cast<double>(n))
            throw error("BarrierProfile: s outside [0, n]");
        const int64_t k = std::min(static_cast<int64_t>(s), n - 1);
        const double frac = s - static_cast<double>(k);
        return values[static_cast<std::size_t>(k)] * (1.0 - frac) +
               values[static_cast<std::size_t>(k + 1)] * frac;
    }

    void validate() const {
        if (values.size() != static_cast<std::size_t>(n + 1))
            throw error("BarrierProfile: values length != n+1");
        for (double v : values)
            if (!std::isfinite(v)) throw error("BarrierProfile: non-finite value");
        if (interp == Interp::variance_adapted && !xi2.empty() &&
            xi2.size() != static_cast<std::size_t>(n + 1))
            throw error("BarrierProfile: xi2 length != n+1");
    }
};

inline void to_json(nlohmann::json& j, const BarrierProfile& p) {
    j = {{"n", p.n},
         {"values", p.values},
         {"interp", p.interp == Interp::linear ? "linear" : "variance_adapted"},
         {"label", p.label}};
    if (!p.xi2.empty()) j["xi2"] = p.xi2;
}
inline void from_json(const nlohmann::json& j, BarrierProfile& p) {
    j.at("n").get_to(p.n);
    j.at("values").get_to(p.values);
    const std::string mode = j.at("interp").get<std::string>();
    if (mode == "linear")
        p.interp = Interp::linear;
    else if (mode == "variance_adapted")
        p.interp = Interp::variance_adapted;
    else
        throw error("BarrierProfile: unknown interp mode '" + mode + "'");
    p.label = j.value("label", "");
    if (j.contains("xi2")) j.at("xi2").get_to(p.xi2);
    p.validate();
}

// --------------------------------------------------------------------------
// Banana profiles. The generating curve is
//   g_n(k) = sgn * delta * ((1+k)^{1/6} ^ (1+n-k)^{1/6} - 1)   (min of the two)
// with sgn = -1 for the first-moment banana and +1 for the second-moment one.
// The profile accumulates xi2-scaled increments of g on the outer thirds and
// fills the middle by variance-adapted interpolation, pinning h(0) = h(n) = 0.
// --------------------------------------------------------------------------

namespace detail {

inline double banana_g(int64_t k, int64_t n, double delta, double sign) {
    const double a = std::pow(1.0 + static_cast<double>(k), 1.0 / 6.0);
    const double b = std::pow(1.0 + static_cast<double>(n - k), 1.0 / 6.0);
    return sign * delta * (std::min(a, b) - 1.0);
}

inline BarrierProfile banana_profile(int64_t n, double delta, const std::vector<double>& xi2,
                                     double sign, const std::string& label) {
    if (n < 3) throw error("banana profile: n must be >= 3");
    if (!(delta >= 0.0)) throw error("banana profile: delta must be >= 0");
    if (xi2.size() != static_cast<std::size_t>(n + 1))
        throw error("banana profile: xi2 length must be n+1");

    BarrierProfile p;
    p.n = n;
    p.values.assign(static_cast<std::size_t>(n + 1), 0.0);
    p.interp = Interp::variance_adapted;
    p.xi2 = xi2;
    p.label = label;

    const int64_t third = n / 3;
    auto g = [&](int64_t k) { return banana_g(k, n, delta, sign); };

    for (int64_t k = 0; k < third; ++k)
        p.values[static_cast<std::size_t>(k + 1)] =
            p.values[static_cast<std::size_t>(k)] +
            xi2[static_cast<std::size_t>(k + 1)] * (g(k + 1) - g(k));
    for (int64_t k = n; k > n - third; --k)
        p.values[static_cast<std::size_t>(k - 1)] =
            p.values[static_cast<std::size_t>(k)] -
            xi2[static_cast<std::size_t>(k)] * (g(k) - g(k - 1));
    const double ha = p.values[static_cast<std::size_t>(third)];
    const double hb = p.values[static_cast<std::size_t>(n - third)];
    double total = 0.0;
    for (int64_t j = third + 1; j <= n - third; ++j) total += xi2[static_cast<std::size_t>(j)];
    double acc = 0.0;
    for (int64_t k = third + 1; k < n - third; ++k) {
        acc += xi2[static_cast<std::size_t>(k)];
        p.values[static_cast<std::size_t>(k)] = ha + (hb - ha) * acc / total;
    }
    return p;
}

}  // namespace detail

inline BarrierProfile banana_up(int64_t n, double delta, const std::vector<double>& xi2) {
    return detail::banana_profile(n, delta, xi2, -1.0, "banana_up");
}

inline BarrierProfile banana_down(int64_t n, double delta, const std::vector<double>& xi2) {
    return detail::banana_profile(n, delta, xi2, +1.0, "banana_down");
}

// m_{n,h}(k) = h(k) - sigma_k^2/(theta* sigma_n^2) * ln(p_n): the banana plus
// the variance-adapted interpolation of the log-barrier correction.
inline BarrierProfile barrier_shape_m(const CenteringTable& table, double p_hat_n,
                                      const BarrierProfile* banana) {
    if (!(p_hat_n > 0.0 && p_hat_n <= 1.0))
        throw error("barrier_shape_m: p_hat_n must lie in (0,1]");
    const int64_t n = table.n;
    if (banana && banana->n != n) throw error("barrier_shape_m: banana length mismatch");
    BarrierProfile p;
    p.n = n;
    p.values.assign(static_cast<std::size_t>(n + 1), 0.0);
    p.interp = Interp::variance_adapted;
    p.xi2 = table.xi2;
    p.label = banana ? ("m_" + banana->label) : "m_plain";
    const double logp = std::log(p_hat_n);
    const double sn2 = table.sigma2[static_cast<std::size_t>(n)];
    for (int64_t k = 0; k <= n; ++k) {
        const std::size_t i = static_cast<std::size_t>(k);
        p.values[i] = (banana ? banana->values[i] : 0.0) -
                      table.sigma2[i] / (table.theta_star * sn2) * logp;
    }
    return p;
}

// t_{n;y}^x(k) = K_k/theta* + x - y + m_{n,h}(k); with no banana and k = n
// this collapses to m_n + x - y.
inline BarrierProfile profile_t_ny(const CenteringTable& table, double p_hat_n,
                                   double theta_star, double y, double x,
                                   const BarrierProfile* banana = nullptr) {
    BarrierProfile m = barrier_shape_m(table, p_hat_n, banana);
    BarrierProfile p = m;
    p.label = "t_ny" + (banana ? ("_" + banana->label) : std::string());
    for (int64_t k = 0; k <= table.n; ++k) {
        const std::size_t i = static_cast<std::size_t>(k);
        p.values[i] = table.K[i] / theta_star + x - y + m.values[i];
    }
    return p;
}

// Largest delta in {delta0, delta0/2, ...} for which both banana-shifted
// barriers t_{n;y} are nondecreasing in k. The paper only pins delta
// implicitly; halving from 0.1 is the lab policy.
inline double choose_banana_delta(const CenteringTable& table, double p_hat_n,
                                  double delta0 = 0.1, int max_halvings = 20) {
    double delta = delta0;
    for (int i = 0; i <= max_halvings; ++i) {
        bool monotone = true;
        for (double sign : {-1.0, +1.0}) {
            const BarrierProfile h = sign < 0 ? banana_up(table.n, delta, table.xi2)
                                              : banana_down(table.n, delta, table.xi2);
            const BarrierProfile t =
                profile_t_ny(table, p_hat_n, table.theta_star, 0.0, 0.0, &h);
            for (int64_t k = 0; k < table.n; ++k)
                if (t.values[static_cast<std::size_t>(k + 1)] <
                    t.values[static_cast<std::size_t>(k)]) {
                    monotone = false;
                    break;
                }
            if (!monotone) break;
        }
        if (monotone) return delta;
        delta *= 0.5;
    }
    throw error("choose_banana_delta: no admissible delta found");
}

// --------------------------------------------------------------------------
// Barrier events and the weighted crossing estimator.
// --------------------------------------------------------------------------

// Event on the clearance d(s) = start_y + Z_s - profile(s):
//   d(s) >= 0 for all s in [0, n], d(n) in [j_lo, j_hi].
struct BarrierEvent {
    double start_y = 0.0;
    double j_lo = -std::numeric_limits<double>::infinity();
    double j_hi = std::numeric_limits<double>::infinity();
    BarrierProfile profile;

    void validate() const {
        profile.validate();
        if (!(j_lo <= j_hi)) throw error("BarrierEvent: empty end interval");
    }
};

// Exact survival probability of a Brownian bridge with variance xi2k over a
// unit interval against a linear barrier, given endpoint clearances d0, d1.
inline double segment_survival(double d0, double d1, double xi2k) {
    return -std::expm1(-2.0 * d0 * d1 / xi2k);
}

// Weighted Monte Carlo: sample the integer-time skeleton, multiply the exact
// per-segment bridge survival for the continuous-time crossing, zero out
// paths whose skeleton dips below the barrier. Unbiased for the same event
// as rejection on a continuous path, at strictly lower variance.
inline ProbEstimate estimate_barrier_prob_gauss(const GaussLaw& law, const BarrierEvent& event,
                                                long long reps, uint64_t seed) {
    law.validate();
    event.validate();
    if (reps <= 0) throw error("estimate_barrier_prob_gauss: reps must be positive");
    const int64_t n = law.n();
    if (event.profile.n != n)
        throw error("estimate_barrier_prob_gauss: profile length != law length");
    if (event.profile.interp == Interp::variance_adapted && !event.profile.xi2.empty() &&
        event.profile.xi2 != law.xi2)
        throw error("estimate_barrier_prob_gauss: variance-adapted profile built from a "
                    "different xi2 than the law");

    Rng rng(seed, derive_stream(0xBA22u));
    RunningStat acc;
    for (long long r = 0; r < reps; ++r) {
        double d = event.start_y - event.profile.value(0);
        double w = (d >= 0.0) ? 1.0 : 0.0;
        if (w > 0.0) {
            for (int64_t k = 1; k <= n; ++k) {
                const double xi2k = law.xi2[static_cast<std::size_t>(k)];
                const double dprev = d;
                d += rng.normal(0.0, std::sqrt(xi2k)) -
                     (event.profile.value(k) - event.profile.value(k - 1));
                if (d <= 0.0) {
                    w = 0.0;
                    break;
                }
                w *= segment_survival(dprev, d, xi2k);
            }
        }
        if (w > 0.0 && !(d >= event.j_lo && d <= event.j_hi)) w = 0.0;
        acc.add(w);
    }
    ProbEstimate est;
    est.p_hat = acc.mean();
    est.se = acc.se();
    est.reps = reps;
    est.seed = seed;
    return est;
}

// --------------------------------------------------------------------------
// p_n and its prefix family. p_k is the probability that the Gaussian path
// started y0 above W stays above it through time k and lands with clearance
// in [y0-1, y0]; one sampled path serves every prefix.
// --------------------------------------------------------------------------

struct PnOptions {
    long long max_reps = 4'000'000;
    long long batch = 20'000;
    double target_rel_se = 0.05;
};

struct PnTable {
    std::vector<ProbEstimate> p;  // index 0..n
    long long reps = 0;
    bool target_met = false;
    long long suggested_reps = 0;  // when the target was missed
};

inline PnTable estimate_pn_prefixes(const CenteringTable& table, int y0, int64_t n,
                                    uint64_t seed, const PnOptions& opt = {}) {
    if (y0 < 4)
        throw error("estimate_pn_prefixes: y0 must be an integer >= 4 (>= e+1)");
    if (n < 0 || n > table.n) throw error("estimate_pn_prefixes: n outside table range");
    if (opt.max_reps <= 0) throw error("estimate_pn_prefixes: reps must be positive");

    const std::size_t len = static_cast<std::size_t>(n + 1);
    std::vector<RunningStat> acc(len);
    Rng rng(seed, derive_stream(0x9A11ull));

    long long done = 0;
    bool met = false;
    while (done < opt.max_reps && !met) {
        const long long todo = std::min(opt.batch, opt.max_reps - done);
        for (long long r = 0; r < todo; ++r) {
            // clearance above W starts at y0; W[0] = 0
            double d = static_cast<double>(y0);
            double w = 1.0;
            acc[0].add((d >= y0 - 1 && d <= y0) ? 1.0 : 0.0);
            for (int64_t k = 1; k <= n; ++k) {
                const std::size_t i = static_cast<std::size_t>(k);
                const double xi2k = table.xi2[i];
                const double dprev = d;
                d += rng.normal(0.0, std::sqrt(xi2k)) - (table.W[i] - table.W[i - 1]);
                if (d <= 0.0) {
                    w = 0.0;
                } else if (w > 0.0) {
                    w *= segment_survival(dprev, d, xi2k);
                }
                if (w == 0.0) {
                    // dead paths contribute 0 to every later prefix
                    for (int64_t kk = k; kk <= n; ++kk)
                        acc[static_cast<std::size_t>(kk)].add(0.0);
                    break;
                }
                acc[i].add((d >= y0 - 1 && d <= y0) ? w : 0.0);
            }
        }
        done += todo;
        const RunningStat& tail = acc[len - 1];
        met = tail.mean() > 0.0 && tail.se() / tail.mean() <= opt.target_rel_se;
    }

    PnTable out;
    out.reps = done;
    out.target_met = met;
    if (!met) {
        const RunningStat& tail = acc[len - 1];
        if (tail.mean() > 0.0) {
            const double rel = tail.se() / tail.mean();
            out.suggested_reps = static_cast<long long>(
                std::ceil(static_cast<double>(done) * (rel / opt.target_rel_se) *
                          (rel / opt.target_rel_se)));
        }
    }
    out.p.resize(len);
    for (std::size_t i = 0; i < len; ++i) {
        out.p[i].p_hat = acc[i].mean();
        out.p[i].se = acc[i].se();
        out.p[i].reps = done;
        out.p[i].seed = seed;
    }
    return out;
}

inline ProbEstimate estimate_p_n(const CenteringTable& table, int y0, int64_t n, long long reps,
                                 uint64_t seed, double target_rel_se = 0.05) {
    PnOptions opt;
    opt.max_reps = reps;
    opt.target_rel_se = target_rel_se;
    const PnTable t = estimate_pn_prefixes(table, y0, n, seed, opt);
    return t.p[static_cast<std::size_t>(n)];
}

// --------------------------------------------------------------------------
// Centering assembly: m_k = (K_k - ln p_k)/theta*, with the predecessor
// lookup m~(t) = k for t in (m_k, m_{k+1}].
// --------------------------------------------------------------------------

struct Centering {
    std::vector<double> m;  // index 0..n
    double theta_star = 0.0;

    int64_t m_tilde(double t) const {
        if (t <= m[0]) return 0;
        if (t > m.back())
            throw error("m_tilde: t beyond the last centering entry; extend the table");
        // largest k with m_k < t
        std::size_t lo = 0, hi = m.size() - 1;
        while (lo + 1 < hi) {
            const std::size_t mid = (lo + hi) / 2;
            if (m[mid] < t)
                lo = mid;
            else
                hi = mid;
        }
        return m[hi] < t ? static_cast<int64_t>(hi) : static_cast<int64_t>(lo);
    }
};

inline Centering assemble_centering(const CenteringTable& table,
                                    const std::vector<ProbEstimate>& p_hats,
                                    double theta_star) {
    if (p_hats.size() != table.K.size())
        throw error("assemble_centering: need one p_hat per level 0..n");
    Centering c;
    c.theta_star = theta_star;
    c.m.resize(p_hats.size());
    for (std::size_t k = 0; k < p_hats.size(); ++k) {
        if (!(p_hats[k].p_hat > 0.0))
            throw error("assemble_centering: p_hat = 0 at level " + std::to_string(k) +
                        "; increase reps");
        c.m[k] = (table.K[k] - std::log(p_hats[k].p_hat)) / theta_star;
        if (k > 0 && !(c.m[k] > c.m[k - 1]))
            throw error("assemble_centering: m_k non-monotone at level " + std::to_string(k) +
                        " (likely MC noise in p_hat; increase reps)");
    }
    return c;
}

inline double assemble_m_n(const CenteringTable& table, double p_hat_n, double theta_star) {
    if (!(p_hat_n > 0.0)) throw error("assemble_m_n: nonpositive p_hat");
    return (table.K.back() - std::log(p_hat_n)) / theta_star;
}

}  // namespace brwre
