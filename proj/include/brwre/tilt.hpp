#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "brwre/env.hpp"
#include "brwre/stats.hpp"

namespace brwre {

// --------------------------------------------------------------------------
// Per-level log-MGF of the hitting-time weight,
//   phi_k = E_{k-1}[ exp( int_0^{H_k} (zeta(X_s) + eta) ds ) ],  L_k = ln phi_k.
// First-step decomposition of the rate-1 walk gives the scalar recursion
//   phi_k = (1/2) / (1 - V(k-1) - phi_{k-1}/2),   V(x) = zeta(x) + eta,
// an upward continued fraction seeded infinitely far to the left. Truncating
// at level -M and seeding once with 0 and once with the fixed point under the
// worst-case constant potential V = eta brackets the true value from below
// and above; the map is monotone in the seed and contracts like phi^2 per
// level, so the brackets collapse geometrically in M.
// --------------------------------------------------------------------------

namespace detail {

struct Triple {
    double f = 0.0;   // phi
    double d1 = 0.0;  // d phi / d eta
    double d2 = 0.0;  // d^2 phi / d eta^2
};

// fixed point of phi = (1/2)/(1 - eta - phi/2) (conjugate form, stable near 0)
inline double worst_case_phi(double eta) {
    const double w = 1.0 - eta;
    const double s = std::sqrt(w * w - 1.0);
    return 1.0 / (w + s);
}

inline Triple worst_case_phi_triple(double eta) {
    const double w = 1.0 - eta;
    const double s = std::sqrt(w * w - 1.0);
    Triple t;
    t.f = 1.0 / (w + s);
    t.d1 = t.f * t.f * (1.0 + w / s);
    t.d2 = 2.0 * t.f * t.d1 * (1.0 + w / s) + t.f * t.f / (s * s * s);
    return t;
}

inline Triple phi_step(const Triple& prev, double v) {
    const double den = 1.0 - v - 0.5 * prev.f;
    if (!(den > 0.0))
        throw error("phi recursion: nonpositive denominator, tilt parameter out of "
                    "admissible range");
    Triple t;
    t.f = 0.5 / den;
    const double dden = -(1.0 + 0.5 * prev.d1);
    t.d1 = -t.f / den * dden;  // = 0.5 * (1 + prev.d1/2) / den^2
    t.d2 = (2.0 * t.f / (den * den)) * dden * dden + (t.f / den) * (0.5 * prev.d2);
    return t;
}

}  // namespace detail

// Bracketed phi values on levels [-M+1, n]; index 0 of the arrays holds the
// seed at level -M.
struct PhiProfile {
    double eta = 0.0;
    int64_t n = 0;
    int trunc_depth = 0;  // M
    double tol = 0.0;
    double bracket_width = 0.0;  // max over levels 1..n

    std::vector<double> lo;  // level -M + i
    std::vector<double> hi;

    int64_t level_min() const { return -static_cast<int64_t>(trunc_depth); }
    bool has(int64_t level) const { return level >= level_min() && level <= n; }

    double phi_lo(int64_t level) const { return lo[idx(level)]; }
    double phi_hi(int64_t level) const { return hi[idx(level)]; }
    double phi(int64_t level) const { return 0.5 * (phi_lo(level) + phi_hi(level)); }
    double log_phi(int64_t level) const { return std::log(phi(level)); }

    std::size_t idx(int64_t level) const {
        if (!has(level))
            throw error("phi profile: level " + std::to_string(level) + " outside [" +
                        std::to_string(level_min()) + "," + std::to_string(n) + "]");
        return static_cast<std::size_t>(level - level_min());
    }
};

inline PhiProfile phi_profile(const Environment& env, double eta, int64_t n, int M,
                              double tol) {
    if (eta > 0.0) throw error("phi_profile: eta must be <= 0");
    if (M < 1) throw error("phi_profile: M must be >= 1");
    const int64_t lvl_min = -static_cast<int64_t>(M);
    if (n >= lvl_min + 1 && !env.covers(lvl_min, n - 1))
        throw error("phi_profile: environment window must cover sites [" +
                    std::to_string(lvl_min) + "," + std::to_string(n - 1) + "]");

    PhiProfile p;
    p.eta = eta;
    p.n = n;
    p.trunc_depth = M;
    p.tol = tol;
    const std::size_t len = static_cast<std::size_t>(n - lvl_min + 1);
    p.lo.resize(len);
    p.hi.resize(len);
    p.lo[0] = 0.0;
    p.hi[0] = detail::worst_case_phi(eta);

    double flo = p.lo[0], fhi = p.hi[0];
    for (int64_t level = lvl_min + 1; level <= n; ++level) {
        const double v = env.zeta(level - 1) + eta;
        const double den_lo = 1.0 - v - 0.5 * flo;
        const double den_hi = 1.0 - v - 0.5 * fhi;
        if (!(den_lo > 0.0) || !(den_hi > 0.0))
            throw error("phi_profile: nonpositive denominator, tilt parameter out of "
                        "admissible range");
        flo = 0.5 / den_lo;
        fhi = 0.5 / den_hi;
        const std::size_t i = static_cast<std::size_t>(level - lvl_min);
        p.lo[i] = flo;
        p.hi[i] = fhi;
        if (level >= 1) p.bracket_width = std::max(p.bracket_width, fhi - flo);
    }
    if (p.bracket_width > tol)
        throw error("phi_profile: bracket width " + std::to_string(p.bracket_width) +
                    " exceeds tol at truncation depth M=" + std::to_string(M) +
                    "; increase M");
    return p;
}

// First and second eta-derivatives of L_k propagated through the recursion
// (forward-mode, two extra accumulators per level). mean_tau[k] = L_k',
// xi2[k] = L_k'' are the mean and variance of tau_k under the tilted law.
// Entry [0] of each array is unused padding.
struct PhiDerivatives {
    int64_t n = 0;
    std::vector<double> log_phi;   // L_k at eta, bracket midpoint
    std::vector<double> mean_tau;  // (L_k)'
    std::vector<double> xi2;       // (L_k)''
    double max_spread = 0.0;       // max disagreement between the two seedings
};

inline PhiDerivatives phi_derivatives(const Environment& env, double eta, int64_t n, int M,
                                      double tol) {
    if (!(eta < 0.0))
        throw error("phi_derivatives: eta must be strictly negative (the mean hitting "
                    "weight diverges as eta -> 0 under recurrence)");
    if (n < 1) throw error("phi_derivatives: n must be >= 1");
    const int64_t lvl_min = -static_cast<int64_t>(M);
    if (!env.covers(lvl_min, n - 1))
        throw error("phi_derivatives: environment window must cover sites [" +
                    std::to_string(lvl_min) + "," + std::to_string(n - 1) + "]");

    detail::Triple a;  // seeded at 0
    detail::Triple b = detail::worst_case_phi_triple(eta);

    PhiDerivatives d;
    d.n = n;
    d.log_phi.assign(static_cast<std::size_t>(n + 1), 0.0);
    d.mean_tau.assign(static_cast<std::size_t>(n + 1), 0.0);
    d.xi2.assign(static_cast<std::size_t>(n + 1), 0.0);

    for (int64_t level = lvl_min + 1; level <= n; ++level) {
        const double v = env.zeta(level - 1) + eta;
        a = detail::phi_step(a, v);
        b = detail::phi_step(b, v);
        if (level >= 1) {
            const double la = a.d1 / a.f, lb = b.d1 / b.f;
            const double qa = a.d2 / a.f - la * la, qb = b.d2 / b.f - lb * lb;
            const double width = std::max({std::fabs(b.f - a.f), std::fabs(lb - la),
                                           std::fabs(qb - qa)});
            d.max_spread = std::max(d.max_spread, width);
            const std::size_t k = static_cast<std::size_t>(level);
            d.log_phi[k] = std::log(0.5 * (a.f + b.f));
            d.mean_tau[k] = 0.5 * (la + lb);
            d.xi2[k] = 0.5 * (qa + qb);
            if (!(d.mean_tau[k] > 0.0) || !(d.xi2[k] > 0.0))
                throw error("phi_derivatives: nonpositive mean/variance at level " +
                            std::to_string(level));
        }
    }
    if (d.max_spread > std::max(tol, 1e-12))
        throw error("phi_derivatives: seeding spread " + std::to_string(d.max_spread) +
                    " exceeds tol; increase M");
    return d;
}

// --------------------------------------------------------------------------
// Annealed curve L(eta) = E[L_1^zeta(eta)] and the tilt closure.
// --------------------------------------------------------------------------

struct AnnealedLogMgf {
    double L = 0.0;
    double dL = 0.0;
    double se_L = 0.0;
    double se_dL = 0.0;
    // se of the closure statistic g = -L - (es - eta) dL at this eta
    double se_g = 0.0;
    long long samples = 0;
};

// Monte Carlo over fresh environments on [-M, 0]; the site-0 rate is averaged
// exactly over the distribution atoms when the law is discrete, which removes
// the largest variance contribution and makes degenerate laws deterministic.
inline AnnealedLogMgf annealed_log_mgf(const EnvDistribution& dist, double eta, int M,
                                       long long env_samples, uint64_t seed) {
    if (!(eta < 0.0)) throw error("annealed_log_mgf: eta must be < 0");
    dist.validate();
    const double es = dist.ess_sup();
    const bool degenerate = dist.ess_inf() == dist.ess_sup();
    if (degenerate) env_samples = 1;
    if (env_samples < 1) throw error("annealed_log_mgf: env_samples must be >= 1");

    const auto atoms = dist.atoms();
    RunningStat rs_L, rs_dL, rs_g;
    std::vector<double> zeta_left(static_cast<std::size_t>(M));  // sites -M..-1

    for (long long s = 0; s < env_samples; ++s) {
        const uint64_t env_seed = derive_stream(seed, 0xE27Full, static_cast<uint64_t>(s));
        for (int i = 0; i < M; ++i)
            zeta_left[static_cast<std::size_t>(i)] =
                dist.draw(site_uniform(env_seed, -static_cast<int64_t>(M) + i)) - es;

        detail::Triple a;
        detail::Triple b = detail::worst_case_phi_triple(eta);
        for (int i = 0; i < M; ++i) {
            const double v = zeta_left[static_cast<std::size_t>(i)] + eta;
            a = detail::phi_step(a, v);
            b = detail::phi_step(b, v);
        }
        // final step to level 1 uses site 0
        double L1 = 0.0, dL1 = 0.0;
        auto accumulate_case = [&](double zeta0, double w) {
            const double v = zeta0 + eta;
            const detail::Triple fa = detail::phi_step(a, v);
            const detail::Triple fb = detail::phi_step(b, v);
            const double f = 0.5 * (fa.f + fb.f);
            const double d1 = 0.5 * (fa.d1 / fa.f + fb.d1 / fb.f);
            L1 += w * std::log(f);
            dL1 += w * d1;
        };
        if (!atoms.empty()) {
            for (const auto& [value, weight] : atoms) accumulate_case(value - es, weight);
        } else {
            accumulate_case(dist.draw(site_uniform(env_seed, 0)) - es, 1.0);
        }
        rs_L.add(L1);
        rs_dL.add(dL1);
        rs_g.add(-L1 - (es - eta) * dL1);
    }

    AnnealedLogMgf out;
    out.L = rs_L.mean();
    out.dL = rs_dL.mean();
    out.se_L = rs_L.se();
    out.se_dL = rs_dL.se();
    out.se_g = rs_g.se();
    out.samples = env_samples;
    return out;
}

inline std::pair<double, double> mean_log_mgf(const EnvDistribution& dist, double eta, int M,
                                              long long env_samples, uint64_t seed) {
    const AnnealedLogMgf a = annealed_log_mgf(dist, eta, M, env_samples, seed);
    return {a.L, a.se_L};
}

struct LCurvePoint {
    double eta = 0.0;
    double L = 0.0;
    double dL = 0.0;
};

struct TiltSolution {
    double eta_bar = 0.0;
    double v0 = 0.0;
    double theta_star = 0.0;  // es - eta_bar
    double residual = 0.0;    // |g(eta_bar)| of the closure equation
    double se_eta = 0.0;      // MC noise mapped through the local slope
    bool argmax_ok = false;
    std::vector<LCurvePoint> curve;
    long long env_samples = 0;
    int M = 0;
    double tol = 0.0;
    uint64_t seed = 0;
    EnvDistribution dist;
};

// The closure: K_n/n -> -L(eta_bar), log p_n = o(n) and m_n/n -> 1/v0 force
//   -L(eta) = (es - eta) L'(eta)
// at eta = eta_bar, with v0 = 1/L'(eta_bar). The root is found by Brent on a
// sign-changing bracket; environments are frozen across eta evaluations so
// the estimated g is a smooth deterministic function of eta.
inline TiltSolution solve_tilt(const EnvDistribution& dist, int M, long long env_samples,
                               double tol, uint64_t seed) {
    dist.validate();
    if (!(tol > 0.0)) throw error("solve_tilt: tol must be positive");
    const double es = dist.ess_sup();

    AnnealedLogMgf last;
    auto g = [&](double eta) {
        last = annealed_log_mgf(dist, eta, M, env_samples, seed);
        return -last.L - (es - eta) * last.dL;
    };

    // scan toward -inf for a sign change; g < 0 near 0-, g > 0 far out
    double eta_hi = -0.02, eta_lo = -0.04;
    double g_hi = g(eta_hi);
    double g_lo = g(eta_lo);
    while (g_hi > 0.0 && eta_hi < -1e-6) {  // root closer to zero than expected
        eta_lo = eta_hi;
        g_lo = g_hi;
        eta_hi *= 0.5;
        g_hi = g(eta_hi);
    }
    while (g_lo <= 0.0) {
        eta_hi = eta_lo;
        g_hi = g_lo;
        eta_lo *= 2.0;
        if (eta_lo < -64.0)
            throw error("solve_tilt: no sign change for eta in [-64, 0); widen the bracket "
                        "or check the distribution parameters");
        g_lo = g(eta_lo);
    }
    if (!(g_lo > 0.0 && g_hi <= 0.0))
        throw error("solve_tilt: failed to bracket the closure root; widen the bracket");

    // Brent's method on [eta_lo, eta_hi] with g(eta_lo) > 0 > g(eta_hi)
    double a = eta_lo, fa = g_lo, b = eta_hi, fb = g_hi;
    double c = a, fc = fa, d = b - a, e = d;
    const double xtol = 1e-13;
    for (int it = 0; it < 200; ++it) {
        if (std::fabs(fc) < std::fabs(fb)) {
            a = b; b = c; c = a;
            fa = fb; fb = fc; fc = fa;
        }
        const double tol1 = 2.0 * 1e-16 * std::fabs(b) + 0.5 * xtol;
        const double xm = 0.5 * (c - b);
        if (std::fabs(xm) <= tol1 || fb == 0.0) break;
        if (std::fabs(e) >= tol1 && std::fabs(fa) > std::fabs(fb)) {
            double p, q, r;
            const double s = fb / fa;
            if (a == c) {
                p = 2.0 * xm * s;
                q = 1.0 - s;
            } else {
                q = fa / fc;
                r = fb / fc;
                p = s * (2.0 * xm * q * (q - r) - (b - a) * (r - 1.0));
                q = (q - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if (p > 0.0) q = -q;
            p = std::fabs(p);
            if (2.0 * p < std::min(3.0 * xm * q - std::fabs(tol1 * q), std::fabs(e * q))) {
                e = d;
                d = p / q;
            } else {
                d = xm;
                e = d;
            }
        } else {
            d = xm;
            e = d;
        }
        a = b;
        fa = fb;
        b += (std::fabs(d) > tol1) ? d : (xm > 0 ? tol1 : -tol1);
        fb = g(b);
        if ((fb > 0.0) == (fc > 0.0)) {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
    }

    TiltSolution sol;
    sol.eta_bar = b;
    sol.residual = std::fabs(g(b));
    sol.v0 = 1.0 / last.dL;
    sol.theta_star = es - sol.eta_bar;
    sol.env_samples = last.samples;
    sol.M = M;
    sol.tol = tol;
    sol.seed = seed;
    sol.dist = dist;

    // local slope of g for the noise-to-eta map
    const double h = 1e-4;
    const double gp = (g(b + h) - g(b - h)) / (2.0 * h);
    sol.se_eta = std::fabs(gp) > 0.0 ? last.se_g / std::fabs(gp) : HUGE_VAL;
    if (sol.se_eta > 5e-4)
        throw error("solve_tilt: MC noise maps to se(eta_bar) = " +
                    std::to_string(sol.se_eta) + "; increase env_samples");
    if (sol.residual > tol)
        throw error("solve_tilt: closure residual " + std::to_string(sol.residual) +
                    " exceeds tol");

    // argmax check: on an eta grid, eta/v0 - L(eta) must peak at eta_bar
    const int grid_n = 21;
    const double span = 0.15;
    const double top = std::min(-1e-3, sol.eta_bar + span);
    const double bottom = sol.eta_bar - span;
    const double step = (top - bottom) / (grid_n - 1);
    int best = -1;
    double best_val = -HUGE_VAL;
    int closest = 0;
    for (int i = 0; i < grid_n; ++i) {
        const double eta = bottom + step * i;
        const AnnealedLogMgf m = annealed_log_mgf(dist, eta, M, env_samples, seed);
        sol.curve.push_back({eta, m.L, m.dL});
        const double val = eta / sol.v0 - m.L;
        if (val > best_val) {
            best_val = val;
            best = i;
        }
        if (std::fabs(eta - sol.eta_bar) <
            std::fabs(bottom + step * closest - sol.eta_bar))
            closest = i;
    }
    sol.argmax_ok = std::abs(best - closest) <= 1;
    return sol;
}

inline void to_json(nlohmann::json& j, const LCurvePoint& c) {
    j = {{"eta", c.eta}, {"L", c.L}, {"dL", c.dL}};
}
inline void from_json(const nlohmann::json& j, LCurvePoint& c) {
    j.at("eta").get_to(c.eta);
    j.at("L").get_to(c.L);
    j.at("dL").get_to(c.dL);
}

inline void to_json(nlohmann::json& j, const TiltSolution& s) {
    j = {{"eta_bar", s.eta_bar}, {"v0", s.v0},           {"theta_star", s.theta_star},
         {"residual", s.residual}, {"se_eta", s.se_eta}, {"argmax_ok", s.argmax_ok},
         {"curve", s.curve},       {"env_samples", s.env_samples},
         {"M", s.M},               {"tol", s.tol},       {"seed", s.seed},
         {"dist", s.dist}};
}
inline void from_json(const nlohmann::json& j, TiltSolution& s) {
    j.at("eta_bar").get_to(s.eta_bar);
    j.at("v0").get_to(s.v0);
    j.at("theta_star").get_to(s.theta_star);
    j.at("residual").get_to(s.residual);
    j.at("se_eta").get_to(s.se_eta);
    j.at("argmax_ok").get_to(s.argmax_ok);
    j.at("curve").get_to(s.curve);
    j.at("env_samples").get_to(s.env_samples);
    j.at("M").get_to(s.M);
    j.at("tol").get_to(s.tol);
    j.at("seed").get_to(s.seed);
    j.at("dist").get_to(s.dist);
}

// --------------------------------------------------------------------------
// Quenched centering arrays at eta_bar.
// --------------------------------------------------------------------------

struct CenteringTable {
    int64_t n = 0;
    double eta_bar = 0.0;
    double theta_star = 0.0;
    // arrays indexed 0..n, entry 0 is the zero anchor
    std::vector<double> K;         // K_k = -sum_{j<=k} L_j(eta_bar)
    std::vector<double> W;         // K_k/theta* - sum_{j<=k} mean_tau[j]
    std::vector<double> mean_tau;  // (L_k)'(eta_bar), [0] unused
    std::vector<double> xi2;       // (L_k)''(eta_bar), [0] unused
    std::vector<double> sigma2;    // cumulative xi2
};

inline CenteringTable centering_table(const Environment& env, const TiltSolution& tilt,
                                      int64_t n, int M, double tol) {
    if (n < 1) throw error("centering_table: n must be >= 1");
    const PhiDerivatives d = phi_derivatives(env, tilt.eta_bar, n, M, tol);

    CenteringTable t;
    t.n = n;
    t.eta_bar = tilt.eta_bar;
    t.theta_star = tilt.theta_star;
    const std::size_t len = static_cast<std::size_t>(n + 1);
    t.K.assign(len, 0.0);
    t.W.assign(len, 0.0);
    t.mean_tau.assign(len, 0.0);
    t.xi2.assign(len, 0.0);
    t.sigma2.assign(len, 0.0);

    // worst-case one-level weight bounds the K increments from above
    const double den_worst = 1.0 + (env.es() - env.ei()) - tilt.eta_bar;
    const double max_increment = -std::log(0.5 / den_worst) + 1e-9;

    double cum_tau = 0.0;
    for (int64_t k = 1; k <= n; ++k) {
        const std::size_t i = static_cast<std::size_t>(k);
        const double inc = -d.log_phi[i];
        if (!(inc > 0.0) || inc > max_increment)
            throw error("centering_table: K increment out of bounds at level " +
                        std::to_string(k));
        t.K[i] = t.K[i - 1] + inc;
        t.mean_tau[i] = d.mean_tau[i];
        t.xi2[i] = d.xi2[i];
        t.sigma2[i] = t.sigma2[i - 1] + d.xi2[i];
        cum_tau += d.mean_tau[i];
        t.W[i] = t.K[i] / t.theta_star - cum_tau;
    }
    return t;
}

inline void to_json(nlohmann::json& j, const CenteringTable& t) {
    j = {{"n", t.n},          {"eta_bar", t.eta_bar}, {"theta_star", t.theta_star},
         {"K", t.K},          {"W", t.W},             {"mean_tau", t.mean_tau},
         {"xi2", t.xi2},      {"sigma2", t.sigma2}};
}
inline void from_json(const nlohmann::json& j, CenteringTable& t) {
    j.at("n").get_to(t.n);
    j.at("eta_bar").get_to(t.eta_bar);
    j.at("theta_star").get_to(t.theta_star);
    j.at("K").get_to(t.K);
    j.at("W").get_to(t.W);
    j.at("mean_tau").get_to(t.mean_tau);
    j.at("xi2").get_to(t.xi2);
    j.at("sigma2").get_to(t.sigma2);
}

// --------------------------------------------------------------------------
// Doob h-transform jump rates of the tilted walk before it hits the target
// level: h(x) = prod_{j>x} phi_j, so the rate up is (1/2)/phi_{x+1} and the
// rate down is phi_x/2. Their sum telescopes to 1 - V(x) by the recursion.
// --------------------------------------------------------------------------

struct JumpRates {
    double right = 0.0;
    double left = 0.0;
    double total() const { return right + left; }
};

inline JumpRates h_transform_rates(const Environment& env, const TiltSolution& tilt,
                                   const PhiProfile& phi, int64_t x) {
    (void)tilt;
    if (x < env.x_min() || x > env.x_max())
        throw error("h_transform_rates: site outside environment window");
    const double up = phi.phi(x + 1);
    const double down = phi.phi(x);
    if (!(up > 0.0 && up <= 1.0) || !(down > 0.0 && down <= 1.0))
        throw error("h_transform_rates: phi outside (0,1]");
    return JumpRates{0.5 / up, 0.5 * down};
}

}  // namespace brwre
