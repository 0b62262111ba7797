#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "brwre/barrier.hpp"
#include "brwre/brw.hpp"
#include "brwre/env.hpp"
#include "brwre/stats.hpp"
#include "brwre/tilt.hpp"
#include "brwre/walker.hpp"

namespace brwre {

// Bands asserted by the experiment runners (exit status). The IQR ratio and
// decay bands are the frozen desk-scale proxies for the asymptotic claims.
constexpr double kIqrRatioLo = 0.6;
constexpr double kIqrRatioHi = 1.67;
constexpr double kDriftSigmas = 3.0;
constexpr double kDecayMaxOverMin = 2.0;
constexpr double kMt1MaxZ = 3.0;

struct ExperimentConfig {
    EnvDistribution dist = EnvDistribution::two_point(0.5, 0.1, 0.2);
    std::vector<int64_t> n_list = {32, 64, 128, 256};
    std::vector<double> t_list;  // tightness-m; empty = n_anchors / v0
    int replicates = 200;
    int y0 = 4;
    long long pn_max_reps = 4'000'000;
    double pn_target_rel_se = 0.05;
    int64_t prune_window = 20;
    long long pop_cap = 50'000'000;
    int M = 48;
    long long tilt_env_samples = 200'000;
    double tilt_tol = 1e-8;
    uint64_t master_seed = 1;
    int threads = 1;

    void validate() const {
        dist.validate();
        if (replicates < 2) throw error("config: replicates must be >= 2");
        for (std::size_t i = 1; i < n_list.size(); ++i)
            if (n_list[i] <= n_list[i - 1]) throw error("config: n_list must be increasing");
        if (n_list.empty()) throw error("config: n_list must be nonempty");
        if (y0 < 4) throw error("config: y0 must be >= 4");
        if (threads < 1) throw error("config: threads must be >= 1");
    }
};

inline void to_json(nlohmann::json& j, const ExperimentConfig& c) {
    j = {{"dist", c.dist},
         {"n_list", c.n_list},
         {"t_list", c.t_list},
         {"replicates", c.replicates},
         {"y0", c.y0},
         {"pn_max_reps", c.pn_max_reps},
         {"pn_target_rel_se", c.pn_target_rel_se},
         {"prune_window", c.prune_window},
         {"pop_cap", c.pop_cap},
         {"M", c.M},
         {"tilt_env_samples", c.tilt_env_samples},
         {"tilt_tol", c.tilt_tol},
         {"master_seed", c.master_seed},
         {"threads", c.threads}};
}
inline void from_json(const nlohmann::json& j, ExperimentConfig& c) {
    ExperimentConfig d;
    c.dist = j.value("dist", d.dist);
    c.n_list = j.value("n_list", d.n_list);
    c.t_list = j.value("t_list", d.t_list);
    c.replicates = j.value("replicates", d.replicates);
    c.y0 = j.value("y0", d.y0);
    c.pn_max_reps = j.value("pn_max_reps", d.pn_max_reps);
    c.pn_target_rel_se = j.value("pn_target_rel_se", d.pn_target_rel_se);
    c.prune_window = j.value("prune_window", d.prune_window);
    c.pop_cap = j.value("pop_cap", d.pop_cap);
    c.M = j.value("M", d.M);
    c.tilt_env_samples = j.value("tilt_env_samples", d.tilt_env_samples);
    c.tilt_tol = j.value("tilt_tol", d.tilt_tol);
    c.master_seed = j.value("master_seed", d.master_seed);
    c.threads = j.value("threads", d.threads);
    c.validate();
}

// Replicates are pure functions of (config, index); execution order is free
// but results land in index slots and every fold runs in index order, so the
// output is byte-identical for any thread count.
inline void parallel_for(int count, int threads,
                         const std::function<void(int)>& body) {
    if (threads <= 1 || count <= 1) {
        for (int i = 0; i < count; ++i) body(i);
        return;
    }
    std::atomic<int> next{0};
    auto worker = [&]() {
        for (;;) {
            const int i = next.fetch_add(1);
            if (i >= count) return;
            body(i);
        }
    };
    std::vector<std::thread> pool;
    const int t = std::min(threads, count);
    pool.reserve(static_cast<std::size_t>(t));
    for (int i = 0; i < t; ++i) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
}

// --------------------------------------------------------------------------
// Tabular results: fixed column set, doubles only, deterministic formatting.
// --------------------------------------------------------------------------

struct ResultTable {
    std::vector<std::string> columns;
    std::vector<std::vector<double>> rows;
};

inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline void emit_results(const ResultTable& table, const std::string& format,
                         const std::string& path) {
    std::ofstream out(path);
    if (!out) throw error("emit_results: cannot open '" + path + "'");
    if (format == "csv") {
        for (std::size_t i = 0; i < table.columns.size(); ++i)
            out << (i ? "," : "") << table.columns[i];
        out << "\n";
        for (const auto& row : table.rows) {
            for (std::size_t i = 0; i < row.size(); ++i)
                out << (i ? "," : "") << format_double(row[i]);
            out << "\n";
        }
    } else if (format == "jsonl") {
        for (const auto& row : table.rows) {
            nlohmann::json j = nlohmann::json::object();
            for (std::size_t i = 0; i < row.size() && i < table.columns.size(); ++i)
                j[table.columns[i]] = row[i];
            out << j.dump() << "\n";
        }
    } else {
        throw error("emit_results: unknown format '" + format + "'");
    }
    if (!out) throw error("emit_results: write failed for '" + path + "'");
}

inline ResultTable load_results_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw error("load_results_csv: cannot open '" + path + "'");
    ResultTable t;
    std::string line;
    if (!std::getline(in, line)) throw error("load_results_csv: empty file");
    std::stringstream hs(line);
    std::string cell;
    while (std::getline(hs, cell, ',')) t.columns.push_back(cell);
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<double> row;
        std::stringstream rs(line);
        while (std::getline(rs, cell, ',')) row.push_back(std::stod(cell));
        if (row.size() != t.columns.size())
            throw error("load_results_csv: ragged row in '" + path + "'");
        t.rows.push_back(std::move(row));
    }
    return t;
}

// --------------------------------------------------------------------------
// Tightness of H_n - m_n (annealed): fresh environment per replicate, tilt
// shared across the distribution, one BRW run per replicate covering every
// n in the list.
// --------------------------------------------------------------------------

struct BandCheck {
    double anchor_lo = 0.0;
    double anchor_hi = 0.0;
    double iqr_lo = 0.0;
    double iqr_hi = 0.0;
    double iqr_ratio = 0.0;
    bool iqr_ok = false;
    double drift = 0.0;
    double drift_se = 0.0;
    bool drift_ok = false;
    bool pass() const { return iqr_ok && drift_ok; }
};

struct TightnessSummaryRow {
    double anchor = 0.0;  // n or t
    int count = 0;
    double iqr = 0.0, q10 = 0.0, q50 = 0.0, q90 = 0.0;
};

struct TightnessResult {
    ResultTable rows;
    std::vector<TightnessSummaryRow> summary;
    BandCheck band;
    int failures = 0;
    TiltSolution tilt;
};

namespace detail {

inline BandCheck band_check(const std::vector<double>& res_lo, const std::vector<double>& res_hi,
                            double anchor_lo, double anchor_hi, uint64_t seed) {
    BandCheck b;
    b.anchor_lo = anchor_lo;
    b.anchor_hi = anchor_hi;
    EmpiricalDistribution dlo(res_lo), dhi(res_hi);
    b.iqr_lo = dlo.iqr();
    b.iqr_hi = dhi.iqr();
    b.iqr_ratio = b.iqr_hi / b.iqr_lo;
    b.iqr_ok = b.iqr_ratio >= kIqrRatioLo && b.iqr_ratio <= kIqrRatioHi;
    const auto median = [](const std::vector<double>& v) {
        return EmpiricalDistribution(v).quantile(0.5);
    };
    b.drift = median(res_hi) - median(res_lo);
    Rng rng(seed, derive_stream(0xB007ull));
    b.drift_se = bootstrap_se_paired_diff(res_hi, res_lo, median, 1000, rng);
    b.drift_ok = std::fabs(b.drift) <= kDriftSigmas * b.drift_se;
    return b;
}

}  // namespace detail

inline TightnessResult run_tightness_hitting(const ExperimentConfig& cfg) {
    cfg.validate();
    const int64_t n_max = cfg.n_list.back();
    const TiltSolution tilt = solve_tilt(cfg.dist, cfg.M, cfg.tilt_env_samples, cfg.tilt_tol,
                                         derive_stream(cfg.master_seed, 1));

    struct RepOut {
        std::vector<double> h;         // H_n per n in list
        std::vector<double> m;         // m_hat_n
        std::vector<double> p_hat, p_se;
        double env_seed = 0, sim_seed = 0, pruned = 0;
        std::optional<std::string> failure;
    };
    std::vector<RepOut> reps(static_cast<std::size_t>(cfg.replicates));

    const int64_t x_min = -(std::max<int64_t>(cfg.M, cfg.prune_window == kNoPrune
                                                         ? cfg.M
                                                         : cfg.prune_window) +
                            8);
    parallel_for(cfg.replicates, cfg.threads, [&](int r) {
        RepOut& out = reps[static_cast<std::size_t>(r)];
        try {
            const uint64_t env_seed = derive_stream(cfg.master_seed, 101, static_cast<uint64_t>(r));
            const uint64_t pn_seed = derive_stream(cfg.master_seed, 102, static_cast<uint64_t>(r));
            const uint64_t sim_seed = derive_stream(cfg.master_seed, 103, static_cast<uint64_t>(r));
            const Environment env = sample_environment(cfg.dist, x_min, n_max, env_seed);
            const CenteringTable table = centering_table(env, tilt, n_max, cfg.M, 1e-9);
            PnOptions popt;
            popt.max_reps = cfg.pn_max_reps;
            popt.target_rel_se = cfg.pn_target_rel_se;
            const PnTable pn = estimate_pn_prefixes(table, cfg.y0, n_max, pn_seed, popt);

            SimConfig sc;
            sc.prune_window = cfg.prune_window;
            sc.pop_cap = cfg.pop_cap;
            sc.seed = sim_seed;
            const RunRecord run = simulate_hitting(env, n_max, sc);
            if (run.aborted) throw error("simulation aborted: " + run.abort_reason);

            out.env_seed = static_cast<double>(env_seed);
            out.sim_seed = static_cast<double>(sim_seed);
            out.pruned = static_cast<double>(run.pruned);
            for (int64_t n : cfg.n_list) {
                const auto& pe = pn.p[static_cast<std::size_t>(n)];
                if (!(pe.p_hat > 0.0)) throw error("p_hat vanished; increase pn_max_reps");
                out.h.push_back(run.hit_time(n));
                out.m.push_back((table.K[static_cast<std::size_t>(n)] - std::log(pe.p_hat)) /
                                tilt.theta_star);
                out.p_hat.push_back(pe.p_hat);
                out.p_se.push_back(pe.se);
            }
        } catch (const std::exception& e) {
            out.failure = e.what();
        }
    });

    TightnessResult result;
    result.tilt = tilt;
    result.rows.columns = {"n",     "replicate", "env_seed", "sim_seed", "H_n",
                           "m_hat", "residual",  "p_hat",    "p_se",     "pruned"};
    std::vector<std::vector<double>> residuals(cfg.n_list.size());
    for (int r = 0; r < cfg.replicates; ++r) {
        const RepOut& out = reps[static_cast<std::size_t>(r)];
        if (out.failure) {
            ++result.failures;
            continue;
        }
        for (std::size_t i = 0; i < cfg.n_list.size(); ++i) {
            const double res = out.h[i] - out.m[i];
            residuals[i].push_back(res);
            result.rows.rows.push_back({static_cast<double>(cfg.n_list[i]),
                                        static_cast<double>(r), out.env_seed, out.sim_seed,
                                        out.h[i], out.m[i], res, out.p_hat[i], out.p_se[i],
                                        out.pruned});
        }
    }
    if (result.failures * 10 > cfg.replicates)
        throw error("run_tightness_hitting: more than 10% of replicates failed");

    for (std::size_t i = 0; i < cfg.n_list.size(); ++i) {
        EmpiricalDistribution d(residuals[i]);
        result.summary.push_back({static_cast<double>(cfg.n_list[i]),
                                  static_cast<int>(d.n_samples()), d.iqr(), d.quantile(0.1),
                                  d.quantile(0.5), d.quantile(0.9)});
    }

    // anchors: (64, 256) when present, else the ends of the list
    std::size_t lo = 0, hi = cfg.n_list.size() - 1;
    for (std::size_t i = 0; i < cfg.n_list.size(); ++i) {
        if (cfg.n_list[i] == 64) lo = i;
        if (cfg.n_list[i] == 256) hi = i;
    }
    result.band = detail::band_check(residuals[lo], residuals[hi],
                                     static_cast<double>(cfg.n_list[lo]),
                                     static_cast<double>(cfg.n_list[hi]),
                                     derive_stream(cfg.master_seed, 104));
    return result;
}

// --------------------------------------------------------------------------
// Tightness of M_t - m~_t at matched time points.
// --------------------------------------------------------------------------

inline TightnessResult run_tightness_max(const ExperimentConfig& cfg) {
    cfg.validate();
    const TiltSolution tilt = solve_tilt(cfg.dist, cfg.M, cfg.tilt_env_samples, cfg.tilt_tol,
                                         derive_stream(cfg.master_seed, 1));
    std::vector<double> t_list = cfg.t_list;
    if (t_list.empty()) {
        const int64_t lo = cfg.n_list.size() >= 2 ? cfg.n_list[1] : cfg.n_list.front();
        for (int64_t n : {lo, cfg.n_list.back()})
            t_list.push_back(static_cast<double>(n) / tilt.v0);
    }
    const double t_max = t_list.back();
    const int64_t k_max = static_cast<int64_t>(std::ceil(tilt.v0 * t_max)) + 48;
    const int64_t x_min = -(std::max<int64_t>(cfg.M, cfg.prune_window == kNoPrune
                                                         ? cfg.M
                                                         : cfg.prune_window) +
                            8);

    struct RepOut {
        std::vector<double> m_t;       // M_t per grid point
        std::vector<double> m_tilde;
        double env_seed = 0, sim_seed = 0, pruned = 0;
        std::optional<std::string> failure;
    };
    std::vector<RepOut> reps(static_cast<std::size_t>(cfg.replicates));

    parallel_for(cfg.replicates, cfg.threads, [&](int r) {
        RepOut& out = reps[static_cast<std::size_t>(r)];
        try {
            const uint64_t env_seed = derive_stream(cfg.master_seed, 201, static_cast<uint64_t>(r));
            const uint64_t pn_seed = derive_stream(cfg.master_seed, 202, static_cast<uint64_t>(r));
            const uint64_t sim_seed = derive_stream(cfg.master_seed, 203, static_cast<uint64_t>(r));
            const Environment env = sample_environment(cfg.dist, x_min, k_max + 8, env_seed);
            const CenteringTable table = centering_table(env, tilt, k_max, cfg.M, 1e-9);
            PnOptions popt;
            popt.max_reps = cfg.pn_max_reps;
            popt.target_rel_se = cfg.pn_target_rel_se;
            const PnTable pn = estimate_pn_prefixes(table, cfg.y0, k_max, pn_seed, popt);
            const Centering cent = assemble_centering(table, pn.p, tilt.theta_star);

            SimConfig sc;
            sc.prune_window = cfg.prune_window;
            sc.pop_cap = cfg.pop_cap;
            sc.seed = sim_seed;
            const RunRecord run = simulate_until(env, t_max, sc, t_list);
            if (run.aborted) throw error("simulation aborted: " + run.abort_reason);

            out.env_seed = static_cast<double>(env_seed);
            out.sim_seed = static_cast<double>(sim_seed);
            out.pruned = static_cast<double>(run.pruned);
            for (std::size_t g = 0; g < run.grid_t.size(); ++g) {
                out.m_t.push_back(static_cast<double>(run.grid_M[g]));
                out.m_tilde.push_back(static_cast<double>(cent.m_tilde(run.grid_t[g])));
            }
        } catch (const std::exception& e) {
            out.failure = e.what();
        }
    });

    TightnessResult result;
    result.tilt = tilt;
    result.rows.columns = {"t",        "replicate", "env_seed", "sim_seed",
                           "M_t",      "m_tilde",   "residual", "pruned"};
    std::vector<std::vector<double>> residuals(t_list.size());
    for (int r = 0; r < cfg.replicates; ++r) {
        const RepOut& out = reps[static_cast<std::size_t>(r)];
        if (out.failure) {
            ++result.failures;
            continue;
        }
        for (std::size_t g = 0; g < t_list.size(); ++g) {
            const double res = out.m_t[g] - out.m_tilde[g];
            residuals[g].push_back(res);
            result.rows.rows.push_back({t_list[g], static_cast<double>(r), out.env_seed,
                                        out.sim_seed, out.m_t[g], out.m_tilde[g], res,
                                        out.pruned});
        }
    }
    if (result.failures * 10 > cfg.replicates)
        throw error("run_tightness_max: more than 10% of replicates failed");

    for (std::size_t g = 0; g < t_list.size(); ++g) {
        EmpiricalDistribution d(residuals[g]);
        result.summary.push_back({t_list[g], static_cast<int>(d.n_samples()), d.iqr(),
                                  d.quantile(0.1), d.quantile(0.5), d.quantile(0.9)});
    }
    result.band = detail::band_check(residuals.front(), residuals.back(), t_list.front(),
                                     t_list.back(), derive_stream(cfg.master_seed, 204));
    return result;
}

// --------------------------------------------------------------------------
// Many-to-one verification (quenched): expected number of particles whose
// level-hitting times fall in the boxes equals the single-walk expectation
// of exp(int xi) on the same event.
// --------------------------------------------------------------------------

struct Mt1Result {
    double lhs = 0.0, se_lhs = 0.0;
    double rhs = 0.0, se_rhs = 0.0;
    double z = 0.0;
};

inline Mt1Result verify_many_to_one(const Environment& env, const std::vector<double>& c_minus,
                                    const std::vector<double>& c_plus, double t,
                                    long long reps_brw, long long reps_rw, Rng& rng) {
    if (c_minus.size() != c_plus.size())
        throw error("verify_many_to_one: constraint arrays must have equal length");
    for (std::size_t k = 0; k < c_minus.size(); ++k)
        if (c_minus[k] > c_plus[k]) throw error("verify_many_to_one: need c- <= c+");
    const int64_t n = c_minus.empty() ? 0 : static_cast<int64_t>(c_minus.size()) - 1;

    const auto satisfies = [&](const std::vector<double>& hit) {
        for (std::size_t k = 0; k < c_minus.size(); ++k) {
            const double h = hit[k];
            if (std::isnan(h) || h < c_minus[k] || h > c_plus[k]) return false;
        }
        return true;
    };

    RunningStat lhs;
    for (long long r = 0; r < reps_brw; ++r) {
        const auto parts = simulate_particles_exact(env, t, n, rng);
        long long count = 0;
        for (const auto& p : parts)
            if (satisfies(p.hit)) ++count;
        lhs.add(static_cast<double>(count));
    }

    RunningStat rhs;
    std::vector<double> hit(c_minus.size());
    for (long long r = 0; r < reps_rw; ++r) {
        int64_t x = 0;
        double s = 0.0, integral = 0.0;
        std::fill(hit.begin(), hit.end(), std::numeric_limits<double>::quiet_NaN());
        if (!hit.empty()) hit[0] = 0.0;
        while (true) {
            const double dt = rng.exponential(1.0);
            if (s + dt >= t) {
                integral += env.rate(x) * (t - s);
                break;
            }
            integral += env.rate(x) * dt;
            s += dt;
            x += (rng.uniform() < 0.5) ? -1 : 1;
            if (x >= 0 && x < static_cast<int64_t>(hit.size()) &&
                std::isnan(hit[static_cast<std::size_t>(x)]))
                hit[static_cast<std::size_t>(x)] = s;
        }
        rhs.add(std::exp(integral) * (satisfies(hit) ? 1.0 : 0.0));
    }

    Mt1Result out;
    out.lhs = lhs.mean();
    out.se_lhs = lhs.se();
    out.rhs = rhs.mean();
    out.se_rhs = rhs.se();
    const double denom = std::sqrt(out.se_lhs * out.se_lhs + out.se_rhs * out.se_rhs);
    out.z = denom > 0.0 ? std::fabs(out.lhs - out.rhs) / denom : 0.0;
    return out;
}

// Pinned many-to-one cases: one unconstrained Yule check plus box-constrained
// random environments with boxes taken from a pilot particle's hitting times.
struct Mt1Case {
    std::string name;
    double t = 0.0;
    Mt1Result res;
    bool pass = false;
};

inline std::vector<Mt1Case> run_mt1_suite(uint64_t seed, long long reps_brw = 200'000,
                                          long long reps_rw = 400'000, int n_random_cases = 5) {
    std::vector<Mt1Case> cases;

    {
        // constant xi = 0.2: E|N(t)| = e^{beta t}, no constraints
        const Environment env = sample_environment(
            EnvDistribution::two_point(1.0, 0.1, 0.2), -64, 16, derive_stream(seed, 1));
        Rng rng(seed, derive_stream(0x3717ull, 0));
        Mt1Case c;
        c.name = "yule-unconstrained";
        c.t = 5.0;
        c.res = verify_many_to_one(env, {}, {}, c.t, reps_brw / 4, reps_rw / 4, rng);
        c.pass = c.res.z <= kMt1MaxZ;
        cases.push_back(std::move(c));
    }

    const EnvDistribution dist = EnvDistribution::two_point(0.5, 0.1, 0.2);
    const int64_t n = 3;
    const double t = 3.0;
    for (int i = 0; i < n_random_cases; ++i) {
        const Environment env =
            sample_environment(dist, -64, 16, derive_stream(seed, 2, static_cast<uint64_t>(i)));
        // pilot path defines the constraint boxes
        std::vector<double> c_minus, c_plus;
        for (uint64_t attempt = 0;; ++attempt) {
            Rng pilot(seed, derive_stream(0x7107ull, static_cast<uint64_t>(i), attempt));
            const auto parts = simulate_particles_exact(env, t, n, pilot);
            const ExactParticle* found = nullptr;
            for (const auto& p : parts)
                if (!std::isnan(p.hit.back())) {
                    found = &p;
                    break;
                }
            if (found) {
                for (int64_t k = 0; k <= n; ++k) {
                    const double h = found->hit[static_cast<std::size_t>(k)];
                    c_minus.push_back(std::max(0.0, h - 0.75));
                    c_plus.push_back(std::min(t, h + 0.75));
                }
                break;
            }
            if (attempt > 200) throw error("run_mt1_suite: no pilot path reached level n");
        }
        Rng rng(seed, derive_stream(0x3717ull, static_cast<uint64_t>(i + 1)));
        Mt1Case c;
        c.name = "boxes-env" + std::to_string(i);
        c.t = t;
        c.res = verify_many_to_one(env, c_minus, c_plus, t, reps_brw, reps_rw, rng);
        c.pass = c.res.z <= kMt1MaxZ;
        cases.push_back(std::move(c));
    }
    return cases;
}

// --------------------------------------------------------------------------
// p_n decay study: |ln p_n| / ln n across n for several environments.
// --------------------------------------------------------------------------

struct PnDecayResult {
    ResultTable rows;  // env, n, ln_p, se_ln_p
    std::vector<double> mean_ln_p;  // per n
    std::vector<double> ratio;      // |mean ln p_n| / ln n
    double slope = 0.0;
    double slope_se = 0.0;
    double max_over_min = 0.0;
    bool pass = false;
};

inline PnDecayResult pn_decay_study(const EnvDistribution& dist,
                                    const std::vector<int64_t>& n_list, long long reps,
                                    int n_envs, uint64_t master_seed, int M = 48,
                                    long long tilt_env_samples = 200'000, int y0 = 4,
                                    int threads = 1) {
    if (n_list.size() < 3) throw error("pn_decay_study: need at least 3 n values");
    const TiltSolution tilt =
        solve_tilt(dist, M, tilt_env_samples, 1e-8, derive_stream(master_seed, 1));
    const int64_t n_max = n_list.back();

    struct EnvOut {
        std::vector<double> ln_p, se_ln_p;
        double env_seed = 0;
        std::optional<std::string> failure;
    };
    std::vector<EnvOut> outs(static_cast<std::size_t>(n_envs));
    parallel_for(n_envs, threads, [&](int e) {
        EnvOut& out = outs[static_cast<std::size_t>(e)];
        try {
            const uint64_t env_seed = derive_stream(master_seed, 301, static_cast<uint64_t>(e));
            const uint64_t pn_seed = derive_stream(master_seed, 302, static_cast<uint64_t>(e));
            const Environment env = sample_environment(dist, -(M + 8), n_max, env_seed);
            const CenteringTable table = centering_table(env, tilt, n_max, M, 1e-9);
            PnOptions popt;
            popt.max_reps = reps;
            popt.target_rel_se = 0.10;
            const PnTable pn = estimate_pn_prefixes(table, y0, n_max, pn_seed, popt);
            out.env_seed = static_cast<double>(env_seed);
            for (int64_t n : n_list) {
                const auto& pe = pn.p[static_cast<std::size_t>(n)];
                if (!(pe.p_hat > 0.0))
                    throw error("p_hat = 0 at n = " + std::to_string(n) + "; more reps required");
                out.ln_p.push_back(std::log(pe.p_hat));
                out.se_ln_p.push_back(pe.rel_se());
            }
        } catch (const std::exception& ex) {
            out.failure = ex.what();
        }
    });

    PnDecayResult res;
    res.rows.columns = {"env_seed", "n", "ln_p", "se_ln_p"};
    std::vector<RunningStat> acc(n_list.size());
    for (const auto& out : outs) {
        if (out.failure) throw error("pn_decay_study: replicate failed: " + *out.failure);
        for (std::size_t i = 0; i < n_list.size(); ++i) {
            acc[i].add(out.ln_p[i]);
            res.rows.rows.push_back({out.env_seed, static_cast<double>(n_list[i]), out.ln_p[i],
                                     out.se_ln_p[i]});
        }
    }
    std::vector<double> log_n;
    double rmin = HUGE_VAL, rmax = 0.0;
    for (std::size_t i = 0; i < n_list.size(); ++i) {
        res.mean_ln_p.push_back(acc[i].mean());
        log_n.push_back(std::log(static_cast<double>(n_list[i])));
        const double r = std::fabs(acc[i].mean()) / std::log(static_cast<double>(n_list[i]));
        res.ratio.push_back(r);
        rmin = std::min(rmin, r);
        rmax = std::max(rmax, r);
    }
    const LineFit fit = fit_line(log_n, res.mean_ln_p);
    res.slope = fit.slope;
    res.slope_se = fit.slope_se;
    res.max_over_min = rmax / rmin;
    res.pass = res.max_over_min <= kDecayMaxOverMin && res.slope < 0.0;
    return res;
}

// --------------------------------------------------------------------------
// Barrier-ratio study: random-walk-side barrier probabilities with banana
// profiles against the Gaussian p_n, as a function of the starting height.
// --------------------------------------------------------------------------

struct BarrierRatioResult {
    ResultTable rows;  // y, ratio_down(+banana), se, ratio_up(-banana), se (log-scale ses)
    double slope_down = 0.0, slope_down_se = 0.0;
    double slope_up = 0.0, slope_up_se = 0.0;
    bool all_finite = true;
};

inline BarrierRatioResult barrier_ratio_study(const EnvDistribution& dist, int64_t n,
                                              const std::vector<double>& y_list, long long reps,
                                              int n_envs, uint64_t master_seed, int M = 48,
                                              long long tilt_env_samples = 200'000, int y0 = 4,
                                              int threads = 1) {
    const double ymax = std::log(static_cast<double>(n)) * std::log(static_cast<double>(n));
    for (double y : y_list)
        if (y < 4.0 || y > ymax)
            throw error("barrier_ratio_study: y_list must lie in [4, ln(n)^2]");
    const TiltSolution tilt =
        solve_tilt(dist, M, tilt_env_samples, 1e-8, derive_stream(master_seed, 1));

    struct EnvOut {
        std::vector<double> ln_ratio_up, se_up, ln_ratio_down, se_down;
        std::optional<std::string> failure;
    };
    std::vector<EnvOut> outs(static_cast<std::size_t>(n_envs));
    parallel_for(n_envs, threads, [&](int e) {
        EnvOut& out = outs[static_cast<std::size_t>(e)];
        try {
            const uint64_t env_seed = derive_stream(master_seed, 401, static_cast<uint64_t>(e));
            const uint64_t pn_seed = derive_stream(master_seed, 402, static_cast<uint64_t>(e));
            const uint64_t rw_seed = derive_stream(master_seed, 403, static_cast<uint64_t>(e));
            const Environment env = sample_environment(dist, -(M + 8), n, env_seed);
            const CenteringTable table = centering_table(env, tilt, n, M, 1e-9);
            const ProbEstimate pn = estimate_p_n(table, y0, n, 2'000'000, pn_seed);
            if (!(pn.p_hat > 0.0)) throw error("p_n estimate vanished");
            const double delta = choose_banana_delta(table, pn.p_hat);
            const BarrierProfile up = banana_up(n, delta, table.xi2);
            const BarrierProfile down = banana_down(n, delta, table.xi2);
            const BarrierProfile m_up = barrier_shape_m(table, pn.p_hat, &up);
            const BarrierProfile m_down = barrier_shape_m(table, pn.p_hat, &down);
            const PhiProfile phi = phi_profile(env, tilt.eta_bar, n, M, 1e-9);

            for (std::size_t iy = 0; iy < y_list.size(); ++iy) {
                for (int variant = 0; variant < 2; ++variant) {
                    BarrierEvent ev;
                    ev.start_y = y_list[iy];
                    ev.j_lo = y0 - 1;
                    ev.j_hi = y0;
                    ev.profile = variant == 0 ? m_up : m_down;
                    Rng rng(rw_seed, derive_stream(static_cast<uint64_t>(iy), 7,
                                                   static_cast<uint64_t>(variant)));
                    const ProbEstimate pe =
                        estimate_barrier_prob_rw(env, tilt, phi, ev, reps, rng);
                    if (!(pe.p_hat > 0.0))
                        throw error("barrier probability vanished at y = " +
                                    std::to_string(y_list[iy]));
                    const double ln_ratio = std::log(pe.p_hat / pn.p_hat);
                    const double se =
                        std::sqrt(pe.rel_se() * pe.rel_se() + pn.rel_se() * pn.rel_se());
                    if (variant == 0) {
                        out.ln_ratio_up.push_back(ln_ratio);
                        out.se_up.push_back(se);
                    } else {
                        out.ln_ratio_down.push_back(ln_ratio);
                        out.se_down.push_back(se);
                    }
                }
            }
        } catch (const std::exception& ex) {
            out.failure = ex.what();
        }
    });

    BarrierRatioResult res;
    res.rows.columns = {"y", "ln_ratio_breve", "se_breve", "ln_ratio_frown", "se_frown"};
    std::vector<double> log_y, mean_up, mean_down, se_up, se_down;
    for (std::size_t iy = 0; iy < y_list.size(); ++iy) {
        RunningStat up, down;
        double vu = 0.0, vd = 0.0;
        int count = 0;
        for (const auto& out : outs) {
            if (out.failure) throw error("barrier_ratio_study: " + *out.failure);
            up.add(out.ln_ratio_up[iy]);
            down.add(out.ln_ratio_down[iy]);
            vu += out.se_up[iy] * out.se_up[iy];
            vd += out.se_down[iy] * out.se_down[iy];
            ++count;
        }
        log_y.push_back(std::log(y_list[iy]));
        mean_up.push_back(up.mean());
        mean_down.push_back(down.mean());
        se_up.push_back(std::sqrt(vu) / count);
        se_down.push_back(std::sqrt(vd) / count);
        if (!std::isfinite(up.mean()) || !std::isfinite(down.mean())) res.all_finite = false;
        res.rows.rows.push_back({y_list[iy], up.mean(), se_up.back(), down.mean(),
                                 se_down.back()});
    }
    const LineFit fu = fit_line(log_y, mean_up, se_up);
    const LineFit fd = fit_line(log_y, mean_down, se_down);
    res.slope_up = fu.slope;
    res.slope_up_se = fu.slope_se;
    res.slope_down = fd.slope;
    res.slope_down_se = fd.slope_se;
    return res;
}

}  // namespace brwre
