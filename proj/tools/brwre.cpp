// Command-line front end: environment generation, tilt solving, centering
// tables, barrier probabilities, BRW simulation and the experiment runners.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "brwre/barrier.hpp"
#include "brwre/brw.hpp"
#include "brwre/env.hpp"
#include "brwre/experiments.hpp"
#include "brwre/stats.hpp"
#include "brwre/tilt.hpp"
#include "brwre/walker.hpp"

using nlohmann::json;

namespace {

brwre::EnvDistribution parse_dist(const std::string& spec) {
    const auto colon = spec.find(':');
    if (colon == std::string::npos)
        throw brwre::error("distribution spec must look like kind:params");
    const std::string kind = spec.substr(0, colon);
    const std::string params = spec.substr(colon + 1);
    std::vector<std::string> parts;
    std::stringstream ss(params);
    std::string item;
    while (std::getline(ss, item, ',')) parts.push_back(item);
    if (kind == "two_point") {
        if (parts.size() != 3) throw brwre::error("two_point needs p,lo,hi");
        return brwre::EnvDistribution::two_point(std::stod(parts[0]), std::stod(parts[1]),
                                                 std::stod(parts[2]));
    }
    if (kind == "uniform") {
        if (parts.size() != 2) throw brwre::error("uniform needs lo,hi");
        return brwre::EnvDistribution::uniform(std::stod(parts[0]), std::stod(parts[1]));
    }
    if (kind == "discrete") {
        std::vector<double> values, weights;
        for (const auto& p : parts) {
            const auto at = p.find('@');
            if (at == std::string::npos) throw brwre::error("discrete items are value@weight");
            values.push_back(std::stod(p.substr(0, at)));
            weights.push_back(std::stod(p.substr(at + 1)));
        }
        return brwre::EnvDistribution::discrete(values, weights);
    }
    throw brwre::error("unknown distribution kind '" + kind + "'");
}

std::pair<int64_t, int64_t> parse_range(const std::string& spec) {
    const auto colon = spec.find(':');
    if (colon == std::string::npos) throw brwre::error("range must look like min:max");
    return {std::stoll(spec.substr(0, colon)), std::stoll(spec.substr(colon + 1))};
}

json read_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw brwre::error("cannot open '" + path + "'");
    json j;
    in >> j;
    return j;
}

void write_json(const json& j, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw brwre::error("cannot open '" + path + "' for writing");
    out << j.dump(2) << "\n";
}

void write_or_print(const json& j, const std::string& path) {
    if (path.empty())
        std::cout << j.dump(2) << "\n";
    else
        write_json(j, path);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"brwre: branching random walk in random environment lab"};
    app.require_subcommand(1);

    // ---- gen-env ----
    std::string ge_dist = "two_point:0.5,0.1,0.2", ge_range = "-64:64", ge_out;
    uint64_t ge_seed = 1;
    auto* ge = app.add_subcommand("gen-env", "sample and store an environment");
    ge->add_option("--dist", ge_dist, "kind:params");
    ge->add_option("--range", ge_range, "x_min:x_max");
    ge->add_option("--seed", ge_seed);
    ge->add_option("--out", ge_out)->required();

    // ---- tilt ----
    std::string ti_dist = "two_point:0.5,0.1,0.2", ti_out;
    int ti_M = 48;
    long long ti_samples = 200'000;
    double ti_tol = 1e-8;
    uint64_t ti_seed = 1;
    auto* ti = app.add_subcommand("tilt", "solve the tilt closure for a distribution");
    ti->add_option("--dist", ti_dist);
    ti->add_option("--M", ti_M);
    ti->add_option("--samples", ti_samples);
    ti->add_option("--tol", ti_tol);
    ti->add_option("--seed", ti_seed);
    ti->add_option("--out", ti_out);

    // ---- centering ----
    std::string ce_env, ce_tilt, ce_out;
    int64_t ce_n = 64;
    int ce_M = 48;
    auto* ce = app.add_subcommand("centering", "per-environment centering table");
    ce->add_option("--env", ce_env)->required();
    ce->add_option("--tilt", ce_tilt)->required();
    ce->add_option("--n", ce_n);
    ce->add_option("--M", ce_M);
    ce->add_option("--out", ce_out);

    // ---- pn ----
    std::string pn_table, pn_out;
    int pn_y0 = 4;
    long long pn_reps = 4'000'000;
    double pn_rel = 0.05;
    uint64_t pn_seed = 1;
    bool pn_all = false;
    auto* pn = app.add_subcommand("pn", "barrier probability p_n for a centering table");
    pn->add_option("--table", pn_table)->required();
    pn->add_option("--y0", pn_y0);
    pn->add_option("--reps", pn_reps);
    pn->add_option("--rel-se", pn_rel);
    pn->add_option("--seed", pn_seed);
    pn->add_flag("--all", pn_all, "emit the whole prefix table p_0..p_n");
    pn->add_option("--out", pn_out);

    // ---- centering-assemble ----
    std::string ca_table, ca_pn, ca_out = "m.csv";
    auto* ca = app.add_subcommand("centering-assemble", "m_k table as CSV");
    ca->add_option("--table", ca_table)->required();
    ca->add_option("--pn", ca_pn)->required();
    ca->add_option("--out", ca_out);

    // ---- profile ----
    std::string pr_table, pr_out;
    std::string pr_banana = "none";
    double pr_phat = 1.0, pr_delta = 0.1, pr_y = 0.0, pr_x = 0.0;
    std::string pr_kind = "m";
    auto* pr = app.add_subcommand("profile", "build a barrier profile file");
    pr->add_option("--table", pr_table)->required();
    pr->add_option("--p-hat", pr_phat)->required();
    pr->add_option("--banana", pr_banana, "up|down|none");
    pr->add_option("--delta", pr_delta);
    pr->add_option("--kind", pr_kind, "m (barrier shape) or t (absolute barrier)");
    pr->add_option("--y", pr_y);
    pr->add_option("--x", pr_x);
    pr->add_option("--out", pr_out)->required();

    // ---- rw-barrier ----
    std::string rb_env, rb_tilt, rb_profile, rb_out;
    double rb_y = 4.0, rb_jlo = 3.0, rb_jhi = 4.0;
    long long rb_reps = 100'000;
    int rb_M = 48;
    uint64_t rb_seed = 1;
    auto* rb = app.add_subcommand("rw-barrier", "random-walk-side barrier probability");
    rb->add_option("--env", rb_env)->required();
    rb->add_option("--tilt", rb_tilt)->required();
    rb->add_option("--profile", rb_profile)->required();
    rb->add_option("--y", rb_y);
    rb->add_option("--j-lo", rb_jlo);
    rb->add_option("--j-hi", rb_jhi);
    rb->add_option("--reps", rb_reps);
    rb->add_option("--M", rb_M);
    rb->add_option("--seed", rb_seed);
    rb->add_option("--out", rb_out);

    // ---- simulate ----
    std::string si_env, si_out, si_grid;
    int64_t si_n = -1, si_prune = brwre::kNoPrune;
    double si_tend = -1.0;
    long long si_cap = brwre::kNoPopCap;
    uint64_t si_seed = 1;
    auto* si = app.add_subcommand("simulate", "event-driven quenched BRW run");
    si->add_option("--env", si_env)->required();
    si->add_option("--n", si_n, "stop at first hit of this level");
    si->add_option("--t-end", si_tend, "stop at this time");
    si->add_option("--grid", si_grid, "comma-separated sample times (with --t-end)");
    si->add_option("--prune", si_prune);
    si->add_option("--pop-cap", si_cap);
    si->add_option("--seed", si_seed);
    si->add_option("--out", si_out);

    // ---- experiment ----
    std::string ex_kind, ex_config, ex_outdir = ".";
    auto* ex = app.add_subcommand("experiment", "annealed experiment runners");
    ex->add_option("kind", ex_kind, "tightness-h|tightness-m|mt1|pn-decay|barrier-ratio")
        ->required();
    ex->add_option("--config", ex_config)->required();
    ex->add_option("--out-dir", ex_outdir);

    CLI11_PARSE(app, argc, argv);

    try {
        if (*ge) {
            const auto [lo, hi] = parse_range(ge_range);
            const brwre::Environment env =
                brwre::sample_environment(parse_dist(ge_dist), lo, hi, ge_seed);
            brwre::save_environment(env, ge_out);
            std::cout << "wrote " << ge_out << " (" << env.rates().size() << " sites)\n";
        } else if (*ti) {
            const brwre::TiltSolution sol =
                brwre::solve_tilt(parse_dist(ti_dist), ti_M, ti_samples, ti_tol, ti_seed);
            json j = sol;
            write_or_print(j, ti_out);
            std::cerr << "eta_bar=" << sol.eta_bar << " v0=" << sol.v0
                      << " residual=" << sol.residual << " argmax_ok=" << sol.argmax_ok << "\n";
        } else if (*ce) {
            const brwre::Environment env = brwre::load_environment(ce_env);
            const brwre::TiltSolution tilt = read_json(ce_tilt).get<brwre::TiltSolution>();
            const brwre::CenteringTable table =
                brwre::centering_table(env, tilt, ce_n, ce_M, 1e-9);
            write_or_print(json(table), ce_out);
        } else if (*pn) {
            const brwre::CenteringTable table = read_json(pn_table).get<brwre::CenteringTable>();
            brwre::PnOptions opt;
            opt.max_reps = pn_reps;
            opt.target_rel_se = pn_rel;
            const brwre::PnTable t =
                brwre::estimate_pn_prefixes(table, pn_y0, table.n, pn_seed, opt);
            json j;
            if (pn_all) {
                std::vector<double> ph, se;
                for (const auto& e : t.p) {
                    ph.push_back(e.p_hat);
                    se.push_back(e.se);
                }
                j = {{"p_hat", ph}, {"se", se}, {"reps", t.reps}, {"y0", pn_y0},
                     {"target_met", t.target_met}};
            } else {
                const auto& e = t.p.back();
                j = {{"p_hat", e.p_hat}, {"se", e.se}, {"reps", t.reps},
                     {"target_met", t.target_met}};
                if (!t.target_met) j["suggested_reps"] = t.suggested_reps;
            }
            write_or_print(j, pn_out);
        } else if (*ca) {
            const brwre::CenteringTable table = read_json(ca_table).get<brwre::CenteringTable>();
            const json pj = read_json(ca_pn);
            const auto ph = pj.at("p_hat").get<std::vector<double>>();
            const auto se = pj.at("se").get<std::vector<double>>();
            std::vector<brwre::ProbEstimate> est(ph.size());
            for (std::size_t i = 0; i < ph.size(); ++i) {
                est[i].p_hat = ph[i];
                est[i].se = se[i];
            }
            const brwre::Centering cent =
                brwre::assemble_centering(table, est, table.theta_star);
            brwre::ResultTable out;
            out.columns = {"k", "K_k", "W_k", "p_hat_k", "m_k"};
            for (std::size_t k = 0; k < cent.m.size(); ++k)
                out.rows.push_back({static_cast<double>(k), table.K[k], table.W[k], ph[k],
                                    cent.m[k]});
            brwre::emit_results(out, "csv", ca_out);
            std::cout << "wrote " << ca_out << "\n";
        } else if (*pr) {
            const brwre::CenteringTable table = read_json(pr_table).get<brwre::CenteringTable>();
            const brwre::BarrierProfile* banana = nullptr;
            brwre::BarrierProfile b;
            if (pr_banana == "up") {
                b = brwre::banana_up(table.n, pr_delta, table.xi2);
                banana = &b;
            } else if (pr_banana == "down") {
                b = brwre::banana_down(table.n, pr_delta, table.xi2);
                banana = &b;
            } else if (pr_banana != "none") {
                throw brwre::error("--banana must be up|down|none");
            }
            brwre::BarrierProfile prof =
                pr_kind == "t" ? brwre::profile_t_ny(table, pr_phat, table.theta_star, pr_y,
                                                     pr_x, banana)
                               : brwre::barrier_shape_m(table, pr_phat, banana);
            write_json(json(prof), pr_out);
            std::cout << "wrote " << pr_out << "\n";
        } else if (*rb) {
            const brwre::Environment env = brwre::load_environment(rb_env);
            const brwre::TiltSolution tilt = read_json(rb_tilt).get<brwre::TiltSolution>();
            const brwre::BarrierProfile prof = read_json(rb_profile).get<brwre::BarrierProfile>();
            const brwre::PhiProfile phi =
                brwre::phi_profile(env, tilt.eta_bar, prof.n, rb_M, 1e-9);
            brwre::BarrierEvent ev;
            ev.start_y = rb_y;
            ev.j_lo = rb_jlo;
            ev.j_hi = rb_jhi;
            ev.profile = prof;
            brwre::Rng rng(rb_seed, brwre::derive_stream(0x7B57ull));
            brwre::WalkerStats stats;
            const brwre::ProbEstimate pe =
                brwre::estimate_barrier_prob_rw(env, tilt, phi, ev, rb_reps, rng, &stats);
            json j = {{"p_hat", pe.p_hat},
                      {"se", pe.se},
                      {"reps", pe.reps},
                      {"truncation_events", stats.truncation_events}};
            write_or_print(j, rb_out);
        } else if (*si) {
            const brwre::Environment env = brwre::load_environment(si_env);
            brwre::SimConfig sc;
            sc.prune_window = si_prune;
            sc.pop_cap = si_cap;
            sc.seed = si_seed;
            brwre::RunRecord run;
            if (si_n > 0) {
                run = brwre::simulate_hitting(env, si_n, sc);
            } else if (si_tend >= 0.0) {
                std::vector<double> grid;
                if (!si_grid.empty()) {
                    std::stringstream ss(si_grid);
                    std::string item;
                    while (std::getline(ss, item, ',')) grid.push_back(std::stod(item));
                } else {
                    grid.push_back(si_tend);
                }
                run = brwre::simulate_until(env, si_tend, sc, grid);
            } else {
                throw brwre::error("simulate: need --n or --t-end");
            }
            write_or_print(json(run), si_out);
        } else if (*ex) {
            brwre::ExperimentConfig cfg = read_json(ex_config).get<brwre::ExperimentConfig>();
            bool pass = true;
            if (ex_kind == "tightness-h" || ex_kind == "tightness-m") {
                const brwre::TightnessResult res = ex_kind == "tightness-h"
                                                       ? brwre::run_tightness_hitting(cfg)
                                                       : brwre::run_tightness_max(cfg);
                brwre::emit_results(res.rows, "csv", ex_outdir + "/" + ex_kind + "_rows.csv");
                json summary = json::array();
                for (const auto& s : res.summary)
                    summary.push_back({{"anchor", s.anchor},
                                       {"count", s.count},
                                       {"iqr", s.iqr},
                                       {"q10", s.q10},
                                       {"q50", s.q50},
                                       {"q90", s.q90}});
                json j = {{"summary", summary},
                          {"failures", res.failures},
                          {"band",
                           {{"anchor_lo", res.band.anchor_lo},
                            {"anchor_hi", res.band.anchor_hi},
                            {"iqr_ratio", res.band.iqr_ratio},
                            {"iqr_ok", res.band.iqr_ok},
                            {"drift", res.band.drift},
                            {"drift_se", res.band.drift_se},
                            {"drift_ok", res.band.drift_ok}}},
                          {"eta_bar", res.tilt.eta_bar},
                          {"v0", res.tilt.v0}};
                write_json(j, ex_outdir + "/" + ex_kind + "_summary.json");
                std::cout << j.dump(2) << "\n";
                pass = res.band.pass();
            } else if (ex_kind == "mt1") {
                const auto cases = brwre::run_mt1_suite(cfg.master_seed);
                json j = json::array();
                for (const auto& c : cases) {
                    j.push_back({{"name", c.name},
                                 {"t", c.t},
                                 {"lhs", c.res.lhs},
                                 {"rhs", c.res.rhs},
                                 {"z", c.res.z},
                                 {"pass", c.pass}});
                    pass = pass && c.pass;
                    std::cout << (c.pass ? "[pass] " : "[FAIL] ") << c.name << " lhs=" << c.res.lhs
                              << " rhs=" << c.res.rhs << " z=" << c.res.z << "\n";
                }
                write_json(j, ex_outdir + "/mt1_results.json");
            } else if (ex_kind == "pn-decay") {
                const brwre::PnDecayResult res = brwre::pn_decay_study(
                    cfg.dist, cfg.n_list, cfg.pn_max_reps, cfg.replicates, cfg.master_seed,
                    cfg.M, cfg.tilt_env_samples, cfg.y0, cfg.threads);
                brwre::emit_results(res.rows, "csv", ex_outdir + "/pn_decay_rows.csv");
                json j = {{"slope", res.slope},
                          {"slope_se", res.slope_se},
                          {"ratio", res.ratio},
                          {"max_over_min", res.max_over_min},
                          {"pass", res.pass}};
                write_json(j, ex_outdir + "/pn_decay_summary.json");
                std::cout << j.dump(2) << "\n";
                pass = res.pass;
            } else if (ex_kind == "barrier-ratio") {
                if (cfg.n_list.size() < 2)
                    throw brwre::error("barrier-ratio needs two n values in n_list");
                const std::vector<double> y_list = {4, 6, 8, 12, 16};
                const int64_t na = cfg.n_list[cfg.n_list.size() - 2];
                const int64_t nb = cfg.n_list.back();
                const auto ra = brwre::barrier_ratio_study(cfg.dist, na, y_list, cfg.pn_max_reps,
                                                           cfg.replicates, cfg.master_seed,
                                                           cfg.M, cfg.tilt_env_samples, cfg.y0,
                                                           cfg.threads);
                const auto rb2 = brwre::barrier_ratio_study(cfg.dist, nb, y_list, cfg.pn_max_reps,
                                                            cfg.replicates, cfg.master_seed + 1,
                                                            cfg.M, cfg.tilt_env_samples, cfg.y0,
                                                            cfg.threads);
                brwre::emit_results(ra.rows, "csv",
                                    ex_outdir + "/barrier_ratio_n" + std::to_string(na) + ".csv");
                brwre::emit_results(rb2.rows, "csv",
                                    ex_outdir + "/barrier_ratio_n" + std::to_string(nb) + ".csv");
                const double comb_up =
                    std::sqrt(ra.slope_up_se * ra.slope_up_se + rb2.slope_up_se * rb2.slope_up_se);
                const double comb_down = std::sqrt(ra.slope_down_se * ra.slope_down_se +
                                                   rb2.slope_down_se * rb2.slope_down_se);
                const bool up_ok = std::fabs(ra.slope_up - rb2.slope_up) <= 3.0 * comb_up;
                const bool down_ok = std::fabs(ra.slope_down - rb2.slope_down) <= 3.0 * comb_down;
                pass = up_ok && down_ok && ra.all_finite && rb2.all_finite;
                json j = {{"n_a", na},
                          {"n_b", nb},
                          {"slope_up_a", ra.slope_up},
                          {"slope_up_b", rb2.slope_up},
                          {"slope_down_a", ra.slope_down},
                          {"slope_down_b", rb2.slope_down},
                          {"up_ok", up_ok},
                          {"down_ok", down_ok},
                          {"pass", pass}};
                write_json(j, ex_outdir + "/barrier_ratio_summary.json");
                std::cout << j.dump(2) << "\n";
            } else {
                throw brwre::error("unknown experiment kind '" + ex_kind + "'");
            }
            return pass ? 0 : 1;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
