#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include <json.hpp>

#include "brwre/env.hpp"
#include "brwre/rng.hpp"
#include "brwre/stats.hpp"

namespace brwre {

namespace detail {

// Fenwick tree over site occupancy counts with prefix-rank search.
class FenwickI64 {
public:
    explicit FenwickI64(std::size_t n = 0) : tree_(n + 1, 0) {}
    void add(std::size_t i, long long delta) {
        for (std::size_t j = i + 1; j < tree_.size(); j += j & (~j + 1)) tree_[j] += delta;
    }
    // smallest i with prefix_sum(0..i) > rank
    std::size_t find(long long rank) const {
        std::size_t pos = 0;
        std::size_t mask = highest_bit(tree_.size() - 1);
        while (mask > 0) {
            const std::size_t next = pos + mask;
            if (next < tree_.size() && tree_[next] <= rank) {
                pos = next;
                rank -= tree_[next];
            }
            mask >>= 1;
        }
        return pos;  // 0-based index
    }

private:
    static std::size_t highest_bit(std::size_t n) {
        std::size_t b = 1;
        while ((b << 1) <= n) b <<= 1;
        return b;
    }
    std::vector<long long> tree_;
};

class FenwickF64 {
public:
    explicit FenwickF64(std::size_t n = 0) : tree_(n + 1, 0.0) {}
    void add(std::size_t i, double delta) {
        for (std::size_t j = i + 1; j < tree_.size(); j += j & (~j + 1)) tree_[j] += delta;
    }
    double total() const {
        double s = 0.0;
        std::size_t j = tree_.size() - 1;
        while (j > 0) {
            s += tree_[j];
            j -= j & (~j + 1);
        }
        return s;
    }
    std::size_t find(double target) const {
        std::size_t pos = 0;
        std::size_t mask = highest_bit(tree_.size() - 1);
        while (mask > 0) {
            const std::size_t next = pos + mask;
            if (next < tree_.size() && tree_[next] <= target) {
                pos = next;
                target -= tree_[next];
            }
            mask >>= 1;
        }
        return pos;
    }

private:
    static std::size_t highest_bit(std::size_t n) {
        std::size_t b = 1;
        while ((b << 1) <= n) b <<= 1;
        return b;
    }
    std::vector<double> tree_;
};

}  // namespace detail

constexpr int64_t kNoPrune = std::numeric_limits<int64_t>::max();
constexpr long long kNoPopCap = std::numeric_limits<long long>::max();

struct SimConfig {
    int64_t prune_window = kNoPrune;  // sites behind the running max kept alive
    long long pop_cap = kNoPopCap;    // hard abort bound
    uint64_t seed = 0;

    void validate() const {
        if (prune_window < 1) throw error("SimConfig: prune_window must be >= 1");
        if (pop_cap < 1) throw error("SimConfig: pop_cap must be >= 1");
    }
};

struct RunRecord {
    uint64_t env_seed = 0;
    uint64_t sim_seed = 0;
    int64_t n_target = -1;  // -1 for time-terminated runs
    double t_end = -1.0;    // -1 for hitting-terminated runs

    // first_hit[k] = first time any particle occupies k; NaN if never
    std::vector<double> first_hit;
    std::vector<double> grid_t;
    std::vector<int64_t> grid_M;      // max occupied site at grid times
    std::vector<long long> grid_N0;   // particles at the origin at grid times
    std::vector<long long> grid_pop;

    long long pruned = 0;
    long long final_pop = 0;
    int64_t max_pos = 0;
    double final_t = 0.0;
    bool aborted = false;
    std::string abort_reason;

    bool has_hit(int64_t k) const {
        return k >= 0 && k < static_cast<int64_t>(first_hit.size()) &&
               !std::isnan(first_hit[static_cast<std::size_t>(k)]);
    }
    double hit_time(int64_t k) const {
        if (!has_hit(k)) throw error("RunRecord: level " + std::to_string(k) + " never hit");
        return first_hit[static_cast<std::size_t>(k)];
    }
};

inline void to_json(nlohmann::json& j, const RunRecord& r) {
    nlohmann::json hits = nlohmann::json::array();
    for (double h : r.first_hit) {
        if (std::isnan(h))
            hits.push_back(nullptr);
        else
            hits.push_back(h);
    }
    j = {{"version", 1},
         {"env_seed", r.env_seed},
         {"sim_seed", r.sim_seed},
         {"n_target", r.n_target},
         {"t_end", r.t_end},
         {"first_hit", hits},
         {"grid_t", r.grid_t},
         {"grid_M", r.grid_M},
         {"grid_N0", r.grid_N0},
         {"grid_pop", r.grid_pop},
         {"pruned", r.pruned},
         {"final_pop", r.final_pop},
         {"max_pos", r.max_pos},
         {"final_t", r.final_t},
         {"aborted", r.aborted},
         {"abort_reason", r.abort_reason}};
}
inline void from_json(const nlohmann::json& j, RunRecord& r) {
    j.at("env_seed").get_to(r.env_seed);
    j.at("sim_seed").get_to(r.sim_seed);
    j.at("n_target").get_to(r.n_target);
    j.at("t_end").get_to(r.t_end);
    r.first_hit.clear();
    for (const auto& v : j.at("first_hit"))
        r.first_hit.push_back(v.is_null() ? std::numeric_limits<double>::quiet_NaN()
                                          : v.get<double>());
    j.at("grid_t").get_to(r.grid_t);
    j.at("grid_M").get_to(r.grid_M);
    j.at("grid_N0").get_to(r.grid_N0);
    j.at("grid_pop").get_to(r.grid_pop);
    j.at("pruned").get_to(r.pruned);
    j.at("final_pop").get_to(r.final_pop);
    j.at("max_pos").get_to(r.max_pos);
    j.at("final_t").get_to(r.final_t);
    j.at("aborted").get_to(r.aborted);
    j.at("abort_reason").get_to(r.abort_reason);
}

// --------------------------------------------------------------------------
// Event-driven quenched BRW over a site-occupancy array. One global
// exponential clock runs at the total event rate pop + sum(counts * xi);
// the event site is drawn by Fenwick prefix search. Particles that fall
// prune_window or more behind the running maximum are dropped and counted.
// --------------------------------------------------------------------------

class ParticleSystem {
public:
    ParticleSystem(const Environment& env, const SimConfig& cfg, int64_t hit_levels)
        : env_(env),
          cfg_(cfg),
          x_lo_(env.x_min()),
          x_hi_(env.x_max()),
          size_(static_cast<std::size_t>(x_hi_ - x_lo_ + 1)),
          counts_(size_),
          occupancy_(size_),
          branch_rates_(size_),
          rng_(cfg.seed, derive_stream(0x51Bull)) {
        cfg.validate();
        if (x_lo_ > 0 || x_hi_ < 0) throw error("ParticleSystem: window must contain 0");
        left_live_ = x_lo_;
        record_.sim_seed = cfg.seed;
        record_.env_seed = env.seed();
        record_.first_hit.assign(static_cast<std::size_t>(hit_levels + 1),
                                 std::numeric_limits<double>::quiet_NaN());
        record_.first_hit[0] = 0.0;
        add_particle(0);
    }

    // Run until any particle reaches n_target or the population cap trips.
    void run_to_level(int64_t n_target) {
        if (n_target < 1) throw error("run_to_level: n_target must be >= 1");
        if (n_target - 1 > x_hi_)
            throw error("run_to_level: environment window too short on the right");
        record_.n_target = n_target;
        for (;;) {
            if (!step(n_target, std::numeric_limits<double>::infinity(), nullptr)) return;
        }
    }

    // Run until t_end, sampling (M_t, N(t,0), pop) at the grid times.
    void run_until(double t_end, const std::vector<double>& grid) {
        if (!(t_end >= 0.0)) throw error("run_until: t_end must be >= 0");
        record_.t_end = t_end;
        grid_ = grid;
        std::sort(grid_.begin(), grid_.end());
        grid_next_ = 0;
        for (;;) {
            if (!step(-1, t_end, &grid_)) return;
        }
    }

    const RunRecord& record() const { return record_; }
    RunRecord take_record() {
        record_.final_pop = pop_;
        record_.final_t = t_;
        record_.max_pos = max_pos_;
        return record_;
    }

private:
    void add_particle(int64_t x) {
        const std::size_t i = idx(x);
        counts_.add(i, 1);
        ++occupancy_[i];
        branch_rates_.add(i, env_.rate(x));
        ++pop_;
    }
    void remove_particle(int64_t x) {
        const std::size_t i = idx(x);
        counts_.add(i, -1);
        --occupancy_[i];
        branch_rates_.add(i, -env_.rate(x));
        --pop_;
    }
    std::size_t idx(int64_t x) const { return static_cast<std::size_t>(x - x_lo_); }
    int64_t site(std::size_t i) const { return x_lo_ + static_cast<int64_t>(i); }

    int64_t max_occupied() const {
        int64_t x = max_pos_;
        while (x >= x_lo_ && occupancy_[idx(x)] == 0) --x;
        return x;
    }

    void record_grid_points(double up_to) {
        while (grid_next_ < grid_.size() && grid_[grid_next_] <= up_to) {
            record_.grid_t.push_back(grid_[grid_next_]);
            record_.grid_M.push_back(max_occupied());
            record_.grid_N0.push_back(0 >= x_lo_ && 0 <= x_hi_ ? occupancy_[idx(0)] : 0);
            record_.grid_pop.push_back(pop_);
            ++grid_next_;
        }
    }

    void prune_behind() {
        if (cfg_.prune_window == kNoPrune) return;
        const int64_t line = max_pos_ - cfg_.prune_window;
        while (left_live_ < line) {
            if (left_live_ >= x_lo_) {
                const long long c = occupancy_[idx(left_live_)];
                if (c > 0) {
                    counts_.add(idx(left_live_), -c);
                    branch_rates_.add(idx(left_live_), -env_.rate(left_live_) *
                                                            static_cast<double>(c));
                    occupancy_[idx(left_live_)] = 0;
                    pop_ -= c;
                    record_.pruned += c;
                }
            }
            ++left_live_;
        }
    }

    // One event; returns false when the run is over.
    bool step(int64_t n_target, double t_end, std::vector<double>* grid) {
        const double branch_total = branch_rates_.total();
        const double total_rate = static_cast<double>(pop_) + branch_total;
        const double dt = rng_.exponential(total_rate);
        const double t_next = t_ + dt;

        if (grid && t_next > t_end) {
            record_grid_points(t_end);
            t_ = t_end;
            return false;
        }
        if (grid) record_grid_points(std::min(t_next, t_end));

        const double u = rng_.uniform() * total_rate;
        t_ = t_next;

        if (u < static_cast<double>(pop_)) {
            // jump event
            const long long rank = std::min(static_cast<long long>(u),
                                            pop_ - 1);
            int64_t x = site(counts_.find(rank));
            const int64_t y = x + ((rng_.uniform() < 0.5) ? -1 : 1);
            if (n_target >= 0 && y == n_target) {
                // first passage of the target level ends the run
                record_.first_hit[static_cast<std::size_t>(y)] = t_;
                max_pos_ = y;
                return false;
            }
            if (y > x_hi_) {
                record_.aborted = true;
                record_.abort_reason = "environment window exceeded on the right at site " +
                                       std::to_string(y);
                return false;
            }
            remove_particle(x);
            if (y < x_lo_ || y < left_live_) {
                // fell off the stored window or behind the prune line
                ++record_.pruned;
            } else {
                add_particle(y);
                if (y > max_pos_) {
                    max_pos_ = y;
                    if (y >= 0 && y < static_cast<int64_t>(record_.first_hit.size()))
                        record_.first_hit[static_cast<std::size_t>(y)] = t_;
                    prune_behind();
                }
            }
            if (pop_ == 0) {
                record_.aborted = true;
                record_.abort_reason = "population emptied by pruning";
                return false;
            }
        } else {
            // branch event: pick site weighted by counts * xi
            std::size_t i = branch_rates_.find(u - static_cast<double>(pop_));
            if (i >= size_ || occupancy_[i] == 0) {
                // float boundary: fall back to the rightmost occupied site
                i = idx(max_occupied());
            }
            add_particle(site(i));
            if (pop_ > cfg_.pop_cap) {
                record_.aborted = true;
                record_.abort_reason = "population cap exceeded";
                return false;
            }
        }
        return true;
    }

    const Environment& env_;
    SimConfig cfg_;
    int64_t x_lo_, x_hi_;
    std::size_t size_;
    detail::FenwickI64 counts_;
    std::vector<long long> occupancy_;
    detail::FenwickF64 branch_rates_;
    Rng rng_;

    double t_ = 0.0;
    long long pop_ = 0;
    int64_t max_pos_ = 0;
    int64_t left_live_ = std::numeric_limits<int64_t>::min();
    RunRecord record_;
    std::vector<double> grid_;
    std::size_t grid_next_ = 0;
};

inline RunRecord simulate_hitting(const Environment& env, int64_t n_target,
                                  const SimConfig& cfg) {
    ParticleSystem sys(env, cfg, n_target);
    sys.run_to_level(n_target);
    return sys.take_record();
}

inline RunRecord simulate_until(const Environment& env, double t_end, const SimConfig& cfg,
                                const std::vector<double>& grid) {
    ParticleSystem sys(env, cfg, env.x_max());
    sys.run_until(t_end, grid);
    return sys.take_record();
}

// --------------------------------------------------------------------------
// Exact per-particle simulator for the many-to-one check: tracks the full
// ancestral hitting-time vector of every particle. Only viable at small
// (t, rates) scales; populations stay in the dozens there.
// --------------------------------------------------------------------------

struct ExactParticle {
    int64_t pos = 0;
    std::vector<double> hit;  // hit[k] = first time the line reached level k
};

inline std::vector<ExactParticle> simulate_particles_exact(const Environment& env,
                                                           double t_end, int64_t n_levels,
                                                           Rng& rng,
                                                           long long pop_cap = 1'000'000) {
    std::vector<ExactParticle> parts;
    ExactParticle root;
    root.pos = 0;
    root.hit.assign(static_cast<std::size_t>(n_levels + 1),
                    std::numeric_limits<double>::quiet_NaN());
    root.hit[0] = 0.0;
    parts.push_back(root);

    double t = 0.0;
    double branch_sum = env.rate(0);
    for (;;) {
        const double total = static_cast<double>(parts.size()) + branch_sum;
        t += rng.exponential(total);
        if (t >= t_end) return parts;
        const double u = rng.uniform() * total;
        if (u < static_cast<double>(parts.size())) {
            auto& p = parts[std::min(static_cast<std::size_t>(u), parts.size() - 1)];
            branch_sum -= env.rate(p.pos);
            p.pos += (rng.uniform() < 0.5) ? -1 : 1;
            branch_sum += env.rate(p.pos);
            if (p.pos >= 0 && p.pos <= n_levels &&
                std::isnan(p.hit[static_cast<std::size_t>(p.pos)]))
                p.hit[static_cast<std::size_t>(p.pos)] = t;
        } else {
            double v = u - static_cast<double>(parts.size());
            std::size_t pick = parts.size() - 1;
            for (std::size_t i = 0; i < parts.size(); ++i) {
                v -= env.rate(parts[i].pos);
                if (v < 0.0) {
                    pick = i;
                    break;
                }
            }
            parts.push_back(parts[pick]);
            branch_sum += env.rate(parts.back().pos);
            if (static_cast<long long>(parts.size()) > pop_cap)
                throw error("simulate_particles_exact: population cap exceeded");
        }
    }
}

}  // namespace brwre
