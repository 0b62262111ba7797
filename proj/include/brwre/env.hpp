#pragma once

#include <cstdint>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include <json.hpp>

#include "brwre/rng.hpp"
#include "brwre/stats.hpp"

namespace brwre {

enum class DistKind { two_point, uniform, discrete };

// Law of the i.i.d. branching rate at a single site. All rates positive;
// p is the weight of `hi` in the two-point case. Degenerate effective
// support (two_point with p in {0,1}, one-atom discrete) is accepted: it is
// the homogeneous reference case the oracles rely on.
struct EnvDistribution {
    DistKind kind = DistKind::two_point;
    double p = 0.5;
    double lo = 0.1;
    double hi = 0.2;
    std::vector<double> values;
    std::vector<double> weights;

    static EnvDistribution two_point(double p, double lo, double hi) {
        EnvDistribution d;
        d.kind = DistKind::two_point;
        d.p = p;
        d.lo = lo;
        d.hi = hi;
        d.validate();
        return d;
    }
    static EnvDistribution uniform(double lo, double hi) {
        EnvDistribution d;
        d.kind = DistKind::uniform;
        d.lo = lo;
        d.hi = hi;
        d.validate();
        return d;
    }
    static EnvDistribution discrete(std::vector<double> values, std::vector<double> weights) {
        EnvDistribution d;
        d.kind = DistKind::discrete;
        d.values = std::move(values);
        d.weights = std::move(weights);
        d.validate();
        return d;
    }

    void validate() const {
        switch (kind) {
            case DistKind::two_point:
                if (!(p >= 0.0 && p <= 1.0)) throw error("two_point: p must lie in [0,1]");
                [[fallthrough]];
            case DistKind::uniform:
                if (!(lo > 0.0)) throw error("distribution: lo must be positive");
                if (!(hi > lo)) throw error("distribution: need lo < hi");
                if (!std::isfinite(hi)) throw error("distribution: hi must be finite");
                break;
            case DistKind::discrete: {
                if (values.empty() || values.size() != weights.size())
                    throw error("discrete: values/weights size mismatch");
                double sum = 0.0;
                for (std::size_t i = 0; i < values.size(); ++i) {
                    if (!(values[i] > 0.0) || !std::isfinite(values[i]))
                        throw error("discrete: values must be positive and finite");
                    if (!(weights[i] >= 0.0)) throw error("discrete: negative weight");
                    sum += weights[i];
                }
                if (std::fabs(sum - 1.0) > 1e-9) throw error("discrete: weights must sum to 1");
                break;
            }
        }
    }

    // essential infimum / supremum of the effective support
    double ess_inf() const {
        switch (kind) {
            case DistKind::two_point:
                if (p >= 1.0) return hi;
                return lo;
            case DistKind::uniform:
                return lo;
            case DistKind::discrete: {
                double m = std::numeric_limits<double>::infinity();
                for (std::size_t i = 0; i < values.size(); ++i)
                    if (weights[i] > 0.0) m = std::min(m, values[i]);
                return m;
            }
        }
        return lo;
    }
    double ess_sup() const {
        switch (kind) {
            case DistKind::two_point:
                if (p <= 0.0) return lo;
                return hi;
            case DistKind::uniform:
                return hi;
            case DistKind::discrete: {
                double m = 0.0;
                for (std::size_t i = 0; i < values.size(); ++i)
                    if (weights[i] > 0.0) m = std::max(m, values[i]);
                return m;
            }
        }
        return hi;
    }

    double mean() const {
        switch (kind) {
            case DistKind::two_point:
                return p * hi + (1.0 - p) * lo;
            case DistKind::uniform:
                return 0.5 * (lo + hi);
            case DistKind::discrete: {
                double m = 0.0;
                for (std::size_t i = 0; i < values.size(); ++i) m += weights[i] * values[i];
                return m;
            }
        }
        return 0.0;
    }

    // inverse-transform draw from a uniform in [0,1)
    double draw(double u) const {
        switch (kind) {
            case DistKind::two_point:
                return u < p ? hi : lo;
            case DistKind::uniform:
                return lo + u * (hi - lo);
            case DistKind::discrete: {
                double acc = 0.0;
                for (std::size_t i = 0; i < values.size(); ++i) {
                    acc += weights[i];
                    if (u < acc) return values[i];
                }
                return values.back();
            }
        }
        return lo;
    }

    // atoms with positive weight, empty for continuous laws (used for exact
    // site-conditional averaging in the annealed log-MGF)
    std::vector<std::pair<double, double>> atoms() const {
        std::vector<std::pair<double, double>> a;
        if (kind == DistKind::two_point) {
            if (p < 1.0) a.push_back({lo, 1.0 - p});
            if (p > 0.0) a.push_back({hi, p});
        } else if (kind == DistKind::discrete) {
            for (std::size_t i = 0; i < values.size(); ++i)
                if (weights[i] > 0.0) a.push_back({values[i], weights[i]});
        }
        return a;
    }
};

inline void to_json(nlohmann::json& j, const EnvDistribution& d) {
    switch (d.kind) {
        case DistKind::two_point:
            j = {{"kind", "two_point"}, {"p", d.p}, {"lo", d.lo}, {"hi", d.hi}};
            break;
        case DistKind::uniform:
            j = {{"kind", "uniform"}, {"lo", d.lo}, {"hi", d.hi}};
            break;
        case DistKind::discrete:
            j = {{"kind", "discrete"}, {"values", d.values}, {"weights", d.weights}};
            break;
    }
}

inline void from_json(const nlohmann::json& j, EnvDistribution& d) {
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "two_point") {
        d = EnvDistribution::two_point(j.at("p").get<double>(), j.at("lo").get<double>(),
                                       j.at("hi").get<double>());
    } else if (kind == "uniform") {
        d = EnvDistribution::uniform(j.at("lo").get<double>(), j.at("hi").get<double>());
    } else if (kind == "discrete") {
        d = EnvDistribution::discrete(j.at("values").get<std::vector<double>>(),
                                      j.at("weights").get<std::vector<double>>());
    } else {
        throw error("environment file: unknown distribution kind '" + kind + "'");
    }
}

// Site-indexed branching rates on a finite window [x_min, x_max].
// Immutable after construction; ei/es are the distribution's support bounds,
// not the sample extremes. `origin` records how far the window has been
// shifted relative to the generating stream, so rate(x) == F(seed, x+origin).
class Environment {
public:
    Environment() = default;
    Environment(EnvDistribution dist, int64_t x_min, int64_t x_max, uint64_t seed,
                std::vector<double> rates, int64_t origin = 0)
        : dist_(std::move(dist)),
          x_min_(x_min),
          x_max_(x_max),
          seed_(seed),
          origin_(origin),
          ei_(dist_.ess_inf()),
          es_(dist_.ess_sup()),
          rates_(std::move(rates)) {
        validate();
    }

    // Test-harness constructor that skips the rate-bound checks. Lets the
    // degenerate xi == 0 dynamics be exercised without a legal distribution.
    static Environment from_rates_unchecked(std::vector<double> rates, int64_t x_min,
                                            double ei, double es) {
        Environment e;
        e.x_min_ = x_min;
        e.x_max_ = x_min + static_cast<int64_t>(rates.size()) - 1;
        e.ei_ = ei;
        e.es_ = es;
        e.rates_ = std::move(rates);
        return e;
    }

    int64_t x_min() const { return x_min_; }
    int64_t x_max() const { return x_max_; }
    uint64_t seed() const { return seed_; }
    int64_t origin() const { return origin_; }
    double ei() const { return ei_; }
    double es() const { return es_; }
    const EnvDistribution& dist() const { return dist_; }
    const std::vector<double>& rates() const { return rates_; }

    bool covers(int64_t lo, int64_t hi) const { return lo >= x_min_ && hi <= x_max_; }

    double rate(int64_t x) const {
        if (x < x_min_ || x > x_max_)
            throw error("environment window [" + std::to_string(x_min_) + "," +
                        std::to_string(x_max_) + "] does not contain site " + std::to_string(x));
        return rates_[static_cast<std::size_t>(x - x_min_)];
    }

    // zeta(x) = xi(x) - es <= 0
    double zeta(int64_t x) const { return rate(x) - es_; }

    void validate() const {
        dist_.validate();
        if (x_min_ > x_max_) throw error("environment: empty window");
        if (rates_.size() != static_cast<std::size_t>(x_max_ - x_min_ + 1))
            throw error("environment: rates length does not match window");
        if (!(ei_ > 0.0) || !std::isfinite(es_))
            throw error("environment: need 0 < ei and es < inf");
        for (double r : rates_) {
            if (!(r >= ei_ && r <= es_))
                throw error("environment: rate " + std::to_string(r) +
                            " outside [ei, es] = [" + std::to_string(ei_) + "," +
                            std::to_string(es_) + "]");
        }
    }

private:
    EnvDistribution dist_;
    int64_t x_min_ = 0;
    int64_t x_max_ = 0;
    uint64_t seed_ = 0;
    int64_t origin_ = 0;
    double ei_ = 1.0;
    double es_ = 1.0;
    std::vector<double> rates_;
};

inline Environment sample_environment(const EnvDistribution& dist, int64_t x_min, int64_t x_max,
                                      uint64_t seed) {
    dist.validate();
    if (!(x_min <= 0 && 0 <= x_max)) throw error("sample_environment: window must contain 0");
    std::vector<double> rates;
    rates.reserve(static_cast<std::size_t>(x_max - x_min + 1));
    for (int64_t x = x_min; x <= x_max; ++x) rates.push_back(dist.draw(site_uniform(seed, x)));
    return Environment(dist, x_min, x_max, seed, std::move(rates));
}

// rates'[x] = rates[x + k]  (houses the spatial shift zeta^{(k)})
inline Environment shift_environment(const Environment& env, int64_t k) {
    return Environment(env.dist(), env.x_min() - k, env.x_max() - k, env.seed(), env.rates(),
                       env.origin() + k);
}

inline void to_json(nlohmann::json& j, const Environment& e) {
    j = nlohmann::json{{"version", 1},
                       {"dist", e.dist()},
                       {"x_min", e.x_min()},
                       {"x_max", e.x_max()},
                       {"seed", e.seed()},
                       {"origin", e.origin()},
                       {"ei", e.ei()},
                       {"es", e.es()},
                       {"rates", e.rates()}};
}

inline Environment environment_from_json(const nlohmann::json& j) {
    for (const char* field : {"version", "dist", "x_min", "x_max", "seed", "rates", "ei", "es"}) {
        if (!j.contains(field))
            throw error(std::string("environment file: missing field '") + field + "'");
    }
    if (j.at("version").get<int>() != 1)
        throw error("environment file: unsupported version");
    Environment e(j.at("dist").get<EnvDistribution>(), j.at("x_min").get<int64_t>(),
                  j.at("x_max").get<int64_t>(), j.at("seed").get<uint64_t>(),
                  j.at("rates").get<std::vector<double>>(),
                  j.value("origin", static_cast<int64_t>(0)));
    if (std::fabs(e.ei() - j.at("ei").get<double>()) > 0.0 ||
        std::fabs(e.es() - j.at("es").get<double>()) > 0.0)
        throw error("environment file: stored ei/es disagree with distribution support");
    return e;
}

inline void save_environment(const Environment& env, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw error("cannot open '" + path + "' for writing");
    nlohmann::json j = env;
    out << j.dump(2) << "\n";
    if (!out) throw error("write failed for '" + path + "'");
}

inline Environment load_environment(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw error("cannot open '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::parse_error& e) {
        throw error("environment file '" + path + "': " + e.what());
    }
    try {
        return environment_from_json(j);
    } catch (const nlohmann::json::exception& e) {
        throw error("environment file '" + path + "': " + e.what());
    }
}

}  // namespace brwre
