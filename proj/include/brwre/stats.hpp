#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <vector>

#include "brwre/rng.hpp"

namespace brwre {

struct error : std::runtime_error {
    explicit error(const std::string& what) : std::runtime_error(what) {}
};

// Monte Carlo point estimate with its standard error.
struct ProbEstimate {
    double p_hat = 0.0;
    double se = 0.0;
    long long reps = 0;
    uint64_t seed = 0;

    double rel_se() const { return p_hat > 0.0 ? se / p_hat : HUGE_VAL; }
};

// Welford running mean/variance accumulator.
class RunningStat {
public:
    void add(double x) {
        ++n_;
        const double d = x - mean_;
        mean_ += d / static_cast<double>(n_);
        m2_ += d * (x - mean_);
    }
    long long count() const { return n_; }
    double mean() const { return mean_; }
    double variance() const { return n_ > 1 ? m2_ / static_cast<double>(n_ - 1) : 0.0; }
    double sd() const { return std::sqrt(variance()); }
    double se() const { return n_ > 0 ? sd() / std::sqrt(static_cast<double>(n_)) : 0.0; }

private:
    long long n_ = 0;
    double mean_ = 0.0;
    double m2_ = 0.0;
};

// Sorted sample with interpolated order-statistic quantiles.
// quantile(q) linearly interpolates at rank q*(n-1), so for {0,1,2,3}
// quantile(0.25) = 0.75 and the median of {1,2,3} is 2.
class EmpiricalDistribution {
public:
    EmpiricalDistribution() = default;
    explicit EmpiricalDistribution(std::vector<double> samples) : x_(std::move(samples)) {
        std::sort(x_.begin(), x_.end());
    }

    std::size_t n_samples() const { return x_.size(); }
    const std::vector<double>& sorted() const { return x_; }

    double quantile(double q) const {
        if (x_.empty()) throw error("quantile: empty sample");
        if (!(q > 0.0 && q < 1.0)) throw error("quantile: q must lie in (0,1)");
        const double h = q * static_cast<double>(x_.size() - 1);
        const std::size_t lo = static_cast<std::size_t>(h);
        if (lo + 1 >= x_.size()) return x_.back();
        const double frac = h - static_cast<double>(lo);
        return x_[lo] + frac * (x_[lo + 1] - x_[lo]);
    }

    double iqr() const { return quantile(0.75) - quantile(0.25); }
    double min() const { return x_.front(); }
    double max() const { return x_.back(); }

private:
    std::vector<double> x_;
};

struct LineFit {
    double slope = 0.0;
    double intercept = 0.0;
    double slope_se = 0.0;  // from per-point errors when given, else residual-based
    double residual_rms = 0.0;
};

inline LineFit fit_line(const std::vector<double>& x, const std::vector<double>& y,
                        const std::vector<double>& y_se = {}) {
    if (x.size() != y.size() || x.size() < 2) throw error("fit_line: need >= 2 points");
    const std::size_t n = x.size();
    double xbar = 0.0, ybar = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        xbar += x[i];
        ybar += y[i];
    }
    xbar /= static_cast<double>(n);
    ybar /= static_cast<double>(n);
    double sxx = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        sxx += (x[i] - xbar) * (x[i] - xbar);
        sxy += (x[i] - xbar) * (y[i] - ybar);
    }
    if (sxx == 0.0) throw error("fit_line: degenerate x values");
    LineFit f;
    f.slope = sxy / sxx;
    f.intercept = ybar - f.slope * xbar;
    double ss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double r = y[i] - (f.intercept + f.slope * x[i]);
        ss += r * r;
    }
    f.residual_rms = std::sqrt(ss / static_cast<double>(n));
    if (!y_se.empty()) {
        if (y_se.size() != n) throw error("fit_line: y_se size mismatch");
        double v = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double w = (x[i] - xbar) / sxx;
            v += w * w * y_se[i] * y_se[i];
        }
        f.slope_se = std::sqrt(v);
    } else if (n > 2) {
        f.slope_se = std::sqrt(ss / static_cast<double>(n - 2) / sxx);
    }
    return f;
}

// Two-sample Kolmogorov-Smirnov statistic and asymptotic p-value.
inline double ks_statistic(const std::vector<double>& a_in, const std::vector<double>& b_in) {
    std::vector<double> a = a_in, b = b_in;
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    if (a.empty() || b.empty()) throw error("ks_statistic: empty sample");
    double d = 0.0;
    std::size_t i = 0, j = 0;
    while (i < a.size() && j < b.size()) {
        const double v = std::min(a[i], b[j]);
        while (i < a.size() && a[i] <= v) ++i;
        while (j < b.size() && b[j] <= v) ++j;
        const double fa = static_cast<double>(i) / static_cast<double>(a.size());
        const double fb = static_cast<double>(j) / static_cast<double>(b.size());
        d = std::max(d, std::fabs(fa - fb));
    }
    return d;
}

inline double ks_pvalue(double d, std::size_t na, std::size_t nb) {
    const double en = std::sqrt(static_cast<double>(na) * static_cast<double>(nb) /
                                static_cast<double>(na + nb));
    const double lambda = (en + 0.12 + 0.11 / en) * d;
    double sum = 0.0;
    for (int j = 1; j <= 100; ++j) {
        const double term = 2.0 * ((j % 2 == 1) ? 1.0 : -1.0) *
                            std::exp(-2.0 * lambda * lambda * j * j);
        sum += term;
        if (std::fabs(term) < 1e-12) break;
    }
    return std::min(1.0, std::max(0.0, sum));
}

// Percentile bootstrap standard error of a statistic of one sample.
inline double bootstrap_se(const std::vector<double>& sample,
                           const std::function<double(const std::vector<double>&)>& stat,
                           int n_boot, Rng& rng) {
    if (sample.empty()) throw error("bootstrap_se: empty sample");
    RunningStat rs;
    std::vector<double> draw(sample.size());
    for (int b = 0; b < n_boot; ++b) {
        for (std::size_t i = 0; i < sample.size(); ++i) {
            const std::size_t j = static_cast<std::size_t>(rng.uniform() *
                                                           static_cast<double>(sample.size()));
            draw[i] = sample[std::min(j, sample.size() - 1)];
        }
        rs.add(stat(draw));
    }
    return rs.sd();
}

// Paired bootstrap se of stat(a*) - stat(b*) resampling row indices jointly.
inline double bootstrap_se_paired_diff(
    const std::vector<double>& a, const std::vector<double>& b,
    const std::function<double(const std::vector<double>&)>& stat, int n_boot, Rng& rng) {
    if (a.size() != b.size() || a.empty())
        throw error("bootstrap_se_paired_diff: mismatched samples");
    RunningStat rs;
    std::vector<double> da(a.size()), db(a.size());
    for (int k = 0; k < n_boot; ++k) {
        for (std::size_t i = 0; i < a.size(); ++i) {
            const std::size_t j =
                std::min(static_cast<std::size_t>(rng.uniform() * static_cast<double>(a.size())),
                         a.size() - 1);
            da[i] = a[j];
            db[i] = b[j];
        }
        rs.add(stat(da) - stat(db));
    }
    return rs.sd();
}

}  // namespace brwre
