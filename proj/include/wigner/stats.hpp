#ifndef WIGNER_STATS_HPP
#define WIGNER_STATS_HPP

#include "core.hpp"

#include <boost/math/distributions/chi_squared.hpp>

#include <algorithm>
#include <functional>
#include <numbers>
#include <numeric>
#include <vector>

namespace wigner {

// Mergeable sum / sum of squares with compensated accumulation.
struct Moments {
    KahanSum s1, s2;
    std::size_t n = 0;
    void add(double x)
    {
        s1.add(x);
        s2.add(x * x);
        ++n;
    }
    void merge(const Moments& o)
    {
        s1.merge(o.s1);
        s2.merge(o.s2);
        n += o.n;
    }
    double mean() const { return n ? s1.value() / double(n) : 0.0; }
    double variance() const
    {
        if (n < 2) return 0.0;
        const double m = mean();
        return std::max(0.0, (s2.value() - double(n) * m * m) / double(n - 1));
    }
    double stderr_of_mean() const { return n ? std::sqrt(variance() / double(n)) : 0.0; }
};

inline double mean_of(const std::vector<double>& x)
{
    require(!x.empty(), "mean of an empty sample");
    KahanSum s;
    for (double v : x) s.add(v);
    return s.value() / double(x.size());
}

// Integrated autocorrelation time with Sokal's self-consistent window (c = 5).
inline double integrated_autocorrelation_time(const std::vector<double>& x)
{
    const std::size_t n = x.size();
    if (n < 4) return 1.0;
    const double m = mean_of(x);
    double c0 = 0.0;
    for (double v : x) c0 += (v - m) * (v - m);
    c0 /= double(n);
    if (c0 <= 0.0) return 1.0;
    double tau = 1.0;
    for (std::size_t t = 1; t < n / 2; ++t) {
        double ct = 0.0;
        for (std::size_t i = 0; i + t < n; ++i) ct += (x[i] - m) * (x[i + t] - m);
        ct /= double(n);
        tau += 2.0 * ct / c0;
        if (double(t) >= 5.0 * tau) break;
    }
    return std::max(1.0, tau);
}

struct MeanEstimate {
    double mean = 0.0;
    double stderr = 0.0;
    double tau_int = 1.0;
};

// Sample mean with an error bar inflated by the integrated autocorrelation time.
inline MeanEstimate correlated_mean(const std::vector<double>& x)
{
    Moments mo;
    for (double v : x) mo.add(v);
    const double tau = integrated_autocorrelation_time(x);
    return {mo.mean(), mo.stderr_of_mean() * std::sqrt(tau), tau};
}

inline double quantile_sorted(const std::vector<double>& sorted, double q)
{
    require(!sorted.empty(), "quantile of an empty sample");
    const double pos = q * double(sorted.size() - 1);
    const std::size_t i = std::size_t(pos);
    if (i + 1 >= sorted.size()) return sorted.back();
    return sorted[i] + (pos - double(i)) * (sorted[i + 1] - sorted[i]);
}

// Silverman's rule of thumb: 0.9 min(sd, IQR/1.34) n^(-1/5).
inline double silverman_bandwidth(std::vector<double> x)
{
    require(x.size() >= 2, "bandwidth needs at least two samples");
    Moments mo;
    for (double v : x) mo.add(v);
    std::sort(x.begin(), x.end());
    const double iqr = quantile_sorted(x, 0.75) - quantile_sorted(x, 0.25);
    double spread = std::sqrt(mo.variance());
    if (iqr > 0.0) spread = std::min(spread, iqr / 1.34);
    if (!(spread > 0.0)) throw numeric_error("bandwidth undefined for a constant sample");
    return 0.9 * spread * std::pow(double(x.size()), -0.2);
}

inline double gaussian_kernel(double u, double b)
{
    return std::exp(-0.5 * u * u / (b * b)) / (std::sqrt(2.0 * std::numbers::pi) * b);
}

// One-sample Kolmogorov-Smirnov statistic sup |F_n - F|.
inline double ks_statistic(std::vector<double> x, const std::function<double(double)>& cdf)
{
    require(!x.empty(), "KS statistic of an empty sample");
    std::sort(x.begin(), x.end());
    const double n = double(x.size());
    double d = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double f = cdf(x[i]);
        d = std::max({d, double(i + 1) / n - f, f - double(i) / n});
    }
    return d;
}

// Kolmogorov survival function Q(lambda) = 2 sum (-1)^(k-1) exp(-2 k^2 lambda^2).
inline double kolmogorov_q(double lambda)
{
    if (lambda < 0.2) return 1.0;
    double sum = 0.0, sign = 1.0;
    for (int k = 1; k < 200; ++k) {
        const double term = std::exp(-2.0 * k * k * lambda * lambda);
        sum += sign * term;
        sign = -sign;
        if (term < 1e-18) break;
    }
    return std::clamp(2.0 * sum, 0.0, 1.0);
}

// Asymptotic p-value with Stephens' finite-n correction.
inline double ks_pvalue(double d, std::size_t n)
{
    const double sn = std::sqrt(double(n));
    return kolmogorov_q((sn + 0.12 + 0.11 / sn) * d);
}

// Critical value of D at significance alpha, inverted from ks_pvalue by bisection.
inline double ks_critical(double alpha, std::size_t n)
{
    double lo = 0.0, hi = 1.0;
    for (int it = 0; it < 100; ++it) {
        const double mid = 0.5 * (lo + hi);
        (ks_pvalue(mid, n) > alpha ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

inline double chi_squared_quantile(double dof, double p)
{
    return boost::math::quantile(boost::math::chi_squared(dof), p);
}

} // namespace wigner

#endif
