#ifndef WIGNER_SPECIAL_HPP
#define WIGNER_SPECIAL_HPP

#include "core.hpp"

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <complex>
#include <functional>
#include <map>
#include <mutex>
#include <numbers>

namespace wigner {

// K_2 on the real axis.
inline double bessel_k2(double x)
{
    if (!(x > 0.0)) throw invalid_input("K2 needs a positive argument");
    return std::cyl_bessel_k(2.0, x);
}

// Exponentially scaled e^x K_2(x); avoids underflow of K_2 at large x.
inline double bessel_k2_scaled(double x)
{
    if (x < 600.0) return std::exp(x) * bessel_k2(x);
    // Hankel asymptotics, mu = 4 nu^2 = 16.
    double term = 1.0, sum = 1.0;
    for (int k = 1; k < 30; ++k) {
        term *= (16.0 - (2.0 * k - 1) * (2.0 * k - 1)) / (8.0 * k * x);
        sum += term;
        if (std::abs(term) < 1e-17 * std::abs(sum)) break;
    }
    return std::sqrt(std::numbers::pi / (2.0 * x)) * sum;
}

namespace detail {

// Power series around the origin:
// K2(z) = (2/z^2)(1 - z^2/4) - ln(z/2) I2(z) + (z^2/8) sum_k (psi(k+1)+psi(k+3)) (z^2/4)^k / (k!(k+2)!).
template <class T>
std::complex<T> k2_series(const std::complex<T>& z)
{
    const T euler = T(0.57721566490153286060651209008240243L);
    const std::complex<T> q = z * z / T(4);
    std::complex<T> i2 = T(0), tail = T(0);
    std::complex<T> qk = T(1);
    T fact_k = 1, fact_k2 = 2; // k!, (k+2)!
    T hk = 0;                  // harmonic number H_k
    for (int k = 0; k < 60; ++k) {
        if (k > 0) {
            fact_k *= T(k);
            fact_k2 *= T(k + 2);
            hk += T(1) / T(k);
            qk *= q;
        }
        const T psi1 = hk - euler;
        const T psi3 = hk + T(1) / T(k + 1) + T(1) / T(k + 2) - euler;
        const std::complex<T> base = qk / (fact_k * fact_k2);
        i2 += base;
        tail += (psi1 + psi3) * base;
        if (std::abs(base) < std::numeric_limits<T>::epsilon() * T(1e-3) * std::abs(i2)) break;
    }
    i2 *= q;
    return T(2) / (z * z) * (T(1) - q) - std::log(z / T(2)) * i2 + z * z / T(8) * tail;
}

// Steed's continued fraction (Thompson-Barnett) for K0, K1, then K2 = K0 + 2 K1 / z.
template <class T>
std::complex<T> k2_steed(const std::complex<T>& z)
{
    using C = std::complex<T>;
    C b = T(2) * (T(1) + z);
    C d = T(1) / b;
    C h = d, delh = d;
    C q1 = T(0), q2 = T(1);
    const T a1 = T(0.25);
    C q = a1, c = a1;
    T a = -a1;
    C s = T(1) + q * delh;
    for (int i = 1; i < 100000; ++i) {
        a -= T(2 * i);
        c = -a * c / T(i + 1);
        const C qnew = (q1 - b * q2) / a;
        q1 = q2;
        q2 = qnew;
        q += c * qnew;
        b += T(2);
        d = T(1) / (b + a * d);
        delh = (b * d - T(1)) * delh;
        h += delh;
        const C dels = q * delh;
        s += dels;
        if (std::abs(dels) < std::numeric_limits<T>::epsilon() * std::abs(s)) break;
    }
    h = a1 * h;
    const C k0 = std::sqrt(T(std::numbers::pi) / (T(2) * z)) * std::exp(-z) / s;
    const C k1 = k0 * (z + T(0.5) - h) / z;
    return k0 + T(2) * k1 / z;
}

// Hankel expansion of e^z K_2(z), uniform for |arg z| <= pi once |z| is large.
template <class T>
std::complex<T> k2_hankel_scaled(const std::complex<T>& z)
{
    std::complex<T> term = T(1), sum = T(1);
    for (int k = 1; k < 200; ++k) {
        const std::complex<T> next = term * ((T(16) - T((2 * k - 1) * (2 * k - 1))) / (T(8 * k) * z));
        if (std::abs(next) > std::abs(term)) break;
        term = next;
        sum += term;
        if (std::abs(term) < std::numeric_limits<T>::epsilon() * std::abs(sum)) break;
    }
    return std::sqrt(T(std::numbers::pi) / (T(2) * z)) * sum;
}

} // namespace detail

// Radius beyond which the Hankel expansion (error ~ e^{-2|z|}) beats the series, whose
// cancellation in the left half-plane grows like e^{|z|}.
template <class T>
constexpr T k2_hankel_radius()
{
    return std::numeric_limits<T>::digits > 53 ? T(15) : T(12);
}

// K_2 in the plane cut along the negative real axis.
template <class T>
std::complex<T> bessel_k2(const std::complex<T>& z)
{
    const T az = std::abs(z);
    if (az == T(0)) throw invalid_input("K2 is singular at the origin");
    if (az > k2_hankel_radius<T>()) return std::exp(-z) * detail::k2_hankel_scaled(z);
    if (az <= T(2) || z.real() < T(0)) return detail::k2_series(z);
    return detail::k2_steed(z);
}

// e^z K_2(z); stays finite far into the left half-plane where K_2 alone overflows.
template <class T>
std::complex<T> bessel_k2_scaled(const std::complex<T>& z)
{
    if (std::abs(z) > k2_hankel_radius<T>()) return detail::k2_hankel_scaled(z);
    return std::exp(z) * bessel_k2(z);
}

// Fixed Talbot inversion of a Laplace transform F at t > 0 with M nodes.
template <class T>
T talbot_inverse(const std::function<std::complex<T>(const std::complex<T>&)>& F, T t, int M = 64)
{
    if (!(t > T(0))) throw invalid_input("Talbot inversion needs t > 0");
    if (M < 2) throw invalid_input("Talbot inversion needs at least two nodes");
    using C = std::complex<T>;
    const T r = T(2) * T(M) / (T(5) * t);
    T sum = T(0.5) * std::real(std::exp(r * t) * F(C(r, T(0))));
    for (int k = 1; k < M; ++k) {
        const T th = T(k) * T(std::numbers::pi) / T(M);
        const T cot = std::cos(th) / std::sin(th);
        const C s = r * th * C(cot, T(1));
        const T sigma = th + (th * cot - T(1)) * cot;
        sum += std::real(std::exp(t * s) * F(s) * C(T(1), sigma));
    }
    return r / T(M) * sum;
}

struct QuadratureResult {
    double value = 0.0;
    double error = 0.0;
};

// I_N = int_0^inf x^2 (j1(x)/x)^N dx. Gauss-Kronrod up to the first zero of j1, then on
// period-length panels; partial sums over K panels are Richardson-extrapolated in 1/K.
inline QuadratureResult spherical_bessel_moment_uncached(int N)
{
    if (N < 2) throw invalid_input("the j1 moment converges for N >= 2 only");
    auto f = [N](double x) {
        // j1(x)/x, series below x = 0.1 to avoid cancellation.
        const double x2 = x * x;
        const double r = x < 0.1 ? (1.0 / 3.0) * (1.0 - x2 / 10.0 * (1.0 - x2 / 28.0 * (1.0 - x2 / 54.0)))
                                 : (std::sin(x) / x - std::cos(x)) / x2;
        return x2 * std::pow(r, N);
    };
    using GK = boost::math::quadrature::gauss_kronrod<double, 61>;
    const double first_zero = 4.493409457909064;
    double err = 0.0;
    double head = GK::integrate(f, 0.0, first_zero, 10, 1e-14, &err);
    const int levels = 7;
    const int k0 = 64;
    std::vector<double> partial;
    double acc = head;
    int done = 0;
    for (int l = 0; l < levels; ++l) {
        const int upto = k0 << l;
        for (; done < upto; ++done) {
            const double a = first_zero + done * std::numbers::pi;
            acc += GK::integrate(f, a, a + std::numbers::pi, 5, 1e-14);
        }
        partial.push_back(acc);
    }
    // Neville/Richardson table in h = 1/K with K doubling, error assumed polynomial in h.
    std::vector<std::vector<double>> tab(levels);
    for (int i = 0; i < levels; ++i) {
        tab[i].push_back(partial[i]);
        for (int j = 1; j <= i; ++j) {
            const double fac = std::pow(2.0, j);
            tab[i].push_back(tab[i][j - 1] + (tab[i][j - 1] - tab[i - 1][j - 1]) / (fac - 1.0));
        }
    }
    const double best = tab[levels - 1][levels - 1];
    const double prev = tab[levels - 1][levels - 2];
    return {best, std::abs(best - prev) + err};
}

inline QuadratureResult spherical_bessel_moment(int N)
{
    static std::mutex mu;
    static std::map<int, QuadratureResult> cache;
    std::lock_guard lock(mu);
    const auto it = cache.find(N);
    if (it != cache.end()) return it->second;
    return cache[N] = spherical_bessel_moment_uncached(N);
}

} // namespace wigner

#endif
