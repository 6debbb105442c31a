#ifndef WIGNER_KINETIC_HPP
#define WIGNER_KINETIC_HPP

#include "canonical.hpp"
#include "frames.hpp"
#include "rng.hpp"
#include "special.hpp"
#include "stats.hpp"

#include <boost/math/quadrature/gauss.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <string>

namespace wigner {

// ---------------------------------------------------------------- Juttner equilibrium

struct JuttnerParams {
    double m = 1.0;
    double T = 1.0; // k_B T
    double c = 1.0;
};

inline void validate(const JuttnerParams& p)
{
    require(std::isfinite(p.m) && p.m > 0.0, "mass must be positive");
    require(std::isfinite(p.T) && p.T > 0.0, "temperature must be positive");
    require(std::isfinite(p.c) && p.c > 0.0, "speed of light must be positive");
}

// ln of 4 pi k_B T m^2 c e^x K2(x), x = mc^2/k_B T; the normalisation of the kinetic-energy form.
inline double juttner_log_norm(const JuttnerParams& p)
{
    const double x = p.m * p.c * p.c / p.T;
    return std::log(4.0 * std::numbers::pi * p.T * p.m * p.m * p.c) + std::log(bessel_k2_scaled(x));
}

// Kinetic energy c sqrt(m^2c^2 + kappa^2) - mc^2 without cancellation at small kappa.
inline double kinetic_energy(double kappa2, double m, double c)
{
    return c * kappa2 / (std::sqrt(m * m * c * c + kappa2) + m * c);
}

// A exp(-c sqrt(m^2c^2 + kappa^2)/k_B T) with A = 1/(4 pi k_B T m^2 c K2(mc^2/k_B T)); unit total mass.
inline double juttner_pdf(const Vec3& kappa, const JuttnerParams& p)
{
    validate(p);
    return std::exp(-kinetic_energy(kappa.squaredNorm(), p.m, p.c) / p.T - juttner_log_norm(p));
}

// Density of |kappa|: 4 pi k^2 f, with the log-normalisation supplied by the caller.
inline double juttner_speed_pdf(double k, const JuttnerParams& p, double log_norm)
{
    if (k < 0.0) return 0.0;
    return 4.0 * std::numbers::pi * k * k * std::exp(-kinetic_energy(k * k, p.m, p.c) / p.T - log_norm);
}

inline double juttner_speed_pdf(double k, const JuttnerParams& p)
{
    return juttner_speed_pdf(k, p, juttner_log_norm(p));
}

// CDF of |kappa| on precomputed panels: prefix sums from adaptive Gauss-Kronrod, then a fixed
// 15-point Gauss rule on the partial panel. Cheap enough for KS tests on large samples.
class JuttnerSpeedCdf {
public:
    explicit JuttnerSpeedCdf(const JuttnerParams& p, int panels = 4000) : p_(p)
    {
        validate(p);
        log_norm_ = juttner_log_norm(p);
        using GK = boost::math::quadrature::gauss_kronrod<double, 31>;
        // Panels reach well past the 1 - 1e-16 tail: kinetic energy ~ 40 k_B T.
        const double tmax = 40.0 * p.T;
        kmax_ = std::sqrt(tmax * (tmax + 2.0 * p.m * p.c * p.c)) / p.c;
        h_ = kmax_ / panels;
        prefix_.assign(std::size_t(panels) + 1, 0.0);
        auto f = [&](double s) { return juttner_speed_pdf(s, p_, log_norm_); };
        for (int i = 0; i < panels; ++i) prefix_[i + 1] = prefix_[i] + GK::integrate(f, i * h_, (i + 1) * h_, 8, 1e-15);
    }

    double operator()(double k) const
    {
        if (k <= 0.0) return 0.0;
        if (k >= kmax_) return std::min(prefix_.back(), 1.0);
        const auto i = std::size_t(k / h_);
        const double a = double(i) * h_;
        using G = boost::math::quadrature::gauss<double, 15>;
        const double part = G::integrate([&](double s) { return juttner_speed_pdf(s, p_, log_norm_); }, a, k);
        return std::min(prefix_[i] + part, 1.0);
    }

private:
    JuttnerParams p_;
    double log_norm_ = 0.0, kmax_ = 0.0, h_ = 0.0;
    std::vector<double> prefix_;
};

inline double juttner_speed_cdf(double k, const JuttnerParams& p)
{
    if (k <= 0.0) return 0.0;
    using GK = boost::math::quadrature::gauss_kronrod<double, 31>;
    // Split at the thermal scale so the peak is resolved for any k.
    const double scale = std::sqrt(p.T * p.m * (1.0 + p.T / (p.m * p.c * p.c)));
    const double ln = juttner_log_norm(p);
    auto f = [&](double s) { return juttner_speed_pdf(s, p, ln); };
    double acc = 0.0, a = 0.0;
    for (double b : {scale, 4.0 * scale, 16.0 * scale, 64.0 * scale}) {
        if (b >= k) break;
        acc += GK::integrate(f, a, b, 12, 1e-13);
        a = b;
    }
    acc += GK::integrate(f, a, k, 12, 1e-13);
    return std::min(acc, 1.0);
}

// Numerical normalisation over all of kappa space; equals 1 when A is right.
inline double juttner_total_mass(const JuttnerParams& p)
{
    using GK = boost::math::quadrature::gauss_kronrod<double, 61>;
    const double ln = juttner_log_norm(p);
    return GK::integrate([&](double s) { return juttner_speed_pdf(s, p, ln); }, 0.0,
                         std::numeric_limits<double>::infinity(), 15, 1e-13);
}

// Mean of c sqrt(m^2c^2 + kappa^2).
inline double juttner_mean_energy(const JuttnerParams& p)
{
    validate(p);
    using GK = boost::math::quadrature::gauss_kronrod<double, 61>;
    const double mc2 = p.m * p.c * p.c;
    // Kinetic-energy form: density ~ sqrt(t(t + 2mc^2)) (t + mc^2) e^{-t/T}.
    auto w = [&](double t) { return std::sqrt(t * (t + 2.0 * mc2)) * (t + mc2) * std::exp(-t / p.T); };
    const double inf = std::numeric_limits<double>::infinity();
    const double z = GK::integrate(w, 0.0, inf, 15, 1e-13);
    const double e = GK::integrate([&](double t) { return w(t) * (t + mc2); }, 0.0, inf, 15, 1e-13);
    return e / z;
}

// k_B T with juttner_mean_energy = energy per particle.
inline double fit_juttner_temperature(double energy_per_particle, double m, double c)
{
    const double mc2 = m * c * c;
    require(energy_per_particle > mc2, "energy per particle must exceed mc^2");
    // Mean energy rises monotonically from mc^2 (T -> 0) to 3T (T -> inf).
    double lo = 1e-12 * mc2, hi = energy_per_particle;
    for (int it = 0; it < 200 && hi - lo > 1e-15 * hi; ++it) {
        const double mid = 0.5 * (lo + hi);
        (juttner_mean_energy({m, mid, c}) < energy_per_particle ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

// |kappa| quantile by bisection on the CDF.
inline double juttner_speed_quantile(double q, const JuttnerParams& p)
{
    require(q > 0.0 && q < 1.0, "quantile level must be in (0, 1)");
    validate(p);
    double lo = 0.0, hi = std::sqrt(p.T * p.m);
    while (juttner_speed_cdf(hi, p) < q) hi *= 2.0;
    for (int it = 0; it < 200 && hi - lo > 1e-14 * hi; ++it) {
        const double mid = 0.5 * (lo + hi);
        (juttner_speed_cdf(mid, p) < q ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

struct JuttnerSample {
    Vec3List kappa;
    double acceptance = 1.0;
};

// Rejection sampling in the kinetic energy t. The target sqrt(t(t+2a)) (t+a) e^{-t/T}, a = mc^2,
// is bounded by sqrt(t)(sqrt(t) + sqrt(2a)) (t+a) e^{-t/T}, a mixture of Gamma(3), Gamma(5/2),
// Gamma(2) and Gamma(3/2) laws; the acceptance ratio sqrt(t+2a)/(sqrt(t)+sqrt(2a)) is >= 1/sqrt2.
inline JuttnerSample sample_juttner(const JuttnerParams& p, std::size_t n, std::uint64_t seed)
{
    validate(p);
    Philox rng(seed, "juttner");
    const double a = p.m * p.c * p.c, T = p.T, r2a = std::sqrt(2.0 * a);
    // t^2 + a t + sqrt(2a) t^{3/2} + sqrt(2a) a t^{1/2}; weight of t^s e^{-t/T} is Gamma(s+1) T^{s+1}.
    const double shape[4] = {3.0, 2.0, 2.5, 1.5};
    const double coef[4] = {1.0, a, r2a, r2a * a};
    double w[4], wsum = 0.0;
    for (int k = 0; k < 4; ++k) {
        w[k] = coef[k] * std::exp(std::lgamma(shape[k]) + (shape[k] - 1.0) * std::log(T));
        wsum += w[k];
    }
    std::discrete_distribution<int> pick(std::begin(w), std::end(w));
    std::gamma_distribution<double> gam[4] = {std::gamma_distribution<double>(shape[0], T),
                                              std::gamma_distribution<double>(shape[1], T),
                                              std::gamma_distribution<double>(shape[2], T),
                                              std::gamma_distribution<double>(shape[3], T)};
    JuttnerSample out;
    out.kappa.reserve(n);
    std::size_t tried = 0;
    while (out.kappa.size() < n) {
        ++tried;
        const double t = gam[pick(rng)](rng);
        const double ratio = std::sqrt(t + 2.0 * a) / (std::sqrt(t) + r2a);
        if (ratio > 1.0 + 1e-12) throw numeric_error("Juttner envelope does not dominate the target");
        if (rng.uniform() >= ratio) continue;
        const double k = std::sqrt(t * (t + 2.0 * a)) / p.c;
        Vec3 dir = normal_vec3(rng);
        out.kappa.push_back(k * dir.normalized());
    }
    out.acceptance = double(n) / double(std::max<std::size_t>(tried, 1));
    return out;
}

// ---------------------------------------------------------------- one-particle histograms

// Spherical bins in kappa (|kappa|, cos theta, phi about the columns of `axes`), optionally
// crossed with radial |eta| bins.
struct Binning {
    int n_kappa = 40;
    double kappa_max = 1.0;
    int n_cos = 1;
    int n_phi = 1;
    int n_eta = 1;
    double eta_max = 0.0; // 0: eta not binned
    Mat3 axes = Mat3::Identity();

    std::size_t size() const { return std::size_t(n_eta) * n_kappa * n_cos * n_phi; }
    bool eta_binned() const { return eta_max > 0.0; }
};

inline void validate(const Binning& b)
{
    require(b.n_kappa >= 1 && b.n_cos >= 1 && b.n_phi >= 1 && b.n_eta >= 1, "bin counts must be positive");
    require(std::isfinite(b.kappa_max) && b.kappa_max > 0.0, "kappa range must be positive");
    require(b.eta_max >= 0.0, "eta range must be non-negative");
    require((b.axes.transpose() * b.axes - Mat3::Identity()).cwiseAbs().maxCoeff() < 1e-10,
            "bin axes must be orthonormal");
}

// Binning with |kappa| up to the 1 - 1e-6 Juttner quantile at the working temperature.
inline Binning juttner_binning(const JuttnerParams& p, int n_kappa = 40)
{
    Binning b;
    b.n_kappa = n_kappa;
    b.kappa_max = juttner_speed_quantile(1.0 - 1e-6, p);
    return b;
}

struct DistributionHistogram {
    Binning bins;
    std::vector<std::uint64_t> counts; // particle entries per bin
    std::uint64_t entries = 0;         // in-range particle entries
    std::uint64_t overflow = 0;
    std::size_t n_states = 0;
    double tau = 0.0;

    std::size_t index(int ie, int ik, int ic, int ip) const
    {
        return ((std::size_t(ie) * bins.n_kappa + ik) * bins.n_cos + ic) * bins.n_phi + ip;
    }
    double kappa_edge(int k) const { return bins.kappa_max * k / bins.n_kappa; }
    double eta_edge(int k) const { return bins.eta_max * k / bins.n_eta; }
    double cos_edge(int k) const { return -1.0 + 2.0 * k / bins.n_cos; }
    double phi_edge(int k) const { return 2.0 * std::numbers::pi * k / bins.n_phi; }

    double kappa_volume(int ik) const
    {
        const double a = kappa_edge(ik), b = kappa_edge(ik + 1);
        return (b * b * b - a * a * a) / 3.0 * (2.0 / bins.n_cos) * (2.0 * std::numbers::pi / bins.n_phi);
    }
    double eta_volume(int ie) const
    {
        if (!bins.eta_binned()) return 1.0;
        const double a = eta_edge(ie), b = eta_edge(ie + 1);
        return 4.0 * std::numbers::pi * (b * b * b - a * a * a) / 3.0;
    }

    double probability(std::size_t i) const { return entries ? double(counts[i]) / double(entries) : 0.0; }

    // Density in (eta, kappa) space, or in kappa space when eta is not binned.
    double density(int ie, int ik, int ic, int ip) const
    {
        return probability(index(ie, ik, ic, ip)) / (kappa_volume(ik) * eta_volume(ie));
    }

    // Integral of the density over all bins; 1 for any non-empty histogram.
    double integral() const
    {
        KahanSum s;
        for (int ie = 0; ie < bins.n_eta; ++ie)
            for (int ik = 0; ik < bins.n_kappa; ++ik)
                for (int ic = 0; ic < bins.n_cos; ++ic)
                    for (int ip = 0; ip < bins.n_phi; ++ip)
                        s.add(density(ie, ik, ic, ip) * kappa_volume(ik) * eta_volume(ie));
        return s.value();
    }

    // Density of |kappa| (per unit |kappa|), comparable with juttner_speed_pdf.
    std::vector<double> kappa_marginal() const
    {
        std::vector<double> out(std::size_t(bins.n_kappa), 0.0);
        for (std::size_t i = 0; i < counts.size(); ++i) {
            const int ik = int((i / (std::size_t(bins.n_cos) * bins.n_phi)) % bins.n_kappa);
            out[std::size_t(ik)] += probability(i);
        }
        const double w = bins.kappa_max / bins.n_kappa;
        for (double& x : out) x /= w;
        return out;
    }

    // Density of |eta| (per unit |eta|).
    std::vector<double> eta_marginal() const
    {
        require(bins.eta_binned(), "histogram has no eta bins");
        std::vector<double> out(std::size_t(bins.n_eta), 0.0);
        const std::size_t per = std::size_t(bins.n_kappa) * bins.n_cos * bins.n_phi;
        for (std::size_t i = 0; i < counts.size(); ++i) out[i / per] += probability(i);
        const double w = bins.eta_max / bins.n_eta;
        for (double& x : out) x /= w;
        return out;
    }

    // Bin of a single particle, or nullopt if it falls outside the range.
    std::optional<std::size_t> locate(const Vec3& eta, const Vec3& kappa) const
    {
        const double k = kappa.norm();
        const int ik = int(k / bins.kappa_max * bins.n_kappa);
        if (ik >= bins.n_kappa) return std::nullopt;
        int ie = 0;
        if (bins.eta_binned()) {
            ie = int(eta.norm() / bins.eta_max * bins.n_eta);
            if (ie >= bins.n_eta) return std::nullopt;
        }
        int ic = 0, ip = 0;
        if (bins.n_cos > 1 || bins.n_phi > 1) {
            const Vec3 local = bins.axes.transpose() * kappa;
            const double ct = k > 0.0 ? std::clamp(local.z() / k, -1.0, 1.0) : 1.0;
            ic = std::min(int((ct + 1.0) / 2.0 * bins.n_cos), bins.n_cos - 1);
            double ph = std::atan2(local.y(), local.x());
            if (ph < 0.0) ph += 2.0 * std::numbers::pi;
            ip = std::min(int(ph / (2.0 * std::numbers::pi) * bins.n_phi), bins.n_phi - 1);
        }
        return index(ie, ik, ic, ip);
    }

    void merge(const DistributionHistogram& o)
    {
        require(o.counts.size() == counts.size(), "histograms have different binnings");
        for (std::size_t i = 0; i < counts.size(); ++i) counts[i] += o.counts[i];
        entries += o.entries;
        overflow += o.overflow;
        n_states += o.n_states;
    }
};

inline DistributionHistogram empty_histogram(const Binning& b)
{
    validate(b);
    DistributionHistogram h;
    h.bins = b;
    h.counts.assign(b.size(), 0);
    return h;
}

struct F1Options {
    bool require_rest_frame = true;
    double rest_frame_tol = 1e-8;
};

// f(eta, kappa) = < sum_i delta(eta - eta_i) delta(kappa - kappa_i) / N > over the states.
// States off the rest-frame constraints are rejected with a diagnostic.
inline DistributionHistogram estimate_f1(const std::vector<WignerPhaseState>& states, const ModelSpec& model,
                                         const Binning& bins, const F1Options& opt = {})
{
    require(!states.empty(), "estimate_f1 needs at least one state");
    DistributionHistogram h = empty_histogram(bins);
    h.tau = states.front().tau;
    for (std::size_t s = 0; s < states.size(); ++s) {
        const auto& st = states[s];
        check_sizes(st, model);
        if (opt.require_rest_frame && st.size() >= 2) {
            const auto r = constraint_residuals(st, model);
            if (!(r.P <= opt.rest_frame_tol && r.K_over_Mc <= opt.rest_frame_tol))
                throw invalid_input("state " + std::to_string(s) + " violates the rest-frame constraints (|P| = " +
                                    std::to_string(r.P) + ", |K|/Mc = " + std::to_string(r.K_over_Mc) + ")");
        }
        for (std::size_t i = 0; i < st.size(); ++i) {
            if (const auto k = h.locate(st.eta[i], st.kappa[i])) {
                ++h.counts[*k];
                ++h.entries;
            } else {
                ++h.overflow;
            }
        }
        ++h.n_states;
    }
    if (h.entries == 0) throw numeric_error("every particle fell outside the histogram range");
    return h;
}

// Pooled |kappa| of every particle in every state.
inline std::vector<double> pooled_speeds(const std::vector<WignerPhaseState>& states)
{
    std::vector<double> out;
    for (const auto& s : states)
        for (const auto& k : s.kappa) out.push_back(k.norm());
    return out;
}

// ---------------------------------------------------------------- Lorentz-scalar check

struct ScalarInvarianceReport {
    Mat3 rotation = Mat3::Identity();
    double chi2 = 0.0;
    int dof = 0;
    double threshold = 0.0; // 99% chi-square quantile
    double max_discrepancy = 0.0;
    std::vector<double> discrepancy; // per-bin density difference
    bool pass = true;
};

// Applies the Wigner rotation induced by Lambda on a frame of 4-velocity (h0; h) to every particle,
// re-estimates f1 and compares with the original histogram bin by bin.
inline ScalarInvarianceReport scalar_invariance_report(const std::vector<WignerPhaseState>& states,
                                                       const ModelSpec& model, const Mat4& lambda, const Vec3& h,
                                                       const Binning& bins, bool rotate_bins = false,
                                                       const F1Options& opt = {})
{
    if (!is_proper_orthochronous(lambda)) throw invalid_input("Lorentz matrix is not proper orthochronous");
    ScalarInvarianceReport rep;
    rep.rotation = wigner_rotation(lambda, h);
    std::vector<WignerPhaseState> moved;
    moved.reserve(states.size());
    for (const auto& s : states) moved.push_back(rotate_state(s, rep.rotation));
    Binning b2 = bins;
    if (rotate_bins) b2.axes = rep.rotation * bins.axes;
    const DistributionHistogram a = estimate_f1(states, model, bins, opt);
    const DistributionHistogram b = estimate_f1(moved, model, b2, opt);
    rep.discrepancy.resize(a.counts.size());
    int used = 0;
    for (std::size_t i = 0; i < a.counts.size(); ++i) {
        const double pa = a.probability(i), pb = b.probability(i);
        const auto ik = int((i / (std::size_t(bins.n_cos) * bins.n_phi)) % bins.n_kappa);
        const auto ie = int(i / (std::size_t(bins.n_kappa) * bins.n_cos * bins.n_phi));
        rep.discrepancy[i] = (pb - pa) / (a.kappa_volume(ik) * a.eta_volume(ie));
        rep.max_discrepancy = std::max(rep.max_discrepancy, std::abs(rep.discrepancy[i]));
        // Two-sample chi-square on counts (equal totals up to overflow).
        const double ca = double(a.counts[i]), cb = double(b.counts[i]);
        if (ca + cb > 0.0) {
            rep.chi2 += (ca - cb) * (ca - cb) / (ca + cb);
            ++used;
        }
    }
    rep.dof = std::max(used - 1, 1);
    rep.threshold = chi_squared_quantile(rep.dof, 0.99);
    rep.pass = rep.chi2 <= rep.threshold;
    return rep;
}

// ---------------------------------------------------------------- moments

struct MomentFields {
    Vec4 J = Vec4::Zero();
    Mat4 T = Mat4::Zero();
    Vec4 S = Vec4::Zero();
    Vec4 J_err = Vec4::Zero();
    Mat4 T_err = Mat4::Zero();
    Vec4 S_err = Vec4::Zero();
    bool has_entropy = false;
};

// Moments with Planck's constant set to 1 and number density n:
// J = n int d^3k (k^mu/k^0) f,  T = n c int d^3k k^mu k^nu / k^0 f,  S = -n int d^3k (k^mu/k^0) f ln f,
// k^0 = sqrt(m^2c^2 + k^2); J^0 = n, T^00 the energy density, T^ii the pressures.
inline MomentFields moments_from_samples(const Vec3List& kappa, double m, double c, double n = 1.0,
                                         const std::function<double(const Vec3&)>& pdf = {})
{
    require(!kappa.empty(), "moments need at least one sample");
    require(m > 0.0 && c > 0.0 && n > 0.0, "need m, c, n > 0");
    std::array<Moments, 4> j, s;
    std::array<std::array<Moments, 4>, 4> t;
    for (const auto& k : kappa) {
        const double k0 = std::sqrt(m * m * c * c + k.squaredNorm());
        const Vec4 p = four(k0, k);
        const double lf = pdf ? std::log(pdf(k)) : 0.0;
        for (int mu = 0; mu < 4; ++mu) {
            j[mu].add(n * p[mu] / k0);
            if (pdf) s[mu].add(-n * p[mu] / k0 * lf);
            for (int nu = 0; nu < 4; ++nu) t[mu][nu].add(n * c * p[mu] * p[nu] / k0);
        }
    }
    MomentFields f;
    f.has_entropy = bool(pdf);
    for (int mu = 0; mu < 4; ++mu) {
        f.J[mu] = j[mu].mean();
        f.J_err[mu] = j[mu].stderr_of_mean();
        f.S[mu] = s[mu].mean();
        f.S_err[mu] = s[mu].stderr_of_mean();
        for (int nu = 0; nu < 4; ++nu) {
            f.T(mu, nu) = t[mu][nu].mean();
            f.T_err(mu, nu) = t[mu][nu].stderr_of_mean();
        }
    }
    return f;
}

namespace detail {

// Averages of the unit vector n and of n n^T over a (cos theta, phi) patch, in the bin frame.
inline std::pair<Vec3, Mat3> patch_averages(double u0, double u1, double p0, double p1)
{
    const double du = u1 - u0, dp = p1 - p0;
    auto F = [](double u) { return 0.5 * (u * std::sqrt(1.0 - u * u) + std::asin(u)); };
    const double s = (F(u1) - F(u0)) / du;
    const double uu = (u1 * u1 * u1 - u0 * u0 * u0) / (3.0 * du);
    const double ss = 1.0 - uu;
    auto G = [](double u) { return -std::pow(1.0 - u * u, 1.5) / 3.0; };
    const double su = (G(u1) - G(u0)) / du;
    const double cp = (std::sin(p1) - std::sin(p0)) / dp, sp = (std::cos(p0) - std::cos(p1)) / dp;
    const double cc = 0.5 + (std::sin(2 * p1) - std::sin(2 * p0)) / (4.0 * dp);
    const double sc = (std::sin(p1) * std::sin(p1) - std::sin(p0) * std::sin(p0)) / (2.0 * dp);
    Vec3 n(s * cp, s * sp, 0.5 * (u0 + u1));
    Mat3 nn;
    nn << ss * cc, ss * sc, su * cp, ss * sc, ss * (1.0 - cc), su * sp, su * cp, su * sp, uu;
    return {n, nn};
}

} // namespace detail

// Moments of a histogram: each bin contributes at its volume-weighted radius with exact angular
// averages over its solid-angle patch. Linear in the bin probabilities.
inline MomentFields moments(const DistributionHistogram& h, double m, double c, double n = 1.0)
{
    require(m > 0.0 && c > 0.0 && n > 0.0, "need m, c, n > 0");
    const auto& b = h.bins;
    // kappa-marginal probabilities (summed over eta bins).
    const std::size_t per = std::size_t(b.n_kappa) * b.n_cos * b.n_phi;
    std::vector<double> p(per, 0.0);
    for (std::size_t i = 0; i < h.counts.size(); ++i) p[i % per] += h.probability(i);
    MomentFields f;
    f.has_entropy = true;
    for (int ik = 0; ik < b.n_kappa; ++ik) {
        const double a0 = h.kappa_edge(ik), a1 = h.kappa_edge(ik + 1);
        const double kr = 0.75 * (a1 * a1 * a1 * a1 - a0 * a0 * a0 * a0) / (a1 * a1 * a1 - a0 * a0 * a0);
        const double k0 = std::sqrt(m * m * c * c + kr * kr);
        const double vol = h.kappa_volume(ik);
        for (int ic = 0; ic < b.n_cos; ++ic)
            for (int ip = 0; ip < b.n_phi; ++ip) {
                const double w = p[(std::size_t(ik) * b.n_cos + ic) * b.n_phi + ip];
                if (w == 0.0) continue;
                const auto [nl, nnl] = detail::patch_averages(h.cos_edge(ic), h.cos_edge(ic + 1), h.phi_edge(ip),
                                                              h.phi_edge(ip + 1));
                const Vec3 nv = b.axes * nl;
                const Mat3 nn = b.axes * nnl * b.axes.transpose();
                Vec4 u = four(1.0, kr / k0 * nv);
                Mat4 kk;
                kk(0, 0) = k0;
                kk.block<1, 3>(0, 1) = kr * nv.transpose();
                kk.block<3, 1>(1, 0) = kr * nv;
                kk.block<3, 3>(1, 1) = kr * kr / k0 * nn;
                const double lf = std::log(w / vol);
                f.J += n * w * u;
                f.T += n * c * w * kk;
                f.S -= n * w * lf * u;
            }
    }
    return f;
}

// Convex combination alpha h1 + (1 - alpha) h2 of normalised histograms, as moments.
inline MomentFields mix_moments(double alpha, const MomentFields& a, const MomentFields& b)
{
    MomentFields f;
    f.J = alpha * a.J + (1.0 - alpha) * b.J;
    f.T = alpha * a.T + (1.0 - alpha) * b.T;
    f.S = alpha * a.S + (1.0 - alpha) * b.S;
    return f;
}

struct PerfectFluid {
    bool ok = false;
    double rho = 0.0;
    double p = 0.0;
    Vec4 U = Vec4::Zero();
    double anisotropy = 0.0; // largest deviation of the rest-frame stress from p 1
    std::string diagnostic;
};

// T^mu_nu U^nu = rho U^mu with U time-like; p from the spatial block in U's rest frame.
inline PerfectFluid perfect_fluid_decompose(const Mat4& T, double sym_tol = 1e-10)
{
    PerfectFluid out;
    const double scale = std::max(T.cwiseAbs().maxCoeff(), std::numeric_limits<double>::min());
    if ((T - T.transpose()).cwiseAbs().maxCoeff() > sym_tol * scale) {
        out.diagnostic = "tensor is not symmetric";
        return out;
    }
    const Mat4 mixed = T * minkowski();
    Eigen::EigenSolver<Mat4> es(mixed);
    double best = -1.0;
    for (int k = 0; k < 4; ++k) {
        if (std::abs(es.eigenvalues()[k].imag()) > 1e-10 * scale) continue;
        const Eigen::Vector4cd vc = es.eigenvectors().col(k);
        // Rotate the complex phase away before taking the real part.
        Eigen::Index big;
        vc.cwiseAbs().maxCoeff(&big);
        const std::complex<double> phase = vc[big] / std::abs(vc[big]);
        Vec4 v = (vc / phase).real();
        const double norm2 = mdot(v, v);
        if (!(norm2 > 0.0)) continue;
        if (norm2 / v.squaredNorm() > best) {
            best = norm2 / v.squaredNorm();
            v /= std::sqrt(norm2);
            if (v[0] < 0.0) v = -v;
            out.U = v;
            out.rho = es.eigenvalues()[k].real();
            out.ok = true;
        }
    }
    if (!out.ok) {
        out.diagnostic = "no time-like eigenvector; data are not a perfect fluid";
        return out;
    }
    const Mat4 L = build_boost_tetrad(out.U.tail<3>());
    const Mat4 Li = lorentz_inverse(L);
    const Mat4 rest = Li * T * Li.transpose();
    out.p = rest.block<3, 3>(1, 1).trace() / 3.0;
    out.anisotropy = (rest.block<3, 3>(1, 1) - out.p * Mat3::Identity()).cwiseAbs().maxCoeff();
    return out;
}

} // namespace wigner

#endif
