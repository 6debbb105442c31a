#ifndef WIGNER_ENSEMBLES_HPP
#define WIGNER_ENSEMBLES_HPP

#include "canonical.hpp"
#include "rng.hpp"
#include "special.hpp"
#include "stats.hpp"

#include <boost/math/special_functions/gamma.hpp>

#include <functional>
#include <optional>
#include <string>

namespace wigner {

enum class Regime { nonrel_standard, nonrel_restframe, rel_standard, rel_restframe };

inline std::string to_string(Regime r)
{
    switch (r) {
    case Regime::nonrel_standard: return "nonrel-standard";
    case Regime::nonrel_restframe: return "nonrel-restframe";
    case Regime::rel_standard: return "rel-standard";
    case Regime::rel_restframe: return "rel-restframe";
    }
    return "?";
}

inline Regime regime_from_string(const std::string& s)
{
    for (Regime r : {Regime::nonrel_standard, Regime::nonrel_restframe, Regime::rel_standard, Regime::rel_restframe})
        if (to_string(r) == s) return r;
    throw invalid_input("unknown regime '" + s + "'");
}

inline bool is_relativistic(Regime r) { return r == Regime::rel_standard || r == Regime::rel_restframe; }

// Volume characteristic function: every |eta_i| <= R, or every |rho_a| <= 2R.
enum class VolumeCut { particle, relative };

inline std::string to_string(VolumeCut v) { return v == VolumeCut::particle ? "particle" : "relative"; }

inline VolumeCut volume_cut_from_string(const std::string& s)
{
    if (s == "particle") return VolumeCut::particle;
    if (s == "relative") return VolumeCut::relative;
    throw invalid_input("unknown volume cut '" + s + "'");
}

struct EnsembleSpec {
    Regime regime = Regime::nonrel_standard;
    double E = 1.0;
    std::optional<Vec3> S;
    double R = 1.0;
    ModelSpec model;
    bool extended = false;
    std::optional<VolumeCut> cut; // unset: particle for standard regimes, relative for rest-frame ones

    std::size_t N() const { return model.size(); }
    double volume() const { return 4.0 * std::numbers::pi * R * R * R / 3.0; }
    VolumeCut volume_cut() const
    {
        if (cut) return *cut;
        return constrained() ? VolumeCut::relative : VolumeCut::particle;
    }
    // A single relativistic particle carries no rest-frame constraint.
    bool constrained() const
    {
        return regime == Regime::nonrel_restframe || (regime == Regime::rel_restframe && N() >= 2);
    }
    double rest_energy() const { return is_relativistic(regime) ? model.total_mass() * model.c * model.c : 0.0; }
};

inline void validate(const EnsembleSpec& spec)
{
    validate(spec.model);
    require(std::isfinite(spec.E), "energy must be finite");
    require(std::isfinite(spec.R) && spec.R > 0.0, "volume radius must be positive");
    if (spec.regime == Regime::nonrel_restframe) require(spec.N() >= 2, "rest-frame regimes need N >= 2");
    if (spec.extended) {
        require(spec.regime == Regime::nonrel_restframe, "extended ensembles are non-relativistic rest-frame only");
        require(spec.S.has_value(), "extended ensembles need a spin target");
        require(spec.N() >= 3, "extended ensembles need N >= 3");
    }
}

struct PartitionEstimate {
    double value = 0.0;
    double stderr = 0.0;
    std::size_t n_samples = 0;
    std::string method;
    double bandwidth = 0.0;
    std::uint64_t seed = 0;
    std::string stream;
};

inline double log_ball_volume(int dim, double radius)
{
    return 0.5 * dim * std::log(std::numbers::pi) + dim * std::log(radius) - std::lgamma(0.5 * dim + 1.0);
}

inline bool equal_masses(const std::vector<double>& m)
{
    for (double x : m)
        if (x != m.front()) return false;
    return true;
}

// ---------------------------------------------------------------- closed forms (equal masses)

// (1/N!) (2 pi m)^{3N/2} E^{3N/2-1} V^N / Gamma(3N/2).
inline PartitionEstimate analytic_Z_free_nr(double E, double V, int N, double m)
{
    require(N >= 1 && V > 0.0 && m > 0.0, "need N >= 1, V > 0, m > 0");
    PartitionEstimate z{0.0, 0.0, 0, "analytic", 0.0, 0, ""};
    if (!(E > 0.0)) return z;
    const double n3 = 1.5 * N;
    z.value = std::exp(-std::lgamma(N + 1.0) + n3 * std::log(2.0 * std::numbers::pi * m) + (n3 - 1.0) * std::log(E) +
                       N * std::log(V) - std::lgamma(n3));
    return z;
}

// Energy and total-momentum shells:
// (1/N!) V^N N^{-3/2} (2 pi m)^{(3N-3)/2} (E - kappa_+^2/(2Nm))^{(3N-5)/2} / Gamma((3N-3)/2).
inline PartitionEstimate analytic_Z_restframe_mom(double E, double V, int N, double m, double kappa_plus)
{
    require(N >= 2 && V > 0.0 && m > 0.0, "need N >= 2, V > 0, m > 0");
    PartitionEstimate z{0.0, 0.0, 0, "analytic", 0.0, 0, ""};
    const double Er = E - kappa_plus * kappa_plus / (2.0 * N * m);
    if (!(Er > 0.0)) return z;
    const double n = 1.5 * N - 1.5;
    z.value = std::exp(-std::lgamma(N + 1.0) + N * std::log(V) - 1.5 * std::log(double(N)) +
                       n * std::log(2.0 * std::numbers::pi * m) + (n - 1.0) * std::log(Er) - std::lgamma(n));
    return z;
}

// Energy, momentum and centre-of-mass shells with every |eta_i| <= R:
// momentum part as above times (1/m^3) 3^{N-1} V^{N-1} (2/pi) I_N.
inline PartitionEstimate analytic_Z_restframe_boost(double E, double V, int N, double m)
{
    require(N >= 2 && V > 0.0 && m > 0.0, "need N >= 2, V > 0, m > 0");
    PartitionEstimate z{0.0, 0.0, 0, "quadrature", 0.0, 0, ""};
    if (!(E > 0.0)) return z;
    const QuadratureResult in = spherical_bessel_moment(N);
    if (!(in.error < 1e-8 * in.value)) throw numeric_error("j1 moment quadrature did not converge");
    const double n = 1.5 * N - 1.5;
    const double mom = std::exp(-std::lgamma(N + 1.0) - 1.5 * std::log(double(N)) +
                                n * std::log(2.0 * std::numbers::pi * m) + (n - 1.0) * std::log(E) - std::lgamma(n));
    const double pos = std::pow(3.0 * V, N - 1) * 2.0 / (std::numbers::pi * m * m * m);
    z.value = mom * pos * in.value;
    z.stderr = mom * pos * in.error;
    return z;
}

// Laplace transform in E of the relativistic standard Z: ((4 pi V)^N / N!) (m^2 c K2(s m c^2)/s)^N.
inline double laplace_Z_rel(double s, double V, int N, double m, double c)
{
    require(s > 0.0 && V > 0.0 && N >= 1 && m > 0.0 && c > 0.0, "need s, V, m, c > 0 and N >= 1");
    const double x = s * m * c * c;
    const double log_k2 = std::log(bessel_k2_scaled(x)) - x;
    return std::exp(N * std::log(4.0 * std::numbers::pi * V) - std::lgamma(N + 1.0) +
                    N * (std::log(m * m * c / s) + log_k2));
}

// Z_rel(E) by fixed-Talbot inversion of the transform with the rest-energy edge shifted to zero.
inline PartitionEstimate inverse_laplace_Z_rel(double E, double V, int N, double m, double c, int nodes = 64)
{
    require(V > 0.0 && N >= 1 && m > 0.0 && c > 0.0, "need V, m, c > 0 and N >= 1");
    PartitionEstimate z{0.0, 0.0, 0, "quadrature", 0.0, 0, ""};
    const double t = E - N * m * c * c;
    if (!(t > 0.0)) return z;
    using CL = std::complex<long double>;
    const long double mc2 = (long double)(m) * c * c;
    const long double pref = N * std::log(4.0L * std::numbers::pi_v<long double> * V) - std::lgamma(N + 1.0L);
    std::function<CL(const CL&)> G = [&](const CL& s) {
        const CL f = (long double)(m) * m * c * bessel_k2_scaled(s * mc2) / s;
        return std::exp(pref + (long double)N * std::log(f));
    };
    z.value = double(talbot_inverse(G, (long double)t, nodes));
    if (!std::isfinite(z.value)) throw numeric_error("inverse Laplace transform overflowed");
    return z;
}

// Single relativistic particle: V 4 pi kappa* E / c^2.
inline double shell_Z_rel_single(double E, double V, double m, double c)
{
    const double mc2 = m * c * c;
    if (!(E > mc2)) return 0.0;
    const double kstar = std::sqrt(E * E - mc2 * mc2) / c;
    return V * 4.0 * std::numbers::pi * kstar * E / (c * c);
}

// ---------------------------------------------------------------- thermodynamics

struct Thermo {
    double lnZ = 0.0;
    double beta = 0.0;          // d lnZ / dE = 1/(k_B T)
    double pressure_beta = 0.0; // d lnZ / dV = P/(k_B T)
    double T = 0.0;
    double P = 0.0;
    double entropy = 0.0;          // k_B ln Z
    double entropy_per_particle = 0.0; // k_B ln Z / N
};

inline Thermo thermo_from_derivatives(double lnZ, double dE, double dV, int N)
{
    Thermo t;
    t.lnZ = lnZ;
    t.beta = dE;
    t.pressure_beta = dV;
    if (!(dE > 0.0)) throw numeric_error("ln Z is not increasing in E; temperature undefined");
    t.T = 1.0 / dE;
    t.P = dV * t.T;
    t.entropy = lnZ;
    t.entropy_per_particle = lnZ / N;
    return t;
}

enum class ClosedForm { free_nr, restframe_mom, restframe_boost };

// Exact derivatives of the closed forms: lnZ = a ln E + b ln V + const.
inline Thermo analytic_thermo(ClosedForm form, double E, double V, int N, double m)
{
    require(E > 0.0, "temperature needs E > 0");
    double a = 0.0, b = 0.0, z = 0.0;
    switch (form) {
    case ClosedForm::free_nr:
        a = 1.5 * N - 1.0;
        b = N;
        z = analytic_Z_free_nr(E, V, N, m).value;
        break;
    case ClosedForm::restframe_mom:
        a = 1.5 * N - 2.5;
        b = N;
        z = analytic_Z_restframe_mom(E, V, N, m, 0.0).value;
        break;
    case ClosedForm::restframe_boost:
        a = 1.5 * N - 2.5;
        b = N - 1;
        z = analytic_Z_restframe_boost(E, V, N, m).value;
        break;
    }
    return thermo_from_derivatives(std::log(z), a / E, b / V, N);
}

// Central differences of ln Z for any curve Z(E, V).
inline Thermo numeric_thermo(const std::function<double(double, double)>& Z, double E, double V, int N,
                             double rel_step = 1e-4)
{
    const double z0 = Z(E, V);
    if (!(z0 > 0.0)) throw numeric_error("Z must be positive near the evaluation point");
    const double hE = rel_step * std::abs(E), hV = rel_step * V;
    const double dE = (std::log(Z(E + hE, V)) - std::log(Z(E - hE, V))) / (2.0 * hE);
    const double dV = (std::log(Z(E, V + hV)) - std::log(Z(E, V - hV))) / (2.0 * hV);
    return thermo_from_derivatives(std::log(z0), dE, dV, N);
}

// ---------------------------------------------------------------- sampling helpers

// Uniform point in the dim-ball of given radius: Gaussian direction, radius u^{1/dim}.
inline void uniform_in_nball(Philox& rng, std::vector<double>& out, double radius)
{
    double norm2 = 0.0;
    for (double& x : out) {
        x = rng.normal();
        norm2 += x * x;
    }
    const double r = radius * std::pow(rng.uniform(), 1.0 / double(out.size())) / std::sqrt(norm2);
    for (double& x : out) x *= r;
}

// Non-relativistic Hamiltonian sum (kappa_i + W_i)^2 / 2 m_i.
inline double nonrel_hamiltonian(const WignerPhaseState& s, const ModelSpec& model)
{
    const Vec3List p = kinetic_momenta(s, model);
    KahanSum h;
    for (std::size_t i = 0; i < p.size(); ++i) h.add(p[i].squaredNorm() / (2.0 * model.masses[i]));
    return h.value();
}

// Energy of a state in the units of the regime: sum kinetic for nonrel, c Mc for rel.
inline double regime_energy(const WignerPhaseState& s, const EnsembleSpec& spec)
{
    return is_relativistic(spec.regime) ? spec.model.c * hamiltonian(s, spec.model) : nonrel_hamiltonian(s, spec.model);
}

// Jacobian |d eta / d(eta_+, rho)| of the position part of the relative-variable map.
inline double relative_position_jacobian(const SeparationMatrix& sep)
{
    const auto n = Eigen::Index(sep.size());
    Eigen::MatrixXd B(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        B(i, 0) = 1.0;
        for (Eigen::Index a = 0; a + 1 < n; ++a) B(i, a + 1) = sep.Gamma(a, i) / std::sqrt(double(n));
    }
    return std::pow(std::abs(B.determinant()), 3);
}

// Radius in kinetic-momentum space (full 3N norm) that contains every state with energy <= Emax.
inline double momentum_radius(const EnsembleSpec& spec, double Emax)
{
    const auto& m = spec.model.masses;
    if (!is_relativistic(spec.regime)) {
        const double mmax = *std::max_element(m.begin(), m.end());
        return std::sqrt(2.0 * mmax * std::max(Emax, 0.0));
    }
    const double c = spec.model.c;
    double sum_m2 = 0.0;
    for (double x : m) sum_m2 += x * x * c * c;
    return std::sqrt(std::max(Emax * Emax / (c * c) - sum_m2, 0.0));
}

// One draw from the sampling measure of mc_partition: the state, its energy and the measure
// weight (constant sampling volume times the position-constraint factor). weight = 0 marks a
// draw outside the characteristic function.
struct ShellDraw {
    WignerPhaseState state;
    double energy = 0.0;
    double weight = 0.0;
};

class PhaseSpaceSampler {
public:
    PhaseSpaceSampler(const EnsembleSpec& spec, double Emax) : spec_(spec), n_(spec.N())
    {
        validate(spec);
        const double K = momentum_radius(spec, Emax);
        require(K > 0.0, "sampling energy lies below the ground state");
        K_ = K;
        const double V = spec.volume();
        const int n = int(n_);
        if (!spec.constrained()) {
            pdim_ = 3 * n;
            log_volume_ = log_ball_volume(pdim_, K) + n * std::log(V);
        } else {
            pdim_ = 3 * (n - 1);
            // Ellipsoid q^T A q <= K^2 with A = 1 + 1 1^T has volume ball * det(A)^{-3/2} = ball * N^{-3/2}.
            log_volume_ = log_ball_volume(pdim_, K) - 1.5 * std::log(double(n));
            if (spec.volume_cut() == VolumeCut::particle) {
                log_volume_ += (n - 1) * std::log(V);
            } else {
                sep_ = build_separation_matrix(spec.model.masses);
                log_volume_ += (n - 1) * std::log(8.0 * V) + std::log(relative_position_jacobian(*sep_));
                if (spec.regime == Regime::nonrel_restframe) log_volume_ -= 3.0 * std::log(spec.model.total_mass());
            }
        }
        buf_.resize(std::size_t(pdim_));
        draw_.state.eta.assign(n_, Vec3::Zero());
        draw_.state.kappa.assign(n_, Vec3::Zero());
        p_.assign(n_, Vec3::Zero());
        if (sep_) rel_.rho.assign(n_ - 1, Vec3::Zero()), rel_.pi.assign(n_ - 1, Vec3::Zero());
    }

    double log_volume() const { return log_volume_; }

    const ShellDraw& draw(Philox& rng)
    {
        const std::size_t n = n_;
        const double R = spec_.R;
        uniform_in_nball(rng, buf_, K_);
        if (!spec_.constrained()) {
            for (std::size_t i = 0; i < n; ++i) p_[i] = Vec3(buf_[3 * i], buf_[3 * i + 1], buf_[3 * i + 2]);
        } else {
            // q = A^{-1/2} u per Cartesian component, A^{-1/2} = 1 + (1/sqrt N - 1) 1 1^T / (N-1).
            const double f = (1.0 / std::sqrt(double(n)) - 1.0) / double(n - 1);
            Vec3 usum = Vec3::Zero();
            for (std::size_t i = 0; i + 1 < n; ++i) usum += Vec3(buf_[3 * i], buf_[3 * i + 1], buf_[3 * i + 2]);
            Vec3 total = Vec3::Zero();
            for (std::size_t i = 0; i + 1 < n; ++i) {
                p_[i] = Vec3(buf_[3 * i], buf_[3 * i + 1], buf_[3 * i + 2]) + f * usum;
                total += p_[i];
            }
            p_[n - 1] = -total;
        }
        draw_.weight = 1.0;
        auto& eta = draw_.state.eta;
        if (!spec_.constrained()) {
            for (auto& e : eta) e = uniform_in_ball(rng, R);
        } else if (!sep_) {
            // Particle cut: eta_N is fixed by the centre-of-mass constraint.
            Vec3 acc = Vec3::Zero();
            double wN = 0.0, wsum = 0.0;
            const bool rel = is_relativistic(spec_.regime);
            for (std::size_t i = 0; i < n; ++i) {
                const double m = spec_.model.masses[i];
                const double w = rel ? std::sqrt(m * m * spec_.model.c * spec_.model.c + p_[i].squaredNorm()) : m;
                wsum += w;
                if (i + 1 < n) {
                    eta[i] = uniform_in_ball(rng, R);
                    acc += w * eta[i];
                } else {
                    wN = w;
                }
            }
            eta[n - 1] = -acc / wN;
            if (eta[n - 1].norm() > R) draw_.weight = 0.0;
            // delta^3(sum m eta) -> 1/m_N^3; delta^3(K/Mc) -> (Mc/E_N)^3.
            draw_.weight *= rel ? std::pow(wsum / wN, 3) : 1.0 / (wN * wN * wN);
        } else {
            for (auto& r : rel_.rho) r = uniform_in_ball(rng, 2.0 * R);
            const WignerPhaseState probe = from_relative(Vec3::Zero(), Vec3::Zero(), rel_, *sep_);
            Vec3 acc = Vec3::Zero();
            double wsum = 0.0;
            const bool rel = is_relativistic(spec_.regime);
            for (std::size_t i = 0; i < n; ++i) {
                const double m = spec_.model.masses[i];
                const double w = rel ? std::sqrt(m * m * spec_.model.c * spec_.model.c + p_[i].squaredNorm()) : m;
                acc += w * probe.eta[i];
                wsum += w;
            }
            for (std::size_t i = 0; i < n; ++i) eta[i] = probe.eta[i] - acc / wsum;
        }
        // Canonical momenta from kinetic ones; W sums to zero, so sum kappa = sum p.
        const Vec3List w = potential_gradient(draw_.state, spec_.model);
        for (std::size_t i = 0; i < n; ++i) draw_.state.kappa[i] = p_[i] - w[i];
        draw_.energy = draw_.weight > 0.0 ? regime_energy(draw_.state, spec_) : 0.0;
        return draw_;
    }

private:
    EnsembleSpec spec_;
    std::size_t n_;
    double K_ = 0.0;
    int pdim_ = 0;
    double log_volume_ = 0.0;
    std::optional<SeparationMatrix> sep_;
    RelativeState rel_;
    std::vector<double> buf_;
    Vec3List p_;
    ShellDraw draw_;
};

struct McOptions {
    int threads = 1;
    int chunks = 64;
    double margin = 0.25;       // sampling reaches energies up to E (1 + margin) above the ground value
    double bandwidth = 0.0;     // 0: Silverman
    double bandwidth_scale = 1.0;
    std::size_t pilot = 100000;
};

struct McPartition {
    PartitionEstimate kernel;
    PartitionEstimate indicator;
    std::size_t effective = 0; // draws within three bandwidths of the shell
};

// Smoothed-delta Monte Carlo for Z(E). Both estimators use the same draws: the Gaussian kernel
// K_b(H - E), and the central difference of the indicator theta(E - H) with step b.
inline McPartition mc_partition(const EnsembleSpec& spec, std::size_t n_samples, std::uint64_t seed,
                                const McOptions& opt = {})
{
    validate(spec);
    require(!spec.extended, "extended ensembles are evaluated by extended_Z_nr");
    require(n_samples >= 100, "mc_partition needs at least 100 samples");
    require(opt.chunks >= 1 && opt.margin > 0.0, "chunks >= 1 and margin > 0 required");
    const double E0 = spec.rest_energy();
    require(spec.E > E0, "energy must exceed the ground value");
    const double Emax = spec.E + opt.margin * (spec.E - E0);
    const Philox root(seed, "mc");

    double b = opt.bandwidth;
    if (b <= 0.0) {
        // Spread from a pilot run on its own substream; the n^{-1/5} factor uses the full count.
        PhaseSpaceSampler pilot_sampler(spec, Emax);
        Philox prng = root.split(std::uint64_t(opt.chunks));
        std::vector<double> h;
        const std::size_t np = std::min(opt.pilot, n_samples);
        for (std::size_t k = 0; k < np; ++k) {
            const auto& d = pilot_sampler.draw(prng);
            if (d.weight > 0.0) h.push_back(d.energy);
        }
        if (h.size() < 10) throw numeric_error("pilot run found no admissible draws; check R and E");
        b = silverman_bandwidth(h) * std::pow(double(n_samples) / double(h.size()), -0.2);
    }
    b *= opt.bandwidth_scale;
    if (spec.E + 5.0 * b > Emax || spec.E - 5.0 * b < E0)
        throw numeric_error("kernel bandwidth " + std::to_string(b) +
                            " does not fit inside the sampled energy window; raise the sample count or the margin");

    struct Acc {
        Moments kern, ind;
        std::size_t effective = 0;
    };
    const std::size_t per = n_samples / std::size_t(opt.chunks), extra = n_samples % std::size_t(opt.chunks);
    auto work = [&](int c) {
        PhaseSpaceSampler sampler(spec, Emax);
        Philox rng = root.split(std::uint64_t(c));
        Acc a;
        const std::size_t count = per + (std::size_t(c) < extra ? 1 : 0);
        for (std::size_t k = 0; k < count; ++k) {
            const auto& d = sampler.draw(rng);
            double kv = 0.0, iv = 0.0;
            if (d.weight > 0.0) {
                const double u = d.energy - spec.E;
                kv = d.weight * gaussian_kernel(u, b);
                iv = std::abs(u) < b ? d.weight / (2.0 * b) : 0.0;
                if (std::abs(u) < 3.0 * b) ++a.effective;
            }
            a.kern.add(kv);
            a.ind.add(iv);
        }
        return a;
    };
    const auto parts = run_chunks(opt.chunks, resolve_threads(opt.threads), work);
    Acc tot;
    for (const auto& p : parts) {
        tot.kern.merge(p.kern);
        tot.ind.merge(p.ind);
        tot.effective += p.effective;
    }
    if (tot.effective == 0) throw numeric_error("no draws landed near the energy shell; raise the sample count");
    const double scale = std::exp(PhaseSpaceSampler(spec, Emax).log_volume() - std::lgamma(double(spec.N()) + 1.0));
    McPartition out;
    out.kernel = {scale * tot.kern.mean(), scale * tot.kern.stderr_of_mean(), n_samples, "mc-kernel", b, seed, "mc"};
    out.indicator = {scale * tot.ind.mean(), scale * tot.ind.stderr_of_mean(), n_samples, "mc-indicator", b, seed, "mc"};
    out.effective = tot.effective;
    return out;
}

// Omega(E) = integral of theta(E - H) over the sampled measure, one value per requested energy,
// from a single set of draws; monotone in E draw by draw.
inline std::vector<double> mc_cumulative(const EnsembleSpec& spec, const std::vector<double>& energies,
                                         std::size_t n_samples, std::uint64_t seed)
{
    validate(spec);
    require(!energies.empty(), "need at least one energy");
    const double Emax = *std::max_element(energies.begin(), energies.end());
    PhaseSpaceSampler sampler(spec, Emax);
    Philox rng(seed, "mc");
    std::vector<KahanSum> acc(energies.size());
    for (std::size_t k = 0; k < n_samples; ++k) {
        const auto& d = sampler.draw(rng);
        if (d.weight <= 0.0) continue;
        for (std::size_t j = 0; j < energies.size(); ++j)
            if (d.energy <= energies[j]) acc[j].add(d.weight);
    }
    const double scale = std::exp(sampler.log_volume() - std::lgamma(double(spec.N()) + 1.0)) / double(n_samples);
    std::vector<double> out;
    for (const auto& a : acc) out.push_back(scale * a.value());
    return out;
}

// ---------------------------------------------------------------- extended (spin) shell

// Momentum integral at fixed positions (equal masses, sum eta = 0) over the energy, momentum and
// spin shells: N^{-3/2} det(I)^{-1/2} (2 pi m)^{(3N-6)/2} (E - E~)^{(3N-8)/2} / Gamma((3N-6)/2),
// E~ = S^T I^{-1} S / 2m, I = sum (|eta|^2 1 - eta eta^T).
inline double spin_shell_measure(const Vec3List& eta, const Vec3& S, double E, double m)
{
    const std::size_t n = eta.size();
    Mat3 I = Mat3::Zero();
    for (const auto& e : eta) I += e.squaredNorm() * Mat3::Identity() - e * e.transpose();
    const double det = I.determinant();
    if (!(det > 0.0)) return 0.0;
    const double Et = S.dot(I.ldlt().solve(S)) / (2.0 * m);
    if (!(E > Et)) return 0.0;
    const double k = 1.5 * double(n) - 3.0;
    return std::exp(-1.5 * std::log(double(n)) - 0.5 * std::log(det) + k * std::log(2.0 * std::numbers::pi * m) +
                    (k - 1.0) * std::log(E - Et) - std::lgamma(k));
}

// Extended Z(E, S) with every |eta_i| <= R and the centre-of-mass shell: positions eta_1..eta_{N-1}
// uniform in the ball, eta_N = -sum, weight V^{N-1}/m^3 per admissible draw.
inline PartitionEstimate extended_Z_nr(double E, const Vec3& S, double V, int N, double m, std::size_t n_samples,
                                       std::uint64_t seed)
{
    require(N >= 3, "the spin shell is degenerate for N < 3");
    require(V > 0.0 && m > 0.0 && n_samples >= 2, "need V > 0, m > 0 and at least two samples");
    const double R = std::cbrt(3.0 * V / (4.0 * std::numbers::pi));
    Philox rng(seed, "mc");
    Moments mo;
    std::size_t admissible = 0;
    Vec3List eta(static_cast<std::size_t>(N));
    for (std::size_t k = 0; k < n_samples; ++k) {
        Vec3 sum = Vec3::Zero();
        for (int i = 0; i + 1 < N; ++i) {
            eta[i] = uniform_in_ball(rng, R);
            sum += eta[i];
        }
        eta[N - 1] = -sum;
        double v = 0.0;
        if (eta[N - 1].norm() <= R) {
            ++admissible;
            v = spin_shell_measure(eta, S, E, m);
        }
        mo.add(v);
    }
    if (admissible == 0) throw numeric_error("every position draw fell outside the volume");
    const double scale = std::exp((N - 1) * std::log(V) - 3.0 * std::log(m) - std::lgamma(N + 1.0));
    return {scale * mo.mean(), scale * mo.stderr_of_mean(), n_samples, "mc-indicator", 0.0, seed, "mc"};
}

// ---------------------------------------------------------------- shell sampling

struct ShellSampleOptions {
    std::size_t burn_in_sweeps = 200;
    std::size_t max_thin = 1000;
    double spin_width = 0.0; // extended: Gaussian width of the spin shell, 0 picks 2% of sqrt(2mE) R
};

struct ShellSample {
    std::vector<WignerPhaseState> states;
    double acceptance = 1.0;
    double tau_int = 1.0;
    std::size_t thin = 1;
    std::string method;
};

namespace detail {

// Kinetic momenta uniform on the energy shell for nonrel regimes: z_i = p_i / sqrt(m_i) is uniform
// on the sphere |z|^2 = 2E, restricted to sum sqrt(m_i) z_i = 0 in the rest frame.
inline Vec3List nonrel_shell_momenta(Philox& rng, const std::vector<double>& m, double E, bool restframe)
{
    const std::size_t n = m.size();
    Vec3List z(n);
    for (auto& v : z) v = normal_vec3(rng);
    if (restframe) {
        double M = 0.0;
        Vec3 proj = Vec3::Zero();
        for (std::size_t i = 0; i < n; ++i) {
            M += m[i];
            proj += std::sqrt(m[i]) * z[i];
        }
        for (std::size_t i = 0; i < n; ++i) z[i] -= std::sqrt(m[i]) * proj / M;
    }
    double norm2 = 0.0;
    for (const auto& v : z) norm2 += v.squaredNorm();
    const double scale = std::sqrt(2.0 * E / norm2);
    Vec3List p(n);
    for (std::size_t i = 0; i < n; ++i) p[i] = std::sqrt(m[i]) * scale * z[i];
    return p;
}

inline Vec3 random_unit(Philox& rng)
{
    for (;;) {
        const Vec3 v = normal_vec3(rng);
        const double n = v.norm();
        if (n > 1e-12) return v / n;
    }
}

// Elastic two-body collision: keeps the pair's energy and momentum, new direction uniform in the
// pair rest frame (relativistic) or in the relative-momentum sphere (non-relativistic).
inline void collide(Vec3& p1, Vec3& p2, double m1, double m2, double c, bool rel, Philox& rng)
{
    if (!rel) {
        const double M = m1 + m2;
        const Vec3 P = p1 + p2;
        const Vec3 q = (m2 * p1 - m1 * p2) / M;
        const Vec3 qn = q.norm() * random_unit(rng);
        p1 = m1 / M * P + qn;
        p2 = m2 / M * P - qn;
        return;
    }
    const double e1 = std::sqrt(m1 * m1 * c * c + p1.squaredNorm());
    const double e2 = std::sqrt(m2 * m2 * c * c + p2.squaredNorm());
    const double Et = e1 + e2;
    const Vec3 P = p1 + p2;
    const double W = std::sqrt(std::max(Et * Et - P.squaredNorm(), 0.0)); // invariant mass (momentum units)
    const double a = (W * W + (m1 * m1 - m2 * m2) * c * c) / (2.0 * W);  // particle 1 energy in pair frame
    const double q = std::sqrt(std::max(a * a - m1 * m1 * c * c, 0.0));
    const Vec3 k1 = q * random_unit(rng);
    // Boost (a, k1) from the pair rest frame by velocity P/Et.
    const Vec3 beta = P / Et;
    const double b2 = beta.squaredNorm();
    const double gamma = Et / W;
    const double bk = beta.dot(k1);
    const Vec3 k1lab = b2 > 0 ? k1 + ((gamma - 1.0) * bk / b2 + gamma * a) * beta : k1;
    p1 = k1lab;
    p2 = P - k1lab;
}

} // namespace detail

// Micro-canonical states on the shell. Non-relativistic regimes draw momenta exactly on the
// sphere. Relativistic regimes run a Metropolis chain of pair collisions (energy and momentum
// exact; acceptance E1'E2'/(E1 E2) for the d^3p measure) plus, in the standard regime, single
// direction flips. Positions are uniform in the characteristic function, with the centre of mass
// placed by the constraint. Extended specs add a Gaussian spin-shell factor and position moves.
inline ShellSample sample_shell(const EnsembleSpec& spec, std::size_t n_states, std::uint64_t seed,
                                const ShellSampleOptions& opt = {})
{
    validate(spec);
    const std::size_t n = spec.N();
    const auto& m = spec.model.masses;
    const double c = spec.model.c;
    const bool rel = is_relativistic(spec.regime);
    const bool restframe = spec.constrained();
    require(spec.E > spec.rest_energy(), "energy must exceed the ground value");
    const VolumeCut cut = spec.volume_cut();
    std::optional<SeparationMatrix> sep;
    if (restframe && cut == VolumeCut::relative) sep = build_separation_matrix(m);

    ShellSample out;
    Philox rng(seed, rel || spec.extended ? "metropolis" : "mc");

    // Positions for given kinetic momenta; false if the draw misses the volume.
    auto place = [&](const Vec3List& p, Vec3List& eta) -> bool {
        eta.assign(n, Vec3::Zero());
        std::vector<double> w(n);
        for (std::size_t i = 0; i < n; ++i) w[i] = rel ? std::sqrt(m[i] * m[i] * c * c + p[i].squaredNorm()) : m[i];
        if (!restframe) {
            for (auto& e : eta) e = uniform_in_ball(rng, spec.R);
            return true;
        }
        if (!sep) {
            Vec3 acc = Vec3::Zero();
            for (std::size_t i = 0; i + 1 < n; ++i) {
                eta[i] = uniform_in_ball(rng, spec.R);
                acc += w[i] * eta[i];
            }
            eta[n - 1] = -acc / w[n - 1];
            return eta[n - 1].norm() <= spec.R;
        }
        RelativeState r;
        r.rho.assign(n - 1, Vec3::Zero());
        r.pi.assign(n - 1, Vec3::Zero());
        for (auto& x : r.rho) x = uniform_in_ball(rng, 2.0 * spec.R);
        const WignerPhaseState probe = from_relative(Vec3::Zero(), Vec3::Zero(), r, *sep);
        Vec3 acc = Vec3::Zero();
        double ws = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            acc += w[i] * probe.eta[i];
            ws += w[i];
        }
        for (std::size_t i = 0; i < n; ++i) eta[i] = probe.eta[i] - acc / ws;
        return true;
    };
    auto assemble = [&](const Vec3List& p, const Vec3List& eta) {
        WignerPhaseState s;
        s.eta = eta;
        s.kappa = p;
        const Vec3List w = potential_gradient(s, spec.model);
        for (std::size_t i = 0; i < n; ++i) s.kappa[i] = p[i] - w[i];
        return s;
    };
    auto spin = [&](const Vec3List& pp, const Vec3List& ee) {
        const WignerPhaseState s = assemble(pp, ee);
        Vec3 S = Vec3::Zero();
        for (std::size_t i = 0; i < n; ++i) S += s.eta[i].cross(s.kappa[i]);
        return S;
    };

    if (!rel && !spec.extended) {
        out.method = "exact-shell";
        const double Ekin = spec.E;
        for (std::size_t k = 0; k < n_states;) {
            const Vec3List p = detail::nonrel_shell_momenta(rng, m, Ekin, restframe);
            Vec3List eta;
            if (!place(p, eta)) continue;
            out.states.push_back(assemble(p, eta));
            ++k;
        }
        return out;
    }

    // Initial momenta: random directions, momentum removed in the rest frame, magnitudes scaled to the shell.
    Vec3List p(n);
    for (auto& v : p) v = normal_vec3(rng);
    if (restframe) {
        Vec3 mean = Vec3::Zero();
        for (const auto& v : p) mean += v;
        mean /= double(n);
        for (auto& v : p) v -= mean;
    }
    auto energy_of_scale = [&](double lam) {
        double e = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double k2 = lam * lam * p[i].squaredNorm();
            e += rel ? c * std::sqrt(m[i] * m[i] * c * c + k2) : k2 / (2.0 * m[i]);
        }
        return e;
    };
    {
        double lo = 0.0, hi = 1.0;
        while (energy_of_scale(hi) < spec.E) hi *= 2.0;
        for (int it = 0; it < 200; ++it) {
            const double mid = 0.5 * (lo + hi);
            (energy_of_scale(mid) < spec.E ? lo : hi) = mid;
        }
        for (auto& v : p) v *= 0.5 * (lo + hi);
    }
    Vec3List eta;
    while (!place(p, eta)) {
    }

    const double width = opt.spin_width > 0.0
                             ? opt.spin_width
                             : 0.02 * std::sqrt(2.0 * *std::max_element(m.begin(), m.end()) * spec.E) * spec.R;
    // Target density relative to the proposal measure: the spin-shell kernel, and for the
    // relativistic particle cut the boost-constraint factor (Mc/E_N)^3.
    auto log_spin_weight = [&](const Vec3List& pp, const Vec3List& ee) {
        double lw = 0.0;
        if (rel && restframe && !sep) {
            double mc = 0.0, eN = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                const double e = std::sqrt(m[i] * m[i] * c * c + pp[i].squaredNorm());
                mc += e;
                if (i + 1 == n) eN = e;
            }
            lw += 3.0 * std::log(mc / eN);
        }
        if (!spec.extended) return lw;
        const Vec3 d = spin(pp, ee) - *spec.S;
        return lw - 0.5 * d.squaredNorm() / (width * width);
    };
    double logw = log_spin_weight(p, eta);

    std::size_t tried = 0, accepted = 0;
    auto sweep = [&] {
        for (std::size_t move = 0; move < n; ++move) {
            ++tried;
            const double choice = rng.uniform();
            Vec3List p2 = p, eta2 = eta;
            double log_ratio = 0.0;
            if (spec.extended && choice < 0.3) {
                // Fresh positions from the characteristic function (independence proposal).
                if (!place(p2, eta2)) continue;
            } else if (!restframe && (n == 1 || choice < 0.5)) {
                const std::size_t i = std::size_t(rng.uniform() * double(n)) % n;
                p2[i] = p2[i].norm() * detail::random_unit(rng);
            } else {
                if (n < 2) continue;
                const std::size_t i = std::size_t(rng.uniform() * double(n)) % n;
                std::size_t j = std::size_t(rng.uniform() * double(n - 1)) % (n - 1);
                if (j >= i) ++j;
                detail::collide(p2[i], p2[j], m[i], m[j], c, rel, rng);
                if (rel) {
                    const auto E = [&](const Vec3& v, double mm) { return std::sqrt(mm * mm * c * c + v.squaredNorm()); };
                    log_ratio += std::log(E(p2[i], m[i]) * E(p2[j], m[j]) / (E(p[i], m[i]) * E(p[j], m[j])));
                }
                if (restframe && rel && !sep) {
                    // Particle-cut positions depend on the energies; redraw them with the momenta.
                    if (!place(p2, eta2)) continue;
                } else if (restframe) {
                    // Re-centre: the weights in the boost constraint changed.
                    Vec3 acc = Vec3::Zero();
                    double ws = 0.0;
                    for (std::size_t k = 0; k < n; ++k) {
                        const double w = rel ? std::sqrt(m[k] * m[k] * c * c + p2[k].squaredNorm()) : m[k];
                        acc += w * eta2[k];
                        ws += w;
                    }
                    for (auto& e : eta2) e -= acc / ws;
                }
            }
            const double logw2 = log_spin_weight(p2, eta2);
            log_ratio += logw2 - logw;
            if (log_ratio >= 0.0 || rng.uniform() < std::exp(log_ratio)) {
                p = std::move(p2);
                eta = std::move(eta2);
                logw = logw2;
                ++accepted;
            }
        }
    };

    for (std::size_t s = 0; s < opt.burn_in_sweeps; ++s) sweep();
    // Thinning from the autocorrelation of the first particle's kinetic energy.
    std::vector<double> trace;
    const std::size_t pilot = std::max<std::size_t>(400, 4 * n_states);
    for (std::size_t s = 0; s < pilot; ++s) {
        sweep();
        trace.push_back(p[0].squaredNorm());
    }
    out.tau_int = integrated_autocorrelation_time(trace);
    out.thin = std::min<std::size_t>(opt.max_thin, std::size_t(std::ceil(out.tau_int)));
    for (std::size_t k = 0; k < n_states; ++k) {
        for (std::size_t s = 0; s < out.thin; ++s) sweep();
        out.states.push_back(assemble(p, eta));
    }
    out.acceptance = tried ? double(accepted) / double(tried) : 1.0;
    if (out.acceptance < 0.01) throw numeric_error("Metropolis acceptance below 1%; adjust the proposal scale");
    out.method = "metropolis";
    return out;
}

// Shell average of an observable with an autocorrelation-corrected error.
inline MeanEstimate microcanonical_average(const std::function<double(const WignerPhaseState&)>& f,
                                           const EnsembleSpec& spec, std::size_t n_states, std::uint64_t seed,
                                           const ShellSampleOptions& opt = {})
{
    const ShellSample s = sample_shell(spec, n_states, seed, opt);
    std::vector<double> v;
    v.reserve(s.states.size());
    for (const auto& st : s.states) v.push_back(f(st));
    return correlated_mean(v);
}

} // namespace wigner

#endif
