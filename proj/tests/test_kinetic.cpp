#include <wigner/ensembles.hpp>
#include <wigner/kinetic.hpp>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <gtest/gtest.h>

#include "support.hpp"

using namespace wigner;
constexpr double pi = std::numbers::pi;

TEST(Juttner, NormalisedAgainstClosedForm)
{
    for (double T : {0.05, 0.3, 1.0, 5.0, 40.0})
        for (double c : {1.0, 2.0}) {
            const JuttnerParams p{1.3, T, c};
            EXPECT_NEAR(juttner_total_mass(p), 1.0, 1e-8) << T << " " << c;
        }
}

TEST(Juttner, MaxwellBoltzmannLimit)
{
    // k_B T << mc^2: f / e^{-k^2/2mT} is flat over |k| <= 3 sqrt(m T).
    const JuttnerParams p{1.0, 1e-5, 1.0};
    const double kt = std::sqrt(p.m * p.T);
    const double r0 = juttner_pdf(Vec3::Zero(), p);
    for (double k = 0.0; k <= 3.0 * kt; k += 0.25 * kt) {
        const double mb = std::exp(-k * k / (2.0 * p.m * p.T));
        EXPECT_NEAR(juttner_pdf(Vec3(k, 0, 0), p) / mb / r0, 1.0, 1e-3) << k;
    }
    // Normalisation tends to (2 pi m T)^{-3/2}.
    EXPECT_NEAR(r0 * std::pow(2.0 * pi * p.m * p.T, 1.5), 1.0, 1e-3);
}

TEST(Juttner, Isotropic)
{
    const JuttnerParams p{1.0, 0.7, 1.0};
    std::mt19937_64 gen(5);
    for (int k = 0; k < 20; ++k) {
        const Vec3 v = testing_support::random_vec(gen, 2.0);
        const Mat3 r = testing_support::random_rotation(gen);
        EXPECT_NEAR(juttner_pdf(r * v, p) / juttner_pdf(v, p), 1.0, 1e-13);
    }
    EXPECT_THROW(juttner_pdf(Vec3::Zero(), {1.0, 0.0, 1.0}), invalid_input);
}

TEST(Juttner, MeanEnergyMatchesBesselRatio)
{
    // <E> = mc^2 K3(x)/K2(x) - k_B T, x = mc^2/k_B T.
    for (double T : {0.1, 1.0, 10.0}) {
        const double x = 1.0 / T;
        const double ref = std::cyl_bessel_k(3.0, x) / std::cyl_bessel_k(2.0, x) - T;
        EXPECT_NEAR(juttner_mean_energy({1.0, T, 1.0}) / ref, 1.0, 1e-10);
    }
    EXPECT_NEAR(fit_juttner_temperature(juttner_mean_energy({2.0, 0.8, 1.5}), 2.0, 1.5), 0.8, 1e-10);
}

TEST(Juttner, SamplerPassesKolmogorovSmirnov)
{
    for (double T : {0.05, 1.0, 20.0}) {
        const JuttnerParams p{1.0, T, 1.0};
        const auto s = sample_juttner(p, 100000, 42);
        std::vector<double> speeds;
        for (const auto& k : s.kappa) speeds.push_back(k.norm());
        const JuttnerSpeedCdf cdf(p);
        const double d = ks_statistic(speeds, cdf);
        EXPECT_LT(d, ks_critical(0.01, speeds.size())) << T;
        EXPECT_GT(s.acceptance, 1.0 / std::sqrt(2.0) - 0.01);
    }
}

TEST(Juttner, SampleMomentsMatchQuadrature)
{
    const JuttnerParams p{1.0, 0.6, 1.0};
    const auto s = sample_juttner(p, 200000, 3);
    std::array<Moments, 3> k;
    Moments e;
    for (const auto& v : s.kappa) {
        for (int a = 0; a < 3; ++a) k[a].add(v[a]);
        e.add(std::sqrt(1.0 + v.squaredNorm()));
    }
    for (int a = 0; a < 3; ++a) EXPECT_LT(std::abs(k[a].mean()), 3.0 * k[a].stderr_of_mean());
    EXPECT_LT(std::abs(e.mean() - juttner_mean_energy(p)), 3.0 * e.stderr_of_mean());
}

TEST(Juttner, SamplerIsDeterministic)
{
    const JuttnerParams p{1.0, 1.0, 1.0};
    EXPECT_EQ(sample_juttner(p, 100, 9).kappa, sample_juttner(p, 100, 9).kappa);
    EXPECT_NE(sample_juttner(p, 100, 9).kappa, sample_juttner(p, 100, 10).kappa);
}

TEST(Juttner, TabulatedCdfMatchesAdaptive)
{
    for (double T : {0.05, 1.0, 20.0}) {
        const JuttnerParams p{1.0, T, 1.0};
        const JuttnerSpeedCdf cdf(p);
        for (double q : {0.01, 0.3, 0.5, 0.9, 0.999}) {
            const double k = juttner_speed_quantile(q, p);
            EXPECT_NEAR(cdf(k), juttner_speed_cdf(k, p), 1e-12) << T << " " << q;
        }
    }
}

TEST(Juttner, BinningRangeIsUpperQuantile)
{
    const JuttnerParams p{1.0, 2.0, 1.0};
    const Binning b = juttner_binning(p);
    EXPECT_NEAR(juttner_speed_cdf(b.kappa_max, p), 1.0 - 1e-6, 1e-10);
}

namespace {

WignerPhaseState single(const Vec3& eta, const Vec3& kappa)
{
    WignerPhaseState s;
    s.eta = {eta};
    s.kappa = {kappa};
    return s;
}

std::vector<WignerPhaseState> juttner_states(const JuttnerParams& p, std::size_t n, std::uint64_t seed)
{
    std::vector<WignerPhaseState> out;
    for (const auto& k : sample_juttner(p, n, seed).kappa) out.push_back(single(Vec3::Zero(), k));
    return out;
}

} // namespace

TEST(F1, SingleStateSingleBin)
{
    Binning b;
    b.n_kappa = 10;
    b.kappa_max = 1.0;
    const auto h = estimate_f1({single(Vec3::Zero(), Vec3(0.33, 0.0, 0.0))}, ModelSpec::free_particles({1.0}), b);
    EXPECT_EQ(h.counts[3], 1u);
    EXPECT_EQ(h.entries, 1u);
    EXPECT_NEAR(h.integral(), 1.0, 1e-12);
}

TEST(F1, NormalisedWithAngularAndEtaBins)
{
    const JuttnerParams p{1.0, 1.0, 1.0};
    auto states = juttner_states(p, 5000, 1);
    std::mt19937_64 gen(2);
    for (auto& s : states) s.eta[0] = testing_support::random_in_ball(gen, 1.0);
    Binning b = juttner_binning(p, 12);
    b.n_cos = 4;
    b.n_phi = 6;
    b.n_eta = 5;
    b.eta_max = 1.0;
    const auto h = estimate_f1(states, ModelSpec::free_particles({1.0}), b);
    EXPECT_NEAR(h.integral(), 1.0, 1e-10);
    // Uniform ball: |eta| density 3 r^2.
    const auto em = h.eta_marginal();
    for (int k = 0; k < 5; ++k) {
        const double a = 0.2 * k, c = 0.2 * (k + 1);
        EXPECT_NEAR(em[k], (c * c * c - a * a * a) / 0.2, 0.15) << k;
    }
}

TEST(F1, MarginalMatchesJuttner)
{
    const JuttnerParams p{1.0, 1.0, 1.0};
    const auto h = estimate_f1(juttner_states(p, 200000, 4), ModelSpec::free_particles({1.0}), juttner_binning(p, 30));
    const auto km = h.kappa_marginal();
    const double w = h.bins.kappa_max / 30;
    for (int k = 0; k < 30; ++k) {
        const double exact = (juttner_speed_cdf(w * (k + 1), p) - juttner_speed_cdf(w * k, p)) / w;
        const double sigma = std::sqrt(exact * w / 200000.0) / w;
        EXPECT_NEAR(km[k], exact, 5.0 * sigma + 1e-12) << k;
    }
}

TEST(F1, RejectsNonRestFrameStatesAndEmptyInput)
{
    WignerPhaseState s;
    s.eta = {Vec3(0.1, 0, 0), Vec3(-0.1, 0, 0)};
    s.kappa = {Vec3(0.2, 0, 0), Vec3(0.3, 0, 0)};
    const auto model = ModelSpec::free_particles({1.0, 1.0});
    Binning b;
    EXPECT_THROW(estimate_f1({s}, model, b), invalid_input);
    F1Options opt;
    opt.require_rest_frame = false;
    EXPECT_NO_THROW(estimate_f1({s}, model, b, opt));
    EXPECT_THROW(estimate_f1({}, model, b), invalid_input);
}

TEST(ScalarInvariance, IdentityGivesZero)
{
    const JuttnerParams p{1.0, 1.0, 1.0};
    const auto states = juttner_states(p, 2000, 6);
    Binning b = juttner_binning(p, 10);
    b.n_cos = 3;
    b.n_phi = 4;
    const auto rep = scalar_invariance_report(states, ModelSpec::free_particles({1.0}), Mat4::Identity(),
                                              Vec3(0.3, 0.1, 0.0), b);
    EXPECT_EQ(rep.chi2, 0.0);
    EXPECT_EQ(rep.max_discrepancy, 0.0);
    EXPECT_TRUE(rep.pass);
}

TEST(ScalarInvariance, RotatedBinsGiveEqualCounts)
{
    const JuttnerParams p{1.0, 1.0, 1.0};
    const auto states = juttner_states(p, 3000, 7);
    Binning b = juttner_binning(p, 10);
    b.n_cos = 3;
    b.n_phi = 4;
    std::mt19937_64 gen(8);
    const Mat4 lambda = testing_support::random_lorentz(gen, 1.5);
    const auto rep = scalar_invariance_report(states, ModelSpec::free_particles({1.0}), lambda, Vec3(0.4, -0.2, 0.3), b, true);
    EXPECT_EQ(rep.chi2, 0.0);
}

TEST(ScalarInvariance, GenericBoostWithinEnvelope)
{
    const JuttnerParams p{1.0, 1.0, 1.0};
    const auto states = juttner_states(p, 20000, 9);
    Binning b = juttner_binning(p, 8);
    b.n_cos = 4;
    b.n_phi = 4;
    std::mt19937_64 gen(10);
    for (int k = 0; k < 5; ++k) {
        const Mat4 lambda = testing_support::pure_boost(testing_support::random_vec(gen, 2.0));
        const auto rep = scalar_invariance_report(states, ModelSpec::free_particles({1.0}), lambda, Vec3(0.8, 0.0, -0.5), b);
        EXPECT_GT((rep.rotation - Mat3::Identity()).norm(), 1e-3);
        EXPECT_TRUE(rep.pass) << rep.chi2 << " " << rep.threshold;
    }
}

TEST(ScalarInvariance, RejectsImproperLorentz)
{
    Mat4 parity = Mat4::Identity();
    parity.block<3, 3>(1, 1) *= -1.0;
    EXPECT_THROW(scalar_invariance_report({single(Vec3::Zero(), Vec3::Zero())}, ModelSpec::free_particles({1.0}), parity,
                                          Vec3::Zero(), Binning{}),
                 invalid_input);
}

TEST(Moments, JuttnerSamplesAreIsotropic)
{
    const JuttnerParams p{1.0, 1.0, 1.0};
    const auto s = sample_juttner(p, 100000, 11);
    const auto f = moments_from_samples(s.kappa, p.m, p.c, 1.0, [&](const Vec3& k) { return juttner_pdf(k, p); });
    for (int i = 1; i < 4; ++i) {
        EXPECT_LT(std::abs(f.J[i]), 3.0 * f.J_err[i]);
        EXPECT_LT(std::abs(f.T(0, i)), 3.0 * f.T_err(0, i));
        EXPECT_LT(std::abs(f.S[i]), 3.0 * f.S_err[i]);
        for (int j = i + 1; j < 4; ++j) EXPECT_LT(std::abs(f.T(i, j)), 3.0 * f.T_err(i, j));
    }
    EXPECT_NEAR(f.J[0], 1.0, 1e-15);
    // Isotropic pressure, equal to n k_B T.
    for (int i = 1; i < 4; ++i) EXPECT_NEAR(f.T(i, i), p.T, 3.0 * f.T_err(i, i));
    EXPECT_NEAR(f.T(1, 1), f.T(2, 2), 3.0 * (f.T_err(1, 1) + f.T_err(2, 2)));
    EXPECT_GT(f.S[0], 0.0);
}

TEST(Moments, HistogramLinearity)
{
    const JuttnerParams p1{1.0, 0.5, 1.0}, p2{1.0, 2.0, 1.0};
    Binning b = juttner_binning(p2, 20);
    b.n_cos = 2;
    b.n_phi = 3;
    const auto model = ModelSpec::free_particles({1.0});
    const auto h1 = estimate_f1(juttner_states(p1, 3000, 1), model, b);
    const auto h2 = estimate_f1(juttner_states(p2, 3000, 2), model, b);
    // Mixed histogram built from counts with equal totals.
    DistributionHistogram mixed = h1;
    mixed.merge(h2);
    const auto m1 = moments(h1, 1.0, 1.0), m2 = moments(h2, 1.0, 1.0), mm = moments(mixed, 1.0, 1.0);
    const double alpha = double(h1.entries) / double(mixed.entries);
    const auto lin = mix_moments(alpha, m1, m2);
    EXPECT_LT((mm.J - lin.J).cwiseAbs().maxCoeff(), 1e-13);
    EXPECT_LT((mm.T - lin.T).cwiseAbs().maxCoeff(), 1e-13);
}

TEST(Moments, HistogramTracksSampleMoments)
{
    const JuttnerParams p{1.0, 1.0, 1.0};
    const auto s = sample_juttner(p, 100000, 12);
    std::vector<WignerPhaseState> states;
    for (const auto& k : s.kappa) states.push_back(single(Vec3::Zero(), k));
    Binning b = juttner_binning(p, 200);
    const auto fh = moments(estimate_f1(states, ModelSpec::free_particles({1.0}), b), p.m, p.c);
    const auto fs = moments_from_samples(s.kappa, p.m, p.c);
    EXPECT_NEAR(fh.T(0, 0) / fs.T(0, 0), 1.0, 1e-3);
    EXPECT_NEAR(fh.T(1, 1) / fs.T(1, 1), 1.0, 1e-2);
    EXPECT_NEAR(fh.J[0], 1.0, 1e-12);
}

TEST(PerfectFluid, DiagonalRecovery)
{
    Mat4 T = Mat4::Zero();
    T.diagonal() << 3.0, 1.0, 1.0, 1.0;
    const auto pf = perfect_fluid_decompose(T);
    ASSERT_TRUE(pf.ok);
    EXPECT_NEAR(pf.rho, 3.0, 1e-14);
    EXPECT_NEAR(pf.p, 1.0, 1e-14);
    EXPECT_LT((pf.U - Vec4(1, 0, 0, 0)).norm(), 1e-14);
}

TEST(PerfectFluid, BoostedRecovery)
{
    std::mt19937_64 gen(3);
    for (int k = 0; k < 10; ++k) {
        const Vec3 u = testing_support::random_vec(gen, 2.0);
        const Mat4 L = build_boost_tetrad(u);
        Mat4 T = Mat4::Zero();
        T.diagonal() << 5.0, 1.2, 1.2, 1.2;
        const auto pf = perfect_fluid_decompose(L * T * L.transpose());
        ASSERT_TRUE(pf.ok);
        EXPECT_LT((pf.U - four(std::sqrt(1.0 + u.squaredNorm()), u)).norm(), 1e-10);
        EXPECT_NEAR(pf.rho, 5.0, 1e-10);
        EXPECT_NEAR(pf.p, 1.2, 1e-10);
        EXPECT_LT(pf.anisotropy, 1e-10);
    }
}

TEST(PerfectFluid, FailsWithoutTimelikeEigenvector)
{
    // Flux exceeding the energy density: the (t, x) block has complex eigenvalues.
    Mat4 T = Mat4::Zero();
    T(0, 0) = 1.0;
    T(0, 1) = T(1, 0) = 2.0;
    T(1, 1) = 1.0;
    const auto pf = perfect_fluid_decompose(T);
    EXPECT_FALSE(pf.ok);
    EXPECT_FALSE(pf.diagnostic.empty());
}

TEST(PerfectFluid, JuttnerEquationOfState)
{
    // k_B T = mc^2: p = n k_B T from sampled moments.
    const JuttnerParams p{1.0, 1.0, 1.0};
    const double n = 64.0 / 1.0;
    const auto f = moments_from_samples(sample_juttner(p, 200000, 14).kappa, p.m, p.c, n);
    const auto pf = perfect_fluid_decompose(0.5 * (f.T + f.T.transpose()));
    ASSERT_TRUE(pf.ok);
    EXPECT_NEAR(pf.p / (n * p.T), 1.0, 0.01);
    EXPECT_NEAR(pf.rho / (n * juttner_mean_energy(p)), 1.0, 0.01);
}

TEST(Equivalence, MicrocanonicalMarginalApproachesJuttner)
{
    // Small version of the N = 64 ensemble-equivalence check.
    EnsembleSpec s;
    s.regime = Regime::rel_restframe;
    s.model = ModelSpec::free_particles(std::vector<double>(32, 1.0));
    s.E = 32 * 1.5;
    const auto shell = sample_shell(s, 150, 1);
    const double T = fit_juttner_temperature(1.5, 1.0, 1.0);
    const auto speeds = pooled_speeds(shell.states);
    const double d = ks_statistic(speeds, JuttnerSpeedCdf({1.0, T, 1.0}));
    EXPECT_LT(d, 0.08);
    const auto h = estimate_f1(shell.states, s.model, juttner_binning({1.0, T, 1.0}, 20));
    EXPECT_NEAR(h.integral(), 1.0, 1e-10);
}
