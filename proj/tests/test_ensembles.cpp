#include <wigner/ensembles.hpp>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <gtest/gtest.h>

#include <numbers>

using namespace wigner;
using GK = boost::math::quadrature::gauss_kronrod<double, 61>;
constexpr double pi = std::numbers::pi;

namespace {

double ball_volume(double R) { return 4.0 * pi * R * R * R / 3.0; }

// Measure of {(a, b): |a|, |b|, |a + b| <= R} from the lens volume of two balls at distance d.
double triple_ball_overlap(double R)
{
    auto lens = [R](double d) { return pi * (4.0 * R + d) * (2.0 * R - d) * (2.0 * R - d) / 12.0; };
    return GK::integrate([&](double a) { return 4.0 * pi * a * a * lens(a); }, 0.0, R, 10, 1e-14);
}

EnsembleSpec free_spec(Regime r, int N, double E, double R = std::cbrt(3.0 / (4.0 * pi)), double m = 1.0)
{
    EnsembleSpec s;
    s.regime = r;
    s.E = E;
    s.R = R;
    s.model = ModelSpec::free_particles(std::vector<double>(std::size_t(N), m));
    return s;
}

} // namespace

TEST(ClosedForms, SingleFreeParticleIsSphereArea)
{
    // One particle: V 4 pi p^2 dp/dE = V 4 pi m sqrt(2 m E).
    for (double E : {0.5, 1.0, 7.0})
        for (double m : {1.0, 2.5}) {
            const double ref = 2.0 * 4.0 * pi * m * std::sqrt(2.0 * m * E);
            EXPECT_NEAR(analytic_Z_free_nr(E, 2.0, 1, m).value / ref, 1.0, 1e-13);
        }
    EXPECT_NEAR(analytic_Z_free_nr(1.0, 1.0, 1, 1.0).value, std::pow(2.0, 2.5) * pi, 1e-12);
}

TEST(ClosedForms, FreeGasIsConvolutionOfSingles)
{
    // Z_2(E) = (1/2) int Z_1(e) Z_1(E - e) de.
    const double E = 3.0, V = 1.7, m = 1.3;
    const double conv = GK::integrate(
        [&](double e) { return analytic_Z_free_nr(e, V, 1, m).value * analytic_Z_free_nr(E - e, V, 1, m).value; }, 0.0,
        E, 15, 1e-13);
    EXPECT_NEAR(analytic_Z_free_nr(E, V, 2, m).value / (0.5 * conv), 1.0, 1e-10);
}

TEST(ClosedForms, MomentumShellTwoBody)
{
    // N=2: int d^3p delta(E - p^2/m) = 2 pi m sqrt(m E); times V^2 / 2!.
    for (double E : {0.3, 2.0})
        for (double m : {1.0, 0.7}) {
            const double V = 1.4;
            const double ref = 0.5 * V * V * 2.0 * pi * m * std::sqrt(m * E);
            EXPECT_NEAR(analytic_Z_restframe_mom(E, V, 2, m, 0.0).value / ref, 1.0, 1e-13);
        }
}

TEST(ClosedForms, MomentumShellMovingFrameShiftsEnergy)
{
    // Total momentum K costs K^2/(2 N m) of kinetic energy and leaves the internal shell unchanged.
    const double kp = 1.2, N = 4, m = 1.5;
    const double shift = kp * kp / (2.0 * N * m);
    EXPECT_NEAR(analytic_Z_restframe_mom(5.0 + shift, 1.0, 4, m, kp).value / analytic_Z_restframe_mom(5.0, 1.0, 4, m, 0).value,
                1.0, 1e-12);
    EXPECT_EQ(analytic_Z_restframe_mom(0.5 * shift, 1.0, 4, m, kp).value, 0.0);
}

TEST(ClosedForms, MomentumShellThreeBodyByRadialIntegral)
{
    // N=3 with p3 = -p1 - p2: the kinetic form is p^T A p / 2m per component, A = [[2,1],[1,2]];
    // z = A^{1/2} p reduces it to a 6-sphere shell with Jacobian det(A)^{-3/2}.
    const double m = 1.0, E = 2.0, V = 1.0;
    Eigen::Matrix2d A;
    A << 2.0, 1.0, 1.0, 2.0;
    const double jac = std::pow(A.determinant(), -1.5);
    // int d^6 z delta(E - |z|^2/2m) = S_5 (2mE)^{5/2} m / sqrt(2mE), S_5 = pi^3.
    const double shell = pi * pi * pi * std::pow(2.0 * m * E, 2.0) * m;
    const double ref = V * V * V / 6.0 * jac * shell;
    EXPECT_NEAR(analytic_Z_restframe_mom(E, V, 3, m, 0.0).value / ref, 1.0, 1e-12);
}

TEST(ClosedForms, BoostShellPositionFactorTwoBody)
{
    // N=2: eta_2 = -eta_1, so the position integral is V / m^3.
    const double E = 2.0, V = 0.9, m = 1.3;
    EXPECT_NEAR(analytic_Z_restframe_boost(E, V, 2, m).value /
                    (analytic_Z_restframe_mom(E, V, 2, m, 0.0).value / (V * m * m * m)),
                1.0, 1e-9);
}

TEST(ClosedForms, BoostShellPositionFactorThreeBody)
{
    // N=3: position integral is the triple-ball overlap / m^3.
    const double E = 5.0, R = 0.8, m = 1.0;
    const double V = ball_volume(R);
    const double ref = analytic_Z_restframe_mom(E, V, 3, m, 0.0).value / (V * V * V) * triple_ball_overlap(R) / (m * m * m);
    EXPECT_NEAR(analytic_Z_restframe_boost(E, V, 3, m).value / ref, 1.0, 1e-9);
}

TEST(ClosedForms, RejectsBadInput)
{
    EXPECT_THROW(analytic_Z_free_nr(1.0, -1.0, 2, 1.0), invalid_input);
    EXPECT_THROW(analytic_Z_restframe_mom(1.0, 1.0, 1, 1.0, 0.0), invalid_input);
    EXPECT_THROW(analytic_Z_restframe_boost(1.0, 1.0, 2, 0.0), invalid_input);
    EXPECT_EQ(analytic_Z_free_nr(-1.0, 1.0, 2, 1.0).value, 0.0);
}

TEST(Relativistic, LaplaceInverseSingleParticle)
{
    for (double c : {1.0, 3.0})
        for (double f : {1.1, 1.5, 4.0, 20.0}) {
            const double m = 0.8, V = 1.3, E = f * m * c * c;
            const double ref = shell_Z_rel_single(E, V, m, c);
            EXPECT_NEAR(inverse_laplace_Z_rel(E, V, 1, m, c).value / ref, 1.0, 1e-6) << c << " " << f;
        }
}

TEST(Relativistic, LaplaceTransformOfShellSingleParticle)
{
    // Forward transform of the exact shell, done by quadrature in kappa.
    const double m = 1.0, c = 1.0, V = 1.0, s = 0.7;
    const double direct = boost::math::quadrature::gauss_kronrod<double, 61>::integrate(
        [&](double k) { return V * 4.0 * pi * k * k * std::exp(-s * std::sqrt(m * m * c * c * c * c + k * k * c * c)); },
        0.0, std::numeric_limits<double>::infinity(), 15, 1e-13);
    EXPECT_NEAR(laplace_Z_rel(s, V, 1, m, c) / direct, 1.0, 1e-10);
}

TEST(Relativistic, LaplaceInverseTwoParticleConvolution)
{
    const double m = 1.0, c = 1.0, V = 1.0;
    for (double E : {2.5, 4.0, 10.0}) {
        const double conv = GK::integrate(
            [&](double e) { return shell_Z_rel_single(e, V, m, c) * shell_Z_rel_single(E - e, V, m, c); }, m * c * c,
            E - m * c * c, 15, 1e-13);
        EXPECT_NEAR(inverse_laplace_Z_rel(E, V, 2, m, c).value / (0.5 * conv), 1.0, 1e-6) << E;
    }
}

TEST(Relativistic, NonrelativisticLimit)
{
    // Kinetic energy small against mc^2: Z_rel(Nmc^2 + e) -> Z_nr(e) with the same m.
    const double m = 1.0, c = 200.0, V = 1.0, e = 2.0;
    EXPECT_NEAR(inverse_laplace_Z_rel(3 * m * c * c + e, V, 3, m, c).value / analytic_Z_free_nr(e, V, 3, m).value, 1.0,
                1e-3);
}

TEST(Thermo, ClosedFormDerivativesMatchNumeric)
{
    const int N = 3;
    const double E = 10.0, V = 1.0, m = 1.0;
    struct Case {
        ClosedForm form;
        std::function<double(double, double)> Z;
    } cases[] = {
        {ClosedForm::free_nr, [&](double e, double v) { return analytic_Z_free_nr(e, v, N, m).value; }},
        {ClosedForm::restframe_mom, [&](double e, double v) { return analytic_Z_restframe_mom(e, v, N, m, 0).value; }},
        {ClosedForm::restframe_boost, [&](double e, double v) { return analytic_Z_restframe_boost(e, v, N, m).value; }},
    };
    for (const auto& c : cases) {
        const Thermo a = analytic_thermo(c.form, E, V, N, m);
        const Thermo n = numeric_thermo(c.Z, E, V, N);
        EXPECT_NEAR(a.T / n.T, 1.0, 1e-7);
        EXPECT_NEAR(a.P / n.P, 1.0, 1e-7);
        EXPECT_NEAR(a.entropy, std::log(c.Z(E, V)), 1e-12);
        EXPECT_NEAR(a.entropy_per_particle * N, a.entropy, 1e-12);
    }
    EXPECT_NEAR(analytic_thermo(ClosedForm::free_nr, E, V, N, m).T, E / 3.5, 1e-12);
    EXPECT_NEAR(analytic_thermo(ClosedForm::restframe_boost, E, V, N, m).P * V,
                2.0 * analytic_thermo(ClosedForm::restframe_boost, E, V, N, m).T, 1e-12);
}

TEST(Sampler, RelativePositionJacobianTwoBody)
{
    EXPECT_NEAR(relative_position_jacobian(build_separation_matrix({1.0, 1.0})), 1.0, 1e-14);
    EXPECT_NEAR(relative_position_jacobian(build_separation_matrix({1.0, 3.0})), 1.0, 1e-14);
}

TEST(Sampler, RestFrameDrawsSatisfyConstraints)
{
    for (auto cut : {VolumeCut::particle, VolumeCut::relative})
        for (auto r : {Regime::nonrel_restframe, Regime::rel_restframe}) {
            EnsembleSpec s = free_spec(r, 4, r == Regime::rel_restframe ? 6.0 : 2.0);
            s.model.masses = {1.0, 0.5, 2.0, 1.5};
            s.E = r == Regime::rel_restframe ? 7.0 : 2.0;
            s.cut = cut;
            PhaseSpaceSampler smp(s, s.E * 1.2);
            Philox rng(3, "mc");
            for (int k = 0; k < 200; ++k) {
                const auto& d = smp.draw(rng);
                Vec3 P = Vec3::Zero(), B = Vec3::Zero();
                for (std::size_t i = 0; i < 4; ++i) {
                    P += d.state.kappa[i];
                    const double w = r == Regime::rel_restframe
                                         ? std::sqrt(s.model.masses[i] * s.model.masses[i] + d.state.kappa[i].squaredNorm())
                                         : s.model.masses[i];
                    B += w * d.state.eta[i];
                }
                EXPECT_LT(P.norm(), 1e-12);
                EXPECT_LT(B.norm(), 1e-12);
            }
        }
}

TEST(McPartition, FreeGasMatchesClosedForm)
{
    const EnsembleSpec s = free_spec(Regime::nonrel_standard, 3, 5.0);
    const auto z = mc_partition(s, 400000, 11);
    const double ref = analytic_Z_free_nr(5.0, 1.0, 3, 1.0).value;
    EXPECT_NEAR(z.kernel.value / ref, 1.0, 0.03);
    EXPECT_LT(std::abs(z.kernel.value - ref), 5.0 * z.kernel.stderr + 0.02 * ref);
    EXPECT_NEAR(z.indicator.value / ref, 1.0, 0.04);
}

TEST(McPartition, BoostShellParticleCut)
{
    EnsembleSpec s = free_spec(Regime::nonrel_restframe, 3, 10.0);
    s.cut = VolumeCut::particle;
    const auto z = mc_partition(s, 400000, 5);
    const double ref = analytic_Z_restframe_boost(10.0, 1.0, 3, 1.0).value;
    EXPECT_NEAR(z.kernel.value / ref, 1.0, 0.05);
}

TEST(McPartition, RelativeCutTwoBodyEqualsParticleCut)
{
    // For N=2 both cuts describe |eta_1 - eta_2| <= 2R with eta_2 = -eta_1.
    EnsembleSpec s = free_spec(Regime::nonrel_restframe, 2, 3.0);
    const double ref = analytic_Z_restframe_boost(3.0, 1.0, 2, 1.0).value;
    s.cut = VolumeCut::relative;
    EXPECT_NEAR(mc_partition(s, 200000, 9).kernel.value / ref, 1.0, 0.03);
}

TEST(McPartition, QuadraticModelEqualsFreeForStandardRegime)
{
    // With the kinetic-momentum shift the Hamiltonian no longer depends on positions.
    EnsembleSpec s = free_spec(Regime::nonrel_standard, 3, 5.0);
    const auto zf = mc_partition(s, 100000, 4);
    s.model = ModelSpec::quadratic({1.0, 1.0, 1.0}, 0.7);
    const auto zq = mc_partition(s, 100000, 4);
    EXPECT_NEAR(zq.kernel.value / zf.kernel.value, 1.0, 1e-12);
}

TEST(McPartition, RelativisticSingleParticleShell)
{
    EnsembleSpec s = free_spec(Regime::rel_standard, 1, 2.0);
    const auto z = mc_partition(s, 400000, 2);
    EXPECT_NEAR(z.kernel.value / shell_Z_rel_single(2.0, 1.0, 1.0, 1.0), 1.0, 0.01);
}

TEST(McPartition, RelativisticRestFrameSingleParticleIsUnconstrained)
{
    const auto a = mc_partition(free_spec(Regime::rel_standard, 1, 2.0), 20000, 8);
    const auto b = mc_partition(free_spec(Regime::rel_restframe, 1, 2.0), 20000, 8);
    EXPECT_EQ(a.kernel.value, b.kernel.value);
}

TEST(McPartition, ThreadCountDoesNotChangeResult)
{
    const EnsembleSpec s = free_spec(Regime::nonrel_restframe, 3, 5.0);
    McOptions o1, o4;
    o1.threads = 1;
    o4.threads = 4;
    const auto a = mc_partition(s, 50000, 21, o1);
    const auto b = mc_partition(s, 50000, 21, o4);
    EXPECT_EQ(a.kernel.value, b.kernel.value);
    EXPECT_EQ(a.kernel.stderr, b.kernel.stderr);
}

TEST(McPartition, BandwidthOutsideWindowIsNumericError)
{
    McOptions o;
    o.bandwidth = 3.0;
    EXPECT_THROW(mc_partition(free_spec(Regime::nonrel_standard, 3, 5.0), 1000, 1, o), numeric_error);
}

TEST(McCumulative, MatchesIntegratedClosedForm)
{
    // Omega(E) = int_0^E Z dE' = (1/N!) (2 pi m)^{3N/2} E^{3N/2} V^N / Gamma(3N/2 + 1).
    const std::vector<double> Es{1.0, 2.0, 4.0};
    const auto om = mc_cumulative(free_spec(Regime::nonrel_standard, 2, 4.0), Es, 200000, 3);
    for (std::size_t k = 0; k < Es.size(); ++k) {
        const double ref = analytic_Z_free_nr(Es[k], 1.0, 2, 1.0).value * Es[k] / 3.0;
        EXPECT_NEAR(om[k] / ref, 1.0, 0.02) << Es[k];
    }
}

TEST(Extended, SpinMarginalRecoversBoostShell)
{
    // int d^3S M(eta; S) = N^{-3/2} (2 pi m)^{(3N-3)/2} E^{(3N-5)/2} / Gamma((3N-3)/2) for any positions.
    // With S = I^{1/2} u the integral is det(I)^{1/2} 4 pi int u^2 M(|u|) du.
    std::mt19937_64 gen(4);
    std::normal_distribution<double> nd;
    const double m = 1.3, E = 3.0;
    for (int N : {3, 4, 6}) {
        Vec3List eta(static_cast<std::size_t>(N));
        Vec3 sum = Vec3::Zero();
        for (auto& e : eta) {
            e = Vec3(nd(gen), nd(gen), nd(gen));
            sum += e;
        }
        for (auto& e : eta) e -= sum / N;
        Mat3 I = Mat3::Zero();
        for (const auto& e : eta) I += e.squaredNorm() * Mat3::Identity() - e * e.transpose();
        Eigen::SelfAdjointEigenSolver<Mat3> es(I);
        const Mat3 root = es.operatorSqrt();
        const Vec3 dir = Vec3(0.3, -0.8, 0.5).normalized();
        const double umax = std::sqrt(2.0 * m * E);
        const double radial = GK::integrate(
            [&](double u) { return 4.0 * pi * u * u * spin_shell_measure(eta, root * (u * dir), E, m); }, 0.0, umax, 15,
            1e-12);
        const double k = 1.5 * N - 1.5;
        const double ref = std::pow(double(N), -1.5) * std::pow(2.0 * pi * m, k) * std::pow(E, k - 1.0) / std::tgamma(k);
        EXPECT_NEAR(std::sqrt(I.determinant()) * radial / ref, 1.0, 1e-8) << N;
    }
}

TEST(Extended, PartitionIsFiniteAndReproducible)
{
    const auto a = extended_Z_nr(5.0, Vec3(0.1, 0.0, 0.2), 1.0, 3, 1.0, 20000, 7);
    const auto b = extended_Z_nr(5.0, Vec3(0.1, 0.0, 0.2), 1.0, 3, 1.0, 20000, 7);
    EXPECT_GT(a.value, 0.0);
    EXPECT_TRUE(std::isfinite(a.stderr));
    EXPECT_EQ(a.value, b.value);
    EXPECT_THROW(extended_Z_nr(5.0, Vec3::Zero(), 1.0, 2, 1.0, 100, 1), invalid_input);
}

TEST(ShellSampling, NonrelativisticStatesLieOnShell)
{
    EnsembleSpec s = free_spec(Regime::nonrel_restframe, 5, 4.0);
    s.model = ModelSpec::quadratic({1.0, 2.0, 0.5, 1.0, 1.5}, 0.4);
    const auto out = sample_shell(s, 300, 5);
    ASSERT_EQ(out.states.size(), 300u);
    for (const auto& st : out.states) {
        EXPECT_NEAR(nonrel_hamiltonian(st, s.model), 4.0, 1e-12);
        Vec3 P = Vec3::Zero(), B = Vec3::Zero();
        for (std::size_t i = 0; i < 5; ++i) {
            P += st.kappa[i];
            B += s.model.masses[i] * st.eta[i];
        }
        EXPECT_LT(P.norm(), 1e-12);
        EXPECT_LT(B.norm(), 1e-12);
    }
}

TEST(ShellSampling, EquipartitionPerParticle)
{
    // Equal masses: by symmetry each particle carries E/N on average.
    const int N = 4;
    const double E = 6.0;
    const EnsembleSpec s = free_spec(Regime::nonrel_restframe, N, E);
    const auto avg = microcanonical_average([](const WignerPhaseState& st) { return st.kappa[0].squaredNorm() / 2.0; },
                                            s, 20000, 13);
    EXPECT_NEAR(avg.mean, E / N, 4.0 * avg.stderr);
}

TEST(ShellSampling, RelativisticRestFrameConstraints)
{
    EnsembleSpec s = free_spec(Regime::rel_restframe, 4, 6.0);
    const auto out = sample_shell(s, 100, 3);
    EXPECT_EQ(out.method, "metropolis");
    EXPECT_GT(out.acceptance, 0.01);
    for (const auto& st : out.states) {
        EXPECT_NEAR(hamiltonian(st, s.model), 6.0, 1e-10);
        const auto r = constraint_residuals(st, s.model);
        EXPECT_LT(r.P, 1e-10);
        EXPECT_LT(r.K_over_Mc, 1e-10);
    }
}

TEST(ShellSampling, RelativisticChainMatchesImportanceWeights)
{
    // Shell average of E_1 by the chain against kernel-weighted draws from the uniform sampler.
    for (auto r : {Regime::rel_standard, Regime::rel_restframe}) {
        EnsembleSpec s = free_spec(r, 3, 5.0);
        const double E0 = s.rest_energy();
        auto e1 = [](const WignerPhaseState& st) { return std::sqrt(1.0 + st.kappa[0].squaredNorm()); };
        const auto chain = microcanonical_average(e1, s, 4000, 17);

        PhaseSpaceSampler smp(s, s.E + 0.25 * (s.E - E0));
        Philox rng(99, "mc");
        const double b = 0.02;
        KahanSum num, den;
        for (int k = 0; k < 400000; ++k) {
            const auto& d = smp.draw(rng);
            if (d.weight <= 0.0) continue;
            const double w = d.weight * gaussian_kernel(d.energy - s.E, b);
            num.add(w * e1(d.state));
            den.add(w);
        }
        EXPECT_NEAR(chain.mean, num.value() / den.value(), 4.0 * chain.stderr + 0.01) << to_string(r);
    }
}

TEST(ShellSampling, ParticleCutRestFrameMatchesImportanceWeights)
{
    EnsembleSpec s = free_spec(Regime::rel_restframe, 3, 5.0);
    s.cut = VolumeCut::particle;
    auto e3 = [](const WignerPhaseState& st) { return std::sqrt(1.0 + st.kappa[2].squaredNorm()); };
    const auto chain = microcanonical_average(e3, s, 4000, 5);
    PhaseSpaceSampler smp(s, 5.5);
    Philox rng(98, "mc");
    KahanSum num, den;
    for (int k = 0; k < 400000; ++k) {
        const auto& d = smp.draw(rng);
        if (d.weight <= 0.0) continue;
        const double w = d.weight * gaussian_kernel(d.energy - s.E, 0.02);
        num.add(w * e3(d.state));
        den.add(w);
    }
    EXPECT_NEAR(chain.mean, num.value() / den.value(), 4.0 * chain.stderr + 0.01);
}

TEST(ShellSampling, Reproducible)
{
    const EnsembleSpec s = free_spec(Regime::rel_restframe, 3, 5.0);
    const auto a = sample_shell(s, 20, 1);
    const auto b = sample_shell(s, 20, 1);
    for (std::size_t k = 0; k < a.states.size(); ++k) EXPECT_EQ(a.states[k].kappa[1], b.states[k].kappa[1]);
}
