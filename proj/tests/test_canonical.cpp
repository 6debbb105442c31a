#include "support.hpp"

#include <wigner/canonical.hpp>
#include <wigner/dynamics.hpp>

#include <gtest/gtest.h>

using namespace wigner;
using namespace testing_support;

TEST(SeparationMatrix, TwoBodyValues)
{
    const double m1 = 1.3, m2 = 0.4, m = m1 + m2;
    const SeparationMatrix sep = build_separation_matrix({m1, m2});
    EXPECT_NEAR(sep.gamma(0, 0), 1.0 / std::sqrt(2.0), 1e-15);
    EXPECT_NEAR(sep.gamma(0, 1), -1.0 / std::sqrt(2.0), 1e-15);
    EXPECT_NEAR(sep.Gamma(0, 0), std::sqrt(2.0) * m2 / m, 1e-15);
    EXPECT_NEAR(sep.Gamma(0, 1), -std::sqrt(2.0) * m1 / m, 1e-15);
}

TEST(SeparationMatrix, EqualMassesThree)
{
    const SeparationMatrix sep = build_separation_matrix({1, 1, 1});
    for (int a = 0; a < 2; ++a) EXPECT_NEAR(sep.gamma.row(a).sum(), 0.0, 1e-15);
    EXPECT_LT(max_abs(sep.gamma * sep.gamma.transpose() - Eigen::MatrixXd::Identity(2, 2)), 1e-15);
    // equal masses: Gamma = gamma
    EXPECT_LT(max_abs(sep.Gamma - sep.gamma), 1e-15);
}

TEST(SeparationMatrix, CanonicityIdentitiesAllN)
{
    std::mt19937_64 rng(21);
    for (std::size_t n = 2; n <= 9; ++n) {
        const auto masses = random_masses(rng, n);
        const SeparationMatrix sep = build_separation_matrix(masses);
        EXPECT_LT(canonicity_defect(sep), 1e-12) << n;
        const double m = sep.total_mass();
        const Eigen::MatrixXd cross = sep.gamma.transpose() * sep.Gamma;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j)
                EXPECT_NEAR(cross(i, j), (i == j ? 1.0 : 0.0) - masses[i] / m, 1e-12);
    }
}

TEST(SeparationMatrix, InvalidInput)
{
    EXPECT_THROW(build_separation_matrix({1.0}), invalid_input);
    EXPECT_THROW(build_separation_matrix({1.0, 0.0}), invalid_input);
    EXPECT_THROW(build_separation_matrix({1.0, -2.0, 1.0}), invalid_input);
}

TEST(SeparationMatrix, AlternativeGammaValidated)
{
    std::mt19937_64 rng(22);
    const auto masses = random_masses(rng, 4);
    const SeparationMatrix sep = build_separation_matrix(masses);
    const Eigen::MatrixXd o = Eigen::HouseholderQR<Eigen::MatrixXd>(Eigen::MatrixXd::Random(3, 3)).householderQ();
    EXPECT_NO_THROW(separation_from_gamma(masses, o * sep.gamma));
    RowMatrix bad = sep.gamma;
    bad(0, 0) += 0.1;
    EXPECT_THROW(separation_from_gamma(masses, bad), invalid_input);
}

TEST(Relative, CommonPositionHasNoRelativeSeparation)
{
    std::mt19937_64 rng(23);
    const auto masses = random_masses(rng, 4);
    const SeparationMatrix sep = build_separation_matrix(masses);
    WignerPhaseState s = random_state(rng, 4);
    const Vec3 v(0.3, -1.1, 2.0);
    for (auto& e : s.eta) e = v;
    const CollectiveSplit c = to_relative(s, sep);
    for (const auto& rho : c.rel.rho) EXPECT_LT(rho.norm(), 1e-14);
    EXPECT_LT((c.eta_plus - v).norm(), 1e-14);
}

TEST(Relative, TwoBodyDifference)
{
    std::mt19937_64 rng(24);
    const std::vector<double> masses{0.7, 1.9};
    const SeparationMatrix sep = build_separation_matrix(masses);
    const WignerPhaseState s = random_state(rng, 2);
    const CollectiveSplit c = to_relative(s, sep);
    EXPECT_LT((c.rel.rho[0] - (s.eta[0] - s.eta[1])).norm(), 1e-15);
    const TwoBodyRelative tb = two_body_relative(s, masses);
    EXPECT_LT((tb.rho - c.rel.rho[0]).norm(), 1e-15);
    EXPECT_LT((tb.pi - c.rel.pi[0]).norm(), 1e-15);
}

TEST(Relative, RoundTrip)
{
    std::mt19937_64 rng(25);
    for (std::size_t n : {2u, 3u, 5u, 8u}) {
        const SeparationMatrix sep = build_separation_matrix(random_masses(rng, n));
        for (int k = 0; k < 50; ++k) {
            const WignerPhaseState s = random_state(rng, n);
            const CollectiveSplit c = to_relative(s, sep);
            const WignerPhaseState back = from_relative(c.eta_plus, c.kappa_plus, c.rel, sep);
            for (std::size_t i = 0; i < n; ++i) {
                EXPECT_LT((back.eta[i] - s.eta[i]).cwiseAbs().maxCoeff(), 1e-13);
                EXPECT_LT((back.kappa[i] - s.kappa[i]).cwiseAbs().maxCoeff(), 1e-13);
            }
        }
    }
}

TEST(Relative, DegenerateInverses)
{
    std::mt19937_64 rng(26);
    const SeparationMatrix sep = build_separation_matrix(random_masses(rng, 3));
    RelativeState r{0.0, {Vec3::Zero(), Vec3::Zero()}, {random_vec(rng, 1), random_vec(rng, 1)}};
    const Vec3 ep(1, 2, 3);
    const WignerPhaseState s = from_relative(ep, random_vec(rng, 1), r, sep);
    for (const auto& e : s.eta) EXPECT_LT((e - ep).norm(), 1e-15);
    RelativeState r2{0.0, {random_vec(rng, 1), random_vec(rng, 1)}, {Vec3::Zero(), Vec3::Zero()}};
    const WignerPhaseState s2 = from_relative(ep, Vec3::Zero(), r2, sep);
    for (const auto& k : s2.kappa) EXPECT_EQ(k.norm(), 0.0);
}

namespace {

// Flattened (q; p) with q = (eta_+, rho_a), p = (kappa_+, pi_a).
Eigen::VectorXd relative_coordinates(const WignerPhaseState& s, const SeparationMatrix& sep)
{
    const CollectiveSplit c = to_relative(s, sep);
    const std::size_t n = s.size();
    Eigen::VectorXd x(6 * n);
    x.segment<3>(0) = c.eta_plus;
    x.segment<3>(3 * n) = c.kappa_plus;
    for (std::size_t a = 0; a + 1 < n; ++a) {
        x.segment<3>(3 * (a + 1)) = c.rel.rho[a];
        x.segment<3>(3 * (n + a + 1)) = c.rel.pi[a];
    }
    return x;
}

Eigen::MatrixXd symplectic_form(std::size_t dim)
{
    Eigen::MatrixXd om = Eigen::MatrixXd::Zero(2 * dim, 2 * dim);
    om.topRightCorner(dim, dim).setIdentity();
    om.bottomLeftCorner(dim, dim) = -Eigen::MatrixXd::Identity(dim, dim);
    return om;
}

} // namespace

TEST(Relative, SymplecticJacobian)
{
    std::mt19937_64 rng(27);
    for (std::size_t n : {2u, 3u, 5u}) {
        const SeparationMatrix sep = build_separation_matrix(random_masses(rng, n));
        const WignerPhaseState s = random_state(rng, n);
        const StateVector y = pack(s);
        Eigen::MatrixXd J(6 * n, 6 * n);
        for (Eigen::Index k = 0; k < y.size(); ++k) {
            StateVector p = y, m = y;
            p[k] += 1e-3;
            m[k] -= 1e-3;
            J.col(k) = (relative_coordinates(unpack(p, 0), sep) - relative_coordinates(unpack(m, 0), sep)) / 2e-3;
        }
        const Eigen::MatrixXd om = symplectic_form(3 * n);
        EXPECT_LT(max_abs(J.transpose() * om * J - om), 1e-10) << n;
    }
}

TEST(InternalGenerators, SingleParticleAtRest)
{
    WignerPhaseState s{0.0, {Vec3::Zero()}, {Vec3::Zero()}};
    const InternalGenerators g = internal_generators(s, ModelSpec::free_particles({2.0}, 3.0));
    EXPECT_DOUBLE_EQ(g.Mc, 6.0);
    EXPECT_EQ(g.P.norm() + g.S.norm() + g.K.norm(), 0.0);
}

TEST(InternalGenerators, TwoBodyBackToBack)
{
    const double m = 1.2, c = 1.5, k = 0.8;
    WignerPhaseState s{0.0, {Vec3(1, 0, 0), Vec3(-2, 1, 0)}, {Vec3(k, 0, 0), Vec3(-k, 0, 0)}};
    const InternalGenerators g = internal_generators(s, ModelSpec::free_particles({m, m}, c));
    EXPECT_NEAR(g.Mc, 2.0 * std::sqrt(m * m * c * c + k * k), 1e-14);
    EXPECT_EQ(g.P.norm(), 0.0);
}

TEST(InternalGenerators, QuadraticAtZeroCouplingIsFree)
{
    std::mt19937_64 rng(28);
    const WignerPhaseState s = random_state(rng, 4);
    const auto masses = random_masses(rng, 4);
    const InternalGenerators a = internal_generators(s, ModelSpec::free_particles(masses));
    const InternalGenerators b = internal_generators(s, ModelSpec::quadratic(masses, 0.0));
    EXPECT_EQ(a.Mc, b.Mc);
    EXPECT_EQ(a.K, b.K);
}

TEST(InternalGenerators, MomentumAndSpinUnchangedByCoupling)
{
    std::mt19937_64 rng(29);
    for (int k = 0; k < 1000; ++k) {
        const std::size_t n = 2 + k % 5;
        const WignerPhaseState s = random_state(rng, n);
        const auto masses = random_masses(rng, n);
        const InternalGenerators a = internal_generators(s, ModelSpec::free_particles(masses));
        const InternalGenerators b = internal_generators(s, ModelSpec::quadratic(masses, 0.37));
        EXPECT_EQ(a.P, b.P);
        EXPECT_EQ(a.S, b.S);
    }
}

TEST(InternalGenerators, MassAboveRestEnergy)
{
    std::mt19937_64 rng(30);
    for (int k = 0; k < 100; ++k) {
        const auto masses = random_masses(rng, 3);
        const ModelSpec model = ModelSpec::free_particles(masses, 2.0);
        EXPECT_GE(internal_generators(random_state(rng, 3), model).Mc, model.total_mass() * 2.0);
    }
}

TEST(InternalGenerators, NonFiniteMomentumIsDomainError)
{
    WignerPhaseState s{0.0, {Vec3::Zero()}, {Vec3(std::nan(""), 0, 0)}};
    EXPECT_THROW(internal_generators(s, ModelSpec::free_particles({1.0})), model_domain_error);
}

TEST(CenterOfMass, EqualMassTwoBodyAtOrigin)
{
    std::mt19937_64 rng(31);
    const SeparationMatrix sep = build_separation_matrix({1.0, 1.0});
    RelativeState r{0.0, {random_vec(rng, 1)}, {random_vec(rng, 1)}};
    EXPECT_LT(solve_internal_com(r, sep, ModelSpec::free_particles({1, 1})).norm(), 1e-15);
}

TEST(CenterOfMass, UnequalTwoBodyClosedForm)
{
    std::mt19937_64 rng(32);
    const double m1 = 0.6, m2 = 1.7, m = m1 + m2, c = 1.3;
    const SeparationMatrix sep = build_separation_matrix({m1, m2});
    const Vec3 rho = random_vec(rng, 1), pi = random_vec(rng, 1);
    RelativeState r{0.0, {rho}, {pi}};
    const double e1 = std::sqrt(m1 * m1 * c * c + pi.squaredNorm());
    const double e2 = std::sqrt(m2 * m2 * c * c + pi.squaredNorm());
    const Vec3 expected = (m1 / m * e2 - m2 / m * e1) / (e1 + e2) * rho;
    EXPECT_LT((solve_internal_com(r, sep, ModelSpec::free_particles({m1, m2}, c)) - expected).norm(), 1e-15);
}

TEST(CenterOfMass, ReconstructionSatisfiesConstraints)
{
    std::mt19937_64 rng(33);
    for (std::size_t n : {2u, 3u, 6u}) {
        const auto masses = random_masses(rng, n);
        const SeparationMatrix sep = build_separation_matrix(masses);
        for (const ModelSpec& model : {ModelSpec::free_particles(masses), ModelSpec::quadratic(masses, 0.2)}) {
            RelativeState r;
            for (std::size_t a = 0; a + 1 < n; ++a) {
                r.rho.push_back(random_vec(rng, 1));
                r.pi.push_back(random_vec(rng, 1));
            }
            const WignerPhaseState s = rest_frame_state(r, sep, model);
            const ConstraintResiduals res = constraint_residuals(s, model);
            EXPECT_LT(internal_generators(s, model).K.norm(), 1e-12);
            EXPECT_LT(res.P, 1e-12);
            EXPECT_TRUE(is_rest_frame_reduced(s, model));
        }
    }
}

TEST(Constraints, MomentumOffsetVisible)
{
    std::mt19937_64 rng(34);
    const auto masses = random_masses(rng, 3);
    const SeparationMatrix sep = build_separation_matrix(masses);
    const ModelSpec model = ModelSpec::free_particles(masses);
    RelativeState r{0.0, {random_vec(rng, 1), random_vec(rng, 1)}, {random_vec(rng, 1), random_vec(rng, 1)}};
    const WignerPhaseState s = from_relative(solve_internal_com(r, sep, model), Vec3(1, 0, 0), r, sep);
    EXPECT_NEAR(constraint_residuals(s, model).P, 1.0, 1e-14);
}

TEST(Constraints, GammaFamilyFreedom)
{
    std::mt19937_64 rng(35);
    const auto masses = random_masses(rng, 4);
    const SeparationMatrix sep1 = build_separation_matrix(masses);
    const Eigen::MatrixXd o = Eigen::HouseholderQR<Eigen::MatrixXd>(Eigen::MatrixXd::Random(3, 3)).householderQ();
    const SeparationMatrix sep2 = separation_from_gamma(masses, o * sep1.gamma);
    for (const ModelSpec& model : {ModelSpec::free_particles(masses), ModelSpec::quadratic(masses, 0.3)}) {
        RelativeState r;
        for (int a = 0; a < 3; ++a) {
            r.rho.push_back(random_vec(rng, 1));
            r.pi.push_back(random_vec(rng, 1));
        }
        const WignerPhaseState s = rest_frame_state(r, sep1, model);
        // Same physical configuration expressed through the other gamma.
        const WignerPhaseState s2 = rest_frame_state(to_relative(s, sep2).rel, sep2, model);
        const InternalGenerators g1 = internal_generators(s, model), g2 = internal_generators(s2, model);
        EXPECT_NEAR(g1.Mc, g2.Mc, 1e-12);
        EXPECT_LT((g1.P - g2.P).norm(), 1e-12);
        EXPECT_LT((g1.S - g2.S).norm(), 1e-12);
        EXPECT_LT((g1.K - g2.K).norm(), 1e-12);
    }
}

TEST(Relative, PoissonBracketThroughBothMaps)
{
    // {eta_i^r, kappa_j^s} evaluated in relative coordinates equals delta_ij delta^rs.
    std::mt19937_64 rng(36);
    const std::size_t n = 3;
    const SeparationMatrix sep = build_separation_matrix(random_masses(rng, n));
    const Eigen::VectorXd x0 = relative_coordinates(random_state(rng, n), sep);
    auto to_original = [&](const Eigen::VectorXd& x) {
        RelativeState r;
        for (std::size_t a = 0; a + 1 < n; ++a) {
            r.rho.push_back(x.segment<3>(3 * (a + 1)));
            r.pi.push_back(x.segment<3>(3 * (n + a + 1)));
        }
        return pack(from_relative(x.segment<3>(0), x.segment<3>(3 * n), r, sep));
    };
    Eigen::MatrixXd D(6 * n, 6 * n);
    for (Eigen::Index k = 0; k < x0.size(); ++k) {
        Eigen::VectorXd p = x0, m = x0;
        p[k] += 1e-3;
        m[k] -= 1e-3;
        D.col(k) = (to_original(p) - to_original(m)) / 2e-3;
    }
    const Eigen::MatrixXd om = symplectic_form(3 * n);
    // Bracket matrix of the original coordinates: D Omega D^T must be Omega.
    EXPECT_LT(max_abs(D * om * D.transpose() - om), 1e-9);
}
