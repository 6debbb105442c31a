#ifndef WIGNER_CANONICAL_HPP
#define WIGNER_CANONICAL_HPP

#include "state.hpp"

namespace wigner {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// gamma_ai and Gamma_ai, a = 0..N-2, i = 0..N-1.
struct SeparationMatrix {
    std::vector<double> masses;
    RowMatrix gamma;
    RowMatrix Gamma;

    std::size_t size() const { return masses.size(); }
    double total_mass() const { return std::accumulate(masses.begin(), masses.end(), 0.0); }
};

inline void check_masses(const std::vector<double>& masses)
{
    require(masses.size() >= 2, "separation needs at least two particles");
    for (double m : masses) require(std::isfinite(m) && m > 0.0, "masses must be positive");
}

inline RowMatrix capital_gamma(const RowMatrix& gamma, const std::vector<double>& masses)
{
    const double m = std::accumulate(masses.begin(), masses.end(), 0.0);
    RowMatrix G = gamma;
    for (Eigen::Index a = 0; a < gamma.rows(); ++a) {
        double shift = 0.0;
        for (Eigen::Index k = 0; k < gamma.cols(); ++k) shift += masses[k] / m * gamma(a, k);
        G.row(a).array() -= shift;
    }
    return G;
}

// Largest violation of the six canonicity identities.
inline double canonicity_defect(const SeparationMatrix& sep)
{
    const auto n = Eigen::Index(sep.size());
    const double m = sep.total_mass();
    const RowMatrix& g = sep.gamma;
    const RowMatrix& G = sep.Gamma;
    double worst = g.rowwise().sum().cwiseAbs().maxCoeff();
    worst = std::max(worst, (g * g.transpose() - RowMatrix::Identity(n - 1, n - 1)).cwiseAbs().maxCoeff());
    RowMatrix proj = RowMatrix::Identity(n, n).array() - 1.0 / double(n);
    worst = std::max(worst, (g.transpose() * g - proj).cwiseAbs().maxCoeff());
    worst = std::max(worst, (G - capital_gamma(g, sep.masses)).cwiseAbs().maxCoeff());
    Eigen::VectorXd w(n);
    for (Eigen::Index i = 0; i < n; ++i) w[i] = sep.masses[i] / m;
    worst = std::max(worst, (G * w).cwiseAbs().maxCoeff());
    worst = std::max(worst, (g * G.transpose() - RowMatrix::Identity(n - 1, n - 1)).cwiseAbs().maxCoeff());
    return worst;
}

// Gram-Schmidt on e_a = (delta_ai - 1/N)_i, a = 1..N-1.
inline SeparationMatrix build_separation_matrix(const std::vector<double>& masses)
{
    check_masses(masses);
    const auto n = Eigen::Index(masses.size());
    RowMatrix g(n - 1, n);
    for (Eigen::Index a = 0; a + 1 < n; ++a) {
        Eigen::RowVectorXd e = Eigen::RowVectorXd::Constant(n, -1.0 / double(n));
        e[a] += 1.0;
        for (Eigen::Index b = 0; b < a; ++b) e -= e.dot(g.row(b)) * g.row(b);
        g.row(a) = e / e.norm();
    }
    return SeparationMatrix{masses, g, capital_gamma(g, masses)};
}

// Any other member of the gamma family; validated against the identities.
inline SeparationMatrix separation_from_gamma(const std::vector<double>& masses, const RowMatrix& gamma,
                                              double tol = 1e-10)
{
    check_masses(masses);
    require(gamma.rows() + 1 == Eigen::Index(masses.size()) && gamma.cols() == Eigen::Index(masses.size()),
            "gamma must be (N-1) x N");
    SeparationMatrix sep{masses, gamma, capital_gamma(gamma, masses)};
    require(canonicity_defect(sep) < tol, "gamma violates the canonicity conditions");
    return sep;
}

struct RelativeState {
    double tau = 0.0;
    Vec3List rho;
    Vec3List pi;
};

struct CollectiveSplit {
    Vec3 eta_plus = Vec3::Zero();
    Vec3 kappa_plus = Vec3::Zero();
    RelativeState rel;
};

inline CollectiveSplit to_relative(const WignerPhaseState& s, const SeparationMatrix& sep)
{
    const std::size_t n = sep.size();
    require(s.size() == n, "state and separation matrix disagree on N");
    const double m = sep.total_mass();
    const double rn = std::sqrt(double(n));
    CollectiveSplit out;
    out.rel.tau = s.tau;
    for (std::size_t i = 0; i < n; ++i) {
        out.eta_plus += sep.masses[i] / m * s.eta[i];
        out.kappa_plus += s.kappa[i];
    }
    for (std::size_t a = 0; a + 1 < n; ++a) {
        Vec3 rho = Vec3::Zero(), pi = Vec3::Zero();
        for (std::size_t i = 0; i < n; ++i) {
            rho += sep.gamma(a, i) * s.eta[i];
            pi += sep.Gamma(a, i) * s.kappa[i];
        }
        out.rel.rho.push_back(rn * rho);
        out.rel.pi.push_back(pi / rn);
    }
    return out;
}

inline WignerPhaseState from_relative(const Vec3& eta_plus, const Vec3& kappa_plus, const RelativeState& r,
                                      const SeparationMatrix& sep)
{
    const std::size_t n = sep.size();
    require(r.rho.size() + 1 == n && r.pi.size() + 1 == n, "relative state and separation matrix disagree on N");
    const double m = sep.total_mass();
    const double rn = std::sqrt(double(n));
    WignerPhaseState s;
    s.tau = r.tau;
    for (std::size_t i = 0; i < n; ++i) {
        Vec3 eta = eta_plus, kappa = sep.masses[i] / m * kappa_plus;
        for (std::size_t a = 0; a + 1 < n; ++a) {
            eta += sep.Gamma(a, i) / rn * r.rho[a];
            kappa += rn * sep.gamma(a, i) * r.pi[a];
        }
        s.eta.push_back(eta);
        s.kappa.push_back(kappa);
    }
    return s;
}

// Two-body relative variables in the (eta1 - eta2, (m2 kappa1 - m1 kappa2)/m) convention.
struct TwoBodyRelative {
    Vec3 rho;
    Vec3 pi;
};

inline TwoBodyRelative two_body_relative(const WignerPhaseState& s, const std::vector<double>& masses)
{
    require(s.size() == 2 && masses.size() == 2, "two-body helper needs N=2");
    const double m = masses[0] + masses[1];
    return {s.eta[0] - s.eta[1], (masses[1] * s.kappa[0] - masses[0] * s.kappa[1]) / m};
}

struct InternalGenerators {
    double Mc = 0.0;
    Vec3 P = Vec3::Zero();
    Vec3 S = Vec3::Zero();
    Vec3 K = Vec3::Zero();
};

inline InternalGenerators internal_generators(const WignerPhaseState& s, const ModelSpec& model)
{
    const std::vector<double> e = particle_energies(s, model);
    InternalGenerators g;
    KahanSum mc;
    for (std::size_t i = 0; i < s.size(); ++i) {
        mc.add(e[i]);
        g.P += s.kappa[i];
        g.S += s.eta[i].cross(s.kappa[i]);
        g.K -= e[i] * s.eta[i];
    }
    g.Mc = mc.value();
    return g;
}

// Rest-frame center of mass from K = 0 at kappa_+ = 0. The quadratic model depends on eta only
// through differences, so the energies and Mc do not move with eta_+ and no iteration is needed.
inline Vec3 solve_internal_com(const RelativeState& r, const SeparationMatrix& sep, const ModelSpec& model)
{
    require(model.size() == sep.size(), "model and separation matrix disagree on N");
    const std::size_t n = sep.size();
    const WignerPhaseState probe = from_relative(Vec3::Zero(), Vec3::Zero(), r, sep);
    const std::vector<double> e = particle_energies(probe, model);
    double Mc = 0.0;
    for (double x : e) Mc += x;
    Vec3 eta_plus = Vec3::Zero();
    for (std::size_t a = 0; a + 1 < n; ++a) {
        double w = 0.0;
        for (std::size_t i = 0; i < n; ++i) w += sep.Gamma(a, i) * e[i] / Mc;
        eta_plus -= w * r.rho[a] / std::sqrt(double(n));
    }
    return eta_plus;
}

// Full rest-frame state (kappa_+ = 0, K = 0) built from relative variables.
inline WignerPhaseState rest_frame_state(const RelativeState& r, const SeparationMatrix& sep, const ModelSpec& model)
{
    return from_relative(solve_internal_com(r, sep, model), Vec3::Zero(), r, sep);
}

struct ConstraintResiduals {
    double P = 0.0;
    double K_over_Mc = 0.0;
};

inline ConstraintResiduals constraint_residuals(const WignerPhaseState& s, const ModelSpec& model)
{
    const InternalGenerators g = internal_generators(s, model);
    return {g.P.norm(), g.K.norm() / g.Mc};
}

inline bool is_rest_frame_reduced(const WignerPhaseState& s, const ModelSpec& model, double tol = 1e-9)
{
    const ConstraintResiduals r = constraint_residuals(s, model);
    return r.P < tol && r.K_over_Mc < tol;
}

} // namespace wigner

#endif
