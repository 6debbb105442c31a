#ifndef WIGNER_NONINERTIAL_HPP
#define WIGNER_NONINERTIAL_HPP

#include "canonical.hpp"
#include "ensembles.hpp"
#include "rng.hpp"
#include "stats.hpp"

#include <boost/numeric/odeint.hpp>

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

namespace wigner {

inline Mat3 skew(const Vec3& v)
{
    Mat3 s;
    s << 0.0, -v[2], v[1], v[2], 0.0, -v[0], -v[1], v[0], 0.0;
    return s;
}

// ================================================================ Galilei frames

enum class GalileiKind { rigid, general };

inline std::string to_string(GalileiKind k) { return k == GalileiKind::rigid ? "rigid" : "general"; }

inline GalileiKind galilei_kind_from_string(const std::string& s)
{
    if (s == "rigid") return GalileiKind::rigid;
    if (s == "general") return GalileiKind::general;
    throw invalid_input("unknown Galilei frame kind '" + s + "'");
}

// x = x_o(t) + Q(t) (sigma + eps(t) u psi(sigma)), Q a rotation by theta0 + omega t + alpha t^2/2 about
// a fixed axis, x_o a polynomial, psi = w q exp(-q) with q = |sigma|^2/w^2 and eps = eps0 + eps1 sin(Omega t).
// The bump term is present only for the general kind.
struct GalileiFrame {
    GalileiKind kind = GalileiKind::rigid;
    std::vector<Vec3> origin; // x_o(t) = sum_k origin[k] t^k
    Vec3 axis = Vec3::UnitZ();
    double theta0 = 0.0;
    double omega = 0.0;
    double alpha = 0.0;
    Vec3 bump_dir = Vec3::UnitX();
    double eps0 = 0.0;
    double eps1 = 0.0;
    double bump_omega = 0.0;
    double width = 1.0;

    static GalileiFrame identity() { return {}; }
    static GalileiFrame rotating(double omega, const Vec3& axis = Vec3::UnitZ())
    {
        GalileiFrame f;
        f.omega = omega;
        f.axis = axis;
        return f;
    }
};

inline void validate(const GalileiFrame& f)
{
    require(f.axis.allFinite() && f.axis.norm() > 0.0, "rotation axis must be a nonzero vector");
    require(std::isfinite(f.theta0) && std::isfinite(f.omega) && std::isfinite(f.alpha), "rotation must be finite");
    for (const auto& c : f.origin) require(c.allFinite(), "origin coefficients must be finite");
    if (f.kind == GalileiKind::general) {
        require(f.bump_dir.allFinite() && f.width > 0.0, "bump needs a finite direction and a positive width");
        require(std::isfinite(f.eps0) && std::isfinite(f.eps1) && std::isfinite(f.bump_omega),
                "bump amplitude must be finite");
    }
}

// Map, velocity, Jacobian J(a, r) = dA^a/dsigma^r, its time derivative and its sigma derivatives.
struct GalileiPoint {
    Vec3 A;
    Vec3 At;
    Mat3 J;
    Mat3 Jt;
    std::array<Mat3, 3> dJ; // dJ[r](a, s) = d^2 A^a / dsigma^r dsigma^s
    Mat3 Jinv;
};

inline GalileiPoint evaluate(const GalileiFrame& f, double t, const Vec3& sigma)
{
    const Vec3 n = f.axis.normalized();
    const double theta = f.theta0 + f.omega * t + 0.5 * f.alpha * t * t;
    const double thetadot = f.omega + f.alpha * t;
    const Mat3 Q = Eigen::AngleAxisd(theta, n).toRotationMatrix();
    const Mat3 Qdot = thetadot * skew(n) * Q;

    Vec3 xo = Vec3::Zero(), xodot = Vec3::Zero();
    double tk = 1.0;
    for (std::size_t k = 0; k < f.origin.size(); ++k) {
        xo += f.origin[k] * tk;
        if (k + 1 < f.origin.size()) xodot += double(k + 1) * f.origin[k + 1] * tk;
        tk *= t;
    }

    Vec3 y = sigma;
    Mat3 Dy = Mat3::Identity();
    Vec3 ydot = Vec3::Zero();
    Mat3 Dydot = Mat3::Zero();
    Mat3 H = Mat3::Zero();
    double eps = 0.0;
    Vec3 u = Vec3::Zero();
    if (f.kind == GalileiKind::general) {
        const double w = f.width;
        const double q = sigma.squaredNorm() / (w * w);
        const double e = std::exp(-q);
        const double psi = w * q * e;
        const Vec3 grad = (2.0 / w) * (1.0 - q) * e * sigma;
        H = (2.0 / w) * e * ((1.0 - q) * Mat3::Identity() - (2.0 / (w * w)) * (2.0 - q) * sigma * sigma.transpose());
        eps = f.eps0 + f.eps1 * std::sin(f.bump_omega * t);
        const double epsdot = f.eps1 * f.bump_omega * std::cos(f.bump_omega * t);
        u = f.bump_dir;
        y += eps * psi * u;
        Dy += eps * u * grad.transpose();
        ydot = epsdot * psi * u;
        Dydot = epsdot * u * grad.transpose();
    }

    GalileiPoint p;
    p.A = xo + Q * y;
    p.At = xodot + Qdot * y + Q * ydot;
    p.J = Q * Dy;
    p.Jt = Qdot * Dy + Q * Dydot;
    for (int r = 0; r < 3; ++r) p.dJ[r] = eps * (Q * u) * H.row(r);
    const double det = p.J.determinant();
    if (!(det > 0.0))
        throw numeric_error("frame Jacobian is singular at sigma=(" + std::to_string(sigma[0]) + ", " +
                            std::to_string(sigma[1]) + ", " + std::to_string(sigma[2]) + "), t=" + std::to_string(t));
    p.Jinv = p.J.inverse();
    return p;
}

// Point whose image is x, by Newton iteration from the rigid-motion inverse.
inline std::optional<Vec3> invert_frame(const GalileiFrame& f, double t, const Vec3& x, double tol = 1e-13)
{
    GalileiFrame rigid = f;
    rigid.kind = GalileiKind::rigid;
    const GalileiPoint r0 = evaluate(rigid, t, Vec3::Zero());
    Vec3 s = r0.J.transpose() * (x - r0.A);
    for (int it = 0; it < 60; ++it) {
        GalileiPoint p;
        try {
            p = evaluate(f, t, s);
        }
        catch (const numeric_error&) {
            return std::nullopt;
        }
        const Vec3 d = p.Jinv * (p.A - x);
        s -= d;
        if (d.norm() <= tol * (1.0 + s.norm())) return s;
    }
    return std::nullopt;
}

// Particles with canonical coordinates eta~ in the frame and conjugate momenta p, optionally
// coupled by isotropic springs V = (k/2) sum_{i<j} |x_i - x_j|^2 in the inertial coordinates.
struct GalileiSystem {
    std::vector<double> masses;
    double spring = 0.0;
    std::size_t size() const { return masses.size(); }
};

struct GalileiState {
    double t = 0.0;
    Vec3List eta;
    Vec3List p;
    std::size_t size() const { return eta.size(); }
};

struct GalileiGenerators {
    double E = 0.0;
    Vec3 P = Vec3::Zero();
    Vec3 J = Vec3::Zero();
    Vec3 K = Vec3::Zero();
    double M = 0.0; // effective Hamiltonian
};

inline void check_sizes(const GalileiState& s, const GalileiSystem& sys)
{
    require(!sys.masses.empty(), "system needs at least one particle");
    for (double m : sys.masses) require(std::isfinite(m) && m > 0.0, "masses must be positive");
    require(std::isfinite(sys.spring), "spring constant must be finite");
    require(s.eta.size() == sys.size() && s.p.size() == sys.size(), "state and system disagree on N");
}

inline double spring_energy(const Vec3List& x, double k)
{
    double v = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i)
        for (std::size_t j = i + 1; j < x.size(); ++j) v += 0.5 * k * (x[i] - x[j]).squaredNorm();
    return v;
}

// Inertial momenta pi = J~^T p; E, P, J = sum x x pi, K = t P - sum m x; M = E - sum pi . dA/dt.
// K carries the explicit t P term so that it is conserved when P != 0.
inline GalileiGenerators galilei_generators(const GalileiFrame& f, const GalileiSystem& sys, const GalileiState& s)
{
    check_sizes(s, sys);
    GalileiGenerators g;
    Vec3List x(s.size());
    double drag = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        const GalileiPoint pt = evaluate(f, s.t, s.eta[i]);
        const Vec3 pi = pt.Jinv.transpose() * s.p[i];
        x[i] = pt.A;
        g.E += pi.squaredNorm() / (2.0 * sys.masses[i]);
        g.P += pi;
        g.J += pt.A.cross(pi);
        g.K -= sys.masses[i] * pt.A;
        drag += pi.dot(pt.At);
    }
    g.E += spring_energy(x, sys.spring);
    g.K += s.t * g.P;
    g.M = g.E - drag;
    return g;
}

// Hamilton's equations of M in the frame coordinates.
inline void galilei_rhs(const GalileiFrame& f, const GalileiSystem& sys, double t, const std::vector<double>& y,
                        std::vector<double>& dy)
{
    const std::size_t n = sys.size();
    std::vector<GalileiPoint> pts(n);
    Vec3List x(n), pi(n);
    Vec3 xsum = Vec3::Zero();
    for (std::size_t i = 0; i < n; ++i) {
        const Vec3 eta(y[3 * i], y[3 * i + 1], y[3 * i + 2]);
        const Vec3 p(y[3 * n + 3 * i], y[3 * n + 3 * i + 1], y[3 * n + 3 * i + 2]);
        pts[i] = evaluate(f, t, eta);
        x[i] = pts[i].A;
        pi[i] = pts[i].Jinv.transpose() * p;
        xsum += x[i];
    }
    for (std::size_t i = 0; i < n; ++i) {
        const GalileiPoint& pt = pts[i];
        const Vec3 v = pi[i] / sys.masses[i] - pt.At;
        const Vec3 w = pt.Jinv * v;
        const Vec3 gradV = sys.spring * (double(n) * x[i] - xsum);
        Vec3 dp = -pt.J.transpose() * gradV + pt.Jt.transpose() * pi[i];
        for (int r = 0; r < 3; ++r) dp[r] += pi[i].dot(pt.dJ[r] * w);
        for (int a = 0; a < 3; ++a) {
            dy[3 * i + a] = w[a];
            dy[3 * n + 3 * i + a] = dp[a];
        }
    }
}

struct GalileiTrajectory {
    std::vector<GalileiState> states;
    std::vector<GalileiGenerators> generators;
    double drift_E = 0.0;
    double drift_P = 0.0;
    double drift_J = 0.0;
    double drift_K = 0.0;
    double max_drift() const { return std::max({drift_E, drift_P, drift_J, drift_K}); }
};

// Adaptive Runge-Kutta-Fehlberg 7(8) integration of the M-flow, observed at n_out equally spaced times.
// Drifts are max |G(t) - G(t0)| over the observations.
inline GalileiTrajectory integrate_galilei(const GalileiFrame& f, const GalileiSystem& sys, const GalileiState& s0,
                                           double t_end, double tol = 1e-10, std::size_t n_out = 200)
{
    namespace odeint = boost::numeric::odeint;
    validate(f);
    check_sizes(s0, sys);
    require(std::isfinite(t_end) && tol > 0.0 && n_out >= 1, "need finite t_end, tol > 0 and n_out >= 1");
    const std::size_t n = sys.size();
    std::vector<double> y(6 * n);
    for (std::size_t i = 0; i < n; ++i)
        for (int a = 0; a < 3; ++a) {
            y[3 * i + a] = s0.eta[i][a];
            y[3 * n + 3 * i + a] = s0.p[i][a];
        }
    std::vector<double> times(n_out + 1);
    for (std::size_t k = 0; k <= n_out; ++k) times[k] = s0.t + (t_end - s0.t) * double(k) / double(n_out);

    GalileiTrajectory tr;
    auto observe = [&](const std::vector<double>& yy, double t) {
        GalileiState s;
        s.t = t;
        s.eta.resize(n);
        s.p.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
            s.eta[i] = Vec3(yy[3 * i], yy[3 * i + 1], yy[3 * i + 2]);
            s.p[i] = Vec3(yy[3 * n + 3 * i], yy[3 * n + 3 * i + 1], yy[3 * n + 3 * i + 2]);
        }
        const GalileiGenerators g = galilei_generators(f, sys, s);
        if (!tr.generators.empty()) {
            const GalileiGenerators& g0 = tr.generators.front();
            tr.drift_E = std::max(tr.drift_E, std::abs(g.E - g0.E));
            tr.drift_P = std::max(tr.drift_P, (g.P - g0.P).norm());
            tr.drift_J = std::max(tr.drift_J, (g.J - g0.J).norm());
            tr.drift_K = std::max(tr.drift_K, (g.K - g0.K).norm());
        }
        tr.states.push_back(std::move(s));
        tr.generators.push_back(g);
    };
    auto rhs = [&](const std::vector<double>& yy, std::vector<double>& dy, double t) { galilei_rhs(f, sys, t, yy, dy); };
    auto stepper = odeint::make_controlled(tol, tol, odeint::runge_kutta_fehlberg78<std::vector<double>>());
    const double dt0 = (t_end - s0.t) / double(100 * n_out);
    odeint::integrate_times(stepper, rhs, y, times.begin(), times.end(), dt0, observe);
    return tr;
}

// ================================================================ relativistic non-inertial rest frames

enum class RelFrameKind { flat, bump, rotation, acceleration };

inline std::string to_string(RelFrameKind k)
{
    switch (k) {
    case RelFrameKind::flat: return "flat";
    case RelFrameKind::bump: return "bump";
    case RelFrameKind::rotation: return "rotation";
    case RelFrameKind::acceleration: return "acceleration";
    }
    return "";
}

inline RelFrameKind rel_frame_kind_from_string(const std::string& s)
{
    if (s == "flat") return RelFrameKind::flat;
    if (s == "bump") return RelFrameKind::bump;
    if (s == "rotation") return RelFrameKind::rotation;
    if (s == "acceleration") return RelFrameKind::acceleration;
    throw invalid_input("unknown frame kind '" + s + "'");
}

// Embedding z = Y + h g + eps_r (sigma^r + g^r) with Y' = h.
//  bump:         g = a(tau) w phi, g^r = b^r(tau) w phi, phi = q exp(-q), q = |sigma|^2/w^2,
//                a = a0 + a1 sin(Omega tau), b = b0 + b1 sin(Omega tau)
//  rotation:     g = 0, sigma + g = R_z(omega tau F(|sigma|)) sigma, F = F0 exp(-|sigma|^2/sF^2), or F0 if sF = 0
//  acceleration: g = accel tau^2 / 2 (x_o + h f(tau) with f = tau + accel tau^2/2)
struct RelNonInertialFrame {
    RelFrameKind kind = RelFrameKind::flat;
    double a0 = 0.0, a1 = 0.0;
    Vec3 b0 = Vec3::Zero(), b1 = Vec3::Zero();
    double bump_omega = 0.0;
    double width = 1.0;
    double omega = 0.0;
    double F0 = 1.0;
    double F_width = 0.0;
    double accel = 0.0;

    static RelNonInertialFrame flat() { return {}; }
    static RelNonInertialFrame bump(double a0, const Vec3& b0, double width, double a1 = 0.0,
                                    const Vec3& b1 = Vec3::Zero(), double bump_omega = 0.0)
    {
        RelNonInertialFrame f;
        f.kind = RelFrameKind::bump;
        f.a0 = a0;
        f.a1 = a1;
        f.b0 = b0;
        f.b1 = b1;
        f.bump_omega = bump_omega;
        f.width = width;
        return f;
    }
    static RelNonInertialFrame rotation(double omega, double F0, double F_width = 0.0)
    {
        RelNonInertialFrame f;
        f.kind = RelFrameKind::rotation;
        f.omega = omega;
        f.F0 = F0;
        f.F_width = F_width;
        return f;
    }
    static RelNonInertialFrame acceleration(double accel)
    {
        RelNonInertialFrame f;
        f.kind = RelFrameKind::acceleration;
        f.accel = accel;
        return f;
    }
    // Same profile with every amplitude multiplied by s.
    RelNonInertialFrame scaled(double s) const
    {
        RelNonInertialFrame f = *this;
        f.a0 *= s;
        f.a1 *= s;
        f.b0 *= s;
        f.b1 *= s;
        f.omega *= s;
        f.accel *= s;
        return f;
    }
};

inline void validate(const RelNonInertialFrame& f)
{
    require(std::isfinite(f.a0) && std::isfinite(f.a1) && f.b0.allFinite() && f.b1.allFinite() &&
                std::isfinite(f.bump_omega),
            "bump amplitudes must be finite");
    require(std::isfinite(f.width) && f.width > 0.0, "bump width must be positive");
    require(std::isfinite(f.omega) && std::isfinite(f.F0) && std::isfinite(f.F_width) && f.F_width >= 0.0,
            "rotation parameters must be finite");
    require(std::isfinite(f.accel), "acceleration must be finite");
}

// Profiles and their derivatives at one point; Dgr(r, s) = d g^r / d sigma^s.
struct FramePoint {
    double g = 0.0;
    double gt = 0.0;
    Vec3 dg = Vec3::Zero();
    Vec3 dgt = Vec3::Zero();
    Vec3 gr = Vec3::Zero();
    Vec3 grt = Vec3::Zero();
    Mat3 Dgr = Mat3::Zero();
    Mat3 Dgrt = Mat3::Zero();
};

inline FramePoint evaluate(const RelNonInertialFrame& f, double tau, const Vec3& sigma)
{
    FramePoint p;
    switch (f.kind) {
    case RelFrameKind::flat: break;
    case RelFrameKind::bump: {
        const double w = f.width;
        const double q = sigma.squaredNorm() / (w * w);
        const double e = std::exp(-q);
        const double phi = w * q * e;
        const Vec3 grad = (2.0 / w) * (1.0 - q) * e * sigma;
        const double sn = std::sin(f.bump_omega * tau), cs = std::cos(f.bump_omega * tau);
        const double a = f.a0 + f.a1 * sn, adot = f.a1 * f.bump_omega * cs;
        const Vec3 b = f.b0 + f.b1 * sn, bdot = f.b1 * f.bump_omega * cs;
        p.g = a * phi;
        p.gt = adot * phi;
        p.dg = a * grad;
        p.dgt = adot * grad;
        p.gr = b * phi;
        p.grt = bdot * phi;
        p.Dgr = b * grad.transpose();
        p.Dgrt = bdot * grad.transpose();
        break;
    }
    case RelFrameKind::rotation: {
        const double s2 = sigma.squaredNorm();
        double F = f.F0;
        Vec3 dF = Vec3::Zero();
        if (f.F_width > 0.0) {
            F = f.F0 * std::exp(-s2 / (f.F_width * f.F_width));
            dF = (-2.0 * F / (f.F_width * f.F_width)) * sigma;
        }
        const double th = f.omega * tau * F;
        const Vec3 dth = f.omega * tau * dF;
        const double c = std::cos(th), s = std::sin(th);
        Mat3 R, dR, d2R;
        R << c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0;
        dR << -s, -c, 0.0, c, -s, 0.0, 0.0, 0.0, 0.0;
        d2R << -c, s, 0.0, -s, -c, 0.0, 0.0, 0.0, 0.0;
        const Vec3 Rp = dR * sigma, Rpp = d2R * sigma;
        p.gr = R * sigma - sigma;
        p.Dgr = R - Mat3::Identity() + Rp * dth.transpose();
        p.grt = f.omega * F * Rp;
        p.Dgrt = f.omega * (Rp * dF.transpose() + F * (dR + Rpp * dth.transpose()));
        break;
    }
    case RelFrameKind::acceleration:
        p.g = 0.5 * f.accel * tau * tau;
        p.gt = f.accel * tau;
        break;
    }
    return p;
}

// Induced geometry in tetrad components (h, eps_1..3), which carry the flat metric.
struct FrameGeometry {
    std::array<Vec4, 3> z;   // dz/dsigma^r
    Vec4 z_tau;
    Vec4 l;                  // future unit normal
    Mat3 D;                  // D(r, s) = d(sigma^r + g^r)/dsigma^s
    Mat3 h;                  // 3-metric h_rs = -z_r . z_s
    Mat3 h_inv;
    double g_tautau = 0.0;
    double lapse = 1.0;      // 1 + n = l . z_tau
    Vec3 shift_down = Vec3::Zero(); // n_r = -g_tau r
    Vec3 shift_up = Vec3::Zero();
    Vec3 h_eigen = Vec3::Ones();
    bool spacelike = true;
};

inline FrameGeometry frame_geometry(const FramePoint& p)
{
    FrameGeometry G;
    G.D = Mat3::Identity() + p.Dgr;
    for (int r = 0; r < 3; ++r) G.z[r] = four(p.dg[r], G.D.col(r));
    G.z_tau = four(1.0 + p.gt, p.grt);
    G.h = G.D.transpose() * G.D - p.dg * p.dg.transpose();
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(G.h);
    G.h_eigen = es.eigenvalues();
    G.g_tautau = mdot(G.z_tau, G.z_tau);
    const double detD = G.D.determinant();
    if (std::abs(detD) > 0.0) {
        const Vec3 v = G.D.transpose().inverse() * p.dg;
        const double s = 1.0 - v.squaredNorm();
        G.spacelike = s > 0.0 && G.h_eigen.minCoeff() > 0.0;
        if (s > 0.0) {
            const double l0 = 1.0 / std::sqrt(s);
            G.l = four(l0, l0 * v);
        }
    }
    else {
        G.spacelike = false;
    }
    if (G.spacelike) {
        G.h_inv = G.h.inverse();
        G.lapse = mdot(G.l, G.z_tau);
        for (int r = 0; r < 3; ++r) G.shift_down[r] = -mdot(G.z_tau, G.z[r]);
        G.shift_up = G.h_inv * G.shift_down;
    }
    return G;
}

struct MollerViolation {
    double tau = 0.0;
    Vec3 sigma = Vec3::Zero();
    std::string condition;
    double value = 0.0;
};

struct MollerReport {
    bool admissible = true;
    std::size_t checked = 0;
    std::size_t violations = 0;
    std::optional<MollerViolation> first;
    double min_lapse = std::numeric_limits<double>::infinity();
    double min_g_tautau = std::numeric_limits<double>::infinity();
    double min_h_eigen = std::numeric_limits<double>::infinity();
};

struct MollerGrid {
    std::vector<double> taus;
    Vec3List points;
};

// Cubic grid of side 2 half_width with n points per axis, at the given tau stamps.
inline MollerGrid cubic_grid(double half_width, int n, std::vector<double> taus)
{
    require(half_width > 0.0 && n >= 2 && !taus.empty(), "grid needs a positive extent, n >= 2 and a tau stamp");
    MollerGrid g;
    g.taus = std::move(taus);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            for (int k = 0; k < n; ++k) {
                auto at = [&](int a) { return -half_width + 2.0 * half_width * double(a) / double(n - 1); };
                g.points.emplace_back(at(i), at(j), at(k));
            }
    return g;
}

// 1 + n > 0, g_tautau > 0 and a positive definite 3-metric at every grid point.
inline MollerReport moller_check(const RelNonInertialFrame& f, const MollerGrid& grid)
{
    validate(f);
    MollerReport rep;
    for (double tau : grid.taus)
        for (const Vec3& s : grid.points) {
            const FrameGeometry G = frame_geometry(evaluate(f, tau, s));
            ++rep.checked;
            rep.min_g_tautau = std::min(rep.min_g_tautau, G.g_tautau);
            rep.min_h_eigen = std::min(rep.min_h_eigen, G.h_eigen.minCoeff());
            if (G.spacelike) rep.min_lapse = std::min(rep.min_lapse, G.lapse);
            const char* cond = nullptr;
            double value = 0.0;
            if (!G.spacelike) {
                cond = "3-metric positivity";
                value = G.h_eigen.minCoeff();
            }
            else if (!(G.lapse > 0.0)) {
                cond = "1 + n > 0";
                value = G.lapse;
            }
            else if (!(G.g_tautau > 0.0)) {
                cond = "g_tautau > 0";
                value = G.g_tautau;
            }
            if (cond) {
                ++rep.violations;
                rep.admissible = false;
                if (!rep.first) rep.first = MollerViolation{tau, s, cond, value};
            }
        }
    return rep;
}

struct NonInertialGenerators {
    double Mc = 0.0;
    Vec3 P = Vec3::Zero();
    Vec3 S = Vec3::Zero();
    Vec3 K = Vec3::Zero();
    double calM = 0.0;       // (1 + n) eps - n^r kappa_r summed over particles
    double calM_split = 0.0; // Mc + sum (dg/dtau T_tau + dg^r/dtau T_r)
    double spin_residual = 0.0; // |S - sum eta x kappa|
};

// Particle 4-momentum p = eps l + z_r h^{rs} kappa_s, eps = sqrt(m^2c^2 + h^{rs} kappa_r kappa_s),
// in tetrad components. Position on the 3-space is (g; sigma + g^r).
inline NonInertialGenerators rel_noninertial_generators(const RelNonInertialFrame& f, const WignerPhaseState& s,
                                                        const ModelSpec& model)
{
    validate(model);
    validate(f);
    check_sizes(s, model);
    require(model.kind == ModelKind::free, "non-inertial generators are implemented for free particles only");
    NonInertialGenerators out;
    KahanSum mc, cm, cms;
    const double c = model.c;
    for (std::size_t i = 0; i < s.size(); ++i) {
        const FramePoint fp = evaluate(f, s.tau, s.eta[i]);
        const FrameGeometry G = frame_geometry(fp);
        if (!G.spacelike || !(G.lapse > 0.0) || !(G.g_tautau > 0.0))
            throw numeric_error("frame is inadmissible at particle " + std::to_string(i) +
                                ", tau=" + std::to_string(s.tau));
        const double m = model.masses[i];
        const Vec3& k = s.kappa[i];
        const Vec3 kup = G.h_inv * k;
        const double eps = std::sqrt(m * m * c * c + k.dot(kup));
        Vec4 p = eps * G.l;
        for (int r = 0; r < 3; ++r) p += kup[r] * G.z[r];
        const Vec3 pv = spatial(p);
        const Vec3 X = s.eta[i] + fp.gr;
        mc.add(p[0]);
        out.P += pv;
        out.S += X.cross(pv);
        out.K += fp.g * pv - p[0] * X;
        cm.add(G.lapse * eps - G.shift_up.dot(k));
        cms.add(fp.gt * p[0] - fp.grt.dot(pv));
    }
    out.Mc = mc.value();
    out.calM = cm.value();
    out.calM_split = out.Mc + cms.value();
    Vec3 flat = Vec3::Zero();
    for (std::size_t i = 0; i < s.size(); ++i) flat += s.eta[i].cross(s.kappa[i]);
    out.spin_residual = (out.S - flat).norm();
    return out;
}

// ================================================================ non-inertial partition functions

struct NonInertialOptions {
    int threads = 1;
    int chunks = 64;
    double bandwidth_scale = 1.0;
    Vec3 spin_bandwidth = Vec3::Zero(); // used as is when positive, skipping the pilot run
    std::size_t pilot = 20000;
    double newton_tol = 1e-12;
};

struct NonInertialPartition {
    PartitionEstimate estimate;
    Vec3 spin_bandwidth = Vec3::Zero();
    std::size_t admissible = 0; // draws with a solution inside the volume
};

inline void check_noninertial_spec(const EnsembleSpec& spec, Regime regime)
{
    validate(spec.model);
    require(spec.regime == regime, "regime " + to_string(spec.regime) + " does not match the frame type");
    require(spec.extended && spec.S.has_value(), "non-inertial partition functions need a spin target");
    require(spec.N() >= 3, "the spin shell is degenerate for N < 3");
    require(equal_masses(spec.model.masses), "non-inertial partition functions need equal masses");
    require(spec.model.kind == ModelKind::free, "non-inertial partition functions are free-particle only");
    require(std::isfinite(spec.R) && spec.R > 0.0, "volume radius must be positive");
}

// Galilei frame at time t. The conditions on P, S and E are linear or quadratic in the momenta, so
// with inertial momenta pi = J~^T p (d^3p = det J d^3pi) the momentum integral is the flat spin-shell
// measure at the mapped positions x_i = A(t, eta~_i). The K condition sum x_i = 0 is solved for
// eta~_N by Newton iteration, contributing 1/det J(eta~_N). Positions eta~_1..N-1 are uniform in the ball.
inline NonInertialPartition noninertial_partition(const EnsembleSpec& spec, const GalileiFrame& frame, double t,
                                                  std::size_t n_samples, std::uint64_t seed,
                                                  const NonInertialOptions& opt = {})
{
    check_noninertial_spec(spec, Regime::nonrel_restframe);
    validate(frame);
    require(n_samples >= 2 && opt.chunks >= 1, "need at least two samples and one chunk");
    const std::size_t N = spec.N();
    const double m = spec.model.masses.front(), R = spec.R, V = spec.volume();
    const Philox root(seed, "mc");
    struct Acc {
        Moments w;
        std::size_t admissible = 0;
    };
    const std::size_t per = n_samples / std::size_t(opt.chunks), extra = n_samples % std::size_t(opt.chunks);
    auto work = [&](int ch) {
        Philox rng = root.split(std::uint64_t(ch));
        Acc a;
        Vec3List x(N);
        const std::size_t count = per + (std::size_t(ch) < extra ? 1 : 0);
        for (std::size_t k = 0; k < count; ++k) {
            double w = 0.0;
            double jac = 1.0;
            Vec3 sum = Vec3::Zero();
            for (std::size_t i = 0; i + 1 < N; ++i) {
                const GalileiPoint p = evaluate(frame, t, uniform_in_ball(rng, R));
                x[i] = p.A;
                jac *= p.J.determinant();
                sum += p.A;
            }
            x[N - 1] = -sum;
            const auto last = invert_frame(frame, t, x[N - 1]);
            if (last && last->norm() <= R) {
                ++a.admissible;
                w = jac * spin_shell_measure(x, *spec.S, spec.E, m);
            }
            a.w.add(w);
        }
        return a;
    };
    const auto parts = run_chunks(opt.chunks, resolve_threads(opt.threads), work);
    Acc tot;
    for (const auto& p : parts) {
        tot.w.merge(p.w);
        tot.admissible += p.admissible;
    }
    if (tot.admissible == 0) throw numeric_error("every position draw fell outside the volume");
    const double scale = std::exp(double(N - 1) * std::log(V) - 3.0 * std::log(m) - std::lgamma(double(N) + 1.0));
    NonInertialPartition out;
    out.estimate = {scale * tot.w.mean(), scale * tot.w.stderr_of_mean(), n_samples, "mc-galilei", 0.0, seed, "mc"};
    out.admissible = tot.admissible;
    return out;
}

namespace detail {

// One relativistic draw: positions eta_1..N-1, momentum directions q_1..N-1 on the unit sphere of
// R^{3(N-1)}, tetrad momenta p_i = lambda q_i and p_N = -lambda sum q (P = 0 exactly). The energy
// and K conditions are solved jointly for (lambda, eta_N).
struct RelDraw {
    bool ok = false;
    double weight = 0.0; // everything except the spin kernel and the global scale
    Vec3 S = Vec3::Zero();
};

inline RelDraw rel_draw(const EnsembleSpec& spec, const RelNonInertialFrame& f, double tau, Philox& rng, double tol)
{
    const std::size_t N = spec.N();
    const double m = spec.model.masses.front(), c = spec.model.c, R = spec.R;
    const double mc = m * c;
    RelDraw d;
    Vec3List eta(N), q(N);
    std::vector<FramePoint> fp(N);
    std::vector<FrameGeometry> G(N);
    double qn = 0.0;
    for (std::size_t i = 0; i + 1 < N; ++i) {
        eta[i] = uniform_in_ball(rng, R);
        q[i] = normal_vec3(rng);
        qn += q[i].squaredNorm();
    }
    qn = std::sqrt(qn);
    q[N - 1] = Vec3::Zero();
    for (std::size_t i = 0; i + 1 < N; ++i) {
        q[i] /= qn;
        q[N - 1] -= q[i];
        fp[i] = evaluate(f, tau, eta[i]);
        G[i] = frame_geometry(fp[i]);
        if (!G[i].spacelike) return d;
    }
    // Flat starting point: lambda from the energy, eta_N from the energy-weighted centroid.
    auto flat_energy = [&](double lam) {
        double e = 0.0;
        for (std::size_t i = 0; i < N; ++i) e += std::sqrt(mc * mc + lam * lam * q[i].squaredNorm());
        return e * c;
    };
    if (!(spec.E > flat_energy(0.0))) return d;
    double lo = 0.0, hi = 1.0;
    while (flat_energy(hi) < spec.E) hi *= 2.0;
    for (int it = 0; it < 200 && hi - lo > 1e-15 * hi; ++it) {
        const double mid = 0.5 * (lo + hi);
        (flat_energy(mid) < spec.E ? lo : hi) = mid;
    }
    double lam = 0.5 * (lo + hi);
    Vec3 etaN = Vec3::Zero();
    {
        double eN = std::sqrt(mc * mc + lam * lam * q[N - 1].squaredNorm());
        for (std::size_t i = 0; i + 1 < N; ++i)
            etaN -= std::sqrt(mc * mc + lam * lam * q[i].squaredNorm()) * eta[i] / eN;
    }

    Eigen::Matrix4d Jm;
    Eigen::Vector4d F;
    double Mc = 0.0;
    Vec3 S = Vec3::Zero();
    bool converged = false;
    for (int it = 0; it < 60; ++it) {
        fp[N - 1] = evaluate(f, tau, etaN);
        G[N - 1] = frame_geometry(fp[N - 1]);
        if (!G[N - 1].spacelike) return d;
        double calM = 0.0, dM = 0.0;
        Vec3 K = Vec3::Zero(), dK = Vec3::Zero();
        Mc = 0.0;
        S = Vec3::Zero();
        double p0N = 0.0;
        Vec3 pN = Vec3::Zero();
        for (std::size_t i = 0; i < N; ++i) {
            const Vec3 pv = lam * q[i];
            const double p0 = std::sqrt(mc * mc + pv.squaredNorm());
            const Vec3 X = (i + 1 < N ? eta[i] : etaN) + fp[i].gr;
            Mc += p0;
            calM += (1.0 + fp[i].gt) * p0 - fp[i].grt.dot(pv);
            dM += (1.0 + fp[i].gt) * lam * q[i].squaredNorm() / p0 - fp[i].grt.dot(q[i]);
            K += fp[i].g * pv - p0 * X;
            dK += fp[i].g * q[i] - (lam * q[i].squaredNorm() / p0) * X;
            S += X.cross(pv);
            if (i + 1 == N) {
                p0N = p0;
                pN = pv;
            }
        }
        const Vec3 dMdeta = p0N * fp[N - 1].dgt - fp[N - 1].Dgrt.transpose() * pN;
        const Mat3 dKdeta = pN * fp[N - 1].dg.transpose() - p0N * G[N - 1].D;
        F << c * calM - spec.E, K;
        Jm(0, 0) = c * dM;
        Jm.block<1, 3>(0, 1) = c * dMdeta.transpose();
        Jm.block<3, 1>(1, 0) = dK;
        Jm.block<3, 3>(1, 1) = dKdeta;
        if (std::abs(F[0]) <= tol * spec.E && K.norm() <= tol * Mc * R) {
            converged = true;
            break;
        }
        const Eigen::Vector4d step = Jm.partialPivLu().solve(F);
        if (!step.allFinite()) return d;
        lam -= step[0];
        etaN -= step.tail<3>();
        if (!(lam > 0.0) || etaN.norm() > 10.0 * R) return d;
    }
    if (!converged || etaN.norm() > R) return d;
    const double detJ = std::abs(Jm.determinant());
    if (!(detJ > 0.0)) return d;
    // kappa_r = D(., r) . p - dg_r p0, so d kappa / d p = D^T - dg p^T / p0 for each particle.
    double jac = 1.0;
    for (std::size_t i = 0; i < N; ++i) {
        const Vec3 pv = lam * q[i];
        const double p0 = std::sqrt(mc * mc + pv.squaredNorm());
        const Mat3 Mk = G[i].D.transpose() - fp[i].dg * pv.transpose() / p0;
        jac *= std::abs(Mk.determinant());
    }
    const int dim = 3 * int(N - 1);
    d.ok = true;
    d.S = S;
    d.weight = jac * std::pow(lam, dim - 1) * Mc * Mc * Mc / detJ;
    return d;
}

} // namespace detail

// Relativistic non-inertial rest frame at tau. P = 0 is imposed exactly, the energy and K conditions
// are solved for (lambda, eta_N) and the spin condition is a product Gaussian kernel with a
// Scott-rule bandwidth per component from a pilot run.
inline NonInertialPartition noninertial_partition(const EnsembleSpec& spec, const RelNonInertialFrame& frame,
                                                  double tau, std::size_t n_samples, std::uint64_t seed,
                                                  const NonInertialOptions& opt = {})
{
    check_noninertial_spec(spec, Regime::rel_restframe);
    validate(frame);
    require(spec.E > spec.rest_energy(), "energy must exceed the rest energy");
    require(n_samples >= 100 && opt.chunks >= 1, "need at least 100 samples and one chunk");
    const std::size_t N = spec.N();
    const Philox root(seed, "mc");

    Vec3 b = opt.spin_bandwidth;
    if (!(b.minCoeff() > 0.0)) {
        Philox prng = root.split(std::uint64_t(opt.chunks));
        std::array<Moments, 3> mo;
        const std::size_t np = std::min(opt.pilot, n_samples);
        for (std::size_t k = 0; k < np; ++k) {
            const auto d = detail::rel_draw(spec, frame, tau, prng, opt.newton_tol);
            if (d.ok)
                for (int a = 0; a < 3; ++a) mo[a].add(d.S[a]);
        }
        if (mo[0].n < 10) throw numeric_error("pilot run found no admissible draws; check R and E");
        const double rule = std::pow(double(n_samples), -1.0 / 7.0);
        for (int a = 0; a < 3; ++a) b[a] = opt.bandwidth_scale * std::sqrt(mo[a].variance()) * rule;
        if (!(b.minCoeff() > 0.0)) throw numeric_error("spin spread vanished in the pilot run");
    }

    struct Acc {
        Moments w;
        std::size_t admissible = 0;
    };
    const std::size_t per = n_samples / std::size_t(opt.chunks), extra = n_samples % std::size_t(opt.chunks);
    auto work = [&](int ch) {
        Philox rng = root.split(std::uint64_t(ch));
        Acc a;
        const std::size_t count = per + (std::size_t(ch) < extra ? 1 : 0);
        for (std::size_t k = 0; k < count; ++k) {
            const auto d = detail::rel_draw(spec, frame, tau, rng, opt.newton_tol);
            double w = 0.0;
            if (d.ok) {
                ++a.admissible;
                w = d.weight;
                for (int c = 0; c < 3; ++c) w *= gaussian_kernel(d.S[c] - (*spec.S)[c], b[c]);
            }
            a.w.add(w);
        }
        return a;
    };
    const auto parts = run_chunks(opt.chunks, resolve_threads(opt.threads), work);
    Acc tot;
    for (const auto& p : parts) {
        tot.w.merge(p.w);
        tot.admissible += p.admissible;
    }
    if (tot.admissible == 0) throw numeric_error("no draw solved the energy and centre-of-mass conditions");
    const int dim = 3 * int(N - 1);
    const double log_sphere = std::log(2.0) + 0.5 * dim * std::log(std::numbers::pi) - std::lgamma(0.5 * dim);
    const double scale =
        std::exp(double(N - 1) * std::log(spec.volume()) + log_sphere - std::lgamma(double(N) + 1.0));
    NonInertialPartition out;
    out.estimate = {scale * tot.w.mean(), scale * tot.w.stderr_of_mean(), n_samples, "mc-kernel-spin", b.mean(),
                    seed, "mc"};
    out.spin_bandwidth = b;
    out.admissible = tot.admissible;
    return out;
}

} // namespace wigner

#endif
