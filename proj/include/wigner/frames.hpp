#ifndef WIGNER_FRAMES_HPP
#define WIGNER_FRAMES_HPP

#include "state.hpp"

#include <algorithm>
#include <optional>

namespace wigner {

struct Rapidity3 {
    Vec3 h = Vec3::Zero();
    double h0() const { return std::sqrt(1.0 + h.squaredNorm()); }
};

// Columns are eps_A(h), A = tau,1,2,3: the standard Wigner boost with 4-velocity (h0; h).
inline Mat4 build_boost_tetrad(const Vec3& h)
{
    const double h0 = std::sqrt(1.0 + h.squaredNorm());
    Mat4 L;
    L(0, 0) = h0;
    for (int r = 0; r < 3; ++r) {
        L(r + 1, 0) = h[r];
        L(0, r + 1) = h[r];
        for (int s = 0; s < 3; ++s) L(r + 1, s + 1) = (r == s ? 1.0 : 0.0) + h[r] * h[s] / (1.0 + h0);
    }
    return L;
}

// Lambda^{-1} = eta Lambda^T eta for any Lorentz matrix.
inline Mat4 lorentz_inverse(const Mat4& lambda) { return minkowski() * lambda.transpose() * minkowski(); }

inline double orthonormality_defect(const Mat4& L)
{
    return (L.transpose() * minkowski() * L - minkowski()).cwiseAbs().maxCoeff();
}

inline Mat4 rotation4(const Mat3& q)
{
    Mat4 m = Mat4::Identity();
    m.block<3, 3>(1, 1) = q;
    return m;
}

inline Mat3 axis_angle(const Vec3& axis, double angle)
{
    return Mat3(Eigen::AngleAxisd(angle, axis.normalized()).toRotationMatrix());
}

// Frozen Jacobi data of the decoupled external center of mass.
struct JacobiData {
    Vec3 z = Vec3::Zero();
    Vec3 h = Vec3::Zero();
};

struct Centers {
    Vec4 tilde_x;
    Vec4 Y;
    Vec4 R;
    double moller_radius = 0.0;
};

inline void check_mass(double Mc)
{
    if (!(Mc > 0.0) || !std::isfinite(Mc)) throw invalid_input("invariant mass must be positive");
}

inline Centers collective_centers(const JacobiData& j, double Mc, const Vec3& S, double tau)
{
    check_mass(Mc);
    const double h0 = std::sqrt(1.0 + j.h.squaredNorm());
    const double t = tau + j.h.dot(j.z) / Mc;
    const Vec3 sxh = S.cross(j.h);
    Centers c;
    c.Y = four(h0 * t, j.z / Mc + t * j.h + sxh / (Mc * (1.0 + h0)));
    c.tilde_x = c.Y - four(0.0, sxh / (Mc * (1.0 + h0)));
    c.R = c.Y - four(0.0, sxh / (Mc * h0));
    c.moller_radius = S.norm() / Mc;
    return c;
}

// Fokker-Pryce world-line Y(tau) = Y(0) + h^mu tau.
inline Vec4 fokker_pryce(const JacobiData& j, double Mc, const Vec3& S, double tau)
{
    return collective_centers(j, Mc, S, tau).Y;
}

inline Vec4 embed(const JacobiData& j, double Mc, const Vec3& S, double tau, const Vec3& sigma)
{
    const Mat4 L = build_boost_tetrad(j.h);
    return fokker_pryce(j, Mc, S, tau) + L.block<4, 3>(0, 1) * sigma;
}

struct WorldlineSample {
    double tau = 0.0;
    std::vector<Vec4> x;
    std::vector<Vec4> p;
    // Optional tau-derivatives used for Hermite interpolation; filled by the integrator.
    std::vector<Vec4> dx;
    std::vector<Vec4> dp;
};

inline Vec3 spin_of(const Vec3List& eta, const Vec3List& kappa)
{
    Vec3 s = Vec3::Zero();
    for (std::size_t i = 0; i < eta.size(); ++i) s += eta[i].cross(kappa[i]);
    return s;
}

// x_i = Y(tau) + eps_r eta_i^r,  p_i = h^mu E_i + eps_r kappa_i^r.
inline WorldlineSample worldlines_from_wigner(const WignerPhaseState& s, const std::vector<double>& energies,
                                              const JacobiData& j)
{
    if (energies.size() != s.size()) throw invalid_input("one energy per particle required");
    double Mc = 0.0;
    for (double e : energies) {
        if (!(e > 0.0)) throw invalid_input("particle energies must be positive");
        Mc += e;
    }
    const Vec3 S = spin_of(s.eta, s.kappa);
    const Mat4 L = build_boost_tetrad(j.h);
    const Vec4 Y = fokker_pryce(j, Mc, S, s.tau);
    WorldlineSample w;
    w.tau = s.tau;
    for (std::size_t i = 0; i < s.size(); ++i) {
        w.x.push_back(Y + L.block<4, 3>(0, 1) * s.eta[i]);
        w.p.push_back(L.col(0) * energies[i] + L.block<4, 3>(0, 1) * s.kappa[i]);
    }
    return w;
}

struct WignerRecovery {
    std::vector<double> tau;
    Vec3List eta;
    Vec3List kappa;
    std::vector<double> E;
    double Mc = 0.0;
    Vec3 S = Vec3::Zero();
};

// Free-case inversion. Y(0) depends on S through a spatial offset, which enters every eta_i
// as the same shift d = D S; S then solves (1 - [P]x D) S = S0 with S0 the unshifted spin.
inline WignerRecovery wigner_from_worldlines(const WorldlineSample& w, const JacobiData& j,
                                             ModelKind kind = ModelKind::free)
{
    if (kind != ModelKind::free)
        throw invalid_input("world-line inversion is only available for free-particle momenta");
    if (w.x.size() != w.p.size()) throw invalid_input("world-line sample has mismatched x/p");
    const std::size_t n = w.x.size();
    const Mat4 L = build_boost_tetrad(j.h);
    const Mat4 Linv = lorentz_inverse(L);
    const double h0 = std::sqrt(1.0 + j.h.squaredNorm());

    WignerRecovery out;
    Vec3 P = Vec3::Zero();
    for (std::size_t i = 0; i < n; ++i) {
        const Vec4 k = Linv * w.p[i];
        out.E.push_back(k[0]);
        out.kappa.push_back(k.tail<3>());
        out.Mc += k[0];
        P += k.tail<3>();
    }
    check_mass(out.Mc);

    const Vec4 y0 = fokker_pryce(j, out.Mc, Vec3::Zero(), 0.0);
    Vec3List eta0(n);
    out.tau.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const Vec4 sg = Linv * (w.x[i] - y0);
        out.tau[i] = sg[0];
        eta0[i] = sg.tail<3>();
    }
    const Vec3 s0 = spin_of(eta0, out.kappa);

    // offset a(S) = S x h / (Mc (1+h0)); d = spatial part of Linv (0; a), linear in S.
    Mat3 D;
    for (int c = 0; c < 3; ++c) {
        const Vec3 a = Vec3::Unit(c).cross(j.h) / (out.Mc * (1.0 + h0));
        D.col(c) = (Linv * four(0.0, a)).tail<3>();
    }
    Mat3 px;
    px << 0, -P[2], P[1], P[2], 0, -P[0], -P[1], P[0], 0;
    out.S = (Mat3::Identity() - px * D).lu().solve(s0);
    const Vec3 d = D * out.S;
    const double dt = (Linv * four(0.0, out.S.cross(j.h) / (out.Mc * (1.0 + h0))))[0];
    for (std::size_t i = 0; i < n; ++i) {
        out.eta.push_back(eta0[i] - d);
        out.tau[i] -= dt;
    }
    return out;
}

// Exact free-particle solution of x0 = h0 tau + Y0(0) + h.eta_i(tau) with eta_i linear in tau.
inline double free_fixed_time_tau(const Vec3& eta0, const Vec3& kappa, double E, const Vec3& h, double Y00,
                                  double x0)
{
    const double h0 = std::sqrt(1.0 + h.squaredNorm());
    return (x0 - Y00 - h.dot(eta0)) / (h0 + h.dot(kappa) / E);
}

struct FixedTimeSnapshot {
    double x0 = 0.0;
    std::vector<double> tau;
    std::vector<Vec4> x;
    std::vector<Vec4> p;
};

namespace detail {

// Cubic Hermite on [t0,t1].
template <class V>
V hermite(double t0, double t1, const V& y0, const V& y1, const V& d0, const V& d1, double t)
{
    const double hstep = t1 - t0;
    const double s = (t - t0) / hstep;
    const double s2 = s * s, s3 = s2 * s;
    return (2 * s3 - 3 * s2 + 1) * y0 + (s3 - 2 * s2 + s) * hstep * d0 + (-2 * s3 + 3 * s2) * y1 +
           (s3 - s2) * hstep * d1;
}

// Three-point tangent estimate on a non-uniform grid.
template <class V>
std::vector<V> fd_tangents(const std::vector<double>& t, const std::vector<V>& y)
{
    const std::size_t n = t.size();
    std::vector<V> d(n);
    if (n == 1) {
        d[0] = y[0] * 0.0;
        return d;
    }
    for (std::size_t k = 0; k < n; ++k) {
        if (k == 0)
            d[k] = (y[1] - y[0]) / (t[1] - t[0]);
        else if (k + 1 == n)
            d[k] = (y[n - 1] - y[n - 2]) / (t[n - 1] - t[n - 2]);
        else {
            const double hl = t[k] - t[k - 1], hr = t[k + 1] - t[k];
            d[k] = (hl * hl * (y[k + 1] - y[k]) + hr * hr * (y[k] - y[k - 1])) / (hl * hr * (hl + hr));
        }
    }
    return d;
}

} // namespace detail

// Per-particle proper times with x0_i(tau_i) = x0, found by bisection refined with secant steps
// on the cubic-interpolated trajectory.
inline FixedTimeSnapshot resample_at_fixed_time(const std::vector<WorldlineSample>& traj, double x0,
                                                double tol = 1e-10)
{
    if (traj.size() < 2) throw invalid_input("trajectory needs at least two samples");
    const std::size_t n = traj.front().x.size();
    std::vector<double> t;
    for (const auto& w : traj) {
        if (w.x.size() != n || w.p.size() != n) throw invalid_input("inconsistent particle count in trajectory");
        if (!t.empty() && !(w.tau > t.back())) throw invalid_input("trajectory tau must be strictly increasing");
        t.push_back(w.tau);
    }
    FixedTimeSnapshot snap;
    snap.x0 = x0;
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<Vec4> xs, ps, dxs, dps;
        for (const auto& w : traj) {
            xs.push_back(w.x[i]);
            ps.push_back(w.p[i]);
            if (w.dx.size() == n) dxs.push_back(w.dx[i]);
            if (w.dp.size() == n) dps.push_back(w.dp[i]);
        }
        if (dxs.size() != t.size()) dxs = detail::fd_tangents(t, xs);
        if (dps.size() != t.size()) dps = detail::fd_tangents(t, ps);

        std::size_t k = 0;
        while (k + 1 < t.size() && !((xs[k][0] - x0) * (xs[k + 1][0] - x0) <= 0.0)) ++k;
        if (k + 1 == t.size())
            throw std::out_of_range("x0=" + std::to_string(x0) + " is not bracketed for particle " +
                                    std::to_string(i));
        auto f = [&](double tt) {
            return detail::hermite(t[k], t[k + 1], xs[k], xs[k + 1], dxs[k], dxs[k + 1], tt)[0] - x0;
        };
        double a = t[k], b = t[k + 1];
        double fa = f(a), fb = f(b);
        double root = fa == 0.0 ? a : b;
        for (int it = 0; it < 200 && fa != 0.0 && fb != 0.0; ++it) {
            double mid = 0.5 * (a + b);
            const double sec = b - fb * (b - a) / (fb - fa);
            if (sec > a && sec < b && it % 2 == 1) mid = sec;
            const double fm = f(mid);
            if (fm == 0.0 || (b - a) < tol) {
                root = mid;
                break;
            }
            if ((fa < 0.0) == (fm < 0.0)) {
                a = mid;
                fa = fm;
            } else {
                b = mid;
                fb = fm;
            }
            root = 0.5 * (a + b);
        }
        snap.tau.push_back(root);
        snap.x.push_back(detail::hermite(t[k], t[k + 1], xs[k], xs[k + 1], dxs[k], dxs[k + 1], root));
        snap.p.push_back(detail::hermite(t[k], t[k + 1], ps[k], ps[k + 1], dps[k], dps[k + 1], root));
    }
    return snap;
}

inline bool is_proper_orthochronous(const Mat4& lambda, double tol = 1e-10)
{
    return orthonormality_defect(lambda) < tol && lambda(0, 0) >= 1.0 - tol && lambda.determinant() > 0.0;
}

// R = L(h')^{-1} Lambda L(h) with h' the spatial part of Lambda h^mu.
inline Mat3 wigner_rotation(const Mat4& lambda, const Vec3& h)
{
    if (!is_proper_orthochronous(lambda)) throw invalid_input("Lorentz matrix is not proper orthochronous");
    const Mat4 L = build_boost_tetrad(h);
    const Vec3 hp = (lambda * L.col(0)).tail<3>();
    const Mat4 r = lorentz_inverse(build_boost_tetrad(hp)) * lambda * L;
    return r.block<3, 3>(1, 1);
}

inline Vec3 boosted_rapidity(const Mat4& lambda, const Vec3& h)
{
    return (lambda * four(std::sqrt(1.0 + h.squaredNorm()), h)).tail<3>();
}

// Wigner 3-vectors of every particle rotate rigidly under a Lorentz transformation.
inline WignerPhaseState rotate_state(const WignerPhaseState& s, const Mat3& r)
{
    WignerPhaseState out = s;
    for (std::size_t i = 0; i < s.size(); ++i) {
        out.eta[i] = r * s.eta[i];
        out.kappa[i] = r * s.kappa[i];
    }
    return out;
}

struct ExternalGenerators {
    Vec4 P;
    Mat3 J;
    Vec3 K;
};

inline ExternalGenerators external_generators(const JacobiData& j, double Mc, const Vec3& S)
{
    check_mass(Mc);
    const double h0 = std::sqrt(1.0 + j.h.squaredNorm());
    ExternalGenerators g;
    g.P = Mc * four(h0, j.h);
    for (int a = 0; a < 3; ++a)
        for (int b = 0; b < 3; ++b) {
            double spin = 0.0;
            for (int k = 0; k < 3; ++k) {
                const int perm = (a - b) * (b - k) * (k - a) / 2; // Levi-Civita for indices 0..2
                spin += perm * S[k];
            }
            g.J(a, b) = j.z[a] * j.h[b] - j.z[b] * j.h[a] + spin;
        }
    g.K = -h0 * j.z + S.cross(j.h) / (1.0 + h0);
    return g;
}

} // namespace wigner

#endif
