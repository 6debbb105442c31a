#ifndef WIGNER_DYNAMICS_HPP
#define WIGNER_DYNAMICS_HPP

#include "canonical.hpp"
#include "frames.hpp"

#include <array>
#include <functional>
#include <limits>

namespace wigner {

using StateVector = Eigen::VectorXd;

// Packing: [eta_1 .. eta_N, kappa_1 .. kappa_N].
inline StateVector pack(const WignerPhaseState& s)
{
    const std::size_t n = s.size();
    StateVector y(6 * n);
    for (std::size_t i = 0; i < n; ++i) {
        y.segment<3>(3 * i) = s.eta[i];
        y.segment<3>(3 * (n + i)) = s.kappa[i];
    }
    return y;
}

inline WignerPhaseState unpack(const StateVector& y, double tau)
{
    const std::size_t n = std::size_t(y.size()) / 6;
    WignerPhaseState s;
    s.tau = tau;
    for (std::size_t i = 0; i < n; ++i) {
        s.eta.push_back(y.segment<3>(3 * i));
        s.kappa.push_back(y.segment<3>(3 * (n + i)));
    }
    return s;
}

struct PhaseVelocity {
    Vec3List deta;
    Vec3List dkappa;
};

// d eta_i/dtau = (kappa_i + W_i)/E_i,  d kappa_i/dtau = -g N (v_i - mean v) with v_i the former.
inline PhaseVelocity hamilton_rhs(const WignerPhaseState& s, const ModelSpec& model)
{
    const std::vector<double> e = particle_energies(s, model);
    const Vec3List k = kinetic_momenta(s, model);
    const std::size_t n = s.size();
    PhaseVelocity d{Vec3List(n), Vec3List(n, Vec3::Zero())};
    Vec3 mean = Vec3::Zero();
    for (std::size_t i = 0; i < n; ++i) {
        d.deta[i] = k[i] / e[i];
        mean += d.deta[i];
    }
    if (model.kind == ModelKind::quadratic) {
        mean /= double(n);
        const double gn = model.g * double(n);
        for (std::size_t i = 0; i < n; ++i) d.dkappa[i] = -gn * (d.deta[i] - mean);
    }
    return d;
}

inline StateVector pack(const PhaseVelocity& d)
{
    WignerPhaseState tmp;
    tmp.eta = d.deta;
    tmp.kappa = d.dkappa;
    return pack(tmp);
}

// Fourth-order central derivative with step (1e-5) max(1,|x|).
template <class F>
double central_derivative(F&& f, double x)
{
    const double h = 1e-5 * std::max(1.0, std::abs(x));
    return (8.0 * (f(x + h) - f(x - h)) - (f(x + 2 * h) - f(x - 2 * h))) / (12.0 * h);
}

inline StateVector gradient_fd(const std::function<double(const WignerPhaseState&)>& f, const WignerPhaseState& s)
{
    StateVector y = pack(s);
    StateVector grad(y.size());
    for (Eigen::Index k = 0; k < y.size(); ++k) {
        const double x0 = y[k];
        grad[k] = central_derivative(
            [&](double x) {
                StateVector z = y;
                z[k] = x;
                return f(unpack(z, s.tau));
            },
            x0);
    }
    return grad;
}

// Hamilton equations from finite differences of Mc; works for any model that hamiltonian() handles.
inline PhaseVelocity hamilton_rhs_fd(const WignerPhaseState& s, const ModelSpec& model)
{
    const StateVector grad = gradient_fd([&](const WignerPhaseState& x) { return hamiltonian(x, model); }, s);
    const std::size_t n = s.size();
    PhaseVelocity d{Vec3List(n), Vec3List(n)};
    for (std::size_t i = 0; i < n; ++i) {
        d.deta[i] = grad.segment<3>(3 * (n + i));
        d.dkappa[i] = -grad.segment<3>(3 * i);
    }
    return d;
}

// Total tau-derivative of an observable along the Mc flow.
inline double liouville_apply(const std::function<double(const WignerPhaseState&)>& f, const WignerPhaseState& s,
                              const ModelSpec& model)
{
    const StateVector grad = gradient_fd(f, s);
    const StateVector rhs = pack(hamilton_rhs(s, model));
    const double dtau = central_derivative(
        [&](double t) {
            WignerPhaseState x = s;
            x.tau = t;
            return f(x);
        },
        s.tau);
    return dtau + grad.dot(rhs);
}

enum class Integrator { dopri5, implicit_midpoint };

struct IntegrateOptions {
    Integrator method = Integrator::dopri5;
    double fixed_step = 1e-2;    // implicit midpoint only
    double initial_step = 0.0;   // 0 = automatic
    std::size_t max_steps = 10'000'000;
    double collision_distance = 1e-6;
};

struct StepDiagnostic {
    double tau;
    double dMc_rel;
    double resP;
    double resK;
};

struct CollisionEvent {
    double tau;
    std::size_t i;
    std::size_t j;
    double distance;
};

// Accepted nodes plus per-step dense-output coefficients (empty for implicit midpoint,
// which falls back to cubic Hermite on node derivatives).
struct Trajectory {
    ModelSpec model;
    std::vector<double> tau;
    std::vector<StateVector> y;
    std::vector<StateVector> f;
    std::vector<std::array<StateVector, 5>> dense;
    std::vector<StepDiagnostic> diagnostics;
    std::vector<CollisionEvent> collisions;

    std::size_t size() const { return tau.size(); }
    WignerPhaseState state(std::size_t k) const { return unpack(y[k], tau[k]); }
    WignerPhaseState back() const { return state(size() - 1); }

    WignerPhaseState at(double t) const
    {
        const bool forward = tau.back() >= tau.front();
        auto inside = [&](std::size_t k) {
            return forward ? (t >= tau[k] && t <= tau[k + 1]) : (t <= tau[k] && t >= tau[k + 1]);
        };
        for (std::size_t k = 0; k + 1 < size(); ++k) {
            if (!inside(k)) continue;
            const double h = tau[k + 1] - tau[k];
            const double th = (t - tau[k]) / h;
            if (!dense.empty()) {
                const auto& r = dense[k];
                const double th1 = 1.0 - th;
                return unpack(r[0] + th * (r[1] + th1 * (r[2] + th * (r[3] + th1 * r[4]))), t);
            }
            return unpack(detail::hermite(tau[k], tau[k + 1], y[k], y[k + 1], f[k], f[k + 1], t), t);
        }
        if (size() == 1 && t == tau[0]) return state(0);
        throw std::out_of_range("tau=" + std::to_string(t) + " outside trajectory");
    }
};

namespace detail {

struct Dopri5Tableau {
    static constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
    static constexpr double a21 = 1.0 / 5;
    static constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
    static constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
    static constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561, a54 = -212.0 / 729;
    static constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247, a64 = 49.0 / 176,
                            a65 = -5103.0 / 18656;
    static constexpr double a71 = 35.0 / 384, a73 = 500.0 / 1113, a74 = 125.0 / 192, a75 = -2187.0 / 6784,
                            a76 = 11.0 / 84;
    static constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920, e5 = -17253.0 / 339200,
                            e6 = 22.0 / 525, e7 = -1.0 / 40;
    static constexpr double d1 = -12715105075.0 / 11282082432, d3 = 87487479700.0 / 32700410799,
                            d4 = -10690763975.0 / 1880347072, d5 = 701980252875.0 / 199316789632,
                            d6 = -1453857185.0 / 822651844, d7 = 69997945.0 / 29380423;
};

inline double min_pair_distance(const StateVector& y, std::size_t n, std::size_t& bi, std::size_t& bj)
{
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            const double d = (y.segment<3>(3 * i) - y.segment<3>(3 * j)).norm();
            if (d < best) {
                best = d;
                bi = i;
                bj = j;
            }
        }
    return best;
}

} // namespace detail

class TrajectoryBuilder {
public:
    TrajectoryBuilder(const ModelSpec& model, const WignerPhaseState& s0, double collision_distance)
        : collision_distance_(collision_distance)
    {
        traj_.model = model;
        mc0_ = hamiltonian(s0, model);
        push(s0.tau, pack(s0), rhs(s0.tau, pack(s0)));
    }

    StateVector rhs(double t, const StateVector& y) const { return pack(hamilton_rhs(unpack(y, t), traj_.model)); }

    void push(double t, const StateVector& y, const StateVector& f)
    {
        traj_.tau.push_back(t);
        traj_.y.push_back(y);
        traj_.f.push_back(f);
        const WignerPhaseState s = unpack(y, t);
        const InternalGenerators g = internal_generators(s, traj_.model);
        traj_.diagnostics.push_back({t, std::abs(g.Mc - mc0_) / mc0_, g.P.norm(), g.K.norm() / g.Mc});
    }

    // Scans the last step for pair approaches below the collision distance.
    void check_collisions(const std::function<StateVector(double)>& dense)
    {
        const std::size_t n = traj_.model.size();
        if (n < 2) return;
        const std::size_t k = traj_.size() - 2;
        const double t0 = traj_.tau[k], t1 = traj_.tau[k + 1];
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j) {
                auto dist = [&](double t) {
                    const StateVector y = dense(t);
                    return (y.segment<3>(3 * i) - y.segment<3>(3 * j)).norm();
                };
                // Coarse scan, then golden-section refinement around the best sample.
                const int samples = 8;
                int best = 0;
                double dbest = std::numeric_limits<double>::infinity();
                for (int q = 0; q <= samples; ++q) {
                    const double d = dist(t0 + (t1 - t0) * q / samples);
                    if (d < dbest) {
                        dbest = d;
                        best = q;
                    }
                }
                double a = t0 + (t1 - t0) * std::max(0, best - 1) / samples;
                double b = t0 + (t1 - t0) * std::min(samples, best + 1) / samples;
                const double gr = 0.5 * (std::sqrt(5.0) - 1.0);
                for (int it = 0; it < 60; ++it) {
                    const double x1 = b - gr * (b - a), x2 = a + gr * (b - a);
                    if (dist(x1) < dist(x2))
                        b = x2;
                    else
                        a = x1;
                }
                const double tm = 0.5 * (a + b);
                const double dm = std::min(dbest, dist(tm));
                if (dm < collision_distance_) traj_.collisions.push_back({tm, i, j, dm});
            }
    }

    Trajectory& trajectory() { return traj_; }

private:
    Trajectory traj_;
    double mc0_ = 0.0;
    double collision_distance_;
};

inline Trajectory integrate_dopri5(const WignerPhaseState& s0, const ModelSpec& model, double tau_end, double tol,
                                   const IntegrateOptions& opt)
{
    using T = detail::Dopri5Tableau;
    TrajectoryBuilder b(model, s0, opt.collision_distance);
    const double dir = tau_end >= s0.tau ? 1.0 : -1.0;
    const double span = std::abs(tau_end - s0.tau);
    double t = s0.tau;
    StateVector y = pack(s0);
    StateVector k1 = b.rhs(t, y);
    auto err_scale = [&](const StateVector& a, const StateVector& c) {
        return (tol + tol * a.cwiseAbs().cwiseMax(c.cwiseAbs()).array()).matrix();
    };
    double h = opt.initial_step;
    if (h <= 0.0) {
        // Hairer's starting-step heuristic.
        const StateVector sc = err_scale(y, y);
        const double d0 = std::sqrt((y.array() / sc.array()).square().mean());
        const double d1 = std::sqrt((k1.array() / sc.array()).square().mean());
        double h0 = (d0 < 1e-5 || d1 < 1e-5) ? 1e-6 : 0.01 * d0 / d1;
        const StateVector y1 = y + dir * h0 * k1;
        const StateVector f1 = b.rhs(t + dir * h0, y1);
        const double d2 = std::sqrt(((f1 - k1).array() / sc.array()).square().mean()) / h0;
        const double h1 = std::max(d1, d2) <= 1e-15 ? std::max(1e-6, h0 * 1e-3) : std::pow(0.01 / std::max(d1, d2), 0.2);
        h = std::min(100 * h0, h1);
    }
    h = std::min(h, span > 0 ? span : h);
    double err_old = 1e-4;
    std::size_t steps = 0;
    while (dir * (tau_end - t) > 0.0) {
        if (++steps > opt.max_steps) throw numeric_error("step budget exhausted at tau=" + std::to_string(t));
        if (h < 1e-14 * std::max(1.0, std::abs(t)))
            throw numeric_error("step size underflow at tau=" + std::to_string(t));
        if (dir * (t + dir * h - tau_end) > 0.0) h = std::abs(tau_end - t);
        const double hs = dir * h;
        const StateVector k2 = b.rhs(t + T::c2 * hs, y + hs * (T::a21 * k1));
        const StateVector k3 = b.rhs(t + T::c3 * hs, y + hs * (T::a31 * k1 + T::a32 * k2));
        const StateVector k4 = b.rhs(t + T::c4 * hs, y + hs * (T::a41 * k1 + T::a42 * k2 + T::a43 * k3));
        const StateVector k5 =
            b.rhs(t + T::c5 * hs, y + hs * (T::a51 * k1 + T::a52 * k2 + T::a53 * k3 + T::a54 * k4));
        const StateVector k6 =
            b.rhs(t + hs, y + hs * (T::a61 * k1 + T::a62 * k2 + T::a63 * k3 + T::a64 * k4 + T::a65 * k5));
        const StateVector y1 = y + hs * (T::a71 * k1 + T::a73 * k3 + T::a74 * k4 + T::a75 * k5 + T::a76 * k6);
        const StateVector k7 = b.rhs(t + hs, y1);
        const StateVector e =
            hs * (T::e1 * k1 + T::e3 * k3 + T::e4 * k4 + T::e5 * k5 + T::e6 * k6 + T::e7 * k7);
        const double err = std::sqrt((e.array() / err_scale(y, y1).array()).square().mean());
        if (!std::isfinite(err)) throw numeric_error("non-finite error estimate at tau=" + std::to_string(t));
        if (err <= 1.0) {
            std::array<StateVector, 5> r;
            const StateVector ydiff = y1 - y;
            const StateVector bspl = hs * k1 - ydiff;
            r[0] = y;
            r[1] = ydiff;
            r[2] = bspl;
            r[3] = ydiff - hs * k7 - bspl;
            r[4] = hs * (T::d1 * k1 + T::d3 * k3 + T::d4 * k4 + T::d5 * k5 + T::d6 * k6 + T::d7 * k7);
            const double t0 = t;
            t = (dir * (tau_end - (t + hs)) <= 0.0) ? tau_end : t + hs;
            y = y1;
            k1 = k7;
            b.push(t, y, k1);
            b.trajectory().dense.push_back(r);
            b.check_collisions([&](double tt) {
                const double th = (tt - t0) / hs, th1 = 1.0 - th;
                return StateVector(r[0] + th * (r[1] + th1 * (r[2] + th * (r[3] + th1 * r[4]))));
            });
            const double fac = 0.9 * std::pow(std::max(err, 1e-10), -0.17) * std::pow(err_old, 0.04);
            h *= std::clamp(fac, 0.2, 10.0);
            err_old = std::max(err, 1e-4);
        } else {
            h *= std::max(0.2, 0.9 * std::pow(err, -0.2));
        }
    }
    return std::move(b.trajectory());
}

// Implicit midpoint, fixed step, fixed-point iteration for the stage.
inline Trajectory integrate_midpoint(const WignerPhaseState& s0, const ModelSpec& model, double tau_end,
                                     const IntegrateOptions& opt)
{
    require(opt.fixed_step > 0.0, "implicit midpoint needs a positive step");
    TrajectoryBuilder b(model, s0, opt.collision_distance);
    const double dir = tau_end >= s0.tau ? 1.0 : -1.0;
    const auto nsteps = std::size_t(std::ceil(std::abs(tau_end - s0.tau) / opt.fixed_step - 1e-12));
    const double hs = nsteps ? (tau_end - s0.tau) / double(nsteps) : 0.0;
    StateVector y = pack(s0);
    double t = s0.tau;
    for (std::size_t k = 0; k < nsteps; ++k) {
        StateVector y1 = y + hs * b.rhs(t, y);
        for (int it = 0;; ++it) {
            const StateVector next = y + hs * b.rhs(t + 0.5 * hs, 0.5 * (y + y1));
            const double change = (next - y1).cwiseAbs().maxCoeff();
            y1 = next;
            if (change <= 1e-15 * std::max(1.0, y1.cwiseAbs().maxCoeff())) break;
            if (it > 200) throw numeric_error("implicit midpoint did not converge at tau=" + std::to_string(t));
        }
        y = y1;
        t = (k + 1 == nsteps) ? tau_end : s0.tau + double(k + 1) * hs;
        b.push(t, y, b.rhs(t, y));
        auto& tr = b.trajectory();
        const std::size_t last = tr.size() - 2;
        b.check_collisions([&](double tt) {
            return StateVector(detail::hermite(tr.tau[last], tr.tau[last + 1], tr.y[last], tr.y[last + 1],
                                               tr.f[last], tr.f[last + 1], tt));
        });
    }
    (void)dir;
    return std::move(b.trajectory());
}

inline Trajectory integrate(const WignerPhaseState& s0, const ModelSpec& model, double tau_end, double tol = 1e-10,
                            const IntegrateOptions& opt = {})
{
    validate(model);
    check_sizes(s0, model);
    require(std::isfinite(tau_end), "tau_end must be finite");
    if (opt.method == Integrator::implicit_midpoint) return integrate_midpoint(s0, model, tau_end, opt);
    require(tol > 0.0, "tolerance must be positive");
    return integrate_dopri5(s0, model, tau_end, tol, opt);
}

// World-line samples with tau-derivatives for every trajectory node.
inline std::vector<WorldlineSample> trajectory_worldlines(const Trajectory& tr, const JacobiData& j)
{
    const Mat4 L = build_boost_tetrad(j.h);
    std::vector<WorldlineSample> out;
    for (std::size_t k = 0; k < tr.size(); ++k) {
        const WignerPhaseState s = tr.state(k);
        WorldlineSample w = worldlines_from_wigner(s, particle_energies(s, tr.model), j);
        const WignerPhaseState d = unpack(tr.f[k], tr.tau[k]);
        const std::vector<double> e = particle_energies(s, tr.model);
        const Vec3List kin = kinetic_momenta(s, tr.model);
        Vec3 mean = Vec3::Zero();
        for (const auto& v : d.eta) mean += v;
        mean /= double(s.size());
        for (std::size_t i = 0; i < s.size(); ++i) {
            Vec3 dk = d.kappa[i];
            if (tr.model.kind == ModelKind::quadratic) dk += tr.model.g * double(s.size()) * (d.eta[i] - mean);
            const double dE = kin[i].dot(dk) / e[i];
            w.dx.push_back(L.col(0) + L.block<4, 3>(0, 1) * d.eta[i]);
            w.dp.push_back(L.col(0) * dE + L.block<4, 3>(0, 1) * d.kappa[i]);
        }
        out.push_back(std::move(w));
    }
    return out;
}

struct LimitRow {
    double c;
    double delta;
    Vec3 S;
};

struct LimitScan {
    std::vector<LimitRow> rows;
    double slope = 0.0;
};

// Delta(c) = |(Mc c - sum m c^2) - H_rel|. Mc c - sum m c^2 is evaluated as sum c k^2/(E + m c)
// to avoid cancelling two O(c^2) numbers.
inline LimitScan galilei_limit_scan(const WignerPhaseState& s, const ModelSpec& model, const std::vector<double>& cs)
{
    LimitScan scan;
    std::vector<double> lx, ly;
    for (double c : cs) {
        require(c > 0.0, "speed of light values must be positive");
        ModelSpec mdl = model;
        mdl.c = c;
        const std::vector<double> e = particle_energies(s, mdl);
        const Vec3List k = kinetic_momenta(s, mdl);
        double rel = 0.0, hrel = 0.0;
        for (std::size_t i = 0; i < s.size(); ++i) {
            const double m = mdl.masses[i];
            rel += c * k[i].squaredNorm() / (e[i] + m * c);
            hrel += k[i].squaredNorm() / (2.0 * m);
        }
        const double delta = std::abs(rel - hrel);
        scan.rows.push_back({c, delta, spin_of(s.eta, s.kappa)});
        if (delta > 0.0) {
            lx.push_back(std::log(c));
            ly.push_back(std::log(delta));
        }
    }
    if (lx.size() >= 2) {
        const double n = double(lx.size());
        double sx = 0, sy = 0, sxx = 0, sxy = 0;
        for (std::size_t i = 0; i < lx.size(); ++i) {
            sx += lx[i];
            sy += ly[i];
            sxx += lx[i] * lx[i];
            sxy += lx[i] * ly[i];
        }
        scan.slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    }
    return scan;
}

} // namespace wigner

#endif
