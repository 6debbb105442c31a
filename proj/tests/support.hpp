#ifndef WIGNER_TEST_SUPPORT_HPP
#define WIGNER_TEST_SUPPORT_HPP

#include <wigner/frames.hpp>

#include <random>

namespace testing_support {

using namespace wigner;

inline Vec3 random_vec(std::mt19937_64& rng, double scale)
{
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    return Vec3(u(rng), u(rng), u(rng)) * scale;
}

// Uniform in the ball of radius r.
inline Vec3 random_in_ball(std::mt19937_64& rng, double r)
{
    for (;;) {
        Vec3 v = random_vec(rng, 1.0);
        if (v.squaredNorm() <= 1.0) return v * r;
    }
}

inline WignerPhaseState random_state(std::mt19937_64& rng, std::size_t n, double eta_scale = 1.0,
                                     double kappa_scale = 1.0)
{
    WignerPhaseState s;
    s.tau = std::uniform_real_distribution<double>(-1.0, 1.0)(rng);
    for (std::size_t i = 0; i < n; ++i) {
        s.eta.push_back(random_vec(rng, eta_scale));
        s.kappa.push_back(random_vec(rng, kappa_scale));
    }
    return s;
}

inline std::vector<double> random_masses(std::mt19937_64& rng, std::size_t n)
{
    std::uniform_real_distribution<double> u(0.5, 2.0);
    std::vector<double> m(n);
    for (auto& x : m) x = u(rng);
    return m;
}

// Pure boost taking the rest 4-velocity to (sqrt(1+u^2); u).
inline Mat4 pure_boost(const Vec3& u) { return build_boost_tetrad(u); }

inline Mat3 random_rotation(std::mt19937_64& rng)
{
    const Vec3 axis = random_vec(rng, 1.0).normalized();
    const double angle = std::uniform_real_distribution<double>(-3.0, 3.0)(rng);
    return axis_angle(axis, angle);
}

inline Mat4 random_lorentz(std::mt19937_64& rng, double umax = 2.0)
{
    return pure_boost(random_vec(rng, umax)) * rotation4(random_rotation(rng));
}

inline double max_abs(const Eigen::MatrixXd& m) { return m.cwiseAbs().maxCoeff(); }

} // namespace testing_support

#endif
