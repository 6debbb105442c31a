#ifndef WIGNER_CORE_HPP
#define WIGNER_CORE_HPP

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace wigner {

using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Mat3 = Eigen::Matrix<double, 3, 3, Eigen::RowMajor>;
using Mat4 = Eigen::Matrix<double, 4, 4, Eigen::RowMajor>;
using Vec3List = std::vector<Vec3>;

// Error categories map onto CLI exit codes: invalid_input -> 2, numeric_error -> 3, io_error -> 4.
struct invalid_input : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};
struct model_domain_error : std::domain_error {
    using std::domain_error::domain_error;
};
struct numeric_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct io_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Metric (+,-,-,-).
inline const Mat4& minkowski()
{
    static const Mat4 eta = Vec4(1.0, -1.0, -1.0, -1.0).asDiagonal();
    return eta;
}

inline double mdot(const Vec4& a, const Vec4& b)
{
    return a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3];
}

inline Vec4 four(double t, const Vec3& x) { return Vec4(t, x[0], x[1], x[2]); }
inline Vec3 spatial(const Vec4& v) { return v.tail<3>(); }

inline bool all_finite(const Vec3& v) { return v.allFinite(); }

inline void require(bool ok, const std::string& what)
{
    if (!ok) throw invalid_input(what);
}

// Kahan-compensated accumulator; merge() keeps the compensation of both halves.
struct KahanSum {
    double sum = 0.0;
    double comp = 0.0;
    void add(double x)
    {
        double y = x - comp;
        double t = sum + y;
        comp = (t - sum) - y;
        sum = t;
    }
    void merge(const KahanSum& o)
    {
        add(o.sum);
        add(-o.comp);
    }
    double value() const { return sum - comp; }
};

} // namespace wigner

#endif
