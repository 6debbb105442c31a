#ifndef WIGNER_STATE_HPP
#define WIGNER_STATE_HPP

#include "core.hpp"

#include <numeric>
#include <string>

namespace wigner {

// Per-particle Wigner 3-vectors on the 3-space labelled by tau.
struct WignerPhaseState {
    double tau = 0.0;
    Vec3List eta;
    Vec3List kappa;

    std::size_t size() const { return eta.size(); }
};

enum class ModelKind { free, quadratic };

inline std::string to_string(ModelKind k) { return k == ModelKind::free ? "free" : "quadratic"; }

inline ModelKind model_kind_from_string(const std::string& s)
{
    if (s == "free") return ModelKind::free;
    if (s == "quadratic") return ModelKind::quadratic;
    throw invalid_input("unknown model kind '" + s + "'");
}

// Free particles, or the momentum-shift family generated by F = (g/2) sum_a rho_a^2.
struct ModelSpec {
    ModelKind kind = ModelKind::free;
    double g = 0.0;
    std::vector<double> masses;
    double c = 1.0;

    std::size_t size() const { return masses.size(); }
    double total_mass() const { return std::accumulate(masses.begin(), masses.end(), 0.0); }

    static ModelSpec free_particles(std::vector<double> m, double c = 1.0)
    {
        return ModelSpec{ModelKind::free, 0.0, std::move(m), c};
    }
    static ModelSpec quadratic(std::vector<double> m, double g, double c = 1.0)
    {
        return ModelSpec{ModelKind::quadratic, g, std::move(m), c};
    }
};

inline void validate(const ModelSpec& model)
{
    require(!model.masses.empty(), "model needs at least one particle");
    require(std::isfinite(model.c) && model.c > 0.0, "speed of light must be positive");
    for (double m : model.masses) require(std::isfinite(m) && m > 0.0, "masses must be positive");
    require(std::isfinite(model.g), "coupling must be finite");
}

inline void check_sizes(const WignerPhaseState& s, const ModelSpec& model)
{
    if (s.eta.size() != model.size() || s.kappa.size() != model.size())
        throw invalid_input("state and model disagree on particle count");
}

// dF/deta_i for F = (g/2) sum_a rho_a^2. With rho_a = sqrt(N) sum_j gamma_aj eta_j and
// sum_a gamma_ai gamma_aj = delta_ij - 1/N this is g N (eta_i - mean eta), independent of gamma.
inline Vec3List potential_gradient(const WignerPhaseState& s, const ModelSpec& model)
{
    const std::size_t n = s.size();
    Vec3List w(n, Vec3::Zero());
    if (model.kind == ModelKind::free || model.g == 0.0) return w;
    Vec3 mean = Vec3::Zero();
    for (const auto& e : s.eta) mean += e;
    mean /= double(n);
    const double gn = model.g * double(n);
    for (std::size_t i = 0; i < n; ++i) w[i] = gn * (s.eta[i] - mean);
    return w;
}

// V_i = 2 kappa_i . W_i + W_i^2, so that m^2c^2 + kappa^2 + V_i = m^2c^2 + (kappa_i + W_i)^2.
inline double potential_V(std::size_t i, const WignerPhaseState& s, const ModelSpec& model)
{
    if (model.kind == ModelKind::free) return 0.0;
    const Vec3 w = potential_gradient(s, model).at(i);
    return 2.0 * s.kappa[i].dot(w) + w.squaredNorm();
}

// Shifted momenta kappa_i + W_i; for the free model this is kappa itself.
inline Vec3List kinetic_momenta(const WignerPhaseState& s, const ModelSpec& model)
{
    Vec3List k = s.kappa;
    if (model.kind == ModelKind::quadratic) {
        const Vec3List w = potential_gradient(s, model);
        for (std::size_t i = 0; i < k.size(); ++i) k[i] += w[i];
    }
    return k;
}

inline double radicand_floor(double m, double c) { return 1e-12 * m * m * c * c; }

inline std::vector<double> particle_energies(const WignerPhaseState& s, const ModelSpec& model)
{
    check_sizes(s, model);
    const Vec3List w = potential_gradient(s, model);
    std::vector<double> e(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) {
        const double m = model.masses[i];
        const double mc2 = m * m * model.c * model.c;
        const double v = model.kind == ModelKind::free ? 0.0 : 2.0 * s.kappa[i].dot(w[i]) + w[i].squaredNorm();
        const double rad = mc2 + s.kappa[i].squaredNorm() + v;
        if (!(rad > radicand_floor(m, model.c)))
            throw model_domain_error("energy radicand of particle " + std::to_string(i) +
                                     " is not positive at tau=" + std::to_string(s.tau));
        e[i] = std::sqrt(rad);
    }
    return e;
}

// Invariant mass Mc, the Hamiltonian of the rest-frame instant form.
inline double hamiltonian(const WignerPhaseState& s, const ModelSpec& model)
{
    KahanSum acc;
    for (double e : particle_energies(s, model)) acc.add(e);
    return acc.value();
}

} // namespace wigner

#endif
