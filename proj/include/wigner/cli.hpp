#ifndef WIGNER_CLI_HPP
#define WIGNER_CLI_HPP

#include "canonical.hpp"
#include "dynamics.hpp"
#include "ensembles.hpp"
#include "frames.hpp"
#include "io.hpp"
#include "kinetic.hpp"
#include "noninertial.hpp"

#include <chrono>
#include <filesystem>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace wigner::cli {

inline constexpr const char* version = "1.0.0";

enum Command : unsigned {
    simulate = 1u << 0,
    sample = 1u << 1,
    partition = 1u << 2,
    transform = 1u << 3,
    limit = 1u << 4,
    noninertial = 1u << 5,
    all_commands = 63u,
};

struct CommandInfo {
    const char* name;
    Command bit;
    const char* help;
};

inline const std::vector<CommandInfo>& commands()
{
    static const std::vector<CommandInfo> c = {
        {"simulate", simulate,
         "Integrate the rest-frame dynamics. Writes trajectory.jsonl (or trajectory.bin), states.jsonl, "
         "diagnostics.csv (tau,dMc_rel,resP,resK) and summary.json."},
        {"sample", sample,
         "Sample the micro-canonical energy shell. Writes states.jsonl, f1.csv (bin centers,density), "
         "f1.json (edges, n, seed, T, m, c) and summary.json."},
        {"partition", partition,
         "Partition function Z(E). Writes partition.jsonl (one record per E and method) and, for several E or "
         "format=csv, partition.csv (E,method,value,stderr)."},
        {"transform", transform,
         "Apply a Lorentz transformation to a rest-frame state. Writes transformed.json with the Wigner "
         "rotation and the invariance residuals."},
        {"limit", limit,
         "Galilei limit scan over c. Writes limit.csv (c,delta) and summary.json with the log-log slope."},
        {"noninertial", noninertial,
         "Non-inertial frames. task=flow writes galilei.csv (t,E,Px,Py,Pz,Jx,Jy,Jz,Kx,Ky,Kz,M); task=moller "
         "writes moller.json; task=generators writes generators.json; task=partition writes partition.jsonl."},
    };
    return c;
}

struct KeySpec {
    const char* key;
    const char* section;
    const char* def;
    unsigned commands;
    const char* help;
};

// Every configurable key. Config-file keys and command-line flags share these names.
inline const std::vector<KeySpec>& keys()
{
    constexpr unsigned A = all_commands;
    static const std::vector<KeySpec> k = {
        {"seed", "run", "1", A, "64-bit seed; all randomness derives from it through named streams"},
        {"threads", "run", "0", A, "worker threads (0: hardware parallelism); WIGNER_THREADS overrides"},
        {"out", "run", "wigner-out", A, "output directory"},
        {"format", "run", "csv", A, "tabular output format: csv or jsonl"},
        {"samples", "run", "100000", sample | partition | noninertial, "number of samples or states"},
        {"model", "model", "free", simulate | sample | transform | limit, "interaction model: free or quadratic"},
        {"N", "model", "3", A, "number of particles"},
        {"masses", "model", "", A, "comma-separated masses (default: N copies of m)"},
        {"m", "model", "1", A, "particle mass when masses is empty"},
        {"g", "model", "0", simulate | sample | transform | limit, "quadratic-model coupling"},
        {"c", "model", "1", A, "speed of light; a comma-separated list for limit"},
        {"regime", "ensemble", "nonrel-standard", sample | partition | noninertial,
         "nonrel-standard, nonrel-restframe, rel-standard or rel-restframe"},
        {"E", "ensemble", "10", sample | partition | noninertial, "energy; a comma-separated list sweeps"},
        {"R", "ensemble", "1", sample | partition | noninertial, "radius of the spherical volume"},
        {"S", "ensemble", "", sample | partition | noninertial, "spin target sx,sy,sz (extended ensembles)"},
        {"extended", "ensemble", "false", sample | partition, "include the spin condition"},
        {"cut", "ensemble", "", sample | partition, "volume cut: particle or relative (default by regime)"},
        {"tau", "simulate", "10", simulate, "final tau"},
        {"tol", "simulate", "1e-10", simulate, "integrator tolerance"},
        {"integrator", "simulate", "dopri5", simulate, "dopri5 or midpoint"},
        {"dt", "simulate", "0.01", simulate, "implicit midpoint step"},
        {"state", "simulate", "", simulate | transform | noninertial, "initial state JSON file (default: random)"},
        {"eta-scale", "simulate", "1", simulate | transform | noninertial, "scale of random relative positions"},
        {"kappa-scale", "simulate", "1", simulate | transform | noninertial, "scale of random relative momenta"},
        {"jacobi-h", "frame", "0,0,0", simulate | transform, "Jacobi data h (spatial 4-velocity of the rest frame)"},
        {"trajectory", "simulate", "jsonl", simulate, "trajectory format: jsonl or binary"},
        {"frames", "simulate", "201", simulate, "uniform tau samples written to the trajectory (0: integrator nodes)"},
        {"bins", "sample", "40", sample, "|kappa| bins of the one-particle histogram"},
        {"boost", "transform", "0.5,0,0", transform, "spatial 4-velocity of the pure boost"},
        {"axis", "frame", "0,0,1", transform | noninertial, "rotation axis"},
        {"angle", "transform", "0", transform, "rotation angle applied before the boost"},
        {"task", "noninertial", "generators", noninertial, "flow, moller, generators or partition"},
        {"frame", "frame", "bump", noninertial,
         "frame kind: identity, rigid, general (Galilei) or flat, bump, rotation, acceleration"},
        {"amplitude", "frame", "0.05", noninertial, "g amplitude a0 (bump) or eps0 (general)"},
        {"amplitude-vec", "frame", "0,0,0", noninertial, "g^r amplitude b0 (bump) or bump direction (general)"},
        {"modulation", "frame", "0", noninertial, "oscillating part a1 / eps1"},
        {"modulation-vec", "frame", "0,0,0", noninertial, "oscillating part b1"},
        {"frequency", "frame", "0", noninertial, "modulation angular frequency"},
        {"width", "frame", "1", noninertial, "bump width"},
        {"omega", "frame", "0", noninertial, "rotation rate"},
        {"alpha", "frame", "0", noninertial, "angular acceleration (Galilei)"},
        {"origin", "frame", "", noninertial, "x_o(t) polynomial coefficients as flattened triples"},
        {"F0", "frame", "1", noninertial, "rotation profile amplitude"},
        {"F-width", "frame", "0", noninertial, "rotation profile width (0: constant)"},
        {"accel", "frame", "0", noninertial, "linear acceleration"},
        {"time", "frame", "0", noninertial, "time stamp t or tau"},
        {"spring", "noninertial", "0", noninertial, "spring constant of the Galilei flow"},
        {"t-end", "noninertial", "100", noninertial, "final time of the Galilei flow"},
        {"grid", "noninertial", "9", noninertial, "points per axis of the admissibility grid"},
        {"grid-extent", "noninertial", "2", noninertial, "half width of the admissibility grid"},
    };
    return k;
}

inline const KeySpec* find_key(const std::string& key)
{
    for (const auto& k : keys())
        if (key == k.key) return &k;
    return nullptr;
}

inline std::optional<Command> command_from_string(const std::string& s)
{
    for (const auto& c : commands())
        if (s == c.name) return c.bit;
    return std::nullopt;
}

// ---------------------------------------------------------------- configuration

struct ConfigEntry {
    std::string section;
    std::string key;
    std::string value;
    int line = 0;
};

// Flat "key = value" lines under optional [section] headers; '#' and ';' start comments.
inline std::vector<ConfigEntry> parse_config_text(const std::string& text)
{
    std::vector<ConfigEntry> out;
    std::istringstream in(text);
    std::string line, section;
    int n = 0;
    auto trim = [](std::string s) {
        const auto a = s.find_first_not_of(" \t\r");
        if (a == std::string::npos) return std::string();
        const auto b = s.find_last_not_of(" \t\r");
        return s.substr(a, b - a + 1);
    };
    while (std::getline(in, line)) {
        ++n;
        const auto hash = line.find_first_of("#;");
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') throw invalid_input("config line " + std::to_string(n) + ": unterminated section");
            section = trim(line.substr(1, line.size() - 2));
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw invalid_input("config line " + std::to_string(n) + ": expected key = value");
        std::string value = trim(line.substr(eq + 1));
        if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
        out.push_back({section, trim(line.substr(0, eq)), value, n});
    }
    return out;
}

struct RunConfig {
    std::string command;
    std::map<std::string, std::string> values; // every key applicable to the command
    std::vector<std::string> unknown;           // config keys that matched nothing

    Command bit() const { return *command_from_string(command); }
    const std::string& raw(const std::string& key) const
    {
        const auto it = values.find(key);
        if (it == values.end()) throw invalid_input("option --" + key + " does not apply to " + command);
        return it->second;
    }
};

inline std::string default_for(const KeySpec& k, Command c)
{
    if (c == limit && std::string(k.key) == "c") return "10,100,1000,10000";
    return k.def;
}

// Config entries first, then flags: a flag given on the command line wins over the file.
inline RunConfig make_config(const std::string& command, const std::vector<ConfigEntry>& file,
                             const std::map<std::string, std::string>& flags)
{
    const auto c = command_from_string(command);
    if (!c) throw invalid_input("unknown subcommand '" + command + "'");
    RunConfig cfg;
    cfg.command = command;
    for (const auto& k : keys())
        if (k.commands & *c) cfg.values[k.key] = default_for(k, *c);
    for (const auto& e : file) {
        const KeySpec* k = find_key(e.key);
        if (!k) {
            cfg.unknown.push_back(e.key + " (line " + std::to_string(e.line) + ")");
            continue;
        }
        if (k->commands & *c) cfg.values[e.key] = e.value;
    }
    for (const auto& [key, value] : flags) cfg.values[key] = value;
    return cfg;
}

// Canonical serialization; parsing it back reproduces the configuration.
inline std::string serialize(const RunConfig& cfg)
{
    std::ostringstream out;
    out << "# wigner " << cfg.command << "\n";
    std::vector<std::string> sections;
    for (const auto& k : keys())
        if (cfg.values.count(k.key) && std::find(sections.begin(), sections.end(), k.section) == sections.end())
            sections.push_back(k.section);
    for (const auto& section : sections) {
        out << "\n[" << section << "]\n";
        for (const auto& k : keys())
            if (k.section == section && cfg.values.count(k.key)) out << k.key << " = " << cfg.values.at(k.key) << "\n";
    }
    return out.str();
}

// ---------------------------------------------------------------- typed access

inline std::optional<double> parse_double(const std::string& s)
{
    if (s.empty()) return std::nullopt;
    double v = 0.0;
    const char* end = s.data() + s.size();
    const auto r = std::from_chars(s.data(), end, v);
    if (r.ec != std::errc() || r.ptr != end) return std::nullopt;
    return v;
}

inline std::optional<std::vector<double>> parse_list(const std::string& s)
{
    std::vector<double> out;
    if (s.empty()) return out;
    std::size_t a = 0;
    while (a <= s.size()) {
        const auto b = std::min(s.find(',', a), s.size());
        std::string item = s.substr(a, b - a);
        item.erase(0, item.find_first_not_of(' '));
        item.erase(item.find_last_not_of(' ') + 1);
        const auto v = parse_double(item);
        if (!v) return std::nullopt;
        out.push_back(*v);
        a = b + 1;
    }
    return out;
}

class Reader {
public:
    explicit Reader(const RunConfig& cfg) : cfg_(cfg) {}

    double number(const std::string& key)
    {
        const auto v = parse_double(cfg_.raw(key));
        if (!v || !std::isfinite(*v)) {
            fail("--" + key + " must be a finite number, got '" + cfg_.raw(key) + "'");
            return 0.0;
        }
        return *v;
    }
    double positive(const std::string& key)
    {
        const double v = number(key);
        if (ok_key(key) && !(v > 0.0)) fail("--" + key + " must be positive");
        return v;
    }
    std::int64_t integer(const std::string& key, std::int64_t lo)
    {
        const double v = number(key);
        if (!ok_key(key)) return lo;
        if (v != std::floor(v) || v < double(lo) || v > 9.0e15) {
            fail("--" + key + " must be an integer >= " + std::to_string(lo));
            return lo;
        }
        return std::int64_t(v);
    }
    std::uint64_t seed()
    {
        const std::string& s = cfg_.raw("seed");
        std::uint64_t v = 0;
        const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
        if (r.ec != std::errc() || r.ptr != s.data() + s.size()) fail("--seed must be an unsigned 64-bit integer");
        return v;
    }
    std::vector<double> list(const std::string& key)
    {
        const auto v = parse_list(cfg_.raw(key));
        if (!v) {
            fail("--" + key + " must be a comma-separated list of numbers");
            return {};
        }
        for (double x : *v)
            if (!std::isfinite(x)) fail("--" + key + " entries must be finite");
        return *v;
    }
    std::optional<Vec3> vec3(const std::string& key)
    {
        if (cfg_.raw(key).empty()) return std::nullopt;
        const auto v = list(key);
        if (v.size() != 3) {
            if (ok_key(key)) fail("--" + key + " must have three components");
            return Vec3::Zero();
        }
        return Vec3(v[0], v[1], v[2]);
    }
    bool flag(const std::string& key)
    {
        const std::string& s = cfg_.raw(key);
        if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
        if (s == "false" || s == "0" || s == "no" || s == "off" || s.empty()) return false;
        fail("--" + key + " must be true or false");
        return false;
    }
    std::string choice(const std::string& key, const std::vector<std::string>& allowed)
    {
        const std::string& s = cfg_.raw(key);
        if (std::find(allowed.begin(), allowed.end(), s) == allowed.end()) {
            std::string list;
            for (const auto& a : allowed) list += (list.empty() ? "" : ", ") + a;
            fail("--" + key + " must be one of: " + list);
        }
        return s;
    }
    const std::string& text(const std::string& key) const { return cfg_.raw(key); }
    bool has(const std::string& key) const { return cfg_.values.count(key) != 0; }
    void fail(const std::string& what)
    {
        errors_.push_back(what);
        last_ = what;
    }
    const std::vector<std::string>& errors() const { return errors_; }

private:
    bool ok_key(const std::string& key) const { return errors_.empty() || last_.rfind("--" + key + " ", 0) != 0; }
    const RunConfig& cfg_;
    std::vector<std::string> errors_;
    std::string last_;
};

// Everything a run needs, resolved from the raw configuration.
struct Resolved {
    std::uint64_t seed = 1;
    int threads = 0;
    std::filesystem::path out;
    std::string format;
    std::size_t samples = 0;
    ModelSpec model;
    std::vector<double> energies;
    std::vector<double> c_list;
    EnsembleSpec spec;
};

inline Resolved resolve(const RunConfig& cfg, std::vector<std::string>& errors)
{
    Reader r(cfg);
    Resolved out;
    const Command c = cfg.bit();
    for (const auto& u : cfg.unknown) r.fail("unknown config key " + u);
    out.seed = r.seed();
    out.threads = int(r.integer("threads", 0));
    out.out = r.text("out");
    if (out.out.empty()) r.fail("--out must name a directory");
    out.format = r.choice("format", {"csv", "jsonl"});
    if (r.has("samples")) out.samples = std::size_t(r.integer("samples", 1));

    const auto N = std::size_t(r.integer("N", 1));
    std::vector<double> masses = r.list("masses");
    const double m = r.positive("m");
    if (masses.empty()) masses.assign(N, m);
    if (masses.size() != N) r.fail("--masses has " + std::to_string(masses.size()) + " entries but N = " + std::to_string(N));
    for (double x : masses)
        if (!(x > 0.0)) r.fail("--masses entries must be positive");
    if (c == limit) {
        out.c_list = r.list("c");
        if (out.c_list.size() < 2) r.fail("--c needs at least two values for a slope");
        for (double x : out.c_list)
            if (!(x > 0.0)) r.fail("--c values must be positive");
    }
    const double cl = c == limit ? 1.0 : r.positive("c");
    const std::string kind = r.has("model") ? r.choice("model", {"free", "quadratic"}) : "free";
    const double g = r.has("g") ? r.number("g") : 0.0;
    out.model = kind == "free" ? ModelSpec::free_particles(masses, cl) : ModelSpec::quadratic(masses, g, cl);

    if (r.has("regime")) {
        const std::string reg = r.choice("regime", {"nonrel-standard", "nonrel-restframe", "rel-standard", "rel-restframe"});
        out.energies = r.list("E");
        if (out.energies.empty()) r.fail("--E needs at least one value");
        EnsembleSpec& s = out.spec;
        try {
            s.regime = regime_from_string(reg);
        }
        catch (const invalid_input&) {
        }
        s.model = out.model;
        s.R = r.positive("R");
        s.S = r.vec3("S");
        s.extended = r.has("extended") ? r.flag("extended") : (c == noninertial && r.text("task") == "partition");
        if (r.has("cut") && !r.text("cut").empty()) {
            const std::string cut = r.choice("cut", {"particle", "relative"});
            if (cut == "particle" || cut == "relative") s.cut = volume_cut_from_string(cut);
        }
        if (!out.energies.empty()) s.E = out.energies.front();
        if (s.extended && !s.S) r.fail("extended ensembles need a spin target --S");
        if (s.extended && N < 3)
            r.fail("extended ensembles need N >= 3: the spin-constrained shell is degenerate for N = 2");
        if (s.extended && c != noninertial && s.regime != Regime::nonrel_restframe)
            r.fail("extended ensembles are implemented for the nonrel-restframe regime only");
        if (s.regime == Regime::nonrel_restframe && N < 2) r.fail("rest-frame regimes need N >= 2");
        const double E0 = is_relativistic(s.regime) ? std::accumulate(masses.begin(), masses.end(), 0.0) * cl * cl : 0.0;
        for (double E : out.energies)
            if (!(E > E0))
                r.fail("--E = " + format_double(E) + " leaves no phase space: it must exceed " +
                       (is_relativistic(s.regime) ? "the rest energy sum m c^2 = " + format_double(E0) : std::string("0")));
        if (c == sample && is_relativistic(s.regime) && kind != "free")
            r.fail("relativistic shell sampling is free-particle only");
    }
    errors = r.errors();
    return out;
}

// Empty iff the configuration is runnable.
inline std::vector<std::string> validate(const RunConfig& cfg)
{
    std::vector<std::string> errors;
    const Resolved res = resolve(cfg, errors);
    Reader r(cfg);
    const Command c = cfg.bit();
    if (c == simulate) {
        r.number("tau");
        r.positive("tol");
        r.choice("integrator", {"dopri5", "midpoint"});
        r.positive("dt");
        r.choice("trajectory", {"jsonl", "binary"});
        r.integer("frames", 0);
        r.vec3("jacobi-h");
        r.positive("eta-scale");
        r.positive("kappa-scale");
        if (r.text("state").empty() && res.model.size() < 2) r.fail("simulate needs N >= 2");
    }
    if (c == sample) {
        r.integer("bins", 2);
        if (res.samples < 10) r.fail("--samples must be at least 10 for sampling");
    }
    if (c == partition && res.samples < 100) r.fail("--samples must be at least 100");
    if (c == transform) {
        r.vec3("boost");
        r.vec3("jacobi-h");
        const auto axis = r.vec3("axis");
        if (axis && axis->norm() == 0.0) r.fail("--axis must be nonzero");
        r.number("angle");
    }
    if (c == noninertial) {
        const std::string task = r.choice("task", {"flow", "moller", "generators", "partition"});
        const std::string frame =
            r.choice("frame", {"identity", "rigid", "general", "flat", "bump", "rotation", "acceleration"});
        const bool galilei = frame == "identity" || frame == "rigid" || frame == "general";
        if (task == "flow" && !galilei) r.fail("task=flow needs a Galilei frame (identity, rigid or general)");
        if (task == "moller" && galilei) r.fail("task=moller needs a relativistic frame");
        if (task == "partition") {
            const Regime want = galilei ? Regime::nonrel_restframe : Regime::rel_restframe;
            if (res.spec.regime != want)
                r.fail("task=partition with frame=" + frame + " needs --regime " + to_string(want));
            if (res.model.size() < 3) r.fail("task=partition needs N >= 3");
            if (res.samples < 100) r.fail("--samples must be at least 100");
        }
        for (const char* k : {"amplitude", "modulation", "frequency", "omega", "alpha", "F0", "F-width", "accel", "time",
                              "spring", "t-end"})
            r.number(k);
        r.positive("width");
        r.positive("grid-extent");
        r.integer("grid", 2);
        r.vec3("amplitude-vec");
        r.vec3("modulation-vec");
        r.vec3("axis");
        const auto o = r.list("origin");
        if (o.size() % 3 != 0) r.fail("--origin must hold whole triples");
    }
    for (const auto& e : r.errors()) errors.push_back(e);
    return errors;
}

// ---------------------------------------------------------------- runs

struct RunResult {
    std::vector<std::filesystem::path> files;
    json summary;
};

inline WignerPhaseState random_rest_frame_state(const ModelSpec& model, std::uint64_t seed, double eta_scale,
                                                double kappa_scale)
{
    const SeparationMatrix sep = build_separation_matrix(model.masses);
    Philox rng(seed, "mc");
    RelativeState r;
    for (std::size_t a = 0; a + 1 < model.size(); ++a) {
        r.rho.push_back(eta_scale * normal_vec3(rng));
        r.pi.push_back(kappa_scale * normal_vec3(rng));
    }
    return rest_frame_state(r, sep, model);
}

// Uniform tau grid from the dense output.
inline Trajectory resample(const Trajectory& tr, std::size_t n)
{
    Trajectory out;
    out.model = tr.model;
    const double a = tr.tau.front(), b = tr.tau.back();
    for (std::size_t k = 0; k < n; ++k) {
        const double t = k + 1 == n ? b : a + (b - a) * double(k) / double(n - 1);
        const WignerPhaseState s = tr.at(t);
        out.tau.push_back(t);
        out.y.push_back(pack(s));
        out.f.push_back(pack(hamilton_rhs(s, tr.model)));
    }
    return out;
}

inline WignerPhaseState initial_state(const RunConfig& cfg, const Resolved& res, ModelSpec& model)
{
    Reader r(cfg);
    if (!r.text("state").empty()) {
        const LoadedState ls = state_from_json(json::parse(read_file(r.text("state")), nullptr, false));
        model.masses = ls.masses;
        return ls.state;
    }
    return random_rest_frame_state(model, res.seed, r.number("eta-scale"), r.number("kappa-scale"));
}

inline RunResult run_simulate(const RunConfig& cfg, const Resolved& res)
{
    Reader r(cfg);
    ModelSpec model = res.model;
    const WignerPhaseState s0 = initial_state(cfg, res, model);
    IntegrateOptions opt;
    opt.method = r.text("integrator") == "midpoint" ? Integrator::implicit_midpoint : Integrator::dopri5;
    opt.fixed_step = r.number("dt");
    const Trajectory tr = integrate(s0, model, r.number("tau"), r.number("tol"), opt);
    const JacobiData jd{Vec3::Zero(), *r.vec3("jacobi-h")};
    RunResult out;
    const auto frames = std::size_t(r.integer("frames", 0));
    const auto ws = trajectory_worldlines(frames > 1 ? resample(tr, frames) : tr, jd);
    if (r.text("trajectory") == "binary") {
        out.files.push_back(res.out / "trajectory.bin");
        write_trajectory_binary(out.files.back(), ws);
    }
    else {
        out.files.push_back(res.out / "trajectory.jsonl");
        write_trajectory_jsonl(out.files.back(), ws);
    }
    std::vector<json> states;
    for (std::size_t k = 0; k < tr.size(); ++k) states.push_back(state_json(tr.state(k), model.masses));
    out.files.push_back(res.out / "states.jsonl");
    write_jsonl(out.files.back(), states);
    out.files.push_back(res.out / "diagnostics.csv");
    write_diagnostics_csv(out.files.back(), tr);

    const auto g0 = internal_generators(tr.state(0), model);
    const auto g1 = internal_generators(tr.back(), model);
    double dmc = 0.0, resP = 0.0, resK = 0.0;
    for (const auto& d : tr.diagnostics) {
        dmc = std::max(dmc, d.dMc_rel);
        resP = std::max(resP, d.resP);
        resK = std::max(resK, d.resK);
    }
    out.summary = {{"steps", tr.size() - 1},
                   {"Mc", g0.Mc},
                   {"max_dMc_rel", dmc},
                   {"max_resP", resP},
                   {"max_resK", resK},
                   {"dS", (g1.S - g0.S).norm()},
                   {"collisions", tr.collisions.size()}};
    return out;
}

inline RunResult run_sample(const RunConfig& cfg, const Resolved& res)
{
    Reader r(cfg);
    const EnsembleSpec& spec = res.spec;
    validate(spec);
    const ShellSample ss = sample_shell(spec, res.samples, res.seed);
    RunResult out;
    std::vector<json> states;
    for (const auto& s : ss.states) states.push_back(state_json(s, spec.model.masses));
    out.files.push_back(res.out / "states.jsonl");
    write_jsonl(out.files.back(), states);

    const double m = spec.model.masses.front(), c = spec.model.c;
    const bool rel = is_relativistic(spec.regime);
    const double T = rel ? fit_juttner_temperature(spec.E / double(spec.N()), m, c) : 2.0 * spec.E / (3.0 * double(spec.N()));
    Binning bins;
    bins.n_kappa = int(r.integer("bins", 2));
    const auto speeds = pooled_speeds(ss.states);
    bins.kappa_max = rel ? juttner_speed_quantile(1.0 - 1e-6, {m, T, c})
                         : *std::max_element(speeds.begin(), speeds.end()) * (1.0 + 1e-12);
    F1Options fo;
    fo.require_rest_frame = rel && spec.constrained();
    const DistributionHistogram h = estimate_f1(ss.states, spec.model, bins, fo);
    out.files.push_back(res.out / "f1.csv");
    write_histogram_csv(out.files.back(), h);
    out.files.push_back(res.out / "f1.json");
    write_json(out.files.back(), histogram_metadata(h, res.seed, T, m, c));
    out.summary = {{"states", ss.states.size()}, {"method", ss.method}, {"acceptance", ss.acceptance},
                   {"tau_int", ss.tau_int},      {"thin", ss.thin},     {"T", T}};
    if (rel && equal_masses(spec.model.masses)) {
        const JuttnerSpeedCdf cdf({m, T, c});
        out.summary["ks_juttner"] = ks_statistic(speeds, [&](double k) { return cdf(k); });
    }
    return out;
}

inline std::optional<PartitionEstimate> closed_form(const EnsembleSpec& spec)
{
    if (!equal_masses(spec.model.masses) || spec.extended) return std::nullopt;
    const int N = int(spec.N());
    const double m = spec.model.masses.front(), V = spec.volume();
    if (spec.regime == Regime::nonrel_standard && spec.volume_cut() == VolumeCut::particle)
        return analytic_Z_free_nr(spec.E, V, N, m);
    if (spec.regime == Regime::rel_standard && spec.volume_cut() == VolumeCut::particle)
        return inverse_laplace_Z_rel(spec.E, V, N, m, spec.model.c);
    if (spec.regime == Regime::rel_restframe && N == 1) return inverse_laplace_Z_rel(spec.E, V, 1, m, spec.model.c);
    return std::nullopt;
}

inline RunResult run_partition(const RunConfig&, const Resolved& res)
{
    RunResult out;
    std::vector<json> records;
    struct Row {
        double E;
        PartitionEstimate est;
    };
    std::vector<Row> rows;
    McOptions opt;
    opt.threads = res.threads;
    for (double E : res.energies) {
        EnsembleSpec spec = res.spec;
        spec.E = E;
        validate(spec);
        if (spec.extended) {
            rows.push_back({E, extended_Z_nr(E, *spec.S, spec.volume(), int(spec.N()), spec.model.masses.front(),
                                             res.samples, res.seed)});
        }
        else {
            const McPartition mc = mc_partition(spec, res.samples, res.seed, opt);
            rows.push_back({E, mc.kernel});
            rows.push_back({E, mc.indicator});
        }
        if (spec.model.kind == ModelKind::free || spec.regime != Regime::nonrel_standard)
            if (const auto cf = closed_form(spec)) rows.push_back({E, *cf});
    }
    for (const auto& row : rows) {
        EnsembleSpec spec = res.spec;
        spec.E = row.E;
        records.push_back(partition_record(spec, row.est));
    }
    out.files.push_back(res.out / "partition.jsonl");
    write_jsonl(out.files.back(), records);
    if (res.energies.size() > 1 || res.format == "csv") {
        out.files.push_back(res.out / "partition.csv");
        CsvWriter csv(out.files.back(), {"E", "method", "value", "stderr"});
        for (const auto& row : rows)
            csv.write_row({format_double(row.E), row.est.method, format_double(row.est.value),
                           format_double(row.est.stderr)});
        csv.close();
    }
    out.summary = {{"records", records}};
    return out;
}

inline RunResult run_transform(const RunConfig& cfg, const Resolved& res)
{
    Reader r(cfg);
    ModelSpec model = res.model;
    const WignerPhaseState s = initial_state(cfg, res, model);
    const Mat4 lambda = build_boost_tetrad(*r.vec3("boost")) * rotation4(axis_angle(*r.vec3("axis"), r.number("angle")));
    const Vec3 h = *r.vec3("jacobi-h");
    const Mat3 R = wigner_rotation(lambda, h);
    const WignerPhaseState t = rotate_state(s, R);
    const auto g0 = internal_generators(s, model), g1 = internal_generators(t, model);
    json rot = json::array();
    for (int i = 0; i < 3; ++i) rot.push_back(vec_json(Vec3(R.row(i).transpose())));
    RunResult out;
    out.summary = {{"h", vec_json(h)},
                   {"h_prime", vec_json(boosted_rapidity(lambda, h))},
                   {"wigner_rotation", rot},
                   {"Mc", g0.Mc},
                   {"Mc_residual", std::abs(g1.Mc - g0.Mc)},
                   {"spin_norm_residual", std::abs(g1.S.norm() - g0.S.norm())},
                   {"P_residual", g1.P.norm()},
                   {"state", state_json(s, model.masses)},
                   {"transformed", state_json(t, model.masses)}};
    out.files.push_back(res.out / "transformed.json");
    write_json(out.files.back(), out.summary);
    return out;
}

inline RunResult run_limit(const RunConfig& cfg, const Resolved& res)
{
    Reader r(cfg);
    ModelSpec model = res.model;
    model.c = res.c_list.front();
    const WignerPhaseState s = random_rest_frame_state(model, res.seed, 1.0, 1.0);
    const LimitScan scan = galilei_limit_scan(s, model, res.c_list);
    RunResult out;
    out.files.push_back(res.out / "limit.csv");
    CsvWriter csv(out.files.back(), {"c", "delta"});
    for (const auto& row : scan.rows) csv.row({row.c, row.delta});
    csv.close();
    out.summary = {{"slope", scan.slope}};
    return out;
}

inline GalileiFrame galilei_frame_from(const RunConfig& cfg)
{
    Reader r(cfg);
    GalileiFrame f;
    const std::string kind = r.text("frame");
    if (kind == "identity") return f;
    f.kind = kind == "general" ? GalileiKind::general : GalileiKind::rigid;
    f.axis = *r.vec3("axis");
    f.omega = r.number("omega");
    f.alpha = r.number("alpha");
    const auto o = r.list("origin");
    for (std::size_t k = 0; k + 2 < o.size(); k += 3) f.origin.emplace_back(o[k], o[k + 1], o[k + 2]);
    f.eps0 = r.number("amplitude");
    f.eps1 = r.number("modulation");
    f.bump_omega = r.number("frequency");
    f.width = r.number("width");
    const Vec3 dir = *r.vec3("amplitude-vec");
    if (dir.norm() > 0.0) f.bump_dir = dir;
    return f;
}

inline RelNonInertialFrame rel_frame_from(const RunConfig& cfg)
{
    Reader r(cfg);
    const std::string kind = r.text("frame");
    if (kind == "flat") return RelNonInertialFrame::flat();
    if (kind == "rotation") return RelNonInertialFrame::rotation(r.number("omega"), r.number("F0"), r.number("F-width"));
    if (kind == "acceleration") return RelNonInertialFrame::acceleration(r.number("accel"));
    return RelNonInertialFrame::bump(r.number("amplitude"), *r.vec3("amplitude-vec"), r.number("width"),
                                     r.number("modulation"), *r.vec3("modulation-vec"), r.number("frequency"));
}

inline RunResult run_noninertial(const RunConfig& cfg, const Resolved& res)
{
    Reader r(cfg);
    const std::string task = r.text("task"), kind = r.text("frame");
    const bool galilei = kind == "identity" || kind == "rigid" || kind == "general";
    const double t = r.number("time");
    RunResult out;
    if (task == "flow") {
        const GalileiFrame f = galilei_frame_from(cfg);
        const GalileiSystem sys{res.model.masses, r.number("spring")};
        ModelSpec model = res.model;
        const WignerPhaseState w = initial_state(cfg, res, model);
        GalileiState s;
        s.t = t;
        for (std::size_t i = 0; i < w.size(); ++i) {
            // Frame coordinates whose image is the sampled inertial configuration.
            const auto sigma = invert_frame(f, t, w.eta[i]);
            if (!sigma) throw numeric_error("cannot place particle " + std::to_string(i) + " in the frame");
            s.eta.push_back(*sigma);
            s.p.push_back(evaluate(f, t, *sigma).J.transpose() * w.kappa[i]);
        }
        const GalileiTrajectory tr = integrate_galilei(f, sys, s, r.number("t-end"));
        out.files.push_back(res.out / "galilei.csv");
        CsvWriter csv(out.files.back(), {"t", "E", "Px", "Py", "Pz", "Jx", "Jy", "Jz", "Kx", "Ky", "Kz", "M"});
        for (std::size_t k = 0; k < tr.states.size(); ++k) {
            const auto& g = tr.generators[k];
            csv.row({tr.states[k].t, g.E, g.P[0], g.P[1], g.P[2], g.J[0], g.J[1], g.J[2], g.K[0], g.K[1], g.K[2], g.M});
        }
        csv.close();
        out.summary = {{"drift_E", tr.drift_E}, {"drift_P", tr.drift_P}, {"drift_J", tr.drift_J},
                       {"drift_K", tr.drift_K}, {"max_drift", tr.max_drift()}};
        return out;
    }
    if (task == "moller") {
        const auto rep = moller_check(rel_frame_from(cfg), cubic_grid(r.number("grid-extent"),
                                                                      int(r.integer("grid", 2)), {t}));
        out.summary = {{"admissible", rep.admissible}, {"checked", rep.checked},     {"violations", rep.violations},
                       {"min_lapse", rep.min_lapse},   {"min_g_tautau", rep.min_g_tautau},
                       {"min_h_eigen", rep.min_h_eigen}};
        if (rep.first)
            out.summary["first_violation"] = {{"tau", rep.first->tau},
                                              {"sigma", vec_json(rep.first->sigma)},
                                              {"condition", rep.first->condition},
                                              {"value", rep.first->value}};
        out.files.push_back(res.out / "moller.json");
        write_json(out.files.back(), out.summary);
        return out;
    }
    if (task == "generators") {
        ModelSpec model = res.model;
        WignerPhaseState s = initial_state(cfg, res, model);
        s.tau = t;
        if (galilei) {
            const GalileiSystem sys{model.masses, r.number("spring")};
            const GalileiGenerators g = galilei_generators(galilei_frame_from(cfg), sys, {t, s.eta, s.kappa});
            out.summary = {{"E", g.E}, {"P", vec_json(g.P)}, {"J", vec_json(g.J)}, {"K", vec_json(g.K)}, {"M", g.M}};
        }
        else {
            model.kind = ModelKind::free;
            const NonInertialGenerators g = rel_noninertial_generators(rel_frame_from(cfg), s, model);
            out.summary = {{"Mc", g.Mc},       {"P", vec_json(g.P)},
                           {"S", vec_json(g.S)}, {"K", vec_json(g.K)},
                           {"calM", g.calM},   {"calM_split", g.calM_split},
                           {"spin_residual", g.spin_residual}};
        }
        out.summary["state"] = state_json(s, model.masses);
        out.files.push_back(res.out / "generators.json");
        write_json(out.files.back(), out.summary);
        return out;
    }
    NonInertialOptions opt;
    opt.threads = res.threads;
    EnsembleSpec spec = res.spec;
    spec.extended = true;
    spec.model.kind = ModelKind::free;
    std::vector<json> records;
    for (double E : res.energies) {
        spec.E = E;
        const NonInertialPartition p = galilei
                                           ? noninertial_partition(spec, galilei_frame_from(cfg), t, res.samples, res.seed, opt)
                                           : noninertial_partition(spec, rel_frame_from(cfg), t, res.samples, res.seed, opt);
        json rec = partition_record(spec, p.estimate);
        rec["frame"] = kind;
        rec["time"] = t;
        rec["spin_bandwidth"] = vec_json(p.spin_bandwidth);
        rec["admissible"] = p.admissible;
        records.push_back(rec);
    }
    out.files.push_back(res.out / "partition.jsonl");
    write_jsonl(out.files.back(), records);
    out.summary = {{"records", records}};
    return out;
}

struct Outcome {
    int exit_code = 0;
    std::vector<std::string> messages;
    json summary;
};

// Validate, run, write summary and manifest. Exit codes: 0 ok, 2 validation, 3 numeric, 4 I/O.
inline Outcome run(const RunConfig& cfg)
{
    Outcome oc;
    const auto errors = validate(cfg);
    if (!errors.empty()) {
        oc.exit_code = 2;
        oc.messages = errors;
        return oc;
    }
    const auto start = std::chrono::steady_clock::now();
    std::vector<std::string> ignored;
    const Resolved res = resolve(cfg, ignored);
    try {
        RunResult rr;
        switch (cfg.bit()) {
        case simulate: rr = run_simulate(cfg, res); break;
        case sample: rr = run_sample(cfg, res); break;
        case partition: rr = run_partition(cfg, res); break;
        case transform: rr = run_transform(cfg, res); break;
        case limit: rr = run_limit(cfg, res); break;
        case noninertial: rr = run_noninertial(cfg, res); break;
        default: throw invalid_input("unknown subcommand");
        }
        rr.files.push_back(res.out / "summary.json");
        write_json(rr.files.back(), rr.summary);
        const std::string text = serialize(cfg);
        rr.files.push_back(res.out / "config.ini");
        {
            auto f = open_output(rr.files.back());
            f << text;
            close_checked(f, rr.files.back());
        }
        std::vector<ManifestEntry> entries;
        for (const auto& f : rr.files) entries.push_back(manifest_entry(f, res.out));
        const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        const json versions = {{"wigner", version},
                               {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) +
                                             "." + std::to_string(EIGEN_MINOR_VERSION)},
                               {"boost", BOOST_LIB_VERSION},
                               {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                                     std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                                     std::to_string(NLOHMANN_JSON_VERSION_PATCH)},
                               {"compiler", __VERSION__}};
        write_json(res.out / "manifest.json", manifest_json(text, res.seed, wall, entries, versions));
        oc.summary = rr.summary;
    }
    catch (const invalid_input& e) {
        oc.exit_code = 2;
        oc.messages = {e.what()};
    }
    catch (const io_error& e) {
        oc.exit_code = 4;
        oc.messages = {e.what()};
    }
    catch (const std::filesystem::filesystem_error& e) {
        oc.exit_code = 4;
        oc.messages = {e.what()};
    }
    catch (const std::exception& e) {
        oc.exit_code = 3;
        oc.messages = {e.what()};
    }
    return oc;
}

} // namespace wigner::cli

#endif
