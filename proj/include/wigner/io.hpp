#ifndef WIGNER_IO_HPP
#define WIGNER_IO_HPP

#include "dynamics.hpp"
#include "ensembles.hpp"
#include "frames.hpp"
#include "kinetic.hpp"

#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include <algorithm>
#include <bit>
#include <charconv>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace wigner {

using json = nlohmann::json;

// Shortest round-trip decimal, independent of the C locale.
inline std::string format_double(double x)
{
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof buf, x);
    return std::string(buf, r.ptr);
}

inline std::ofstream open_output(const std::filesystem::path& path, bool binary = false)
{
    if (path.has_parent_path()) {
        std::error_code ec;
        std::filesystem::create_directories(path.parent_path(), ec);
        if (ec) throw io_error("cannot create directory " + path.parent_path().string() + ": " + ec.message());
    }
    std::ofstream out(path, binary ? std::ios::binary : std::ios::out);
    if (!out) throw io_error("cannot open " + path.string() + " for writing");
    return out;
}

inline std::string read_file(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void close_checked(std::ofstream& out, const std::filesystem::path& path)
{
    out.close();
    if (!out) throw io_error("failed writing " + path.string());
}

// ---------------------------------------------------------------- hashing

inline std::string sha256_hex(std::string_view data)
{
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr) != 1)
        throw io_error("SHA-256 digest failed");
    static constexpr char hex[] = "0123456789abcdef";
    std::string s;
    for (unsigned int i = 0; i < len; ++i) {
        s += hex[md[i] >> 4];
        s += hex[md[i] & 15];
    }
    return s;
}

inline std::string sha256_file(const std::filesystem::path& path) { return sha256_hex(read_file(path)); }

// ---------------------------------------------------------------- CSV

class CsvWriter {
public:
    CsvWriter(const std::filesystem::path& path, const std::vector<std::string>& header)
        : path_(path), out_(open_output(path))
    {
        write_row(header);
    }
    void row(const std::vector<double>& values)
    {
        std::vector<std::string> s;
        for (double v : values) s.push_back(format_double(v));
        write_row(s);
    }
    void write_row(const std::vector<std::string>& cells)
    {
        for (std::size_t i = 0; i < cells.size(); ++i) out_ << (i ? "," : "") << cells[i];
        out_ << '\n';
    }
    void close() { close_checked(out_, path_); }

private:
    std::filesystem::path path_;
    std::ofstream out_;
};

// ---------------------------------------------------------------- states

inline json vec_json(const Vec3& v) { return json::array({v[0], v[1], v[2]}); }
inline json vec_json(const Vec4& v) { return json::array({v[0], v[1], v[2], v[3]}); }

inline Vec3 vec3_from_json(const json& j)
{
    if (!j.is_array() || j.size() != 3) throw invalid_input("expected a 3-vector");
    return Vec3(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
}

inline json state_json(const WignerPhaseState& s, const std::vector<double>& masses)
{
    json eta = json::array(), kappa = json::array();
    for (std::size_t i = 0; i < s.size(); ++i) {
        eta.push_back(vec_json(s.eta[i]));
        kappa.push_back(vec_json(s.kappa[i]));
    }
    return {{"N", s.size()}, {"masses", masses}, {"tau", s.tau}, {"eta", eta}, {"kappa", kappa}};
}

struct LoadedState {
    WignerPhaseState state;
    std::vector<double> masses;
};

inline LoadedState state_from_json(const json& j)
{
    try {
        LoadedState out;
        const std::size_t n = j.at("N").get<std::size_t>();
        out.masses = j.at("masses").get<std::vector<double>>();
        out.state.tau = j.at("tau").get<double>();
        for (const auto& v : j.at("eta")) out.state.eta.push_back(vec3_from_json(v));
        for (const auto& v : j.at("kappa")) out.state.kappa.push_back(vec3_from_json(v));
        if (out.masses.size() != n || out.state.eta.size() != n || out.state.kappa.size() != n)
            throw invalid_input("state record has inconsistent particle counts");
        return out;
    }
    catch (const json::exception& e) {
        throw invalid_input(std::string("malformed state record: ") + e.what());
    }
}

inline json relative_state_json(const RelativeState& r)
{
    json rho = json::array(), pi = json::array();
    for (const auto& v : r.rho) rho.push_back(vec_json(v));
    for (const auto& v : r.pi) pi.push_back(vec_json(v));
    return {{"N", r.rho.size() + 1}, {"rho", rho}, {"pi", pi}};
}

// ---------------------------------------------------------------- trajectories

// One JSON record per (tau, particle): {"tau", "i", "x": [4], "p": [4]}.
inline void write_trajectory_jsonl(const std::filesystem::path& path, const std::vector<WorldlineSample>& samples)
{
    auto out = open_output(path);
    for (const auto& w : samples)
        for (std::size_t i = 0; i < w.x.size(); ++i)
            out << json{{"tau", w.tau}, {"i", i}, {"x", vec_json(w.x[i])}, {"p", vec_json(w.p[i])}}.dump() << '\n';
    close_checked(out, path);
}

namespace detail {

template <class T>
void put_le(std::ostream& out, T v)
{
    unsigned char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
    out.write(reinterpret_cast<const char*>(b), sizeof(T));
}

template <class T>
T get_le(std::istream& in)
{
    unsigned char b[sizeof(T)];
    if (!in.read(reinterpret_cast<char*>(b), sizeof(T))) throw io_error("truncated binary trajectory");
    if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
    T v;
    std::memcpy(&v, b, sizeof(T));
    return v;
}

} // namespace detail

inline constexpr std::uint32_t trajectory_format_version = 1;

// Header "WIGTRAJ1", u32 version, u32 N; then per sample f64 tau and N x (f64 x[4], f64 p[4]), little-endian.
inline void write_trajectory_binary(const std::filesystem::path& path, const std::vector<WorldlineSample>& samples)
{
    require(!samples.empty(), "empty trajectory");
    const std::uint32_t n = std::uint32_t(samples.front().x.size());
    auto out = open_output(path, true);
    out.write("WIGTRAJ1", 8);
    detail::put_le(out, trajectory_format_version);
    detail::put_le(out, n);
    for (const auto& w : samples) {
        require(w.x.size() == n && w.p.size() == n, "trajectory samples disagree on N");
        detail::put_le(out, w.tau);
        for (std::uint32_t i = 0; i < n; ++i) {
            for (int a = 0; a < 4; ++a) detail::put_le(out, w.x[i][a]);
            for (int a = 0; a < 4; ++a) detail::put_le(out, w.p[i][a]);
        }
    }
    close_checked(out, path);
}

inline std::vector<WorldlineSample> read_trajectory_binary(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot open " + path.string());
    char magic[8];
    if (!in.read(magic, 8) || std::string(magic, 8) != "WIGTRAJ1") throw io_error("not a binary trajectory");
    if (detail::get_le<std::uint32_t>(in) != trajectory_format_version)
        throw io_error("unsupported trajectory version");
    const std::uint32_t n = detail::get_le<std::uint32_t>(in);
    std::vector<WorldlineSample> out;
    while (in.peek() != std::char_traits<char>::eof()) {
        WorldlineSample w;
        w.tau = detail::get_le<double>(in);
        for (std::uint32_t i = 0; i < n; ++i) {
            Vec4 x, p;
            for (int a = 0; a < 4; ++a) x[a] = detail::get_le<double>(in);
            for (int a = 0; a < 4; ++a) p[a] = detail::get_le<double>(in);
            w.x.push_back(x);
            w.p.push_back(p);
        }
        out.push_back(std::move(w));
    }
    return out;
}

inline void write_diagnostics_csv(const std::filesystem::path& path, const Trajectory& tr)
{
    CsvWriter csv(path, {"tau", "dMc_rel", "resP", "resK"});
    for (const auto& d : tr.diagnostics) csv.row({d.tau, d.dMc_rel, d.resP, d.resK});
    csv.close();
}

// ---------------------------------------------------------------- ensembles and histograms

inline json partition_record(const EnsembleSpec& spec, const PartitionEstimate& est)
{
    return {{"regime", to_string(spec.regime)},
            {"E", spec.E},
            {"V", spec.volume()},
            {"N", spec.N()},
            {"m", spec.model.masses.empty() ? 0.0 : spec.model.masses.front()},
            {"g", spec.model.g},
            {"method", est.method},
            {"value", est.value},
            {"stderr", est.stderr},
            {"n", est.n_samples},
            {"seed", est.seed}};
}

// One row per bin: kappa_center, cos_center, phi_center (and eta_center when binned), density.
inline void write_histogram_csv(const std::filesystem::path& path, const DistributionHistogram& h)
{
    std::vector<std::string> header;
    if (h.bins.eta_binned()) header.push_back("eta_center");
    for (const char* s : {"kappa_center", "cos_center", "phi_center", "density"}) header.push_back(s);
    CsvWriter csv(path, header);
    for (int ie = 0; ie < h.bins.n_eta; ++ie)
        for (int ik = 0; ik < h.bins.n_kappa; ++ik)
            for (int ic = 0; ic < h.bins.n_cos; ++ic)
                for (int ip = 0; ip < h.bins.n_phi; ++ip) {
                    std::vector<double> row;
                    if (h.bins.eta_binned()) row.push_back(0.5 * (h.eta_edge(ie) + h.eta_edge(ie + 1)));
                    row.push_back(0.5 * (h.kappa_edge(ik) + h.kappa_edge(ik + 1)));
                    row.push_back(0.5 * (h.cos_edge(ic) + h.cos_edge(ic + 1)));
                    row.push_back(0.5 * (h.phi_edge(ip) + h.phi_edge(ip + 1)));
                    row.push_back(h.density(ie, ik, ic, ip));
                    csv.row(row);
                }
    csv.close();
}

inline json histogram_metadata(const DistributionHistogram& h, std::uint64_t seed, double T, double m, double c)
{
    auto edges = [](int n, auto edge) {
        std::vector<double> e;
        for (int k = 0; k <= n; ++k) e.push_back(edge(k));
        return e;
    };
    json j{{"kappa_edges", edges(h.bins.n_kappa, [&](int k) { return h.kappa_edge(k); })},
           {"cos_edges", edges(h.bins.n_cos, [&](int k) { return h.cos_edge(k); })},
           {"phi_edges", edges(h.bins.n_phi, [&](int k) { return h.phi_edge(k); })},
           {"n", h.entries},
           {"overflow", h.overflow},
           {"n_states", h.n_states},
           {"seed", seed},
           {"T", T},
           {"m", m},
           {"c", c}};
    if (h.bins.eta_binned()) j["eta_edges"] = edges(h.bins.n_eta, [&](int k) { return h.eta_edge(k); });
    return j;
}

inline void write_json(const std::filesystem::path& path, const json& j)
{
    auto out = open_output(path);
    out << j.dump(2) << '\n';
    close_checked(out, path);
}

inline void write_jsonl(const std::filesystem::path& path, const std::vector<json>& records)
{
    auto out = open_output(path);
    for (const auto& r : records) out << r.dump() << '\n';
    close_checked(out, path);
}

// ---------------------------------------------------------------- manifest

struct ManifestEntry {
    std::string path;
    std::string sha256;
    std::uintmax_t bytes = 0;
};

inline ManifestEntry manifest_entry(const std::filesystem::path& file, const std::filesystem::path& base)
{
    return {std::filesystem::relative(file, base).generic_string(), sha256_file(file),
            std::filesystem::file_size(file)};
}

inline json manifest_json(const std::string& config_text, std::uint64_t seed, double wall_seconds,
                          const std::vector<ManifestEntry>& files, const json& versions)
{
    json f = json::array();
    for (const auto& e : files) f.push_back({{"path", e.path}, {"sha256", e.sha256}, {"bytes", e.bytes}});
    return {{"config", config_text},
            {"config_sha256", sha256_hex(config_text)},
            {"seed", seed},
            {"versions", versions},
            {"wall_seconds", wall_seconds},
            {"files", f}};
}

} // namespace wigner

#endif
