#ifndef WIGNER_RNG_HPP
#define WIGNER_RNG_HPP

#include "core.hpp"

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <limits>
#include <random>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace wigner {

// Philox4x32-10 block function.
inline std::array<std::uint32_t, 4> philox4x32_10(std::array<std::uint32_t, 4> ctr, std::array<std::uint32_t, 2> key)
{
    constexpr std::uint32_t M0 = 0xD2511F53u, M1 = 0xCD9E8D57u;
    constexpr std::uint32_t W0 = 0x9E3779B9u, W1 = 0xBB67AE85u;
    for (int round = 0; round < 10; ++round) {
        const std::uint64_t p0 = std::uint64_t(M0) * ctr[0];
        const std::uint64_t p1 = std::uint64_t(M1) * ctr[2];
        const auto hi0 = std::uint32_t(p0 >> 32), lo0 = std::uint32_t(p0);
        const auto hi1 = std::uint32_t(p1 >> 32), lo1 = std::uint32_t(p1);
        ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
        key[0] += W0;
        key[1] += W1;
    }
    return ctr;
}

inline std::uint64_t fnv1a64(std::string_view s)
{
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::uint64_t splitmix64(std::uint64_t x)
{
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

// Counter-based engine. The key comes from (seed, stream name); the upper counter words hold
// the substream index, so substreams never overlap and can be created in any order.
class Philox {
public:
    using result_type = std::uint64_t;

    Philox(std::uint64_t seed, std::string_view stream, std::uint64_t substream = 0)
        : seed_(seed), stream_(stream), substream_(substream)
    {
        const std::uint64_t k = splitmix64(seed ^ splitmix64(fnv1a64(stream)));
        key_ = {std::uint32_t(k), std::uint32_t(k >> 32)};
    }

    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

    result_type operator()()
    {
        if (pos_ == 2) refill();
        return buf_[pos_++];
    }

    // Uniform on [0, 1) with 53 random bits.
    double uniform() { return double((*this)() >> 11) * 0x1.0p-53; }

    double normal() { return normal_(*this); }

    Philox split(std::uint64_t index) const
    {
        return Philox(seed_, stream_, splitmix64(substream_ * 0x9E3779B97F4A7C15ull + index + 1));
    }

    std::uint64_t seed() const { return seed_; }
    const std::string& stream() const { return stream_; }
    std::uint64_t substream() const { return substream_; }

private:
    void refill()
    {
        const auto out = philox4x32_10({std::uint32_t(counter_), std::uint32_t(counter_ >> 32), std::uint32_t(substream_),
                                        std::uint32_t(substream_ >> 32)},
                                       key_);
        ++counter_;
        buf_[0] = (std::uint64_t(out[1]) << 32) | out[0];
        buf_[1] = (std::uint64_t(out[3]) << 32) | out[2];
        pos_ = 0;
    }

    std::uint64_t seed_;
    std::string stream_;
    std::uint64_t substream_;
    std::array<std::uint32_t, 2> key_{};
    std::uint64_t counter_ = 0;
    std::array<std::uint64_t, 2> buf_{};
    int pos_ = 2;
    std::normal_distribution<double> normal_;
};

inline Vec3 uniform_in_ball(Philox& rng, double radius)
{
    for (;;) {
        const Vec3 v(2.0 * rng.uniform() - 1.0, 2.0 * rng.uniform() - 1.0, 2.0 * rng.uniform() - 1.0);
        if (v.squaredNorm() <= 1.0) return radius * v;
    }
}

inline Vec3 normal_vec3(Philox& rng) { return Vec3(rng.normal(), rng.normal(), rng.normal()); }

// Worker count: WIGNER_THREADS wins, then the explicit request, then the hardware.
inline int resolve_threads(int requested)
{
    if (const char* env = std::getenv("WIGNER_THREADS")) {
        const int n = std::atoi(env);
        if (n > 0) return n;
    }
    if (requested > 0) return requested;
    return std::max(1u, std::thread::hardware_concurrency());
}

// Runs fn(chunk) for chunk = 0..n_chunks-1 on up to `threads` workers; results come back in
// chunk order so any merge over them is independent of the thread count.
template <class Fn>
auto run_chunks(int n_chunks, int threads, Fn fn) -> std::vector<decltype(fn(0))>
{
    using R = decltype(fn(0));
    std::vector<R> out(std::size_t(std::max(n_chunks, 0)));
    const int workers = std::clamp(threads, 1, std::max(n_chunks, 1));
    if (workers == 1) {
        for (int c = 0; c < n_chunks; ++c) out[c] = fn(c);
        return out;
    }
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            try {
                for (int c = w; c < n_chunks; c += workers) out[c] = fn(c);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    return out;
}

} // namespace wigner

#endif
