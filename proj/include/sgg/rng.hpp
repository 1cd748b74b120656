#ifndef SGG_RNG_HPP
#define SGG_RNG_HPP

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <random>
#include <utility>
#include <vector>

namespace sgg
{

/**
 *  Seeded 64-bit generator used for every random decision in the library.
 *
 *  Wraps `std::mt19937_64`, whose output sequence is fixed by the standard.
 *  The standard distributions are implementation-defined, so the derived
 *  draws (uniform reals, bounded integers, normals, shuffles) are computed
 *  here from raw 64-bit outputs to keep results identical across toolchains.
 */
class rng
{
public:
    static constexpr const char* name = "mt19937_64";

    explicit rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next() { return engine_(); }

    /// Uniform in [0, 1) with 53 bits of resolution.
    double uniform()
    {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n). Rejection sampling, no modulo bias.
    std::uint64_t below(std::uint64_t n)
    {
        if (n <= 1) return 0;
        const std::uint64_t limit = (~std::uint64_t{0}) - (~std::uint64_t{0}) % n;
        std::uint64_t x;
        do {
            x = engine_();
        } while (x >= limit);
        return x % n;
    }

    /// Standard normal via Box-Muller (one draw per call).
    double normal()
    {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    /// Fisher-Yates, walking from the back.
    template<typename T>
    void shuffle(std::vector<T>& v)
    {
        for (std::size_t i = v.size(); i > 1; --i) {
            const auto j = static_cast<std::size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    /// Sub-seed for an independent stream; stable for a given (seed, stream).
    static std::uint64_t derive(std::uint64_t seed, std::uint64_t stream)
    {
        // splitmix64 finalizer
        std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

private:
    std::mt19937_64 engine_;
};

} // namespace sgg
#endif // header guard
