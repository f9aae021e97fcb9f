#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>

#include "../types.hpp"

namespace gafsim::rng
{

/// Philox4x32-10 counter-based bijection (Salmon et al., SC'11).
class Philox4x32
{
  public:
    using Counter = std::array<std::uint32_t, 4>;
    using Key = std::array<std::uint32_t, 2>;

    static Counter apply(Counter ctr, Key key)
    {
        for (int round = 0; round < 10; ++round)
        {
            ctr = single_round(ctr, key);
            key[0] += kWeyl0;
            key[1] += kWeyl1;
        }
        return ctr;
    }

  private:
    static constexpr std::uint32_t kMul0 = 0xD2511F53;
    static constexpr std::uint32_t kMul1 = 0xCD9E8D57;
    static constexpr std::uint32_t kWeyl0 = 0x9E3779B9;
    static constexpr std::uint32_t kWeyl1 = 0xBB67AE85;

    static Counter single_round(Counter const& c, Key const& k)
    {
        std::uint64_t const p0 = std::uint64_t(kMul0) * c[0];
        std::uint64_t const p1 = std::uint64_t(kMul1) * c[2];
        auto const hi0 = std::uint32_t(p0 >> 32), lo0 = std::uint32_t(p0);
        auto const hi1 = std::uint32_t(p1 >> 32), lo1 = std::uint32_t(p1);
        return {hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0};
    }
};

/// SplitMix64 finalizer, used to derive keys from (seed, tag) pairs.
constexpr std::uint64_t mix64(std::uint64_t x)
{
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

/// Identifies an independent random stream: every draw is addressed by
/// (seed, trial, index), so trials can be replayed or run in any order.
struct StreamId
{
    std::uint64_t seed = 0;
    std::uint64_t trial = 0;

    StreamId with_tag(std::uint64_t tag) const
    {
        return {mix64(seed ^ mix64(tag + 0x632BE59BD9B4E019ull)), trial};
    }
};

/// Four 32-bit words for position `index` of a stream.
inline Philox4x32::Counter block(StreamId id, std::uint64_t index)
{
    Philox4x32::Counter ctr = {
        std::uint32_t(index), std::uint32_t(index >> 32),
        std::uint32_t(id.trial), std::uint32_t(id.trial >> 32)};
    Philox4x32::Key key = {std::uint32_t(id.seed),
                           std::uint32_t(id.seed >> 32)};
    return Philox4x32::apply(ctr, key);
}

/// Uniform double in (0, 1) from 64 random bits (53-bit mantissa).
inline double to_open_unit(std::uint32_t hi, std::uint32_t lo)
{
    std::uint64_t const bits = (std::uint64_t(hi) << 32 | lo) >> 11;
    return (double(bits) + 0.5) * 0x1.0p-53;
}

/// Two uniforms at position `index` of a stream.
inline std::array<double, 2> uniform_pair(StreamId id, std::uint64_t index)
{
    auto const b = block(id, index);
    return {to_open_unit(b[0], b[1]), to_open_unit(b[2], b[3])};
}

/// Standard complex Gaussian N_C(0,1): real and imaginary parts are
/// independent N(0, 1/2), so E|a|^2 = 1 (Box-Muller).
inline Complex complex_gaussian(StreamId id, std::uint64_t index)
{
    auto const [u1, u2] = uniform_pair(id, index);
    double const radius = std::sqrt(-std::log(u1));
    double const angle = 2.0 * pi * u2;
    return {radius * std::cos(angle), radius * std::sin(angle)};
}

/// Sequential engine over one stream; satisfies UniformRandomBitGenerator.
class StreamEngine
{
  public:
    using result_type = std::uint32_t;

    explicit StreamEngine(StreamId id) : id_(id) {}

    static constexpr result_type min() { return 0; }
    static constexpr result_type max()
    {
        return std::numeric_limits<result_type>::max();
    }

    result_type operator()()
    {
        if (used_ == 4)
        {
            buffer_ = block(id_, next_++);
            used_ = 0;
        }
        return buffer_[used_++];
    }

    double uniform()
    {
        auto const hi = (*this)();
        auto const lo = (*this)();
        return to_open_unit(hi, lo);
    }

  private:
    StreamId id_;
    std::uint64_t next_ = 0;
    Philox4x32::Counter buffer_{};
    int used_ = 4;
};

}  // namespace gafsim::rng
