// rng.hpp - seeded random streams.
//
// Every stochastic operation takes an explicit Rng; there is no global state.
// Independent streams are derived from a root seed and a path of integers
// (round, device, purpose), so concurrent workers never share a generator and
// results do not depend on scheduling.

#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <span>
#include <vector>

#include <boost/random/normal_distribution.hpp>

namespace iscc {

using Rng = std::mt19937_64;
/// Gaussian sampler used everywhere (ziggurat; about 2.5x faster than std's).
using NormalDist = boost::random::normal_distribution<double>;

/// SplitMix64 finalizer; bijective mixing of 64-bit words.
std::uint64_t mix64(std::uint64_t x) noexcept;

/// Stream seeded from `seed` and a derivation path.
Rng make_stream(std::uint64_t seed, std::initializer_list<std::uint64_t> path = {});

/// Purpose tags used when deriving simulator streams.
enum class StreamTag : std::uint64_t {
    kSensing = 1,
    kChannel = 2,
    kTruth = 3,
    kInit = 4,
    kEval = 5,
    kDevices = 6,
    kRound = 7,
};

/// Fills `out` with i.i.d. zero-mean Gaussians whose variances sum to `total_var`
/// (per-coordinate variance total_var / out.size()).
void fill_isotropic_gaussian(std::span<double> out, double total_var, Rng& rng);

std::vector<double> isotropic_gaussian(std::size_t dim, double total_var, Rng& rng);

}  // namespace iscc
