#include "iscc/rng.hpp"

#include <cmath>

namespace iscc {

std::uint64_t mix64(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

Rng make_stream(std::uint64_t seed, std::initializer_list<std::uint64_t> path) {
    std::uint64_t h = mix64(seed);
    for (auto p : path) h = mix64(h ^ mix64(p + 0x632be59bd9b4e019ULL));
    return Rng(h);
}

void fill_isotropic_gaussian(std::span<double> out, double total_var, Rng& rng) {
    if (out.empty()) return;
    const double sd = std::sqrt(total_var / static_cast<double>(out.size()));
    NormalDist normal(0.0, 1.0);
    for (auto& x : out) x = sd * normal(rng);
}

std::vector<double> isotropic_gaussian(std::size_t dim, double total_var, Rng& rng) {
    std::vector<double> v(dim);
    fill_isotropic_gaussian(v, total_var, rng);
    return v;
}

}  // namespace iscc
