// grid_oracle.hpp - exhaustive search over a tensor grid of round allocations.
//
// Used to cross-check the alternating solver on small instances. Every grid
// point is checked against C1-C3 and scored with objective_p2; the smallest
// feasible value wins, ties going to the lexicographically smallest index.

#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "iscc/types.hpp"

namespace iscc {

struct GridAxis {
    double lo = 0.0;
    double hi = 0.0;
    int points = 8;
    bool log_scale = false;

    /// i-th grid value; index i of an n-point axis coincides bit-exactly with
    /// index 2i of the (2n-1)-point axis over the same range.
    double value(int i) const;
};

struct GridSpec {
    std::vector<GridAxis> batch;      // one axis per device
    std::vector<GridAxis> power;      // one axis per device
    std::vector<GridAxis> frequency;  // one axis per device
    GridAxis eta{1e-6, 1.0, 8, true};
    /// Weights alpha_1..alpha_{K-1} (alpha_K = 1 - rest). Without them the
    /// weights are tied to the batches, alpha_k = b_k / b.
    std::vector<GridAxis> weights;

    /// Same ranges with every axis refined from n to 2n-1 points.
    GridSpec refined() const;
    std::size_t size() const;
};

struct GridResult {
    bool found = false;
    RoundAllocation best;
    double objective = 0.0;
    std::size_t evaluated = 0;
    std::size_t feasible = 0;
};

GridResult grid_oracle(const SystemConfig& cfg, const std::vector<DeviceConfig>& devices,
                       const GridSpec& spec);

/// Coarse search followed by `levels` zoom passes; each pass re-centres every
/// axis on the incumbent with a span of two cells, clipped to the original range.
GridResult grid_oracle_zoom(const SystemConfig& cfg, const std::vector<DeviceConfig>& devices,
                            const GridSpec& spec, int levels);

/// Default box: b in [min_batch, latency-limited max], P and f in
/// [0.1, 1] x max, eta log-spaced over [10^eta_log10_min, 10^eta_log10_max].
GridSpec default_grid(const SystemConfig& cfg, const std::vector<DeviceConfig>& devices,
                      int points, bool free_weights, double eta_log10_min = -6.0,
                      double eta_log10_max = 0.0, double min_batch = 1.0);

}  // namespace iscc
