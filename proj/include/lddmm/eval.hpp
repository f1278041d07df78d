#pragma once

// Registration quality metrics and report files.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "lddmm/grid.hpp"

namespace lddmm::eval {

/// 2 |A_k & B_k| / (|A_k| + |B_k|); UndefinedMetric if label k is absent from both.
double dice(const grid::LabelImage& a, const grid::LabelImage& b, std::int32_t label);

/// Nearest-neighbour labels at x + u(x) (clamped to the grid box).
grid::LabelImage warp_labels(const grid::LabelImage& labels, const grid::DisplacementField& phi_inv);

/// Fraction of interior nodes (one-node boundary ring excluded) with det(Id + Du) > 0.
double jacobian_positivity(const grid::DisplacementField& phi_inv);

struct PairMetrics {
    std::string pair;
    double mse = 0.0;
    double mse_rel = 0.0;      // NaN when source == target
    std::vector<double> dice;  // one per requested label; NaN when undefined
    double jacobian_positivity = 0.0;
    double runtime_ms = 0.0;
};

/// Header: pair,mse,mse_rel,dice_<label>...,jac_pos,runtime_ms.  NaN is
/// written as "nan".  Throws InvalidInput for an empty row set.
void write_metrics_csv(const std::filesystem::path& path, std::span<const PairMetrics> rows,
                       std::span<const std::int32_t> labels);

/// PGM panels <stem>_{source,target,warped,diff_before,diff_after,velocity}.pgm
/// in `dir`; the differences are absolute, the velocity panel is |v|.
void write_panels(const std::filesystem::path& dir, const std::string& stem, const grid::ScalarImage& source,
                  const grid::ScalarImage& target, const grid::ScalarImage& warped, const grid::VectorField& velocity);

}  // namespace lddmm::eval
