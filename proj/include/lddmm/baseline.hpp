#pragma once

// Model-based registration: Adam on the LDDMM energy of a single pair,
// starting from v = 0, differentiated through the same integration layers
// the networks use (in double precision).

#include <cstddef>
#include <filesystem>
#include <vector>

#include "lddmm/energy.hpp"
#include "lddmm/grid.hpp"

namespace lddmm::baseline {

struct BaselineConfig {
    std::size_t iterations = 300;
    double lr = 1e-2;
    double alpha = 0.0025;
    double s = 4.0;
    energy::EnergyConfig energy;  // sigma2, parameterization, time steps
    std::size_t max_consecutive_failures = 10;

    void validate() const;
};

struct TraceEntry {
    std::size_t iteration = 0;
    double energy = 0.0;
    double regularizer = 0.0;
    double image = 0.0;
    double mse_rel = 0.0;  // NaN when source == target
    double wall_ms = 0.0;  // since the start of the run
};

struct Result {
    grid::VectorField velocity;  // best iterate
    grid::DisplacementField displacement;
    grid::ScalarImage warped;
    energy::EnergyTerms terms;
    std::size_t best_iteration = 0;
    std::vector<TraceEntry> trace;  // iterates 0..iterations
};

/// A blow-up (non-finite energy or gradient, diverging shooting) restores
/// the best iterate and halves the step size; `max_consecutive_failures`
/// in a row throw DivergenceError.
Result optimize(const grid::ScalarImage& source, const grid::ScalarImage& target, const BaselineConfig& cfg);

/// Columns step,epoch,energy,mse_rel,wall_ms (epoch is always 1).
void write_trace_csv(const std::filesystem::path& path, const std::vector<TraceEntry>& trace);

}  // namespace lddmm::baseline
