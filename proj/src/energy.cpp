#include "lddmm/energy.hpp"

#include <cmath>

#include "lddmm/error.hpp"

namespace lddmm::energy {

void validate(const EnergyConfig& cfg) {
    if (!(cfg.sigma2 > 0.0)) throw InvalidParameter("energy: sigma2 must be > 0");
    if (cfg.integration.time_steps < 1) throw InvalidParameter("energy: time steps must be >= 1");
    if (cfg.integration.squarings < 1) throw InvalidParameter("energy: squarings must be >= 1");
}

grid::DisplacementField inverse_map(const grid::VectorField& v, const spectral::CauchyNavierOperator& op,
                                    const EnergyConfig& cfg) {
    if (cfg.parameterization == Parameterization::stationary)
        return diffeo::inverse_map_stationary(v, cfg.integration);
    return diffeo::inverse_map_shooting(v, op, cfg.integration);
}

namespace {

EnergyTerms evaluate(const grid::VectorField& v, const grid::DisplacementField& phi, const grid::ScalarImage& source,
                     const grid::ScalarImage& target, const spectral::CauchyNavierOperator& op,
                     const EnergyConfig& cfg) {
    const auto warped = grid::warp_image(source, phi);
    grid::ScalarImage diff(target.grid);
    for (std::size_t i = 0; i < diff.values.size(); ++i) diff.values[i] = warped.values[i] - target.values[i];
    return {0.5 * grid::l2_inner(op.apply_L(v), v), grid::l2_inner(diff, diff) / cfg.sigma2};
}

void check_inputs(const grid::VectorField& v, const grid::ScalarImage& source, const grid::ScalarImage& target,
                  const spectral::CauchyNavierOperator& op, const EnergyConfig& cfg) {
    validate(cfg);
    grid::require_same_grid(v.grid, source.grid, "energy");
    grid::require_same_grid(v.grid, target.grid, "energy");
    grid::require_same_grid(v.grid, op.grid(), "energy");
}

}  // namespace

EnergyTerms energy_stationary(const grid::VectorField& v, const grid::ScalarImage& source,
                              const grid::ScalarImage& target, const spectral::CauchyNavierOperator& op,
                              const EnergyConfig& cfg) {
    check_inputs(v, source, target, op, cfg);
    return evaluate(v, diffeo::inverse_map_stationary(v, cfg.integration), source, target, op, cfg);
}

EnergyTerms energy_shooting(const grid::VectorField& v0, const grid::ScalarImage& source,
                            const grid::ScalarImage& target, const spectral::CauchyNavierOperator& op,
                            const EnergyConfig& cfg) {
    check_inputs(v0, source, target, op, cfg);
    return evaluate(v0, diffeo::inverse_map_shooting(v0, op, cfg.integration), source, target, op, cfg);
}

EnergyTerms energy(const grid::VectorField& v, const grid::ScalarImage& source, const grid::ScalarImage& target,
                   const spectral::CauchyNavierOperator& op, const EnergyConfig& cfg) {
    return cfg.parameterization == Parameterization::stationary ? energy_stationary(v, source, target, op, cfg)
                                                                : energy_shooting(v, source, target, op, cfg);
}

double mse(const grid::ScalarImage& a, const grid::ScalarImage& b) {
    grid::require_same_grid(a.grid, b.grid, "mse");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.values.size(); ++i) acc += (a.values[i] - b.values[i]) * (a.values[i] - b.values[i]);
    return acc / static_cast<double>(a.values.size());
}

double mse_rel(const grid::ScalarImage& source, const grid::ScalarImage& target, const grid::ScalarImage& warped) {
    const double before = mse(source, target);
    if (before == 0.0) throw UndefinedMetric("mse_rel: source and target are identical");
    return mse(warped, target) / before;
}

std::shared_ptr<const std::vector<double>> velocity_smoother(const spectral::CauchyNavierOperator& op,
                                                             Parameterization parameterization) {
    auto m = std::make_shared<std::vector<double>>(op.half_inverse_multipliers());
    if (parameterization == Parameterization::stationary)
        for (auto& x : *m) x = std::sqrt(x);
    return m;
}

template <typename T>
TapeEnergy<T> energy_layer(ad::Tape<T>& tape, const ad::Tensor<T>& v, const ad::Tensor<T>& source,
                           const ad::Tensor<T>& target, const ad::MetricMultipliers& metric,
                           const EnergyConfig& cfg) {
    validate(cfg);
    if (source.shape() != target.shape()) throw ShapeError("energy_layer: source and target differ in shape");
    const double cell = 1.0 / static_cast<double>(ad::element_count(ad::Shape(v.shape().begin() + 2, v.shape().end())));

    TapeEnergy<T> e;
    e.displacement = cfg.parameterization == Parameterization::stationary
                         ? ad::stationary_inverse_layer(tape, v, cfg.integration)
                         : ad::shooting_inverse_layer(tape, v, metric, cfg.integration);
    e.warped = ad::warp(tape, source, e.displacement);
    const auto lv = ad::spectral_filter(tape, v, metric.L);
    e.regularizer = ad::scalar_mul(tape, ad::sum_per_sample(tape, ad::mul(tape, lv, v)), 0.5 * cell);
    const auto diff = ad::sub(tape, e.warped, target);
    e.image = ad::scalar_mul(tape, ad::sum_per_sample(tape, ad::mul(tape, diff, diff)), cell / cfg.sigma2);
    e.total = ad::add(tape, e.regularizer, e.image);
    return e;
}

template TapeEnergy<float> energy_layer(ad::Tape<float>&, const ad::Tensor<float>&, const ad::Tensor<float>&,
                                        const ad::Tensor<float>&, const ad::MetricMultipliers&, const EnergyConfig&);
template TapeEnergy<double> energy_layer(ad::Tape<double>&, const ad::Tensor<double>&, const ad::Tensor<double>&,
                                         const ad::Tensor<double>&, const ad::MetricMultipliers&, const EnergyConfig&);

}  // namespace lddmm::energy
