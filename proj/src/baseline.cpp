#include "lddmm/baseline.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include "lddmm/error.hpp"
#include "lddmm/layers.hpp"
#include "lddmm/nets.hpp"

namespace lddmm::baseline {

void BaselineConfig::validate() const {
    if (iterations < 1) throw InvalidParameter("baseline: iterations must be >= 1");
    if (!(lr > 0.0)) throw InvalidParameter("baseline: lr must be > 0");
    if (!(alpha > 0.0)) throw InvalidParameter("baseline: alpha must be > 0");
    if (!(s > 0.0)) throw InvalidParameter("baseline: s must be > 0");
    if (max_consecutive_failures < 1) throw InvalidParameter("baseline: max consecutive failures must be >= 1");
    energy::validate(energy);
}

Result optimize(const grid::ScalarImage& source, const grid::ScalarImage& target, const BaselineConfig& cfg) {
    cfg.validate();
    grid::require_same_grid(source.grid, target.grid, "optimize");
    const auto& g = source.grid;
    const auto op = spectral::CauchyNavierOperator::build(cfg.alpha, cfg.s, g);
    const auto metric = ad::MetricMultipliers::from(op);
    const auto I0 = ad::image_tensor<double>(std::span(&source, 1));
    const auto I1 = ad::image_tensor<double>(std::span(&target, 1));
    const double before = energy::mse(source, target);

    // Adam's per-coordinate steps are rough, so it runs on w with v = P w.
    // With P = K^1/2 for shooting the momentum L^1/2 w stays rough enough to
    // blow up the EPDiff steps, hence P = K there.
    const auto precond = energy::velocity_smoother(op, cfg.energy.parameterization);

    ad::Shape vshape{1, g.dims()};
    vshape.insert(vshape.end(), g.extents().begin(), g.extents().end());
    nets::ParamList<double> params{{"w", ad::Tensor<double>::zeros(vshape, true)}};
    auto& w = params[0].value;
    auto adam = std::make_unique<nets::Adam<double>>(params, nets::AdamConfig{cfg.lr});
    double lr = cfg.lr;

    Result res;
    double best = std::numeric_limits<double>::infinity();
    std::vector<double> best_w(w.values().begin(), w.values().end());
    ad::Tensor<double> best_v;
    std::size_t failures = 0;
    const auto t0 = std::chrono::steady_clock::now();

    for (std::size_t it = 0; it <= cfg.iterations; ++it) {
        try {
            ad::Tape<double> tape(it < cfg.iterations);
            const auto v = ad::spectral_filter(tape, w, precond);
            const auto e = energy::energy_layer(tape, v, I0, I1, metric, cfg.energy);
            TraceEntry t;
            t.iteration = it;
            t.regularizer = e.regularizer.item();
            t.image = e.image.item();
            t.energy = t.regularizer + t.image;
            if (!std::isfinite(t.energy)) throw DivergenceError("baseline: non-finite energy");
            double num = 0.0;
            const auto iw = e.warped.values();
            for (std::size_t i = 0; i < iw.size(); ++i) num += (iw[i] - target.values[i]) * (iw[i] - target.values[i]);
            t.mse_rel = before > 0.0 ? num / static_cast<double>(iw.size()) / before : NAN;
            t.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
            res.trace.push_back(t);
            if (t.energy < best) {
                best = t.energy;
                res.best_iteration = it;
                best_w.assign(w.values().begin(), w.values().end());
                best_v = v.detach();
            }
            if (it == cfg.iterations) break;
            tape.backward(ad::sum(tape, e.total));
            adam->step();
            failures = 0;
        } catch (const DivergenceError& err) {
            if (++failures >= cfg.max_consecutive_failures)
                throw DivergenceError(std::string("baseline: ") + std::to_string(failures) +
                                      " consecutive failures; last: " + err.what());
            std::copy(best_w.begin(), best_w.end(), w.mutable_values().begin());
            lr *= 0.5;
            adam = std::make_unique<nets::Adam<double>>(params, nets::AdamConfig{lr});
            if (it == cfg.iterations) break;
        }
    }

    if (!best_v.defined()) throw DivergenceError("baseline: no finite iterate");
    res.velocity = ad::to_field(best_v, 0);
    res.displacement = energy::inverse_map(res.velocity, op, cfg.energy);
    res.warped = grid::warp_image(source, res.displacement);
    res.terms = energy::energy(res.velocity, source, target, op, cfg.energy);
    return res;
}

void write_trace_csv(const std::filesystem::path& path, const std::vector<TraceEntry>& trace) {
    std::ofstream out(path);
    if (!out) throw IoError("write_trace_csv: cannot open " + path.string());
    out << "step,epoch,energy,mse_rel,wall_ms\n";
    char buf[128];
    for (const auto& t : trace) {
        if (std::isnan(t.mse_rel))
            std::snprintf(buf, sizeof buf, "%zu,1,%.17g,nan,%.3f\n", t.iteration, t.energy, t.wall_ms);
        else
            std::snprintf(buf, sizeof buf, "%zu,1,%.17g,%.17g,%.3f\n", t.iteration, t.energy, t.mse_rel, t.wall_ms);
        out << buf;
    }
    if (!out) throw IoError("write_trace_csv: write failed for " + path.string());
}

}  // namespace lddmm::baseline
