#include "lddmm/eval.hpp"

#include <cmath>
#include <fstream>

#include "lddmm/data.hpp"
#include "lddmm/error.hpp"

namespace lddmm::eval {

double dice(const grid::LabelImage& a, const grid::LabelImage& b, std::int32_t label) {
    grid::require_same_grid(a.grid, b.grid, "dice");
    std::size_t na = 0, nb = 0, both = 0;
    for (std::size_t i = 0; i < a.values.size(); ++i) {
        const bool ia = a.values[i] == label, ib = b.values[i] == label;
        na += ia;
        nb += ib;
        both += ia && ib;
    }
    if (na + nb == 0) throw UndefinedMetric("dice: label " + std::to_string(label) + " is absent from both images");
    return 2.0 * static_cast<double>(both) / static_cast<double>(na + nb);
}

grid::LabelImage warp_labels(const grid::LabelImage& labels, const grid::DisplacementField& phi_inv) {
    const auto& g = labels.grid;
    grid::require_same_grid(g, phi_inv.grid, "warp_labels");
    const std::size_t d = g.dims();
    grid::LabelImage out(g);
    for (std::size_t node = 0; node < g.node_count(); ++node) {
        const auto p = g.node_position(node);
        std::size_t src = 0;
        for (std::size_t a = 0; a < d; ++a) {
            const double x = p[a] + phi_inv.at(node, a);
            if (!std::isfinite(x)) throw InvalidInput("warp_labels: non-finite displacement");
            const double n = static_cast<double>(g.extent(a));
            const double c = std::clamp(std::round(x * n), 0.0, n - 1.0);
            src += static_cast<std::size_t>(c) * g.stride(a);
        }
        out.values[node] = labels.values[src];
    }
    return out;
}

double jacobian_positivity(const grid::DisplacementField& phi_inv) {
    const auto& g = phi_inv.grid;
    const auto det = grid::jacobian_determinant(phi_inv);
    std::size_t interior = 0, positive = 0;
    for (std::size_t node = 0; node < g.node_count(); ++node) {
        if (!g.is_interior(node)) continue;
        ++interior;
        positive += det.values[node] > 0.0;
    }
    return static_cast<double>(positive) / static_cast<double>(interior);
}

namespace {

std::string number(double x) {
    if (std::isnan(x)) return "nan";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.9g", x);
    return buf;
}

}  // namespace

void write_metrics_csv(const std::filesystem::path& path, std::span<const PairMetrics> rows,
                       std::span<const std::int32_t> labels) {
    if (rows.empty()) throw InvalidInput("write_metrics_csv: no pairs to report");
    std::ofstream out(path);
    if (!out) throw IoError("write_metrics_csv: cannot open " + path.string());
    out << "pair,mse,mse_rel";
    for (auto l : labels) out << ",dice_" << l;
    out << ",jac_pos,runtime_ms\n";
    for (const auto& r : rows) {
        if (r.dice.size() != labels.size()) throw InvalidInput("write_metrics_csv: dice count != label count");
        out << r.pair << ',' << number(r.mse) << ',' << number(r.mse_rel);
        for (double d : r.dice) out << ',' << number(d);
        out << ',' << number(r.jacobian_positivity) << ',' << number(r.runtime_ms) << '\n';
    }
    if (!out) throw IoError("write_metrics_csv: write failed for " + path.string());
}

void write_panels(const std::filesystem::path& dir, const std::string& stem, const grid::ScalarImage& source,
                  const grid::ScalarImage& target, const grid::ScalarImage& warped, const grid::VectorField& velocity) {
    grid::require_same_grid(source.grid, target.grid, "write_panels");
    grid::require_same_grid(source.grid, warped.grid, "write_panels");
    grid::require_same_grid(source.grid, velocity.grid, "write_panels");
    const auto& g = source.grid;
    grid::ScalarImage before(g), after(g), speed(g);
    for (std::size_t i = 0; i < g.node_count(); ++i) {
        before.values[i] = std::abs(source.values[i] - target.values[i]);
        after.values[i] = std::abs(warped.values[i] - target.values[i]);
        double s = 0.0;
        for (std::size_t c = 0; c < g.dims(); ++c) s += velocity.at(i, c) * velocity.at(i, c);
        speed.values[i] = std::sqrt(s);
    }
    data::export_pgm(dir / (stem + "_source.pgm"), source);
    data::export_pgm(dir / (stem + "_target.pgm"), target);
    data::export_pgm(dir / (stem + "_warped.pgm"), warped);
    data::export_pgm(dir / (stem + "_diff_before.pgm"), before);
    data::export_pgm(dir / (stem + "_diff_after.pgm"), after);
    data::export_pgm(dir / (stem + "_velocity.pgm"), speed);
}

}  // namespace lddmm::eval
