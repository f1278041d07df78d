#include "lddmm/gan.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>

#include "lddmm/error.hpp"
#include "lddmm/layers.hpp"

namespace lddmm::gan {

namespace {

void check_beta(double beta) {
    if (!(beta > 0.0 && beta < 1.0)) throw InvalidParameter("make_positive: beta must lie in (0, 1)");
}

double clamp_p(double p) { return std::clamp(p, nets::probability_floor, 1.0 - nets::probability_floor); }

std::string number(double x) {
    if (std::isnan(x)) return "nan";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

// Checkpoints go through a temporary so an abort never leaves a torn file.
template <typename T>
void save_atomically(const std::filesystem::path& path, const nets::ParamList<T>& params) {
    auto tmp = path;
    tmp += ".tmp";
    nets::save_checkpoint(tmp, params);
    std::filesystem::rename(tmp, path);
}

ad::Tensor<float> batch_images(const std::vector<grid::ScalarImage>& images, std::span<const std::size_t> idx) {
    std::vector<grid::ScalarImage> sel;
    sel.reserve(idx.size());
    for (auto i : idx) sel.push_back(images[i]);
    return ad::image_tensor<float>(sel);
}

}  // namespace

grid::ScalarImage make_positive(const grid::ScalarImage& source, const grid::ScalarImage& target, double beta) {
    check_beta(beta);
    grid::require_same_grid(source.grid, target.grid, "make_positive");
    grid::ScalarImage out(source.grid);
    for (std::size_t i = 0; i < out.values.size(); ++i)
        out.values[i] = beta * source.values[i] + (1.0 - beta) * target.values[i];
    return out;
}

template <typename T>
ad::Tensor<T> make_positive(const ad::Tensor<T>& source, const ad::Tensor<T>& target, double beta) {
    check_beta(beta);
    if (source.shape() != target.shape()) throw ShapeError("make_positive: source and target differ in shape");
    std::vector<T> v(source.size());
    const auto s = source.values(), t = target.values();
    const T b = static_cast<T>(beta), c = static_cast<T>(1.0 - beta);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = b * s[i] + c * t[i];
    return ad::Tensor<T>(source.shape(), std::move(v));
}

double discriminator_loss(double p, Sample sample) {
    p = clamp_p(p);
    return sample == Sample::positive ? -std::log(p) : -std::log1p(-p);
}

double generator_loss(double p, double energy, double lambda) { return -std::log(clamp_p(p)) + lambda * energy; }

template <typename T>
ad::Tensor<T> discriminator_loss(ad::Tape<T>& tape, const ad::Tensor<T>& p, Sample sample) {
    const auto q = sample == Sample::positive ? p : ad::add_scalar(tape, ad::scalar_mul(tape, p, -1.0), 1.0);
    return ad::scalar_mul(tape, ad::mean(tape, ad::log(tape, q)), -1.0);
}

template <typename T>
ad::Tensor<T> adversarial_loss(ad::Tape<T>& tape, const ad::Tensor<T>& p) {
    return discriminator_loss(tape, p, Sample::positive);
}

void GanConfig::validate() const {
    check_beta(beta);
    if (!(lambda > 0.0)) throw InvalidParameter("gan: lambda must be > 0");
    if (!(lr_g > 0.0)) throw InvalidParameter("gan: lr_g must be > 0");
    if (!(lr_d > 0.0)) throw InvalidParameter("gan: lr_d must be > 0");
    if (epochs < 1) throw InvalidParameter("gan: epochs must be >= 1");
    if (batch_size < 1) throw InvalidParameter("gan: batch size must be >= 1");
    if (!(alpha > 0.0)) throw InvalidParameter("gan: alpha must be > 0");
    if (!(s > 0.0)) throw InvalidParameter("gan: s must be > 0");
    if (max_consecutive_skips < 1) throw InvalidParameter("gan: max consecutive skips must be >= 1");
    energy::validate(energy);
}

TrainResult train(const TrainingData& data, const GanConfig& cfg, const TrainOptions& options) {
    cfg.validate();
    if (data.images.empty()) throw InvalidInput("train: no training images");
    const auto& g = data.images.front().grid;
    for (const auto& im : data.images) grid::require_same_grid(g, im.grid, "train");
    if (data.pairs.empty() && data.images.size() < 2) throw InvalidInput("train: random pairing needs >= 2 images");
    for (auto [i, j] : data.pairs)
        if (i >= data.images.size() || j >= data.images.size()) throw InvalidInput("train: pair index out of range");

    auto gcfg = cfg.generator;
    gcfg.dims = g.dims();
    auto dcfg = cfg.discriminator;
    dcfg.extents.assign(g.extents().begin(), g.extents().end());

    std::seed_seq sseq{cfg.seed, std::uint64_t{0x6a09e667}};
    std::array<std::uint64_t, 3> seeds{};
    sseq.generate(seeds.begin(), seeds.end());
    TrainResult res{nets::Generator<float>(gcfg, seeds[0]), nets::Discriminator<float>(dcfg, seeds[1]), {}, {}};
    auto& G = res.generator;
    auto& D = res.discriminator;
    nets::Adam<float> adam_g(G.parameters(), {cfg.lr_g});
    nets::Adam<float> adam_d(D.parameters(), {cfg.lr_d});
    std::mt19937_64 rng(seeds[2]);

    const auto op = spectral::CauchyNavierOperator::build(cfg.alpha, cfg.s, g);
    const auto metric = ad::MetricMultipliers::from(op);
    const auto smoother = energy::velocity_smoother(op, cfg.energy.parameterization);

    std::ofstream log, skiplog;
    if (!options.out_dir.empty()) {
        std::filesystem::create_directories(options.out_dir);
        log.open(options.out_dir / "train_log.csv");
        skiplog.open(options.out_dir / "skipped.csv");
        if (!log || !skiplog) throw IoError("train: cannot write logs in " + options.out_dir.string());
        log << train_log_header << '\n';
        skiplog << "step,epoch,reason\n";
    }

    std::size_t step = 0, consecutive = 0;
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::vector<std::pair<std::size_t, std::size_t>> pairs = data.pairs;
        if (pairs.empty()) {
            std::vector<std::size_t> order(data.images.size());
            std::iota(order.begin(), order.end(), 0);
            std::shuffle(order.begin(), order.end(), rng);
            for (auto i : order) {
                std::uniform_int_distribution<std::size_t> pick(0, data.images.size() - 2);
                std::size_t j = pick(rng);
                if (j >= i) ++j;
                pairs.emplace_back(i, j);
            }
        } else {
            std::shuffle(pairs.begin(), pairs.end(), rng);
        }

        for (std::size_t b0 = 0; b0 < pairs.size(); b0 += cfg.batch_size) {
            ++step;
            const auto t0 = std::chrono::steady_clock::now();
            const std::size_t b1 = std::min(pairs.size(), b0 + cfg.batch_size);
            std::vector<std::size_t> si, ti;
            for (std::size_t k = b0; k < b1; ++k) {
                si.push_back(pairs[k].first);
                ti.push_back(pairs[k].second);
            }
            const auto I0 = batch_images(data.images, si), I1 = batch_images(data.images, ti);

            TrainRecord rec;
            rec.step = step;
            rec.epoch = epoch;
            try {
                ad::Tape<float> tape_g;
                auto v = G.forward(tape_g, I0, I1);
                if (cfg.smooth_velocity) v = ad::spectral_filter(tape_g, v, smoother);
                const auto e = energy::energy_layer(tape_g, v, I0, I1, metric, cfg.energy);
                const auto mean_e = ad::mean(tape_g, e.total);
                rec.energy = mean_e.item();
                if (!std::isfinite(rec.energy)) throw DivergenceError("non-finite energy");

                double num = 0.0, den = 0.0;
                {
                    const auto w = e.warped.values(), s = I0.values(), t = I1.values();
                    for (std::size_t i = 0; i < w.size(); ++i) {
                        num += (double(w[i]) - t[i]) * (double(w[i]) - t[i]);
                        den += (double(s[i]) - t[i]) * (double(s[i]) - t[i]);
                    }
                }
                rec.mse_rel = den > 0.0 ? num / den : NAN;

                ad::Tape<float> tape_d;
                const auto pos = make_positive(I0, I1, cfg.beta);
                const auto ld_pos = discriminator_loss(tape_d, D.forward(tape_d, pos, I1), Sample::positive);
                rec.ld_pos = ld_pos.item();
                tape_d.backward(ld_pos);
                adam_d.step();
                tape_d.clear();

                const auto ld_neg =
                    discriminator_loss(tape_d, D.forward(tape_d, e.warped.detach(), I1), Sample::negative);
                rec.ld_neg = ld_neg.item();
                tape_d.backward(ld_neg);
                adam_d.step();
                tape_d.clear();

                const auto l_adv = adversarial_loss(tape_g, D.forward(tape_g, e.warped, I1));
                const auto l_g = ad::add(tape_g, l_adv, ad::scalar_mul(tape_g, mean_e, cfg.lambda));
                rec.l_adv = l_adv.item();
                rec.l_g = l_g.item();
                if (!std::isfinite(rec.l_g)) throw DivergenceError("non-finite generator loss");
                tape_g.backward(l_g);
                adam_g.step();
            } catch (const DivergenceError& err) {
                res.skipped.push_back({step, epoch, err.what()});
                if (skiplog.is_open()) skiplog << step << ',' << epoch << ",\"" << err.what() << "\"\n" << std::flush;
                if (++consecutive >= cfg.max_consecutive_skips)
                    throw DivergenceError("train: " + std::to_string(consecutive) +
                                          " consecutive batches diverged; last: " + err.what());
                continue;
            }
            consecutive = 0;

            rec.lambda_e = cfg.lambda * rec.energy;
            rec.p_pos = std::exp(-rec.ld_pos);
            rec.p_neg = -std::expm1(-rec.ld_neg);
            rec.wall_ms =
                std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
            if (log.is_open()) {
                log << rec.step << ',' << rec.epoch;
                for (double x : {rec.ld_pos, rec.ld_neg, rec.l_adv, rec.energy, rec.lambda_e, rec.l_g, rec.p_pos,
                                 rec.p_neg, rec.mse_rel})
                    log << ',' << number(x);
                char ms[32];
                std::snprintf(ms, sizeof ms, "%.3f", rec.wall_ms);
                log << ',' << ms << '\n' << std::flush;
            }
            if (options.on_step) options.on_step(rec);
            res.records.push_back(rec);
        }

        if (!options.out_dir.empty()) {
            save_atomically(options.out_dir / "generator.ckpt", G.parameters());
            save_atomically(options.out_dir / "discriminator.ckpt", D.parameters());
        }
    }
    return res;
}

Registration infer(const nets::Generator<float>& generator, const grid::ScalarImage& source,
                   const grid::ScalarImage& target, const spectral::CauchyNavierOperator& op,
                   const energy::EnergyConfig& cfg, bool smooth_velocity) {
    grid::require_same_grid(source.grid, target.grid, "infer");
    grid::require_same_grid(source.grid, op.grid(), "infer");
    if (generator.config().dims != source.grid.dims()) throw ShapeError("infer: generator dimension differs from grid");
    ad::Tape<float> tape(false);
    const auto I0 = ad::image_tensor<float>(std::span(&source, 1));
    const auto I1 = ad::image_tensor<float>(std::span(&target, 1));
    auto v = generator.forward(tape, I0, I1);
    if (smooth_velocity) v = ad::spectral_filter(tape, v, energy::velocity_smoother(op, cfg.parameterization));
    const auto metric = ad::MetricMultipliers::from(op);
    const auto u = cfg.parameterization == energy::Parameterization::stationary
                       ? ad::stationary_inverse_layer(tape, v, cfg.integration)
                       : ad::shooting_inverse_layer(tape, v, metric, cfg.integration);
    Registration r;
    r.velocity = ad::to_field(v, 0);
    r.displacement = grid::DisplacementField(ad::to_field(u, 0));
    // warp the double-precision source so the output is not limited by float rounding of I0
    r.warped = grid::warp_image(source, r.displacement);
    return r;
}

template ad::Tensor<float> make_positive(const ad::Tensor<float>&, const ad::Tensor<float>&, double);
template ad::Tensor<double> make_positive(const ad::Tensor<double>&, const ad::Tensor<double>&, double);
template ad::Tensor<float> discriminator_loss(ad::Tape<float>&, const ad::Tensor<float>&, Sample);
template ad::Tensor<double> discriminator_loss(ad::Tape<double>&, const ad::Tensor<double>&, Sample);
template ad::Tensor<float> adversarial_loss(ad::Tape<float>&, const ad::Tensor<float>&);
template ad::Tensor<double> adversarial_loss(ad::Tape<double>&, const ad::Tensor<double>&);

}  // namespace lddmm::gan
