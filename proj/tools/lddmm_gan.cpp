// lddmm-gan: simulate | train | register | evaluate
//
// Exit codes: 0 success, 2 usage, 3 data, 4 numerical divergence, 1 other.

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "lddmm/baseline.hpp"
#include "lddmm/data.hpp"
#include "lddmm/error.hpp"
#include "lddmm/eval.hpp"
#include "lddmm/gan.hpp"
#include "lddmm/nets.hpp"
#include "lddmm/run_config.hpp"

namespace fs = std::filesystem;
using namespace lddmm;

namespace {

constexpr int exit_usage = 2;
constexpr int exit_data = 3;
constexpr int exit_divergence = 4;

fs::path default_out(const std::string& command) {
    const char* root = std::getenv("LDDMM_GAN_OUT");
    return fs::path(root && *root ? root : "lddmm-gan-out") / command;
}

// Open interval (lo, hi); CLI11's Range is closed.
CLI::Validator open_interval(double lo, double hi) {
    return CLI::Validator(
        [lo, hi](std::string& s) -> std::string {
            double x = 0;
            try {
                x = std::stod(s);
            } catch (const std::exception&) {
                return "not a number: " + s;
            }
            if (!(x > lo && x < hi)) return "value " + s + " not in (" + runcfg::format(lo) + ", " + runcfg::format(hi) + ")";
            return {};
        },
        "in (" + runcfg::format(lo) + ", " + runcfg::format(hi) + ")");
}

const CLI::Validator positive = open_interval(0.0, INFINITY);

grid::ScalarImage load_image(const fs::path& p) {
    if (p.extension() == ".nii") return data::load_nifti(p);
    return data::load_raw_image(p);
}

grid::LabelImage load_labels(const fs::path& p) {
    if (p.extension() == ".nii") {
        const auto img = data::load_nifti(p);
        grid::LabelImage l(img.grid);
        for (std::size_t i = 0; i < l.values.size(); ++i) l.values[i] = static_cast<std::int32_t>(std::lround(img.values[i]));
        return l;
    }
    return data::load_raw_labels(p);
}

std::vector<std::int32_t> parse_labels(const std::string& s) {
    std::vector<std::int32_t> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            out.push_back(std::stoi(item, &used));
            if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw UsageError("--labels: not an integer: '" + item + "'");
        }
    }
    return out;
}

double safe_mse_rel(const grid::ScalarImage& s, const grid::ScalarImage& t, const grid::ScalarImage& w) {
    try {
        return energy::mse_rel(s, t, w);
    } catch (const UndefinedMetric&) {
        return NAN;
    }
}

struct Model {
    gan::GanConfig cfg;
    nets::Generator<float> generator;
};

Model load_model(const fs::path& dir) {
    const auto kv = runcfg::read(dir / "run_config.txt");
    auto cfg = runcfg::gan_config(kv);
    nets::Generator<float> g(cfg.generator, 0);
    nets::load_checkpoint(dir / "generator.ckpt", g.parameters());
    return {cfg, std::move(g)};
}

// ---------------------------------------------------------------------------

struct SimulateArgs {
    data::TorusSpec spec;
    fs::path out;
};

int run_simulate(SimulateArgs a) {
    if (a.out.empty()) a.out = default_out("simulate");
    data::validate(a.spec);
    const auto entries = data::write_torus_dataset(a.out, a.spec);
    runcfg::write(a.out / "run_config.txt",
                  {{"command", "simulate"},
                   {"count", std::to_string(a.spec.count)},
                   {"size", std::to_string(a.spec.size)},
                   {"seed", std::to_string(a.spec.seed)},
                   {"inner_mean", runcfg::format(a.spec.inner_mean)},
                   {"inner_std", runcfg::format(a.spec.inner_std)},
                   {"outer_mean", runcfg::format(a.spec.outer_mean)},
                   {"outer_std", runcfg::format(a.spec.outer_std)},
                   {"blur_sigma", runcfg::format(a.spec.blur_sigma)}});
    std::cout << "wrote " << entries.size() << " images to " << a.out.string() << "\n";
    return 0;
}

struct TrainArgs {
    std::string mode = "svf-gan";
    fs::path data;
    fs::path out;
    fs::path source, target;
    std::size_t max_images = 0;
    gan::GanConfig gan;
    baseline::BaselineConfig base;
    TrainArgs() { gan.epochs = 1000; }
};

int run_train(TrainArgs a) {
    if (a.out.empty()) a.out = default_out("train");
    const bool is_gan = a.mode == "svf-gan" || a.mode == "epdiff-gan";
    const auto param = (a.mode == "svf-gan" || a.mode == "baseline-svf") ? energy::Parameterization::stationary
                                                                          : energy::Parameterization::epdiff;
    a.gan.energy.parameterization = a.base.energy.parameterization = param;
    a.base.energy.sigma2 = a.gan.energy.sigma2;
    a.base.energy.integration = a.gan.energy.integration;
    a.base.alpha = a.gan.alpha;
    a.base.s = a.gan.s;
    fs::create_directories(a.out);

    if (is_gan) {
        a.gan.validate();
        if (a.data.empty()) throw UsageError("--data is required for " + a.mode);
        auto entries = data::read_manifest(a.data);
        if (a.max_images > 0 && entries.size() > a.max_images) entries.resize(a.max_images);
        gan::TrainingData td;
        for (const auto& e : entries) td.images.push_back(load_image(e.image));
        a.gan.generator.dims = td.images.front().grid.dims();
        auto kv = runcfg::describe(a.gan);
        kv.insert(kv.begin(), {{"command", "train"}, {"mode", a.mode}, {"data", fs::absolute(a.data).string()},
                               {"images", std::to_string(td.images.size())}});
        runcfg::write(a.out / "run_config.txt", kv);
        std::size_t last_epoch = 0;
        gan::TrainOptions opt{a.out, [&](const gan::TrainRecord& r) {
                                  if (r.epoch != last_epoch) {
                                      last_epoch = r.epoch;
                                      std::cout << "epoch " << r.epoch << " step " << r.step << " l_g " << r.l_g
                                                << " mse_rel " << r.mse_rel << "\n" << std::flush;
                                  }
                              }};
        const auto res = gan::train(td, a.gan, opt);
        std::cout << "trained " << res.records.size() << " steps (" << res.skipped.size() << " skipped); output in "
                  << a.out.string() << "\n";
        return 0;
    }

    a.base.validate();
    grid::ScalarImage I0, I1;
    if (!a.source.empty() || !a.target.empty()) {
        if (a.source.empty() || a.target.empty()) throw UsageError("--source and --target go together");
        I0 = load_image(a.source);
        I1 = load_image(a.target);
    } else {
        if (a.data.empty()) throw UsageError("--data or --source/--target is required for " + a.mode);
        const auto entries = data::read_manifest(a.data);
        if (entries.size() < 2) throw InvalidInput("baseline: the dataset needs two images");
        I0 = load_image(entries[0].image);
        I1 = load_image(entries[1].image);
    }
    auto kv = runcfg::describe(a.base);
    kv.insert(kv.begin(), {{"command", "train"}, {"mode", a.mode}});
    kv.emplace_back("source", a.source.empty() ? "manifest[0]" : fs::absolute(a.source).string());
    kv.emplace_back("target", a.target.empty() ? "manifest[1]" : fs::absolute(a.target).string());
    runcfg::write(a.out / "run_config.txt", kv);
    const auto r = baseline::optimize(I0, I1, a.base);
    baseline::write_trace_csv(a.out / "trace.csv", r.trace);
    data::save_raw(a.out / "velocity.raw", r.velocity);
    data::save_raw(a.out / "displacement.raw", r.displacement);
    data::save_raw(a.out / "warped.raw", r.warped);
    std::cout << "energy " << r.terms.total() << " at iteration " << r.best_iteration << ", mse_rel "
              << safe_mse_rel(I0, I1, r.warped) << "; output in " << a.out.string() << "\n";
    return 0;
}

struct RegisterArgs {
    fs::path model, source, target, out;
    fs::path source_labels, target_labels;
    std::string labels = "1,2";
};

int run_register(RegisterArgs a) {
    if (a.out.empty()) a.out = default_out("register");
    const auto t0 = std::chrono::steady_clock::now();
    const auto model = load_model(a.model);
    const auto I0 = load_image(a.source), I1 = load_image(a.target);
    grid::require_same_grid(I0.grid, I1.grid, "register");
    const auto op = spectral::CauchyNavierOperator::build(model.cfg.alpha, model.cfg.s, I0.grid);
    const auto t1 = std::chrono::steady_clock::now();
    const auto r = gan::infer(model.generator, I0, I1, op, model.cfg.energy, model.cfg.smooth_velocity);
    const double infer_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t1).count();

    fs::create_directories(a.out);
    data::save_raw(a.out / "velocity.raw", r.velocity);
    data::save_raw(a.out / "displacement.raw", r.displacement);
    data::save_raw(a.out / "warped.raw", r.warped);
    if (I0.grid.dims() == 2) data::export_pgm(a.out / "warped.pgm", r.warped);

    const auto labels = parse_labels(a.labels);
    eval::PairMetrics m{"register", energy::mse(r.warped, I1), safe_mse_rel(I0, I1, r.warped), {},
                        eval::jacobian_positivity(r.displacement), infer_ms};
    std::vector<std::int32_t> used;
    if (!a.source_labels.empty() && !a.target_labels.empty()) {
        const auto warped = eval::warp_labels(load_labels(a.source_labels), r.displacement);
        const auto tl = load_labels(a.target_labels);
        for (auto l : labels) {
            try {
                m.dice.push_back(eval::dice(warped, tl, l));
            } catch (const UndefinedMetric&) {
                m.dice.push_back(NAN);
            }
        }
        used = labels;
    }
    eval::write_metrics_csv(a.out / "metrics.csv", std::span(&m, 1), used);
    runcfg::write(a.out / "run_config.txt", {{"command", "register"},
                                             {"model", fs::absolute(a.model).string()},
                                             {"source", fs::absolute(a.source).string()},
                                             {"target", fs::absolute(a.target).string()},
                                             {"parameterization", runcfg::parameterization_name(model.cfg.energy.parameterization)}});
    const double total_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    std::cout << "mse_rel " << m.mse_rel << " jac_pos " << m.jacobian_positivity << " inference " << infer_ms
              << " ms, total " << total_ms << " ms; output in " << a.out.string() << "\n";
    return 0;
}

struct EvaluateArgs {
    fs::path pairs, model, out;
    std::string labels = "1,2";
};

std::vector<std::vector<std::string>> read_pairs(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("evaluate: cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line) || line.rfind("source,target", 0) != 0)
        throw ParseError("evaluate: pairs file must start with a 'source,target[,...]' header");
    std::vector<std::vector<std::string>> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::stringstream ss(line);
        std::string item;
        while (std::getline(ss, item, ',')) f.push_back(item);
        if (f.size() != 2 && f.size() != 4 && f.size() != 5)
            throw ParseError("evaluate: pair row needs 2, 4 or 5 fields: " + line);
        rows.push_back(std::move(f));
    }
    return rows;
}

int run_evaluate(EvaluateArgs a) {
    if (a.out.empty()) a.out = default_out("evaluate");
    const auto labels = parse_labels(a.labels);
    const auto rows = read_pairs(a.pairs);
    if (rows.empty()) throw InvalidInput("evaluate: no pairs in " + a.pairs.string());
    const fs::path base = fs::absolute(a.pairs).parent_path();
    auto resolve = [&](const std::string& p) { return fs::path(p).is_absolute() ? fs::path(p) : base / p; };

    std::optional<Model> model;
    if (!a.model.empty()) model.emplace(load_model(a.model));
    fs::create_directories(a.out / "panels");

    std::vector<eval::PairMetrics> metrics;
    for (std::size_t k = 0; k < rows.size(); ++k) {
        const auto& f = rows[k];
        const auto I0 = load_image(resolve(f[0])), I1 = load_image(resolve(f[1]));
        grid::require_same_grid(I0.grid, I1.grid, "evaluate");
        grid::VectorField velocity;
        grid::DisplacementField u;
        double ms = 0.0;
        if (model) {
            const auto op = spectral::CauchyNavierOperator::build(model->cfg.alpha, model->cfg.s, I0.grid);
            const auto t0 = std::chrono::steady_clock::now();
            auto r = gan::infer(model->generator, I0, I1, op, model->cfg.energy, model->cfg.smooth_velocity);
            ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
            velocity = std::move(r.velocity);
            u = std::move(r.displacement);
        } else if (f.size() == 5) {
            u = grid::DisplacementField(data::load_raw_field(resolve(f[4])));
            grid::require_same_grid(I0.grid, u.grid, "evaluate");
            velocity = u;  // the panel then shows |u|
        } else {
            throw UsageError("evaluate: pass --model or a displacement column for pair " + std::to_string(k));
        }
        const auto warped = grid::warp_image(I0, u);
        eval::PairMetrics m{"pair_" + std::to_string(k), energy::mse(warped, I1), safe_mse_rel(I0, I1, warped), {},
                            eval::jacobian_positivity(u), ms};
        if (f.size() >= 4) {
            const auto wl = eval::warp_labels(load_labels(resolve(f[2])), u);
            const auto tl = load_labels(resolve(f[3]));
            for (auto l : labels) {
                try {
                    m.dice.push_back(eval::dice(wl, tl, l));
                } catch (const UndefinedMetric&) {
                    m.dice.push_back(NAN);
                }
            }
        } else {
            m.dice.assign(labels.size(), NAN);
        }
        if (I0.grid.dims() == 2) eval::write_panels(a.out / "panels", m.pair, I0, I1, warped, velocity);
        metrics.push_back(std::move(m));
    }
    eval::write_metrics_csv(a.out / "metrics.csv", metrics, labels);
    runcfg::write(a.out / "run_config.txt", {{"command", "evaluate"},
                                             {"pairs", fs::absolute(a.pairs).string()},
                                             {"model", a.model.empty() ? "" : fs::absolute(a.model).string()},
                                             {"labels", a.labels}});
    std::cout << "evaluated " << metrics.size() << " pairs; output in " << a.out.string() << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"LDDMM registration with adversarially trained generators"};
    app.require_subcommand(1);

    SimulateArgs sim;
    auto* s = app.add_subcommand("simulate", "write a synthetic torus dataset");
    s->add_option("--out", sim.out, "output directory (default $LDDMM_GAN_OUT/simulate)");
    s->add_option("--count", sim.spec.count, "number of images")->capture_default_str();
    s->add_option("--size", sim.spec.size, "image extent")->capture_default_str();
    s->add_option("--seed", sim.spec.seed)->capture_default_str();
    s->add_option("--inner-mean", sim.spec.inner_mean)->capture_default_str();
    s->add_option("--inner-std", sim.spec.inner_std)->capture_default_str();
    s->add_option("--outer-mean", sim.spec.outer_mean)->capture_default_str();
    s->add_option("--outer-std", sim.spec.outer_std)->capture_default_str();
    s->add_option("--blur", sim.spec.blur_sigma, "Gaussian blur sigma in pixels")->capture_default_str();

    TrainArgs tr;
    auto* t = app.add_subcommand("train", "train a generator or run the model-based optimizer");
    t->add_option("--mode", tr.mode)
        ->check(CLI::IsMember({"svf-gan", "epdiff-gan", "baseline-svf", "baseline-epdiff"}))
        ->capture_default_str();
    t->add_option("--data", tr.data, "dataset directory with manifest.csv");
    t->add_option("--out", tr.out, "output directory (default $LDDMM_GAN_OUT/train)");
    t->add_option("--epochs", tr.gan.epochs)->check(CLI::PositiveNumber)->capture_default_str();
    t->add_option("--batch", tr.gan.batch_size)->check(CLI::PositiveNumber)->capture_default_str();
    t->add_option("--lambda", tr.gan.lambda)->check(positive)->capture_default_str();
    t->add_option("--beta", tr.gan.beta)->check(open_interval(0.0, 1.0))->capture_default_str();
    t->add_option("--sigma2", tr.gan.energy.sigma2)->check(positive)->capture_default_str();
    t->add_option("--alpha", tr.gan.alpha)->check(positive)->capture_default_str();
    t->add_option("--s", tr.gan.s)->check(positive)->capture_default_str();
    t->add_option("--steps", tr.gan.energy.integration.time_steps, "time steps of the Euler integrators")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    t->add_option("--squarings", tr.gan.energy.integration.squarings)->check(CLI::PositiveNumber)->capture_default_str();
    t->add_option("--lr-g", tr.gan.lr_g)->check(positive)->capture_default_str();
    t->add_option("--lr-d", tr.gan.lr_d)->check(positive)->capture_default_str();
    t->add_option("--seed", tr.gan.seed)->capture_default_str();
    t->add_option("--max-images", tr.max_images, "use only the first N dataset images (0 = all)");
    t->add_option("--iterations", tr.base.iterations, "baseline iterations")->check(CLI::PositiveNumber)->capture_default_str();
    t->add_option("--lr", tr.base.lr, "baseline step size")->check(positive)->capture_default_str();
    t->add_option("--source", tr.source, "baseline source image");
    t->add_option("--target", tr.target, "baseline target image");

    RegisterArgs rg;
    auto* r = app.add_subcommand("register", "register one pair with a trained generator");
    r->add_option("--model", rg.model, "training output directory")->required();
    r->add_option("--source", rg.source)->required();
    r->add_option("--target", rg.target)->required();
    r->add_option("--out", rg.out, "output directory (default $LDDMM_GAN_OUT/register)");
    r->add_option("--source-labels", rg.source_labels);
    r->add_option("--target-labels", rg.target_labels);
    r->add_option("--labels", rg.labels, "comma-separated labels for Dice")->capture_default_str();

    EvaluateArgs ev;
    auto* e = app.add_subcommand("evaluate", "metrics CSV and panels for a list of pairs");
    e->add_option("--pairs", ev.pairs, "CSV: source,target[,source_labels,target_labels[,displacement]]")->required();
    e->add_option("--labels", ev.labels, "comma-separated labels for Dice")->capture_default_str();
    e->add_option("--model", ev.model, "training output directory");
    e->add_option("--out", ev.out, "output directory (default $LDDMM_GAN_OUT/evaluate)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& err) {
        return app.exit(err);
    } catch (const CLI::CallForAllHelp& err) {
        return app.exit(err);
    } catch (const CLI::ParseError& err) {
        app.exit(err);
        return exit_usage;
    }

    try {
        if (s->parsed()) return run_simulate(sim);
        if (t->parsed()) return run_train(tr);
        if (r->parsed()) return run_register(rg);
        return run_evaluate(ev);
    } catch (const DivergenceError& err) {
        std::cerr << "error: " << err.what() << "\n";
        return exit_divergence;
    } catch (const InvalidParameter& err) {
        std::cerr << "error: " << err.what() << "\n";
        return exit_usage;
    } catch (const UsageError& err) {
        std::cerr << "error: " << err.what() << "\n";
        return exit_usage;
    } catch (const Error& err) {
        std::cerr << "error: " << err.what() << "\n";
        return exit_data;
    } catch (const fs::filesystem_error& err) {
        std::cerr << "error: " << err.what() << "\n";
        return exit_data;
    } catch (const std::exception& err) {
        std::cerr << "internal error: " << err.what() << "\n";
        return 1;
    }
}
