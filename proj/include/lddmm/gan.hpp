#pragma once

// Adversarial training of the registration generator.
//
// Per batch of (I0, I1) pairs:
//   1. generator forward, integration and warp (kept on the generator tape),
//   2. discriminator step on positives  beta I0 + (1 - beta) I1  vs I1,
//   3. discriminator step on negatives  (detached warped I0) vs I1,
//   4. generator step on  mean(-log p) + lambda mean(E)  through the updated
//      discriminator.
// A batch whose integration blows up or whose gradients are not finite is
// skipped; too many skips in a row abort the run with DivergenceError.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "lddmm/autodiff.hpp"
#include "lddmm/energy.hpp"
#include "lddmm/grid.hpp"
#include "lddmm/nets.hpp"

namespace lddmm::gan {

/// beta I0 + (1 - beta) I1; InvalidParameter unless 0 < beta < 1.
grid::ScalarImage make_positive(const grid::ScalarImage& source, const grid::ScalarImage& target, double beta);
template <typename T>
ad::Tensor<T> make_positive(const ad::Tensor<T>& source, const ad::Tensor<T>& target, double beta);

enum class Sample { positive, negative };

/// -log p (positive) or -log(1 - p) (negative), p clamped to the probability floor.
double discriminator_loss(double p, Sample sample);
/// -log p + lambda * energy.
double generator_loss(double p, double energy, double lambda);

/// Batch means of the per-sample losses above.
template <typename T>
ad::Tensor<T> discriminator_loss(ad::Tape<T>& tape, const ad::Tensor<T>& p, Sample sample);
template <typename T>
ad::Tensor<T> adversarial_loss(ad::Tape<T>& tape, const ad::Tensor<T>& p);

struct GanConfig {
    double beta = 0.2;
    double lambda = 1000.0;
    double lr_g = 5e-5;
    double lr_d = 1e-6;
    std::size_t epochs = 200;
    std::size_t batch_size = 64;
    std::uint64_t seed = 0;
    double alpha = 0.0025;
    double s = 4.0;
    energy::EnergyConfig energy;  // sigma2, parameterization, time steps
    nets::GeneratorConfig generator;
    nets::DiscriminatorConfig discriminator;  // extents are taken from the data
    std::size_t max_consecutive_skips = 10;
    bool smooth_velocity = true;  // v = P * generator output, P from energy::velocity_smoother

    void validate() const;
};

struct TrainRecord {
    std::size_t step = 0;   // 1-based batch counter, skipped batches included
    std::size_t epoch = 0;  // 1-based
    double ld_pos = 0.0;    // mean -log p over positives
    double ld_neg = 0.0;    // mean -log(1 - p) over negatives
    double l_adv = 0.0;     // mean -log p of the generator's warps
    double energy = 0.0;    // mean E
    double lambda_e = 0.0;  // lambda * energy
    double l_g = 0.0;       // l_adv + lambda_e as evaluated on the tape
    double p_pos = 0.0;     // exp(-ld_pos)
    double p_neg = 0.0;     // 1 - exp(-ld_neg)
    double mse_rel = 0.0;   // sum ||Iw - I1||^2 / sum ||I0 - I1||^2 over the batch; NaN if undefined
    double wall_ms = 0.0;
};

struct SkippedBatch {
    std::size_t step = 0;
    std::size_t epoch = 0;
    std::string reason;
};

/// Training images.  With `pairs` empty every image is the source once per
/// epoch, with a uniformly drawn target j != i; otherwise the fixed (source,
/// target) index pairs are reshuffled each epoch.
struct TrainingData {
    std::vector<grid::ScalarImage> images;
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
};

struct TrainOptions {
    /// If set: train_log.csv, skipped.csv and per-epoch generator.ckpt /
    /// discriminator.ckpt are written here.
    std::filesystem::path out_dir;
    std::function<void(const TrainRecord&)> on_step;
};

struct TrainResult {
    nets::Generator<float> generator;
    nets::Discriminator<float> discriminator;
    std::vector<TrainRecord> records;
    std::vector<SkippedBatch> skipped;
};

/// Throws DivergenceError once `max_consecutive_skips` batches in a row fail;
/// checkpoints from the last finished epoch stay on disk.
TrainResult train(const TrainingData& data, const GanConfig& cfg, const TrainOptions& options = {});

inline constexpr const char* train_log_header =
    "step,epoch,ld_pos,ld_neg,l_adv,energy,lambda_e,l_g,p_pos,p_neg,mse_rel,wall_ms";

struct Registration {
    grid::VectorField velocity;
    grid::DisplacementField displacement;  // (phi_1^v)^-1
    grid::ScalarImage warped;
};

/// One generator forward, integration and warp, nothing recorded.
Registration infer(const nets::Generator<float>& generator, const grid::ScalarImage& source,
                   const grid::ScalarImage& target, const spectral::CauchyNavierOperator& op,
                   const energy::EnergyConfig& cfg, bool smooth_velocity = true);

}  // namespace lddmm::gan
