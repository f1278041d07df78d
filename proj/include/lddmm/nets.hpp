#pragma once

// Registration generator, pair discriminator, Adam and parameter checkpoints.
//
// Generator: the channel-concatenated pair [B, 2, grid...] enters two
// encoder streams.  Per level l the U-net stream applies conv3 + relu to
// the previous fused features (max-pooled for l > 0) and the FC stream a
// conv3 + relu with stride 2 (stride 1 at level 0) to its own previous
// output.  Both are fused by concatenation and a 1x1 conv; the fused map is
// the skip connection and the input to the next U-net level.  The decoder
// upsamples with k2 s2 transposed convs, concatenates the skip and applies
// conv3 + relu; a last conv3 to d channels is scaled by `output_gain`
// (zero-initialised unless `zero_output` is false).
//
// Discriminator: 5 x (conv3 -> relu -> max-pool 2), flatten, dense
// layers with relu, one logit, sigmoid clamped to [1e-7, 1 - 1e-7].

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "lddmm/autodiff.hpp"

namespace lddmm::nets {

template <typename T>
struct Param {
    std::string name;
    ad::Tensor<T> value;
};

template <typename T>
using ParamList = std::vector<Param<T>>;

struct GeneratorConfig {
    std::size_t dims = 2;
    std::vector<std::size_t> channels{16, 32, 64};  // one entry per level
    double output_gain = 1.0;
    bool zero_output = true;  // start from v = 0
};

template <typename T>
class Generator {
public:
    Generator(const GeneratorConfig& cfg, std::uint64_t seed);

    /// source, target [B, 1, grid...] -> velocity [B, d, grid...].
    ad::Tensor<T> forward(ad::Tape<T>& tape, const ad::Tensor<T>& source, const ad::Tensor<T>& target) const;

    const GeneratorConfig& config() const noexcept { return cfg_; }
    ParamList<T>& parameters() noexcept { return params_; }
    const ParamList<T>& parameters() const noexcept { return params_; }

private:
    const ad::Tensor<T>& p(std::size_t i) const { return params_[i].value; }

    GeneratorConfig cfg_;
    ParamList<T> params_;
};

struct DiscriminatorConfig {
    std::vector<std::size_t> extents{64, 64};  // input grid; fixes the flattened width
    std::vector<std::size_t> channels{8, 16, 32, 64, 64};
    std::vector<std::size_t> dense{256, 64};
};

inline constexpr double probability_floor = 1e-7;

template <typename T>
class Discriminator {
public:
    Discriminator(const DiscriminatorConfig& cfg, std::uint64_t seed);

    /// (warped source, target) [B, 1, grid...] -> probabilities [B].
    ad::Tensor<T> forward(ad::Tape<T>& tape, const ad::Tensor<T>& warped, const ad::Tensor<T>& target) const;

    const DiscriminatorConfig& config() const noexcept { return cfg_; }
    ParamList<T>& parameters() noexcept { return params_; }
    const ParamList<T>& parameters() const noexcept { return params_; }

private:
    const ad::Tensor<T>& p(std::size_t i) const { return params_[i].value; }

    DiscriminatorConfig cfg_;
    std::size_t flat_ = 0;
    ParamList<T> params_;
};

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

template <typename T>
class Adam {
public:
    Adam(ParamList<T>& params, AdamConfig cfg);

    /// One bias-corrected update from the current gradients.  Throws
    /// DivergenceError, leaving parameters untouched, if any gradient is
    /// not finite.
    void step();

    std::size_t steps() const noexcept { return t_; }
    const AdamConfig& config() const noexcept { return cfg_; }

private:
    ParamList<T>* params_;
    AdamConfig cfg_;
    std::size_t t_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

/// Checkpoint layout: text header
///   LDDMMGAN-CHECKPOINT 1
///   tensors <n>
///   <name> <rank> <extent>...      (n lines, in payload order)
///   end
/// followed by the values of every tensor as little-endian float32.
template <typename T>
void save_checkpoint(const std::filesystem::path& path, const ParamList<T>& params);

/// Fills `params` in place; names and shapes must match the file exactly.
template <typename T>
void load_checkpoint(const std::filesystem::path& path, ParamList<T>& params);

}  // namespace lddmm::nets
