#include "lddmm/nets.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>

#include "lddmm/error.hpp"

namespace lddmm::nets {

using ad::Shape;
using ad::Tensor;

namespace {

template <typename T>
std::size_t add_param(ParamList<T>& list, std::string name, Shape shape, double bound, std::mt19937_64& rng) {
    std::vector<T> values(ad::element_count(shape), T(0));
    if (bound > 0.0) {
        std::uniform_real_distribution<double> u(-bound, bound);
        for (auto& x : values) x = static_cast<T>(u(rng));
    }
    list.push_back({std::move(name), Tensor<T>(std::move(shape), std::move(values), true)});
    return list.size() - 1;
}

Shape kernel_shape(std::size_t out, std::size_t in, std::size_t k, std::size_t dims) {
    Shape s{out, in};
    s.insert(s.end(), dims, k);
    return s;
}

double he_bound(double fan_in) { return std::sqrt(6.0 / fan_in); }

// He-uniform conv kernel [out, in, k...] plus zero bias; returns the weight index.
template <typename T>
std::size_t add_conv(ParamList<T>& list, const std::string& name, std::size_t out, std::size_t in, std::size_t k,
                     std::size_t dims, std::mt19937_64& rng) {
    const double fan_in = static_cast<double>(in) * std::pow(static_cast<double>(k), static_cast<double>(dims));
    const std::size_t w = add_param(list, name + ".weight", kernel_shape(out, in, k, dims), he_bound(fan_in), rng);
    add_param(list, name + ".bias", {out}, 0.0, rng);
    return w;
}

// k2 s2 transposed conv [in, out, 2...]: each output sees `in` inputs.
template <typename T>
std::size_t add_upconv(ParamList<T>& list, const std::string& name, std::size_t in, std::size_t out,
                       std::size_t dims, std::mt19937_64& rng) {
    const std::size_t w =
        add_param(list, name + ".weight", kernel_shape(in, out, 2, dims), he_bound(static_cast<double>(in)), rng);
    add_param(list, name + ".bias", {out}, 0.0, rng);
    return w;
}

template <typename T>
std::size_t add_dense(ParamList<T>& list, const std::string& name, std::size_t out, std::size_t in,
                      std::mt19937_64& rng) {
    const std::size_t w = add_param(list, name + ".weight", {out, in}, he_bound(static_cast<double>(in)), rng);
    add_param(list, name + ".bias", {out}, 0.0, rng);
    return w;
}

template <typename T>
void require_pair(const Tensor<T>& a, const Tensor<T>& b, std::size_t dims, const char* who) {
    if (a.rank() != dims + 2 || a.shape() != b.shape() || a.dim(1) != 1) {
        std::ostringstream os;
        os << who << ": expected two [B, 1, grid...] images of equal shape with " << dims << " spatial axes";
        throw ShapeError(os.str());
    }
}

}  // namespace

// ---------------------------------------------------------------------------

template <typename T>
Generator<T>::Generator(const GeneratorConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    if (cfg.dims != 2 && cfg.dims != 3) throw InvalidParameter("Generator: dims must be 2 or 3");
    if (cfg.channels.empty()) throw InvalidParameter("Generator: at least one level is required");
    std::mt19937_64 rng(seed);
    const std::size_t d = cfg.dims, L = cfg.channels.size();
    for (std::size_t l = 0; l < L; ++l) {
        const std::size_t in = l == 0 ? 2 : cfg.channels[l - 1], c = cfg.channels[l];
        const std::string lv = "enc" + std::to_string(l);
        add_conv(params_, lv + ".unet", c, in, 3, d, rng);
        add_conv(params_, lv + ".fc", c, in, 3, d, rng);
        add_conv(params_, lv + ".fuse", c, 2 * c, 1, d, rng);
    }
    for (std::size_t l = L - 1; l-- > 0;) {
        const std::string lv = "dec" + std::to_string(l);
        add_upconv(params_, lv + ".up", cfg.channels[l + 1], cfg.channels[l], d, rng);
        add_conv(params_, lv + ".conv", cfg.channels[l], 2 * cfg.channels[l], 3, d, rng);
    }
    const std::size_t out = add_conv(params_, "out", d, cfg.channels[0], 3, d, rng);
    if (cfg.zero_output)
        for (auto& w : params_[out].value.mutable_values()) w = T(0);
}

template <typename T>
Tensor<T> Generator<T>::forward(ad::Tape<T>& tape, const Tensor<T>& source, const Tensor<T>& target) const {
    const std::size_t d = cfg_.dims, L = cfg_.channels.size();
    require_pair(source, target, d, "Generator");
    const std::size_t factor = std::size_t{1} << (L - 1);
    for (std::size_t a = 0; a < d; ++a)
        if (source.dim(2 + a) % factor != 0)
            throw ShapeError("Generator: spatial extents must be divisible by " + std::to_string(factor));

    const Tensor<T> x = ad::concat(tape, {source, target});
    std::vector<Tensor<T>> fused(L);
    Tensor<T> fc = x;
    std::size_t k = 0;
    for (std::size_t l = 0; l < L; ++l, k += 6) {
        const Tensor<T> unet_in = l == 0 ? x : ad::max_pool2(tape, fused[l - 1]);
        const Tensor<T> u = ad::relu(tape, ad::conv(tape, unet_in, p(k), p(k + 1), 1));
        fc = ad::relu(tape, ad::conv(tape, fc, p(k + 2), p(k + 3), l == 0 ? 1 : 2));
        fused[l] = ad::relu(tape, ad::conv(tape, ad::concat(tape, {u, fc}), p(k + 4), p(k + 5), 1));
    }
    Tensor<T> y = fused[L - 1];
    for (std::size_t l = L - 1; l-- > 0; k += 4) {
        y = ad::relu(tape, ad::transposed_conv(tape, y, p(k), p(k + 1), 2));
        y = ad::relu(tape, ad::conv(tape, ad::concat(tape, {y, fused[l]}), p(k + 2), p(k + 3), 1));
    }
    return ad::scalar_mul(tape, ad::conv(tape, y, p(k), p(k + 1), 1), cfg_.output_gain);
}

// ---------------------------------------------------------------------------

template <typename T>
Discriminator<T>::Discriminator(const DiscriminatorConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    const std::size_t d = cfg.extents.size();
    if (d != 2 && d != 3) throw InvalidParameter("Discriminator: input must have 2 or 3 spatial axes");
    if (cfg.channels.empty()) throw InvalidParameter("Discriminator: at least one conv block is required");
    std::mt19937_64 rng(seed);
    std::vector<std::size_t> ext = cfg.extents;
    std::size_t in = 2;
    for (std::size_t i = 0; i < cfg.channels.size(); ++i) {
        add_conv(params_, "block" + std::to_string(i), cfg.channels[i], in, 3, d, rng);
        in = cfg.channels[i];
        for (auto& e : ext) e = (e + 1) / 2;
    }
    flat_ = in * ad::element_count(ext);
    in = flat_;
    for (std::size_t i = 0; i < cfg.dense.size(); ++i) {
        add_dense(params_, "dense" + std::to_string(i), cfg.dense[i], in, rng);
        in = cfg.dense[i];
    }
    add_dense(params_, "logit", 1, in, rng);
}

template <typename T>
Tensor<T> Discriminator<T>::forward(ad::Tape<T>& tape, const Tensor<T>& warped, const Tensor<T>& target) const {
    const std::size_t d = cfg_.extents.size();
    require_pair(warped, target, d, "Discriminator");
    for (std::size_t a = 0; a < d; ++a)
        if (warped.dim(2 + a) != cfg_.extents[a]) throw ShapeError("Discriminator: input grid differs from the configured one");

    const std::size_t B = warped.dim(0);
    Tensor<T> x = ad::concat(tape, {warped, target});
    std::size_t k = 0;
    for (std::size_t i = 0; i < cfg_.channels.size(); ++i, k += 2)
        x = ad::max_pool2(tape, ad::relu(tape, ad::conv(tape, x, p(k), p(k + 1), 1)));
    x = ad::reshape(tape, x, {B, flat_});
    for (std::size_t i = 0; i < cfg_.dense.size(); ++i, k += 2) x = ad::relu(tape, ad::dense(tape, x, p(k), p(k + 1)));
    x = ad::reshape(tape, ad::dense(tape, x, p(k), p(k + 1)), {B});
    return ad::clamp(tape, ad::sigmoid(tape, x), probability_floor, 1.0 - probability_floor);
}

// ---------------------------------------------------------------------------

template <typename T>
Adam<T>::Adam(ParamList<T>& params, AdamConfig cfg) : params_(&params), cfg_(cfg) {
    if (!(cfg.lr >= 0.0)) throw InvalidParameter("Adam: lr must be >= 0");
    for (const auto& p : params) {
        m_.emplace_back(p.value.size(), 0.0);
        v_.emplace_back(p.value.size(), 0.0);
    }
}

template <typename T>
void Adam<T>::step() {
    auto& params = *params_;
    for (const auto& p : params)
        for (T g : p.value.grad())
            if (!std::isfinite(g))
                throw DivergenceError("Adam: non-finite gradient for parameter " + p.name,
                                      static_cast<std::ptrdiff_t>(t_ + 1));
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto values = params[i].value.mutable_values();
        const auto grad = params[i].value.grad();
        auto& m = m_[i];
        auto& v = v_[i];
        for (std::size_t j = 0; j < values.size(); ++j) {
            const double g = grad[j];
            m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g;
            v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g * g;
            const double update = cfg_.lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + cfg_.eps);
            values[j] = static_cast<T>(values[j] - update);
        }
    }
}

// ---------------------------------------------------------------------------

namespace {

constexpr const char* checkpoint_magic = "LDDMMGAN-CHECKPOINT";

std::uint32_t to_little(std::uint32_t x) {
    if constexpr (std::endian::native == std::endian::big) return __builtin_bswap32(x);
    return x;
}

}  // namespace

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const ParamList<T>& params) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("save_checkpoint: cannot open " + path.string());
    out << checkpoint_magic << " 1\ntensors " << params.size() << "\n";
    for (const auto& p : params) {
        out << p.name << ' ' << p.value.rank();
        for (auto e : p.value.shape()) out << ' ' << e;
        out << '\n';
    }
    out << "end\n";
    for (const auto& p : params)
        for (T x : p.value.values()) {
            const std::uint32_t bits = to_little(std::bit_cast<std::uint32_t>(static_cast<float>(x)));
            out.write(reinterpret_cast<const char*>(&bits), sizeof bits);
        }
    if (!out) throw IoError("save_checkpoint: write failed for " + path.string());
}

template <typename T>
void load_checkpoint(const std::filesystem::path& path, ParamList<T>& params) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("load_checkpoint: cannot open " + path.string());
    const std::string where = "checkpoint " + path.string() + ": ";
    std::string line;
    auto next_line = [&](const char* field) {
        if (!std::getline(in, line)) throw ParseError(where + "truncated header, missing " + field);
        return std::istringstream(line);
    };

    {
        auto ls = next_line("magic");
        std::string magic;
        int version = 0;
        if (!(ls >> magic >> version) || magic != checkpoint_magic) throw ParseError(where + "bad magic line");
        if (version != 1) throw ParseError(where + "unsupported version " + std::to_string(version));
    }
    std::size_t count = 0;
    {
        auto ls = next_line("tensors");
        std::string key;
        if (!(ls >> key >> count) || key != "tensors") throw ParseError(where + "bad 'tensors' line");
    }
    if (count != params.size())
        throw ParseError(where + "holds " + std::to_string(count) + " tensors, model expects " +
                         std::to_string(params.size()));
    for (const auto& p : params) {
        auto ls = next_line("tensor entry");
        std::string name;
        std::size_t rank = 0;
        if (!(ls >> name >> rank)) throw ParseError(where + "bad tensor entry '" + line + "'");
        Shape shape(rank);
        for (auto& e : shape)
            if (!(ls >> e)) throw ParseError(where + "bad extents for tensor " + name);
        if (name != p.name) throw ParseError(where + "tensor '" + name + "' where '" + p.name + "' was expected");
        if (shape != p.value.shape()) throw ParseError(where + "shape mismatch for tensor " + name);
    }
    {
        auto ls = next_line("end");
        std::string key;
        if (!(ls >> key) || key != "end") throw ParseError(where + "missing 'end' line");
    }
    for (auto& p : params) {
        auto values = p.value.mutable_values();
        for (auto& x : values) {
            std::uint32_t bits = 0;
            if (!in.read(reinterpret_cast<char*>(&bits), sizeof bits))
                throw ParseError(where + "truncated payload in tensor " + p.name);
            x = static_cast<T>(std::bit_cast<float>(to_little(bits)));
        }
    }
    if (in.peek() != std::char_traits<char>::eof()) throw ParseError(where + "trailing bytes after payload");
}

template class Generator<float>;
template class Generator<double>;
template class Discriminator<float>;
template class Discriminator<double>;
template class Adam<float>;
template class Adam<double>;
template void save_checkpoint(const std::filesystem::path&, const ParamList<float>&);
template void save_checkpoint(const std::filesystem::path&, const ParamList<double>&);
template void load_checkpoint(const std::filesystem::path&, ParamList<float>&);
template void load_checkpoint(const std::filesystem::path&, ParamList<double>&);

}  // namespace lddmm::nets
