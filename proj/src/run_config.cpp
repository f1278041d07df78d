#include "lddmm/run_config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "lddmm/error.hpp"

namespace lddmm::runcfg {

namespace {

const std::string& need(const std::map<std::string, std::string>& kv, const std::string& key) {
    const auto it = kv.find(key);
    if (it == kv.end()) throw ParseError("run config: missing key '" + key + "'");
    return it->second;
}

double number(const std::map<std::string, std::string>& kv, const std::string& key) {
    const auto& s = need(kv, key);
    try {
        std::size_t used = 0;
        const double x = std::stod(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return x;
    } catch (const std::exception&) {
        throw ParseError("run config: '" + key + "' is not a number: " + s);
    }
}

std::size_t count(const std::map<std::string, std::string>& kv, const std::string& key) {
    const auto& s = need(kv, key);
    std::size_t x = 0;
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), x);
    if (ec != std::errc() || p != s.data() + s.size()) throw ParseError("run config: '" + key + "' is not a count: " + s);
    return x;
}

std::vector<std::size_t> counts(const std::map<std::string, std::string>& kv, const std::string& key) {
    std::vector<std::size_t> out;
    std::stringstream ss(need(kv, key));
    std::string item;
    while (std::getline(ss, item, ',')) {
        std::size_t x = 0;
        const auto [p, ec] = std::from_chars(item.data(), item.data() + item.size(), x);
        if (ec != std::errc() || p != item.data() + item.size())
            throw ParseError("run config: bad list entry in '" + key + "': " + item);
        out.push_back(x);
    }
    return out;
}

std::string join(const std::vector<std::size_t>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
    return s;
}

std::string exponential_name(diffeo::Exponential e) {
    return e == diffeo::Exponential::scaling_squaring ? "scaling-squaring" : "euler";
}

}  // namespace

void write(const std::filesystem::path& path, const KeyValues& kv) {
    std::ofstream out(path);
    if (!out) throw IoError("run config: cannot open " + path.string());
    for (const auto& [k, v] : kv) out << k << '=' << v << '\n';
    if (!out) throw IoError("run config: write failed for " + path.string());
}

std::map<std::string, std::string> read(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("run config: cannot open " + path.string());
    std::map<std::string, std::string> kv;
    std::string line;
    std::size_t no = 0;
    while (std::getline(in, line)) {
        ++no;
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos || eq == 0)
            throw ParseError("run config: line " + std::to_string(no) + " is not key=value");
        if (!kv.emplace(line.substr(0, eq), line.substr(eq + 1)).second)
            throw ParseError("run config: repeated key '" + line.substr(0, eq) + "'");
    }
    return kv;
}

std::string format(double x) {
    char buf[40];
    const auto [end, ec] = std::to_chars(buf, buf + sizeof buf, x);  // shortest round-trip form
    return std::string(buf, end);
}

std::string parameterization_name(energy::Parameterization p) {
    return p == energy::Parameterization::stationary ? "stationary" : "epdiff";
}

energy::Parameterization parse_parameterization(const std::string& s) {
    if (s == "stationary") return energy::Parameterization::stationary;
    if (s == "epdiff") return energy::Parameterization::epdiff;
    throw ParseError("run config: unknown parameterization '" + s + "'");
}

KeyValues describe(const gan::GanConfig& c) {
    return {
        {"parameterization", parameterization_name(c.energy.parameterization)},
        {"beta", format(c.beta)},
        {"lambda", format(c.lambda)},
        {"sigma2", format(c.energy.sigma2)},
        {"alpha", format(c.alpha)},
        {"s", format(c.s)},
        {"time_steps", std::to_string(c.energy.integration.time_steps)},
        {"squarings", std::to_string(c.energy.integration.squarings)},
        {"exponential", exponential_name(c.energy.integration.exponential)},
        {"lr_g", format(c.lr_g)},
        {"lr_d", format(c.lr_d)},
        {"epochs", std::to_string(c.epochs)},
        {"batch_size", std::to_string(c.batch_size)},
        {"seed", std::to_string(c.seed)},
        {"max_consecutive_skips", std::to_string(c.max_consecutive_skips)},
        {"smooth_velocity", c.smooth_velocity ? "1" : "0"},
        {"generator_dims", std::to_string(c.generator.dims)},
        {"generator_channels", join(c.generator.channels)},
        {"generator_output_gain", format(c.generator.output_gain)},
        {"generator_zero_output", c.generator.zero_output ? "1" : "0"},
        {"discriminator_channels", join(c.discriminator.channels)},
        {"discriminator_dense", join(c.discriminator.dense)},
    };
}

KeyValues describe(const baseline::BaselineConfig& c) {
    return {
        {"parameterization", parameterization_name(c.energy.parameterization)},
        {"sigma2", format(c.energy.sigma2)},
        {"alpha", format(c.alpha)},
        {"s", format(c.s)},
        {"time_steps", std::to_string(c.energy.integration.time_steps)},
        {"squarings", std::to_string(c.energy.integration.squarings)},
        {"exponential", exponential_name(c.energy.integration.exponential)},
        {"iterations", std::to_string(c.iterations)},
        {"lr", format(c.lr)},
        {"max_consecutive_failures", std::to_string(c.max_consecutive_failures)},
    };
}

gan::GanConfig gan_config(const std::map<std::string, std::string>& kv) {
    gan::GanConfig c;
    c.energy.parameterization = parse_parameterization(need(kv, "parameterization"));
    c.beta = number(kv, "beta");
    c.lambda = number(kv, "lambda");
    c.energy.sigma2 = number(kv, "sigma2");
    c.alpha = number(kv, "alpha");
    c.s = number(kv, "s");
    c.energy.integration.time_steps = count(kv, "time_steps");
    c.energy.integration.squarings = count(kv, "squarings");
    const auto& e = need(kv, "exponential");
    if (e == "scaling-squaring") c.energy.integration.exponential = diffeo::Exponential::scaling_squaring;
    else if (e == "euler") c.energy.integration.exponential = diffeo::Exponential::euler;
    else throw ParseError("run config: unknown exponential '" + e + "'");
    c.lr_g = number(kv, "lr_g");
    c.lr_d = number(kv, "lr_d");
    c.epochs = count(kv, "epochs");
    c.batch_size = count(kv, "batch_size");
    c.seed = count(kv, "seed");
    c.max_consecutive_skips = count(kv, "max_consecutive_skips");
    c.smooth_velocity = count(kv, "smooth_velocity") != 0;
    c.generator.dims = count(kv, "generator_dims");
    c.generator.channels = counts(kv, "generator_channels");
    c.generator.output_gain = number(kv, "generator_output_gain");
    c.generator.zero_output = count(kv, "generator_zero_output") != 0;
    c.discriminator.channels = counts(kv, "discriminator_channels");
    c.discriminator.dense = counts(kv, "discriminator_dense");
    return c;
}

}  // namespace lddmm::runcfg
