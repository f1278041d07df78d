#pragma once

// key=value run descriptions: written next to every CLI output and read
// back by `register` / `evaluate` to rebuild a trained model.

#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "lddmm/baseline.hpp"
#include "lddmm/gan.hpp"

namespace lddmm::runcfg {

using KeyValues = std::vector<std::pair<std::string, std::string>>;

/// One "key=value" line per entry, in order.
void write(const std::filesystem::path& path, const KeyValues& kv);
/// ParseError on a line without '=' or a repeated key; IoError if unreadable.
std::map<std::string, std::string> read(const std::filesystem::path& path);

std::string format(double x);

KeyValues describe(const gan::GanConfig& cfg);
KeyValues describe(const baseline::BaselineConfig& cfg);

/// Inverse of describe(GanConfig); ParseError on missing or malformed keys.
gan::GanConfig gan_config(const std::map<std::string, std::string>& kv);

std::string parameterization_name(energy::Parameterization p);
energy::Parameterization parse_parameterization(const std::string& s);

}  // namespace lddmm::runcfg
