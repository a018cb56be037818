// Copyright (C) 2026 the lmlab authors
// SPDX-License-Identifier: Apache-2.0
//
#include "lmlab/io/config_file.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace lmlab {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

}  // namespace

RunConfig RunConfig::parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_text(buf.str(), std::filesystem::path(path).parent_path().string());
}

RunConfig RunConfig::parse_text(const std::string& text, const std::string& dir) {
    RunConfig cfg;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.rfind("include ", 0) == 0) {
            const std::string rel = trim(line.substr(8));
            const auto inc_path = std::filesystem::path(dir) / rel;
            auto included = parse_file(inc_path.string());
            for (const auto& [k, v] : included.values_) cfg.values_[k] = v;
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) +
                              ": expected 'key = value', got '" + line + "'");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty()) throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
        cfg.values_[key] = value;
    }
    return cfg;
}

std::string RunConfig::get_string(const std::string& key,
                                  std::optional<std::string> def) const {
    auto it = values_.find(key);
    if (it != values_.end()) return it->second;
    if (def) return *def;
    throw ConfigError("missing config key '" + key + "'");
}

int64_t RunConfig::get_int(const std::string& key, std::optional<int64_t> def) const {
    auto it = values_.find(key);
    if (it == values_.end()) {
        if (def) return *def;
        throw ConfigError("missing config key '" + key + "'");
    }
    try {
        size_t pos = 0;
        const int64_t v = std::stoll(it->second, &pos);
        if (pos != it->second.size()) throw std::invalid_argument("trailing");
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': '" + it->second + "' is not an integer");
    }
}

double RunConfig::get_double(const std::string& key, std::optional<double> def) const {
    auto it = values_.find(key);
    if (it == values_.end()) {
        if (def) return *def;
        throw ConfigError("missing config key '" + key + "'");
    }
    try {
        size_t pos = 0;
        const double v = std::stod(it->second, &pos);
        if (pos != it->second.size()) throw std::invalid_argument("trailing");
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': '" + it->second + "' is not a number");
    }
}

bool RunConfig::get_bool(const std::string& key, std::optional<bool> def) const {
    auto it = values_.find(key);
    if (it == values_.end()) {
        if (def) return *def;
        throw ConfigError("missing config key '" + key + "'");
    }
    if (it->second == "true" || it->second == "1") return true;
    if (it->second == "false" || it->second == "0") return false;
    throw ConfigError("config key '" + key + "': '" + it->second + "' is not a boolean");
}

void RunConfig::reject_unknown(const std::set<std::string>& known) const {
    for (const auto& [k, v] : values_)
        if (!known.count(k))
            throw ConfigError("unknown config key '" + k + "'");
}

std::string RunConfig::resolved_text() const {
    std::ostringstream os;
    for (const auto& [k, v] : values_) os << k << " = " << v << "\n";
    return os.str();
}

}  // namespace lmlab
