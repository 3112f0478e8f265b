// SPDX-License-Identifier: Apache-2.0

#include "pdwn/kv.hpp"

#include <charconv>
#include <sstream>
#include <stdexcept>

#include "pdwn/tensor.hpp"

namespace pdwn::kv {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

}  // namespace

std::string write(const Document& doc) {
    std::ostringstream out;
    for (const auto& [k, v] : doc) out << k << " = " << v << '\n';
    return out.str();
}

std::map<std::string, std::string> parse(const std::string& text) {
    std::map<std::string, std::string> out;
    std::istringstream in(text);
    std::string line;
    int number = 0;
    while (std::getline(in, line)) {
        ++number;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        const auto eq = t.find('=');
        PDWN_CHECK(eq != std::string::npos, "line " << number << ": expected key = value");
        const std::string key = trim(t.substr(0, eq));
        PDWN_CHECK(!key.empty(), "line " << number << ": empty key");
        PDWN_CHECK(out.emplace(key, trim(t.substr(eq + 1))).second, "line " << number << ": duplicate key " << key);
    }
    return out;
}

std::string join(const std::vector<int>& values) {
    std::string s;
    for (std::size_t i = 0; i < values.size(); ++i) s += (i ? "," : "") + std::to_string(values[i]);
    return s;
}

int to_int(const std::string& value, const std::string& key) {
    int out = 0;
    const auto t = trim(value);
    const auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), out);
    PDWN_CHECK(ec == std::errc() && p == t.data() + t.size() && !t.empty(), key << ": not an integer: '" << value << "'");
    return out;
}

std::vector<int> split_ints(const std::string& value, const std::string& key) {
    std::vector<int> out;
    std::istringstream in(value);
    std::string item;
    while (std::getline(in, item, ',')) out.push_back(to_int(item, key));
    return out;
}

double to_double(const std::string& value, const std::string& key) {
    std::size_t used = 0;
    double out = 0;
    try {
        out = std::stod(value, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    PDWN_CHECK(used == value.size() && !value.empty(), key << ": not a number: '" << value << "'");
    return out;
}

bool to_bool(const std::string& value, const std::string& key) {
    if (value == "true") return true;
    if (value == "false") return false;
    PDWN_CHECK(false, key << ": expected true or false, got '" << value << "'");
    return false;
}

std::string from_bool(bool value) { return value ? "true" : "false"; }

std::string from_double(double value) {
    char buf[64];
    const auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), value);
    return std::string(buf, p);
}

std::string join(const std::vector<double>& values) {
    std::string s;
    for (std::size_t i = 0; i < values.size(); ++i) s += (i ? "," : "") + from_double(values[i]);
    return s;
}

std::vector<double> split_doubles(const std::string& value, const std::string& key) {
    std::vector<double> out;
    std::istringstream in(value);
    std::string item;
    while (std::getline(in, item, ',')) out.push_back(to_double(trim(item), key));
    return out;
}

}  // namespace pdwn::kv
