// SPDX-License-Identifier: Apache-2.0
//
// Line-oriented `key = value` documents. Blank lines and `#` comments are
// ignored; keys are unique.

#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

namespace pdwn::kv {

using Document = std::vector<std::pair<std::string, std::string>>;

std::string write(const Document& doc);

// Throws std::invalid_argument on malformed lines or duplicate keys.
std::map<std::string, std::string> parse(const std::string& text);

std::string join(const std::vector<int>& values);
std::vector<int> split_ints(const std::string& value, const std::string& key);
int to_int(const std::string& value, const std::string& key);
double to_double(const std::string& value, const std::string& key);
bool to_bool(const std::string& value, const std::string& key);
std::string from_bool(bool value);
// Shortest text that parses back to the same double.
std::string from_double(double value);
std::string join(const std::vector<double>& values);
std::vector<double> split_doubles(const std::string& value, const std::string& key);

}  // namespace pdwn::kv
