#pragma once

// Small text helpers shared by the CSV, key=value and checkpoint formats.

#include <cstddef>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace strokenet {

std::string trim(std::string_view s);
std::vector<std::string> split(std::string_view s, char sep);

std::size_t parse_size(const std::string& s);
double parse_double(const std::string& s);
bool parse_bool(const std::string& s);
// Attempts a full-string numeric parse; false for "NA", empty or non-numeric text.
bool try_parse_double(const std::string& s, double& out);

std::vector<std::size_t> parse_sizes(const std::string& s, char sep);
std::string join_sizes(const std::vector<std::size_t>& values, char sep);
std::vector<double> parse_doubles(const std::string& s, char sep);
std::string join_doubles(const std::vector<double>& values, char sep);

// Shortest representation that parses back to the identical double.
std::string format_double(double v);

using KeyValues = std::map<std::string, std::string>;

// Flat key=value lines; '#' starts a comment; blank lines ignored.
KeyValues parse_key_values(std::string_view text);
KeyValues read_key_value_file(const std::filesystem::path& path);
std::string format_key_values(const KeyValues& kv);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view text);

}  // namespace strokenet
