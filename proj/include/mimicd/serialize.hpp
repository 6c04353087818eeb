#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace mimicd {

// Exact text form of a double ("0x1.8p+1"); parse_hexfloat inverts it bitwise.
std::string hexfloat(double v);
double parse_hexfloat(std::string_view s);

nlohmann::json hex_array(std::span<const double> values);
std::vector<double> parse_hex_array(const nlohmann::json& j);

std::uint64_t fnv1a64(std::string_view bytes);
std::string hex64(std::uint64_t v);

// Stateless 64-bit mixer for deriving independent RNG seeds.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

// Writes `content` to `path`, creating parent directories.
void write_text_file(const std::string& path, const std::string& content);
std::string read_text_file(const std::string& path);

}  // namespace mimicd
