#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "agd/tensor.hpp"

namespace agd {

using Json = nlohmann::ordered_json;

/// Base64 (RFC 4648, padded) of the little-endian bytes of `values`.
std::string encode_f64_base64(std::span<const double> values);
/// Inverse of encode_f64_base64; throws a data error on malformed input.
std::vector<double> decode_f64_base64(std::string_view text);

/// Writes little-endian 64-bit floats.
void write_f64_raw(const std::filesystem::path& path, std::span<const double> values);
std::vector<double> read_f64_raw(const std::filesystem::path& path);

Json tensor_to_json(const Tensor& t);
Tensor tensor_from_json(const Json& j);

/// Parses a JSON file; missing or malformed files raise data errors that name
/// the path.
Json read_json_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view text);
/// Pretty-printed with a trailing newline.
void write_json_file(const std::filesystem::path& path, const Json& doc);

/// Deterministic textual form of a double for CSV output.
std::string format_double(double v);

}  // namespace agd
