#include "agd/serialization.hpp"

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include "agd/common.hpp"

namespace agd {

namespace {

constexpr char kAlphabet[] =
    "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

std::uint64_t to_little_endian(std::uint64_t v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    std::uint64_t out = 0;
    for (int i = 0; i < 8; ++i) out = (out << 8) | ((v >> (8 * i)) & 0xff);
    return out;
  }
}

std::vector<unsigned char> to_bytes(std::span<const double> values) {
  std::vector<unsigned char> bytes(values.size() * 8);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const std::uint64_t le = to_little_endian(std::bit_cast<std::uint64_t>(values[i]));
    std::memcpy(bytes.data() + 8 * i, &le, 8);
  }
  return bytes;
}

std::vector<double> from_bytes(std::span<const unsigned char> bytes) {
  std::vector<double> values(bytes.size() / 8);
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::uint64_t le = 0;
    std::memcpy(&le, bytes.data() + 8 * i, 8);
    values[i] = std::bit_cast<double>(to_little_endian(le));
  }
  return values;
}

int decode_char(char c) {
  if (c >= 'A' && c <= 'Z') return c - 'A';
  if (c >= 'a' && c <= 'z') return c - 'a' + 26;
  if (c >= '0' && c <= '9') return c - '0' + 52;
  if (c == '+') return 62;
  if (c == '/') return 63;
  return -1;
}

}  // namespace

std::string encode_f64_base64(std::span<const double> values) {
  const auto bytes = to_bytes(values);
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 3 <= bytes.size(); i += 3) {
    const std::uint32_t n = (bytes[i] << 16) | (bytes[i + 1] << 8) | bytes[i + 2];
    out += kAlphabet[(n >> 18) & 63];
    out += kAlphabet[(n >> 12) & 63];
    out += kAlphabet[(n >> 6) & 63];
    out += kAlphabet[n & 63];
  }
  const std::size_t rest = bytes.size() - i;
  if (rest == 1) {
    const std::uint32_t n = bytes[i] << 16;
    out += kAlphabet[(n >> 18) & 63];
    out += kAlphabet[(n >> 12) & 63];
    out += "==";
  } else if (rest == 2) {
    const std::uint32_t n = (bytes[i] << 16) | (bytes[i + 1] << 8);
    out += kAlphabet[(n >> 18) & 63];
    out += kAlphabet[(n >> 12) & 63];
    out += kAlphabet[(n >> 6) & 63];
    out += '=';
  }
  return out;
}

std::vector<double> decode_f64_base64(std::string_view text) {
  require(text.size() % 4 == 0, ErrorKind::Data, "base64 payload length is not a multiple of 4");
  std::vector<unsigned char> bytes;
  bytes.reserve(text.size() / 4 * 3);
  for (std::size_t i = 0; i < text.size(); i += 4) {
    std::array<int, 4> q{};
    int pad = 0;
    for (int k = 0; k < 4; ++k) {
      const char c = text[i + k];
      if (c == '=' && i + 4 == text.size() && k >= 2) {
        q[k] = 0;
        ++pad;
      } else {
        if (pad) fail(ErrorKind::Data, "base64 padding in the middle of the payload");
        q[k] = decode_char(c);
        if (q[k] < 0) fail(ErrorKind::Data, "invalid base64 character");
      }
    }
    const std::uint32_t n = (q[0] << 18) | (q[1] << 12) | (q[2] << 6) | q[3];
    bytes.push_back(static_cast<unsigned char>((n >> 16) & 0xff));
    if (pad < 2) bytes.push_back(static_cast<unsigned char>((n >> 8) & 0xff));
    if (pad < 1) bytes.push_back(static_cast<unsigned char>(n & 0xff));
  }
  require(bytes.size() % 8 == 0, ErrorKind::Data,
          "base64 payload is not a whole number of 64-bit floats");
  return from_bytes(bytes);
}

void write_f64_raw(const std::filesystem::path& path, std::span<const double> values) {
  const auto bytes = to_bytes(values);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorKind::Data, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  require(static_cast<bool>(out), ErrorKind::Data, "short write to " + path.string());
}

std::vector<double> read_f64_raw(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::Data, "cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  require(bytes.size() % 8 == 0, ErrorKind::Data,
          path.string() + ": size is not a multiple of 8 bytes");
  return from_bytes(bytes);
}

Json tensor_to_json(const Tensor& t) {
  Json j;
  j["shape"] = t.shape();
  j["data"] = encode_f64_base64(t.values());
  return j;
}

Tensor tensor_from_json(const Json& j) {
  try {
    auto shape = j.at("shape").get<Shape>();
    auto data = decode_f64_base64(j.at("data").get<std::string>());
    if (data.size() != element_count(shape)) {
      fail(ErrorKind::Data, "tensor payload has " + std::to_string(data.size()) +
                                " values, shape " + shape_string(shape) + " needs " +
                                std::to_string(element_count(shape)));
    }
    return Tensor(std::move(shape), std::move(data));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Data, std::string("malformed tensor record: ") + e.what());
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::Data) throw;
    fail(ErrorKind::Data, std::string("malformed tensor record: ") + e.what());
  }
}

Json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Data, "cannot open " + path.string());
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    fail(ErrorKind::Data, path.string() + ": malformed JSON: " + e.what());
  }
}

void write_text_file(const std::filesystem::path& path, std::string_view text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorKind::Data, "cannot write " + path.string());
  out << text;
  require(static_cast<bool>(out), ErrorKind::Data, "short write to " + path.string());
}

void write_json_file(const std::filesystem::path& path, const Json& doc) {
  write_text_file(path, doc.dump(2) + "\n");
}

std::string format_double(double v) {
  // Round-trip representation; identical inputs give identical text.
  std::ostringstream out;
  out.imbue(std::locale::classic());
  out.precision(17);
  out << v;
  return out.str();
}

}  // namespace agd
