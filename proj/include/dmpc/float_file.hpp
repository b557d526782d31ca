#pragma once

// Container shared by datasets and checkpoints: a text header of
// `key value` lines terminated by `end`, followed by a little-endian float32
// payload whose length is declared in the header.
//
//   DMPC <kind> <version>
//   endian little
//   <key> <value...>
//   payload_floats <n>
//   end
//   <n * 4 bytes>

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "dmpc/error.hpp"

namespace dmpc {

inline constexpr int kFileFormatVersion = 1;

struct FloatFile {
  std::string kind;
  std::vector<std::pair<std::string, std::string>> fields;
  std::vector<float> payload;

  void set(const std::string& key, const std::string& value) {
    for (auto& [k, v] : fields)
      if (k == key) {
        v = value;
        return;
      }
    fields.emplace_back(key, value);
  }

  [[nodiscard]] const std::string* find(const std::string& key) const {
    for (const auto& [k, v] : fields)
      if (k == key) return &v;
    return nullptr;
  }

  [[nodiscard]] const std::string& get(const std::string& key) const {
    if (const auto* v = find(key)) return *v;
    throw ParseError(ParseError::Kind::kMalformedHeader, "missing header field '" + key + "'");
  }

  [[nodiscard]] long long get_int(const std::string& key) const {
    const auto& v = get(key);
    try {
      std::size_t used = 0;
      long long x = std::stoll(v, &used);
      if (used != v.size()) throw std::invalid_argument(v);
      return x;
    } catch (const std::exception&) {
      throw ParseError(ParseError::Kind::kMalformedHeader, "field '" + key + "' is not an integer: " + v);
    }
  }

  [[nodiscard]] double get_double(const std::string& key) const {
    const auto& v = get(key);
    try {
      std::size_t used = 0;
      double x = std::stod(v, &used);
      if (used != v.size()) throw std::invalid_argument(v);
      return x;
    } catch (const std::exception&) {
      throw ParseError(ParseError::Kind::kMalformedHeader, "field '" + key + "' is not a number: " + v);
    }
  }
};

inline std::string format_double(double x) {
  std::ostringstream os;
  os.precision(17);
  os << x;
  return os.str();
}

inline void write_float_file(const std::string& path, const FloatFile& file) {
  static_assert(std::endian::native == std::endian::little, "payload writer assumes little-endian host");
  std::ostringstream header;
  header << "DMPC " << file.kind << ' ' << kFileFormatVersion << '\n';
  header << "endian little\n";
  for (const auto& [k, v] : file.fields) {
    if (k.empty() || k.find_first_of(" \n") != std::string::npos || v.find('\n') != std::string::npos)
      throw InvalidInput("header field not representable: " + k);
    header << k << ' ' << v << '\n';
  }
  header << "payload_floats " << file.payload.size() << '\n';
  header << "end\n";
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ParseError(ParseError::Kind::kIo, "cannot open for writing: " + path);
  const std::string h = header.str();
  out.write(h.data(), static_cast<std::streamsize>(h.size()));
  out.write(reinterpret_cast<const char*>(file.payload.data()),
            static_cast<std::streamsize>(file.payload.size() * sizeof(float)));
  if (!out) throw ParseError(ParseError::Kind::kIo, "write failed: " + path);
}

inline FloatFile read_float_file(const std::string& path, const std::string& expected_kind) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError(ParseError::Kind::kIo, "cannot open: " + path);

  std::string line;
  if (!std::getline(in, line)) throw ParseError(ParseError::Kind::kBadMagic, "empty file: " + path);
  std::istringstream first(line);
  std::string magic, kind;
  int version = -1;
  first >> magic >> kind >> version;
  if (magic != "DMPC") throw ParseError(ParseError::Kind::kBadMagic, "bad magic in " + path);
  if (!first || version < 0) throw ParseError(ParseError::Kind::kMalformedHeader, "bad first header line");
  if (version != kFileFormatVersion)
    throw ParseError(ParseError::Kind::kVersionMismatch,
                     "file version " + std::to_string(version) + " != " + std::to_string(kFileFormatVersion));
  if (kind != expected_kind)
    throw ParseError(ParseError::Kind::kMalformedHeader, "expected a " + expected_kind + " file, got " + kind);

  FloatFile file;
  file.kind = kind;
  bool ended = false;
  while (std::getline(in, line)) {
    if (line == "end") {
      ended = true;
      break;
    }
    const auto space = line.find(' ');
    if (space == std::string::npos || space == 0)
      throw ParseError(ParseError::Kind::kMalformedHeader, "malformed header line: " + line);
    file.fields.emplace_back(line.substr(0, space), line.substr(space + 1));
  }
  if (!ended) throw ParseError(ParseError::Kind::kMalformedHeader, "header not terminated");
  if (file.get("endian") != "little") throw ParseError(ParseError::Kind::kMalformedHeader, "unsupported endianness");

  const long long n = file.get_int("payload_floats");
  if (n < 0) throw ParseError(ParseError::Kind::kMalformedHeader, "negative payload length");
  file.payload.resize(static_cast<std::size_t>(n));
  in.read(reinterpret_cast<char*>(file.payload.data()), static_cast<std::streamsize>(n * sizeof(float)));
  if (in.gcount() != static_cast<std::streamsize>(n * sizeof(float)))
    throw ParseError(ParseError::Kind::kTruncated, "payload truncated in " + path);
  if (in.peek() != std::char_traits<char>::eof())
    throw ParseError(ParseError::Kind::kMalformedHeader, "trailing bytes after payload in " + path);
  // the two header bookkeeping fields are regenerated on write
  std::erase_if(file.fields, [](const auto& kv) { return kv.first == "endian" || kv.first == "payload_floats"; });
  return file;
}

/// Sequential reader over a payload with bounds checking.
class PayloadReader {
 public:
  explicit PayloadReader(const std::vector<float>& payload) : payload_(payload) {}

  float next() {
    if (pos_ >= payload_.size()) throw ParseError(ParseError::Kind::kTruncated, "payload shorter than header implies");
    return payload_[pos_++];
  }

  [[nodiscard]] bool done() const { return pos_ == payload_.size(); }

 private:
  const std::vector<float>& payload_;
  std::size_t pos_ = 0;
};

}  // namespace dmpc
