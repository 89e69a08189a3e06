#pragma once

// Raw little-endian float32 arrays, JSON documents and 8-bit PGM previews.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "fsmnet/error.hpp"

namespace fsmnet::io {

static_assert(std::endian::native == std::endian::little,
              "raw float files are written in host order; big-endian hosts are not supported");

namespace fs = std::filesystem;
using json = nlohmann::json;

template <typename T>
void write_f32(const fs::path& path, std::span<const T> values) {
  std::vector<float> buf(values.begin(), values.end());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(float)));
  if (!out) throw Error("write failed: " + path.string());
}

/// Reads exactly `count` floats; a size mismatch is reported with the file name.
inline std::vector<float> read_f32(const fs::path& path, std::size_t count) {
  std::error_code ec;
  const auto bytes = fs::file_size(path, ec);
  if (ec) throw LoadError("missing file " + path.string());
  if (bytes != count * sizeof(float)) {
    throw LoadError("file " + path.string() + " has " + std::to_string(bytes) +
                    " bytes, expected " + std::to_string(count * sizeof(float)));
  }
  std::vector<float> buf(count);
  std::ifstream in(path, std::ios::binary);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(bytes));
  if (!in) throw LoadError("read failed: " + path.string());
  return buf;
}

inline json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("missing file " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw LoadError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

inline void write_json(const fs::path& path, const json& doc) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out << doc.dump(2) << '\n';
}

/// 8-bit binary PGM; values are mapped linearly from [lo, hi] and clamped.
template <typename T>
void write_pgm(const fs::path& path, std::span<const T> values, int h, int w, double lo, double hi) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out << "P5\n" << w << ' ' << h << "\n255\n";
  const double span = hi > lo ? hi - lo : 1.0;
  std::vector<unsigned char> px(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double v = std::clamp((static_cast<double>(values[i]) - lo) / span, 0.0, 1.0);
    px[i] = static_cast<unsigned char>(std::lround(v * 255.0));
  }
  out.write(reinterpret_cast<const char*>(px.data()), static_cast<std::streamsize>(px.size()));
}

/// FNV-1a over a byte range, chained through `h`.
inline std::uint64_t fnv1a(std::span<const std::byte> bytes,
                           std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (std::byte b : bytes) {
    h ^= static_cast<std::uint64_t>(b);
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace fsmnet::io
