#pragma once

// NIfTI-1 single-file (.nii / .nii.gz) and raw + sidecar volume I/O.
//
// Raw sidecar format: `<stem>.raw` holds the x-fastest little-endian payload,
// `<stem>.meta` is a text file of `key = value` lines ('#' starts a comment):
//
//   dims      = nx ny nz        (required)
//   dtype     = uint8 | int16 | float32   (required)
//   spacing   = sx sy sz        (default 1 1 1)
//   origin    = ox oy oz        (default 0 0 0)
//   scale     = s               (default 1; 0 is read as 1)
//   intercept = b               (default 0)
//   data_file = name.raw        (default <stem>.raw, relative to the .meta)

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <zlib.h>

#include "airwayseg/error.hpp"
#include "airwayseg/grid.hpp"

namespace airwayseg {

static_assert(std::endian::native == std::endian::little, "volume I/O assumes a little-endian host");

enum class DataType : std::int16_t { uint8 = 2, int16 = 4, float32 = 16 };

inline std::size_t bytes_per_voxel(DataType t) {
  switch (t) {
    case DataType::uint8: return 1;
    case DataType::int16: return 2;
    case DataType::float32: return 4;
  }
  return 0;
}

inline std::string to_string(DataType t) {
  switch (t) {
    case DataType::uint8: return "uint8";
    case DataType::int16: return "int16";
    case DataType::float32: return "float32";
  }
  return "?";
}

inline DataType parse_datatype_name(const std::string& s) {
  if (s == "uint8") return DataType::uint8;
  if (s == "int16") return DataType::int16;
  if (s == "float32") return DataType::float32;
  throw Error(ErrorCode::unsupported_dtype, "unsupported dtype '" + s + "' (expected uint8, int16 or float32)");
}

namespace io_detail {

using Bytes = std::vector<std::uint8_t>;
namespace fs = std::filesystem;

inline constexpr std::size_t kHeaderSize = 348;
inline constexpr std::size_t kVoxOffset = 352;

inline Bytes read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io, "cannot open '" + path.string() + "' for reading");
  Bytes bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw Error(ErrorCode::io, "read failure on '" + path.string() + "'");
  return bytes;
}

/// Writes through a sibling temp file and renames, so readers never observe
/// a partially written file.
inline void write_file_atomic(const fs::path& path, const Bytes& bytes) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::io, "cannot open '" + path.string() + "' for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(ErrorCode::io, "write failure on '" + path.string() + "'");
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw Error(ErrorCode::io, "cannot move temp file onto '" + path.string() + "'");
  }
}

inline bool is_gzip(const Bytes& b) { return b.size() >= 2 && b[0] == 0x1F && b[1] == 0x8B; }

inline Bytes gunzip(const Bytes& in, const std::string& name) {
  z_stream zs{};
  if (inflateInit2(&zs, 16 + MAX_WBITS) != Z_OK) throw Error(ErrorCode::io, "zlib init failed");
  Bytes out;
  out.resize(std::max<std::size_t>(in.size() * 4, 4096));
  zs.next_in = const_cast<Bytef*>(in.data());
  zs.avail_in = static_cast<uInt>(in.size());
  int rc = Z_OK;
  while (rc != Z_STREAM_END) {
    if (zs.total_out == out.size()) out.resize(out.size() * 2);
    zs.next_out = out.data() + zs.total_out;
    zs.avail_out = static_cast<uInt>(out.size() - zs.total_out);
    rc = inflate(&zs, Z_NO_FLUSH);
    if (rc == Z_BUF_ERROR && zs.avail_in == 0) break;
    if (rc != Z_OK && rc != Z_STREAM_END && rc != Z_BUF_ERROR) {
      inflateEnd(&zs);
      throw Error(ErrorCode::format, "corrupt gzip stream in '" + name + "'");
    }
  }
  const bool complete = rc == Z_STREAM_END;
  out.resize(zs.total_out);
  inflateEnd(&zs);
  if (!complete) throw Error(ErrorCode::format, "truncated gzip stream in '" + name + "'");
  return out;
}

inline Bytes gzip(const Bytes& in) {
  z_stream zs{};
  if (deflateInit2(&zs, Z_DEFAULT_COMPRESSION, Z_DEFLATED, 16 + MAX_WBITS, 8, Z_DEFAULT_STRATEGY) != Z_OK) {
    throw Error(ErrorCode::io, "zlib init failed");
  }
  Bytes out(deflateBound(&zs, static_cast<uLong>(in.size())) + 32);
  zs.next_in = const_cast<Bytef*>(in.data());
  zs.avail_in = static_cast<uInt>(in.size());
  zs.next_out = out.data();
  zs.avail_out = static_cast<uInt>(out.size());
  const int rc = deflate(&zs, Z_FINISH);
  deflateEnd(&zs);
  if (rc != Z_STREAM_END) throw Error(ErrorCode::io, "gzip compression failed");
  out.resize(zs.total_out);
  return out;
}

template <class T>
T get(const Bytes& b, std::size_t off) {
  T v;
  std::memcpy(&v, b.data() + off, sizeof(T));
  return v;
}

template <class T>
void put(Bytes& b, std::size_t off, T v) {
  std::memcpy(b.data() + off, &v, sizeof(T));
}

inline bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

struct Decoded {
  Geometry geometry;
  DataType dtype = DataType::float32;
  double slope = 1.0;
  double intercept = 0.0;
  const std::uint8_t* payload = nullptr;
  std::size_t payload_size = 0;
};

inline std::vector<float> convert_payload(const Decoded& d, const std::string& name) {
  const std::size_t n = d.geometry.voxel_count();
  const std::size_t expected = n * bytes_per_voxel(d.dtype);
  if (d.payload_size != expected) {
    throw Error(ErrorCode::size_mismatch, "'" + name + "': header describes " + std::to_string(expected) +
                                              " payload bytes but file holds " + std::to_string(d.payload_size));
  }
  std::vector<float> out(n);
  const bool scaled = d.slope != 1.0 || d.intercept != 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double v = 0.0;
    switch (d.dtype) {
      case DataType::uint8: v = d.payload[i]; break;
      case DataType::int16: {
        std::int16_t s;
        std::memcpy(&s, d.payload + 2 * i, 2);
        v = s;
        break;
      }
      case DataType::float32: {
        float f;
        std::memcpy(&f, d.payload + 4 * i, 4);
        v = f;
        break;
      }
    }
    if (scaled) v = v * d.slope + d.intercept;
    if (!std::isfinite(v)) {
      throw Error(ErrorCode::format, "'" + name + "': non-finite voxel value at " + to_string(d.geometry.coords(i)));
    }
    out[i] = static_cast<float>(v);
  }
  return out;
}

inline Decoded decode_nifti(const Bytes& b, const std::string& name) {
  if (b.size() < kHeaderSize) throw Error(ErrorCode::format, "'" + name + "' is too short for a NIfTI-1 header");
  const auto sizeof_hdr = get<std::int32_t>(b, 0);
  if (sizeof_hdr != 348) {
    if (__builtin_bswap32(static_cast<std::uint32_t>(sizeof_hdr)) == 348u) {
      throw Error(ErrorCode::format, "'" + name + "' is big-endian NIfTI, which is not supported");
    }
    throw Error(ErrorCode::format, "'" + name + "' is not a NIfTI-1 file (sizeof_hdr != 348)");
  }
  if (std::memcmp(b.data() + 344, "n+1\0", 4) != 0) {
    throw Error(ErrorCode::format, "'" + name + "' lacks the single-file NIfTI magic \"n+1\"");
  }
  Decoded d;
  const auto ndim = get<std::int16_t>(b, 40);
  if (ndim < 1 || ndim > 7) throw Error(ErrorCode::format, "'" + name + "': invalid dim[0]");
  for (int a = 0; a < 3; ++a) {
    const std::int16_t n = a < ndim ? get<std::int16_t>(b, 42 + 2 * a) : std::int16_t{1};
    if (n < 1) throw Error(ErrorCode::format, "'" + name + "': non-positive dimension");
    d.geometry.dims[a] = static_cast<std::size_t>(n);
  }
  for (int a = 3; a < ndim; ++a) {
    if (get<std::int16_t>(b, 42 + 2 * a) > 1) {
      throw Error(ErrorCode::format, "'" + name + "': volumes with more than 3 dimensions are not supported");
    }
  }
  const auto dtype = get<std::int16_t>(b, 70);
  if (dtype != 2 && dtype != 4 && dtype != 16) {
    throw Error(ErrorCode::unsupported_dtype,
                "'" + name + "': NIfTI datatype " + std::to_string(dtype) + " is not uint8, int16 or float32");
  }
  d.dtype = static_cast<DataType>(dtype);
  for (int a = 0; a < 3; ++a) {
    d.geometry.spacing[a] = get<float>(b, 80 + 4 * a);
    if (!(d.geometry.spacing[a] > 0.0)) {
      throw Error(ErrorCode::format, "'" + name + "': pixdim must be positive");
    }
  }
  const float vox_offset = get<float>(b, 108);
  const float slope = get<float>(b, 112);
  const float inter = get<float>(b, 116);
  d.slope = (slope == 0.0f || !std::isfinite(slope)) ? 1.0 : slope;
  d.intercept = std::isfinite(inter) ? inter : 0.0;

  const auto qform_code = get<std::int16_t>(b, 252);
  const auto sform_code = get<std::int16_t>(b, 254);
  if (sform_code > 0) {
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) {
        const double v = get<float>(b, 280 + 16 * r + 4 * c);
        if (r == c) {
          if (!(v > 0.0) || std::abs(v - d.geometry.spacing[r]) > 1e-4 * d.geometry.spacing[r]) {
            throw Error(ErrorCode::orientation,
                        "'" + name + "': sform is not an axis-aligned positive-spacing affine");
          }
        } else if (std::abs(v) > 1e-6) {
          throw Error(ErrorCode::orientation, "'" + name + "': rotated/sheared sform is not supported");
        }
      }
      d.geometry.origin[r] = get<float>(b, 280 + 16 * r + 12);
    }
  } else if (qform_code > 0) {
    const float qb = get<float>(b, 256), qc = get<float>(b, 260), qd = get<float>(b, 264);
    const float qfac = get<float>(b, 76);
    if (std::abs(qb) > 1e-6f || std::abs(qc) > 1e-6f || std::abs(qd) > 1e-6f || qfac < 0.0f) {
      throw Error(ErrorCode::orientation, "'" + name + "': rotated or flipped qform is not supported");
    }
    for (int a = 0; a < 3; ++a) d.geometry.origin[a] = get<float>(b, 268 + 4 * a);
  }

  const auto off = static_cast<std::size_t>(vox_offset < static_cast<float>(kHeaderSize) ? kHeaderSize : vox_offset);
  if (off > b.size()) throw Error(ErrorCode::size_mismatch, "'" + name + "': vox_offset beyond end of file");
  d.payload = b.data() + off;
  d.payload_size = b.size() - off;
  return d;
}

inline Bytes encode_nifti(const Geometry& g, DataType dtype, const Bytes& payload) {
  for (int a = 0; a < 3; ++a) {
    if (g.dims[a] > 32767) {
      throw Error(ErrorCode::geometry, "NIfTI-1 cannot store an axis of length " + std::to_string(g.dims[a]));
    }
  }
  Bytes b(kVoxOffset, 0);
  put<std::int32_t>(b, 0, 348);
  put<std::int8_t>(b, 38, 'r');
  put<std::int16_t>(b, 40, 3);
  for (int a = 0; a < 3; ++a) put<std::int16_t>(b, 42 + 2 * a, static_cast<std::int16_t>(g.dims[a]));
  for (int a = 3; a < 7; ++a) put<std::int16_t>(b, 42 + 2 * a, 1);
  put<std::int16_t>(b, 70, static_cast<std::int16_t>(dtype));
  put<std::int16_t>(b, 72, static_cast<std::int16_t>(8 * bytes_per_voxel(dtype)));
  put<float>(b, 76, 1.0f);
  for (int a = 0; a < 3; ++a) put<float>(b, 80 + 4 * a, static_cast<float>(g.spacing[a]));
  put<float>(b, 108, static_cast<float>(kVoxOffset));
  put<float>(b, 112, 1.0f);
  put<float>(b, 116, 0.0f);
  put<std::uint8_t>(b, 123, 2);  // mm
  put<std::int16_t>(b, 252, 1);
  put<std::int16_t>(b, 254, 1);
  for (int a = 0; a < 3; ++a) {
    put<float>(b, 268 + 4 * a, static_cast<float>(g.origin[a]));
    put<float>(b, 280 + 16 * a + 4 * a, static_cast<float>(g.spacing[a]));
    put<float>(b, 280 + 16 * a + 12, static_cast<float>(g.origin[a]));
  }
  std::memcpy(b.data() + 344, "n+1\0", 4);
  b.resize(kVoxOffset + payload.size());
  if (!payload.empty()) std::memcpy(b.data() + kVoxOffset, payload.data(), payload.size());
  return b;
}

template <class T>
Bytes encode_payload(std::span<const T> values, DataType dtype) {
  Bytes out(values.size() * bytes_per_voxel(dtype));
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double v = static_cast<double>(values[i]);
    switch (dtype) {
      case DataType::uint8:
        if (v < 0 || v > 255 || v != std::floor(v)) {
          throw Error(ErrorCode::invalid_argument, "value " + std::to_string(v) + " not representable as uint8");
        }
        out[i] = static_cast<std::uint8_t>(v);
        break;
      case DataType::int16: {
        if (v < std::numeric_limits<std::int16_t>::min() || v > std::numeric_limits<std::int16_t>::max() ||
            v != std::floor(v)) {
          throw Error(ErrorCode::invalid_argument, "value " + std::to_string(v) + " not representable as int16");
        }
        const auto s = static_cast<std::int16_t>(v);
        std::memcpy(out.data() + 2 * i, &s, 2);
        break;
      }
      case DataType::float32: {
        const auto f = static_cast<float>(v);
        std::memcpy(out.data() + 4 * i, &f, 4);
        break;
      }
    }
  }
  return out;
}

inline bool is_raw_path(const std::string& p) { return ends_with(p, ".raw") || ends_with(p, ".meta"); }

inline std::map<std::string, std::string> parse_meta(const std::string& text, const std::string& name) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw Error(ErrorCode::format, "'" + name + "' line " + std::to_string(lineno) + ": expected key = value");
    }
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
    };
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return kv;
}

template <class T, std::size_t N>
std::array<T, N> parse_tuple(const std::string& s, const std::string& key, const std::string& name) {
  std::istringstream in(s);
  std::array<T, N> out{};
  for (auto& v : out) {
    if (!(in >> v)) throw Error(ErrorCode::format, "'" + name + "': key '" + key + "' needs " + std::to_string(N) + " numbers");
  }
  std::string extra;
  if (in >> extra) throw Error(ErrorCode::format, "'" + name + "': key '" + key + "' has trailing values");
  return out;
}

inline Volume read_raw(const fs::path& path) {
  fs::path meta_path = path;
  if (path.extension() == ".raw") meta_path.replace_extension(".meta");
  const Bytes meta_bytes = read_file(meta_path);
  const auto kv = parse_meta(std::string(meta_bytes.begin(), meta_bytes.end()), meta_path.string());
  const std::string name = meta_path.string();
  auto require = [&](const std::string& key) -> const std::string& {
    const auto it = kv.find(key);
    if (it == kv.end()) throw Error(ErrorCode::format, "'" + name + "': missing key '" + key + "'");
    return it->second;
  };
  Decoded d;
  const auto dims = parse_tuple<long long, 3>(require("dims"), "dims", name);
  for (int a = 0; a < 3; ++a) {
    if (dims[a] < 1) throw Error(ErrorCode::format, "'" + name + "': dims must be >= 1");
    d.geometry.dims[a] = static_cast<std::size_t>(dims[a]);
  }
  d.dtype = parse_datatype_name(require("dtype"));
  if (kv.count("spacing")) d.geometry.spacing = parse_tuple<double, 3>(kv.at("spacing"), "spacing", name);
  if (kv.count("origin")) d.geometry.origin = parse_tuple<double, 3>(kv.at("origin"), "origin", name);
  if (kv.count("scale")) d.slope = parse_tuple<double, 1>(kv.at("scale"), "scale", name)[0];
  if (d.slope == 0.0) d.slope = 1.0;
  if (kv.count("intercept")) d.intercept = parse_tuple<double, 1>(kv.at("intercept"), "intercept", name)[0];
  try {
    d.geometry.validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::format, "'" + name + "': " + e.what());
  }
  fs::path data_path = meta_path;
  data_path.replace_extension(".raw");
  if (kv.count("data_file")) data_path = meta_path.parent_path() / kv.at("data_file");
  Bytes payload = read_file(data_path);
  if (is_gzip(payload)) payload = gunzip(payload, data_path.string());
  d.payload = payload.data();
  d.payload_size = payload.size();
  return Volume(d.geometry, convert_payload(d, data_path.string()));
}

inline std::string format_tuple(const Vec3& v) {
  std::ostringstream os;
  os.precision(std::numeric_limits<double>::max_digits10);
  os << v[0] << ' ' << v[1] << ' ' << v[2];
  return os.str();
}

inline void write_any(const Geometry& g, DataType dtype, const Bytes& payload, const fs::path& path) {
  const std::string p = path.string();
  if (is_raw_path(p)) {
    fs::path raw = path, meta = path;
    raw.replace_extension(".raw");
    meta.replace_extension(".meta");
    std::string text = "dims = " + std::to_string(g.dims[0]) + " " + std::to_string(g.dims[1]) + " " +
                       std::to_string(g.dims[2]) + "\n" + "dtype = " + to_string(dtype) + "\n" +
                       "spacing = " + format_tuple(g.spacing) + "\n" + "origin = " + format_tuple(g.origin) + "\n" +
                       "data_file = " + raw.filename().string() + "\n";
    write_file_atomic(raw, payload);
    write_file_atomic(meta, Bytes(text.begin(), text.end()));
    return;
  }
  Bytes bytes = encode_nifti(g, dtype, payload);
  if (ends_with(p, ".gz")) bytes = gzip(bytes);
  write_file_atomic(path, bytes);
}

}  // namespace io_detail

/// Reads a `.nii` / `.nii.gz` (gzip detected by content) or a `.raw`/`.meta`
/// pair. Stored values are rescaled by scl_slope / scl_inter into HU.
inline Volume read_volume(const std::filesystem::path& path) {
  using namespace io_detail;
  const std::string name = path.string();
  if (is_raw_path(name)) return read_raw(path);
  Bytes bytes = read_file(path);
  if (is_gzip(bytes)) bytes = gunzip(bytes, name);
  const Decoded d = decode_nifti(bytes, name);
  return Volume(d.geometry, convert_payload(d, name));
}

/// Reads a label file as a binary mask: every nonzero voxel becomes 1.
inline Mask read_mask(const std::filesystem::path& path) {
  const Volume v = read_volume(path);
  Mask m(v.geometry());
  for (std::size_t n = 0; n < v.size(); ++n) m[n] = v[n] != 0.0f ? 1 : 0;
  return m;
}

/// Writes a volume; `.gz` suffix selects gzip, `.raw`/`.meta` the sidecar pair.
/// int16/uint8 require every value to be exactly representable.
inline void write_volume(const Volume& v, const std::filesystem::path& path, DataType dtype = DataType::float32) {
  io_detail::write_any(v.geometry(), dtype, io_detail::encode_payload<float>(v.values(), dtype), path);
}

inline void write_volume(const Mask& m, const std::filesystem::path& path) {
  io_detail::write_any(m.geometry(), DataType::uint8, io_detail::encode_payload<std::uint8_t>(m.values(), DataType::uint8),
                       path);
}

inline void write_volume(const ProbMap& p, const std::filesystem::path& path) {
  io_detail::write_any(p.geometry(), DataType::float32, io_detail::encode_payload<float>(p.values(), DataType::float32),
                       path);
}

}  // namespace airwayseg
