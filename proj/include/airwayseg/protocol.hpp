#pragma once

// Binary stdio protocol spoken with external segmentation processes.
// All fields little-endian.
//
//   request  : "AWSG" u32 version(=1) u32 nx ny nz f32 sx sy sz f32 ox oy oz
//              f32 voxels[nx*ny*nz]            (HU, x fastest)
//   response : "AWSP" u32 status
//              status == 0 : u32 nx ny nz f32 sx sy sz f32 ox oy oz
//                            f32 probabilities[nx*ny*nz]
//              status != 0 : u32 length, UTF-8 message[length]

#include <cmath>
#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "airwayseg/error.hpp"
#include "airwayseg/grid.hpp"

namespace airwayseg::protocol {

using Bytes = std::vector<std::uint8_t>;

inline constexpr char kRequestMagic[4] = {'A', 'W', 'S', 'G'};
inline constexpr char kResponseMagic[4] = {'A', 'W', 'S', 'P'};
inline constexpr std::uint32_t kVersion = 1;
inline constexpr std::size_t kGeometryBytes = 3 * 4 + 6 * 4;

namespace detail {

template <class T>
void append(Bytes& b, T v) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
  b.insert(b.end(), p, p + sizeof(T));
}

class Reader {
 public:
  Reader(const Bytes& b, const char* what) : b_(b), what_(what) {}

  template <class T>
  T take() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, b_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  void need(std::size_t n) const {
    if (b_.size() - pos_ < n) {
      throw Error(ErrorCode::protocol, std::string(what_) + " truncated at byte " + std::to_string(pos_));
    }
  }

  const std::uint8_t* cursor() const { return b_.data() + pos_; }
  void skip(std::size_t n) { need(n); pos_ += n; }
  std::size_t remaining() const { return b_.size() - pos_; }

 private:
  const Bytes& b_;
  const char* what_;
  std::size_t pos_ = 0;
};

inline void append_geometry(Bytes& b, const Geometry& g) {
  for (int a = 0; a < 3; ++a) append<std::uint32_t>(b, static_cast<std::uint32_t>(g.dims[a]));
  for (int a = 0; a < 3; ++a) append<float>(b, static_cast<float>(g.spacing[a]));
  for (int a = 0; a < 3; ++a) append<float>(b, static_cast<float>(g.origin[a]));
}

inline Geometry take_geometry(Reader& r) {
  Geometry g;
  for (int a = 0; a < 3; ++a) g.dims[a] = r.take<std::uint32_t>();
  for (int a = 0; a < 3; ++a) g.spacing[a] = r.take<float>();
  for (int a = 0; a < 3; ++a) g.origin[a] = r.take<float>();
  return g;
}

inline std::vector<float> take_floats(Reader& r, std::size_t n) {
  r.need(4 * n);
  std::vector<float> v(n);
  std::memcpy(v.data(), r.cursor(), 4 * n);
  r.skip(4 * n);
  return v;
}

}  // namespace detail

inline Bytes encode_request(const Volume& v) {
  Bytes b;
  b.reserve(8 + kGeometryBytes + 4 * v.size());
  b.insert(b.end(), kRequestMagic, kRequestMagic + 4);
  detail::append<std::uint32_t>(b, kVersion);
  detail::append_geometry(b, v.geometry());
  for (float x : v.values()) detail::append<float>(b, x);
  return b;
}

/// Geometry and raw voxel payload of a request.
struct Request {
  Geometry geometry;
  std::vector<float> values;
};

inline Request decode_request(const Bytes& b) {
  detail::Reader r(b, "request");
  r.need(4);
  if (std::memcmp(r.cursor(), kRequestMagic, 4) != 0) throw Error(ErrorCode::protocol, "request has bad magic");
  r.skip(4);
  const auto version = r.take<std::uint32_t>();
  if (version != kVersion) {
    throw Error(ErrorCode::protocol, "unsupported request version " + std::to_string(version));
  }
  Request req;
  req.geometry = detail::take_geometry(r);
  req.values = detail::take_floats(r, req.geometry.voxel_count());
  return req;
}

inline Bytes encode_response(const Geometry& g, const std::vector<float>& probabilities) {
  Bytes b;
  b.insert(b.end(), kResponseMagic, kResponseMagic + 4);
  detail::append<std::uint32_t>(b, 0);
  detail::append_geometry(b, g);
  for (float x : probabilities) detail::append<float>(b, x);
  return b;
}

inline Bytes encode_error_response(std::uint32_t status, const std::string& message) {
  Bytes b;
  b.insert(b.end(), kResponseMagic, kResponseMagic + 4);
  detail::append<std::uint32_t>(b, status == 0 ? 1 : status);
  detail::append<std::uint32_t>(b, static_cast<std::uint32_t>(message.size()));
  b.insert(b.end(), message.begin(), message.end());
  return b;
}

/// Parses a response to a request for `expected`. The returned geometry must
/// match the request (dims exactly, spacing/origin at float32 precision) and
/// every probability must lie in [0, 1].
inline ProbMap decode_response(const Bytes& b, const Geometry& expected) {
  detail::Reader r(b, "response");
  r.need(4);
  if (std::memcmp(r.cursor(), kResponseMagic, 4) != 0) throw Error(ErrorCode::protocol, "response has bad magic");
  r.skip(4);
  const auto status = r.take<std::uint32_t>();
  if (status != 0) {
    const auto len = r.take<std::uint32_t>();
    r.need(len);
    const std::string msg(reinterpret_cast<const char*>(r.cursor()), len);
    throw Error(ErrorCode::protocol, "external backend reported status " + std::to_string(status) + ": " + msg);
  }
  const Geometry g = detail::take_geometry(r);
  if (g.dims != expected.dims) {
    throw Error(ErrorCode::protocol, "response dims " + to_string(g.dims) + " differ from request dims " +
                                         to_string(expected.dims));
  }
  for (int a = 0; a < 3; ++a) {
    if (static_cast<float>(g.spacing[a]) != static_cast<float>(expected.spacing[a]) ||
        static_cast<float>(g.origin[a]) != static_cast<float>(expected.origin[a])) {
      throw Error(ErrorCode::protocol, "response spacing/origin differ from the request");
    }
  }
  std::vector<float> values = detail::take_floats(r, g.voxel_count());
  if (r.remaining() != 0) throw Error(ErrorCode::protocol, "response has trailing bytes");
  for (std::size_t n = 0; n < values.size(); ++n) {
    if (!(values[n] >= 0.0f && values[n] <= 1.0f)) {
      throw Error(ErrorCode::protocol, "response probability " + std::to_string(values[n]) + " at voxel " +
                                           to_string(expected.coords(n)) + " is outside [0, 1]");
    }
  }
  return ProbMap(expected, std::move(values));
}

}  // namespace airwayseg::protocol
