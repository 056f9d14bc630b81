#include <gtest/gtest.h>

#include <cstring>
#include <fstream>
#include <random>

#include "airwayseg/io.hpp"
#include "oracles.hpp"

using namespace airwayseg;

namespace {

using Bytes = std::vector<std::uint8_t>;

template <class T>
void put(Bytes& b, std::size_t off, T v) {
  std::memcpy(b.data() + off, &v, sizeof v);
}

// Minimal hand-rolled NIfTI-1 writer, independent of the library encoder.
Bytes handmade_nifti(std::array<std::int16_t, 3> dims, std::int16_t datatype, std::int16_t bitpix, float slope,
                     float inter, const Bytes& payload) {
  Bytes b(352, 0);
  put<std::int32_t>(b, 0, 348);
  put<std::int16_t>(b, 40, 3);
  for (int a = 0; a < 3; ++a) put<std::int16_t>(b, 42 + 2 * a, dims[a]);
  put<std::int16_t>(b, 70, datatype);
  put<std::int16_t>(b, 72, bitpix);
  for (int a = 0; a < 4; ++a) put<float>(b, 76 + 4 * a, 1.0f);
  put<float>(b, 108, 352.0f);
  put<float>(b, 112, slope);
  put<float>(b, 116, inter);
  std::memcpy(b.data() + 344, "n+1\0", 4);
  b.resize(352 + payload.size());
  if (!payload.empty()) std::memcpy(b.data() + 352, payload.data(), payload.size());
  return b;
}

void dump(const std::filesystem::path& p, const Bytes& b) {
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

Bytes slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return Bytes(std::istreambuf_iterator<char>(in), {});
}

Bytes int16_payload(std::size_t n, std::int16_t v) {
  Bytes b(2 * n);
  for (std::size_t i = 0; i < n; ++i) std::memcpy(b.data() + 2 * i, &v, 2);
  return b;
}

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an airwayseg::Error";
  return ErrorCode::io;
}

}  // namespace

TEST(NiftiRead, Int16AllMinus1000) {
  oracle::TempDir tmp("io");
  dump(tmp / "a.nii", handmade_nifti({4, 4, 4}, 4, 16, 1.0f, 0.0f, int16_payload(64, -1000)));
  const Volume v = read_volume(tmp / "a.nii");
  EXPECT_EQ(v.dims(), (Index3{4, 4, 4}));
  ASSERT_EQ(v.size(), 64u);
  for (float x : v.values()) EXPECT_EQ(x, -1000.0f);
}

TEST(NiftiRead, AppliesScaleAndIntercept) {
  oracle::TempDir tmp("io");
  dump(tmp / "a.nii", handmade_nifti({4, 4, 4}, 4, 16, 2.0f, -24.0f, int16_payload(64, 500)));
  const Volume v = read_volume(tmp / "a.nii");
  for (float x : v.values()) EXPECT_EQ(x, 976.0f);
}

TEST(NiftiRead, ZeroSlopeMeansIdentity) {
  oracle::TempDir tmp("io");
  dump(tmp / "a.nii", handmade_nifti({2, 2, 2}, 4, 16, 0.0f, 0.0f, int16_payload(8, 7)));
  const Volume v = read_volume(tmp / "a.nii");
  for (float x : v.values()) EXPECT_EQ(x, 7.0f);
}

TEST(NiftiRead, GzippedInput) {
  oracle::TempDir tmp("io");
  dump(tmp / "a.nii.gz", io_detail::gzip(handmade_nifti({3, 2, 1}, 4, 16, 1.0f, 0.0f, int16_payload(6, -5))));
  const Volume v = read_volume(tmp / "a.nii.gz");
  EXPECT_EQ(v.dims(), (Index3{3, 2, 1}));
  for (float x : v.values()) EXPECT_EQ(x, -5.0f);
}

TEST(NiftiRead, ErrorCategories) {
  oracle::TempDir tmp("io");
  EXPECT_EQ(code_of([&] { read_volume(tmp / "missing.nii"); }), ErrorCode::io);

  dump(tmp / "short.nii", Bytes(100, 0));
  EXPECT_EQ(code_of([&] { read_volume(tmp / "short.nii"); }), ErrorCode::format);

  dump(tmp / "trunc.nii", handmade_nifti({4, 4, 4}, 4, 16, 1.0f, 0.0f, int16_payload(63, 0)));
  EXPECT_EQ(code_of([&] { read_volume(tmp / "trunc.nii"); }), ErrorCode::size_mismatch);

  dump(tmp / "long.nii", handmade_nifti({4, 4, 4}, 4, 16, 1.0f, 0.0f, int16_payload(65, 0)));
  EXPECT_EQ(code_of([&] { read_volume(tmp / "long.nii"); }), ErrorCode::size_mismatch);

  dump(tmp / "f64.nii", handmade_nifti({2, 2, 2}, 64, 64, 1.0f, 0.0f, Bytes(64, 0)));
  EXPECT_EQ(code_of([&] { read_volume(tmp / "f64.nii"); }), ErrorCode::unsupported_dtype);

  Bytes rotated = handmade_nifti({2, 2, 2}, 4, 16, 1.0f, 0.0f, int16_payload(8, 0));
  put<std::int16_t>(rotated, 254, 1);  // sform_code
  put<float>(rotated, 280, 0.0f);
  put<float>(rotated, 284, 1.0f);  // x axis mapped onto world y
  put<float>(rotated, 296, 1.0f);
  put<float>(rotated, 316, 1.0f);
  dump(tmp / "rot.nii", rotated);
  EXPECT_EQ(code_of([&] { read_volume(tmp / "rot.nii"); }), ErrorCode::orientation);

  Bytes four_d = handmade_nifti({2, 2, 2}, 4, 16, 1.0f, 0.0f, int16_payload(16, 0));
  put<std::int16_t>(four_d, 40, 4);
  put<std::int16_t>(four_d, 48, 2);
  dump(tmp / "4d.nii", four_d);
  EXPECT_EQ(code_of([&] { read_volume(tmp / "4d.nii"); }), ErrorCode::format);
}

TEST(NiftiWrite, MaskPayloadIsUint8) {
  oracle::TempDir tmp("io");
  Geometry g;
  g.dims = {2, 2, 2};
  write_volume(Mask(g, 1), tmp / "m.nii");
  const Bytes b = slurp(tmp / "m.nii");
  ASSERT_EQ(b.size(), 352u + 8u);
  std::int16_t datatype = 0;
  std::memcpy(&datatype, b.data() + 70, 2);
  EXPECT_EQ(datatype, 2);
  for (std::size_t i = 352; i < b.size(); ++i) EXPECT_EQ(b[i], 0x01);
}

TEST(NiftiWrite, Float32PayloadLength) {
  oracle::TempDir tmp("io");
  Geometry g;
  g.dims = {3, 5, 7};
  write_volume(Volume(g, -3.5f), tmp / "v.nii");
  EXPECT_EQ(slurp(tmp / "v.nii").size(), 352u + 4u * 3 * 5 * 7);
}

TEST(NiftiWrite, RejectsUnrepresentableValues) {
  oracle::TempDir tmp("io");
  Geometry g;
  Volume v(g, 0.5f);
  EXPECT_EQ(code_of([&] { write_volume(v, tmp / "v.nii", DataType::int16); }), ErrorCode::invalid_argument);
  v[0] = 40000.0f;
  EXPECT_EQ(code_of([&] { write_volume(v, tmp / "v.nii", DataType::int16); }), ErrorCode::invalid_argument);
}

TEST(NiftiWrite, GeometryRoundTrip) {
  oracle::TempDir tmp("io");
  Geometry g;
  g.dims = {5, 4, 3};
  g.spacing = {0.75, 1.25, 2.5};
  g.origin = {-12.5, 3.0, 100.25};
  Volume v(g, -1000.0f);
  write_volume(v, tmp / "v.nii.gz");
  EXPECT_EQ(read_volume(tmp / "v.nii.gz"), v);
}

class RoundTrip : public ::testing::TestWithParam<std::tuple<DataType, std::string>> {};

TEST_P(RoundTrip, RandomVolumes) {
  const auto [dtype, suffix] = GetParam();
  oracle::TempDir tmp("rt");
  std::mt19937_64 rng(1234 + static_cast<int>(dtype));
  std::uniform_int_distribution<int> dim(1, 9);
  std::uniform_int_distribution<int> i16(-32768, 32767);
  std::uniform_int_distribution<int> u8(0, 255);
  std::uniform_real_distribution<float> f32(-3000.0f, 3000.0f);
  for (int trial = 0; trial < 10; ++trial) {
    Geometry g;
    g.dims = {static_cast<std::size_t>(dim(rng)), static_cast<std::size_t>(dim(rng)), static_cast<std::size_t>(dim(rng))};
    g.spacing = {0.5 * dim(rng), 0.25 * dim(rng), 1.0};
    g.origin = {-10.0 * dim(rng), 0.5, 3.0 * dim(rng)};
    Volume v(g);
    for (float& x : v.values()) {
      x = dtype == DataType::uint8 ? static_cast<float>(u8(rng))
          : dtype == DataType::int16 ? static_cast<float>(i16(rng))
                                     : f32(rng);
    }
    const auto path = tmp / ("v" + std::to_string(trial) + suffix);
    write_volume(v, path, dtype);
    EXPECT_EQ(read_volume(path), v) << "trial " << trial;
  }
}

INSTANTIATE_TEST_SUITE_P(AllFormats, RoundTrip,
                         ::testing::Combine(::testing::Values(DataType::uint8, DataType::int16, DataType::float32),
                                            ::testing::Values(std::string(".nii"), std::string(".nii.gz"),
                                                              std::string(".raw"))),
                         [](const auto& info) {
                           std::string ext = std::get<1>(info.param).substr(1);
                           for (char& c : ext)
                             if (c == '.') c = '_';
                           return to_string(std::get<0>(info.param)) + "_" + ext;
                         });

TEST(RawFormat, SidecarDescribesPayload) {
  oracle::TempDir tmp("raw");
  Geometry g;
  g.dims = {2, 3, 4};
  g.spacing = {1.5, 1.5, 2.0};
  Volume v(g, 12.0f);
  write_volume(v, tmp / "v.raw", DataType::int16);
  ASSERT_TRUE(std::filesystem::exists(tmp / "v.meta"));
  EXPECT_EQ(std::filesystem::file_size(tmp / "v.raw"), 2u * 24u);
  EXPECT_EQ(read_volume(tmp / "v.meta"), v);
}

TEST(RawFormat, MissingKeyIsFormatError) {
  oracle::TempDir tmp("raw");
  {
    std::ofstream meta(tmp / "v.meta");
    meta << "dims = 2 2 2\n";
  }
  dump(tmp / "v.raw", Bytes(32, 0));
  EXPECT_EQ(code_of([&] { read_volume(tmp / "v.meta"); }), ErrorCode::format);
}

TEST(ReadMask, NonzeroBecomesOne) {
  oracle::TempDir tmp("mask");
  Geometry g;
  g.dims = {4, 1, 1};
  Volume v(g, std::vector<float>{0, 3, 0, 255});
  write_volume(v, tmp / "m.nii", DataType::uint8);
  const Mask m = read_mask(tmp / "m.nii");
  EXPECT_EQ(std::vector<std::uint8_t>(m.values().begin(), m.values().end()), (std::vector<std::uint8_t>{0, 1, 0, 1}));
}
