#include <gtest/gtest.h>

#include <random>

#include "airwayseg/backend.hpp"
#include "airwayseg/phantom.hpp"
#include "oracles.hpp"

using namespace airwayseg;

namespace {

const std::string kAdapter = AIRWAYSEG_FAKE_ADAPTER;

Volume random_volume(Index3 dims, std::uint64_t seed, float lo = -1200.0f, float hi = 200.0f) {
  Geometry g;
  g.dims = dims;
  g.spacing = {0.75, 0.5, 1.25};
  g.origin = {-30.5, 12.25, 4.0};
  Volume v(g);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> d(lo, hi);
  for (float& x : v.values()) x = d(rng);
  return v;
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

ProbMap run_fake(const std::string& mode, const Volume& v, const std::string& arg = "") {
  std::vector<std::string> cmd{kAdapter, mode};
  if (!arg.empty()) cmd.push_back(arg);
  return segment(ExternalBackend(cmd), v);
}

}  // namespace

TEST(Protocol, RequestRoundTrip) {
  const Volume v = random_volume({5, 4, 3}, 1);
  const auto req = protocol::decode_request(protocol::encode_request(v));
  EXPECT_EQ(req.geometry, v.geometry());  // values chosen exactly representable in float32
  EXPECT_EQ(req.values, std::vector<float>(v.values().begin(), v.values().end()));
}

TEST(Protocol, RequestLayout) {
  Geometry g;
  g.dims = {2, 1, 1};
  const Volume v(g, std::vector<float>{-1000.0f, 3.0f});
  const auto b = protocol::encode_request(v);
  ASSERT_EQ(b.size(), 4u + 4u + 36u + 8u);
  EXPECT_EQ(std::string(b.begin(), b.begin() + 4), "AWSG");
  EXPECT_EQ(b[4], 1);
  EXPECT_EQ(b[8], 2);
  float first = 0;
  std::memcpy(&first, b.data() + 44, 4);
  EXPECT_EQ(first, -1000.0f);
}

TEST(Protocol, MalformedRequests) {
  const Volume v = random_volume({2, 2, 2}, 2);
  auto b = protocol::encode_request(v);
  auto bad = b;
  bad[0] = 'Q';
  EXPECT_EQ(code_of([&] { protocol::decode_request(bad); }), ErrorCode::protocol);
  bad = b;
  bad[4] = 2;
  EXPECT_EQ(code_of([&] { protocol::decode_request(bad); }), ErrorCode::protocol);
  bad = b;
  bad.resize(bad.size() - 1);
  EXPECT_EQ(code_of([&] { protocol::decode_request(bad); }), ErrorCode::protocol);
}

TEST(Protocol, ResponseChecks) {
  const Volume v = random_volume({3, 2, 2}, 3);
  const std::vector<float> probs(12, 0.25f);
  EXPECT_EQ(protocol::decode_response(protocol::encode_response(v.geometry(), probs), v.geometry()).values()[5], 0.25f);

  Geometry other = v.geometry();
  other.dims = {2, 3, 2};
  EXPECT_EQ(code_of([&] { protocol::decode_response(protocol::encode_response(other, probs), v.geometry()); }),
            ErrorCode::protocol);
  std::vector<float> neg = probs;
  neg[3] = -0.1f;
  EXPECT_EQ(code_of([&] { protocol::decode_response(protocol::encode_response(v.geometry(), neg), v.geometry()); }),
            ErrorCode::protocol);
  try {
    protocol::decode_response(protocol::encode_error_response(9, "no GPU"), v.geometry());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::protocol);
    EXPECT_NE(std::string(e.what()).find("no GPU"), std::string::npos);
  }
}

TEST(ThresholdBackend, InclusiveRule) {
  Geometry g;
  g.dims = {3, 1, 1};
  const Volume v(g, std::vector<float>{-901.0f, -900.0f, -899.0f});
  const ProbMap p = segment(ThresholdBackend(-900.0), v);
  EXPECT_EQ(std::vector<float>(p.values().begin(), p.values().end()), (std::vector<float>{1, 1, 0}));
}

TEST(OracleBackend, PassThroughOnSameGrid) {
  std::mt19937_64 rng(4);
  const Mask m = oracle::random_mask({6, 5, 4}, 0.3, rng);
  const ProbMap p = segment(OracleBackend(m), Volume(m.geometry()));
  EXPECT_EQ(threshold(p, 0.5), m);
}

TEST(OracleBackend, SamplesThroughWorldCoordinates) {
  std::mt19937_64 rng(5);
  const Mask m = oracle::random_mask({8, 8, 8}, 0.3, rng);
  Geometry sub = m.geometry();
  sub.dims = {4, 4, 4};
  sub.origin = m.geometry().world(Index3{2, 3, 1});
  const ProbMap p = segment(OracleBackend(m), Volume(sub));
  for (std::size_t k = 0; k < 4; ++k)
    for (std::size_t j = 0; j < 4; ++j)
      for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(p.at(i, j, k), m.at(i + 2, j + 3, k + 1) ? 1.0f : 0.0f);
  sub.origin = {100, 100, 100};
  const ProbMap outside = segment(OracleBackend(m), Volume(sub));
  for (float x : outside.values()) EXPECT_EQ(x, 0.0f);
}

TEST(OracleBackend, FromFile) {
  oracle::TempDir tmp("oracle");
  std::mt19937_64 rng(6);
  const Mask m = oracle::random_mask({5, 5, 5}, 0.5, rng);
  write_volume(m, tmp / "gt.nii.gz");
  BackendDescriptor d{BackendKind::oracle_file, {{"path", (tmp / "gt.nii.gz").string()}}};
  EXPECT_EQ(threshold(segment(d, Volume(m.geometry())), 0.5), m);
}

TEST(RegionGrowBackend, PhantomSupportEqualsLumen) {
  PhantomSpec spec;
  spec.noise_sigma = 0;
  spec.rng_seed = 9;
  const auto [vol, gt] = generate_phantom(spec);
  BackendDescriptor d{BackendKind::region_grow, {}};
  EXPECT_EQ(threshold(segment(d, vol), 0.5), gt);
}

TEST(Descriptor, ParsingAndValidation) {
  EXPECT_EQ(parse_backend_kind("oracle_file"), BackendKind::oracle_file);
  EXPECT_EQ(code_of([] { parse_backend_kind("nnunet"); }), ErrorCode::config);
  EXPECT_EQ(code_of([] { validate(BackendDescriptor{BackendKind::oracle_file, {}}); }), ErrorCode::config);
  EXPECT_EQ(code_of([] { validate(BackendDescriptor{BackendKind::threshold, {{"hu_threshold", "abc"}}}); }),
            ErrorCode::config);
  EXPECT_EQ(code_of([] { validate(BackendDescriptor{BackendKind::region_grow, {{"hu_low", "0"}, {"hu_high", "-5"}}}); }),
            ErrorCode::config);
  const GrowParams p = grow_params_from({BackendKind::region_grow, {{"seed", "1 2 3"}, {"max_voxels", "50"}}});
  EXPECT_EQ(p.seed, (Index3{1, 2, 3}));
  EXPECT_EQ(p.max_voxels, 50u);
}

TEST(SplitCommand, QuotesGroupWords) {
  EXPECT_EQ(split_command("python3 -m \"my adapter\"  --rule threshold"),
            (std::vector<std::string>{"python3", "-m", "my adapter", "--rule", "threshold"}));
  EXPECT_THROW(split_command("a \"b"), Error);
}

TEST(External, ThresholdMatchesInternal) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Volume v = random_volume({9, 8, 7}, 100 + seed);
    EXPECT_EQ(threshold(run_fake("threshold", v, "-900"), 0.5), threshold(segment(ThresholdBackend(-900), v), 0.5));
  }
}

TEST(External, PassthroughIsIdentity) {
  const Volume v = random_volume({6, 6, 6}, 7, 0.0f, 1.0f);
  const ProbMap p = run_fake("passthrough", v);
  EXPECT_EQ(std::vector<float>(p.values().begin(), p.values().end()),
            std::vector<float>(v.values().begin(), v.values().end()));
}

TEST(External, LargePayloadDoesNotDeadlock) {
  const Volume v = random_volume({96, 96, 96}, 8, 0.0f, 1.0f);  // 3.5 MB each way
  EXPECT_EQ(run_fake("passthrough", v).size(), v.size());
}

TEST(External, ContractViolations) {
  const Volume v = random_volume({4, 4, 4}, 9);
  EXPECT_EQ(code_of([&] { run_fake("wrong-dims", v); }), ErrorCode::protocol);
  EXPECT_EQ(code_of([&] { run_fake("shifted", v); }), ErrorCode::protocol);
  EXPECT_EQ(code_of([&] { run_fake("out-of-range", v); }), ErrorCode::protocol);
  EXPECT_EQ(code_of([&] { run_fake("error-status", v); }), ErrorCode::protocol);
  EXPECT_EQ(code_of([&] { run_fake("bad-magic", v); }), ErrorCode::protocol);
  EXPECT_EQ(code_of([&] { run_fake("trailing", v); }), ErrorCode::protocol);
  EXPECT_EQ(code_of([&] { run_fake("truncated", v); }), ErrorCode::protocol);
  EXPECT_EQ(code_of([&] { run_fake("early-close", v); }), ErrorCode::protocol);
  EXPECT_EQ(code_of([&] { run_fake("exit-nonzero", v); }), ErrorCode::backend);
  EXPECT_EQ(code_of([&] { segment(ExternalBackend({"/nonexistent/adapter"}), v); }), ErrorCode::backend);
}

TEST(External, MalformedRequestGetsErrorStatus) {
  const auto ex = run_process({kAdapter, "threshold"}, protocol::Bytes{'n', 'o', 'p', 'e', 1, 0, 0, 0});
  EXPECT_FALSE(ex.exited_ok);
  ASSERT_GE(ex.output.size(), 8u);
  EXPECT_EQ(std::string(ex.output.begin(), ex.output.begin() + 4), "AWSP");
  EXPECT_NE(ex.output[4], 0);
}

TEST(External, ErrorsCarryBackendName) {
  const Volume v = random_volume({2, 2, 2}, 10);
  try {
    run_fake("wrong-dims", v);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("external("), std::string::npos) << e.what();
  }
}
