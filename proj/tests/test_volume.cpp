#include <gtest/gtest.h>

#include <cstring>
#include <limits>

#include "freqadapt/volume.hpp"
#include "test_support.hpp"

using namespace freqadapt;
using testing_support::random_volume;
using testing_support::TempDir;

TEST(Volume, RejectsBadShapes) {
  EXPECT_THROW(Volume({0}, {}), ShapeError);
  EXPECT_THROW(Volume({4}, std::vector<double>(4, 0.0)), ShapeError);
  EXPECT_THROW(Volume({2, 0}, {}), ShapeError);
  EXPECT_THROW(Volume({2, 2}, {1, 2, 3}), ShapeError);
  EXPECT_THROW(Volume({2, 2, 2, 2}, std::vector<double>(16, 0.0)), ShapeError);
  EXPECT_NO_THROW(Volume({2, 3, 4}, std::vector<double>(24, 0.0)));
}

TEST(Volume, RejectsNonFinite) {
  EXPECT_THROW(Volume({1, 2}, {1.0, std::numeric_limits<double>::quiet_NaN()}), ValueError);
  EXPECT_THROW(Volume({1, 2}, {std::numeric_limits<double>::infinity(), 0.0}), ValueError);
}

TEST(LabeledVolume, LabelMustBeBinary) {
  EXPECT_THROW(LabeledVolume(Volume::zeros({2, 2}), 2, Domain::source), ValueError);
  EXPECT_NO_THROW(LabeledVolume(Volume::zeros({2, 2}), 1, Domain::target));
}

TEST(MinmaxNormalize, WorkedExamples) {
  const Volume a({1, 3}, {1, 2, 3});
  EXPECT_EQ(minmax_normalize(a), Volume({1, 3}, {0, 0.5, 1}));
  const Volume c({1, 3}, {5, 5, 5});
  EXPECT_EQ(minmax_normalize(c), Volume({1, 3}, {0, 0, 0}));
  EXPECT_THROW(minmax_normalize(Volume()), ValueError);
}

TEST(MinmaxNormalize, RangeIdempotenceAndExtremaOnRandom) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const Volume v = random_volume({8, 8, 8}, seed, -3.0, 7.0);
    const Volume n = minmax_normalize(v);
    std::size_t vmin = 0, vmax = 0;
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (v[i] < v[vmin]) vmin = i;
      if (v[i] > v[vmax]) vmax = i;
      ASSERT_GE(n[i], 0.0);
      ASSERT_LE(n[i], 1.0);
    }
    EXPECT_EQ(n[vmin], 0.0);
    EXPECT_EQ(n[vmax], 1.0);
    // argmin/argmax sets: every voxel equal to the extreme maps to 0 / 1.
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (v[i] == v[vmin]) {
        EXPECT_EQ(n[i], 0.0);
      }
      if (v[i] == v[vmax]) {
        EXPECT_EQ(n[i], 1.0);
      }
    }
    EXPECT_EQ(minmax_normalize(n), n);
  }
}

TEST(Volb, ByteLayoutOf2x2) {
  const Volume v({2, 2}, {1, 2, 3, 4});
  const std::string b = encode_volume(v);
  // magic 4 + version 4 + ndim 4 + two extents 8 = 20 header bytes.
  ASSERT_EQ(b.size(), 20u + 32u);
  EXPECT_EQ(b.substr(0, 4), "VOLB");
  std::uint32_t u = 0;
  std::memcpy(&u, b.data() + 4, 4);
  EXPECT_EQ(u, 1u);
  std::memcpy(&u, b.data() + 8, 4);
  EXPECT_EQ(u, 2u);
  std::memcpy(&u, b.data() + 12, 4);
  EXPECT_EQ(u, 2u);
  // Little-endian IEEE-754: 1.0 == 0x3FF0000000000000.
  EXPECT_EQ(static_cast<unsigned char>(b[20 + 7]), 0x3F);
  EXPECT_EQ(static_cast<unsigned char>(b[20 + 6]), 0xF0);
  double x = 0.0;
  std::memcpy(&x, b.data() + 20 + 24, 8);
  EXPECT_EQ(x, 4.0);
}

TEST(Volb, FileRoundTripIsBitExact) {
  TempDir dir("volb");
  for (const Dims& dims : {Dims{16, 16, 16}, Dims{7, 5}, Dims{1, 1}}) {
    const Volume v = random_volume(dims, 99, -1e300, 1e300);
    write_volume(v, dir / "v.volb");
    const Volume r = read_volume(dir / "v.volb");
    ASSERT_EQ(r.dims(), v.dims());
    EXPECT_EQ(std::memcmp(r.data().data(), v.data().data(), v.size() * sizeof(double)), 0);
  }
}

namespace {
FormatErrorKind decode_kind(const std::string& bytes) {
  try {
    decode_volume(bytes);
  } catch (const FormatError& e) {
    return e.kind();
  }
  ADD_FAILURE() << "decode did not fail";
  return FormatErrorKind::bad_header;
}
}  // namespace

TEST(Volb, DistinctErrorKinds) {
  const std::string good = encode_volume(Volume({2, 2}, {1, 2, 3, 4}));
  std::string magic = good;
  magic.replace(0, 4, "XXXX");
  EXPECT_EQ(decode_kind(magic), FormatErrorKind::bad_magic);
  EXPECT_EQ(decode_kind(good.substr(0, good.size() - 8)), FormatErrorKind::truncated);
  EXPECT_EQ(decode_kind(good.substr(0, good.size() - 1)), FormatErrorKind::truncated);
  std::string nan = good;
  const double q = std::numeric_limits<double>::quiet_NaN();
  std::memcpy(nan.data() + 20, &q, 8);
  EXPECT_EQ(decode_kind(nan), FormatErrorKind::non_finite);
  std::string version = good;
  version[4] = 2;
  EXPECT_EQ(decode_kind(version), FormatErrorKind::bad_version);
  EXPECT_EQ(decode_kind(good + "x"), FormatErrorKind::bad_header);
}

TEST(Volb, IoErrorsCarryPath) {
  TempDir dir("volb_io");
  const auto missing = dir / "nope.volb";
  try {
    read_volume(missing);
    FAIL();
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("nope.volb"), std::string::npos);
  }
  EXPECT_THROW(write_volume(Volume::zeros({2, 2}), dir / "no_such_dir" / "x.volb"), IoError);
}
