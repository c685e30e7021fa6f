#include <gtest/gtest.h>

#include <fstream>

#include "jenkins/nn/weights.hpp"
#include "support.hpp"

using namespace jenkins;
using nn::WeightArchive;

namespace {

WeightArchive sample_archive() {
  WeightArchive a;
  a.set_manifest({{"kind", "test"}, {"answer", 42}});
  nn::Matrix<float> f(2, 3);
  f << 1, 2, 3, 4, 5, 6;
  nn::Matrix<double> d(1, 2);
  d << 0.1, -1e300;
  a.put("f", f);
  a.put("d", d);
  return a;
}

}  // namespace

TEST(WeightArchive, RoundTripInMemory) {
  const auto a = sample_archive();
  const auto b = WeightArchive::deserialize(a.serialize());
  EXPECT_EQ(b.kind(), "test");
  EXPECT_EQ(b.manifest()["answer"], 42);
  EXPECT_EQ(b.get<float>("f"), a.get<float>("f"));
  EXPECT_EQ(b.get<double>("d")(0, 1), -1e300);
  EXPECT_EQ(b.serialize(), a.serialize());
}

TEST(WeightArchive, RoundTripOnDisk) {
  fixtures::TempDir dir;
  sample_archive().save(dir / "w.bin");
  const auto b = WeightArchive::load(dir / "w.bin");
  EXPECT_EQ(b.get<float>("f")(1, 2), 6.0f);
}

TEST(WeightArchive, WidthConversion) {
  const auto a = sample_archive();
  EXPECT_EQ(a.get<double>("f")(0, 1), 2.0);
  EXPECT_FLOAT_EQ(a.get<float>("d")(0, 0), 0.1f);
}

TEST(WeightArchive, ShapeMismatchNamesSection) {
  const auto a = sample_archive();
  try {
    a.get<float>("f", 3, 2);
    FAIL();
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("'f'"), std::string::npos);
  }
}

TEST(WeightArchive, MissingSectionAndReservedName) {
  auto a = sample_archive();
  EXPECT_THROW(a.get<float>("nope"), Error);
  EXPECT_FALSE(a.contains("nope"));
  EXPECT_THROW(a.put("manifest", nn::Matrix<float>(nn::Matrix<float>::Zero(1, 1))), Error);
  EXPECT_THROW(a.set_manifest({{"no_kind", 1}}), Error);
}

TEST(WeightArchive, RejectsCorruptBytes) {
  auto bytes = sample_archive().serialize();
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(WeightArchive::deserialize(bad_magic), Error);

  auto truncated = bytes;
  truncated.resize(truncated.size() - 3);
  EXPECT_THROW(WeightArchive::deserialize(truncated), Error);

  auto trailing = bytes;
  trailing.push_back(0);
  EXPECT_THROW(WeightArchive::deserialize(trailing), Error);

  auto version = bytes;
  version[4] = 99;
  EXPECT_THROW(WeightArchive::deserialize(version), Error);

  EXPECT_THROW(WeightArchive::deserialize({}), Error);
}

TEST(WeightArchive, MissingFile) {
  fixtures::TempDir dir;
  EXPECT_THROW(WeightArchive::load(dir / "absent.bin"), Error);
}
