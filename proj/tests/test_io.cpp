#include <gtest/gtest.h>

#include "msreg/io.hpp"
#include "oracles.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>

#include <unistd.h>

using namespace msreg;
namespace fs = std::filesystem;

namespace {

class IoTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("msreg_io_" + std::to_string(::getpid()) + "_" +
                                        ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string write(const std::string& name, const std::string& content) {
    auto p = (dir_ / name).string();
    std::ofstream(p, std::ios::binary) << content;
    return p;
  }

  fs::path dir_;
};

}  // namespace

TEST_F(IoTest, XyzSinglePoint) {
  auto c = load_cloud(write("a.xyz", "0 0 0\n"), CloudFormat::xyz_text);
  ASSERT_EQ(c.size(), 1u);
  EXPECT_EQ(c.points[0], Vec3::Zero());
}

TEST_F(IoTest, XyzCommentsAndBlankLines) {
  auto c = load_cloud(write("a.xyz", "# header\n1 2 3 # trailing\n\n4 5 6\n"), CloudFormat::xyz_text);
  ASSERT_EQ(c.size(), 2u);
  EXPECT_EQ(c.points[1], Vec3(4, 5, 6));
}

TEST_F(IoTest, XyzNanIsParseError) {
  EXPECT_THROW(load_cloud(write("a.xyz", "nan 0 0\n"), CloudFormat::xyz_text), ParseError);
}

TEST_F(IoTest, XyzParseErrorNamesLine) {
  try {
    load_cloud(write("a.xyz", "1 2 3\n4 five 6\n"), CloudFormat::xyz_text);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos) << e.what();
  }
}

TEST_F(IoTest, PlyAsciiThreeVerticesInOrderWithExtraProperties) {
  const std::string text =
      "ply\nformat ascii 1.0\ncomment hand written\nelement vertex 3\n"
      "property float x\nproperty float y\nproperty float z\nproperty uchar red\n"
      "element face 0\nproperty list uchar int vertex_indices\nend_header\n"
      "1 2 3 255\n-1 0.5 2 0\n0 0 -7.25 12\n";
  auto c = load_cloud(write("a.ply", text), CloudFormat::ply_ascii);
  ASSERT_EQ(c.size(), 3u);
  EXPECT_EQ(c.points[0], Vec3(1, 2, 3));
  EXPECT_EQ(c.points[1], Vec3(-1, 0.5, 2));
  EXPECT_EQ(c.points[2], Vec3(0, 0, -7.25));
}

TEST_F(IoTest, PlyMalformedHeader) {
  EXPECT_THROW(load_cloud(write("a.ply", "ply\nformat ascii 1.0\nelement vertex x\nend_header\n"), CloudFormat::ply_ascii),
               ParseError);
  EXPECT_THROW(load_cloud(write("b.ply", "plx\n"), CloudFormat::ply_ascii), ParseError);
}

TEST_F(IoTest, PlyWrongElementCount) {
  const std::string text =
      "ply\nformat ascii 1.0\nelement vertex 3\nproperty float x\nproperty float y\nproperty float z\nend_header\n"
      "1 2 3\n4 5 6\n";
  EXPECT_THROW(load_cloud(write("a.ply", text), CloudFormat::ply_ascii), ParseError);
}

TEST_F(IoTest, PlyBinaryFloat32WithIgnoredProperty) {
  std::string data =
      "ply\nformat binary_little_endian 1.0\nelement vertex 2\nproperty float x\nproperty float y\n"
      "property float z\nproperty float intensity\nend_header\n";
  float vals[8] = {1.5f, -2.f, 3.f, 9.f, 0.25f, 0.f, -1.f, 8.f};
  data.append(reinterpret_cast<const char*>(vals), sizeof(vals));
  auto c = load_cloud(write("a.ply", data), CloudFormat::ply_binary_le);
  ASSERT_EQ(c.size(), 2u);
  EXPECT_EQ(c.points[0], Vec3(1.5, -2, 3));
  EXPECT_EQ(c.points[1], Vec3(0.25, 0, -1));
}

TEST_F(IoTest, PlyBinaryTruncatedReportsByteOffset) {
  std::string data =
      "ply\nformat binary_little_endian 1.0\nelement vertex 2\nproperty float x\nproperty float y\n"
      "property float z\nend_header\n";
  float vals[4] = {1, 2, 3, 4};
  data.append(reinterpret_cast<const char*>(vals), sizeof(vals));
  try {
    load_cloud(write("a.ply", data), CloudFormat::ply_binary_le);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("byte"), std::string::npos) << e.what();
  }
}

TEST_F(IoTest, BinaryRoundTripIsBitExact) {
  std::mt19937_64 rng(1);
  PointCloud c({Vec3(0.1, 1.0 / 3.0, -2.0e-7)});
  auto more = oracle::random_points(50, rng, -100, 100);
  c.points.insert(c.points.end(), more.begin(), more.end());
  const auto path = (dir_ / "rt.ply").string();
  save_cloud(c, path, CloudFormat::ply_binary_le);
  auto back = load_cloud(path, CloudFormat::ply_binary_le);
  ASSERT_EQ(back.size(), c.size());
  for (size_t i = 0; i < c.size(); ++i)
    for (int k = 0; k < 3; ++k) EXPECT_EQ(std::memcmp(&back.points[i][k], &c.points[i][k], sizeof(double)), 0);
}

TEST_F(IoTest, TextRoundTripWithinTolerance) {
  std::mt19937_64 rng(2);
  PointCloud c(oracle::random_points(100, rng, -10, 10));
  for (auto fmt : {CloudFormat::xyz_text, CloudFormat::ply_ascii}) {
    const auto path = (dir_ / (fmt == CloudFormat::xyz_text ? "rt.xyz" : "rt_ascii.ply")).string();
    save_cloud(c, path, fmt);
    auto back = load_cloud(path, fmt);
    ASSERT_EQ(back.size(), c.size());
    double worst = 0;
    for (size_t i = 0; i < c.size(); ++i) worst = std::max(worst, (back.points[i] - c.points[i]).cwiseAbs().maxCoeff());
    EXPECT_LT(worst, 1e-6);
  }
}

TEST_F(IoTest, UnwritablePathIsIoError) {
  PointCloud c({Vec3::Zero()});
  EXPECT_THROW(save_cloud(c, (dir_ / "missing_dir" / "x.ply").string(), CloudFormat::ply_binary_le), IoError);
}

TEST_F(IoTest, MissingFileIsIoError) {
  EXPECT_THROW(load_cloud((dir_ / "nope.xyz").string(), CloudFormat::xyz_text), IoError);
}
