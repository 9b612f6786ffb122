#include <gtest/gtest.h>

#include "msreg/cli.hpp"

#include <filesystem>

#include <unistd.h>

using namespace msreg;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

class CliTest : public ::testing::Test {
 protected:
  fs::path dir;
  void SetUp() override {
    dir = fs::temp_directory_path() /
          ("msreg_cli_" + std::to_string(::getpid()) + "_" +
           ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  void TearDown() override { fs::remove_all(dir); }
  std::string p(const std::string& f) const { return (dir / f).string(); }

  void write_config() const {
    std::ofstream o(p("cfg.json"));
    o << R"({"model": {"num_heads": 2, "descriptor_dim": 8, "base_voxel_size": 0.1, "widths": [4, 8]},
             "train": {"epochs": 2, "pos_radius": 0.1, "num_pos_per_pair": 32, "num_neg_candidates": 32}})";
  }
};

}  // namespace

TEST_F(CliTest, SynthIsByteReproducible) {
  std::vector<std::string> a{"msreg", "synth", "--out", p("a"), "--scenes", "2", "--extent", "2", "--seed", "4"};
  std::vector<std::string> b{"msreg", "synth", "--out", p("b"), "--scenes", "2", "--extent", "2", "--seed", "4"};
  ASSERT_EQ(cli_main(a), 0);
  ASSERT_EQ(cli_main(b), 0);
  for (const char* f : {"scene_000.ply", "scene_001.ply"}) {
    EXPECT_FALSE(slurp(dir / "a" / f).empty());
    EXPECT_EQ(slurp(dir / "a" / f), slurp(dir / "b" / f));
  }
}

TEST_F(CliTest, MissingRequiredFlagFails) {
  EXPECT_NE(cli_main({"msreg", "eval", "--ckpt", p("m.ckpt"), "--report", p("r.csv")}), 0);
  EXPECT_NE(cli_main({"msreg"}), 0);
  EXPECT_NE(cli_main({"msreg", "synth", "--out", p("x"), "--bogus"}), 0);
}

TEST_F(CliTest, RuntimeErrorsReturnNonzero) {
  EXPECT_NE(cli_main({"msreg", "register", "--ckpt", p("none.ckpt"), "--src", p("a.ply"), "--dst", p("b.ply"), "--out",
                      p("pose.json")}),
            0);
  EXPECT_NE(cli_main({"msreg", "pairs", "--in", p("empty_dir"), "--out", p("pairs.json")}), 0);
  {
    std::ofstream o(p("bad.json"));
    o << R"({"model": {}, "optimizer": {}})";
  }
  EXPECT_THROW(cli::read_config(p("bad.json")), ParseError);
}

TEST_F(CliTest, EndToEndPipeline) {
  write_config();
  ASSERT_EQ(cli_main({"msreg", "synth", "--out", p("scenes"), "--scenes", "1", "--extent", "2", "--density", "150"}), 0);
  ASSERT_EQ(cli_main({"msreg", "pairs", "--in", p("scenes"), "--out", p("pairs.json"), "--preset", "object",
                      "--per-scene", "2"}),
            0);
  auto recs = read_pair_manifest(p("pairs.json"));
  ASSERT_EQ(recs.size(), 2u);
  EXPECT_TRUE(fs::exists(recs[0].src));
  ASSERT_EQ(cli_main({"msreg", "train", "--config", p("cfg.json"), "--pairs", p("pairs.json"), "--out", p("m.ckpt")}), 0);
  EXPECT_TRUE(fs::exists(p("m.ckpt.loss.csv")));
  ASSERT_EQ(cli_main({"msreg", "transfer", "--ckpt", p("m.ckpt"), "--pairs", p("pairs.json"), "--out", p("t.ckpt"),
                      "--epochs", "1", "--config", p("cfg.json")}),
            0);
  ASSERT_EQ(cli_main({"msreg", "register", "--ckpt", p("t.ckpt"), "--src", recs[0].src, "--dst", recs[0].dst, "--out",
                      p("pose.json"), "--keypoints", "500"}),
            0);
  auto pose = nlohmann::json::parse(slurp(dir / "pose.json"));
  EXPECT_TRUE(transform_from_json(pose).is_valid(1e-6));
  ASSERT_EQ(cli_main({"msreg", "eval", "--ckpt", p("t.ckpt"), "--pairs", p("pairs.json"), "--report", p("r.csv"),
                      "--keypoints", "500"}),
            0);
  const std::string csv = slurp(dir / "r.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 3);
}

TEST_F(CliTest, RegistersBundledExamplePair) {
  const std::string src = MSREG_DATA_DIR "/example_src.ply", dst = MSREG_DATA_DIR "/example_dst.ply";
  ASSERT_EQ(cli_main({"msreg", "register", "--ckpt", MSREG_DATA_DIR "/example_model.ckpt", "--src", src, "--dst", dst,
                      "--out", p("pose.json")}),
            0);
  auto pose = nlohmann::json::parse(slurp(dir / "pose.json"));
  RigidTransform T = transform_from_json(pose);
  EXPECT_LT((T.R.transpose() * T.R - Mat3::Identity()).cwiseAbs().maxCoeff(), 1e-6);
  EXPECT_NEAR(T.R.determinant(), 1.0, 1e-6);
  // the bundled model was trained on similar scenes, so the pose should be close
  auto recs = read_pair_manifest(MSREG_DATA_DIR "/example_pair.json");
  ASSERT_EQ(recs.size(), 1u);
  ASSERT_TRUE(recs[0].gt_transform.has_value());
  EXPECT_LT((T.t - recs[0].gt_transform->t).norm(), 0.1);
  EXPECT_LT((T.R - recs[0].gt_transform->R).norm(), 0.1);
}
