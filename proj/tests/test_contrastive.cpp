#include <gtest/gtest.h>

#include "msreg/contrastive.hpp"
#include "msreg/udge.hpp"
#include "oracles.hpp"

#include <filesystem>

#include <unistd.h>

using namespace msreg;
using MatD = Mat<double>;

namespace {

using PosList = std::vector<std::pair<int32_t, int32_t>>;
using NegList = std::vector<std::vector<int32_t>>;

/// All rows except the anchor's partner, per positive.
void full_negatives(const PosList& pos, int nx, int ny, NegList& neg_y, NegList& neg_x) {
  neg_y.clear();
  neg_x.clear();
  for (auto [i, j] : pos) {
    std::vector<int32_t> a, b;
    for (int k = 0; k < ny; ++k)
      if (k != j) a.push_back(k);
    for (int k = 0; k < nx; ++k)
      if (k != i) b.push_back(k);
    neg_y.push_back(a);
    neg_x.push_back(b);
  }
}

double loss_value(const MatD& FX, const MatD& FY, const PosList& pos, const NegList& ny, const NegList& nx,
                  double mp = 0.1, double mm = 1.4) {
  Tape<double> t(false);
  return t.value(contrastive_loss(t, t.constant(FX), t.constant(FY), pos, ny, nx, mp, mm))(0, 0);
}

struct RandomInstance {
  MatD FX, FY;
  PosList pos;
  NegList ny, nx;
};

RandomInstance random_instance(std::mt19937_64& rng, int max_points = 10) {
  std::uniform_int_distribution<int> nd(2, max_points);
  const int nx = nd(rng), ny = nd(rng), d = 1 + static_cast<int>(rng() % 4);
  std::normal_distribution<double> g(0, 0.6);
  RandomInstance r;
  r.FX.resize(nx, d);
  r.FY.resize(ny, d);
  for (Eigen::Index k = 0; k < r.FX.size(); ++k) r.FX.data()[k] = g(rng);
  for (Eigen::Index k = 0; k < r.FY.size(); ++k) r.FY.data()[k] = g(rng);
  std::vector<int32_t> ys(ny);
  std::iota(ys.begin(), ys.end(), 0);
  std::shuffle(ys.begin(), ys.end(), rng);
  const int npos = 1 + static_cast<int>(rng() % static_cast<uint64_t>(std::min(nx, ny) - 1));
  for (int p = 0; p < npos; ++p) r.pos.emplace_back(p, ys[static_cast<size_t>(p)]);
  full_negatives(r.pos, nx, ny, r.ny, r.nx);
  return r;
}

}  // namespace

// ----- mining -----

TEST(MinePositives, IdenticalCloudsGiveIdentityMatching) {
  std::mt19937_64 rng(1);
  PointCloud X(oracle::random_points(50, rng));
  auto m = mine_positive_matches(X, X, RigidTransform::identity(), 1e-6);
  ASSERT_EQ(m.size(), 50u);
  for (size_t k = 0; k < 50; ++k) EXPECT_EQ(m.pairs[k], std::make_pair(static_cast<int32_t>(k), static_cast<int32_t>(k)));
}

TEST(MinePositives, RadiusAgainstHandDistances) {
  PointCloud X({Vec3(0, 0, 0), Vec3(1, 0, 0)});
  PointCloud Y({Vec3(0.05, 0, 0), Vec3(1.05, 0, 0)});
  EXPECT_EQ(mine_positive_matches(X, Y, RigidTransform::identity(), 0.1).size(), 2u);
  EXPECT_EQ(mine_positive_matches(X, Y, RigidTransform::identity(), 0.01).size(), 0u);
}

TEST(MinePositives, DisjointCloudsGiveNothing) {
  std::mt19937_64 rng(2);
  PointCloud X(oracle::random_points(30, rng)), Y(oracle::random_points(30, rng, 9, 11));
  EXPECT_TRUE(mine_positive_matches(X, Y, RigidTransform::identity(), 0.1).empty());
}

TEST(MinePositives, UsesTransformAndSubsamplesDeterministically) {
  std::mt19937_64 rng(3);
  PointCloud X(oracle::random_points(200, rng));
  RigidTransform T{oracle::random_rotation(rng), Vec3(0.5, 0, 1)};
  PointCloud Y = apply_transform(X, T);
  auto all = mine_positive_matches(X, Y, T, 1e-9);
  EXPECT_EQ(all.size(), 200u);
  auto a = mine_positive_matches(X, Y, T, 1e-9, 40, 7);
  auto b = mine_positive_matches(X, Y, T, 1e-9, 40, 7);
  ASSERT_EQ(a.size(), 40u);
  EXPECT_EQ(a.pairs, b.pairs);
  for (auto [i, j] : a.pairs) EXPECT_EQ(i, j);
  EXPECT_TRUE(std::is_sorted(a.pairs.begin(), a.pairs.end()));
}

// ----- loss -----

TEST(ContrastiveLoss, ZeroWhenHingesInactive) {
  MatD F(2, 2);
  F << 0, 0, 2, 0;
  PosList pos{{0, 0}, {1, 1}};
  NegList ny, nx;
  full_negatives(pos, 2, 2, ny, nx);
  EXPECT_EQ(loss_value(F, F, pos, ny, nx), 0.0);
}

TEST(ContrastiveLoss, TwoPointExample) {
  MatD F(2, 2);
  F << 0, 0, 1, 0;
  PosList pos{{0, 0}, {1, 1}};
  NegList ny, nx;
  full_negatives(pos, 2, 2, ny, nx);
  EXPECT_NEAR(loss_value(F, F, pos, ny, nx), 0.32, 1e-12);
}

TEST(ContrastiveLoss, DefaultMargins) {
  TrainConfig c;
  EXPECT_EQ(c.m_plus, 0.1);
  EXPECT_EQ(c.m_minus, 1.4);
  EXPECT_EQ(c.lr, 0.1);
  EXPECT_EQ(c.momentum, 0.8);
  EXPECT_EQ(c.batch_size, 4);
}

TEST(ContrastiveLoss, MatchesTermByTermOracle) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    auto r = random_instance(rng);
    const double want = oracle::contrastive(r.FX, r.FY, r.pos, r.ny, r.nx, 0.1, 1.4);
    EXPECT_NEAR(loss_value(r.FX, r.FY, r.pos, r.ny, r.nx), want, 1e-9);
  }
}

TEST(ContrastiveLoss, MeanReductionDividesByPositives) {
  std::mt19937_64 rng(5);
  auto r = random_instance(rng);
  Tape<double> t(false);
  LossStats st;
  Var v = contrastive_loss(t, t.constant(r.FX), t.constant(r.FY), r.pos, r.ny, r.nx, 0.1, 1.4, LossReduction::mean, &st);
  EXPECT_NEAR(t.value(v)(0, 0) * static_cast<double>(r.pos.size()), loss_value(r.FX, r.FY, r.pos, r.ny, r.nx), 1e-12);
  EXPECT_EQ(st.num_pos, r.pos.size());
}

TEST(ContrastiveLoss, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 30; ++trial) {
    auto r = random_instance(rng);
    Tape<double> t;
    Var fx = t.leaf(r.FX), fy = t.leaf(r.FY);
    t.backward(contrastive_loss(t, fx, fy, r.pos, r.ny, r.nx, 0.1, 1.4));
    const MatD gx = t.grad(fx), gy = t.grad(fy);
    auto f = [&]() { return loss_value(r.FX, r.FY, r.pos, r.ny, r.nx); };
    for (Eigen::Index k = 0; k < r.FX.size(); ++k)
      EXPECT_NEAR(oracle::central_difference(f, r.FX.data()[k], 1e-6), gx.data()[k], 1e-4);
    for (Eigen::Index k = 0; k < r.FY.size(); ++k)
      EXPECT_NEAR(oracle::central_difference(f, r.FY.data()[k], 1e-6), gy.data()[k], 1e-4);
  }
}

TEST(ContrastiveLoss, SharedDescriptorNodeGradient) {
  // FX and FY as one node (as in batched training) accumulate both roles
  std::mt19937_64 rng(7);
  MatD F = MatD::Random(6, 3);
  PosList pos{{0, 3}, {1, 4}, {2, 5}};
  NegList ny{{4, 5}, {3, 5}, {3, 4}}, nx{{1, 2}, {0, 2}, {0, 1}};
  Tape<double> t;
  Var f = t.leaf(F);
  t.backward(contrastive_loss(t, f, f, pos, ny, nx, 0.1, 1.4));
  const MatD g = t.grad(f);
  auto eval = [&]() { return loss_value(F, F, pos, ny, nx); };
  for (Eigen::Index k = 0; k < F.size(); ++k) EXPECT_NEAR(oracle::central_difference(eval, F.data()[k], 1e-6), g.data()[k], 1e-4);
}

TEST(ContrastiveLoss, InvariantToPositiveOrder) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    auto r = random_instance(rng);
    std::vector<size_t> perm(r.pos.size());
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    PosList p2;
    NegList y2, x2;
    for (size_t k : perm) {
      p2.push_back(r.pos[k]);
      y2.push_back(r.ny[k]);
      x2.push_back(r.nx[k]);
    }
    EXPECT_NEAR(loss_value(r.FX, r.FY, r.pos, r.ny, r.nx), loss_value(r.FX, r.FY, p2, y2, x2), 1e-12);
  }
}

TEST(ContrastiveLoss, NonNegativeAndPositiveHingeBoundedOnSphere) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 50; ++trial) {
    auto r = random_instance(rng);
    r.FX.rowwise().normalize();
    r.FY.rowwise().normalize();
    const double L = loss_value(r.FX, r.FY, r.pos, r.ny, r.nx);
    EXPECT_GE(L, 0.0);
    // per positive: (2 - m+)^2 + two negative terms of at most m-^2 / 2
    EXPECT_LE(L, static_cast<double>(r.pos.size()) * (1.9 * 1.9 + 1.4 * 1.4) + 1e-12);
  }
}

TEST(ContrastiveLoss, EmptyPositivesRejected) {
  Tape<double> t;
  Var f = t.constant(MatD::Zero(2, 2));
  EXPECT_THROW(contrastive_loss(t, f, f, {}, {}, {}, 0.1, 1.4), std::invalid_argument);
}

// ----- training -----

namespace {

ModelConfig toy_model_config() {
  ModelConfig c;
  c.num_heads = 2;
  c.descriptor_dim = 8;
  c.base_voxel_size = 0.1;
  c.widths = {4, 8};
  return c;
}

std::vector<TrainingPair> toy_pairs(int n, uint64_t seed) {
  SceneParams sp;
  sp.extent = 2.0;
  sp.density = 120;
  UdgeParams up = udge_preset("object");
  up.crop_size = 1.5;
  up.rotation = RotationMode::z;
  up.jitter_sigma = 0.005;
  up.overlap_radius = 0.1;
  std::vector<TrainingPair> out;
  for (int k = 0; k < n; ++k) {
    PointCloud scene = synth_scene(derive_seed(seed, static_cast<uint64_t>(k)), sp);
    PairSample ps = generate_pair(scene, up, derive_seed(seed, 100 + static_cast<uint64_t>(k)));
    out.push_back({"p" + std::to_string(k), ps.X, ps.Y, ps.T_gt});
  }
  return out;
}

TrainConfig toy_train_config(int epochs) {
  TrainConfig c;
  c.epochs = epochs;
  c.pos_radius = 0.1;
  c.num_pos_per_pair = 64;
  c.num_neg_candidates = 64;
  c.seed = 3;
  return c;
}

}  // namespace

TEST(Train, ZeroLearningRateLeavesParametersUnchanged) {
  auto pairs = toy_pairs(4, 1);
  auto model = build_model<float>(toy_model_config(), 1);
  const auto before = model.params;
  TrainConfig c = toy_train_config(1);
  c.lr = 0;
  train(model, pairs, c);
  for (size_t i = 0; i < before.size(); ++i)
    if (before.at(i).trainable) EXPECT_EQ(model.params.at(i).value, before.at(i).value) << before.at(i).name;
}

TEST(Train, LossDecreasesOnFixedPairs) {
  auto pairs = toy_pairs(10, 2);
  auto model = build_model<float>(toy_model_config(), 2);
  auto res = train(model, pairs, toy_train_config(50));
  ASSERT_EQ(res.trace.size(), 50u);
  EXPECT_LT(res.trace.back().mean_loss, res.trace.front().mean_loss);
}

TEST(Train, TraceIsDeterministicAndWrittenAsCsv) {
  auto pairs = toy_pairs(3, 3);
  auto m1 = build_model<float>(toy_model_config(), 5), m2 = build_model<float>(toy_model_config(), 5);
  auto r1 = train(m1, pairs, toy_train_config(3));
  auto r2 = train(m2, pairs, toy_train_config(3));
  for (size_t e = 0; e < 3; ++e) EXPECT_EQ(r1.trace[e].mean_loss, r2.trace[e].mean_loss);
  for (size_t i = 0; i < m1.params.size(); ++i) EXPECT_EQ(m1.params.at(i).value, m2.params.at(i).value);
  const auto path = (std::filesystem::temp_directory_path() / ("msreg_trace_" + std::to_string(::getpid()) + ".csv")).string();
  write_loss_trace(path, r1.trace);
  std::ifstream in(path);
  std::string header, line;
  std::getline(in, header);
  EXPECT_EQ(header, "epoch,mean_loss,mean_pos_dist,mean_hardest_neg_dist");
  int rows = 0;
  while (std::getline(in, line)) ++rows;
  EXPECT_EQ(rows, 3);
  std::filesystem::remove(path);
}

TEST(Train, NanAbortsNamingTheBatch) {
  auto pairs = toy_pairs(2, 4);
  auto model = build_model<float>(toy_model_config(), 1);
  model.params.at("fusion.bias").value(0, 0) = std::numeric_limits<float>::quiet_NaN();
  try {
    train(model, pairs, toy_train_config(1));
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("batch 1"), std::string::npos) << e.what();
  }
}

TEST(Train, EmptyStreamRejected) {
  auto model = build_model<float>(toy_model_config(), 1);
  EXPECT_THROW(train(model, {}, toy_train_config(1)), std::invalid_argument);
}
