#include <algorithm>
#include <cmath>
#include <random>

#include <gtest/gtest.h>
#include <json.hpp>

#include "nmpose/error.hpp"
#include "nmpose/infer.hpp"
#include "support/fixtures.hpp"
#include "support/oracles.hpp"

using namespace nmpose;

namespace {

NeuralMesh smooth_mesh(int dim, std::uint64_t seed) {
  NeuralMesh m;
  m.geometry = build_geodesic_polyhedron(2, 1.0);
  m.dim = dim;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  std::vector<Vec3> dirs(dim);
  for (auto& d : dirs) d = Vec3(g(rng), g(rng), g(rng)) * 2.0;
  for (const auto& v : m.geometry.vertices) {
    std::vector<double> f(dim);
    double n = 0;
    for (int c = 0; c < dim; ++c) {
      f[c] = std::sin(dirs[c].dot(v) + c);
      n += f[c] * f[c];
    }
    for (double x : f) m.features.push_back(x / std::sqrt(n));
  }
  return m;
}

FeatureMap render(const NeuralMesh& m, const Rotation& pose) {
  return render_feature_map(m.geometry, m.features, m.dim, pose, fixtures::gate_camera()).map;
}

Rotation perturb(const Rotation& p, double deg, std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  const Vec3 axis(g(rng), g(rng), g(rng));
  return Rotation::about_axis(axis, deg2rad(deg)) * p;
}

}  // namespace

TEST(ReconstructionLoss, ExactAndOrthogonal) {
  const auto mesh = smooth_mesh(8, 1);
  const Rotation pose = lookat({30, 10, 0});
  const auto f = render(mesh, pose);
  EXPECT_NEAR(reconstruction_loss(f, mesh, pose, fixtures::gate_camera()), 0.0, 1e-12);
  // Per-pixel orthogonal: swap and negate a channel pair of a 2-d map.
  NeuralMesh flat = mesh;
  flat.dim = 2;
  flat.features.clear();
  for (std::size_t k = 0; k < mesh.size(); ++k) {
    flat.features.push_back(1.0);
    flat.features.push_back(0.0);
  }
  FeatureMap orth(2, f.height, f.width);
  for (int y = 0; y < f.height; ++y) {
    for (int x = 0; x < f.width; ++x) orth.pixel(x, y)[1] = 1.0;
  }
  EXPECT_NEAR(reconstruction_loss(orth, flat, pose, fixtures::gate_camera()), 1.0, 1e-12);
}

TEST(ReconstructionLoss, EmptyRenderIsAnError) {
  const auto mesh = smooth_mesh(4, 2);
  Camera cam = fixtures::gate_camera();
  NeuralMesh tiny = mesh;
  for (auto& v : tiny.geometry.vertices) v *= 1e-9;
  try {
    reconstruction_loss(FeatureMap(4, cam.feature_h(), cam.feature_w()), tiny, Rotation::identity(), cam);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kInternal);
  }
}

TEST(PoseScorer, AgreesWithDirectLoss) {
  const auto mesh = smooth_mesh(16, 3);
  std::mt19937_64 rng(4);
  const auto f = fixtures::random_map(16, 32, 32, rng, true);
  const PoseScorer scorer(f, mesh, fixtures::gate_camera());
  for (int i = 0; i < 20; ++i) {
    const auto pose = oracle::random_rotation(rng);
    EXPECT_NEAR(scorer.loss(pose), reconstruction_loss(f, mesh, pose, fixtures::gate_camera()), 1e-10);
  }
}

TEST(EstimatePose, ZeroResidualFixedPoint) {
  const auto mesh = smooth_mesh(16, 5);
  const Rotation p0 = lookat({-40, 20, 10});
  const auto f = render(mesh, p0);
  std::mt19937_64 rng(6);
  std::vector<Rotation> inits{oracle::random_rotation(rng), p0, oracle::random_rotation(rng)};
  const auto est = estimate_pose(f, mesh, fixtures::gate_camera(), inits, {});
  EXPECT_LE(est.residual, 1e-9);
  EXPECT_LT(geodesic_distance(est.pose, p0), 1e-9);
  ASSERT_EQ(est.starts.size(), 3u);
}

TEST(EstimatePose, RecoversFromNearbyStarts) {
  const auto mesh = smooth_mesh(16, 7);
  const Rotation p0 = lookat({60, -15, 0});
  const auto f = render(mesh, p0);
  std::mt19937_64 rng(8);
  for (int i = 0; i < 4; ++i) {
    const auto est = estimate_pose(f, mesh, fixtures::gate_camera(), {perturb(p0, 15, rng)}, {});
    EXPECT_LE(rad2deg(geodesic_distance(est.pose, p0)), 2.0) << "start " << i;
  }
}

TEST(EstimatePose, TracesAreMonotoneAndBestWins) {
  const auto mesh = smooth_mesh(16, 9);
  const auto f = render(mesh, lookat({10, 5, 0}));
  EstimateOptions opt;
  opt.steps = 15;
  const auto est = estimate_pose(f, mesh, fixtures::gate_camera(), so3_grid(4, 2, 1), opt);
  int iterations = 0;
  double best = 1e9;
  for (const auto& s : est.starts) {
    iterations += s.iterations;
    best = std::min(best, s.final_loss);
    for (std::size_t i = 1; i < s.losses.size(); ++i) EXPECT_LE(s.losses[i], s.losses[i - 1]);
  }
  EXPECT_EQ(iterations, est.iterations);
  EXPECT_EQ(est.residual, best);
  const auto first = std::find_if(est.starts.begin(), est.starts.end(),
                                  [&](const StartTrace& s) { return s.final_loss == best; });
  EXPECT_EQ(est.pose.matrix(), first->final_pose.matrix());
  EXPECT_THROW(estimate_pose(f, mesh, fixtures::gate_camera(), {}, opt), Error);
  const auto again = estimate_pose(f, mesh, fixtures::gate_camera(), so3_grid(4, 2, 1), opt);
  EXPECT_EQ(again.pose.matrix(), est.pose.matrix());
}

TEST(EstimatePose, DefaultInits) { EXPECT_EQ(default_inits().size(), 144u); }

// A short training run on one synthetic instance; the true pose should score
// better than a 45 degree perturbation on unseen views.
TEST(EstimatePose, TrainedModelPrefersTruePose) {
  const Camera cam{4.0, 184.0, 128, 128, 8};
  FamilyConfig fam;
  fam.family_seed = 31;
  const auto obj = make_synthetic_object(fam, 1, "a");
  const auto grid = view_grid();
  const std::vector<ImageSet> sets{generate_image_set(obj, grid, {}, cam).images};
  TrainConfig cfg;
  cfg.dim = 32;
  cfg.epochs = 12;
  cfg.bank_size = 64;
  cfg.seed = 2;
  const auto model = train(sets, cfg);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> az(-180, 180), el(-40, 40);
  std::vector<ViewSpec> unseen;
  for (int i = 0; i < 40; ++i) unseen.push_back({az(rng), el(rng), 0});
  const auto test = generate_image_set(obj, unseen, {}, cam, false);
  int wins = 0;
  for (const auto& v : test.images.views) {
    const auto f = encode(model.encoder, v.image);
    const PoseScorer scorer(f, model.meshes[0], cam);
    wins += scorer.loss(v.label) < scorer.loss(perturb(v.label, 45, rng));
  }
  EXPECT_GE(wins, 38);
}

TEST(Align, IdentityAndExactSolve) {
  std::mt19937_64 rng(10);
  std::vector<Rotation> preds, gts;
  const auto c = oracle::random_rotation(rng);
  for (int i = 0; i < 20; ++i) {
    gts.push_back(oracle::random_rotation(rng));
    preds.push_back(gts.back() * c.transpose());
  }
  const auto same = align_predictions(preds, preds[0], preds[0]);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    EXPECT_LT((same[i].matrix() - preds[i].matrix()).cwiseAbs().maxCoeff(), 1e-12);
  }
  const auto aligned = align_predictions(preds, preds[3], gts[3]);
  EXPECT_LT(geodesic_distance(aligned[3], gts[3]), 1e-12);
  for (std::size_t i = 0; i < preds.size(); ++i) EXPECT_LT(geodesic_distance(aligned[i], gts[i]), 1e-12);
}

TEST(Metrics, HandCount) {
  const auto m = metrics_from_errors({45, 5, 15});
  EXPECT_EQ(m.median, 15.0);
  EXPECT_DOUBLE_EQ(m.acc30, 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(m.acc10, 1.0 / 3.0);
  const auto even = metrics_from_errors({1, 2, 3, 40});
  EXPECT_EQ(even.median, 2.0);
  const auto inclusive = metrics_from_errors({10, 30});
  EXPECT_EQ(inclusive.acc10, 0.5);
  EXPECT_EQ(inclusive.acc30, 1.0);
}

TEST(Metrics, PerfectPredictionsAndErrors) {
  std::mt19937_64 rng(11);
  std::vector<Rotation> r;
  for (int i = 0; i < 5; ++i) r.push_back(oracle::random_rotation(rng));
  const auto m = compute_metrics(r, r);
  EXPECT_EQ(m.median, 0.0);
  EXPECT_EQ(m.acc30, 1.0);
  EXPECT_EQ(m.acc10, 1.0);
  EXPECT_THROW(compute_metrics({}, {}), Error);
  EXPECT_THROW(compute_metrics(r, {r[0]}), Error);
}

TEST(Metrics, RandomListsAreConsistentAndPermutationInvariant) {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> u(0, 180);
  for (int t = 0; t < 1000; ++t) {
    std::vector<double> e(1 + rng() % 30);
    for (auto& x : e) x = u(rng);
    const auto m = metrics_from_errors(e);
    EXPECT_LE(m.acc10, m.acc30);
    auto sorted = e;
    std::sort(sorted.begin(), sorted.end());
    EXPECT_EQ(m.median, sorted[(sorted.size() - 1) / 2]);
    std::shuffle(e.begin(), e.end(), rng);
    const auto p = metrics_from_errors(e);
    EXPECT_EQ(p.median, m.median);
    EXPECT_EQ(p.acc30, m.acc30);
  }
}

TEST(Report, JsonAndCsv) {
  std::vector<ImageResult> images{{"test_000/000", Rotation::identity(), rotation_y(deg2rad(20)), 20.0},
                                  {"test_000/001", Rotation::identity(), Rotation::identity(), 0.0}};
  const auto m = metrics_from_errors({20.0, 0.0});
  const auto j = nlohmann::json::parse(evaluation_report_json("abc", images, m));
  EXPECT_EQ(j["config_digest"], "abc");
  ASSERT_EQ(j["per_image"].size(), 2u);
  EXPECT_EQ(j["per_image"][0]["id"], "test_000/000");
  EXPECT_EQ(j["per_image"][0]["pred"].size(), 9u);
  EXPECT_EQ(j["median"], 0.0);
  EXPECT_EQ(j["acc30"], 1.0);
  const auto csv = evaluation_report_csv(images);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 3);
  EXPECT_NE(csv.find("test_000/001"), std::string::npos);
}
