#include <cmath>
#include <fstream>
#include <random>

#include <gtest/gtest.h>

#include "nmpose/encoder.hpp"
#include "nmpose/error.hpp"
#include "support/fixtures.hpp"
#include "support/oracles.hpp"

using namespace nmpose;
using Params = BasicEncoderParams<double>;

namespace {

double inner(const FeatureMap& a, const FeatureMap& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.data.size(); ++i) s += a.data[i] * b.data[i];
  return s;
}

double pixel_norm(const FeatureMap& m, int x, int y) {
  double n = 0;
  for (double v : m.feature(x, y)) n += v * v;
  return std::sqrt(n);
}

// Random direction living in one layer's weight or bias tensor.
Params layer_direction(const Params& like, int layer, bool bias, std::mt19937_64& rng) {
  Params d = Params::zeros(like.dim);
  std::normal_distribution<double> g;
  auto& t = bias ? d.layers[layer].bias : d.layers[layer].weight;
  for (auto& v : t) v = g(rng);
  return d;
}

double fd_directional(const Params& p, const Params& dir, const RgbImage& img, const FeatureMap& g, double h) {
  Params plus = p, minus = p;
  plus.add_scaled(dir, h);
  minus.add_scaled(dir, -h);
  return (inner(encode(plus, img), g) - inner(encode(minus, img), g)) / (2 * h);
}

}  // namespace

TEST(Encode, OutputShapeAndUnitNorm) {
  std::mt19937_64 rng(1);
  const auto params = EncoderParams::init(3, 16);
  const auto img = fixtures::random_image(64, 48, rng);
  const auto map = encode(params, img);
  EXPECT_EQ(map.channels, 16);
  EXPECT_EQ(map.width, 8);
  EXPECT_EQ(map.height, 6);
  for (int y = 0; y < map.height; ++y) {
    for (int x = 0; x < map.width; ++x) EXPECT_NEAR(pixel_norm(map, x, y), 1.0, 1e-6);
  }
}

TEST(Encode, FullSizeShape) {
  std::mt19937_64 rng(2);
  const auto map = encode(EncoderParams::init(1, 64), fixtures::random_image(512, 512, rng));
  EXPECT_EQ(map.channels, 64);
  EXPECT_EQ(map.width, 64);
  EXPECT_EQ(map.height, 64);
}

TEST(Encode, InitIsFiniteAndBounded) {
  const auto p = EncoderParams::init(7, 32);
  EXPECT_TRUE(p.all_finite());
  EXPECT_EQ(p.layers[0].in_channels, 3);
  EXPECT_EQ(p.layers[2].out_channels, 32);
  for (const auto& layer : p.layers) {
    const double a = std::sqrt(1.0 / layer.patch());
    for (float w : layer.weight) EXPECT_LE(std::abs(w), a);
    for (float b : layer.bias) EXPECT_EQ(b, 0.0f);
  }
  const auto q = EncoderParams::init(7, 32);
  EXPECT_EQ(p.layers[1].weight, q.layers[1].weight);
}

TEST(Encode, ShapeErrors) {
  const auto p = EncoderParams::init(1, 8);
  try {
    encode(p, RgbImage(60, 64));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kShape);
  }
  EXPECT_THROW(encode(p, RgbImage(0, 0)), Error);
}

TEST(Encode, ZeroInputZeroBiasGivesZeroFallback) {
  const auto p = EncoderParams::init(1, 8);
  EncoderTape<float> tape;
  const auto map = encode(p, RgbImage(32, 32, 0), &tape);
  for (double v : map.data) EXPECT_EQ(v, 0.0);
  for (double n : tape.norms) EXPECT_EQ(n, 0.0);
  for (const auto& pre : tape.pre) {
    for (float v : pre) EXPECT_EQ(v, 0.0f);
  }
}

TEST(Encode, Deterministic) {
  std::mt19937_64 rng(3);
  const auto p = EncoderParams::init(2, 16);
  const auto img = fixtures::random_image(64, 64, rng);
  EXPECT_EQ(encode(p, img).data, encode(p, img).data);
}

TEST(Encode, TranslationCovariantInInterior) {
  std::mt19937_64 rng(4);
  const auto p = EncoderParams::init(5, 16);
  const auto img = fixtures::random_image(96, 64, rng);
  RgbImage shifted(96, 64);
  for (int y = 0; y < 64; ++y) {
    for (int x = 0; x + 8 < 96; ++x) {
      for (int c = 0; c < 3; ++c) shifted.at(x, y)[c] = img.at(x + 8, y)[c];
    }
  }
  const auto a = encode(p, img), b = encode(p, shifted);
  for (int y = 2; y < a.height - 2; ++y) {
    for (int x = 2; x + 1 < a.width - 2; ++x) {
      for (int c = 0; c < a.channels; ++c) EXPECT_NEAR(b.pixel(x, y)[c], a.pixel(x + 1, y)[c], 1e-5);
    }
  }
}

TEST(EncodeBackward, ZeroGradientGivesZero) {
  std::mt19937_64 rng(5);
  const auto p = EncoderParams::init(1, 8);
  const auto img = fixtures::random_image(32, 32, rng);
  const auto g = encode_backward(p, img, FeatureMap(8, 4, 4));
  EXPECT_EQ(g.dot(g), 0.0);
}

TEST(EncodeBackward, LinearInOutputGradient) {
  std::mt19937_64 rng(6);
  const auto p = EncoderParams::init(1, 8).cast<double>();
  const auto img = fixtures::random_image(32, 32, rng);
  FeatureMap g1(8, 4, 4), g2(8, 4, 4), g12(8, 4, 4);
  std::normal_distribution<double> n;
  for (int c = 0; c < 8; ++c) {
    g1.pixel(1, 2)[c] = n(rng);
    g2.pixel(3, 0)[c] = n(rng);
    g12.pixel(1, 2)[c] = g1.pixel(1, 2)[c];
    g12.pixel(3, 0)[c] = g2.pixel(3, 0)[c];
  }
  auto sum = encode_backward(p, img, g1);
  sum.add_scaled(encode_backward(p, img, g2), 1.0);
  auto diff = encode_backward(p, img, g12);
  diff.add_scaled(sum, -1.0);
  EXPECT_LT(std::sqrt(diff.dot(diff)), 1e-12 * std::sqrt(sum.dot(sum)));
}

TEST(EncodeBackward, ShapeMismatchThrows) {
  std::mt19937_64 rng(7);
  const auto p = EncoderParams::init(1, 8);
  EXPECT_THROW(encode_backward(p, fixtures::random_image(32, 32, rng), FeatureMap(8, 3, 4)), Error);
}

TEST(EncodeBackward, MatchesFiniteDifferencesPerTensor) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 4; ++trial) {
    auto p = Params::init(100 + trial, 8);
    // Non-zero biases so every tensor is exercised.
    for (auto& layer : p.layers) {
      for (auto& b : layer.bias) b = std::uniform_real_distribution<double>(-0.1, 0.1)(rng);
    }
    const auto img = fixtures::random_image(32, 32, rng);
    const auto g = fixtures::random_map(8, 4, 4, rng, false);
    const auto grad = encode_backward(p, img, g);
    for (int layer = 0; layer < 3; ++layer) {
      for (bool bias : {false, true}) {
        const auto dir = layer_direction(p, layer, bias, rng);
        const double analytic = grad.dot(dir);
        const double numeric = fd_directional(p, dir, img, g, 1e-6);
        EXPECT_LT(oracle::relative_error(analytic, numeric, 1e-6), 1e-4)
            << "layer " << layer << (bias ? " bias" : " weight") << " trial " << trial;
      }
    }
  }
}

TEST(EncodeBackward, FloatAgreesWithDouble) {
  std::mt19937_64 rng(9);
  const auto p = EncoderParams::init(3, 8);
  const auto img = fixtures::random_image(32, 32, rng);
  const auto g = fixtures::random_map(8, 4, 4, rng, false);
  const auto gf = encode_backward(p, img, g).cast<double>();
  const auto gd = encode_backward(p.cast<double>(), img, g);
  auto diff = gf;
  diff.add_scaled(gd, -1.0);
  EXPECT_LT(std::sqrt(diff.dot(diff)), 1e-3 * std::sqrt(gd.dot(gd)));
}

TEST(SampleFeature, IntegerAndMidpoint) {
  std::mt19937_64 rng(10);
  const auto map = fixtures::random_map(6, 4, 5, rng, true);
  const auto s = sample_feature(map, {2, 1});
  for (int c = 0; c < 6; ++c) EXPECT_NEAR(s[c], map.pixel(2, 1)[c], 1e-15);
  const auto m = sample_feature(map, {2.5, 1});
  std::vector<double> expected(6);
  double n = 0;
  for (int c = 0; c < 6; ++c) {
    expected[c] = 0.5 * (map.pixel(2, 1)[c] + map.pixel(3, 1)[c]);
    n += expected[c] * expected[c];
  }
  double sn = 0;
  for (int c = 0; c < 6; ++c) {
    EXPECT_NEAR(m[c], expected[c] / std::sqrt(n), 1e-12);
    sn += m[c] * m[c];
  }
  EXPECT_NEAR(sn, 1.0, 1e-12);
}

TEST(SampleFeature, CornersAndOutOfBounds) {
  std::mt19937_64 rng(11);
  const auto map = fixtures::random_map(4, 4, 5, rng, true);
  EXPECT_NO_THROW(sample_feature(map, {4, 3}));
  EXPECT_NO_THROW(sample_feature(map, {0, 0}));
  try {
    sample_feature(map, {4.01, 1});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kOutOfBounds);
  }
  EXPECT_THROW(sample_feature(map, {1, -0.01}), Error);
}

TEST(SampleFeature, BackwardMatchesFiniteDifferences) {
  std::mt19937_64 rng(12);
  const auto map = fixtures::random_map(5, 4, 4, rng, true);
  const Eigen::Vector2d p(1.3, 2.6);
  const auto g = fixtures::random_unit(5, rng);
  FeatureMap grad(5, 4, 4);
  sample_feature_backward(map, p, g, grad);
  const auto f = [&](const std::vector<double>& data) {
    FeatureMap m = map;
    m.data = data;
    const auto s = sample_feature(m, p);
    double v = 0;
    for (int c = 0; c < 5; ++c) v += g[c] * s[c];
    return v;
  };
  for (int t = 0; t < 5; ++t) {
    std::vector<double> dir(map.data.size());
    std::normal_distribution<double> n;
    for (auto& d : dir) d = n(rng);
    double analytic = 0;
    for (std::size_t i = 0; i < dir.size(); ++i) analytic += dir[i] * grad.data[i];
    EXPECT_LT(oracle::relative_error(analytic, oracle::directional_fd(f, map.data, dir, 1e-6)), 1e-6);
  }
}

TEST(EncoderCheckpoint, RoundTripAndCorruption) {
  fixtures::TempDir dir("encoder");
  const auto p = EncoderParams::init(4, 24);
  save_encoder(dir.path() / "e.nmen", p);
  const auto back = load_encoder(dir.path() / "e.nmen");
  EXPECT_EQ(back.dim, 24);
  for (int l = 0; l < 3; ++l) {
    EXPECT_EQ(back.layers[l].weight, p.layers[l].weight);
    EXPECT_EQ(back.layers[l].bias, p.layers[l].bias);
    EXPECT_EQ(back.layers[l].stride, p.layers[l].stride);
  }
  {
    std::fstream f(dir.path() / "e.nmen", std::ios::in | std::ios::out | std::ios::binary);
    f.write("XXXX", 4);
  }
  try {
    load_encoder(dir.path() / "e.nmen");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kIo);
  }
  std::filesystem::resize_file(dir.path() / "e.nmen", 10);
  EXPECT_THROW(load_encoder(dir.path() / "e.nmen"), Error);
}
