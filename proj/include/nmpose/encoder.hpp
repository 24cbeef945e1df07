#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "nmpose/feature_map.hpp"
#include "nmpose/image.hpp"

namespace nmpose {

// One strided, zero-padded convolution. Weights are out x (in * k * k),
// row-major, with the input channel outermost inside a row.
template <typename T>
struct ConvLayer {
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 0;
  int stride = 1;
  int pad = 0;
  std::vector<T> weight;
  std::vector<T> bias;

  int patch() const { return in_channels * kernel * kernel; }
};

// conv 5x5/2 (3->16), leaky, conv 5x5/2 (16->32), leaky, conv 3x3/2 (32->d),
// then per-pixel L2 normalization. Total stride 8.
template <typename T>
struct BasicEncoderParams {
  static constexpr int kStride = 8;
  static constexpr double kLeakySlope = 0.1;

  int dim = 0;
  std::array<ConvLayer<T>, 3> layers;

  // uniform(-a, a), a = sqrt(1 / fan_in), biases zero.
  static BasicEncoderParams init(std::uint64_t seed, int dim);
  // Same architecture with every parameter zero.
  static BasicEncoderParams zeros(int dim);

  std::size_t parameter_count() const;
  bool all_finite() const;
  // this += alpha * other
  void add_scaled(const BasicEncoderParams& other, T alpha);
  double dot(const BasicEncoderParams& other) const;

  template <typename U>
  BasicEncoderParams<U> cast() const {
    BasicEncoderParams<U> out;
    out.dim = dim;
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const auto& src = layers[l];
      auto& dst = out.layers[l];
      dst.in_channels = src.in_channels;
      dst.out_channels = src.out_channels;
      dst.kernel = src.kernel;
      dst.stride = src.stride;
      dst.pad = src.pad;
      dst.weight.assign(src.weight.begin(), src.weight.end());
      dst.bias.assign(src.bias.begin(), src.bias.end());
    }
    return out;
  }
};

using EncoderParams = BasicEncoderParams<float>;

// Intermediate activations kept by a forward pass for the backward pass.
template <typename T>
struct EncoderTape {
  int width = 0;
  int height = 0;
  std::array<std::vector<T>, 3> columns;  // im2col of each layer input
  std::array<std::vector<T>, 3> pre;      // pre-activation output, channel-major
  std::array<std::array<int, 2>, 3> in_size{};   // (h, w) of each layer input
  std::array<std::array<int, 2>, 3> out_size{};  // (h, w) of each layer output
  std::vector<double> norms;              // per output pixel, before normalization
  FeatureMap output;
};

// Feature norms below this fall back to the zero vector.
inline constexpr double kNormEpsilon = 1e-12;

// Throws Error(kShape) unless both image sides are positive multiples of 8.
template <typename T>
FeatureMap encode(const BasicEncoderParams<T>& params, const RgbImage& image,
                  EncoderTape<T>* tape = nullptr);

// Reverse-mode gradient of <output_gradient, encode(image)> with respect to
// every parameter. Throws Error(kShape) on a mismatched gradient.
template <typename T>
BasicEncoderParams<T> encode_backward(const BasicEncoderParams<T>& params, const EncoderTape<T>& tape,
                                      const FeatureMap& output_gradient);
template <typename T>
BasicEncoderParams<T> encode_backward(const BasicEncoderParams<T>& params, const RgbImage& image,
                                      const FeatureMap& output_gradient);

// Bilinear sample at real feature-map coordinates, re-normalized. Throws
// Error(kOutOfBounds) unless 0 <= p <= (w - 1, h - 1).
std::vector<double> sample_feature(const FeatureMap& map, const Eigen::Vector2d& p);

// Accumulate into `map_gradient` the map gradient of <g, sample_feature(map, p)>.
void sample_feature_backward(const FeatureMap& map, const Eigen::Vector2d& p,
                             std::span<const double> g, FeatureMap& map_gradient);

// Binary checkpoint: "NMEN", u32 d, u32 layer count, then per layer u32
// out, in, k, stride, pad followed by f32 weights and f32 biases.
void save_encoder(const std::filesystem::path& path, const EncoderParams& params);
// Throws Error(kIo) on bad magic or shapes.
EncoderParams load_encoder(const std::filesystem::path& path);

}  // namespace nmpose
