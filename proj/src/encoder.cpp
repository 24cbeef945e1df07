#include "nmpose/encoder.hpp"

#include <cmath>
#include <random>

#include "nmpose/error.hpp"
#include "nmpose/io.hpp"
#include "nmpose/kernels.hpp"

namespace nmpose {

namespace {

template <typename T>
ConvLayer<T> make_layer(int in, int out, int kernel, int stride, int pad) {
  ConvLayer<T> layer;
  layer.in_channels = in;
  layer.out_channels = out;
  layer.kernel = kernel;
  layer.stride = stride;
  layer.pad = pad;
  layer.weight.assign(static_cast<std::size_t>(out) * layer.patch(), T(0));
  layer.bias.assign(static_cast<std::size_t>(out), T(0));
  return layer;
}

int conv_out(int n, int kernel, int stride, int pad) { return (n + 2 * pad - kernel) / stride + 1; }

template <typename T>
void im2col(const ConvLayer<T>& layer, const T* x, int h, int w, int ho, int wo, T* col) {
  const int k = layer.kernel;
  const std::size_t n = static_cast<std::size_t>(ho) * wo;
  for (int c = 0; c < layer.in_channels; ++c) {
    const T* plane = x + static_cast<std::size_t>(c) * h * w;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        T* row = col + (static_cast<std::size_t>(c) * k * k + ky * k + kx) * n;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * layer.stride - layer.pad + ky;
          T* out = row + static_cast<std::size_t>(oy) * wo;
          if (iy < 0 || iy >= h) {
            std::fill(out, out + wo, T(0));
            continue;
          }
          const T* src = plane + static_cast<std::size_t>(iy) * w;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * layer.stride - layer.pad + kx;
            out[ox] = (ix >= 0 && ix < w) ? src[ix] : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const ConvLayer<T>& layer, const T* col, int h, int w, int ho, int wo, T* x) {
  const int k = layer.kernel;
  const std::size_t n = static_cast<std::size_t>(ho) * wo;
  for (int c = 0; c < layer.in_channels; ++c) {
    T* plane = x + static_cast<std::size_t>(c) * h * w;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const T* row = col + (static_cast<std::size_t>(c) * k * k + ky * k + kx) * n;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * layer.stride - layer.pad + ky;
          if (iy < 0 || iy >= h) continue;
          T* dst = plane + static_cast<std::size_t>(iy) * w;
          const T* src = row + static_cast<std::size_t>(oy) * wo;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * layer.stride - layer.pad + kx;
            if (ix >= 0 && ix < w) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

template <typename T>
T leaky(T v) {
  return v > T(0) ? v : T(BasicEncoderParams<T>::kLeakySlope) * v;
}

}  // namespace

template <typename T>
BasicEncoderParams<T> BasicEncoderParams<T>::zeros(int dim) {
  if (dim <= 0) throw Error(ErrorCode::kInvalidArgument, "feature dimension must be positive");
  BasicEncoderParams p;
  p.dim = dim;
  p.layers[0] = make_layer<T>(3, 16, 5, 2, 2);
  p.layers[1] = make_layer<T>(16, 32, 5, 2, 2);
  p.layers[2] = make_layer<T>(32, dim, 3, 2, 1);
  return p;
}

template <typename T>
BasicEncoderParams<T> BasicEncoderParams<T>::init(std::uint64_t seed, int dim) {
  BasicEncoderParams p = zeros(dim);
  std::mt19937_64 rng(seed);
  for (auto& layer : p.layers) {
    const double a = std::sqrt(1.0 / layer.patch());
    std::uniform_real_distribution<double> dist(-a, a);
    for (auto& w : layer.weight) w = static_cast<T>(dist(rng));
  }
  return p;
}

template <typename T>
std::size_t BasicEncoderParams<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.weight.size() + l.bias.size();
  return n;
}

template <typename T>
bool BasicEncoderParams<T>::all_finite() const {
  for (const auto& l : layers) {
    for (T v : l.weight) {
      if (!std::isfinite(v)) return false;
    }
    for (T v : l.bias) {
      if (!std::isfinite(v)) return false;
    }
  }
  return true;
}

template <typename T>
void BasicEncoderParams<T>::add_scaled(const BasicEncoderParams& other, T alpha) {
  for (std::size_t l = 0; l < layers.size(); ++l) {
    kernels::axpy(alpha, other.layers[l].weight.data(), layers[l].weight.data(), layers[l].weight.size());
    kernels::axpy(alpha, other.layers[l].bias.data(), layers[l].bias.data(), layers[l].bias.size());
  }
}

template <typename T>
double BasicEncoderParams<T>::dot(const BasicEncoderParams& other) const {
  double s = 0.0;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    for (std::size_t i = 0; i < layers[l].weight.size(); ++i) {
      s += double(layers[l].weight[i]) * double(other.layers[l].weight[i]);
    }
    for (std::size_t i = 0; i < layers[l].bias.size(); ++i) {
      s += double(layers[l].bias[i]) * double(other.layers[l].bias[i]);
    }
  }
  return s;
}

template <typename T>
FeatureMap encode(const BasicEncoderParams<T>& params, const RgbImage& image, EncoderTape<T>* tape) {
  const int stride = BasicEncoderParams<T>::kStride;
  if (image.width <= 0 || image.height <= 0 || image.width % stride != 0 || image.height % stride != 0) {
    throw Error(ErrorCode::kShape, "image size " + std::to_string(image.width) + "x" +
                                       std::to_string(image.height) + " is not divisible by 8");
  }
  EncoderTape<T> local;
  EncoderTape<T>& t = tape ? *tape : local;
  t.width = image.width;
  t.height = image.height;

  int h = image.height, w = image.width;
  std::vector<T> x(static_cast<std::size_t>(3) * h * w);
  for (int y = 0; y < h; ++y) {
    for (int xx = 0; xx < w; ++xx) {
      const std::uint8_t* px = image.at(xx, y);
      for (int c = 0; c < 3; ++c) x[(static_cast<std::size_t>(c) * h + y) * w + xx] = T(px[c]) / T(255);
    }
  }

  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    const ConvLayer<T>& layer = params.layers[l];
    const int ho = conv_out(h, layer.kernel, layer.stride, layer.pad);
    const int wo = conv_out(w, layer.kernel, layer.stride, layer.pad);
    const int n = ho * wo;
    t.in_size[l] = {h, w};
    t.out_size[l] = {ho, wo};
    auto& col = t.columns[l];
    col.assign(static_cast<std::size_t>(layer.patch()) * n, T(0));
    im2col(layer, x.data(), h, w, ho, wo, col.data());
    auto& y = t.pre[l];
    y.assign(static_cast<std::size_t>(layer.out_channels) * n, T(0));
    for (int o = 0; o < layer.out_channels; ++o) {
      std::fill(y.begin() + static_cast<std::ptrdiff_t>(o) * n, y.begin() + static_cast<std::ptrdiff_t>(o + 1) * n,
                layer.bias[o]);
    }
    kernels::gemm_acc(false, layer.out_channels, n, layer.patch(), layer.weight.data(), layer.patch(), col.data(),
                      n, y.data(), n);
    x = y;
    if (l + 1 < params.layers.size()) {
      for (auto& v : x) v = leaky(v);
    }
    h = ho;
    w = wo;
  }

  const int d = params.dim;
  FeatureMap out(d, h, w);
  t.norms.assign(static_cast<std::size_t>(h) * w, 0.0);
  for (int p = 0; p < h * w; ++p) {
    double sq = 0.0;
    for (int c = 0; c < d; ++c) {
      const double v = x[static_cast<std::size_t>(c) * h * w + p];
      sq += v * v;
    }
    const double norm = std::sqrt(sq);
    t.norms[p] = norm;
    double* dst = out.data.data() + static_cast<std::size_t>(p) * d;
    if (norm <= kNormEpsilon) continue;
    for (int c = 0; c < d; ++c) dst[c] = x[static_cast<std::size_t>(c) * h * w + p] / norm;
  }
  if (tape) t.output = out;
  return out;
}

template <typename T>
BasicEncoderParams<T> encode_backward(const BasicEncoderParams<T>& params, const EncoderTape<T>& tape,
                                      const FeatureMap& output_gradient) {
  const auto [h_out, w_out] = tape.out_size.back();
  if (output_gradient.channels != params.dim || output_gradient.height != h_out ||
      output_gradient.width != w_out) {
    throw Error(ErrorCode::kShape, "output gradient does not match the feature map shape");
  }
  BasicEncoderParams<T> grad = BasicEncoderParams<T>::zeros(params.dim);
  const int d = params.dim;
  const int n_out = h_out * w_out;

  // Through the normalization: dz = (g - f (f . g)) / |z|.
  std::vector<T> dy(static_cast<std::size_t>(d) * n_out, T(0));
  for (int p = 0; p < n_out; ++p) {
    const double norm = tape.norms[p];
    if (norm <= kNormEpsilon) continue;
    const double* f = tape.output.data.data() + static_cast<std::size_t>(p) * d;
    const double* g = output_gradient.data.data() + static_cast<std::size_t>(p) * d;
    double fg = 0.0;
    for (int c = 0; c < d; ++c) fg += f[c] * g[c];
    for (int c = 0; c < d; ++c) dy[static_cast<std::size_t>(c) * n_out + p] = static_cast<T>((g[c] - f[c] * fg) / norm);
  }

  for (int l = static_cast<int>(params.layers.size()) - 1; l >= 0; --l) {
    const ConvLayer<T>& layer = params.layers[l];
    ConvLayer<T>& g = grad.layers[l];
    const auto [ho, wo] = tape.out_size[l];
    const auto [hi, wi] = tape.in_size[l];
    const int n = ho * wo;
    const int patch = layer.patch();
    if (l + 1 < static_cast<int>(params.layers.size())) {
      const auto& pre = tape.pre[l];
      for (std::size_t i = 0; i < dy.size(); ++i) {
        if (!(pre[i] > T(0))) dy[i] *= T(BasicEncoderParams<T>::kLeakySlope);
      }
    }
    for (int o = 0; o < layer.out_channels; ++o) {
      T s = 0;
      const T* row = dy.data() + static_cast<std::size_t>(o) * n;
      for (int i = 0; i < n; ++i) s += row[i];
      g.bias[o] += s;
    }
    kernels::gemm_abt_acc(layer.out_channels, patch, n, dy.data(), n, tape.columns[l].data(), n, g.weight.data(),
                          patch);
    if (l == 0) break;
    std::vector<T> dcol(static_cast<std::size_t>(patch) * n, T(0));
    kernels::gemm_acc(true, patch, n, layer.out_channels, layer.weight.data(), patch, dy.data(), n, dcol.data(), n);
    std::vector<T> dx(static_cast<std::size_t>(layer.in_channels) * hi * wi, T(0));
    col2im(layer, dcol.data(), hi, wi, ho, wo, dx.data());
    dy = std::move(dx);
  }
  return grad;
}

template <typename T>
BasicEncoderParams<T> encode_backward(const BasicEncoderParams<T>& params, const RgbImage& image,
                                      const FeatureMap& output_gradient) {
  EncoderTape<T> tape;
  encode(params, image, &tape);
  return encode_backward(params, tape, output_gradient);
}

template struct BasicEncoderParams<float>;
template struct BasicEncoderParams<double>;
template FeatureMap encode(const BasicEncoderParams<float>&, const RgbImage&, EncoderTape<float>*);
template FeatureMap encode(const BasicEncoderParams<double>&, const RgbImage&, EncoderTape<double>*);
template BasicEncoderParams<float> encode_backward(const BasicEncoderParams<float>&, const EncoderTape<float>&,
                                                   const FeatureMap&);
template BasicEncoderParams<double> encode_backward(const BasicEncoderParams<double>&, const EncoderTape<double>&,
                                                    const FeatureMap&);
template BasicEncoderParams<float> encode_backward(const BasicEncoderParams<float>&, const RgbImage&,
                                                   const FeatureMap&);
template BasicEncoderParams<double> encode_backward(const BasicEncoderParams<double>&, const RgbImage&,
                                                    const FeatureMap&);

namespace {

struct Bilinear {
  std::array<int, 4> x{}, y{};
  std::array<double, 4> w{};
};

Bilinear bilinear(const FeatureMap& map, const Eigen::Vector2d& p) {
  if (!(p.x() >= 0.0 && p.y() >= 0.0 && p.x() <= map.width - 1 && p.y() <= map.height - 1)) {
    throw Error(ErrorCode::kOutOfBounds, "sample point outside the feature map");
  }
  const int x0 = std::min(static_cast<int>(std::floor(p.x())), map.width - 1);
  const int y0 = std::min(static_cast<int>(std::floor(p.y())), map.height - 1);
  const int x1 = std::min(x0 + 1, map.width - 1);
  const int y1 = std::min(y0 + 1, map.height - 1);
  const double fx = p.x() - x0, fy = p.y() - y0;
  Bilinear b;
  b.x = {x0, x1, x0, x1};
  b.y = {y0, y0, y1, y1};
  b.w = {(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy};
  return b;
}

}  // namespace

std::vector<double> sample_feature(const FeatureMap& map, const Eigen::Vector2d& p) {
  const Bilinear b = bilinear(map, p);
  std::vector<double> u(map.channels, 0.0);
  for (int i = 0; i < 4; ++i) {
    if (b.w[i] == 0.0) continue;
    kernels::axpy(b.w[i], map.pixel(b.x[i], b.y[i]), u.data(), u.size());
  }
  const double norm = std::sqrt(kernels::dot(u.data(), u.data(), u.size()));
  if (norm <= kNormEpsilon) return std::vector<double>(map.channels, 0.0);
  for (auto& v : u) v /= norm;
  return u;
}

void sample_feature_backward(const FeatureMap& map, const Eigen::Vector2d& p, std::span<const double> g,
                             FeatureMap& map_gradient) {
  const Bilinear b = bilinear(map, p);
  const std::size_t d = map.channels;
  std::vector<double> u(d, 0.0);
  for (int i = 0; i < 4; ++i) {
    if (b.w[i] == 0.0) continue;
    kernels::axpy(b.w[i], map.pixel(b.x[i], b.y[i]), u.data(), d);
  }
  const double norm = std::sqrt(kernels::dot(u.data(), u.data(), d));
  if (norm <= kNormEpsilon) return;
  // du = (g - f (f . g)) / |u| with f = u / |u|
  double fg = 0.0;
  for (std::size_t c = 0; c < d; ++c) fg += u[c] * g[c];
  fg /= norm;
  std::vector<double> du(d);
  for (std::size_t c = 0; c < d; ++c) du[c] = (g[c] - u[c] / norm * fg) / norm;
  for (int i = 0; i < 4; ++i) {
    if (b.w[i] == 0.0) continue;
    kernels::axpy(b.w[i], du.data(), map_gradient.pixel(b.x[i], b.y[i]), d);
  }
}

void save_encoder(const std::filesystem::path& path, const EncoderParams& params) {
  BinaryWriter out(path);
  out.bytes("NMEN", 4);
  out.u32(static_cast<std::uint32_t>(params.dim));
  out.u32(static_cast<std::uint32_t>(params.layers.size()));
  for (const auto& l : params.layers) {
    out.u32(l.out_channels);
    out.u32(l.in_channels);
    out.u32(l.kernel);
    out.u32(l.stride);
    out.u32(l.pad);
    out.f32s(l.weight);
    out.f32s(l.bias);
  }
  out.close();
}

EncoderParams load_encoder(const std::filesystem::path& path) {
  BinaryReader in(path);
  char magic[4];
  in.bytes(magic, 4);
  if (std::string_view(magic, 4) != "NMEN") throw Error(ErrorCode::kIo, path.string() + ": not an encoder checkpoint");
  const std::uint32_t dim = in.u32();
  const std::uint32_t count = in.u32();
  if (dim == 0 || dim > 4096 || count != 3) throw Error(ErrorCode::kIo, path.string() + ": unsupported encoder shape");
  EncoderParams p = EncoderParams::zeros(static_cast<int>(dim));
  for (auto& l : p.layers) {
    const std::uint32_t out = in.u32(), inc = in.u32(), k = in.u32(), s = in.u32(), pad = in.u32();
    if (int(out) != l.out_channels || int(inc) != l.in_channels || int(k) != l.kernel || int(s) != l.stride ||
        int(pad) != l.pad) {
      throw Error(ErrorCode::kIo, path.string() + ": layer shape mismatch");
    }
    l.weight = in.f32s(l.weight.size());
    l.bias = in.f32s(l.bias.size());
  }
  if (!p.all_finite()) throw Error(ErrorCode::kIo, path.string() + ": non-finite parameters");
  return p;
}

}  // namespace nmpose
