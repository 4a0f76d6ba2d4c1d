// Test-side reference implementations. Nothing here calls into the graph engine or the
// transforms module; each oracle is a direct evaluation of the defining formula.
#ifndef SVRE_TESTS_ORACLES_HPP
#define SVRE_TESTS_ORACLES_HPP

#include "svre/rng.hpp"
#include "svre/tensor.hpp"
#include "svre/zoo.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <vector>

namespace oracle {

using svre::Index;
using svre::Tensor;

// A [C,H,W] activation held as nested-loop friendly storage.
struct Act {
  Index c = 0, h = 0, w = 0;
  std::vector<double> v;
  double& at(Index ch, Index y, Index x) { return v[static_cast<std::size_t>((ch * h + y) * w + x)]; }
  double at(Index ch, Index y, Index x) const { return v[static_cast<std::size_t>((ch * h + y) * w + x)]; }
};

inline Act conv(const Act& in, const Tensor& weight, const Tensor& bias, Index stride, Index pad) {
  const Index o = weight.dim(0), k = weight.dim(2);
  Act out{o, (in.h + 2 * pad - k) / stride + 1, (in.w + 2 * pad - k) / stride + 1, {}};
  out.v.assign(static_cast<std::size_t>(out.c * out.h * out.w), 0.0);
  for (Index oc = 0; oc < o; ++oc) {
    for (Index y = 0; y < out.h; ++y) {
      for (Index x = 0; x < out.w; ++x) {
        double s = bias[oc];
        for (Index ic = 0; ic < in.c; ++ic) {
          for (Index ky = 0; ky < k; ++ky) {
            for (Index kx = 0; kx < k; ++kx) {
              const Index sy = y * stride + ky - pad, sx = x * stride + kx - pad;
              if (sy < 0 || sy >= in.h || sx < 0 || sx >= in.w) continue;
              s += weight[((oc * in.c + ic) * k + ky) * k + kx] * in.at(ic, sy, sx);
            }
          }
        }
        out.at(oc, y, x) = s;
      }
    }
  }
  return out;
}

inline Act pool(const Act& in, Index k, Index stride, bool max) {
  Act out{in.c, (in.h - k) / stride + 1, (in.w - k) / stride + 1, {}};
  out.v.assign(static_cast<std::size_t>(out.c * out.h * out.w), 0.0);
  for (Index ch = 0; ch < in.c; ++ch) {
    for (Index y = 0; y < out.h; ++y) {
      for (Index x = 0; x < out.w; ++x) {
        double acc = max ? -std::numeric_limits<double>::infinity() : 0.0;
        for (Index dy = 0; dy < k; ++dy) {
          for (Index dx = 0; dx < k; ++dx) {
            const double v = in.at(ch, y * stride + dy, x * stride + dx);
            acc = max ? std::max(acc, v) : acc + v;
          }
        }
        out.at(ch, y, x) = max ? acc : acc / static_cast<double>(k * k);
      }
    }
  }
  return out;
}

// Logits of one [C,H,W] input through the layer list, with plain loops.
inline std::vector<double> logits(const svre::ModelSpec& spec, const svre::Weights& weights, const Tensor& image) {
  Act a{image.dim(0), image.dim(1), image.dim(2), std::vector<double>(image.data(), image.data() + image.size())};
  std::vector<double> flat;
  bool is_flat = false;
  std::size_t p = 0;
  for (const svre::LayerSpec& l : spec.layers) {
    switch (l.kind) {
      case svre::LayerKind::conv2d:
        a = conv(a, weights.params[p], weights.params[p + 1], l.stride, l.padding);
        p += 2;
        break;
      case svre::LayerKind::relu:
        for (double& v : is_flat ? flat : a.v) v = std::max(v, 0.0);
        break;
      case svre::LayerKind::max_pool:
        a = pool(a, l.kernel, l.stride, true);
        break;
      case svre::LayerKind::avg_pool:
        a = pool(a, l.kernel, l.stride, false);
        break;
      case svre::LayerKind::flatten:
        flat = a.v;
        is_flat = true;
        break;
      case svre::LayerKind::dense: {
        const Tensor& w = weights.params[p];
        const Tensor& b = weights.params[p + 1];
        p += 2;
        const Index in = w.dim(0), out = w.dim(1);
        std::vector<double> next(static_cast<std::size_t>(out));
        for (Index j = 0; j < out; ++j) {
          double s = b[j];
          for (Index i = 0; i < in; ++i) s += flat[static_cast<std::size_t>(i)] * w[i * out + j];
          next[static_cast<std::size_t>(j)] = s;
        }
        flat = std::move(next);
        break;
      }
    }
  }
  return flat;
}

inline double cross_entropy(const std::vector<double>& z, int label) {
  const double m = *std::max_element(z.begin(), z.end());
  double s = 0.0;
  for (double v : z) s += std::exp(v - m);
  return m + std::log(s) - z[static_cast<std::size_t>(label)];
}

// Central differences of f at x.
inline Tensor central_difference(const std::function<double(const Tensor&)>& f, const Tensor& x, double h = 1e-5) {
  Tensor g(x.shape());
  Tensor probe = x;
  for (Index i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + h;
    const double up = f(probe);
    probe[i] = x[i] - h;
    const double down = f(probe);
    probe[i] = x[i];
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

inline double relative_error(const Tensor& a, const Tensor& b) {
  double num = 0.0, den = 0.0;
  for (Index i = 0; i < a.size(); ++i) {
    num += (a[i] - b[i]) * (a[i] - b[i]);
    den += b[i] * b[i];
  }
  return std::sqrt(num) / std::max(std::sqrt(den), 1e-12);
}

// Per-channel zero-padded "same" cross-correlation.
inline Tensor correlate_same(const Tensor& field, const Tensor& kernel) {
  const Index c = field.dim(0), h = field.dim(1), w = field.dim(2), k = kernel.dim(0), r = k / 2;
  Tensor out(field.shape());
  for (Index ch = 0; ch < c; ++ch) {
    for (Index y = 0; y < h; ++y) {
      for (Index x = 0; x < w; ++x) {
        double s = 0.0;
        for (Index i = 0; i < k; ++i) {
          for (Index j = 0; j < k; ++j) {
            const Index sy = y + i - r, sx = x + j - r;
            if (sy >= 0 && sy < h && sx >= 0 && sx < w) s += kernel[i * k + j] * field[(ch * h + sy) * w + sx];
          }
        }
        out[(ch * h + y) * w + x] = s;
      }
    }
  }
  return out;
}

inline Tensor gaussian(Index size, double nsig) {
  Tensor k({size, size});
  const double r = static_cast<double>(size / 2);
  const double sigma = r / nsig;
  double z = 0.0;
  for (Index i = 0; i < size; ++i) {
    for (Index j = 0; j < size; ++j) {
      const double di = static_cast<double>(i) - r, dj = static_cast<double>(j) - r;
      k[i * size + j] = size == 1 ? 1.0 : std::exp(-(di * di + dj * dj) / (2.0 * sigma * sigma));
      z += k[i * size + j];
    }
  }
  for (Index i = 0; i < k.size(); ++i) k[i] /= z;
  return k;
}

// Bilinear resize of every channel to `size` (pixel centres at (i + 0.5) * in / out - 0.5,
// clamped to the image) placed on a zero canvas at (top, left).
inline Tensor resize_pad(const Tensor& x, Index size, Index top, Index left) {
  const Index c = x.dim(0), n = x.dim(1);
  Tensor out(x.shape());
  auto source = [&](Index o) {
    double s = (static_cast<double>(o) + 0.5) * static_cast<double>(n) / static_cast<double>(size) - 0.5;
    return std::clamp(s, 0.0, static_cast<double>(n - 1));
  };
  for (Index ch = 0; ch < c; ++ch) {
    for (Index oy = 0; oy < size; ++oy) {
      for (Index ox = 0; ox < size; ++ox) {
        const double sy = source(oy), sx = source(ox);
        const Index y0 = static_cast<Index>(sy), x0 = static_cast<Index>(sx);
        const Index y1 = std::min(y0 + 1, n - 1), x1 = std::min(x0 + 1, n - 1);
        const double fy = sy - static_cast<double>(y0), fx = sx - static_cast<double>(x0);
        auto px = [&](Index y, Index xx) { return x[(ch * n + y) * n + xx]; };
        const double v = (1 - fy) * ((1 - fx) * px(y0, x0) + fx * px(y0, x1)) +
                         fy * ((1 - fx) * px(y1, x0) + fx * px(y1, x1));
        out[(ch * n + oy + top) * n + ox + left] = v;
      }
    }
  }
  return out;
}

inline Tensor random_tensor(svre::Shape shape, svre::Rng& rng, double lo = 0.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (Index i = 0; i < t.size(); ++i) t[i] = lo + (hi - lo) * svre::uniform01(rng);
  return t;
}

}  // namespace oracle

#endif  // SVRE_TESTS_ORACLES_HPP
