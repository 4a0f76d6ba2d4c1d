#include "svre/transforms.hpp"

#include "svre/errors.hpp"

#include <algorithm>
#include <cmath>

namespace svre {

void validate(const TransformStack& stack) {
  if (const auto& d = stack.diversity) {
    if (!(d->probability >= 0.0 && d->probability <= 1.0)) throw InvalidArgument("di.p must lie in [0,1]");
    if (d->min_resize < 1) throw InvalidArgument("di.min_resize must be positive");
  }
  if (const auto& t = stack.translation) {
    if (t->kernel_size < 1 || t->kernel_size % 2 == 0) throw InvalidArgument("ti.size must be odd");
    if (!(t->nsig > 0.0)) throw InvalidArgument("ti.nsig must be positive");
  }
  if (stack.scale && stack.scale->copies < 1) throw InvalidArgument("si.m must be >= 1");
  if (const auto& a = stack.admix) {
    if (a->scale_copies < 1 || a->mixed_images < 1) throw InvalidArgument("admix m1, m2 must be >= 1");
    if (!(a->eta >= 0.0)) throw InvalidArgument("admix eta must be >= 0");
    if (!a->pool) throw InvalidArgument("admix needs an image pool");
    if (stack.scale) throw InvalidArgument("admix already averages scale copies; drop si");
  }
}

namespace {

void require_image(const Tensor& x, const char* what) {
  if (x.rank() != 3) throw ShapeError(std::string(what) + " expects [C,H,W], got " + shape_string(x.shape()));
}

// Bilinear sample positions for resizing `in` pixels to `out` pixels (half-pixel centres).
struct Tap {
  Index lo, hi;
  double w_hi;
};

std::vector<Tap> taps(Index in, Index out) {
  std::vector<Tap> t(static_cast<std::size_t>(out));
  const double ratio = static_cast<double>(in) / static_cast<double>(out);
  for (Index o = 0; o < out; ++o) {
    const double src = std::clamp((static_cast<double>(o) + 0.5) * ratio - 0.5, 0.0, static_cast<double>(in - 1));
    const auto lo = static_cast<Index>(std::floor(src));
    const Index hi = std::min(lo + 1, in - 1);
    t[static_cast<std::size_t>(o)] = {lo, hi, src - static_cast<double>(lo)};
  }
  return t;
}

}  // namespace

ResizePad draw_resize_pad(const DiversityInput& config, Index side, Rng& rng) {
  if (config.min_resize > side) throw InvalidArgument("di.min_resize exceeds the image side");
  ResizePad d;
  if (uniform01(rng) >= config.probability) return d;
  d.applied = true;
  d.size = uniform_int(rng, config.min_resize, side);
  d.top = uniform_int(rng, 0, side - d.size);
  d.left = uniform_int(rng, 0, side - d.size);
  return d;
}

Tensor apply_resize_pad(const Tensor& x, const ResizePad& draw) {
  require_image(x, "resize-pad");
  if (!draw.applied) return x;
  const Index c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (h != w || draw.size > h || draw.top + draw.size > h || draw.left + draw.size > w) {
    throw InvalidArgument("resize-pad draw does not fit the image");
  }
  const std::vector<Tap> ty = taps(h, draw.size);
  const std::vector<Tap> tx = taps(w, draw.size);
  Tensor out(x.shape());
  for (Index ch = 0; ch < c; ++ch) {
    const double* src = x.data() + ch * h * w;
    double* dst = out.data() + ch * h * w;
    for (Index oy = 0; oy < draw.size; ++oy) {
      const Tap& a = ty[static_cast<std::size_t>(oy)];
      for (Index ox = 0; ox < draw.size; ++ox) {
        const Tap& b = tx[static_cast<std::size_t>(ox)];
        const double top = src[a.lo * w + b.lo] * (1.0 - b.w_hi) + src[a.lo * w + b.hi] * b.w_hi;
        const double bottom = src[a.hi * w + b.lo] * (1.0 - b.w_hi) + src[a.hi * w + b.hi] * b.w_hi;
        dst[(oy + draw.top) * w + ox + draw.left] = top * (1.0 - a.w_hi) + bottom * a.w_hi;
      }
    }
  }
  return out;
}

Tensor adjoint_resize_pad(const Tensor& g, const ResizePad& draw) {
  require_image(g, "resize-pad adjoint");
  if (!draw.applied) return g;
  const Index c = g.dim(0), h = g.dim(1), w = g.dim(2);
  const std::vector<Tap> ty = taps(h, draw.size);
  const std::vector<Tap> tx = taps(w, draw.size);
  Tensor out(g.shape());
  for (Index ch = 0; ch < c; ++ch) {
    const double* src = g.data() + ch * h * w;
    double* dst = out.data() + ch * h * w;
    for (Index oy = 0; oy < draw.size; ++oy) {
      const Tap& a = ty[static_cast<std::size_t>(oy)];
      for (Index ox = 0; ox < draw.size; ++ox) {
        const Tap& b = tx[static_cast<std::size_t>(ox)];
        const double v = src[(oy + draw.top) * w + ox + draw.left];
        dst[a.lo * w + b.lo] += v * (1.0 - a.w_hi) * (1.0 - b.w_hi);
        dst[a.lo * w + b.hi] += v * (1.0 - a.w_hi) * b.w_hi;
        dst[a.hi * w + b.lo] += v * a.w_hi * (1.0 - b.w_hi);
        dst[a.hi * w + b.hi] += v * a.w_hi * b.w_hi;
      }
    }
  }
  return out;
}

Tensor dim_transform(const Tensor& x, double probability, Index min_resize, Rng& rng) {
  require_image(x, "dim_transform");
  return apply_resize_pad(x, draw_resize_pad({probability, min_resize}, x.dim(1), rng));
}

Tensor ti_kernel(Index size, double nsig) {
  if (size < 1 || size % 2 == 0) throw InvalidArgument("TI kernel size must be odd, got " + std::to_string(size));
  if (!(nsig > 0.0)) throw InvalidArgument("TI nsig must be positive");
  Tensor k({size, size});
  const Index half = size / 2;
  if (half == 0) {
    k[0] = 1.0;
    return k;
  }
  const double sigma = static_cast<double>(half) / nsig;
  for (Index i = 0; i < size; ++i) {
    for (Index j = 0; j < size; ++j) {
      const double di = static_cast<double>(i - half), dj = static_cast<double>(j - half);
      k[i * size + j] = std::exp(-(di * di + dj * dj) / (2.0 * sigma * sigma));
    }
  }
  k.values() /= k.values().sum();
  return k;
}

Tensor ti_smooth(const Tensor& gradient, const Tensor& kernel) {
  require_image(gradient, "ti_smooth");
  if (kernel.rank() != 2 || kernel.dim(0) != kernel.dim(1) || kernel.dim(0) % 2 == 0) {
    throw ShapeError("TI kernel must be square with odd side");
  }
  const Index c = gradient.dim(0), h = gradient.dim(1), w = gradient.dim(2);
  const Index ks = kernel.dim(0), half = ks / 2;
  Tensor out(gradient.shape());
  for (Index ch = 0; ch < c; ++ch) {
    const double* src = gradient.data() + ch * h * w;
    double* dst = out.data() + ch * h * w;
    for (Index y = 0; y < h; ++y) {
      for (Index x = 0; x < w; ++x) {
        double acc = 0.0;
        for (Index i = 0; i < ks; ++i) {
          const Index sy = y + half - i;
          if (sy < 0 || sy >= h) continue;
          for (Index j = 0; j < ks; ++j) {
            const Index sx = x + half - j;
            if (sx < 0 || sx >= w) continue;
            acc += kernel[i * ks + j] * src[sy * w + sx];
          }
        }
        dst[y * w + x] = acc;
      }
    }
  }
  return out;
}

Tensor si_gradient(const GradientFn& grad_fn, const Tensor& x, int copies) {
  if (copies < 1) throw InvalidArgument("scale invariance needs at least one copy");
  Tensor acc = Tensor::zeros(x.shape());
  double factor = 1.0;
  for (int i = 0; i < copies; ++i, factor *= 0.5) acc.values() += grad_fn(factor * x).values();
  acc.values() /= static_cast<double>(copies);
  return acc;
}

Tensor admix_gradient(const GradientFn& grad_fn, const Tensor& x, int label, const Admix& config, Rng& rng) {
  if (config.scale_copies < 1 || config.mixed_images < 1) throw InvalidArgument("admix m1, m2 must be >= 1");
  if (!config.pool) throw InvalidArgument("admix needs an image pool");
  std::vector<std::size_t> candidates;
  for (std::size_t i = 0; i < config.pool->size(); ++i) {
    if ((*config.pool)[i].label != label) candidates.push_back(i);
  }
  if (candidates.size() < static_cast<std::size_t>(config.mixed_images)) {
    throw InvalidArgument("admix pool has " + std::to_string(candidates.size()) + " images of other classes, needs " +
                          std::to_string(config.mixed_images));
  }
  // Partial Fisher-Yates: the first m2 entries become the sample.
  for (int j = 0; j < config.mixed_images; ++j) {
    const auto pick = static_cast<std::size_t>(uniform_int(rng, j, static_cast<std::int64_t>(candidates.size()) - 1));
    std::swap(candidates[static_cast<std::size_t>(j)], candidates[pick]);
  }
  Tensor acc = Tensor::zeros(x.shape());
  for (int j = 0; j < config.mixed_images; ++j) {
    const Tensor& addin = (*config.pool)[candidates[static_cast<std::size_t>(j)]].pixels;
    require_same_shape(addin, x, "admix add-in");
    const Tensor mixed = x + config.eta * addin;
    double factor = 1.0;
    for (int i = 0; i < config.scale_copies; ++i, factor *= 0.5) acc.values() += grad_fn(factor * mixed).values();
  }
  acc.values() /= static_cast<double>(config.scale_copies * config.mixed_images);
  return acc;
}

Tensor transformed_gradient(const TransformStack& stack, const GradientFn& base, const Tensor& x, int label,
                            Rng& rng) {
  GradientFn diverse = base;
  if (stack.diversity) {
    const DiversityInput di = *stack.diversity;
    diverse = [&base, di, &rng](const Tensor& in) {
      const ResizePad draw = draw_resize_pad(di, in.dim(1), rng);
      return adjoint_resize_pad(base(apply_resize_pad(in, draw)), draw);
    };
  }
  Tensor g;
  if (stack.admix) g = admix_gradient(diverse, x, label, *stack.admix, rng);
  else if (stack.scale) g = si_gradient(diverse, x, stack.scale->copies);
  else g = diverse(x);
  if (stack.translation) g = ti_smooth(g, ti_kernel(stack.translation->kernel_size, stack.translation->nsig));
  return g;
}

Tensor defense_bit_reduce(const Tensor& x, int bits) {
  if (bits < 1 || bits > 8) throw InvalidArgument("bit depth must lie in [1,8]");
  const double levels = static_cast<double>((1 << bits) - 1);
  Eigen::VectorXd out =
      x.values().unaryExpr([levels](double v) { return std::floor(std::clamp(v, 0.0, 1.0) * levels + 0.5) / levels; });
  return Tensor(x.shape(), std::move(out));
}

Tensor defense_spatial_smooth(const Tensor& x, Index window) {
  require_image(x, "spatial smoothing");
  if (window < 1 || window % 2 == 0) throw InvalidArgument("median window must be odd, got " + std::to_string(window));
  const Index c = x.dim(0), h = x.dim(1), w = x.dim(2), half = window / 2;
  Tensor out(x.shape());
  std::vector<double> buf(static_cast<std::size_t>(window * window));
  for (Index ch = 0; ch < c; ++ch) {
    const double* src = x.data() + ch * h * w;
    for (Index y = 0; y < h; ++y) {
      for (Index xx = 0; xx < w; ++xx) {
        std::size_t n = 0;
        for (Index dy = -half; dy <= half; ++dy) {
          const Index sy = std::clamp(y + dy, Index{0}, h - 1);
          for (Index dx = -half; dx <= half; ++dx) buf[n++] = src[sy * w + std::clamp(xx + dx, Index{0}, w - 1)];
        }
        auto mid = buf.begin() + static_cast<std::ptrdiff_t>(n / 2);
        std::nth_element(buf.begin(), mid, buf.end());
        out[ch * h * w + y * w + xx] = std::clamp(*mid, 0.0, 1.0);
      }
    }
  }
  return out;
}

}  // namespace svre
