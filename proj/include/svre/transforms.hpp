#ifndef SVRE_TRANSFORMS_HPP
#define SVRE_TRANSFORMS_HPP

#include "svre/dataset.hpp"
#include "svre/rng.hpp"
#include "svre/tensor.hpp"

#include <functional>
#include <memory>
#include <optional>
#include <vector>

namespace svre {

/// Random resize-and-pad input diversity.
struct DiversityInput {
  double probability = 0.5;
  Index min_resize = 26;
};

/// Gaussian smoothing of the gradient.
struct TranslationInvariance {
  Index kernel_size = 7;
  double nsig = 3.0;
};

/// Averaging over scaled copies x / 2^i, i = 0..copies-1.
struct ScaleInvariance {
  int copies = 5;
};

/// Averaging over copies (x + eta * x') / 2^i with add-in images x' of other classes.
struct Admix {
  int scale_copies = 5;  // m1
  int mixed_images = 3;  // m2
  double eta = 0.2;
  std::shared_ptr<const std::vector<LabeledImage>> pool;
};

/// Transform components of an attack. Gradients are formed as
///   ti( mean over copies c of  dim^T grad(dim(c)) )
/// where the copies come from admix or scale invariance (or just x itself).
struct TransformStack {
  std::optional<DiversityInput> diversity;
  std::optional<TranslationInvariance> translation;
  std::optional<ScaleInvariance> scale;
  std::optional<Admix> admix;

  bool stochastic() const { return diversity.has_value() || admix.has_value(); }
};

void validate(const TransformStack& stack);

/// One random outcome of the resize-and-pad transform.
struct ResizePad {
  bool applied = false;
  Index size = 0;  // resized side length
  Index top = 0;
  Index left = 0;
};

/// Draws: u ~ U[0,1); identity if u >= p, else r ~ U{min_resize..side} and
/// offsets ~ U{0..side-r}.
ResizePad draw_resize_pad(const DiversityInput& config, Index side, Rng& rng);
/// Bilinear resize of each channel to `size` (half-pixel centres), zero-padded back to
/// the original side at (top, left).
Tensor apply_resize_pad(const Tensor& x, const ResizePad& draw);
/// Adjoint of apply_resize_pad (the transpose of the linear map).
Tensor adjoint_resize_pad(const Tensor& g, const ResizePad& draw);

Tensor dim_transform(const Tensor& x, double probability, Index min_resize, Rng& rng);

/// size x size Gaussian whose half-width spans nsig standard deviations, normalised to sum 1.
Tensor ti_kernel(Index size, double nsig);
/// Per-channel 2-D convolution of a [C,H,W] field with zero padding, shape preserved.
Tensor ti_smooth(const Tensor& gradient, const Tensor& kernel);

using GradientFn = std::function<Tensor(const Tensor&)>;

/// (1/m) sum_{i<m} grad_fn(x / 2^i).
Tensor si_gradient(const GradientFn& grad_fn, const Tensor& x, int copies);
/// (1/(m1 m2)) sum_j sum_i grad_fn((x + eta x'_j) / 2^i), x'_j drawn without
/// replacement from pool images whose label differs from `label`.
Tensor admix_gradient(const GradientFn& grad_fn, const Tensor& x, int label, const Admix& config, Rng& rng);

/// Applies the whole stack around a base gradient oracle.
Tensor transformed_gradient(const TransformStack& stack, const GradientFn& base, const Tensor& x, int label,
                            Rng& rng);

/// round-half-up(x (2^bits - 1)) / (2^bits - 1), per pixel.
Tensor defense_bit_reduce(const Tensor& x, int bits);
/// Per-channel median filter with edge replication.
Tensor defense_spatial_smooth(const Tensor& x, Index window);

}  // namespace svre

#endif  // SVRE_TRANSFORMS_HPP
