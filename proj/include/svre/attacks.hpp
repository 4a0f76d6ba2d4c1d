#ifndef SVRE_ATTACKS_HPP
#define SVRE_ATTACKS_HPP

#include "svre/fusion.hpp"
#include "svre/tensor.hpp"
#include "svre/transforms.hpp"

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace svre {

/// Projection onto the L-inf ball of radius eps around x, intersected with [0,1].
Tensor clip_ball(const Tensor& candidate, const Tensor& x, double eps);

enum class AttackMethod { ens, svre };
/// Base attack a method is integrated with.
enum class BaseMethod { ifgsm, mifgsm, tim, tidim, sitidim, admix_tidim };

const char* method_name(AttackMethod m);
AttackMethod parse_method(std::string_view name);
const char* base_name(BaseMethod b);
BaseMethod parse_base(std::string_view name);

/// Every attack hyperparameter. Pixel quantities are on the [0,1] scale.
struct AttackConfig {
  double epsilon = 16.0 / 255.0;
  int iterations = 10;                  // T
  std::optional<double> step;           // alpha, defaults to epsilon / T
  double decay = 1.0;                   // mu1
  int inner_iterations = 16;            // M
  std::optional<double> inner_step;     // beta, defaults to alpha
  double inner_decay = 1.0;             // mu2
  FusionMode fusion = FusionMode::logits;
  bool include_inverse_k = true;
  TransformStack transforms;
  bool normalize_momentum = false;      // divide each accumulated gradient by its L1 norm
  std::uint64_t seed = 0;
  std::optional<std::uint64_t> max_queries;  // per image

  double alpha() const { return step.value_or(epsilon / static_cast<double>(iterations)); }
  double beta() const { return inner_step.value_or(alpha()); }
};

void validate(const AttackConfig& cfg);

/// Defaults for a base method: eps = 16/255, T = 10, mu1 = 1 (0 for I-FGSM), M = 4K,
/// beta = alpha, mu2 = 1, TI 7x7, DIM p = 0.5, SIM m = 5, Admix (5, 3, 0.2).
AttackConfig default_config(BaseMethod base, int ensemble_size,
                            std::shared_ptr<const std::vector<LabeledImage>> admix_pool = nullptr);

/// Observation points inside an attack, for telemetry and tests. All optional.
struct AttackHooks {
  /// x_t for t = 0..T (t = 0 is the clean image).
  std::function<void(int t, const Tensor& x_t)> on_iterate;
  /// g_t^ens as used by the update.
  std::function<void(int t, const Tensor& g_ens)> on_ensemble_gradient;
  /// Variance-reduced inner gradient g~_m, with the drawn model index.
  std::function<void(int t, int m, int k, const Tensor& g)> on_inner_gradient;
};

struct ImageAttackResult {
  Tensor adversarial;
  std::vector<double> losses;  // fused ensemble loss at x_0..x_T
  std::uint64_t queries = 0;
};

/// Ens-(M)I-FGSM with optional transforms on one image [3,32,32]:
///   G <- mu1 G + g~ ;  x <- clip(x + alpha sign(G)).
ImageAttackResult ens_attack(EnsembleEvaluator& ens, const Tensor& x, int label, const AttackConfig& cfg,
                             std::uint64_t image_index, const AttackHooks& hooks = {});

/// SVRE: per outer iteration an ensemble gradient, then M variance-reduced inner steps
/// on randomly drawn members, whose accumulated gradient drives the outer step.
/// With M = 0 the inner accumulator is the ensemble gradient itself.
ImageAttackResult svre_attack(EnsembleEvaluator& ens, const Tensor& x, int label, const AttackConfig& cfg,
                              std::uint64_t image_index, const AttackHooks& hooks = {});

/// grad J_k(x_inner) - (grad J_k(x_outer) - g_ens). Two queries.
Tensor svre_inner_gradient(EnsembleEvaluator& ens, int k, const Tensor& x_inner, const Tensor& x_outer,
                           const Tensor& g_ens, int label);

struct AttackReport {
  AttackMethod method = AttackMethod::ens;
  AttackConfig config;
  std::vector<Tensor> adversarials;
  std::vector<std::vector<double>> losses;
  std::vector<std::uint64_t> queries;
  std::uint64_t total_queries = 0;
};

/// Runs an attack over a batch of images on `workers` threads. Results do not depend on
/// the worker count. `hooks_for(i)` may supply per-image hooks.
AttackReport run_attack(AttackMethod method, std::span<const std::shared_ptr<const Model>> models,
                        std::span<const LabeledImage> images, const AttackConfig& cfg, int workers = 1,
                        const std::function<AttackHooks(std::size_t)>& hooks_for = {});

/// Runs `body(i)` for i in [0, n) on up to `workers` threads; rethrows the first error.
void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t worker, std::size_t i)>& body);

}  // namespace svre

#endif  // SVRE_ATTACKS_HPP
