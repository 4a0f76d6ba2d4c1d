#include "svre/attacks.hpp"

#include "svre/errors.hpp"
#include "svre/rng.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <mutex>
#include <thread>

namespace svre {

Tensor clip_ball(const Tensor& candidate, const Tensor& x, double eps) {
  require_same_shape(candidate, x, "clip_ball");
  const auto lo = (x.values().array() - eps).max(0.0);
  const auto hi = (x.values().array() + eps).min(1.0);
  Eigen::VectorXd out = candidate.values().array().max(lo).min(hi).matrix();
  return Tensor(x.shape(), std::move(out));
}

const char* method_name(AttackMethod m) { return m == AttackMethod::ens ? "ens" : "svre"; }

AttackMethod parse_method(std::string_view name) {
  if (name == "ens") return AttackMethod::ens;
  if (name == "svre") return AttackMethod::svre;
  throw InvalidArgument("unknown attack method '" + std::string(name) + "'");
}

const char* base_name(BaseMethod b) {
  switch (b) {
    case BaseMethod::ifgsm: return "ifgsm";
    case BaseMethod::mifgsm: return "mifgsm";
    case BaseMethod::tim: return "tim";
    case BaseMethod::tidim: return "tidim";
    case BaseMethod::sitidim: return "sitidim";
    case BaseMethod::admix_tidim: return "admix-tidim";
  }
  return "?";
}

BaseMethod parse_base(std::string_view name) {
  for (BaseMethod b : {BaseMethod::ifgsm, BaseMethod::mifgsm, BaseMethod::tim, BaseMethod::tidim, BaseMethod::sitidim,
                       BaseMethod::admix_tidim}) {
    if (name == base_name(b)) return b;
  }
  throw InvalidArgument("unknown base method '" + std::string(name) + "'");
}

void validate(const AttackConfig& cfg) {
  if (!(cfg.epsilon > 0.0)) throw InvalidArgument("epsilon must be positive");
  if (cfg.iterations < 0) throw InvalidArgument("T must be non-negative");
  if (cfg.iterations > 0 && !(cfg.alpha() > 0.0)) throw InvalidArgument("alpha must be positive");
  if (cfg.inner_iterations < 0) throw InvalidArgument("M must be non-negative");
  if (cfg.iterations > 0 && !(cfg.beta() > 0.0)) throw InvalidArgument("beta must be positive");
  if (!(cfg.decay >= 0.0) || !(cfg.inner_decay >= 0.0)) throw InvalidArgument("decay factors must be non-negative");
  validate(cfg.transforms);
}

AttackConfig default_config(BaseMethod base, int ensemble_size,
                            std::shared_ptr<const std::vector<LabeledImage>> admix_pool) {
  AttackConfig cfg;
  cfg.inner_iterations = 4 * ensemble_size;
  cfg.decay = base == BaseMethod::ifgsm ? 0.0 : 1.0;
  if (base == BaseMethod::tim || base == BaseMethod::tidim || base == BaseMethod::sitidim ||
      base == BaseMethod::admix_tidim) {
    cfg.transforms.translation = TranslationInvariance{};
  }
  if (base == BaseMethod::tidim || base == BaseMethod::sitidim || base == BaseMethod::admix_tidim) {
    cfg.transforms.diversity = DiversityInput{};
  }
  if (base == BaseMethod::sitidim) cfg.transforms.scale = ScaleInvariance{};
  if (base == BaseMethod::admix_tidim) {
    Admix a;
    a.pool = std::move(admix_pool);
    cfg.transforms.admix = a;
  }
  return cfg;
}

namespace {

constexpr std::uint64_t kOuterStream = 1;
constexpr std::uint64_t kInnerStream = 2;

// Gives one attack its own (optionally capped) counter, restoring the caller's on exit.
class CounterScope {
 public:
  CounterScope(EnsembleEvaluator& ens, std::optional<std::uint64_t> budget)
      : ens_(ens), previous_(ens.counter()), local_(budget) {
    ens_.set_counter(local_);
  }
  ~CounterScope() { ens_.set_counter(previous_); }
  CounterScope(const CounterScope&) = delete;
  CounterScope& operator=(const CounterScope&) = delete;

  std::uint64_t used() const { return local_.value(); }
  void commit() { previous_.charge(local_.value()); }

 private:
  EnsembleEvaluator& ens_;
  QueryCounter& previous_;
  QueryCounter local_;
};

// acc <- decay * acc + g  (g / ||g||_1 when normalising)
Tensor accumulate(const Tensor& acc, double decay, const Tensor& g, bool normalize) {
  Tensor out(g.shape());
  const double norm = normalize ? l1_norm(g) : 0.0;
  if (normalize && norm > 0.0) {
    out.values() = decay * acc.values() + g.values() / norm;
  } else {
    out.values() = decay * acc.values() + g.values();
  }
  return out;
}

Tensor outer_gradient(EnsembleEvaluator& ens, const Tensor& x_t, int label, const AttackConfig& cfg,
                      std::uint64_t image_index, int t) {
  Rng rng = make_rng(cfg.seed, {image_index, static_cast<std::uint64_t>(t), kOuterStream});
  const GradientFn fn = [&ens, label](const Tensor& in) { return ens.ensemble_gradient(in, label); };
  return transformed_gradient(cfg.transforms, fn, x_t, label, rng);
}

void check_inputs(EnsembleEvaluator& ens, const Tensor& x, const AttackConfig& cfg) {
  validate(cfg);
  (void)ens;
  if (x.rank() != 3) throw ShapeError("attack input must be [C,H,W], got " + shape_string(x.shape()));
}

}  // namespace

ImageAttackResult ens_attack(EnsembleEvaluator& ens, const Tensor& x, int label, const AttackConfig& cfg,
                             std::uint64_t image_index, const AttackHooks& hooks) {
  check_inputs(ens, x, cfg);
  CounterScope scope(ens, cfg.max_queries);
  ImageAttackResult r;
  Tensor x_adv = x;
  Tensor momentum = Tensor::zeros(x.shape());
  r.losses.push_back(ens.ensemble_loss(x_adv, label));
  if (hooks.on_iterate) hooks.on_iterate(0, x_adv);

  for (int t = 0; t < cfg.iterations; ++t) {
    const Tensor g = outer_gradient(ens, x_adv, label, cfg, image_index, t);
    if (hooks.on_ensemble_gradient) hooks.on_ensemble_gradient(t, g);
    momentum = accumulate(momentum, cfg.decay, g, cfg.normalize_momentum);
    x_adv = clip_ball(x_adv + cfg.alpha() * sign(momentum), x, cfg.epsilon);
    r.losses.push_back(ens.ensemble_loss(x_adv, label));
    if (hooks.on_iterate) hooks.on_iterate(t + 1, x_adv);
  }
  r.adversarial = std::move(x_adv);
  r.queries = scope.used();
  scope.commit();
  return r;
}

Tensor svre_inner_gradient(EnsembleEvaluator& ens, int k, const Tensor& x_inner, const Tensor& x_outer,
                           const Tensor& g_ens, int label) {
  const Tensor at_inner = ens.single_model_gradient(k, x_inner, label);
  const Tensor at_outer = ens.single_model_gradient(k, x_outer, label);
  return at_inner - (at_outer - g_ens);
}

ImageAttackResult svre_attack(EnsembleEvaluator& ens, const Tensor& x, int label, const AttackConfig& cfg,
                              std::uint64_t image_index, const AttackHooks& hooks) {
  check_inputs(ens, x, cfg);
  CounterScope scope(ens, cfg.max_queries);
  const int members = ens.size();
  ImageAttackResult r;
  Tensor x_adv = x;
  Tensor momentum = Tensor::zeros(x.shape());
  r.losses.push_back(ens.ensemble_loss(x_adv, label));
  if (hooks.on_iterate) hooks.on_iterate(0, x_adv);

  for (int t = 0; t < cfg.iterations; ++t) {
    const Tensor g_ens = outer_gradient(ens, x_adv, label, cfg, image_index, t);
    if (hooks.on_ensemble_gradient) hooks.on_ensemble_gradient(t, g_ens);

    Tensor inner_momentum;
    if (cfg.inner_iterations == 0) {
      inner_momentum = g_ens;
    } else {
      Rng rng = make_rng(cfg.seed, {image_index, static_cast<std::uint64_t>(t), kInnerStream});
      Tensor x_inner = x_adv;
      inner_momentum = Tensor::zeros(x.shape());
      for (int m = 0; m < cfg.inner_iterations; ++m) {
        const int k = static_cast<int>(uniform_int(rng, 0, members - 1));
        const GradientFn member = [&ens, k, label](const Tensor& in) {
          return ens.single_model_gradient(k, in, label);
        };
        // Each evaluation draws its own transform randomness.
        const Tensor at_inner = transformed_gradient(cfg.transforms, member, x_inner, label, rng);
        const Tensor at_outer = transformed_gradient(cfg.transforms, member, x_adv, label, rng);
        const Tensor g_inner = at_inner - (at_outer - g_ens);
        if (hooks.on_inner_gradient) hooks.on_inner_gradient(t, m, k, g_inner);
        inner_momentum = accumulate(inner_momentum, cfg.inner_decay, g_inner, cfg.normalize_momentum);
        x_inner = clip_ball(x_inner + cfg.beta() * sign(inner_momentum), x, cfg.epsilon);
      }
    }
    momentum = accumulate(momentum, cfg.decay, inner_momentum, cfg.normalize_momentum);
    x_adv = clip_ball(x_adv + cfg.alpha() * sign(momentum), x, cfg.epsilon);
    r.losses.push_back(ens.ensemble_loss(x_adv, label));
    if (hooks.on_iterate) hooks.on_iterate(t + 1, x_adv);
  }
  r.adversarial = std::move(x_adv);
  r.queries = scope.used();
  scope.commit();
  return r;
}

void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t worker, std::size_t i)>& body) {
  const std::size_t threads = std::clamp<std::size_t>(static_cast<std::size_t>(std::max(workers, 1)), 1, std::max<std::size_t>(n, 1));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) body(0, i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < threads; ++w) {
      pool.emplace_back([&, w] {
        for (std::size_t i = next++; i < n; i = next++) {
          try {
            body(w, i);
          } catch (...) {
            std::lock_guard lock(error_mutex);
            if (!error) error = std::current_exception();
            next = n;
          }
        }
      });
    }
  }
  if (error) std::rethrow_exception(error);
}

AttackReport run_attack(AttackMethod method, std::span<const std::shared_ptr<const Model>> models,
                        std::span<const LabeledImage> images, const AttackConfig& cfg, int workers,
                        const std::function<AttackHooks(std::size_t)>& hooks_for) {
  validate(cfg);
  auto compiled = std::make_shared<const CompiledEnsemble>(
      make_ensemble({models.begin(), models.end()}, cfg.fusion, cfg.include_inverse_k));
  const std::size_t threads = static_cast<std::size_t>(std::max(workers, 1));

  QueryCounter total;
  std::vector<std::unique_ptr<EnsembleEvaluator>> evaluators;
  for (std::size_t w = 0; w < std::min(threads, std::max<std::size_t>(images.size(), 1)); ++w) {
    evaluators.push_back(std::make_unique<EnsembleEvaluator>(compiled, total));
  }

  AttackReport report;
  report.method = method;
  report.config = cfg;
  report.adversarials.resize(images.size());
  report.losses.resize(images.size());
  report.queries.resize(images.size());

  parallel_for(images.size(), workers, [&](std::size_t w, std::size_t i) {
    const AttackHooks hooks = hooks_for ? hooks_for(i) : AttackHooks{};
    EnsembleEvaluator& ev = *evaluators[w];
    ImageAttackResult r = method == AttackMethod::ens
                              ? ens_attack(ev, images[i].pixels, images[i].label, cfg, i, hooks)
                              : svre_attack(ev, images[i].pixels, images[i].label, cfg, i, hooks);
    report.adversarials[i] = std::move(r.adversarial);
    report.losses[i] = std::move(r.losses);
    report.queries[i] = r.queries;
  });
  report.total_queries = total.value();
  return report;
}

}  // namespace svre
