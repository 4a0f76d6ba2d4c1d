// Acceptance run: one PASS/FAIL line per criterion, then informational lines.
//
// The trained zoo (dataset seed 0, 5000/1000 images, the four builtin architectures at
// their default training options) is cached under --cache and rebuilt when missing or
// unreadable. Sizes that are reduced to keep the run on one desk core are printed with
// the criterion they belong to.

#include "fixtures.hpp"
#include "oracles.hpp"

#include "svre/attacks.hpp"
#include "svre/errors.hpp"
#include "svre/evalharness.hpp"
#include "svre/graph.hpp"
#include "svre/transforms.hpp"
#include "svre/zoo.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

using namespace svre;
namespace fs = std::filesystem;

namespace {

using ModelPtr = std::shared_ptr<const Model>;

constexpr double kEps = 16.0 / 255.0;
constexpr std::size_t kImages = 256;
const std::vector<std::uint64_t> kSeeds{0, 1, 2, 3, 4};

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void report(int id, const std::string& name, const std::function<Outcome()>& check) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = check();
  } catch (const std::exception& e) {
    o = {false, std::string("threw: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (!o.pass) ++failures;
  std::printf("%s criterion %d %s: %s [%.0fs]\n", o.pass ? "PASS" : "FAIL", id, name.c_str(), o.detail.c_str(), secs);
  std::fflush(stdout);
}

void info(const std::string& line) {
  std::printf("INFO %s\n", line.c_str());
  std::fflush(stdout);
}

std::string fmt(double v, int digits = 4) {
  std::ostringstream s;
  s.precision(digits);
  s << v;
  return s.str();
}

std::string join(const std::vector<double>& v, int digits = 4) {
  std::string out;
  for (double x : v) out += (out.empty() ? "" : " ") + fmt(x, digits);
  return out;
}

double mean_of(const std::map<std::uint64_t, double>& m) {
  double s = 0.0;
  for (const auto& [seed, v] : m) s += v;
  return m.empty() ? 0.0 : s / static_cast<double>(m.size());
}

std::vector<double> values_of(const std::map<std::uint64_t, double>& m) {
  std::vector<double> out;
  for (const auto& [seed, v] : m) out.push_back(v);
  return out;
}

struct Rig {
  std::shared_ptr<const CompiledEnsemble> compiled;
  QueryCounter counter;
  EnsembleEvaluator ev;

  explicit Rig(std::vector<ModelPtr> models, FusionMode mode = FusionMode::logits, bool inverse_k = true)
      : compiled(std::make_shared<const CompiledEnsemble>(make_ensemble(std::move(models), mode, inverse_k))),
        ev(compiled, counter) {}
};

// --- zoo ------------------------------------------------------------------------

std::vector<NamedModel> load_or_train_zoo(const fs::path& cache, const Dataset& data) {
  fs::create_directories(cache);
  std::vector<NamedModel> zoo;
  for (const ModelSpec& spec : builtin_specs()) {
    const fs::path path = cache / (spec.name + ".svw");
    Weights w;
    bool cached = false;
    if (fs::exists(path)) {
      try {
        w = load_weights(spec, path);
        cached = true;
      } catch (const Error&) {
      }
    }
    if (!cached) {
      TrainOptions o = default_train_options(spec.name);
      o.seed = 0;
      w = train(spec, data.train, data.test, o);
      save_weights(spec, w, path);
    }
    info("zoo " + spec.name + " test accuracy " + fmt(w.info.test_accuracy) + (cached ? " (cached)" : " (trained)"));
    zoo.push_back({spec.name, std::make_shared<const Model>(Model{spec, std::move(w)})});
  }
  return zoo;
}

std::vector<ModelPtr> models_of(const std::vector<NamedModel>& zoo, const std::vector<std::size_t>& pick) {
  std::vector<ModelPtr> out;
  for (std::size_t i : pick) out.push_back(zoo[i].model);
  return out;
}

// --- criteria -------------------------------------------------------------------

Outcome gradient_oracle() {
  int checked = 0, resampled = 0;
  double worst = 0.0;
  for (std::uint64_t seed = 0; checked < 120; ++seed) {
    const auto model = fixture::tiny_model(static_cast<int>(seed % 4), seed, {3, 6, 6});
    Executor ex(make_loss_graph(*model));
    const LabeledImage im = fixture::random_image(seed + 7000, {3, 6, 6});
    Tensor y({1, 10});
    y[im.label] = 1.0;
    const Tensor x = im.pixels.reshaped({1, 3, 6, 6});
    ex.forward({{"x", x}, {"y", y}});
    const Tensor grad = ex.backward("x");
    const std::vector<Index> pattern = ex.branch_pattern();
    bool kink = false;
    auto f = [&](const Tensor& probe) {
      const double v = ex.forward({{"x", probe}, {"y", y}}).item();
      kink = kink || ex.branch_pattern() != pattern;
      return v;
    };
    const Tensor fd = oracle::central_difference(f, x, 1e-5);
    if (kink) {
      if (++resampled > 100) return {false, "too many inputs straddle a ReLU or max-pool kink"};
      continue;
    }
    worst = std::max(worst, oracle::relative_error(grad, fd));
    ++checked;
  }
  return {worst <= 1e-6, std::to_string(checked) + " models, max relative error " + fmt(worst, 3) + ", " +
                             std::to_string(resampled) + " kink resamples"};
}

Outcome first_inner_gradient(const std::vector<NamedModel>& zoo, std::span<const LabeledImage> images) {
  const std::vector<ModelPtr> members = models_of(zoo, {0, 1, 2, 3});
  double worst = 0.0;
  int checked = 0, expected = 0;
  for (BaseMethod base : {BaseMethod::ifgsm, BaseMethod::mifgsm, BaseMethod::tim}) {
    for (std::size_t i = 0; i < 4; ++i) {
      Rig rig(members);
      AttackConfig c = default_config(base, 4);
      c.seed = i;
      std::vector<Tensor> g_ens;
      AttackHooks hooks;
      hooks.on_ensemble_gradient = [&](int, const Tensor& g) { g_ens.push_back(g); };
      hooks.on_inner_gradient = [&](int t, int m, int, const Tensor& g) {
        if (m != 0) return;
        worst = std::max(worst, max_abs_diff(g, g_ens[static_cast<std::size_t>(t)]));
        ++checked;
      };
      svre_attack(rig.ev, images[i].pixels, images[i].label, c, i, hooks);
      expected += c.iterations;
    }
  }
  return {checked == expected && worst <= 1e-12,
          std::to_string(checked) + " outer iterations (ifgsm, mifgsm, tim; K=4, M=16), max |g~_0 - g_ens| " +
              fmt(worst, 3)};
}

// The DIM stacks draw a fresh resize-pad per gradient call, so the identity is not
// expected there; the deviation is reported for reference.
void first_inner_gradient_dim(const std::vector<NamedModel>& zoo, std::span<const LabeledImage> images) {
  Rig rig(models_of(zoo, {0, 1, 2, 3}));
  AttackConfig c = default_config(BaseMethod::tidim, 4);
  c.iterations = 3;
  std::vector<Tensor> g_ens;
  double worst = 0.0;
  AttackHooks hooks;
  hooks.on_ensemble_gradient = [&](int, const Tensor& g) { g_ens.push_back(g); };
  hooks.on_inner_gradient = [&](int t, int m, int, const Tensor& g) {
    if (m == 0) worst = std::max(worst, max_abs_diff(g, g_ens[static_cast<std::size_t>(t)]));
  };
  svre_attack(rig.ev, images[0].pixels, images[0].label, c, 0, hooks);
  info("criterion 2 reference: tidim with fresh DIM draws, max |g~_0 - g_ens| " + fmt(worst, 3) +
       " (not an identity under independent draws)");
}

Outcome degeneration(const std::vector<NamedModel>& zoo, std::span<const LabeledImage> images,
                     const std::shared_ptr<const std::vector<LabeledImage>>& pool) {
  const std::vector<ModelPtr> members = models_of(zoo, {0, 1, 2});
  const std::span<const LabeledImage> batch = images.first(8);
  int compared = 0, identical = 0;
  std::string bad;
  for (BaseMethod base : {BaseMethod::ifgsm, BaseMethod::mifgsm, BaseMethod::tim, BaseMethod::tidim,
                          BaseMethod::sitidim, BaseMethod::admix_tidim}) {
    for (std::uint64_t seed : {0u, 7u}) {
      AttackConfig c = default_config(base, 3, pool);
      c.inner_iterations = 0;
      c.seed = seed;
      const AttackReport e = run_attack(AttackMethod::ens, members, batch, c);
      const AttackReport s = run_attack(AttackMethod::svre, members, batch, c);
      for (std::size_t i = 0; i < batch.size(); ++i) {
        ++compared;
        if (bit_identical(e.adversarials[i], s.adversarials[i]) && e.queries[i] == s.queries[i]) {
          ++identical;
        } else {
          bad = base_name(base);
        }
      }
    }
  }
  return {identical == compared, std::to_string(identical) + "/" + std::to_string(compared) +
                                     " outputs bit-identical over six bases x two seeds" +
                                     (bad.empty() ? "" : ", first mismatch " + bad)};
}

Outcome query_law(const std::vector<NamedModel>& zoo, std::span<const LabeledImage> images) {
  const std::vector<ModelPtr> members = models_of(zoo, {0, 1, 2, 3});
  const std::span<const LabeledImage> batch = images.first(2);
  bool ok = true;
  std::string detail;
  for (BaseMethod base : {BaseMethod::ifgsm, BaseMethod::mifgsm, BaseMethod::tim, BaseMethod::tidim}) {
    const AttackConfig c = default_config(base, 4);
    const AttackReport s = run_attack(AttackMethod::svre, members, batch, c);
    const AttackReport e = run_attack(AttackMethod::ens, members, batch, c);
    for (std::size_t i = 0; i < batch.size(); ++i) ok = ok && s.queries[i] == 360 && e.queries[i] == 40;
    if (base == BaseMethod::mifgsm) {
      detail = "K=4 M=16 T=10: svre " + std::to_string(s.queries[0]) + ", ens " + std::to_string(e.queries[0]) +
               ", ratio " + fmt(static_cast<double>(s.queries[0]) / static_cast<double>(e.queries[0]));
    }
  }
  AttackConfig c = default_config(BaseMethod::mifgsm, 3);
  for (int m : {0, 1, 5, 12}) {
    for (int t : {1, 3, 10}) {
      c.inner_iterations = m;
      c.iterations = t;
      ok = ok && run_attack(AttackMethod::svre, models_of(zoo, {0, 1, 2}), batch.first(1), c).total_queries ==
                     static_cast<std::uint64_t>(t * (3 + 2 * m));
      ok = ok && run_attack(AttackMethod::ens, models_of(zoo, {0, 1, 2}), batch.first(1), c).total_queries ==
                     static_cast<std::uint64_t>(t * 3);
    }
  }
  return {ok, detail + "; K=3 grid over M and T exact"};
}

Outcome feasibility() {
  constexpr int kRuns = 10000;
  const std::vector<BaseMethod> bases{BaseMethod::ifgsm, BaseMethod::mifgsm,  BaseMethod::tim,
                                      BaseMethod::tidim, BaseMethod::sitidim, BaseMethod::admix_tidim};
  const auto pool = std::make_shared<const std::vector<LabeledImage>>(fixture::random_images(20, 900));
  const auto models = fixture::tiny_ensemble(3, 14);
  Rig rig(models);
  Rng pick = make_rng(2024, {});
  double worst_ball = 0.0, lo = 0.0, hi = 1.0;
  for (int run = 0; run < kRuns; ++run) {
    const BaseMethod base = bases[static_cast<std::size_t>(uniform_int(pick, 0, 5))];
    AttackConfig c = default_config(base, 3, pool);
    if (c.transforms.scale) c.transforms.scale->copies = 2;
    if (c.transforms.admix) {
      c.transforms.admix->scale_copies = 2;
      c.transforms.admix->mixed_images = 2;
    }
    c.epsilon = kEps * uniform01(pick);
    c.epsilon = std::max(c.epsilon, 1e-6);
    c.step = kEps * (0.05 + 2.0 * uniform01(pick));
    c.inner_step = kEps * (0.05 + 2.0 * uniform01(pick));
    c.iterations = 1 + static_cast<int>(uniform_int(pick, 0, 3));
    c.inner_iterations = static_cast<int>(uniform_int(pick, 0, 3));
    c.decay = uniform01(pick);
    c.normalize_momentum = uniform01(pick) < 0.5;
    c.seed = static_cast<std::uint64_t>(run);
    LabeledImage im = fixture::random_image(static_cast<std::uint64_t>(run) + 50000);
    const Index stride = 2 + uniform_int(pick, 0, 9);
    for (Index i = 0; i < im.pixels.size(); i += stride) im.pixels[i] = i % 2 ? 1.0 : 0.0;
    const auto attack = uniform01(pick) < 0.5 ? &ens_attack : &svre_attack;
    const Tensor adv = attack(rig.ev, im.pixels, im.label, c, static_cast<std::uint64_t>(run), {}).adversarial;
    worst_ball = std::max(worst_ball, max_abs_diff(adv, im.pixels) - kEps);
    lo = std::min(lo, adv.values().minCoeff());
    hi = std::max(hi, adv.values().maxCoeff());
  }
  return {worst_ball <= 1e-9 && lo >= 0.0 && hi <= 1.0,
          std::to_string(kRuns) + " runs, max (|x_adv - x|_inf - 16/255) " + fmt(worst_ball, 3) + ", pixel range [" +
              fmt(lo) + ", " + fmt(hi) + "]"};
}

Outcome unbiasedness(const std::vector<NamedModel>& zoo, std::span<const LabeledImage> images) {
  double worst = 0.0;
  int points = 0;
  auto check = [&](const std::vector<ModelPtr>& models, const LabeledImage& im, std::uint64_t seed) {
    Rig rig(models, FusionMode::losses, false);
    Rng rng = make_rng(seed, {3});
    const Tensor x_outer =
        clip_ball(im.pixels + oracle::random_tensor(im.pixels.shape(), rng, -kEps, kEps), im.pixels, kEps);
    const Tensor x_inner =
        clip_ball(x_outer + oracle::random_tensor(im.pixels.shape(), rng, -kEps, kEps), im.pixels, kEps);
    const Tensor g_ens = rig.ev.ensemble_gradient(x_outer, im.label);
    Tensor avg = Tensor::zeros(im.pixels.shape());
    for (int k = 0; k < rig.ev.size(); ++k) avg = avg + svre_inner_gradient(rig.ev, k, x_inner, x_outer, g_ens, im.label);
    avg = (1.0 / rig.ev.size()) * avg;
    worst = std::max(worst, max_abs_diff(avg, rig.ev.ensemble_gradient(x_inner, im.label)));
    ++points;
  };
  for (std::size_t i = 0; i < 16; ++i) check(models_of(zoo, {0, 1, 2, 3}), images[i], i);
  for (std::uint64_t s = 0; s < 16; ++s) {
    check(fixture::tiny_ensemble(2 + static_cast<int>(s % 3), 100 + s), fixture::random_image(200 + s), s);
  }
  return {worst <= 1e-12, std::to_string(points) + " points (zoo K=4 and random K=2..4), max deviation " + fmt(worst, 3)};
}

Outcome white_box(const std::vector<NamedModel>& zoo, std::span<const LabeledImage> images, int workers) {
  // Pre-declared ensemble: the three convolutional models. Every member must reach 95%.
  const std::vector<std::size_t> pick{0, 1, 2};
  std::vector<int> labels;
  for (const auto& im : images) labels.push_back(im.label);
  bool ok = true;
  std::string detail = "ensemble ConvA+ConvB+ConvC, " + std::to_string(images.size()) + " images:";
  for (AttackMethod method : {AttackMethod::ens, AttackMethod::svre}) {
    const AttackReport r =
        run_attack(method, models_of(zoo, pick), images, default_config(BaseMethod::ifgsm, 3), workers);
    detail += std::string(" ") + method_name(method);
    for (std::size_t j : pick) {
      const double s = success_rate(zoo[j].model, r.adversarials, labels);
      ok = ok && s >= 0.95;
      detail += " " + zoo[j].name + "=" + fmt(s);
    }
    detail += ";";
  }
  return {ok, detail};
}

ExperimentPlan mi_plan(const std::vector<NamedModel>& zoo, bool normalized, int workers, bool inverse_k = true) {
  ExperimentPlan plan;
  plan.members = zoo;
  plan.seeds = kSeeds;
  plan.image_count = kImages;
  plan.workers = workers;
  AttackConfig c = default_config(BaseMethod::mifgsm, 3);
  c.normalize_momentum = normalized;
  c.include_inverse_k = inverse_k;
  plan.attacks = {{"ens-mifgsm", AttackMethod::ens, c}, {"svre-mifgsm", AttackMethod::svre, c}};
  return plan;
}

Outcome transfer(const ResultTable& table) {
  const auto ens = per_seed_mean(table, "holdout", "ens-mifgsm", "hold-out");
  const auto svre = per_seed_mean(table, "holdout", "svre-mifgsm", "hold-out");
  int wins = 0;
  for (const auto& [seed, v] : svre) wins += v > ens.at(seed) ? 1 : 0;
  const double me = mean_of(ens), ms = mean_of(svre);
  return {wins >= 4 && ms > me, "SVRE wins " + std::to_string(wins) + "/5 seeds; seed means svre " + fmt(ms) +
                                    " vs ens " + fmt(me) + "; per seed svre [" + join(values_of(svre)) + "] ens [" +
                                    join(values_of(ens)) + "]"};
}

double final_loss(const std::vector<LossCurve>& curves, const std::string& attack, const std::string& role) {
  for (const auto& c : curves) {
    if (c.experiment == "holdout" && c.attack == attack && c.role == role) return c.mean.back();
  }
  throw InvalidArgument("no loss curve for " + attack + " " + role);
}

Outcome loss_curves_claim(const ResultTable& table) {
  const std::vector<LossCurve> curves = loss_curves(table);
  const double eb = final_loss(curves, "ens-mifgsm", "hold-out"), sb = final_loss(curves, "svre-mifgsm", "hold-out");
  const double ew = final_loss(curves, "ens-mifgsm", "white-box"), sw = final_loss(curves, "svre-mifgsm", "white-box");
  const double rel = std::abs(sw - ew) / std::abs(ew);
  return {sb >= eb && rel <= 0.10, "black-box final svre " + fmt(sb) + " vs ens " + fmt(eb) +
                                                  "; white-box final svre " + fmt(sw) + " vs ens " + fmt(ew) +
                                                  " (relative gap " + fmt(rel, 3) + ")"};
}

Outcome transforms_check() {
  bool ok = true;
  const Tensor k = ti_kernel(7, 3.0);
  const double sum_err = std::abs(k.values().sum() - 1.0);
  ok = ok && sum_err <= 1e-12;
  bool symmetric = true;
  for (Index i = 0; i < 7; ++i) {
    for (Index j = 0; j < 7; ++j) {
      const double v = k[i * 7 + j];
      symmetric = symmetric && v == k[j * 7 + i] && v == k[(6 - i) * 7 + j] && v == k[i * 7 + (6 - j)] &&
                  v == k[(6 - j) * 7 + i] && v == k[(6 - i) * 7 + (6 - j)];
    }
  }
  ok = ok && symmetric;
  const double vs_gauss = max_abs_diff(k, oracle::gaussian(7, 3.0));
  ok = ok && vs_gauss <= 1e-15;

  Rng rng = make_rng(31, {});
  const Tensor field = oracle::random_tensor({3, 32, 32}, rng, -1, 1);
  const double vs_brute = max_abs_diff(ti_smooth(field, k), oracle::correlate_same(field, k));
  ok = ok && vs_brute <= 1e-12;

  bool dim_identity = true;
  for (std::uint64_t s = 0; s < 50; ++s) {
    const LabeledImage im = fixture::random_image(s + 300);
    Rng r = make_rng(s, {});
    dim_identity = dim_identity && bit_identical(dim_transform(im.pixels, 0.0, 26, r), im.pixels);
  }
  ok = ok && dim_identity;

  const LabeledImage im = fixture::random_image(77);
  std::vector<Tensor> seen;
  const GradientFn record = [&seen](const Tensor& in) {
    seen.push_back(in);
    return in;
  };
  si_gradient(record, im.pixels, 5);
  bool scales = seen.size() == 5;
  for (std::size_t i = 0; scales && i < seen.size(); ++i) {
    scales = bit_identical(seen[i], std::ldexp(1.0, -static_cast<int>(i)) * im.pixels);
  }
  ok = ok && scales;
  return {ok, "ti_kernel(7,3) sum error " + fmt(sum_err, 3) + (symmetric ? ", 8-fold symmetric" : ", NOT symmetric") +
                  ", vs Gaussian " + fmt(vs_gauss, 3) + ", smoothing vs brute force " + fmt(vs_brute, 3) +
                  (dim_identity ? "; DIM p=0 identity on 50 streams" : "; DIM p=0 NOT identity") +
                  (scales ? "; SI m=5 inputs are x * {1, 1/2, 1/4, 1/8, 1/16}" : "; SI scales wrong")};
}

Outcome cosine(const std::vector<NamedModel>& zoo, std::span<const LabeledImage> images, int workers) {
  const CosineMatrix m = sign_gradient_cosine(zoo, images, workers);
  bool ok = true;
  double max_off = 0.0, asym = 0.0, diag = 0.0;
  std::string cells;
  for (std::size_t i = 0; i < m.models.size(); ++i) {
    diag = std::max(diag, std::abs(m.mean[i][i] - 1.0));
    for (std::size_t j = 0; j < m.models.size(); ++j) {
      asym = std::max(asym, std::abs(m.mean[i][j] - m.mean[j][i]));
      if (i < j) {
        max_off = std::max(max_off, m.mean[i][j]);
        cells += " " + m.models[i] + "/" + m.models[j] + "=" + fmt(m.mean[i][j], 3);
      }
    }
  }
  ok = diag <= 1e-12 && asym <= 1e-12 && max_off < 0.5;
  return {ok, "max off-diagonal " + fmt(max_off, 3) + ", asymmetry " + fmt(asym, 3) + ", diagonal error " +
                  fmt(diag, 3) + ", zero-gradient cases " + std::to_string(m.zero_cases) + ";" + cells};
}

Outcome ablation(const std::vector<NamedModel>& zoo, std::span<const LabeledImage> images, int workers) {
  ExperimentPlan plan = mi_plan(zoo, false, workers);
  plan.attacks.erase(plan.attacks.begin());
  plan.seeds = {0, 1};
  const ResultTable sweep = ablate_M(plan, images);
  const ResultTable matched = query_matched(plan, images);

  std::vector<double> means;
  double best_positive = -1.0;
  int best_m = -1;
  for (int m : plan.m_grid) {
    const double v = mean_of(per_seed_mean(sweep, "sweep-M", "svre-mifgsm", "hold-out", static_cast<double>(m)));
    means.push_back(v);
    if (m > 0 && v > best_positive) {
      best_positive = v;
      best_m = m;
    }
  }
  const double at_zero = means.front();
  const double svre = mean_of(per_seed_mean(matched, "query-matched", "svre-mifgsm", "hold-out"));
  const double ens = mean_of(per_seed_mean(matched, "query-matched", "ens-matched(svre-mifgsm)", "hold-out"));
  const int t_matched = matched_iterations(10, 3, 12);
  return {best_positive > at_zero && svre > ens,
          std::to_string(images.size()) + " images, seeds {0,1}, all hold-outs; M-sweep hold-out means [" +
              join(means) + "] for M = 0..32 step 4, best M=" + std::to_string(best_m) + " " + fmt(best_positive) +
              " vs M=0 " + fmt(at_zero) + "; query-matched ens (T'=" + std::to_string(t_matched) + ") " + fmt(ens) +
              " vs svre " + fmt(svre)};
}

void holdout_reference(const std::string& label, const ExperimentPlan& plan, std::span<const LabeledImage> images) {
  const ResultTable table = holdout_protocol(plan, images);
  const auto ens = per_seed_mean(table, "holdout", "ens-mifgsm", "hold-out");
  const auto svre = per_seed_mean(table, "holdout", "svre-mifgsm", "hold-out");
  info(label + ", MI hold-out per seed: svre [" + join(values_of(svre)) + "] ens [" + join(values_of(ens)) + "]");
  const std::vector<LossCurve> curves = loss_curves(table);
  info(label + ", final losses: black-box svre " + fmt(final_loss(curves, "svre-mifgsm", "hold-out")) + " ens " +
       fmt(final_loss(curves, "ens-mifgsm", "hold-out")) + "; white-box svre " +
       fmt(final_loss(curves, "svre-mifgsm", "white-box")) + " ens " + fmt(final_loss(curves, "ens-mifgsm", "white-box")));
}

// White-box SVRE-I-FGSM on the criterion 7 ensemble without the 1/K factor on g_ens.
void white_box_reference(const std::vector<NamedModel>& zoo, std::span<const LabeledImage> images, int workers) {
  std::vector<int> labels;
  for (const auto& im : images) labels.push_back(im.label);
  AttackConfig c = default_config(BaseMethod::ifgsm, 3);
  c.include_inverse_k = false;
  const AttackReport r = run_attack(AttackMethod::svre, models_of(zoo, {0, 1, 2}), images, c, workers);
  std::string line = "criterion 7 reference, svre without 1/K:";
  for (std::size_t j : {0, 1, 2}) line += " " + zoo[j].name + "=" + fmt(success_rate(zoo[j].model, r.adversarials, labels));
  info(line);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria"};
  std::string cache = SVRE_ACCEPTANCE_CACHE;
  int workers = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  bool skip_reference = false;
  std::size_t sweep_images = 64;
  app.add_option("--cache", cache, "directory holding the trained zoo")->capture_default_str();
  app.add_option("--workers", workers)->capture_default_str();
  app.add_option("--sweep-images", sweep_images, "images for the M sweep and query-matched run")->capture_default_str();
  app.add_flag("--skip-reference", skip_reference, "skip the informational reference runs");
  CLI11_PARSE(app, argc, argv);

  const Dataset data = generate(DatasetManifest{});
  const std::vector<NamedModel> zoo = load_or_train_zoo(cache, data);
  const std::vector<LabeledImage> images = select_images(zoo, data.test, kImages);
  info("attack images: " + std::to_string(images.size()) + " test images classified correctly by all four models");
  const auto pool = std::make_shared<const std::vector<LabeledImage>>(data.train);

  report(1, "gradient oracle", gradient_oracle);
  report(2, "first inner gradient equals g_ens", [&] { return first_inner_gradient(zoo, images); });
  first_inner_gradient_dim(zoo, images);
  report(3, "M = 0 degenerates to Ens", [&] { return degeneration(zoo, images, pool); });
  report(4, "query law", [&] { return query_law(zoo, images); });
  report(5, "feasibility", feasibility);
  report(6, "unbiasedness over k", [&] { return unbiasedness(zoo, images); });
  report(7, "white-box strength", [&] { return white_box(zoo, images, workers); });

  ResultTable table;
  const auto t0 = std::chrono::steady_clock::now();
  try {
    table = holdout_protocol(mi_plan(zoo, false, workers), images);
  } catch (const std::exception& e) {
    info(std::string("hold-out protocol threw: ") + e.what());
  }
  info("hold-out protocol (MI-FGSM, 4 rotations x 5 seeds) took " +
       fmt(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(), 4) + "s");
  report(8, "hold-out transfer", [&] { return transfer(table); });
  report(9, "loss curves", [&] { return loss_curves_claim(table); });
  report(10, "transform correctness", transforms_check);
  report(11, "sign-gradient cosine", [&] { return cosine(zoo, images, workers); });
  report(12, "M ablation and query-matched Ens", [&] {
    return ablation(zoo, std::span<const LabeledImage>(images).first(std::min(sweep_images, images.size())), workers);
  });

  if (!skip_reference) {
    white_box_reference(zoo, images, workers);
    holdout_reference("normalized momentum", mi_plan(zoo, true, workers), images);
    holdout_reference("without 1/K", mi_plan(zoo, false, workers, false), images);
  }
  std::printf("%d of 12 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
