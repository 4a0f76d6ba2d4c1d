#include "svre/evalharness.hpp"

#include "svre/errors.hpp"
#include "svre/transforms.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <tuple>

namespace svre {

std::string defense_name(const Defense& d) {
  return d.kind == Defense::Kind::bit_reduction ? "bits" + std::to_string(d.parameter)
                                                : "median" + std::to_string(d.parameter);
}

Tensor apply_defense(const Defense& d, const Tensor& x) {
  return d.kind == Defense::Kind::bit_reduction ? defense_bit_reduce(x, d.parameter)
                                                : defense_spatial_smooth(x, d.parameter);
}

std::vector<double> default_beta_grid() {
  std::vector<double> grid;
  for (double b = 0.1; b <= 25.6 + 1e-9; b *= 2.0) grid.push_back(b / 255.0);
  return grid;
}

void validate(const ExperimentPlan& plan) {
  if (plan.members.size() < 2) throw InvalidArgument("a plan needs at least two members");
  std::set<std::string> names;
  for (const auto& m : plan.members) {
    if (!m.model) throw InvalidArgument("member '" + m.name + "' has no model");
    if (!names.insert(m.name).second) throw InvalidArgument("duplicate model name '" + m.name + "'");
  }
  for (const auto& m : plan.extra_targets) {
    if (!m.model) throw InvalidArgument("target '" + m.name + "' has no model");
    if (!names.insert(m.name).second) throw InvalidArgument("extra target '" + m.name + "' is also a member");
  }
  for (const auto& h : plan.sweep_holdouts) {
    if (std::none_of(plan.members.begin(), plan.members.end(), [&](const NamedModel& m) { return m.name == h; })) {
      throw InvalidArgument("sweep hold-out '" + h + "' is not a member");
    }
  }
  if (plan.seeds.empty()) throw InvalidArgument("a plan needs at least one seed");
  if (plan.image_count == 0) throw InvalidArgument("image_count must be positive");
  for (const auto& a : plan.attacks) validate(a.config);
}

namespace {

constexpr Index kChunk = 64;

bool stochastic(const AttackVariant& v) {
  return (v.method == AttackMethod::svre && v.config.inner_iterations > 0) || v.config.transforms.stochastic();
}

std::string join_names(std::span<const NamedModel> models) {
  std::string out;
  for (const auto& m : models) out += (out.empty() ? "" : "+") + m.name;
  return out;
}

// Mean cross-entropy of a model over images, evaluated in batches.
double mean_loss(Classifier& clf, std::span<const Tensor> images, std::span<const int> labels) {
  double total = 0.0;
  for (std::size_t start = 0; start < images.size(); start += kChunk) {
    const std::size_t n = std::min<std::size_t>(kChunk, images.size() - start);
    const Tensor logits = clf.logits(stack_images(images.subspan(start, n)));
    const Index classes = logits.dim(1);
    for (std::size_t r = 0; r < n; ++r) {
      const double* row = logits.data() + static_cast<Index>(r) * classes;
      const double top = *std::max_element(row, row + classes);
      double s = 0.0;
      for (Index c = 0; c < classes; ++c) s += std::exp(row[c] - top);
      total += top + std::log(s) - row[labels[start + r]];
    }
  }
  return total / static_cast<double>(images.size());
}

struct Target {
  const NamedModel* model;
  std::string role;
  std::optional<Defense> defense;
};

struct Cell {
  std::string experiment;
  std::string param;
  double param_value = 0.0;
};

// Runs one attack on one ensemble and scores every target; one row per target.
std::vector<ResultRow> run_cell(const Cell& cell, const AttackVariant& variant, std::uint64_t seed,
                                std::span<const NamedModel> ensemble, std::span<const Target> targets,
                                std::span<const LabeledImage> images, int workers) {
  AttackConfig cfg = variant.config;
  cfg.seed = seed;
  std::vector<std::shared_ptr<const Model>> models;
  for (const auto& m : ensemble) models.push_back(m.model);

  std::vector<std::vector<Tensor>> iterates(images.size());
  const auto hooks_for = [&iterates](std::size_t i) {
    AttackHooks h;
    h.on_iterate = [&iterates, i](int, const Tensor& x_t) { iterates[i].push_back(x_t); };
    return h;
  };
  const AttackReport report = run_attack(variant.method, models, images, cfg, workers, hooks_for);

  std::vector<int> labels;
  for (const auto& im : images) labels.push_back(im.label);

  std::vector<ResultRow> rows;
  for (const Target& target : targets) {
    ResultRow row;
    row.experiment = cell.experiment;
    row.attack = variant.label;
    row.target = target.defense ? target.model->name + "|" + defense_name(*target.defense) : target.model->name;
    row.role = target.role;
    row.ensemble = join_names(ensemble);
    row.seed = seed;
    row.param = cell.param;
    row.param_value = cell.param_value;
    row.success_rate = success_rate(target.model->model, report.adversarials, labels, target.defense);
    row.attacked = images.size();
    row.queries = report.total_queries;
    if (!target.defense) {
      Classifier clf(target.model->model);
      std::vector<Tensor> at_t(images.size());
      for (int t = 0; t <= cfg.iterations; ++t) {
        for (std::size_t i = 0; i < images.size(); ++i) at_t[i] = iterates[i][static_cast<std::size_t>(t)];
        row.loss_curve.push_back(mean_loss(clf, at_t, labels));
      }
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

// Runs a cell for every seed, reusing the first result when the attack has no randomness.
void run_seeds(ResultTable& table, const Cell& cell, const AttackVariant& variant, const ExperimentPlan& plan,
               std::span<const NamedModel> ensemble, std::span<const Target> targets,
               std::span<const LabeledImage> images) {
  std::vector<ResultRow> first;
  for (std::size_t s = 0; s < plan.seeds.size(); ++s) {
    std::vector<ResultRow> rows;
    if (s > 0 && !stochastic(variant)) {
      rows = first;
      for (auto& r : rows) r.seed = plan.seeds[s];
    } else {
      rows = run_cell(cell, variant, plan.seeds[s], ensemble, targets, images, plan.workers);
    }
    if (s == 0) first = rows;
    table.rows.insert(table.rows.end(), rows.begin(), rows.end());
  }
}

struct Rotation {
  std::vector<NamedModel> ensemble;
  std::vector<Target> targets;
};

Rotation rotation(const ExperimentPlan& plan, std::size_t holdout, bool with_white_box) {
  Rotation r;
  for (std::size_t j = 0; j < plan.members.size(); ++j) {
    if (j != holdout) r.ensemble.push_back(plan.members[j]);
  }
  r.targets.push_back({&plan.members[holdout], "hold-out", std::nullopt});
  for (const auto& d : plan.defenses) r.targets.push_back({&plan.members[holdout], "defended", d});
  for (const auto& m : plan.extra_targets) r.targets.push_back({&m, "extra", std::nullopt});
  if (with_white_box) {
    for (std::size_t j = 0; j < plan.members.size(); ++j) {
      if (j != holdout) r.targets.push_back({&plan.members[j], "white-box", std::nullopt});
    }
  }
  return r;
}

std::vector<std::size_t> sweep_positions(const ExperimentPlan& plan) {
  std::vector<std::size_t> out;
  for (std::size_t j = 0; j < plan.members.size(); ++j) {
    if (plan.sweep_holdouts.empty() ||
        std::find(plan.sweep_holdouts.begin(), plan.sweep_holdouts.end(), plan.members[j].name) !=
            plan.sweep_holdouts.end()) {
      out.push_back(j);
    }
  }
  return out;
}

std::vector<const AttackVariant*> svre_variants(const ExperimentPlan& plan) {
  std::vector<const AttackVariant*> out;
  for (const auto& a : plan.attacks) {
    if (a.method == AttackMethod::svre) out.push_back(&a);
  }
  if (out.empty()) throw InvalidArgument("the plan has no svre attack to sweep");
  return out;
}

}  // namespace

double success_rate(const std::shared_ptr<const Model>& model, std::span<const Tensor> adversarials,
                    std::span<const int> labels, const std::optional<Defense>& defense) {
  if (adversarials.empty()) throw InvalidArgument("success_rate needs at least one image");
  if (adversarials.size() != labels.size()) throw InvalidArgument("images and labels are not aligned");
  Classifier clf(model);
  std::size_t fooled = 0;
  for (std::size_t start = 0; start < adversarials.size(); start += kChunk) {
    const std::size_t n = std::min<std::size_t>(kChunk, adversarials.size() - start);
    std::vector<Tensor> batch(adversarials.begin() + static_cast<std::ptrdiff_t>(start),
                              adversarials.begin() + static_cast<std::ptrdiff_t>(start + n));
    if (defense) {
      for (auto& x : batch) x = apply_defense(*defense, x);
    }
    const std::vector<int> predicted = clf.predict(batch);
    for (std::size_t i = 0; i < n; ++i) fooled += predicted[i] != labels[start + i] ? 1 : 0;
  }
  return static_cast<double>(fooled) / static_cast<double>(adversarials.size());
}

std::vector<LabeledImage> select_images(std::span<const NamedModel> models, std::span<const LabeledImage> pool,
                                        std::size_t count) {
  std::vector<Classifier> classifiers;
  for (const auto& m : models) classifiers.emplace_back(m.model);
  std::vector<LabeledImage> out;
  for (std::size_t start = 0; start < pool.size() && out.size() < count; start += kChunk) {
    const std::size_t n = std::min<std::size_t>(kChunk, pool.size() - start);
    std::vector<Tensor> batch;
    for (std::size_t i = 0; i < n; ++i) batch.push_back(pool[start + i].pixels);
    std::vector<bool> keep(n, true);
    for (auto& clf : classifiers) {
      const std::vector<int> predicted = clf.predict(batch);
      for (std::size_t i = 0; i < n; ++i) keep[i] = keep[i] && predicted[i] == pool[start + i].label;
    }
    for (std::size_t i = 0; i < n && out.size() < count; ++i) {
      if (keep[i]) out.push_back(pool[start + i]);
    }
  }
  return out;
}

ResultTable holdout_protocol(const ExperimentPlan& plan, std::span<const LabeledImage> images) {
  validate(plan);
  if (images.empty()) throw InvalidArgument("no images to attack");
  ResultTable table;
  for (std::size_t h = 0; h < plan.members.size(); ++h) {
    const Rotation r = rotation(plan, h, true);
    for (const auto& variant : plan.attacks) {
      run_seeds(table, {"holdout", "", 0.0}, variant, plan, r.ensemble, r.targets, images);
    }
  }
  return table;
}

ResultTable ablate_M(const ExperimentPlan& plan, std::span<const LabeledImage> images) {
  validate(plan);
  if (plan.m_grid.empty()) throw InvalidArgument("the M grid is empty");
  ResultTable table;
  for (std::size_t h : sweep_positions(plan)) {
    const Rotation r = rotation(plan, h, true);
    for (const AttackVariant* base : svre_variants(plan)) {
      for (int m : plan.m_grid) {
        AttackVariant v = *base;
        v.config.inner_iterations = m;
        validate(v.config);
        run_seeds(table, {"sweep-M", "M", static_cast<double>(m)}, v, plan, r.ensemble, r.targets, images);
      }
    }
  }
  return table;
}

ResultTable ablate_beta(const ExperimentPlan& plan, std::span<const LabeledImage> images) {
  validate(plan);
  const std::vector<double> grid = plan.beta_grid.empty() ? default_beta_grid() : plan.beta_grid;
  ResultTable table;
  for (std::size_t h : sweep_positions(plan)) {
    const Rotation r = rotation(plan, h, true);
    for (const AttackVariant* base : svre_variants(plan)) {
      for (double beta : grid) {
        AttackVariant v = *base;
        v.config.inner_step = beta;
        validate(v.config);
        run_seeds(table, {"sweep-beta", "beta", beta}, v, plan, r.ensemble, r.targets, images);
      }
    }
  }
  return table;
}

int matched_iterations(int iterations, int ensemble_size, int inner_iterations) {
  if (iterations < 1 || ensemble_size < 1 || inner_iterations < 0) {
    throw InvalidArgument("matched_iterations needs T >= 1, K >= 1, M >= 0");
  }
  const long long budget = static_cast<long long>(iterations) * (ensemble_size + 2LL * inner_iterations);
  if (budget % ensemble_size != 0) {
    throw InvalidArgument("T (K + 2M) = " + std::to_string(budget) + " is not a multiple of K = " +
                          std::to_string(ensemble_size));
  }
  return static_cast<int>(budget / ensemble_size);
}

ResultTable query_matched(const ExperimentPlan& plan, std::span<const LabeledImage> images) {
  validate(plan);
  ResultTable table;
  for (std::size_t h : sweep_positions(plan)) {
    const Rotation r = rotation(plan, h, true);
    const int k = static_cast<int>(r.ensemble.size());
    for (const AttackVariant* base : svre_variants(plan)) {
      const AttackConfig& c = base->config;
      run_seeds(table, {"query-matched", "T", static_cast<double>(c.iterations)}, *base, plan, r.ensemble, r.targets,
                images);
      AttackVariant ens;
      ens.method = AttackMethod::ens;
      ens.config = c;
      ens.config.iterations = matched_iterations(c.iterations, k, c.inner_iterations);
      ens.config.step.reset();
      ens.label = "ens-matched(" + base->label + ")";
      run_seeds(table, {"query-matched", "T", static_cast<double>(ens.config.iterations)}, ens, plan, r.ensemble,
                r.targets, images);
    }
  }
  return table;
}

CosineMatrix sign_gradient_cosine(std::span<const NamedModel> models, std::span<const LabeledImage> images,
                                  int workers) {
  if (images.empty()) throw InvalidArgument("sign_gradient_cosine needs at least one image");
  if (models.empty()) throw InvalidArgument("sign_gradient_cosine needs at least one model");
  std::vector<std::shared_ptr<const Model>> list;
  for (const auto& m : models) list.push_back(m.model);
  auto compiled = std::make_shared<const CompiledEnsemble>(make_ensemble(list));
  const std::size_t k = models.size();

  QueryCounter counter;
  std::vector<std::unique_ptr<EnsembleEvaluator>> evaluators;
  for (int w = 0; w < std::max(workers, 1); ++w) evaluators.push_back(std::make_unique<EnsembleEvaluator>(compiled, counter));

  // Per-image matrices, reduced in image order afterwards.
  std::vector<std::vector<double>> per_image(images.size(), std::vector<double>(k * k, 0.0));
  std::vector<std::size_t> zeros(images.size(), 0);
  parallel_for(images.size(), workers, [&](std::size_t w, std::size_t n) {
    std::vector<Tensor> signs;
    std::vector<double> self;
    for (std::size_t i = 0; i < k; ++i) {
      signs.push_back(sign(evaluators[w]->single_model_gradient(static_cast<int>(i), images[n].pixels, images[n].label)));
      self.push_back(dot(signs.back(), signs.back()));
    }
    for (std::size_t i = 0; i < k; ++i) {
      for (std::size_t j = i; j < k; ++j) {
        double c = 0.0;
        if (self[i] == 0.0 || self[j] == 0.0) {
          ++zeros[n];
        } else {
          // For i == j, sqrt(s * s) is exactly s: the diagonal is exactly 1.
          c = i == j ? 1.0 : dot(signs[i], signs[j]) / std::sqrt(self[i] * self[j]);
        }
        per_image[n][i * k + j] = c;
        per_image[n][j * k + i] = c;
      }
    }
  });

  CosineMatrix out;
  for (const auto& m : models) out.models.push_back(m.name);
  out.mean.assign(k, std::vector<double>(k, 0.0));
  out.images = images.size();
  for (std::size_t n = 0; n < images.size(); ++n) {
    for (std::size_t i = 0; i < k; ++i) {
      for (std::size_t j = 0; j < k; ++j) out.mean[i][j] += per_image[n][i * k + j];
    }
    out.zero_cases += zeros[n];
  }
  for (auto& row : out.mean) {
    for (double& v : row) v /= static_cast<double>(images.size());
  }
  return out;
}

std::vector<LossCurve> loss_curves(const ResultTable& table) {
  std::vector<LossCurve> curves;
  std::vector<std::size_t> counts;
  for (const auto& row : table.rows) {
    if (row.loss_curve.empty()) continue;
    auto it = std::find_if(curves.begin(), curves.end(), [&](const LossCurve& c) {
      return c.experiment == row.experiment && c.attack == row.attack && c.role == row.role &&
             c.mean.size() == row.loss_curve.size();
    });
    if (it == curves.end()) {
      curves.push_back({row.experiment, row.attack, row.role, std::vector<double>(row.loss_curve.size(), 0.0)});
      counts.push_back(0);
      it = curves.end() - 1;
    }
    const std::size_t idx = static_cast<std::size_t>(it - curves.begin());
    for (std::size_t t = 0; t < row.loss_curve.size(); ++t) it->mean[t] += row.loss_curve[t];
    ++counts[idx];
  }
  for (std::size_t i = 0; i < curves.size(); ++i) {
    for (double& v : curves[i].mean) v /= static_cast<double>(counts[i]);
  }
  return curves;
}

std::vector<Summary> summarize(const ResultTable& table) {
  using Key = std::tuple<std::string, std::string, std::string, std::string, std::string, std::string, double>;
  std::vector<Key> order;
  std::map<Key, std::vector<double>> groups;
  for (const auto& r : table.rows) {
    const Key key{r.experiment, r.attack, r.target, r.role, r.ensemble, r.param, r.param_value};
    auto [it, inserted] = groups.try_emplace(key);
    if (inserted) order.push_back(key);
    it->second.push_back(r.success_rate);
  }
  std::vector<Summary> out;
  for (const Key& key : order) {
    const std::vector<double>& v = groups.at(key);
    Summary s;
    std::tie(s.experiment, s.attack, s.target, s.role, s.ensemble, s.param, s.param_value) = key;
    s.seeds = v.size();
    for (double x : v) s.mean += x;
    s.mean /= static_cast<double>(v.size());
    if (v.size() > 1) {
      double ss = 0.0;
      for (double x : v) ss += (x - s.mean) * (x - s.mean);
      s.stddev = std::sqrt(ss / static_cast<double>(v.size() - 1));
    }
    out.push_back(std::move(s));
  }
  return out;
}

std::map<std::uint64_t, double> per_seed_mean(const ResultTable& table, const std::string& experiment,
                                              const std::string& attack, const std::string& role,
                                              std::optional<double> param_value) {
  std::map<std::uint64_t, std::pair<double, std::size_t>> acc;
  for (const auto& r : table.rows) {
    if (r.experiment != experiment || r.attack != attack || r.role != role) continue;
    if (param_value && r.param_value != *param_value) continue;
    auto& [sum, n] = acc[r.seed];
    sum += r.success_rate;
    ++n;
  }
  std::map<std::uint64_t, double> out;
  for (const auto& [seed, p] : acc) out[seed] = p.first / static_cast<double>(p.second);
  return out;
}

}  // namespace svre
