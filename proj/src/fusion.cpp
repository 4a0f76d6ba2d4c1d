#include "svre/fusion.hpp"

#include "svre/errors.hpp"

#include <cmath>

namespace svre {

const char* fusion_name(FusionMode mode) {
  switch (mode) {
    case FusionMode::predictions: return "predictions";
    case FusionMode::logits: return "logits";
    case FusionMode::losses: return "losses";
  }
  return "?";
}

FusionMode parse_fusion(std::string_view name) {
  if (name == "predictions") return FusionMode::predictions;
  if (name == "logits") return FusionMode::logits;
  if (name == "losses") return FusionMode::losses;
  throw InvalidArgument("unknown fusion mode '" + std::string(name) + "'");
}

EnsembleSpec make_ensemble(std::vector<std::shared_ptr<const Model>> models, FusionMode mode, bool include_inverse_k) {
  EnsembleSpec ens;
  const double w = models.empty() ? 0.0 : 1.0 / static_cast<double>(models.size());
  ens.weights.assign(models.size(), w);
  ens.models = std::move(models);
  ens.mode = mode;
  ens.include_inverse_k = include_inverse_k;
  return ens;
}

void validate(const EnsembleSpec& ens) {
  if (ens.models.empty()) throw InvalidArgument("ensemble is empty");
  if (ens.weights.size() != ens.models.size()) throw InvalidArgument("one ensemble weight per model is required");
  double total = 0.0;
  for (double w : ens.weights) {
    if (!(w >= 0.0)) throw InvalidArgument("ensemble weights must be non-negative");
    total += w;
  }
  if (std::fabs(total - 1.0) > 1e-12) throw InvalidArgument("ensemble weights must sum to 1");
  for (const auto& m : ens.models) {
    if (!m) throw InvalidArgument("null ensemble member");
  }
}

void QueryCounter::charge(std::uint64_t n) {
  std::uint64_t current = count_.load();
  do {
    if (budget_ && current + n > *budget_) {
      throw QueryBudgetExceeded("query budget of " + std::to_string(*budget_) + " exceeded");
    }
  } while (!count_.compare_exchange_weak(current, current + n));
}

namespace {

Shape single_input(const ModelSpec& spec) {
  Shape s{1};
  s.insert(s.end(), spec.input_shape.begin(), spec.input_shape.end());
  return s;
}

std::vector<Var> constants(Graph& g, const Model& m) {
  check_weights(m.spec, m.weights);
  std::vector<Var> out;
  for (std::size_t i = 0; i < m.weights.params.size(); ++i) {
    out.push_back(g.constant(m.weights.params[i], m.spec.name + ".p" + std::to_string(i)));
  }
  return out;
}

std::shared_ptr<const Graph> build_fused(const EnsembleSpec& ens) {
  const ModelSpec& first = ens.models.front()->spec;
  auto g = std::make_shared<Graph>();
  const Var x = g->input("x", single_input(first));
  const Var y = g->input("y", {1, first.class_count});

  std::vector<Var> terms;
  for (std::size_t k = 0; k < ens.models.size(); ++k) {
    const Model& m = *ens.models[k];
    if (m.spec.input_shape != first.input_shape || m.spec.class_count != first.class_count) {
      throw ShapeError("ensemble members disagree on input shape or class count");
    }
    const std::vector<Var> params = constants(*g, m);
    const Var logits = build_logits(m.spec, x, params);
    const double w = ens.weights[k];
    switch (ens.mode) {
      case FusionMode::logits:
        terms.push_back(scale(logits, w));
        break;
      case FusionMode::predictions:
        terms.push_back(scale(exp(log_softmax(logits)), w));
        break;
      case FusionMode::losses:
        terms.push_back(scale(cross_entropy(logits, y), w));
        break;
    }
  }
  Var fused = terms.front();
  for (std::size_t k = 1; k < terms.size(); ++k) fused = fused + terms[k];

  switch (ens.mode) {
    case FusionMode::logits:
      g->set_output(cross_entropy(fused, y).named("ensemble.loss"));
      break;
    case FusionMode::predictions:
      g->set_output(nll(log(fused), y).named("ensemble.loss"));
      break;
    case FusionMode::losses:
      g->set_output(fused.named("ensemble.loss"));
      break;
  }
  return g;
}

std::shared_ptr<const Graph> build_member(const Model& m) {
  auto g = std::make_shared<Graph>();
  const Var x = g->input("x", single_input(m.spec));
  const Var y = g->input("y", {1, m.spec.class_count});
  const std::vector<Var> params = constants(*g, m);
  g->set_output(cross_entropy(build_logits(m.spec, x, params), y).named(m.spec.name + ".loss"));
  return g;
}

}  // namespace

CompiledEnsemble::CompiledEnsemble(EnsembleSpec spec) : spec_(std::move(spec)) {
  validate(spec_);
  fused_ = build_fused(spec_);
  for (const auto& m : spec_.models) members_.push_back(build_member(*m));
}

EnsembleEvaluator::EnsembleEvaluator(std::shared_ptr<const CompiledEnsemble> ensemble, QueryCounter& counter)
    : ensemble_(std::move(ensemble)), counter_(&counter), fused_(ensemble_->fused_graph()) {
  for (int k = 0; k < ensemble_->size(); ++k) members_.emplace_back(ensemble_->member_graph(k));
}

Feed EnsembleEvaluator::feed(const Tensor& x, int label) const {
  const ModelSpec& spec = ensemble_->spec().models.front()->spec;
  if (x.shape() != spec.input_shape) {
    throw ShapeError("ensemble input must be " + shape_string(spec.input_shape) + ", got " + shape_string(x.shape()));
  }
  if (label < 0 || label >= spec.class_count) throw InvalidArgument("label out of range");
  Feed f;
  f.emplace("x", x.reshaped(single_input(spec)));
  Tensor y({1, spec.class_count});
  y[label] = 1.0;
  f.emplace("y", std::move(y));
  return f;
}

double EnsembleEvaluator::ensemble_loss(const Tensor& x, int label) { return fused_.forward(feed(x, label)).item(); }

Tensor EnsembleEvaluator::ensemble_gradient(const Tensor& x, int label) {
  const int k = size();
  counter_->charge(static_cast<std::uint64_t>(k));
  fused_.forward(feed(x, label));
  Tensor g = fused_.backward("x").reshaped(x.shape());
  if (ensemble_->spec().include_inverse_k) g.values() *= 1.0 / static_cast<double>(k);
  return g;
}

Tensor EnsembleEvaluator::single_model_gradient(int k, const Tensor& x, int label) {
  if (k < 0 || k >= size()) throw InvalidArgument("model index " + std::to_string(k) + " out of range");
  counter_->charge(1);
  Executor& ex = members_[static_cast<std::size_t>(k)];
  ex.forward(feed(x, label));
  return ex.backward("x").reshaped(x.shape());
}

double EnsembleEvaluator::single_model_loss(int k, const Tensor& x, int label) {
  if (k < 0 || k >= size()) throw InvalidArgument("model index " + std::to_string(k) + " out of range");
  return members_[static_cast<std::size_t>(k)].forward(feed(x, label)).item();
}

}  // namespace svre
