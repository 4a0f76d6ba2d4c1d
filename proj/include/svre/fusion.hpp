#ifndef SVRE_FUSION_HPP
#define SVRE_FUSION_HPP

#include "svre/graph.hpp"
#include "svre/zoo.hpp"

#include <atomic>
#include <cstdint>
#include <memory>
#include <optional>
#include <string_view>
#include <vector>

namespace svre {

/// How the members of an ensemble are combined into one attack objective.
enum class FusionMode {
  predictions,  // -log(sum_k w_k softmax(l_k))[y]
  logits,       // cross-entropy of sum_k w_k l_k
  losses,       // sum_k w_k CE(l_k, y)
};

const char* fusion_name(FusionMode mode);
FusionMode parse_fusion(std::string_view name);

struct EnsembleSpec {
  std::vector<std::shared_ptr<const Model>> models;
  std::vector<double> weights;
  FusionMode mode = FusionMode::logits;
  /// Multiply the ensemble gradient by 1/K.
  bool include_inverse_k = true;
};

/// Uniform weights w_k = 1/K.
EnsembleSpec make_ensemble(std::vector<std::shared_ptr<const Model>> models, FusionMode mode = FusionMode::logits,
                           bool include_inverse_k = true);
/// Throws InvalidArgument unless K >= 1, w_k >= 0 and sum w_k = 1 within 1e-12.
void validate(const EnsembleSpec& ens);

/// Thread-safe count of single-model gradient evaluations, with an optional cap.
class QueryCounter {
 public:
  explicit QueryCounter(std::optional<std::uint64_t> budget = std::nullopt) : budget_(budget) {}

  /// Records `n` queries; throws QueryBudgetExceeded (recording nothing) if the cap would be passed.
  void charge(std::uint64_t n);
  std::uint64_t value() const { return count_.load(); }

 private:
  std::atomic<std::uint64_t> count_{0};
  std::optional<std::uint64_t> budget_;
};

/// Graphs shared by every worker attacking with one ensemble.
class CompiledEnsemble {
 public:
  explicit CompiledEnsemble(EnsembleSpec spec);

  const EnsembleSpec& spec() const { return spec_; }
  int size() const { return static_cast<int>(spec_.models.size()); }
  const std::shared_ptr<const Graph>& fused_graph() const { return fused_; }
  const std::shared_ptr<const Graph>& member_graph(int k) const { return members_.at(static_cast<std::size_t>(k)); }

 private:
  EnsembleSpec spec_;
  std::shared_ptr<const Graph> fused_;
  std::vector<std::shared_ptr<const Graph>> members_;
};

/// Per-worker evaluation state over a CompiledEnsemble. Images are [3,32,32].
class EnsembleEvaluator {
 public:
  EnsembleEvaluator(std::shared_ptr<const CompiledEnsemble> ensemble, QueryCounter& counter);

  int size() const { return ensemble_->size(); }
  const CompiledEnsemble& ensemble() const { return *ensemble_; }
  QueryCounter& counter() { return *counter_; }
  void set_counter(QueryCounter& counter) { counter_ = &counter; }

  /// Fused loss J(x, y). Not counted as a gradient query.
  double ensemble_loss(const Tensor& x, int label);
  /// grad_x J(x, y), times 1/K when include_inverse_k. Charges K queries.
  Tensor ensemble_gradient(const Tensor& x, int label);
  /// grad_x J_k(x, y) of member k's own cross-entropy (0-based k). Charges one query.
  Tensor single_model_gradient(int k, const Tensor& x, int label);
  /// Cross-entropy of member k alone. Not counted.
  double single_model_loss(int k, const Tensor& x, int label);

 private:
  Feed feed(const Tensor& x, int label) const;

  std::shared_ptr<const CompiledEnsemble> ensemble_;
  QueryCounter* counter_;
  Executor fused_;
  std::vector<Executor> members_;
};

}  // namespace svre

#endif  // SVRE_FUSION_HPP
