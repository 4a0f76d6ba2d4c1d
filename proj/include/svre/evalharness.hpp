#ifndef SVRE_EVALHARNESS_HPP
#define SVRE_EVALHARNESS_HPP

#include "svre/attacks.hpp"
#include "svre/dataset.hpp"
#include "svre/zoo.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace svre {

struct NamedModel {
  std::string name;
  std::shared_ptr<const Model> model;
};

/// An attack to compare, e.g. "svre-mifgsm". The harness overwrites `config.seed`.
struct AttackVariant {
  std::string label;
  AttackMethod method = AttackMethod::ens;
  AttackConfig config;
};

/// Input purification applied before a target model classifies an image.
struct Defense {
  enum class Kind { bit_reduction, spatial_smoothing } kind = Kind::bit_reduction;
  int parameter = 4;  // bits, or median window
};
std::string defense_name(const Defense& d);
Tensor apply_defense(const Defense& d, const Tensor& x);

struct ExperimentPlan {
  /// Models rotated through the hold-out position; the rest form the ensemble.
  std::vector<NamedModel> members;
  /// Extra black-box targets never placed in an ensemble (e.g. adversarially trained).
  std::vector<NamedModel> extra_targets;
  std::vector<AttackVariant> attacks;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  std::size_t image_count = 256;
  /// Hold-out positions used by the sweeps; empty means every member.
  std::vector<std::string> sweep_holdouts;
  std::vector<int> m_grid{0, 4, 8, 12, 16, 20, 24, 28, 32};
  std::vector<double> beta_grid;  // defaults to {0.1, 0.2, ..., 25.6} / 255
  /// Defended black-box evaluations of the hold-out model.
  std::vector<Defense> defenses;
  int workers = 1;
};

/// Throws InvalidArgument on an unusable plan.
void validate(const ExperimentPlan& plan);
std::vector<double> default_beta_grid();

/// One success-rate cell.
struct ResultRow {
  std::string experiment;  // holdout, sweep-M, sweep-beta, query-matched
  std::string attack;
  std::string target;
  std::string role;        // hold-out, extra, defended (black-box) or white-box
  std::string ensemble;    // members joined with '+'
  std::uint64_t seed = 0;
  std::string param;       // swept parameter, empty if none
  double param_value = 0.0;
  double success_rate = 0.0;
  std::size_t attacked = 0;
  std::uint64_t queries = 0;
  std::vector<double> loss_curve;  // mean target cross-entropy at x_0..x_T
};

struct ResultTable {
  std::vector<ResultRow> rows;
};

/// K x K mean cosine similarity of sign gradients.
struct CosineMatrix {
  std::vector<std::string> models;
  std::vector<std::vector<double>> mean;
  /// Image/pair cases where a sign gradient was all zero (cosine taken as 0).
  std::size_t zero_cases = 0;
  std::size_t images = 0;
};

/// Fraction of adversarial images whose predicted class differs from the label.
double success_rate(const std::shared_ptr<const Model>& model, std::span<const Tensor> adversarials,
                    std::span<const int> labels, const std::optional<Defense>& defense = std::nullopt);

/// The first `count` pool images classified correctly by every model (fewer if the
/// pool runs out).
std::vector<LabeledImage> select_images(std::span<const NamedModel> models, std::span<const LabeledImage> pool,
                                        std::size_t count);

/// Attacks the ensemble of all members but h, for every h, every attack and every seed,
/// and scores the hold-out, its defended variants, the extra targets and the ensembled
/// members.
ResultTable holdout_protocol(const ExperimentPlan& plan, std::span<const LabeledImage> images);

/// Sweeps M for the svre variants of the plan (M = 0 is the Ens limit).
ResultTable ablate_M(const ExperimentPlan& plan, std::span<const LabeledImage> images);
/// Sweeps beta for the svre variants of the plan.
ResultTable ablate_beta(const ExperimentPlan& plan, std::span<const LabeledImage> images);
/// For each svre variant, runs Ens with T' = T (K + 2M) / K iterations (alpha = eps / T')
/// so both spend the same number of gradient queries.
ResultTable query_matched(const ExperimentPlan& plan, std::span<const LabeledImage> images);

/// T' for query_matched; throws InvalidArgument unless T (K + 2M) is divisible by K.
int matched_iterations(int iterations, int ensemble_size, int inner_iterations);

CosineMatrix sign_gradient_cosine(std::span<const NamedModel> models, std::span<const LabeledImage> images,
                                  int workers = 1);

/// Mean per-iteration loss curve per (experiment, attack, role), averaged over targets,
/// hold-outs and seeds.
struct LossCurve {
  std::string experiment;
  std::string attack;
  std::string role;
  std::vector<double> mean;
};
std::vector<LossCurve> loss_curves(const ResultTable& table);

/// Seed-averaged cell: mean and sample standard deviation over seeds.
struct Summary {
  std::string experiment;
  std::string attack;
  std::string target;
  std::string role;
  std::string ensemble;
  std::string param;
  double param_value = 0.0;
  double mean = 0.0;
  double stddev = 0.0;
  std::size_t seeds = 0;
};
std::vector<Summary> summarize(const ResultTable& table);

/// Mean success over matching rows per seed.
std::map<std::uint64_t, double> per_seed_mean(const ResultTable& table, const std::string& experiment,
                                              const std::string& attack, const std::string& role,
                                              std::optional<double> param_value = std::nullopt);

/// Everything a run emits.
struct ReportBundle {
  ResultTable table;
  std::optional<CosineMatrix> cosine;
  std::string config;  // resolved configuration echo (JSON)
};

/// Writes results.csv, results.json, summary.csv, loss_curves.csv, sweep_M.csv,
/// sweep_beta.csv, query_matched.csv, cosine_matrix.csv and README.txt into `dir`.
void write_report(const ReportBundle& report, const std::filesystem::path& dir);
ReportBundle load_report_json(const std::filesystem::path& path);
std::string results_csv(const ResultTable& table);

}  // namespace svre

#endif  // SVRE_EVALHARNESS_HPP
