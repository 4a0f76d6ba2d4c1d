#ifndef SVRE_ZOO_HPP
#define SVRE_ZOO_HPP

#include "svre/dataset.hpp"
#include "svre/graph.hpp"
#include "svre/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace svre {

enum class LayerKind { conv2d, relu, max_pool, avg_pool, flatten, dense };

struct LayerSpec {
  LayerKind kind = LayerKind::relu;
  Index units = 0;    // conv output channels or dense outputs
  Index kernel = 0;   // conv / pooling window
  Index stride = 1;
  Index padding = 0;
};

/// Declarative description of a classifier as a sequence of layers.
struct ModelSpec {
  std::string name;
  std::vector<LayerSpec> layers;
  Shape input_shape = image_shape();
  Index class_count = kClassCount;
};

/// Per-sample activation shapes, input first. Throws ShapeError if layers do not
/// compose or the last layer does not emit `class_count` logits.
std::vector<Shape> infer_shapes(const ModelSpec& spec);
/// Parameter tensor shapes in layer order (conv: weight, bias; dense: weight, bias).
std::vector<Shape> parameter_shapes(const ModelSpec& spec);

/// ConvA, ConvB, ConvC and MlpD.
std::vector<ModelSpec> builtin_specs();
ModelSpec builtin_spec(std::string_view name);

struct TrainingInfo {
  std::uint64_t seed = 0;
  int epochs = 0;
  double learning_rate = 0.0;
  double momentum = 0.0;
  bool adversarial = false;
  double epsilon = 0.0;
  int pgd_steps = 0;
  double test_accuracy = 0.0;
  Index batch_size = 0;
  /// Caller-supplied provenance (JSON by convention), stored verbatim.
  std::string provenance;
};

struct Weights {
  std::vector<Tensor> params;
  TrainingInfo info;
};

/// Kaiming-normal weights (std = sqrt(2 / fan_in)), zero biases.
Weights init_weights(const ModelSpec& spec, std::uint64_t seed);
void check_weights(const ModelSpec& spec, const Weights& weights);

/// Appends the layer stack to `graph` and returns the logits [N, class_count].
Var build_logits(const ModelSpec& spec, Var x, std::span<const Var> params);

/// An immutable trained classifier.
struct Model {
  ModelSpec spec;
  Weights weights;
};

/// Graph with input "x" [N,3,32,32] and output logits, weights baked in as constants.
std::shared_ptr<const Graph> make_logits_graph(const Model& model);
/// Graph with inputs "x" [N,3,32,32] and "y" (one-hot [N,10]) and output the mean
/// cross-entropy.
std::shared_ptr<const Graph> make_loss_graph(const Model& model);

Tensor one_hot(std::span<const int> labels, Index classes = kClassCount);
/// Stacks [3,32,32] images into [N,3,32,32].
Tensor stack_images(std::span<const Tensor> images);

/// Batched inference helper; one instance per worker.
class Classifier {
 public:
  explicit Classifier(std::shared_ptr<const Model> model);

  /// Logits [N,10] for a batch [N,3,32,32] or a single image [3,32,32] (-> [1,10]).
  Tensor logits(const Tensor& x);
  int predict(const Tensor& image);
  std::vector<int> predict(std::span<const Tensor> images);
  /// Cross-entropy of a single image.
  double loss(const Tensor& image, int label);

  const Model& model() const { return *model_; }

 private:
  std::shared_ptr<const Model> model_;
  Executor logits_;
};

double accuracy(const std::shared_ptr<const Model>& model, std::span<const LabeledImage> images);

struct TrainOptions {
  int epochs = 15;
  double learning_rate = 0.05;
  double momentum = 0.5;
  Index batch_size = 32;
  std::uint64_t seed = 0;
};

/// Training defaults per builtin architecture. The dense-only MlpD needs a smaller
/// step and more epochs than the convolutional models.
TrainOptions default_train_options(std::string_view arch);

struct AdversarialTrainOptions {
  double epsilon = 16.0 / 255.0;
  int pgd_steps = 5;
};

/// Mini-batch SGD with momentum on the mean cross-entropy. Records the final test
/// accuracy in the returned metadata. Throws DivergenceError on a non-finite loss.
Weights train(const ModelSpec& spec, std::span<const LabeledImage> train_set, std::span<const LabeledImage> test_set,
              const TrainOptions& options);

/// As train(), but each mini-batch is replaced by PGD examples: a uniform start in
/// the epsilon ball, then `pgd_steps` sign steps of size epsilon / pgd_steps.
Weights train_adversarial(const ModelSpec& spec, std::span<const LabeledImage> train_set,
                          std::span<const LabeledImage> test_set, const TrainOptions& options,
                          const AdversarialTrainOptions& adversarial);

void save_weights(const ModelSpec& spec, const Weights& weights, const std::filesystem::path& path);
/// Throws SpecMismatchError if the stored architecture differs from `spec`.
Weights load_weights(const ModelSpec& spec, const std::filesystem::path& path);
/// Loads a file produced for one of the builtin architectures.
Model load_model(const std::filesystem::path& path);

}  // namespace svre

#endif  // SVRE_ZOO_HPP
