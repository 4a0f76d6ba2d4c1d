#include "svre/attacks.hpp"
#include "svre/errors.hpp"
#include "svre/rng.hpp"
#include "svre/zoo.hpp"

#include <cmath>
#include <numeric>

namespace svre {

namespace {

std::string param_name(std::size_t i) { return "p" + std::to_string(i); }

std::shared_ptr<const Graph> make_training_graph(const ModelSpec& spec) {
  auto g = std::make_shared<Graph>();
  Shape xs{-1};
  xs.insert(xs.end(), spec.input_shape.begin(), spec.input_shape.end());
  const Var x = g->input("x", xs);
  const Var y = g->input("y", {-1, spec.class_count});
  std::vector<Var> params;
  const std::vector<Shape> shapes = parameter_shapes(spec);
  for (std::size_t i = 0; i < shapes.size(); ++i) params.push_back(g->input(param_name(i), shapes[i]));
  g->set_output(cross_entropy(build_logits(spec, x, params), y));
  return g;
}

Weights fit(const ModelSpec& spec, std::span<const LabeledImage> train_set, std::span<const LabeledImage> test_set,
            const TrainOptions& options, const AdversarialTrainOptions* adversarial) {
  if (train_set.empty()) throw InvalidArgument("training set is empty");
  if (options.epochs < 0 || options.batch_size < 1) throw InvalidArgument("bad training options");
  if (adversarial && (adversarial->epsilon <= 0.0 || adversarial->epsilon >= 1.0 || adversarial->pgd_steps < 0)) {
    throw InvalidArgument("adversarial training needs epsilon in (0,1) and pgd_steps >= 0");
  }

  Weights weights = init_weights(spec, options.seed);
  std::vector<Tensor> velocity;
  for (const Tensor& p : weights.params) velocity.push_back(Tensor::zeros(p.shape()));

  Executor exec(make_training_graph(spec));
  std::vector<std::string> names;
  for (std::size_t i = 0; i < weights.params.size(); ++i) names.push_back(param_name(i));

  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);
  const int pgd_steps = adversarial ? adversarial->pgd_steps : 0;

  for (int epoch = 0; epoch < options.epochs; ++epoch) {
    Rng shuffle = make_rng(options.seed, {0x5eed, static_cast<std::uint64_t>(epoch)});
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[static_cast<std::size_t>(uniform_int(shuffle, 0, static_cast<std::int64_t>(i) - 1))]);
    }
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(options.batch_size)) {
      const std::size_t n = std::min(order.size() - start, static_cast<std::size_t>(options.batch_size));
      std::vector<Tensor> xs;
      std::vector<int> ys;
      for (std::size_t k = 0; k < n; ++k) {
        xs.push_back(train_set[order[start + k]].pixels);
        ys.push_back(train_set[order[start + k]].label);
      }
      Feed feed;
      feed.emplace("x", stack_images(xs));
      feed.emplace("y", one_hot(ys, spec.class_count));
      for (std::size_t i = 0; i < weights.params.size(); ++i) feed.emplace(names[i], weights.params[i]);

      if (pgd_steps > 0) {
        const double eps = adversarial->epsilon;
        const double step = eps / pgd_steps;
        const Tensor clean = feed.at("x");
        Rng init = make_rng(options.seed, {0xad7, static_cast<std::uint64_t>(epoch), batch_index});
        Tensor adv = clean;
        for (Index i = 0; i < adv.size(); ++i) adv[i] += eps * (2.0 * uniform01(init) - 1.0);
        adv = clip_ball(adv, clean, eps);
        for (int s = 0; s < pgd_steps; ++s) {
          feed.at("x") = adv;
          exec.forward(feed);
          adv = clip_ball(adv + step * sign(exec.backward("x")), clean, eps);
        }
        feed.at("x") = adv;
      }

      const double loss = exec.forward(feed).item();
      if (!std::isfinite(loss)) {
        throw DivergenceError(spec.name + ": loss became non-finite in epoch " + std::to_string(epoch));
      }
      const std::vector<Tensor> grads = exec.backward(names);
      for (std::size_t i = 0; i < weights.params.size(); ++i) {
        velocity[i].values() = options.momentum * velocity[i].values() + grads[i].values();
        weights.params[i].values() -= options.learning_rate * velocity[i].values();
      }
      ++batch_index;
    }
  }

  weights.info.seed = options.seed;
  weights.info.epochs = options.epochs;
  weights.info.learning_rate = options.learning_rate;
  weights.info.momentum = options.momentum;
  weights.info.adversarial = adversarial != nullptr;
  weights.info.epsilon = adversarial ? adversarial->epsilon : 0.0;
  weights.info.pgd_steps = pgd_steps;
  weights.info.batch_size = options.batch_size;
  if (!test_set.empty()) {
    weights.info.test_accuracy = accuracy(std::make_shared<const Model>(Model{spec, weights}), test_set);
  }
  return weights;
}

}  // namespace

Weights train(const ModelSpec& spec, std::span<const LabeledImage> train_set, std::span<const LabeledImage> test_set,
              const TrainOptions& options) {
  return fit(spec, train_set, test_set, options, nullptr);
}

Weights train_adversarial(const ModelSpec& spec, std::span<const LabeledImage> train_set,
                          std::span<const LabeledImage> test_set, const TrainOptions& options,
                          const AdversarialTrainOptions& adversarial) {
  return fit(spec, train_set, test_set, options, &adversarial);
}

}  // namespace svre
