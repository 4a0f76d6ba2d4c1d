#include "svre/zoo.hpp"

#include "svre/binary_io.hpp"
#include "svre/errors.hpp"
#include "svre/rng.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>

namespace svre {

namespace {

LayerSpec conv(Index out, Index kernel, Index stride, Index padding) {
  return {LayerKind::conv2d, out, kernel, stride, padding};
}
LayerSpec dense(Index out) { return {LayerKind::dense, out, 0, 1, 0}; }
LayerSpec relu_layer() { return {LayerKind::relu, 0, 0, 1, 0}; }
LayerSpec max_pool(Index k) { return {LayerKind::max_pool, 0, k, k, 0}; }
LayerSpec avg_pool(Index k) { return {LayerKind::avg_pool, 0, k, k, 0}; }
LayerSpec flatten_layer() { return {LayerKind::flatten, 0, 0, 1, 0}; }

}  // namespace

std::vector<ModelSpec> builtin_specs() {
  ModelSpec a{"ConvA",
              {conv(8, 3, 1, 1), relu_layer(), max_pool(2), conv(16, 3, 1, 1), relu_layer(), max_pool(2),
               conv(16, 3, 1, 1), relu_layer(), max_pool(2), flatten_layer(), dense(kClassCount)}};
  ModelSpec b{"ConvB",
              {conv(8, 5, 1, 2), relu_layer(), avg_pool(2), conv(16, 5, 1, 2), relu_layer(), avg_pool(2),
               flatten_layer(), dense(kClassCount)}};
  ModelSpec c{"ConvC",
              {conv(12, 3, 2, 1), relu_layer(), conv(24, 3, 2, 1), relu_layer(), conv(24, 3, 2, 1), relu_layer(),
               flatten_layer(), dense(kClassCount)}};
  ModelSpec d{"MlpD", {flatten_layer(), dense(64), relu_layer(), dense(kClassCount)}};
  return {a, b, c, d};
}

ModelSpec builtin_spec(std::string_view name) {
  for (auto& s : builtin_specs()) {
    if (s.name == name) return s;
  }
  throw InvalidArgument("unknown architecture '" + std::string(name) + "'");
}

TrainOptions default_train_options(std::string_view arch) {
  TrainOptions o;
  if (arch == "MlpD") {
    o.epochs = 150;
    o.learning_rate = 0.001;
    o.momentum = 0.9;
  }
  return o;
}

std::vector<Shape> infer_shapes(const ModelSpec& spec) {
  std::vector<Shape> shapes{spec.input_shape};
  auto fail = [&](std::size_t i, const std::string& what) {
    throw ShapeError(spec.name + " layer " + std::to_string(i) + ": " + what);
  };
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& l = spec.layers[i];
    const Shape& s = shapes.back();
    switch (l.kind) {
      case LayerKind::conv2d: {
        if (s.size() != 3) fail(i, "conv2d expects [C,H,W], got " + shape_string(s));
        if (l.units < 1 || l.kernel < 1 || l.stride < 1 || l.padding < 0) fail(i, "bad conv2d hyperparameters");
        const Index h = s[1] + 2 * l.padding - l.kernel;
        const Index w = s[2] + 2 * l.padding - l.kernel;
        if (h < 0 || w < 0) fail(i, "kernel larger than padded input");
        shapes.push_back({l.units, h / l.stride + 1, w / l.stride + 1});
        break;
      }
      case LayerKind::max_pool:
      case LayerKind::avg_pool: {
        if (s.size() != 3) fail(i, "pooling expects [C,H,W], got " + shape_string(s));
        if (l.kernel < 1 || l.stride < 1 || s[1] < l.kernel || s[2] < l.kernel) fail(i, "bad pooling window");
        shapes.push_back({s[0], (s[1] - l.kernel) / l.stride + 1, (s[2] - l.kernel) / l.stride + 1});
        break;
      }
      case LayerKind::relu:
        shapes.push_back(s);
        break;
      case LayerKind::flatten:
        shapes.push_back({shape_size(s)});
        break;
      case LayerKind::dense:
        if (s.size() != 1) fail(i, "dense expects a flat input, got " + shape_string(s));
        if (l.units < 1) fail(i, "dense needs at least one output");
        shapes.push_back({l.units});
        break;
    }
  }
  if (shapes.back() != Shape{spec.class_count}) {
    throw ShapeError(spec.name + " emits " + shape_string(shapes.back()) + " instead of " +
                     std::to_string(spec.class_count) + " logits");
  }
  return shapes;
}

std::vector<Shape> parameter_shapes(const ModelSpec& spec) {
  const std::vector<Shape> act = infer_shapes(spec);
  std::vector<Shape> out;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& l = spec.layers[i];
    if (l.kind == LayerKind::conv2d) {
      out.push_back({l.units, act[i][0], l.kernel, l.kernel});
      out.push_back({l.units});
    } else if (l.kind == LayerKind::dense) {
      out.push_back({act[i][0], l.units});
      out.push_back({l.units});
    }
  }
  return out;
}

Weights init_weights(const ModelSpec& spec, std::uint64_t seed) {
  Weights w;
  w.info.seed = seed;
  Rng rng = make_rng(seed, {0x1417});
  for (const Shape& s : parameter_shapes(spec)) {
    Tensor t(s);
    if (s.size() > 1) {
      const Index fan_in = s.size() == 4 ? s[1] * s[2] * s[3] : s[0];
      const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
      for (Index i = 0; i < t.size(); ++i) t[i] = stddev * normal01(rng);
    }
    w.params.push_back(std::move(t));
  }
  return w;
}

void check_weights(const ModelSpec& spec, const Weights& weights) {
  const std::vector<Shape> expected = parameter_shapes(spec);
  if (expected.size() != weights.params.size()) {
    throw SpecMismatchError(spec.name + " expects " + std::to_string(expected.size()) + " parameter tensors, got " +
                            std::to_string(weights.params.size()));
  }
  for (std::size_t i = 0; i < expected.size(); ++i) {
    if (expected[i] != weights.params[i].shape()) {
      throw SpecMismatchError(spec.name + " parameter " + std::to_string(i) + " should be " +
                              shape_string(expected[i]) + ", got " + shape_string(weights.params[i].shape()));
    }
  }
}

Var build_logits(const ModelSpec& spec, Var x, std::span<const Var> params) {
  std::size_t p = 0;
  auto next = [&] {
    if (p >= params.size()) throw InvalidArgument(spec.name + ": too few parameter nodes");
    return params[p++];
  };
  Var h = x;
  for (const LayerSpec& l : spec.layers) {
    switch (l.kind) {
      case LayerKind::conv2d: {
        const Var w = next();
        const Var b = next();
        h = conv2d(h, w, b, {l.stride, l.padding});
        break;
      }
      case LayerKind::relu:
        h = relu(h);
        break;
      case LayerKind::max_pool:
        h = max_pool2d(h, l.kernel, l.stride);
        break;
      case LayerKind::avg_pool:
        h = avg_pool2d(h, l.kernel, l.stride);
        break;
      case LayerKind::flatten:
        h = flatten(h);
        break;
      case LayerKind::dense: {
        const Var w = next();
        const Var b = next();
        h = matmul(h, w) + b;
        break;
      }
    }
  }
  if (p != params.size()) throw InvalidArgument(spec.name + ": too many parameter nodes");
  return h.named(spec.name + ".logits");
}

namespace {

Shape batched_input(const ModelSpec& spec) {
  Shape s{-1};
  s.insert(s.end(), spec.input_shape.begin(), spec.input_shape.end());
  return s;
}

std::vector<Var> bind_constants(Graph& g, const Model& model) {
  check_weights(model.spec, model.weights);
  std::vector<Var> params;
  for (std::size_t i = 0; i < model.weights.params.size(); ++i) {
    params.push_back(g.constant(model.weights.params[i], model.spec.name + ".p" + std::to_string(i)));
  }
  return params;
}

}  // namespace

std::shared_ptr<const Graph> make_logits_graph(const Model& model) {
  auto g = std::make_shared<Graph>();
  const Var x = g->input("x", batched_input(model.spec));
  const std::vector<Var> params = bind_constants(*g, model);
  g->set_output(build_logits(model.spec, x, params));
  return g;
}

std::shared_ptr<const Graph> make_loss_graph(const Model& model) {
  auto g = std::make_shared<Graph>();
  const Var x = g->input("x", batched_input(model.spec));
  const Var y = g->input("y", {-1, model.spec.class_count});
  const std::vector<Var> params = bind_constants(*g, model);
  g->set_output(cross_entropy(build_logits(model.spec, x, params), y));
  return g;
}

Tensor one_hot(std::span<const int> labels, Index classes) {
  Tensor t({static_cast<Index>(labels.size()), classes});
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= classes) throw InvalidArgument("label out of range");
    t[static_cast<Index>(i) * classes + labels[i]] = 1.0;
  }
  return t;
}

Tensor stack_images(std::span<const Tensor> images) {
  if (images.empty()) throw InvalidArgument("cannot stack an empty batch");
  Shape s{static_cast<Index>(images.size())};
  s.insert(s.end(), images.front().shape().begin(), images.front().shape().end());
  Tensor out(s);
  const Index per = images.front().size();
  for (std::size_t i = 0; i < images.size(); ++i) {
    require_same_shape(images[i], images.front(), "stack_images");
    out.values().segment(static_cast<Index>(i) * per, per) = images[i].values();
  }
  return out;
}

Classifier::Classifier(std::shared_ptr<const Model> model)
    : model_(std::move(model)), logits_(make_logits_graph(*model_)) {}

Tensor Classifier::logits(const Tensor& x) {
  Feed feed;
  if (x.shape() == model_->spec.input_shape) {
    Shape s{1};
    s.insert(s.end(), x.shape().begin(), x.shape().end());
    feed.emplace("x", x.reshaped(s));
  } else {
    feed.emplace("x", x);
  }
  return logits_.forward(feed);
}

int Classifier::predict(const Tensor& image) {
  const Tensor z = logits(image);
  Index best;
  z.values().maxCoeff(&best);
  return static_cast<int>(best);
}

std::vector<int> Classifier::predict(std::span<const Tensor> images) {
  std::vector<int> out;
  out.reserve(images.size());
  constexpr std::size_t kChunk = 64;
  for (std::size_t start = 0; start < images.size(); start += kChunk) {
    const std::size_t n = std::min(kChunk, images.size() - start);
    const Tensor z = logits(stack_images(images.subspan(start, n)));
    const Index classes = z.dim(1);
    ConstRowMatrixMap zm = z.matrix(static_cast<Index>(n), classes);
    for (Index r = 0; r < static_cast<Index>(n); ++r) {
      Index best;
      zm.row(r).maxCoeff(&best);
      out.push_back(static_cast<int>(best));
    }
  }
  return out;
}

double Classifier::loss(const Tensor& image, int label) {
  const Tensor z = logits(image);
  const double m = z.values().maxCoeff();
  const double lse = m + std::log((z.array() - m).exp().sum());
  return lse - z[label];
}

double accuracy(const std::shared_ptr<const Model>& model, std::span<const LabeledImage> images) {
  if (images.empty()) throw InvalidArgument("accuracy of an empty set");
  Classifier clf(model);
  std::vector<Tensor> xs;
  xs.reserve(images.size());
  for (const auto& im : images) xs.push_back(im.pixels);
  const std::vector<int> pred = clf.predict(xs);
  Index correct = 0;
  for (std::size_t i = 0; i < images.size(); ++i) correct += pred[i] == images[i].label;
  return static_cast<double>(correct) / static_cast<double>(images.size());
}

// ---------------------------------------------------------------------------
// Weight container

namespace {

constexpr char kWeightsMagic[] = "SVREWGTS";
constexpr std::uint32_t kWeightsVersion = 2;

nlohmann::json info_to_json(const ModelSpec& spec, const TrainingInfo& info) {
  return {{"arch", spec.name},
          {"seed", info.seed},
          {"epochs", info.epochs},
          {"learning_rate", info.learning_rate},
          {"momentum", info.momentum},
          {"adversarial", info.adversarial},
          {"epsilon", info.epsilon},
          {"pgd_steps", info.pgd_steps},
          {"test_accuracy", info.test_accuracy},
          {"batch_size", info.batch_size},
          {"provenance", info.provenance}};
}

struct StoredWeights {
  std::string arch;
  Weights weights;
};

StoredWeights read_weights(const std::filesystem::path& path) {
  BinaryReader r(path, std::string_view(kWeightsMagic, 8));
  r.verify_checksum();
  const std::uint32_t version = r.u32();
  if (version != kWeightsVersion) throw FormatError("unsupported weights container version");
  StoredWeights out;
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(r.string());
    out.arch = meta.at("arch").get<std::string>();
    TrainingInfo& info = out.weights.info;
    info.seed = meta.at("seed").get<std::uint64_t>();
    info.epochs = meta.at("epochs").get<int>();
    info.learning_rate = meta.at("learning_rate").get<double>();
    info.momentum = meta.at("momentum").get<double>();
    info.adversarial = meta.at("adversarial").get<bool>();
    info.epsilon = meta.at("epsilon").get<double>();
    info.pgd_steps = meta.at("pgd_steps").get<int>();
    info.test_accuracy = meta.at("test_accuracy").get<double>();
    info.batch_size = meta.at("batch_size").get<Index>();
    info.provenance = meta.at("provenance").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("bad weights metadata in '" + path.string() + "': " + e.what());
  }
  // The accuracy is stored bit-exactly next to the JSON copy.
  out.weights.info.test_accuracy = r.f64();
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t rank = r.u32();
    if (rank == 0 || rank > 8) throw FormatError("bad parameter rank in '" + path.string() + "'");
    Shape s;
    for (std::uint32_t d = 0; d < rank; ++d) {
      const std::uint64_t v = r.u64();
      if (v == 0 || v > (1u << 24)) throw FormatError("bad parameter dimension in '" + path.string() + "'");
      s.push_back(static_cast<Index>(v));
    }
    Tensor t(s);
    r.f64_array(t.data(), static_cast<std::size_t>(t.size()));
    out.weights.params.push_back(std::move(t));
  }
  r.expect_end();
  return out;
}

}  // namespace

void save_weights(const ModelSpec& spec, const Weights& weights, const std::filesystem::path& path) {
  check_weights(spec, weights);
  BinaryWriter w;
  w.bytes(std::string_view(kWeightsMagic, 8));
  w.u32(kWeightsVersion);
  w.string(info_to_json(spec, weights.info).dump());
  w.f64(weights.info.test_accuracy);
  w.u32(static_cast<std::uint32_t>(weights.params.size()));
  for (const Tensor& t : weights.params) {
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (Index d : t.shape()) w.u64(static_cast<std::uint64_t>(d));
    w.f64_array(t.data(), static_cast<std::size_t>(t.size()));
  }
  w.write_file(path);
}

Weights load_weights(const ModelSpec& spec, const std::filesystem::path& path) {
  StoredWeights stored = read_weights(path);
  if (stored.arch != spec.name) {
    throw SpecMismatchError("'" + path.string() + "' holds " + stored.arch + " weights, not " + spec.name);
  }
  check_weights(spec, stored.weights);
  return std::move(stored.weights);
}

Model load_model(const std::filesystem::path& path) {
  StoredWeights stored = read_weights(path);
  ModelSpec spec = builtin_spec(stored.arch);
  check_weights(spec, stored.weights);
  return {std::move(spec), std::move(stored.weights)};
}

}  // namespace svre
