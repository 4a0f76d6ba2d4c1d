// Small random models and images shared by the unit tests.
#ifndef SVRE_TESTS_FIXTURES_HPP
#define SVRE_TESTS_FIXTURES_HPP

#include "svre/dataset.hpp"
#include "svre/rng.hpp"
#include "svre/zoo.hpp"

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

namespace fixture {

using svre::Index;
using svre::LayerKind;
using svre::LayerSpec;

inline LayerSpec conv(Index out, Index k, Index stride, Index pad) { return {LayerKind::conv2d, out, k, stride, pad}; }
inline LayerSpec dense(Index out) { return {LayerKind::dense, out, 0, 1, 0}; }
inline LayerSpec relu() { return {LayerKind::relu, 0, 0, 1, 0}; }
inline LayerSpec max_pool(Index k) { return {LayerKind::max_pool, 0, k, k, 0}; }
inline LayerSpec avg_pool(Index k) { return {LayerKind::avg_pool, 0, k, k, 0}; }
inline LayerSpec flatten() { return {LayerKind::flatten, 0, 0, 1, 0}; }

// Variety of small architectures over `input`; `which` picks one.
inline svre::ModelSpec tiny_spec(int which, svre::Shape input = svre::image_shape()) {
  svre::ModelSpec s;
  s.input_shape = std::move(input);
  switch (which % 4) {
    case 0:
      s.name = "TinyConvMax";
      s.layers = {conv(3, 3, 1, 1), relu(), max_pool(2), flatten(), dense(10)};
      break;
    case 1:
      s.name = "TinyConvAvg";
      s.layers = {conv(3, 3, 2, 1), relu(), avg_pool(2), flatten(), dense(10)};
      break;
    case 2:
      s.name = "TinyConvDeep";
      s.layers = {conv(2, 3, 2, 0), relu(), conv(3, 3, 1, 1), relu(), flatten(), dense(8), relu(), dense(10)};
      break;
    default:
      s.name = "TinyMlp";
      s.layers = {flatten(), dense(12), relu(), dense(10)};
      break;
  }
  return s;
}

// Kaiming weights plus random biases, so no layer starts exactly at a ReLU kink.
inline std::shared_ptr<const svre::Model> tiny_model(int which, std::uint64_t seed,
                                                     svre::Shape input = svre::image_shape()) {
  svre::Model m{tiny_spec(which, std::move(input)), {}};
  m.weights = svre::init_weights(m.spec, seed);
  svre::Rng rng = svre::make_rng(seed, {77});
  for (auto& p : m.weights.params) {
    if (p.rank() == 1) {
      for (Index i = 0; i < p.size(); ++i) p[i] = 0.2 * (svre::uniform01(rng) - 0.5);
    }
  }
  return std::make_shared<const svre::Model>(std::move(m));
}

inline std::vector<std::shared_ptr<const svre::Model>> tiny_ensemble(int k, std::uint64_t seed,
                                                                     svre::Shape input = svre::image_shape()) {
  std::vector<std::shared_ptr<const svre::Model>> out;
  for (int i = 0; i < k; ++i) out.push_back(tiny_model(i, seed * 31 + static_cast<std::uint64_t>(i), input));
  return out;
}

inline svre::LabeledImage random_image(std::uint64_t seed, svre::Shape shape = svre::image_shape()) {
  svre::Rng rng = svre::make_rng(seed, {91});
  svre::Tensor t(std::move(shape));
  for (Index i = 0; i < t.size(); ++i) t[i] = svre::uniform01(rng);
  return {t, static_cast<int>(svre::uniform_int(rng, 0, 9))};
}

inline std::vector<svre::LabeledImage> random_images(std::size_t n, std::uint64_t seed) {
  std::vector<svre::LabeledImage> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(random_image(seed * 1000 + i));
  return out;
}

inline std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("svre_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace fixture

#endif  // SVRE_TESTS_FIXTURES_HPP
