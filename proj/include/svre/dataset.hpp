#ifndef SVRE_DATASET_HPP
#define SVRE_DATASET_HPP

#include "svre/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace svre {

inline constexpr int kClassCount = 10;
inline constexpr Index kChannels = 3;
inline constexpr Index kImageSide = 32;

inline Shape image_shape() { return {kChannels, kImageSide, kImageSide}; }

/// An image [3,32,32] with pixels in [0,1] and its class label.
struct LabeledImage {
  Tensor pixels;
  int label = 0;
};

enum class Split : std::uint64_t { train = 1, test = 2 };

/// Inputs that fully determine a synthetic dataset.
struct DatasetManifest {
  std::uint64_t seed = 0;
  Index train_count = 5000;
  Index test_count = 1000;
  std::vector<std::string> class_names = default_class_names();

  static std::vector<std::string> default_class_names();
};

struct Dataset {
  std::vector<LabeledImage> train;
  std::vector<LabeledImage> test;
};

void validate(const DatasetManifest& manifest);

/// Renders the "Shapes-10" dataset. Image i of a split has label i % 10 and is a pure
/// function of (seed, split, i).
Dataset generate(const DatasetManifest& manifest);

/// Renders a single image of class `label` from its own random stream.
LabeledImage render_image(std::uint64_t seed, Split split, Index index);

/// Writes images to the dataset container. `metadata` is an opaque string (JSON by
/// convention) stored in the header for provenance.
void save_images(std::span<const LabeledImage> images, const std::filesystem::path& path,
                 const std::string& metadata = "{}");
std::vector<LabeledImage> load_images(const std::filesystem::path& path);
/// Header metadata of a dataset container.
std::string load_images_metadata(const std::filesystem::path& path);

}  // namespace svre

#endif  // SVRE_DATASET_HPP
