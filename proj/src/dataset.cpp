#include "svre/dataset.hpp"

#include "svre/binary_io.hpp"
#include "svre/errors.hpp"
#include "svre/rng.hpp"

#include <algorithm>
#include <array>
#include <cmath>

namespace svre {

namespace {

constexpr char kMagic[] = "SVREDATA";
constexpr std::uint32_t kVersion = 1;
constexpr double kPi = 3.14159265358979323846;

struct Rgb {
  double r, g, b;
};

Rgb hsv_to_rgb(double h, double s, double v) {
  const double c = v * s;
  const double hp = std::fmod(h, 1.0) * 6.0;
  const double x = c * (1.0 - std::fabs(std::fmod(hp, 2.0) - 1.0));
  Rgb rgb{0, 0, 0};
  if (hp < 1) rgb = {c, x, 0};
  else if (hp < 2) rgb = {x, c, 0};
  else if (hp < 3) rgb = {0, c, x};
  else if (hp < 4) rgb = {0, x, c};
  else if (hp < 5) rgb = {x, 0, c};
  else rgb = {c, 0, x};
  const double m = v - c;
  return {rgb.r + m, rgb.g + m, rgb.b + m};
}

bool even_cell(double v, double cell) { return static_cast<long>(std::floor(v / cell)) % 2 == 0; }

// Shape membership in coordinates relative to the shape centre, scaled by radius s.
struct ShapeParams {
  int label;
  double s;
  double phase;
  double angle;
};

bool inside(const ShapeParams& p, double dx, double dy) {
  // Rotate the sampling frame for the orientation-free classes.
  const double ca = std::cos(p.angle), sa = std::sin(p.angle);
  const double rx = ca * dx + sa * dy;
  const double ry = -sa * dx + ca * dy;
  const double s = p.s;
  const double d = std::hypot(dx, dy);
  const double box = std::max(std::fabs(rx), std::fabs(ry));
  switch (p.label) {
    case 0:  // disk
      return d <= s;
    case 1:  // square
      return box <= 0.8 * s;
    case 2: {  // triangle, apex up
      if (dy < -s || dy > 0.75 * s) return false;
      const double half = (dy + s) / (1.75 * s) * s;
      return std::fabs(dx) <= half;
    }
    case 3:  // ring
      return d <= s && d >= 0.55 * s;
    case 4:  // cross
      return (std::fabs(rx) <= 0.3 * s && std::fabs(ry) <= s) || (std::fabs(ry) <= 0.3 * s && std::fabs(rx) <= s);
    case 5:  // horizontal bars
      return std::fabs(dx) <= s && std::fabs(dy) <= s && even_cell(dy + s, 0.5 * s);
    case 6:  // checkerboard
      return box <= s && (even_cell(rx + s, 0.5 * s) == even_cell(ry + s, 0.5 * s));
    case 7:  // diagonal stripes
      return std::fabs(dx) <= s && std::fabs(dy) <= s && even_cell(dx + dy + 4 * s, 0.45 * s);
    case 8: {  // lobed blob
      const double theta = std::atan2(dy, dx);
      return d <= s * (0.7 + 0.3 * std::sin(3.0 * theta + p.phase));
    }
    case 9:  // square frame
      return box <= s && box >= 0.6 * s;
    default:
      return false;
  }
}

}  // namespace

std::vector<std::string> DatasetManifest::default_class_names() {
  return {"disk", "square", "triangle", "ring", "cross", "bars", "checker", "stripe-diagonal", "blob", "frame"};
}

void validate(const DatasetManifest& manifest) {
  if (manifest.train_count <= 0 || manifest.test_count <= 0) {
    throw InvalidArgument("dataset split sizes must be positive");
  }
  if (manifest.class_names.size() != static_cast<std::size_t>(kClassCount)) {
    throw InvalidArgument("dataset manifest must name exactly 10 classes");
  }
}

LabeledImage render_image(std::uint64_t seed, Split split, Index index) {
  const int label = static_cast<int>(index % kClassCount);
  Rng rng = make_rng(seed, {static_cast<std::uint64_t>(split), static_cast<std::uint64_t>(index)});

  ShapeParams shape{label, 6.0 + 5.0 * uniform01(rng), 2.0 * kPi * uniform01(rng), 0.0};
  shape.angle = (label == 1 || label == 4 || label == 6 || label == 9) ? (uniform01(rng) - 0.5) * 0.5 : 0.0;
  // Centre jittered by up to 4 px so dense-only models can still learn the classes.
  const double centre = 0.5 * static_cast<double>(kImageSide);
  const double cx = centre + 8.0 * (uniform01(rng) - 0.5);
  const double cy = centre + 8.0 * (uniform01(rng) - 0.5);

  // Low contrast between shape and background keeps the classes separable but lets
  // an L-inf perturbation of a few percent move the decision.
  const double bg_hue = uniform01(rng);
  const double bg_value = 0.25 + 0.3 * uniform01(rng);
  const Rgb bg = hsv_to_rgb(bg_hue, 0.2 + 0.3 * uniform01(rng), bg_value);
  const double fg_hue = std::fmod(bg_hue + 0.25 + 0.5 * uniform01(rng), 1.0);
  const Rgb fg = hsv_to_rgb(fg_hue, 0.3 + 0.3 * uniform01(rng), bg_value + 0.18 + 0.22 * uniform01(rng));
  const double noise = 0.015 + 0.025 * uniform01(rng);

  Tensor pixels(image_shape());
  const Index plane = kImageSide * kImageSide;
  constexpr std::array<double, 2> sub{0.25, 0.75};
  for (Index y = 0; y < kImageSide; ++y) {
    for (Index x = 0; x < kImageSide; ++x) {
      // 2x2 supersampled coverage.
      double cover = 0.0;
      for (double sy : sub) {
        for (double sx : sub) {
          cover += inside(shape, static_cast<double>(x) + sx - cx, static_cast<double>(y) + sy - cy) ? 0.25 : 0.0;
        }
      }
      const std::array<double, 3> rgb{bg.r + cover * (fg.r - bg.r), bg.g + cover * (fg.g - bg.g),
                                      bg.b + cover * (fg.b - bg.b)};
      for (Index c = 0; c < kChannels; ++c) {
        const double v = rgb[static_cast<std::size_t>(c)] + noise * normal01(rng);
        pixels[c * plane + y * kImageSide + x] = std::clamp(v, 0.0, 1.0);
      }
    }
  }
  return {std::move(pixels), label};
}

Dataset generate(const DatasetManifest& manifest) {
  validate(manifest);
  Dataset ds;
  ds.train.reserve(static_cast<std::size_t>(manifest.train_count));
  ds.test.reserve(static_cast<std::size_t>(manifest.test_count));
  for (Index i = 0; i < manifest.train_count; ++i) ds.train.push_back(render_image(manifest.seed, Split::train, i));
  for (Index i = 0; i < manifest.test_count; ++i) ds.test.push_back(render_image(manifest.seed, Split::test, i));
  return ds;
}

void save_images(std::span<const LabeledImage> images, const std::filesystem::path& path, const std::string& metadata) {
  const Shape shape = image_shape();
  BinaryWriter w;
  w.bytes(std::string_view(kMagic, 8));
  w.u32(kVersion);
  w.string(metadata);
  w.u64(images.size());
  w.u32(static_cast<std::uint32_t>(shape.size()));
  for (Index d : shape) w.u64(static_cast<std::uint64_t>(d));
  for (const auto& im : images) {
    if (im.pixels.shape() != shape) throw ShapeError("image of shape " + shape_string(im.pixels.shape()));
    w.f64_array(im.pixels.data(), static_cast<std::size_t>(im.pixels.size()));
  }
  for (const auto& im : images) {
    if (im.label < 0 || im.label >= kClassCount) throw InvalidArgument("label out of range");
    w.u16(static_cast<std::uint16_t>(im.label));
  }
  w.write_file(path);
}

namespace {

struct DataHeader {
  std::string metadata;
  std::uint64_t count;
  Shape shape;
};

DataHeader read_header(BinaryReader& r) {
  DataHeader h;
  const std::uint32_t version = r.u32();
  if (version != kVersion) throw FormatError("unsupported dataset container version " + std::to_string(version));
  h.metadata = r.string();
  h.count = r.u64();
  if (h.count > (1ull << 26)) throw FormatError("implausible image count in dataset header");
  const std::uint32_t rank = r.u32();
  if (rank == 0 || rank > 8) throw FormatError("bad image rank in dataset header");
  for (std::uint32_t i = 0; i < rank; ++i) {
    const std::uint64_t d = r.u64();
    if (d == 0 || d > (1u << 20)) throw FormatError("bad image dimension in dataset header");
    h.shape.push_back(static_cast<Index>(d));
  }
  return h;
}

}  // namespace

std::vector<LabeledImage> load_images(const std::filesystem::path& path) {
  BinaryReader r(path, std::string_view(kMagic, 8));
  r.verify_checksum();
  const DataHeader h = read_header(r);
  std::vector<LabeledImage> images(h.count);
  for (auto& im : images) {
    im.pixels = Tensor(h.shape);
    r.f64_array(im.pixels.data(), static_cast<std::size_t>(im.pixels.size()));
  }
  for (auto& im : images) {
    im.label = r.u16();
    if (im.label >= kClassCount) throw FormatError("label out of range in '" + path.string() + "'");
  }
  r.expect_end();
  return images;
}

std::string load_images_metadata(const std::filesystem::path& path) {
  BinaryReader r(path, std::string_view(kMagic, 8));
  r.verify_checksum();
  return read_header(r).metadata;
}

}  // namespace svre
