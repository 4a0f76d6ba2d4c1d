#include "fixtures.hpp"

#include "svre/dataset.hpp"
#include "svre/errors.hpp"

#include <doctest.h>

#include <fstream>
#include <set>

using namespace svre;

namespace {

DatasetManifest small_manifest(std::uint64_t seed) {
  DatasetManifest m;
  m.seed = seed;
  m.train_count = 40;
  m.test_count = 30;
  return m;
}

}  // namespace

TEST_CASE("same manifest renders byte-identical images") {
  const Dataset a = generate(small_manifest(7));
  const Dataset b = generate(small_manifest(7));
  REQUIRE(a.test.size() == b.test.size());
  for (std::size_t i = 0; i < a.test.size(); ++i) {
    CHECK(bit_identical(a.test[i].pixels, b.test[i].pixels));
    CHECK(a.test[i].label == b.test[i].label);
  }
  const Dataset c = generate(small_manifest(8));
  CHECK_FALSE(bit_identical(a.test[0].pixels, c.test[0].pixels));
}

TEST_CASE("image i is a pure function of (seed, split, i)") {
  const Dataset d = generate(small_manifest(3));
  CHECK(bit_identical(d.train[17].pixels, render_image(3, Split::train, 17).pixels));
  CHECK(bit_identical(d.test[4].pixels, render_image(3, Split::test, 4).pixels));
  CHECK_FALSE(bit_identical(d.train[4].pixels, d.test[4].pixels));
}

TEST_CASE("1000 test images cover all ten classes in range") {
  DatasetManifest m;
  m.train_count = 1;
  m.test_count = 1000;
  const Dataset d = generate(m);
  REQUIRE(d.test.size() == 1000);
  std::set<int> labels;
  for (std::size_t i = 0; i < d.test.size(); ++i) {
    CHECK(d.test[i].label == static_cast<int>(i % 10));
    labels.insert(d.test[i].label);
  }
  CHECK(labels.size() == 10);
  for (const auto& im : d.test) {
    REQUIRE(im.pixels.shape() == image_shape());
    CHECK(im.pixels.values().minCoeff() >= 0.0);
    CHECK(im.pixels.values().maxCoeff() <= 1.0);
  }
}

TEST_CASE("invalid manifests are rejected") {
  DatasetManifest m;
  m.test_count = -1;
  CHECK_THROWS_AS(validate(m), InvalidArgument);
  DatasetManifest names;
  names.class_names.pop_back();
  CHECK_THROWS_AS(validate(names), InvalidArgument);
}

TEST_CASE("save then load is element-wise identical") {
  const auto dir = fixture::temp_dir("dataset_roundtrip");
  const Dataset d = generate(small_manifest(11));
  save_images(d.train, dir / "train.svd", R"({"seed":11})");
  const auto back = load_images(dir / "train.svd");
  REQUIRE(back.size() == d.train.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    CHECK(bit_identical(back[i].pixels, d.train[i].pixels));
    CHECK(back[i].label == d.train[i].label);
  }
  CHECK(load_images_metadata(dir / "train.svd") == R"({"seed":11})");
}

TEST_CASE("empty sequence makes a valid zero-record file") {
  const auto dir = fixture::temp_dir("dataset_empty");
  save_images({}, dir / "empty.svd");
  CHECK(load_images(dir / "empty.svd").empty());
}

TEST_CASE("truncated or corrupted files raise checksum errors") {
  const auto dir = fixture::temp_dir("dataset_truncated");
  const Dataset d = generate(small_manifest(2));
  const auto path = dir / "test.svd";
  save_images(d.test, path);
  const auto size = std::filesystem::file_size(path);

  std::filesystem::resize_file(path, size - 100);
  CHECK_THROWS_AS(load_images(path), ChecksumError);

  save_images(d.test, path);
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(static_cast<std::streamoff>(size / 2));
    f.put('\x5a');
  }
  CHECK_THROWS_AS(load_images(path), ChecksumError);
}

TEST_CASE("wrong magic is a format error and a missing file an io error") {
  const auto dir = fixture::temp_dir("dataset_magic");
  std::ofstream(dir / "junk.svd") << "definitely not a dataset container";
  CHECK_THROWS_AS(load_images(dir / "junk.svd"), FormatError);
  CHECK_THROWS_AS(load_images(dir / "absent.svd"), IoError);
}
