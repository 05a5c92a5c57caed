#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>

#include "helpers.hpp"
#include "sc/data.hpp"
#include "sc/error.hpp"

using namespace sc;
namespace fs = std::filesystem;

namespace {

// Fixtures generated straight from the format definitions.

void write_bytes(const std::string& path, const std::vector<uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
}

void push_be32(std::vector<uint8_t>& v, uint32_t x) {
  v.push_back(static_cast<uint8_t>(x >> 24));
  v.push_back(static_cast<uint8_t>(x >> 16));
  v.push_back(static_cast<uint8_t>(x >> 8));
  v.push_back(static_cast<uint8_t>(x));
}

// IDX: big-endian magic (0x08 dtype, ndims), dims, raw ubyte payload
std::vector<uint8_t> idx_images(int n, int h, int w, const std::vector<uint8_t>& pixels) {
  std::vector<uint8_t> v;
  push_be32(v, 2051);
  push_be32(v, static_cast<uint32_t>(n));
  push_be32(v, static_cast<uint32_t>(h));
  push_be32(v, static_cast<uint32_t>(w));
  v.insert(v.end(), pixels.begin(), pixels.end());
  return v;
}

std::vector<uint8_t> idx_labels(const std::vector<uint8_t>& labels) {
  std::vector<uint8_t> v;
  push_be32(v, 2049);
  push_be32(v, static_cast<uint32_t>(labels.size()));
  v.insert(v.end(), labels.begin(), labels.end());
  return v;
}

struct TmpDir {
  fs::path path;
  explicit TmpDir(const char* name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TmpDir() { fs::remove_all(path); }
  std::string file(const char* f) const { return (path / f).string(); }
};

}  // namespace

// ---------------------------------------------------------------------------
// MNIST / IDX
// ---------------------------------------------------------------------------

TEST_CASE("mnist: synthetic 2-image IDX fixture round-trips bit-exactly") {
  TmpDir dir("sc_mnist_fixture");
  // 4x3 images (non-square catches axis swaps); asymmetric pixel pattern
  std::vector<uint8_t> pixels;
  for (int n = 0; n < 2; ++n)
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 3; ++j) pixels.push_back(static_cast<uint8_t>(n * 100 + i * 16 + j * 5));
  write_bytes(dir.file("train-images-idx3-ubyte"), idx_images(2, 4, 3, pixels));
  write_bytes(dir.file("train-labels-idx1-ubyte"), idx_labels({7, 2}));

  Dataset ds = load_mnist(dir.path.string(), "train");
  CHECK(ds.images.shape() == Shape{2, 4, 3, 1});
  CHECK(ds.labels == std::vector<int>{7, 2});
  for (int n = 0; n < 2; ++n)
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 3; ++j)
        CHECK(ds.images.at({n, i, j, 0}) ==
              doctest::Approx(static_cast<float>(n * 100 + i * 16 + j * 5) / 255.0f));
}

TEST_CASE("mnist: pixel 255 scales to exactly 1.0") {
  TmpDir dir("sc_mnist_scale");
  write_bytes(dir.file("train-images-idx3-ubyte"), idx_images(1, 1, 2, {255, 0}));
  write_bytes(dir.file("train-labels-idx1-ubyte"), idx_labels({3}));
  Dataset ds = load_mnist(dir.path.string(), "train");
  CHECK(ds.images.data()[0] == 1.0f);
  CHECK(ds.images.data()[1] == 0.0f);
}

TEST_CASE("mnist: label file shorter than image count is an error") {
  TmpDir dir("sc_mnist_short");
  write_bytes(dir.file("train-images-idx3-ubyte"), idx_images(2, 2, 2, std::vector<uint8_t>(8, 0)));
  write_bytes(dir.file("train-labels-idx1-ubyte"), idx_labels({1}));
  CHECK_THROWS_WITH_AS(load_mnist(dir.path.string(), "train"), doctest::Contains("1 labels for 2"),
                       DataError);
}

TEST_CASE("mnist: magic mismatch names the file and offset") {
  TmpDir dir("sc_mnist_magic");
  std::vector<uint8_t> bad = idx_images(1, 2, 2, std::vector<uint8_t>(4, 0));
  bad[3] = 0x99;  // corrupt the magic
  write_bytes(dir.file("train-images-idx3-ubyte"), bad);
  write_bytes(dir.file("train-labels-idx1-ubyte"), idx_labels({0}));
  CHECK_THROWS_WITH_AS(load_mnist(dir.path.string(), "train"), doctest::Contains("offset 0"),
                       DataError);
}

TEST_CASE("mnist: file length disagreeing with the header reports the offset") {
  TmpDir dir("sc_mnist_trunc");
  std::vector<uint8_t> img = idx_images(2, 2, 2, std::vector<uint8_t>(8, 0));
  img.pop_back();  // truncate one payload byte
  write_bytes(dir.file("train-images-idx3-ubyte"), img);
  write_bytes(dir.file("train-labels-idx1-ubyte"), idx_labels({0, 1}));
  CHECK_THROWS_WITH_AS(load_mnist(dir.path.string(), "train"),
                       doctest::Contains("disagrees with header-implied"), DataError);
}

TEST_CASE("mnist: missing directory names the path") {
  CHECK_THROWS_WITH_AS(load_mnist("/nonexistent/sc_data", "train"),
                       doctest::Contains("/nonexistent/sc_data"), DataError);
}

// ---------------------------------------------------------------------------
// CIFAR-10
// ---------------------------------------------------------------------------

namespace {

std::vector<uint8_t> cifar_record(uint8_t label) {
  std::vector<uint8_t> rec;
  rec.push_back(label);
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < 32; ++i)
      for (int j = 0; j < 32; ++j)
        rec.push_back(static_cast<uint8_t>((c * 89 + i * 7 + j * 3) % 256));
  return rec;
}

}  // namespace

TEST_CASE("cifar10: 1-record fixture decodes planar bytes into interleaved HWC") {
  TmpDir dir("sc_cifar_fixture");
  write_bytes(dir.file("one.bin"), cifar_record(5));
  std::vector<uint8_t> pixels;
  std::vector<int> labels;
  decode_cifar_batch(dir.file("one.bin"), pixels, labels);
  CHECK(labels == std::vector<int>{5});
  REQUIRE(pixels.size() == 32u * 32 * 3);
  for (int i = 0; i < 32; ++i)
    for (int j = 0; j < 32; ++j)
      for (int c = 0; c < 3; ++c)
        CHECK(pixels[static_cast<size_t>((i * 32 + j) * 3 + c)] ==
              static_cast<uint8_t>((c * 89 + i * 7 + j * 3) % 256));
}

TEST_CASE("cifar10: official batches must hold exactly 10000 records") {
  TmpDir dir("sc_cifar_count");
  for (int b = 1; b <= 5; ++b)
    write_bytes(dir.file(("data_batch_" + std::to_string(b) + ".bin").c_str()), cifar_record(1));
  CHECK_THROWS_WITH_AS(load_cifar10(dir.path.string(), "train"),
                       doctest::Contains("expected 10000 records"), DataError);
}

TEST_CASE("cifar10: truncated file reports the partial-record offset") {
  TmpDir dir("sc_cifar_trunc");
  std::vector<uint8_t> rec = cifar_record(0);
  rec.resize(3000);  // cut inside the record
  write_bytes(dir.file("test_batch.bin"), rec);
  CHECK_THROWS_WITH_AS(load_cifar10(dir.path.string(), "test"),
                       doctest::Contains("not a multiple of the 3073-byte record"), DataError);
}

TEST_CASE("cifar10: label byte out of range is rejected") {
  TmpDir dir("sc_cifar_label");
  write_bytes(dir.file("bad.bin"), cifar_record(11));
  std::vector<uint8_t> pixels;
  std::vector<int> labels;
  CHECK_THROWS_WITH_AS(decode_cifar_batch(dir.file("bad.bin"), pixels, labels),
                       doctest::Contains("label 11"), DataError);
}

// ---------------------------------------------------------------------------
// STL-10
// ---------------------------------------------------------------------------

namespace {

// column-major planes: byte for (row i, col j, channel c) sits at
// c*9216 + j*96 + i
std::vector<uint8_t> stl_record(int image_index) {
  std::vector<uint8_t> rec(3 * 96 * 96);
  for (int c = 0; c < 3; ++c)
    for (int j = 0; j < 96; ++j)
      for (int i = 0; i < 96; ++i)
        rec[static_cast<size_t>(c * 9216 + j * 96 + i)] =
            static_cast<uint8_t>((image_index * 31 + i * 7 + j * 13 + c * 29) % 256);
  return rec;
}

}  // namespace

TEST_CASE("stl10: asymmetric fixture verifies the column-major transpose") {
  TmpDir dir("sc_stl_fixture");
  std::vector<uint8_t> data = stl_record(0);
  const std::vector<uint8_t> second = stl_record(1);
  data.insert(data.end(), second.begin(), second.end());
  write_bytes(dir.file("train_X.bin"), data);
  write_bytes(dir.file("train_y.bin"), {1, 10});  // 1-indexed labels

  Dataset ds = load_stl10(dir.path.string(), Stl10Split::train);
  CHECK(ds.images.shape() == Shape{2, 96, 96, 3});
  CHECK(ds.labels == std::vector<int>{0, 9});  // mapped to 0-indexed
  for (int n = 0; n < 2; ++n)
    for (int i = 0; i < 96; i += 17)
      for (int j = 0; j < 96; j += 13)
        for (int c = 0; c < 3; ++c)
          CHECK(ds.images.at({n, i, j, c}) ==
                doctest::Approx(static_cast<float>((n * 31 + i * 7 + j * 13 + c * 29) % 256) /
                                255.0f));
}

TEST_CASE("stl10: unlabeled split carries no labels; union math matches the paper counts") {
  TmpDir dir("sc_stl_unlabeled");
  std::vector<uint8_t> data = stl_record(0);
  const std::vector<uint8_t> second = stl_record(1);
  const std::vector<uint8_t> third = stl_record(2);
  data.insert(data.end(), second.begin(), second.end());
  data.insert(data.end(), third.begin(), third.end());
  write_bytes(dir.file("unlabeled_X.bin"), data);
  write_bytes(dir.file("train_X.bin"), stl_record(3));
  write_bytes(dir.file("train_y.bin"), {4});

  Dataset unl = load_stl10(dir.path.string(), Stl10Split::unlabeled);
  CHECK(unl.size() == 3);
  CHECK_FALSE(unl.labeled());
  Dataset tr = load_stl10(dir.path.string(), Stl10Split::train);
  Dataset pretrain_union = strip_labels(concat(unl, tr));
  CHECK(pretrain_union.size() == 4);
  CHECK_FALSE(pretrain_union.labeled());

  // official sizes: 100000 unlabeled + 5000 labeled = 105000 pretraining samples
  CHECK(kStl10PretrainUnionCount == 105000);
  CHECK(kStl10UnlabeledCount == 100000);
  CHECK(kStl10TrainCount == 5000);
  CHECK(kStl10TestCount == 8000);
}

TEST_CASE("stl10: label out of [1,10] and count mismatches are errors") {
  TmpDir dir("sc_stl_bad");
  write_bytes(dir.file("train_X.bin"), stl_record(0));
  write_bytes(dir.file("train_y.bin"), {0});  // source labels are 1-indexed
  CHECK_THROWS_WITH_AS(load_stl10(dir.path.string(), Stl10Split::train),
                       doctest::Contains("out of [1,10]"), DataError);
  write_bytes(dir.file("train_y.bin"), {1, 2});
  CHECK_THROWS_WITH_AS(load_stl10(dir.path.string(), Stl10Split::train),
                       doctest::Contains("labels for"), DataError);
}

// ---------------------------------------------------------------------------
// augmentation
// ---------------------------------------------------------------------------

TEST_CASE("augment: t=0 and mirror off is the identity") {
  Rng rng(1);
  Tensor x = Tensor::zeros({2, 4, 4, 1});
  for (int64_t i = 0; i < x.numel(); ++i) x.data()[i] = rng.uniform(0.0f, 1.0f);
  AugmentConfig cfg;  // defaults: no translate, no mirror
  Rng arng(2);
  Tensor y = augment(x, cfg, arng);
  for (int64_t i = 0; i < x.numel(); ++i) CHECK(y.data()[i] == x.data()[i]);
}

TEST_CASE("augment: double mirror is the identity") {
  Rng rng(3);
  Tensor x = Tensor::zeros({1, 3, 5, 2});
  for (int64_t i = 0; i < x.numel(); ++i) x.data()[i] = rng.uniform(0.0f, 1.0f);
  Tensor once = translate_mirror(x, {ImageOp{0, 0, true}});
  Tensor twice = translate_mirror(once, {ImageOp{0, 0, true}});
  for (int64_t i = 0; i < x.numel(); ++i) CHECK(twice.data()[i] == x.data()[i]);
}

TEST_CASE("augment: translation by (1,0) matches the hand-shifted array") {
  Tensor x = Tensor::zeros({1, 3, 3, 1});
  for (int i = 0; i < 9; ++i) x.data()[i] = static_cast<float>(i + 1);
  Tensor y = translate_mirror(x, {ImageOp{1, 0, false}});
  // content moves down one row; first row zero-padded
  const float want[9] = {0, 0, 0, 1, 2, 3, 4, 5, 6};
  for (int i = 0; i < 9; ++i) CHECK(y.data()[i] == want[i]);

  Tensor z = translate_mirror(x, {ImageOp{0, 1, false}});
  const float want_dx[9] = {0, 1, 2, 0, 4, 5, 0, 7, 8};
  for (int i = 0; i < 9; ++i) CHECK(z.data()[i] == want_dx[i]);
}

TEST_CASE("augment: preserves shape and [0,1] range; rejects oversized translations") {
  Rng rng(5);
  Tensor x = Tensor::zeros({4, 8, 8, 3});
  for (int64_t i = 0; i < x.numel(); ++i) x.data()[i] = rng.uniform(0.0f, 1.0f);
  AugmentConfig cfg;
  cfg.max_translate = 2;
  cfg.mirror = true;
  Rng arng(7);
  Tensor y = augment(x, cfg, arng);
  CHECK(y.shape() == x.shape());
  for (int64_t i = 0; i < y.numel(); ++i) {
    CHECK(y.data()[i] >= 0.0f);
    CHECK(y.data()[i] <= 1.0f);
  }
  AugmentConfig big;
  big.max_translate = 4;  // min(8,8)/2 = 4 is not strictly less
  CHECK_THROWS_AS(augment(x, big, arng), ConfigError);
}

// ---------------------------------------------------------------------------
// batching
// ---------------------------------------------------------------------------

TEST_CASE("batch_indices: N=10, bs=3 gives 3 batches with drop_last (pretraining)") {
  Rng rng(9);
  auto batches = batch_indices(10, 3, true, true, rng);
  CHECK(batches.size() == 3);
  for (const auto& b : batches) CHECK(b.size() == 3);

  Rng rng2(9);
  auto kept = batch_indices(10, 3, true, false, rng2);
  CHECK(kept.size() == 4);
  CHECK(kept.back().size() == 1);
}

TEST_CASE("batch_indices: shuffle off is the identity order") {
  Rng rng(11);
  auto batches = batch_indices(7, 3, false, false, rng);
  std::vector<int> flat;
  for (const auto& b : batches) flat.insert(flat.end(), b.begin(), b.end());
  CHECK(flat == std::vector<int>{0, 1, 2, 3, 4, 5, 6});
}

TEST_CASE("batch_indices: shuffle covers every index exactly once per epoch") {
  Rng rng(13);
  auto batches = batch_indices(23, 4, true, false, rng);
  std::vector<int> flat;
  for (const auto& b : batches) flat.insert(flat.end(), b.begin(), b.end());
  std::sort(flat.begin(), flat.end());
  std::vector<int> want(23);
  for (int i = 0; i < 23; ++i) want[static_cast<size_t>(i)] = i;
  CHECK(flat == want);
}

TEST_CASE("take and gather select the right rows") {
  Tensor imgs = Tensor::zeros({3, 1, 1, 2});
  for (int64_t i = 0; i < imgs.numel(); ++i) imgs.data()[i] = static_cast<float>(i);
  Dataset ds{imgs, {5, 6, 7}, "toy"};
  Dataset sub = take(ds, 1, 3);
  CHECK(sub.size() == 2);
  CHECK(sub.labels == std::vector<int>{6, 7});
  CHECK(sub.images.data()[0] == 2.0f);

  Tensor picked = gather_images(ds, {2, 0});
  CHECK(picked.data()[0] == 4.0f);
  CHECK(picked.data()[2] == 0.0f);
  CHECK(gather_labels(ds, {2, 0}) == std::vector<int>{7, 5});
}
