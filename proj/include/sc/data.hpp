#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sc/rng.hpp"
#include "sc/tensor.hpp"

namespace sc {

struct Dataset {
  Tensor images;            // [N,H,W,C], values in [0,1]
  std::vector<int> labels;  // empty for unlabeled splits
  std::string split;

  int size() const { return images.defined() ? images.dim(0) : 0; }
  bool labeled() const { return !labels.empty(); }
};

// Decoded IDX payload (big-endian header, ubyte data).
struct IdxData {
  std::vector<int> dims;
  std::vector<uint8_t> bytes;
};
IdxData read_idx(const std::string& path, uint32_t expected_magic);

// MNIST IDX pair for a split ("train" or "test"). limit > 0 keeps the first
// `limit` examples.
Dataset load_mnist(const std::string& dir, const std::string& split, int limit = 0);

// One CIFAR-10 binary batch file (3073-byte records).
void decode_cifar_batch(const std::string& path, std::vector<uint8_t>& pixels,
                        std::vector<int>& labels);
// Official batches; every batch file must hold exactly 10000 records.
Dataset load_cifar10(const std::string& dir, const std::string& split, int limit = 0);

enum class Stl10Split { unlabeled, train, test };
// STL-10 binary records are channel-planar and column-major per plane.
Dataset load_stl10(const std::string& dir, Stl10Split split, int limit = 0);

// Official file sizes, used by fetch verification and the pretrain union.
constexpr int kStl10UnlabeledCount = 100000;
constexpr int kStl10TrainCount = 5000;
constexpr int kStl10TestCount = 8000;
constexpr int kStl10PretrainUnionCount = kStl10UnlabeledCount + kStl10TrainCount;

// Concatenates along the batch axis; shapes must agree. Label vectors concat
// when both carry labels, else the result is unlabeled.
Dataset concat(const Dataset& a, const Dataset& b);

// View of selected rows (copies).
Dataset take(const Dataset& ds, int begin, int end);
Dataset strip_labels(Dataset ds);

struct AugmentConfig {
  int max_translate = 0;  // uniform integer shift in [-t, t]^2, zero padded
  bool mirror = false;    // horizontal flip with probability 1/2

  void validate(int h, int w) const;
};

// Deterministic core: per-image {dy, dx, mirror}; content shifts down/right
// by (dy,dx) with zero padding, then flips horizontally.
struct ImageOp {
  int dy = 0;
  int dx = 0;
  bool mirror = false;
};
Tensor translate_mirror(const Tensor& batch, const std::vector<ImageOp>& ops);

// Per-image translation then optional mirror; label-preserving by contract
// (labels are untouched by the caller).
Tensor augment(const Tensor& batch, const AugmentConfig& cfg, Rng& rng);

// Epoch-complete index batches. drop_last removes a trailing partial batch
// (pretraining needs N >= 2 per batch for a meaningful contrast).
std::vector<std::vector<int>> batch_indices(int n, int batch_size, bool shuffle, bool drop_last,
                                            Rng& rng);

Tensor gather_images(const Dataset& ds, const std::vector<int>& idx);
std::vector<int> gather_labels(const Dataset& ds, const std::vector<int>& idx);

}  // namespace sc
