#include "sc/data.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>

#include "sc/error.hpp"

namespace sc {

namespace {

std::vector<uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "'");
  in.seekg(0, std::ios::end);
  const std::streamoff len = in.tellg();
  in.seekg(0, std::ios::beg);
  std::vector<uint8_t> bytes(static_cast<size_t>(len));
  in.read(reinterpret_cast<char*>(bytes.data()), len);
  if (!in) throw DataError("read failed on '" + path + "'");
  return bytes;
}

uint32_t be32(const uint8_t* p) {
  return (static_cast<uint32_t>(p[0]) << 24) | (static_cast<uint32_t>(p[1]) << 16) |
         (static_cast<uint32_t>(p[2]) << 8) | static_cast<uint32_t>(p[3]);
}

Tensor images_from_bytes(const std::vector<uint8_t>& raw, int n, int h, int w, int c) {
  Tensor t = Tensor::zeros({n, h, w, c});
  float* d = t.data();
  const int64_t total = static_cast<int64_t>(n) * h * w * c;
  for (int64_t i = 0; i < total; ++i) d[i] = static_cast<float>(raw[static_cast<size_t>(i)]) / 255.0f;
  return t;
}

}  // namespace

IdxData read_idx(const std::string& path, uint32_t expected_magic) {
  const std::vector<uint8_t> bytes = read_file_bytes(path);
  if (bytes.size() < 4)
    throw DataError("'" + path + "': truncated IDX header (file length " +
                    std::to_string(bytes.size()) + ", offset 0)");
  const uint32_t magic = be32(bytes.data());
  if (magic != expected_magic)
    throw DataError("'" + path + "': IDX magic " + std::to_string(magic) + " at offset 0, want " +
                    std::to_string(expected_magic));
  const int ndims = static_cast<int>(magic & 0xFF);
  const size_t header = 4 + 4 * static_cast<size_t>(ndims);
  if (bytes.size() < header)
    throw DataError("'" + path + "': truncated IDX dimension table at offset 4");

  IdxData out;
  int64_t count = 1;
  for (int i = 0; i < ndims; ++i) {
    const uint32_t d = be32(bytes.data() + 4 + 4 * i);
    out.dims.push_back(static_cast<int>(d));
    count *= d;
  }
  if (bytes.size() != header + static_cast<size_t>(count))
    throw DataError("'" + path + "': file length " + std::to_string(bytes.size()) +
                    " disagrees with header-implied " + std::to_string(header + count) +
                    " (data begins at offset " + std::to_string(header) + ")");
  out.bytes.assign(bytes.begin() + static_cast<std::ptrdiff_t>(header), bytes.end());
  return out;
}

Dataset load_mnist(const std::string& dir, const std::string& split, int limit) {
  std::string img_name, lbl_name;
  if (split == "train") {
    img_name = "train-images-idx3-ubyte";
    lbl_name = "train-labels-idx1-ubyte";
  } else if (split == "test") {
    img_name = "t10k-images-idx3-ubyte";
    lbl_name = "t10k-labels-idx1-ubyte";
  } else {
    throw ConfigError("load_mnist: unknown split '" + split + "' (want train|test)");
  }

  IdxData img = read_idx(dir + "/" + img_name, 2051);
  IdxData lbl = read_idx(dir + "/" + lbl_name, 2049);
  if (img.dims.size() != 3)
    throw DataError("'" + dir + "/" + img_name + "': expected 3 dimensions, got " +
                    std::to_string(img.dims.size()));
  if (lbl.dims.size() != 1)
    throw DataError("'" + dir + "/" + lbl_name + "': expected 1 dimension, got " +
                    std::to_string(lbl.dims.size()));
  if (lbl.dims[0] != img.dims[0])
    throw DataError("'" + dir + "/" + lbl_name + "': " + std::to_string(lbl.dims[0]) +
                    " labels for " + std::to_string(img.dims[0]) + " images");

  int n = img.dims[0];
  const int h = img.dims[1], w = img.dims[2];
  if (limit > 0 && limit < n) n = limit;

  Dataset ds;
  ds.split = split;
  ds.images = images_from_bytes(
      std::vector<uint8_t>(img.bytes.begin(),
                           img.bytes.begin() + static_cast<int64_t>(n) * h * w),
      n, h, w, 1);
  ds.labels.resize(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    const int v = lbl.bytes[static_cast<size_t>(i)];
    if (v > 9)
      throw DataError("'" + dir + "/" + lbl_name + "': label " + std::to_string(v) +
                      " out of [0,9] at index " + std::to_string(i));
    ds.labels[static_cast<size_t>(i)] = v;
  }
  return ds;
}

void decode_cifar_batch(const std::string& path, std::vector<uint8_t>& pixels,
                        std::vector<int>& labels) {
  constexpr int kRecord = 3073;  // 1 label byte + 3 * 1024 channel-planar bytes
  const std::vector<uint8_t> bytes = read_file_bytes(path);
  if (bytes.size() % kRecord != 0)
    throw DataError("'" + path + "': file length " + std::to_string(bytes.size()) +
                    " is not a multiple of the 3073-byte record (first partial record at offset " +
                    std::to_string(bytes.size() - bytes.size() % kRecord) + ")");
  const int n = static_cast<int>(bytes.size() / kRecord);
  for (int r = 0; r < n; ++r) {
    const uint8_t* rec = bytes.data() + static_cast<size_t>(r) * kRecord;
    if (rec[0] > 9)
      throw DataError("'" + path + "': label " + std::to_string(rec[0]) + " out of [0,9] at offset " +
                      std::to_string(static_cast<size_t>(r) * kRecord));
    labels.push_back(rec[0]);
    // channel-planar, each plane row-major 32x32 -> interleave to H,W,C
    for (int i = 0; i < 32; ++i)
      for (int j = 0; j < 32; ++j)
        for (int c = 0; c < 3; ++c)
          pixels.push_back(rec[1 + c * 1024 + i * 32 + j]);
  }
}

Dataset load_cifar10(const std::string& dir, const std::string& split, int limit) {
  std::vector<std::string> files;
  if (split == "train") {
    for (int b = 1; b <= 5; ++b) files.push_back(dir + "/data_batch_" + std::to_string(b) + ".bin");
  } else if (split == "test") {
    files.push_back(dir + "/test_batch.bin");
  } else {
    throw ConfigError("load_cifar10: unknown split '" + split + "' (want train|test)");
  }

  std::vector<uint8_t> pixels;
  std::vector<int> labels;
  for (const auto& f : files) {
    const size_t before = labels.size();
    decode_cifar_batch(f, pixels, labels);
    const size_t got = labels.size() - before;
    if (got != 10000)
      throw DataError("'" + f + "': expected 10000 records per official batch, got " +
                      std::to_string(got));
  }

  int n = static_cast<int>(labels.size());
  if (limit > 0 && limit < n) n = limit;
  pixels.resize(static_cast<size_t>(n) * 32 * 32 * 3);
  labels.resize(static_cast<size_t>(n));

  Dataset ds;
  ds.split = split;
  ds.images = images_from_bytes(pixels, n, 32, 32, 3);
  ds.labels = std::move(labels);
  return ds;
}

Dataset load_stl10(const std::string& dir, Stl10Split split, int limit) {
  constexpr int kSide = 96;
  constexpr int kPlane = kSide * kSide;
  constexpr int kRecord = 3 * kPlane;

  std::string x_name, y_name;
  switch (split) {
    case Stl10Split::unlabeled: x_name = "unlabeled_X.bin"; break;
    case Stl10Split::train: x_name = "train_X.bin"; y_name = "train_y.bin"; break;
    case Stl10Split::test: x_name = "test_X.bin"; y_name = "test_y.bin"; break;
  }

  const std::string x_path = dir + "/" + x_name;
  const std::vector<uint8_t> bytes = read_file_bytes(x_path);
  if (bytes.size() % kRecord != 0)
    throw DataError("'" + x_path + "': file length " + std::to_string(bytes.size()) +
                    " is not a multiple of the " + std::to_string(kRecord) +
                    "-byte record (first partial record at offset " +
                    std::to_string(bytes.size() - bytes.size() % kRecord) + ")");
  int n = static_cast<int>(bytes.size() / kRecord);
  if (limit > 0 && limit < n) n = limit;

  Dataset ds;
  ds.split = x_name;
  ds.images = Tensor::zeros({n, kSide, kSide, 3});
  float* d = ds.images.data();
  for (int r = 0; r < n; ++r) {
    const uint8_t* rec = bytes.data() + static_cast<size_t>(r) * kRecord;
    // planes are column-major: byte index col*96 + row
    for (int i = 0; i < kSide; ++i)
      for (int j = 0; j < kSide; ++j)
        for (int c = 0; c < 3; ++c)
          d[(((static_cast<int64_t>(r) * kSide + i) * kSide + j) * 3) + c] =
              static_cast<float>(rec[c * kPlane + j * kSide + i]) / 255.0f;
  }

  if (!y_name.empty()) {
    const std::string y_path = dir + "/" + y_name;
    const std::vector<uint8_t> ybytes = read_file_bytes(y_path);
    if (static_cast<int>(ybytes.size()) * kRecord != static_cast<int>(bytes.size()))
      throw DataError("'" + y_path + "': " + std::to_string(ybytes.size()) + " labels for " +
                      std::to_string(bytes.size() / kRecord) + " images");
    ds.labels.resize(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
      const int v = ybytes[static_cast<size_t>(i)];  // source labels are 1-indexed
      if (v < 1 || v > 10)
        throw DataError("'" + y_path + "': label " + std::to_string(v) + " out of [1,10] at offset " +
                        std::to_string(i));
      ds.labels[static_cast<size_t>(i)] = v - 1;
    }
  }
  return ds;
}

Dataset concat(const Dataset& a, const Dataset& b) {
  if (a.size() == 0) return b;
  if (b.size() == 0) return a;
  const Shape& sa = a.images.shape();
  const Shape& sb = b.images.shape();
  if (sa.size() != 4 || sb.size() != 4 || sa[1] != sb[1] || sa[2] != sb[2] || sa[3] != sb[3])
    throw ShapeError("concat: image shapes differ, " + shape_str(sa) + " vs " + shape_str(sb));

  Dataset out;
  out.split = a.split + "+" + b.split;
  out.images = Tensor::zeros({sa[0] + sb[0], sa[1], sa[2], sa[3]});
  std::memcpy(out.images.data(), a.images.data(), sizeof(float) * static_cast<size_t>(a.images.numel()));
  std::memcpy(out.images.data() + a.images.numel(), b.images.data(),
              sizeof(float) * static_cast<size_t>(b.images.numel()));
  if (a.labeled() && b.labeled()) {
    out.labels = a.labels;
    out.labels.insert(out.labels.end(), b.labels.begin(), b.labels.end());
  }
  return out;
}

Dataset take(const Dataset& ds, int begin, int end) {
  if (begin < 0 || end > ds.size() || begin >= end)
    throw Error("take: range [" + std::to_string(begin) + "," + std::to_string(end) +
                ") out of dataset size " + std::to_string(ds.size()));
  const Shape& s = ds.images.shape();
  const int64_t per = static_cast<int64_t>(s[1]) * s[2] * s[3];
  Dataset out;
  out.split = ds.split;
  out.images = Tensor::zeros({end - begin, s[1], s[2], s[3]});
  std::memcpy(out.images.data(), ds.images.data() + begin * per,
              sizeof(float) * static_cast<size_t>((end - begin) * per));
  if (ds.labeled())
    out.labels.assign(ds.labels.begin() + begin, ds.labels.begin() + end);
  return out;
}

Dataset strip_labels(Dataset ds) {
  ds.labels.clear();
  return ds;
}

void AugmentConfig::validate(int h, int w) const {
  if (max_translate < 0) throw ConfigError("augment: max_translate must be >= 0");
  if (max_translate >= std::min(h, w) / 2)
    throw ConfigError("augment: max_translate " + std::to_string(max_translate) +
                      " must be < min(H,W)/2 = " + std::to_string(std::min(h, w) / 2));
}

Tensor translate_mirror(const Tensor& batch, const std::vector<ImageOp>& ops) {
  if (batch.rank() != 4) throw ShapeError("translate_mirror: batch must have rank 4");
  const int N = batch.dim(0), H = batch.dim(1), W = batch.dim(2), C = batch.dim(3);
  if (static_cast<int>(ops.size()) != N)
    throw ShapeError("translate_mirror: " + std::to_string(ops.size()) + " ops for " +
                     std::to_string(N) + " images");

  Tensor out = Tensor::zeros(batch.shape());
  const float* src = batch.data();
  float* dst = out.data();
  for (int n = 0; n < N; ++n) {
    const auto& op = ops[static_cast<size_t>(n)];
    // out = mirror(translate(img)): translate content by (dy,dx), then flip
    for (int i = 0; i < H; ++i) {
      const int si = i - op.dy;
      if (si < 0 || si >= H) continue;  // zero padding
      for (int j = 0; j < W; ++j) {
        const int sj = (op.mirror ? (W - 1 - j) : j) - op.dx;
        if (sj < 0 || sj >= W) continue;
        float* cell = dst + (((static_cast<int64_t>(n) * H + i) * W + j) * C);
        const float* scell = src + (((static_cast<int64_t>(n) * H + si) * W + sj) * C);
        for (int c = 0; c < C; ++c) cell[c] = scell[c];
      }
    }
  }
  return out;
}

Tensor augment(const Tensor& batch, const AugmentConfig& cfg, Rng& rng) {
  if (batch.rank() != 4) throw ShapeError("augment: batch must have rank 4");
  const int N = batch.dim(0), H = batch.dim(1), W = batch.dim(2), C = batch.dim(3);
  cfg.validate(H, W);

  const int t = cfg.max_translate;
  std::vector<ImageOp> ops(static_cast<size_t>(N));
  for (int n = 0; n < N; ++n) {
    ImageOp& op = ops[static_cast<size_t>(n)];
    op.dy = t > 0 ? rng.uniform_int(2 * t + 1) - t : 0;
    op.dx = t > 0 ? rng.uniform_int(2 * t + 1) - t : 0;
    op.mirror = cfg.mirror && rng.next_float() < 0.5f;
  }
  return translate_mirror(batch, ops);
}

std::vector<std::vector<int>> batch_indices(int n, int batch_size, bool shuffle, bool drop_last,
                                            Rng& rng) {
  if (batch_size < 1) throw ConfigError("batch_indices: batch_size must be >= 1");
  std::vector<int> order(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
  if (shuffle) {
    for (int i = n - 1; i > 0; --i) {
      const int j = rng.uniform_int(i + 1);
      std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(j)]);
    }
  }
  std::vector<std::vector<int>> batches;
  for (int start = 0; start < n; start += batch_size) {
    const int end = std::min(n, start + batch_size);
    if (drop_last && end - start < batch_size) break;
    batches.emplace_back(order.begin() + start, order.begin() + end);
  }
  return batches;
}

Tensor gather_images(const Dataset& ds, const std::vector<int>& idx) {
  const Shape& s = ds.images.shape();
  const int64_t per = static_cast<int64_t>(s[1]) * s[2] * s[3];
  Tensor out = Tensor::zeros({static_cast<int>(idx.size()), s[1], s[2], s[3]});
  for (size_t k = 0; k < idx.size(); ++k) {
    if (idx[k] < 0 || idx[k] >= ds.size())
      throw Error("gather_images: index " + std::to_string(idx[k]) + " out of dataset size " +
                  std::to_string(ds.size()));
    std::memcpy(out.data() + static_cast<int64_t>(k) * per, ds.images.data() + idx[k] * per,
                sizeof(float) * static_cast<size_t>(per));
  }
  return out;
}

std::vector<int> gather_labels(const Dataset& ds, const std::vector<int>& idx) {
  if (!ds.labeled()) throw Error("gather_labels: dataset '" + ds.split + "' has no labels");
  std::vector<int> out;
  out.reserve(idx.size());
  for (int i : idx) out.push_back(ds.labels[static_cast<size_t>(i)]);
  return out;
}

}  // namespace sc
