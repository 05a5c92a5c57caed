#include "sc/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "sc/error.hpp"

namespace sc {

void write_pnm(const std::string& path, const PnmImage& img) {
  if (img.channels != 1 && img.channels != 3)
    throw Error("write_pnm: channels must be 1 or 3, got " + std::to_string(img.channels));
  if (static_cast<int64_t>(img.pixels.size()) !=
      static_cast<int64_t>(img.width) * img.height * img.channels)
    throw ShapeError("write_pnm: pixel buffer does not match dimensions");
  std::ofstream out(path);
  if (!out) throw DataError("write_pnm: cannot open '" + path + "'");
  out << (img.channels == 1 ? "P2" : "P3") << "\n" << img.width << " " << img.height << "\n255\n";
  int per_line = 0;
  for (size_t i = 0; i < img.pixels.size(); ++i) {
    out << static_cast<int>(img.pixels[i]);
    if (++per_line == 12) {  // keep lines under the 70-char netpbm limit
      out << "\n";
      per_line = 0;
    } else {
      out << " ";
    }
  }
  out << "\n";
  if (!out) throw DataError("write_pnm: write failed on '" + path + "'");
}

PnmImage read_pnm(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("read_pnm: cannot open '" + path + "'");
  std::string magic;
  in >> magic;
  PnmImage img;
  if (magic == "P2")
    img.channels = 1;
  else if (magic == "P3")
    img.channels = 3;
  else
    throw DataError("read_pnm: '" + path + "' has magic '" + magic + "', want P2 or P3");
  int maxval = 0;
  in >> img.width >> img.height >> maxval;
  if (!in || img.width <= 0 || img.height <= 0 || maxval != 255)
    throw DataError("read_pnm: '" + path + "' has a malformed header");
  const int64_t n = static_cast<int64_t>(img.width) * img.height * img.channels;
  img.pixels.resize(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    int v;
    in >> v;
    if (!in || v < 0 || v > 255)
      throw DataError("read_pnm: '" + path + "' has a bad sample at index " + std::to_string(i));
    img.pixels[static_cast<size_t>(i)] = static_cast<uint8_t>(v);
  }
  return img;
}

PnmImage filter_grid(const Tensor& weight) {
  if (weight.rank() != 4)
    throw ShapeError("filter_grid: weight must be [kH,kW,Cin,Cout], got " +
                     shape_str(weight.shape()));
  const int kH = weight.dim(0), kW = weight.dim(1), Cin = weight.dim(2), Cout = weight.dim(3);
  if (Cin != 1 && Cin != 3)
    throw Error("filter_grid: first-layer input channels must be 1 or 3, got " +
                std::to_string(Cin));

  const int cols = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(Cout))));
  const int rows = (Cout + cols - 1) / cols;

  PnmImage img;
  img.channels = Cin;
  img.width = cols * kW;
  img.height = rows * kH;
  img.pixels.assign(static_cast<size_t>(img.width) * img.height * Cin, 0);  // blank cells black

  const float* w = weight.data();
  for (int f = 0; f < Cout; ++f) {
    float lo = w[f], hi = w[f];
    for (int i = 0; i < kH; ++i)
      for (int j = 0; j < kW; ++j)
        for (int c = 0; c < Cin; ++c) {
          const float v = w[((static_cast<int64_t>(i) * kW + j) * Cin + c) * Cout + f];
          lo = std::min(lo, v);
          hi = std::max(hi, v);
        }
    const int gr = f / cols, gc = f % cols;
    for (int i = 0; i < kH; ++i)
      for (int j = 0; j < kW; ++j)
        for (int c = 0; c < Cin; ++c) {
          const float v = w[((static_cast<int64_t>(i) * kW + j) * Cin + c) * Cout + f];
          // min == max (constant filter) renders mid-gray
          const int byte = (hi > lo)
                               ? static_cast<int>(std::lround(255.0 * (v - lo) / (hi - lo)))
                               : 128;
          const int64_t px = (static_cast<int64_t>(gr * kH + i) * img.width + (gc * kW + j)) * Cin + c;
          img.pixels[static_cast<size_t>(px)] = static_cast<uint8_t>(byte);
        }
  }
  return img;
}

void export_filter_grid(const Tensor& weight, const std::string& path) {
  write_pnm(path, filter_grid(weight));
}

}  // namespace sc
