#pragma once

#include <string>
#include <vector>

#include "sc/tensor.hpp"

namespace sc {

// Plain (ASCII) netpbm images, P2 grayscale / P3 color, maxval 255.
struct PnmImage {
  int width = 0;
  int height = 0;
  int channels = 1;                 // 1 => P2, 3 => P3
  std::vector<uint8_t> pixels;      // row-major, interleaved
};

void write_pnm(const std::string& path, const PnmImage& img);
PnmImage read_pnm(const std::string& path);

// Tiles first-layer kernels [kH,kW,Cin,Cout] into a near-square grid
// (ceil(sqrt(Cout)) columns), each filter min-max normalized; a constant
// filter renders mid-gray and unused cells stay black. Cin must be 1 or 3.
PnmImage filter_grid(const Tensor& weight);
void export_filter_grid(const Tensor& weight, const std::string& path);

}  // namespace sc
