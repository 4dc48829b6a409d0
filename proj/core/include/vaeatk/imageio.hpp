#pragma once

#include <string>
#include <vector>

#include "vaeatk/tensor.hpp"

namespace vaeatk {

struct GridLayout {
  int rows = 1;
  int cols = 1;
};

// Writes images (all [H,W] or [1,H,W], or all [3,H,W]) into one
// portable-graymap (P5) / portable-pixmap (P6) grid with 1-pixel
// separators, row-major. Bytes are deterministic for fixed input. Convert
// with any image tool, e.g. `magick grid.pgm grid.png`.
void emit_grid(const std::vector<Tensor>& images, const GridLayout& layout,
               const std::string& path);

void write_pgm(const Tensor& image, const std::string& path);

struct ScatterPoint {
  double x = 0.0, y = 0.0;
  int cls = 0;
  // 'd' dataset, 'r' reference, 't' target, 'a' adversarial
  char kind = 'd';
};

// Color scatter of 2-D latent positions; dataset points are small
// class-colored dots, reference/target/adversarial markers are larger
// blue/green/red squares.
void write_scatter_ppm(const std::vector<ScatterPoint>& points, const std::string& path,
                       int canvas = 420);

}  // namespace vaeatk
