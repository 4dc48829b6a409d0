#pragma once

#include <cstdint>
#include <vector>

#include "vaeatk/tensor.hpp"

namespace vaeatk {

// Multi-scale structural similarity on [0,1] grayscale images.
// Contrast/structure terms are averaged at every scale, luminance only at
// the coarsest, and the terms combine as a weighted geometric mean with
// negative factors floored at zero, so results stay in [0,1]. Images
// shrink by 2x2 mean pooling between scales; the Gaussian window caps at
// the current image side (odd), and the coarsest scale must keep at least
// 4 pixels per side.
struct MsssimConfig {
  int scales = 5;
  std::vector<double> weights = {0.0448, 0.2856, 0.3001, 0.2363, 0.1333};
  int window = 11;
  double window_sigma = 1.5;
  double c1 = 0.01 * 0.01;  // stability constants on unit dynamic range
  double c2 = 0.03 * 0.03;

  void validate() const;

  // Largest prefix of the configured scales that fits h x w images,
  // weights renormalized. 28x28 with the defaults yields 3 scales.
  MsssimConfig adapted_for(std::int64_t h, std::int64_t w) const;

  static MsssimConfig single_scale(int window = 11, double sigma = 1.5);
};

double msssim(const Tensor& a, const Tensor& b, const MsssimConfig& cfg);

}  // namespace vaeatk
