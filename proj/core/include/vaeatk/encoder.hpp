#pragma once

#include "vaeatk/gauss.hpp"
#include "vaeatk/tensor.hpp"

namespace vaeatk {

// Anything that maps an input tensor to a variational posterior. Attacks
// are written against this surface so they work on trained models and on
// analytic test doubles alike.
class Encoder {
 public:
  virtual ~Encoder() = default;
  virtual DiagGaussian encode(const Tensor& x) const = 0;
  virtual Shape input_shape() const = 0;
  virtual std::int64_t latent_dim() const = 0;
};

}  // namespace vaeatk
