#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include "vaeatk/ops.hpp"
#include "vaeatk/rng.hpp"
#include "vaeatk/tensor.hpp"

namespace vaeatk {

enum class LayerKind { Conv, TConv, Affine, Relu, Sigmoid, Flatten, Reshape };

// One layer of an encoder/decoder stack. Chains of these must be
// shape-consistent; chain_out_shape validates a whole stack.
struct LayerSpec {
  LayerKind kind = LayerKind::Relu;
  std::int64_t in_ch = 0, out_ch = 0;  // channels (conv) or widths (affine)
  int kernel = 0, stride = 1, pad = 0;
  std::array<std::int64_t, 3> target = {0, 0, 0};  // reshape target [C,H,W]

  static LayerSpec conv(std::int64_t in_ch, std::int64_t out_ch, int kernel, int stride, int pad);
  static LayerSpec tconv(std::int64_t in_ch, std::int64_t out_ch, int kernel, int stride, int pad);
  static LayerSpec affine(std::int64_t in_width, std::int64_t out_width);
  static LayerSpec relu();
  static LayerSpec sigmoid();
  static LayerSpec flatten();
  static LayerSpec reshape(std::int64_t c, std::int64_t h, std::int64_t w);

  bool has_params() const {
    return kind == LayerKind::Conv || kind == LayerKind::TConv || kind == LayerKind::Affine;
  }
};

// Output shape of one layer / a whole chain. Rank conventions: vectors are
// rank 1 ([F]) or rank 2 ([N,F]); images rank 3 ([C,H,W]) or rank 4
// ([N,C,H,W]). Throws ShapeError on any inconsistency.
Shape layer_out_shape(const LayerSpec& spec, const Shape& in);
Shape chain_out_shape(const Shape& in, std::span<const LayerSpec> chain);

// Ordered, named parameter container. Iteration order is insertion order,
// which keeps optimizers and checkpoints deterministic.
class ParamStore {
 public:
  Tensor& add(const std::string& name, Tensor t);
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  bool has(const std::string& name) const;
  const std::vector<std::pair<std::string, Tensor>>& items() const { return items_; }
  std::vector<std::pair<std::string, Tensor>>& items_mut() { return items_; }
  std::int64_t total_size() const;

 private:
  std::vector<std::pair<std::string, Tensor>> items_;
};

// Registers weight/bias tensors for each parameterized layer of `chain`
// under names "<prefix>.<index>.w|b", initialized uniform in
// +-sqrt(1/fan_in) from `rng`.
void init_chain_params(const std::string& prefix, std::span<const LayerSpec> chain,
                       ParamStore& params, Rng& rng);

// Applies the chain to x using parameters registered under `prefix`.
Tensor run_chain(const Tensor& x, std::span<const LayerSpec> chain, const ParamStore& params,
                 const std::string& prefix);

}  // namespace vaeatk
