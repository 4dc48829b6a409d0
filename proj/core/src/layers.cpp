#include "vaeatk/layers.hpp"

#include <cmath>

namespace vaeatk {

LayerSpec LayerSpec::conv(std::int64_t in_ch, std::int64_t out_ch, int kernel, int stride,
                          int pad) {
  LayerSpec s;
  s.kind = LayerKind::Conv;
  s.in_ch = in_ch;
  s.out_ch = out_ch;
  s.kernel = kernel;
  s.stride = stride;
  s.pad = pad;
  return s;
}

LayerSpec LayerSpec::tconv(std::int64_t in_ch, std::int64_t out_ch, int kernel, int stride,
                           int pad) {
  LayerSpec s = conv(in_ch, out_ch, kernel, stride, pad);
  s.kind = LayerKind::TConv;
  return s;
}

LayerSpec LayerSpec::affine(std::int64_t in_width, std::int64_t out_width) {
  LayerSpec s;
  s.kind = LayerKind::Affine;
  s.in_ch = in_width;
  s.out_ch = out_width;
  return s;
}

LayerSpec LayerSpec::relu() {
  LayerSpec s;
  s.kind = LayerKind::Relu;
  return s;
}

LayerSpec LayerSpec::sigmoid() {
  LayerSpec s;
  s.kind = LayerKind::Sigmoid;
  return s;
}

LayerSpec LayerSpec::flatten() {
  LayerSpec s;
  s.kind = LayerKind::Flatten;
  return s;
}

LayerSpec LayerSpec::reshape(std::int64_t c, std::int64_t h, std::int64_t w) {
  LayerSpec s;
  s.kind = LayerKind::Reshape;
  s.target = {c, h, w};
  return s;
}

namespace {

bool is_image_rank(const Shape& s) { return s.size() == 3 || s.size() == 4; }
bool is_batched(const Shape& s) { return s.size() == 2 || s.size() == 4; }

std::int64_t conv_out_extent(std::int64_t in, int kernel, int stride, int pad) {
  return (in + 2 * pad - kernel) / stride + 1;
}

std::int64_t tconv_out_extent(std::int64_t in, int kernel, int stride, int pad) {
  return (in - 1) * stride - 2 * pad + kernel;
}

}  // namespace

Shape layer_out_shape(const LayerSpec& spec, const Shape& in) {
  switch (spec.kind) {
    case LayerKind::Conv:
    case LayerKind::TConv: {
      if (!is_image_rank(in)) {
        throw ShapeError("conv layer expects [C,H,W] or [N,C,H,W], got " + shape_str(in));
      }
      bool batched = in.size() == 4;
      std::int64_t c = in[batched ? 1 : 0];
      std::int64_t h = in[batched ? 2 : 1];
      std::int64_t w = in[batched ? 3 : 2];
      if (c != spec.in_ch) {
        throw ShapeError("conv layer expects " + std::to_string(spec.in_ch) + " channels, got " +
                         shape_str(in));
      }
      std::int64_t oh, ow;
      if (spec.kind == LayerKind::Conv) {
        oh = conv_out_extent(h, spec.kernel, spec.stride, spec.pad);
        ow = conv_out_extent(w, spec.kernel, spec.stride, spec.pad);
      } else {
        oh = tconv_out_extent(h, spec.kernel, spec.stride, spec.pad);
        ow = tconv_out_extent(w, spec.kernel, spec.stride, spec.pad);
      }
      if (oh < 1 || ow < 1) {
        throw ShapeError("conv layer produces empty output from " + shape_str(in));
      }
      return batched ? Shape{in[0], spec.out_ch, oh, ow} : Shape{spec.out_ch, oh, ow};
    }
    case LayerKind::Affine: {
      if (in.size() != 1 && in.size() != 2) {
        throw ShapeError("affine layer expects [F] or [N,F], got " + shape_str(in));
      }
      std::int64_t f = in.back();
      if (f != spec.in_ch) {
        throw ShapeError("affine layer expects width " + std::to_string(spec.in_ch) + ", got " +
                         shape_str(in));
      }
      return in.size() == 1 ? Shape{spec.out_ch} : Shape{in[0], spec.out_ch};
    }
    case LayerKind::Relu:
    case LayerKind::Sigmoid:
      return in;
    case LayerKind::Flatten: {
      if (in.size() <= 1) return in;
      if (is_batched(in)) {
        std::int64_t f = 1;
        for (std::size_t i = 1; i < in.size(); ++i) f *= in[i];
        return Shape{in[0], f};
      }
      return Shape{numel(in)};
    }
    case LayerKind::Reshape: {
      std::int64_t want = spec.target[0] * spec.target[1] * spec.target[2];
      if (in.size() == 1) {
        if (in[0] != want) {
          throw ShapeError("reshape layer: " + shape_str(in) + " has wrong element count");
        }
        return Shape{spec.target[0], spec.target[1], spec.target[2]};
      }
      if (in.size() == 2) {
        if (in[1] != want) {
          throw ShapeError("reshape layer: " + shape_str(in) + " has wrong element count");
        }
        return Shape{in[0], spec.target[0], spec.target[1], spec.target[2]};
      }
      throw ShapeError("reshape layer expects a vector input, got " + shape_str(in));
    }
  }
  throw ValueError("unknown layer kind");
}

Shape chain_out_shape(const Shape& in, std::span<const LayerSpec> chain) {
  Shape cur = in;
  for (const LayerSpec& spec : chain) cur = layer_out_shape(spec, cur);
  return cur;
}

Tensor& ParamStore::add(const std::string& name, Tensor t) {
  if (has(name)) throw ValueError("duplicate parameter name: " + name);
  items_.emplace_back(name, std::move(t));
  return items_.back().second;
}

Tensor& ParamStore::at(const std::string& name) {
  for (auto& [n, t] : items_) {
    if (n == name) return t;
  }
  throw ValueError("unknown parameter: " + name);
}

const Tensor& ParamStore::at(const std::string& name) const {
  for (const auto& [n, t] : items_) {
    if (n == name) return t;
  }
  throw ValueError("unknown parameter: " + name);
}

bool ParamStore::has(const std::string& name) const {
  for (const auto& [n, t] : items_) {
    if (n == name) return true;
  }
  return false;
}

std::int64_t ParamStore::total_size() const {
  std::int64_t n = 0;
  for (const auto& [name, t] : items_) n += t.size();
  return n;
}

void init_chain_params(const std::string& prefix, std::span<const LayerSpec> chain,
                       ParamStore& params, Rng& rng) {
  for (std::size_t i = 0; i < chain.size(); ++i) {
    const LayerSpec& spec = chain[i];
    if (!spec.has_params()) continue;
    Shape wshape;
    std::int64_t fan_in = 0;
    switch (spec.kind) {
      case LayerKind::Conv:
        wshape = {spec.out_ch, spec.in_ch, spec.kernel, spec.kernel};
        fan_in = spec.in_ch * spec.kernel * spec.kernel;
        break;
      case LayerKind::TConv:
        wshape = {spec.in_ch, spec.out_ch, spec.kernel, spec.kernel};
        fan_in = spec.in_ch * spec.kernel * spec.kernel;
        break;
      case LayerKind::Affine:
        wshape = {spec.out_ch, spec.in_ch};
        fan_in = spec.in_ch;
        break;
      default:
        break;
    }
    double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::vector<double> w(static_cast<std::size_t>(numel(wshape)));
    rng.fill_uniform(w, -bound, bound);
    std::vector<double> b(static_cast<std::size_t>(spec.out_ch));
    rng.fill_uniform(b, -bound, bound);
    std::string base = prefix + "." + std::to_string(i);
    params.add(base + ".w", Tensor::from_data(wshape, std::move(w), /*requires_grad=*/true));
    params.add(base + ".b",
               Tensor::from_data({spec.out_ch}, std::move(b), /*requires_grad=*/true));
  }
}

Tensor run_chain(const Tensor& x, std::span<const LayerSpec> chain, const ParamStore& params,
                 const std::string& prefix) {
  Tensor cur = x;
  for (std::size_t i = 0; i < chain.size(); ++i) {
    const LayerSpec& spec = chain[i];
    std::string base = prefix + "." + std::to_string(i);
    switch (spec.kind) {
      case LayerKind::Conv:
        cur = conv2d(cur, params.at(base + ".w"), params.at(base + ".b"), spec.stride, spec.pad);
        break;
      case LayerKind::TConv:
        cur = tconv2d(cur, params.at(base + ".w"), params.at(base + ".b"), spec.stride, spec.pad);
        break;
      case LayerKind::Affine:
        cur = affine(cur, params.at(base + ".w"), params.at(base + ".b"));
        break;
      case LayerKind::Relu:
        cur = relu(cur);
        break;
      case LayerKind::Sigmoid:
        cur = sigmoid(cur);
        break;
      case LayerKind::Flatten:
        cur = reshape(cur, layer_out_shape(spec, cur.shape()));
        break;
      case LayerKind::Reshape:
        cur = reshape(cur, layer_out_shape(spec, cur.shape()));
        break;
    }
  }
  return cur;
}

}  // namespace vaeatk
