#include <algorithm>
#include <utility>

#include "vaeatk/ops.hpp"

namespace vaeatk {

namespace {

struct ConvDims {
  std::int64_t n, c, h, w;      // input
  std::int64_t oc, kh, kw;      // kernel
  std::int64_t oh, ow;          // output
  int stride, pad;
  bool batched;                 // rank-4 input
};

// Valid output range for one kernel offset: positions `o` with
// 0 <= o*stride - pad + k < limit. Truncating division rounds toward
// zero, so a negative numerator needs the explicit empty range.
inline std::pair<std::int64_t, std::int64_t> out_range(std::int64_t limit, std::int64_t out_size,
                                                       int stride, int pad, std::int64_t k) {
  std::int64_t lo = 0;
  std::int64_t shift = pad - k;
  if (shift > 0) lo = (shift + stride - 1) / stride;
  std::int64_t num = limit - 1 + shift;
  std::int64_t hi = num < 0 ? -1 : std::min(out_size - 1, num / stride);
  return {lo, hi};
}

ConvDims make_conv_dims(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad,
                        bool transposed, const char* op) {
  const Shape& sx = x.shape();
  const Shape& sw = w.shape();
  const Shape& sb = b.shape();
  if (sx.size() != 3 && sx.size() != 4) {
    throw ShapeError(std::string(op) + ": input must be [C,H,W] or [N,C,H,W], got " +
                     shape_str(sx));
  }
  if (sw.size() != 4) {
    throw ShapeError(std::string(op) + ": kernel must be rank 4, got " + shape_str(sw));
  }
  if (stride < 1 || pad < 0) {
    throw ValueError(std::string(op) + ": stride must be >= 1 and padding >= 0");
  }
  ConvDims d{};
  d.batched = sx.size() == 4;
  d.n = d.batched ? sx[0] : 1;
  d.c = sx[d.batched ? 1 : 0];
  d.h = sx[d.batched ? 2 : 1];
  d.w = sx[d.batched ? 3 : 2];
  d.stride = stride;
  d.pad = pad;
  if (transposed) {
    // kernel [C, OC, KH, KW]
    if (sw[0] != d.c) {
      throw ShapeError(std::string(op) + ": kernel " + shape_str(sw) +
                       " does not match input channels of " + shape_str(sx));
    }
    d.oc = sw[1];
    d.kh = sw[2];
    d.kw = sw[3];
    d.oh = (d.h - 1) * stride - 2 * pad + d.kh;
    d.ow = (d.w - 1) * stride - 2 * pad + d.kw;
  } else {
    // kernel [OC, C, KH, KW]
    if (sw[1] != d.c) {
      throw ShapeError(std::string(op) + ": kernel " + shape_str(sw) +
                       " does not match input channels of " + shape_str(sx));
    }
    d.oc = sw[0];
    d.kh = sw[2];
    d.kw = sw[3];
    d.oh = (d.h + 2 * pad - d.kh) / stride + 1;
    d.ow = (d.w + 2 * pad - d.kw) / stride + 1;
    if (d.h + 2 * pad < d.kh || d.w + 2 * pad < d.kw) d.oh = 0;
  }
  if (sb.size() != 1 || sb[0] != d.oc) {
    throw ShapeError(std::string(op) + ": bias " + shape_str(sb) + " must be [" +
                     std::to_string(d.oc) + "]");
  }
  if (d.oh < 1 || d.ow < 1) {
    throw ShapeError(std::string(op) + ": input " + shape_str(sx) + " with kernel " +
                     shape_str(sw) + ", stride " + std::to_string(stride) + ", pad " +
                     std::to_string(pad) + " yields an empty output");
  }
  return d;
}

Shape conv_out_shape(const ConvDims& d) {
  return d.batched ? Shape{d.n, d.oc, d.oh, d.ow} : Shape{d.oc, d.oh, d.ow};
}

struct Conv2dNode final : Node {
  Conv2dNode(const Tensor& x, const Tensor& w, const Tensor& b, ConvDims d)
      : Node(conv_out_shape(d), {}, x.requires_grad() || w.requires_grad() || b.requires_grad()),
        d_(d) {
    inputs_ = {x.node(), w.node(), b.node()};
    const double* xv = x.data().data();
    const double* wv = w.data().data();
    const double* bv = b.data().data();
    value_.assign(static_cast<std::size_t>(numel(shape_)), 0.0);
    for (std::int64_t n = 0; n < d_.n; ++n) {
      for (std::int64_t oc = 0; oc < d_.oc; ++oc) {
        double* out = value_.data() + ((n * d_.oc + oc) * d_.oh) * d_.ow;
        double bias = bv[oc];
        for (std::int64_t i = 0; i < d_.oh * d_.ow; ++i) out[i] = bias;
        for (std::int64_t ic = 0; ic < d_.c; ++ic) {
          const double* xp = xv + ((n * d_.c + ic) * d_.h) * d_.w;
          const double* wp = wv + ((oc * d_.c + ic) * d_.kh) * d_.kw;
          for (std::int64_t kh = 0; kh < d_.kh; ++kh) {
            auto [oh_lo, oh_hi] = out_range(d_.h, d_.oh, d_.stride, d_.pad, kh);
            for (std::int64_t kw = 0; kw < d_.kw; ++kw) {
              auto [ow_lo, ow_hi] = out_range(d_.w, d_.ow, d_.stride, d_.pad, kw);
              double wval = wp[kh * d_.kw + kw];
              for (std::int64_t oh = oh_lo; oh <= oh_hi; ++oh) {
                std::int64_t ih = oh * d_.stride - d_.pad + kh;
                std::int64_t xbase = ih * d_.w - d_.pad + kw;
                double* orow = out + oh * d_.ow;
                for (std::int64_t ow = ow_lo; ow <= ow_hi; ++ow) {
                  orow[ow] += wval * xp[xbase + ow * d_.stride];
                }
              }
            }
          }
        }
      }
    }
  }

  void backprop(const std::vector<double>& g, GradBuffers& grads) const override {
    const double* xv = inputs_[0]->value().data();
    const double* wv = inputs_[1]->value().data();
    if (inputs_[0]->requires_grad()) {
      double* dx = grads.accum(inputs_[0].get()).data();
      for (std::int64_t n = 0; n < d_.n; ++n) {
        for (std::int64_t oc = 0; oc < d_.oc; ++oc) {
          const double* gp = g.data() + ((n * d_.oc + oc) * d_.oh) * d_.ow;
          for (std::int64_t ic = 0; ic < d_.c; ++ic) {
            double* dxp = dx + ((n * d_.c + ic) * d_.h) * d_.w;
            const double* wp = wv + ((oc * d_.c + ic) * d_.kh) * d_.kw;
            for (std::int64_t kh = 0; kh < d_.kh; ++kh) {
              auto [oh_lo, oh_hi] = out_range(d_.h, d_.oh, d_.stride, d_.pad, kh);
              for (std::int64_t kw = 0; kw < d_.kw; ++kw) {
                auto [ow_lo, ow_hi] = out_range(d_.w, d_.ow, d_.stride, d_.pad, kw);
                double wval = wp[kh * d_.kw + kw];
                for (std::int64_t oh = oh_lo; oh <= oh_hi; ++oh) {
                  std::int64_t ih = oh * d_.stride - d_.pad + kh;
                  std::int64_t xbase = ih * d_.w - d_.pad + kw;
                  const double* grow = gp + oh * d_.ow;
                  for (std::int64_t ow = ow_lo; ow <= ow_hi; ++ow) {
                    dxp[xbase + ow * d_.stride] += wval * grow[ow];
                  }
                }
              }
            }
          }
        }
      }
    }
    if (inputs_[1]->requires_grad()) {
      double* dw = grads.accum(inputs_[1].get()).data();
      for (std::int64_t n = 0; n < d_.n; ++n) {
        for (std::int64_t oc = 0; oc < d_.oc; ++oc) {
          const double* gp = g.data() + ((n * d_.oc + oc) * d_.oh) * d_.ow;
          for (std::int64_t ic = 0; ic < d_.c; ++ic) {
            const double* xp = xv + ((n * d_.c + ic) * d_.h) * d_.w;
            double* dwp = dw + ((oc * d_.c + ic) * d_.kh) * d_.kw;
            for (std::int64_t kh = 0; kh < d_.kh; ++kh) {
              auto [oh_lo, oh_hi] = out_range(d_.h, d_.oh, d_.stride, d_.pad, kh);
              for (std::int64_t kw = 0; kw < d_.kw; ++kw) {
                auto [ow_lo, ow_hi] = out_range(d_.w, d_.ow, d_.stride, d_.pad, kw);
                double acc = 0.0;
                for (std::int64_t oh = oh_lo; oh <= oh_hi; ++oh) {
                  std::int64_t ih = oh * d_.stride - d_.pad + kh;
                  std::int64_t xbase = ih * d_.w - d_.pad + kw;
                  const double* grow = gp + oh * d_.ow;
                  for (std::int64_t ow = ow_lo; ow <= ow_hi; ++ow) {
                    acc += xp[xbase + ow * d_.stride] * grow[ow];
                  }
                }
                dwp[kh * d_.kw + kw] += acc;
              }
            }
          }
        }
      }
    }
    if (inputs_[2]->requires_grad()) {
      double* db = grads.accum(inputs_[2].get()).data();
      for (std::int64_t n = 0; n < d_.n; ++n) {
        for (std::int64_t oc = 0; oc < d_.oc; ++oc) {
          const double* gp = g.data() + ((n * d_.oc + oc) * d_.oh) * d_.ow;
          double acc = 0.0;
          for (std::int64_t i = 0; i < d_.oh * d_.ow; ++i) acc += gp[i];
          db[oc] += acc;
        }
      }
    }
  }
  const char* op_name() const override { return "conv2d"; }
  ConvDims d_;
};

struct TConv2dNode final : Node {
  TConv2dNode(const Tensor& x, const Tensor& w, const Tensor& b, ConvDims d)
      : Node(conv_out_shape(d), {}, x.requires_grad() || w.requires_grad() || b.requires_grad()),
        d_(d) {
    inputs_ = {x.node(), w.node(), b.node()};
    const double* xv = x.data().data();
    const double* wv = w.data().data();
    const double* bv = b.data().data();
    value_.assign(static_cast<std::size_t>(numel(shape_)), 0.0);
    for (std::int64_t n = 0; n < d_.n; ++n) {
      for (std::int64_t oc = 0; oc < d_.oc; ++oc) {
        double* out = value_.data() + ((n * d_.oc + oc) * d_.oh) * d_.ow;
        double bias = bv[oc];
        for (std::int64_t i = 0; i < d_.oh * d_.ow; ++i) out[i] = bias;
        for (std::int64_t ic = 0; ic < d_.c; ++ic) {
          const double* xp = xv + ((n * d_.c + ic) * d_.h) * d_.w;
          const double* wp = wv + ((ic * d_.oc + oc) * d_.kh) * d_.kw;
          for (std::int64_t kh = 0; kh < d_.kh; ++kh) {
            auto [ih_lo, ih_hi] = out_range(d_.oh, d_.h, d_.stride, d_.pad, kh);
            for (std::int64_t kw = 0; kw < d_.kw; ++kw) {
              auto [iw_lo, iw_hi] = out_range(d_.ow, d_.w, d_.stride, d_.pad, kw);
              double wval = wp[kh * d_.kw + kw];
              for (std::int64_t ih = ih_lo; ih <= ih_hi; ++ih) {
                std::int64_t oh = ih * d_.stride - d_.pad + kh;
                std::int64_t obase = oh * d_.ow - d_.pad + kw;
                const double* xrow = xp + ih * d_.w;
                for (std::int64_t iw = iw_lo; iw <= iw_hi; ++iw) {
                  out[obase + iw * d_.stride] += wval * xrow[iw];
                }
              }
            }
          }
        }
      }
    }
  }

  void backprop(const std::vector<double>& g, GradBuffers& grads) const override {
    const double* xv = inputs_[0]->value().data();
    const double* wv = inputs_[1]->value().data();
    if (inputs_[0]->requires_grad()) {
      double* dx = grads.accum(inputs_[0].get()).data();
      for (std::int64_t n = 0; n < d_.n; ++n) {
        for (std::int64_t oc = 0; oc < d_.oc; ++oc) {
          const double* gp = g.data() + ((n * d_.oc + oc) * d_.oh) * d_.ow;
          for (std::int64_t ic = 0; ic < d_.c; ++ic) {
            double* dxp = dx + ((n * d_.c + ic) * d_.h) * d_.w;
            const double* wp = wv + ((ic * d_.oc + oc) * d_.kh) * d_.kw;
            for (std::int64_t kh = 0; kh < d_.kh; ++kh) {
              auto [ih_lo, ih_hi] = out_range(d_.oh, d_.h, d_.stride, d_.pad, kh);
              for (std::int64_t kw = 0; kw < d_.kw; ++kw) {
                auto [iw_lo, iw_hi] = out_range(d_.ow, d_.w, d_.stride, d_.pad, kw);
                double wval = wp[kh * d_.kw + kw];
                for (std::int64_t ih = ih_lo; ih <= ih_hi; ++ih) {
                  std::int64_t oh = ih * d_.stride - d_.pad + kh;
                  std::int64_t obase = oh * d_.ow - d_.pad + kw;
                  double* dxrow = dxp + ih * d_.w;
                  for (std::int64_t iw = iw_lo; iw <= iw_hi; ++iw) {
                    dxrow[iw] += wval * gp[obase + iw * d_.stride];
                  }
                }
              }
            }
          }
        }
      }
    }
    if (inputs_[1]->requires_grad()) {
      double* dw = grads.accum(inputs_[1].get()).data();
      for (std::int64_t n = 0; n < d_.n; ++n) {
        for (std::int64_t oc = 0; oc < d_.oc; ++oc) {
          const double* gp = g.data() + ((n * d_.oc + oc) * d_.oh) * d_.ow;
          for (std::int64_t ic = 0; ic < d_.c; ++ic) {
            const double* xp = xv + ((n * d_.c + ic) * d_.h) * d_.w;
            double* dwp = dw + ((ic * d_.oc + oc) * d_.kh) * d_.kw;
            for (std::int64_t kh = 0; kh < d_.kh; ++kh) {
              auto [ih_lo, ih_hi] = out_range(d_.oh, d_.h, d_.stride, d_.pad, kh);
              for (std::int64_t kw = 0; kw < d_.kw; ++kw) {
                auto [iw_lo, iw_hi] = out_range(d_.ow, d_.w, d_.stride, d_.pad, kw);
                double acc = 0.0;
                for (std::int64_t ih = ih_lo; ih <= ih_hi; ++ih) {
                  std::int64_t oh = ih * d_.stride - d_.pad + kh;
                  std::int64_t obase = oh * d_.ow - d_.pad + kw;
                  const double* xrow = xp + ih * d_.w;
                  for (std::int64_t iw = iw_lo; iw <= iw_hi; ++iw) {
                    acc += xrow[iw] * gp[obase + iw * d_.stride];
                  }
                }
                dwp[kh * d_.kw + kw] += acc;
              }
            }
          }
        }
      }
    }
    if (inputs_[2]->requires_grad()) {
      double* db = grads.accum(inputs_[2].get()).data();
      for (std::int64_t n = 0; n < d_.n; ++n) {
        for (std::int64_t oc = 0; oc < d_.oc; ++oc) {
          const double* gp = g.data() + ((n * d_.oc + oc) * d_.oh) * d_.ow;
          double acc = 0.0;
          for (std::int64_t i = 0; i < d_.oh * d_.ow; ++i) acc += gp[i];
          db[oc] += acc;
        }
      }
    }
  }
  const char* op_name() const override { return "tconv2d"; }
  ConvDims d_;
};

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad) {
  ConvDims d = make_conv_dims(x, w, b, stride, pad, false, "conv2d");
  return Tensor(std::make_shared<Conv2dNode>(x, w, b, d));
}

Tensor tconv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad) {
  ConvDims d = make_conv_dims(x, w, b, stride, pad, true, "tconv2d");
  return Tensor(std::make_shared<TConv2dNode>(x, w, b, d));
}

}  // namespace vaeatk
