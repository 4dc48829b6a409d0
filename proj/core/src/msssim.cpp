#include "vaeatk/msssim.hpp"

#include <cmath>

namespace vaeatk {

namespace {

constexpr std::int64_t kMinSide = 4;

struct Plane {
  std::int64_t h = 0, w = 0;
  std::vector<double> v;
  double at(std::int64_t r, std::int64_t c) const { return v[static_cast<std::size_t>(r * w + c)]; }
};

Plane to_plane(const Tensor& t, const char* what) {
  const Shape& s = t.shape();
  Plane p;
  if (s.size() == 2) {
    p.h = s[0];
    p.w = s[1];
  } else if (s.size() == 3 && s[0] == 1) {
    p.h = s[1];
    p.w = s[2];
  } else {
    throw ShapeError(std::string(what) + ": expected [H,W] or [1,H,W], got " + shape_str(s));
  }
  p.v = t.data();
  return p;
}

std::vector<double> gaussian_kernel(int size, double sigma) {
  std::vector<double> k(static_cast<std::size_t>(size));
  double c = (size - 1) / 2.0;
  double acc = 0.0;
  for (int i = 0; i < size; ++i) {
    double d = i - c;
    k[static_cast<std::size_t>(i)] = std::exp(-d * d / (2.0 * sigma * sigma));
    acc += k[static_cast<std::size_t>(i)];
  }
  for (double& x : k) x /= acc;
  return k;
}

// Separable valid-mode filter.
Plane filter_valid(const Plane& in, const std::vector<double>& k) {
  std::int64_t ks = static_cast<std::int64_t>(k.size());
  Plane mid;
  mid.h = in.h;
  mid.w = in.w - ks + 1;
  mid.v.resize(static_cast<std::size_t>(mid.h * mid.w));
  for (std::int64_t r = 0; r < in.h; ++r) {
    for (std::int64_t c = 0; c < mid.w; ++c) {
      double acc = 0.0;
      for (std::int64_t i = 0; i < ks; ++i) acc += k[static_cast<std::size_t>(i)] * in.at(r, c + i);
      mid.v[static_cast<std::size_t>(r * mid.w + c)] = acc;
    }
  }
  Plane out;
  out.h = in.h - ks + 1;
  out.w = mid.w;
  out.v.resize(static_cast<std::size_t>(out.h * out.w));
  for (std::int64_t r = 0; r < out.h; ++r) {
    for (std::int64_t c = 0; c < out.w; ++c) {
      double acc = 0.0;
      for (std::int64_t i = 0; i < ks; ++i) acc += k[static_cast<std::size_t>(i)] * mid.at(r + i, c);
      out.v[static_cast<std::size_t>(r * out.w + c)] = acc;
    }
  }
  return out;
}

Plane elementwise_mul(const Plane& a, const Plane& b) {
  Plane out = a;
  for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] = a.v[i] * b.v[i];
  return out;
}

Plane downsample2(const Plane& in) {
  Plane out;
  out.h = in.h / 2;
  out.w = in.w / 2;
  out.v.resize(static_cast<std::size_t>(out.h * out.w));
  for (std::int64_t r = 0; r < out.h; ++r) {
    for (std::int64_t c = 0; c < out.w; ++c) {
      double acc = in.at(2 * r, 2 * c) + in.at(2 * r, 2 * c + 1) + in.at(2 * r + 1, 2 * c) +
                   in.at(2 * r + 1, 2 * c + 1);
      out.v[static_cast<std::size_t>(r * out.w + c)] = acc * 0.25;
    }
  }
  return out;
}

// Over the valid window map: the mean contrast/structure term and the
// mean full per-window SSIM value (luminance times contrast/structure).
void ssim_terms(const Plane& a, const Plane& b, int window, double sigma, double c1, double c2,
                double& mean_lcs, double& mean_cs) {
  std::vector<double> k = gaussian_kernel(window, sigma);
  Plane mu_a = filter_valid(a, k);
  Plane mu_b = filter_valid(b, k);
  Plane aa = filter_valid(elementwise_mul(a, a), k);
  Plane bb = filter_valid(elementwise_mul(b, b), k);
  Plane ab = filter_valid(elementwise_mul(a, b), k);

  double acc_lcs = 0.0, acc_cs = 0.0;
  for (std::size_t i = 0; i < mu_a.v.size(); ++i) {
    double ma = mu_a.v[i];
    double mb = mu_b.v[i];
    double va = aa.v[i] - ma * ma;
    double vb = bb.v[i] - mb * mb;
    double cov = ab.v[i] - ma * mb;
    double l = (2.0 * ma * mb + c1) / (ma * ma + mb * mb + c1);
    double cs = (2.0 * cov + c2) / (va + vb + c2);
    acc_lcs += l * cs;
    acc_cs += cs;
  }
  double n = static_cast<double>(mu_a.v.size());
  mean_lcs = acc_lcs / n;
  mean_cs = acc_cs / n;
}

}  // namespace

void MsssimConfig::validate() const {
  if (scales < 1) throw ValueError("MsssimConfig: scales must be >= 1");
  if (static_cast<int>(weights.size()) != scales) {
    throw ValueError("MsssimConfig: need one weight per scale");
  }
  double acc = 0.0;
  for (double w : weights) {
    if (!(w > 0.0)) throw ValueError("MsssimConfig: weights must be positive");
    acc += w;
  }
  // canonical published weights are rounded and sum to 1.0001; they are
  // renormalized when combining
  if (std::fabs(acc - 1.0) > 1e-3) {
    throw ValueError("MsssimConfig: weights must sum to 1");
  }
  if (window < 3 || window % 2 == 0) {
    throw ValueError("MsssimConfig: window must be odd and >= 3");
  }
  if (!(window_sigma > 0.0)) throw ValueError("MsssimConfig: window_sigma must be > 0");
}

MsssimConfig MsssimConfig::adapted_for(std::int64_t h, std::int64_t w) const {
  validate();
  std::int64_t side = std::min(h, w);
  int fit = 0;
  while (fit < scales && (side >> fit) >= kMinSide) ++fit;
  if (fit == 0) {
    throw ShapeError("msssim: image " + std::to_string(h) + "x" + std::to_string(w) +
                     " is too small for scale 1 (needs at least " + std::to_string(kMinSide) +
                     " pixels per side)");
  }
  MsssimConfig out = *this;
  out.scales = fit;
  out.weights.assign(weights.begin(), weights.begin() + fit);
  double acc = 0.0;
  for (double x : out.weights) acc += x;
  for (double& x : out.weights) x /= acc;
  return out;
}

MsssimConfig MsssimConfig::single_scale(int window, double sigma) {
  MsssimConfig cfg;
  cfg.scales = 1;
  cfg.weights = {1.0};
  cfg.window = window;
  cfg.window_sigma = sigma;
  return cfg;
}

double msssim(const Tensor& a, const Tensor& b, const MsssimConfig& cfg) {
  cfg.validate();
  if (a.shape() != b.shape()) {
    throw ShapeError("msssim: image shapes differ, " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
  Plane pa = to_plane(a, "msssim");
  Plane pb = to_plane(b, "msssim");

  // Every scale must keep enough pixels for a window.
  std::int64_t side = std::min(pa.h, pa.w);
  for (int s = 0; s < cfg.scales; ++s) {
    if ((side >> s) < kMinSide) {
      throw ShapeError("msssim: scale " + std::to_string(s + 1) + " of " +
                       std::to_string(cfg.scales) + " needs at least " + std::to_string(kMinSide) +
                       " pixels per side, image is " + std::to_string(pa.h) + "x" +
                       std::to_string(pa.w));
    }
  }

  double weight_total = 0.0;
  for (double w : cfg.weights) weight_total += w;

  double score = 1.0;
  for (int s = 0; s < cfg.scales; ++s) {
    std::int64_t cur_side = std::min(pa.h, pa.w);
    int window = static_cast<int>(std::min<std::int64_t>(cfg.window, cur_side));
    if (window % 2 == 0) --window;

    double mean_lcs = 0.0, mean_cs = 0.0;
    ssim_terms(pa, pb, window, cfg.window_sigma, cfg.c1, cfg.c2, mean_lcs, mean_cs);
    // coarsest scale carries the luminance inside the per-window product
    double term = s == cfg.scales - 1 ? mean_lcs : mean_cs;
    if (term < 0.0) term = 0.0;
    score *= std::pow(term, cfg.weights[static_cast<std::size_t>(s)] / weight_total);
    if (s != cfg.scales - 1) {
      pa = downsample2(pa);
      pb = downsample2(pb);
    }
  }
  return score;
}

}  // namespace vaeatk
