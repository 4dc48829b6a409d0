#include "vaeatk/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include "vaeatk/rng.hpp"

#if defined(VAEATK_HAVE_ZLIB)
#include <zlib.h>
#endif

namespace vaeatk {

namespace {

constexpr std::uint32_t kImagesMagic = 0x00000803;
constexpr std::uint32_t kLabelsMagic = 0x00000801;

std::vector<unsigned char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open file: " + path);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  return bytes;
}

bool is_gzip(const std::vector<unsigned char>& b) {
  return b.size() >= 2 && b[0] == 0x1f && b[1] == 0x8b;
}

std::vector<unsigned char> gunzip(const std::vector<unsigned char>& in, const std::string& path) {
#if defined(VAEATK_HAVE_ZLIB)
  z_stream zs{};
  if (inflateInit2(&zs, 16 + MAX_WBITS) != Z_OK) {
    throw IoError("zlib init failed for " + path);
  }
  std::vector<unsigned char> out;
  out.reserve(in.size() * 4);
  std::vector<unsigned char> buf(1 << 16);
  zs.next_in = const_cast<unsigned char*>(in.data());
  zs.avail_in = static_cast<uInt>(in.size());
  int rc = Z_OK;
  while (rc != Z_STREAM_END) {
    zs.next_out = buf.data();
    zs.avail_out = static_cast<uInt>(buf.size());
    rc = inflate(&zs, Z_NO_FLUSH);
    if (rc != Z_OK && rc != Z_STREAM_END) {
      inflateEnd(&zs);
      throw IoError("corrupt gzip stream in " + path);
    }
    out.insert(out.end(), buf.data(), buf.data() + (buf.size() - zs.avail_out));
  }
  inflateEnd(&zs);
  return out;
#else
  (void)in;
  throw IoError("gzip-compressed file but zlib support is unavailable: " + path);
#endif
}

std::uint32_t read_be32(const std::vector<unsigned char>& b, std::size_t off,
                        const std::string& path) {
  if (off + 4 > b.size()) throw IoError("truncated IDX header in " + path);
  return (static_cast<std::uint32_t>(b[off]) << 24) | (static_cast<std::uint32_t>(b[off + 1]) << 16) |
         (static_cast<std::uint32_t>(b[off + 2]) << 8) | static_cast<std::uint32_t>(b[off + 3]);
}

std::uint64_t fnv1a_bytes(const std::vector<unsigned char>& b) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : b) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string provenance_entry(const std::string& path, const std::vector<unsigned char>& raw) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fnv1a_bytes(raw)));
  return path + "#" + buf;
}

void draw_shape(std::vector<double>& img, std::int64_t hw, int cls, Rng& rng) {
  auto px = [&](std::int64_t r, std::int64_t c) -> double& {
    return img[static_cast<std::size_t>(r * hw + c)];
  };
  std::int64_t cx = 10 + static_cast<std::int64_t>(rng.below(8));
  std::int64_t cy = 10 + static_cast<std::int64_t>(rng.below(8));
  std::int64_t half = 5 + static_cast<std::int64_t>(rng.below(4));
  double shade = 0.7 + 0.3 * rng.uniform();
  switch (cls) {
    case 0:  // filled square
      for (std::int64_t r = std::max<std::int64_t>(0, cy - half);
           r <= std::min(hw - 1, cy + half); ++r) {
        for (std::int64_t c = std::max<std::int64_t>(0, cx - half);
             c <= std::min(hw - 1, cx + half); ++c) {
          px(r, c) = shade;
        }
      }
      break;
    case 1:  // ring
      for (std::int64_t r = 0; r < hw; ++r) {
        for (std::int64_t c = 0; c < hw; ++c) {
          double d = std::sqrt(static_cast<double>((r - cy) * (r - cy) + (c - cx) * (c - cx)));
          if (std::fabs(d - half) < 1.6) px(r, c) = shade;
        }
      }
      break;
    case 2:  // cross
      for (std::int64_t r = std::max<std::int64_t>(0, cy - half);
           r <= std::min(hw - 1, cy + half); ++r) {
        for (std::int64_t c = std::max<std::int64_t>(0, cx - 1);
             c <= std::min(hw - 1, cx + 1); ++c) {
          px(r, c) = shade;
        }
      }
      for (std::int64_t c = std::max<std::int64_t>(0, cx - half);
           c <= std::min(hw - 1, cx + half); ++c) {
        for (std::int64_t r = std::max<std::int64_t>(0, cy - 1);
             r <= std::min(hw - 1, cy + 1); ++r) {
          px(r, c) = shade;
        }
      }
      break;
    default:  // horizontal stripes
      for (std::int64_t r = std::max<std::int64_t>(0, cy - half);
           r <= std::min(hw - 1, cy + half); ++r) {
        if ((r - cy + half) % 3 < 2) continue;
        for (std::int64_t c = std::max<std::int64_t>(0, cx - half);
             c <= std::min(hw - 1, cx + half); ++c) {
          px(r, c) = shade;
        }
      }
      // make stripes denser
      for (std::int64_t r = std::max<std::int64_t>(0, cy - half);
           r <= std::min(hw - 1, cy + half); r += 2) {
        for (std::int64_t c = std::max<std::int64_t>(0, cx - half);
             c <= std::min(hw - 1, cx + half); ++c) {
          px(r, c) = shade;
        }
      }
      break;
  }
}

void draw_blob(std::vector<double>& img, std::int64_t hw, int cls, Rng& rng) {
  // class = quadrant of the bump center
  double base_cx = (cls % 2 == 0) ? 9.0 : 19.0;
  double base_cy = (cls / 2 == 0) ? 9.0 : 19.0;
  double cx = base_cx + rng.uniform(-3.0, 3.0);
  double cy = base_cy + rng.uniform(-3.0, 3.0);
  double sigma = 2.2 + rng.uniform(0.0, 1.6);
  double amp = 0.75 + 0.25 * rng.uniform();
  for (std::int64_t r = 0; r < hw; ++r) {
    for (std::int64_t c = 0; c < hw; ++c) {
      double d2 = (r - cy) * (r - cy) + (c - cx) * (c - cx);
      img[static_cast<std::size_t>(r * hw + c)] = amp * std::exp(-d2 / (2.0 * sigma * sigma));
    }
  }
}

}  // namespace

Tensor DatasetSplit::image(std::int64_t i) const {
  const Shape& s = images.shape();
  if (i < 0 || i >= s[0]) throw ValueError("DatasetSplit: image index out of range");
  std::int64_t stride = s[1] * s[2] * s[3];
  std::vector<double> out(static_cast<std::size_t>(stride));
  std::copy_n(images.data().begin() + i * stride, stride, out.begin());
  return Tensor::from_data({s[1], s[2], s[3]}, std::move(out));
}

int DatasetSplit::num_classes() const {
  int top = -1;
  for (int l : labels) top = std::max(top, l);
  return top + 1;
}

DatasetSplit DatasetSplit::subset(const std::vector<std::int64_t>& rows,
                                  const std::string& tag) const {
  const Shape& s = images.shape();
  std::int64_t stride = s[1] * s[2] * s[3];
  std::vector<double> data(static_cast<std::size_t>(stride) * rows.size());
  std::vector<int> lab(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::int64_t r = rows[i];
    if (r < 0 || r >= s[0]) throw ValueError("subset: row out of range");
    std::copy_n(images.data().begin() + r * stride, stride,
                data.begin() + static_cast<std::int64_t>(i) * stride);
    lab[i] = labels[static_cast<std::size_t>(r)];
  }
  DatasetSplit out;
  out.images = Tensor::from_data({static_cast<std::int64_t>(rows.size()), s[1], s[2], s[3]},
                                 std::move(data));
  out.labels = std::move(lab);
  out.split_tag = tag;
  out.provenance = provenance;
  return out;
}

DatasetSplit load_idx(const std::string& images_path, const std::string& labels_path) {
  std::vector<unsigned char> raw_images = read_file(images_path);
  std::vector<unsigned char> raw_labels = read_file(labels_path);
  std::string prov_images = provenance_entry(images_path, raw_images);
  std::string prov_labels = provenance_entry(labels_path, raw_labels);
  std::vector<unsigned char> ib = is_gzip(raw_images) ? gunzip(raw_images, images_path)
                                                      : std::move(raw_images);
  std::vector<unsigned char> lb = is_gzip(raw_labels) ? gunzip(raw_labels, labels_path)
                                                      : std::move(raw_labels);

  std::uint32_t im = read_be32(ib, 0, images_path);
  if (im != kImagesMagic) {
    char hex[16];
    std::snprintf(hex, sizeof(hex), "0x%08x", im);
    throw IoError("bad IDX image magic " + std::string(hex) + " in " + images_path);
  }
  std::uint32_t lm = read_be32(lb, 0, labels_path);
  if (lm != kLabelsMagic) {
    char hex[16];
    std::snprintf(hex, sizeof(hex), "0x%08x", lm);
    throw IoError("bad IDX label magic " + std::string(hex) + " in " + labels_path);
  }

  std::int64_t n = read_be32(ib, 4, images_path);
  std::int64_t h = read_be32(ib, 8, images_path);
  std::int64_t w = read_be32(ib, 12, images_path);
  std::int64_t nl = read_be32(lb, 4, labels_path);
  if (n != nl) {
    throw IoError("IDX image/label count mismatch: " + std::to_string(n) + " images vs " +
                  std::to_string(nl) + " labels");
  }
  std::size_t need = 16 + static_cast<std::size_t>(n * h * w);
  if (ib.size() < need) throw IoError("truncated IDX image payload in " + images_path);
  if (lb.size() < 8 + static_cast<std::size_t>(n)) {
    throw IoError("truncated IDX label payload in " + labels_path);
  }

  std::vector<double> pixels(static_cast<std::size_t>(n * h * w));
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    pixels[i] = static_cast<double>(ib[16 + i]) / 255.0;
  }
  std::vector<int> labels(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) labels[static_cast<std::size_t>(i)] = lb[8 + i];

  DatasetSplit out;
  out.images = Tensor::from_data({n, 1, h, w}, std::move(pixels));
  out.labels = std::move(labels);
  out.split_tag = "train";
  out.provenance = {prov_images, prov_labels};
  return out;
}

DatasetSplit make_synthetic(const std::string& kind, std::int64_t n, std::uint64_t seed) {
  if (n < 1) throw ValueError("make_synthetic: n must be >= 1");
  bool shapes = kind == "shapes";
  bool blobs = kind == "blobs";
  if (!shapes && !blobs) {
    throw ValueError("make_synthetic: unknown dataset kind '" + kind +
                     "' (expected 'shapes' or 'blobs')");
  }
  constexpr std::int64_t hw = 28;
  constexpr int classes = 4;
  std::vector<double> data(static_cast<std::size_t>(n * hw * hw), 0.0);
  std::vector<int> labels(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    int cls = static_cast<int>(i % classes);
    labels[static_cast<std::size_t>(i)] = cls;
    Rng rng(derive_seed(seed, "synthetic-item", static_cast<std::uint64_t>(i)));
    std::vector<double> img(static_cast<std::size_t>(hw * hw), 0.0);
    if (shapes) {
      draw_shape(img, hw, cls, rng);
    } else {
      draw_blob(img, hw, cls, rng);
    }
    // mild background noise, clamped to the pixel range
    for (double& v : img) {
      v += 0.02 * rng.uniform();
      v = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
    }
    std::copy(img.begin(), img.end(), data.begin() + i * hw * hw);
  }
  DatasetSplit out;
  out.images = Tensor::from_data({n, 1, hw, hw}, std::move(data));
  out.labels = std::move(labels);
  out.split_tag = "train";
  out.provenance = {"synthetic:" + kind + "#seed=" + std::to_string(seed)};
  return out;
}

namespace {

// Stratified draw of `count` ids, per-class counts differing by at most 1.
// `excluded` ids are not eligible.
std::vector<int> stratified_sample(const DatasetSplit& split, int count, Rng& rng,
                                   const std::vector<int>& excluded,
                                   std::map<int, int>* counts_out) {
  std::map<int, std::vector<int>> by_class;
  std::vector<char> banned(static_cast<std::size_t>(split.size()), 0);
  for (int id : excluded) banned[static_cast<std::size_t>(id)] = 1;
  for (std::int64_t i = 0; i < split.size(); ++i) {
    if (!banned[static_cast<std::size_t>(i)]) {
      by_class[split.labels[static_cast<std::size_t>(i)]].push_back(static_cast<int>(i));
    }
  }
  if (by_class.empty()) throw ValueError("select_pairs: no eligible points");

  std::vector<int> classes;
  for (auto& [cls, members] : by_class) classes.push_back(cls);
  int k = static_cast<int>(classes.size());
  int base = count / k;
  int extra = count % k;
  std::vector<int> bonus_order = classes;
  rng.shuffle(bonus_order);

  std::map<int, int> want;
  for (int cls : classes) want[cls] = base;
  for (int i = 0; i < extra; ++i) want[bonus_order[static_cast<std::size_t>(i)]] += 1;

  std::vector<int> picked;
  for (int cls : classes) {
    auto& members = by_class[cls];
    int need = want[cls];
    if (static_cast<int>(members.size()) < need) {
      throw ValueError("select_pairs: class " + std::to_string(cls) + " has only " +
                       std::to_string(members.size()) + " eligible points, need " +
                       std::to_string(need));
    }
    rng.shuffle(members);
    picked.insert(picked.end(), members.begin(), members.begin() + need);
    if (counts_out && need > 0) (*counts_out)[cls] = need;
  }
  return picked;
}

}  // namespace

std::vector<AttackItem> PairSelection::items() const {
  std::vector<AttackItem> out;
  if (inits_per_reference > 0) {
    for (int r : reference_ids) {
      for (int i = 0; i < inits_per_reference; ++i) out.push_back({r, -1, i});
    }
  } else {
    for (int r : reference_ids) {
      for (int t : target_ids) out.push_back({r, t, -1});
    }
  }
  return out;
}

PairSelection select_pairs_supervised(const DatasetSplit& split, int n_refs, int n_targets,
                                      std::uint64_t seed) {
  if (n_refs < 0 || n_targets < 0) throw ValueError("select_pairs: negative counts");
  PairSelection sel;
  if (n_refs == 0) return sel;
  Rng ref_rng(derive_seed(seed, "select-refs"));
  std::vector<int> refs = stratified_sample(split, n_refs, ref_rng, {}, &sel.per_class_counts);
  sel.reference_ids = refs;
  if (n_targets > 0) {
    Rng tgt_rng(derive_seed(seed, "select-targets"));
    sel.target_ids = stratified_sample(split, n_targets, tgt_rng, refs, nullptr);
  }
  return sel;
}

PairSelection select_pairs_unsupervised(const DatasetSplit& split, int n_refs, int inits,
                                        std::uint64_t seed) {
  if (inits < 1) throw ValueError("select_pairs: inits must be >= 1");
  PairSelection sel = select_pairs_supervised(split, n_refs, 0, seed);
  sel.inits_per_reference = inits;
  return sel;
}

}  // namespace vaeatk
