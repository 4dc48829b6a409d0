#include "vaeatk/imageio.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace vaeatk {

namespace {

constexpr unsigned char kSeparator = 128;

unsigned char quantize(double v) {
  double s = std::lround(std::min(1.0, std::max(0.0, v)) * 255.0);
  return static_cast<unsigned char>(s);
}

struct ImageView {
  std::int64_t channels = 1, h = 0, w = 0;
  const std::vector<double>* data;
};

ImageView view_of(const Tensor& t) {
  const Shape& s = t.shape();
  ImageView v;
  v.data = &t.data();
  if (s.size() == 2) {
    v.h = s[0];
    v.w = s[1];
  } else if (s.size() == 3 && (s[0] == 1 || s[0] == 3)) {
    v.channels = s[0];
    v.h = s[1];
    v.w = s[2];
  } else {
    throw ShapeError("emit_grid: images must be [H,W], [1,H,W] or [3,H,W], got " + shape_str(s));
  }
  return v;
}

void write_binary(const std::string& path, const std::string& header,
                  const std::vector<unsigned char>& pixels) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write image: " + path);
  out << header;
  out.write(reinterpret_cast<const char*>(pixels.data()),
            static_cast<std::streamsize>(pixels.size()));
  if (!out) throw IoError("short write on image: " + path);
}

}  // namespace

void emit_grid(const std::vector<Tensor>& images, const GridLayout& layout,
               const std::string& path) {
  if (images.empty()) throw ValueError("emit_grid: no images");
  if (layout.rows < 1 || layout.cols < 1 ||
      static_cast<std::size_t>(layout.rows) * static_cast<std::size_t>(layout.cols) <
          images.size()) {
    throw ValueError("emit_grid: layout " + std::to_string(layout.rows) + "x" +
                     std::to_string(layout.cols) + " cannot hold " +
                     std::to_string(images.size()) + " images");
  }
  ImageView first = view_of(images[0]);
  for (const Tensor& t : images) {
    ImageView v = view_of(t);
    if (v.h != first.h || v.w != first.w || v.channels != first.channels) {
      throw ShapeError("emit_grid: mixed image shapes, " + shape_str(images[0].shape()) +
                       " vs " + shape_str(t.shape()));
    }
  }

  std::int64_t ch = first.channels;
  std::int64_t gh = layout.rows * first.h + (layout.rows + 1);
  std::int64_t gw = layout.cols * first.w + (layout.cols + 1);
  std::vector<unsigned char> pixels(static_cast<std::size_t>(gh * gw * ch), kSeparator);

  for (std::size_t idx = 0; idx < images.size(); ++idx) {
    std::int64_t row = static_cast<std::int64_t>(idx) / layout.cols;
    std::int64_t col = static_cast<std::int64_t>(idx) % layout.cols;
    std::int64_t top = 1 + row * (first.h + 1);
    std::int64_t left = 1 + col * (first.w + 1);
    ImageView v = view_of(images[idx]);
    for (std::int64_t r = 0; r < v.h; ++r) {
      for (std::int64_t c = 0; c < v.w; ++c) {
        for (std::int64_t p = 0; p < ch; ++p) {
          double value = (*v.data)[static_cast<std::size_t>((p * v.h + r) * v.w + c)];
          pixels[static_cast<std::size_t>(((top + r) * gw + (left + c)) * ch + p)] =
              quantize(value);
        }
      }
    }
  }

  std::string header = (ch == 1 ? "P5\n" : "P6\n") + std::to_string(gw) + " " +
                       std::to_string(gh) + "\n255\n";
  write_binary(path, header, pixels);
}

void write_pgm(const Tensor& image, const std::string& path) {
  emit_grid({image}, {1, 1}, path);
}

void write_scatter_ppm(const std::vector<ScatterPoint>& points, const std::string& path,
                       int canvas) {
  if (points.empty()) throw ValueError("write_scatter_ppm: no points");
  double min_x = points[0].x, max_x = points[0].x;
  double min_y = points[0].y, max_y = points[0].y;
  for (const ScatterPoint& p : points) {
    min_x = std::min(min_x, p.x);
    max_x = std::max(max_x, p.x);
    min_y = std::min(min_y, p.y);
    max_y = std::max(max_y, p.y);
  }
  double span_x = std::max(1e-9, max_x - min_x);
  double span_y = std::max(1e-9, max_y - min_y);
  double margin = 0.06;

  std::int64_t side = canvas;
  std::vector<unsigned char> rgb(static_cast<std::size_t>(side * side * 3), 255);
  auto put = [&](std::int64_t r, std::int64_t c, unsigned char cr, unsigned char cg,
                 unsigned char cb) {
    if (r < 0 || c < 0 || r >= side || c >= side) return;
    std::size_t off = static_cast<std::size_t>((r * side + c) * 3);
    rgb[off] = cr;
    rgb[off + 1] = cg;
    rgb[off + 2] = cb;
  };
  auto to_px = [&](double x, double y, std::int64_t& r, std::int64_t& c) {
    double fx = margin + (1.0 - 2 * margin) * (x - min_x) / span_x;
    double fy = margin + (1.0 - 2 * margin) * (y - min_y) / span_y;
    c = static_cast<std::int64_t>(std::lround(fx * (side - 1)));
    r = static_cast<std::int64_t>(std::lround((1.0 - fy) * (side - 1)));
  };
  // muted per-class palette for dataset points
  const unsigned char palette[6][3] = {{170, 170, 170}, {190, 160, 120}, {150, 170, 200},
                                       {170, 200, 150}, {200, 150, 180}, {150, 200, 200}};

  auto draw = [&](const ScatterPoint& p) {
    std::int64_t r, c;
    to_px(p.x, p.y, r, c);
    int half;
    unsigned char cr, cg, cb;
    switch (p.kind) {
      case 'r': half = 3; cr = 30; cg = 60; cb = 220; break;
      case 't': half = 3; cr = 20; cg = 160; cb = 60; break;
      case 'a': half = 3; cr = 220; cg = 40; cb = 40; break;
      default: {
        const unsigned char* pal = palette[p.cls % 6];
        half = 1;
        cr = pal[0];
        cg = pal[1];
        cb = pal[2];
        break;
      }
    }
    for (std::int64_t dr = -half; dr <= half; ++dr) {
      for (std::int64_t dc = -half; dc <= half; ++dc) {
        put(r + dr, c + dc, cr, cg, cb);
      }
    }
  };
  // dataset points first so markers stay visible
  for (const ScatterPoint& p : points) {
    if (p.kind == 'd') draw(p);
  }
  for (const ScatterPoint& p : points) {
    if (p.kind != 'd') draw(p);
  }

  std::string header = "P6\n" + std::to_string(side) + " " + std::to_string(side) + "\n255\n";
  write_binary(path, header, rgb);
}

}  // namespace vaeatk
