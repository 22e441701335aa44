#pragma once

#include <array>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>
#include <zlib.h>

#include "scanrl/geometry.hpp"

namespace scanrl {

struct Rgb {
  std::uint8_t r = 0, g = 0, b = 0;
};

struct Image {
  int width = 0;
  int height = 0;
  std::vector<Rgb> pixels;

  Image() = default;
  Image(int w, int h, Rgb fill = {255, 255, 255}) : width(w), height(h) {
    pixels.assign(static_cast<std::size_t>(w) * h, fill);
  }

  Rgb& at(int x, int y) { return pixels[static_cast<std::size_t>(y) * width + x]; }
  const Rgb& at(int x, int y) const { return pixels[static_cast<std::size_t>(y) * width + x]; }

  void set(int x, int y, Rgb c) {
    if (x >= 0 && x < width && y >= 0 && y < height) at(x, y) = c;
  }

  void fill_rect(int x0, int y0, int x1, int y1, Rgb c) {
    for (int y = std::max(0, y0); y < std::min(height, y1); ++y)
      for (int x = std::max(0, x0); x < std::min(width, x1); ++x) at(x, y) = c;
  }

  void line(int x0, int y0, int x1, int y1, Rgb c) {
    const int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
    const int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
    int err = dx + dy;
    while (true) {
      set(x0, y0, c);
      if (x0 == x1 && y0 == y1) break;
      const int e2 = 2 * err;
      if (e2 >= dy) { err += dy; x0 += sx; }
      if (e2 <= dx) { err += dx; y0 += sy; }
    }
  }
};

namespace detail {

inline void png_chunk(std::ofstream& out, const char type[4], const std::vector<std::uint8_t>& data) {
  auto be32 = [](std::uint32_t v) {
    return std::array<std::uint8_t, 4>{static_cast<std::uint8_t>(v >> 24),
                                       static_cast<std::uint8_t>(v >> 16),
                                       static_cast<std::uint8_t>(v >> 8),
                                       static_cast<std::uint8_t>(v)};
  };
  const auto len = be32(static_cast<std::uint32_t>(data.size()));
  out.write(reinterpret_cast<const char*>(len.data()), 4);
  std::vector<std::uint8_t> body(type, type + 4);
  body.insert(body.end(), data.begin(), data.end());
  out.write(reinterpret_cast<const char*>(body.data()), static_cast<long>(body.size()));
  const auto crc = be32(static_cast<std::uint32_t>(
      ::crc32(0, body.data(), static_cast<uInt>(body.size()))));
  out.write(reinterpret_cast<const char*>(crc.data()), 4);
}

}  // namespace detail

// Minimal RGB8 PNG writer (single IDAT, filter 0). Optional tEXt entries
// carry provenance; nothing time-dependent is emitted, so the bytes are a
// pure function of the pixels and the text.
inline void save_png(const Image& img, const std::string& path,
                     const std::vector<std::pair<std::string, std::string>>& text = {}) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open for writing: " + path);
  static const std::uint8_t magic[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  out.write(reinterpret_cast<const char*>(magic), 8);

  std::vector<std::uint8_t> ihdr(13);
  auto put32 = [&](std::size_t at, std::uint32_t v) {
    ihdr[at] = static_cast<std::uint8_t>(v >> 24);
    ihdr[at + 1] = static_cast<std::uint8_t>(v >> 16);
    ihdr[at + 2] = static_cast<std::uint8_t>(v >> 8);
    ihdr[at + 3] = static_cast<std::uint8_t>(v);
  };
  put32(0, static_cast<std::uint32_t>(img.width));
  put32(4, static_cast<std::uint32_t>(img.height));
  ihdr[8] = 8;   // bit depth
  ihdr[9] = 2;   // truecolor
  ihdr[10] = ihdr[11] = ihdr[12] = 0;
  detail::png_chunk(out, "IHDR", ihdr);

  for (const auto& [key, value] : text) {
    std::vector<std::uint8_t> t(key.begin(), key.end());
    t.push_back(0);
    t.insert(t.end(), value.begin(), value.end());
    detail::png_chunk(out, "tEXt", t);
  }

  std::vector<std::uint8_t> raw;
  raw.reserve(static_cast<std::size_t>(img.height) * (1 + 3 * img.width));
  for (int y = 0; y < img.height; ++y) {
    raw.push_back(0);  // filter none
    for (int x = 0; x < img.width; ++x) {
      const Rgb& c = img.at(x, y);
      raw.push_back(c.r);
      raw.push_back(c.g);
      raw.push_back(c.b);
    }
  }
  uLongf bound = ::compressBound(static_cast<uLong>(raw.size()));
  std::vector<std::uint8_t> compressed(bound);
  if (::compress2(compressed.data(), &bound, raw.data(), static_cast<uLong>(raw.size()), 9) != Z_OK) {
    throw Error("png: deflate failed");
  }
  compressed.resize(bound);
  detail::png_chunk(out, "IDAT", compressed);
  detail::png_chunk(out, "IEND", {});
  if (!out) throw Error("write failure: " + path);
}

// Diverging blue-white-red map for signed errors, t in [-1, 1].
inline Rgb diverging_color(double t) {
  t = std::clamp(t, -1.0, 1.0);
  auto lerp = [](double a, double b, double u) { return a + (b - a) * u; };
  double r, g, b;
  if (t < 0) {
    const double u = t + 1.0;  // 0 at -1, 1 at 0
    r = lerp(33, 255, u), g = lerp(102, 255, u), b = lerp(172, 255, u);
  } else {
    r = lerp(255, 178, t), g = lerp(255, 24, t), b = lerp(255, 43, t);
  }
  return Rgb{static_cast<std::uint8_t>(r + 0.5), static_cast<std::uint8_t>(g + 0.5),
             static_cast<std::uint8_t>(b + 0.5)};
}

// Simple line chart of one or more series, used for the training curves.
inline Image plot_series(const std::vector<std::vector<double>>& series,
                         const std::vector<Rgb>& colors, int width = 900, int height = 480) {
  Image img(width, height);
  const int ml = 50, mr = 14, mt = 14, mb = 30;
  img.fill_rect(ml, mt, width - mr, height - mb, Rgb{250, 250, 250});
  double lo = 0, hi = 1;
  bool first = true;
  std::size_t n = 0;
  for (const auto& s : series) {
    n = std::max(n, s.size());
    for (double v : s) {
      if (!std::isfinite(v)) continue;
      if (first) { lo = hi = v; first = false; }
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  if (hi - lo < 1e-12) { hi += 0.5; lo -= 0.5; }
  const double pad = 0.05 * (hi - lo);
  lo -= pad;
  hi += pad;
  auto px = [&](std::size_t i) {
    return ml + static_cast<int>((width - ml - mr - 1) * (n > 1 ? static_cast<double>(i) / (n - 1) : 0.0));
  };
  auto py = [&](double v) {
    return mt + static_cast<int>((height - mt - mb - 1) * (1.0 - (v - lo) / (hi - lo)));
  };
  if (lo < 0 && hi > 0) {
    const int y0 = py(0);
    for (int x = ml; x < width - mr; x += 3) img.set(x, y0, Rgb{180, 180, 180});
  }
  for (std::size_t si = 0; si < series.size(); ++si) {
    const auto& s = series[si];
    const Rgb c = colors.empty() ? Rgb{30, 90, 200} : colors[si % colors.size()];
    for (std::size_t i = 1; i < s.size(); ++i) {
      if (!std::isfinite(s[i - 1]) || !std::isfinite(s[i])) continue;
      img.line(px(i - 1), py(s[i - 1]), px(i), py(s[i]), c);
    }
  }
  // frame
  img.line(ml, mt, width - mr - 1, mt, Rgb{0, 0, 0});
  img.line(ml, height - mb - 1, width - mr - 1, height - mb - 1, Rgb{0, 0, 0});
  img.line(ml, mt, ml, height - mb - 1, Rgb{0, 0, 0});
  img.line(width - mr - 1, mt, width - mr - 1, height - mb - 1, Rgb{0, 0, 0});
  return img;
}

}  // namespace scanrl
