#include "poex/png.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <stdexcept>

namespace poex {
namespace {

void put_be32(std::string& out, uint32_t v) {
  out.push_back(static_cast<char>(v >> 24));
  out.push_back(static_cast<char>(v >> 16));
  out.push_back(static_cast<char>(v >> 8));
  out.push_back(static_cast<char>(v));
}

void chunk(std::string& out, const char type[4], const std::string& data) {
  put_be32(out, static_cast<uint32_t>(data.size()));
  std::string body(type, 4);
  body += data;
  out += body;
  uint32_t crc = static_cast<uint32_t>(
      crc32(0, reinterpret_cast<const Bytef*>(body.data()), static_cast<uInt>(body.size())));
  put_be32(out, crc);
}

std::string deflate_all(const std::string& raw) {
  uLongf cap = compressBound(static_cast<uLong>(raw.size()));
  std::string z(cap, '\0');
  if (compress2(reinterpret_cast<Bytef*>(z.data()), &cap,
                reinterpret_cast<const Bytef*>(raw.data()), static_cast<uLong>(raw.size()),
                9) != Z_OK)
    throw std::runtime_error("deflate failed");
  z.resize(cap);
  return z;
}

void write_gray_bytes(const std::string& path, const std::vector<uint8_t>& pix, int w, int h) {
  std::string raw;
  raw.reserve(static_cast<size_t>(h) * (w + 1));
  for (int r = 0; r < h; ++r) {
    raw.push_back('\0');  // filter: none
    raw.append(reinterpret_cast<const char*>(pix.data() + static_cast<size_t>(r) * w), w);
  }
  std::string out("\x89PNG\r\n\x1a\n", 8);
  std::string ihdr;
  put_be32(ihdr, static_cast<uint32_t>(w));
  put_be32(ihdr, static_cast<uint32_t>(h));
  ihdr += '\x08';  // bit depth
  ihdr += '\x00';  // grayscale
  ihdr.append(3, '\0');
  chunk(out, "IHDR", ihdr);
  chunk(out, "IDAT", deflate_all(raw));
  chunk(out, "IEND", "");
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open for write: " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
}

uint8_t to_byte(double v) {
  return static_cast<uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

}  // namespace

void write_png_gray(const std::string& path, const Eigen::MatrixXd& img) {
  int h = static_cast<int>(img.rows()), w = static_cast<int>(img.cols());
  std::vector<uint8_t> pix(static_cast<size_t>(h) * w);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) pix[static_cast<size_t>(r) * w + c] = to_byte(img(r, c));
  write_gray_bytes(path, pix, w, h);
}

void write_png_strip(const std::string& path, const std::vector<Eigen::MatrixXd>& images,
                     int scale) {
  if (images.empty()) throw std::runtime_error("no images to tile");
  int h = static_cast<int>(images[0].rows()), w = static_cast<int>(images[0].cols());
  int W = static_cast<int>(images.size()) * (w + 1) - 1;
  Eigen::MatrixXd canvas = Eigen::MatrixXd::Constant(h, W, 0.5);
  for (size_t i = 0; i < images.size(); ++i)
    canvas.block(0, static_cast<int>(i) * (w + 1), h, w) = images[i];
  Eigen::MatrixXd big(h * scale, W * scale);
  for (int r = 0; r < big.rows(); ++r)
    for (int c = 0; c < big.cols(); ++c) big(r, c) = canvas(r / scale, c / scale);
  write_png_gray(path, big);
}

void write_png_plot(const std::string& path, const std::vector<std::vector<double>>& series,
                    int width, int height) {
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  size_t n = 0;
  for (const auto& s : series)
    for (double v : s) {
      if (std::isfinite(v)) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
      n = std::max(n, s.size());
    }
  if (n < 2 || !(hi > lo)) {
    lo = lo - 0.5;
    hi = lo + 1.0;
  }
  Eigen::MatrixXd canvas = Eigen::MatrixXd::Ones(height, width);
  auto px = [&](size_t i, size_t len) {
    return static_cast<int>(std::lround(double(i) / double(len - 1) * (width - 1)));
  };
  auto py = [&](double v) {
    double t = (v - lo) / (hi - lo);
    return std::clamp(static_cast<int>(std::lround((1.0 - t) * (height - 1))), 0, height - 1);
  };
  for (size_t si = 0; si < series.size(); ++si) {
    const auto& s = series[si];
    if (s.size() < 2) continue;
    double shade = 0.15 + 0.25 * static_cast<double>(si % 3);
    for (size_t i = 0; i + 1 < s.size(); ++i) {
      if (!std::isfinite(s[i]) || !std::isfinite(s[i + 1])) continue;
      int x0 = px(i, s.size()), x1 = px(i + 1, s.size());
      int y0 = py(s[i]), y1 = py(s[i + 1]);
      int steps = std::max({std::abs(x1 - x0), std::abs(y1 - y0), 1});
      for (int k = 0; k <= steps; ++k) {
        double t = double(k) / steps;
        int x = static_cast<int>(std::lround(x0 + t * (x1 - x0)));
        int y = static_cast<int>(std::lround(y0 + t * (y1 - y0)));
        canvas(y, x) = shade;
      }
    }
  }
  write_png_gray(path, canvas);
}

}  // namespace poex
