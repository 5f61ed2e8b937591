#include "poex/idx.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace poex {
namespace {

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IdxError("cannot open: " + path);
  return {(std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>()};
}

uint32_t be32(const std::string& buf, size_t off, const std::string& path) {
  if (off + 4 > buf.size())
    throw IdxError(path + ": truncated at byte " + std::to_string(off));
  auto b = [&](size_t i) { return static_cast<uint32_t>(static_cast<uint8_t>(buf[off + i])); };
  return b(0) << 24 | b(1) << 16 | b(2) << 8 | b(3);
}

void put_be32(std::ofstream& f, uint32_t v) {
  char b[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16), static_cast<char>(v >> 8),
               static_cast<char>(v)};
  f.write(b, 4);
}

}  // namespace

IdxImages load_idx_images(const std::string& path) {
  std::string buf = slurp(path);
  uint32_t magic = be32(buf, 0, path);
  if (magic != 0x00000803)
    throw IdxError(path + ": bad magic at byte 0, expected 0x00000803");
  IdxImages out;
  uint32_t n = be32(buf, 4, path);
  out.h = static_cast<int>(be32(buf, 8, path));
  out.w = static_cast<int>(be32(buf, 12, path));
  size_t need = 16 + static_cast<size_t>(n) * out.h * out.w;
  if (buf.size() != need)
    throw IdxError(path + ": payload size mismatch, expected " + std::to_string(need) +
                   " bytes, got " + std::to_string(buf.size()));
  size_t off = 16;
  out.images.reserve(n);
  for (uint32_t i = 0; i < n; ++i) {
    Eigen::MatrixXd img(out.h, out.w);
    for (int r = 0; r < out.h; ++r)
      for (int c = 0; c < out.w; ++c)
        img(r, c) = static_cast<uint8_t>(buf[off++]) / 255.0;
    out.images.push_back(std::move(img));
  }
  return out;
}

std::vector<uint8_t> load_idx_labels(const std::string& path) {
  std::string buf = slurp(path);
  uint32_t magic = be32(buf, 0, path);
  if (magic != 0x00000801)
    throw IdxError(path + ": bad magic at byte 0, expected 0x00000801");
  uint32_t n = be32(buf, 4, path);
  if (buf.size() != 8 + n)
    throw IdxError(path + ": payload size mismatch at byte 8");
  std::vector<uint8_t> out(buf.begin() + 8, buf.end());
  return out;
}

void save_idx_images(const std::string& path, const std::vector<Eigen::MatrixXd>& images) {
  if (images.empty()) throw IdxError("refusing to write empty image stack");
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IdxError("cannot open for write: " + path);
  int h = static_cast<int>(images[0].rows()), w = static_cast<int>(images[0].cols());
  put_be32(f, 0x00000803);
  put_be32(f, static_cast<uint32_t>(images.size()));
  put_be32(f, static_cast<uint32_t>(h));
  put_be32(f, static_cast<uint32_t>(w));
  for (const auto& img : images) {
    if (img.rows() != h || img.cols() != w) throw IdxError("inconsistent image shapes");
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < w; ++c) {
        double v = std::clamp(img(r, c), 0.0, 1.0);
        f.put(static_cast<char>(std::lround(v * 255.0)));
      }
  }
  if (!f) throw IdxError("short write: " + path);
}

void save_idx_labels(const std::string& path, const std::vector<uint8_t>& labels) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IdxError("cannot open for write: " + path);
  put_be32(f, 0x00000801);
  put_be32(f, static_cast<uint32_t>(labels.size()));
  f.write(reinterpret_cast<const char*>(labels.data()),
          static_cast<std::streamsize>(labels.size()));
  if (!f) throw IdxError("short write: " + path);
}

}  // namespace poex
