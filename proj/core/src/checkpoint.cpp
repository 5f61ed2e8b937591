#include "poex/checkpoint.hpp"

#include <zlib.h>

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

static_assert(std::endian::native == std::endian::little,
              "f32 payloads are written little endian");

namespace poex {
namespace {

void put16(std::string& out, uint16_t v) { out.append(reinterpret_cast<const char*>(&v), 2); }
void put32(std::string& out, uint32_t v) { out.append(reinterpret_cast<const char*>(&v), 4); }

// Fixed DOS timestamp (2020-01-01 00:00) keeps archives reproducible.
constexpr uint16_t kDosTime = 0;
constexpr uint16_t kDosDate = (2020 - 1980) << 9 | 1 << 5 | 1;

struct Entry {
  std::string name;
  std::string data;
};

void write_zip(const std::string& path, const std::vector<Entry>& entries) {
  std::string out;
  std::vector<uint32_t> offsets;
  std::vector<uint32_t> crcs;
  for (const auto& e : entries) {
    offsets.push_back(static_cast<uint32_t>(out.size()));
    uint32_t crc = static_cast<uint32_t>(
        crc32(0, reinterpret_cast<const Bytef*>(e.data.data()), static_cast<uInt>(e.data.size())));
    crcs.push_back(crc);
    put32(out, 0x04034b50);
    put16(out, 20);  // version needed
    put16(out, 0);   // flags
    put16(out, 0);   // method: stored
    put16(out, kDosTime);
    put16(out, kDosDate);
    put32(out, crc);
    put32(out, static_cast<uint32_t>(e.data.size()));
    put32(out, static_cast<uint32_t>(e.data.size()));
    put16(out, static_cast<uint16_t>(e.name.size()));
    put16(out, 0);  // extra len
    out += e.name;
    out += e.data;
  }
  uint32_t cd_start = static_cast<uint32_t>(out.size());
  for (size_t i = 0; i < entries.size(); ++i) {
    const auto& e = entries[i];
    put32(out, 0x02014b50);
    put16(out, 20);  // version made by
    put16(out, 20);  // version needed
    put16(out, 0);
    put16(out, 0);
    put16(out, kDosTime);
    put16(out, kDosDate);
    put32(out, crcs[i]);
    put32(out, static_cast<uint32_t>(e.data.size()));
    put32(out, static_cast<uint32_t>(e.data.size()));
    put16(out, static_cast<uint16_t>(e.name.size()));
    put16(out, 0);
    put16(out, 0);
    put16(out, 0);
    put16(out, 0);
    put32(out, 0);
    put32(out, offsets[i]);
    out += e.name;
  }
  uint32_t cd_size = static_cast<uint32_t>(out.size()) - cd_start;
  put32(out, 0x06054b50);
  put16(out, 0);
  put16(out, 0);
  put16(out, static_cast<uint16_t>(entries.size()));
  put16(out, static_cast<uint16_t>(entries.size()));
  put32(out, cd_size);
  put32(out, cd_start);
  put16(out, 0);

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw CheckpointError("cannot open for write: " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw CheckpointError("short write: " + path);
}

uint16_t get16(const std::string& buf, size_t off) {
  uint16_t v;
  std::memcpy(&v, buf.data() + off, 2);
  return v;
}

uint32_t get32(const std::string& buf, size_t off) {
  uint32_t v;
  std::memcpy(&v, buf.data() + off, 4);
  return v;
}

std::vector<Entry> read_zip(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot open: " + path);
  std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (buf.size() < 22) throw CheckpointError("not a checkpoint archive: " + path);

  // locate end-of-central-directory (no comment supported)
  size_t eocd = buf.size() - 22;
  if (get32(buf, eocd) != 0x06054b50)
    throw CheckpointError("missing archive trailer: " + path);
  uint16_t n = get16(buf, eocd + 10);
  size_t cd = get32(buf, eocd + 16);

  std::vector<Entry> entries;
  for (int i = 0; i < n; ++i) {
    if (cd + 46 > buf.size() || get32(buf, cd) != 0x02014b50)
      throw CheckpointError("corrupt central directory: " + path);
    uint16_t method = get16(buf, cd + 10);
    uint32_t crc = get32(buf, cd + 16);
    uint32_t size = get32(buf, cd + 20);
    uint16_t name_len = get16(buf, cd + 28);
    uint16_t extra_len = get16(buf, cd + 30);
    uint16_t comment_len = get16(buf, cd + 32);
    uint32_t local_off = get32(buf, cd + 42);
    std::string name = buf.substr(cd + 46, name_len);
    if (method != 0) throw CheckpointError("unsupported compression in entry " + name);
    if (local_off + 30 > buf.size() || get32(buf, local_off) != 0x04034b50)
      throw CheckpointError("corrupt local header for entry " + name);
    size_t data_off = local_off + 30 + get16(buf, local_off + 26) + get16(buf, local_off + 28);
    if (data_off + size > buf.size()) throw CheckpointError("truncated entry " + name);
    std::string data = buf.substr(data_off, size);
    uint32_t got = static_cast<uint32_t>(
        crc32(0, reinterpret_cast<const Bytef*>(data.data()), static_cast<uInt>(data.size())));
    if (got != crc) throw CheckpointError("crc mismatch in entry " + name);
    entries.push_back({std::move(name), std::move(data)});
    cd += 46u + name_len + extra_len + comment_len;
  }
  return entries;
}

std::string encode_f32(const Eigen::MatrixXd& m) {
  std::string out;
  out.reserve(static_cast<size_t>(m.size()) * 4);
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      float v = static_cast<float>(m(r, c));
      out.append(reinterpret_cast<const char*>(&v), 4);
    }
  return out;
}

Eigen::MatrixXd decode_f32(const std::string& data, Eigen::Index rows, Eigen::Index cols,
                           const std::string& name) {
  if (data.size() != static_cast<size_t>(rows) * static_cast<size_t>(cols) * 4)
    throw CheckpointError("size mismatch for array " + name);
  Eigen::MatrixXd m(rows, cols);
  const char* p = data.data();
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) {
      float v;
      std::memcpy(&v, p, 4);
      p += 4;
      m(r, c) = v;
    }
  return m;
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  std::vector<Entry> entries;
  entries.push_back({"manifest.json", ck.manifest_json});
  for (const auto& [name, m] : ck.arrays)  // std::map keeps names sorted
    entries.push_back({"param/" + name + ".f32", encode_f32(m)});
  write_zip(path, entries);
}

Checkpoint load_checkpoint(const std::string& path) {
  auto entries = read_zip(path);
  Checkpoint ck;
  std::map<std::string, std::string> payloads;
  for (auto& e : entries) {
    if (e.name == "manifest.json")
      ck.manifest_json = std::move(e.data);
    else if (e.name.starts_with("param/") && e.name.ends_with(".f32"))
      payloads[e.name.substr(6, e.name.size() - 10)] = std::move(e.data);
    else
      throw CheckpointError("unexpected entry " + e.name);
  }
  if (ck.manifest_json.empty()) throw CheckpointError("checkpoint has no manifest: " + path);
  // shapes live in the manifest; the caller decodes via decode_arrays
  for (auto& [name, data] : payloads) {
    Eigen::Index count = static_cast<Eigen::Index>(data.size() / 4);
    ck.arrays[name] = decode_f32(data, 1, count, name);
  }
  return ck;
}

}  // namespace poex
