#include "pano/pt36.hpp"

#include <cstring>
#include <fstream>
#include <vector>

namespace pano {

namespace {

constexpr uint16_t kVersion = 1;

void put_u16(std::string& buf, uint16_t v) {
  buf.push_back(static_cast<char>(v & 0xff));
  buf.push_back(static_cast<char>((v >> 8) & 0xff));
}

void put_u32(std::string& buf, uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

uint16_t get_u16(const unsigned char* p) {
  return static_cast<uint16_t>(p[0] | (p[1] << 8));
}

uint32_t get_u32(const unsigned char* p) {
  return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
         (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}

}  // namespace

void write_pt36(const std::string& path, const TensorF& t) {
  std::string buf;
  buf.reserve(8 + t.dims.size() * 4 + t.data.size() * 4);
  buf += "PT36";
  put_u16(buf, kVersion);
  put_u16(buf, static_cast<uint16_t>(t.rank()));
  for (int d : t.dims) put_u32(buf, static_cast<uint32_t>(d));
  for (float v : t.data) {
    uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(buf, bits);
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("pt36: cannot open for write: " + path);
  f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!f) throw std::runtime_error("pt36: short write: " + path);
}

TensorF read_pt36(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("pt36: cannot open: " + path);
  std::vector<unsigned char> buf((std::istreambuf_iterator<char>(f)),
                                 std::istreambuf_iterator<char>());
  if (buf.size() < 8 || std::memcmp(buf.data(), "PT36", 4) != 0)
    throw std::runtime_error("pt36: bad magic in " + path);
  const uint16_t version = get_u16(buf.data() + 4);
  if (version != kVersion)
    throw std::runtime_error("pt36: unsupported version " + std::to_string(version) + " in " + path);
  const uint16_t rank = get_u16(buf.data() + 6);
  const size_t header = 8 + static_cast<size_t>(rank) * 4;
  if (buf.size() < header) throw std::runtime_error("pt36: truncated header in " + path);
  std::vector<int> dims(rank);
  uint64_t n = 1;
  for (int i = 0; i < rank; ++i) {
    dims[static_cast<size_t>(i)] = static_cast<int>(get_u32(buf.data() + 8 + 4 * i));
    if (dims[static_cast<size_t>(i)] <= 0) throw std::runtime_error("pt36: bad extent in " + path);
    n *= static_cast<uint64_t>(dims[static_cast<size_t>(i)]);
  }
  if (buf.size() != header + n * 4)
    throw std::runtime_error("pt36: payload length mismatch in " + path + " (expected " +
                             std::to_string(header + n * 4) + " bytes, found " +
                             std::to_string(buf.size()) + ")");
  TensorF t;
  t.dims = dims;
  t.data.resize(n);
  for (uint64_t i = 0; i < n; ++i) {
    const uint32_t bits = get_u32(buf.data() + header + 4 * i);
    std::memcpy(&t.data[i], &bits, 4);
  }
  return t;
}

}  // namespace pano
