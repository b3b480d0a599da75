#include "danp/io/blob.hpp"

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "danp/error.hpp"

namespace danp::io {
namespace {

constexpr std::array<char, 8> kMagic = {'D', 'A', 'N', 'P', 'B', 'L', 'O', 'B'};

void put_u64(std::ostream& os, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) os.put(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_u64(std::istream& is) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(is.get())) << (8 * i);
  return v;
}

}  // namespace

void write_blob(const std::filesystem::path& path, const nlohmann::json& header, std::span<const float> payload) {
  nlohmann::json h = header;
  h["payload_floats"] = payload.size();
  const std::string text = h.dump();
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for writing: " + path.string());
  os.write(kMagic.data(), kMagic.size());
  put_u64(os, text.size());
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (float f : payload) {
    std::uint32_t bits = std::bit_cast<std::uint32_t>(f);
    for (int i = 0; i < 4; ++i) os.put(static_cast<char>((bits >> (8 * i)) & 0xff));
  }
  if (!os) throw IoError("write failed: " + path.string());
}

Blob read_blob(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open: " + path.string());
  std::array<char, 8> magic{};
  is.read(magic.data(), magic.size());
  if (!is || magic != kMagic) throw IoError("not a blob file: " + path.string());
  const std::uint64_t len = get_u64(is);
  std::string text(len, '\0');
  is.read(text.data(), static_cast<std::streamsize>(len));
  if (!is) throw IoError("truncated header: " + path.string());
  Blob blob;
  try {
    blob.header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("bad blob header in " + path.string() + ": " + e.what());
  }
  const auto n = blob.header.at("payload_floats").get<std::size_t>();
  blob.payload.resize(n);
  std::array<unsigned char, 4> b{};
  for (std::size_t i = 0; i < n; ++i) {
    is.read(reinterpret_cast<char*>(b.data()), 4);
    if (!is) throw IoError("truncated payload: " + path.string());
    const std::uint32_t bits = b[0] | (b[1] << 8) | (b[2] << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
    blob.payload[i] = std::bit_cast<float>(bits);
  }
  return blob;
}

}  // namespace danp::io
