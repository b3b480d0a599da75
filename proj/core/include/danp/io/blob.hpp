#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

namespace danp::io {

// Binary container used for model weights and perturbation deltas:
//   bytes 0..7   ASCII magic "DANPBLOB"
//   bytes 8..15  header length in bytes, uint64 little-endian
//   header       UTF-8 JSON object
//   payload      float32 little-endian, length recorded as header["payload_floats"]
struct Blob {
  nlohmann::json header;
  std::vector<float> payload;
};

void write_blob(const std::filesystem::path& path, const nlohmann::json& header, std::span<const float> payload);
Blob read_blob(const std::filesystem::path& path);

}  // namespace danp::io
