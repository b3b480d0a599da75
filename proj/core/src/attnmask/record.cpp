#include "danp/attnmask/record.hpp"

#include "danp/error.hpp"

namespace danp::attnmask {

std::vector<double> AttentionRecord::token_map(std::size_t block, std::size_t token) const {
  if (block >= blocks.size() || token >= tokens) throw ContractError("token_map: index out of range");
  const auto& b = blocks[block];
  const auto& v = b.probs.value();
  std::vector<double> out(b.height * b.width);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = v[i * tokens + token];
  return out;
}

}  // namespace danp::attnmask
