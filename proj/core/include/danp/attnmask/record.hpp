#pragma once

#include <cstddef>
#include <vector>

#include "danp/diffcore/tape.hpp"

namespace danp::attnmask {

/// Post-softmax cross-attention of one block: `probs` is (H*W, S), one row
/// per query pixel, one column per text token.
struct AttentionBlock {
  std::size_t height = 0;
  std::size_t width = 0;
  diffcore::Var probs;
};

/// Cross-attention captured during one denoiser forward pass, ordered from
/// the highest to the lowest feature resolution.
struct AttentionRecord {
  std::vector<AttentionBlock> blocks;
  std::size_t tokens = 0;

  /// Row-major H*W map of one token in one block.
  std::vector<double> token_map(std::size_t block, std::size_t token) const;
};

}  // namespace danp::attnmask
