#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <string_view>

#include "danp/diffcore/tensor.hpp"

namespace danp {

using Rng = std::mt19937_64;

/// Mixes a base seed with a list of tags into an independent stream seed.
std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> tags);

/// 64-bit FNV-1a; stable across platforms, used for ids and content hashes.
std::uint64_t fnv1a64(std::string_view bytes);

diffcore::Tensor normal_tensor(const diffcore::Shape& shape, Rng& rng);

}  // namespace danp
